use super::*;
use crate::rng::Rng;

fn random(shape: &[usize], rng: &mut Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.uniform(-1.0, 1.0)).unwrap()
}

/// Central finite differences of a scalar function of several tensors,
/// evaluated on plain (untaped) values.
fn numeric_grads(f: &dyn Fn(&[Tensor]) -> f64, inputs: &[Tensor], h: f64) -> Vec<Vec<f64>> {
    inputs
        .iter()
        .enumerate()
        .map(|(which, t)| {
            (0..t.numel())
                .map(|i| {
                    let bump = |delta: f64| {
                        let mut args: Vec<Tensor> = inputs.to_vec();
                        let mut v = t.to_vec();
                        v[i] += delta;
                        args[which] = Tensor::new(t.shape(), v).unwrap();
                        f(&args)
                    };
                    (bump(h) - bump(-h)) / (2.0 * h)
                })
                .collect()
        })
        .collect()
}

fn max_rel_err(auto: &[Tensor], numeric: &[Vec<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for (a, n) in auto.iter().zip(numeric) {
        for (&x, &y) in a.data().iter().zip(n) {
            let err = (x - y).abs() / x.abs().max(y.abs()).max(1e-3);
            worst = worst.max(err);
        }
    }
    worst
}

fn check_against_fd(f: &dyn Fn(&[Tensor]) -> Tensor, inputs: &[Tensor]) -> f64 {
    let tape = Tape::new();
    let watched: Vec<Tensor> = inputs.iter().map(|t| tape.watch(t)).collect();
    let loss = f(&watched);
    let auto = grad(&loss, &watched, false).unwrap();
    let numeric = numeric_grads(&|args| f(args).item(), inputs, 1e-5);
    max_rel_err(&auto, &numeric)
}

#[test]
fn square_gradient() {
    let tape = Tape::new();
    let x = tape.watch(&Tensor::scalar(3.0));
    let y = x.mul(&x).unwrap();
    assert_eq!(grad(&y, &[x], false).unwrap()[0].item(), 6.0);
}

#[test]
fn powf_gradients() {
    let x = Tensor::new(&[4], vec![0.3, 1.0, 2.5, 7.0]).unwrap();
    for p in [-0.5, 0.5, 3.0] {
        let err = check_against_fd(&|a| a[0].powf(p).sum(), std::slice::from_ref(&x));
        assert!(err < 1e-6, "p={p}: {err}");
    }
    let tape = Tape::new();
    let v = tape.watch(&Tensor::scalar(2.0));
    let dy = grad(&v.powf(-0.5), std::slice::from_ref(&v), true).unwrap();
    let d2 = grad(&dy[0], &[v], false).unwrap()[0].item();
    assert!((d2 - 0.75 * 2f64.powf(-2.5)).abs() < 1e-12);
}

#[test]
fn second_derivative_of_powers() {
    for n in 2..=4 {
        for &x0 in &[0.5, 2.0, -1.5] {
            let tape = Tape::new();
            let x = tape.watch(&Tensor::scalar(x0));
            let mut y = x.clone();
            for _ in 1..n {
                y = y.mul(&x).unwrap();
            }
            let dy = grad(&y, std::slice::from_ref(&x), true).unwrap();
            assert!(dy[0].requires_grad());
            let d2 = grad(&dy[0], &[x], false).unwrap()[0].item();
            let expected = (n * (n - 1)) as f64 * x0.powi(n - 2);
            assert!((d2 - expected).abs() < 1e-10, "n={n} x={x0}: {d2} vs {expected}");
        }
    }
}

#[test]
fn grad_errors() {
    let tape = Tape::new();
    let x = tape.watch(&Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
    assert!(matches!(
        grad(&x, std::slice::from_ref(&x), false),
        Err(TensorError::NonScalarLoss(_))
    ));
    let plain = Tensor::scalar(1.0);
    let loss = x.sum();
    assert!(matches!(
        grad(&loss, std::slice::from_ref(&plain), false),
        Err(TensorError::NotOnTape(0))
    ));
    assert!(matches!(grad(&plain, &[x], false), Err(TensorError::LossNotOnTape)));
    let other = Tape::new().watch(&Tensor::scalar(1.0));
    assert!(matches!(grad(&loss, &[other], false), Err(TensorError::NotOnTape(0))));
}

#[test]
fn unused_wrt_gets_zero() {
    let tape = Tape::new();
    let x = tape.watch(&Tensor::scalar(2.0));
    let z = tape.watch(&Tensor::new(&[3], vec![1.0; 3]).unwrap());
    let g = grad(&x.square(), &[z], false).unwrap();
    assert_eq!(g[0].data(), &[0.0, 0.0, 0.0]);
}

#[test]
fn constants_do_not_require_grad() {
    let a = Tensor::scalar(2.0);
    let b = a.mul(&a).unwrap();
    assert!(!b.requires_grad());
    let tape = Tape::new();
    let x = tape.watch(&a);
    assert!(x.mul(&a).unwrap().requires_grad());
    assert_eq!(tape.len(), 2);
}

#[test]
fn matmul_examples() {
    let b = Tensor::new(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let eye = Tensor::new(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
    assert!(eye.matmul(&b).unwrap().bit_eq(&b));
    let a = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let ones = Tensor::new(&[2, 1], vec![1.0, 1.0]).unwrap();
    let y = a.matmul(&ones).unwrap();
    assert_eq!(y.shape(), &[2, 1]);
    assert_eq!(y.data(), &[3.0, 7.0]);
    assert!(matches!(a.matmul(&b), Err(TensorError::ShapeMismatch { .. })));
}

#[test]
fn matmul_gradients_match_fd() {
    let mut rng = Rng::new(11);
    let a = random(&[5, 4], &mut rng);
    let b = random(&[4, 2], &mut rng);
    let err = check_against_fd(&|t| t[0].matmul(&t[1]).unwrap().square().sum(), &[a, b]);
    assert!(err < 1e-4, "{err}");

    let a = random(&[4, 3], &mut rng);
    let b = random(&[3, 3], &mut rng);
    let err = check_against_fd(
        &|t| t[0].matmul(&t[1]).unwrap().relu().matmul(&t[1]).unwrap().sum(),
        &[a, b],
    );
    assert!(err < 1e-4, "{err}");
}

#[test]
fn conv2d_examples() {
    let x = Tensor::new(&[1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
    let k = Tensor::new(&[1, 1, 1, 1], vec![2.0]).unwrap();
    let y = x.conv2d(&k, 1, 0).unwrap();
    assert_eq!(y.shape(), &[1, 3, 3]);
    assert_eq!(y.data(), x.scale(2.0).data());

    let ones = Tensor::ones(&[1, 3, 3]).unwrap();
    let k = Tensor::ones(&[1, 1, 3, 3]).unwrap();
    let y = ones.conv2d(&k, 1, 0).unwrap();
    assert_eq!(y.shape(), &[1, 1, 1]);
    assert_eq!(y.item(), 9.0);

    let bad = Tensor::ones(&[1, 2, 3, 3]).unwrap();
    assert!(matches!(ones.conv2d(&bad, 1, 0), Err(TensorError::Conv(_))));
}

#[test]
fn conv2d_output_size_formula() {
    let x = Tensor::ones(&[2, 7, 9]).unwrap();
    for (stride, pad, k) in [(1, 0, 3), (2, 1, 3), (3, 2, 2), (2, 0, 1)] {
        let kern = Tensor::ones(&[4, 2, k, k]).unwrap();
        let y = x.conv2d(&kern, stride, pad).unwrap();
        assert_eq!(
            y.shape(),
            &[4, (7 + 2 * pad - k) / stride + 1, (9 + 2 * pad - k) / stride + 1]
        );
    }
}

#[test]
fn conv2d_gradients_match_fd() {
    let mut rng = Rng::new(5);
    let x = random(&[2, 5, 5], &mut rng);
    let k = random(&[3, 2, 3, 3], &mut rng);
    for (stride, pad) in [(1, 0), (1, 1), (2, 1)] {
        let err = check_against_fd(
            &|t| t[0].conv2d(&t[1], stride, pad).unwrap().square().sum(),
            &[x.clone(), k.clone()],
        );
        assert!(err < 1e-4, "stride {stride} pad {pad}: {err}");
    }
}

#[test]
fn conv2d_second_order_matches_fd_of_gradient() {
    // d/dk of sum(dL/dx) where L = sum(conv(x,k)^2): exercises the
    // backward-of-backward conv rules.
    let mut rng = Rng::new(9);
    let x = random(&[1, 2, 4, 4], &mut rng);
    let k = random(&[2, 2, 3, 3], &mut rng);
    let f = |x: &Tensor, k: &Tensor, create: bool| {
        let loss = x.conv2d(k, 2, 1).unwrap().square().sum();
        let gx = grad(&loss, &[x.clone(), k.clone()], create).unwrap();
        gx[0].square().sum().add(&gx[1].square().sum()).unwrap()
    };
    let tape = Tape::new();
    let (wx, wk) = (tape.watch(&x), tape.watch(&k));
    let outer = f(&wx, &wk, true);
    let auto = grad(&outer, &[wx, wk], false).unwrap();
    let numeric = numeric_grads(
        &|args| {
            let tape = Tape::new();
            f(&tape.watch(&args[0]), &tape.watch(&args[1]), false).item()
        },
        &[x, k],
        1e-5,
    );
    let err = max_rel_err(&auto, &numeric);
    assert!(err < 1e-4, "{err}");
}

#[test]
fn global_avg_pool_examples() {
    let x = Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(x.global_avg_pool2d().unwrap().data(), &[2.5]);
    let c = Tensor::full(&[3, 4, 5], 1.75).unwrap();
    assert_eq!(c.global_avg_pool2d().unwrap().data(), &[1.75; 3]);

    let tape = Tape::new();
    let x = tape.watch(&Tensor::ones(&[2, 3, 4]).unwrap());
    let g = grad(&x.global_avg_pool2d().unwrap().sum(), &[x], false).unwrap();
    assert!(g[0].data().iter().all(|&v| (v - 1.0 / 12.0).abs() < 1e-15));

    let mut rng = Rng::new(2);
    let x = random(&[3, 4, 4], &mut rng);
    let err = check_against_fd(&|t| t[0].global_avg_pool2d().unwrap().square().sum(), &[x]);
    assert!(err < 1e-4);
}

#[test]
fn elementwise_examples() {
    let x = Tensor::new(&[2], vec![-1.0, 2.0]).unwrap();
    assert_eq!(x.relu().data(), &[0.0, 2.0]);
    let s = Tensor::zeros(&[1, 5]).unwrap().softmax().unwrap();
    assert!(s.data().iter().all(|&p| (p - 0.2).abs() < 1e-15));
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = Rng::new(3);
    let x = Tensor::from_fn(&[6, 7], |_| rng.uniform(-30.0, 30.0)).unwrap();
    for row in x.softmax().unwrap().data().chunks(7) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn cross_entropy_gradient_is_softmax_minus_onehot() {
    let logits = Tensor::new(&[1, 4], vec![0.3, -1.2, 2.0, 0.5]).unwrap();
    let tape = Tape::new();
    let z = tape.watch(&logits);
    let g = grad(&softmax_cross_entropy(&z, &[2]).unwrap(), &[z], false).unwrap();
    let p = logits.softmax().unwrap();
    for (i, (&gi, &pi)) in g[0].data().iter().zip(p.data()).enumerate() {
        let onehot = if i == 2 { 1.0 } else { 0.0 };
        assert!((gi - (pi - onehot)).abs() < 1e-14);
    }
}

#[test]
fn cross_entropy_edge_cases() {
    let confident = Tensor::new(&[1, 3], vec![800.0, -800.0, -800.0]).unwrap();
    assert_eq!(softmax_cross_entropy(&confident, &[0]).unwrap().item(), 0.0);
    assert!(matches!(
        softmax_cross_entropy(&confident, &[3]),
        Err(TensorError::LabelOutOfRange { label: 3, classes: 3 })
    ));
    // no overflow for huge logits
    let huge = Tensor::new(&[1, 2], vec![1e6, 0.0]).unwrap();
    assert!(softmax_cross_entropy(&huge, &[1]).unwrap().item().is_finite());
}

#[test]
fn losses_match_fd() {
    let mut rng = Rng::new(4);
    let z = random(&[3, 5], &mut rng);
    let err = check_against_fd(&|t| softmax_cross_entropy(&t[0], &[1, 4, 0]).unwrap(), &[z]);
    assert!(err < 1e-4);
    let p = random(&[6, 1], &mut rng);
    let y = random(&[6, 1], &mut rng);
    let err = check_against_fd(&|t| mse_loss(&t[0], &t[1]).unwrap(), &[p, y]);
    assert!(err < 1e-4);
}

#[test]
fn replay_is_bit_identical() {
    let run = || {
        let mut rng = Rng::new(8);
        let x = random(&[2, 3, 6, 6], &mut rng);
        let k = random(&[4, 3, 3, 3], &mut rng);
        let w = random(&[4, 2], &mut rng);
        let tape = Tape::new();
        let (k, w) = (tape.watch(&k), tape.watch(&w));
        let feats = x.conv2d(&k, 2, 1).unwrap().relu().global_avg_pool2d().unwrap();
        let loss = softmax_cross_entropy(&feats.matmul(&w).unwrap(), &[0, 1]).unwrap();
        grad(&loss, &[k, w], false).unwrap()
    };
    let (a, b) = (run(), run());
    assert!(a.iter().zip(&b).all(|(x, y)| x.bit_eq(y)));
}

#[test]
fn shape_validation() {
    assert!(matches!(
        Tensor::new(&[2, 2], vec![1.0; 3]),
        Err(TensorError::DataLength { .. })
    ));
    assert!(matches!(Tensor::zeros(&[2, 0]), Err(TensorError::ZeroDim(_))));
    let a = Tensor::ones(&[2, 3]).unwrap();
    assert!(a.add(&Tensor::ones(&[3, 2]).unwrap()).is_err());
    assert!(a.reshape(&[5]).is_err());
}
