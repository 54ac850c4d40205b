use serde::{Deserialize, Serialize};

use super::{NnError, ParamSet, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Shape of one example entering the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputShape {
    Vector(usize),
    Image {
        channels: usize,
        height: usize,
        width: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Dense {
        input: usize,
        output: usize,
    },
    Conv {
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Relu,
    Dropout {
        rate: f64,
    },
    /// Normalizes each channel (or feature) with the statistics of the
    /// current batch, then applies a learned scale and shift.
    BatchNorm {
        channels: usize,
    },
    GlobalAvgPool,
    Flatten,
    /// Dense projection to class logits; softmax is applied by the loss.
    SoftmaxHead {
        classes: usize,
    },
}

/// Per-example activation shape between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Flat(usize),
    Map { c: usize, h: usize, w: usize },
}

/// A validated sequential architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct ModelSpec {
    input: InputShape,
    layers: Vec<Layer>,
    output: Activation,
}

#[derive(Serialize, Deserialize)]
struct RawSpec {
    input: InputShape,
    layers: Vec<Layer>,
}

impl TryFrom<RawSpec> for ModelSpec {
    type Error = NnError;
    fn try_from(raw: RawSpec) -> Result<Self> {
        ModelSpec::new(raw.input, raw.layers)
    }
}

impl From<ModelSpec> for RawSpec {
    fn from(spec: ModelSpec) -> Self {
        RawSpec {
            input: spec.input,
            layers: spec.layers,
        }
    }
}

/// Forward-pass mode. Dropout masks are drawn only in training mode.
pub enum Mode<'a> {
    Train(&'a mut Rng),
    Eval,
}

fn invalid(idx: usize, layer: &Layer, shape: Activation, why: &str) -> NnError {
    NnError::InvalidSpec(format!("layer {idx} ({layer:?}) on input {shape:?}: {why}"))
}

impl ModelSpec {
    pub fn new(input: InputShape, layers: Vec<Layer>) -> Result<Self> {
        let mut shape = match input {
            InputShape::Vector(n) if n > 0 => Activation::Flat(n),
            InputShape::Image {
                channels,
                height,
                width,
            } if channels * height * width > 0 => Activation::Map {
                c: channels,
                h: height,
                w: width,
            },
            _ => return Err(NnError::InvalidSpec(format!("empty input shape {input:?}"))),
        };
        for (idx, layer) in layers.iter().enumerate() {
            shape = match (*layer, shape) {
                (Layer::Dense { input, output }, Activation::Flat(n)) => {
                    if input != n || output == 0 {
                        return Err(invalid(idx, layer, shape, "width mismatch"));
                    }
                    Activation::Flat(output)
                }
                (
                    Layer::Conv {
                        c_in,
                        c_out,
                        kernel,
                        stride,
                        pad,
                    },
                    Activation::Map { c, h, w },
                ) => {
                    if c_in != c || c_out == 0 || kernel == 0 || stride == 0 {
                        return Err(invalid(idx, layer, shape, "channel or geometry mismatch"));
                    }
                    if kernel > h + 2 * pad || kernel > w + 2 * pad {
                        return Err(invalid(idx, layer, shape, "kernel larger than padded input"));
                    }
                    Activation::Map {
                        c: c_out,
                        h: (h + 2 * pad - kernel) / stride + 1,
                        w: (w + 2 * pad - kernel) / stride + 1,
                    }
                }
                (Layer::Relu, s) => s,
                (
                    Layer::BatchNorm { channels },
                    s @ (Activation::Map { c: channels_in, .. } | Activation::Flat(channels_in)),
                ) => {
                    if channels != channels_in {
                        return Err(invalid(idx, layer, shape, "channel mismatch"));
                    }
                    s
                }
                (Layer::Dropout { rate }, s) => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(invalid(idx, layer, shape, "dropout rate must be in [0, 1)"));
                    }
                    s
                }
                (Layer::GlobalAvgPool, Activation::Map { c, .. }) => Activation::Flat(c),
                (Layer::Flatten, Activation::Map { c, h, w }) => Activation::Flat(c * h * w),
                (Layer::Flatten, s @ Activation::Flat(_)) => s,
                (Layer::SoftmaxHead { classes }, Activation::Flat(_)) if classes >= 1 => Activation::Flat(classes),
                _ => return Err(invalid(idx, layer, shape, "layer does not accept this shape")),
            };
        }
        Ok(Self {
            input,
            layers,
            output: shape,
        })
    }

    pub fn input(&self) -> InputShape {
        self.input
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn output(&self) -> Activation {
        self.output
    }

    /// Width of a flat output, if the network ends flat.
    pub fn output_dim(&self) -> Option<usize> {
        match self.output {
            Activation::Flat(n) => Some(n),
            Activation::Map { .. } => None,
        }
    }

    /// Parameter names and shapes in canonical order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut width = match self.input {
            InputShape::Vector(n) => n,
            InputShape::Image { .. } => 0,
        };
        for (idx, layer) in self.layers.iter().enumerate() {
            match *layer {
                Layer::Dense { input, output } => {
                    out.push((format!("layer{idx}.weight"), vec![input, output]));
                    out.push((format!("layer{idx}.bias"), vec![output]));
                    width = output;
                }
                Layer::SoftmaxHead { classes } => {
                    out.push((format!("layer{idx}.weight"), vec![width, classes]));
                    out.push((format!("layer{idx}.bias"), vec![classes]));
                    width = classes;
                }
                Layer::Conv {
                    c_in, c_out, kernel, ..
                } => {
                    out.push((format!("layer{idx}.kernel"), vec![c_out, c_in, kernel, kernel]));
                    out.push((format!("layer{idx}.bias"), vec![c_out]));
                }
                Layer::BatchNorm { channels } => {
                    out.push((format!("layer{idx}.gamma"), vec![channels]));
                    out.push((format!("layer{idx}.beta"), vec![channels]));
                }
                _ => {}
            }
            // track flat width through shape-changing layers
            if let Some(Activation::Flat(n)) = self.activation_after(idx) {
                width = n;
            }
        }
        out
    }

    fn activation_after(&self, idx: usize) -> Option<Activation> {
        let prefix = ModelSpec::new(self.input, self.layers[..=idx].to_vec()).ok()?;
        Some(prefix.output)
    }

    /// Check that `params` carries exactly this spec's names and shapes.
    pub fn check_params(&self, params: &ParamSet) -> Result<()> {
        let expected = self.param_shapes();
        if expected.len() != params.len() {
            return Err(NnError::InvalidSpec(format!(
                "spec has {} parameter tensors, parameter set has {}",
                expected.len(),
                params.len()
            )));
        }
        for ((name, shape), (pname, t)) in expected.iter().zip(params.iter()) {
            if name != pname || shape.as_slice() != t.shape() {
                return Err(NnError::ParamShape {
                    name: pname.to_string(),
                    expected: shape.clone(),
                    actual: t.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// True when layer `idx`'s output flows (through dropout) into a ReLU.
    fn feeds_relu(&self, idx: usize) -> bool {
        self.layers[idx + 1..]
            .iter()
            .find(|l| !matches!(l, Layer::Dropout { .. }))
            .is_some_and(|l| matches!(l, Layer::Relu))
    }
}

/// Weight initialization scheme. Biases always start at zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// He-uniform for layers feeding a ReLU, Glorot-uniform otherwise.
    #[default]
    HeGlorot,
    /// Uniform on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    LecunUniform,
}

/// [`init_params_with`] using [`InitScheme::HeGlorot`].
pub fn init_params(spec: &ModelSpec, rng: &mut Rng) -> ParamSet {
    init_params_with(spec, InitScheme::HeGlorot, rng)
}

pub fn init_params_with(spec: &ModelSpec, scheme: InitScheme, rng: &mut Rng) -> ParamSet {
    let mut params = ParamSet::new();
    let shapes = spec.param_shapes();
    for (name, shape) in shapes {
        let tensor = if name.ends_with(".bias") || name.ends_with(".beta") {
            Tensor::zeros(&shape).expect("validated shape")
        } else if name.ends_with(".gamma") {
            Tensor::ones(&shape).expect("validated shape")
        } else {
            let idx: usize = name["layer".len()..name.find('.').unwrap()].parse().unwrap();
            let (fan_in, fan_out) = if shape.len() == 4 {
                let rf = shape[2] * shape[3];
                (shape[1] * rf, shape[0] * rf)
            } else {
                (shape[0], shape[1])
            };
            let limit = match scheme {
                InitScheme::LecunUniform => (1.0 / fan_in as f64).sqrt(),
                InitScheme::HeGlorot if spec.feeds_relu(idx) => (6.0 / fan_in as f64).sqrt(),
                InitScheme::HeGlorot => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            };
            Tensor::from_fn(&shape, |_| rng.uniform(-limit, limit)).expect("validated shape")
        };
        params.push(name, tensor).expect("unique generated names");
    }
    params
}

fn add_channel_bias(y: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let s = y.shape();
    let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
    let spread = bias
        .broadcast_rows(n)?
        .reshape(&[n * c])?
        .broadcast_cols(plane)?
        .reshape(s)?;
    Ok(y.add(&spread)?)
}

const BN_EPS: f64 = 1e-5;

fn batch_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
    let s = x.shape().to_vec();
    let (n, c) = (s[0], s[1]);
    let plane: usize = s[2..].iter().product();
    let count = (n * plane) as f64;
    let per_channel = |t: &Tensor| -> Result<Tensor> {
        let t = if plane > 1 {
            t.reshape(&[n * c, plane])?.sum_cols()?.reshape(&[n, c])?
        } else {
            t.clone()
        };
        Ok(t.sum_rows()?.scale(1.0 / count))
    };
    let spread = |v: &Tensor| -> Result<Tensor> {
        let rows = v.broadcast_rows(n)?;
        Ok(if plane > 1 {
            rows.reshape(&[n * c])?.broadcast_cols(plane)?.reshape(&s)?
        } else {
            rows
        })
    };
    let centered = x.sub(&spread(&per_channel(x)?)?)?;
    let var = per_channel(&centered.square())?;
    let inv_std = var.add(&Tensor::full(&[c], BN_EPS)?)?.powf(-0.5);
    Ok(centered.mul(&spread(&inv_std.mul(gamma)?)?)?.add(&spread(beta)?)?)
}

/// Run a batched input (`[B, n]` or `[B, C, H, W]`) through the network.
pub fn forward(spec: &ModelSpec, params: &ParamSet, input: &Tensor, mut mode: Mode<'_>) -> Result<Tensor> {
    let expected: Vec<usize> = match spec.input {
        InputShape::Vector(n) => vec![n],
        InputShape::Image {
            channels,
            height,
            width,
        } => vec![channels, height, width],
    };
    if input.rank() != expected.len() + 1 || input.shape()[1..] != expected[..] {
        return Err(NnError::InputShape {
            expected,
            actual: input.shape().to_vec(),
        });
    }
    let batch = input.shape()[0];
    let mut x = input.clone();
    for (idx, layer) in spec.layers.iter().enumerate() {
        x = match *layer {
            Layer::Dense { .. } | Layer::SoftmaxHead { .. } => {
                let w = params.require(&format!("layer{idx}.weight"))?;
                let b = params.require(&format!("layer{idx}.bias"))?;
                x.matmul(w)?.add_row_bias(b)?
            }
            Layer::Conv { stride, pad, .. } => {
                let k = params.require(&format!("layer{idx}.kernel"))?;
                let b = params.require(&format!("layer{idx}.bias"))?;
                add_channel_bias(&x.conv2d(k, stride, pad)?, b)?
            }
            Layer::Relu => x.relu(),
            Layer::BatchNorm { .. } => {
                let gamma = params.require(&format!("layer{idx}.gamma"))?;
                let beta = params.require(&format!("layer{idx}.beta"))?;
                batch_norm(&x, gamma, beta)?
            }
            Layer::Dropout { rate } => match &mut mode {
                Mode::Train(rng) if rate > 0.0 => {
                    let keep = 1.0 - rate;
                    let mask = Tensor::from_fn(x.shape(), |_| if rng.bernoulli(keep) { 1.0 / keep } else { 0.0 })?;
                    x.mul(&mask)?
                }
                _ => x,
            },
            Layer::GlobalAvgPool => x.global_avg_pool2d()?,
            Layer::Flatten => {
                let per = x.numel() / batch;
                x.reshape(&[batch, per])?
            }
        };
    }
    Ok(x)
}
