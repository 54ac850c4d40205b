use super::{Result, Tensor, TensorError};

/// Mean cross-entropy of `[batch, classes]` logits against class indices.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    if logits.rank() != 2 {
        return Err(TensorError::Rank {
            op: "softmax_cross_entropy",
            expected: 2,
            shape: logits.shape().to_vec(),
        });
    }
    let (batch, classes) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != batch {
        return Err(TensorError::ShapeMismatch {
            op: "softmax_cross_entropy",
            lhs: logits.shape().to_vec(),
            rhs: vec![labels.len()],
        });
    }
    let mut onehot = vec![0.0; batch * classes];
    for (row, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(TensorError::LabelOutOfRange { label, classes });
        }
        onehot[row * classes + label] = 1.0;
    }
    softmax_cross_entropy_onehot(logits, &Tensor::raw(&[batch, classes], onehot))
}

/// Mean cross-entropy against one-hot (or any probability-row) targets.
pub fn softmax_cross_entropy_onehot(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    let batch = logits.shape().first().copied().unwrap_or(1);
    let picked = logits.log_softmax()?.mul(targets)?;
    Ok(picked.sum().scale(-1.0 / batch as f64))
}

/// Mean squared error over all elements.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    let diff = pred.sub(target)?;
    Ok(diff.square().mean())
}
