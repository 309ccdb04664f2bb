use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Residual regression loss `1/(2B) * sum ||pred - (noisy - clean)||^2` over a
/// batch of `B` items, and its gradient with respect to `pred`.
pub fn residual_mse_loss(
    predicted: &Tensor,
    noisy: &Tensor,
    clean: &Tensor,
) -> Result<(f32, Tensor)> {
    if predicted.shape() != noisy.shape() || noisy.shape() != clean.shape() {
        return Err(Error::invalid(format!(
            "residual loss: shapes {:?}, {:?}, {:?} differ",
            predicted.shape(),
            noisy.shape(),
            clean.shape()
        )));
    }
    let batch = predicted.shape().first().copied().unwrap_or(1).max(1) as f32;
    let mut sum = 0.0f64;
    let grad: Vec<f32> = predicted
        .data()
        .iter()
        .zip(noisy.data().iter().zip(clean.data()))
        .map(|(&p, (&y, &x))| {
            let diff = p - (y - x);
            sum += (diff as f64) * (diff as f64);
            diff / batch
        })
        .collect();
    let loss = (sum / (2.0 * batch as f64)) as f32;
    Ok((loss, Tensor::from_vec(predicted.shape(), grad)?))
}
