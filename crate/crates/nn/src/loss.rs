use crate::error::{NnError, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Mean Smooth L1 (Huber-style) loss and its gradient w.r.t. `pred`.
///
/// Per element: `0.5 d^2 / beta` when `|d| < beta`, otherwise `|d| - 0.5 beta`.
pub fn smooth_l1<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, beta: T) -> Result<(T, Tensor<T>)> {
    if pred.shape() != target.shape() {
        return Err(NnError::ShapeMismatch {
            op: "smooth_l1",
            expected: pred.shape().to_vec(),
            actual: target.shape().to_vec(),
        });
    }
    let n = T::lit(pred.len().max(1) as f64);
    let half = T::lit(0.5);
    let mut loss = T::zero();
    let mut grad = Tensor::zeros(pred.shape());
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p - t;
        if d.abs() < beta {
            loss += half * d * d / beta;
            *g = d / beta / n;
        } else {
            loss += d.abs() - half * beta;
            *g = d.signum() / n;
        }
    }
    Ok((loss / n, grad))
}

pub fn mse<T: Real>(pred: &[T], target: &[T]) -> T {
    let n = T::lit(pred.len().max(1) as f64);
    pred.iter()
        .zip(target)
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum::<T>()
        / n
}
