use crate::error::{NnError, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<(Vec<bool>, Vec<usize>)>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward<T: Real>(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let mask: Vec<bool> = x.data().iter().map(|&v| v > T::zero()).collect();
        let y = x.map(|v| if v > T::zero() { v } else { T::zero() });
        self.mask = Some((mask, x.shape().to_vec()));
        y
    }

    pub fn backward<T: Real>(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (mask, shape) = self.mask.as_ref().ok_or(NnError::NoForwardCache("relu"))?;
        dy.expect_shape("relu backward", shape)?;
        let data = dy
            .data()
            .iter()
            .zip(mask)
            .map(|(&g, &on)| if on { g } else { T::zero() })
            .collect();
        Tensor::from_vec(shape, data)
    }
}

pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}
