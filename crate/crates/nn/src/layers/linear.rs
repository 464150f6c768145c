use crate::error::{NnError, Result};
use crate::init::Initializer;
use crate::param::{Param, Parameters};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Fully connected layer, `y = x W^T + b` with `W` stored `out x in`.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    in_features: usize,
    out_features: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Real> Linear<T> {
    pub fn new(name: &str, in_features: usize, out_features: usize, init: &mut Initializer) -> Self {
        Self {
            in_features,
            out_features,
            weight: Param::new(
                format!("{name}.weight"),
                init.fan_in(&[out_features, in_features], in_features),
                true,
            ),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[out_features]), false),
            input: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.in_features
    }

    pub fn out_features(&self) -> usize {
        self.out_features
    }

    pub fn zero_(&mut self) {
        self.weight.value.fill(T::zero());
        self.bias.value.fill(T::zero());
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    /// Forward pass without caching the input.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.shape().len() != 2 || x.shape()[1] != self.in_features {
            return Err(NnError::ShapeMismatch {
                op: "linear",
                expected: vec![x.shape().first().copied().unwrap_or(0), self.in_features],
                actual: x.shape().to_vec(),
            });
        }
        let n = x.shape()[0];
        let mut y = Tensor::zeros(&[n, self.out_features]);
        for row in y.data_mut().chunks_mut(self.out_features) {
            row.copy_from_slice(self.bias.value.data());
        }
        T::gemm(
            false,
            true,
            n,
            self.out_features,
            self.in_features,
            T::one(),
            x.data(),
            self.weight.value.data(),
            T::one(),
            y.data_mut(),
        );
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.as_ref().ok_or(NnError::NoForwardCache("linear"))?;
        let n = x.shape()[0];
        dy.expect_shape("linear backward", &[n, self.out_features])?;
        T::gemm(
            true,
            false,
            self.out_features,
            self.in_features,
            n,
            T::one(),
            dy.data(),
            x.data(),
            T::one(),
            self.weight.grad.data_mut(),
        );
        for row in dy.data().chunks(self.out_features) {
            for (g, &d) in self.bias.grad.data_mut().iter_mut().zip(row) {
                *g += d;
            }
        }
        let mut dx = Tensor::zeros(&[n, self.in_features]);
        T::gemm(
            false,
            false,
            n,
            self.in_features,
            self.out_features,
            T::one(),
            dy.data(),
            self.weight.value.data(),
            T::zero(),
            dx.data_mut(),
        );
        Ok(dx)
    }
}

impl<T: Real> Parameters<T> for Linear<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}
