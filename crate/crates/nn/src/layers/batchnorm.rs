use crate::error::{NnError, Result};
use crate::param::{Param, Parameters, Phase};
use crate::scalar::Real;
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone)]
struct BnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    phase: Phase,
    shape: Vec<usize>,
}

/// Per-channel batch normalization over `N x C x H x W`.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    channels: usize,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    cache: Option<BnCache<T>>,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::new(format!("{name}.gamma"), Tensor::filled(&[channels], T::one()), false),
            beta: Param::new(format!("{name}.beta"), Tensor::zeros(&[channels]), false),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn forward(&mut self, x: &Tensor<T>, phase: Phase) -> Result<Tensor<T>> {
        x.expect_rank("batchnorm2d", 4)?;
        let shape = x.shape().to_vec();
        if shape[1] != self.channels {
            return Err(NnError::ShapeMismatch {
                op: "batchnorm2d",
                expected: vec![shape[0], self.channels, shape[2], shape[3]],
                actual: shape,
            });
        }
        let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
        let eps = T::lit(BN_EPS);
        let gamma = self.gamma.value.data();
        let beta = self.beta.value.data();
        let mut y = Tensor::zeros(&shape);

        match phase {
            Phase::Train => {
                if n < 2 {
                    return Err(NnError::BatchTooSmall(n));
                }
                let count = n * hw;
                let count_t = T::lit(count as f64);
                let mut xhat = vec![T::zero(); x.len()];
                let mut inv_std = vec![T::zero(); c];
                let momentum = T::lit(BN_MOMENTUM);
                for ch in 0..c {
                    let plane = |s: usize| &x.data()[(s * c + ch) * hw..(s * c + ch + 1) * hw];
                    let mean = (0..n).map(|s| plane(s).iter().copied().sum::<T>()).sum::<T>() / count_t;
                    let var = (0..n)
                        .map(|s| plane(s).iter().map(|&v| (v - mean) * (v - mean)).sum::<T>())
                        .sum::<T>()
                        / count_t;
                    let istd = T::one() / (var + eps).sqrt();
                    inv_std[ch] = istd;
                    for s in 0..n {
                        let off = (s * c + ch) * hw;
                        for i in 0..hw {
                            let xh = (x.data()[off + i] - mean) * istd;
                            xhat[off + i] = xh;
                            y.data_mut()[off + i] = gamma[ch] * xh + beta[ch];
                        }
                    }
                    let unbiased = var * count_t / T::lit((count - 1).max(1) as f64);
                    self.running_mean[ch] =
                        (T::one() - momentum) * self.running_mean[ch] + momentum * mean;
                    self.running_var[ch] =
                        (T::one() - momentum) * self.running_var[ch] + momentum * unbiased;
                }
                self.cache = Some(BnCache { xhat, inv_std, phase, shape });
            }
            Phase::Eval => {
                let inv_std: Vec<T> = self
                    .running_var
                    .iter()
                    .map(|&v| T::one() / (v + eps).sqrt())
                    .collect();
                let mut xhat = vec![T::zero(); x.len()];
                for s in 0..n {
                    for ch in 0..c {
                        let off = (s * c + ch) * hw;
                        for i in off..off + hw {
                            let xh = (x.data()[i] - self.running_mean[ch]) * inv_std[ch];
                            xhat[i] = xh;
                            y.data_mut()[i] = gamma[ch] * xh + beta[ch];
                        }
                    }
                }
                self.cache = Some(BnCache { xhat, inv_std, phase, shape });
            }
        }
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or(NnError::NoForwardCache("batchnorm2d"))?;
        let shape = &cache.shape;
        dy.expect_shape("batchnorm2d backward", shape)?;
        let (xhat, inv_std) = (&cache.xhat, &cache.inv_std);
        let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
        let gamma = self.gamma.value.data().to_vec();
        let mut dx = Tensor::zeros(shape);
        let dyd = dy.data();

        let count_t = T::lit((n * hw) as f64);
        for ch in 0..c {
            let mut sum_dy = T::zero();
            let mut sum_dy_xhat = T::zero();
            for s in 0..n {
                let off = (s * c + ch) * hw;
                for i in off..off + hw {
                    sum_dy += dyd[i];
                    sum_dy_xhat += dyd[i] * xhat[i];
                }
            }
            self.beta.grad.data_mut()[ch] += sum_dy;
            self.gamma.grad.data_mut()[ch] += sum_dy_xhat;
            match cache.phase {
                Phase::Train => {
                    // dx = gamma * istd / M * (M dy - sum(dy) - xhat * sum(dy * xhat))
                    let k = gamma[ch] * inv_std[ch] / count_t;
                    for s in 0..n {
                        let off = (s * c + ch) * hw;
                        for i in off..off + hw {
                            dx.data_mut()[i] =
                                k * (count_t * dyd[i] - sum_dy - xhat[i] * sum_dy_xhat);
                        }
                    }
                }
                Phase::Eval => {
                    let scale = gamma[ch] * inv_std[ch];
                    for s in 0..n {
                        let off = (s * c + ch) * hw;
                        for i in off..off + hw {
                            dx.data_mut()[i] = dyd[i] * scale;
                        }
                    }
                }
            }
        }
        Ok(dx)
    }
}

impl<T: Real> Parameters<T> for BatchNorm2d<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(shape: &[usize]) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|i| ((i * 7919) % 97) as f64 * 0.13 - 4.0).collect())
            .unwrap()
    }

    #[test]
    fn training_output_is_standardized() {
        let mut bn = BatchNorm2d::<f64>::new("bn", 3);
        let x = sample(&[4, 3, 5, 5]);
        let y = bn.forward(&x, Phase::Train).unwrap();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|s| y.data()[(s * 3 + ch) * 25..(s * 3 + ch + 1) * 25].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-6);
            // eps shrinks the variance slightly below 1
            assert!((var - 1.0).abs() < 1e-3, "var {var}");
        }
    }

    #[test]
    fn eval_with_unit_stats_is_affine() {
        let mut bn = BatchNorm2d::<f64>::new("bn", 2);
        bn.gamma.value = Tensor::from_vec(&[2], vec![2.0, -0.5]).unwrap();
        bn.beta.value = Tensor::from_vec(&[2], vec![0.25, 1.0]).unwrap();
        bn.running_var = vec![1.0 - BN_EPS; 2];
        let x = sample(&[1, 2, 3, 3]);
        let y = bn.forward(&x, Phase::Eval).unwrap();
        for s in 0..9 {
            assert!((y.data()[s] - (2.0 * x.data()[s] + 0.25)).abs() < 1e-12);
            assert!((y.data()[9 + s] - (-0.5 * x.data()[9 + s] + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn single_sample_batch_rejected_in_training() {
        let mut bn = BatchNorm2d::<f32>::new("bn", 1);
        let x = Tensor::zeros(&[1, 1, 4, 4]);
        assert_eq!(bn.forward(&x, Phase::Train).unwrap_err(), NnError::BatchTooSmall(1));
        assert!(bn.forward(&x, Phase::Eval).is_ok());
    }

    #[test]
    fn running_stats_use_momentum() {
        let mut bn = BatchNorm2d::<f64>::new("bn", 1);
        let x = Tensor::from_vec(&[2, 1, 1, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        bn.forward(&x, Phase::Train).unwrap();
        // batch mean 4, unbiased var 20/3
        assert!((bn.running_mean[0] - 0.4).abs() < 1e-12);
        assert!((bn.running_var[0] - (0.9 + 0.1 * 20.0 / 3.0)).abs() < 1e-12);
    }
}
