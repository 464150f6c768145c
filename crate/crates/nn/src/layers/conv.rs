use crate::error::{NnError, Result};
use crate::init::Initializer;
use crate::param::{Param, Parameters};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Convolution hyper-parameters `(in, out, kernel, stride, padding)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub const fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    /// `floor((input + 2p - k) / s) + 1`, which must be at least 1.
    pub fn output_size(&self, input: usize) -> Result<usize> {
        if self.kernel == 0 || self.stride == 0 {
            return Err(NnError::InvalidSpec(format!("{self:?}")));
        }
        let padded = input + 2 * self.padding;
        if padded < self.kernel {
            return Err(NnError::InvalidSpec(format!(
                "kernel {} larger than padded input {padded}",
                self.kernel
            )));
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }
}

#[derive(Debug, Clone)]
struct ConvCache<T> {
    cols: Vec<T>,
    in_shape: [usize; 4],
    out_hw: (usize, usize),
}

/// 2-D cross-correlation with zero padding, lowered to one GEMM per sample.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    spec: ConvSpec,
    pub weight: Param<T>,
    pub bias: Param<T>,
    cache: Option<ConvCache<T>>,
}

impl<T: Real> Conv2d<T> {
    pub fn new(name: &str, spec: ConvSpec, init: &mut Initializer) -> Self {
        let k = spec.kernel;
        let shape = [spec.out_channels, spec.in_channels, k, k];
        Self {
            spec,
            weight: Param::new(
                format!("{name}.weight"),
                init.fan_in(&shape, spec.patch_len()),
                true,
            ),
            bias: Param::new(
                format!("{name}.bias"),
                Tensor::zeros(&[spec.out_channels]),
                false,
            ),
            cache: None,
        }
    }

    pub fn spec(&self) -> ConvSpec {
        self.spec
    }

    pub fn output_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        if in_shape.len() != 4 || in_shape[1] != self.spec.in_channels {
            return Err(NnError::ShapeMismatch {
                op: "conv2d",
                expected: vec![0, self.spec.in_channels, 0, 0],
                actual: in_shape.to_vec(),
            });
        }
        Ok(vec![
            in_shape[0],
            self.spec.out_channels,
            self.spec.output_size(in_shape[2])?,
            self.spec.output_size(in_shape[3])?,
        ])
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let out_shape = self.output_shape(x.shape())?;
        let [n, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
        let (ho, wo) = (out_shape[2], out_shape[3]);
        let plen = self.spec.patch_len();
        let howo = ho * wo;
        let cout = self.spec.out_channels;

        let mut cache = self.cache.take().unwrap_or(ConvCache {
            cols: Vec::new(),
            in_shape: [0; 4],
            out_hw: (0, 0),
        });
        cache.cols.clear();
        cache.cols.resize(n * plen * howo, T::zero());
        cache.in_shape = [n, c, h, w];
        cache.out_hw = (ho, wo);

        let mut out = Tensor::zeros(&out_shape);
        let xin = x.data();
        let weight = self.weight.value.data();
        let bias = self.bias.value.data();
        for s in 0..n {
            let cols = &mut cache.cols[s * plen * howo..(s + 1) * plen * howo];
            im2col(&xin[s * c * h * w..(s + 1) * c * h * w], [c, h, w], &self.spec, (ho, wo), cols);
            let y = &mut out.data_mut()[s * cout * howo..(s + 1) * cout * howo];
            for (o, row) in y.chunks_mut(howo).enumerate() {
                row.iter_mut().for_each(|v| *v = bias[o]);
            }
            T::gemm(false, false, cout, howo, plen, T::one(), weight, cols, T::one(), y);
        }
        self.cache = Some(cache);
        Ok(out)
    }

    /// Accumulates weight and bias gradients; returns the input gradient.
    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.as_ref().ok_or(NnError::NoForwardCache("conv2d"))?;
        let [n, c, h, w] = cache.in_shape;
        let (ho, wo) = cache.out_hw;
        let cout = self.spec.out_channels;
        dy.expect_shape("conv2d backward", &[n, cout, ho, wo])?;
        let plen = self.spec.patch_len();
        let howo = ho * wo;

        let mut dx = Tensor::zeros(&[n, c, h, w]);
        let mut dcols = vec![T::zero(); plen * howo];
        for s in 0..n {
            let cols = &cache.cols[s * plen * howo..(s + 1) * plen * howo];
            let dys = &dy.data()[s * cout * howo..(s + 1) * cout * howo];
            T::gemm(
                false,
                true,
                cout,
                plen,
                howo,
                T::one(),
                dys,
                cols,
                T::one(),
                self.weight.grad.data_mut(),
            );
            for (o, row) in dys.chunks(howo).enumerate() {
                let sum: T = row.iter().copied().sum();
                self.bias.grad.data_mut()[o] += sum;
            }
            T::gemm(
                true,
                false,
                plen,
                howo,
                cout,
                T::one(),
                self.weight.value.data(),
                dys,
                T::zero(),
                &mut dcols,
            );
            col2im(
                &dcols,
                [c, h, w],
                &self.spec,
                (ho, wo),
                &mut dx.data_mut()[s * c * h * w..(s + 1) * c * h * w],
            );
        }
        Ok(dx)
    }
}

impl<T: Real> Parameters<T> for Conv2d<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Row `(ch * k + ky) * k + kx`, column `oy * wo + ox` of the patch matrix.
fn im2col<T: Real>(
    x: &[T],
    [c, h, w]: [usize; 3],
    spec: &ConvSpec,
    (ho, wo): (usize, usize),
    cols: &mut [T],
) {
    let k = spec.kernel;
    let (s, p) = (spec.stride as isize, spec.padding as isize);
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = oy as isize * s + ky as isize - p;
                    let out_row = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        out_row.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = ox as isize * s + kx as isize - p;
                        *v = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(
    cols: &[T],
    [c, h, w]: [usize; 3],
    spec: &ConvSpec,
    (ho, wo): (usize, usize),
    dx: &mut [T],
) {
    let k = spec.kernel;
    let (s, p) = (spec.stride as isize, spec.padding as isize);
    for ch in 0..c {
        let plane = &mut dx[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = oy as isize * s + ky as isize - p;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &g) in src[oy * wo..(oy + 1) * wo].iter().enumerate() {
                        let ix = ox as isize * s + kx as isize - p;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += g;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_size_follows_floor_rule() {
        assert_eq!(ConvSpec::new(3, 16, 7, 2, 3).output_size(224).unwrap(), 112);
        assert_eq!(ConvSpec::new(16, 32, 5, 2, 2).output_size(112).unwrap(), 56);
        assert_eq!(ConvSpec::new(32, 64, 3, 2, 1).output_size(56).unwrap(), 28);
        assert_eq!(ConvSpec::new(3, 16, 7, 2, 3).output_size(64).unwrap(), 32);
        assert!(ConvSpec::new(1, 1, 5, 1, 0).output_size(3).is_err());
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut init = Initializer::new(0);
        let mut conv = Conv2d::<f64>::new("id", ConvSpec::new(2, 2, 1, 1, 0), &mut init);
        conv.weight.value = Tensor::from_vec(&[2, 2, 1, 1], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = Tensor::from_vec(&[1, 2, 3, 3], (0..18).map(|i| i as f64 * 0.5 - 3.0).collect())
            .unwrap();
        let y = conv.forward(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn wrong_channel_count_is_shape_error() {
        let mut init = Initializer::new(0);
        let mut conv = Conv2d::<f32>::new("c", ConvSpec::new(3, 4, 3, 1, 1), &mut init);
        let x = Tensor::zeros(&[1, 2, 5, 5]);
        assert!(matches!(conv.forward(&x), Err(NnError::ShapeMismatch { .. })));
    }

    #[test]
    fn backward_without_forward_fails() {
        let mut init = Initializer::new(0);
        let mut conv = Conv2d::<f32>::new("c", ConvSpec::new(1, 1, 3, 1, 1), &mut init);
        let dy = Tensor::zeros(&[1, 1, 4, 4]);
        assert!(matches!(conv.backward(&dy), Err(NnError::NoForwardCache(_))));
    }
}
