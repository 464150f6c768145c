//! Stacked GRU with backpropagation through time.
//!
//! Gate layout follows the common `(reset, update, new)` packing: the input
//! and hidden projections are `3H x in` and `3H x H` matrices whose row
//! blocks are the `r`, `z` and `n` gates in that order.
//!
//! ```text
//! r  = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
//! z  = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
//! n  = tanh(W_in x + b_in + r * (W_hn h + b_hn))
//! h' = (1 - z) * n + z * h
//! ```

use crate::error::{NnError, Result};
use crate::init::Initializer;
use crate::layers::activation::sigmoid;
use crate::param::{Param, Parameters};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruSpec {
    pub input_size: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
}

impl GruSpec {
    pub const fn new(input_size: usize, hidden_size: usize, num_layers: usize) -> Self {
        Self {
            input_size,
            hidden_size,
            num_layers,
        }
    }
}

#[derive(Debug, Clone)]
struct StepCache<T> {
    /// Layer input for every step, `T*B x in`.
    x: Vec<T>,
    /// Hidden state entering each step, `T*B x H`.
    h_prev: Vec<T>,
    r: Vec<T>,
    z: Vec<T>,
    n: Vec<T>,
    /// `W_hn h + b_hn` per step.
    hn: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct GruLayer<T> {
    input_size: usize,
    hidden: usize,
    pub w_ih: Param<T>,
    pub w_hh: Param<T>,
    pub b_ih: Param<T>,
    pub b_hh: Param<T>,
    cache: Option<(StepCache<T>, usize, usize)>,
}

impl<T: Real> GruLayer<T> {
    fn new(name: &str, input_size: usize, hidden: usize, init: &mut Initializer) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            input_size,
            hidden,
            w_ih: Param::new(
                format!("{name}.w_ih"),
                init.uniform(&[3 * hidden, input_size], bound),
                true,
            ),
            w_hh: Param::new(
                format!("{name}.w_hh"),
                init.uniform(&[3 * hidden, hidden], bound),
                true,
            ),
            b_ih: Param::new(format!("{name}.b_ih"), Tensor::zeros(&[3 * hidden]), false),
            b_hh: Param::new(format!("{name}.b_hh"), Tensor::zeros(&[3 * hidden]), false),
            cache: None,
        }
    }

    /// `x` is `steps*batch x in`, step-major. Returns every hidden state,
    /// `steps*batch x H`.
    fn forward(&mut self, x: &[T], steps: usize, batch: usize, h0: Option<&[T]>) -> Vec<T> {
        let hsz = self.hidden;
        let g = 3 * hsz;
        let rows = steps * batch;

        // Input projections for all steps at once.
        let mut gi = vec![T::zero(); rows * g];
        for row in gi.chunks_mut(g) {
            row.copy_from_slice(self.b_ih.value.data());
        }
        T::gemm(
            false,
            true,
            rows,
            g,
            self.input_size,
            T::one(),
            x,
            self.w_ih.value.data(),
            T::one(),
            &mut gi,
        );

        let mut cache = StepCache {
            x: x.to_vec(),
            h_prev: vec![T::zero(); rows * hsz],
            r: vec![T::zero(); rows * hsz],
            z: vec![T::zero(); rows * hsz],
            n: vec![T::zero(); rows * hsz],
            hn: vec![T::zero(); rows * hsz],
        };
        let mut outputs = vec![T::zero(); rows * hsz];
        let mut h = match h0 {
            Some(h0) => h0.to_vec(),
            None => vec![T::zero(); batch * hsz],
        };
        let mut gh = vec![T::zero(); batch * g];

        for t in 0..steps {
            for row in gh.chunks_mut(g) {
                row.copy_from_slice(self.b_hh.value.data());
            }
            T::gemm(
                false,
                true,
                batch,
                g,
                hsz,
                T::one(),
                &h,
                self.w_hh.value.data(),
                T::one(),
                &mut gh,
            );
            let base = t * batch * hsz;
            cache.h_prev[base..base + batch * hsz].copy_from_slice(&h);
            for b in 0..batch {
                let gi_row = &gi[(t * batch + b) * g..(t * batch + b + 1) * g];
                let gh_row = &gh[b * g..(b + 1) * g];
                for j in 0..hsz {
                    let idx = base + b * hsz + j;
                    let r = sigmoid(gi_row[j] + gh_row[j]);
                    let z = sigmoid(gi_row[hsz + j] + gh_row[hsz + j]);
                    let hn = gh_row[2 * hsz + j];
                    let n = (gi_row[2 * hsz + j] + r * hn).tanh();
                    let hp = h[b * hsz + j];
                    let hnew = (T::one() - z) * n + z * hp;
                    cache.r[idx] = r;
                    cache.z[idx] = z;
                    cache.n[idx] = n;
                    cache.hn[idx] = hn;
                    outputs[idx] = hnew;
                }
            }
            h.copy_from_slice(&outputs[base..base + batch * hsz]);
        }
        self.cache = Some((cache, steps, batch));
        outputs
    }

    /// `d_out` is the loss gradient on every output hidden state
    /// (`steps*batch x H`). Returns the gradient on the layer input.
    fn backward(&mut self, d_out: &[T]) -> Result<Vec<T>> {
        let (cache, steps, batch) = self.cache.as_ref().ok_or(NnError::NoForwardCache("gru"))?;
        let (steps, batch) = (*steps, *batch);
        let hsz = self.hidden;
        let g = 3 * hsz;
        let rows = steps * batch;
        if d_out.len() != rows * hsz {
            return Err(NnError::ShapeMismatch {
                op: "gru backward",
                expected: vec![steps, batch, hsz],
                actual: vec![d_out.len()],
            });
        }

        let mut dgi = vec![T::zero(); rows * g];
        let mut dgh = vec![T::zero(); batch * g];
        let mut dh_next = vec![T::zero(); batch * hsz];
        let mut dh_prev = vec![T::zero(); batch * hsz];

        for t in (0..steps).rev() {
            let base = t * batch * hsz;
            for b in 0..batch {
                for j in 0..hsz {
                    let idx = base + b * hsz + j;
                    let dh = dh_next[b * hsz + j] + d_out[idx];
                    let (r, z, n, hn) = (cache.r[idx], cache.z[idx], cache.n[idx], cache.hn[idx]);
                    let hp = cache.h_prev[idx];
                    let dn = dh * (T::one() - z);
                    let dz = dh * (hp - n);
                    let dn_pre = dn * (T::one() - n * n);
                    let dr_pre = dn_pre * hn * r * (T::one() - r);
                    let dz_pre = dz * z * (T::one() - z);
                    let gi_row = (t * batch + b) * g;
                    dgi[gi_row + j] = dr_pre;
                    dgi[gi_row + hsz + j] = dz_pre;
                    dgi[gi_row + 2 * hsz + j] = dn_pre;
                    dgh[b * g + j] = dr_pre;
                    dgh[b * g + hsz + j] = dz_pre;
                    dgh[b * g + 2 * hsz + j] = dn_pre * r;
                    dh_prev[b * hsz + j] = dh * z;
                }
            }
            let h_prev = &cache.h_prev[base..base + batch * hsz];
            T::gemm(
                true,
                false,
                g,
                hsz,
                batch,
                T::one(),
                &dgh,
                h_prev,
                T::one(),
                self.w_hh.grad.data_mut(),
            );
            for row in dgh.chunks(g) {
                for (acc, &d) in self.b_hh.grad.data_mut().iter_mut().zip(row) {
                    *acc += d;
                }
            }
            T::gemm(
                false,
                false,
                batch,
                hsz,
                g,
                T::one(),
                &dgh,
                self.w_hh.value.data(),
                T::one(),
                &mut dh_prev,
            );
            std::mem::swap(&mut dh_next, &mut dh_prev);
        }

        T::gemm(
            true,
            false,
            g,
            self.input_size,
            rows,
            T::one(),
            &dgi,
            &cache.x,
            T::one(),
            self.w_ih.grad.data_mut(),
        );
        for row in dgi.chunks(g) {
            for (acc, &d) in self.b_ih.grad.data_mut().iter_mut().zip(row) {
                *acc += d;
            }
        }
        let mut dx = vec![T::zero(); rows * self.input_size];
        T::gemm(
            false,
            false,
            rows,
            self.input_size,
            g,
            T::one(),
            &dgi,
            self.w_ih.value.data(),
            T::zero(),
            &mut dx,
        );
        Ok(dx)
    }
}

/// Multi-layer GRU over a `T x B x in` sequence with zero initial state.
#[derive(Debug, Clone)]
pub struct Gru<T> {
    spec: GruSpec,
    pub layers: Vec<GruLayer<T>>,
    last_shape: Option<(usize, usize)>,
    final_hidden: Vec<Vec<T>>,
}

impl<T: Real> Gru<T> {
    pub fn new(name: &str, spec: GruSpec, init: &mut Initializer) -> Self {
        let layers = (0..spec.num_layers)
            .map(|l| {
                let input = if l == 0 { spec.input_size } else { spec.hidden_size };
                GruLayer::new(&format!("{name}.l{l}"), input, spec.hidden_size, init)
            })
            .collect();
        Self {
            spec,
            layers,
            last_shape: None,
            final_hidden: Vec::new(),
        }
    }

    pub fn spec(&self) -> GruSpec {
        self.spec
    }

    /// Returns the top layer's hidden state after the last step, `B x H`.
    pub fn forward(&mut self, seq: &Tensor<T>) -> Result<Tensor<T>> {
        seq.expect_rank("gru", 3)?;
        let (steps, batch, input) = (seq.shape()[0], seq.shape()[1], seq.shape()[2]);
        if input != self.spec.input_size || steps == 0 {
            return Err(NnError::ShapeMismatch {
                op: "gru",
                expected: vec![steps.max(1), batch, self.spec.input_size],
                actual: seq.shape().to_vec(),
            });
        }
        let hsz = self.spec.hidden_size;
        let mut x = seq.data().to_vec();
        self.final_hidden.clear();
        for layer in &mut self.layers {
            x = layer.forward(&x, steps, batch, None);
            self.final_hidden
                .push(x[(steps - 1) * batch * hsz..steps * batch * hsz].to_vec());
        }
        self.last_shape = Some((steps, batch));
        Tensor::from_vec(&[batch, hsz], self.final_hidden.last().cloned().unwrap_or_default())
    }

    /// Final hidden state of every layer from the last forward, `L x B x H`.
    pub fn final_hidden_states(&self) -> Option<Tensor<T>> {
        let (_, batch) = self.last_shape?;
        let data: Vec<T> = self.final_hidden.iter().flatten().copied().collect();
        Tensor::from_vec(&[self.layers.len(), batch, self.spec.hidden_size], data).ok()
    }

    /// Backpropagates a gradient on the top layer's final hidden state and
    /// returns the gradient on the input sequence.
    pub fn backward(&mut self, d_last: &Tensor<T>) -> Result<Tensor<T>> {
        let (steps, batch) = self.last_shape.ok_or(NnError::NoForwardCache("gru"))?;
        let hsz = self.spec.hidden_size;
        d_last.expect_shape("gru backward", &[batch, hsz])?;
        let mut d_out = vec![T::zero(); steps * batch * hsz];
        d_out[(steps - 1) * batch * hsz..].copy_from_slice(d_last.data());
        for layer in self.layers.iter_mut().rev() {
            d_out = layer.backward(&d_out)?;
        }
        Tensor::from_vec(&[steps, batch, self.spec.input_size], d_out)
    }
}

impl<T: Real> Parameters<T> for Gru<T> {
    fn params(&self) -> Vec<&Param<T>> {
        self.layers
            .iter()
            .flat_map(|l| [&l.w_ih, &l.w_hh, &l.b_ih, &l.b_hh])
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.w_ih, &mut l.w_hh, &mut l.b_ih, &mut l.b_hh])
            .collect()
    }
}
