use std::fmt;
use std::str::FromStr;

use magtac_nn::{
    flatten, BatchNorm2d, Conv2d, ConvSpec, Gru, GruSpec, Initializer, Linear, NnError, Param, Parameters, Phase,
    Real, Relu, Tensor,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::magnetics::FRAME_LEN;

pub const CBR: [ConvSpec; 3] = [
    ConvSpec::new(3, 16, 7, 2, 3),
    ConvSpec::new(16, 32, 5, 2, 2),
    ConvSpec::new(32, 64, 3, 2, 1),
];
pub const FC1_OUT: usize = 512;
pub const FEATURE_LEN: usize = 32;
pub const GRU_SPEC: GruSpec = GruSpec::new(FRAME_LEN, FEATURE_LEN, 3);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    MagOnly,
    ImageOnly,
    Fusion,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::MagOnly, Mode::ImageOnly, Mode::Fusion];

    pub fn uses_images(self) -> bool {
        self != Mode::MagOnly
    }

    pub fn uses_mag(self) -> bool {
        self != Mode::ImageOnly
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::MagOnly => "mag-only",
            Mode::ImageOnly => "image-only",
            Mode::Fusion => "fusion",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?} (expected mag-only, image-only or fusion)")))
    }
}

/// Per-channel standardization of magnetic frames, fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagNormalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Default for MagNormalizer {
    fn default() -> Self {
        Self {
            mean: vec![0.0; FRAME_LEN],
            std: vec![1.0; FRAME_LEN],
        }
    }
}

impl MagNormalizer {
    /// Fits over every frame of the selected windows; `windows` is
    /// `N x window x 24`.
    pub fn fit(windows: &[f32], window: usize, rows: &[usize]) -> Self {
        let rec = window * FRAME_LEN;
        let mut sum = [0.0f64; FRAME_LEN];
        let mut sq = [0.0f64; FRAME_LEN];
        let mut count = 0usize;
        for &r in rows {
            for frame in windows[r * rec..(r + 1) * rec].chunks_exact(FRAME_LEN) {
                for (c, &v) in frame.iter().enumerate() {
                    sum[c] += v as f64;
                    sq[c] += (v as f64).powi(2);
                }
                count += 1;
            }
        }
        if count == 0 {
            return Self::default();
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s / n - m * m).max(crate::render::VARIANCE_FLOOR).sqrt())
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, frames: &mut [f32]) {
        for frame in frames.chunks_exact_mut(FRAME_LEN) {
            for (c, v) in frame.iter_mut().enumerate() {
                *v = ((*v as f64 - self.mean[c]) / self.std[c]) as f32;
            }
        }
    }
}

/// Batched model inputs. `images` is `N x 3 x H x W`, `mags` is
/// `N x window x 24` (already normalized). A model reads only the
/// modalities its mode needs.
#[derive(Debug, Clone, Default)]
pub struct ModelInput<T> {
    pub images: Option<Tensor<T>>,
    pub mags: Option<Tensor<T>>,
}

#[derive(Debug, Clone)]
struct Cbr<T> {
    conv: Conv2d<T>,
    bn: BatchNorm2d<T>,
    relu: Relu,
}

/// Image branch: three conv-batchnorm-relu blocks, flatten, FC1, FC2.
#[derive(Debug, Clone)]
pub struct CnnBranch<T> {
    blocks: Vec<Cbr<T>>,
    fc1: Linear<T>,
    fc2: Linear<T>,
    image_size: usize,
    conv_out: Vec<usize>,
}

impl<T: Real> CnnBranch<T> {
    pub fn new(image_size: usize, init: &mut Initializer) -> Result<Self> {
        let mut size = image_size;
        let mut blocks = Vec::new();
        for (i, spec) in CBR.iter().enumerate() {
            size = spec.output_size(size)?;
            blocks.push(Cbr {
                conv: Conv2d::new(&format!("cnn.cbr{}.conv", i + 1), *spec, init),
                bn: BatchNorm2d::new(&format!("cnn.cbr{}.bn", i + 1), spec.out_channels),
                relu: Relu::new(),
            });
        }
        let conv_out = vec![CBR[2].out_channels, size, size];
        let flat = conv_out.iter().product();
        Ok(Self {
            blocks,
            fc1: Linear::new("cnn.fc1", flat, FC1_OUT, init),
            fc2: Linear::new("cnn.fc2", FC1_OUT, FEATURE_LEN, init),
            image_size,
            conv_out,
        })
    }

    pub fn flatten_len(&self) -> usize {
        self.conv_out.iter().product()
    }

    fn run(&mut self, x: &Tensor<T>, phase: Phase, mut trace: Option<&mut Vec<LayerAudit>>) -> Result<Tensor<T>> {
        let n = x.shape()[0];
        let mut h = x.clone();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            h = b.conv.forward(&h)?;
            h = b.bn.forward(&h, phase)?;
            h = b.relu.forward(&h);
            if let Some(t) = trace.as_deref_mut() {
                t.push(LayerAudit {
                    name: format!("CBR{}{:?}", i + 1, spec_tuple(&CBR[i])),
                    output_shape: h.shape().to_vec(),
                    params: b.conv.num_params() + b.bn.num_params(),
                });
            }
        }
        h = flatten(h)?;
        if let Some(t) = trace.as_deref_mut() {
            t.push(LayerAudit {
                name: "Flatten".into(),
                output_shape: h.shape().to_vec(),
                params: 0,
            });
        }
        h = self.fc1.forward(&h)?;
        if let Some(t) = trace.as_deref_mut() {
            t.push(LayerAudit {
                name: format!("FC1({},{})", self.fc1.in_features(), FC1_OUT),
                output_shape: h.shape().to_vec(),
                params: self.fc1.num_params(),
            });
        }
        h = self.fc2.forward(&h)?;
        if let Some(t) = trace {
            t.push(LayerAudit {
                name: format!("FC2({FC1_OUT},{FEATURE_LEN})"),
                output_shape: h.shape().to_vec(),
                params: self.fc2.num_params(),
            });
        }
        debug_assert_eq!(h.shape(), &[n, FEATURE_LEN]);
        Ok(h)
    }

    /// `N x 3 x H x W` to `N x 32`.
    pub fn forward(&mut self, x: &Tensor<T>, phase: Phase) -> Result<Tensor<T>> {
        let s = self.image_size;
        if x.shape().len() != 4 || x.shape()[1..] != [3, s, s] {
            return Err(NnError::ShapeMismatch {
                op: "cnn branch",
                expected: vec![x.shape().first().copied().unwrap_or(0), 3, s, s],
                actual: x.shape().to_vec(),
            }
            .into());
        }
        self.run(x, phase, None)
    }

    pub fn backward(&mut self, d: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = self.fc2.backward(d)?;
        g = self.fc1.backward(&g)?;
        let n = g.shape()[0];
        let mut shape = vec![n];
        shape.extend_from_slice(&self.conv_out);
        g = g.reshape(&shape)?;
        for b in self.blocks.iter_mut().rev() {
            g = b.relu.backward(&g)?;
            g = b.bn.backward(&g)?;
            g = b.conv.backward(&g)?;
        }
        Ok(g)
    }

    fn batchnorms(&self) -> impl Iterator<Item = &BatchNorm2d<T>> {
        self.blocks.iter().map(|b| &b.bn)
    }

    fn batchnorms_mut(&mut self) -> impl Iterator<Item = &mut BatchNorm2d<T>> {
        self.blocks.iter_mut().map(|b| &mut b.bn)
    }
}

fn spec_tuple(s: &ConvSpec) -> (usize, usize, usize, usize, usize) {
    (s.in_channels, s.out_channels, s.kernel, s.stride, s.padding)
}

impl<T: Real> Parameters<T> for CnnBranch<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.extend(b.conv.params());
            out.extend(b.bn.params());
        }
        out.extend(self.fc1.params());
        out.extend(self.fc2.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.extend(b.conv.params_mut());
            out.extend(b.bn.params_mut());
        }
        out.extend(self.fc1.params_mut());
        out.extend(self.fc2.params_mut());
        out
    }
}

/// A named flat tensor, used for checkpoints and best-epoch snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// One of the three force regressors. The fusion feature is the GRU
/// feature followed by the CNN feature.
#[derive(Debug, Clone)]
pub struct ForceModel<T> {
    mode: Mode,
    image_size: usize,
    window: usize,
    seed: u64,
    pub cnn: Option<CnnBranch<T>>,
    pub gru: Option<Gru<T>>,
    pub head: Linear<T>,
    pub mag_norm: MagNormalizer,
    /// Optimizer steps taken so far.
    pub steps: u64,
}

impl<T: Real> ForceModel<T> {
    /// Fresh model. Branch weights use fan-in uniform init; the regression
    /// head starts at zero.
    pub fn new(mode: Mode, image_size: usize, window: usize, seed: u64) -> Result<Self> {
        if window == 0 {
            return Err(Error::Config("magnetic window must be at least one frame".into()));
        }
        let mut init = Initializer::new(seed);
        let cnn = mode.uses_images().then(|| CnnBranch::new(image_size, &mut init)).transpose()?;
        let gru = mode.uses_mag().then(|| Gru::new("gru", GRU_SPEC, &mut init));
        let head_in = FEATURE_LEN * (mode.uses_images() as usize + mode.uses_mag() as usize);
        let mut head = Linear::new("head", head_in, 1, &mut init);
        head.zero_();
        Ok(Self {
            mode,
            image_size,
            window,
            seed,
            cnn,
            gru,
            head,
            mag_norm: MagNormalizer::default(),
            steps: 0,
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Branch features, `N x 32` or `N x 64` for fusion.
    pub fn features(&mut self, input: &ModelInput<T>, phase: Phase) -> Result<Tensor<T>> {
        let f2d = match &mut self.gru {
            Some(gru) => {
                let mags = input
                    .mags
                    .as_ref()
                    .ok_or_else(|| Error::Domain(format!("{} model needs magnetic windows", self.mode)))?;
                let (n, w) = (mags.shape().first().copied().unwrap_or(0), self.window);
                if mags.shape() != [n, w, FRAME_LEN] {
                    return Err(NnError::ShapeMismatch {
                        op: "magnetic window",
                        expected: vec![n, w, FRAME_LEN],
                        actual: mags.shape().to_vec(),
                    }
                    .into());
                }
                Some(gru.forward(&time_major(mags))?)
            }
            None => None,
        };
        let f3d = match &mut self.cnn {
            Some(cnn) => {
                let images = input
                    .images
                    .as_ref()
                    .ok_or_else(|| Error::Domain(format!("{} model needs images", self.mode)))?;
                Some(cnn.forward(images, phase)?)
            }
            None => None,
        };
        match (f2d, f3d) {
            (Some(a), Some(b)) => concat_cols(&a, &b),
            (Some(a), None) | (None, Some(a)) => Ok(a),
            (None, None) => unreachable!("every mode has a branch"),
        }
    }

    /// Predicted force, `N x 1`.
    pub fn forward(&mut self, input: &ModelInput<T>, phase: Phase) -> Result<Tensor<T>> {
        let f = self.features(input, phase)?;
        Ok(self.head.forward(&f)?)
    }

    /// Accumulates parameter gradients for `d_out` (`N x 1`).
    pub fn backward(&mut self, d_out: &Tensor<T>) -> Result<()> {
        let d_feat = self.head.backward(d_out)?;
        let (d2, d3) = match (self.gru.is_some(), self.cnn.is_some()) {
            (true, true) => {
                let (a, b) = split_cols(&d_feat, FEATURE_LEN)?;
                (Some(a), Some(b))
            }
            (true, false) => (Some(d_feat), None),
            _ => (None, Some(d_feat)),
        };
        if let (Some(gru), Some(d)) = (&mut self.gru, d2) {
            gru.backward(&d)?;
        }
        if let (Some(cnn), Some(d)) = (&mut self.cnn, d3) {
            cnn.backward(&d)?;
        }
        Ok(())
    }

    /// Parameters followed by batchnorm running statistics, in checkpoint
    /// order.
    pub fn state(&self) -> Vec<NamedTensor<T>> {
        let mut out: Vec<NamedTensor<T>> = self
            .params()
            .into_iter()
            .map(|p| NamedTensor {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                data: p.value.data().to_vec(),
            })
            .collect();
        if let Some(cnn) = &self.cnn {
            for (i, bn) in cnn.batchnorms().enumerate() {
                for (kind, v) in [("running_mean", &bn.running_mean), ("running_var", &bn.running_var)] {
                    out.push(NamedTensor {
                        name: format!("cnn.cbr{}.bn.{kind}", i + 1),
                        shape: vec![v.len()],
                        data: v.clone(),
                    });
                }
            }
        }
        out
    }

    pub fn load_state(&mut self, state: &[NamedTensor<T>]) -> Result<()> {
        let expected = self.state();
        if expected.len() != state.len() {
            return Err(Error::Domain(format!(
                "state has {} tensors, model expects {}",
                state.len(),
                expected.len()
            )));
        }
        for (e, s) in expected.iter().zip(state) {
            if e.name != s.name || e.shape != s.shape || s.data.len() != e.data.len() {
                return Err(Error::Domain(format!(
                    "state tensor {} {:?} does not match {} {:?}",
                    s.name, s.shape, e.name, e.shape
                )));
            }
        }
        let mut it = state.iter();
        for p in self.params_mut() {
            p.value.data_mut().copy_from_slice(&it.next().expect("length checked").data);
        }
        if let Some(cnn) = &mut self.cnn {
            for bn in cnn.batchnorms_mut() {
                bn.running_mean.copy_from_slice(&it.next().expect("length checked").data);
                bn.running_var.copy_from_slice(&it.next().expect("length checked").data);
            }
        }
        Ok(())
    }
}

impl<T: Real> Parameters<T> for ForceModel<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut out = Vec::new();
        if let Some(c) = &self.cnn {
            out.extend(c.params());
        }
        if let Some(g) = &self.gru {
            out.extend(g.params());
        }
        out.extend(self.head.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        if let Some(c) = &mut self.cnn {
            out.extend(c.params_mut());
        }
        if let Some(g) = &mut self.gru {
            out.extend(g.params_mut());
        }
        out.extend(self.head.params_mut());
        out
    }
}

fn time_major<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (n, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = vec![T::zero(); n * w * c];
    for s in 0..n {
        for t in 0..w {
            let src = (s * w + t) * c;
            let dst = (t * n + s) * c;
            out[dst..dst + c].copy_from_slice(&x.data()[src..src + c]);
        }
    }
    Tensor::from_vec(&[w, n, c], out).expect("same length")
}

fn concat_cols<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, ca, cb) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    if b.shape()[0] != n {
        return Err(NnError::ShapeMismatch {
            op: "concat",
            expected: vec![n, cb],
            actual: b.shape().to_vec(),
        }
        .into());
    }
    let mut out = Vec::with_capacity(n * (ca + cb));
    for i in 0..n {
        out.extend_from_slice(&a.data()[i * ca..(i + 1) * ca]);
        out.extend_from_slice(&b.data()[i * cb..(i + 1) * cb]);
    }
    Ok(Tensor::from_vec(&[n, ca + cb], out)?)
}

fn split_cols<T: Real>(x: &Tensor<T>, left: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, c) = (x.shape()[0], x.shape()[1]);
    let right = c - left;
    let mut a = Vec::with_capacity(n * left);
    let mut b = Vec::with_capacity(n * right);
    for row in x.data().chunks_exact(c) {
        a.extend_from_slice(&row[..left]);
        b.extend_from_slice(&row[left..]);
    }
    Ok((Tensor::from_vec(&[n, left], a)?, Tensor::from_vec(&[n, right], b)?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerAudit {
    pub name: String,
    pub output_shape: Vec<usize>,
    pub params: usize,
}

/// Shapes and parameter counts observed on one eval-mode forward pass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArchAudit {
    pub mode: Mode,
    pub image_size: usize,
    pub layers: Vec<LayerAudit>,
    pub flatten_len: Option<usize>,
    pub feature_len: usize,
    pub total_params: usize,
}

impl fmt::Display for ArchAudit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} model, {}x{} input", self.mode, self.image_size, self.image_size)?;
        for l in &self.layers {
            writeln!(f, "  {:<24} out {:?}  params {}", l.name, l.output_shape, l.params)?;
        }
        write!(f, "  feature {}  total params {}", self.feature_len, self.total_params)
    }
}

/// Builds a `mode` model for `image_size` images and traces a single
/// sample through it.
pub fn audit(mode: Mode, image_size: usize, window: usize) -> Result<ArchAudit> {
    let mut model = ForceModel::<f32>::new(mode, image_size, window, 0)?;
    let mut layers = Vec::new();
    let mut feats = Vec::new();
    if let Some(cnn) = &mut model.cnn {
        let x = Tensor::zeros(&[1, 3, image_size, image_size]);
        feats.push(cnn.run(&x, Phase::Eval, Some(&mut layers))?);
    }
    if let Some(gru) = &mut model.gru {
        let seq = Tensor::zeros(&[window, 1, FRAME_LEN]);
        let out = gru.forward(&seq)?;
        let spec = gru.spec();
        layers.push(LayerAudit {
            name: format!(
                "GRU(in {}, hidden {}, layers {})",
                spec.input_size, spec.hidden_size, spec.num_layers
            ),
            output_shape: out.shape().to_vec(),
            params: gru.num_params(),
        });
        feats.push(out);
    }
    let feature_len = feats.iter().map(|f| f.shape()[1]).sum();
    layers.push(LayerAudit {
        name: format!("Fc({feature_len},1)"),
        output_shape: vec![1, 1],
        params: model.head.num_params(),
    });
    Ok(ArchAudit {
        mode,
        image_size,
        flatten_len: model.cnn.as_ref().map(|c| c.flatten_len()),
        layers,
        feature_len,
        total_params: model.num_params(),
    })
}
