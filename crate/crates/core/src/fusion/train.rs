use std::path::Path;
use std::time::Instant;

use magtac_nn::{smooth_l1, Adam, Parameters, Phase, Real, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Splits};
use crate::error::{Error, Result};
use crate::fusion::{metrics, ForceModel, MagNormalizer, Metrics, Mode, ModelInput};
use crate::magnetics::FRAME_LEN;
use crate::render::preprocess;

const EVAL_BATCH: usize = 256;
const SMOOTH_L1_BETA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(mode: Mode, lr: f64, seed: u64) -> Self {
        Self {
            mode,
            lr,
            batch_size: 64,
            weight_decay: 1e-4,
            patience: 3,
            max_epochs: 50,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be at least 2".into()));
        }
        if self.patience < 1 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight decay must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    NoImprovement,
    Stop,
}

/// Stops once the monitored loss has failed to strictly improve for
/// `patience` consecutive epochs.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        match self.best {
            Some((_, b)) if !(loss < b) => {
                self.stale += 1;
                if self.stale >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::NoImprovement
                }
            }
            _ => {
                self.best = Some((epoch, loss));
                self.stale = 0;
                StopDecision::Improved
            }
        }
    }

    /// `(epoch, loss)` of the best observation so far.
    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

/// Model-ready arrays for a whole dataset: standardized images and raw
/// magnetic windows (microtesla), each loaded only if the mode needs it.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub image_size: usize,
    pub window: usize,
    /// `N x 3 x H x W`.
    pub images: Option<Vec<f32>>,
    /// `N x window x 24`.
    pub mags: Option<Vec<f32>>,
    pub labels: Vec<f32>,
}

impl TrainingData {
    pub fn load(ds: &Dataset, mode: Mode) -> Result<Self> {
        let m = ds.manifest();
        if m.image_height != m.image_width {
            return Err(Error::Domain("images must be square".into()));
        }
        let size = m.image_height;
        let images = if mode.uses_images() {
            let plane = 3 * size * size;
            let mut buf = vec![0.0f32; ds.len() * plane];
            ds.for_each_image(|i, img| {
                let t = preprocess(&img);
                for (d, s) in buf[i * plane..(i + 1) * plane].iter_mut().zip(t.data()) {
                    *d = *s as f32;
                }
                Ok(())
            })?;
            Some(buf)
        } else {
            None
        };
        let mags = mode.uses_mag().then(|| ds.all_mag_windows()).transpose()?;
        Ok(Self {
            image_size: size,
            window: m.window,
            images,
            mags,
            labels: ds.labels().to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Gathers rows `idx` into model inputs and an `N x 1` label tensor.
    pub fn batch<T: Real>(&self, idx: &[usize], mode: Mode, norm: &MagNormalizer) -> Result<(ModelInput<T>, Tensor<T>)> {
        let n = idx.len();
        let cast = |v: f32| T::from_f32(v).expect("f32 fits");
        let images = if mode.uses_images() {
            let src = self
                .images
                .as_ref()
                .ok_or_else(|| Error::Domain("images were not loaded".into()))?;
            let plane = 3 * self.image_size * self.image_size;
            let mut out = Vec::with_capacity(n * plane);
            for &i in idx {
                out.extend(src[i * plane..(i + 1) * plane].iter().map(|&v| cast(v)));
            }
            Some(Tensor::from_vec(&[n, 3, self.image_size, self.image_size], out)?)
        } else {
            None
        };
        let mags = if mode.uses_mag() {
            let src = self
                .mags
                .as_ref()
                .ok_or_else(|| Error::Domain("magnetic windows were not loaded".into()))?;
            let rec = self.window * FRAME_LEN;
            let mut raw = Vec::with_capacity(n * rec);
            for &i in idx {
                raw.extend_from_slice(&src[i * rec..(i + 1) * rec]);
            }
            norm.apply(&mut raw);
            Some(Tensor::from_vec(
                &[n, self.window, FRAME_LEN],
                raw.into_iter().map(cast).collect(),
            )?)
        } else {
            None
        };
        let labels = Tensor::from_vec(&[n, 1], idx.iter().map(|&i| cast(self.labels[i])).collect())?;
        Ok((ModelInput { images, mags }, labels))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub lr: f64,
    pub wall_s: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters restored from the epoch with the lowest test loss.
    pub model: ForceModel<T>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

/// Minibatch Adam on Smooth L1, early-stopped on the test split.
pub fn train<T: Real>(
    model: ForceModel<T>,
    data: &TrainingData,
    splits: &Splits,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    train_observed(model, data, splits, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_observed<T: Real>(
    mut model: ForceModel<T>,
    data: &TrainingData,
    splits: &Splits,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if model.mode() != cfg.mode {
        return Err(Error::Config(format!(
            "model is {} but the run is configured for {}",
            model.mode(),
            cfg.mode
        )));
    }
    if splits.train.len() < 2 || splits.test.is_empty() {
        return Err(Error::Domain("training needs at least two training samples and one test sample".into()));
    }
    if cfg.batch_size > splits.train.len() {
        return Err(Error::Config(format!(
            "batch size {} exceeds the {} training samples",
            cfg.batch_size,
            splits.train.len()
        )));
    }
    if let Some(mags) = &data.mags {
        if cfg.mode.uses_mag() {
            model.mag_norm = MagNormalizer::fit(mags, data.window, &splits.train);
        }
    }

    let mut opt = Adam::new(cfg.lr, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut history = Vec::new();
    let mut best_state = None;
    let mut stopped_early = false;
    let start = Instant::now();
    let beta = T::lit(SMOOTH_L1_BETA);

    for epoch in 1..=cfg.max_epochs {
        let mut order = splits.train.clone();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut seen = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            if idx.len() < 2 {
                continue;
            }
            let (input, y) = data.batch::<T>(idx, cfg.mode, &model.mag_norm)?;
            model.zero_grad();
            let pred = model.forward(&input, Phase::Train)?;
            let (loss, grad) = smooth_l1(&pred, &y, beta)?;
            let loss = loss.to_f64_lossy();
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            model.backward(&grad)?;
            opt.step(model.params_mut());
            total += loss * idx.len() as f64;
            seen += idx.len();
        }
        model.steps = opt.steps_taken();
        let test_loss = split_loss(&mut model, data, &splits.test)?;
        if !test_loss.is_finite() {
            return Err(Error::Diverged { epoch, loss: test_loss });
        }
        history.push(EpochRecord {
            epoch,
            train_loss: total / seen.max(1) as f64,
            test_loss,
            lr: cfg.lr,
            wall_s: start.elapsed().as_secs_f64(),
        });
        on_epoch(history.last().expect("just pushed"));
        match stopper.observe(epoch, test_loss) {
            StopDecision::Improved => best_state = Some((model.state(), model.steps)),
            StopDecision::NoImprovement => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    if let Some((state, steps)) = best_state {
        model.load_state(&state)?;
        model.steps = steps;
    }
    Ok(TrainOutcome {
        model,
        history,
        best_epoch: stopper.best().map(|(e, _)| e),
        stopped_early,
    })
}

fn split_loss<T: Real>(model: &mut ForceModel<T>, data: &TrainingData, idx: &[usize]) -> Result<f64> {
    let pred = predict(model, data, idx)?;
    let n = idx.len() as f64;
    Ok(pred
        .iter()
        .zip(idx)
        .map(|(p, &i)| {
            let d = (p - data.labels[i] as f64).abs();
            if d < SMOOTH_L1_BETA {
                0.5 * d * d / SMOOTH_L1_BETA
            } else {
                d - 0.5 * SMOOTH_L1_BETA
            }
        })
        .sum::<f64>()
        / n)
}

/// Eval-mode predictions for rows `idx`, evaluated in parallel shards.
pub fn predict<T: Real>(model: &mut ForceModel<T>, data: &TrainingData, idx: &[usize]) -> Result<Vec<f64>> {
    let mode = model.mode();
    let shards: Vec<Vec<f64>> = idx
        .par_chunks(EVAL_BATCH)
        .map_init(
            || model.clone(),
            |m, chunk| -> Result<Vec<f64>> {
                let (input, _) = data.batch::<T>(chunk, mode, &m.mag_norm)?;
                let out = m.forward(&input, Phase::Eval)?;
                Ok(out.data().iter().map(|v| v.to_f64_lossy()).collect())
            },
        )
        .collect::<Result<_>>()?;
    Ok(shards.concat())
}

pub fn evaluate<T: Real>(model: &mut ForceModel<T>, data: &TrainingData, idx: &[usize]) -> Result<Metrics> {
    let pred = predict(model, data, idx)?;
    let y: Vec<f64> = idx.iter().map(|&i| data.labels[i] as f64).collect();
    metrics(&pred, &y)
}

/// `epoch,train_loss,test_loss,lr,wall_s` rows.
pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut out = String::from("epoch,train_loss,test_loss,lr,wall_s\n");
    for r in history {
        out.push_str(&format!(
            "{},{:.8e},{:.8e},{:e},{:.3}\n",
            r.epoch, r.train_loss, r.test_loss, r.lr, r.wall_s
        ));
    }
    std::fs::write(path, out).map_err(Error::io(path))
}
