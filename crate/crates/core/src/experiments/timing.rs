use std::path::{Path, PathBuf};
use std::time::Instant;

use magtac_nn::{Phase, Tensor};
use serde::Serialize;

use crate::dataset::{Dataset, IMAGES, MAG};
use crate::error::{Error, Result};
use crate::fusion::{ForceModel, MagNormalizer, Mode, ModelInput};
use crate::magnetics::FRAME_LEN;
use crate::render::{preprocess, TactileImage};

/// Reception times of the hardware links, in milliseconds. These are
/// configured constants; nothing here is measured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReceptionConstants {
    pub magnetic_ms: f64,
    pub image_ms: f64,
}

impl Default for ReceptionConstants {
    fn default() -> Self {
        Self {
            magnetic_ms: 18.842,
            image_ms: 21.411,
        }
    }
}

impl ReceptionConstants {
    /// Fusion waits for both links, so its entry is the larger constant.
    pub fn for_mode(&self, mode: Mode) -> f64 {
        match mode {
            Mode::MagOnly => self.magnetic_ms,
            Mode::ImageOnly => self.image_ms,
            Mode::Fusion => self.magnetic_ms.max(self.image_ms),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimingConfig {
    pub warmup: usize,
    pub reps: usize,
    /// Distinct dataset samples cycled through while timing.
    pub samples: usize,
    pub reception: ReceptionConstants,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            warmup: 10,
            reps: 100,
            samples: 16,
            reception: ReceptionConstants::default(),
        }
    }
}

impl TimingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps < 100 || self.warmup < 10 {
            return Err(Error::Config(format!(
                "timing needs at least 100 repetitions after 10 warm-up runs, got {} after {}",
                self.reps, self.warmup
            )));
        }
        if self.samples == 0 {
            return Err(Error::Config("timing needs at least one sample".into()));
        }
        Ok(())
    }
}

/// Distribution summary of wall times, milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencyStats {
    pub median_ms: f64,
    pub p10_ms: f64,
    pub p90_ms: f64,
    pub reps: usize,
}

impl LatencyStats {
    pub fn from_samples(ms: &[f64]) -> Self {
        let mut v = ms.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Self {
            median_ms: q(0.5),
            p10_ms: q(0.1),
            p90_ms: q(0.9),
            reps: v.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimingRow {
    pub mode: Mode,
    pub reception_ms: f64,
    pub preprocessing: LatencyStats,
    pub inference: LatencyStats,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingReport {
    pub rows: Vec<TimingRow>,
    pub warmup: usize,
    pub reps: usize,
    pub samples: usize,
}

impl TimingReport {
    pub fn row(&self, mode: Mode) -> Option<&TimingRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }
}

struct RawSample {
    image: Vec<u8>,
    mag: Vec<u8>,
}

fn prep_mag(raw: &[u8], window: usize, norm: &MagNormalizer) -> Result<Tensor<f32>> {
    let mut v: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    norm.apply(&mut v);
    Ok(Tensor::from_vec(&[1, window, FRAME_LEN], v)?)
}

fn prep_image(raw: &[u8]) -> Result<Tensor<f32>> {
    let img = TactileImage::from_raw(raw)?;
    let (h, w) = (img.height(), img.width());
    let t = preprocess(&img);
    Ok(Tensor::from_vec(&[1, 3, h, w], t.data().iter().map(|&v| v as f32).collect())?)
}

fn prepare(model: &ForceModel<f32>, s: &RawSample) -> Result<ModelInput<f32>> {
    let mode = model.mode();
    let mags = mode
        .uses_mag()
        .then(|| prep_mag(&s.mag, model.window(), &model.mag_norm))
        .transpose()?;
    let images = mode.uses_images().then(|| prep_image(&s.image)).transpose()?;
    Ok(ModelInput { images, mags })
}

fn read_records(ds: &Dataset, name: &str, count: usize) -> Result<Vec<Vec<u8>>> {
    use std::io::Read;
    let path = ds.dir().join(name);
    if !path.exists() {
        return Err(Error::MissingInput(path));
    }
    let rec = ds
        .manifest()
        .files
        .iter()
        .find(|f| f.file == name)
        .map(|f| f.record_bytes as usize)
        .ok_or_else(|| Error::Domain(format!("manifest lists no {name}")))?;
    let mut file = std::fs::File::open(&path).map_err(Error::io(&path))?;
    (0..count)
        .map(|_| {
            let mut buf = vec![0u8; rec];
            file.read_exact(&mut buf).map_err(Error::io(&path))?;
            Ok(buf)
        })
        .collect()
}

/// Times preprocessing (decode plus normalization of already-received bytes)
/// and single-sample inference for each model on the calling thread.
/// Reception columns come from `cfg.reception`.
pub fn run_timing(models: &mut [ForceModel<f32>], ds: &Dataset, cfg: &TimingConfig) -> Result<TimingReport> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::Domain("timing needs a nonempty dataset".into()));
    }
    let count = cfg.samples.min(ds.len());
    let images = read_records(ds, IMAGES, count)?;
    let mags = read_records(ds, MAG, count)?;
    let raw: Vec<RawSample> = images
        .into_iter()
        .zip(mags)
        .map(|(image, mag)| RawSample { image, mag })
        .collect();

    let mut rows = Vec::new();
    for model in models.iter_mut() {
        let total = cfg.warmup + cfg.reps;
        let mut pre = Vec::with_capacity(cfg.reps);
        let mut inf = Vec::with_capacity(cfg.reps);
        for k in 0..total {
            let s = &raw[k % raw.len()];
            let t0 = Instant::now();
            let input = prepare(model, s)?;
            let t1 = Instant::now();
            let y = model.forward(&input, Phase::Eval)?;
            let t2 = Instant::now();
            std::hint::black_box(&y);
            if k >= cfg.warmup {
                pre.push((t1 - t0).as_secs_f64() * 1e3);
                inf.push((t2 - t1).as_secs_f64() * 1e3);
            }
        }
        rows.push(TimingRow {
            mode: model.mode(),
            reception_ms: cfg.reception.for_mode(model.mode()),
            preprocessing: LatencyStats::from_samples(&pre),
            inference: LatencyStats::from_samples(&inf),
        });
    }
    Ok(TimingReport {
        rows,
        warmup: cfg.warmup,
        reps: cfg.reps,
        samples: count,
    })
}

/// Hardware reference rows: `(mode, reception, preprocessing, inference)`
/// in milliseconds; fusion reception was not reported.
pub const REFERENCE_TIMING: [(Mode, Option<f64>, f64, f64); 3] = [
    (Mode::MagOnly, Some(18.842), 0.690, 3.092),
    (Mode::ImageOnly, Some(21.411), 2.956, 3.002),
    (Mode::Fusion, None, 3.670, 4.028),
];

pub const TIMING_HEADER: &str =
    "mode,reception_ms,preprocessing_ms,inference_ms,preprocessing_p10_ms,preprocessing_p90_ms,inference_p10_ms,inference_p90_ms,reps,note";

pub fn timing_csv(report: &TimingReport) -> String {
    let mut out = format!("{TIMING_HEADER}\n");
    for r in &report.rows {
        let note = match r.mode {
            Mode::Fusion => "reception is the larger single-modality constant",
            _ => "reception is a configured constant",
        };
        out.push_str(&format!(
            "{},{:.3},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{},{note}\n",
            r.mode,
            r.reception_ms,
            r.preprocessing.median_ms,
            r.inference.median_ms,
            r.preprocessing.p10_ms,
            r.preprocessing.p90_ms,
            r.inference.p10_ms,
            r.inference.p90_ms,
            r.preprocessing.reps
        ));
    }
    out
}

pub fn write_timing(report: &TimingReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let path = dir.join("timing.csv");
    std::fs::write(&path, timing_csv(report)).map_err(Error::io(&path))?;
    let reference = dir.join("timing_reference.csv");
    let mut t = String::from("mode,reception_ms,preprocessing_ms,inference_ms\n");
    for (m, rec, pre, inf) in REFERENCE_TIMING {
        let rec = rec.map_or_else(String::new, |v| v.to_string());
        t.push_str(&format!("{m},{rec},{pre},{inf}\n"));
    }
    std::fs::write(&reference, t).map_err(Error::io(&reference))?;
    Ok(vec![path, reference])
}
