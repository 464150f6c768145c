//! Press simulation, dataset assembly, persistence and splitting.
//!
//! On-disk layout of a dataset directory (all numbers little-endian):
//!
//! | file          | record per sample                                             |
//! |---------------|---------------------------------------------------------------|
//! | manifest.json | counts, seed, resolved config and its SHA-256, versions       |
//! | images.bin    | u32 H, u32 W, then R, G, B planes of f32                      |
//! | mag.bin       | `window x 24` f32, microtesla, baseline-subtracted by default |
//! | labels.bin    | f32 normal force, newtons                                     |
//! | meta.bin      | u32 location, u32 press, u32 frame                            |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::Vector2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::SimConfig;
use crate::elastomer::{deform, Indentation};
use crate::error::{Error, Result};
use crate::magnetics::{
    baseline_frame, hall_ring, marker_dipoles, read_hall_array, MagneticFrame, NoiseModel, FRAME_LEN,
};
use crate::render::{capture, render, TactileImage};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const IMAGES: &str = "images.bin";
pub const MAG: &str = "mag.bin";
pub const LABELS: &str = "labels.bin";
pub const META: &str = "meta.bin";

const TESLA_TO_MICRO: f64 = 1e6;
const PRESS_CHUNK: usize = 8;

/// One camera frame with the simultaneous Hall reading and force label.
#[derive(Debug, Clone, PartialEq)]
pub struct PressFrame {
    /// `None` for frames the caller chose not to render.
    pub image: Option<TactileImage>,
    /// Noisy reading, tesla, minus the rest baseline unless the dataset
    /// keeps raw fields.
    pub mag: MagneticFrame,
    pub force: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PressSequence {
    pub location: Vector2<f64>,
    pub peak_force: f64,
    pub frame_rate_hz: f64,
    pub frames: Vec<PressFrame>,
}

/// Triangular load-unload profile: 0 at the first and last frame, `peak`
/// at the middle.
pub fn ramp_force(frame: usize, frames: usize, peak: f64) -> f64 {
    if frames < 2 {
        return 0.0;
    }
    let phase = 2.0 * frame as f64 / (frames - 1) as f64 - 1.0;
    (peak * (1.0 - phase.abs())).clamp(0.0, peak)
}

/// Simulates one vertical press at `location` (mm). Images go through the
/// camera model, seeded from `noise.seed`.
pub fn generate_press(
    cfg: &SimConfig,
    location: Vector2<f64>,
    peak_force: f64,
    duration_s: f64,
    noise: NoiseModel,
) -> Result<PressSequence> {
    simulate_press(cfg, location, peak_force, duration_s, noise, 0)
}

fn simulate_press(
    cfg: &SimConfig,
    location: Vector2<f64>,
    peak_force: f64,
    duration_s: f64,
    noise: NoiseModel,
    render_from: usize,
) -> Result<PressSequence> {
    if !(peak_force > 0.0 && peak_force <= 1.0) {
        return Err(Error::Domain(format!("peak force {peak_force} N outside (0, 1]")));
    }
    let fps = cfg.dataset.frame_rate_hz;
    let frames = (duration_s * fps).round() as usize;
    let radius = cfg.dataset.indenter_radius_mm;
    Indentation::new(location.x, location.y, 0.0, radius).validate(&cfg.elastomer)?;

    let sensors = hall_ring(&cfg.magnetics, &cfg.elastomer);
    let baseline = if cfg.dataset.subtract_baseline {
        baseline_frame(&cfg.magnetics, &cfg.elastomer)?
    } else {
        MagneticFrame::zeros()
    };
    let mut rng = noise.rng();
    let mut out = Vec::with_capacity(frames);
    for k in 0..frames {
        let force = ramp_force(k, frames, peak_force);
        let ind = Indentation::new(location.x, location.y, force, radius);
        let markers = deform(&cfg.elastomer, &ind)?;
        let image = (k >= render_from).then(|| {
            let mut camera = ChaCha8Rng::seed_from_u64(derive_seed(noise.seed, 3, k as u64));
            capture(&cfg.render, &render(&cfg.render, &cfg.elastomer, &markers, &ind), &mut camera)
        });
        let reading = read_hall_array(
            &marker_dipoles(&cfg.magnetics, &markers),
            &sensors,
            noise.sigma,
            &mut rng,
        )?;
        out.push(PressFrame {
            image,
            mag: reading.sub(&baseline),
            force,
        });
    }
    Ok(PressSequence {
        location,
        peak_force,
        frame_rate_hz: fps,
        frames: out,
    })
}

/// Press locations (mm), row-major over the square grid.
pub fn press_grid(cfg: &SimConfig) -> Vec<Vector2<f64>> {
    let g = cfg.dataset.grid;
    let lo = -cfg.elastomer.extent_mm / 2.0 + cfg.dataset.margin_mm;
    let step = -2.0 * lo / (g - 1) as f64;
    (0..g)
        .flat_map(|row| (0..g).map(move |col| Vector2::new(lo + col as f64 * step, lo + row as f64 * step)))
        .collect()
}

/// Independent 64-bit stream for `(seed, stream, index)`.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    // splitmix64 finalizer over a combined key
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeds and peak force of one press in a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PressPlan {
    pub press: usize,
    pub location: usize,
    pub peak_force: f64,
    pub noise_seed: u64,
}

/// Every press of `cfg`, location-major.
pub fn plan_presses(cfg: &SimConfig) -> Vec<PressPlan> {
    let d = &cfg.dataset;
    (0..d.num_locations())
        .flat_map(|loc| (0..d.presses_per_location).map(move |k| (loc, loc * d.presses_per_location + k)))
        .map(|(location, press)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(d.seed, 1, press as u64));
            PressPlan {
                press,
                location,
                peak_force: rng.random_range(d.peak_force_min_n..=d.peak_force_max_n),
                noise_seed: derive_seed(d.seed, 2, press as u64),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileLayout {
    pub file: String,
    pub record_bytes: u64,
    pub layout: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub samples: usize,
    pub presses: usize,
    pub locations: usize,
    pub seed: u64,
    pub image_height: usize,
    pub image_width: usize,
    pub window: usize,
    pub mag_channels: usize,
    pub config_sha256: String,
    pub config: SimConfig,
    pub files: Vec<FileLayout>,
}

impl Manifest {
    fn record_bytes(&self, file: &str) -> Option<u64> {
        self.files.iter().find(|f| f.file == file).map(|f| f.record_bytes)
    }
}

pub fn config_hash(cfg: &SimConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

fn layouts(cfg: &SimConfig) -> Vec<FileLayout> {
    let (h, w) = (cfg.render.height, cfg.render.width);
    let win = cfg.dataset.window;
    vec![
        FileLayout {
            file: IMAGES.into(),
            record_bytes: TactileImage::raw_len(h, w) as u64,
            layout: "u32 height, u32 width, f32 planes R,G,B each height*width row-major".into(),
        },
        FileLayout {
            file: MAG.into(),
            record_bytes: (win * FRAME_LEN * 4) as u64,
            layout: format!(
                "f32 [{win}][{FRAME_LEN}] microtesla{}, oldest frame first, sensor-major x,y,z",
                if cfg.dataset.subtract_baseline { " minus rest baseline" } else { ", raw field" }
            ),
        },
        FileLayout {
            file: LABELS.into(),
            record_bytes: 4,
            layout: "f32 normal force in newtons".into(),
        },
        FileLayout {
            file: META.into(),
            record_bytes: 12,
            layout: "u32 location, u32 press, u32 frame index".into(),
        },
    ]
}

/// Number of samples a config yields, without simulating anything.
pub fn planned_sample_count(cfg: &SimConfig) -> usize {
    cfg.dataset.expected_samples()
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).map_err(Error::io(&path))?))
}

/// Simulates every press of `cfg` and writes the dataset into `dir`.
pub fn generate_dataset(cfg: &SimConfig, dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let d = &cfg.dataset;
    let locations = press_grid(cfg);
    let plans = plan_presses(cfg);
    let window = d.window;

    let mut images = create(dir, IMAGES)?;
    let mut mags = create(dir, MAG)?;
    let mut labels = create(dir, LABELS)?;
    let mut meta = create(dir, META)?;
    let mut samples = 0usize;

    for chunk in plans.chunks(PRESS_CHUNK) {
        let presses: Vec<PressSequence> = chunk
            .par_iter()
            .map(|p| {
                simulate_press(
                    cfg,
                    locations[p.location],
                    p.peak_force,
                    d.press_duration_s,
                    NoiseModel::new(cfg.magnetics.noise_sigma_t, p.noise_seed)?,
                    window,
                )
            })
            .collect::<Result<_>>()?;
        for (plan, press) in chunk.iter().zip(&presses) {
            for t in window..press.frames.len() {
                let frame = &press.frames[t];
                let io = |e| Error::Io {
                    path: dir.to_path_buf(),
                    source: e,
                };
                frame
                    .image
                    .as_ref()
                    .expect("sample frames are rendered")
                    .write_raw(&mut images)
                    .map_err(io)?;
                let mut buf = Vec::with_capacity(window * FRAME_LEN * 4);
                for f in &press.frames[t + 1 - window..=t] {
                    for v in f.mag.0 {
                        buf.extend_from_slice(&((v * TESLA_TO_MICRO) as f32).to_le_bytes());
                    }
                }
                mags.write_all(&buf).map_err(io)?;
                labels.write_all(&(frame.force as f32).to_le_bytes()).map_err(io)?;
                for v in [plan.location as u32, plan.press as u32, t as u32] {
                    meta.write_all(&v.to_le_bytes()).map_err(io)?;
                }
                samples += 1;
            }
        }
    }
    for (w, name) in [(images, IMAGES), (mags, MAG), (labels, LABELS), (meta, META)] {
        w.into_inner()
            .map_err(|e| e.into_error())
            .and_then(|f| f.sync_all())
            .map_err(Error::io(dir.join(name)))?;
    }

    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        samples,
        presses: plans.len(),
        locations: locations.len(),
        seed: d.seed,
        image_height: cfg.render.height,
        image_width: cfg.render.width,
        window,
        mag_channels: FRAME_LEN,
        config_sha256: config_hash(cfg),
        config: cfg.clone(),
        files: layouts(cfg),
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text + "\n").map_err(Error::io(&path))?;
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub location: u32,
    pub press: u32,
    pub frame: u32,
}

/// One training example: the labelled image, the magnetic frames leading up
/// to it (row `window - 1` is simultaneous with the image) and the force.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: TactileImage,
    /// `window x 24`, microtesla.
    pub mag_window: Vec<f32>,
    pub label: f32,
    pub meta: SampleMeta,
}

/// Read-only handle on a dataset directory. Labels and metadata are loaded
/// eagerly; images and magnetic windows are read on demand.
#[derive(Debug, Clone)]
pub struct Dataset {
    dir: PathBuf,
    manifest: Manifest,
    labels: Vec<f32>,
    meta: Vec<SampleMeta>,
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    std::fs::read(path).map_err(Error::io(path))
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST);
        if !mpath.exists() {
            return Err(Error::MissingInput(mpath));
        }
        let text = std::fs::read_to_string(&mpath).map_err(Error::io(&mpath))?;
        let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::CorruptManifest {
            path: mpath.clone(),
            reason: e.to_string(),
        })?;
        let version = raw.get("schema_version").and_then(|v| v.as_u64());
        match version {
            Some(v) if v == SCHEMA_VERSION as u64 => {}
            Some(v) => {
                return Err(Error::VersionMismatch {
                    found: v as u32,
                    expected: SCHEMA_VERSION,
                })
            }
            None => {
                return Err(Error::CorruptManifest {
                    path: mpath,
                    reason: "missing schema_version".into(),
                })
            }
        }
        let manifest: Manifest = serde_json::from_value(raw).map_err(|e| Error::CorruptManifest {
            path: mpath.clone(),
            reason: e.to_string(),
        })?;
        for file in [IMAGES, MAG, LABELS, META] {
            if manifest.record_bytes(file).is_none() {
                return Err(Error::CorruptManifest {
                    path: mpath.clone(),
                    reason: format!("no layout for {file}"),
                });
            }
        }

        let n = manifest.samples;
        let lpath = dir.join(LABELS);
        let bytes = read_all(&lpath)?;
        check_len(&lpath, bytes.len() as u64, n as u64 * 4)?;
        let labels = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let mpath_meta = dir.join(META);
        let bytes = read_all(&mpath_meta)?;
        check_len(&mpath_meta, bytes.len() as u64, n as u64 * 12)?;
        let meta = bytes
            .chunks_exact(12)
            .map(|c| {
                let u = |i: usize| u32::from_le_bytes(c[i..i + 4].try_into().expect("4 bytes"));
                SampleMeta {
                    location: u(0),
                    press: u(4),
                    frame: u(8),
                }
            })
            .collect();
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            labels,
            meta,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[f32] {
        &self.labels
    }

    pub fn meta(&self) -> &[SampleMeta] {
        &self.meta
    }

    pub fn locations(&self) -> Vec<u32> {
        self.meta.iter().map(|m| m.location).collect()
    }

    fn data_file(&self, name: &str) -> Result<(File, u64)> {
        let path = self.dir.join(name);
        if !path.exists() {
            return Err(Error::MissingInput(path));
        }
        let file = File::open(&path).map_err(Error::io(&path))?;
        let rec = self.manifest.record_bytes(name).expect("validated at open");
        let actual = file.metadata().map_err(Error::io(&path))?.len();
        check_len(&path, actual, rec * self.len() as u64)?;
        Ok((file, rec))
    }

    fn read_record(&self, name: &str, index: usize) -> Result<Vec<u8>> {
        use std::os::unix::fs::FileExt;
        if index >= self.len() {
            return Err(Error::Domain(format!("sample {index} out of range {}", self.len())));
        }
        let (file, rec) = self.data_file(name)?;
        let mut buf = vec![0u8; rec as usize];
        file.read_exact_at(&mut buf, rec * index as u64)
            .map_err(Error::io(self.dir.join(name)))?;
        Ok(buf)
    }

    pub fn image(&self, index: usize) -> Result<TactileImage> {
        TactileImage::from_raw(&self.read_record(IMAGES, index)?)
    }

    pub fn mag_window(&self, index: usize) -> Result<Vec<f32>> {
        Ok(decode_f32(&self.read_record(MAG, index)?))
    }

    pub fn sample(&self, index: usize) -> Result<Sample> {
        Ok(Sample {
            image: self.image(index)?,
            mag_window: self.mag_window(index)?,
            label: self.labels[index],
            meta: self.meta[index],
        })
    }

    /// Streams every image in order.
    pub fn for_each_image(&self, mut f: impl FnMut(usize, TactileImage) -> Result<()>) -> Result<()> {
        let (file, rec) = self.data_file(IMAGES)?;
        let mut reader = BufReader::new(file);
        let mut buf = vec![0u8; rec as usize];
        for i in 0..self.len() {
            reader
                .read_exact(&mut buf)
                .map_err(Error::io(self.dir.join(IMAGES)))?;
            f(i, TactileImage::from_raw(&buf)?)?;
        }
        Ok(())
    }

    /// All magnetic windows, `N x window x 24`, microtesla.
    pub fn all_mag_windows(&self) -> Result<Vec<f32>> {
        let (mut file, _) = self.data_file(MAG)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)
            .map_err(Error::io(self.dir.join(MAG)))?;
        Ok(decode_f32(&bytes))
    }

    /// `index,location,press,frame,force_n` rows.
    pub fn export_labels_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("index,location,press,frame,force_n\n");
        for (i, (m, l)) in self.meta.iter().zip(&self.labels).enumerate() {
            out.push_str(&format!("{i},{},{},{},{l}\n", m.location, m.press, m.frame));
        }
        std::fs::write(path, out).map_err(Error::io(path))
    }
}

fn check_len(path: &Path, actual: u64, expected: u64) -> Result<()> {
    if actual != expected {
        return Err(Error::LengthMismatch {
            file: path.to_path_buf(),
            expected,
            actual,
        });
    }
    Ok(())
}

fn decode_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    BySample,
    ByLocation,
}

/// 8:1:1 train/test/validation partition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train: f64,
    pub test: f64,
    pub validation: f64,
    pub seed: u64,
    pub mode: SplitMode,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.8,
            test: 0.1,
            validation: 0.1,
            seed: 42,
            mode: SplitMode::BySample,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Partitions sample indices; `locations[i]` is sample `i`'s press location.
/// Sizes are `floor(train N)`, `floor(test N)` and the remainder, counted in
/// samples or (by-location) in locations.
pub fn split(locations: &[u32], spec: &SplitSpec) -> Result<Splits> {
    if locations.is_empty() {
        return Err(Error::Domain("cannot split an empty dataset".into()));
    }
    if (spec.train + spec.test + spec.validation - 1.0).abs() > 1e-9
        || spec.train < 0.0
        || spec.test < 0.0
        || spec.validation < 0.0
    {
        return Err(Error::Config("split ratios must be non-negative and sum to 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let cut = |n: usize| {
        let a = (spec.train * n as f64).floor() as usize;
        let b = (spec.test * n as f64).floor() as usize;
        (a, a + b)
    };
    match spec.mode {
        SplitMode::BySample => {
            let mut idx: Vec<usize> = (0..locations.len()).collect();
            idx.shuffle(&mut rng);
            let (a, b) = cut(idx.len());
            Ok(Splits {
                train: idx[..a].to_vec(),
                test: idx[a..b].to_vec(),
                validation: idx[b..].to_vec(),
            })
        }
        SplitMode::ByLocation => {
            let mut ids: Vec<u32> = locations.to_vec();
            ids.sort_unstable();
            ids.dedup();
            ids.shuffle(&mut rng);
            let (a, b) = cut(ids.len());
            let group = |set: &[u32]| -> Vec<usize> {
                locations
                    .iter()
                    .enumerate()
                    .filter(|(_, l)| set.binary_search(l).is_ok())
                    .map(|(i, _)| i)
                    .collect()
            };
            let sorted = |s: &[u32]| {
                let mut v = s.to_vec();
                v.sort_unstable();
                v
            };
            Ok(Splits {
                train: group(&sorted(&ids[..a])),
                test: group(&sorted(&ids[a..b])),
                validation: group(&sorted(&ids[b..])),
            })
        }
    }
}
