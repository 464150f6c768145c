//! Simulation, rendering and dataset configuration.
//!
//! Loaded from TOML; unknown keys are rejected. Every field has a default so
//! a config file only needs the keys it overrides. Sections:
//!
//! ```toml
//! [elastomer]   # geometry (mm) and the displacement kernel
//! [magnetics]   # particle moment (A m^2), Hall ring geometry (mm), noise (T)
//! [render]      # synthetic camera image
//! [dataset]     # press grid, timing, seed
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::magnetics::MU0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ElastomerConfig {
    pub extent_mm: f64,
    pub thickness_mm: f64,
    /// Markers per side of the square grid.
    pub grid: usize,
    pub spacing_mm: f64,
    pub marker_depth_mm: f64,
    /// Vertical marker travel per newton under the indenter.
    pub compliance_mm_per_n: f64,
    pub kernel_width_mm: f64,
    pub lateral_coupling: f64,
}

impl Default for ElastomerConfig {
    fn default() -> Self {
        Self {
            extent_mm: 25.0,
            thickness_mm: 11.0,
            grid: 3,
            spacing_mm: 5.0,
            marker_depth_mm: 1.0,
            compliance_mm_per_n: 3.0,
            kernel_width_mm: 4.0,
            lateral_coupling: 0.3,
        }
    }
}

impl ElastomerConfig {
    pub fn validate(&self) -> Result<()> {
        let span = self.spacing_mm * (self.grid.max(1) - 1) as f64;
        if self.grid == 0 || span >= self.extent_mm {
            return Err(Error::Config(format!(
                "marker grid span {span} mm must be smaller than extent {} mm",
                self.extent_mm
            )));
        }
        if !(self.marker_depth_mm > 0.0 && self.marker_depth_mm < self.thickness_mm) {
            return Err(Error::Config("marker depth must lie inside the elastomer".into()));
        }
        if !(self.compliance_mm_per_n > 0.0 && self.kernel_width_mm > 0.0) {
            return Err(Error::Config("compliance and kernel width must be positive".into()));
        }
        Ok(())
    }

    pub fn max_travel_mm(&self) -> f64 {
        self.marker_depth_mm + 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MagneticsConfig {
    /// Dipole moment of one particle, pointing along +z.
    pub moment_am2: f64,
    pub sensor_count: usize,
    pub ring_radius_mm: f64,
    /// Distance of the Hall ring below the resting particle plane.
    pub ring_depth_mm: f64,
    /// Per-axis Gaussian noise standard deviation, tesla.
    pub noise_sigma_t: f64,
}

/// Moment of a uniformly magnetized sphere, `Br V / mu0`.
pub fn sphere_moment(remanence_t: f64, diameter_m: f64) -> f64 {
    let volume = std::f64::consts::PI / 6.0 * diameter_m.powi(3);
    remanence_t * volume / MU0
}

impl Default for MagneticsConfig {
    fn default() -> Self {
        Self {
            moment_am2: sphere_moment(1.2, 1e-3),
            sensor_count: 8,
            ring_radius_mm: 12.0,
            ring_depth_mm: 15.0,
            noise_sigma_t: 0.5e-6,
        }
    }
}

impl MagneticsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.moment_am2.is_finite() && self.moment_am2 > 0.0) {
            return Err(Error::Config("particle moment must be positive".into()));
        }
        if !(self.noise_sigma_t >= 0.0) {
            return Err(Error::Config("noise sigma must be non-negative".into()));
        }
        if self.ring_radius_mm <= 0.0 || self.ring_depth_mm <= 0.0 {
            return Err(Error::Config("Hall ring radius and depth must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub height: usize,
    pub width: usize,
    pub marker_radius_px: f64,
    pub background_level: f64,
    pub shading_gain: f64,
    /// Opacity of a resting marker disk.
    pub marker_darkness: f64,
    /// Added opacity per mm of vertical marker travel.
    pub depth_darkness_per_mm: f64,
    /// Relative radius growth per mm of vertical marker travel.
    pub depth_radius_per_mm: f64,
    /// Per-pixel Gaussian read noise of the camera, in intensity units.
    pub read_noise: f64,
    /// Bits per channel of captured frames.
    pub bit_depth: u32,
}

impl RenderConfig {
    pub fn desk() -> Self {
        Self {
            height: 64,
            width: 64,
            marker_radius_px: 2.0,
            ..Self::paper()
        }
    }

    pub fn paper() -> Self {
        Self {
            height: 224,
            width: 224,
            marker_radius_px: 7.0,
            background_level: 0.55,
            shading_gain: 0.25,
            marker_darkness: 0.6,
            depth_darkness_per_mm: 0.1,
            depth_radius_per_mm: 0.15,
            read_noise: 0.06,
            bit_depth: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height != self.width || !matches!(self.height, 64 | 224) {
            return Err(Error::Config(format!(
                "image must be square 64 or 224 px, got {}x{}",
                self.height, self.width
            )));
        }
        if !(0.0..=1.0).contains(&self.background_level) || self.marker_radius_px <= 0.0 {
            return Err(Error::Config("invalid render levels".into()));
        }
        if !(self.read_noise >= 0.0 && self.read_noise.is_finite()) || !(1..=16).contains(&self.bit_depth) {
            return Err(Error::Config("read noise must be >= 0 and bit depth within 1..=16".into()));
        }
        Ok(())
    }
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Press locations per side of the square grid.
    pub grid: usize,
    pub presses_per_location: usize,
    pub press_duration_s: f64,
    pub frame_rate_hz: f64,
    /// Magnetic frames per sample window.
    pub window: usize,
    pub peak_force_min_n: f64,
    pub peak_force_max_n: f64,
    pub indenter_radius_mm: f64,
    /// Distance from the press grid to the elastomer edge.
    pub margin_mm: f64,
    /// Store Hall readings relative to the rest baseline rather than raw.
    pub subtract_baseline: bool,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            grid: 10,
            presses_per_location: 1,
            press_duration_s: 2.0,
            frame_rate_hz: 30.0,
            window: 20,
            peak_force_min_n: 0.2,
            peak_force_max_n: 1.0,
            indenter_radius_mm: 2.0,
            margin_mm: 2.5,
            subtract_baseline: true,
            seed: 42,
        }
    }
}

impl DatasetConfig {
    pub fn frames_per_press(&self) -> usize {
        (self.press_duration_s * self.frame_rate_hz).round() as usize
    }

    /// Samples contributed by one press: every frame with index >= window.
    pub fn samples_per_press(&self) -> usize {
        self.frames_per_press().saturating_sub(self.window)
    }

    pub fn num_locations(&self) -> usize {
        self.grid * self.grid
    }

    pub fn expected_samples(&self) -> usize {
        self.num_locations() * self.presses_per_location * self.samples_per_press()
    }

    pub fn validate(&self, elastomer: &ElastomerConfig) -> Result<()> {
        if self.grid < 2 {
            return Err(Error::Config("press grid needs at least 2 points per side".into()));
        }
        if self.margin_mm < self.indenter_radius_mm {
            return Err(Error::Config(format!(
                "grid margin {} mm is smaller than the indenter radius {} mm",
                self.margin_mm, self.indenter_radius_mm
            )));
        }
        if 2.0 * self.margin_mm >= elastomer.extent_mm {
            return Err(Error::Config("grid margin leaves no surface".into()));
        }
        if self.window == 0 || self.samples_per_press() == 0 {
            return Err(Error::Config(format!(
                "press of {} frames is too short for a {}-frame window",
                self.frames_per_press(),
                self.window
            )));
        }
        if !(0.0 < self.peak_force_min_n
            && self.peak_force_min_n <= self.peak_force_max_n
            && self.peak_force_max_n <= 1.0)
        {
            return Err(Error::Config("peak forces must satisfy 0 < min <= max <= 1 N".into()));
        }
        if self.presses_per_location == 0 || self.frame_rate_hz <= 0.0 {
            return Err(Error::Config("need at least one press and a positive frame rate".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub elastomer: ElastomerConfig,
    pub magnetics: MagneticsConfig,
    pub render: RenderConfig,
    pub dataset: DatasetConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Paper,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (expected `desk` or `paper`)"
            ))),
        }
    }
}

impl SimConfig {
    /// 64 px images, 10x10 press grid: 4,000 samples.
    pub fn desk() -> Self {
        Self {
            elastomer: ElastomerConfig::default(),
            magnetics: MagneticsConfig::default(),
            render: RenderConfig::desk(),
            dataset: DatasetConfig::default(),
        }
    }

    /// 224 px images, 20x20 press grid: 16,000 samples. Slow on CPU.
    pub fn paper() -> Self {
        Self {
            render: RenderConfig::paper(),
            dataset: DatasetConfig {
                grid: 20,
                ..DatasetConfig::default()
            },
            ..Self::desk()
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Desk => Self::desk(),
            Preset::Paper => Self::paper(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.elastomer.validate()?;
        self.magnetics.validate()?;
        self.render.validate()?;
        self.dataset.validate(&self.elastomer)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML file layered over `base`: keys present in the file win.
    pub fn load_over(base: &SimConfig, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        let overlay: toml::Table = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        let mut merged = toml::Table::try_from(base).map_err(|e| Error::Config(e.to_string()))?;
        merge_tables(&mut merged, overlay);
        let cfg: SimConfig = merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

fn merge_tables(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}
