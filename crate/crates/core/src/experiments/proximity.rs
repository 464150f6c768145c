use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::Serialize;

use crate::config::{ElastomerConfig, MagneticsConfig};
use crate::elastomer::rest_markers;
use crate::error::{Error, Result};
use crate::experiments::svg::LinePlot;
use crate::magnetics::{baseline_frame, hall_ring, marker_dipoles, read_hall_array_clean, Dipole};

/// Named object moments (A m^2). Placeholder magnitudes, not measurements.
pub const OBJECT_PRESETS: [(&str, f64); 4] = [("watch", 0.02), ("headset", 0.05), ("phone", 0.1), ("mouse", 0.03)];

pub fn object_preset(name: &str) -> Option<f64> {
    OBJECT_PRESETS.iter().find(|(n, _)| *n == name).map(|(_, m)| *m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProximityConfig {
    /// Starting height above the sensing surface, metres.
    pub start_m: f64,
    /// Height treated as first contact; the trace ends here and is
    /// normalized by the signal at this point.
    pub contact_m: f64,
    pub steps: usize,
}

impl Default for ProximityConfig {
    fn default() -> Self {
        Self {
            start_m: 0.20,
            contact_m: 0.005,
            steps: 196,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProximityTrace {
    pub object: String,
    pub moment_am2: f64,
    /// Heights above the surface, strictly decreasing, metres.
    pub distances_m: Vec<f64>,
    /// `|frame - baseline|` over all 24 channels, tesla.
    pub raw_t: Vec<f64>,
    /// `raw / raw(contact)`, clipped to `[0, 1]`.
    pub normalized: Vec<f64>,
}

/// Noise-free approach of a dipole object straight down the sensor axis.
pub fn run_proximity(
    mag: &MagneticsConfig,
    elastomer: &ElastomerConfig,
    object: &str,
    moment_am2: f64,
    cfg: &ProximityConfig,
) -> Result<ProximityTrace> {
    if cfg.steps < 2 || !(cfg.start_m > cfg.contact_m && cfg.contact_m > 0.0) {
        return Err(Error::Config(format!(
            "approach needs at least 2 steps from above the contact height, got {cfg:?}"
        )));
    }
    let sensors = hall_ring(mag, elastomer);
    let baseline = baseline_frame(mag, elastomer)?;
    let markers = marker_dipoles(mag, &rest_markers(elastomer));
    let distances_m: Vec<f64> = (0..cfg.steps)
        .map(|i| {
            if i + 1 == cfg.steps {
                cfg.contact_m
            } else {
                cfg.start_m + (cfg.contact_m - cfg.start_m) * i as f64 / (cfg.steps - 1) as f64
            }
        })
        .collect();
    let raw_t = distances_m
        .iter()
        .map(|&d| {
            let mut particles = markers.clone();
            particles.push(Dipole {
                position: Vector3::new(0.0, 0.0, d),
                moment: Vector3::new(0.0, 0.0, moment_am2),
            });
            Ok(read_hall_array_clean(&particles, &sensors)?.sub(&baseline).norm())
        })
        .collect::<Result<Vec<f64>>>()?;
    let contact = *raw_t.last().expect("at least two steps");
    let normalized = raw_t
        .iter()
        .map(|&r| if contact > 0.0 { (r / contact).clamp(0.0, 1.0) } else { 0.0 })
        .collect();
    Ok(ProximityTrace {
        object: object.to_string(),
        moment_am2,
        distances_m,
        raw_t,
        normalized,
    })
}

/// Largest sampled distance whose normalized signal reaches `threshold`.
pub fn detect_proximity(trace: &ProximityTrace, threshold: f64) -> Option<f64> {
    trace
        .distances_m
        .iter()
        .zip(&trace.normalized)
        .filter(|(_, &n)| n >= threshold)
        .map(|(&d, _)| d)
        .reduce(f64::max)
}

pub fn proximity_csv(trace: &ProximityTrace) -> String {
    let mut out = String::from("distance_m,raw_t,normalized\n");
    for ((d, r), n) in trace.distances_m.iter().zip(&trace.raw_t).zip(&trace.normalized) {
        out.push_str(&format!("{d:.6},{r:.6e},{n:.6e}\n"));
    }
    out
}

/// One CSV per trace plus an overlay plot of the normalized signals.
pub fn write_proximity(traces: &[ProximityTrace], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let mut written = Vec::new();
    for t in traces {
        let p = dir.join(format!("proximity_{}.csv", t.object));
        std::fs::write(&p, proximity_csv(t)).map_err(Error::io(&p))?;
        written.push(p);
    }
    let plot = LinePlot {
        title: "Approach along the sensor axis".into(),
        x_label: "distance above surface (m)".into(),
        y_label: "normalized signal".into(),
        log_x: false,
        log_y: true,
        series: traces
            .iter()
            .map(|t| {
                (
                    format!("{} ({} A m^2)", t.object, t.moment_am2),
                    t.distances_m.iter().copied().zip(t.normalized.iter().copied()).collect(),
                )
            })
            .collect(),
    };
    let p = dir.join("proximity.svg");
    std::fs::write(&p, plot.render()).map_err(Error::io(&p))?;
    written.push(p);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(moment: f64) -> ProximityTrace {
        run_proximity(
            &MagneticsConfig::default(),
            &ElastomerConfig::default(),
            "probe",
            moment,
            &ProximityConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn endpoints() {
        let t = trace(0.1);
        assert_eq!(t.distances_m[0], 0.20);
        assert_eq!(*t.distances_m.last().unwrap(), 0.005);
        assert_eq!(*t.normalized.last().unwrap(), 1.0);
    }

    #[test]
    fn zero_moment_gives_flat_trace() {
        let t = trace(0.0);
        assert!(t.normalized.iter().all(|&n| n == 0.0));
        assert_eq!(detect_proximity(&t, 0.5), None);
    }

    #[test]
    fn presets_are_distinct() {
        let mut m: Vec<f64> = OBJECT_PRESETS.iter().map(|p| p.1).collect();
        m.sort_by(f64::total_cmp);
        m.dedup();
        assert_eq!(m.len(), 4);
        assert_eq!(object_preset("phone"), Some(0.1));
        assert_eq!(object_preset("toaster"), None);
    }

    #[test]
    fn bad_path_is_config_error() {
        let cfg = ProximityConfig {
            start_m: 0.001,
            ..ProximityConfig::default()
        };
        let r = run_proximity(&MagneticsConfig::default(), &ElastomerConfig::default(), "x", 0.1, &cfg);
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
