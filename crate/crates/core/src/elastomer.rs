//! Quasi-static indentation model: a Gaussian displacement kernel moves each
//! marker down and slightly toward the indenter.
//!
//! Surface coordinates are millimetres with the origin at the surface centre;
//! resting markers sit at `z = -marker_depth`.

use nalgebra::{Vector2, Vector3};

use crate::config::ElastomerConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Indentation {
    pub center: Vector2<f64>,
    /// Normal force, newtons.
    pub force: f64,
    pub indenter_radius: f64,
}

impl Indentation {
    pub fn new(x_mm: f64, y_mm: f64, force: f64, indenter_radius: f64) -> Self {
        Self {
            center: Vector2::new(x_mm, y_mm),
            force,
            indenter_radius,
        }
    }

    pub fn validate(&self, cfg: &ElastomerConfig) -> Result<()> {
        if !(0.0..=1.0).contains(&self.force) {
            return Err(Error::Domain(format!("force {} N outside [0, 1]", self.force)));
        }
        let half = cfg.extent_mm / 2.0;
        if !(self.center.x.abs() <= half && self.center.y.abs() <= half) {
            return Err(Error::Domain(format!(
                "indentation at ({}, {}) mm is off the {} mm surface",
                self.center.x, self.center.y, cfg.extent_mm
            )));
        }
        Ok(())
    }
}

/// Resting marker positions, row-major from the (-x, -y) corner.
pub fn rest_markers(cfg: &ElastomerConfig) -> Vec<Vector3<f64>> {
    let half = cfg.spacing_mm * (cfg.grid as f64 - 1.0) / 2.0;
    let mut out = Vec::with_capacity(cfg.grid * cfg.grid);
    for row in 0..cfg.grid {
        for col in 0..cfg.grid {
            out.push(Vector3::new(
                col as f64 * cfg.spacing_mm - half,
                row as f64 * cfg.spacing_mm - half,
                -cfg.marker_depth_mm,
            ));
        }
    }
    out
}

/// Displacement of a material point resting at `rest_xy` under `ind`.
pub fn displacement_at(cfg: &ElastomerConfig, ind: &Indentation, rest_xy: Vector2<f64>) -> Vector3<f64> {
    if ind.force == 0.0 {
        return Vector3::zeros();
    }
    let to_center = ind.center - rest_xy;
    let r2 = to_center.norm_squared();
    let sigma = cfg.kernel_width_mm;
    let dz = (cfg.compliance_mm_per_n * ind.force * (-r2 / (2.0 * sigma * sigma)).exp())
        .min(cfg.max_travel_mm());
    let lateral = to_center * (cfg.lateral_coupling * dz / r2.sqrt().max(sigma));
    Vector3::new(lateral.x, lateral.y, -dz)
}

/// Displaced marker positions (mm) under an indentation.
pub fn deform(cfg: &ElastomerConfig, ind: &Indentation) -> Result<Vec<Vector3<f64>>> {
    cfg.validate()?;
    ind.validate(cfg)?;
    Ok(rest_markers(cfg)
        .into_iter()
        .map(|p| p + displacement_at(cfg, ind, p.xy()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ElastomerConfig {
        ElastomerConfig::default()
    }

    #[test]
    fn zero_force_means_zero_displacement() {
        for (x, y) in [(0.0, 0.0), (7.3, -2.1), (-12.5, 12.5)] {
            let moved = deform(&cfg(), &Indentation::new(x, y, 0.0, 2.0)).unwrap();
            assert_eq!(moved, rest_markers(&cfg()));
        }
    }

    #[test]
    fn center_marker_moves_most_under_central_press() {
        let rest = rest_markers(&cfg());
        let moved = deform(&cfg(), &Indentation::new(0.0, 0.0, 0.6, 2.0)).unwrap();
        let dz: Vec<f64> = moved.iter().zip(&rest).map(|(m, r)| (m.z - r.z).abs()).collect();
        let center = dz[4];
        for (i, d) in dz.iter().enumerate() {
            if i != 4 {
                assert!(center > *d);
            }
        }
    }

    #[test]
    fn travel_is_clamped() {
        let mut c = cfg();
        c.compliance_mm_per_n = 10.0;
        let moved = deform(&c, &Indentation::new(0.0, 0.0, 1.0, 2.0)).unwrap();
        assert!((moved[4].z - (-c.marker_depth_mm - c.max_travel_mm())).abs() < 1e-12);
    }

    #[test]
    fn off_surface_or_excess_force_is_domain_error() {
        assert!(matches!(
            deform(&cfg(), &Indentation::new(13.0, 0.0, 0.5, 2.0)),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            deform(&cfg(), &Indentation::new(0.0, 0.0, 1.5, 2.0)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn markers_move_toward_the_indenter() {
        let rest = rest_markers(&cfg());
        let moved = deform(&cfg(), &Indentation::new(2.0, 0.0, 0.8, 2.0)).unwrap();
        // left column markers shift in +x
        for i in [0, 3, 6] {
            assert!(moved[i].x > rest[i].x);
        }
    }
}
