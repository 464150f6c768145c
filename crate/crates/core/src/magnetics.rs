//! Point-dipole model of the marker array and the eight-sensor Hall ring.
//!
//! World frame: origin at the centre of the elastomer surface, z up, lengths
//! in metres. Resting particles sit `marker_depth` below the surface; the
//! Hall ring sits `ring_depth` below the particle plane.

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{ElastomerConfig, MagneticsConfig};
use crate::error::{Error, Result};

/// Vacuum permeability, T m / A.
pub const MU0: f64 = 4.0e-7 * std::f64::consts::PI;

pub const SENSOR_COUNT: usize = 8;
pub const FRAME_LEN: usize = SENSOR_COUNT * 3;

/// Observation points closer than this to a source are rejected.
pub const SINGULARITY_RADIUS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dipole {
    pub position: Vector3<f64>,
    pub moment: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HallSensor {
    pub position: Vector3<f64>,
    /// Rows are the sensor x, y, z axes in world coordinates; multiplying a
    /// world field by this matrix yields sensor-frame components.
    pub axes: Matrix3<f64>,
}

/// One Hall-array snapshot, tesla, ordered `s0x, s0y, s0z, s1x, ...`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MagneticFrame(pub [f64; FRAME_LEN]);

impl MagneticFrame {
    pub fn zeros() -> Self {
        Self([0.0; FRAME_LEN])
    }

    pub fn sensor(&self, s: usize) -> Vector3<f64> {
        Vector3::new(self.0[3 * s], self.0[3 * s + 1], self.0[3 * s + 2])
    }

    pub fn sub(&self, other: &MagneticFrame) -> MagneticFrame {
        let mut out = [0.0; FRAME_LEN];
        for (o, (a, b)) in out.iter_mut().zip(self.0.iter().zip(&other.0)) {
            *o = a - b;
        }
        MagneticFrame(out)
    }

    pub fn add(&self, other: &MagneticFrame) -> MagneticFrame {
        let mut out = [0.0; FRAME_LEN];
        for (o, (a, b)) in out.iter_mut().zip(self.0.iter().zip(&other.0)) {
            *o = a + b;
        }
        MagneticFrame(out)
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Little-endian f64 values, sensor-major.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.0.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_le_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != FRAME_LEN * 8 {
            return Err(Error::Domain(format!(
                "magnetic frame needs {} bytes, got {}",
                FRAME_LEN * 8,
                bytes.len()
            )));
        }
        let mut out = [0.0; FRAME_LEN];
        for (o, chunk) in out.iter_mut().zip(bytes.chunks_exact(8)) {
            *o = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
        Ok(MagneticFrame(out))
    }
}

/// Seeded per-axis Gaussian readout noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("noise sigma must be >= 0, got {sigma}")));
        }
        Ok(Self { sigma, seed })
    }

    pub fn silent() -> Self {
        Self { sigma: 0.0, seed: 0 }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

/// `B = mu0/4pi * (3 (m . r_hat) r_hat - m) / |r|^3`.
pub fn dipole_field(observation: &Vector3<f64>, source: &Dipole) -> Result<Vector3<f64>> {
    let r = observation - source.position;
    let dist = r.norm();
    if dist <= SINGULARITY_RADIUS {
        return Err(Error::Singularity {
            tolerance: SINGULARITY_RADIUS,
        });
    }
    let r_hat = r / dist;
    let k = MU0 / (4.0 * std::f64::consts::PI) / dist.powi(3);
    Ok((3.0 * source.moment.dot(&r_hat) * r_hat - source.moment) * k)
}

/// Summed world-frame field of all particles at `point`.
pub fn total_field(point: &Vector3<f64>, particles: &[Dipole]) -> Result<Vector3<f64>> {
    particles
        .iter()
        .try_fold(Vector3::zeros(), |acc, p| Ok(acc + dipole_field(point, p)?))
}

/// Reads all eight sensors with additive Gaussian noise drawn from `rng`.
pub fn read_hall_array<R: Rng + ?Sized>(
    particles: &[Dipole],
    sensors: &[HallSensor],
    sigma: f64,
    rng: &mut R,
) -> Result<MagneticFrame> {
    if sensors.len() != SENSOR_COUNT {
        return Err(Error::Config(format!(
            "Hall array needs {SENSOR_COUNT} sensors, got {}",
            sensors.len()
        )));
    }
    let normal = if sigma > 0.0 {
        Some(Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    let mut out = [0.0; FRAME_LEN];
    for (s, sensor) in sensors.iter().enumerate() {
        let local = sensor.axes * total_field(&sensor.position, particles)?;
        for a in 0..3 {
            let noise = normal.as_ref().map_or(0.0, |n| n.sample(rng));
            out[3 * s + a] = local[a] + noise;
        }
    }
    Ok(MagneticFrame(out))
}

/// Noise-free readout.
pub fn read_hall_array_clean(particles: &[Dipole], sensors: &[HallSensor]) -> Result<MagneticFrame> {
    read_hall_array(particles, sensors, 0.0, &mut ChaCha8Rng::seed_from_u64(0))
}

/// Sensors evenly spaced on a ring below the particle plane; each sensor's
/// x axis points radially outward, z axis up.
pub fn hall_ring(mag: &MagneticsConfig, elastomer: &ElastomerConfig) -> Vec<HallSensor> {
    let radius = mag.ring_radius_mm * 1e-3;
    let z = -(elastomer.marker_depth_mm + mag.ring_depth_mm) * 1e-3;
    (0..mag.sensor_count)
        .map(|k| {
            let angle = 2.0 * std::f64::consts::PI * k as f64 / mag.sensor_count as f64;
            let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), angle);
            HallSensor {
                position: Vector3::new(radius * angle.cos(), radius * angle.sin(), z),
                axes: rot.matrix().transpose(),
            }
        })
        .collect()
}

/// Particles at the given marker positions (mm), moments along +z.
pub fn marker_dipoles(mag: &MagneticsConfig, positions_mm: &[Vector3<f64>]) -> Vec<Dipole> {
    positions_mm
        .iter()
        .map(|p| Dipole {
            position: p * 1e-3,
            moment: Vector3::new(0.0, 0.0, mag.moment_am2),
        })
        .collect()
}

/// Noise-free reading of the undeformed marker array.
pub fn baseline_frame(mag: &MagneticsConfig, elastomer: &ElastomerConfig) -> Result<MagneticFrame> {
    let rest = crate::elastomer::rest_markers(elastomer);
    read_hall_array_clean(&marker_dipoles(mag, &rest), &hall_ring(mag, elastomer))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs())
    }

    fn z_dipole(m: f64) -> Dipole {
        Dipole {
            position: Vector3::zeros(),
            moment: Vector3::new(0.0, 0.0, m),
        }
    }

    #[test]
    fn on_axis_closed_form() {
        let (m, d) = (5e-4, 0.02);
        let b = dipole_field(&Vector3::new(0.0, 0.0, d), &z_dipole(m)).unwrap();
        let want = MU0 * m / (2.0 * std::f64::consts::PI * d.powi(3));
        assert!(close(b.z, want, 1e-14));
        assert_eq!((b.x, b.y), (0.0, 0.0));
    }

    #[test]
    fn equatorial_closed_form() {
        let (m, d) = (5e-4, 0.013);
        let b = dipole_field(&Vector3::new(d, 0.0, 0.0), &z_dipole(m)).unwrap();
        let want = -MU0 * m / (4.0 * std::f64::consts::PI * d.powi(3));
        assert!(close(b.z, want, 1e-14));
        assert!(b.x.abs() < 1e-25);
    }

    #[test]
    fn field_is_linear_in_moment() {
        let src = Dipole {
            position: Vector3::new(0.001, -0.002, 0.0005),
            moment: Vector3::new(1e-4, -2e-4, 3e-4),
        };
        let doubled = Dipole {
            moment: src.moment * 2.0,
            ..src
        };
        let p = Vector3::new(0.01, 0.004, -0.012);
        let a = dipole_field(&p, &src).unwrap();
        let b = dipole_field(&p, &doubled).unwrap();
        for i in 0..3 {
            assert!(close(b[i], 2.0 * a[i], 1e-15));
        }
    }

    #[test]
    fn coincident_point_is_singular() {
        let src = z_dipole(1.0);
        let err = dipole_field(&Vector3::new(5e-7, 0.0, 0.0), &src).unwrap_err();
        assert!(matches!(err, Error::Singularity { .. }));
    }

    #[test]
    fn wrong_sensor_count_is_config_error() {
        let cfg = MagneticsConfig::default();
        let ring = hall_ring(&cfg, &ElastomerConfig::default());
        let err = read_hall_array_clean(&[z_dipole(1e-4)], &ring[..7]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn empty_array_reads_zero() {
        let ring = hall_ring(&MagneticsConfig::default(), &ElastomerConfig::default());
        assert_eq!(read_hall_array_clean(&[], &ring).unwrap(), MagneticFrame::zeros());
    }

    #[test]
    fn sensor_axes_are_orthonormal() {
        for s in hall_ring(&MagneticsConfig::default(), &ElastomerConfig::default()) {
            let err = (s.axes * s.axes.transpose() - Matrix3::identity()).abs().max();
            assert!(err < 1e-12);
        }
    }

    #[test]
    fn frame_bytes_round_trip() {
        let mut f = MagneticFrame::zeros();
        for (i, v) in f.0.iter_mut().enumerate() {
            *v = (i as f64 - 11.5) * 1.25e-6;
        }
        let bytes = f.to_le_bytes();
        assert_eq!(bytes.len(), 192);
        assert_eq!(MagneticFrame::from_le_bytes(&bytes).unwrap(), f);
        assert!(MagneticFrame::from_le_bytes(&bytes[1..]).is_err());
    }

    #[test]
    fn noise_model_rejects_negative_sigma() {
        assert!(NoiseModel::new(-1.0, 0).is_err());
        assert!(NoiseModel::new(0.0, 0).is_ok());
    }
}
