use magtac_core::config::{ElastomerConfig, MagneticsConfig};
use magtac_core::elastomer::rest_markers;
use magtac_core::magnetics::*;
use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn defaults() -> (MagneticsConfig, ElastomerConfig) {
    (MagneticsConfig::default(), ElastomerConfig::default())
}

/// Straight transcription of the point-dipole formula, component by component.
fn oracle_field(p: [f64; 3], src: [f64; 3], m: [f64; 3]) -> [f64; 3] {
    let r = [p[0] - src[0], p[1] - src[1], p[2] - src[2]];
    let d = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
    let mr = (m[0] * r[0] + m[1] * r[1] + m[2] * r[2]) / d;
    let k = 1e-7 / d.powi(3);
    [0, 1, 2].map(|i| k * (3.0 * mr * r[i] / d - m[i]))
}

fn rel_close(a: &[f64], b: &[f64], rel: f64) -> bool {
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= rel * scale)
}

#[test]
fn centred_particle_reads_identically_in_every_sensor_frame() {
    let (mag, el) = defaults();
    let sensors = hall_ring(&mag, &el);
    let p = marker_dipoles(&mag, &[Vector3::new(0.0, 0.0, -1.0)]);
    let frame = read_hall_array_clean(&p, &sensors).unwrap();
    let s0 = frame.sensor(0);
    assert!(s0.x.abs() > 1e-9, "radial component should be visible");
    for s in 1..SENSOR_COUNT {
        let v = frame.sensor(s);
        assert!(rel_close(s0.as_slice(), v.as_slice(), 1e-12), "sensor {s}: {v:?} vs {s0:?}");
    }
}

#[test]
fn neighbouring_sensor_fields_are_related_by_the_ring_rotation() {
    let (mag, el) = defaults();
    let sensors = hall_ring(&mag, &el);
    let p = marker_dipoles(&mag, &[Vector3::new(0.0, 0.0, -1.0)]);
    let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_4);
    for s in 0..SENSOR_COUNT {
        let next = (s + 1) % SENSOR_COUNT;
        let b0 = total_field(&sensors[s].position, &p).unwrap();
        let b1 = total_field(&sensors[next].position, &p).unwrap();
        let rotated = rot * b0;
        assert!(rel_close(rotated.as_slice(), b1.as_slice(), 1e-12));
        assert!((rot * sensors[s].position - sensors[next].position).norm() < 1e-15);
    }
}

#[test]
fn falloff_slope_is_minus_three() {
    let src = Dipole {
        position: Vector3::new(0.001, -0.002, 0.0005),
        moment: Vector3::new(1e-4, -2e-4, 5e-4),
    };
    let dir = Vector3::new(0.3, -0.5, 0.8).normalize();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for k in 0..25 {
        let d = 5e-3 * 10f64.powf(k as f64 / 24.0);
        let b = dipole_field(&(src.position + dir * d), &src).unwrap();
        xs.push(d.ln());
        ys.push(b.norm().ln());
    }
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    assert!((slope + 3.0).abs() < 0.01, "slope {slope}");
}

#[test]
fn field_is_divergence_free() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    use rand::Rng;
    let h = 1e-5;
    let src = Dipole {
        position: Vector3::zeros(),
        moment: Vector3::new(2e-4, -1e-4, 5e-4),
    };
    let mut checked = 0;
    while checked < 200 {
        let p = Vector3::new(
            rng.random_range(-0.03..0.03),
            rng.random_range(-0.03..0.03),
            rng.random_range(-0.03..0.03),
        );
        if p.norm() < 3e-3 {
            continue;
        }
        let mut div = 0.0;
        for a in 0..3 {
            let mut e = Vector3::zeros();
            e[a] = h;
            let fp = dipole_field(&(p + e), &src).unwrap()[a];
            let fm = dipole_field(&(p - e), &src).unwrap()[a];
            div += (fp - fm) / (2.0 * h);
        }
        let b = dipole_field(&p, &src).unwrap().norm();
        assert!(div.abs() < 1e-6 * b / h, "div {div} at {p:?}, |B| {b}");
        checked += 1;
    }
}

#[test]
fn baseline_matches_brute_force_superposition() {
    let (mag, el) = defaults();
    let baseline = baseline_frame(&mag, &el).unwrap();
    let radius = mag.ring_radius_mm * 1e-3;
    let z = -(el.marker_depth_mm + mag.ring_depth_mm) * 1e-3;
    let mut expected = [0.0; FRAME_LEN];
    for s in 0..8 {
        let th = std::f64::consts::PI * s as f64 / 4.0;
        let pos = [radius * th.cos(), radius * th.sin(), z];
        let mut b = [0.0; 3];
        for m in rest_markers(&el) {
            let f = oracle_field(pos, [m.x * 1e-3, m.y * 1e-3, m.z * 1e-3], [0.0, 0.0, mag.moment_am2]);
            (0..3).for_each(|i| b[i] += f[i]);
        }
        // world to sensor: x radial, y tangential, z up
        expected[3 * s] = b[0] * th.cos() + b[1] * th.sin();
        expected[3 * s + 1] = -b[0] * th.sin() + b[1] * th.cos();
        expected[3 * s + 2] = b[2];
    }
    assert!(rel_close(&baseline.0, &expected, 1e-12));
}

#[test]
fn baseline_fixture_reproduces_bit_exactly() {
    let (mag, el) = defaults();
    let baseline = baseline_frame(&mag, &el).unwrap();
    let fixture = include_bytes!("fixtures/baseline_frame.bin");
    assert_eq!(MagneticFrame::from_le_bytes(fixture).unwrap(), baseline);
    assert_eq!(baseline_frame(&mag, &el).unwrap(), baseline);
    assert_eq!(baseline.sub(&baseline), MagneticFrame::zeros());
}

#[test]
#[ignore = "regenerates the baseline fixture"]
fn write_baseline_fixture() {
    let (mag, el) = defaults();
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/baseline_frame.bin");
    std::fs::write(path, baseline_frame(&mag, &el).unwrap().to_le_bytes()).unwrap();
}

#[test]
fn zero_moment_particle_leaves_reading_unchanged() {
    let (mag, el) = defaults();
    let sensors = hall_ring(&mag, &el);
    let mut particles = marker_dipoles(&mag, &rest_markers(&el));
    let before = read_hall_array_clean(&particles, &sensors).unwrap();
    particles.push(Dipole {
        position: Vector3::new(0.004, -0.002, -0.003),
        moment: Vector3::zeros(),
    });
    assert_eq!(read_hall_array_clean(&particles, &sensors).unwrap(), before);
}

#[test]
fn noise_is_seeded_and_has_configured_spread() {
    let (mag, el) = defaults();
    let sensors = hall_ring(&mag, &el);
    let particles = marker_dipoles(&mag, &rest_markers(&el));
    let clean = read_hall_array_clean(&particles, &sensors).unwrap();
    let sigma = 0.5e-6;
    let read = |seed| {
        let mut rng = NoiseModel::new(sigma, seed).unwrap().rng();
        (0..200)
            .map(|_| read_hall_array(&particles, &sensors, sigma, &mut rng).unwrap())
            .collect::<Vec<_>>()
    };
    let a = read(5);
    assert_eq!(a, read(5));
    assert_ne!(a, read(6));
    let resid: Vec<f64> = a.iter().flat_map(|f| f.sub(&clean).0).collect();
    let n = resid.len() as f64;
    let mean = resid.iter().sum::<f64>() / n;
    let sd = (resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!(mean.abs() < 0.1 * sigma, "mean {mean}");
    assert!((sd / sigma - 1.0).abs() < 0.05, "sd {sd}");
}

fn dipole_strategy() -> impl Strategy<Value = Dipole> {
    (
        prop::array::uniform3(-0.01f64..0.01),
        prop::array::uniform3(-1e-3f64..1e-3),
    )
        .prop_map(|(p, m)| Dipole {
            position: Vector3::new(p[0], p[1], p[2].abs() * 0.5 - 0.002),
            moment: Vector3::from(m),
        })
}

proptest! {
    #[test]
    fn superposition_is_additive(
        p in prop::collection::vec(dipole_strategy(), 1..6),
        q in prop::collection::vec(dipole_strategy(), 1..6),
    ) {
        let (mag, el) = defaults();
        let sensors = hall_ring(&mag, &el);
        let both: Vec<Dipole> = p.iter().chain(&q).copied().collect();
        let sum = read_hall_array_clean(&p, &sensors).unwrap()
            .add(&read_hall_array_clean(&q, &sensors).unwrap());
        let joint = read_hall_array_clean(&both, &sensors).unwrap();
        prop_assert!(rel_close(&joint.0, &sum.0, 1e-12));
    }

    #[test]
    fn dipole_field_matches_formula_transcription(
        d in dipole_strategy(),
        obs in prop::array::uniform3(-0.05f64..0.05),
    ) {
        let o = Vector3::from(obs);
        prop_assume!((o - d.position).norm() > 1e-4);
        let got = dipole_field(&o, &d).unwrap();
        let want = oracle_field(obs, d.position.into(), d.moment.into());
        prop_assert!(rel_close(got.as_slice(), &want, 1e-12));
    }
}
