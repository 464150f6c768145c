//! End-to-end acceptance checks. Each test prints one PASS/FAIL line.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use magtac_core::config::{ElastomerConfig, MagneticsConfig, SimConfig};
use magtac_core::dataset::{generate_dataset, planned_sample_count, split, Dataset, SplitSpec};
use magtac_core::experiments::{
    detect_proximity, run_comparison, run_proximity, run_timing, timing_csv, ComparisonConfig, ProximityConfig,
    TimingConfig, OBJECT_PRESETS, TIMING_HEADER,
};
use magtac_core::fusion::{audit, metrics, EarlyStopping, ForceModel, Mode, StopDecision, TrainingData};
use magtac_core::magnetics::{dipole_field, hall_ring, read_hall_array_clean, Dipole};
use magtac_nn::{
    check_gradient, smooth_l1, BatchNorm2d, Conv2d, ConvSpec, GradReport, Gru, GruSpec, Initializer, Linear,
    Parameters, Phase, Relu, Tensor,
};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(criterion: u32, name: &str, ok: bool, detail: &str) {
    let line = format!(
        "criterion {criterion} {name}: {} ({detail})\n",
        if ok { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
    assert!(ok, "criterion {criterion} {name} failed: {detail}");
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn desk_dataset(dir: &Path) -> Dataset {
    generate_dataset(&SimConfig::desk(), dir).unwrap();
    Dataset::open(dir).unwrap()
}

fn layer_reports() -> Vec<GradReport> {
    let tol = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut init = Initializer::new(17);
    let mut out = Vec::new();

    let conv = Conv2d::<f64>::new("conv", ConvSpec::new(2, 3, 3, 2, 1), &mut init);
    let x = random(&[2, 2, 7, 7], &mut rng);
    let proj = random(&[2, 3, 4, 4], &mut rng);
    let mut c = conv.clone();
    c.forward(&x).unwrap();
    let dx = c.backward(&proj).unwrap();
    out.push(check_gradient(
        "conv dx",
        |p| dot(&conv.clone().forward(&Tensor::from_vec(x.shape(), p.to_vec()).unwrap()).unwrap(), &proj),
        x.data(),
        dx.data(),
        None,
        tol,
    ));
    for k in 0..2 {
        let base = conv.params()[k].value.clone();
        out.push(check_gradient(
            format!("conv {}", conv.params()[k].name),
            |p| {
                let mut l = conv.clone();
                l.params_mut()[k].value = Tensor::from_vec(base.shape(), p.to_vec()).unwrap();
                dot(&l.forward(&x).unwrap(), &proj)
            },
            base.data(),
            c.params()[k].grad.data(),
            None,
            tol,
        ));
    }

    let mut bn = BatchNorm2d::<f64>::new("bn", 3);
    bn.gamma.value = random(&[3], &mut rng);
    bn.beta.value = random(&[3], &mut rng);
    let x = random(&[3, 3, 4, 4], &mut rng);
    let proj = random(&[3, 3, 4, 4], &mut rng);
    let mut b = bn.clone();
    b.forward(&x, Phase::Train).unwrap();
    let dx = b.backward(&proj).unwrap();
    out.push(check_gradient(
        "batchnorm dx",
        |p| dot(&bn.clone().forward(&Tensor::from_vec(x.shape(), p.to_vec()).unwrap(), Phase::Train).unwrap(), &proj),
        x.data(),
        dx.data(),
        None,
        tol,
    ));
    for k in 0..2 {
        let base = bn.params()[k].value.clone();
        out.push(check_gradient(
            format!("batchnorm {}", bn.params()[k].name),
            |p| {
                let mut l = bn.clone();
                l.params_mut()[k].value = Tensor::from_vec(base.shape(), p.to_vec()).unwrap();
                dot(&l.forward(&x, Phase::Train).unwrap(), &proj)
            },
            base.data(),
            b.params()[k].grad.data(),
            None,
            tol,
        ));
    }

    let lin = Linear::<f64>::new("linear", 6, 4, &mut init);
    let x = random(&[3, 6], &mut rng);
    let proj = random(&[3, 4], &mut rng);
    let mut l = lin.clone();
    l.forward(&x).unwrap();
    let dx = l.backward(&proj).unwrap();
    out.push(check_gradient(
        "linear dx",
        |p| dot(&lin.infer(&Tensor::from_vec(x.shape(), p.to_vec()).unwrap()).unwrap(), &proj),
        x.data(),
        dx.data(),
        None,
        tol,
    ));
    for k in 0..2 {
        let base = lin.params()[k].value.clone();
        out.push(check_gradient(
            format!("linear {}", lin.params()[k].name),
            |p| {
                let mut m = lin.clone();
                m.params_mut()[k].value = Tensor::from_vec(base.shape(), p.to_vec()).unwrap();
                dot(&m.infer(&x).unwrap(), &proj)
            },
            base.data(),
            l.params()[k].grad.data(),
            None,
            tol,
        ));
    }

    let xs: Vec<f64> = (0..30)
        .map(|i| {
            let v: f64 = rng.random_range(0.01..1.5);
            if i % 2 == 0 {
                v
            } else {
                -v
            }
        })
        .collect();
    let xt = Tensor::from_vec(&[30], xs.clone()).unwrap();
    let proj = random(&[30], &mut rng);
    let mut relu = Relu::new();
    relu.forward(&xt);
    let dx = relu.backward(&proj).unwrap();
    out.push(check_gradient(
        "relu dx",
        |p| dot(&Relu::new().forward(&Tensor::from_vec(&[30], p.to_vec()).unwrap()), &proj),
        &xs,
        dx.data(),
        None,
        tol,
    ));

    let mut gru = Gru::<f64>::new("gru", GruSpec::new(3, 4, 2), &mut init);
    for p in gru.params_mut() {
        if p.name.contains(".b_") {
            p.value = random(p.value.shape(), &mut rng).map(|v| 0.3 * v);
        }
    }
    let x = random(&[4, 2, 3], &mut rng);
    let proj = random(&[2, 4], &mut rng);
    let mut g = gru.clone();
    g.forward(&x).unwrap();
    let dx = g.backward(&proj).unwrap();
    out.push(check_gradient(
        "gru dx",
        |p| dot(&gru.clone().forward(&Tensor::from_vec(x.shape(), p.to_vec()).unwrap()).unwrap(), &proj),
        x.data(),
        dx.data(),
        None,
        tol,
    ));
    for k in 0..gru.params().len() {
        let base = gru.params()[k].value.clone();
        out.push(check_gradient(
            format!("gru {}", gru.params()[k].name),
            |p| {
                let mut m = gru.clone();
                m.params_mut()[k].value = Tensor::from_vec(base.shape(), p.to_vec()).unwrap();
                dot(&m.forward(&x).unwrap(), &proj)
            },
            base.data(),
            g.params()[k].grad.data(),
            None,
            tol,
        ));
    }

    let target = random(&[10], &mut rng);
    let pred: Vec<f64> = target
        .data()
        .iter()
        .enumerate()
        .map(|(i, t)| t + if i % 2 == 0 { 0.3 } else { -1.6 } + 0.01 * i as f64)
        .collect();
    let (_, grad) = smooth_l1(&Tensor::from_vec(&[10], pred.clone()).unwrap(), &target, 1.0).unwrap();
    out.push(check_gradient(
        "smooth l1",
        |p| smooth_l1(&Tensor::from_vec(&[10], p.to_vec()).unwrap(), &target, 1.0).unwrap().0,
        &pred,
        grad.data(),
        None,
        tol,
    ));
    out
}

fn full_model_reports() -> Vec<GradReport> {
    let mut cfg = SimConfig::desk();
    cfg.dataset.grid = 2;
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(&cfg, dir.path()).unwrap();
    let ds = Dataset::open(dir.path()).unwrap();
    let data = TrainingData::load(&ds, Mode::Fusion).unwrap();
    let mut model = ForceModel::<f64>::new(Mode::Fusion, data.image_size, data.window, 9).unwrap();
    let all: Vec<usize> = (0..data.len()).collect();
    model.mag_norm = magtac_core::fusion::MagNormalizer::fit(data.mags.as_ref().unwrap(), data.window, &all);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for w in model.head.weight.value.data_mut() {
        *w = rng.random_range(-0.5..0.5);
    }
    let sample = data.len() / 2;
    let (input, y) = data.batch::<f64>(&[sample], Mode::Fusion, &model.mag_norm).unwrap();

    let loss_of = |m: &mut ForceModel<f64>| {
        let pred = m.forward(&input, Phase::Eval).unwrap();
        smooth_l1(&pred, &y, 1.0).unwrap().0
    };
    let mut analytic = model.clone();
    analytic.zero_grad();
    let pred = analytic.forward(&input, Phase::Eval).unwrap();
    let (_, d) = smooth_l1(&pred, &y, 1.0).unwrap();
    analytic.backward(&d).unwrap();

    let mut out = Vec::new();
    for k in 0..model.params().len() {
        let (name, base) = {
            let p = &model.params()[k];
            (p.name.clone(), p.value.clone())
        };
        let probe: Vec<usize> = (0..base.len().min(6))
            .map(|_| rng.random_range(0..base.len()))
            .collect();
        let mut work = model.clone();
        out.push(check_gradient(
            format!("model {name}"),
            |p| {
                work.params_mut()[k].value.data_mut().copy_from_slice(p);
                loss_of(&mut work)
            },
            base.data(),
            analytic.params()[k].grad.data(),
            Some(&probe),
            1e-4,
        ));
    }
    out
}

#[test]
fn criterion_1_gradient_integrity() {
    let t = Instant::now();
    let layers = layer_reports();
    let model = full_model_reports();
    let worst_layer = layers.iter().fold(0.0f64, |m, r| m.max(r.max_rel_error));
    let worst_model = model.iter().fold(0.0f64, |m, r| m.max(r.max_rel_error));
    let failed: Vec<String> = layers
        .iter()
        .chain(&model)
        .filter(|r| !r.passed())
        .map(|r| r.to_string())
        .collect();
    let elapsed = t.elapsed().as_secs_f64();
    verdict(
        1,
        "gradient integrity",
        failed.is_empty() && worst_layer < 1e-5 && worst_model < 1e-4 && elapsed < 120.0,
        &format!(
            "{} layer checks worst {worst_layer:.2e}, {} model tensors worst {worst_model:.2e}, {elapsed:.1}s {}",
            layers.len(),
            model.len(),
            failed.join("; ")
        ),
    );
}

#[test]
fn criterion_2_architecture_fidelity() {
    let t = Instant::now();
    let a = audit(Mode::Fusion, 224, 20).unwrap();
    let got: Vec<(String, Vec<usize>)> = a.layers.iter().map(|l| (l.name.clone(), l.output_shape.clone())).collect();
    let want: Vec<(String, Vec<usize>)> = [
        ("CBR1(3, 16, 7, 2, 3)", vec![1, 16, 112, 112]),
        ("CBR2(16, 32, 5, 2, 2)", vec![1, 32, 56, 56]),
        ("CBR3(32, 64, 3, 2, 1)", vec![1, 64, 28, 28]),
        ("Flatten", vec![1, 50176]),
        ("FC1(50176,512)", vec![1, 512]),
        ("FC2(512,32)", vec![1, 32]),
        ("GRU(in 24, hidden 32, layers 3)", vec![1, 32]),
        ("Fc(64,1)", vec![1, 1]),
    ]
    .into_iter()
    .map(|(n, s)| (n.to_string(), s))
    .collect();
    let ok = got == want && a.flatten_len == Some(50176) && a.feature_len == 64 && t.elapsed().as_secs() < 60;
    verdict(2, "architecture fidelity", ok, &format!("{} layers, {} parameters", a.layers.len(), a.total_params));
}

#[test]
fn criterion_3_ordering_reproduction() {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let ds = desk_dataset(dir.path());
    let splits = split(&ds.locations(), &SplitSpec::default()).unwrap();
    let data = TrainingData::load(&ds, Mode::Fusion).unwrap();
    let cfg = ComparisonConfig {
        lrs: vec![1e-4],
        seeds: vec![0, 1, 2],
        ..ComparisonConfig::default()
    };
    let report = run_comparison(&data, &splits, &cfg).unwrap();
    let v = *report.verdict(1e-4).unwrap();
    let fusion = report.median(Mode::Fusion, 1e-4).unwrap();
    let r2 = fusion.r2.unwrap_or(f64::NEG_INFINITY);
    let max_epochs = report.cells.iter().map(|c| c.history.len()).max().unwrap_or(0);
    let ok = v.strict && v.improvement_pct >= 2.0 && r2 > 0.95 && max_epochs <= 50;
    verdict(
        3,
        "ordering reproduction",
        ok,
        &format!(
            "{} samples; median RMSE mag {:.5} image {:.5} fusion {:.5}; gain {:.2}%; fusion R2 {r2:.4}; {:.0}s",
            ds.len(),
            v.mag_rmse,
            v.image_rmse,
            v.fusion_rmse,
            v.improvement_pct,
            t.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_4_metric_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut worst_ulps = 0.0f64;
    for _ in 0..500 {
        let n = rng.random_range(1..300);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(-0.2..1.2)).collect();
        let m = metrics(&p, &y).unwrap();
        let ulp = m.mse * f64::EPSILON;
        worst_ulps = worst_ulps.max((m.rmse * m.rmse - m.mse).abs() / ulp);
    }
    let y = [0.2, 0.5, 0.9, 0.4];
    let perfect = metrics(&y, &y).unwrap();
    let mean = y.iter().sum::<f64>() / 4.0;
    let mean_pred = metrics(&[mean; 4], &y).unwrap();
    let hand = metrics(&[0.1, 0.9], &[0.0, 1.0]).unwrap();
    let hand_ok = (hand.mse - 0.01).abs() < 1e-12
        && (hand.rmse - 0.1).abs() < 1e-12
        && (hand.r2.unwrap() - 0.96).abs() < 1e-12;
    let ok = worst_ulps <= 1.0 && perfect.r2 == Some(1.0) && mean_pred.r2.unwrap().abs() < 1e-12 && hand_ok;
    verdict(
        4,
        "metric identities",
        ok,
        &format!(
            "worst |rmse^2-mse| {worst_ulps:.2} ulp; mean predictor R2 {:.1e}; hand oracle ({:.4}, {:.4}, {:.4})",
            mean_pred.r2.unwrap(),
            hand.mse,
            hand.rmse,
            hand.r2.unwrap()
        ),
    );
}

#[test]
fn criterion_5_physics_properties() {
    let src = Dipole {
        position: Vector3::new(0.0005, 0.001, -0.0015),
        moment: Vector3::new(-1e-4, 3e-4, 6e-4),
    };
    let dir = Vector3::new(-0.4, 0.2, 0.9).normalize();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for k in 0..46 {
        let d = 5e-3 + 1e-3 * k as f64;
        let b = dipole_field(&(src.position + dir * d), &src).unwrap();
        xs.push(d.ln());
        ys.push(b.norm().ln());
    }
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();

    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let (mag, el) = (MagneticsConfig::default(), ElastomerConfig::default());
    let sensors = hall_ring(&mag, &el);
    let draw = |rng: &mut ChaCha8Rng| Dipole {
        position: Vector3::new(
            rng.random_range(-0.01..0.01),
            rng.random_range(-0.01..0.01),
            rng.random_range(-0.002..0.003),
        ),
        moment: Vector3::new(
            rng.random_range(-1e-3..1e-3),
            rng.random_range(-1e-3..1e-3),
            rng.random_range(-1e-3..1e-3),
        ),
    };
    let mut worst_super = 0.0f64;
    for _ in 0..200 {
        let a: Vec<Dipole> = (0..rng.random_range(1..5)).map(|_| draw(&mut rng)).collect();
        let b: Vec<Dipole> = (0..rng.random_range(1..5)).map(|_| draw(&mut rng)).collect();
        let both: Vec<Dipole> = a.iter().chain(&b).copied().collect();
        let sum = read_hall_array_clean(&a, &sensors)
            .unwrap()
            .add(&read_hall_array_clean(&b, &sensors).unwrap());
        let joint = read_hall_array_clean(&both, &sensors).unwrap();
        let scale = joint.0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        worst_super = worst_super.max(joint.sub(&sum).0.iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale);
    }

    let h = 1e-5;
    let mut worst_div = 0.0f64;
    let mut checked = 0;
    while checked < 200 {
        let p = Vector3::new(
            rng.random_range(-0.03..0.03),
            rng.random_range(-0.03..0.03),
            rng.random_range(-0.03..0.03),
        );
        if (p - src.position).norm() < 3e-3 {
            continue;
        }
        let mut div = 0.0;
        for a in 0..3 {
            let mut e = Vector3::zeros();
            e[a] = h;
            div += (dipole_field(&(p + e), &src).unwrap()[a] - dipole_field(&(p - e), &src).unwrap()[a]) / (2.0 * h);
        }
        let b = dipole_field(&p, &src).unwrap().norm();
        worst_div = worst_div.max(div.abs() / (1e-6 * b / h));
        checked += 1;
    }
    let ok = (slope + 3.0).abs() < 0.01 && worst_super <= 1e-12 && worst_div < 1.0;
    verdict(
        5,
        "physics properties",
        ok,
        &format!(
            "falloff slope {slope:.5}; superposition rel err {worst_super:.1e}; divergence at {:.1e} of bound",
            worst_div
        ),
    );
}

fn file_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn criterion_6_dataset_protocol() {
    let t = Instant::now();
    let desk_planned = planned_sample_count(&SimConfig::desk());
    let paper_planned = planned_sample_count(&SimConfig::paper());
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ds = desk_dataset(a.path());
    desk_dataset(b.path());
    let identical = file_bytes(a.path()) == file_bytes(b.path());
    let n = ds.len();
    let s = split(&ds.locations(), &SplitSpec::default()).unwrap();
    let sizes = (s.train.len(), s.test.len(), s.validation.len());
    let want = (n * 8 / 10, n / 10, n - n * 8 / 10 - n / 10);
    let mut all: Vec<usize> = s.train.iter().chain(&s.test).chain(&s.validation).copied().collect();
    all.sort_unstable();
    let partition = all == (0..n).collect::<Vec<_>>();
    let ok = desk_planned == 4000
        && paper_planned == 16000
        && n == 4000
        && sizes == want
        && partition
        && identical
        && t.elapsed().as_secs() < 300;
    verdict(
        6,
        "dataset protocol",
        ok,
        &format!(
            "desk {n} samples (planned {desk_planned}), paper planned {paper_planned}; split {sizes:?}; regeneration identical {identical}"
        ),
    );
}

#[test]
fn criterion_7_early_stopping() {
    use StopDecision::*;
    let cases: [(&[f64], usize, usize); 4] = [
        (&[1.0, 0.9, 0.95, 0.93, 0.91], 5, 2),
        (&[1.0, 0.8, 0.8, 0.8, 0.8], 5, 2),
        (&[0.5, 0.6, 0.4, 0.45, 0.41, 0.39, 0.5, 0.5, 0.5, 0.1], 9, 6),
        (&[0.9, 0.8, 0.7, 0.6], 4, 4),
    ];
    let mut ok = true;
    let mut details = Vec::new();
    for (losses, stop_at, best) in cases {
        let mut es = EarlyStopping::new(3);
        let mut stopped = losses.len();
        let mut stale = 0;
        for (i, &l) in losses.iter().enumerate() {
            match es.observe(i + 1, l) {
                Improved => stale = 0,
                NoImprovement => stale += 1,
                Stop => {
                    stale += 1;
                    stopped = i + 1;
                    break;
                }
            }
        }
        let b = es.best().map(|(e, _)| e);
        ok &= stopped == stop_at && b == Some(best) && (stopped == losses.len() || stale == 3);
        details.push(format!("stop {stopped} best {b:?}"));
    }
    verdict(7, "early stopping", ok, &details.join(", "));
}

/// Field norm of the object alone, summed over sensors in world axes.
fn oracle_raw(sensor_positions: &[Vector3<f64>], d: f64, m: f64) -> f64 {
    sensor_positions
        .iter()
        .map(|s| {
            let r = s - Vector3::new(0.0, 0.0, d);
            let n = r.norm();
            let mr = m * r.z / n;
            let k = 1e-7 / n.powi(3);
            let b = Vector3::new(3.0 * mr * r.x / n, 3.0 * mr * r.y / n, 3.0 * mr * r.z / n - m) * k;
            b.norm_squared()
        })
        .sum::<f64>()
        .sqrt()
}

#[test]
fn criterion_8_proximity() {
    let (mag, el) = (MagneticsConfig::default(), ElastomerConfig::default());
    let cfg = ProximityConfig::default();
    let positions: Vec<Vector3<f64>> = hall_ring(&mag, &el).iter().map(|s| s.position).collect();
    let mut ok = true;
    let mut details = Vec::new();
    for (name, m) in OBJECT_PRESETS {
        let t = run_proximity(&mag, &el, name, m, &cfg).unwrap();
        let monotone = t.normalized.windows(2).all(|w| w[1] > w[0]);
        let at_contact = *t.normalized.last().unwrap() == 1.0;
        let far = t.normalized[0];
        let contact = oracle_raw(&positions, cfg.contact_m, m);
        let oracle: Vec<f64> = t
            .distances_m
            .iter()
            .map(|&d| (oracle_raw(&positions, d, m) / contact).clamp(0.0, 1.0))
            .collect();
        let agrees = oracle
            .iter()
            .zip(&t.normalized)
            .all(|(o, n)| (o - n).abs() <= 1e-9 * o.max(1e-12));
        let mut scans_match = true;
        for k in 1..=40 {
            let threshold = k as f64 / 40.0;
            let brute = t
                .distances_m
                .iter()
                .zip(&oracle)
                .find(|(_, &o)| o >= threshold)
                .map(|(&d, _)| d);
            scans_match &= detect_proximity(&t, threshold) == brute;
        }
        ok &= monotone && at_contact && far < 0.01 && agrees && scans_match;
        details.push(format!("{name} {far:.2e} at 0.20 m"));
    }
    verdict(8, "proximity", ok, &details.join(", "));
}

fn structure(csv: &str) -> Vec<(String, String)> {
    csv.lines()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), format!("{}|{}|{}", f[1], f[8], f[9]))
        })
        .collect()
}

#[test]
fn criterion_9_timing_report() {
    let t = Instant::now();
    let mut cfg = SimConfig::desk();
    cfg.dataset.grid = 2;
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(&cfg, dir.path()).unwrap();
    let ds = Dataset::open(dir.path()).unwrap();
    let run = || {
        let mut models: Vec<ForceModel<f32>> = Mode::ALL
            .iter()
            .map(|&m| ForceModel::new(m, 64, 20, 0).unwrap())
            .collect();
        run_timing(&mut models, &ds, &TimingConfig::default()).unwrap()
    };
    let a = run();
    let b = run();
    let (ca, cb) = (timing_csv(&a), timing_csv(&b));
    let header_ok = ca.lines().next() == Some(TIMING_HEADER);
    let modes: Vec<Mode> = a.rows.iter().map(|r| r.mode).collect();
    let reception: Vec<f64> = a.rows.iter().map(|r| r.reception_ms).collect();
    let sane = a.rows.iter().all(|r| {
        [r.preprocessing, r.inference]
            .iter()
            .all(|s| s.median_ms > 0.0 && s.p10_ms <= s.median_ms && s.median_ms <= s.p90_ms && s.reps == 100)
    });
    let ok = header_ok
        && modes == Mode::ALL
        && reception == [18.842, 21.411, 21.411]
        && sane
        && structure(&ca) == structure(&cb)
        && t.elapsed().as_secs() < 120;
    let medians: Vec<String> = a
        .rows
        .iter()
        .map(|r| format!("{} {:.3}/{:.3} ms", r.mode, r.preprocessing.median_ms, r.inference.median_ms))
        .collect();
    verdict(9, "timing report", ok, &medians.join(", "));
}
