use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::Splits;
use crate::error::{Error, Result};
use crate::experiments::svg::LinePlot;
use crate::fusion::{evaluate, train, EpochRecord, ForceModel, Metrics, Mode, TrainConfig, TrainingData};

/// Hardware results the desk-scale comparison is reported against:
/// `(mode, lr, mse, rmse, r2)`.
pub const REFERENCE_TABLE: [(Mode, f64, f64, f64, f64); 9] = [
    (Mode::MagOnly, 1e-3, 0.0129, 0.1138, 0.8461),
    (Mode::MagOnly, 1e-4, 0.0196, 0.1399, 0.7705),
    (Mode::MagOnly, 1e-5, 0.0248, 0.1575, 0.7187),
    (Mode::ImageOnly, 1e-3, 0.0032, 0.0563, 0.9644),
    (Mode::ImageOnly, 1e-4, 0.0031, 0.0553, 0.9657),
    (Mode::ImageOnly, 1e-5, 0.0038, 0.0618, 0.9571),
    (Mode::Fusion, 1e-3, 0.0027, 0.0518, 0.9684),
    (Mode::Fusion, 1e-4, 0.0025, 0.0497, 0.9709),
    (Mode::Fusion, 1e-5, 0.0025, 0.0500, 0.9706),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonConfig {
    pub modes: Vec<Mode>,
    pub lrs: Vec<f64>,
    pub seeds: Vec<u64>,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub patience: usize,
    pub max_epochs: usize,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            modes: Mode::ALL.to_vec(),
            lrs: vec![1e-3, 1e-4, 1e-5],
            seeds: vec![0, 1, 2],
            batch_size: 64,
            weight_decay: 1e-4,
            patience: 3,
            max_epochs: 50,
        }
    }
}

impl ComparisonConfig {
    fn train_config(&self, mode: Mode, lr: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            mode,
            lr,
            batch_size: self.batch_size,
            weight_decay: self.weight_decay,
            patience: self.patience,
            max_epochs: self.max_epochs,
            seed,
        }
    }
}

/// One trained (mode, lr, seed) cell, scored on the validation split.
#[derive(Debug, Clone, Serialize)]
pub struct CellResult {
    pub mode: Mode,
    pub lr: f64,
    pub seed: u64,
    pub metrics: Metrics,
    pub best_epoch: Option<usize>,
    pub history: Vec<EpochRecord>,
}

/// Per-column medians over seeds for one (mode, lr).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MedianRow {
    pub mode: Mode,
    pub lr: f64,
    pub mse: f64,
    pub rmse: f64,
    pub r2: Option<f64>,
    pub seeds: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrderingVerdict {
    pub lr: f64,
    pub mag_rmse: f64,
    pub image_rmse: f64,
    pub fusion_rmse: f64,
    /// `fusion <= image-only <= mag-only`.
    pub holds: bool,
    /// `fusion < image-only < mag-only`.
    pub strict: bool,
    /// Relative RMSE reduction of fusion over image-only, percent.
    pub improvement_pct: f64,
}

impl fmt::Display for OrderingVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "lr={:e}: fusion {:.5} {} image-only {:.5} {} mag-only {:.5} ({:+.1}% vs image-only): {}",
            self.lr,
            self.fusion_rmse,
            if self.fusion_rmse < self.image_rmse { "<" } else { ">=" },
            self.image_rmse,
            if self.image_rmse < self.mag_rmse { "<" } else { ">=" },
            self.mag_rmse,
            self.improvement_pct,
            if self.strict { "ordering holds" } else { "ORDERING VIOLATED" }
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub cells: Vec<CellResult>,
    pub medians: Vec<MedianRow>,
    pub verdicts: Vec<OrderingVerdict>,
    pub seeds: Vec<u64>,
}

impl ComparisonReport {
    pub fn median(&self, mode: Mode, lr: f64) -> Option<&MedianRow> {
        self.medians.iter().find(|r| r.mode == mode && r.lr == lr)
    }

    pub fn verdict(&self, lr: f64) -> Option<&OrderingVerdict> {
        self.verdicts.iter().find(|v| v.lr == lr)
    }

    /// True when every learning rate that covers all three modes keeps the
    /// strict ordering.
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.strict)
    }
}

/// Median of finite values; `None` if there are none.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Trains every (mode, lr, seed) cell and summarizes validation metrics.
/// `data` must hold every modality the configured modes need.
pub fn run_comparison(data: &TrainingData, splits: &Splits, cfg: &ComparisonConfig) -> Result<ComparisonReport> {
    if cfg.modes.is_empty() || cfg.lrs.is_empty() || cfg.seeds.is_empty() {
        return Err(Error::Config("comparison needs at least one mode, learning rate and seed".into()));
    }
    let jobs: Vec<(Mode, f64, u64)> = cfg
        .modes
        .iter()
        .flat_map(|&m| cfg.lrs.iter().flat_map(move |&lr| cfg.seeds.iter().map(move |&s| (m, lr, s))))
        .collect();
    let cells = jobs
        .par_iter()
        .map(|&(mode, lr, seed)| -> Result<CellResult> {
            let tc = cfg.train_config(mode, lr, seed);
            let model = ForceModel::<f32>::new(mode, data.image_size, data.window, seed)?;
            let mut out = train(model, data, splits, &tc)?;
            let metrics = evaluate(&mut out.model, data, &splits.validation)?;
            Ok(CellResult {
                mode,
                lr,
                seed,
                metrics,
                best_epoch: out.best_epoch,
                history: out.history,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut medians = Vec::new();
    for &mode in &cfg.modes {
        for &lr in &cfg.lrs {
            let group: Vec<&CellResult> = cells.iter().filter(|c| c.mode == mode && c.lr == lr).collect();
            let col = |f: fn(&Metrics) -> Option<f64>| median(&group.iter().filter_map(|c| f(&c.metrics)).collect::<Vec<_>>());
            medians.push(MedianRow {
                mode,
                lr,
                mse: col(|m| Some(m.mse)).unwrap_or(f64::NAN),
                rmse: col(|m| Some(m.rmse)).unwrap_or(f64::NAN),
                r2: col(|m| m.r2),
                seeds: group.len(),
            });
        }
    }
    let verdicts = cfg
        .lrs
        .iter()
        .filter_map(|&lr| {
            let get = |m| medians.iter().find(|r: &&MedianRow| r.mode == m && r.lr == lr).map(|r| r.rmse);
            let (mag, image, fusion) = (get(Mode::MagOnly)?, get(Mode::ImageOnly)?, get(Mode::Fusion)?);
            Some(OrderingVerdict {
                lr,
                mag_rmse: mag,
                image_rmse: image,
                fusion_rmse: fusion,
                holds: fusion <= image && image <= mag,
                strict: fusion < image && image < mag,
                improvement_pct: 100.0 * (image - fusion) / image,
            })
        })
        .collect();
    Ok(ComparisonReport {
        cells,
        medians,
        verdicts,
        seeds: cfg.seeds.clone(),
    })
}

fn r2_cell(r2: Option<f64>) -> String {
    r2.map_or_else(|| "undefined".into(), |v| format!("{v:.6}"))
}

/// Writes the median table, per-cell results and histories, the hardware
/// reference rows and an RMSE plot. Returns the written paths.
pub fn write_comparison(report: &ComparisonReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let mut written = Vec::new();
    let mut put = |name: String, text: String| -> Result<()> {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(Error::io(&p))?;
        written.push(p);
        Ok(())
    };

    let mut t = String::from("mode,lr,mse,rmse,r2\n");
    for r in &report.medians {
        t.push_str(&format!("{},{:e},{:.6e},{:.6},{}\n", r.mode, r.lr, r.mse, r.rmse, r2_cell(r.r2)));
    }
    put("comparison.csv".into(), t)?;

    let mut t = String::from("mode,lr,seed,mse,rmse,r2,best_epoch,epochs\n");
    for c in &report.cells {
        t.push_str(&format!(
            "{},{:e},{},{:.6e},{:.6},{},{},{}\n",
            c.mode,
            c.lr,
            c.seed,
            c.metrics.mse,
            c.metrics.rmse,
            r2_cell(c.metrics.r2),
            c.best_epoch.map_or_else(String::new, |e| e.to_string()),
            c.history.len()
        ));
    }
    put("comparison_cells.csv".into(), t)?;

    for c in &report.cells {
        let mut t = String::from("epoch,train_loss,test_loss,lr,wall_s\n");
        for r in &c.history {
            t.push_str(&format!(
                "{},{:.8e},{:.8e},{:e},{:.3}\n",
                r.epoch, r.train_loss, r.test_loss, r.lr, r.wall_s
            ));
        }
        put(format!("history_{}_lr{:e}_seed{}.csv", c.mode, c.lr, c.seed), t)?;
    }

    let mut t = String::from("mode,lr,mse,rmse,r2\n");
    for (m, lr, mse, rmse, r2) in REFERENCE_TABLE {
        t.push_str(&format!("{m},{lr:e},{mse},{rmse},{r2}\n"));
    }
    put("comparison_reference.csv".into(), t)?;

    let mut t = String::from("lr,fusion_rmse,image_rmse,mag_rmse,improvement_pct,holds,strict\n");
    for v in &report.verdicts {
        t.push_str(&format!(
            "{:e},{:.6},{:.6},{:.6},{:.2},{},{}\n",
            v.lr, v.fusion_rmse, v.image_rmse, v.mag_rmse, v.improvement_pct, v.holds, v.strict
        ));
    }
    put("comparison_verdict.csv".into(), t)?;

    let modes: Vec<Mode> = Mode::ALL
        .into_iter()
        .filter(|m| report.medians.iter().any(|r| r.mode == *m))
        .collect();
    let plot = LinePlot {
        title: "Validation RMSE (median over seeds)".into(),
        x_label: "learning rate".into(),
        y_label: "RMSE (N)".into(),
        log_x: true,
        log_y: false,
        series: modes
            .iter()
            .map(|&m| {
                let mut pts: Vec<(f64, f64)> = report
                    .medians
                    .iter()
                    .filter(|r| r.mode == m)
                    .map(|r| (r.lr, r.rmse))
                    .collect();
                pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                (m.to_string(), pts)
            })
            .collect(),
    };
    put("comparison.svg".into(), plot.render())?;
    Ok(written)
}
