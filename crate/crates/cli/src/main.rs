use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use magtac_core::config::Preset;
use magtac_core::dataset::{generate_dataset, split, Dataset, SplitSpec};
use magtac_core::experiments::{
    detect_proximity, object_preset, run_comparison, run_proximity, run_timing, timing_csv, write_comparison,
    write_index, write_proximity, write_timing, ComparisonConfig, ProximityConfig, TimingConfig, OBJECT_PRESETS,
};
use magtac_core::fusion::{
    evaluate, load_checkpoint, metrics_csv_header, metrics_csv_row, predict, save_checkpoint, train_observed,
    write_history_csv, ForceModel, Mode, TrainConfig, TrainingData,
};
use magtac_core::{Error, SimConfig};
use serde::{Deserialize, Serialize};

const OUT_ENV: &str = "MAGTAC_OUT";

const AFTER_HELP: &str = "\
Exit codes:
  0  success
  2  invalid flag, preset or configuration file
  3  missing or unreadable input (dataset, run directory, checkpoint)
  4  numeric failure (training diverged, field singularity)
  5  an asserted property failed (mode ordering in `report compare`)

When --out is omitted, output goes to $MAGTAC_OUT/<command>, or to
./magtac-out/<command> if MAGTAC_OUT is unset.

Configuration files are TOML and reject unknown keys.
  gen, report proximity: any subset of the simulator tables
      [elastomer] [magnetics] [render] [dataset]
  train, report compare: optional tables
      [train]  batch_size, weight_decay, patience, max_epochs
      [split]  train, test, validation, seed, mode (by-sample | by-location)";

#[derive(Parser)]
#[command(name = "magtac", version, about = "Simulated visuo-magnetic tactile force estimation", after_help = AFTER_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset of simulated presses.
    Gen(GenArgs),
    /// Train one model and score it on the validation split.
    Train(TrainArgs),
    /// Score a trained run on a chosen split.
    Eval(EvalArgs),
    /// Run an experiment and write its tables and plots.
    #[command(subcommand)]
    Report(Report),
}

#[derive(Subcommand)]
enum Report {
    /// Train every mode and learning rate over several seeds and compare.
    Compare(CompareArgs),
    /// Measure per-sample preprocessing and inference latency.
    Timing(TimingArgs),
    /// Trace the signal of magnetic objects approaching the sensor.
    Proximity(ProximityArgs),
}

#[derive(Args)]
struct OutArg {
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl OutArg {
    fn resolve(&self, command: &str) -> PathBuf {
        match (&self.out, std::env::var_os(OUT_ENV)) {
            (Some(p), _) => p.clone(),
            (None, Some(root)) => PathBuf::from(root).join(command),
            (None, None) => PathBuf::from("magtac-out").join(command),
        }
    }
}

#[derive(Args)]
struct GenArgs {
    /// Simulator preset: desk (64x64 images) or paper (224x224, slow).
    #[arg(long, default_value = "desk", value_parser = parse_preset)]
    preset: Preset,
    /// TOML file overriding preset values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write this many evenly spaced sample images as PNG under preview/.
    #[arg(long, default_value_t = 0)]
    preview: usize,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory written by `gen`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "fusion", value_parser = parse_mode)]
    mode: Mode,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    /// Seed for weight initialization and batch order.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// TOML file with [train] and [split] tables.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitName {
    Train,
    Test,
    Validation,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory written by `train`.
    #[arg(long)]
    run: PathBuf,
    /// Dataset directory, if different from the one used for training.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "validation")]
    split: SplitName,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated modes.
    #[arg(long, value_delimiter = ',', value_parser = parse_mode, default_value = "mag-only,image-only,fusion")]
    modes: Vec<Mode>,
    /// Comma-separated learning rates.
    #[arg(long, value_delimiter = ',', default_value = "1e-3,1e-4,1e-5")]
    lrs: Vec<f64>,
    /// Comma-separated seeds; medians are reported over them.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// TOML file with [train] and [split] tables.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct TimingArgs {
    #[arg(long)]
    data: PathBuf,
    /// Run directories to time; untrained models of every mode when omitted.
    #[arg(long)]
    run: Vec<PathBuf>,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 10)]
    warmup: usize,
    /// Distinct dataset samples cycled through.
    #[arg(long, default_value_t = 16)]
    samples: usize,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct ProximityArgs {
    #[arg(long, default_value = "desk", value_parser = parse_preset)]
    preset: Preset,
    /// TOML file overriding preset values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated object names (watch, headset, phone, mouse).
    #[arg(long, value_delimiter = ',')]
    objects: Vec<String>,
    /// Normalized level counted as a detection.
    #[arg(long, default_value_t = 0.05)]
    threshold: f64,
    #[arg(long, default_value_t = 0.20)]
    start_m: f64,
    #[arg(long, default_value_t = 0.005)]
    contact_m: f64,
    #[arg(long, default_value_t = 196)]
    steps: usize,
    #[command(flatten)]
    out: OutArg,
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse().map_err(|_| format!("unknown preset `{s}` (expected desk or paper)"))
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|_| format!("unknown mode `{s}` (expected mag-only, image-only or fusion)"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TrainFile {
    batch_size: usize,
    weight_decay: f64,
    patience: usize,
    max_epochs: usize,
}

impl Default for TrainFile {
    fn default() -> Self {
        let t = TrainConfig::new(Mode::Fusion, 1e-4, 0);
        Self {
            batch_size: t.batch_size,
            weight_decay: t.weight_decay,
            patience: t.patience,
            max_epochs: t.max_epochs,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RunFile {
    train: TrainFile,
    split: SplitSpec,
}

/// Resolved settings of a `train` run, saved as `run.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSnapshot {
    data: PathBuf,
    train: TrainConfig,
    split: SplitSpec,
}

enum Failure {
    Core(Error),
    Assertion(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Domain(_) => 2,
        Error::MissingInput(_)
        | Error::CorruptManifest { .. }
        | Error::LengthMismatch { .. }
        | Error::VersionMismatch { .. }
        | Error::Io { .. } => 3,
        Error::Diverged { .. } | Error::Singularity { .. } | Error::Nn(_) => 4,
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Error> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    std::fs::write(path, text).map_err(Error::io(path))
}

fn to_toml<T: Serialize>(value: &T) -> Result<String, Error> {
    toml::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))
}

fn sim_config(preset: Preset, config: Option<&Path>) -> Result<SimConfig, Error> {
    let base = SimConfig::preset(preset);
    match config {
        Some(p) if !p.exists() => Err(Error::MissingInput(p.to_path_buf())),
        Some(p) => SimConfig::load_over(&base, p),
        None => {
            base.validate()?;
            Ok(base)
        }
    }
}

fn run_file(config: Option<&Path>) -> Result<RunFile, Error> {
    config.map_or_else(|| Ok(RunFile::default()), read_toml)
}

fn open_dataset(dir: &Path) -> Result<Dataset, Error> {
    Dataset::open(dir)
}

fn cmd_gen(a: &GenArgs) -> CmdResult {
    let mut cfg = sim_config(a.preset, a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.dataset.seed = seed;
    }
    cfg.validate()?;
    let out = a.out.resolve("gen");
    let manifest = generate_dataset(&cfg, &out)?;
    write_text(&out.join("config.resolved.toml"), &cfg.to_toml_string())?;
    let ds = open_dataset(&out)?;
    ds.export_labels_csv(&out.join("labels.csv"))?;
    if a.preview > 0 {
        let dir = out.join("preview");
        std::fs::create_dir_all(&dir).map_err(Error::io(&dir))?;
        let count = a.preview.min(ds.len());
        for k in 0..count {
            let i = k * ds.len() / count;
            ds.image(i)?.write_png(&dir.join(format!("sample_{i:06}.png")))?;
        }
    }
    println!("{} samples written to {}", manifest.samples, out.display());
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> CmdResult {
    let file = run_file(a.config.as_deref())?;
    let cfg = TrainConfig {
        mode: a.mode,
        lr: a.lr,
        batch_size: file.train.batch_size,
        weight_decay: file.train.weight_decay,
        patience: file.train.patience,
        max_epochs: a.max_epochs.unwrap_or(file.train.max_epochs),
        seed: a.seed,
    };
    cfg.validate()?;
    let out = a.out.resolve("train");
    let snapshot = RunSnapshot {
        data: a.data.clone(),
        train: cfg,
        split: file.split,
    };
    write_text(&out.join("run.toml"), &to_toml(&snapshot)?)?;

    let ds = open_dataset(&a.data)?;
    let splits = split(&ds.locations(), &file.split)?;
    let data = TrainingData::load(&ds, cfg.mode)?;
    let model = ForceModel::<f32>::new(cfg.mode, data.image_size, data.window, cfg.seed)?;
    let outcome = train_observed(model, &data, &splits, &cfg, |r| {
        eprintln!(
            "epoch {:>3}  train {:.6}  test {:.6}  {:.1}s",
            r.epoch, r.train_loss, r.test_loss, r.wall_s
        )
    })?;
    let mut model = outcome.model;
    save_checkpoint(&model, outcome.best_epoch, &out.join("model.json"))?;
    write_history_csv(&out.join("history.csv"), &outcome.history)?;
    let m = evaluate(&mut model, &data, &splits.validation)?;
    let row = metrics_csv_row(cfg.mode, cfg.lr, &m);
    write_text(&out.join("metrics.csv"), &format!("{}\n{row}\n", metrics_csv_header()))?;
    println!("{}\n{row}", metrics_csv_header());
    Ok(())
}

fn load_run(run: &Path) -> Result<(RunSnapshot, ForceModel<f32>), Error> {
    let snapshot: RunSnapshot = read_toml(&run.join("run.toml"))?;
    let (model, _) = load_checkpoint::<f32>(&run.join("model.json"))?;
    if model.mode() != snapshot.train.mode {
        return Err(Error::Config(format!(
            "{}: checkpoint is {} but run.toml says {}",
            run.display(),
            model.mode(),
            snapshot.train.mode
        )));
    }
    Ok((snapshot, model))
}

fn cmd_eval(a: &EvalArgs) -> CmdResult {
    let (snapshot, mut model) = load_run(&a.run)?;
    let data_dir = a.data.clone().unwrap_or_else(|| snapshot.data.clone());
    let ds = open_dataset(&data_dir)?;
    let splits = split(&ds.locations(), &snapshot.split)?;
    let idx = match a.split {
        SplitName::Train => &splits.train,
        SplitName::Test => &splits.test,
        SplitName::Validation => &splits.validation,
    };
    let data = TrainingData::load(&ds, model.mode())?;
    let pred = predict(&mut model, &data, idx)?;
    let m = evaluate(&mut model, &data, idx)?;
    let out = a.out.resolve("eval");
    let mut csv = String::from("index,label,prediction\n");
    for (p, &i) in pred.iter().zip(idx) {
        csv.push_str(&format!("{i},{},{p}\n", data.labels[i]));
    }
    write_text(&out.join("predictions.csv"), &csv)?;
    let row = metrics_csv_row(model.mode(), snapshot.train.lr, &m);
    write_text(&out.join("metrics.csv"), &format!("{}\n{row}\n", metrics_csv_header()))?;
    println!("{}\n{row}", metrics_csv_header());
    Ok(())
}

fn cmd_compare(a: &CompareArgs) -> CmdResult {
    let file = run_file(a.config.as_deref())?;
    let cfg = ComparisonConfig {
        modes: a.modes.clone(),
        lrs: a.lrs.clone(),
        seeds: a.seeds.clone(),
        batch_size: file.train.batch_size,
        weight_decay: file.train.weight_decay,
        patience: file.train.patience,
        max_epochs: a.max_epochs.unwrap_or(file.train.max_epochs),
    };
    let out = a.out.resolve("compare");
    write_text(&out.join("run.toml"), &to_toml(&file)?)?;
    let ds = open_dataset(&a.data)?;
    let splits = split(&ds.locations(), &file.split)?;
    let needs = |f: fn(Mode) -> bool| cfg.modes.iter().any(|&m| f(m));
    let mode = match (needs(Mode::uses_images), needs(Mode::uses_mag)) {
        (true, true) => Mode::Fusion,
        (true, false) => Mode::ImageOnly,
        _ => Mode::MagOnly,
    };
    let data = TrainingData::load(&ds, mode)?;
    let report = run_comparison(&data, &splits, &cfg)?;
    let mut written = write_comparison(&report, &out)?;
    written.push(out.join("run.toml"));
    write_index(&out, &written)?;
    println!("{}", metrics_csv_header());
    for r in &report.medians {
        let m = magtac_core::fusion::Metrics {
            mse: r.mse,
            rmse: r.rmse,
            r2: r.r2,
            count: 0,
        };
        println!("{}", metrics_csv_row(r.mode, r.lr, &m));
    }
    for v in &report.verdicts {
        println!("{v}");
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Assertion("mode ordering does not hold".into()))
    }
}

fn cmd_timing(a: &TimingArgs) -> CmdResult {
    let ds = open_dataset(&a.data)?;
    let m = ds.manifest();
    let mut models = if a.run.is_empty() {
        Mode::ALL
            .iter()
            .map(|&mode| ForceModel::<f32>::new(mode, m.image_height, m.window, 0))
            .collect::<Result<Vec<_>, Error>>()?
    } else {
        a.run
            .iter()
            .map(|r| load_run(r).map(|(_, model)| model))
            .collect::<Result<Vec<_>, Error>>()?
    };
    let cfg = TimingConfig {
        warmup: a.warmup,
        reps: a.reps,
        samples: a.samples,
        ..TimingConfig::default()
    };
    let report = run_timing(&mut models, &ds, &cfg)?;
    let out = a.out.resolve("timing");
    let mut written = write_timing(&report, &out)?;
    write_text(&out.join("run.toml"), &to_toml(&cfg)?)?;
    written.push(out.join("run.toml"));
    write_index(&out, &written)?;
    print!("{}", timing_csv(&report));
    Ok(())
}

#[derive(Serialize)]
struct ProximitySnapshot<'a> {
    approach: ProximityConfig,
    threshold: f64,
    objects: Vec<(&'a str, f64)>,
    sim: &'a SimConfig,
}

fn cmd_proximity(a: &ProximityArgs) -> CmdResult {
    let sim = sim_config(a.preset, a.config.as_deref())?;
    let names: Vec<&str> = if a.objects.is_empty() {
        OBJECT_PRESETS.iter().map(|(n, _)| *n).collect()
    } else {
        a.objects.iter().map(String::as_str).collect()
    };
    let objects = names
        .iter()
        .map(|&n| {
            object_preset(n)
                .map(|m| (n, m))
                .ok_or_else(|| Error::Config(format!("unknown object `{n}`")))
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let approach = ProximityConfig {
        start_m: a.start_m,
        contact_m: a.contact_m,
        steps: a.steps,
    };
    let traces = objects
        .iter()
        .map(|&(n, m)| run_proximity(&sim.magnetics, &sim.elastomer, n, m, &approach))
        .collect::<Result<Vec<_>, Error>>()?;
    let out = a.out.resolve("proximity");
    let mut written = write_proximity(&traces, &out)?;
    let snapshot = ProximitySnapshot {
        approach,
        threshold: a.threshold,
        objects: objects.clone(),
        sim: &sim,
    };
    write_text(&out.join("run.toml"), &to_toml(&snapshot)?)?;
    written.push(out.join("run.toml"));
    write_index(&out, &written)?;
    println!("object,moment_am2,detected_at_m");
    for t in &traces {
        let d = detect_proximity(t, a.threshold).map_or_else(|| "none".to_string(), |d| format!("{d:.4}"));
        println!("{},{},{d}", t.object, t.moment_am2);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Report(Report::Compare(a)) => cmd_compare(a),
        Command::Report(Report::Timing(a)) => cmd_timing(a),
        Command::Report(Report::Proximity(a)) => cmd_proximity(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Assertion(msg)) => {
            eprintln!("assertion failed: {msg}");
            ExitCode::from(5)
        }
    }
}
