mod dot;
mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use redinfo::dist::{gates, JointDistribution};
use redinfo::graph::{gen_dataset, Dataset, GraphInstance, Split, TestShift, TwoPieceConfig};
use redinfo::pid::{compute_pid, PidResult, DEFAULT_TOL};
use redinfo::rig::{self, mask_precision_recall, ModelCheckpoint, ModelKind, ModelState, TrainError, TrainSchedule};
use redinfo::scm::{self, Lemma1Thresholds, ScmConfig};

use manifest::Recorder;

/// Partial information decomposition, structural-causal-model checks and
/// redundancy-guided invariant graph learning.
#[derive(Parser)]
#[command(name = "redinfo", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decompose the information two sources carry about a target.
    #[command(subcommand)]
    Pid(PidCmd),
    /// Check the lemmas on sampled structural causal models.
    #[command(subcommand)]
    Scm(ScmCmd),
    /// Generate synthetic graph datasets.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Train a model from a TOML config.
    Train(TrainArgs),
    /// Evaluate a checkpoint, or raw edge scores, on a dataset split.
    Eval(EvalArgs),
    /// Produce reports from trained models.
    #[command(subcommand)]
    Report(ReportCmd),
    /// Export model outputs for visualisation.
    #[command(subcommand)]
    Export(ExportCmd),
}

#[derive(Subcommand)]
enum PidCmd {
    /// PID of a joint distribution stored as JSON.
    Compute {
        /// Distribution file: {"card": [ny, na, nb], "p": [...]}, row-major in (y, a, b).
        #[arg(long)]
        dist: PathBuf,
        /// Solver tolerance in bits.
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        /// Write the result here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a built-in gate distribution and its PID.
    Canonical {
        #[arg(long, value_enum)]
        gate: Gate,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Gate {
    Copy,
    Xor,
    And,
}

#[derive(Subcommand)]
enum ScmCmd {
    /// Run one lemma check and emit its report.
    Verify(VerifyArgs),
}

#[derive(Args, Serialize)]
struct VerifyArgs {
    /// Lemma number (1, 2 or 3).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    lemma: u8,
    /// Noise levels. Lemma 1 takes one value (default 0.5); lemma 2 takes
    /// two sigma_nc,sigma_ns pairs as four values (default 4 0.1 0.1 4);
    /// lemma 3 takes the curve levels (default 0.25 0.5 1 2 4).
    #[arg(long, num_args = 1..)]
    sigma: Vec<f64>,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 16)]
    bins: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Lemma 1: upper bound on Uni(Y;S|C).
    #[arg(long, default_value_t = 0.02)]
    eps_uni: f64,
    /// Lemma 1: lower bound on Red.
    #[arg(long, default_value_t = 0.2)]
    eps_red: f64,
    /// Lemma 2: required gap between the two unique terms.
    #[arg(long, default_value_t = 0.02)]
    margin: f64,
    /// Directory for report.json (and curve.csv for lemma 3).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum DatasetCmd {
    /// Generate a two-piece motif dataset as train/val/test JSONL files.
    Gen(GenArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Invariant correlation strength.
    #[arg(long)]
    a: f64,
    /// Spurious correlation strength.
    #[arg(long)]
    b: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = ShiftArg::Uniform)]
    test_shift: ShiftArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3000)]
    n_train: usize,
    #[arg(long, default_value_t = 1000)]
    n_val: usize,
    #[arg(long, default_value_t = 1000)]
    n_test: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum ShiftArg {
    Uniform,
    Reversed,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML file with `out`, a `[data]` table and a `[schedule]` table.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Model checkpoint written by `train`.
    #[arg(long, conflicts_with = "scores", required_unless_present = "scores")]
    ckpt: Option<PathBuf>,
    /// JSON array with one array of edge scores per graph of the split.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Dataset directory with train/val/test JSONL files.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    /// Fraction of edges kept in the hard mask when scoring `--scores`.
    #[arg(long, default_value_t = 0.25)]
    ratio: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Subcommand)]
enum ReportCmd {
    /// PID of (Y; Y_c, Y_s) for the two branch predictions.
    Pid(ReportPidArgs),
}

#[derive(Args)]
struct ReportPidArgs {
    #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions", requires = "data")]
    ckpt: Option<PathBuf>,
    /// CSV with columns y, y_c, y_s.
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ExportCmd {
    /// Write one graph with its learned edge scores as DOT.
    Mask(ExportMaskArgs),
}

#[derive(Args)]
struct ExportMaskArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    /// Index of the graph within the split.
    #[arg(long)]
    graph_id: usize,
    #[arg(long)]
    out: PathBuf,
}

/// A failure with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

trait ExitKind<T> {
    fn input(self) -> Result<T, Failure>;
    fn numeric(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ExitKind<T> for Result<T, E> {
    fn input(self) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: 2, error: e.into() })
    }

    fn numeric(self) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: 3, error: e.into() })
    }
}

type Outcome = Result<(), Failure>;

fn threads() -> anyhow::Result<usize> {
    match std::env::var("REDINFO_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(anyhow!("REDINFO_THREADS must be a positive integer, got {v:?}")),
        },
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = threads().input().and_then(|n| run(cli.command, n));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(command: Command, threads: usize) -> Outcome {
    match command {
        Command::Pid(PidCmd::Compute { dist, tol, out }) => pid_compute(&dist, tol, out, threads),
        Command::Pid(PidCmd::Canonical { gate, out }) => pid_canonical(gate, out, threads),
        Command::Scm(ScmCmd::Verify(args)) => scm_verify(args, threads),
        Command::Dataset(DatasetCmd::Gen(args)) => dataset_gen(args, threads),
        Command::Train(args) => train(&args.config, threads),
        Command::Eval(args) => eval(args, threads),
        Command::Report(ReportCmd::Pid(args)) => report_pid(args, threads),
        Command::Export(ExportCmd::Mask(args)) => export_mask(args, threads),
    }
}

/// Prints `text` or writes it to `out`; either way exactly one manifest is
/// produced (beside the file, or on stderr for stdout-only runs).
fn emit(rec: Recorder, text: &str, out: Option<PathBuf>, config: impl Serialize, seed: Option<u64>) -> Outcome {
    match out {
        Some(path) => {
            write(&path, text)?;
            rec.finish(&manifest::beside(&path), config, seed, vec![path]).input()?;
        }
        None => {
            println!("{text}");
            rec.report_to_stderr(config, seed).input()?;
        }
    }
    Ok(())
}

fn write(path: &Path, text: &str) -> Outcome {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).input()?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display())).input()
}

fn to_json(value: &impl Serialize) -> Result<String, Failure> {
    serde_json::to_string_pretty(value).input()
}

fn pid_json(dist: &JointDistribution, tol: f64) -> Result<PidResult, Failure> {
    compute_pid(dist, tol).numeric()
}

fn pid_compute(path: &Path, tol: f64, out: Option<PathBuf>, threads: usize) -> Outcome {
    let rec = Recorder::start("pid compute", threads);
    let dist = JointDistribution::load(path).with_context(|| format!("reading {}", path.display())).input()?;
    if !(tol > 0.0) {
        return Err(anyhow!("--tol must be positive")).input();
    }
    let pid = pid_json(&dist, tol)?;
    let config = serde_json::json!({ "dist": path, "tol": tol });
    emit(rec, &pid.to_json(), out, config, None)
}

#[derive(Serialize)]
struct CanonicalOutput {
    gate: Gate,
    dist: serde_json::Value,
    pid: PidResult,
}

fn pid_canonical(gate: Gate, out: Option<PathBuf>, threads: usize) -> Outcome {
    let rec = Recorder::start("pid canonical", threads);
    let dist = match gate {
        Gate::Copy => gates::copy(),
        Gate::Xor => gates::xor(),
        Gate::And => gates::and(),
    };
    let output = CanonicalOutput {
        gate,
        dist: serde_json::from_str(&dist.to_json_string()).input()?,
        pid: pid_json(&dist, DEFAULT_TOL)?,
    };
    emit(rec, &to_json(&output)?, out, serde_json::json!({ "gate": gate, "tol": DEFAULT_TOL }), None)
}

fn scm_verify(args: VerifyArgs, threads: usize) -> Outcome {
    let rec = Recorder::start("scm verify", threads);
    let base = |cfg: ScmConfig| ScmConfig { n_samples: args.samples, n_bins: args.bins, ..cfg.with_seed(args.seed) };
    let (report, curve) = match args.lemma {
        1 => {
            let sigma = match args.sigma.as_slice() {
                [] => 0.5,
                [s] => *s,
                _ => return Err(anyhow!("lemma 1 takes a single --sigma")).input(),
            };
            let cfg = base(ScmConfig::fiif(sigma));
            cfg.validate().input()?;
            let th = Lemma1Thresholds { eps_uni: args.eps_uni, eps_red: args.eps_red };
            (scm::verify_lemma1(&cfg, th).numeric()?, None)
        }
        2 => {
            let s = if args.sigma.is_empty() { vec![4.0, 0.1, 0.1, 4.0] } else { args.sigma.clone() };
            let [nc1, ns1, nc2, ns2] = s[..] else {
                return Err(anyhow!("lemma 2 takes four --sigma values: nc1 ns1 nc2 ns2")).input();
            };
            let (first, second) = (base(ScmConfig::piif(nc1, ns1)), base(ScmConfig::piif(nc2, ns2)));
            first.validate().input()?;
            second.validate().input()?;
            (scm::verify_lemma2((&first, &second), args.margin).input()?, None)
        }
        _ => {
            let sigmas = if args.sigma.is_empty() { vec![0.25, 0.5, 1.0, 2.0, 4.0] } else { args.sigma.clone() };
            let cfg = base(ScmConfig::default());
            cfg.validate().input()?;
            let (report, curve) = scm::verify_lemma3(&sigmas, &cfg).input()?;
            (report, Some(curve))
        }
    };
    let Some(dir) = args.out.clone() else {
        println!("{}", report.to_json());
        return rec.report_to_stderr(&args, Some(args.seed)).input();
    };
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display())).input()?;
    let report_path = dir.join("report.json");
    write(&report_path, &report.to_json())?;
    let mut outputs = vec![report_path];
    if let Some(curve) = curve {
        let path = dir.join("curve.csv");
        let mut w = csv::Writer::from_path(&path).input()?;
        for p in &curve {
            w.serialize(p).input()?;
        }
        w.flush().input()?;
        outputs.push(path);
    }
    rec.finish(&dir.join("manifest.json"), &args, Some(args.seed), outputs).input()?;
    Ok(())
}

fn dataset_gen(args: GenArgs, threads: usize) -> Outcome {
    let rec = Recorder::start("dataset gen", threads);
    let cfg = TwoPieceConfig {
        a: args.a,
        b: args.b,
        n_train: args.n_train,
        n_val: args.n_val,
        n_test: args.n_test,
        test_shift: match args.test_shift {
            ShiftArg::Uniform => TestShift::Uniform,
            ShiftArg::Reversed => TestShift::Reversed,
        },
        seed: args.seed,
    };
    cfg.validate().input()?;
    let ds = gen_dataset(&cfg).input()?;
    ds.save(&args.out).input()?;
    let outputs = Split::ALL.iter().map(|s| args.out.join(format!("{}.jsonl", s.name()))).collect();
    rec.finish(&args.out.join("manifest.json"), &cfg, Some(cfg.seed), outputs).input()?;
    Ok(())
}

/// Contents of a `train --config` file. Relative paths are resolved
/// against the directory holding the config.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainConfig {
    out: PathBuf,
    data: DataSource,
    #[serde(default)]
    schedule: TrainSchedule,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataSource {
    /// Existing dataset directory.
    dir: Option<PathBuf>,
    /// Dataset to generate in memory.
    generate: Option<TwoPieceConfig>,
}

#[derive(Serialize)]
struct TrainMetrics {
    method: rig::Method,
    best_epoch: usize,
    best_val: f64,
    stopped_early: bool,
    epochs_run: usize,
    val: rig::Metrics,
    test: rig::Metrics,
    pid: rig::PidRow,
}

fn train(config_path: &Path, threads: usize) -> Outcome {
    let rec = Recorder::start("train", threads);
    let text = fs::read_to_string(config_path).with_context(|| format!("reading {}", config_path.display())).input()?;
    let mut cfg: TrainConfig = toml::from_str(&text).with_context(|| format!("parsing {}", config_path.display())).input()?;
    let root = config_path.parent().unwrap_or(Path::new("."));
    cfg.out = root.join(&cfg.out);
    let ds = match (&mut cfg.data.dir, &cfg.data.generate) {
        (Some(dir), None) => {
            *dir = root.join(&*dir);
            Dataset::load(dir).with_context(|| format!("loading dataset from {}", dir.display())).input()?
        }
        (None, Some(g)) => {
            g.validate().input()?;
            gen_dataset(g).input()?
        }
        _ => return Err(anyhow!("[data] needs exactly one of `dir` or a `[data.generate]` table")).input(),
    };
    cfg.schedule.validate().map_err(|e| anyhow!(e)).input()?;
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display())).input()?;
    let history_path = cfg.out.join("history.csv");
    let manifest_path = cfg.out.join("manifest.json");
    let seed = Some(cfg.schedule.seed);

    let outcome = match rig::train(&ds, &cfg.schedule, None) {
        Ok(o) => o,
        Err(TrainError::Diverged { epoch, history }) => {
            write(&history_path, &history.to_csv_string())?;
            rec.finish(&manifest_path, &cfg, seed, vec![history_path]).input()?;
            return Err(anyhow!("training diverged at epoch {epoch}; partial history written")).numeric();
        }
        Err(e @ TrainError::EmptyData) | Err(e @ TrainError::Config(_)) => return Err(e).input(),
    };
    log::info!("best epoch {} (val {:.4})", outcome.best_epoch, outcome.best_val);

    let model_path = cfg.out.join("model.json");
    write(&model_path, &serde_json::to_string(&outcome.model.to_checkpoint()).input()?)?;
    write(&history_path, &outcome.history.to_csv_string())?;
    let metrics = TrainMetrics {
        method: cfg.schedule.method,
        best_epoch: outcome.best_epoch,
        best_val: outcome.best_val,
        stopped_early: outcome.stopped_early,
        epochs_run: outcome.history.records.len(),
        val: rig::evaluate(&outcome.model, &ds.val),
        test: rig::evaluate(&outcome.model, &ds.test),
        pid: rig::pid_of_predictions(&outcome.model, &ds.test).numeric()?,
    };
    let metrics_path = cfg.out.join("metrics.json");
    write(&metrics_path, &to_json(&metrics)?)?;
    rec.finish(&manifest_path, &cfg, seed, vec![model_path, history_path, metrics_path]).input()?;
    Ok(())
}

fn load_model(path: &Path) -> Result<ModelState, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).input()?;
    let ck: ModelCheckpoint = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display())).input()?;
    ModelState::from_checkpoint(&ck).input()
}

fn load_split(dir: &Path, split: SplitArg) -> Result<Vec<GraphInstance>, Failure> {
    let ds = Dataset::load(dir).with_context(|| format!("loading dataset from {}", dir.display())).input()?;
    let split: Split = split.into();
    Ok(ds.split(split).to_vec())
}

#[derive(Serialize)]
struct EvalReport {
    split: SplitArg,
    n: usize,
    causal_acc: Option<f64>,
    spurious_acc: Option<f64>,
    mask_precision: Option<f64>,
    mask_recall: Option<f64>,
}

fn eval(args: EvalArgs, threads: usize) -> Outcome {
    let rec = Recorder::start("eval", threads);
    let graphs = load_split(&args.data, args.split)?;
    let report = if let Some(ckpt) = &args.ckpt {
        let m = rig::evaluate(&load_model(ckpt)?, &graphs);
        EvalReport {
            split: args.split,
            n: m.n,
            causal_acc: Some(m.causal_acc),
            spurious_acc: m.spurious_acc,
            mask_precision: m.mask_precision,
            mask_recall: m.mask_recall,
        }
    } else {
        let path = args.scores.as_ref().expect("clap enforces one of ckpt/scores");
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).input()?;
        let scores: Vec<Vec<f64>> = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display())).input()?;
        if scores.len() != graphs.len() || scores.iter().zip(&graphs).any(|(s, g)| s.len() != g.num_edges()) {
            return Err(anyhow!("scores must hold one value per edge for every graph of the split")).input();
        }
        if !(args.ratio > 0.0 && args.ratio <= 1.0) {
            return Err(anyhow!("--ratio must lie in (0, 1]")).input();
        }
        let (p, r) = mask_precision_recall(&graphs, &scores, args.ratio);
        EvalReport {
            split: args.split,
            n: graphs.len(),
            causal_acc: None,
            spurious_acc: None,
            mask_precision: Some(p),
            mask_recall: Some(r),
        }
    };
    let config = serde_json::json!({
        "ckpt": args.ckpt, "scores": args.scores, "data": args.data, "split": args.split, "ratio": args.ratio,
    });
    emit(rec, &to_json(&report)?, args.out, config, None)
}

#[derive(Deserialize)]
struct PredictionRow {
    y: usize,
    y_c: usize,
    y_s: usize,
}

fn report_pid(args: ReportPidArgs, threads: usize) -> Outcome {
    let rec = Recorder::start("report pid", threads);
    let row = if let Some(ckpt) = &args.ckpt {
        let data = args.data.as_ref().expect("clap enforces --data with --ckpt");
        rig::pid_of_predictions(&load_model(ckpt)?, &load_split(data, args.split)?).numeric()?
    } else {
        let path = args.predictions.as_ref().expect("clap enforces one of ckpt/predictions");
        let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display())).input()?;
        let rows: Vec<PredictionRow> = reader.deserialize().collect::<Result<_, _>>().input()?;
        if rows.is_empty() {
            return Err(anyhow!("{} has no rows", path.display())).input();
        }
        let k = redinfo::graph::NUM_CLASSES;
        if rows.iter().any(|r| r.y >= k || r.y_c >= k || r.y_s >= k) {
            return Err(anyhow!("class ids must lie in 0..{k}")).input();
        }
        let col = |f: fn(&PredictionRow) -> usize| rows.iter().map(f).collect::<Vec<_>>();
        rig::pid_row(&col(|r| r.y), &col(|r| r.y_c), &col(|r| r.y_s)).numeric()?
    };
    let config = serde_json::json!({
        "ckpt": args.ckpt, "predictions": args.predictions, "data": args.data, "split": args.split,
    });
    emit(rec, &to_json(&row)?, args.out, config, None)
}

fn export_mask(args: ExportMaskArgs, threads: usize) -> Outcome {
    let rec = Recorder::start("export mask", threads);
    let model = load_model(&args.ckpt)?;
    if model.kind() != ModelKind::Masked {
        return Err(anyhow!("{} is a whole-graph model and has no edge scores", args.ckpt.display())).input();
    }
    let graphs = load_split(&args.data, args.split)?;
    let g = graphs
        .get(args.graph_id)
        .ok_or_else(|| anyhow!("graph id {} out of range ({} graphs)", args.graph_id, graphs.len()))
        .input()?;
    let pred = rig::predict(&model, std::slice::from_ref(g));
    let scores = &pred.edge_weights.expect("masked models produce edge weights")[0];
    let name = format!("{}_{}", Split::from(args.split).name(), args.graph_id);
    write(&args.out, &dot::mask_to_dot(&name, g, scores))?;
    let config = serde_json::json!({
        "ckpt": args.ckpt, "data": args.data, "split": args.split, "graph_id": args.graph_id,
    });
    rec.finish(&manifest::beside(&args.out), config, None, vec![args.out]).input()?;
    Ok(())
}
