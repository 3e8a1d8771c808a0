//! Command-line front end: pretraining, counterexample-guided retraining,
//! verification, fair prediction and end-to-end audits.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use fairnet::fairness::{
    audit_pair, enumerate_predict, fair_predict, AuditConfig, FairnessReport, Predictor, DEFAULT_TIME_LIMIT,
    ENUMERATION_CAP,
};
use fairnet::milp::Limits;
use fairnet::network::{load_model, save_model, NetworkSpec};
use fairnet::schema::{load_schema, Dataset, FeatureSchema};
use fairnet::training::{ce_fair_train, pretrain, BatchStrategy, EpochRecord, TrainConfig};
use rand::SeedableRng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_UNFAIR: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_TRAINING: i32 = 3;
pub const EXIT_UNKNOWN: i32 = 4;
pub const EXIT_UNDECIDED: i32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("training failed: {0}")]
    Training(fairnet::Error),
    #[error("{0}")]
    Lib(#[from] fairnet::Error),
    #[error("undecided sample {0}: solver limit reached before the fair label was resolved")]
    Undecided(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Lib(_) => EXIT_CONFIG,
            CliError::Training(_) => EXIT_TRAINING,
            CliError::Undecided(_) => EXIT_UNDECIDED,
        }
    }
}

type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Parser)]
#[command(name = "fairnet", version, about = "Individual-fairness verification, fair prediction and retraining for ReLU classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub global: Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Train a network on plain BCE.
    Pretrain,
    /// Retrain a network with counterexample-augmented batches.
    Train,
    /// Search every sample for fairness counterexamples.
    Verify,
    /// Fair predictions by counting (or by enumeration with --oracle).
    Predict,
    /// Four-row comparison: raw, fair-predicted, retrained, retrained and fair-predicted.
    Audit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyArg {
    Full,
    Ce,
}

impl From<StrategyArg> for BatchStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Full => BatchStrategy::FullBatch,
            StrategyArg::Ce => BatchStrategy::CeBatch,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Global {
    /// Feature schema (JSON).
    #[arg(long, global = true)]
    pub schema: Option<PathBuf>,
    /// Model file; the input model for every command but pretrain.
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Training CSV for pretrain/train, evaluation CSV otherwise.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Training CSV used by audit to retrain when --retrained is absent.
    #[arg(long, global = true)]
    pub train_data: Option<PathBuf>,
    /// Already retrained model for audit.
    #[arg(long, global = true)]
    pub retrained: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Decision threshold on the output probability; overrides the model's.
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    #[arg(long, global = true, default_value_t = 1.0)]
    pub rho: f64,
    /// Defaults: 200 for pretrain, 50 for train.
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = StrategyArg::Full)]
    pub batch_strategy: StrategyArg,
    #[arg(long, global = true, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, global = true, default_value_t = 64)]
    pub batch_size: usize,
    /// Hidden layer widths, comma separated.
    #[arg(long, global = true, default_value = "16,16,16", value_delimiter = ',')]
    pub hidden: Vec<usize>,
    /// Fraction of the training CSV held out for validation.
    #[arg(long, global = true, default_value_t = 0.2)]
    pub val_fraction: f64,
    /// Per-sample solver time limit.
    #[arg(long, global = true)]
    pub time_limit_ms: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Largest |A(x)| the enumeration oracle accepts.
    #[arg(long, global = true, default_value_t = ENUMERATION_CAP)]
    pub max_solutions: u64,
    /// Predict by exhaustive enumeration instead of counting.
    #[arg(long, global = true)]
    pub oracle: bool,
    /// Do not fail verify/audit on samples whose search hit the time limit.
    #[arg(long, global = true)]
    pub allow_unknown: bool,
    /// Also compute the maximum violation of every sample.
    #[arg(long, global = true)]
    pub max_violation: bool,
    /// Write zeros for every wall-clock field so reruns are byte-identical.
    #[arg(long, global = true)]
    pub no_timing: bool,
}

impl Global {
    fn limits(&self) -> Limits {
        Limits::time(self.time_limit_ms.map_or(DEFAULT_TIME_LIMIT, Duration::from_millis))
    }

    fn train_config(&self, default_epochs: usize) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs.unwrap_or(default_epochs),
            rho: self.rho,
            batch_strategy: self.batch_strategy.into(),
            seed: self.seed,
            time_limit_ms: Some(self.time_limit_ms.unwrap_or(DEFAULT_TIME_LIMIT.as_millis() as u64)),
            ..TrainConfig::default()
        }
    }

    fn audit_config(&self) -> AuditConfig {
        AuditConfig {
            predictor: Predictor::Raw,
            limits: self.limits(),
            max_violation: self.max_violation,
            timing: !self.no_timing,
        }
    }
}

fn require<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    let p = p.as_deref().ok_or_else(|| CliError::Config(format!("missing --{flag}")))?;
    if !p.exists() {
        return Err(CliError::Config(format!("--{flag}: {} does not exist", p.display())));
    }
    Ok(p)
}

fn config_err(e: fairnet::Error) -> CliError {
    CliError::Config(e.to_string())
}

fn read_schema(g: &Global) -> Result<FeatureSchema> {
    load_schema(require(&g.schema, "schema")?).map_err(config_err)
}

fn read_data(schema: &FeatureSchema, p: &Option<PathBuf>, flag: &str) -> Result<Dataset> {
    Dataset::from_csv(schema, require(p, flag)?).map_err(config_err)
}

fn read_model(g: &Global, p: &Option<PathBuf>, flag: &str, schema: &FeatureSchema) -> Result<NetworkSpec> {
    let mut net = load_model(require(p, flag)?).map_err(config_err)?;
    if net.input_dim() != schema.input_dim() {
        return Err(CliError::Config(format!(
            "--{flag}: network expects {} inputs, schema encodes {}",
            net.input_dim(),
            schema.input_dim()
        )));
    }
    if let Some(t) = g.threshold {
        net = NetworkSpec::new(net.layers, t).map_err(config_err)?;
    }
    Ok(net)
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Config(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Inputs and configuration of a run, enough to repeat it.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: Command,
    pub config: Global,
    pub inputs: Vec<InputDigest>,
    /// SHA-256 over the per-input digests in order.
    pub input_hash: String,
    pub outputs: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub flag: String,
    pub path: PathBuf,
    pub sha256: String,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

fn write_manifest(g: &Global, command: Command, outputs: &[&str]) -> Result<()> {
    let mut inputs = Vec::new();
    for (flag, p) in [
        ("schema", &g.schema),
        ("model", &g.model),
        ("data", &g.data),
        ("train_data", &g.train_data),
        ("retrained", &g.retrained),
    ] {
        if let Some(p) = p {
            if p.exists() {
                inputs.push(InputDigest {
                    flag: flag.into(),
                    path: p.clone(),
                    sha256: sha256_file(p)?,
                });
            }
        }
    }
    let mut h = Sha256::new();
    for i in &inputs {
        h.update(i.sha256.as_bytes());
    }
    let m = Manifest {
        tool: "fairnet",
        version: env!("CARGO_PKG_VERSION"),
        command,
        config: g.clone(),
        inputs,
        input_hash: format!("{:x}", h.finalize()),
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
    };
    let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
    write_file(&g.out.join(format!("manifest_{}.json", command_name(command))), &text)
}

fn command_name(c: Command) -> &'static str {
    match c {
        Command::Pretrain => "pretrain",
        Command::Train => "train",
        Command::Verify => "verify",
        Command::Predict => "predict",
        Command::Audit => "audit",
    }
}

fn jsonl(records: &[EpochRecord]) -> String {
    records.iter().map(|r| r.to_json_line() + "\n").collect()
}

/// Runs the parsed command and returns the process exit code.
pub fn run(cli: &Cli) -> Result<i32> {
    let g = &cli.global;
    fs::create_dir_all(&g.out).map_err(|e| io_err(&g.out, e))?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if g.threads > 0 {
        builder = builder.num_threads(g.threads);
    }
    let pool = builder.build().map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Pretrain => cmd_pretrain(g),
        Command::Train => cmd_train(g),
        Command::Verify => cmd_verify(g),
        Command::Predict => cmd_predict(g),
        Command::Audit => cmd_audit(g),
    })
}

fn split(g: &Global, data: &Dataset) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&g.val_fraction) {
        return Err(CliError::Config(format!("--val-fraction must be in [0, 1), got {}", g.val_fraction)));
    }
    let (val, train) = data.split(g.val_fraction, g.seed);
    Ok((train, val))
}

pub fn cmd_pretrain(g: &Global) -> Result<i32> {
    let schema = read_schema(g)?;
    let data = read_data(&schema, &g.data, "data")?;
    let threshold = g.threshold.unwrap_or(0.5);
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(CliError::Config(format!("--threshold must be in (0, 1), got {threshold}")));
    }
    let cfg = g.train_config(200);
    cfg.validate().map_err(config_err)?;
    let (train, val) = split(g, &data)?;
    let mut widths = vec![schema.input_dim()];
    widths.extend(g.hidden.iter().copied());
    widths.push(1);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(g.seed);
    let init = NetworkSpec::random(&widths, threshold, &mut rng).map_err(config_err)?;
    let (net, records) = pretrain(&init, &train, &val, &cfg).map_err(CliError::Training)?;
    let best = records
        .iter()
        .min_by(|a, b| a.val_loss.total_cmp(&b.val_loss))
        .expect("epoch 0 is always recorded");
    save_model(&net, g.out.join("model.json"))?;
    write_file(&g.out.join("pretrain_log.jsonl"), &jsonl(&records))?;
    write_manifest(g, Command::Pretrain, &["model.json", "pretrain_log.jsonl"])?;
    println!(
        "pretrained {} epochs; kept epoch {} (val loss {:.4}, val accuracy {:.4})",
        cfg.epochs, best.epoch, best.val_loss, best.val_accuracy
    );
    Ok(EXIT_OK)
}

/// Retrains `net` on `data`, writing checkpoints, the trajectory and the
/// selection under `out`.
fn retrain(g: &Global, net: &NetworkSpec, data: &Dataset, out: &Path) -> Result<NetworkSpec> {
    let cfg = g.train_config(50);
    if cfg.epochs == 0 {
        return Err(CliError::Config("--epochs must be at least 1".into()));
    }
    cfg.validate().map_err(config_err)?;
    let (train, val) = split(g, data)?;
    let ckpt = out.join("checkpoints");
    fs::create_dir_all(&ckpt).map_err(|e| io_err(&ckpt, e))?;
    let traj_path = out.join("trajectory.jsonl");
    let mut traj = fs::File::create(&traj_path).map_err(|e| io_err(&traj_path, e))?;
    let (chosen, sel) = ce_fair_train(net, &train, &val, &cfg, |rec, snapshot| {
        if rec.epoch == 0 {
            return Ok(());
        }
        save_model(snapshot, ckpt.join(format!("epoch_{:03}.json", rec.epoch)))?;
        writeln!(traj, "{}", rec.to_json_line()).map_err(|e| fairnet::Error::Config(format!("trajectory: {e}")))?;
        Ok(())
    })
    .map_err(CliError::Training)?;
    save_model(&chosen, out.join("model_fair.json"))?;
    write_file(
        &out.join("selection.json"),
        &serde_json::to_string_pretty(&sel).expect("selection serializes"),
    )?;
    println!("selected epoch {} (distance {:.4} to accuracy 1, ce rate 0)", sel.chosen_epoch, sel.distance);
    Ok(chosen)
}

pub fn cmd_train(g: &Global) -> Result<i32> {
    let schema = read_schema(g)?;
    let net = read_model(g, &g.model, "model", &schema)?;
    let data = read_data(&schema, &g.data, "data")?;
    retrain(g, &net, &data, &g.out)?;
    write_manifest(
        g,
        Command::Train,
        &["model_fair.json", "selection.json", "trajectory.jsonl", "checkpoints/"],
    )?;
    Ok(EXIT_OK)
}

fn summary_line(r: &FairnessReport) -> String {
    format!(
        "samples {} decided {} unknown {} undecided {} | ce rate {:.4} flip rate {:.4} accuracy {:.4}",
        r.samples, r.decided, r.unknown, r.undecided, r.ce_rate, r.flip_rate, r.accuracy
    )
}

pub fn cmd_verify(g: &Global) -> Result<i32> {
    let schema = read_schema(g)?;
    let net = read_model(g, &g.model, "model", &schema)?;
    let data = read_data(&schema, &g.data, "data")?;
    let (report, _) = audit_pair(&net, &schema, None, &data, &g.audit_config())?;
    report.save_json(g.out.join("verify_report.json"))?;
    report.save_csv(g.out.join("verify_report.csv"))?;
    write_manifest(g, Command::Verify, &["verify_report.json", "verify_report.csv"])?;
    println!("{}", summary_line(&report));
    if (report.unknown > 0 || report.undecided > 0) && !g.allow_unknown {
        eprintln!("{} samples hit the time limit (pass --allow-unknown to accept)", report.unknown + report.undecided);
        return Ok(EXIT_UNKNOWN);
    }
    Ok(if report.ce_rate > 0.0 { EXIT_UNFAIR } else { EXIT_OK })
}

#[derive(Debug, Serialize)]
struct PredictSummary {
    method: &'static str,
    samples: usize,
    accuracy: f64,
    raw_accuracy: f64,
    flip_rate: f64,
    total_ms: f64,
}

pub fn cmd_predict(g: &Global) -> Result<i32> {
    let schema = read_schema(g)?;
    let net = read_model(g, &g.model, "model", &schema)?;
    let data = read_data(&schema, &g.data, "data")?;
    let limits = g.limits();
    let rows = data
        .points
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let start = Instant::now();
            let label = if g.oracle {
                enumerate_predict(&net, &schema, x, g.max_solutions)
            } else {
                fair_predict(&net, &schema, None, x, limits)
            };
            let ms = if g.no_timing { 0.0 } else { start.elapsed().as_secs_f64() * 1e3 };
            match label {
                Ok(h) => Ok((net.decide(&x.0)?, h, ms)),
                Err(fairnet::Error::Undecided) => Err(CliError::Undecided(i)),
                Err(e) => Err(e.into()),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut csv = String::from("sample_id,raw_label,fair_label,flipped,solve_ms\n");
    for (i, (raw, h, ms)) in rows.iter().enumerate() {
        let _ = writeln!(csv, "{i},{raw},{h},{},{ms:.3}", raw != h);
    }
    write_file(&g.out.join("predictions.csv"), &csv)?;
    let n = rows.len().max(1) as f64;
    let summary = PredictSummary {
        method: if g.oracle { "enumeration" } else { "counting" },
        samples: rows.len(),
        accuracy: rows.iter().zip(&data.labels).filter(|((_, h, _), y)| h == *y).count() as f64 / n,
        raw_accuracy: rows.iter().zip(&data.labels).filter(|((r, _, _), y)| r == *y).count() as f64 / n,
        flip_rate: rows.iter().filter(|(r, h, _)| r != h).count() as f64 / n,
        total_ms: rows.iter().map(|r| r.2).sum(),
    };
    write_file(
        &g.out.join("predict_summary.json"),
        &serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    write_manifest(g, Command::Predict, &["predictions.csv", "predict_summary.json"])?;
    println!(
        "{} samples ({}) | accuracy {:.4} (raw {:.4}) flip rate {:.4} | {:.1} ms total",
        summary.samples, summary.method, summary.accuracy, summary.raw_accuracy, summary.flip_rate, summary.total_ms
    );
    Ok(EXIT_OK)
}

/// One row of the audit comparison table.
#[derive(Debug, Clone, Serialize)]
pub struct AuditRow {
    pub row: &'static str,
    pub model: &'static str,
    pub predictor: Predictor,
    pub ce_rate: f64,
    pub flip_rate: f64,
    pub accuracy: f64,
    pub unknown: usize,
    pub undecided: usize,
    pub avg_violation: Option<f64>,
    pub predict_ms: f64,
}

fn row(label: &'static str, model: &'static str, r: &FairnessReport) -> AuditRow {
    AuditRow {
        row: label,
        model,
        predictor: r.predictor,
        ce_rate: r.ce_rate,
        flip_rate: r.flip_rate,
        accuracy: r.accuracy,
        unknown: r.unknown,
        undecided: r.undecided,
        avg_violation: r.avg_violation,
        predict_ms: r.predict_ms_total,
    }
}

pub fn audit_table_csv(rows: &[AuditRow]) -> String {
    let mut s = String::from("row,model,predictor,ce_rate,flip_rate,accuracy,unknown,undecided,avg_violation,predict_ms\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{:.3}",
            r.row,
            r.model,
            match r.predictor {
                Predictor::Raw => "raw",
                Predictor::Fair => "fair",
            },
            r.ce_rate,
            r.flip_rate,
            r.accuracy,
            r.unknown,
            r.undecided,
            r.avg_violation.map(|v| v.to_string()).unwrap_or_default(),
            r.predict_ms
        );
    }
    s
}

pub fn cmd_audit(g: &Global) -> Result<i32> {
    let schema = read_schema(g)?;
    let raw_net = read_model(g, &g.model, "model", &schema)?;
    let test = read_data(&schema, &g.data, "data")?;
    let retrained = match (&g.retrained, &g.train_data) {
        (Some(_), _) => read_model(g, &g.retrained, "retrained", &schema)?,
        (None, Some(_)) => {
            let train = read_data(&schema, &g.train_data, "train-data")?;
            retrain(g, &raw_net, &train, &g.out)?
        }
        (None, None) => return Err(CliError::Config("audit needs --retrained or --train-data".into())),
    };
    let cfg = g.audit_config();
    let (a, b) = audit_pair(&raw_net, &schema, None, &test, &cfg)?;
    let (c, d) = audit_pair(&retrained, &schema, None, &test, &cfg)?;
    let rows = vec![
        row("a", "pretrained", &a),
        row("b", "pretrained", &b),
        row("c", "retrained", &c),
        row("d", "retrained", &d),
    ];
    for (name, r) in [("a", &a), ("b", &b), ("c", &c), ("d", &d)] {
        r.save_json(g.out.join(format!("audit_{name}.json")))?;
        r.save_csv(g.out.join(format!("audit_{name}.csv")))?;
    }
    let table = audit_table_csv(&rows);
    write_file(&g.out.join("audit_table.csv"), &table)?;
    let mut outputs = vec!["audit_table.csv"];
    outputs.extend(["audit_a.json", "audit_b.json", "audit_c.json", "audit_d.json"]);
    if g.retrained.is_none() {
        outputs.extend(["model_fair.json", "selection.json", "trajectory.jsonl", "checkpoints/"]);
    }
    write_manifest(g, Command::Audit, &outputs)?;
    println!("{:<4}{:<12}{:<10}{:>10}{:>11}{:>10}{:>12}", "row", "model", "predictor", "ce rate", "flip rate", "accuracy", "predict ms");
    for r in &rows {
        println!(
            "{:<4}{:<12}{:<10}{:>10.4}{:>11.4}{:>10.4}{:>12.1}",
            r.row,
            r.model,
            if r.predictor == Predictor::Raw { "raw" } else { "fair" },
            r.ce_rate,
            r.flip_rate,
            r.accuracy,
            r.predict_ms
        );
    }
    let limits_hit = rows.iter().map(|r| r.unknown + r.undecided).sum::<usize>();
    if limits_hit > 0 && !g.allow_unknown {
        eprintln!("{limits_hit} sample results hit the time limit (pass --allow-unknown to accept)");
        return Ok(EXIT_UNKNOWN);
    }
    Ok(EXIT_OK)
}
