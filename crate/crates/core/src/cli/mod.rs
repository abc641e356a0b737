//! Config-driven command surface behind the `bayeslayers` binary.
//!
//! Every command is a function of the config file, its input files and the
//! seed. Flags override the config; `BAYESLAYERS_THREADS` supplies the worker
//! count when neither does.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{
    ablate_layers, cmd_ablate_layers, cmd_calibrate, cmd_eval, cmd_gen_data, cmd_report, cmd_train, evaluate,
    render_summary, summarize_reports, train_model, Ablation, AblationRow, Calibration, Evaluation, MetricSummary,
    ScoredSample, TrainOutcome, ABLATION_CSV, ABLATION_JSON, CALIBRATION_FILE, MODEL_FILE, REPORT_FILE, ROC_FILE,
    SCORES_FILE, SUMMARY_CSV, SUMMARY_TXT, TRAIN_LOG_FILE,
};
pub use config::{BayesSection, DatasetSpec, RunConfig, ScoringSection};

use crate::error::{Error, Result};

pub const THREADS_ENV: &str = "BAYESLAYERS_THREADS";

#[derive(Debug, Parser)]
#[command(name = "bayeslayers", version, about = "Post-hoc Bayesian layers for OOD detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory (must exist).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct WithModel {
    #[command(flatten)]
    common: Common,
    /// Model file; defaults to `<out>/model.blyr`.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the configured benchmark to the output directory.
    GenData(Common),
    /// Train on the ID split; writes model.blyr and train_log.csv.
    Train(Common),
    /// Score ID/OOD test objects; writes report.json, roc.csv, scores.csv.
    Eval(WithModel),
    /// Calibrate the ID/OOD threshold; writes calibration.json.
    Calibrate(WithModel),
    /// Evaluate every selection policy; writes ablation.csv and ablation.json.
    AblateLayers(WithModel),
    /// Merge reports into mean ± std per metric.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::from_file(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Flag or config value first, then the environment, then all cores.
fn worker_count(explicit: Option<usize>) -> Result<usize> {
    if let Some(n) = explicit {
        return Ok(n);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map(usize::from).unwrap_or(1)),
    }
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count(threads)?)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(f)
}

fn execute(command: Command) -> Result<String> {
    match command {
        Command::GenData(c) => {
            let cfg = c.resolve()?;
            let m = in_pool(cfg.threads, || cmd_gen_data(&cfg))?;
            Ok(format!(
                "wrote {} ID train / {} ID test / {} OOD test samples to {} (digest {})",
                m.counts.id_train,
                m.counts.id_test,
                m.counts.ood_test,
                cfg.out.display(),
                m.digest
            ))
        }
        Command::Train(c) => {
            let cfg = c.resolve()?;
            let t = in_pool(cfg.threads, || cmd_train(&cfg))?;
            let last = t.log.last();
            Ok(format!(
                "trained {} for {} epochs: final loss {:.6}, train accuracy {:.4}",
                cfg.architecture,
                t.log.len(),
                last.map_or(f64::NAN, |e| e.loss),
                last.map_or(f64::NAN, |e| e.accuracy)
            ))
        }
        Command::Eval(w) => {
            let cfg = w.common.resolve()?;
            let e = in_pool(cfg.threads, || cmd_eval(&cfg, w.model.as_deref()))?;
            let m = &e.report.metrics;
            Ok(format!(
                "policy {}: FPR95 {:.4}  AUROC {:.4}  ID accuracy {:.4}  gamma {:.6}",
                e.report.config.policy, m.fpr95, m.auroc, m.id_accuracy, m.gamma
            ))
        }
        Command::Calibrate(w) => {
            let cfg = w.common.resolve()?;
            let c = in_pool(cfg.threads, || cmd_calibrate(&cfg, w.model.as_deref()))?;
            Ok(format!("gamma {} retains {}/{} ID test objects", c.gamma, c.retained, c.id_count))
        }
        Command::AblateLayers(w) => {
            let cfg = w.common.resolve()?;
            let a = in_pool(cfg.threads, || cmd_ablate_layers(&cfg, w.model.as_deref()))?;
            let mut text = String::from("policy           FPR95    AUROC");
            for r in &a.rows {
                text.push_str(&format!("\n{:<16} {:.4}   {:.4}", r.policy, r.fpr95, r.auroc));
            }
            Ok(text)
        }
        Command::Report { reports, out } => Ok(cmd_report(&reports, out.as_deref())?.1),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(msg) => {
            println!("{msg}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
