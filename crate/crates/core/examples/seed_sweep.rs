//! Repeat an evaluation over several run seeds and aggregate the reports.
//!
//! `cargo run --release --example seed_sweep [seeds]`

use bayeslayers::bayes::SelectionPolicy;
use bayeslayers::cli::{evaluate, render_summary, summarize_reports, train_model, RunConfig};

fn main() -> bayeslayers::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(5);
    let mut cfg = RunConfig { architecture: "micro-mlp".into(), ..Default::default() };
    cfg.bayes.policy = SelectionPolicy::LinearAll;
    let pairing = cfg.load_dataset()?;

    let mut reports = Vec::new();
    for seed in 0..seeds {
        let cfg = RunConfig { seed, ..cfg.clone() };
        let model = train_model(&cfg, &pairing)?.model;
        let eval = evaluate(&model, &pairing, &cfg, &cfg.bayes.selection())?;
        println!("seed {seed}: FPR95 {:.4}  AUROC {:.4}", eval.report.metrics.fpr95, eval.report.metrics.auroc);
        reports.push(eval.report);
    }
    println!();
    print!("{}", render_summary(&summarize_reports(&reports)?, &reports[0].config));
    Ok(())
}
