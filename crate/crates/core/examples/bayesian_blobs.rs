//! Deterministic vs Bayesian-layer OOD detection on the blobs benchmark.
//!
//! `cargo run --release --example bayesian_blobs [weight_decay]`

use bayeslayers::bayes::SelectionPolicy;
use bayeslayers::cli::{evaluate, train_model, RunConfig};

fn main() -> bayeslayers::Result<()> {
    let mut cfg = RunConfig { architecture: "micro-mlp".into(), ..Default::default() };
    if let Some(wd) = std::env::args().nth(1) {
        cfg.train.weight_decay = wd.parse().map_err(|e| bayeslayers::Error::Config(format!("weight_decay: {e}")))?;
    }
    let pairing = cfg.load_dataset()?;
    let model = train_model(&cfg, &pairing)?.model;

    println!("{:<12} {:>8} {:>8} {:>9} {:>9} {:>9}", "policy", "FPR95", "AUROC", "S(ID)", "S(OOD)", "std>0");
    for policy in [SelectionPolicy::None, SelectionPolicy::LinearAll, SelectionPolicy::Full] {
        let eval = evaluate(&model, &pairing, &cfg, &policy.into())?;
        let m = &eval.report.metrics;
        println!(
            "{:<12} {:>8.4} {:>8.4} {:>9.6} {:>9.6} {:>9.3}",
            policy.as_str(),
            m.fpr95,
            m.auroc,
            m.mean_score_id,
            m.mean_score_ood,
            m.score_std_nonzero_fraction
        );
    }
    Ok(())
}
