//! Which layers should be Bayesian? Every selection policy on one trained model.
//!
//! `cargo run --release --example layer_ablation [n_per_class]`

use bayeslayers::cli::{ablate_layers, train_model, DatasetSpec, RunConfig};
use bayeslayers::datasets::ShapesParams;

fn main() -> bayeslayers::Result<()> {
    let n = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(ShapesParams::default().n_per_class);
    let params = ShapesParams { n_per_class: n, ..Default::default() };
    let cfg = RunConfig { dataset: DatasetSpec::Shapes(params), architecture: "micro-cnn".into(), ..Default::default() };
    let pairing = cfg.load_dataset()?;
    let model = train_model(&cfg, &pairing)?.model;

    let ablation = ablate_layers(&model, &pairing, &cfg)?;
    println!("{:<16} {:<28} {:>7} {:>7} {:>9} {:>9}", "policy", "layers", "FPR95", "AUROC", "S(ID)", "S(OOD)");
    for r in &ablation.rows {
        println!(
            "{:<16} {:<28} {:>7.4} {:>7.4} {:>9.5} {:>9.5}",
            r.policy,
            if r.layers.is_empty() { "-".to_string() } else { r.layers.join(",") },
            r.fpr95,
            r.auroc,
            r.mean_score_id,
            r.mean_score_ood
        );
    }
    Ok(())
}
