//! Train the micro-cnn on the synthetic shapes benchmark: class plus box.
//!
//! `cargo run --release --example shapes_detection [n_per_class]`

use bayeslayers::bayes::{build_posteriors, mc_predict, select_layers, EnsembleConfig, SelectionPolicy};
use bayeslayers::cli::{train_model, DatasetSpec, RunConfig};
use bayeslayers::datasets::ShapesParams;
use bayeslayers::evalmetrics::iou;
use bayeslayers::scoring::{score_record, ScoringConfig};

fn main() -> bayeslayers::Result<()> {
    let n = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(ShapesParams::default().n_per_class);
    let params = ShapesParams { n_per_class: n, ..Default::default() };
    let cfg = RunConfig { dataset: DatasetSpec::Shapes(params), architecture: "micro-cnn".into(), ..Default::default() };
    let pairing = cfg.load_dataset()?;
    let outcome = train_model(&cfg, &pairing)?;
    let last = outcome.log.last().expect("at least one epoch");
    println!("trained: loss {:.4}, train accuracy {:.3}", last.loss, last.accuracy);

    let model = outcome.model;
    let layers = select_layers(&model, &SelectionPolicy::ConvAll.into())?;
    let posteriors = build_posteriors(&model, &layers, cfg.bayes.alpha, cfg.bayes.epsilon_quantile)?;
    let ens = EnsembleConfig { samples: cfg.bayes.mc_samples, seed: cfg.seed, max_rejection_attempts: None };
    println!("Bayesian layers: {}", layers.join(", "));

    println!("\n{:<5} {:>5} {:>5} {:>28} {:>6} {:>8} {:>8}", "split", "true", "pred", "box", "IoU", "S", "std(S)");
    let shown = pairing.id_test.iter().step_by(29).map(|s| ("ID", s)).chain(pairing.ood_test.iter().step_by(29).map(|s| ("OOD", s)));
    for (i, (split, s)) in shown.enumerate() {
        let preds = mc_predict(&model, &posteriors, &s.input, &ens)?;
        let r = score_record(i, &preds, &ScoringConfig::default(), split == "ID")?;
        let b = r.predicted_box.unwrap_or([f64::NAN; 4]);
        let overlap = match (split, s.bbox) {
            ("ID", Some(t)) => format!("{:.3}", iou(&b, &t)?),
            _ => "-".into(),
        };
        println!(
            "{split:<5} {:>5} {:>5} {:>28} {overlap:>6} {:>8.5} {:>8.5}",
            s.label,
            r.predicted_class,
            format!("[{:.1}, {:.1}, {:.1}, {:.1}]", b[0], b[1], b[2], b[3]),
            r.score,
            r.score_std
        );
    }
    Ok(())
}
