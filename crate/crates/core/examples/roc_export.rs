//! FPR@95%TPR, AUROC and the ROC curve as CSV for two score populations.
//!
//! `cargo run --example roc_export > roc.csv`

use bayeslayers::evalmetrics::{auroc, fpr_at_tpr, roc_curve, trapezoid_area, write_roc_csv, ScoreSet};
use bayeslayers::numerics::Rng;
use bayeslayers::scoring::uncertainty_score;

fn main() -> bayeslayers::Result<()> {
    let mut rng = Rng::new(7);
    // ID energies sit lower than OOD energies; S maps both into (0, 1).
    let id: Vec<f64> = (0..200).map(|_| uncertainty_score(rng.standard_normal() - 1.5, 1.0)).collect();
    let ood: Vec<f64> = (0..150).map(|_| uncertainty_score(rng.standard_normal() + 0.5, 1.0)).collect();
    let scores = ScoreSet::new(id, ood);

    let fpr = fpr_at_tpr(&scores, 0.95)?;
    let curve = roc_curve(&scores)?;
    eprintln!("FPR95 {:.4} at γ = {:.6}", fpr.fpr, fpr.gamma);
    eprintln!("AUROC {:.6} (trapezoid {:.6}), {} curve points", auroc(&scores)?, trapezoid_area(&curve), curve.len());
    write_roc_csv(&curve, std::io::stdout().lock())
}
