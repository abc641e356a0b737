//! Energy, uncertainty score and threshold calibration on hand-written logits.
//!
//! `cargo run --example energy_scoring`

use bayeslayers::scoring::{calibrate_gamma, classify, energy, uncertainty_score, Decision};

fn main() -> bayeslayers::Result<()> {
    let objects: [(&str, [f64; 3]); 5] = [
        ("confident cat", [9.0, 0.5, -1.0]),
        ("confident dog", [0.2, 7.5, 0.1]),
        ("split vote", [2.0, 2.0, 1.5]),
        ("flat", [0.1, 0.0, -0.1]),
        ("far away", [-3.0, -2.5, -4.0]),
    ];
    println!("{:<14} {:>9} {:>9} {:>9} {:>9}", "object", "E(T=1)", "S(φ=1)", "S(φ=0.5)", "S(T=2)");
    let mut scores = Vec::new();
    for (name, logits) in &objects {
        let e = energy(logits, 1.0)?;
        let s = uncertainty_score(e, 1.0);
        let soft = uncertainty_score(e, 0.5);
        let warm = uncertainty_score(energy(logits, 2.0)?, 1.0);
        println!("{name:<14} {e:>9.4} {s:>9.6} {soft:>9.6} {warm:>9.6}");
        scores.push(s);
    }

    // Treat the first three as the ID reference set.
    let gamma = calibrate_gamma(&scores[..3], 0.95)?;
    println!("\nγ retaining ≥95% of the ID reference set: {gamma:.6}");
    for ((name, _), s) in objects.iter().zip(&scores) {
        let verdict = match classify(*s, gamma) {
            Decision::Id => "ID",
            Decision::Ood => "OOD",
        };
        println!("{name:<14} → {verdict}");
    }
    Ok(())
}
