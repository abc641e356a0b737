//! Rejection sampling of a layer's weights around its trained values.
//!
//! Draws are accepted only outside the ε-quantile ball of the isotropic
//! Gaussian, so the observed acceptance rate tracks `1 − q`.
//!
//! `cargo run --release --example weight_sampler`

use bayeslayers::bayes::{chi_square_quantile, GaussianLayerPosterior};
use bayeslayers::numerics::{Rng, Tensor};

fn main() -> bayeslayers::Result<()> {
    let mut rng = Rng::new(42);
    let weights = Tensor::matrix(16, 8, (0..128).map(|_| rng.gauss(0.0, 0.3)).collect::<bayeslayers::Result<_>>()?)?;
    let rms = (weights.data().iter().map(|w| w * w).sum::<f64>() / weights.len() as f64).sqrt();
    let alpha = 0.05;

    println!("layer of {} weights, RMS {rms:.4}, σ = α·RMS = {:.5}", weights.len(), alpha * rms);
    println!("{:>6} {:>12} {:>12} {:>10}", "q", "r²(q)", "accept rate", "1 − q");
    for q in [0.0, 0.05, 0.5, 0.9] {
        let post = GaussianLayerPosterior::new("fc", 0, vec![weights.clone()], alpha * rms, q)?;
        let n = 20_000;
        let accepted = (0..n).filter(|_| post.accepts(post.propose(&mut rng).1)).count();
        println!("{q:>6} {:>12.4} {:>12.4} {:>10.4}", chi_square_quantile(post.dim(), q)?, accepted as f64 / n as f64, 1.0 - q);
    }

    let post = GaussianLayerPosterior::new("fc", 0, vec![weights], alpha * rms, 0.05)?;
    let draw = post.sample(&mut rng, post.default_max_attempts())?;
    println!(
        "\none draw: radius² {:.3} > threshold {:.3} after {} attempt(s); recomputed {:.3}",
        draw.radius2,
        post.radius2_threshold(),
        draw.attempts,
        post.mahalanobis2(&draw.params)
    );
    Ok(())
}
