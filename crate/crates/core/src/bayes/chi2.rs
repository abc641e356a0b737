use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::gamma_lr;

use crate::error::{Error, Result};

/// Regularized lower incomplete gamma as the chi-square CDF with `m` degrees of freedom.
pub fn chi_square_cdf(m: usize, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        gamma_lr(m as f64 / 2.0, x / 2.0)
    }
}

/// Value `r²` with `P(χ²_m ≤ r²) = q`.
///
/// Starts from the Wilson–Hilferty cube approximation, brackets the root and
/// bisects on the exact CDF down to floating-point resolution.
pub fn chi_square_quantile(m: usize, q: f64) -> Result<f64> {
    if m == 0 {
        return Err(Error::invalid("chi-square degrees of freedom must be positive"));
    }
    if !(0.0..1.0).contains(&q) {
        return Err(Error::invalid(format!("quantile level must lie in [0, 1), got {q}")));
    }
    if q == 0.0 {
        return Ok(0.0);
    }
    let k = m as f64;
    let z = Normal::standard().inverse_cdf(q);
    let c = 2.0 / (9.0 * k);
    let guess = (k * (1.0 - c + z * c.sqrt()).powi(3)).max(1e-12);

    let (mut lo, mut hi) = (guess, guess);
    while chi_square_cdf(m, lo) > q {
        lo /= 2.0;
        if lo < 1e-300 {
            lo = 0.0;
            break;
        }
    }
    while chi_square_cdf(m, hi) < q {
        hi = hi * 2.0 + 1.0;
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if chi_square_cdf(m, mid) < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
