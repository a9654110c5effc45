//! Standard normal helpers.

use statrs::distribution::{ContinuousCDF, Normal};

fn standard() -> Normal {
    Normal::standard()
}

/// `Phi^{-1}(p)` for `p` in `(0, 1)`.
pub fn norm_ppf(p: f64) -> f64 {
    standard().inverse_cdf(p)
}

pub fn norm_cdf(x: f64) -> f64 {
    standard().cdf(x)
}

/// Two-sided critical value for a confidence level in `(0, 1)`.
pub fn two_sided_z(level: f64) -> f64 {
    norm_ppf(1.0 - (1.0 - level) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_quantiles() {
        assert!((norm_ppf(0.95) - 1.6448536269514722).abs() < 1e-12);
        assert!((two_sided_z(0.95) - 1.959963984540054).abs() < 1e-12);
        assert!((norm_cdf(1.959963984540054) - 0.975).abs() < 1e-10);
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-15);
    }
}
