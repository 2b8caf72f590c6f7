//! Small special-function helpers shared by kernels, marginals and duality functions.

pub use statrs::function::gamma::ln_gamma;

/// `ln C(n, r)` for real `n` via log-gamma.
pub fn ln_binomial(n: f64, r: f64) -> f64 {
    ln_gamma(n + 1.0) - ln_gamma(r + 1.0) - ln_gamma(n - r + 1.0)
}

/// Falling factorial `n (n-1) ... (n-m+1)`; zero when `m > n`.
pub fn falling(n: u64, m: u64) -> f64 {
    if m > n {
        return 0.0;
    }
    (0..m).fold(1.0, |acc, t| acc * (n - t) as f64)
}

/// Rising factorial (Pochhammer) `a (a+1) ... (a+m-1)` = Gamma(a+m)/Gamma(a).
pub fn rising(a: f64, m: u64) -> f64 {
    (0..m).fold(1.0, |acc, t| acc * (a + t as f64))
}

/// Real-valued falling factorial `a (a-1) ... (a-m+1)` = Gamma(a+1)/Gamma(a+1-m).
pub fn falling_real(a: f64, m: u64) -> f64 {
    (0..m).fold(1.0, |acc, t| acc * (a - t as f64))
}

/// Exact binomial coefficient `C(n, r)` (saturating on overflow).
pub fn binom_u64(n: u64, r: u64) -> u64 {
    if r > n {
        return 0;
    }
    let r = r.min(n - r);
    let mut acc: u128 = 1;
    for t in 0..r {
        acc = acc * (n - t) as u128 / (t + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

/// `m!` as a float.
pub fn factorial(m: u64) -> f64 {
    falling(m, m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pochhammer_matches_log_gamma() {
        for &a in &[0.5, 1.0, 2.5, 7.0] {
            for m in 0..8u64 {
                let lg = (ln_gamma(a + m as f64) - ln_gamma(a)).exp();
                assert!((rising(a, m) - lg).abs() < 1e-12 * lg.max(1.0));
            }
        }
    }

    #[test]
    fn falling_vanishes_past_n() {
        assert_eq!(falling(3, 4), 0.0);
        assert_eq!(falling(5, 2), 20.0);
        assert_eq!(factorial(5), 120.0);
        assert!((falling_real(3.0, 2) - 6.0).abs() < 1e-15);
    }

    #[test]
    fn ln_binomial_small_values() {
        assert!((ln_binomial(5.0, 2.0).exp() - 10.0).abs() < 1e-10);
    }
}
