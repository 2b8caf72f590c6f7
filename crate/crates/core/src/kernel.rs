//! Bond redistribution kernels of the thermalized families.
//!
//! A thermalized bond holding total content `E` is redistributed by the law of
//! one site given the sum of two independent equilibrium sites. Discrete
//! kernels are evaluated in log space and renormalized; they are built for
//! `r <= E/2` and mirrored so symmetry `nu(r|E) = nu(E-r|E)` holds exactly.

use serde::{Deserialize, Serialize};

use crate::model::{Family, ModelSpec};
use crate::special::{ln_binomial, ln_gamma};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum RedistributionKernel {
    /// Negative hypergeometric `(E, 4k-1, 2k)`: conditioned NegBin(2k) pair.
    NegHypergeom { two_k: f64 },
    /// Hypergeometric `(E, 4j, 2j)`: conditioned Binomial(2j) pair.
    Hypergeom { two_j: usize },
    /// Binomial `(E, 1/2)`: conditioned Poisson pair.
    Binom,
    /// Fraction `x ~ Beta(2k, 2k)`: conditioned Gamma(2k) pair.
    Beta { two_k: f64 },
}

impl RedistributionKernel {
    /// Forward bulk kernel of a thermalized family.
    pub fn forward(spec: &ModelSpec) -> Option<Self> {
        Some(match spec.family {
            Family::ThSIP => RedistributionKernel::NegHypergeom { two_k: spec.shape_value() },
            Family::ThSEP => RedistributionKernel::Hypergeom { two_j: spec.two_j() },
            Family::ThIRW => RedistributionKernel::Binom,
            Family::ThBEP | Family::KMP => RedistributionKernel::Beta { two_k: spec.shape_value() },
            _ => return None,
        })
    }

    /// Bulk kernel of the dual of a thermalized family (always discrete).
    pub fn dual(spec: &ModelSpec) -> Option<Self> {
        Some(match spec.family {
            Family::ThBEP | Family::KMP => RedistributionKernel::NegHypergeom { two_k: spec.shape_value() },
            _ => return Self::forward(spec),
        })
    }

    pub fn is_discrete(&self) -> bool {
        !matches!(self, RedistributionKernel::Beta { .. })
    }

    /// `nu(r | E)` for `r = 0..=E`; entries outside the support are zero.
    pub fn pmf(&self, e: usize) -> Vec<f64> {
        let ln_w = |r: usize| -> f64 {
            let (rf, ef) = (r as f64, e as f64);
            match *self {
                RedistributionKernel::NegHypergeom { two_k } => {
                    ln_rising_binom(two_k, rf) + ln_rising_binom(two_k, ef - rf)
                }
                RedistributionKernel::Hypergeom { two_j } => {
                    if r > two_j || e - r > two_j {
                        f64::NEG_INFINITY
                    } else {
                        ln_binomial(two_j as f64, rf) + ln_binomial(two_j as f64, ef - rf)
                    }
                }
                RedistributionKernel::Binom => ln_binomial(ef, rf),
                RedistributionKernel::Beta { .. } => panic!("Beta kernel is continuous"),
            }
        };
        let half: Vec<f64> = (0..=e / 2).map(ln_w).collect();
        let top = half.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut w = vec![0.0; e + 1];
        for (r, lw) in half.iter().enumerate() {
            let v = (lw - top).exp();
            w[r] = v;
            w[e - r] = v;
        }
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        w
    }

    /// Density of the redistributed fraction `x` (Beta kernel only).
    pub fn density(&self, x: f64) -> f64 {
        match *self {
            RedistributionKernel::Beta { two_k } => {
                if !(0.0..=1.0).contains(&x) {
                    return 0.0;
                }
                let a = two_k;
                ((a - 1.0) * (x.ln() + (1.0 - x).ln()) + ln_gamma(2.0 * a) - 2.0 * ln_gamma(a)).exp()
            }
            _ => panic!("discrete kernel has a pmf, not a density"),
        }
    }
}

/// `ln C(a + r - 1, r)` for real shape `a`.
fn ln_rising_binom(a: f64, r: f64) -> f64 {
    ln_gamma(a + r) - ln_gamma(a) - ln_gamma(r + 1.0)
}

/// Lazily filled cumulative tables for inverse-CDF sampling, one per bond sum `E`.
#[derive(Clone, Debug)]
pub struct KernelCache {
    kernel: RedistributionKernel,
    cdfs: Vec<Option<Vec<f64>>>,
}

impl KernelCache {
    pub fn new(kernel: RedistributionKernel) -> Self {
        assert!(kernel.is_discrete(), "only discrete kernels are cached");
        KernelCache { kernel, cdfs: Vec::new() }
    }

    pub fn kernel(&self) -> RedistributionKernel {
        self.kernel
    }

    /// Outcome `r` for a uniform draw `u in [0, 1)` given bond sum `e`.
    pub fn sample(&mut self, e: usize, u: f64) -> usize {
        if e >= self.cdfs.len() {
            self.cdfs.resize(e + 1, None);
        }
        let kernel = self.kernel;
        let cdf = self.cdfs[e].get_or_insert_with(|| cumulative(&kernel.pmf(e)));
        inverse_cdf(cdf, u)
    }
}

/// Running sums of a pmf with the last entry pinned to 1.
pub fn cumulative(pmf: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut cdf: Vec<f64> = pmf
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect();
    if let Some(last) = cdf.last_mut() {
        *last = 1.0;
    }
    cdf
}

/// First index whose cumulative value exceeds `u`, skipping zero-mass entries.
pub fn inverse_cdf(cdf: &[f64], u: f64) -> usize {
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EquilibriumMarginal;

    #[test]
    fn thirw_two_particles() {
        let p = RedistributionKernel::Binom.pmf(2);
        for (got, want) in p.iter().zip([0.25, 0.5, 0.25]) {
            assert!((got - want).abs() < 1e-14);
        }
    }

    #[test]
    fn thsep_single_particle_is_fair() {
        let p = RedistributionKernel::Hypergeom { two_j: 1 }.pmf(1);
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
        let q = RedistributionKernel::Hypergeom { two_j: 1 }.pmf(2);
        assert_eq!(q, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn neg_hypergeom_unit_shape_is_uniform() {
        for e in 0..12 {
            let p = RedistributionKernel::NegHypergeom { two_k: 1.0 }.pmf(e);
            for v in p {
                assert!((v - 1.0 / (e as f64 + 1.0)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn kernels_are_conditioned_marginals() {
        let cases = [
            (RedistributionKernel::NegHypergeom { two_k: 1.7 }, EquilibriumMarginal::NegativeBinomial { r: 1.7, p: 0.35 }),
            (RedistributionKernel::Hypergeom { two_j: 3 }, EquilibriumMarginal::Binomial { n: 3, p: 0.6 }),
            (RedistributionKernel::Binom, EquilibriumMarginal::Poisson { lambda: 1.3 }),
        ];
        for (kernel, law) in cases {
            let e_max = if let RedistributionKernel::Hypergeom { two_j } = kernel { 2 * two_j } else { 8 };
            for e in 0..=e_max {
                let nu = kernel.pmf(e);
                let joint: Vec<f64> = (0..=e)
                    .map(|r| (law.ln_pmf(r as u64) + law.ln_pmf((e - r) as u64)).exp())
                    .collect();
                let z: f64 = joint.iter().sum();
                for r in 0..=e {
                    assert!((nu[r] - joint[r] / z).abs() < 1e-12, "{kernel:?} e={e} r={r}");
                }
            }
        }
    }

    #[test]
    fn beta_density_integrates_to_one() {
        let k = RedistributionKernel::Beta { two_k: 2.5 };
        let n = 20_000;
        let h = 1.0 / n as f64;
        let s: f64 = (0..n).map(|i| k.density((i as f64 + 0.5) * h) * h).sum();
        assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn inverse_cdf_skips_empty_outcomes() {
        let cdf = cumulative(&[0.0, 1.0, 0.0]);
        assert_eq!(inverse_cdf(&cdf, 0.0), 1);
        assert_eq!(inverse_cdf(&cdf, 0.999), 1);
    }
}
