//! Model families, parameters, reservoir densities and equilibrium marginals.
//!
//! Every family lives on sites `1..=L` and is coupled to a left and a right
//! reservoir. Particle families (SIP, SEP, IRW and their thermalized variants)
//! carry birth/death rate constants `(alpha, gamma)` on the left and
//! `(delta, beta)` on the right. Energy families (BEP, KMP, ThBEP) carry
//! temperatures `(T_a, T_b)`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::special::{falling_real, ln_gamma, rising};

/// The nine model families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    SIP,
    SEP,
    IRW,
    BEP,
    KMP,
    ThSIP,
    ThSEP,
    ThIRW,
    ThBEP,
}

impl Family {
    pub const ALL: [Family; 9] = [
        Family::SIP,
        Family::SEP,
        Family::IRW,
        Family::BEP,
        Family::KMP,
        Family::ThSIP,
        Family::ThSEP,
        Family::ThIRW,
        Family::ThBEP,
    ];

    /// Occupation-number families with a discrete state space.
    pub fn is_discrete(self) -> bool {
        matches!(
            self,
            Family::SIP | Family::SEP | Family::IRW | Family::ThSIP | Family::ThSEP | Family::ThIRW
        )
    }

    /// Families driven by temperatures rather than rate constants.
    pub fn is_energy(self) -> bool {
        matches!(self, Family::BEP | Family::KMP | Family::ThBEP)
    }

    /// Families with instantaneous bond redistribution and resampled boundaries.
    pub fn is_thermalized(self) -> bool {
        matches!(
            self,
            Family::KMP | Family::ThSIP | Family::ThSEP | Family::ThIRW | Family::ThBEP
        )
    }

    /// Whether the family takes a shape parameter (2k or 2j).
    pub fn has_shape(self) -> bool {
        !matches!(self, Family::IRW | Family::ThIRW | Family::KMP)
    }

    /// The non-thermalized family whose equilibrium law the thermalized one redistributes by.
    pub fn base(self) -> Family {
        match self {
            Family::ThSIP => Family::SIP,
            Family::ThSEP => Family::SEP,
            Family::ThIRW => Family::IRW,
            Family::ThBEP | Family::KMP => Family::BEP,
            f => f,
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| format!("{f:?}").eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                Error::Config(format!(
                    "field `family`: unknown family {s:?} (expected one of SIP, SEP, IRW, BEP, KMP, ThSIP, ThSEP, ThIRW, ThBEP)"
                ))
            })
    }
}

/// Boundary parameters: birth/death rate constants or bath temperatures.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum BoundaryParams {
    Rates {
        alpha: f64,
        gamma: f64,
        delta: f64,
        beta: f64,
    },
    Temperatures {
        t_a: f64,
        t_b: f64,
    },
}

/// A fully specified model instance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    /// Number of bulk sites.
    pub l: usize,
    /// `2k` for SIP/BEP/ThSIP/ThBEP, `2j` for SEP/ThSEP, absent otherwise.
    pub shape: Option<f64>,
    pub boundary: BoundaryParams,
}

impl ModelSpec {
    /// Particle-family constructor.
    pub fn with_rates(
        family: Family,
        l: usize,
        shape: Option<f64>,
        alpha: f64,
        gamma: f64,
        delta: f64,
        beta: f64,
    ) -> Self {
        ModelSpec {
            family,
            l,
            shape,
            boundary: BoundaryParams::Rates {
                alpha,
                gamma,
                delta,
                beta,
            },
        }
    }

    /// Energy-family constructor.
    pub fn with_temperatures(family: Family, l: usize, shape: Option<f64>, t_a: f64, t_b: f64) -> Self {
        ModelSpec {
            family,
            l,
            shape,
            boundary: BoundaryParams::Temperatures { t_a, t_b },
        }
    }

    /// `(alpha, gamma, delta, beta)`; panics for energy families.
    pub fn rates(&self) -> (f64, f64, f64, f64) {
        match self.boundary {
            BoundaryParams::Rates {
                alpha,
                gamma,
                delta,
                beta,
            } => (alpha, gamma, delta, beta),
            BoundaryParams::Temperatures { .. } => panic!("{:?} has temperatures, not rates", self.family),
        }
    }

    /// `(T_a, T_b)`; panics for particle families.
    pub fn temperatures(&self) -> (f64, f64) {
        match self.boundary {
            BoundaryParams::Temperatures { t_a, t_b } => (t_a, t_b),
            BoundaryParams::Rates { .. } => panic!("{:?} has rates, not temperatures", self.family),
        }
    }

    /// Shape parameter, with KMP mapped to its BEP value `2k = 1`.
    pub fn shape_value(&self) -> f64 {
        match self.family {
            Family::KMP => 1.0,
            Family::IRW | Family::ThIRW => 0.0,
            _ => self.shape.expect("validated spec carries a shape"),
        }
    }

    /// `2j` as an integer for SEP/ThSEP.
    pub fn two_j(&self) -> usize {
        self.shape_value().round() as usize
    }

    /// Checks every domain constraint, returning the spec unchanged on success.
    pub fn validate(self) -> Result<Self> {
        validate(self)
    }
}

/// Validates a spec, returning it unchanged if all constraints hold.
pub fn validate(spec: ModelSpec) -> Result<ModelSpec> {
    if spec.l == 0 {
        return Err(domain("L must be a positive integer"));
    }
    let fam = spec.family;
    match (fam.has_shape(), spec.shape) {
        (true, None) => return Err(domain(format!("{fam:?} requires a shape parameter"))),
        (false, Some(_)) => return Err(domain(format!("{fam:?} takes no shape parameter"))),
        (true, Some(s)) if !(s.is_finite() && s > 0.0) => {
            return Err(domain(format!("shape must be a positive real (got {s})")))
        }
        _ => {}
    }
    if matches!(fam, Family::SEP | Family::ThSEP) {
        let s = spec.shape.unwrap();
        if (s - s.round()).abs() > 1e-12 {
            return Err(domain(format!("2j must be integer (got 2j = {s})")));
        }
    }
    match (fam.is_energy(), spec.boundary) {
        (true, BoundaryParams::Temperatures { t_a, t_b }) => {
            if !(t_a > 0.0 && t_b > 0.0 && t_a.is_finite() && t_b.is_finite()) {
                return Err(domain("temperatures T_a, T_b must be positive"));
            }
        }
        (false, BoundaryParams::Rates { alpha, gamma, delta, beta }) => {
            for (name, v) in [("alpha", alpha), ("gamma", gamma), ("delta", delta), ("beta", beta)] {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(domain(format!("rate {name} must be positive (got {v})")));
                }
            }
            if matches!(fam, Family::SIP | Family::ThSIP) {
                if gamma <= alpha {
                    return Err(domain("SIP requires gamma > alpha (γ ≤ α)"));
                }
                if beta <= delta {
                    return Err(domain("SIP requires beta > delta (β ≤ δ)"));
                }
            }
        }
        (true, _) => return Err(domain(format!("{fam:?} needs temperatures T_a, T_b, not rates"))),
        (false, _) => return Err(domain(format!("{fam:?} needs rates alpha, gamma, delta, beta, not temperatures"))),
    }
    Ok(spec)
}

/// Mean occupations (or mean energies) imposed by the two reservoirs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReservoirDensities {
    pub rho_a: f64,
    pub rho_b: f64,
}

/// Reservoir densities: the mean of each reservoir's stationary marginal.
pub fn reservoir_densities(spec: &ModelSpec) -> ReservoirDensities {
    let (a, b) = reservoir_marginals(spec);
    ReservoirDensities {
        rho_a: a.mean(),
        rho_b: b.mean(),
    }
}

/// Single-site law of a product stationary measure or of a reservoir.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum EquilibriumMarginal {
    /// `C(r+n-1, n) p^n (1-p)^r`, shape `r = 2k`.
    NegativeBinomial { r: f64, p: f64 },
    /// `C(n, m) p^m (1-p)^(n-m)`.
    Binomial { n: usize, p: f64 },
    Poisson { lambda: f64 },
    /// Shape/scale parametrization, mean `shape * scale`.
    Gamma { shape: f64, scale: f64 },
}

impl EquilibriumMarginal {
    pub fn is_discrete(&self) -> bool {
        !matches!(self, EquilibriumMarginal::Gamma { .. })
    }

    /// Closed-form mean.
    pub fn mean(&self) -> f64 {
        match *self {
            EquilibriumMarginal::NegativeBinomial { r, p } => r * p / (1.0 - p),
            EquilibriumMarginal::Binomial { n, p } => n as f64 * p,
            EquilibriumMarginal::Poisson { lambda } => lambda,
            EquilibriumMarginal::Gamma { shape, scale } => shape * scale,
        }
    }

    /// Closed-form variance.
    pub fn variance(&self) -> f64 {
        match *self {
            EquilibriumMarginal::NegativeBinomial { r, p } => r * p / ((1.0 - p) * (1.0 - p)),
            EquilibriumMarginal::Binomial { n, p } => n as f64 * p * (1.0 - p),
            EquilibriumMarginal::Poisson { lambda } => lambda,
            EquilibriumMarginal::Gamma { shape, scale } => shape * scale * scale,
        }
    }

    /// `E[X (X-1) ... (X-m+1)]` for discrete laws, `E[X^m]` for Gamma.
    pub fn factorial_moment(&self, m: u64) -> f64 {
        match *self {
            EquilibriumMarginal::NegativeBinomial { r, p } => rising(r, m) * (p / (1.0 - p)).powi(m as i32),
            EquilibriumMarginal::Binomial { n, p } => falling_real(n as f64, m) * p.powi(m as i32),
            EquilibriumMarginal::Poisson { lambda } => lambda.powi(m as i32),
            EquilibriumMarginal::Gamma { shape, scale } => rising(shape, m) * scale.powi(m as i32),
        }
    }

    /// Log probability mass at `n` (discrete laws only).
    pub fn ln_pmf(&self, n: u64) -> f64 {
        let x = n as f64;
        match *self {
            EquilibriumMarginal::NegativeBinomial { r, p } => {
                ln_gamma(r + x) - ln_gamma(r) - ln_gamma(x + 1.0) + x * p.ln() + r * (1.0 - p).ln()
            }
            EquilibriumMarginal::Binomial { n: big, p } => {
                if n as usize > big {
                    return f64::NEG_INFINITY;
                }
                crate::special::ln_binomial(big as f64, x) + x * p.ln() + (big as f64 - x) * (1.0 - p).ln()
            }
            EquilibriumMarginal::Poisson { lambda } => x * lambda.ln() - lambda - ln_gamma(x + 1.0),
            EquilibriumMarginal::Gamma { .. } => panic!("Gamma marginal has a density, not a pmf"),
        }
    }

    /// Density of the Gamma law at `z`.
    pub fn density(&self, z: f64) -> f64 {
        match *self {
            EquilibriumMarginal::Gamma { shape, scale } => {
                if z <= 0.0 {
                    return 0.0;
                }
                ((shape - 1.0) * z.ln() - z / scale - shape * scale.ln() - ln_gamma(shape)).exp()
            }
            _ => self.ln_pmf(z.round() as u64).exp(),
        }
    }

    /// Probability masses on `0..=cap` by stable recurrence, plus the mass above `cap`.
    pub fn pmf_vec(&self, cap: usize) -> (Vec<f64>, f64) {
        let mut out = Vec::with_capacity(cap + 1);
        let mut term = self.pmf_start();
        let mut n = 0u64;
        while out.len() <= cap {
            out.push(term);
            term = self.next_term(term, n);
            n += 1;
        }
        let tail = self.tail_from(term, n);
        (out, tail)
    }

    /// Smallest cap (found by doubling) whose tail mass is below `tol`.
    pub fn adaptive_cap(&self, tol: f64) -> usize {
        if let EquilibriumMarginal::Binomial { n, .. } = *self {
            return n;
        }
        let mut cap = 8usize;
        loop {
            let (_, tail) = self.pmf_vec(cap);
            if tail < tol {
                // Shrink back to the smallest cap meeting the bound.
                let (pmf, _) = self.pmf_vec(cap);
                let mut t = tail;
                let mut c = cap;
                while c > 0 && t + pmf[c] < tol {
                    t += pmf[c];
                    c -= 1;
                }
                return c;
            }
            cap *= 2;
            assert!(cap < 1 << 24, "marginal tail does not decay");
        }
    }

    fn pmf_start(&self) -> f64 {
        match *self {
            EquilibriumMarginal::NegativeBinomial { r, p } => (1.0 - p).powf(r),
            EquilibriumMarginal::Binomial { n, p } => (1.0 - p).powi(n as i32),
            EquilibriumMarginal::Poisson { lambda } => (-lambda).exp(),
            EquilibriumMarginal::Gamma { .. } => panic!("Gamma marginal has no pmf"),
        }
    }

    fn next_term(&self, term: f64, n: u64) -> f64 {
        let x = n as f64;
        match *self {
            EquilibriumMarginal::NegativeBinomial { r, p } => term * (r + x) / (x + 1.0) * p,
            EquilibriumMarginal::Binomial { n: big, p } => {
                if n as usize >= big {
                    0.0
                } else {
                    term * (big as f64 - x) / (x + 1.0) * p / (1.0 - p)
                }
            }
            EquilibriumMarginal::Poisson { lambda } => term * lambda / (x + 1.0),
            EquilibriumMarginal::Gamma { .. } => unreachable!(),
        }
    }

    fn tail_from(&self, mut term: f64, mut n: u64) -> f64 {
        let mut tail = 0.0;
        for _ in 0..1_000_000 {
            tail += term;
            if term == 0.0 || (term < 1e-30 * tail.max(1e-300) && n > 0) {
                break;
            }
            let next = self.next_term(term, n);
            // Geometric-ratio bound once terms are decreasing.
            if next < term && next / term < 0.5 && next < 1e-20 {
                tail += next / (1.0 - next / term);
                break;
            }
            term = next;
            n += 1;
        }
        tail
    }
}

/// Stationary single-site marginal of the equilibrium product measure.
///
/// Particle families need `alpha*beta = gamma*delta` (both reservoirs impose
/// the same fugacity); energy families need `T_a = T_b`.
pub fn equilibrium_marginal(spec: &ModelSpec) -> Result<EquilibriumMarginal> {
    let spec = validate(*spec)?;
    if spec.family.is_energy() {
        let (ta, tb) = spec.temperatures();
        if (ta - tb).abs() > 1e-12 * ta.max(tb) {
            return Err(Error::NotEquilibrium(format!("T_a = {ta} differs from T_b = {tb}")));
        }
    } else {
        let (a, g, d, b) = spec.rates();
        if (a * b - g * d).abs() > 1e-12 * (a * b).max(g * d) {
            return Err(Error::NotEquilibrium(format!(
                "alpha*beta - gamma*delta = {} is not zero",
                a * b - g * d
            )));
        }
    }
    Ok(reservoir_marginals(&spec).0)
}

/// Stationary laws of the left and right reservoirs taken in isolation.
///
/// For thermalized families these are the laws boundary sites are resampled
/// from. ThBEP resamples from Gamma(2k, T) (so k = 1/2 gives KMP's
/// exponential bath), whereas the BEP bath is Gamma(2k, 2T).
pub fn reservoir_marginals(spec: &ModelSpec) -> (EquilibriumMarginal, EquilibriumMarginal) {
    use EquilibriumMarginal as M;
    match spec.family {
        Family::SIP | Family::ThSIP => {
            let (a, g, d, b) = spec.rates();
            let r = spec.shape_value();
            (M::NegativeBinomial { r, p: a / g }, M::NegativeBinomial { r, p: d / b })
        }
        Family::SEP | Family::ThSEP => {
            let (a, g, d, b) = spec.rates();
            let n = spec.two_j();
            (M::Binomial { n, p: a / (a + g) }, M::Binomial { n, p: d / (d + b) })
        }
        Family::IRW | Family::ThIRW => {
            let (a, g, d, b) = spec.rates();
            (M::Poisson { lambda: a / g }, M::Poisson { lambda: d / b })
        }
        Family::BEP => {
            let (ta, tb) = spec.temperatures();
            let s = spec.shape_value();
            (M::Gamma { shape: s, scale: 2.0 * ta }, M::Gamma { shape: s, scale: 2.0 * tb })
        }
        Family::ThBEP | Family::KMP => {
            let (ta, tb) = spec.temperatures();
            let s = spec.shape_value();
            (M::Gamma { shape: s, scale: ta }, M::Gamma { shape: s, scale: tb })
        }
    }
}

/// Human-editable configuration document (one model per document).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: String,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, rename = "T_a", skip_serializing_if = "Option::is_none")]
    pub t_a: Option<f64>,
    #[serde(default, rename = "T_b", skip_serializing_if = "Option::is_none")]
    pub t_b: Option<f64>,
}

impl ModelConfig {
    /// Parses a TOML document; errors carry the offending line and field.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Converts to a validated spec, naming the missing or extra field on failure.
    pub fn to_spec(&self) -> Result<ModelSpec> {
        let family: Family = self.family.parse()?;
        let boundary = if family.is_energy() {
            if self.alpha.or(self.gamma).or(self.delta).or(self.beta).is_some() {
                return Err(Error::Config(format!("{family:?} takes T_a and T_b, not alpha/gamma/delta/beta")));
            }
            let need = |v: Option<f64>, name: &str| v.ok_or_else(|| Error::Config(format!("missing field `{name}`")));
            BoundaryParams::Temperatures {
                t_a: need(self.t_a, "T_a")?,
                t_b: need(self.t_b, "T_b")?,
            }
        } else {
            if self.t_a.or(self.t_b).is_some() {
                return Err(Error::Config(format!("{family:?} takes alpha/gamma/delta/beta, not T_a/T_b")));
            }
            let need = |v: Option<f64>, name: &str| v.ok_or_else(|| Error::Config(format!("missing field `{name}`")));
            BoundaryParams::Rates {
                alpha: need(self.alpha, "alpha")?,
                gamma: need(self.gamma, "gamma")?,
                delta: need(self.delta, "delta")?,
                beta: need(self.beta, "beta")?,
            }
        };
        validate(ModelSpec {
            family,
            l: self.l,
            shape: self.shape,
            boundary,
        })
    }
}

impl From<&ModelSpec> for ModelConfig {
    fn from(spec: &ModelSpec) -> Self {
        let mut c = ModelConfig {
            family: format!("{:?}", spec.family),
            l: spec.l,
            shape: spec.shape,
            ..Default::default()
        };
        match spec.boundary {
            BoundaryParams::Rates {
                alpha,
                gamma,
                delta,
                beta,
            } => {
                c.alpha = Some(alpha);
                c.gamma = Some(gamma);
                c.delta = Some(delta);
                c.beta = Some(beta);
            }
            BoundaryParams::Temperatures { t_a, t_b } => {
                c.t_a = Some(t_a);
                c.t_b = Some(t_b);
            }
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sip(a: f64, g: f64, d: f64, b: f64) -> ModelSpec {
        ModelSpec::with_rates(Family::SIP, 3, Some(1.0), a, g, d, b)
    }

    #[test]
    fn validate_examples() {
        assert!(sip(1.0, 3.0, 1.0, 2.0).validate().is_ok());
        let err = sip(3.0, 1.0, 1.0, 2.0).validate().unwrap_err().to_string();
        assert!(err.contains("γ ≤ α"), "{err}");
        let sep = ModelSpec::with_rates(Family::SEP, 3, Some(1.5), 1.0, 1.0, 1.0, 1.0);
        assert!(sep.validate().unwrap_err().to_string().contains("2j must be integer"));
        let kmp = ModelSpec::with_temperatures(Family::KMP, 2, None, 1.0, -1.0);
        assert!(kmp.validate().is_err());
        let irw_shape = ModelSpec::with_rates(Family::IRW, 2, Some(1.0), 1.0, 1.0, 1.0, 1.0);
        assert!(irw_shape.validate().is_err());
    }

    #[test]
    fn reservoir_density_examples() {
        let r = reservoir_densities(&sip(1.0, 3.0, 1.0, 2.0));
        assert!((r.rho_a - 0.5).abs() < 1e-15);
        let sep = ModelSpec::with_rates(Family::SEP, 2, Some(2.0), 1.0, 1.0, 1.0, 1.0);
        assert!((reservoir_densities(&sep).rho_a - 1.0).abs() < 1e-15);
        let irw = ModelSpec::with_rates(Family::IRW, 2, None, 2.5, 2.5, 1.0, 1.0);
        assert!((reservoir_densities(&irw).rho_a - 1.0).abs() < 1e-15);
        let bep = ModelSpec::with_temperatures(Family::BEP, 2, Some(0.5), 2.0, 3.0);
        let r = reservoir_densities(&bep);
        assert!((r.rho_a - 2.0).abs() < 1e-14 && (r.rho_b - 3.0).abs() < 1e-14);
        let kmp = ModelSpec::with_temperatures(Family::KMP, 2, None, 2.0, 3.0);
        assert!((reservoir_densities(&kmp).rho_a - 2.0).abs() < 1e-14);
    }

    #[test]
    fn equilibrium_marginal_examples() {
        let m = equilibrium_marginal(&sip(1.0, 2.0, 2.0, 4.0)).unwrap();
        assert_eq!(m, EquilibriumMarginal::NegativeBinomial { r: 1.0, p: 0.5 });
        let irw = ModelSpec::with_rates(Family::IRW, 2, None, 2.0, 4.0, 1.0, 2.0);
        assert_eq!(equilibrium_marginal(&irw).unwrap(), EquilibriumMarginal::Poisson { lambda: 0.5 });
        let bep = ModelSpec::with_temperatures(Family::BEP, 2, Some(1.0), 1.5, 1.5);
        assert_eq!(
            equilibrium_marginal(&bep).unwrap(),
            EquilibriumMarginal::Gamma { shape: 1.0, scale: 3.0 }
        );
        assert!(matches!(
            equilibrium_marginal(&sip(1.0, 3.0, 1.0, 2.0)),
            Err(Error::NotEquilibrium(_))
        ));
    }

    #[test]
    fn pmf_vectors_sum_and_match_means() {
        let laws = [
            EquilibriumMarginal::NegativeBinomial { r: 1.5, p: 0.4 },
            EquilibriumMarginal::Binomial { n: 5, p: 0.3 },
            EquilibriumMarginal::Poisson { lambda: 2.2 },
        ];
        for law in laws {
            let cap = law.adaptive_cap(1e-14);
            let (pmf, tail) = law.pmf_vec(cap);
            assert!(tail < 1e-14);
            let total: f64 = pmf.iter().sum();
            assert!((total + tail - 1.0).abs() < 1e-13, "{law:?} {total}");
            let mean: f64 = pmf.iter().enumerate().map(|(n, p)| n as f64 * p).sum();
            assert!((mean - law.mean()).abs() < 1e-12, "{law:?}");
            for (n, p) in pmf.iter().enumerate().take(6) {
                assert!((p - law.ln_pmf(n as u64).exp()).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn config_round_trip_and_field_errors() {
        let text = "family = \"SIP\"\nL = 4\nshape = 1.0\nalpha = 1.0\ngamma = 3.0\ndelta = 1.0\nbeta = 2.0\n";
        let cfg = ModelConfig::from_toml(text).unwrap();
        let spec = cfg.to_spec().unwrap();
        assert_eq!(spec.l, 4);
        assert_eq!(ModelConfig::from(&spec), cfg);
        let bad = ModelConfig::from_toml(&text.replace("SIP", "XYZ")).unwrap();
        assert!(bad.to_spec().unwrap_err().to_string().contains("family"));
        let missing = ModelConfig::from_toml("family = \"KMP\"\nL = 2\nT_a = 1.0\n").unwrap();
        assert!(missing.to_spec().unwrap_err().to_string().contains("T_b"));
    }
}
