//! Named verification suites over built-in parameter grids.
//!
//! Every suite is exact (no sampling) and finishes in seconds.

use serde_json::json;

use crate::analysis::{
    covariance_closed_form, profile_closed_form, sip_to_bep, irw_to_dep, solve_correlation_system, th_moments_l1,
};
use crate::duality::{
    check_duality_identity, check_energy_duality, dual_spec, single_walker_absorption, single_walker_absorption_linear,
    stationary_expectation, AbsorptionSolver,
};
use crate::error::{Error, Result};
use crate::generator::{build_generator, check_detailed_balance};
use crate::model::{equilibrium_marginal, reservoir_marginals, ModelConfig};
use crate::report::{CheckReport, SuiteReport};
use crate::special::{falling, rising};
use crate::stationary::{expectation, stationary_distribution};
use crate::{Family, ModelSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Duality,
    Equilibrium,
    Absorption,
    Correlations,
    Thermalized,
    Scaling,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::Duality,
        Suite::Equilibrium,
        Suite::Absorption,
        Suite::Correlations,
        Suite::Thermalized,
        Suite::Scaling,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Duality => "duality",
            Suite::Equilibrium => "equilibrium",
            Suite::Absorption => "absorption",
            Suite::Correlations => "appendix",
            Suite::Thermalized => "thermalized",
            Suite::Scaling => "scaling",
        }
    }

    pub fn run(self) -> Result<SuiteReport> {
        let checks = match self {
            Suite::Duality => duality()?,
            Suite::Equilibrium => equilibrium()?,
            Suite::Absorption => absorption()?,
            Suite::Correlations => correlations()?,
            Suite::Thermalized => thermalized()?,
            Suite::Scaling => scaling()?,
        };
        Ok(SuiteReport::new(self.name(), checks))
    }
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown suite {s:?}")))
    }
}

fn cfg(spec: &ModelSpec) -> ModelConfig {
    ModelConfig::from(spec)
}

/// Smallest cap whose reservoir tails fall below `tol`.
fn cap_for(spec: &ModelSpec, tol: f64) -> u32 {
    let (a, b) = reservoir_marginals(spec);
    a.adaptive_cap(tol).max(b.adaptive_cap(tol)) as u32
}

fn duality() -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    for s in [
        ModelSpec::with_rates(Family::SIP, 3, Some(1.0), 1.0, 3.0, 1.0, 2.0),
        ModelSpec::with_rates(Family::SEP, 3, Some(2.0), 0.7, 1.3, 0.4, 0.9),
        ModelSpec::with_rates(Family::IRW, 3, None, 0.6, 1.1, 0.3, 0.8),
        ModelSpec::with_rates(Family::ThSEP, 3, Some(2.0), 0.7, 1.3, 0.4, 0.9),
        ModelSpec::with_rates(Family::ThIRW, 3, None, 0.6, 1.1, 0.3, 0.8),
    ] {
        // Thermalized boundaries resample from the capped reservoir law, so they need a smaller tail.
        let tail = if s.family.is_thermalized() { 1e-16 } else { 1e-12 };
        let g = build_generator(&s, cap_for(&s, tail))?;
        let c = check_duality_identity(&s, &g, 2)?;
        out.push(CheckReport::new(
            format!("{:?} generator duality", s.family),
            json!({"model": cfg(&s), "max_walkers": 2, "states": g.n()}),
            &c,
            0.0,
            c.max_residual,
            1e-10,
        ));
    }
    for s in [
        ModelSpec::with_temperatures(Family::BEP, 3, Some(1.0), 0.8, 1.7),
        ModelSpec::with_temperatures(Family::BEP, 3, Some(2.5), 1.2, 0.4),
    ] {
        let c = check_energy_duality(&s, 2)?;
        out.push(CheckReport::new(
            "BEP polynomial duality",
            json!({"model": cfg(&s), "max_walkers": 2}),
            &c,
            0.0,
            c.max_residual,
            1e-10,
        ));
    }
    Ok(out)
}

fn equilibrium() -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    // alpha*beta = gamma*delta makes both reservoirs impose the same density.
    for s in [
        ModelSpec::with_rates(Family::SIP, 3, Some(1.0), 0.5, 2.5, 0.4, 2.0),
        ModelSpec::with_rates(Family::SEP, 3, Some(2.0), 0.6, 1.2, 0.5, 1.0),
        ModelSpec::with_rates(Family::IRW, 3, None, 0.6, 1.2, 0.5, 1.0),
    ] {
        let g = build_generator(&s, cap_for(&s, 1e-13))?;
        let st = stationary_distribution(&g)?;
        let db = check_detailed_balance(&g, &st.pi);
        out.push(CheckReport::new(
            format!("{:?} detailed balance", s.family),
            json!({"model": cfg(&s), "states": g.n()}),
            db,
            0.0,
            db,
            1e-10,
        ));
        let m = equilibrium_marginal(&s)?;
        let mean = expectation(&g, &st.pi, |e| e[0] as f64);
        let dev = (mean - m.mean()).abs();
        out.push(CheckReport::new(
            format!("{:?} product marginal mean", s.family),
            json!({"model": cfg(&s)}),
            mean,
            m.mean(),
            dev,
            1e-9,
        ));
    }
    Ok(out)
}

fn absorption() -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    for s in [
        ModelSpec::with_rates(Family::SIP, 5, Some(1.0), 1.0, 2.0, 0.5, 2.5),
        ModelSpec::with_rates(Family::SEP, 7, Some(3.0), 0.4, 1.1, 1.3, 0.2),
        ModelSpec::with_rates(Family::IRW, 4, None, 0.6, 1.7, 0.9, 0.3),
        ModelSpec::with_temperatures(Family::BEP, 6, Some(0.7), 1.0, 2.0),
        ModelSpec::with_temperatures(Family::KMP, 3, None, 1.0, 2.0),
    ] {
        let closed = single_walker_absorption(&s)?;
        let linear = single_walker_absorption_linear(&s)?;
        let solver = AbsorptionSolver::new(&dual_spec(&s)?, 1)?;
        let mut worst: f64 = 0.0;
        for i in 1..=s.l {
            let mut xi = vec![0u32; s.l + 2];
            xi[i] = 1;
            let sparse = solver.table(&xi)?.probabilities[1];
            worst = worst.max((closed[i] - linear[i]).abs()).max((closed[i] - sparse).abs());
        }
        out.push(CheckReport::new(
            format!("{:?} single-walker absorption", s.family),
            json!({"model": cfg(&s)}),
            &linear[1..=s.l],
            &closed[1..=s.l],
            worst,
            1e-12,
        ));
    }
    Ok(out)
}

fn correlations() -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    for l in [4usize, 6, 10] {
        for s in [
            ModelSpec::with_rates(Family::SIP, l, Some(1.0), 2.0, 3.0, 1.0, 2.0),
            ModelSpec::with_rates(Family::SEP, l, Some(2.0), 0.5, 1.5, 1.2, 0.8),
            ModelSpec::with_rates(Family::SEP, l, Some(1.0), 0.7, 0.9, 0.2, 1.1),
        ] {
            let x = solve_correlation_system(&s)?;
            let p = profile_closed_form(&s)?;
            let mut worst: f64 = 0.0;
            for i in 1..=l {
                for j in i + 1..=l {
                    let cov = x[i - 1][j - 1] - p[i - 1] * p[j - 1];
                    worst = worst.max((cov - covariance_closed_form(&s, i, j)?).abs());
                }
            }
            out.push(CheckReport::new(
                format!("{:?} L={l} covariance closed form", s.family),
                json!({"model": cfg(&s)}),
                worst,
                0.0,
                worst,
                1e-10,
            ));
        }
    }
    Ok(out)
}

fn thermalized() -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    for s in [
        ModelSpec::with_rates(Family::ThSIP, 1, Some(1.0), 1.0, 2.0, 2.0, 3.0),
        ModelSpec::with_rates(Family::ThSEP, 1, Some(3.0), 1.0, 2.0, 1.5, 0.5),
        ModelSpec::with_rates(Family::ThIRW, 1, None, 0.6, 2.0, 0.3, 1.0),
    ] {
        let g = build_generator(&s, cap_for(&s, 1e-16))?;
        let pi = stationary_distribution(&g)?.pi;
        for xi in 1..=4u32 {
            let exact = expectation(&g, &pi, |e| falling(e[0] as u64, xi as u64));
            let want = th_moments_l1(&s, xi)?;
            out.push(CheckReport::new(
                format!("{:?} factorial moment xi={xi}", s.family),
                json!({"model": cfg(&s), "xi": xi}),
                exact,
                want,
                (exact - want).abs() / want.abs().max(1.0),
                1e-10,
            ));
        }
    }
    let th = ModelSpec::with_temperatures(Family::ThBEP, 1, Some(1.5), 0.7, 2.0);
    for xi in 1..=4u32 {
        let exact = stationary_expectation(&th, &[0, xi, 0])? * rising(1.5, xi as u64);
        let want = th_moments_l1(&th, xi)?;
        out.push(CheckReport::new(
            format!("ThBEP moment xi={xi}"),
            json!({"model": cfg(&th), "xi": xi}),
            exact,
            want,
            (exact - want).abs() / want.abs().max(1.0),
            1e-10,
        ));
    }
    Ok(out)
}

fn scaling() -> Result<Vec<CheckReport>> {
    let w = [0.5, 0.3, 0.2, 0.0];
    let n_list = [100u64, 1000, 10000];
    let pts = sip_to_bep(1.0, &w, 1.0, &n_list, 1.0)?;
    let gaps: Vec<f64> = pts.iter().map(|p| p.discrepancy).collect();
    let monotone = gaps.windows(2).all(|g| g[1] < g[0]);
    let dep = irw_to_dep(&w, 2.0, &n_list, 2.0)?;
    let dep_worst = dep.iter().fold(0.0f64, |m, p| m.max(p.discrepancy));
    Ok(vec![
        CheckReport::flag(
            "SIP -> BEP second moments approach monotonically",
            json!({"two_k": 1.0, "weights": w, "energy": 1.0, "N": n_list, "t": 1.0}),
            &gaps,
            monotone,
        ),
        CheckReport::new(
            "IRW -> DEP means",
            json!({"weights": w, "energy": 2.0, "N": n_list, "t": 2.0}),
            dep_worst,
            0.0,
            dep_worst,
            1e-10,
        ),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("bogus".parse::<Suite>().is_err());
    }

    #[test]
    fn fast_suites_pass() {
        for s in [Suite::Absorption, Suite::Equilibrium, Suite::Thermalized] {
            let r = s.run().unwrap();
            let bad: Vec<_> = r.failures().map(|c| (&c.name, c.deviation)).collect();
            assert!(r.passed, "{bad:?}");
        }
    }
}
