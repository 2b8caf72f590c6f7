//! Closed-form profiles and covariances, the two-point correlation systems,
//! multilinearity of connected correlations, thermalized single-site moments,
//! product-measure checks and scaling limits of the bulk dynamics.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::duality::{
    dual_spec, duality_continuous, duality_discrete, evolve_sector, single_walker_absorption, Absorption, AbsorptionSolver,
    DualSector, DualSpec,
};
use crate::error::{unsupported, Error, Result};
use crate::generator::{build_generator, BulkLaw};
use crate::model::{reservoir_densities, reservoir_marginals, validate, Family, ModelSpec};
use crate::special::{falling_real, ln_gamma, rising};
use crate::stationary::{expectation, stationary_distribution};

/// Stationary means `<eta_i>` (or `<z_i>`), `rho_a p_i + rho_b (1 - p_i)`.
pub fn profile_closed_form(spec: &ModelSpec) -> Result<Vec<f64>> {
    let spec = validate(*spec)?;
    let p = single_walker_absorption(&spec)?;
    let rho = reservoir_densities(&spec);
    Ok((1..=spec.l).map(|i| rho.rho_a * p[i] + rho.rho_b * (1.0 - p[i])).collect())
}

const COND_TOL: f64 = 1e-12;

/// Which bilinearity condition a spec satisfies, if any.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum BilinearCondition {
    /// SEP(1) with generic rates.
    Sep1,
    /// SEP(2j) with `gamma + alpha = 2j = beta + delta`.
    SepMatched,
    /// SIP(2k) with `gamma - alpha = 2k = beta - delta`.
    SipMatched,
    /// BEP with `k = 1/4`.
    BepQuarter,
}

pub fn bilinear_condition(spec: &ModelSpec) -> Option<BilinearCondition> {
    let s = spec.shape_value();
    match spec.family {
        Family::SEP => {
            let (a, g, d, b) = spec.rates();
            if ((g + a) - s).abs() < COND_TOL && ((b + d) - s).abs() < COND_TOL {
                Some(BilinearCondition::SepMatched)
            } else if spec.two_j() == 1 {
                Some(BilinearCondition::Sep1)
            } else {
                None
            }
        }
        Family::SIP => {
            let (a, g, d, b) = spec.rates();
            (((g - a) - s).abs() < COND_TOL && ((b - d) - s).abs() < COND_TOL).then_some(BilinearCondition::SipMatched)
        }
        Family::BEP => ((s - 0.5).abs() < COND_TOL).then_some(BilinearCondition::BepQuarter),
        _ => None,
    }
}

/// Closed-form covariance `<eta_i eta_l>_c` for `i != l` (1-based).
///
/// SEP(1) with generic rates uses the effective-length form
/// `-(rho_a - rho_b)^2 (i - 1 + a)(L + b - l) / ((L - 1 + a + b)^2 (L - 2 + a + b))`
/// with `a = 1/(gamma + alpha)`, `b = 1/(beta + delta)`, which reduces to the
/// matched-rate formula when `a = b = 1`.
pub fn covariance_closed_form(spec: &ModelSpec, i: usize, l: usize) -> Result<f64> {
    let spec = validate(*spec)?;
    let (i, l) = (i.min(l), i.max(l));
    if i == l || i == 0 || l > spec.l {
        return Err(Error::Domain(format!("need 1 <= i < l <= L, got ({i}, {l})")));
    }
    let cond = bilinear_condition(&spec).ok_or_else(|| {
        Error::NoClosedForm(format!("no closed form for these parameters ({:?} outside the bilinear cases)", spec.family))
    })?;
    let rho = reservoir_densities(&spec);
    let d2 = (rho.rho_a - rho.rho_b).powi(2);
    let (n, fi, fl) = (spec.l as f64, i as f64, l as f64);
    let s = spec.shape_value();
    Ok(match cond {
        BilinearCondition::SipMatched => fi * (n + 1.0 - fl) / ((n + 1.0).powi(2) * (s * (n + 1.0) + 1.0)) * d2,
        BilinearCondition::SepMatched => -fi * (n + 1.0 - fl) / ((n + 1.0).powi(2) * (s * (n + 1.0) - 1.0)) * d2,
        BilinearCondition::Sep1 => {
            let (a, g, d, b) = spec.rates();
            let (ea, eb) = (1.0 / (g + a), 1.0 / (b + d));
            let len = n - 1.0 + ea + eb;
            -d2 * (fi - 1.0 + ea) * (n + eb - fl) / (len * len * (len - 1.0))
        }
        BilinearCondition::BepQuarter => 2.0 * fi * (n + 1.0 - fl) / ((n + 3.0) * (n + 1.0).powi(2)) * d2,
    })
}

/// The linear system for `X_{i,l} = <eta_i eta_l>`, `i <= l`, with `x_i` bound to the closed-form profile.
#[derive(Clone, Debug)]
pub struct CorrelationSystem {
    pub l: usize,
    pub family: Family,
    pub x: Vec<f64>,
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

/// Position of `X_{i,l}` (1-based, any order) in the triangular unknown vector.
pub fn pair_index(n: usize, i: usize, l: usize) -> usize {
    let (i, l) = (i.min(l), i.max(l));
    (i - 1) * (n + 1) - i * (i - 1) / 2 + (l - i)
}

/// Pairs `(i, l)`, `i <= l`, in unknown order.
pub fn pairs(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 1..=n {
        for l in i..=n {
            out.push((i, l));
        }
    }
    out
}

struct Row<'a> {
    n: usize,
    coef: &'a mut DMatrix<f64>,
    rhs: &'a mut DVector<f64>,
    r: usize,
}

impl Row<'_> {
    fn x(&mut self, i: usize, l: usize, c: f64) {
        let j = pair_index(self.n, i, l);
        self.coef[(self.r, j)] += c;
    }
    fn constant(&mut self, c: f64) {
        self.rhs[self.r] -= c;
    }
}

impl CorrelationSystem {
    /// Assembles the ten equation types for SIP/SEP (signs `s = +1/-1`, `h = k` or `j`) or BEP.
    pub fn assemble(spec: &ModelSpec) -> Result<Self> {
        let spec = validate(*spec)?;
        let n = spec.l;
        if !matches!(spec.family, Family::SIP | Family::SEP | Family::BEP) {
            return Err(unsupported(spec.family, "correlation systems exist for SIP, SEP and BEP"));
        }
        if n < 3 {
            return Err(Error::Domain("the correlation system needs L >= 3".into()));
        }
        let x = profile_closed_form(&spec)?;
        let xs = |i: usize| x[i - 1];
        let m = n * (n + 1) / 2;
        let mut coef = DMatrix::zeros(m, m);
        let mut rhs = DVector::zeros(m);
        for (r, &(i, l)) in pairs(n).iter().enumerate() {
            let mut row = Row {
                n,
                coef: &mut coef,
                rhs: &mut rhs,
                r,
            };
            if spec.family == Family::BEP {
                bep_row(&spec, &mut row, i, l, &xs);
            } else {
                particle_row(&spec, &mut row, i, l, &xs);
            }
        }
        Ok(CorrelationSystem {
            l: n,
            family: spec.family,
            x,
            matrix: coef,
            rhs,
        })
    }

    /// Solves for all `X_{i,l}`; returns the symmetric `L x L` matrix.
    pub fn solve(&self) -> Result<Vec<Vec<f64>>> {
        let lu = self.matrix.clone().lu();
        let sol = lu
            .solve(&self.rhs)
            .ok_or_else(|| Error::Singular("correlation system is singular".into()))?;
        let n = self.l;
        let mut out = vec![vec![0.0; n]; n];
        for (k, &(i, l)) in pairs(n).iter().enumerate() {
            out[i - 1][l - 1] = sol[k];
            out[l - 1][i - 1] = sol[k];
        }
        Ok(out)
    }

    /// `max |A X - b|` for a candidate solution.
    pub fn residual(&self, x: &[Vec<f64>]) -> f64 {
        let v = DVector::from_iterator(self.rhs.len(), pairs(self.l).iter().map(|&(i, l)| x[i - 1][l - 1]));
        (&self.matrix * v - &self.rhs).amax()
    }
}

fn particle_row(spec: &ModelSpec, e: &mut Row, i: usize, l: usize, x: &dyn Fn(usize) -> f64) {
    let n = spec.l;
    let s = if spec.family == Family::SIP { 1.0 } else { -1.0 };
    let h = spec.shape_value() / 2.0;
    let (a, g, d, b) = spec.rates();
    if i == l {
        if i == 1 {
            // 8)
            e.x(1, 1, 2.0 * (2.0 * h - s * a + g));
            e.x(1, 2, -2.0 * (2.0 * h + s));
            e.constant(-(2.0 * h * (2.0 * a + 1.0) + g + s * a) * x(1) - 2.0 * h * x(2) - 2.0 * h * a);
        } else if i == n {
            // 9)
            e.x(n, n, 2.0 * (2.0 * h + b - s * d));
            e.x(n - 1, n, -2.0 * (2.0 * h + s));
            e.constant(-(2.0 * h * (2.0 * d + 1.0) + b + s * d) * x(n) - 2.0 * h * x(n - 1) - 2.0 * h * d);
        } else {
            // 7)
            e.constant(h * (x(i - 1) + 2.0 * x(i) + x(i + 1)));
            e.x(i - 1, i, 2.0 * h + s);
            e.x(i, i, -4.0 * h);
            e.x(i, i + 1, 2.0 * h + s);
        }
    } else if l == i + 1 {
        if i == 1 {
            // 5)
            e.x(1, 1, 2.0 * h);
            e.x(2, 2, 2.0 * h);
            e.x(1, 2, -(2.0 * (3.0 * h + s) + (-s * a + g)));
            e.x(1, 3, 2.0 * h);
            e.constant(-2.0 * h * x(1) - 2.0 * h * (1.0 - a) * x(2));
        } else if i == n - 1 {
            // 6)
            e.x(n, n, 2.0 * h);
            e.x(n - 1, n - 1, 2.0 * h);
            e.x(n - 1, n, -(2.0 * (3.0 * h + s) + (b - s * d)));
            e.x(n - 2, n, 2.0 * h);
            e.constant(-2.0 * h * x(n) - 2.0 * h * (1.0 - d) * x(n - 1));
        } else {
            // 4)
            e.x(i, i, h);
            e.x(i + 1, i + 1, h);
            e.x(i, i + 1, -s - 4.0 * h);
            e.x(i - 1, i + 1, h);
            e.x(i, i + 2, h);
            e.constant(-h * (x(i) + x(i + 1)));
        }
    } else if i == 1 && l == n {
        // 10)
        e.x(1, n, -(4.0 * h + g - s * d - s * a + b));
        e.x(2, n, 2.0 * h);
        e.x(1, n - 1, 2.0 * h);
        e.constant(2.0 * h * (d * x(1) + a * x(n)));
    } else if i == 1 {
        // 2)
        e.x(2, l, 2.0 * h);
        e.x(1, l - 1, 2.0 * h);
        e.x(1, l + 1, 2.0 * h);
        e.x(1, l, -(6.0 * h - s * a + g));
        e.constant(2.0 * h * a * x(l));
    } else if l == n {
        // 3)
        e.x(i, n - 1, 2.0 * h);
        e.x(i + 1, n, 2.0 * h);
        e.x(i - 1, n, 2.0 * h);
        e.x(i, n, -(6.0 * h + b - s * d));
        e.constant(2.0 * h * d * x(i));
    } else {
        // 1)
        e.x(i - 1, l, 1.0);
        e.x(i + 1, l, 1.0);
        e.x(i, l - 1, 1.0);
        e.x(i, l + 1, 1.0);
        e.x(i, l, -4.0);
    }
}

fn bep_row(spec: &ModelSpec, e: &mut Row, i: usize, l: usize, x: &dyn Fn(usize) -> f64) {
    let n = spec.l;
    let k = spec.shape_value() / 2.0;
    let (ta, tb) = spec.temperatures();
    if i == l {
        if i == 1 {
            // 8)
            e.x(1, 2, 2.0 * (2.0 * k + 1.0));
            e.x(1, 1, -(4.0 * k + 1.0));
            e.constant(2.0 * (2.0 * k + 1.0) * ta * x(1));
        } else if i == n {
            // 9)
            e.x(n - 1, n, 2.0 * (2.0 * k + 1.0));
            e.x(n, n, -(4.0 * k + 1.0));
            e.constant(2.0 * (2.0 * k + 1.0) * tb * x(n));
        } else {
            // 7)
            e.x(i - 1, i, 2.0 * k + 1.0);
            e.x(i, i + 1, 2.0 * k + 1.0);
            e.x(i, i, -4.0 * k);
        }
    } else if l == i + 1 {
        if i == 1 {
            // 5)
            e.x(1, 1, 4.0 * k);
            e.x(2, 2, 4.0 * k);
            e.x(1, 2, -(12.0 * k + 5.0));
            e.x(1, 3, 4.0 * k);
            e.constant(4.0 * k * ta * x(2));
        } else if i == n - 1 {
            // 6)
            e.x(n, n, 4.0 * k);
            e.x(n - 1, n - 1, 4.0 * k);
            e.x(n - 1, n, -(12.0 * k + 5.0));
            e.x(n - 2, n, 4.0 * k);
            e.constant(4.0 * k * tb * x(n - 1));
        } else {
            // 4)
            e.x(i, i, 2.0 * k);
            e.x(i + 1, i + 1, 2.0 * k);
            e.x(i, i + 1, -2.0 * (4.0 * k + 1.0));
            e.x(i - 1, i + 1, 2.0 * k);
            e.x(i, i + 2, 2.0 * k);
        }
    } else if i == 1 && l == n {
        // 10)
        e.constant(4.0 * k * ta * x(n) + 4.0 * k * tb * x(1));
        e.x(1, n, -2.0 * (1.0 + 4.0 * k));
        e.x(2, n, 4.0 * k);
        e.x(1, n - 1, 4.0 * k);
    } else if i == 1 {
        // 2)
        e.x(1, l - 1, 4.0 * k);
        e.x(1, l + 1, 4.0 * k);
        e.x(2, l, 4.0 * k);
        e.x(1, l, -(1.0 + 12.0 * k));
        e.constant(4.0 * k * ta * x(l));
    } else if l == n {
        // 3)
        e.x(i - 1, n, 4.0 * k);
        e.x(i + 1, n, 4.0 * k);
        e.x(i, n - 1, 4.0 * k);
        e.x(i, n, -(12.0 * k + 1.0));
        e.constant(4.0 * k * tb * x(i));
    } else {
        // 1)
        e.x(i - 1, l, 1.0);
        e.x(i + 1, l, 1.0);
        e.x(i, l - 1, 1.0);
        e.x(i, l + 1, 1.0);
        e.x(i, l, -4.0);
    }
}

/// Solves the correlation system of `spec`.
pub fn solve_correlation_system(spec: &ModelSpec) -> Result<Vec<Vec<f64>>> {
    CorrelationSystem::assemble(spec)?.solve()
}

/// Least-squares fit of `X_{i,l} = A il + B i + C l + D` (`i < l`) and `X_{ii} = E i^2 + F i + G`.
#[derive(Clone, Debug, Serialize)]
pub struct BilinearAnsatz {
    /// `[A, B, C, D, E, F, G]`.
    pub coefficients: [f64; 7],
    /// `max |A X_fit - b|` over the correlation system.
    pub residual: f64,
    pub bilinear: bool,
}

pub fn fit_bilinear(sys: &CorrelationSystem) -> Result<BilinearAnsatz> {
    let n = sys.l;
    let pr = pairs(n);
    let mut basis = DMatrix::zeros(pr.len(), 7);
    for (k, &(i, l)) in pr.iter().enumerate() {
        let (fi, fl) = (i as f64, l as f64);
        if i < l {
            basis[(k, 0)] = fi * fl;
            basis[(k, 1)] = fi;
            basis[(k, 2)] = fl;
            basis[(k, 3)] = 1.0;
        } else {
            basis[(k, 4)] = fi * fi;
            basis[(k, 5)] = fi;
            basis[(k, 6)] = 1.0;
        }
    }
    let m = &sys.matrix * &basis;
    let svd = m.clone().svd(true, true);
    let c = svd
        .solve(&sys.rhs, 1e-13)
        .map_err(|e| Error::Singular(e.to_string()))?;
    let residual = (&m * &c - &sys.rhs).amax();
    let mut coefficients = [0.0; 7];
    coefficients.copy_from_slice(c.as_slice());
    Ok(BilinearAnsatz {
        coefficients,
        residual,
        bilinear: residual < 1e-9,
    })
}

/// Connected correlations and their increments from an exact stationary solve.
#[derive(Clone, Debug, Serialize)]
pub struct MultilinearityReport {
    pub two_j: usize,
    /// `d_i = <eta_1 eta_{i+1}>_c - <eta_1 eta_i>_c`, `i = 2..L-1`.
    pub d: Vec<f64>,
    /// `e_i = <eta_1 eta_2 eta_{i+1}>_c - <eta_1 eta_2 eta_i>_c`, `i = 3..L-1`.
    pub e: Vec<f64>,
    pub spread_d: f64,
    pub spread_e: f64,
    /// `max |pi^T G|` of the stationary solve.
    pub solver_residual: f64,
    /// Noise floor used by the verdicts.
    pub noise: f64,
    pub verdict_d: Verdict,
    pub verdict_e: Verdict,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Constant,
    NonConstant,
    Inconclusive,
}

fn spread(v: &[f64]) -> f64 {
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    hi - lo
}

/// Constant if the spread is below `1e3` noise floors, non-constant above `1e6`.
///
/// The floor is the larger of the solver residual and the rounding level of
/// the correlations (`1e-16` times their size).
fn verdict(spread: f64, noise: f64) -> Verdict {
    if spread < 1e3 * noise {
        Verdict::Constant
    } else if spread > 1e6 * noise {
        Verdict::NonConstant
    } else {
        Verdict::Inconclusive
    }
}

pub fn multilinearity_experiment(spec: &ModelSpec) -> Result<MultilinearityReport> {
    let spec = validate(*spec)?;
    if spec.family != Family::SEP {
        return Err(unsupported(spec.family, "the multilinearity experiment uses SEP"));
    }
    if spec.l < 4 {
        return Err(Error::Domain("the multilinearity experiment needs L >= 4".into()));
    }
    let n = spec.l;
    let g = build_generator(&spec, 0)?;
    let st = stationary_distribution(&g)?;
    let pi = &st.pi;
    let mean: Vec<f64> = (0..n).map(|i| expectation(&g, pi, |e| e[i] as f64)).collect();
    let two = |a: usize, b: usize| expectation(&g, pi, |e| (e[a] * e[b]) as f64);
    let c2 = |a: usize, b: usize| two(a, b) - mean[a] * mean[b];
    let three = |a: usize, b: usize, c: usize| {
        let abc = expectation(&g, pi, |e| (e[a] * e[b] * e[c]) as f64);
        abc - two(a, b) * mean[c] - two(a, c) * mean[b] - two(b, c) * mean[a] + 2.0 * mean[a] * mean[b] * mean[c]
    };
    // 1-based i maps to index i-1.
    let d: Vec<f64> = (2..n).map(|i| c2(0, i) - c2(0, i - 1)).collect();
    let e: Vec<f64> = (3..n).map(|i| three(0, 1, i) - three(0, 1, i - 1)).collect();
    let scale = d.iter().chain(&e).fold(0.0f64, |m, v| m.max(v.abs()));
    let noise = st.residual.max(1e-16 * scale);
    let (sd, se) = (spread(&d), spread(&e));
    Ok(MultilinearityReport {
        two_j: spec.two_j(),
        verdict_d: verdict(sd, noise),
        verdict_e: verdict(se, noise),
        d,
        e,
        spread_d: sd,
        spread_e: se,
        solver_residual: st.residual,
        noise,
    })
}

/// Writes `j, i, d_i, e_i` rows (empty `e_i` where undefined).
pub fn write_multilinearity_csv<W: std::io::Write>(reports: &[MultilinearityReport], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["j", "i", "d_i", "e_i"])?;
    for r in reports {
        let j = r.two_j as f64 / 2.0;
        for (k, d) in r.d.iter().enumerate() {
            let i = k + 2;
            let e = if i >= 3 { format!("{:e}", r.e[i - 3]) } else { String::new() };
            out.write_record([j.to_string(), i.to_string(), format!("{d:e}"), e])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Stationary `xi`-th factorial moment (raw moment for ThBEP/KMP) of a thermalized model at `L = 1`.
///
/// The single site is resampled from either reservoir at equal rates, so the
/// stationary law is the even mixture of the two reservoir laws.
pub fn th_moments_l1(spec: &ModelSpec, xi: u32) -> Result<f64> {
    let spec = validate(*spec)?;
    if spec.l != 1 {
        return Err(Error::Domain("thermalized single-site moments need L = 1".into()));
    }
    let s = spec.shape_value();
    let m = xi as i32;
    Ok(match spec.family {
        Family::ThSIP => {
            let (a, g, d, b) = spec.rates();
            (ln_gamma(s + xi as f64) - ln_gamma(s)).exp() / 2.0 * ((a / (g - a)).powi(m) + (d / (b - d)).powi(m))
        }
        Family::ThSEP => {
            let (a, g, d, b) = spec.rates();
            falling_real(s, xi as u64) / 2.0 * ((a / (g + a)).powi(m) + (d / (b + d)).powi(m))
        }
        Family::ThIRW => {
            let (a, g, d, b) = spec.rates();
            0.5 * ((a / g).powi(m) + (d / b).powi(m))
        }
        Family::ThBEP | Family::KMP => {
            let (ta, tb) = spec.temperatures();
            rising(s, xi as u64) / 2.0 * (ta.powi(m) + tb.powi(m))
        }
        f => return Err(unsupported(f, "single-site moments are for thermalized families")),
    })
}

/// Largest `|<D(., xi)> - prod_i (c x_i)^xi_i|` over bulk `xi` with `1 <= |xi| <= max_walkers`.
///
/// Zero exactly when the stationary state has product factorial moments with
/// the closed-form profile `x`.
pub fn product_measure_deviation(spec: &ModelSpec, max_walkers: u32) -> Result<f64> {
    let spec = validate(*spec)?;
    let d = dual_spec(&spec)?;
    let x = profile_closed_form(&spec)?;
    let mut worst: f64 = 0.0;
    for n in 1..=max_walkers {
        let solver = AbsorptionSolver::new(&d, n)?;
        for (s, xi) in solver.sector.states.iter().enumerate() {
            if xi[0] != 0 || xi[spec.l + 1] != 0 {
                continue;
            }
            let want: f64 = (0..spec.l).map(|i| (d.c * x[i]).powi(xi[i + 1] as i32)).product();
            worst = worst.max((solver.expectation_at(s) - want).abs());
        }
    }
    Ok(worst)
}

/// IRW nonequilibrium product measure: max deviation of the factorial moments
/// from `prod lambda_i^xi_i` over `|xi| <= 3`.
pub fn irw_product_check(spec: &ModelSpec) -> Result<f64> {
    if spec.family != Family::IRW {
        return Err(unsupported(spec.family, "the Poisson product check is for IRW"));
    }
    product_measure_deviation(spec, 3)
}

/// `lambda_i = [rho_a (L + 1/beta - i) + rho_b (i - 1 + 1/gamma)] / (L + 1/beta + 1/gamma - 1)`.
pub fn irw_lambda(spec: &ModelSpec) -> Result<Vec<f64>> {
    let spec = validate(*spec)?;
    let (a, g, d, b) = spec.rates();
    let (ra, rb) = (a / g, d / b);
    let n = spec.l as f64;
    let den = n + 1.0 / b + 1.0 / g - 1.0;
    Ok((1..=spec.l)
        .map(|i| {
            let i = i as f64;
            (ra * (n + 1.0 / b - i) + rb * (i - 1.0 + 1.0 / g)) / den
        })
        .collect())
}

/// Closed bulk dual (no absorption) for the given hopping law.
fn closed_dual(law: BulkLaw, l: usize, two_k: f64) -> DualSpec {
    DualSpec {
        family: Family::SIP,
        l,
        law,
        kernel: None,
        absorption: Absorption::PerWalker { left: 0.0, right: 0.0 },
        c: 1.0 / two_k,
        w_a: 0.0,
        w_b: 0.0,
    }
}

/// Discrepancy between rescaled SIP and BEP second moments for one `N`.
#[derive(Clone, Debug, Serialize)]
pub struct ScalingPoint {
    pub n: u64,
    pub epsilon: f64,
    pub discrepancy: f64,
}

/// Initial occupations `N w_i`; the weights must make every entry an integer.
pub fn initial_occupations(weights: &[f64], n: u64) -> Result<Vec<u32>> {
    let total: f64 = weights.iter().sum();
    let eta: Vec<f64> = weights.iter().map(|w| w / total * n as f64).collect();
    if eta.iter().any(|v| (v - v.round()).abs() > 1e-9 || *v < 0.0) {
        return Err(Error::Domain(format!("weights do not split N = {n} into whole particles")));
    }
    Ok(eta.iter().map(|v| v.round() as u32).collect())
}

/// Exact second moments `E[z_i z_l](t)` of the bulk BEP from `z0`, through the bulk SIP dual.
pub fn bep_bulk_second_moments(two_k: f64, z0: &[f64], t: f64) -> Result<Vec<Vec<f64>>> {
    let l = z0.len();
    let d = closed_dual(BulkLaw::Inclusion { two_k }, l, two_k);
    let sector = DualSector::new(&d, 2)?;
    let f: Vec<f64> = sector.states.iter().map(|x| duality_continuous(&d, z0, x)).collect();
    let g = evolve_sector(&sector, &f, t);
    Ok(second_from_dual(&sector, &g, two_k, None))
}

/// Exact `E[eta_i eta_l](t)` of the bulk SIP from `eta0`, through its own dual.
pub fn sip_bulk_second_moments(two_k: f64, eta0: &[u32], t: f64) -> Result<Vec<Vec<f64>>> {
    let l = eta0.len();
    let d = closed_dual(BulkLaw::Inclusion { two_k }, l, two_k);
    let one = DualSector::new(&d, 1)?;
    let f1: Vec<f64> = one.states.iter().map(|x| duality_discrete(&d, eta0, x)).collect();
    let g1 = evolve_sector(&one, &f1, t);
    let means: Vec<f64> = (1..=l)
        .map(|i| {
            let mut xi = vec![0u32; l + 2];
            xi[i] = 1;
            two_k * g1[one.index[&xi]]
        })
        .collect();
    let sector = DualSector::new(&d, 2)?;
    let f: Vec<f64> = sector.states.iter().map(|x| duality_discrete(&d, eta0, x)).collect();
    let g = evolve_sector(&sector, &f, t);
    Ok(second_from_dual(&sector, &g, two_k, Some(&means)))
}

fn second_from_dual(sector: &DualSector, g: &[f64], two_k: f64, means: Option<&[f64]>) -> Vec<Vec<f64>> {
    let l = sector.spec.l;
    let mut out = vec![vec![0.0; l]; l];
    for i in 1..=l {
        for j in i..=l {
            let mut xi = vec![0u32; l + 2];
            xi[i] += 1;
            xi[j] += 1;
            let v = g[sector.index[&xi]];
            let m = if i == j {
                // Falling factorial for the particle side: eta^2 = eta(eta-1) + eta.
                two_k * (two_k + 1.0) * v + means.map_or(0.0, |m| m[i - 1])
            } else {
                two_k * two_k * v
            };
            out[i - 1][j - 1] = m;
            out[j - 1][i - 1] = m;
        }
    }
    out
}

/// Rescaled bulk SIP (`z = eps eta`, `eps = E/N`) against bulk BEP: max second-moment gap at time `t`.
pub fn sip_to_bep(two_k: f64, weights: &[f64], energy: f64, n_list: &[u64], t: f64) -> Result<Vec<ScalingPoint>> {
    let total: f64 = weights.iter().sum();
    let z0: Vec<f64> = weights.iter().map(|w| w / total * energy).collect();
    let bep = bep_bulk_second_moments(two_k, &z0, t)?;
    n_list
        .iter()
        .map(|&n| {
            let eta0 = initial_occupations(weights, n)?;
            let eps = energy / n as f64;
            let sip = sip_bulk_second_moments(two_k, &eta0, t)?;
            let mut worst: f64 = 0.0;
            for i in 0..weights.len() {
                for j in 0..weights.len() {
                    worst = worst.max((eps * eps * sip[i][j] - bep[i][j]).abs());
                }
            }
            Ok(ScalingPoint {
                n,
                epsilon: eps,
                discrepancy: worst,
            })
        })
        .collect()
}

/// Deterministic energy process `y' = Q y` (closed discrete Laplacian) by classical RK4.
pub fn dep_rk4(y0: &[f64], t: f64, steps: usize) -> Vec<f64> {
    let l = y0.len();
    let f = |y: &[f64]| -> Vec<f64> {
        (0..l)
            .map(|i| {
                let mut v = 0.0;
                if i > 0 {
                    v += y[i - 1] - y[i];
                }
                if i + 1 < l {
                    v += y[i + 1] - y[i];
                }
                v
            })
            .collect()
    };
    let h = t / steps as f64;
    let mut y = y0.to_vec();
    let axpy = |a: &[f64], s: f64, b: &[f64]| a.iter().zip(b).map(|(x, z)| x + s * z).collect::<Vec<f64>>();
    for _ in 0..steps {
        let k1 = f(&y);
        let k2 = f(&axpy(&y, h / 2.0, &k1));
        let k3 = f(&axpy(&y, h / 2.0, &k2));
        let k4 = f(&axpy(&y, h, &k3));
        for i in 0..l {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    y
}

/// Rescaled IRW means `eps E[eta_i(t)]` from the single-walker semigroup.
pub fn irw_scaled_means(eta0: &[u32], eps: f64, t: f64) -> Vec<f64> {
    let l = eta0.len();
    let mut q = DMatrix::zeros(l, l);
    for i in 0..l {
        if i > 0 {
            q[(i, i - 1)] = 1.0;
            q[(i, i)] -= 1.0;
        }
        if i + 1 < l {
            q[(i, i + 1)] = 1.0;
            q[(i, i)] -= 1.0;
        }
    }
    let p = (q * t).exp();
    (0..l).map(|j| (0..l).map(|i| eps * eta0[i] as f64 * p[(i, j)]).sum()).collect()
}

/// Max gap between rescaled IRW means and the DEP solution, per `N`.
pub fn irw_to_dep(weights: &[f64], energy: f64, n_list: &[u64], t: f64) -> Result<Vec<ScalingPoint>> {
    let total: f64 = weights.iter().sum();
    let y0: Vec<f64> = weights.iter().map(|w| w / total * energy).collect();
    let dep = dep_rk4(&y0, t, (t * 1000.0).ceil().max(100.0) as usize);
    n_list
        .iter()
        .map(|&n| {
            let eta0 = initial_occupations(weights, n)?;
            let eps = energy / n as f64;
            let m = irw_scaled_means(&eta0, eps, t);
            let gap = m.iter().zip(&dep).fold(0.0f64, |w, (a, b)| w.max((a - b).abs()));
            Ok(ScalingPoint {
                n,
                epsilon: eps,
                discrepancy: gap,
            })
        })
        .collect()
}

/// Reservoir factorial moments used as equilibrium references.
pub fn reservoir_factorial_moment(spec: &ModelSpec, m: u64) -> f64 {
    reservoir_marginals(spec).0.factorial_moment(m)
}
