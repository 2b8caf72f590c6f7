//! Macroscopic layer: transport coefficients, macroscopic correlations, the
//! density large-deviation functional and micro/macro comparison.

use serde::Serialize;

use crate::analysis::covariance_closed_form;
use crate::error::{unsupported, Error, Result};
use crate::model::{reservoir_densities, validate, Family, ModelSpec};

/// Mobility law: `sigma = 2 A rho (B - rho)` or the linear IRW law `sigma = 2 rho`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Mobility {
    Quadratic { a: f64, b: f64 },
    Linear,
}

/// `D(rho) = C` and the mobility law of one family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TransportCoefficients {
    pub c: f64,
    pub mobility: Mobility,
}

impl TransportCoefficients {
    /// SIP `(-1, -2k, 2k)`, SEP `(1, 2j, 2j)`, IRW linear, KMP `(-1, 0, 1)`, BEP `(-1, 0, 2k)`.
    pub fn of(spec: &ModelSpec) -> Result<Self> {
        let s = spec.shape_value();
        let (c, mobility) = match spec.family {
            Family::SIP => (s, Mobility::Quadratic { a: -1.0, b: -s }),
            Family::SEP => (s, Mobility::Quadratic { a: 1.0, b: s }),
            Family::IRW => (1.0, Mobility::Linear),
            Family::KMP => (1.0, Mobility::Quadratic { a: -1.0, b: 0.0 }),
            Family::BEP => (s, Mobility::Quadratic { a: -1.0, b: 0.0 }),
            f => return Err(unsupported(f, "transport coefficients are defined for the reservoir-driven families")),
        };
        Ok(TransportCoefficients { c, mobility })
    }

    /// SEP(1): `D = 1`, `sigma = 2 rho (1 - rho)`.
    pub fn sep1() -> Self {
        TransportCoefficients {
            c: 1.0,
            mobility: Mobility::Quadratic { a: 1.0, b: 1.0 },
        }
    }

    pub fn diffusivity(&self, _rho: f64) -> f64 {
        self.c
    }

    pub fn mobility(&self, rho: f64) -> f64 {
        match self.mobility {
            Mobility::Quadratic { a, b } => 2.0 * a * rho * (b - rho),
            Mobility::Linear => 2.0 * rho,
        }
    }

    /// `A / C`, the factor carried by each extra point of a connected correlation (0 for IRW).
    pub fn a_over_c(&self) -> f64 {
        match self.mobility {
            Mobility::Quadratic { a, .. } => a / self.c,
            Mobility::Linear => 0.0,
        }
    }

    /// `(A, B, C)` when the mobility is quadratic with `B != 0`.
    pub fn abc(&self) -> Option<(f64, f64, f64)> {
        match self.mobility {
            Mobility::Quadratic { a, b } if b != 0.0 => Some((a, b, self.c)),
            _ => None,
        }
    }
}

/// Leading-order macroscopic correlations at `0 < x < y < z < 1` for system size `L`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct MacroCorrelations {
    pub mean: f64,
    pub two_point: f64,
    pub three_point: f64,
}

pub fn macro_correlations(
    tc: &TransportCoefficients,
    rho_a: f64,
    rho_b: f64,
    l: f64,
    (x, y, z): (f64, f64, f64),
) -> Result<MacroCorrelations> {
    if !(0.0 < x && x < y && y < z && z < 1.0) {
        return Err(Error::Domain(format!("need 0 < x < y < z < 1, got ({x}, {y}, {z})")));
    }
    let d = rho_a - rho_b;
    let r = tc.a_over_c();
    Ok(MacroCorrelations {
        mean: rho_a * (1.0 - x) + rho_b * x,
        two_point: -r * d * d / l * x * (1.0 - y),
        three_point: -2.0 * r * r * d.powi(3) / (l * l) * x * (1.0 - 2.0 * y) * (1.0 - z),
    })
}

/// `B^n (A/C)^(n-1)`, relating the `n`-point function to the SEP(1) one at `rho / B`.
pub fn npoint_prefactor(tc: &TransportCoefficients, n: i32) -> Result<f64> {
    let (a, b, c) = tc.abc().ok_or_else(|| Error::Domain("prefactor needs a quadratic mobility with B != 0".into()))?;
    Ok(b.powi(n) * (a / c).powi(n - 1))
}

/// Density profile `rho(x)` on a uniform grid of `[0, 1]` with reservoir values `rho_a`, `rho_b`.
///
/// The grid length must be `4m + 1`: the auxiliary profile is integrated with
/// steps of two grid cells and the functional by Simpson on that subgrid.
#[derive(Clone, Debug, Serialize)]
pub struct MacroProfile {
    pub rho: Vec<f64>,
    pub rho_a: f64,
    pub rho_b: f64,
}

pub const DEFAULT_GRID: usize = 801;

impl MacroProfile {
    pub fn new(rho: Vec<f64>, rho_a: f64, rho_b: f64) -> Result<Self> {
        if rho.len() < 5 || (rho.len() - 1) % 4 != 0 {
            return Err(Error::Domain(format!("profile grid needs 4m+1 points, got {}", rho.len())));
        }
        if rho.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("profile has non-finite values".into()));
        }
        Ok(MacroProfile { rho, rho_a, rho_b })
    }

    pub fn from_fn(rho_a: f64, rho_b: f64, n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let h = 1.0 / (n.max(2) - 1) as f64;
        MacroProfile::new((0..n).map(|i| f(i as f64 * h)).collect(), rho_a, rho_b)
    }

    /// The typical profile `rho_a (1 - x) + rho_b x`.
    pub fn typical(rho_a: f64, rho_b: f64, n: usize) -> Result<Self> {
        MacroProfile::from_fn(rho_a, rho_b, n, |x| rho_a * (1.0 - x) + rho_b * x)
    }

    /// Reads `x, rho` rows on a uniform grid.
    pub fn from_csv<R: std::io::Read>(r: R, rho_a: f64, rho_b: f64) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let mut xs = Vec::new();
        let mut rho = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let parse = |k: usize| -> Result<f64> {
                rec.get(k)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Config(format!("bad profile row {:?}", rec)))
            };
            xs.push(parse(0)?);
            rho.push(parse(1)?);
        }
        let n = xs.len();
        if n >= 2 {
            let h = 1.0 / (n - 1) as f64;
            if xs.iter().enumerate().any(|(i, x)| (x - i as f64 * h).abs() > 1e-9) {
                return Err(Error::Config("profile x values must be a uniform grid on [0, 1]".into()));
            }
        }
        MacroProfile::new(rho, rho_a, rho_b)
    }

    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    fn scaled(&self, k: f64) -> MacroProfile {
        MacroProfile {
            rho: self.rho.iter().map(|r| r * k).collect(),
            rho_a: self.rho_a * k,
            rho_b: self.rho_b * k,
        }
    }
}

/// Monotone solution `F` of `rho = F + F (B - F) F'' / F'^2` with `F(0) = rho_a`, `F(1) = rho_b`,
/// on every second grid point of the profile.
#[derive(Clone, Debug, Serialize)]
pub struct AuxiliaryProfile {
    pub x: Vec<f64>,
    pub f: Vec<f64>,
    pub df: Vec<f64>,
    /// Max ODE residual at interior nodes, with `F''` from a five-point difference of `F'`.
    pub residual: f64,
}

/// Distance kept from the edge of the physical range inside logarithms.
pub const CLAMP: f64 = 1e-10;

struct Shot {
    f: Vec<f64>,
    df: Vec<f64>,
    /// `None` on escape from the admissible region.
    end: Option<f64>,
}

fn shoot(rho: &[f64], f0: f64, s: f64, b: Option<f64>) -> Shot {
    let n = (rho.len() - 1) / 2;
    let h = 2.0 / (rho.len() - 1) as f64;
    let weight = |f: f64| b.map_or(f64::INFINITY, |b| f * (b - f));
    let w0 = weight(f0);
    let rhs = |r: f64, f: f64, p: f64| -> (f64, f64) {
        match b {
            None => (p, 0.0),
            Some(_) => (p, (r - f) * p * p / weight(f)),
        }
    };
    let mut f = Vec::with_capacity(n + 1);
    let mut df = Vec::with_capacity(n + 1);
    let (mut y, mut p) = (f0, s);
    f.push(y);
    df.push(p);
    for k in 0..n {
        let (r0, r1, r2) = (rho[2 * k], rho[2 * k + 1], rho[2 * k + 2]);
        let (a1, b1) = rhs(r0, y, p);
        let (a2, b2) = rhs(r1, y + 0.5 * h * a1, p + 0.5 * h * b1);
        let (a3, b3) = rhs(r1, y + 0.5 * h * a2, p + 0.5 * h * b2);
        let (a4, b4) = rhs(r2, y + h * a3, p + h * b3);
        y += h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
        p += h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
        let w = weight(y);
        let escaped = !y.is_finite() || !p.is_finite() || p.abs() > 1e12 || p * s <= 0.0 || (b.is_some() && !(w * w0 > 0.0));
        if escaped {
            return Shot { f, df, end: None };
        }
        f.push(y);
        df.push(p);
    }
    Shot { f, df, end: Some(y) }
}

/// Solves for the auxiliary profile by bisection on `log|F'(0)|`.
pub fn solve_auxiliary_profile(tc: &TransportCoefficients, profile: &MacroProfile) -> Result<AuxiliaryProfile> {
    let b = match tc.mobility {
        Mobility::Quadratic { b, .. } => Some(b),
        Mobility::Linear => None,
    };
    solve_bvp(profile, b)
}

fn solve_bvp(profile: &MacroProfile, b: Option<f64>) -> Result<AuxiliaryProfile> {
    let (ra, rb) = (profile.rho_a, profile.rho_b);
    let delta = rb - ra;
    if delta == 0.0 {
        return Err(Error::Domain("the auxiliary profile needs rho_a != rho_b".into()));
    }
    let rho = clamp_profile(&profile.rho, ra, b);
    let dir = delta.signum();
    // Positive when the shot lands beyond rho_b (or escapes).
    let miss = |u: f64| -> (f64, Shot) {
        let shot = shoot(&rho, ra, dir * u.exp(), b);
        let m = shot.end.map_or(f64::INFINITY, |e| (e - rb) * dir);
        (m, shot)
    };
    let (mut lo, mut hi) = (delta.abs().ln() - 12.0, delta.abs().ln() + 12.0);
    let (mlo, _) = miss(lo);
    let (mhi, _) = miss(hi);
    if !(mlo < 0.0 && mhi > 0.0) {
        return Err(Error::NoConvergence {
            what: "auxiliary-profile shooting bracket".into(),
            residual: mlo.abs().min(mhi.abs()),
        });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if miss(mid).0 > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let (m1, s1) = miss(lo);
    let (m2, s2) = miss(hi);
    let shot = if m1.abs() <= m2.abs() { s1 } else { s2 };
    if shot.end.is_none() {
        return Err(Error::NoConvergence {
            what: "auxiliary-profile shooting".into(),
            residual: f64::INFINITY,
        });
    }
    let n = shot.f.len();
    let h = 1.0 / (n - 1) as f64;
    let mut residual: f64 = 0.0;
    if let Some(b) = b {
        for i in 2..n.saturating_sub(2) {
            let d = &shot.df;
            let f2 = (d[i - 2] - 8.0 * d[i - 1] + 8.0 * d[i + 1] - d[i + 2]) / (12.0 * h);
            let f = shot.f[i];
            let r = rho[2 * i] - f - f * (b - f) * f2 / (d[i] * d[i]);
            residual = residual.max(r.abs());
        }
    }
    let end_gap = (shot.f[n - 1] - rb).abs();
    Ok(AuxiliaryProfile {
        x: (0..n).map(|i| i as f64 * h).collect(),
        f: shot.f,
        df: shot.df,
        residual: residual.max(end_gap),
    })
}

/// Keeps `rho` strictly inside the physical range, on the side of `rho_a`.
fn clamp_profile(rho: &[f64], rho_a: f64, b: Option<f64>) -> Vec<f64> {
    let sgn = if rho_a < 0.0 { -1.0 } else { 1.0 };
    rho.iter()
        .map(|&r| {
            let mut v = (sgn * r).max(CLAMP);
            if let Some(b) = b {
                if sgn * b > 0.0 {
                    v = v.min(sgn * b - CLAMP);
                }
            }
            sgn * v
        })
        .collect()
}

fn simpson(h: f64, v: &[f64]) -> f64 {
    let n = v.len() - 1;
    let mut s = v[0] + v[n];
    for (i, x) in v.iter().enumerate().take(n).skip(1) {
        s += if i % 2 == 1 { 4.0 * x } else { 2.0 * x };
    }
    s * h / 3.0
}

/// Density large-deviation functional at the optimal auxiliary profile.
///
/// IRW uses its closed form; every other family evaluates
/// `C/(AB) int [rho ln(rho/F) + (B-rho) ln((B-rho)/(B-F)) + B ln(|F'|/|rho_a-rho_b|)]`,
/// with the `B -> 0` form `(C/A) int [1 - rho/F + ln(rho/F) + ln(|F'|/|rho_a-rho_b|)]` for KMP and BEP.
pub fn ld_functional(tc: &TransportCoefficients, profile: &MacroProfile) -> Result<f64> {
    match tc.mobility {
        Mobility::Linear => ld_functional_irw(profile),
        Mobility::Quadratic { a, b } => quadratic_functional(a, b, tc.c, profile).map(|(v, _)| v),
    }
}

fn quadratic_functional(a: f64, b: f64, c: f64, profile: &MacroProfile) -> Result<(f64, AuxiliaryProfile)> {
    let aux = solve_bvp(profile, Some(b))?;
    let rho = clamp_profile(&profile.rho, profile.rho_a, Some(b));
    let ad = (profile.rho_a - profile.rho_b).abs();
    let vals: Vec<f64> = (0..aux.f.len())
        .map(|i| {
            let (r, f, p) = (rho[2 * i], aux.f[i], aux.df[i]);
            let slope = (p.abs() / ad).ln();
            if b == 0.0 {
                (c / a) * (1.0 - r / f + (r / f).ln() + slope)
            } else {
                let bulk = r * (r / f).ln() + (b - r) * ((f - r) / (b - f)).ln_1p();
                c / (a * b) * (bulk + b * slope)
            }
        })
        .collect();
    Ok((simpson(aux.x[1], &vals), aux))
}

/// `int [rho ln(rho/F) - rho + F]` with the linear `F`.
pub fn ld_functional_irw(profile: &MacroProfile) -> Result<f64> {
    let rho = clamp_profile(&profile.rho, profile.rho_a, None);
    let n = (rho.len() - 1) / 2 + 1;
    let h = 1.0 / (n - 1) as f64;
    let vals: Vec<f64> = (0..n)
        .map(|i| {
            let x = i as f64 * h;
            let f = profile.rho_a * (1.0 - x) + profile.rho_b * x;
            let r = rho[2 * i];
            r * (r / f).ln() - r + f
        })
        .collect();
    Ok(simpson(h, &vals))
}

/// The IRW functional as the `B -> infinity` limit of the quadratic family with `A = 1/B`, `C = 1`,
/// extrapolated from four values of `B`.
pub fn ld_functional_irw_limit(profile: &MacroProfile) -> Result<f64> {
    let top = profile.rho.iter().chain([&profile.rho_a, &profile.rho_b]).fold(0.0f64, |m, v| m.max(v.abs()));
    let b0 = 200.0 * top.max(1.0);
    let mut t: Vec<f64> = Vec::with_capacity(4);
    for k in 0..4 {
        let b = b0 * 2f64.powi(k);
        t.push(quadratic_functional(1.0 / b, b, 1.0, profile)?.0);
    }
    // Richardson in 1/B with ratio 2.
    for level in 1..4 {
        let f = 2f64.powi(level);
        for k in (level as usize..4).rev() {
            t[k] = (f * t[k] - t[k - 1]) / (f - 1.0);
        }
    }
    Ok(t[3])
}

/// Both sides of `F(rho) = (C/A) F_SEP(1)(rho / B)`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ScalingRelation {
    pub direct: f64,
    pub via_sep1: f64,
    pub deviation: f64,
}

pub fn scaling_relation(tc: &TransportCoefficients, profile: &MacroProfile) -> Result<ScalingRelation> {
    let (a, b, c) = tc
        .abc()
        .ok_or_else(|| Error::Domain("the scaling relation needs a quadratic mobility with B != 0".into()))?;
    let direct = ld_functional(tc, profile)?;
    let via_sep1 = c / a * ld_functional(&TransportCoefficients::sep1(), &profile.scaled(1.0 / b))?;
    Ok(ScalingRelation {
        direct,
        via_sep1,
        deviation: (direct - via_sep1).abs(),
    })
}

/// One row of the micro/macro comparison.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct MicroMacroRow {
    pub l: usize,
    /// `max |L cov(i, l) - macro(i/(L+1), l/(L+1))|`.
    pub discrepancy: f64,
    /// `max |macro|` over the same pairs.
    pub macro_scale: f64,
    pub relative: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MicroMacroReport {
    pub rows: Vec<MicroMacroRow>,
    pub decreasing: bool,
}

/// Compares `L` times the closed-form covariance with `-(A/C)(rho_a-rho_b)^2 x(1-y)`.
pub fn micro_macro_compare(spec: &ModelSpec, l_list: &[usize]) -> Result<MicroMacroReport> {
    let tc = TransportCoefficients::of(spec)?;
    let mut rows = Vec::with_capacity(l_list.len());
    for &l in l_list {
        let s = validate(ModelSpec { l, ..*spec })?;
        let rho = reservoir_densities(&s);
        let d2 = (rho.rho_a - rho.rho_b).powi(2);
        let (mut worst, mut scale) = (0.0f64, 0.0f64);
        for i in 1..=l {
            for j in i + 1..=l {
                let (x, y) = (i as f64 / (l + 1) as f64, j as f64 / (l + 1) as f64);
                let mac = -tc.a_over_c() * d2 * x * (1.0 - y);
                let mic = l as f64 * covariance_closed_form(&s, i, j)?;
                worst = worst.max((mic - mac).abs());
                scale = scale.max(mac.abs());
            }
        }
        rows.push(MicroMacroRow {
            l,
            discrepancy: worst,
            macro_scale: scale,
            relative: if scale > 0.0 { worst / scale } else { worst },
        });
    }
    let decreasing = rows.windows(2).all(|w| w[1].discrepancy < w[0].discrepancy);
    Ok(MicroMacroReport { rows, decreasing })
}

pub fn write_micro_macro_csv<W: std::io::Write>(report: &MicroMacroReport, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["L", "discrepancy", "macro_scale", "relative"])?;
    for r in &report.rows {
        out.write_record([
            r.l.to_string(),
            format!("{:e}", r.discrepancy),
            format!("{:e}", r.macro_scale),
            format!("{:e}", r.relative),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sip() -> TransportCoefficients {
        TransportCoefficients::of(&ModelSpec::with_rates(Family::SIP, 4, Some(1.0), 1.0, 2.0, 1.0, 2.0)).unwrap()
    }

    fn sep(two_j: f64) -> TransportCoefficients {
        TransportCoefficients::of(&ModelSpec::with_rates(Family::SEP, 4, Some(two_j), 1.0, 1.0, 1.0, 1.0)).unwrap()
    }

    fn bump(ra: f64, rb: f64, amp: f64) -> MacroProfile {
        MacroProfile::from_fn(ra, rb, DEFAULT_GRID, |x| {
            ra * (1.0 - x) + rb * x + amp * (std::f64::consts::PI * x).sin()
        })
        .unwrap()
    }

    #[test]
    fn transport_laws() {
        let t = sip();
        assert_eq!(t.diffusivity(0.3), 1.0);
        assert!((t.mobility(0.5) - 2.0 * 0.5 * 1.5).abs() < 1e-15);
        assert!((sep(2.0).mobility(0.5) - 2.0 * 0.5 * 1.5).abs() < 1e-15);
        let kmp = TransportCoefficients::of(&ModelSpec::with_temperatures(Family::KMP, 3, None, 1.0, 2.0)).unwrap();
        assert_eq!(kmp.mobility(3.0), 18.0);
    }

    #[test]
    fn macro_correlation_signs() {
        let pts = (0.2, 0.5, 0.7);
        let s1 = macro_correlations(&TransportCoefficients::sep1(), 0.8, 0.2, 10.0, pts).unwrap();
        assert!((s1.two_point + 0.36 * 0.2 * 0.5 / 10.0).abs() < 1e-15);
        assert!(macro_correlations(&sip(), 2.0, 1.0, 10.0, pts).unwrap().two_point > 0.0);
        let irw = TransportCoefficients {
            c: 1.0,
            mobility: Mobility::Linear,
        };
        let m = macro_correlations(&irw, 2.0, 1.0, 10.0, pts).unwrap();
        assert_eq!((m.two_point, m.three_point), (0.0, 0.0));
        assert_eq!(macro_correlations(&sip(), 1.0, 1.0, 10.0, pts).unwrap().two_point, 0.0);
    }

    #[test]
    fn typical_profile_has_zero_cost() {
        for tc in [sip(), sep(2.0), TransportCoefficients::sep1()] {
            let (ra, rb) = if tc.abc().unwrap().1 == 1.0 { (0.7, 0.2) } else { (1.5, 0.5) };
            let p = MacroProfile::typical(ra, rb, DEFAULT_GRID).unwrap();
            let aux = solve_auxiliary_profile(&tc, &p).unwrap();
            for (x, f) in aux.x.iter().zip(&aux.f) {
                assert!((f - (ra * (1.0 - x) + rb * x)).abs() < 1e-10);
            }
            assert!(ld_functional(&tc, &p).unwrap().abs() < 1e-8);
        }
    }

    #[test]
    fn perturbed_profiles_cost_more() {
        for (tc, ra, rb) in [(sip(), 1.5, 0.5), (sep(2.0), 1.5, 0.5), (sep(1.0), 0.8, 0.3)] {
            for amp in [-0.1, 0.05, 0.15] {
                let p = bump(ra, rb, amp);
                let aux = solve_auxiliary_profile(&tc, &p).unwrap();
                assert!(aux.residual < 1e-8, "residual {}", aux.residual);
                assert!(aux.df.windows(2).all(|w| w[0] * w[1] > 0.0));
                assert!(ld_functional(&tc, &p).unwrap() > 0.0);
            }
        }
    }

    #[test]
    fn irw_two_paths_agree() {
        let p = bump(1.2, 0.4, 0.2);
        let closed = ld_functional_irw(&p).unwrap();
        let limit = ld_functional_irw_limit(&p).unwrap();
        assert!(closed > 0.0);
        assert!((closed - limit).abs() < 1e-8, "{closed} vs {limit}");
    }

    #[test]
    fn scaling_relation_holds() {
        for (tc, p) in [(sip(), bump(1.5, 0.5, 0.1)), (sep(2.0), bump(1.5, 0.5, -0.1))] {
            let r = scaling_relation(&tc, &p).unwrap();
            assert!(r.deviation < 1e-7, "{r:?}");
        }
    }

    #[test]
    fn kmp_functional() {
        let kmp = TransportCoefficients::of(&ModelSpec::with_temperatures(Family::KMP, 3, None, 2.0, 1.0)).unwrap();
        assert!(ld_functional(&kmp, &MacroProfile::typical(2.0, 1.0, DEFAULT_GRID).unwrap()).unwrap().abs() < 1e-8);
        assert!(ld_functional(&kmp, &bump(2.0, 1.0, 0.2)).unwrap() > 0.0);
    }

    #[test]
    fn npoint_rule() {
        let (ra, rb, l, pts) = (1.5, 0.5, 20.0, (0.2, 0.4, 0.9));
        for tc in [sip(), sep(2.0), sep(3.0)] {
            let b = tc.abc().unwrap().1;
            let fam = macro_correlations(&tc, ra, rb, l, pts).unwrap();
            let base = macro_correlations(&TransportCoefficients::sep1(), ra / b, rb / b, l, pts).unwrap();
            assert!((fam.two_point - npoint_prefactor(&tc, 2).unwrap() * base.two_point).abs() < 1e-14);
            assert!((fam.three_point - npoint_prefactor(&tc, 3).unwrap() * base.three_point).abs() < 1e-14);
        }
    }

    #[test]
    fn micro_macro_converges() {
        let sip = ModelSpec::with_rates(Family::SIP, 3, Some(1.0), 2.0, 3.0, 1.0, 2.0);
        let r = micro_macro_compare(&sip, &[20, 50, 100]).unwrap();
        assert!(r.decreasing && r.rows[2].relative < 0.03, "{r:?}");
        let sep = ModelSpec::with_rates(Family::SEP, 3, Some(2.0), 1.5, 0.5, 0.3, 1.7);
        let r = micro_macro_compare(&sep, &[20, 50, 100]).unwrap();
        assert!(r.decreasing && r.rows[2].relative < 0.03, "{r:?}");
        let bep = ModelSpec::with_temperatures(Family::BEP, 3, Some(0.5), 1.0, 3.0);
        let r = micro_macro_compare(&bep, &[20, 50, 100]).unwrap();
        assert!(r.decreasing, "{r:?}");
    }

    #[test]
    fn profile_csv_round_trip() {
        let text = "x,rho\n0,1\n0.25,0.9\n0.5,0.8\n0.75,0.7\n1,0.6\n";
        let p = MacroProfile::from_csv(text.as_bytes(), 1.0, 0.6).unwrap();
        assert_eq!(p.len(), 5);
        assert!(MacroProfile::from_csv("x,rho\n0,1\n0.3,1\n".as_bytes(), 1.0, 1.0).is_err());
    }
}
