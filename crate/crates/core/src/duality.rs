//! Dual processes with absorbing boundaries, duality functions, absorption
//! probabilities, stationary expectations and moment evolution.
//!
//! A dual configuration `xi` has `L + 2` slots: `xi[0]` and `xi[L+1]` count
//! walkers absorbed at the left and right end, `xi[1..=L]` are bulk sites.
//! Walker number `|xi|` is conserved, so each sector `|xi| = n` is finite.
//!
//! For a single walker hopping at rate `h` to each neighbour and absorbed at
//! rates `u` (site 1) and `v` (site L), the left absorption probability solves
//! a tridiagonal system whose solution is linear in `i`:
//! `p_i = (L + h/v - i) / (L + h/u + h/v - 1)`.

use std::collections::{BTreeMap, HashMap};

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use serde::Serialize;

use crate::error::{unsupported, Error, Result};
use crate::generator::{BulkLaw, SparseGenerator};
use crate::kernel::RedistributionKernel;
use crate::model::{reservoir_densities, validate, Family, ModelSpec};
use crate::special::{binom_u64, falling, falling_real, rising};

/// Dual occupation vector `xi_0..xi_{L+1}`.
pub type DualConfig = Vec<u32>;

/// Default exact budget for dual sectors.
pub const DUAL_MAX_WALKERS: usize = 4;
pub const DUAL_MAX_L: usize = 12;

/// How walkers leave the bulk.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Absorption {
    /// Each walker on the boundary site is absorbed at rate `left` / `right`.
    PerWalker { left: f64, right: f64 },
    /// At rate 1 the whole boundary site is moved into the absorbing slot.
    Thermalized,
}

/// The dual of a forward model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DualSpec {
    pub family: Family,
    pub l: usize,
    /// Bulk hopping law (ignored when `kernel` is set).
    pub law: BulkLaw,
    /// Thermalized bulk redistribution kernel.
    pub kernel: Option<RedistributionKernel>,
    pub absorption: Absorption,
    /// Constant `c` with `D(eta, delta_i) = c eta_i`.
    pub c: f64,
    /// Weights of the absorbed walkers in the duality function (`c rho_a`, `c rho_b`).
    pub w_a: f64,
    pub w_b: f64,
}

/// Dual process of `spec` per the absorption-rate table.
pub fn dual_spec(spec: &ModelSpec) -> Result<DualSpec> {
    let spec = validate(*spec)?;
    let fam = spec.family;
    let shape = spec.shape_value();
    let c = match fam.base() {
        Family::SIP | Family::SEP | Family::BEP => 1.0 / shape,
        _ => 1.0,
    };
    let rho = reservoir_densities(&spec);
    let absorption = if fam.is_thermalized() {
        Absorption::Thermalized
    } else {
        match fam {
            Family::SIP => {
                let (a, g, d, b) = spec.rates();
                Absorption::PerWalker { left: g - a, right: b - d }
            }
            Family::SEP => {
                let (a, g, d, b) = spec.rates();
                Absorption::PerWalker { left: g + a, right: b + d }
            }
            Family::IRW => {
                let (_, g, _, b) = spec.rates();
                Absorption::PerWalker { left: g, right: b }
            }
            Family::BEP => Absorption::PerWalker { left: 0.5, right: 0.5 },
            _ => unreachable!(),
        }
    };
    Ok(DualSpec {
        family: fam,
        l: spec.l,
        law: BulkLaw::of(&spec),
        kernel: RedistributionKernel::dual(&spec),
        absorption,
        c,
        w_a: c * rho.rho_a,
        w_b: c * rho.rho_b,
    })
}

/// An elementary dual move (slot indices `0..=L+1`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DualMove {
    Hop { from: usize, to: usize },
    /// One walker from site 1 to slot 0 (`left`) or from site L to slot L+1.
    AbsorbOne { left: bool },
    /// All walkers of the boundary site into the adjacent slot.
    AbsorbAll { left: bool },
    /// Bond `(bond, bond+1)`, 1-based, redistributed with `left` walkers on the left.
    Split { bond: usize, left: u32 },
}

impl DualMove {
    pub fn apply(&self, xi: &mut [u32]) {
        let l = xi.len() - 2;
        match *self {
            DualMove::Hop { from, to } => {
                xi[from] -= 1;
                xi[to] += 1;
            }
            DualMove::AbsorbOne { left: true } => {
                xi[1] -= 1;
                xi[0] += 1;
            }
            DualMove::AbsorbOne { left: false } => {
                xi[l] -= 1;
                xi[l + 1] += 1;
            }
            DualMove::AbsorbAll { left: true } => {
                xi[0] += xi[1];
                xi[1] = 0;
            }
            DualMove::AbsorbAll { left: false } => {
                xi[l + 1] += xi[l];
                xi[l] = 0;
            }
            DualMove::Split { bond, left } => {
                let e = xi[bond] + xi[bond + 1];
                xi[bond] = left;
                xi[bond + 1] = e - left;
            }
        }
    }
}

impl DualSpec {
    /// Calls `f(move, rate)` for every dual transition out of `xi`, no-op outcomes included.
    pub fn for_each(&self, xi: &[u32], mut f: impl FnMut(DualMove, f64)) {
        let l = self.l;
        match self.absorption {
            Absorption::PerWalker { left, right } => {
                if xi[1] > 0 {
                    f(DualMove::AbsorbOne { left: true }, left * xi[1] as f64);
                }
                if xi[l] > 0 {
                    f(DualMove::AbsorbOne { left: false }, right * xi[l] as f64);
                }
            }
            Absorption::Thermalized => {
                f(DualMove::AbsorbAll { left: true }, 1.0);
                f(DualMove::AbsorbAll { left: false }, 1.0);
            }
        }
        for i in 1..l {
            if let Some(k) = self.kernel {
                let e = (xi[i] + xi[i + 1]) as usize;
                for (r, p) in k.pmf(e).into_iter().enumerate() {
                    if p > 0.0 {
                        f(DualMove::Split { bond: i, left: r as u32 }, p);
                    }
                }
            } else {
                let right = self.law.hop(xi[i], xi[i + 1]);
                if right > 0.0 {
                    f(DualMove::Hop { from: i, to: i + 1 }, right);
                }
                let back = self.law.hop(xi[i + 1], xi[i]);
                if back > 0.0 {
                    f(DualMove::Hop { from: i + 1, to: i }, back);
                }
            }
        }
    }

    /// Transitions out of `xi` merged by target, no-ops removed, sorted by target.
    pub fn transitions(&self, xi: &[u32]) -> Vec<(DualConfig, f64)> {
        let mut out: BTreeMap<DualConfig, f64> = BTreeMap::new();
        self.for_each(xi, |mv, rate| {
            let mut next = xi.to_vec();
            mv.apply(&mut next);
            if rate > 0.0 && next.as_slice() != xi {
                *out.entry(next).or_insert(0.0) += rate;
            }
        });
        out.into_iter().collect()
    }

    /// Single-walker bulk hop rate per direction and absorption rates `(h, u, v)`.
    pub fn walker_rates(&self) -> (f64, f64, f64) {
        let h = match self.kernel {
            Some(k) => k.pmf(1)[0],
            None => self.law.hop(1, 0),
        };
        match self.absorption {
            Absorption::PerWalker { left, right } => (h, left, right),
            Absorption::Thermalized => (h, 1.0, 1.0),
        }
    }
}

/// Duality function for discrete families, `D(eta, xi)`.
pub fn duality_discrete(d: &DualSpec, eta: &[u32], xi: &[u32]) -> f64 {
    let l = d.l;
    debug_assert_eq!(eta.len(), l);
    debug_assert_eq!(xi.len(), l + 2);
    let mut v = d.w_a.powi(xi[0] as i32) * d.w_b.powi(xi[l + 1] as i32);
    for i in 0..l {
        let (n, m) = (eta[i] as u64, xi[i + 1] as u64);
        if m == 0 {
            continue;
        }
        if m > n {
            return 0.0;
        }
        let ff = falling(n, m);
        v *= match d.family.base() {
            Family::SIP => ff / rising(1.0 / d.c, m),
            Family::SEP => ff / falling_real(1.0 / d.c, m),
            _ => ff,
        };
    }
    v
}

/// Duality function for energy families, `D(z, xi) = w_a^xi0 prod z^xi Gamma(2k)/Gamma(2k+xi) w_b^xi_{L+1}`.
pub fn duality_continuous(d: &DualSpec, z: &[f64], xi: &[u32]) -> f64 {
    let l = d.l;
    let two_k = 1.0 / d.c;
    let mut v = d.w_a.powi(xi[0] as i32) * d.w_b.powi(xi[l + 1] as i32);
    for i in 0..l {
        let m = xi[i + 1];
        if m > 0 {
            v *= z[i].powi(m as i32) / rising(two_k, m as u64);
        }
    }
    v
}

/// Closed-form single-walker left absorption probabilities `p_0..p_{L+1}`.
pub fn single_walker_absorption(spec: &ModelSpec) -> Result<Vec<f64>> {
    let d = dual_spec(spec)?;
    let (h, u, v) = d.walker_rates();
    let l = d.l as f64;
    let mut p = vec![0.0; d.l + 2];
    p[0] = 1.0;
    let denom = l + h / u + h / v - 1.0;
    for (i, slot) in p.iter_mut().enumerate().take(d.l + 1).skip(1) {
        *slot = (l + h / v - i as f64) / denom;
    }
    Ok(p)
}

/// The same probabilities from the first-step linear system (tridiagonal solve).
pub fn single_walker_absorption_linear(spec: &ModelSpec) -> Result<Vec<f64>> {
    let d = dual_spec(spec)?;
    let (h, u, v) = d.walker_rates();
    let l = d.l;
    // out_i p_i - h p_{i-1} - h p_{i+1} = u [i = 1]
    let mut sub = vec![0.0; l];
    let mut dia = vec![0.0; l];
    let mut sup = vec![0.0; l];
    let mut rhs = vec![0.0; l];
    for i in 0..l {
        let mut out = 0.0;
        if i > 0 {
            out += h;
            sub[i] = -h;
        } else {
            out += u;
            rhs[i] = u;
        }
        if i + 1 < l {
            out += h;
            sup[i] = -h;
        } else {
            out += v;
        }
        dia[i] = out;
    }
    let x = thomas(&sub, &dia, &sup, &rhs);
    let mut p = vec![1.0];
    p.extend(x);
    p.push(0.0);
    Ok(p)
}

/// Tridiagonal solve (no pivoting; diagonally dominant systems only).
pub(crate) fn thomas(sub: &[f64], dia: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = dia.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = sup[0] / dia[0];
    d[0] = rhs[0] / dia[0];
    for i in 1..n {
        let m = dia[i] - sub[i] * c[i - 1];
        c[i] = sup[i] / m;
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// The sector `|xi| = n` of a dual process, enumerated lexicographically.
#[derive(Clone, Debug)]
pub struct DualSector {
    pub spec: DualSpec,
    pub n: u32,
    pub states: Vec<DualConfig>,
    pub index: HashMap<DualConfig, usize>,
}

impl DualSector {
    pub fn new(spec: &DualSpec, n: u32) -> Result<Self> {
        Self::with_budget(spec, n, DUAL_MAX_WALKERS, DUAL_MAX_L)
    }

    pub fn with_budget(spec: &DualSpec, n: u32, max_walkers: usize, max_l: usize) -> Result<Self> {
        if n as usize > max_walkers || spec.l > max_l {
            let count = binom_u64((spec.l + n as usize + 1) as u64, n as u64) as u128;
            return Err(Error::Budget {
                states: count,
                budget: binom_u64((max_l + max_walkers + 1) as u64, max_walkers as u64) as usize,
            });
        }
        let slots = spec.l + 2;
        let site_cap = spec.law.capacity();
        let mut states = Vec::new();
        let mut cur = vec![0u32; slots];
        fill(&mut cur, 0, n, site_cap, &mut states);
        let index = states.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Ok(DualSector {
            spec: *spec,
            n,
            states,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Whether every walker of state `s` has been absorbed.
    pub fn is_absorbed(&self, s: usize) -> bool {
        let x = &self.states[s];
        x[1..=self.spec.l].iter().all(|&v| v == 0)
    }

    /// Dense generator matrix of the sector.
    pub fn dense_generator(&self) -> nalgebra::DMatrix<f64> {
        let n = self.len();
        let mut g = nalgebra::DMatrix::zeros(n, n);
        for (i, x) in self.states.iter().enumerate() {
            for (y, r) in self.spec.transitions(x) {
                let j = self.index[&y];
                g[(i, j)] += r;
                g[(i, i)] -= r;
            }
        }
        g
    }

    /// `(G f)(xi)` for a function on the sector.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        self.states
            .iter()
            .enumerate()
            .map(|(i, x)| {
                self.spec
                    .transitions(x)
                    .into_iter()
                    .map(|(y, r)| r * (f[self.index[&y]] - f[i]))
                    .sum()
            })
            .collect()
    }
}

fn fill(cur: &mut [u32], pos: usize, left: u32, cap: Option<u32>, out: &mut Vec<DualConfig>) {
    let last = cur.len() - 1;
    let bulk = pos != 0 && pos != last;
    if pos == last {
        cur[pos] = left;
        out.push(cur.to_vec());
        return;
    }
    let hi = match (bulk, cap) {
        (true, Some(c)) => left.min(c),
        _ => left,
    };
    for v in 0..=hi {
        cur[pos] = v;
        fill(cur, pos + 1, left - v, cap, out);
    }
    cur[pos] = 0;
}

/// Probabilities `a_m` that `m` walkers end in slot 0 and the rest in slot L+1.
#[derive(Clone, Debug, Serialize)]
pub struct AbsorptionTable {
    pub xi: DualConfig,
    pub probabilities: Vec<f64>,
    pub std_errors: Vec<f64>,
}

impl AbsorptionTable {
    /// Writes `m, probability, std_error` rows.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["m", "probability", "std_error"])?;
        for (m, (p, e)) in self.probabilities.iter().zip(&self.std_errors).enumerate() {
            out.write_record([m.to_string(), format!("{p:e}"), format!("{e:e}")])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Exact absorption probabilities for every start state of a sector.
#[derive(Clone, Debug)]
pub struct AbsorptionSolver {
    pub sector: DualSector,
    /// `a[s][m]` for each state `s`.
    pub a: Vec<Vec<f64>>,
}

impl AbsorptionSolver {
    /// Solves `(-G_TT) H = G_TA` with a sparse LU, columns indexed by final `xi_0 = m`.
    pub fn new(spec: &DualSpec, n: u32) -> Result<Self> {
        let sector = DualSector::new(spec, n)?;
        Self::from_sector(sector)
    }

    pub fn from_sector(sector: DualSector) -> Result<Self> {
        let n = sector.n as usize;
        let size = sector.len();
        let transient: Vec<usize> = (0..size).filter(|&s| !sector.is_absorbed(s)).collect();
        let mut tpos = vec![usize::MAX; size];
        for (k, &s) in transient.iter().enumerate() {
            tpos[s] = k;
        }
        let mut a = vec![vec![0.0; n + 1]; size];
        for s in 0..size {
            if sector.is_absorbed(s) {
                a[s][sector.states[s][0] as usize] = 1.0;
            }
        }
        let nt = transient.len();
        if nt > 0 {
            let mut trip = Vec::new();
            let mut rhs = Mat::<f64>::zeros(nt, n + 1);
            for (k, &s) in transient.iter().enumerate() {
                let mut out = 0.0;
                for (y, r) in sector.spec.transitions(&sector.states[s]) {
                    out += r;
                    let t = sector.index[&y];
                    if sector.is_absorbed(t) {
                        rhs[(k, y[0] as usize)] += r;
                    } else {
                        trip.push(Triplet::new(k, tpos[t], -r));
                    }
                }
                trip.push(Triplet::new(k, k, out));
            }
            let m = SparseColMat::<usize, f64>::try_new_from_triplets(nt, nt, &trip)
                .map_err(|e| Error::Singular(format!("{e:?}")))?;
            let lu = m.sp_lu().map_err(|e| Error::Singular(format!("{e:?}")))?;
            let h = lu.solve(&rhs);
            for (k, &s) in transient.iter().enumerate() {
                for mm in 0..=n {
                    a[s][mm] = h[(k, mm)];
                }
            }
        }
        Ok(AbsorptionSolver { sector, a })
    }

    pub fn table(&self, xi: &[u32]) -> Result<AbsorptionTable> {
        let s = *self
            .sector
            .index
            .get(xi)
            .ok_or_else(|| Error::Domain(format!("{xi:?} is not in the |xi| = {} sector", self.sector.n)))?;
        Ok(AbsorptionTable {
            xi: xi.to_vec(),
            probabilities: self.a[s].clone(),
            std_errors: vec![0.0; self.a[s].len()],
        })
    }

    /// `sum_m w_a^m w_b^(n-m) a_m(xi)` for state index `s`.
    pub fn expectation_at(&self, s: usize) -> f64 {
        let d = &self.sector.spec;
        let n = self.sector.n as i32;
        self.a[s]
            .iter()
            .enumerate()
            .map(|(m, &p)| p * d.w_a.powi(m as i32) * d.w_b.powi(n - m as i32))
            .sum()
    }
}

/// How absorption probabilities are obtained.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AbsorptionMethod {
    Exact,
    MonteCarlo { replicas: usize, seed: u64 },
}

pub fn absorption_table(spec: &ModelSpec, xi: &[u32], method: AbsorptionMethod) -> Result<AbsorptionTable> {
    let d = dual_spec(spec)?;
    if xi.len() != d.l + 2 {
        return Err(Error::Domain(format!("dual configuration needs L+2 = {} slots", d.l + 2)));
    }
    let n: u32 = xi.iter().sum();
    match method {
        AbsorptionMethod::Exact => AbsorptionSolver::new(&d, n)?.table(xi),
        AbsorptionMethod::MonteCarlo { replicas, seed } => Ok(crate::kmc::dual_absorption_mc(&d, xi, replicas, seed)),
    }
}

/// Stationary expectation of `D(., xi)` from the exact absorption table.
pub fn stationary_expectation(spec: &ModelSpec, xi: &[u32]) -> Result<f64> {
    let d = dual_spec(spec)?;
    let n: u32 = xi.iter().sum();
    let solver = AbsorptionSolver::new(&d, n)?;
    let s = solver.sector.index[xi];
    Ok(solver.expectation_at(s))
}

/// `G(eta, xi, t) = E_xi[D(eta, xi_t)]` for every `xi` of the sector.
#[derive(Clone, Debug)]
pub struct MomentEvolution {
    pub sector: DualSector,
    pub values: Vec<f64>,
}

/// Evolves the duality-moment function over time `t` from `D(eta, .)`.
///
/// Small sectors use a dense Padé matrix exponential; larger ones use
/// uniformization on the vector.
pub fn moment_evolution(spec: &ModelSpec, n: u32, d_values: impl Fn(&[u32]) -> f64, t: f64) -> Result<MomentEvolution> {
    let d = dual_spec(spec)?;
    let sector = DualSector::new(&d, n)?;
    let f: Vec<f64> = sector.states.iter().map(|x| d_values(x)).collect();
    let values = evolve_sector(&sector, &f, t);
    Ok(MomentEvolution { sector, values })
}

/// `e^{tG} f` on a dual sector.
pub fn evolve_sector(sector: &DualSector, f: &[f64], t: f64) -> Vec<f64> {
    if sector.len() <= 600 {
        let p = (sector.dense_generator() * t).exp();
        let v = p * nalgebra::DVector::from_column_slice(f);
        v.iter().cloned().collect()
    } else {
        uniformize_dual(sector, f, t)
    }
}

fn uniformize_dual(sector: &DualSector, f: &[f64], t: f64) -> Vec<f64> {
    let rows: Vec<Vec<(usize, f64)>> = sector
        .states
        .iter()
        .map(|x| sector.spec.transitions(x).into_iter().map(|(y, r)| (sector.index[&y], r)).collect())
        .collect();
    let exit: Vec<f64> = rows.iter().map(|r| r.iter().map(|e| e.1).sum()).collect();
    let lambda = exit.iter().cloned().fold(1e-300, f64::max) * 1.02;
    let step = |v: &[f64]| -> Vec<f64> {
        (0..v.len())
            .map(|i| v[i] + rows[i].iter().map(|&(j, r)| r * (v[j] - v[i])).sum::<f64>() / lambda)
            .collect()
    };
    crate::linalg::uniformized_sum(f, lambda * t, step)
}

/// Outcome of a generator-level duality check.
#[derive(Clone, Debug, Serialize)]
pub struct DualityCheck {
    /// Largest `|[L D(., xi)](eta) - [L_dual D(eta, .)](xi)|`, divided by `max(1, scale)`
    /// where `scale` sums the absolute terms of both sides.
    pub max_residual: f64,
    pub pairs_checked: usize,
    pub states_skipped: usize,
}

/// Checks `[L D(., xi)](eta) = [L_dual D(eta, .)](xi)` on a built forward generator.
///
/// The forward side is the matrix action of `g` (so the explicit generator is
/// what is being tested); states flagged truncated are skipped.
pub fn check_duality_identity(spec: &ModelSpec, g: &SparseGenerator, max_walkers: u32) -> Result<DualityCheck> {
    let d = dual_spec(spec)?;
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    let sectors: Vec<DualSector> = (0..=max_walkers).map(|n| DualSector::new(&d, n)).collect::<Result<_>>()?;
    let dual_rows: Vec<Vec<Vec<(usize, f64)>>> = sectors
        .iter()
        .map(|s| {
            s.states
                .iter()
                .map(|x| d.transitions(x).into_iter().map(|(y, r)| (s.index[&y], r)).collect())
                .collect()
        })
        .collect();
    let n_eta = g.n();
    let etas: Vec<Vec<u32>> = (0..n_eta).map(|i| g.space.decode(i)).collect();
    for sector in &sectors {
        let rows = &dual_rows[sector.n as usize];
        for (si, xi) in sector.states.iter().enumerate() {
            let dcol: Vec<f64> = etas.iter().map(|eta| duality_discrete(&d, eta, xi)).collect();
            for (ei, eta) in etas.iter().enumerate() {
                if g.truncated[ei] {
                    continue;
                }
                let mut lhs = 0.0;
                let mut scale = 0.0;
                for (j, r) in g.row(ei) {
                    lhs += r * (dcol[j] - dcol[ei]);
                    scale += r * (dcol[j].abs() + dcol[ei].abs());
                }
                let mut rhs = 0.0;
                let here = dcol[ei];
                for &(sj, r) in &rows[si] {
                    let there = duality_discrete(&d, eta, &sector.states[sj]);
                    rhs += r * (there - here);
                    scale += r * (there.abs() + here.abs());
                }
                worst = worst.max((lhs - rhs).abs() / scale.max(1.0));
                pairs += 1;
            }
        }
    }
    Ok(DualityCheck {
        max_residual: worst,
        pairs_checked: pairs,
        states_skipped: g.truncated.iter().filter(|&&t| t).count(),
    })
}

/// Polynomial in `z_1..z_L`: exponent vector to coefficient.
pub type Poly = BTreeMap<Vec<u32>, f64>;

fn add_term(p: &mut Poly, exps: Vec<u32>, c: f64) {
    if c != 0.0 {
        *p.entry(exps).or_insert(0.0) += c;
    }
}

/// `D(z, xi)` as a single monomial.
pub fn duality_monomial(d: &DualSpec, xi: &[u32]) -> Poly {
    let mut p = Poly::new();
    let ones = vec![1.0; d.l];
    add_term(&mut p, xi[1..=d.l].to_vec(), duality_continuous(d, &ones, xi));
    p
}

/// Forward generator of an energy family applied exactly to a polynomial.
///
/// BEP: per bond `z_i z_{i+1} (d_i - d_{i+1})^2 - 2k (z_i - z_{i+1})(d_i - d_{i+1})`,
/// boundary `T (2k d + z d^2) - z d / 2`. ThBEP/KMP: Beta(2k,2k) bond
/// redistribution and Gamma(2k, T) resampling, both at rate 1.
pub fn apply_energy_generator(spec: &ModelSpec, p: &Poly) -> Result<Poly> {
    let spec = validate(*spec)?;
    let l = spec.l;
    let two_k = spec.shape_value();
    let (ta, tb) = spec.temperatures();
    let mut out = Poly::new();
    match spec.family {
        Family::BEP => {
            for (e, &c) in p {
                for i in 0..l.saturating_sub(1) {
                    let (a, b) = (e[i] as f64, e[i + 1] as f64);
                    let shift = |da: i64, db: i64| {
                        let mut v = e.clone();
                        v[i] = (v[i] as i64 + da) as u32;
                        v[i + 1] = (v[i + 1] as i64 + db) as u32;
                        v
                    };
                    // z_i z_{i+1} (d_i^2 - 2 d_i d_{i+1} + d_{i+1}^2)
                    if e[i] >= 2 {
                        add_term(&mut out, shift(-1, 1), c * a * (a - 1.0));
                    }
                    if e[i] >= 1 && e[i + 1] >= 1 {
                        add_term(&mut out, e.clone(), -2.0 * c * a * b);
                    }
                    if e[i + 1] >= 2 {
                        add_term(&mut out, shift(1, -1), c * b * (b - 1.0));
                    }
                    // -2k (z_i - z_{i+1})(d_i - d_{i+1})
                    add_term(&mut out, e.clone(), -two_k * c * (a + b));
                    if e[i] >= 1 {
                        add_term(&mut out, shift(-1, 1), two_k * c * a);
                    }
                    if e[i + 1] >= 1 {
                        add_term(&mut out, shift(1, -1), two_k * c * b);
                    }
                }
                for (site, t) in [(0usize, ta), (l - 1, tb)] {
                    let a = e[site] as f64;
                    if e[site] >= 1 {
                        let mut v = e.clone();
                        v[site] -= 1;
                        // T (2k a + a (a - 1)) z^(a-1)
                        add_term(&mut out, v, c * t * (two_k * a + a * (a - 1.0)));
                    }
                    add_term(&mut out, e.clone(), -0.5 * c * a);
                }
            }
        }
        Family::ThBEP | Family::KMP => {
            for (e, &c) in p {
                for i in 0..l.saturating_sub(1) {
                    let (a, b) = (e[i] as u64, e[i + 1] as u64);
                    // E[x^a (1-x)^b] for x ~ Beta(2k, 2k)
                    let m = rising(two_k, a) * rising(two_k, b) / rising(2.0 * two_k, a + b);
                    for j in 0..=(a + b) {
                        let mut v = e.clone();
                        v[i] = j as u32;
                        v[i + 1] = (a + b - j) as u32;
                        add_term(&mut out, v, c * m * binom_u64(a + b, j) as f64);
                    }
                    add_term(&mut out, e.clone(), -c);
                }
                for (site, t) in [(0usize, ta), (l - 1, tb)] {
                    let a = e[site] as u64;
                    let mut v = e.clone();
                    v[site] = 0;
                    add_term(&mut out, v, c * rising(two_k, a) * t.powi(a as i32));
                    add_term(&mut out, e.clone(), -c);
                }
            }
        }
        f => return Err(unsupported(f, "polynomial generator is defined for energy families only")),
    }
    Ok(out)
}

/// Symbolic duality check for an energy family: compares polynomial
/// coefficients of `L D(., xi)` and `sum rate (D(., xi') - D(., xi))`.
pub fn check_energy_duality(spec: &ModelSpec, max_walkers: u32) -> Result<DualityCheck> {
    let d = dual_spec(spec)?;
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    for n in 0..=max_walkers {
        let sector = DualSector::new(&d, n)?;
        for xi in &sector.states {
            let lhs = apply_energy_generator(spec, &duality_monomial(&d, xi))?;
            let mut rhs = Poly::new();
            let here = duality_monomial(&d, xi);
            for (y, r) in d.transitions(xi) {
                for (e, c) in duality_monomial(&d, &y) {
                    add_term(&mut rhs, e, r * c);
                }
                for (e, c) in &here {
                    add_term(&mut rhs, e.clone(), -r * c);
                }
            }
            let keys: std::collections::BTreeSet<&Vec<u32>> = lhs.keys().chain(rhs.keys()).collect();
            for k in keys {
                let a = lhs.get(k).cloned().unwrap_or(0.0);
                let b = rhs.get(k).cloned().unwrap_or(0.0);
                worst = worst.max((a - b).abs() / (1.0f64).max(a.abs().max(b.abs())));
            }
            pairs += 1;
        }
    }
    Ok(DualityCheck {
        max_residual: worst,
        pairs_checked: pairs,
        states_skipped: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sip() -> ModelSpec {
        ModelSpec::with_rates(Family::SIP, 3, Some(1.0), 1.0, 3.0, 1.0, 2.0)
    }

    #[test]
    fn dual_rates_table() {
        let d = dual_spec(&sip()).unwrap();
        assert_eq!(d.absorption, Absorption::PerWalker { left: 2.0, right: 1.0 });
        let bep = ModelSpec::with_temperatures(Family::BEP, 3, Some(1.0), 1.0, 2.0);
        let d = dual_spec(&bep).unwrap();
        assert_eq!(d.absorption, Absorption::PerWalker { left: 0.5, right: 0.5 });
        assert_eq!(d.law, BulkLaw::Inclusion { two_k: 1.0 });
        assert_eq!(d.w_a, 2.0);
    }

    #[test]
    fn duality_function_examples() {
        let d = dual_spec(&sip()).unwrap();
        assert_eq!(duality_discrete(&d, &[4, 1, 0], &[0, 0, 0, 0, 0]), 1.0);
        // 3!/1! * Gamma(1)/Gamma(3) at 2k = 1
        assert!((duality_discrete(&d, &[3, 0, 0], &[0, 2, 0, 0, 0]) - 3.0).abs() < 1e-15);
        let two = dual_spec(&ModelSpec::with_rates(Family::SIP, 3, Some(2.0), 1.0, 3.0, 1.0, 2.0)).unwrap();
        assert!((duality_discrete(&two, &[3, 0, 0], &[0, 2, 0, 0, 0]) - 1.0).abs() < 1e-15);
        assert_eq!(duality_discrete(&d, &[1, 0, 0], &[0, 2, 0, 0, 0]), 0.0);
        let bep = ModelSpec::with_temperatures(Family::BEP, 1, Some(1.0), 1.0, 1.0);
        let d = dual_spec(&bep).unwrap();
        assert!((duality_continuous(&d, &[2.0], &[0, 2, 0]) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn irw_walker_example_and_linear_system() {
        let irw = ModelSpec::with_rates(Family::IRW, 3, None, 0.3, 1.0, 0.7, 1.0);
        let p = single_walker_absorption(&irw).unwrap();
        assert!((p[1] - 0.75).abs() < 1e-15);
        assert_eq!((p[0], p[4]), (1.0, 0.0));
        let q = single_walker_absorption_linear(&irw).unwrap();
        for i in 0..5 {
            assert!((p[i] - q[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn single_walker_table_matches_closed_form() {
        for spec in [
            sip(),
            ModelSpec::with_rates(Family::ThSEP, 4, Some(2.0), 1.0, 1.0, 0.5, 1.5),
            ModelSpec::with_temperatures(Family::KMP, 5, None, 1.0, 2.0),
        ] {
            let p = single_walker_absorption(&spec).unwrap();
            let d = dual_spec(&spec).unwrap();
            let solver = AbsorptionSolver::new(&d, 1).unwrap();
            for i in 1..=spec.l {
                let mut xi = vec![0; spec.l + 2];
                xi[i] = 1;
                let t = solver.table(&xi).unwrap();
                assert!((t.probabilities[1] - p[i]).abs() < 1e-12, "{:?} i={i}", spec.family);
            }
        }
    }

    #[test]
    fn kmp_profile_is_the_derived_form() {
        let (ta, tb, l) = (1.0, 3.0, 5usize);
        let spec = ModelSpec::with_temperatures(Family::KMP, l, None, ta, tb);
        let p = single_walker_absorption(&spec).unwrap();
        for i in 1..=l {
            let want = (ta * (2 * l + 1 - 2 * i) as f64 + tb * (2 * i - 1) as f64) / (2 * l) as f64;
            assert!((ta * p[i] + tb * (1.0 - p[i]) - want).abs() < 1e-14);
        }
    }

    #[test]
    fn sip_pair_differs_from_independent_walkers() {
        let d = dual_spec(&sip()).unwrap();
        let s = AbsorptionSolver::new(&d, 2).unwrap();
        let t = s.table(&[0, 0, 2, 0, 0]).unwrap();
        let p = single_walker_absorption(&sip()).unwrap()[2];
        assert!((t.probabilities[2] - p * p).abs() > 1e-4);
        assert!((t.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn energy_families_satisfy_symbolic_duality() {
        for spec in [
            ModelSpec::with_temperatures(Family::BEP, 3, Some(1.0), 1.0, 2.5),
            ModelSpec::with_temperatures(Family::BEP, 2, Some(0.5), 0.7, 1.3),
            ModelSpec::with_temperatures(Family::ThBEP, 3, Some(1.7), 1.0, 2.5),
            ModelSpec::with_temperatures(Family::KMP, 3, None, 0.4, 2.0),
        ] {
            let c = check_energy_duality(&spec, 3).unwrap();
            assert!(c.max_residual < 1e-12, "{:?} {}", spec.family, c.max_residual);
        }
    }

    #[test]
    fn thbep_with_doubled_weights_is_not_dual() {
        let spec = ModelSpec::with_temperatures(Family::ThBEP, 2, Some(1.0), 1.0, 2.0);
        let mut d = dual_spec(&spec).unwrap();
        d.w_a *= 2.0;
        d.w_b *= 2.0;
        let xi = vec![0, 1, 0, 0];
        let lhs = apply_energy_generator(&spec, &duality_monomial(&d, &xi)).unwrap();
        let mut rhs = Poly::new();
        for (y, r) in d.transitions(&xi) {
            for (e, c) in duality_monomial(&d, &y) {
                add_term(&mut rhs, e, r * c);
            }
            for (e, c) in duality_monomial(&d, &xi) {
                add_term(&mut rhs, e, -r * c);
            }
        }
        let zero = vec![0u32, 0];
        assert!((lhs.get(&zero).unwrap_or(&0.0) - rhs.get(&zero).unwrap_or(&0.0)).abs() > 0.1);
    }

    #[test]
    fn kmp_and_thbep_half_duals_coincide() {
        let kmp = dual_spec(&ModelSpec::with_temperatures(Family::KMP, 4, None, 1.0, 2.0)).unwrap();
        let th = dual_spec(&ModelSpec::with_temperatures(Family::ThBEP, 4, Some(1.0), 1.0, 2.0)).unwrap();
        for n in 0..=3 {
            let s = DualSector::new(&kmp, n).unwrap();
            for xi in &s.states {
                assert_eq!(kmp.transitions(xi), th.transitions(xi));
            }
        }
    }

    #[test]
    fn moment_evolution_limits() {
        let spec = sip();
        let d = dual_spec(&spec).unwrap();
        let eta = [2u32, 0, 1];
        let at0 = moment_evolution(&spec, 2, |xi| duality_discrete(&d, &eta, xi), 0.0).unwrap();
        for (x, v) in at0.sector.states.iter().zip(&at0.values) {
            assert!((v - duality_discrete(&d, &eta, x)).abs() < 1e-14);
        }
        let late = moment_evolution(&spec, 2, |xi| duality_discrete(&d, &eta, xi), 200.0).unwrap();
        let solver = AbsorptionSolver::new(&d, 2).unwrap();
        for s in 0..late.sector.len() {
            assert!((late.values[s] - solver.expectation_at(s)).abs() < 1e-10);
        }
    }
}
