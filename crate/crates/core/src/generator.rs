//! Transition enumeration and explicit rate matrices for the discrete families.
//!
//! States are occupation vectors `eta` (sites `0..L` internally) enumerated
//! lexicographically with `eta[0]` most significant. SIP/IRW spaces are
//! capped at `M` particles per site. A transition that would exceed the cap is
//! dropped and its source state flagged `truncated`. Resampling from an
//! infinite-support reservoir law is cut where the tail drops below
//! [`RESERVOIR_TAIL`], and the discarded mass is reported, not flagged.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{unsupported, Error, Result};
use crate::kernel::RedistributionKernel;
use crate::model::{reservoir_marginals, validate, Family, ModelSpec};

/// Occupation vector `eta_1..eta_L` (stored 0-based).
pub type DiscreteConfig = Vec<u32>;

/// Default state-space budget.
pub const DEFAULT_BUDGET: usize = 5_000_000;

/// Reservoir resampling laws are cut where the remaining mass is below this.
pub const RESERVOIR_TAIL: f64 = 1e-16;

/// Per-bond hopping law shared by forward and dual processes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum BulkLaw {
    /// Rate `eta_i (2k + eta_{i+1})`.
    Inclusion { two_k: f64 },
    /// Rate `eta_i (2j - eta_{i+1})`.
    Exclusion { two_j: u32 },
    /// Rate `eta_i`.
    Independent,
}

impl BulkLaw {
    pub fn of(spec: &ModelSpec) -> Self {
        match spec.family.base() {
            Family::SIP | Family::BEP => BulkLaw::Inclusion { two_k: spec.shape_value() },
            Family::SEP => BulkLaw::Exclusion { two_j: spec.two_j() as u32 },
            _ => BulkLaw::Independent,
        }
    }

    /// Factor multiplying the departure count: `2k + m`, `2j - m` or `1`.
    #[inline]
    pub fn attraction(&self, m: u32) -> f64 {
        match *self {
            BulkLaw::Inclusion { two_k } => two_k + m as f64,
            BulkLaw::Exclusion { two_j } => two_j.saturating_sub(m) as f64,
            BulkLaw::Independent => 1.0,
        }
    }

    /// Rate of one particle moving from a site holding `from` to one holding `to`.
    #[inline]
    pub fn hop(&self, from: u32, to: u32) -> f64 {
        from as f64 * self.attraction(to)
    }

    /// Per-site capacity (`2j` for exclusion).
    pub fn capacity(&self) -> Option<u32> {
        match *self {
            BulkLaw::Exclusion { two_j } => Some(two_j),
            _ => None,
        }
    }
}

/// An elementary change of a forward configuration (0-based sites).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Move {
    Hop { from: usize, to: usize },
    Birth { site: usize },
    Death { site: usize },
    /// Boundary resampling to `value`.
    Set { site: usize, value: u32 },
    /// Bond `(bond, bond+1)` redistributed with `left` particles on the left.
    Split { bond: usize, left: u32 },
}

impl Move {
    /// Applies the move, returning `false` (and leaving `eta` untouched) if a site would exceed `cap`.
    pub fn apply(&self, eta: &mut [u32], cap: u32) -> bool {
        match *self {
            Move::Hop { from, to } => {
                if eta[to] >= cap {
                    return false;
                }
                eta[from] -= 1;
                eta[to] += 1;
            }
            Move::Birth { site } => {
                if eta[site] >= cap {
                    return false;
                }
                eta[site] += 1;
            }
            Move::Death { site } => eta[site] -= 1,
            Move::Set { site, value } => {
                if value > cap {
                    return false;
                }
                eta[site] = value;
            }
            Move::Split { bond, left } => {
                let e = eta[bond] + eta[bond + 1];
                if left > cap || e - left > cap {
                    return false;
                }
                eta[bond] = left;
                eta[bond + 1] = e - left;
            }
        }
        true
    }
}

/// Precomputed rate data for a discrete forward family.
#[derive(Clone, Debug)]
pub struct ForwardRates {
    pub family: Family,
    pub l: usize,
    pub law: BulkLaw,
    /// `(alpha, gamma, delta, beta)`.
    pub rates: (f64, f64, f64, f64),
    /// Thermalized bond kernel, if any.
    pub kernel: Option<RedistributionKernel>,
    /// Truncated resampling pmfs for the left and right boundary.
    pub resample: Option<(Vec<f64>, Vec<f64>)>,
    /// Mass discarded from the resampling laws.
    pub reservoir_tail: f64,
    kernel_pmfs: Vec<Vec<f64>>,
}

impl ForwardRates {
    pub fn new(spec: &ModelSpec) -> Result<Self> {
        let spec = validate(*spec)?;
        if !spec.family.is_discrete() {
            return Err(unsupported(spec.family, "continuous state space"));
        }
        let kernel = RedistributionKernel::forward(&spec);
        let (resample, reservoir_tail) = if spec.family.is_thermalized() {
            let (a, b) = reservoir_marginals(&spec);
            let (pa, ta) = a.pmf_vec(a.adaptive_cap(RESERVOIR_TAIL));
            let (pb, tb) = b.pmf_vec(b.adaptive_cap(RESERVOIR_TAIL));
            (Some((pa, pb)), ta.max(tb))
        } else {
            (None, 0.0)
        };
        Ok(ForwardRates {
            family: spec.family,
            l: spec.l,
            law: BulkLaw::of(&spec),
            rates: spec.rates(),
            kernel,
            resample,
            reservoir_tail,
            kernel_pmfs: Vec::new(),
        })
    }

    /// Makes kernel pmfs for bond sums up to `e_max` available without recomputation.
    pub fn prepare_kernel(&mut self, e_max: usize) {
        if let Some(k) = self.kernel {
            while self.kernel_pmfs.len() <= e_max {
                let e = self.kernel_pmfs.len();
                self.kernel_pmfs.push(k.pmf(e));
            }
        }
    }

    /// Calls `f(move, rate)` for every transition out of `eta`, no-op outcomes included.
    pub fn for_each(&self, eta: &[u32], mut f: impl FnMut(Move, f64)) {
        let l = self.l;
        let (alpha, gamma, delta, beta) = self.rates;
        if let (Some(kernel), Some((pa, pb))) = (self.kernel, &self.resample) {
            for (v, &p) in pa.iter().enumerate() {
                f(Move::Set { site: 0, value: v as u32 }, p);
            }
            for bond in 0..l.saturating_sub(1) {
                let e = (eta[bond] + eta[bond + 1]) as usize;
                let owned;
                let pmf = match self.kernel_pmfs.get(e) {
                    Some(p) => p,
                    None => {
                        owned = kernel.pmf(e);
                        &owned
                    }
                };
                for (r, &p) in pmf.iter().enumerate() {
                    if p > 0.0 {
                        f(Move::Split { bond, left: r as u32 }, p);
                    }
                }
            }
            for (v, &p) in pb.iter().enumerate() {
                f(Move::Set { site: l - 1, value: v as u32 }, p);
            }
            return;
        }
        let law = self.law;
        let birth_a = alpha * law.attraction(eta[0]);
        if birth_a > 0.0 {
            f(Move::Birth { site: 0 }, birth_a);
        }
        if eta[0] > 0 {
            f(Move::Death { site: 0 }, gamma * eta[0] as f64);
        }
        for i in 0..l.saturating_sub(1) {
            let right = law.hop(eta[i], eta[i + 1]);
            if right > 0.0 {
                f(Move::Hop { from: i, to: i + 1 }, right);
            }
            let left = law.hop(eta[i + 1], eta[i]);
            if left > 0.0 {
                f(Move::Hop { from: i + 1, to: i }, left);
            }
        }
        let birth_b = delta * law.attraction(eta[l - 1]);
        if birth_b > 0.0 {
            f(Move::Birth { site: l - 1 }, birth_b);
        }
        if eta[l - 1] > 0 {
            f(Move::Death { site: l - 1 }, beta * eta[l - 1] as f64);
        }
    }
}

/// All transitions out of `eta` with their rates (no cap; no-op outcomes of
/// thermalized mechanisms are listed too).
pub fn enumerate_transitions(spec: &ModelSpec, eta: &[u32]) -> Result<Vec<(DiscreteConfig, f64)>> {
    let fr = ForwardRates::new(spec)?;
    if eta.len() != spec.l {
        return Err(Error::Domain(format!("configuration has {} sites, L = {}", eta.len(), spec.l)));
    }
    if let Some(c) = fr.law.capacity() {
        if eta.iter().any(|&n| n > c) {
            return Err(Error::Domain(format!("occupation exceeds 2j = {c}")));
        }
    }
    let mut out = Vec::new();
    fr.for_each(eta, |mv, rate| {
        let mut next = eta.to_vec();
        mv.apply(&mut next, u32::MAX);
        out.push((next, rate));
    });
    Ok(out)
}

/// Lexicographic product space `{0..=cap}^L`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSpace {
    pub l: usize,
    pub cap: u32,
}

impl StateSpace {
    pub fn new(l: usize, cap: u32, budget: usize) -> Result<Self> {
        let n = (cap as u128 + 1).checked_pow(l as u32).unwrap_or(u128::MAX);
        if n > budget as u128 {
            return Err(Error::Budget { states: n, budget });
        }
        Ok(StateSpace { l, cap })
    }

    pub fn len(&self) -> usize {
        (self.cap as usize + 1).pow(self.l as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, eta: &[u32]) -> usize {
        let base = self.cap as usize + 1;
        eta.iter().fold(0, |acc, &n| acc * base + n as usize)
    }

    pub fn decode_into(&self, mut idx: usize, eta: &mut [u32]) {
        let base = self.cap as usize + 1;
        for slot in eta.iter_mut().rev() {
            *slot = (idx % base) as u32;
            idx /= base;
        }
    }

    pub fn decode(&self, idx: usize) -> DiscreteConfig {
        let mut eta = vec![0; self.l];
        self.decode_into(idx, &mut eta);
        eta
    }
}

/// Explicit generator on an enumerated state space, stored as CSR off-diagonals.
#[derive(Clone, Debug)]
pub struct SparseGenerator {
    pub space: StateSpace,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
    /// Minus the off-diagonal row sum.
    pub diag: Vec<f64>,
    /// Whether a transition out of the state was clipped by the cap.
    pub truncated: Vec<bool>,
    /// Resampling mass discarded at the boundaries (thermalized families).
    pub reservoir_tail: f64,
}

struct Row {
    entries: Vec<(usize, f64)>,
    truncated: bool,
}

/// Builds the generator with per-site cap `cap` (SEP families use `2j`, no truncation).
pub fn build_generator(spec: &ModelSpec, cap: u32) -> Result<SparseGenerator> {
    build_generator_with_budget(spec, cap, DEFAULT_BUDGET)
}

pub fn build_generator_with_budget(spec: &ModelSpec, cap: u32, budget: usize) -> Result<SparseGenerator> {
    let mut fr = ForwardRates::new(spec)?;
    let cap = fr.law.capacity().unwrap_or(cap);
    let space = StateSpace::new(spec.l, cap, budget)?;
    fr.prepare_kernel(2 * cap as usize);
    let mut reservoir_tail = fr.reservoir_tail;
    if let Some((pa, pb)) = &fr.resample {
        let above = |p: &Vec<f64>| p.iter().skip(cap as usize + 1).sum::<f64>();
        reservoir_tail += above(pa).max(above(pb));
    }
    let rows: Vec<Row> = (0..space.len())
        .into_par_iter()
        .map_init(
            || vec![0u32; spec.l],
            |eta, idx| {
                space.decode_into(idx, eta);
                build_row(&fr, &space, eta, idx)
            },
        )
        .collect();
    let mut row_ptr = Vec::with_capacity(rows.len() + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    let mut diag = Vec::with_capacity(rows.len());
    let mut truncated = Vec::with_capacity(rows.len());
    row_ptr.push(0);
    for row in rows {
        let mut out = 0.0;
        for (c, v) in row.entries {
            cols.push(c);
            vals.push(v);
            out += v;
        }
        diag.push(-out);
        truncated.push(row.truncated);
        row_ptr.push(cols.len());
    }
    Ok(SparseGenerator {
        space,
        row_ptr,
        cols,
        vals,
        diag,
        truncated,
        reservoir_tail,
    })
}

fn build_row(fr: &ForwardRates, space: &StateSpace, eta: &mut [u32], idx: usize) -> Row {
    let mut entries: Vec<(usize, f64)> = Vec::new();
    let mut truncated = false;
    let thermal = fr.kernel.is_some();
    let mut scratch = eta.to_vec();
    fr.for_each(eta, |mv, rate| {
        scratch.copy_from_slice(eta);
        if !mv.apply(&mut scratch, space.cap) {
            // Resampling beyond the cap is accounted in reservoir_tail.
            if !(thermal && matches!(mv, Move::Set { .. })) {
                truncated = true;
            }
            return;
        }
        let j = space.index(&scratch);
        if j != idx {
            entries.push((j, rate));
        }
    });
    entries.sort_by_key(|e| e.0);
    let mut merged: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
    for (c, v) in entries {
        match merged.last_mut() {
            Some(last) if last.0 == c => last.1 += v,
            _ => merged.push((c, v)),
        }
    }
    Row {
        entries: merged,
        truncated,
    }
}

impl SparseGenerator {
    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Off-diagonal entries of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.cols[a..b].iter().cloned().zip(self.vals[a..b].iter().cloned())
    }

    /// Entry `G(i, j)` including the diagonal.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.diag[i];
        }
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        match self.cols[a..b].binary_search(&j) {
            Ok(k) => self.vals[a + k],
            Err(_) => 0.0,
        }
    }

    pub fn max_exit_rate(&self) -> f64 {
        self.diag.iter().fold(0.0, |m: f64, d| m.max(-d))
    }

    /// `(G f)(i) = sum_j G(i,j) f(j)`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        (0..self.n())
            .map(|i| self.row(i).map(|(j, v)| v * (f[j] - f[i])).sum())
            .collect()
    }

    /// `(p^T G)(j)`.
    pub fn apply_transpose(&self, p: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = p.iter().zip(&self.diag).map(|(a, d)| a * d).collect();
        for i in 0..self.n() {
            let pi = p[i];
            if pi != 0.0 {
                for (j, v) in self.row(i) {
                    out[j] += pi * v;
                }
            }
        }
        out
    }

    /// Largest `|row sum|` relative to the row's exit rate.
    pub fn max_row_sum_error(&self) -> f64 {
        (0..self.n())
            .map(|i| {
                let s: f64 = self.row(i).map(|(_, v)| v).sum::<f64>() + self.diag[i];
                s.abs() / (1.0 + self.diag[i].abs())
            })
            .fold(0.0, f64::max)
    }

    /// Coordinate text export: header `# states: N`, then `row col value` lines.
    pub fn write_coordinate<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# states: {}", self.n())?;
        for i in 0..self.n() {
            let mut wrote_diag = false;
            for (j, v) in self.row(i) {
                if !wrote_diag && j > i {
                    writeln!(w, "{i} {i} {:e}", self.diag[i])?;
                    wrote_diag = true;
                }
                writeln!(w, "{i} {j} {v:e}")?;
            }
            if !wrote_diag {
                writeln!(w, "{i} {i} {:e}", self.diag[i])?;
            }
        }
        Ok(())
    }
}

/// Largest `|G(x,y) pi(x) - G(y,x) pi(y)|` over all state pairs.
pub fn check_detailed_balance(g: &SparseGenerator, pi: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..g.n() {
        for (j, v) in g.row(i) {
            let back = g.get(j, i);
            worst = worst.max((v * pi[i] - back * pi[j]).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sip() -> ModelSpec {
        ModelSpec::with_rates(Family::SIP, 2, Some(1.0), 1.0, 3.0, 1.0, 2.0)
    }

    #[test]
    fn sip_bulk_hop_rate() {
        let t = enumerate_transitions(&sip(), &[1, 0]).unwrap();
        let hop = t.iter().find(|(c, _)| c == &vec![0, 1]).unwrap();
        assert_eq!(hop.1, 1.0);
        assert!(!t.iter().any(|(c, _)| c == &vec![2, 0] && false));
        // births alpha(2k + eta) on the left and delta(2k + eta) on the right, deaths gamma*eta
        assert!(t.iter().any(|(c, r)| c == &vec![2, 0] && (*r - 2.0).abs() < 1e-15));
        assert!(t.iter().any(|(c, r)| c == &vec![0, 0] && (*r - 3.0).abs() < 1e-15));
        assert!(t.iter().any(|(c, r)| c == &vec![1, 1] && (*r - 1.0).abs() < 1e-15));
    }

    #[test]
    fn full_sep_blocks_hops() {
        let spec = ModelSpec::with_rates(Family::SEP, 2, Some(1.0), 1.0, 1.0, 1.0, 1.0);
        let t = enumerate_transitions(&spec, &[1, 1]).unwrap();
        assert_eq!(t.len(), 2, "only the two deaths remain");
        assert!(t.iter().all(|(c, _)| c.iter().sum::<u32>() == 1));
    }

    #[test]
    fn thirw_bond_outcomes() {
        // From (1,1,0): bond (1,2) splits 2 particles Binomial(2,1/2), bond (2,3) splits 1 fairly.
        let spec = ModelSpec::with_rates(Family::ThIRW, 3, None, 1.0, 1.0, 1.0, 1.0);
        let g = build_generator(&spec, 3).unwrap();
        let from = g.space.index(&[1, 1, 0]);
        assert!((g.get(from, g.space.index(&[2, 0, 0])) - 0.25).abs() < 1e-15);
        assert!((g.get(from, g.space.index(&[0, 2, 0])) - 0.25).abs() < 1e-15);
        assert!((g.get(from, g.space.index(&[1, 0, 1])) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn generator_examples() {
        let sep = ModelSpec::with_rates(Family::SEP, 3, Some(1.0), 1.0, 1.0, 1.0, 2.0);
        let g = build_generator(&sep, 0).unwrap();
        assert_eq!(g.n(), 8);
        assert!(g.max_row_sum_error() < 1e-15);
        assert!(g.truncated.iter().all(|t| !t));

        let g = build_generator(&sip(), 5).unwrap();
        assert_eq!(g.n(), 36);
        for i in 0..g.n() {
            let eta = g.space.decode(i);
            assert_eq!(g.truncated[i], eta.contains(&5), "{eta:?}");
        }
        assert!(g.vals.iter().all(|&v| v > 0.0));

        let thsep = ModelSpec::with_rates(Family::ThSEP, 2, Some(1.0), 1.0, 1.0, 1.0, 1.0);
        let g = build_generator(&thsep, 1).unwrap();
        let from = g.space.index(&[1, 0]);
        let to = g.space.index(&[0, 1]);
        // 1/2 from the bond; resampling site 1 to 0 and site 2 to 1 are separate targets
        assert!((g.get(from, to) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn coordinate_export_header() {
        let sep = ModelSpec::with_rates(Family::SEP, 1, Some(1.0), 1.0, 1.0, 1.0, 1.0);
        let g = build_generator(&sep, 0).unwrap();
        let mut buf = Vec::new();
        g.write_coordinate(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# states: 2\n"));
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn continuous_family_rejected() {
        let kmp = ModelSpec::with_temperatures(Family::KMP, 2, None, 1.0, 1.0);
        assert!(build_generator(&kmp, 3).is_err());
    }
}
