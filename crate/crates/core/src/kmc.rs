//! Continuous-time kinetic Monte Carlo for the discrete families and their duals.
//!
//! Rates live in a binary sum tree with one leaf per channel (two hop
//! directions per bond, two boundary channels per end); an event touches at
//! most two sites, so only the neighbouring leaves are refreshed. Thermalized
//! dynamics have one unit-rate clock per bond and per boundary, so the event
//! is drawn uniformly and no tree is needed.
//!
//! Each bond tracks the jump-count current (net number of left-to-right
//! crossings) and the drift-integrated flux `int (rate_right - rate_left) dt`,
//! which is integrated lazily between changes of the bond's two sites.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson};
use rayon::prelude::*;
use serde::Serialize;

use crate::duality::{Absorption, AbsorptionTable, DualSpec};
use crate::error::{unsupported, Error, Result};
use crate::generator::{BulkLaw, RESERVOIR_TAIL};
use crate::kernel::{cumulative, inverse_cdf, KernelCache};
use crate::model::{reservoir_marginals, validate, EquilibriumMarginal, Family, ModelSpec};
use crate::rng::replica_rng;
pub use crate::stats::StationarySummary;
use crate::stats::{summarize, Batch};

/// Events between full recomputations of the rate tree.
const RECOMPUTE_EVERY: u64 = 1_000_000;

/// Binary sum tree over channel rates.
#[derive(Clone, Debug)]
pub struct SumTree {
    leaves: usize,
    tree: Vec<f64>,
}

impl SumTree {
    pub fn new(n: usize) -> Self {
        let leaves = n.next_power_of_two().max(1);
        SumTree {
            leaves,
            tree: vec![0.0; 2 * leaves],
        }
    }

    /// Sets leaf `i` and recomputes its ancestors from their children.
    pub fn set(&mut self, i: usize, v: f64) {
        let mut k = i + self.leaves;
        self.tree[k] = v;
        while k > 1 {
            k /= 2;
            self.tree[k] = self.tree[2 * k] + self.tree[2 * k + 1];
        }
    }

    pub fn get(&self, i: usize) -> f64 {
        self.tree[i + self.leaves]
    }

    pub fn total(&self) -> f64 {
        self.tree[1]
    }

    /// Leaf whose cumulative interval contains `u in [0, total)`.
    pub fn find(&self, mut u: f64) -> usize {
        let mut k = 1;
        while k < self.leaves {
            let left = self.tree[2 * k];
            if u < left || self.tree[2 * k + 1] <= 0.0 {
                k *= 2;
            } else {
                u -= left;
                k = 2 * k + 1;
            }
        }
        // Guard against rounding landing on an empty leaf.
        let mut i = k - self.leaves;
        while self.get(i) <= 0.0 && i > 0 {
            i -= 1;
        }
        i
    }

    /// Total recomputed from the leaves alone.
    pub fn leaf_sum(&self) -> f64 {
        self.tree[self.leaves..].iter().sum()
    }
}

#[derive(Clone, Debug)]
enum Boundary {
    /// Birth at `birth * attraction(eta)`, death at `death * eta`.
    Reservoir { birth: f64, death: f64 },
    /// One walker into the absorbing slot at `rate * xi`.
    Absorb { rate: f64 },
    /// Unit-rate resampling by inverse CDF.
    Resample { cdf: Vec<f64> },
    /// Unit-rate transfer of the whole site into the absorbing slot.
    AbsorbAll,
}

/// Simulation state shared by forward and dual runs.
#[derive(Clone, Debug, Serialize)]
pub struct KmcState {
    /// Forward: `eta_1..eta_L`. Dual: `xi_0..xi_{L+1}`.
    pub config: Vec<u32>,
    pub time: f64,
    /// Jump-count current per bond.
    pub currents: Vec<f64>,
    pub events: u64,
}

/// Gillespie engine.
#[derive(Clone, Debug)]
pub struct Kmc {
    l: usize,
    /// Index of bulk site 1 inside `config` (0 forward, 1 dual).
    offset: usize,
    law: BulkLaw,
    kernel: Option<KernelCache>,
    left: Boundary,
    right: Boundary,
    thermal: bool,
    tree: SumTree,
    rng: ChaCha8Rng,
    pub state: KmcState,
    drift: Vec<f64>,
    drift_rate: Vec<f64>,
    drift_since: Vec<f64>,
    activity: Vec<f64>,
    activity_rate: Vec<f64>,
    since_check: u64,
}

impl Kmc {
    /// Forward process of a discrete family from `eta`.
    pub fn forward(spec: &ModelSpec, eta: &[u32], rng: ChaCha8Rng) -> Result<Self> {
        let spec = validate(*spec)?;
        if !spec.family.is_discrete() {
            return Err(unsupported(spec.family, "continuous state; use the diffusion simulator"));
        }
        if eta.len() != spec.l {
            return Err(Error::Domain(format!("configuration has {} sites, L = {}", eta.len(), spec.l)));
        }
        let law = BulkLaw::of(&spec);
        if let Some(c) = law.capacity() {
            if eta.iter().any(|&n| n > c) {
                return Err(Error::Domain(format!("occupation exceeds 2j = {c}")));
            }
        }
        let kernel = crate::kernel::RedistributionKernel::forward(&spec).map(KernelCache::new);
        let (left, right) = if spec.family.is_thermalized() {
            let (a, b) = reservoir_marginals(&spec);
            let cdf = |m: EquilibriumMarginal| Boundary::Resample {
                cdf: cumulative(&m.pmf_vec(m.adaptive_cap(RESERVOIR_TAIL)).0),
            };
            (cdf(a), cdf(b))
        } else {
            let (a, g, d, b) = spec.rates();
            (Boundary::Reservoir { birth: a, death: g }, Boundary::Reservoir { birth: d, death: b })
        };
        Ok(Self::build(spec.l, 0, law, kernel, left, right, eta.to_vec(), rng))
    }

    /// Bulk-only process (no reservoirs) with hopping law `law`.
    pub fn closed(law: BulkLaw, eta: &[u32], rng: ChaCha8Rng) -> Self {
        let none = || Boundary::Reservoir { birth: 0.0, death: 0.0 };
        Self::build(eta.len(), 0, law, None, none(), none(), eta.to_vec(), rng)
    }

    /// Dual process from `xi` (length `L + 2`).
    pub fn dual(d: &DualSpec, xi: &[u32], rng: ChaCha8Rng) -> Self {
        let (left, right) = match d.absorption {
            Absorption::PerWalker { left, right } => (Boundary::Absorb { rate: left }, Boundary::Absorb { rate: right }),
            Absorption::Thermalized => (Boundary::AbsorbAll, Boundary::AbsorbAll),
        };
        Self::build(d.l, 1, d.law, d.kernel.map(KernelCache::new), left, right, xi.to_vec(), rng)
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        l: usize,
        offset: usize,
        law: BulkLaw,
        kernel: Option<KernelCache>,
        left: Boundary,
        right: Boundary,
        config: Vec<u32>,
        rng: ChaCha8Rng,
    ) -> Self {
        let thermal = kernel.is_some();
        let bonds = l.saturating_sub(1);
        let mut k = Kmc {
            l,
            offset,
            law,
            kernel,
            left,
            right,
            thermal,
            tree: SumTree::new(2 * bonds + 4),
            rng,
            state: KmcState {
                config,
                time: 0.0,
                currents: vec![0.0; bonds],
                events: 0,
            },
            drift: vec![0.0; bonds],
            drift_rate: vec![0.0; bonds],
            drift_since: vec![0.0; bonds],
            activity: vec![0.0; bonds],
            activity_rate: vec![0.0; bonds],
            since_check: 0,
        };
        k.recompute();
        k
    }

    fn site(&self, i: usize) -> u32 {
        self.state.config[self.offset + i]
    }

    fn bond_rates(&self, b: usize) -> (f64, f64) {
        let (p, q) = (self.site(b), self.site(b + 1));
        (self.law.hop(p, q), self.law.hop(q, p))
    }

    fn boundary_rates(&self, left: bool) -> (f64, f64) {
        let (mech, x) = if left {
            (&self.left, self.site(0))
        } else {
            (&self.right, self.site(self.l - 1))
        };
        match *mech {
            Boundary::Reservoir { birth, death } => (birth * self.law.attraction(x), death * x as f64),
            Boundary::Absorb { rate } => (rate * x as f64, 0.0),
            _ => (1.0, 0.0),
        }
    }

    /// `(rate_right - rate_left, rate_right + rate_left)` of bond `b`.
    fn drift_of(&self, b: usize) -> (f64, f64) {
        if self.thermal {
            let (p, q) = (self.site(b) as f64, self.site(b + 1) as f64);
            ((p - q) / 2.0, (p + q) / 2.0)
        } else {
            let (r, l) = self.bond_rates(b);
            (r - l, r + l)
        }
    }

    fn refresh_bond(&mut self, b: usize) {
        let t = self.state.time;
        let dt = t - self.drift_since[b];
        self.drift[b] += self.drift_rate[b] * dt;
        self.activity[b] += self.activity_rate[b] * dt;
        self.drift_since[b] = t;
        (self.drift_rate[b], self.activity_rate[b]) = self.drift_of(b);
        if !self.thermal {
            let (r, l) = self.bond_rates(b);
            self.tree.set(2 * b, r);
            self.tree.set(2 * b + 1, l);
        }
    }

    fn refresh_boundary(&mut self, left: bool) {
        if self.thermal {
            return;
        }
        let base = 2 * self.l.saturating_sub(1) + if left { 0 } else { 2 };
        let (x, y) = self.boundary_rates(left);
        self.tree.set(base, x);
        self.tree.set(base + 1, y);
    }

    /// Recomputes every rate from the configuration.
    fn recompute(&mut self) {
        for b in 0..self.l.saturating_sub(1) {
            self.refresh_bond(b);
        }
        self.refresh_boundary(true);
        self.refresh_boundary(false);
    }

    /// Refreshes everything depending on bulk site `i` (0-based).
    fn touched(&mut self, i: usize) {
        if i > 0 {
            self.refresh_bond(i - 1);
        }
        if i + 1 < self.l {
            self.refresh_bond(i);
        }
        if i == 0 {
            self.refresh_boundary(true);
        }
        if i + 1 == self.l {
            self.refresh_boundary(false);
        }
    }

    /// Total event rate in the current state.
    pub fn total_rate(&self) -> f64 {
        if self.thermal {
            (self.l + 1) as f64
        } else {
            self.tree.total()
        }
    }

    /// Advances by one event. Fails if no event can occur.
    pub fn step(&mut self) -> Result<()> {
        let total = self.total_rate();
        if !(total > 0.0) {
            return Err(Error::Domain("total rate is zero (absorbing state)".into()));
        }
        let u: f64 = self.rng.random();
        self.state.time += -(1.0 - u).ln() / total;
        self.fire();
        Ok(())
    }

    /// Runs until time `t`; the event pending at `t` is discarded (memoryless clocks).
    pub fn run_until(&mut self, t: f64) -> Result<()> {
        loop {
            let total = self.total_rate();
            if !(total > 0.0) {
                return Err(Error::Domain("total rate is zero (absorbing state)".into()));
            }
            let u: f64 = self.rng.random();
            let next = self.state.time - (1.0 - u).ln() / total;
            if next > t {
                self.state.time = t;
                return Ok(());
            }
            self.state.time = next;
            self.fire();
        }
    }

    fn fire(&mut self) {
        let l = self.l;
        let bonds = l.saturating_sub(1);
        self.state.events += 1;
        if self.thermal {
            let c = self.rng.random_range(0..l + 1);
            if c == 0 {
                self.boundary_event(true, 0);
            } else if c == l {
                self.boundary_event(false, 0);
            } else {
                let b = c - 1;
                let (p, q) = (self.offset + b, self.offset + b + 1);
                let e = (self.state.config[p] + self.state.config[q]) as usize;
                let u: f64 = self.rng.random();
                let r = self.kernel.as_mut().expect("thermal kernel").sample(e, u) as u32;
                let old_right = self.state.config[q];
                self.state.config[p] = r;
                self.state.config[q] = e as u32 - r;
                self.state.currents[b] += self.state.config[q] as f64 - old_right as f64;
                self.touched(b);
                self.touched(b + 1);
            }
        } else {
            let u: f64 = self.rng.random::<f64>() * self.tree.total();
            let c = self.tree.find(u);
            if c < 2 * bonds {
                let b = c / 2;
                let (p, q) = (self.offset + b, self.offset + b + 1);
                if c % 2 == 0 {
                    self.state.config[p] -= 1;
                    self.state.config[q] += 1;
                    self.state.currents[b] += 1.0;
                } else {
                    self.state.config[q] -= 1;
                    self.state.config[p] += 1;
                    self.state.currents[b] -= 1.0;
                }
                self.touched(b);
                self.touched(b + 1);
            } else {
                let k = c - 2 * bonds;
                self.boundary_event(k < 2, k % 2);
            }
            self.since_check += 1;
            if self.since_check >= RECOMPUTE_EVERY {
                self.since_check = 0;
                let before = self.tree.total();
                self.recompute();
                let after = self.tree.leaf_sum();
                assert!(
                    (before - after).abs() <= 1e-9 * after.max(1.0),
                    "rate bookkeeping drifted: {before} vs {after}"
                );
            }
        }
        if let Some(cap) = self.law.capacity() {
            debug_assert!(self.state.config[self.offset..self.offset + l].iter().all(|&n| n <= cap));
        }
    }

    fn boundary_event(&mut self, left: bool, which: usize) {
        let i = if left { 0 } else { self.l - 1 };
        let s = self.offset + i;
        let slot = if left { s.wrapping_sub(1) } else { s + 1 };
        let mech = if left { &self.left } else { &self.right };
        match mech {
            Boundary::Reservoir { .. } => {
                if which == 0 {
                    self.state.config[s] += 1;
                } else {
                    self.state.config[s] -= 1;
                }
            }
            Boundary::Absorb { .. } => {
                self.state.config[s] -= 1;
                self.state.config[slot] += 1;
            }
            Boundary::Resample { cdf } => {
                let u: f64 = self.rng.random();
                self.state.config[s] = inverse_cdf(cdf, u) as u32;
            }
            Boundary::AbsorbAll => {
                let x = self.state.config[s];
                self.state.config[s] = 0;
                self.state.config[slot] += x;
            }
        }
        self.touched(i);
    }

    /// Drift-integrated flux per bond up to the current time.
    pub fn drift_flux(&mut self) -> Vec<f64> {
        let t = self.state.time;
        (0..self.drift.len())
            .map(|b| self.drift[b] + self.drift_rate[b] * (t - self.drift_since[b]))
            .collect()
    }

    /// `int (rate_right + rate_left) dt` per bond: the compensator of the squared
    /// martingale part of the jump-count current.
    pub fn bond_activity(&self) -> Vec<f64> {
        let t = self.state.time;
        (0..self.activity.len())
            .map(|b| self.activity[b] + self.activity_rate[b] * (t - self.drift_since[b]))
            .collect()
    }

    /// Whether every dual walker has been absorbed.
    pub fn bulk_empty(&self) -> bool {
        self.state.config[self.offset..self.offset + self.l].iter().all(|&n| n == 0)
    }
}

/// Monte Carlo absorption table: `m` counts walkers ending in slot 0.
pub fn dual_absorption_mc(d: &DualSpec, xi: &[u32], replicas: usize, seed: u64) -> AbsorptionTable {
    let n: u32 = xi.iter().sum();
    let finals: Vec<u32> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut k = Kmc::dual(d, xi, replica_rng(seed, r as u64));
            while !k.bulk_empty() {
                k.step().expect("dual walkers can always move");
            }
            k.state.config[0]
        })
        .collect();
    let mut counts = vec![0usize; n as usize + 1];
    for m in finals {
        counts[m as usize] += 1;
    }
    let rf = replicas as f64;
    let probabilities: Vec<f64> = counts.iter().map(|&c| c as f64 / rf).collect();
    let std_errors = probabilities.iter().map(|p| (p * (1.0 - p) / rf).sqrt()).collect();
    AbsorptionTable {
        xi: xi.to_vec(),
        probabilities,
        std_errors,
    }
}

/// Sampling schedule for stationary estimates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SamplePlan {
    /// Defaults to `10 L^2` when `None`.
    pub burn_in: Option<f64>,
    /// Samples per replica.
    pub n_samples: usize,
    pub thinning: f64,
    pub replicas: usize,
    pub base_seed: u64,
}

impl SamplePlan {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.replicas == 0 || !(self.thinning > 0.0) || self.burn_in.is_some_and(|b| b < 0.0) {
            return Err(Error::Domain("sample plan needs positive counts and thinning".into()));
        }
        Ok(())
    }
}

const BATCHES_PER_REPLICA: usize = 10;

/// Samples the stationary state of a discrete family from `start` (all-empty if `None`).
///
/// Each replica is split into batches; errors are batch-means standard errors
/// over the pooled batches.
pub fn sample_stationary(spec: &ModelSpec, plan: &SamplePlan, start: Option<&[u32]>, keep_samples: bool) -> Result<StationarySummary> {
    plan.validate()?;
    let spec = validate(*spec)?;
    let l = spec.l;
    let start: Vec<u32> = start.map(|s| s.to_vec()).unwrap_or_else(|| vec![0; l]);
    let burn = plan.burn_in.unwrap_or(10.0 * (l * l) as f64);
    let per_batch = plan.n_samples.div_ceil(BATCHES_PER_REPLICA);
    let runs: Vec<Result<(Vec<Batch>, Vec<Vec<f64>>)>> = (0..plan.replicas)
        .into_par_iter()
        .map(|r| {
            let mut k = Kmc::forward(&spec, &start, replica_rng(plan.base_seed, r as u64))?;
            k.run_until(burn)?;
            let mut batches = Vec::new();
            let mut kept = Vec::new();
            let mut taken = 0;
            let mut x = vec![0.0; l];
            while taken < plan.n_samples {
                let mut b = Batch::new(l, 4);
                for _ in 0..per_batch.min(plan.n_samples - taken) {
                    let t = k.state.time + plan.thinning;
                    k.run_until(t)?;
                    for (xi, &n) in x.iter_mut().zip(&k.state.config) {
                        *xi = n as f64;
                    }
                    b.push(&x);
                    if keep_samples {
                        kept.push(x.clone());
                    }
                    taken += 1;
                }
                batches.push(b);
            }
            Ok((batches, kept))
        })
        .collect();
    let mut batches = Vec::new();
    let mut samples = Vec::new();
    for run in runs {
        let (b, s) = run?;
        batches.extend(b);
        samples.extend(s);
    }
    let mut out = summarize(&batches, l, plan.n_samples, plan.replicas, plan.base_seed);
    out.samples = samples;
    Ok(out)
}

/// Draws from a discrete marginal.
pub fn sample_marginal(m: &EquilibriumMarginal, rng: &mut ChaCha8Rng) -> u32 {
    match *m {
        EquilibriumMarginal::Poisson { lambda } => {
            if lambda <= 0.0 {
                0
            } else {
                Poisson::new(lambda).expect("positive mean").sample(rng) as u32
            }
        }
        EquilibriumMarginal::Binomial { n, p } => Binomial::new(n as u64, p.clamp(0.0, 1.0)).expect("valid p").sample(rng) as u32,
        EquilibriumMarginal::NegativeBinomial { r, p } => {
            // Gamma-Poisson mixture.
            let lam = Gamma::new(r, p / (1.0 - p)).expect("positive shape").sample(rng);
            if lam <= 0.0 {
                0
            } else {
                Poisson::new(lam).expect("positive mean").sample(rng) as u32
            }
        }
        EquilibriumMarginal::Gamma { .. } => panic!("continuous marginal"),
    }
}

/// Boundary rates giving reservoir densities `rho_a`, `rho_b` with `c u = c v = 2`.
///
/// Then the single-walker effective length is exactly `L`, the stationary
/// profile is `rho_a + (rho_b - rho_a)(i - 1/2)/L` and the mean current is
/// `D (rho_a - rho_b) / L`.
pub fn transport_spec(family: Family, l: usize, shape: Option<f64>, rho_a: f64, rho_b: f64) -> Result<ModelSpec> {
    let s = match family {
        Family::SIP => {
            let two_k = shape.ok_or_else(|| Error::Domain("SIP needs 2k".into()))?;
            ModelSpec::with_rates(family, l, shape, 2.0 * rho_a, 2.0 * rho_a + 2.0 * two_k, 2.0 * rho_b, 2.0 * rho_b + 2.0 * two_k)
        }
        Family::SEP => {
            let two_j = shape.ok_or_else(|| Error::Domain("SEP needs 2j".into()))?;
            ModelSpec::with_rates(family, l, shape, 2.0 * rho_a, 2.0 * two_j - 2.0 * rho_a, 2.0 * rho_b, 2.0 * two_j - 2.0 * rho_b)
        }
        Family::IRW => ModelSpec::with_rates(family, l, None, 2.0 * rho_a, 2.0, 2.0 * rho_b, 2.0),
        f => return Err(unsupported(f, "transport estimation covers SIP, SEP and IRW")),
    };
    validate(s)
}

/// Product measure with the linear stationary profile of [`transport_spec`].
fn product_start(spec: &ModelSpec, rho_a: f64, rho_b: f64, rng: &mut ChaCha8Rng) -> Vec<u32> {
    let l = spec.l;
    (1..=l)
        .map(|i| {
            let rho = rho_a + (rho_b - rho_a) * (i as f64 - 0.5) / l as f64;
            let m = match spec.family {
                Family::SIP => {
                    let r = spec.shape_value();
                    EquilibriumMarginal::NegativeBinomial { r, p: rho / (rho + r) }
                }
                Family::SEP => {
                    let n = spec.two_j();
                    EquilibriumMarginal::Binomial { n, p: rho / n as f64 }
                }
                _ => EquilibriumMarginal::Poisson { lambda: rho },
            };
            sample_marginal(&m, rng)
        })
        .collect()
}

/// Transport-run settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TransportPlan {
    pub l: usize,
    pub time: f64,
    pub replicas: usize,
    pub base_seed: u64,
    /// Density difference for the diffusivity run.
    pub delta_rho: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TransportEstimate {
    pub d_hat: f64,
    pub d_err: f64,
    pub sigma_hat: f64,
    pub sigma_err: f64,
    /// Plain `<A^2>/t` (same expectation as `sigma_hat`, larger variance).
    pub sigma_plain: f64,
    pub sigma_plain_err: f64,
    /// Mean drift-flux diffusivity (same expectation as `d_hat`).
    pub d_hat_drift: f64,
    pub d_drift_err: f64,
}

/// Mean and jackknife standard error of a per-replica statistic.
pub fn jackknife_mean(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let total: f64 = xs.iter().sum();
    let mean = total / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var: f64 = xs.iter().map(|x| ((total - x) / (n - 1.0) - mean).powi(2)).sum::<f64>() * (n - 1.0) / n;
    (mean, var.sqrt())
}

/// Estimates `(D, sigma)` at density `rho`.
///
/// `sigma` is `<A^2>/t` for the drift-integrated flux `A` at equilibrium.
/// Writing `A = J - M` with `J` the jump-count current and `M` its martingale
/// part, `E[M^2] = E[K]` where `K = int (rate_right + rate_left) dt`, so
/// `(2 J A - J^2 + K)/t` has the same mean as `A^2/t`. Replacing `M^2` by its
/// compensator removes most of the variance; the plain estimator is reported
/// alongside. `D` is `(L/delta_rho) <J>/t` at `rho +- delta_rho/2`. All
/// statistics are averaged over the central half of the bonds.
pub fn estimate_transport(family: Family, shape: Option<f64>, rho: f64, plan: &TransportPlan) -> Result<TransportEstimate> {
    let l = plan.l;
    let eq = transport_spec(family, l, shape, rho, rho)?;
    let half = plan.delta_rho / 2.0;
    let neq = transport_spec(family, l, shape, rho + half, rho - half)?;
    let lo = l / 4;
    let hi = (3 * l / 4).max(lo + 1).min(l - 1);
    let nb = (hi - lo) as f64;
    let t = plan.time;
    let run = |spec: &ModelSpec, ra: f64, rb: f64, r: u64| -> Result<Kmc> {
        let mut rng = replica_rng(plan.base_seed, r);
        let start = product_start(spec, ra, rb, &mut rng);
        let mut k = Kmc::forward(spec, &start, rng)?;
        k.run_until(t)?;
        Ok(k)
    };
    let sig: Vec<(f64, f64)> = (0..plan.replicas)
        .into_par_iter()
        .map(|r| {
            let mut k = run(&eq, rho, rho, r as u64)?;
            let (a, act) = (k.drift_flux(), k.bond_activity());
            let j = &k.state.currents;
            let (mut cv, mut plain) = (0.0, 0.0);
            for b in lo..hi {
                cv += 2.0 * j[b] * a[b] - j[b] * j[b] + act[b];
                plain += a[b] * a[b];
            }
            Ok((cv / nb / t, plain / nb / t))
        })
        .collect::<Result<_>>()?;
    let offset = plan.replicas as u64;
    let dd: Vec<(f64, f64)> = (0..plan.replicas)
        .into_par_iter()
        .map(|r| {
            let mut k = run(&neq, rho + half, rho - half, offset + r as u64)?;
            let a = k.drift_flux();
            let scale = l as f64 / plan.delta_rho / t / nb;
            Ok((k.state.currents[lo..hi].iter().sum::<f64>() * scale, a[lo..hi].iter().sum::<f64>() * scale))
        })
        .collect::<Result<_>>()?;
    let (sigma_hat, sigma_err) = jackknife_mean(&sig.iter().map(|x| x.0).collect::<Vec<_>>());
    let (sigma_plain, sigma_plain_err) = jackknife_mean(&sig.iter().map(|x| x.1).collect::<Vec<_>>());
    let (d_hat, d_err) = jackknife_mean(&dd.iter().map(|x| x.0).collect::<Vec<_>>());
    let (d_hat_drift, d_drift_err) = jackknife_mean(&dd.iter().map(|x| x.1).collect::<Vec<_>>());
    Ok(TransportEstimate {
        d_hat,
        d_err,
        sigma_hat,
        sigma_err,
        sigma_plain,
        sigma_plain_err,
        d_hat_drift,
        d_drift_err,
    })
}

/// Writes `t, eta_1..eta_L` rows sampled every `dt` up to `t_end`.
pub fn write_trajectory_csv<W: std::io::Write>(k: &mut Kmc, dt: f64, t_end: f64, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string()];
    header.extend((1..=k.l).map(|i| format!("eta_{i}")));
    out.write_record(&header)?;
    let mut t = k.state.time;
    loop {
        let mut rec = vec![format!("{t}")];
        rec.extend(k.state.config[k.offset..k.offset + k.l].iter().map(|n| n.to_string()));
        out.write_record(&rec)?;
        t += dt;
        if t > t_end + 1e-12 {
            break;
        }
        k.run_until(t)?;
    }
    out.flush()?;
    Ok(())
}
