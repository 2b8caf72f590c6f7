//! Simulation of the energy families.
//!
//! BEP is integrated with an Euler-Maruyama scheme (weak order 1) for the
//! diffusion with generator
//! `sum_bonds [z_i z_{i+1} (d_i - d_{i+1})^2 - 2k (z_i - z_{i+1})(d_i - d_{i+1})]`
//! plus the boundary terms `T (2k d + z d^2) - z d / 2`. A bond moves an
//! amount `D` from site `i+1` to site `i` with
//! `D = -2k (z_i - z_{i+1}) dt + sqrt(2 z_i z_{i+1} dt) N(0,1)`,
//! so it conserves `z_i + z_{i+1}` exactly. Bonds are applied one after
//! another (Lie splitting, still weak order 1); a boundary site follows
//! `dz = (2kT - z/2) dt + sqrt(2 T z) dW`.
//!
//! KMP and ThBEP are jump processes and are sampled exactly.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{unsupported, Error, Result};
use crate::kmc::SamplePlan;
use crate::model::{validate, Family, ModelSpec};
use crate::rng::replica_rng;
use crate::stats::{summarize, Batch, StationarySummary};

/// Energies `z_1..z_L`, all nonnegative.
pub type ContinuousConfig = Vec<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PositivityPolicy {
    /// Negative proposals are clamped to zero.
    #[default]
    FullTruncation,
    /// Negative proposals are reflected at zero.
    Reflection,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdeScheme {
    pub dt: f64,
    pub policy: PositivityPolicy,
}

/// `1e-3 min(1, 1/(4k max T))`.
pub fn default_dt(spec: &ModelSpec) -> f64 {
    let (ta, tb) = spec.temperatures();
    let two_k = spec.shape_value();
    1e-3 * (1.0f64).min(1.0 / (2.0 * two_k * ta.max(tb)))
}

/// Euler-Maruyama integrator for BEP.
#[derive(Clone, Debug)]
pub struct BepSimulator {
    two_k: f64,
    t_a: f64,
    t_b: f64,
    /// With `false` only the bulk bonds act (closed system).
    pub reservoirs: bool,
    pub scheme: SdeScheme,
    pub z: ContinuousConfig,
    pub time: f64,
    /// Steps in which the positivity policy had to act.
    pub flagged_steps: u64,
    pub steps: u64,
    rng: ChaCha8Rng,
}

impl BepSimulator {
    pub fn new(spec: &ModelSpec, z: ContinuousConfig, scheme: SdeScheme, rng: ChaCha8Rng) -> Result<Self> {
        let spec = validate(*spec)?;
        if spec.family != Family::BEP {
            return Err(unsupported(spec.family, "the SDE integrator is for BEP"));
        }
        if z.len() != spec.l || z.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::Domain("energies must be L nonnegative numbers".into()));
        }
        if !(scheme.dt > 0.0) {
            return Err(Error::Domain("dt must be positive".into()));
        }
        let (t_a, t_b) = spec.temperatures();
        Ok(BepSimulator {
            two_k: spec.shape_value(),
            t_a,
            t_b,
            reservoirs: true,
            scheme,
            z,
            time: 0.0,
            flagged_steps: 0,
            steps: 0,
            rng,
        })
    }

    /// One time step of length `dt`.
    pub fn step(&mut self) {
        let dt = self.scheme.dt;
        let mut flagged = false;
        let l = self.z.len();
        for i in 0..l.saturating_sub(1) {
            let (a, b) = (self.z[i], self.z[i + 1]);
            let n: f64 = self.rng.sample(StandardNormal);
            let mut x = a - self.two_k * (a - b) * dt + (2.0 * a * b * dt).sqrt() * n;
            let s = a + b;
            if x < 0.0 || x > s {
                flagged = true;
                x = match self.scheme.policy {
                    PositivityPolicy::FullTruncation => x.clamp(0.0, s),
                    PositivityPolicy::Reflection => {
                        let r = if x < 0.0 { -x } else { 2.0 * s - x };
                        r.clamp(0.0, s)
                    }
                };
            }
            self.z[i] = x;
            self.z[i + 1] = s - x;
        }
        if self.reservoirs {
            for (site, t) in [(0, self.t_a), (l - 1, self.t_b)] {
                let z = self.z[site];
                let n: f64 = self.rng.sample(StandardNormal);
                let mut x = z + (self.two_k * t - z / 2.0) * dt + (2.0 * t * z * dt).sqrt() * n;
                if x < 0.0 {
                    flagged = true;
                    x = match self.scheme.policy {
                        PositivityPolicy::FullTruncation => 0.0,
                        PositivityPolicy::Reflection => -x,
                    };
                }
                self.z[site] = x;
            }
        }
        debug_assert!(self.z.iter().all(|&v| v >= 0.0));
        self.flagged_steps += flagged as u64;
        self.steps += 1;
        self.time += dt;
    }

    pub fn run_until(&mut self, t: f64) {
        while self.time + 0.5 * self.scheme.dt < t {
            self.step();
        }
    }
}

/// Event-driven exact sampler for KMP and ThBEP.
#[derive(Clone, Debug)]
pub struct EnergyEvents {
    split: Beta<f64>,
    bath_a: Gamma<f64>,
    bath_b: Gamma<f64>,
    /// With `false` only the bulk bonds act.
    pub reservoirs: bool,
    pub z: ContinuousConfig,
    pub time: f64,
    pub events: u64,
    rng: ChaCha8Rng,
}

impl EnergyEvents {
    pub fn new(spec: &ModelSpec, z: ContinuousConfig, rng: ChaCha8Rng) -> Result<Self> {
        let spec = validate(*spec)?;
        if !matches!(spec.family, Family::KMP | Family::ThBEP) {
            return Err(unsupported(spec.family, "event-driven energy sampling is for KMP and ThBEP"));
        }
        if z.len() != spec.l || z.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::Domain("energies must be L nonnegative numbers".into()));
        }
        let two_k = spec.shape_value();
        let (ta, tb) = spec.temperatures();
        let bad = |e: rand_distr::BetaError| Error::Domain(e.to_string());
        let bad_g = |e: rand_distr::GammaError| Error::Domain(e.to_string());
        Ok(EnergyEvents {
            split: Beta::new(two_k, two_k).map_err(bad)?,
            bath_a: Gamma::new(two_k, ta).map_err(bad_g)?,
            bath_b: Gamma::new(two_k, tb).map_err(bad_g)?,
            reservoirs: true,
            z,
            time: 0.0,
            events: 0,
            rng,
        })
    }

    /// One event among the unit-rate clocks (`L - 1` bonds, plus two baths if enabled).
    pub fn step(&mut self) {
        let l = self.z.len();
        let clocks = l - 1 + if self.reservoirs { 2 } else { 0 };
        if clocks == 0 {
            return;
        }
        let u: f64 = self.rng.random();
        self.time += -(1.0 - u).ln() / clocks as f64;
        self.fire(clocks);
    }

    fn fire(&mut self, clocks: usize) {
        let l = self.z.len();
        let c = self.rng.random_range(0..clocks);
        self.events += 1;
        if c < l - 1 {
            let s = self.z[c] + self.z[c + 1];
            let x = self.split.sample(&mut self.rng);
            self.z[c] = x * s;
            self.z[c + 1] = s - self.z[c];
        } else if c == l - 1 {
            self.z[0] = self.bath_a.sample(&mut self.rng);
        } else {
            self.z[l - 1] = self.bath_b.sample(&mut self.rng);
        }
    }

    /// Runs until time `t`, discarding the event pending at `t`.
    pub fn run_until(&mut self, t: f64) {
        let l = self.z.len();
        let clocks = l - 1 + if self.reservoirs { 2 } else { 0 };
        if clocks == 0 {
            self.time = t;
            return;
        }
        loop {
            let u: f64 = self.rng.random();
            let next = self.time - (1.0 - u).ln() / clocks as f64;
            if next > t {
                self.time = t;
                return;
            }
            self.time = next;
            self.fire(clocks);
        }
    }
}

const BATCHES_PER_REPLICA: usize = 10;

/// Stationary sampling for the energy families (BEP needs a scheme; `None` uses the default dt
/// with full truncation).
pub fn sample_energy_stationary(spec: &ModelSpec, plan: &SamplePlan, scheme: Option<SdeScheme>) -> Result<StationarySummary> {
    plan.validate()?;
    let spec = validate(*spec)?;
    let l = spec.l;
    let (ta, tb) = spec.temperatures();
    let start = vec![spec.shape_value() * (ta + tb) / 2.0; l];
    let burn = plan.burn_in.unwrap_or(10.0 * (l * l) as f64);
    let per_batch = plan.n_samples.div_ceil(BATCHES_PER_REPLICA);
    let scheme = scheme.unwrap_or(SdeScheme {
        dt: default_dt(&spec),
        policy: PositivityPolicy::FullTruncation,
    });
    let runs: Vec<Result<Vec<Batch>>> = (0..plan.replicas)
        .into_par_iter()
        .map(|r| {
            let rng = replica_rng(plan.base_seed, r as u64);
            let mut sim: Box<dyn FnMut(f64) -> Vec<f64>> = if spec.family == Family::BEP {
                let mut s = BepSimulator::new(&spec, start.clone(), scheme, rng)?;
                Box::new(move |t| {
                    s.run_until(t);
                    s.z.clone()
                })
            } else {
                let mut s = EnergyEvents::new(&spec, start.clone(), rng)?;
                Box::new(move |t| {
                    s.run_until(t);
                    s.z.clone()
                })
            };
            sim(burn);
            let mut t = burn;
            let mut batches = Vec::new();
            let mut taken = 0;
            while taken < plan.n_samples {
                let mut b = Batch::new(l, 4);
                for _ in 0..per_batch.min(plan.n_samples - taken) {
                    t += plan.thinning;
                    b.push(&sim(t));
                    taken += 1;
                }
                batches.push(b);
            }
            Ok(batches)
        })
        .collect();
    let mut batches = Vec::new();
    for r in runs {
        batches.extend(r?);
    }
    Ok(summarize(&batches, l, plan.n_samples, plan.replicas, plan.base_seed))
}
