//! Subcommand implementations.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde_json::json;

use ipsdual::analysis::{
    covariance_closed_form, multilinearity_experiment, profile_closed_form, solve_correlation_system,
    write_multilinearity_csv,
};
use ipsdual::diffusion::sample_energy_stationary;
use ipsdual::duality::{absorption_table, dual_spec, stationary_expectation, AbsorptionMethod};
use ipsdual::generator::build_generator;
use ipsdual::kmc::{sample_stationary, write_trajectory_csv, Kmc, SamplePlan};
use ipsdual::mft::{
    ld_functional, macro_correlations, micro_macro_compare, write_micro_macro_csv, MacroProfile, TransportCoefficients,
    DEFAULT_GRID,
};
use ipsdual::model::{reservoir_densities, reservoir_marginals, ModelConfig};
use ipsdual::rng::replica_rng;
use ipsdual::stationary::{expectation, stationary_distribution, write_pi_csv};
use ipsdual::suites::Suite;
use ipsdual::{Error, Family, ModelSpec};

use crate::output::{num, say, Run};
use crate::{Cli, Command, Failure, Format, Global, SuiteName};

type Outcome = Result<(), Failure>;

/// Accepts `100000` as well as `1e5`.
fn parse_count(s: &str) -> Result<usize, String> {
    let x: f64 = s.trim().parse().map_err(|_| format!("not a number: {s:?}"))?;
    if x >= 1.0 && x.fract() == 0.0 && x <= usize::MAX as f64 {
        Ok(x as usize)
    } else {
        Err(format!("expected a positive integer, got {s:?}"))
    }
}

fn parse_list(s: &str) -> Result<Vec<usize>, String> {
    s.split(',')
        .map(|x| x.trim().parse::<usize>().map_err(|_| format!("not an integer: {x:?}")))
        .collect()
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Samples per replica.
    #[arg(long, value_parser = parse_count, default_value = "10000")]
    pub samples: usize,
    #[arg(long, default_value_t = 4)]
    pub replicas: usize,
    /// Time between recorded samples.
    #[arg(long, default_value_t = 1.0)]
    pub thinning: f64,
    /// Discarded initial time (default 10 L^2).
    #[arg(long)]
    pub burn_in: Option<f64>,
    /// Also record one trajectory up to this time (particle families).
    #[arg(long)]
    pub trajectory: Option<f64>,
    /// Sampling interval of the recorded trajectory.
    #[arg(long, default_value_t = 1.0)]
    pub dt: f64,
}

#[derive(Args, Debug)]
pub struct AbsorptionArgs {
    /// Walker positions in 1..=L, comma separated; repeats stack walkers.
    #[arg(long, default_value = "1")]
    pub walkers: String,
    #[arg(long, value_enum, default_value_t = AbsorptionKind::Exact)]
    pub method: AbsorptionKind,
    /// Monte Carlo replicas.
    #[arg(long, value_parser = parse_count, default_value = "100000")]
    pub replicas: usize,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum AbsorptionKind {
    Exact,
    Mc,
}

#[derive(Args, Debug)]
pub struct StationaryArgs {
    /// Per-site cap (default: smallest cap whose reservoir tails fall below 1e-12).
    #[arg(long)]
    pub cap: Option<u32>,
}

#[derive(Args, Debug)]
pub struct ReproduceArgs {
    #[arg(value_enum)]
    pub target: Target,
    /// Family for the built-in parameter set (ignored with --config).
    #[arg(long, default_value = "sip")]
    pub family: String,
    /// System sizes for the micro/macro table.
    #[arg(long = "L", value_delimiter = ',', default_value = "20,50,100")]
    pub sizes: Vec<usize>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    Fig1,
    Profiles,
    Covariances,
    Mft,
}

#[derive(Args, Debug)]
pub struct MftArgs {
    /// Profile to evaluate, CSV with columns `x,rho` on a uniform grid of 4m+1 points.
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// Points `x,y,z` for the macroscopic correlations.
    #[arg(long, default_value = "0.25,0.5,0.75")]
    pub points: String,
}

pub fn run(cli: &Cli) -> Outcome {
    let g = &cli.global;
    match &cli.command {
        Command::Simulate(a) => simulate(g, a),
        Command::Verify { suite } => verify(g, *suite),
        Command::Absorption(a) => absorption(g, a),
        Command::Stationary(a) => stationary(g, a),
        Command::Reproduce(a) => reproduce(g, a),
        Command::Mft(a) => mft(g, a),
    }
}

/// Parses `value` as a TOML literal, falling back to a bare string.
fn override_value(value: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()))
}

/// Resolves `--config` plus `--set` overrides; `None` when neither is given.
fn load_config(g: &Global) -> Result<Option<ModelConfig>, Failure> {
    let text = match &g.config {
        Some(p) => Some(
            std::fs::read_to_string(p).map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", p.display())))?,
        ),
        None if g.overrides.is_empty() => return Ok(None),
        None => None,
    };
    if g.overrides.is_empty() {
        return Ok(Some(ModelConfig::from_toml(text.as_deref().unwrap_or(""))?));
    }
    let mut table: toml::Table = match &text {
        Some(t) => toml::from_str(t).map_err(|e| Error::Config(e.to_string()))?,
        None => toml::Table::new(),
    };
    for o in &g.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects FIELD=VALUE, got {o:?}")))?;
        table.insert(k.trim().to_string(), override_value(v.trim()));
    }
    Ok(Some(ModelConfig::from_toml(&table.to_string())?))
}

fn require_spec(g: &Global) -> Result<(ModelConfig, ModelSpec), Failure> {
    let cfg = load_config(g)?.ok_or_else(|| Failure::Usage("this command needs --config".into()))?;
    let spec = cfg.to_spec()?;
    Ok((cfg, spec))
}

fn start(g: &Global, config: impl serde::Serialize) -> Result<Run, Failure> {
    Ok(Run::start(g.out_dir.clone(), g.format, config, g.seed, rayon::current_num_threads())?)
}

fn cap_for(spec: &ModelSpec, tol: f64) -> u32 {
    let (a, b) = reservoir_marginals(spec);
    a.adaptive_cap(tol).max(b.adaptive_cap(tol)) as u32
}

fn simulate(g: &Global, a: &SimulateArgs) -> Outcome {
    let (cfg, spec) = require_spec(g)?;
    let plan = SamplePlan {
        burn_in: a.burn_in,
        n_samples: a.samples,
        thinning: a.thinning,
        replicas: a.replicas,
        base_seed: g.seed,
    };
    let mut run = start(g, json!({"model": cfg, "plan": plan, "trajectory": a.trajectory, "dt": a.dt}))?;
    let summary = if spec.family.is_energy() {
        sample_energy_stationary(&spec, &plan, None)?
    } else {
        sample_stationary(&spec, &plan, None, false)?
    };
    match g.format {
        Format::Json => {
            run.json("summary", &summary)?;
        }
        Format::Csv => {
            let rows: Vec<Vec<String>> = (0..spec.l)
                .map(|i| vec![(i + 1).to_string(), num(summary.means[i]), num(summary.mean_errors[i])])
                .collect();
            run.csv("profile", &["i", "mean", "std_error"], &rows)?;
        }
    }
    if let Some(t_end) = a.trajectory {
        if spec.family.is_energy() {
            return Err(Failure::Usage("--trajectory is only available for particle families".into()));
        }
        let mut k = Kmc::forward(&spec, &vec![0; spec.l], replica_rng(g.seed, u64::MAX))?;
        run.file("trajectory.csv", |f| write_trajectory_csv(&mut k, a.dt, t_end, f))?;
    }
    run.finish()?;
    Ok(())
}

fn verify(g: &Global, name: SuiteName) -> Outcome {
    let suite = match name {
        SuiteName::Duality => Suite::Duality,
        SuiteName::Equilibrium => Suite::Equilibrium,
        SuiteName::Absorption => Suite::Absorption,
        SuiteName::Appendix => Suite::Correlations,
        SuiteName::Thermalized => Suite::Thermalized,
        SuiteName::Scaling => Suite::Scaling,
    };
    let mut run = start(g, json!({"suite": suite.name()}))?;
    let report = suite.run()?;
    for c in &report.checks {
        say(&format!(
            "{} {}  deviation {:.2e} (tolerance {:.0e})",
            if c.passed() { "PASS" } else { "FAIL" },
            c.name,
            c.deviation,
            c.tolerance
        ));
    }
    run.json(&format!("verify_{}", suite.name()), &report)?;
    run.finish()?;
    if report.passed {
        Ok(())
    } else {
        let failing: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
        Err(Failure::Verification(failing.join(", ")))
    }
}

fn absorption(g: &Global, a: &AbsorptionArgs) -> Outcome {
    let (cfg, spec) = require_spec(g)?;
    let sites = parse_list(&a.walkers).map_err(Failure::Usage)?;
    let mut xi = vec![0u32; spec.l + 2];
    for s in sites {
        if s == 0 || s > spec.l {
            return Err(Failure::Usage(format!("walker position {s} is outside 1..={}", spec.l)));
        }
        xi[s] += 1;
    }
    let method = match a.method {
        AbsorptionKind::Exact => AbsorptionMethod::Exact,
        AbsorptionKind::Mc => AbsorptionMethod::MonteCarlo {
            replicas: a.replicas,
            seed: g.seed,
        },
    };
    let mut run = start(g, json!({"model": cfg, "walkers": a.walkers, "method": format!("{:?}", a.method)}))?;
    let table = absorption_table(&spec, &xi, method)?;
    match g.format {
        Format::Json => run.json("absorption", &table)?,
        Format::Csv => run.file("absorption.csv", |f| table.write_csv(f))?,
    };
    run.finish()?;
    Ok(())
}

fn stationary(g: &Global, a: &StationaryArgs) -> Outcome {
    let (cfg, spec) = require_spec(g)?;
    if spec.family.is_energy() {
        return Err(Failure::Usage(format!(
            "field `family`: {:?} has a continuous state space; use `simulate` or `absorption`",
            spec.family
        )));
    }
    let cap = a.cap.unwrap_or_else(|| cap_for(&spec, 1e-12));
    let mut run = start(g, json!({"model": cfg, "cap": cap}))?;
    let gen = build_generator(&spec, cap)?;
    let st = stationary_distribution(&gen)?;
    let profile: Vec<f64> = (0..spec.l).map(|i| expectation(&gen, &st.pi, |e| e[i] as f64)).collect();
    let summary = json!({
        "states": gen.n(),
        "cap": cap,
        "method": st.method,
        "residual": st.residual,
        "truncated_mass": st.truncated_mass,
        "reservoir_tail": gen.reservoir_tail,
        "profile": profile,
    });
    match g.format {
        Format::Json => {
            let states: Vec<Vec<u32>> = (0..gen.n()).map(|i| gen.space.decode(i).to_vec()).collect();
            let mut full = summary;
            full["states"] = json!(states);
            full["pi"] = json!(st.pi);
            run.json("stationary", &full)?;
        }
        Format::Csv => {
            run.json("stationary_summary", &summary)?;
            run.file("pi.csv", |f| write_pi_csv(&gen, &st.pi, f))?;
        }
    }
    run.finish()?;
    Ok(())
}

/// Built-in parameter sets for `reproduce`, small enough for exact solves.
fn builtin(family: &str, target: Target) -> Result<ModelSpec, Failure> {
    let fam: Family = family.parse()?;
    let spec = match (target, fam) {
        (Target::Profiles, Family::SIP) => ModelSpec::with_rates(fam, 3, Some(1.0), 0.5, 2.5, 1.0, 3.0),
        (Target::Profiles, Family::SEP) => ModelSpec::with_rates(fam, 4, Some(2.0), 0.7, 1.3, 0.4, 0.9),
        (Target::Profiles, Family::IRW) => ModelSpec::with_rates(fam, 4, None, 0.6, 1.1, 0.3, 0.8),
        (Target::Profiles, Family::BEP) => ModelSpec::with_temperatures(fam, 4, Some(1.0), 0.5, 1.0),
        (Target::Profiles, Family::KMP) => ModelSpec::with_temperatures(fam, 4, None, 0.5, 1.0),
        (Target::Covariances | Target::Mft, Family::SIP) => ModelSpec::with_rates(fam, 6, Some(1.0), 2.0, 3.0, 1.0, 2.0),
        (Target::Covariances | Target::Mft, Family::SEP) => ModelSpec::with_rates(fam, 6, Some(2.0), 1.5, 0.5, 0.3, 1.7),
        (Target::Mft, Family::IRW) => ModelSpec::with_rates(fam, 6, None, 0.6, 1.1, 0.3, 0.8),
        _ => {
            return Err(Failure::Usage(format!(
                "field `family`: no built-in {target:?} parameter set for {fam:?}"
            )))
        }
    };
    Ok(spec)
}

fn reproduce(g: &Global, a: &ReproduceArgs) -> Outcome {
    let cfg = load_config(g)?;
    let spec = match (&cfg, a.target) {
        (_, Target::Fig1) => None,
        (Some(c), _) => Some(c.to_spec()?),
        (None, t) => Some(builtin(&a.family, t)?),
    };
    let resolved = spec.as_ref().map(ModelConfig::from);
    let mut run = start(g, json!({"target": format!("{:?}", a.target), "model": resolved, "L": a.sizes}))?;
    match a.target {
        Target::Fig1 => {
            let mut reports = Vec::new();
            for two_j in 1..=4 {
                let s = ModelSpec::with_rates(Family::SEP, 6, Some(two_j as f64), 1.0, 1.0, 1.5, 0.5);
                reports.push(multilinearity_experiment(&s)?);
            }
            match g.format {
                Format::Json => run.json("fig1", &reports)?,
                Format::Csv => run.file("fig1.csv", |f| write_multilinearity_csv(&reports, f))?,
            };
        }
        Target::Profiles => {
            let spec = spec.expect("resolved above");
            let closed = profile_closed_form(&spec)?;
            let exact = exact_profile(&spec)?;
            let rows: Vec<Vec<String>> = (0..spec.l)
                .map(|i| {
                    vec![(i + 1).to_string(), num(closed[i]), num(exact[i]), num((closed[i] - exact[i]).abs())]
                })
                .collect();
            table(&mut run, "profiles", &["i", "closed_form", "exact", "deviation"], rows)?;
        }
        Target::Covariances => {
            let spec = spec.expect("resolved above");
            let x = solve_correlation_system(&spec)?;
            let p = profile_closed_form(&spec)?;
            let mut rows = Vec::new();
            for i in 1..=spec.l {
                for l in i + 1..=spec.l {
                    let cov = x[i - 1][l - 1] - p[i - 1] * p[l - 1];
                    let (closed, dev) = match covariance_closed_form(&spec, i, l) {
                        Ok(c) => (num(c), num((c - cov).abs())),
                        Err(Error::NoClosedForm(_)) => (String::new(), String::new()),
                        Err(e) => return Err(e.into()),
                    };
                    rows.push(vec![i.to_string(), l.to_string(), num(cov), closed, dev]);
                }
            }
            table(&mut run, "covariances", &["i", "l", "system", "closed_form", "deviation"], rows)?;
        }
        Target::Mft => {
            let spec = spec.expect("resolved above");
            let report = micro_macro_compare(&spec, &a.sizes)?;
            match g.format {
                Format::Json => run.json("micro_macro", &report)?,
                Format::Csv => run.file("micro_macro.csv", |f| write_micro_macro_csv(&report, f))?,
            };
        }
    }
    run.finish()?;
    Ok(())
}

/// Writes `rows` as CSV or as a JSON array of objects keyed by `header`.
fn table(run: &mut Run, stem: &str, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), Failure> {
    match run.format {
        Format::Csv => run.csv(stem, header, &rows)?,
        Format::Json => {
            let objs: Vec<serde_json::Map<String, serde_json::Value>> = rows
                .iter()
                .map(|r| {
                    header
                        .iter()
                        .zip(r)
                        .map(|(h, v)| {
                            let val = v.parse::<f64>().map_or(serde_json::Value::Null, |x| json!(x));
                            (h.to_string(), val)
                        })
                        .collect()
                })
                .collect();
            run.json(stem, &objs)?
        }
    };
    Ok(())
}

/// Stationary means from the truncated generator, or from the dual walker for energy families.
fn exact_profile(spec: &ModelSpec) -> Result<Vec<f64>, Failure> {
    if spec.family.is_energy() {
        let d = dual_spec(spec)?;
        let mut out = Vec::with_capacity(spec.l);
        for i in 1..=spec.l {
            let mut xi = vec![0u32; spec.l + 2];
            xi[i] = 1;
            out.push(stationary_expectation(spec, &xi)? / d.c);
        }
        Ok(out)
    } else {
        let gen = build_generator(spec, cap_for(spec, 1e-13))?;
        let st = stationary_distribution(&gen)?;
        Ok((0..spec.l).map(|i| expectation(&gen, &st.pi, |e| e[i] as f64)).collect())
    }
}

fn mft(g: &Global, a: &MftArgs) -> Outcome {
    let (cfg, spec) = require_spec(g)?;
    let pts: Vec<f64> = a
        .points
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| Failure::Usage(format!("--points expects x,y,z, got {:?}", a.points)))?;
    let [x, y, z] = pts[..] else {
        return Err(Failure::Usage(format!("--points expects three values, got {}", pts.len())));
    };
    let mut run = start(g, json!({"model": cfg, "profile": a.profile, "points": pts}))?;
    let tc = TransportCoefficients::of(&spec)?;
    let rho = reservoir_densities(&spec);
    let corr = macro_correlations(&tc, rho.rho_a, rho.rho_b, spec.l as f64, (x, y, z))?;
    let typical = ld_functional(&tc, &MacroProfile::typical(rho.rho_a, rho.rho_b, DEFAULT_GRID)?)?;
    let given = match &a.profile {
        Some(p) => {
            let f = std::fs::File::open(p).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", p.display())))?;
            Some(ld_functional(&tc, &MacroProfile::from_csv(f, rho.rho_a, rho.rho_b)?)?)
        }
        None => None,
    };
    let out = json!({
        "transport": tc,
        "rho_a": rho.rho_a,
        "rho_b": rho.rho_b,
        "correlations": corr,
        "functional_typical": typical,
        "functional_profile": given,
    });
    match g.format {
        Format::Json => {
            run.json("mft", &out)?;
        }
        Format::Csv => {
            let mut rows = vec![
                vec!["diffusivity".into(), num(tc.c)],
                vec!["rho_a".into(), num(rho.rho_a)],
                vec!["rho_b".into(), num(rho.rho_b)],
                vec!["mean".into(), num(corr.mean)],
                vec!["two_point".into(), num(corr.two_point)],
                vec!["three_point".into(), num(corr.three_point)],
                vec!["functional_typical".into(), num(typical)],
            ];
            if let Some(v) = given {
                rows.push(vec!["functional_profile".into(), num(v)]);
            }
            run.csv("mft", &["quantity", "value"], &rows)?;
        }
    }
    run.finish()?;
    Ok(())
}
