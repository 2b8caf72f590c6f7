//! Machine-readable check reports and run manifests.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckVerdict {
    Pass,
    Fail,
}

/// One verification case: what was computed, against what, and how far apart.
#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub inputs: Value,
    pub computed: Value,
    pub reference: Value,
    pub deviation: f64,
    pub tolerance: f64,
    pub verdict: CheckVerdict,
}

impl CheckReport {
    /// Passes when `deviation < tolerance` (NaN fails).
    pub fn new(
        name: impl Into<String>,
        inputs: impl Serialize,
        computed: impl Serialize,
        reference: impl Serialize,
        deviation: f64,
        tolerance: f64,
    ) -> Self {
        let verdict = if deviation < tolerance { CheckVerdict::Pass } else { CheckVerdict::Fail };
        CheckReport {
            name: name.into(),
            inputs: to_value(inputs),
            computed: to_value(computed),
            reference: to_value(reference),
            deviation,
            tolerance,
            verdict,
        }
    }

    /// A boolean check with no numeric deviation.
    pub fn flag(name: impl Into<String>, inputs: impl Serialize, computed: impl Serialize, ok: bool) -> Self {
        CheckReport {
            name: name.into(),
            inputs: to_value(inputs),
            computed: to_value(computed),
            reference: Value::Null,
            deviation: if ok { 0.0 } else { 1.0 },
            tolerance: 0.5,
            verdict: if ok { CheckVerdict::Pass } else { CheckVerdict::Fail },
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict == CheckVerdict::Pass
    }
}

fn to_value(v: impl Serialize) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

/// A named group of checks.
#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub passed: bool,
    pub checks: Vec<CheckReport>,
}

impl SuiteReport {
    pub fn new(suite: impl Into<String>, checks: Vec<CheckReport>) -> Self {
        SuiteReport {
            suite: suite.into(),
            passed: checks.iter().all(|c| c.passed()),
            checks,
        }
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckReport> {
        self.checks.iter().filter(|c| !c.passed())
    }
}

/// Everything needed to replay a run.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub config: Value,
    pub seed: u64,
    pub threads: usize,
    pub version: String,
    /// Seconds since the Unix epoch.
    pub started: f64,
    pub finished: f64,
    pub outputs: Vec<PathBuf>,
}

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

impl RunManifest {
    pub fn start(command: Vec<String>, config: impl Serialize, seed: u64, threads: usize) -> Self {
        RunManifest {
            command,
            config: to_value(config),
            seed,
            threads,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started: unix_now(),
            finished: 0.0,
            outputs: Vec::new(),
        }
    }

    /// Stamps the finish time and writes `manifest.json` into `dir`.
    pub fn finish(mut self, dir: &Path) -> Result<PathBuf> {
        self.finished = unix_now();
        std::fs::create_dir_all(dir)?;
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&self)?)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdicts() {
        assert!(CheckReport::new("a", (), 1.0, 1.0, 0.0, 1e-10).passed());
        assert!(!CheckReport::new("a", (), 1.0, 2.0, 1.0, 1e-10).passed());
        assert!(!CheckReport::new("a", (), f64::NAN, 2.0, f64::NAN, 1e-10).passed());
        let s = SuiteReport::new("s", vec![CheckReport::flag("x", (), true, true), CheckReport::flag("y", (), false, false)]);
        assert!(!s.passed);
        assert_eq!(s.failures().count(), 1);
    }

    #[test]
    fn manifest_written() {
        let dir = tempfile::tempdir().unwrap();
        let m = RunManifest::start(vec!["verify".into()], serde_json::json!({"l": 3}), 7, 1);
        let path = m.finish(dir.path()).unwrap();
        let v: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(v["seed"], 7);
        assert!(v["finished"].as_f64().unwrap() >= v["started"].as_f64().unwrap());
    }
}
