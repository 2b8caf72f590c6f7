//! Output files and the run manifest.

use std::path::PathBuf;

use ipsdual::report::RunManifest;
use ipsdual::Result;
use serde::Serialize;

use crate::Format;

pub struct Run {
    pub dir: PathBuf,
    pub format: Format,
    manifest: RunManifest,
}

impl Run {
    pub fn start(dir: PathBuf, format: Format, config: impl Serialize, seed: u64, threads: usize) -> Result<Self> {
        std::fs::create_dir_all(&dir)?;
        let command = std::env::args().collect();
        Ok(Run {
            dir,
            format,
            manifest: RunManifest::start(command, config, seed, threads),
        })
    }

    pub fn json(&mut self, stem: &str, value: &impl Serialize) -> Result<PathBuf> {
        let path = self.dir.join(format!("{stem}.json"));
        std::fs::write(&path, serde_json::to_string_pretty(value)? + "\n")?;
        self.record(path)
    }

    /// Writes a file through `f` and records it.
    pub fn file(&mut self, name: &str, f: impl FnOnce(std::fs::File) -> Result<()>) -> Result<PathBuf> {
        let path = self.dir.join(name);
        f(std::fs::File::create(&path)?)?;
        self.record(path)
    }

    pub fn csv(&mut self, stem: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
        self.file(&format!("{stem}.csv"), |f| {
            let mut w = csv::Writer::from_writer(f);
            w.write_record(header)?;
            for r in rows {
                w.write_record(r)?;
            }
            w.flush()?;
            Ok(())
        })
    }

    fn record(&mut self, path: PathBuf) -> Result<PathBuf> {
        say(&format!("wrote {}", path.display()));
        self.manifest.outputs.push(path.clone());
        Ok(path)
    }

    pub fn finish(self) -> Result<()> {
        let path = self.manifest.finish(&self.dir)?;
        say(&format!("wrote {}", path.display()));
        Ok(())
    }
}

/// Prints a line, ignoring a closed stdout (e.g. piped into `head`).
pub fn say(line: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout(), "{line}");
}

/// Full-precision float formatting shared by every table.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}
