use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::SCHEMA_VERSION;
use crate::error::{Error, Result};

/// One tolerance check attached to a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    /// Predicted law or value in words.
    pub predicted: String,
    pub observed: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub pass: bool,
}

impl Assertion {
    pub fn within(name: &str, predicted: &str, observed: f64, lower: Option<f64>, upper: Option<f64>) -> Self {
        let pass = observed.is_finite() && lower.is_none_or(|l| observed >= l) && upper.is_none_or(|u| observed <= u);
        Assertion { name: name.into(), predicted: predicted.into(), observed, lower, upper, pass }
    }

    pub fn tolerance(&self) -> String {
        match (self.lower, self.upper) {
            (Some(l), Some(u)) => format!("[{}, {}]", short(l), short(u)),
            (Some(l), None) => format!(">= {}", short(l)),
            (None, Some(u)) => format!("<= {}", short(u)),
            (None, None) => "none".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub preset: String,
    pub config_hash: String,
    pub seed: u64,
    pub stages: Vec<StageTiming>,
    pub artifacts: Vec<String>,
    pub assertions: Vec<Assertion>,
}

impl RunManifest {
    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.pass)
    }

    pub fn assertion(&self, name: &str) -> Option<&Assertion> {
        self.assertions.iter().find(|a| a.name == name)
    }
}

/// Serialized writer for one run directory; remembers every file it wrote.
pub struct ArtifactWriter {
    dir: PathBuf,
    files: Vec<String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl ArtifactWriter {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(ArtifactWriter { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// CSV with a leading `schema_version` column.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut out = String::from("schema_version");
        for h in header {
            out.push(',');
            out.push_str(h);
        }
        out.push('\n');
        for r in rows {
            if r.len() != header.len() {
                return Err(Error::LengthMismatch(r.len(), header.len()));
            }
            out.push_str(&SCHEMA_VERSION.to_string());
            for c in r {
                out.push(',');
                out.push_str(c);
            }
            out.push('\n');
        }
        self.write(name, out)
    }

    /// JSON object with `schema_version` merged at the top level.
    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut v = serde_json::to_value(value).map_err(|e| Error::Io(e.to_string()))?;
        if let serde_json::Value::Object(map) = &mut v {
            map.insert("schema_version".into(), SCHEMA_VERSION.into());
        }
        let text = serde_json::to_string_pretty(&v).map_err(|e| Error::Io(e.to_string()))?;
        self.write(name, text + "\n")
    }

    /// Free-form text artifact.
    pub fn text(&mut self, name: &str, text: String) -> Result<()> {
        self.write(name, text)
    }

    fn write(&mut self, name: &str, text: String) -> Result<()> {
        fs::write(self.dir.join(name), text)?;
        self.files.push(name.to_string());
        Ok(())
    }

    /// Writes the manifest last; it lists every other artifact.
    pub fn finish(self, mut manifest: RunManifest) -> Result<RunManifest> {
        manifest.artifacts = self.files.clone();
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Io(e.to_string()))?;
        fs::write(self.dir.join(MANIFEST_FILE), text + "\n")?;
        Ok(manifest)
    }
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Manifests in `dir` itself and in its immediate subdirectories, sorted by path.
pub fn collect_manifests(dir: &Path) -> Result<Vec<RunManifest>> {
    let mut paths = Vec::new();
    let own = dir.join(MANIFEST_FILE);
    if own.is_file() {
        paths.push(own);
    }
    for entry in fs::read_dir(dir)? {
        let p = entry?.path().join(MANIFEST_FILE);
        if p.is_file() {
            paths.push(p);
        }
    }
    paths.sort();
    paths.iter().map(|p| read_manifest(p)).collect()
}

/// Plain-text tables plus a plot-ready CSV; timings are left out so equal runs give equal bytes.
pub fn emit_report(manifests: &[RunManifest]) -> (String, String) {
    let mut text = String::new();
    let mut csv = String::from("schema_version,preset,assertion,predicted,observed,tolerance,verdict\n");
    for m in manifests {
        let _ = writeln!(text, "== {} (config {}) ==", m.preset, &m.config_hash[..m.config_hash.len().min(12)]);
        if m.assertions.is_empty() {
            let _ = writeln!(text, "no assertions evaluated\n");
            continue;
        }
        let _ = writeln!(text, "{:<34} {:<48} {:>14} {:>24}  verdict", "assertion", "predicted", "observed", "tolerance");
        for a in &m.assertions {
            let verdict = if a.pass { "PASS" } else { "FAIL" };
            let _ = writeln!(text, "{:<34} {:<48} {:>14} {:>24}  {verdict}", a.name, a.predicted, short(a.observed), a.tolerance());
            let _ = writeln!(
                csv,
                "{SCHEMA_VERSION},{},{},\"{}\",{},\"{}\",{verdict}",
                m.preset,
                a.name,
                a.predicted.replace('"', "'"),
                a.observed,
                a.tolerance()
            );
        }
        text.push('\n');
    }
    let total: usize = manifests.iter().map(|m| m.assertions.len()).sum();
    let failed: usize = manifests.iter().flat_map(|m| &m.assertions).filter(|a| !a.pass).count();
    match (manifests.is_empty(), total) {
        (true, _) => text.push_str("no assertions evaluated\n"),
        (false, 0) => {}
        _ => {
            let _ = writeln!(text, "{total} assertions, {failed} failed");
        }
    }
    (text, csv)
}

fn short(x: f64) -> String {
    if x != 0.0 && (x.abs() < 1e-3 || x.abs() >= 1e6) {
        format!("{x:.3e}")
    } else {
        format!("{:.6}", x).trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// `f64` to text, shortest round-trip form.
pub fn num(x: f64) -> String {
    format!("{x}")
}
