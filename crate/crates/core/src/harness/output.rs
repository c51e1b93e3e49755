use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::ddpg::hex_digest;
use crate::error::{Error, Result};

pub const MANIFEST_FORMAT: &str = "platoon-manifest/1";
pub const CSV_FORMAT: &str = "platoon-csv/1";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Written next to the results of one command.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub command: String,
    pub digest: String,
    pub prng: String,
    pub config: ExperimentConfig,
    /// Relative path -> SHA-256 of every result file.
    pub files: BTreeMap<String, String>,
}

/// Writes result files under one directory; every CSV starts with a
/// comment line carrying the format and the config digest.
pub struct ResultWriter {
    root: PathBuf,
    digest: String,
    files: BTreeMap<String, String>,
}

/// Shortest round-trip decimal form; stable across runs.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

impl ResultWriter {
    pub fn new(root: &Path, config: &ExperimentConfig) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            digest: config.digest(),
            files: BTreeMap::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// `extra` is appended to the header comment as `key=value` pairs.
    pub fn csv(&mut self, rel: &str, extra: &[(&str, String)], header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
        let mut head = format!("# format={CSV_FORMAT} digest={}", self.digest);
        for (k, v) in extra {
            head.push_str(&format!(" {k}={v}"));
        }
        head.push('\n');
        let mut w = csv::Writer::from_writer(head.into_bytes());
        w.write_record(header)?;
        for r in rows {
            if r.len() != header.len() {
                return Err(Error::Dimension {
                    what: "csv row",
                    expected: header.len(),
                    got: r.len(),
                });
            }
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&path, &bytes)?;
        self.files.insert(rel.to_string(), hex_digest(&bytes));
        Ok(path)
    }

    pub fn finish(self, command: &str, config: &ExperimentConfig) -> Result<Manifest> {
        let m = Manifest {
            format: MANIFEST_FORMAT.into(),
            command: command.into(),
            digest: self.digest,
            prng: crate::rng::PRNG_NAME.into(),
            config: config.clone(),
            files: self.files,
        };
        fs::write(self.root.join(manifest_name(command)), serde_json::to_string_pretty(&m)? + "\n")?;
        Ok(m)
    }
}

/// `train` and `eval` share their scenario directory with the combined
/// command, so they get their own manifest names.
pub fn manifest_name(command: &str) -> String {
    match command {
        "train" | "eval" => format!("{command}.{MANIFEST_FILE}"),
        _ => MANIFEST_FILE.to_string(),
    }
}

/// Reads a result CSV, checking its header comment. Returns the digest and
/// the records as strings keyed by column name.
pub fn read_csv(path: &Path) -> Result<(String, Vec<BTreeMap<String, String>>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::MissingArtifact(format!("{}: {e}", path.display())))?;
    let (first, body) = text.split_once('\n').unwrap_or((&text, ""));
    let mut digest = None;
    let mut format = None;
    for kv in first.trim_start_matches('#').split_whitespace() {
        match kv.split_once('=') {
            Some(("digest", v)) => digest = Some(v.to_string()),
            Some(("format", v)) => format = Some(v.to_string()),
            _ => {}
        }
    }
    if format.as_deref() != Some(CSV_FORMAT) {
        return Err(Error::Format(format!("{}: not a {CSV_FORMAT} file", path.display())));
    }
    let digest = digest.ok_or_else(|| Error::Format(format!("{}: missing digest header", path.display())))?;
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let headers = r.headers()?.clone();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(headers.iter().zip(rec.iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect());
    }
    Ok((digest, rows))
}

pub fn field<T: std::str::FromStr>(row: &BTreeMap<String, String>, name: &str) -> Result<T> {
    row.get(name)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Format(format!("column {name:?} missing or malformed")))
}
