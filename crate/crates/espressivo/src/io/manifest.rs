//! Manifest files: the MAESTRO-style input CSV, the prepared-data CSV, and
//! the per-command run manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::atomic_write;

/// One row of a MAESTRO-style input manifest (midi path, audio path, split).
#[derive(Debug, Clone, PartialEq)]
pub struct InputRow {
    pub midi: PathBuf,
    pub audio: PathBuf,
    pub split: String,
}

/// Read a MAESTRO-style CSV manifest.
///
/// Column headers are matched by substring (`midi`, `audio`, `split`), which
/// accepts both a plain `midi,audio,split` file and the MAESTRO metadata CSV
/// with its `midi_filename`/`audio_filename` columns. Relative paths are
/// resolved against the manifest's directory.
pub fn read_input_manifest(path: &Path) -> Result<Vec<InputRow>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Manifest(e.to_string()))?
        .clone();
    let find = |needle: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.to_ascii_lowercase().contains(needle))
            .ok_or_else(|| {
                Error::Manifest(format!(
                    "{}: no column matching `{needle}` in header {headers:?}",
                    path.display()
                ))
            })
    };
    let midi_col = find("midi")?;
    let audio_col = find("audio")?;
    let split_col = find("split")?;
    let base = path.parent().unwrap_or(Path::new("."));

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Manifest(e.to_string()))?;
        let get = |col: usize| record.get(col).unwrap_or("").trim().to_string();
        let resolve = |p: String| {
            let pb = PathBuf::from(p);
            if pb.is_absolute() {
                pb
            } else {
                base.join(pb)
            }
        };
        rows.push(InputRow {
            midi: resolve(get(midi_col)),
            audio: resolve(get(audio_col)),
            split: get(split_col),
        });
    }
    if rows.is_empty() {
        return Err(Error::Manifest(format!(
            "{}: manifest has no data rows",
            path.display()
        )));
    }
    Ok(rows)
}

/// One row of the prepared-data manifest written next to the archives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataRow {
    /// Archive filename, relative to the manifest's directory.
    pub archive: String,
    pub split: String,
    /// Ground-truth articulation cell for synthetic pieces (`staccato` /
    /// `legato`), empty for real data.
    #[serde(default)]
    pub art: String,
    /// Ground-truth dynamics cell (`soft` / `loud`), empty for real data.
    #[serde(default)]
    pub dyn_: String,
}

/// Write the prepared-data manifest as CSV (columns `archive,split,art,dyn`).
pub fn write_data_manifest(path: &Path, rows: &[DataRow]) -> Result<()> {
    let mut out = String::from("archive,split,art,dyn\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.archive, r.split, r.art, r.dyn_));
    }
    atomic_write(path, out.as_bytes())
}

/// Read the prepared-data manifest.
pub fn read_data_manifest(path: &Path) -> Result<Vec<DataRow>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Manifest(e.to_string()))?;
        let get = |i: usize| record.get(i).unwrap_or("").trim().to_string();
        rows.push(DataRow {
            archive: get(0),
            split: get(1),
            art: get(2),
            dyn_: get(3),
        });
    }
    if rows.is_empty() {
        return Err(Error::Manifest(format!(
            "{}: prepared-data manifest has no rows",
            path.display()
        )));
    }
    Ok(rows)
}

/// Record of one CLI invocation, written atomically next to its outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    /// Resolved configuration after defaults < config file < flags.
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    /// Seconds since the Unix epoch at write time.
    pub timestamp: u64,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        RunManifest {
            command: command.to_string(),
            tool_version: crate::VERSION.to_string(),
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timestamp: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    /// Write `<command>.run.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("{}.run.json", self.command));
        atomic_write(&path, &serde_json::to_vec_pretty(self)?)?;
        Ok(path)
    }
}
