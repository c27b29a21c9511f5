use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{KwsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub audio_path: PathBuf,
    pub label: Label,
    pub speaker_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_of_keyword_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_of_keyword_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_ms: Option<f64>,
}

impl ManifestEntry {
    pub fn is_positive(&self) -> bool {
        self.label == Label::Positive
    }
}

fn line_error(path: &Path, line: usize, message: impl Into<String>) -> KwsError {
    KwsError::Manifest {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Parses JSON-lines manifest text. Relative audio paths are joined onto `base`.
pub fn parse_manifest(text: &str, source: &Path, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut entry: ManifestEntry =
            serde_json::from_str(line).map_err(|e| line_error(source, line_no, e.to_string()))?;
        if entry.audio_path.is_relative() {
            entry.audio_path = base.join(&entry.audio_path);
        }
        if let (Some(start), Some(end)) = (entry.start_of_keyword_ms, entry.end_of_keyword_ms) {
            if start >= end {
                return Err(line_error(source, line_no, "start_of_keyword_ms must precede end_of_keyword_ms"));
            }
        }
        if entry.end_of_keyword_ms.is_some_and(|e| e < 0.0) {
            return Err(line_error(source, line_no, "end_of_keyword_ms must be >= 0"));
        }
        entries.push(entry);
    }
    Ok(entries)
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&text, path, base)
}

/// Writes entries as JSON lines; audio paths are stored as given.
pub fn write_manifest(entries: &[ManifestEntry], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for e in entries {
        let line = serde_json::to_string(e).map_err(|err| KwsError::Data(err.to_string()))?;
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct SnipsRecord {
    audio_file_path: PathBuf,
    is_hotword: u8,
    worker_id: String,
    #[serde(default)]
    duration: Option<f64>,
}

/// Adapter for the public "Hey Snips" metadata files (`train.json`,
/// `dev.json`, `test.json`): a JSON array of records with
/// `audio_file_path`, `is_hotword`, `worker_id` and optional `duration`
/// (seconds). Other record fields are ignored. Keyword ends come from the VAD.
pub fn load_snips_metadata(path: &Path, audio_root: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path)?;
    let records: Vec<SnipsRecord> =
        serde_json::from_str(&text).map_err(|e| line_error(path, e.line(), e.to_string()))?;
    Ok(records
        .into_iter()
        .map(|r| ManifestEntry {
            audio_path: audio_root.join(r.audio_file_path),
            label: if r.is_hotword == 1 {
                Label::Positive
            } else {
                Label::Negative
            },
            speaker_id: r.worker_id,
            end_of_keyword_ms: None,
            start_of_keyword_ms: None,
            duration_ms: r.duration.map(|d| d * 1000.0),
        })
        .collect())
}

/// Fails if any audio path appears in more than one split.
pub fn validate_disjoint(splits: &[(&str, &[ManifestEntry])]) -> Result<()> {
    let mut seen: HashMap<&Path, &str> = HashMap::new();
    for (name, entries) in splits {
        for e in entries.iter() {
            if let Some(other) = seen.insert(e.audio_path.as_path(), name) {
                if other != *name {
                    return Err(KwsError::Data(format!(
                        "{} appears in both {other} and {name}",
                        e.audio_path.display()
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Indices of positives whose duration is more than `factor` times away from the median.
pub fn duration_outliers(entries: &[ManifestEntry], factor: f64) -> Vec<usize> {
    let mut durations: Vec<f64> = entries
        .iter()
        .filter(|e| e.is_positive())
        .filter_map(|e| e.duration_ms)
        .collect();
    if durations.is_empty() {
        return Vec::new();
    }
    durations.sort_by(f64::total_cmp);
    let median = durations[durations.len() / 2];
    entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.is_positive())
        .filter(|(_, e)| {
            e.duration_ms
                .is_some_and(|d| d > median * factor || d * factor < median)
        })
        .map(|(i, _)| i)
        .collect()
}
