use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::DataError;

/// One manifest line. `feat`/`wav` are resolved against the manifest's
/// directory on load and written back relative to it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordingEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feat: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wav: Option<PathBuf>,
    pub labels: Vec<usize>,
}

/// Parses JSON-lines manifest text. Blank lines are skipped; line numbers
/// in errors are 1-based.
pub fn parse_manifest(text: &str, n_classes: Option<usize>) -> Result<Vec<RecordingEntry>, DataError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let e: RecordingEntry =
            serde_json::from_str(raw).map_err(|e| DataError::ParseError { line, msg: e.to_string() })?;
        if e.feat.is_none() && e.wav.is_none() {
            return Err(DataError::ParseError {
                line,
                msg: "entry needs `feat` or `wav`".into(),
            });
        }
        if let Some(n) = n_classes {
            if let Some(&label) = e.labels.iter().find(|&&l| l >= n) {
                return Err(DataError::LabelOutOfRange { line, label, n_classes: n });
            }
        }
        if !seen.insert(e.id.clone()) {
            return Err(DataError::DuplicateId(line));
        }
        out.push(e);
    }
    Ok(out)
}

pub fn load_manifest(path: &Path, n_classes: Option<usize>) -> Result<Vec<RecordingEntry>, DataError> {
    let text = fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut entries = parse_manifest(&text, n_classes)?;
    for e in &mut entries {
        for p in [&mut e.feat, &mut e.wav].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
    Ok(entries)
}

/// Writes entries, making paths under the manifest's directory relative.
pub fn write_manifest(path: &Path, entries: &[RecordingEntry]) -> Result<(), DataError> {
    let base = path.parent().unwrap_or(Path::new("."));
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::io::BufWriter::new(fs::File::create(&tmp)?);
        for e in entries {
            let mut e = e.clone();
            for p in [&mut e.feat, &mut e.wav].into_iter().flatten() {
                if let Ok(rel) = p.strip_prefix(base) {
                    *p = rel.to_path_buf();
                }
            }
            writeln!(f, "{}", serde_json::to_string(&e).expect("serializable"))?;
        }
        f.flush()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}
