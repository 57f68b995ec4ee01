use std::fs;
use std::path::{Path, PathBuf};

use super::{DataError, RecordingEntry};
use crate::dsp::{
    decode_wav, resample, write_lmel_file, LogMelExtractor, DEFAULT_HOP_MS, DEFAULT_N_MELS, DEFAULT_WIN_MS,
    TARGET_SAMPLE_RATE,
};

#[derive(Debug, Default)]
pub struct FeaturizeSummary {
    /// Entries with a feature path (new or pre-existing), in input order.
    pub entries: Vec<RecordingEntry>,
    pub computed: usize,
    pub skipped: usize,
    pub failures: Vec<(String, String)>,
}

fn feature_path(out_dir: &Path, id: &str) -> PathBuf {
    out_dir.join(format!("{id}.lmel"))
}

/// Logmel features for every entry with a `wav`, written to
/// `out_dir/<id>.lmel`. Existing feature files are left alone. Failing
/// entries are reported and dropped from the returned list.
pub fn featurize_entries(entries: &[RecordingEntry], out_dir: &Path) -> Result<FeaturizeSummary, DataError> {
    fs::create_dir_all(out_dir)?;
    let ex = LogMelExtractor::new(DEFAULT_N_MELS, DEFAULT_WIN_MS, DEFAULT_HOP_MS);
    let mut s = FeaturizeSummary::default();
    for e in entries {
        let target = feature_path(out_dir, &e.id);
        if target.exists() {
            s.skipped += 1;
            s.entries.push(RecordingEntry {
                feat: Some(target),
                ..e.clone()
            });
            continue;
        }
        let Some(wav) = &e.wav else {
            if e.feat.is_some() {
                s.skipped += 1;
                s.entries.push(e.clone());
            } else {
                s.failures.push((e.id.clone(), "no wav path".into()));
            }
            continue;
        };
        let result = fs::read(wav)
            .map_err(|err| err.to_string())
            .and_then(|bytes| decode_wav(&bytes).map_err(|err| err.to_string()))
            .and_then(|buf| resample(&buf, TARGET_SAMPLE_RATE).map_err(|err| err.to_string()))
            .and_then(|buf| ex.compute(&buf).map_err(|err| err.to_string()))
            .and_then(|spec| write_lmel_file(&target, &spec).map_err(|err| err.to_string()));
        match result {
            Ok(()) => {
                s.computed += 1;
                s.entries.push(RecordingEntry {
                    feat: Some(target),
                    ..e.clone()
                });
            }
            Err(msg) => {
                log::warn!("{}: {msg}", e.id);
                s.failures.push((e.id.clone(), msg));
            }
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{encode_wav_pcm16, read_lmel_file, SampleBuffer};

    #[test]
    fn computes_then_skips_and_reports_failures() {
        let dir = tempfile::tempdir().unwrap();
        let wav = dir.path().join("a.wav");
        let audio = SampleBuffer::new(vec![0.0; 160_000], 16_000).unwrap();
        fs::write(&wav, encode_wav_pcm16(&audio)).unwrap();
        let bad = dir.path().join("b.wav");
        fs::write(&bad, b"RIFF garbage").unwrap();
        let entries = vec![
            RecordingEntry { id: "a".into(), feat: None, wav: Some(wav), labels: vec![0] },
            RecordingEntry { id: "b".into(), feat: None, wav: Some(bad), labels: vec![] },
        ];
        let out = dir.path().join("feat");
        let s = featurize_entries(&entries, &out).unwrap();
        assert_eq!((s.computed, s.skipped, s.failures.len()), (1, 0, 1));
        assert_eq!(s.failures[0].0, "b");
        let spec = read_lmel_file(&out.join("a.lmel")).unwrap();
        assert_eq!((spec.frames(), spec.n_mels()), (999, 64));
        let again = featurize_entries(&entries[..1], &out).unwrap();
        assert_eq!((again.computed, again.skipped), (0, 1));
    }
}
