use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::Value;

use secost::data::SynthConfig;
use secost::model::WelsConfig;
use secost::secost::{StageSchedule, TrainConfig};

/// Everything a run depends on. Relative paths are resolved against the
/// directory of the config file (or the working directory without one).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads for parallel inference; 0 lets the runtime decide.
    pub threads: usize,
    /// SeCoST mixing weight α per stage after the base model.
    pub schedule: Vec<f64>,
    pub paths: PathsConfig,
    pub model: WelsConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub classes: PathBuf,
    pub train_manifest: PathBuf,
    pub val_manifest: PathBuf,
    /// Empty means no held-out evaluation during runs.
    pub eval_manifest: PathBuf,
    /// Where logmel files are cached for manifests that only list audio.
    pub feature_dir: PathBuf,
    /// Checkpoints, soft-target caches and the stage report go here.
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 0,
            schedule: vec![0.3, 0.3, 0.2, 0.1, 0.05],
            paths: PathsConfig {
                classes: "data/classes.txt".into(),
                train_manifest: "data/train.jsonl".into(),
                val_manifest: "data/val.jsonl".into(),
                eval_manifest: "data/eval.jsonl".into(),
                feature_dir: "features".into(),
                out_dir: "runs/secost".into(),
            },
            model: WelsConfig::new(8, 0.125),
            train: TrainConfig::default(),
            synth: SynthConfig {
                label_noise: 0.2,
                ..SynthConfig::default()
            },
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("--set {0}: expected KEY=VALUE")]
    BadOverride(String),
    #[error("--set {key}: {message}")]
    Override { key: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl RunConfig {
    /// Defaults, then the file, then each `key=value` override in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<(Self, PathBuf), ConfigError> {
        let mut merged = Value::try_from(Self::default()).expect("defaults serialize");
        let base_dir = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|source| ConfigError::Read {
                    path: p.to_path_buf(),
                    source,
                })?;
                let file: Value = text.parse::<toml::Table>().map(Value::Table).map_err(|e| ConfigError::Parse {
                    path: p.to_path_buf(),
                    message: e.to_string(),
                })?;
                merge(&mut merged, file);
                p.parent().map(Path::to_path_buf).unwrap_or_default()
            }
            None => PathBuf::new(),
        };
        for o in overrides {
            apply_override(&mut merged, o)?;
        }
        let cfg: RunConfig = merged.try_into().map_err(|e: toml::de::Error| ConfigError::Invalid(e.message().to_string()))?;
        cfg.validate()?;
        Ok((cfg, base_dir))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        StageSchedule::new(self.schedule.clone()).map_err(|e| ConfigError::Invalid(format!("schedule: {e}")))?;
        self.model.widths().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.synth.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn schedule(&self) -> StageSchedule {
        StageSchedule::new(self.schedule.clone()).expect("validated")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Resolves every configured path against `base`.
    pub fn resolved(mut self, base: &Path) -> Self {
        let p = &mut self.paths;
        for path in [
            &mut p.classes,
            &mut p.train_manifest,
            &mut p.val_manifest,
            &mut p.feature_dir,
            &mut p.out_dir,
        ] {
            *path = resolve(base, path);
        }
        if !p.eval_manifest.as_os_str().is_empty() {
            p.eval_manifest = resolve(base, &p.eval_manifest);
        }
        self
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn merge(into: &mut Value, from: Value) {
    match (into, from) {
        (Value::Table(a), Value::Table(b)) => {
            for (k, v) in b {
                match a.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        a.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// `a.b.c=value`; the value is read as TOML when it parses as such
/// (numbers, booleans, arrays, quoted strings) and as a bare string otherwise.
fn apply_override(root: &mut Value, raw: &str) -> Result<(), ConfigError> {
    let (key, value) = raw.split_once('=').ok_or_else(|| ConfigError::BadOverride(raw.into()))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError::BadOverride(raw.into()));
    }
    let value = value.trim();
    let parsed = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(value.to_string()));

    let parts: Vec<&str> = key.split('.').collect();
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let table = node.as_table_mut().ok_or_else(|| ConfigError::Override {
            key: key.into(),
            message: format!("'{}' is not a table", parts[..i].join(".")),
        })?;
        if i + 1 == parts.len() {
            if !table.contains_key(*part) {
                return Err(ConfigError::Override {
                    key: key.into(),
                    message: "unknown key".into(),
                });
            }
            table.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = table.get_mut(*part).ok_or_else(|| ConfigError::Override {
            key: key.into(),
            message: format!("unknown table '{part}'"),
        })?;
    }
    unreachable!("split yields at least one part")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_apply_in_order() {
        let sets = vec![
            "seed=7".to_string(),
            "model.width_multiplier=0.25".into(),
            "schedule=[0.5]".into(),
            "paths.out_dir=elsewhere".into(),
            "seed=9".into(),
        ];
        let (cfg, _) = RunConfig::load(None, &sets).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.model.width_multiplier, 0.25);
        assert_eq!(cfg.schedule, vec![0.5]);
        assert_eq!(cfg.paths.out_dir, PathBuf::from("elsewhere"));
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(matches!(RunConfig::load(None, &["nope=1".into()]), Err(ConfigError::Override { .. })));
        assert!(matches!(RunConfig::load(None, &["seed".into()]), Err(ConfigError::BadOverride(_))));
        assert!(matches!(RunConfig::load(None, &["schedule=[1.5]".into()]), Err(ConfigError::Invalid(_))));
        assert!(matches!(RunConfig::load(None, &["seed=\"x\"".into()]), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn file_merges_over_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "seed = 3\n[train]\nmax_epochs = 2\n").unwrap();
        let (cfg, base) = RunConfig::load(Some(&path), &[]).unwrap();
        assert_eq!((cfg.seed, cfg.train.max_epochs), (3, 2));
        assert_eq!(cfg.train.patience, TrainConfig::default().patience);
        let cfg = cfg.resolved(&base);
        assert_eq!(cfg.paths.out_dir, dir.path().join("runs/secost"));

        fs::write(&path, "[train]\nbogus = 1\n").unwrap();
        assert!(matches!(RunConfig::load(Some(&path), &[]), Err(ConfigError::Invalid(_))));
    }
}
