mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

use secost::data::{
    featurize_entries, load_manifest, read_class_names, synth_corpus, write_manifest, DataError, Dataset,
    RecordingEntry,
};
use secost::metrics::{evaluate, improvement_analysis, read_report_jsonl};
use secost::model::load_checkpoint;
use secost::secost::{run_secost, RunSettings, SecostData, SecostError, StageSchedule};
use secost::verify::{run_verify, Fault, VerifyOptions};

use config::{ConfigError, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "secost", version, about = "Sequential co-supervision for weakly labeled audio tagging")]
struct Cli {
    /// TOML run configuration; omitted keys keep their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides `seed` (and the corpus seed for synth-data).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Dotted-key override, e.g. `--set train.max_epochs=10`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Worker threads; falls back to SECOST_THREADS, then the config.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute logmel features for every recording in a manifest.
    Featurize {
        #[arg(long)]
        manifest: PathBuf,
        /// Feature directory (default: paths.feature_dir).
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Manifest listing the feature files (default: <out_dir>/<manifest name>).
        #[arg(long)]
        out_manifest: Option<PathBuf>,
    },
    /// Write the synthetic weakly labeled corpus.
    SynthData {
        /// Default: the directory of paths.train_manifest.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Train the base model only (stage 0).
    TrainBase,
    /// Base model followed by every scheduled stage; resumes completed stages.
    SecostRun {
        /// Stop once this stage is persisted (rerun to resume).
        #[arg(long, value_name = "STAGE")]
        stop_after_stage: Option<usize>,
    },
    /// Per-class AP/AUC of a checkpoint on a manifest.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Default: paths.eval_manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// JSON-lines report path (printed to stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-class improvement of one evaluation report over another.
    Compare {
        base: PathBuf,
        new: PathBuf,
        /// JSON table path (printed to stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Loss identities, gradient checks, metric oracles, shapes and DSP.
    Verify {
        /// Test fixture: run the suite against a deliberately broken
        /// component (`mixing-sign` flips the teacher term of the loss
        /// decomposition). The suite must then fail.
        #[arg(long, value_name = "FAULT")]
        fault: Option<Fault>,
    },
    /// Print the effective configuration as TOML.
    PrintConfig,
}

enum Failure {
    Config(String),
    Operational(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Operational(e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        match e {
            DataError::InvalidConfig(m) => Failure::Config(m),
            other => Failure::Operational(other.into()),
        }
    }
}

impl From<SecostError> for Failure {
    fn from(e: SecostError) -> Self {
        match e {
            SecostError::Config(_) | SecostError::Data(DataError::InvalidConfig(_)) => Failure::Config(e.to_string()),
            other => Failure::Operational(other.into()),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Operational(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut sets = cli.sets.clone();
    if let Some(seed) = cli.seed {
        sets.push(format!("seed={seed}"));
    }
    let (cfg, base) = RunConfig::load(cli.config.as_deref(), &sets)?;
    let cfg = cfg.resolved(&base);
    init_threads(cli.threads, cfg.threads)?;

    match cli.command {
        Command::PrintConfig => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
        Command::Verify { fault } => cmd_verify(fault),
        Command::SynthData { out_dir } => cmd_synth(&cfg, cli.seed, out_dir),
        Command::Featurize {
            manifest,
            out_dir,
            out_manifest,
        } => cmd_featurize(&cfg, &manifest, out_dir, out_manifest),
        Command::TrainBase => cmd_secost(&cfg, StageSchedule::new(Vec::new()).expect("empty schedule"), None),
        Command::SecostRun { stop_after_stage } => cmd_secost(&cfg, cfg.schedule(), stop_after_stage),
        Command::Evaluate {
            checkpoint,
            manifest,
            out,
        } => cmd_evaluate(&cfg, &checkpoint, manifest, out),
        Command::Compare { base, new, out } => cmd_compare(&base, &new, out),
    }
}

fn init_threads(flag: Option<usize>, configured: usize) -> Result<(), Failure> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var("SECOST_THREADS") {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Failure::Config(format!("SECOST_THREADS={v}: expected a thread count")))?,
            Err(_) => configured,
        },
    };
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Operational(anyhow!("thread pool: {e}")))?;
    }
    Ok(())
}

fn cmd_verify(fault: Option<Fault>) -> Result<(), Failure> {
    let report = run_verify(&VerifyOptions {
        fault,
        ..VerifyOptions::default()
    });
    for r in &report.results {
        println!(
            "{} {:<24} {:>7.2} s  {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.seconds,
            r.detail
        );
    }
    if report.passed() {
        println!("verify: all properties hold");
        Ok(())
    } else {
        Err(anyhow!("verify failed: {}", report.failed().join(", ")).into())
    }
}

fn cmd_synth(cfg: &RunConfig, seed: Option<u64>, out_dir: Option<PathBuf>) -> Result<(), Failure> {
    let mut synth = cfg.synth.clone();
    if let Some(s) = seed {
        synth.seed = s;
    }
    let dir = out_dir.unwrap_or_else(|| {
        cfg.paths
            .train_manifest
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default()
    });
    let summary = synth_corpus(&synth, &dir)?;
    println!(
        "{}",
        serde_json::json!({
            "train": summary.train_manifest,
            "val": summary.val_manifest,
            "eval": summary.eval_manifest,
            "classes": summary.classes_path,
            "events": summary.events_path,
        })
    );
    Ok(())
}

fn cmd_featurize(
    cfg: &RunConfig,
    manifest: &Path,
    out_dir: Option<PathBuf>,
    out_manifest: Option<PathBuf>,
) -> Result<(), Failure> {
    let dir = out_dir.unwrap_or_else(|| cfg.paths.feature_dir.clone());
    let entries = load_manifest(manifest, None).with_context(|| format!("reading {}", manifest.display()))?;
    let summary = featurize_entries(&entries, &dir)?;
    let target = out_manifest.unwrap_or_else(|| dir.join(manifest.file_name().unwrap_or("manifest.jsonl".as_ref())));
    write_manifest(&target, &summary.entries)?;
    println!(
        "featurized {} (computed {}, cached {}, failed {}) -> {}",
        entries.len(),
        summary.computed,
        summary.skipped,
        summary.failures.len(),
        target.display()
    );
    if summary.failures.is_empty() {
        Ok(())
    } else {
        for (id, err) in &summary.failures {
            eprintln!("failed: {id}: {err}");
        }
        Err(anyhow!("{} recordings failed to featurize", summary.failures.len()).into())
    }
}

/// Entries that only list audio get their features computed (or reused)
/// under `feature_dir` first.
fn load_split(manifest: &Path, names: &[String], feature_dir: &Path) -> anyhow::Result<Dataset> {
    let entries = load_manifest(manifest, Some(names.len())).with_context(|| format!("reading {}", manifest.display()))?;
    let ready = |e: &RecordingEntry| e.feat.as_ref().is_some_and(|p| p.exists());
    let entries = if entries.iter().all(ready) {
        entries
    } else {
        let summary = featurize_entries(&entries, feature_dir)?;
        if let Some((id, err)) = summary.failures.first() {
            return Err(anyhow!("{} recordings failed to featurize (first: {id}: {err})", summary.failures.len()));
        }
        summary.entries
    };
    Ok(Dataset::load(&entries, names)?)
}

fn cmd_secost(cfg: &RunConfig, schedule: StageSchedule, stop_after: Option<usize>) -> Result<(), Failure> {
    let names = read_class_names(&cfg.paths.classes)?;
    if names.len() != cfg.model.n_classes {
        return Err(Failure::Config(format!(
            "model.n_classes = {} but {} lists {} classes",
            cfg.model.n_classes,
            cfg.paths.classes.display(),
            names.len()
        )));
    }
    let fd = &cfg.paths.feature_dir;
    let train = load_split(&cfg.paths.train_manifest, &names, fd)?;
    let val = load_split(&cfg.paths.val_manifest, &names, fd)?;
    let eval = if cfg.paths.eval_manifest.as_os_str().is_empty() {
        None
    } else {
        Some(load_split(&cfg.paths.eval_manifest, &names, fd)?)
    };
    let settings = RunSettings {
        model: cfg.model.clone(),
        train: cfg.train.clone(),
        schedule,
        seed: cfg.seed,
        out_dir: cfg.paths.out_dir.clone(),
    };
    let data = SecostData {
        train: &train,
        val: &val,
        eval: eval.as_ref(),
    };
    let mut emit = |row: &secost::secost::StageRow| {
        println!("{}", serde_json::to_string(row).expect("row serializes"));
        stop_after != Some(row.stage)
    };
    match run_secost(&data, &settings, &mut emit) {
        Ok(_) => Ok(()),
        Err(SecostError::Interrupted { after_stage }) => {
            eprintln!("stopped after stage {after_stage}; rerun the same command to resume");
            Ok(())
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_evaluate(cfg: &RunConfig, checkpoint: &Path, manifest: Option<PathBuf>, out: Option<PathBuf>) -> Result<(), Failure> {
    let manifest = manifest.unwrap_or_else(|| cfg.paths.eval_manifest.clone());
    if manifest.as_os_str().is_empty() {
        return Err(Failure::Config("no manifest given and paths.eval_manifest is empty".into()));
    }
    let (model, _) = load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let names = read_class_names(&cfg.paths.classes)?;
    let ds = load_split(&manifest, &names, &cfg.paths.feature_dir)?;
    let report = evaluate(&model, &ds, cfg.train.frames, cfg.train.batch_size).map_err(anyhow::Error::from)?;
    let text = report.to_jsonl();
    match out {
        Some(path) => {
            write_atomic(&path, text.as_bytes())?;
            println!("mAP {:.4} mAUC {:.4} over {} recordings -> {}", report.map, report.mauc, report.n_eval, path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_compare(base: &Path, new: &Path, out: Option<PathBuf>) -> Result<(), Failure> {
    let read = |p: &Path| -> anyhow::Result<_> {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        read_report_jsonl(&text).with_context(|| format!("parsing {}", p.display()))
    };
    let bins = improvement_analysis(&read(base)?, &read(new)?).map_err(anyhow::Error::from)?;
    let table = serde_json::to_string_pretty(&bins).expect("bins serialize");
    match out {
        Some(path) => {
            write_atomic(&path, table.as_bytes())?;
            print!("{}", bins.histogram());
        }
        None => {
            println!("{table}");
            eprint!("{}", bins.histogram());
        }
    }
    Ok(())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
