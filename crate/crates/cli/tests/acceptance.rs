//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Criteria 6-8 train 17 small networks on a synthetic corpus and take
//! about two and a half hours on a single core.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use secost::data::{featurize_entries, load_manifest, read_class_names, synth_corpus, Dataset, SynthConfig};
use secost::dsp::{LogMelExtractor, SampleBuffer};
use secost::metrics::{average_precision, roc_auc};
use secost::model::{WelsConfig, WelsNet};
use secost::nn::{Layer, Tensor};
use secost::secost::{
    bce_loss, decomposed_loss, decomposed_loss_multi, mix_targets, mix_targets_multi, run_secost, RunResult,
    RunSettings, SecostData, SecostError, StageSchedule, TeacherWeights, TrainConfig, CHECKPOINT_DIR, REPORT_FILE,
};
use secost::verify::gradient_cases;

struct Outcome {
    passed: bool,
    detail: String,
}

fn pass(detail: impl Into<String>) -> Outcome {
    Outcome {
        passed: true,
        detail: detail.into(),
    }
}

fn fail(detail: impl Into<String>) -> Outcome {
    Outcome {
        passed: false,
        detail: detail.into(),
    }
}

/// Runs `f`, and fails it if it overruns `limit` (when one is stated).
fn criterion(id: usize, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let mut out = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        fail(format!("panicked: {msg}"))
    });
    let elapsed = t.elapsed();
    if let Some(limit) = limit {
        if elapsed > limit {
            out.passed = false;
            out.detail = format!("{} [over the {:.0} s limit]", out.detail, limit.as_secs_f64());
        }
    }
    println!(
        "criterion {id} {}: {name}: {} ({:.1} s)",
        if out.passed { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64()
    );
    out.passed
}

// ------------------------------------------------------------------ 1

fn mixing_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for draw in 0..1000 {
        let c = [1, 10, 527][draw % 3];
        let p: Vec<f64> = (0..c).map(|_| rng.gen_range(0.0..1.0)).collect();
        let y: Vec<f64> = (0..c).map(|_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 }).collect();
        let h: Vec<f64> = (0..c).map(|_| rng.gen_range(0.0..=1.0)).collect();
        let alpha = rng.gen_range(0.0..=1.0);
        let lhs = bce_loss(&p, &mix_targets(&y, &h, alpha).unwrap()).unwrap();
        let rhs = decomposed_loss(&p, &y, &h, alpha).unwrap();
        worst = worst.max((lhs - rhs).abs());

        let k = 1 + draw % 4;
        let teachers: Vec<Vec<f64>> = (0..k).map(|_| (0..c).map(|_| rng.gen_range(0.0..=1.0)).collect()).collect();
        let mut w: Vec<f64> = (0..=k).map(|_| rng.gen_range(0.01..1.0)).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        w[0] = 1.0 - w[1..].iter().sum::<f64>();
        let w = TeacherWeights::new(w).unwrap();
        let refs: Vec<&[f64]> = teachers.iter().map(Vec::as_slice).collect();
        let lhs = bce_loss(&p, &mix_targets_multi(&y, &refs, &w).unwrap()).unwrap();
        let rhs = decomposed_loss_multi(&p, &y, &refs, &w).unwrap();
        worst = worst.max((lhs - rhs).abs());
    }
    if worst < 1e-9 {
        pass(format!("1000 single and 1000 multi-teacher draws, max |diff| {worst:.1e} < 1e-9"))
    } else {
        fail(format!("max |diff| {worst:e}"))
    }
}

// ------------------------------------------------------------------ 2

fn gradients() -> Outcome {
    let cases = match gradient_cases(20) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let kinds: std::collections::BTreeSet<&str> = cases.iter().map(|c| c.name.as_str()).collect();
    let worst = cases.iter().map(|c| c.report.max_rel_error()).fold(0.0, f64::max);
    let net_skip = cases
        .iter()
        .filter(|c| c.name.starts_with("wels-net"))
        .map(|c| c.skip_share())
        .fold(0.0, f64::max);
    match cases.iter().find(|c| !c.passed()) {
        Some(bad) => fail(format!(
            "{} seed {}: rel error {:.2e}, kink share {:.0}%",
            bad.name,
            bad.seed,
            bad.report.max_rel_error(),
            100.0 * bad.skip_share()
        )),
        None => pass(format!(
            "{} cases ({} kinds x 20 seeds), max rel error {worst:.1e} < 1e-3, network kink share <= {:.0}%",
            cases.len(),
            kinds.len(),
            100.0 * net_skip
        )),
    }
}

// ------------------------------------------------------------------ 3

fn table1_shapes() -> Outcome {
    // Output size column for a 1024x64 input, after each activation/pool.
    let table: [(usize, usize, usize); 15] = [
        (64, 1024, 64),
        (64, 1024, 64),
        (64, 256, 16),
        (128, 256, 16),
        (128, 256, 16),
        (128, 128, 8),
        (256, 128, 8),
        (256, 128, 8),
        (256, 64, 4),
        (512, 64, 4),
        (512, 64, 4),
        (512, 32, 2),
        (2048, 30, 1),
        (1024, 30, 1),
        (1024, 30, 1),
    ];
    let c = 527;
    for (mult, div) in [(1.0, 1), (0.125, 8)] {
        let net = WelsNet::<f32>::build(&WelsConfig::new(c, mult), 3).unwrap();
        let mut x = Tensor::<f32>::full(&[1, 1, 1024, 64], -5.0);
        let mut seen = Vec::new();
        for (_, layer) in net.body().layers() {
            x = layer.infer(&x).unwrap();
            if matches!(layer, Layer::Relu(_) | Layer::Sigmoid(_) | Layer::Pool(_)) {
                seen.push((x.shape()[1], x.shape()[2], x.shape()[3]));
            }
        }
        let mut want: Vec<_> = table.iter().map(|&(ch, f, m)| (ch / div, f, m)).collect();
        want.push((c, 30, 1));
        if seen != want {
            return fail(format!("x{mult}: {seen:?} vs {want:?}"));
        }
        let out = net.infer(&Tensor::full(&[1, 1, 1024, 64], -5.0)).unwrap();
        if out.segments.shape() != [1, c, 30, 1] || out.recording.shape() != [1, c] {
            return fail(format!("x{mult}: segments {:?}, recording {:?}", out.segments.shape(), out.recording.shape()));
        }
    }
    pass("widths x1 and x1/8 match every row; segments |C|x30x1, recording |C|x1")
}

// ------------------------------------------------------------------ 4

/// Stable descending ranking built by insertion, then precision at each
/// positive accumulated down the list.
fn brute_ap(s: &[f64], l: &[bool]) -> Option<f64> {
    let mut order: Vec<usize> = Vec::new();
    for i in 0..s.len() {
        let at = order.iter().position(|&j| s[j] < s[i]).unwrap_or(order.len());
        order.insert(at, i);
    }
    let (mut hits, mut total, mut npos) = (0usize, 0.0f64, 0usize);
    for (rank, &i) in order.iter().enumerate() {
        if l[i] {
            hits += 1;
            npos += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    (npos > 0).then(|| total / npos as f64)
}

fn brute_auc(s: &[f64], l: &[bool]) -> Option<f64> {
    let (mut half_wins, mut pairs) = (0u64, 0u64);
    for (i, &li) in l.iter().enumerate() {
        for (j, &lj) in l.iter().enumerate() {
            if li && !lj {
                pairs += 1;
                half_wins += match s[i].partial_cmp(&s[j]).unwrap() {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
    }
    (pairs > 0).then(|| half_wins as f64 / (2 * pairs) as f64)
}

fn metric_oracles() -> Outcome {
    let ap = average_precision(&[0.9, 0.8, 0.7, 0.6], &[true, false, true, false]).unwrap();
    let auc = roc_auc(&[0.9, 0.8, 0.7, 0.6], &[true, false, true, false]).unwrap();
    if (ap - 0.8333).abs() > 1e-4 || (ap - 5.0 / 6.0).abs() > 1e-9 || (auc - 0.75).abs() > 1e-12 {
        return fail(format!("worked example AP {ap}, AUC {auc}"));
    }
    let alphabet = [0.2, 0.5, 0.7, 0.95];
    let mut n_cfg = 0u64;
    for n in 1..=8usize {
        for code in 0..(1usize << (2 * n)) {
            let s: Vec<f64> = (0..n).map(|i| alphabet[(code >> (2 * i)) & 3]).collect();
            for mask in 0u32..(1 << n) {
                let l: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
                n_cfg += 1;
                if average_precision(&s, &l).ok() != brute_ap(&s, &l) || roc_auc(&s, &l).ok() != brute_auc(&s, &l) {
                    return fail(format!("mismatch at scores {s:?} labels {l:?}"));
                }
            }
        }
    }
    pass(format!("AP 0.8333, AUC 0.75; {n_cfg} configurations up to length 8 match exactly"))
}

// ------------------------------------------------------------------ 5

fn dsp_contract() -> Outcome {
    let ex = LogMelExtractor::new(64, 16.0, 10.0);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let noise = |n: usize, rng: &mut ChaCha8Rng| -> Vec<f32> { (0..n).map(|_| rng.gen_range(-0.3..0.3)).collect() };
    let spec = ex.compute(&SampleBuffer::new(noise(160_000, &mut rng), 16_000).unwrap()).unwrap();
    if spec.frames() != 999 {
        return fail(format!("10 s -> {} frames", spec.frames()));
    }
    let quiet = ex.compute(&SampleBuffer::new(vec![0.0; 48_000], 16_000).unwrap()).unwrap();
    let floor = (1e-10f64).ln() as f32;
    if quiet.values().iter().any(|&v| v != floor) {
        return fail("silence is not at the log floor");
    }
    let mut worst = 0.0f32;
    for _ in 0..50 {
        let x = noise(rng.gen_range(1_000..40_000), &mut rng);
        let mut shifted = vec![0.0f32; 160];
        shifted.extend_from_slice(&x);
        let a = ex.compute(&SampleBuffer::new(x, 16_000).unwrap()).unwrap();
        let b = ex.compute(&SampleBuffer::new(shifted, 16_000).unwrap()).unwrap();
        if b.frames() != a.frames() + 1 {
            return fail("shifted clip frame count");
        }
        for f in 0..a.frames() {
            for (u, v) in a.row(f).iter().zip(b.row(f + 1)) {
                worst = worst.max((u - v).abs());
            }
        }
    }
    if worst <= 1e-5 {
        pass(format!("999 frames; silence = ln(1e-10); 50 shifted clips within {worst:.1e}"))
    } else {
        fail(format!("shift covariance off by {worst:e}"))
    }
}

// ------------------------------------------------------------------ 6-8

/// Desk-scale corpus and training budget shared by criteria 6-8.
fn corpus_config() -> SynthConfig {
    SynthConfig {
        n_classes: 8,
        n_train: 2000,
        n_val: 200,
        n_eval: 400,
        label_noise: 0.2,
        clip_seconds: 3.0,
        snr_db: (-14.0, -2.0),
        seed: 2024,
        ..SynthConfig::default()
    }
}

fn train_config() -> TrainConfig {
    TrainConfig {
        max_epochs: 8,
        patience: 5,
        batch_size: 16,
        frames: 256,
        ..TrainConfig::default()
    }
}

struct Corpus {
    train: Dataset,
    val: Dataset,
    eval: Dataset,
}

fn build_corpus(root: &Path) -> Corpus {
    let summary = synth_corpus(&corpus_config(), &root.join("data")).unwrap();
    let names = read_class_names(&summary.classes_path).unwrap();
    let load = |m: &Path| {
        let entries = load_manifest(m, Some(names.len())).unwrap();
        let feats = featurize_entries(&entries, &root.join("features")).unwrap();
        assert!(feats.failures.is_empty());
        Dataset::load(&feats.entries, &names).unwrap()
    };
    Corpus {
        train: load(&summary.train_manifest),
        val: load(&summary.val_manifest),
        eval: load(&summary.eval_manifest),
    }
}

fn settings(schedule: Vec<f64>, seed: u64, out_dir: PathBuf) -> RunSettings {
    RunSettings {
        model: WelsConfig::new(8, 0.125),
        train: train_config(),
        schedule: StageSchedule::new(schedule).unwrap(),
        seed,
        out_dir,
    }
}

fn run(corpus: &Corpus, s: &RunSettings, stop_after: Option<usize>) -> Result<RunResult, SecostError> {
    let data = SecostData {
        train: &corpus.train,
        val: &corpus.val,
        eval: Some(&corpus.eval),
    };
    run_secost(&data, s, &mut |row| {
        eprintln!(
            "  stage {} alpha {:?}: val mAP {:.4}, eval mAP {:.4}",
            row.stage,
            row.alpha,
            row.val_map,
            row.eval_map.unwrap_or(f64::NAN)
        );
        stop_after != Some(row.stage)
    })
}

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for e in fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        let dest = to.join(e.file_name());
        if e.file_type().unwrap().is_dir() {
            copy_dir(&e.path(), &dest);
        } else {
            fs::copy(e.path(), dest).unwrap();
        }
    }
}

fn eval_map(r: &RunResult, stage: usize) -> f64 {
    r.rows[stage].eval_map.expect("eval set supplied")
}

fn directional(corpus: &Corpus, root: &Path) -> Outcome {
    let mut lines = Vec::new();
    let (mut wins, mut rel_sum) = (0, 0.0);
    for seed in 0..5u64 {
        let r = match run(corpus, &settings(vec![0.3], seed, root.join(format!("seed{seed}"))), None) {
            Ok(r) => r,
            Err(e) => return fail(format!("seed {seed}: {e}")),
        };
        let (base, student) = (eval_map(&r, 0), eval_map(&r, 1));
        let rel = student / base - 1.0;
        wins += (student >= base) as usize;
        rel_sum += rel;
        lines.push(format!("{base:.4}->{student:.4}"));
    }
    let mean_rel = rel_sum / 5.0;
    let detail = format!(
        "eval mAP base->student per seed [{}]; student >= base in {wins}/5, mean relative change {:+.2}%",
        lines.join(", "),
        100.0 * mean_rel
    );
    if wins >= 4 && mean_rel > 0.0 {
        pass(detail)
    } else {
        fail(detail)
    }
}

fn multi_stage(corpus: &Corpus, root: &Path) -> Outcome {
    let schedule = vec![0.3, 0.3, 0.2];
    let dir = root.join("multistage");
    let s = settings(schedule.clone(), 0, dir.clone());

    match run(corpus, &s, Some(1)) {
        Err(SecostError::Interrupted { after_stage: 1 }) => {}
        other => return fail(format!("forced interrupt before stage 2 not honored: {:?}", other.map(|r| r.rows))),
    }
    // a kill while stage 2 was being written leaves a partial checkpoint
    let partial = dir.join(CHECKPOINT_DIR).join("stage_2.wels");
    fs::write(&partial, b"WELS\x01\x00").unwrap();

    let resumed = match run(corpus, &s, None) {
        Ok(r) => r,
        Err(e) => return fail(format!("resume: {e}")),
    };
    let trained: Vec<bool> = resumed.activity.iter().map(|a| a.trained).collect();
    if trained != [false, false, true, true] {
        return fail(format!("resume retrained stages {trained:?}, expected only 2 and 3"));
    }
    let ckpts: Vec<PathBuf> = (0..4).map(|i| dir.join(CHECKPOINT_DIR).join(format!("stage_{i}.wels"))).collect();
    if !ckpts.iter().all(|p| p.exists()) {
        return fail("missing checkpoints");
    }
    let report = fs::read_to_string(dir.join(REPORT_FILE)).unwrap();
    let stages: Vec<u64> = report
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["stage"].as_u64().unwrap())
        .collect();
    if stages != [0, 1, 2, 3] {
        return fail(format!("report stages {stages:?}"));
    }

    // Reproducibility: stages 0-1 against the criterion-6 run with the same
    // seed; stages 2-3 against a second run continued from that run.
    let reference = root.join("multistage_ref");
    copy_dir(&root.join("seed0"), &reference);
    let again = match run(corpus, &settings(schedule, 0, reference.clone()), None) {
        Ok(r) => r,
        Err(e) => return fail(format!("reference run: {e}")),
    };
    for i in 0..4 {
        let a = fs::read(&ckpts[i]).unwrap();
        let b = fs::read(reference.join(CHECKPOINT_DIR).join(format!("stage_{i}.wels"))).unwrap();
        if a != b {
            return fail(format!("stage {i} checkpoint bytes differ between runs with the same seed"));
        }
    }
    if again.rows != resumed.rows {
        return fail("stage rows differ between runs with the same seed");
    }
    let maps: Vec<String> = resumed.rows.iter().map(|r| format!("{:.4}", r.val_map)).collect();
    pass(format!(
        "4 checkpoints, report stages 0-3 (val mAP {}); interrupted before stage 2 with a partial checkpoint, \
         resume trained only stages 2-3; checkpoints and rows byte-identical across runs",
        maps.join(", ")
    ))
}

fn teacher_only(corpus: &Corpus, root: &Path) -> Outcome {
    let dir = root.join("teacher_only");
    copy_dir(&root.join("seed0"), &dir);
    let r = match run(corpus, &settings(vec![0.0], 0, dir), None) {
        Ok(r) => r,
        Err(e) => return fail(e.to_string()),
    };
    if r.activity[0].trained || !r.activity[1].trained {
        return fail("expected the base model to be reused and the alpha=0 student trained");
    }
    let (base, student) = (eval_map(&r, 0), eval_map(&r, 1));
    let ratio = student / base;
    let detail = format!("base eval mAP {base:.4}, alpha=0 student {student:.4}, ratio {ratio:.3}");
    if (0.8..=1.5).contains(&ratio) {
        pass(detail)
    } else {
        fail(detail)
    }
}

// ------------------------------------------------------------------ 9

fn verify_command() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_secost");
    let clean = Command::new(bin).arg("verify").output().unwrap();
    if !clean.status.success() {
        return fail(format!("clean verify exited {:?}: {}", clean.status.code(), String::from_utf8_lossy(&clean.stdout)));
    }
    let clean_out = String::from_utf8_lossy(&clean.stdout);
    let props = clean_out.lines().filter(|l| l.starts_with("PASS")).count();

    let broken = Command::new(bin).args(["verify", "--fault", "mixing-sign"]).output().unwrap();
    let text = format!("{}{}", String::from_utf8_lossy(&broken.stdout), String::from_utf8_lossy(&broken.stderr));
    let named = text.lines().any(|l| l.starts_with("FAIL mixing identity"));
    if broken.status.success() || !named {
        return fail(format!("mutated loss sign: exit {:?}, output:\n{text}", broken.status.code()));
    }
    pass(format!(
        "clean build: exit 0 with {props} properties passing; --fault mixing-sign: exit {} naming \"mixing identity\"",
        broken.status.code().unwrap_or(-1)
    ))
}

fn main() {
    let mut ok = true;
    ok &= criterion(1, "mixing/decomposition identity", Some(Duration::from_secs(5)), mixing_identity);
    ok &= criterion(2, "gradient correctness", Some(Duration::from_secs(120)), gradients);
    ok &= criterion(3, "architecture shape contract", Some(Duration::from_secs(10)), table1_shapes);
    ok &= criterion(4, "metric oracles", Some(Duration::from_secs(60)), metric_oracles);
    ok &= criterion(5, "dsp contract", Some(Duration::from_secs(30)), dsp_contract);

    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = fs::remove_dir_all(&root);
    fs::create_dir_all(&root).unwrap();
    let t = Instant::now();
    let corpus = build_corpus(&root);
    eprintln!("corpus ready in {:.1} s", t.elapsed().as_secs_f64());

    // Criterion 6's target is stated for a multicore machine; its time is
    // reported rather than enforced.
    ok &= criterion(6, "single-stage directional experiment", None, || directional(&corpus, &root));
    ok &= criterion(7, "multi-stage run, resume, reproducibility", Some(Duration::from_secs(7200)), || {
        multi_stage(&corpus, &root)
    });
    ok &= criterion(8, "teacher-only regime", None, || teacher_only(&corpus, &root));
    ok &= criterion(9, "verify command", None, verify_command);

    if !ok {
        std::process::exit(1);
    }
}
