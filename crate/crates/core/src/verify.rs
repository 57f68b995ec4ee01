//! Self-contained consistency suite: loss identities, finite-difference
//! gradients, architecture shapes, metric oracles and the front-end
//! contract. Needs no dataset.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::{LogMelExtractor, SampleBuffer, DEFAULT_HOP_MS, DEFAULT_N_MELS, DEFAULT_WIN_MS, LOG_FLOOR};
use crate::metrics::{average_precision, roc_auc};
use crate::model::{RecordingPool, WelsConfig, WelsNet};
use crate::nn::gradcheck::{check_gradients, random_tensor, Differentiable, GradCheckReport, DEFAULT_STEP, DEFAULT_TOLERANCE};
use crate::nn::{BatchNorm2d, Conv2d, Layer, Mode, Pool2d, PoolKind, Sequential, Tensor};
use crate::secost::{
    bce_loss, clamp_prob, decomposed_loss, decomposed_loss_multi, mix_targets, mix_targets_multi, teacher_correction,
    TeacherWeights,
};

pub const MIXING_IDENTITY: &str = "mixing identity";
pub const MULTI_TEACHER_IDENTITY: &str = "multi-teacher identity";
pub const GRADIENT_CHECK: &str = "gradient check";
pub const TABLE1_SHAPES: &str = "table 1 shapes";
pub const METRIC_ORACLES: &str = "metric oracles";
pub const DSP_CONTRACT: &str = "dsp contract";

pub const IDENTITY_TOLERANCE: f64 = 1e-9;
pub const IDENTITY_CLASS_COUNTS: [usize; 3] = [1, 10, 527];

/// Deliberate defects for checking that the suite notices them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Teacher term of the decomposed losses with its sign flipped.
    MixingSign,
}

impl std::str::FromStr for Fault {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mixing-sign" => Ok(Fault::MixingSign),
            other => Err(format!("unknown fault '{other}' (known: mixing-sign)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub identity_draws: usize,
    pub gradient_seeds: u64,
    pub metric_max_len: usize,
    pub dsp_clips: usize,
    pub fault: Option<Fault>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            identity_draws: 1000,
            gradient_seeds: 20,
            metric_max_len: 8,
            dsp_clips: 50,
            fault: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PropertyResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub results: Vec<PropertyResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn failed(&self) -> Vec<&'static str> {
        self.results.iter().filter(|r| !r.passed).map(|r| r.name).collect()
    }
}

fn timed(name: &'static str, f: impl FnOnce() -> Result<String, String>) -> PropertyResult {
    let t = Instant::now();
    let (passed, detail) = match f() {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    PropertyResult {
        name,
        passed,
        detail,
        seconds: t.elapsed().as_secs_f64(),
    }
}

pub fn run_verify(opts: &VerifyOptions) -> VerifyReport {
    VerifyReport {
        results: vec![
            check_mixing_identity(opts.identity_draws, opts.fault),
            check_multi_teacher_identity(opts.identity_draws, opts.fault),
            check_gradient_suite(opts.gradient_seeds),
            check_table1_shapes(),
            check_metric_oracles(opts.metric_max_len),
            check_dsp_contract(opts.dsp_clips),
        ],
    }
}

// ---------------------------------------------------------------- identities

fn draw_probs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| match rng.gen_range(0..10) {
            0 => rng.gen_range(0.0..1e-6),
            1 => 1.0 - rng.gen_range(0.0..1e-6),
            _ => rng.gen_range(0.0..1.0),
        })
        .collect()
}

fn draw_alpha(rng: &mut ChaCha8Rng) -> f64 {
    match rng.gen_range(0..10) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.gen_range(0.0..=1.0),
    }
}

fn mean_teacher_log_odds(p: &[f64], weighted_teacher: &[f64]) -> f64 {
    p.iter()
        .zip(weighted_teacher)
        .map(|(&p, &t)| {
            let p = clamp_prob(p);
            t * ((1.0 - p) / p).ln()
        })
        .sum::<f64>()
        / p.len() as f64
}

/// Single-teacher decomposition as the suite sees it, optionally with the
/// teacher term negated.
fn decomposed_under(fault: Option<Fault>, p: &[f64], y: &[f64], h: &[f64], alpha: f64) -> f64 {
    let d = decomposed_loss(p, y, h, alpha).expect("valid draw");
    match fault {
        None => d,
        Some(Fault::MixingSign) => {
            let scaled: Vec<f64> = h.iter().map(|v| (1.0 - alpha) * v).collect();
            d - 2.0 * mean_teacher_log_odds(p, &scaled)
        }
    }
}

fn correction_under(fault: Option<Fault>, p: &[f64], y: &[f64], h: &[f64], alpha: f64) -> f64 {
    let c = teacher_correction(p, y, h, alpha).expect("valid draw");
    match fault {
        None => c,
        Some(Fault::MixingSign) => -c,
    }
}

/// `bce(p, αy + (1−α)ŷ)` against the decomposed loss and against
/// `bce(p, y) + correction`, in f64.
pub fn check_mixing_identity(draws: usize, fault: Option<Fault>) -> PropertyResult {
    timed(MIXING_IDENTITY, || {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5ec0);
        let mut worst = 0.0f64;
        for d in 0..draws {
            let c = IDENTITY_CLASS_COUNTS[d % IDENTITY_CLASS_COUNTS.len()];
            let p = draw_probs(&mut rng, c);
            let y: Vec<f64> = (0..c).map(|_| rng.gen_bool(0.5) as u8 as f64).collect();
            let h: Vec<f64> = (0..c).map(|_| rng.gen_range(0.0..=1.0)).collect();
            let alpha = draw_alpha(&mut rng);
            let direct = bce_loss(&p, &mix_targets(&y, &h, alpha).expect("valid draw")).expect("valid draw");
            let via_decomposed = decomposed_under(fault, &p, &y, &h, alpha);
            let via_correction = bce_loss(&p, &y).expect("valid draw") + correction_under(fault, &p, &y, &h, alpha);
            let err = (direct - via_decomposed).abs().max((direct - via_correction).abs());
            worst = worst.max(err);
            if !(err < IDENTITY_TOLERANCE) {
                return Err(format!(
                    "draw {d} (|C|={c}, alpha={alpha:.4}): direct {direct:.12} vs decomposed {via_decomposed:.12}, \
                     vs corrected {via_correction:.12}"
                ));
            }
        }
        Ok(format!("{draws} draws, max |diff| {worst:.2e}"))
    })
}

pub fn check_multi_teacher_identity(draws: usize, fault: Option<Fault>) -> PropertyResult {
    timed(MULTI_TEACHER_IDENTITY, || {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5ec1);
        let mut worst = 0.0f64;
        for d in 0..draws {
            let c = IDENTITY_CLASS_COUNTS[d % IDENTITY_CLASS_COUNTS.len()];
            let k = 1 + d % 4;
            let p = draw_probs(&mut rng, c);
            let y: Vec<f64> = (0..c).map(|_| rng.gen_bool(0.5) as u8 as f64).collect();
            let teachers: Vec<Vec<f64>> = (0..k).map(|_| (0..c).map(|_| rng.gen_range(0.0..=1.0)).collect()).collect();
            let raw: Vec<f64> = (0..=k).map(|_| rng.gen_range(0.0..1.0f64) + 1e-3).collect();
            let total: f64 = raw.iter().sum();
            let mut w: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let head: f64 = w[1..].iter().sum();
            w[0] = 1.0 - head;
            let weights = TeacherWeights::new(w.clone()).map_err(|e| format!("weights: {e}"))?;
            let refs: Vec<&[f64]> = teachers.iter().map(|t| t.as_slice()).collect();
            let direct = bce_loss(&p, &mix_targets_multi(&y, &refs, &weights).expect("valid draw")).expect("valid draw");
            let mut decomposed = decomposed_loss_multi(&p, &y, &refs, &weights).expect("valid draw");
            if fault == Some(Fault::MixingSign) {
                let teach: Vec<f64> = (0..c).map(|i| (0..k).map(|j| w[j + 1] * teachers[j][i]).sum()).collect();
                decomposed -= 2.0 * mean_teacher_log_odds(&p, &teach);
            }
            let err = (direct - decomposed).abs();
            worst = worst.max(err);
            if !(err < IDENTITY_TOLERANCE) {
                return Err(format!(
                    "draw {d} (|C|={c}, {k} teachers): direct {direct:.12} vs decomposed {decomposed:.12}"
                ));
            }
        }
        Ok(format!("{draws} draws, 1-4 teachers, max |diff| {worst:.2e}"))
    })
}

// ----------------------------------------------------------------- gradients

/// Outcome of one finite-difference case.
#[derive(Debug, Clone)]
pub struct GradCase {
    pub name: String,
    pub seed: u64,
    pub report: GradCheckReport,
    /// Largest allowed share of skipped (kink) coordinates.
    pub max_skip_share: f64,
}

impl GradCase {
    pub fn skip_share(&self) -> f64 {
        let total = self.report.checked() + self.report.skipped();
        if total == 0 {
            0.0
        } else {
            self.report.skipped() as f64 / total as f64
        }
    }

    pub fn passed(&self) -> bool {
        self.report.max_rel_error() < DEFAULT_TOLERANCE && self.skip_share() <= self.max_skip_share
    }
}

fn run_case<D: Differentiable>(
    name: &str,
    net: &mut D,
    x: &Tensor<f64>,
    mode: Mode,
    seed: u64,
    max_coords: usize,
    max_skip_share: f64,
) -> Result<GradCase, String> {
    let report = check_gradients(net, x, mode, DEFAULT_STEP, max_coords, seed).map_err(|e| format!("{name}: {e}"))?;
    Ok(GradCase {
        name: name.to_string(),
        seed,
        report,
        max_skip_share,
    })
}

/// Single-layer share bound. In the end-to-end network every probe moves
/// thousands of ReLU inputs through train-mode batch norm, and 24-53% of
/// probes cross a kink; the bound only guards against a vacuous check.
const LAYER_SKIP_SHARE: f64 = 0.2;
const NETWORK_SKIP_SHARE: f64 = 0.6;

/// Every layer kind on random small shapes, plus the scaled-down network
/// with both recording heads, each over `seeds` seeds.
pub fn gradient_cases(seeds: u64) -> Result<Vec<GradCase>, String> {
    let mut cases = Vec::new();
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(0x9a0 + seed);

        let (cin, cout) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let kernel = (rng.gen_range(1..4), rng.gen_range(1..3));
        let stride = (rng.gen_range(1..3), rng.gen_range(1..3));
        let pad = (rng.gen_range(0..2), rng.gen_range(0..2));
        let mut conv = Layer::Conv(Conv2d::<f64>::new(cin, cout, kernel, stride, pad, &mut rng));
        for (_, p) in conv.params_mut() {
            p.value = random_tensor(p.value.shape(), 0.0, &mut rng);
        }
        let x = random_tensor(&[2, cin, rng.gen_range(3..8), rng.gen_range(3..8)], 0.0, &mut rng);
        cases.push(run_case("conv2d", &mut conv, &x, Mode::Train, seed, 64, 0.0)?);

        let c = rng.gen_range(1..4);
        let mut bn = BatchNorm2d::<f64>::new(c);
        bn.gamma.value = random_tensor(&[c], 0.0, &mut rng);
        bn.beta.value = random_tensor(&[c], 0.0, &mut rng);
        bn.running_mean = random_tensor(&[c], 0.0, &mut rng);
        bn.running_var = random_tensor(&[c], 0.0, &mut rng).map(|v| v.abs() + 0.5);
        let mut bn = Layer::BatchNorm(bn);
        let x = random_tensor(&[3, c, 3, 2], 0.0, &mut rng);
        cases.push(run_case("batchnorm/train", &mut bn, &x, Mode::Train, seed, 64, 0.0)?);
        cases.push(run_case("batchnorm/eval", &mut bn, &x, Mode::Eval, seed, 64, 0.0)?);

        let x = random_tensor(&[2, 2, 4, 6], 0.05, &mut rng);
        cases.push(run_case("relu", &mut Layer::<f64>::relu(), &x, Mode::Train, seed, 64, LAYER_SKIP_SHARE)?);
        cases.push(run_case("sigmoid", &mut Layer::<f64>::sigmoid(), &x, Mode::Train, seed, 64, 0.0)?);
        for (name, kind) in [("maxpool", PoolKind::Max), ("avgpool", PoolKind::Avg)] {
            let mut pool = Layer::<f64>::Pool(Pool2d::new(kind, (2, 2), (2, 2)));
            cases.push(run_case(name, &mut pool, &x, Mode::Train, seed, 64, LAYER_SKIP_SHARE)?);
        }

        let mut block = Sequential::<f64>::new();
        block.push("conv1", Layer::Conv(Conv2d::new(1, 3, (3, 3), (1, 1), (1, 1), &mut rng)));
        block.push("bn1", Layer::BatchNorm(BatchNorm2d::new(3)));
        block.push("relu1", Layer::relu());
        block.push("pool", Layer::Pool(Pool2d::new(PoolKind::Max, (2, 2), (2, 2))));
        block.push("conv2", Layer::Conv(Conv2d::new(3, 2, (1, 1), (1, 1), (0, 0), &mut rng)));
        block.push("sigmoid", Layer::sigmoid());
        let x = random_tensor(&[2, 1, 6, 6], 0.0, &mut rng);
        cases.push(run_case("block", &mut block, &x, Mode::Train, seed, 64, LAYER_SKIP_SHARE)?);

        let pool = if seed % 2 == 0 { RecordingPool::Mean } else { RecordingPool::Max };
        let cfg = WelsConfig {
            recording_pool: pool,
            ..WelsConfig::new(3, 1.0 / 32.0)
        };
        let mut net = WelsNet::<f64>::build(&cfg, seed).map_err(|e| e.to_string())?;
        // at least 3 segments: with one, L1 batch norm sees 2 values per channel
        let x = random_tensor(&[2, 1, 160 + 32 * (seed as usize % 2), 64], 0.0, &mut rng);
        let name = format!("wels-net/{pool:?}").to_lowercase();
        cases.push(run_case(&name, &mut net, &x, Mode::Train, seed, 8, NETWORK_SKIP_SHARE)?);
    }
    Ok(cases)
}

pub fn check_gradient_suite(seeds: u64) -> PropertyResult {
    timed(GRADIENT_CHECK, || {
        let cases = gradient_cases(seeds)?;
        if let Some(bad) = cases.iter().find(|c| !c.passed()) {
            let worst = bad.report.worst();
            return Err(format!(
                "{} seed {}: rel error {:.3e} on {:?}, {:.0}% of coordinates at kinks",
                bad.name,
                bad.seed,
                bad.report.max_rel_error(),
                worst.map(|w| w.name.as_str()),
                100.0 * bad.skip_share()
            ));
        }
        let worst = cases.iter().map(|c| c.report.max_rel_error()).fold(0.0, f64::max);
        let net_skip = cases
            .iter()
            .filter(|c| c.name.starts_with("wels-net"))
            .map(GradCase::skip_share)
            .fold(0.0, f64::max);
        Ok(format!(
            "{} cases over {seeds} seeds, max rel error {worst:.2e}, network kink share <= {:.0}%",
            cases.len(),
            100.0 * net_skip
        ))
    })
}

// -------------------------------------------------------------------- shapes

/// Output size column of the architecture table for a 1024x64 input,
/// `(channels, frames, mels)` after each conv-BN-ReLU and each pool.
pub const TABLE1_FULL: [(usize, usize, usize); 16] = [
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
    (0, 30, 1), // |C|
];

/// Layer-by-layer output shapes of a single 1024x64 input, taken after
/// every activation and pool.
pub fn trace_shapes(net: &WelsNet<f32>, frames: usize) -> Result<(Vec<[usize; 3]>, Vec<usize>), String> {
    let mut x = Tensor::<f32>::full(&[1, 1, frames, 64], -3.0);
    let mut shapes = Vec::new();
    for (_, layer) in net.body().layers() {
        x = layer.infer(&x).map_err(|e| e.to_string())?;
        if matches!(layer, Layer::Relu(_) | Layer::Sigmoid(_) | Layer::Pool(_)) {
            let s = x.shape();
            shapes.push([s[1], s[2], s[3]]);
        }
    }
    let full = Tensor::<f32>::full(&[1, 1, frames, 64], -3.0);
    let out = net.infer(&full).map_err(|e| e.to_string())?;
    Ok((shapes, out.recording.shape().to_vec()))
}

pub fn check_table1_shapes() -> PropertyResult {
    timed(TABLE1_SHAPES, || {
        let n_classes = 10;
        for (mult, div) in [(1.0, 1usize), (0.125, 8)] {
            let net = WelsNet::<f32>::build(&WelsConfig::new(n_classes, mult), 0).map_err(|e| e.to_string())?;
            let (shapes, recording) = trace_shapes(&net, 1024)?;
            let expected: Vec<[usize; 3]> = TABLE1_FULL
                .iter()
                .map(|&(c, f, m)| [if c == 0 { n_classes } else { c / div }, f, m])
                .collect();
            if shapes != expected {
                return Err(format!("width x{mult}: traced {shapes:?}, expected {expected:?}"));
            }
            if recording != [1, n_classes] {
                return Err(format!("width x{mult}: recording output {recording:?}, expected [1, {n_classes}]"));
            }
        }
        Ok("widths x1 and x1/8: segments |C|x30x1, recording |C|x1".into())
    })
}

// ------------------------------------------------------------------- metrics

/// Precision at each positive, with "ranked ahead" meaning a higher score
/// or an equal score earlier in the input. Terms are summed in rank order.
pub fn ap_oracle(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n = scores.len();
    let mut terms: Vec<(usize, f64)> = Vec::new();
    for i in (0..n).filter(|&i| labels[i]) {
        let mut ahead = 0;
        let mut pos_ahead = 0;
        for j in 0..n {
            if scores[j] > scores[i] || (scores[j] == scores[i] && j < i) {
                ahead += 1;
                pos_ahead += labels[j] as usize;
            }
        }
        terms.push((ahead, (pos_ahead + 1) as f64 / (ahead + 1) as f64));
    }
    if terms.is_empty() {
        return None;
    }
    terms.sort_by_key(|t| t.0);
    Some(terms.iter().fold(0.0, |a, t| a + t.1) / terms.len() as f64)
}

/// Fraction of (positive, negative) pairs ordered correctly, ties 1/2.
pub fn auc_oracle(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let (mut twice_num, mut den) = (0u64, 0u64);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                den += 1;
                if scores[i] > scores[j] {
                    twice_num += 2;
                } else if scores[i] == scores[j] {
                    twice_num += 1;
                }
            }
        }
    }
    (den > 0).then(|| twice_num as f64 / (2 * den) as f64)
}

pub const METRIC_ALPHABET: [f64; 4] = [0.1, 0.4, 0.6, 0.9];

pub fn check_metric_oracles(max_len: usize) -> PropertyResult {
    timed(METRIC_ORACLES, || {
        let s = [0.9, 0.8, 0.7, 0.6];
        let l = [true, false, true, false];
        let ap = average_precision(&s, &l).map_err(|e| e.to_string())?;
        let auc = roc_auc(&s, &l).map_err(|e| e.to_string())?;
        if (ap - 0.8333333333333334).abs() >= 1e-9 || (auc - 0.75).abs() >= 1e-12 {
            return Err(format!("worked example: AP {ap}, AUC {auc}"));
        }
        let mut configs = 0u64;
        let mut scores = Vec::with_capacity(max_len);
        let mut labels = Vec::with_capacity(max_len);
        for n in 1..=max_len {
            for code in 0..4usize.pow(n as u32) {
                scores.clear();
                scores.extend((0..n).map(|i| METRIC_ALPHABET[(code >> (2 * i)) & 3]));
                for mask in 0..(1u32 << n) {
                    labels.clear();
                    labels.extend((0..n).map(|i| mask >> i & 1 == 1));
                    configs += 1;
                    let got_ap = average_precision(&scores, &labels).ok();
                    let got_auc = roc_auc(&scores, &labels).ok();
                    if got_ap != ap_oracle(&scores, &labels) || got_auc != auc_oracle(&scores, &labels) {
                        return Err(format!(
                            "scores {scores:?} labels {labels:?}: AP {got_ap:?} vs {:?}, AUC {got_auc:?} vs {:?}",
                            ap_oracle(&scores, &labels),
                            auc_oracle(&scores, &labels)
                        ));
                    }
                }
            }
        }
        Ok(format!("{configs} configurations up to length {max_len}, exact"))
    })
}

// ----------------------------------------------------------------------- dsp

pub const SHIFT_TOLERANCE: f32 = 1e-5;

pub fn check_dsp_contract(clips: usize) -> PropertyResult {
    timed(DSP_CONTRACT, || {
        let ex = LogMelExtractor::new(DEFAULT_N_MELS, DEFAULT_WIN_MS, DEFAULT_HOP_MS);
        let mut rng = ChaCha8Rng::seed_from_u64(0xd5b);
        let ten_s: Vec<f32> = (0..160_000).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let spec = ex
            .compute(&SampleBuffer::new(ten_s, 16_000).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        if spec.frames() != 999 || spec.n_mels() != 64 {
            return Err(format!("10 s clip gave {}x{}, expected 999x64", spec.frames(), spec.n_mels()));
        }

        let silence = ex
            .compute(&SampleBuffer::new(vec![0.0; 16_000], 16_000).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let floor = LOG_FLOOR.ln() as f32;
        if let Some(v) = silence.values().iter().find(|&&v| v != floor) {
            return Err(format!("silence produced {v}, expected {floor}"));
        }

        let hop = ex.hop_len();
        let mut worst = 0.0f32;
        for c in 0..clips {
            let len = rng.gen_range(2_000..24_000);
            let gain = rng.gen_range(0.01..1.0f32);
            let audio: Vec<f32> = (0..len).map(|_| gain * rng.gen_range(-1.0..1.0f32)).collect();
            let mut shifted = vec![0.0; hop];
            shifted.extend_from_slice(&audio);
            let a = ex
                .compute(&SampleBuffer::new(audio, 16_000).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
            let b = ex
                .compute(&SampleBuffer::new(shifted, 16_000).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
            if b.frames() != a.frames() + 1 {
                return Err(format!("clip {c}: shift gave {} frames from {}", b.frames(), a.frames()));
            }
            for f in 0..a.frames() {
                for (x, y) in a.row(f).iter().zip(b.row(f + 1)) {
                    let d = (x - y).abs();
                    worst = worst.max(d);
                    if !(d <= SHIFT_TOLERANCE) {
                        return Err(format!("clip {c} frame {f}: shifted row differs by {d:e}"));
                    }
                }
            }
        }
        Ok(format!("999 frames for 10 s, silence at ln(1e-10), {clips} shifted clips within {worst:.1e}"))
    })
}
