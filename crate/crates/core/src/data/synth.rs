//! Synthetic weakly labeled corpus. Every class is a harmonic stack with its
//! own fundamental, harmonic count, roll-off and amplitude modulation. A
//! clip is a pink-noise bed plus one event per present class at a random
//! onset. Train labels can be corrupted; validation and eval labels never are.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::{derive_seed, write_manifest, DataError, RecordingEntry};
use crate::dsp::{encode_wav_pcm16, SampleBuffer, TARGET_SAMPLE_RATE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_eval: usize,
    pub clip_seconds: f64,
    /// Mean number of distinct classes per clip (at least one).
    pub mean_labels: f64,
    /// Train-label corruption rate ρ.
    pub label_noise: f64,
    /// Event level relative to the noise bed, drawn uniformly per event.
    pub snr_db: (f64, f64),
    pub event_seconds: (f64, f64),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_classes: 8,
            n_train: 2000,
            n_val: 200,
            n_eval: 400,
            clip_seconds: 10.0,
            mean_labels: 2.7,
            label_noise: 0.0,
            snr_db: (-6.0, 6.0),
            event_seconds: (0.5, 3.0),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::InvalidConfig(m.into()));
        if self.n_classes == 0 {
            return bad("n_classes must be >= 1");
        }
        if !(self.clip_seconds > 0.0) {
            return bad("clip_seconds must be > 0");
        }
        if !(self.mean_labels >= 1.0) {
            return bad("mean_labels must be >= 1");
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return bad("label_noise must lie in [0, 1)");
        }
        if !(self.snr_db.0 <= self.snr_db.1) {
            return bad("snr_db range is empty");
        }
        let (lo, hi) = self.event_seconds;
        if !(lo > 0.0 && lo <= hi) {
            return bad("event_seconds must satisfy 0 < lo <= hi");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Timbre {
    f0: f64,
    harmonics: usize,
    rolloff: f64,
    am_rate: f64,
    am_depth: f64,
}

fn timbres(cfg: &SynthConfig) -> Vec<Timbre> {
    let c = cfg.n_classes;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[b"timbre"]));
    (0..c)
        .map(|k| {
            // three octaves from 160 Hz, evenly spaced on a log axis
            let f0 = 160.0 * 2f64.powf(3.0 * (k as f64 + rng.gen_range(0.0..0.3)) / c as f64);
            Timbre {
                f0,
                harmonics: rng.gen_range(2..=7),
                rolloff: rng.gen_range(0.4..0.85),
                am_rate: rng.gen_range(0.0..12.0),
                am_depth: rng.gen_range(0.0..0.9),
            }
        })
        .collect()
}

pub fn class_names(n_classes: usize) -> Vec<String> {
    (0..n_classes).map(|k| format!("tone{k:02}")).collect()
}

pub fn read_class_names(path: &Path) -> Result<Vec<String>, DataError> {
    Ok(fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub class: usize,
    pub onset_s: f64,
    pub duration_s: f64,
    pub snr_db: f64,
    pub f0_hz: f64,
}

/// Generator record for one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipEvents {
    pub id: String,
    pub split: String,
    pub events: Vec<Event>,
    /// Classes actually present.
    pub true_labels: Vec<usize>,
    /// Labels written to the manifest (corrupted for train).
    pub labels: Vec<usize>,
}

pub type EventLog = Vec<ClipEvents>;

const NOISE_RMS: f64 = 0.03;
const FADE_S: f64 = 0.02;

/// Paul Kellet's economy pink filter over white noise.
fn pink_noise(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
    let mut out: Vec<f64> = (0..n)
        .map(|_| {
            let w: f64 = rng.gen_range(-1.0..1.0);
            b0 = 0.99765 * b0 + w * 0.0990460;
            b1 = 0.96300 * b1 + w * 0.2965164;
            b2 = 0.57000 * b2 + w * 1.0526913;
            b0 + b1 + b2 + w * 0.1848
        })
        .collect();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v *= NOISE_RMS / rms);
    }
    out
}

fn render_event(t: &Timbre, f0: f64, len: usize, rms: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sr = TARGET_SAMPLE_RATE as f64;
    let nyq = sr / 2.0;
    let phases: Vec<f64> = (0..t.harmonics).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    let am_phase = rng.gen_range(0.0..2.0 * PI);
    let fade = ((FADE_S * sr) as usize).min(len / 2).max(1);
    let mut out: Vec<f64> = (0..len)
        .map(|i| {
            let time = i as f64 / sr;
            let mut v = 0.0;
            for (h, ph) in phases.iter().enumerate() {
                let f = f0 * (h + 1) as f64;
                if f < nyq {
                    v += t.rolloff.powi(h as i32) * (2.0 * PI * f * time + ph).sin();
                }
            }
            let am = 1.0 - t.am_depth * 0.5 * (1.0 + (2.0 * PI * t.am_rate * time + am_phase).sin());
            let edge = (i.min(len - 1 - i) as f64 / fade as f64).min(1.0);
            v * am * edge
        })
        .collect();
    let cur = (out.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt();
    if cur > 0.0 {
        out.iter_mut().for_each(|v| *v *= rms / cur);
    }
    out
}

fn draw_label_count(mean: f64, n_classes: usize, rng: &mut ChaCha8Rng) -> usize {
    let extra = if mean > 1.0 {
        Poisson::new(mean - 1.0).expect("positive rate").sample(rng) as usize
    } else {
        0
    };
    (1 + extra).min(n_classes)
}

/// Drops each positive with probability ρ and adds each absent class with
/// probability ρ·k/(C−k), so the expected label count stays k.
fn corrupt(labels: &[usize], n_classes: usize, rho: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if rho == 0.0 {
        return labels.to_vec();
    }
    let k = labels.len();
    let absent = n_classes - k;
    let add_p = if absent == 0 { 0.0 } else { (rho * k as f64 / absent as f64).min(1.0) };
    let mut out: Vec<usize> = (0..n_classes)
        .filter(|c| {
            let present = labels.contains(c);
            let u: f64 = rng.gen();
            if present {
                u >= rho
            } else {
                u < add_p
            }
        })
        .collect();
    out.sort_unstable();
    out
}

/// Audio and generator record for clip `index` of `split`. Pure in its
/// arguments.
pub fn synth_clip(cfg: &SynthConfig, split: &str, index: usize) -> (SampleBuffer, ClipEvents) {
    let timbres = timbres(cfg);
    synth_clip_with(cfg, &timbres, split, index)
}

fn synth_clip_with(cfg: &SynthConfig, timbres: &[Timbre], split: &str, index: usize) -> (SampleBuffer, ClipEvents) {
    let id = format!("{split}_{index:05}");
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[b"clip", id.as_bytes()]));
    let sr = TARGET_SAMPLE_RATE as f64;
    let n = (cfg.clip_seconds * sr).round() as usize;
    let mut audio = pink_noise(n, &mut rng);

    let k = draw_label_count(cfg.mean_labels, cfg.n_classes, &mut rng);
    let mut classes = sample(&mut rng, cfg.n_classes, k).into_vec();
    classes.sort_unstable();
    let mut events = Vec::with_capacity(k);
    for &c in &classes {
        let dur = rng.gen_range(cfg.event_seconds.0..=cfg.event_seconds.1).min(cfg.clip_seconds);
        let onset = rng.gen_range(0.0..=(cfg.clip_seconds - dur));
        let snr = rng.gen_range(cfg.snr_db.0..=cfg.snr_db.1);
        let f0 = timbres[c].f0 * rng.gen_range(0.97..1.03);
        let start = (onset * sr) as usize;
        let len = ((dur * sr) as usize).min(n - start);
        let ev = render_event(&timbres[c], f0, len, NOISE_RMS * 10f64.powf(snr / 20.0), &mut rng);
        for (a, e) in audio[start..start + len].iter_mut().zip(ev) {
            *a += e;
        }
        events.push(Event {
            class: c,
            onset_s: onset,
            duration_s: dur,
            snr_db: snr,
            f0_hz: f0,
        });
    }
    let labels = if split == "train" {
        let mut nrng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[b"noise", id.as_bytes()]));
        corrupt(&classes, cfg.n_classes, cfg.label_noise, &mut nrng)
    } else {
        classes.clone()
    };
    let samples = audio.iter().map(|&v| v.clamp(-1.0, 1.0) as f32).collect();
    (
        SampleBuffer::new(samples, TARGET_SAMPLE_RATE).expect("finite synthetic audio"),
        ClipEvents {
            id,
            split: split.into(),
            events,
            true_labels: classes,
            labels,
        },
    )
}

#[derive(Debug, Clone)]
pub struct SynthSummary {
    pub train_manifest: PathBuf,
    pub val_manifest: PathBuf,
    pub eval_manifest: PathBuf,
    pub classes_path: PathBuf,
    pub events_path: PathBuf,
    pub log: EventLog,
}

/// Writes `wav/*.wav`, `{train,val,eval}.jsonl`, `classes.txt` and
/// `events.jsonl` under `out_dir`.
pub fn synth_corpus(cfg: &SynthConfig, out_dir: &Path) -> Result<SynthSummary, DataError> {
    cfg.validate()?;
    let wav_dir = out_dir.join("wav");
    fs::create_dir_all(&wav_dir)?;
    let timbres = timbres(cfg);
    let mut log = Vec::new();
    let mut manifests = Vec::new();
    for (split, count) in [("train", cfg.n_train), ("val", cfg.n_val), ("eval", cfg.n_eval)] {
        let mut entries = Vec::with_capacity(count);
        for i in 0..count {
            let (audio, rec) = synth_clip_with(cfg, &timbres, split, i);
            let path = wav_dir.join(format!("{}.wav", rec.id));
            fs::write(&path, encode_wav_pcm16(&audio))?;
            entries.push(RecordingEntry {
                id: rec.id.clone(),
                feat: None,
                wav: Some(path),
                labels: rec.labels.clone(),
            });
            log.push(rec);
        }
        let mpath = out_dir.join(format!("{split}.jsonl"));
        write_manifest(&mpath, &entries)?;
        manifests.push(mpath);
    }
    let classes_path = out_dir.join("classes.txt");
    fs::write(&classes_path, class_names(cfg.n_classes).join("\n") + "\n")?;
    let events_path = out_dir.join("events.jsonl");
    let mut f = std::io::BufWriter::new(fs::File::create(&events_path)?);
    for rec in &log {
        writeln!(f, "{}", serde_json::to_string(rec).expect("serializable"))?;
    }
    f.flush()?;
    let [train_manifest, val_manifest, eval_manifest]: [PathBuf; 3] = manifests.try_into().unwrap();
    Ok(SynthSummary {
        train_manifest,
        val_manifest,
        eval_manifest,
        classes_path,
        events_path,
        log,
    })
}
