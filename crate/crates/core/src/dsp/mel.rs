use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{DspError, SampleBuffer, TARGET_SAMPLE_RATE};

/// Additive floor inside the log; silence maps to `ln(LOG_FLOOR)`.
pub const LOG_FLOOR: f64 = 1e-10;

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters equally spaced on the HTK mel scale between 0 Hz and
/// Nyquist, evaluated at the DFT bin frequencies.
///
/// With a 256-point DFT at 16 kHz the lowest filter (0-56 Hz) contains no
/// bin inside its support and always yields the log floor.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    n_mels: usize,
    n_bins: usize,
    /// `n_mels + 2` corner frequencies in Hz; filter `m` spans
    /// `edges[m]..edges[m + 2]` and peaks at `edges[m + 1]`.
    edges_hz: Vec<f64>,
    /// Row-major `n_mels x n_bins`.
    weights: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, n_fft: usize, sample_rate: u32) -> Self {
        let n_bins = n_fft / 2 + 1;
        let mel_max = hz_to_mel(sample_rate as f64 / 2.0);
        let edges_hz: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / n_fft as f64;

        let mut weights = vec![0.0; n_mels * n_bins];
        for m in 0..n_mels {
            let (lo, center, hi) = (edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]);
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                let w = if f >= lo && f <= center {
                    (f - lo) / (center - lo)
                } else if f > center && f <= hi {
                    (hi - f) / (hi - center)
                } else {
                    0.0
                };
                weights[m * n_bins + k] = w.max(0.0);
            }
        }
        Self {
            n_mels,
            n_bins,
            edges_hz,
            weights,
        }
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn filter(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }

    pub fn center_hz(&self, m: usize) -> f64 {
        self.edges_hz[m + 1]
    }

    /// `(lower, upper)` edge of filter `m` in Hz.
    pub fn support_hz(&self, m: usize) -> (f64, f64) {
        (self.edges_hz[m], self.edges_hz[m + 2])
    }

    fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (m, o) in out.iter_mut().enumerate() {
            *o = self
                .filter(m)
                .iter()
                .zip(power)
                .map(|(w, p)| w * p)
                .sum();
        }
    }
}

/// Log mel energies, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelSpec {
    values: Vec<f32>,
    frames: usize,
    n_mels: usize,
    frame_rate: f64,
}

impl LogMelSpec {
    pub fn new(values: Vec<f32>, frames: usize, n_mels: usize, frame_rate: f64) -> Result<Self, DspError> {
        if values.len() != frames * n_mels {
            return Err(DspError::FeatureFormat(format!(
                "{} values for {frames}x{n_mels} matrix",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DspError::FeatureFormat("non-finite feature value".into()));
        }
        Ok(Self {
            values,
            frames,
            n_mels,
            frame_rate,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, frame: usize) -> &[f32] {
        &self.values[frame * self.n_mels..(frame + 1) * self.n_mels]
    }
}

/// Reusable logmel front end: Hann window, power spectrum with a DFT the
/// size of the window, mel filterbank, natural log with an additive floor.
pub struct LogMelExtractor {
    win: usize,
    hop: usize,
    window: Vec<f64>,
    filterbank: MelFilterbank,
    fft: Arc<dyn Fft<f64>>,
}

impl LogMelExtractor {
    pub fn new(n_mels: usize, win_ms: f64, hop_ms: f64) -> Self {
        let sr = TARGET_SAMPLE_RATE as f64;
        let win = (win_ms * sr / 1000.0).round() as usize;
        let hop = (hop_ms * sr / 1000.0).round() as usize;
        assert!(win > 0 && hop > 0 && n_mels > 0, "degenerate logmel geometry");
        // periodic Hann
        let window = (0..win)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / win as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(win);
        Self {
            win,
            hop,
            window,
            filterbank: MelFilterbank::new(n_mels, win, TARGET_SAMPLE_RATE),
            fft,
        }
    }

    pub fn win_len(&self) -> usize {
        self.win
    }

    pub fn hop_len(&self) -> usize {
        self.hop
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    /// `floor((n - win) / hop) + 1` for `n >= win`, otherwise 0.
    pub fn frame_count(&self, n_samples: usize) -> usize {
        if n_samples < self.win {
            0
        } else {
            (n_samples - self.win) / self.hop + 1
        }
    }

    pub fn compute(&self, buf: &SampleBuffer) -> Result<LogMelSpec, DspError> {
        if buf.sample_rate() != TARGET_SAMPLE_RATE {
            return Err(DspError::WrongSampleRate {
                expected: TARGET_SAMPLE_RATE,
                got: buf.sample_rate(),
            });
        }
        let samples = buf.samples();
        if samples.len() < self.win {
            return Err(DspError::TooShort {
                needed: self.win,
                got: samples.len(),
            });
        }

        let frames = self.frame_count(samples.len());
        let n_mels = self.filterbank.n_mels();
        let n_bins = self.filterbank.n_bins();
        let mut values = Vec::with_capacity(frames * n_mels);
        let mut spectrum = vec![Complex::new(0.0, 0.0); self.win];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; n_bins];
        let mut energies = vec![0.0; n_mels];

        for f in 0..frames {
            let start = f * self.hop;
            for (i, c) in spectrum.iter_mut().enumerate() {
                *c = Complex::new(samples[start + i] as f64 * self.window[i], 0.0);
            }
            self.fft.process_with_scratch(&mut spectrum, &mut scratch);
            for (p, c) in power.iter_mut().zip(&spectrum) {
                *p = c.norm_sqr();
            }
            self.filterbank.apply(&power, &mut energies);
            values.extend(energies.iter().map(|&e| (e + LOG_FLOOR).ln() as f32));
        }

        LogMelSpec::new(
            values,
            frames,
            n_mels,
            TARGET_SAMPLE_RATE as f64 / self.hop as f64,
        )
    }
}

/// One-shot logmel. The buffer must already be at 16 kHz.
pub fn logmel(buf: &SampleBuffer, n_mels: usize, win_ms: f64, hop_ms: f64) -> Result<LogMelSpec, DspError> {
    LogMelExtractor::new(n_mels, win_ms, hop_ms).compute(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{DEFAULT_HOP_MS, DEFAULT_N_MELS, DEFAULT_WIN_MS};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn default_extractor() -> LogMelExtractor {
        LogMelExtractor::new(DEFAULT_N_MELS, DEFAULT_WIN_MS, DEFAULT_HOP_MS)
    }

    fn noise(n: usize, seed: u64) -> SampleBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SampleBuffer::new((0..n).map(|_| rng.gen_range(-0.5f32..0.5)).collect(), 16_000).unwrap()
    }

    #[test]
    fn default_geometry() {
        let ex = default_extractor();
        assert_eq!(ex.win_len(), 256);
        assert_eq!(ex.hop_len(), 160);
        assert_eq!(ex.filterbank().n_bins(), 129);
        assert_eq!(ex.frame_count(160_000), 999);
    }

    #[test]
    fn ten_seconds_gives_999_frames() {
        let spec = default_extractor().compute(&noise(160_000, 1)).unwrap();
        assert_eq!(spec.frames(), 999);
        assert_eq!(spec.n_mels(), 64);
        assert_eq!(spec.frame_rate(), 100.0);
    }

    #[test]
    fn silence_hits_the_log_floor() {
        let buf = SampleBuffer::new(vec![0.0; 4000], 16_000).unwrap();
        let spec = logmel(&buf, 64, 16.0, 10.0).unwrap();
        let floor = LOG_FLOOR.ln() as f32;
        assert!(spec.values().iter().all(|&v| v == floor));
    }

    #[test]
    fn sine_peaks_in_nearest_filter() {
        let ex = default_extractor();
        let buf = SampleBuffer::new(
            (0..16_000)
                .map(|n| (2.0 * PI * 1000.0 * n as f64 / 16_000.0).sin() as f32 * 0.5)
                .collect(),
            16_000,
        )
        .unwrap();
        let spec = ex.compute(&buf).unwrap();

        // brute force: filter whose center is nearest 1 kHz
        let fb = ex.filterbank();
        let nearest = (0..fb.n_mels())
            .min_by(|&a, &b| {
                (fb.center_hz(a) - 1000.0)
                    .abs()
                    .partial_cmp(&(fb.center_hz(b) - 1000.0).abs())
                    .unwrap()
            })
            .unwrap();
        for f in 0..spec.frames() {
            let row = spec.row(f);
            let argmax = (0..row.len())
                .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
                .unwrap();
            assert_eq!(argmax, nearest, "frame {f}");
        }
    }

    #[test]
    fn wrong_rate_and_short_input() {
        let buf = SampleBuffer::new(vec![0.0; 1000], 8_000).unwrap();
        assert!(matches!(
            logmel(&buf, 64, 16.0, 10.0),
            Err(DspError::WrongSampleRate { got: 8_000, .. })
        ));
        let buf = SampleBuffer::new(vec![0.0; 255], 16_000).unwrap();
        assert!(matches!(
            logmel(&buf, 64, 16.0, 10.0),
            Err(DspError::TooShort { needed: 256, got: 255 })
        ));
    }

    #[test]
    fn filters_are_triangles() {
        let fb = MelFilterbank::new(64, 256, 16_000);
        for m in 0..fb.n_mels() {
            let w = fb.filter(m);
            let (lo, hi) = fb.support_hz(m);
            assert!(w.iter().all(|&x| (0.0..=1.0).contains(&x)));
            // zero outside the triangle
            for (k, &x) in w.iter().enumerate() {
                let f = k as f64 * 62.5;
                if f <= lo || f >= hi {
                    assert_eq!(x, 0.0, "filter {m} bin {k}");
                }
            }
            // unimodal: non-decreasing then non-increasing
            let peak = (0..w.len())
                .max_by(|&a, &b| w[a].partial_cmp(&w[b]).unwrap())
                .unwrap();
            assert!(w[..=peak].windows(2).all(|p| p[0] <= p[1]));
            assert!(w[peak..].windows(2).all(|p| p[0] >= p[1]));
            if m + 1 < fb.n_mels() {
                // each triangle reaches past the next one's lower edge
                assert!(fb.support_hz(m).1 > fb.support_hz(m + 1).0);
            }
        }
        // below ~600 Hz the triangles are narrower than a DFT bin
        for m in 16..fb.n_mels() - 1 {
            let shared = fb
                .filter(m)
                .iter()
                .zip(fb.filter(m + 1))
                .any(|(a, b)| *a > 0.0 && *b > 0.0);
            assert!(shared, "filters {m} and {} do not overlap", m + 1);
        }
    }

    #[test]
    fn shift_by_one_hop_shifts_rows() {
        let ex = default_extractor();
        let buf = noise(8000, 7);
        let mut shifted = vec![0.0; ex.hop_len()];
        shifted.extend_from_slice(buf.samples());
        let a = ex.compute(&buf).unwrap();
        let b = ex.compute(&SampleBuffer::new(shifted, 16_000).unwrap()).unwrap();
        assert_eq!(b.frames(), a.frames() + 1);
        for f in 0..a.frames() {
            for (x, y) in a.row(f).iter().zip(b.row(f + 1)) {
                assert!((x - y).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn white_noise_energy_grows_linearly() {
        let ex = default_extractor();
        let total = |n: usize| -> f64 {
            let spec = ex.compute(&noise(n, 3)).unwrap();
            spec.values().iter().map(|&v| (v as f64).exp()).sum()
        };
        let ratio = total(64_000) / total(32_000);
        assert!((ratio - 2.0).abs() <= 0.2, "ratio {ratio}");
    }

    proptest! {
        #[test]
        fn frame_count_matches_naive_slicing(n in 256usize..5000) {
            let ex = default_extractor();
            let mut naive = 0;
            let mut start = 0;
            while start + 256 <= n {
                naive += 1;
                start += 160;
            }
            prop_assert_eq!(ex.frame_count(n), naive);
        }
    }
}
