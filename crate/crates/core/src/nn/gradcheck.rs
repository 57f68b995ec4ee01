//! Central finite-difference checks for anything with a recorded backward
//! pass. Runs in f64; the probed loss is `sum(output * R)` for a fixed
//! random `R`, so the upstream gradient is `R` itself.

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Layer, Mode, NnError, Param, Sequential, Tensor};

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_TOLERANCE: f64 = 1e-3;

/// Something whose forward pass can be replayed and differentiated.
pub trait Differentiable {
    fn forward_train(&mut self, x: &Tensor<f64>, mode: Mode) -> Result<Tensor<f64>, NnError>;
    fn backward_from(&mut self, grad: &Tensor<f64>) -> Result<Tensor<f64>, NnError>;
    fn params_for_check(&mut self) -> Vec<(String, &mut Param<f64>)>;
    /// Digest of the piecewise-linear switch state (ReLU signs, pool
    /// winners) of the last forward pass.
    fn kink_signature(&self) -> u64;
}

impl Differentiable for Layer<f64> {
    fn forward_train(&mut self, x: &Tensor<f64>, mode: Mode) -> Result<Tensor<f64>, NnError> {
        self.forward(x, mode)
    }

    fn backward_from(&mut self, grad: &Tensor<f64>) -> Result<Tensor<f64>, NnError> {
        self.backward(grad)
    }

    fn params_for_check(&mut self) -> Vec<(String, &mut Param<f64>)> {
        self.params_mut().into_iter().map(|(n, p)| (n.to_string(), p)).collect()
    }

    fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.hash_switches(&mut h);
        h.finish()
    }
}

impl Differentiable for Sequential<f64> {
    fn forward_train(&mut self, x: &Tensor<f64>, mode: Mode) -> Result<Tensor<f64>, NnError> {
        self.forward(x, mode)
    }

    fn backward_from(&mut self, grad: &Tensor<f64>) -> Result<Tensor<f64>, NnError> {
        self.backward(grad)
    }

    fn params_for_check(&mut self) -> Vec<(String, &mut Param<f64>)> {
        self.named_params_mut()
    }

    fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (_, layer) in self.layers() {
            layer.hash_switches(&mut h);
        }
        h.finish()
    }
}

/// Relative error of one checked tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub coords: usize,
    /// Sampled coordinates whose ±step probe changed the switch state and
    /// were therefore left out of the comparison.
    pub skipped: usize,
    pub rel_error: f64,
    /// Error over every sampled coordinate, kinks included. Diagnostic only.
    pub rel_error_all: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.rel_error).fold(0.0, f64::max)
    }

    pub fn max_rel_error_all(&self) -> f64 {
        self.tensors.iter().map(|t| t.rel_error_all).fold(0.0, f64::max)
    }

    pub fn skipped(&self) -> usize {
        self.tensors.iter().map(|t| t.skipped).sum()
    }

    pub fn checked(&self) -> usize {
        self.tensors.iter().map(|t| t.coords - t.skipped).sum()
    }

    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// Gradients whose norms are both below this are treated as exactly zero
/// (e.g. a conv bias feeding train-mode batch norm), where the ratio would
/// only compare rounding noise.
pub const ZERO_GRAD_FLOOR: f64 = 1e-7;

/// `‖a − n‖ / max(‖a‖, ‖n‖, ZERO_GRAD_FLOOR)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric)).max(ZERO_GRAD_FLOOR);
    norm(&diff) / scale
}

fn weighted_sum(out: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    out.data().iter().zip(r.data()).map(|(o, w)| o * w).sum()
}

fn sample_coords(len: usize, max: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        rand::seq::index::sample(rng, len, max).into_vec()
    }
}

/// Compares analytic input and parameter gradients against central
/// differences on up to `max_coords` sampled entries per tensor.
///
/// A coordinate whose `x ± step` probes land on a different ReLU/max
/// switch pattern than `x` is skipped: the difference quotient there
/// straddles a kink and says nothing about the derivative.
pub fn check_gradients<D: Differentiable>(
    net: &mut D,
    input: &Tensor<f64>,
    mode: Mode,
    step: f64,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheckReport, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, p) in net.params_for_check() {
        p.zero_grad();
    }
    let out = net.forward_train(input, mode)?;
    let base_sig = net.kink_signature();
    let r_data = (0..out.len()).map(|_| rng.sample(StandardNormal)).collect();
    let r = Tensor::new(out.shape().to_vec(), r_data)?;
    let dx = net.backward_from(&r)?;

    // Some(derivative) or None when the probe crossed a kink.
    let probe = |net: &mut D, x: &Tensor<f64>| -> Result<(f64, bool), NnError> {
        let loss = weighted_sum(&net.forward_train(x, mode)?, &r);
        Ok((loss, net.kink_signature() == base_sig))
    };

    let mut tensors = Vec::new();

    let coords = sample_coords(input.len(), max_coords, &mut rng);
    let mut x = input.clone();
    let (mut analytic, mut numeric, mut skipped) = (Vec::new(), Vec::new(), 0);
    let (mut all_a, mut all_n) = (Vec::new(), Vec::new());
    for &j in &coords {
        let orig = x.data()[j];
        x.data_mut()[j] = orig + step;
        let (plus, ok_p) = probe(net, &x)?;
        x.data_mut()[j] = orig - step;
        let (minus, ok_m) = probe(net, &x)?;
        x.data_mut()[j] = orig;
        all_a.push(dx.data()[j]);
        all_n.push((plus - minus) / (2.0 * step));
        if ok_p && ok_m {
            numeric.push((plus - minus) / (2.0 * step));
            analytic.push(dx.data()[j]);
        } else {
            skipped += 1;
        }
    }
    tensors.push(TensorCheck {
        name: "input".into(),
        coords: coords.len(),
        skipped,
        rel_error: relative_error(&analytic, &numeric),
        rel_error_all: relative_error(&all_a, &all_n),
    });

    let analytic_grads: Vec<(String, Tensor<f64>)> = net
        .params_for_check()
        .into_iter()
        .map(|(n, p)| (n, p.grad.clone()))
        .collect();
    for (t, (name, grad)) in analytic_grads.iter().enumerate() {
        let coords = sample_coords(grad.len(), max_coords, &mut rng);
        let (mut analytic, mut numeric, mut skipped) = (Vec::new(), Vec::new(), 0);
        let (mut all_a, mut all_n) = (Vec::new(), Vec::new());
        for &j in &coords {
            let orig = nth_param(net, t).value.data()[j];
            nth_param(net, t).value.data_mut()[j] = orig + step;
            let (plus, ok_p) = probe(net, input)?;
            nth_param(net, t).value.data_mut()[j] = orig - step;
            let (minus, ok_m) = probe(net, input)?;
            nth_param(net, t).value.data_mut()[j] = orig;
            all_a.push(grad.data()[j]);
            all_n.push((plus - minus) / (2.0 * step));
            if ok_p && ok_m {
                numeric.push((plus - minus) / (2.0 * step));
                analytic.push(grad.data()[j]);
            } else {
                skipped += 1;
            }
        }
        tensors.push(TensorCheck {
            name: name.clone(),
            coords: coords.len(),
            skipped,
            rel_error: relative_error(&analytic, &numeric),
            rel_error_all: relative_error(&all_a, &all_n),
        });
    }
    Ok(GradCheckReport { tensors })
}

fn nth_param<D: Differentiable>(net: &mut D, t: usize) -> &mut Param<f64> {
    net.params_for_check().swap_remove(t).1
}

/// Standard-normal tensor, optionally pushed away from zero so ReLU kinks
/// are not straddled by the finite-difference step.
pub fn random_tensor(shape: &[usize], min_abs: f64, rng: &mut impl Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.sample(StandardNormal);
            if v.abs() < min_abs {
                v.signum() * min_abs + v
            } else {
                v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape product")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{BatchNorm2d, Conv2d, Pool2d, PoolKind};

    fn assert_passes<D: Differentiable>(net: &mut D, x: &Tensor<f64>, mode: Mode, seed: u64) {
        let rep = check_gradients(net, x, mode, DEFAULT_STEP, 64, seed).unwrap();
        assert!(
            rep.max_rel_error() < DEFAULT_TOLERANCE,
            "seed {seed}: {:?}",
            rep.worst()
        );
        assert!(rep.skipped() * 4 <= rep.checked(), "seed {seed}: too many kinks {rep:?}");
    }

    #[test]
    fn relative_error_basics() {
        assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((relative_error(&[1.0], &[0.0]) - 1.0).abs() < 1e-15);
        assert!(relative_error(&[1e-17], &[3e-12]) < 1e-4);
    }

    #[test]
    fn conv_layers_match_finite_differences() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (cin, cout) = (rng.gen_range(1..4), rng.gen_range(1..4));
            let kh = rng.gen_range(1..4);
            let kw = rng.gen_range(1..3);
            let stride = (rng.gen_range(1..3), rng.gen_range(1..3));
            let pad = (rng.gen_range(0..2), rng.gen_range(0..2));
            let mut layer = Layer::Conv(Conv2d::<f64>::new(cin, cout, (kh, kw), stride, pad, &mut rng));
            for (_, p) in layer.params_mut() {
                p.value = random_tensor(p.value.shape(), 0.0, &mut rng);
            }
            let x = random_tensor(&[2, cin, rng.gen_range(3..8), rng.gen_range(3..8)], 0.0, &mut rng);
            assert_passes(&mut layer, &x, Mode::Train, seed);
        }
    }

    #[test]
    fn batchnorm_matches_finite_differences() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let c = rng.gen_range(1..4);
            let mut bn = BatchNorm2d::<f64>::new(c);
            bn.gamma.value = random_tensor(&[c], 0.0, &mut rng);
            bn.beta.value = random_tensor(&[c], 0.0, &mut rng);
            bn.running_mean = random_tensor(&[c], 0.0, &mut rng);
            bn.running_var = random_tensor(&[c], 0.0, &mut rng).map(|v| v.abs() + 0.5);
            let mut layer = Layer::BatchNorm(bn);
            let x = random_tensor(&[3, c, 3, 2], 0.0, &mut rng);
            assert_passes(&mut layer, &x, Mode::Train, seed);
            assert_passes(&mut layer, &x, Mode::Eval, seed);
        }
    }

    #[test]
    fn activations_and_pools_match_finite_differences() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
            let x = random_tensor(&[2, 2, 4, 6], 0.05, &mut rng);
            assert_passes(&mut Layer::<f64>::relu(), &x, Mode::Train, seed);
            assert_passes(&mut Layer::<f64>::sigmoid(), &x, Mode::Train, seed);
            for kind in [PoolKind::Max, PoolKind::Avg] {
                let mut pool = Layer::<f64>::Pool(Pool2d::new(kind, (2, 2), (2, 2)));
                assert_passes(&mut pool, &x, Mode::Train, seed);
            }
        }
    }

    #[test]
    fn stacked_block_matches_finite_differences() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
            let mut net = Sequential::<f64>::new();
            net.push("c1", Layer::Conv(Conv2d::new(1, 3, (3, 3), (1, 1), (1, 1), &mut rng)));
            net.push("bn1", Layer::BatchNorm(BatchNorm2d::new(3)));
            net.push("r1", Layer::relu());
            net.push("p1", Layer::Pool(Pool2d::new(PoolKind::Max, (2, 2), (2, 2))));
            net.push("c2", Layer::Conv(Conv2d::new(3, 2, (1, 1), (1, 1), (0, 0), &mut rng)));
            net.push("s", Layer::sigmoid());
            let x = random_tensor(&[2, 1, 6, 6], 0.0, &mut rng);
            assert_passes(&mut net, &x, Mode::Train, seed);
        }
    }
}
