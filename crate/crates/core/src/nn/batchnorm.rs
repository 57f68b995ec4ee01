use super::{Mode, NnError, Scalar, Tensor};

pub const DEFAULT_MOMENTUM: f64 = 0.1;
pub const DEFAULT_EPS: f64 = 1e-5;

/// Per-channel quantities the backward pass needs.
#[derive(Debug, Clone)]
pub(crate) struct BnCache<T> {
    pub mode: Mode,
    pub x_hat: Tensor<T>,
    pub inv_std: Vec<f64>,
}

fn check_channels<T: Scalar>(input: &Tensor<T>, params: &[&Tensor<T>]) -> Result<[usize; 4], NnError> {
    let dims = input.dims4()?;
    for p in params {
        if p.shape() != [dims[1]] {
            return Err(NnError::ShapeMismatch(format!(
                "batchnorm: parameter shape {:?} for {} channels",
                p.shape(),
                dims[1]
            )));
        }
    }
    Ok(dims)
}

/// Normalizes `[N, C, H, W]` per channel. Train mode uses batch statistics
/// and folds them into the running estimates (unbiased variance); eval mode
/// uses the running estimates.
#[allow(clippy::too_many_arguments)]
pub(crate) fn batchnorm_forward<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
    mode: Mode,
    momentum: f64,
    eps: f64,
) -> Result<(Tensor<T>, BnCache<T>), NnError> {
    let [n, c, h, w] = check_channels(input, &[gamma, beta, running_mean, running_var])?;
    let plane = h * w;
    let count = n * plane;
    let x = input.data();
    let mut x_hat = Tensor::zeros(input.shape());
    let mut out = Tensor::zeros(input.shape());
    let mut inv_std = vec![0.0; c];

    for ch in 0..c {
        let planes = |i: usize| (i * c + ch) * plane..(i * c + ch + 1) * plane;
        let (mean, var) = match mode {
            Mode::Train => {
                let mut sum = 0.0f64;
                for i in 0..n {
                    sum += x[planes(i)].iter().map(|v| Scalar::to_f64(*v)).sum::<f64>();
                }
                let mean = sum / count as f64;
                let mut sq = 0.0f64;
                for i in 0..n {
                    sq += x[planes(i)]
                        .iter()
                        .map(|v| {
                            let d = Scalar::to_f64(*v) - mean;
                            d * d
                        })
                        .sum::<f64>();
                }
                let var = sq / count as f64;
                let unbiased = if count > 1 {
                    var * count as f64 / (count - 1) as f64
                } else {
                    var
                };
                let rm = &mut running_mean.data_mut()[ch];
                *rm = T::of((1.0 - momentum) * rm.to_f64() + momentum * mean);
                let rv = &mut running_var.data_mut()[ch];
                *rv = T::of((1.0 - momentum) * rv.to_f64() + momentum * unbiased);
                (mean, var)
            }
            Mode::Eval => (
                running_mean.data()[ch].to_f64(),
                running_var.data()[ch].to_f64().max(0.0),
            ),
        };
        let istd = 1.0 / (var + eps).sqrt();
        inv_std[ch] = istd;
        let g = gamma.data()[ch];
        let b = beta.data()[ch];
        for i in 0..n {
            let r = planes(i);
            let xs = &x[r.clone()];
            let xh = &mut x_hat.data_mut()[r.clone()];
            for (h, v) in xh.iter_mut().zip(xs) {
                *h = T::of((Scalar::to_f64(*v) - mean) * istd);
            }
            let xh = &x_hat.data()[r.clone()];
            for (o, h) in out.data_mut()[r].iter_mut().zip(xh) {
                *o = g * *h + b;
            }
        }
    }
    Ok((out, BnCache { mode, x_hat, inv_std }))
}

/// Returns `(d_input, d_gamma, d_beta)`.
pub(crate) fn batchnorm_backward<T: Scalar>(
    cache: &BnCache<T>,
    gamma: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>), NnError> {
    grad_out.ensure_same_shape(&cache.x_hat, "batchnorm backward")?;
    let [n, c, h, w] = grad_out.dims4()?;
    let plane = h * w;
    let count = (n * plane) as f64;
    let dy = grad_out.data();
    let xh = cache.x_hat.data();
    let mut dx = Tensor::zeros(grad_out.shape());
    let mut d_gamma = vec![T::zero(); c];
    let mut d_beta = vec![T::zero(); c];

    for ch in 0..c {
        let planes = |i: usize| (i * c + ch) * plane..(i * c + ch + 1) * plane;
        let (mut sum_dy, mut sum_dy_xh) = (0.0f64, 0.0f64);
        for i in 0..n {
            let r = planes(i);
            for (g, h) in dy[r.clone()].iter().zip(&xh[r]) {
                let g = Scalar::to_f64(*g);
                sum_dy += g;
                sum_dy_xh += g * Scalar::to_f64(*h);
            }
        }
        d_beta[ch] = T::of(sum_dy);
        d_gamma[ch] = T::of(sum_dy_xh);
        let scale = gamma.data()[ch].to_f64() * cache.inv_std[ch];
        for i in 0..n {
            let r = planes(i);
            let d = &mut dx.data_mut()[r.clone()];
            match cache.mode {
                Mode::Train => {
                    let k = scale / count;
                    for ((o, g), h) in d.iter_mut().zip(&dy[r.clone()]).zip(&xh[r]) {
                        *o = T::of(k * (count * Scalar::to_f64(*g) - sum_dy - Scalar::to_f64(*h) * sum_dy_xh));
                    }
                }
                Mode::Eval => {
                    for (o, g) in d.iter_mut().zip(&dy[r]) {
                        *o = T::of(scale * Scalar::to_f64(*g));
                    }
                }
            }
        }
    }
    Ok((
        dx,
        Tensor::new(vec![c], d_gamma)?,
        Tensor::new(vec![c], d_beta)?,
    ))
}

/// Stateless form of the layer: normalizes `input` and, in train mode,
/// updates the running statistics in place.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
    mode: Mode,
    momentum: f64,
    eps: f64,
) -> Result<Tensor<T>, NnError> {
    batchnorm_forward(input, gamma, beta, running_mean, running_var, mode, momentum, eps).map(|(y, _)| y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn eval_with_unit_stats_is_identity() {
        let x = t(&[2, 1, 1, 3], vec![-2.0, 0.5, 1.0, 3.0, 4.0, -1.0]);
        let (g, b) = (t(&[1], vec![1.0]), t(&[1], vec![0.0]));
        let (mut rm, mut rv) = (t(&[1], vec![0.0]), t(&[1], vec![1.0]));
        let y = batchnorm(&x, &g, &b, &mut rm, &mut rv, Mode::Eval, 0.1, 1e-5).unwrap();
        for (a, e) in y.data().iter().zip(x.data()) {
            assert!((a - e).abs() < 1e-5 * e.abs().max(1.0));
        }
        assert_eq!(rm.data(), &[0.0]);
    }

    #[test]
    fn train_normalizes_plus_minus_one() {
        let x = t(&[2, 2, 1, 1], vec![-1.0, 1.0, 1.0, -1.0]);
        let (g, b) = (t(&[2], vec![1.0, 1.0]), t(&[2], vec![0.0, 0.0]));
        let (mut rm, mut rv) = (t(&[2], vec![0.0, 0.0]), t(&[2], vec![1.0, 1.0]));
        let y = batchnorm(&x, &g, &b, &mut rm, &mut rv, Mode::Train, 0.1, 1e-5).unwrap();
        let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((y.data()[0] + expect).abs() < 1e-12);
        assert!((y.data()[2] - expect).abs() < 1e-12);
        // batch var 1 (biased) -> unbiased 2; running = 0.9 * 1 + 0.1 * 2
        assert!((rv.data()[0] - 1.1).abs() < 1e-12);
        assert_eq!(rm.data(), &[0.0, 0.0]);
    }

    #[test]
    fn zero_scale_gives_shift() {
        let x = t(&[3, 1, 2, 2], (0..12).map(|i| i as f64).collect());
        let (g, b) = (t(&[1], vec![0.0]), t(&[1], vec![5.0]));
        let (mut rm, mut rv) = (t(&[1], vec![0.0]), t(&[1], vec![1.0]));
        for mode in [Mode::Train, Mode::Eval] {
            let y = batchnorm(&x, &g, &b, &mut rm, &mut rv, mode, 0.1, 1e-5).unwrap();
            assert!(y.data().iter().all(|&v| v == 5.0));
        }
    }

    #[test]
    fn eval_mode_is_affine_per_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut rand_t = |shape: &[usize]| {
            let len = shape.iter().product();
            t(shape, (0..len).map(|_| rng.gen_range(-2.0..2.0)).collect())
        };
        let (g, b) = (rand_t(&[3]), rand_t(&[3]));
        let rm = rand_t(&[3]);
        let rv = rand_t(&[3]).map(|v| v.abs() + 0.1);
        let f = |x: &Tensor<f64>| {
            let (mut m, mut v) = (rm.clone(), rv.clone());
            batchnorm(x, &g, &b, &mut m, &mut v, Mode::Eval, 0.1, 1e-5).unwrap()
        };
        let x1 = rand_t(&[2, 3, 2, 2]);
        let x2 = rand_t(&[2, 3, 2, 2]);
        let zero = f(&Tensor::zeros(&[2, 3, 2, 2]));
        let sum = t(&[2, 3, 2, 2], x1.data().iter().zip(x2.data()).map(|(a, b)| a + b).collect());
        // f(x1 + x2) - f(0) == (f(x1) - f(0)) + (f(x2) - f(0))
        let (fs, f1, f2) = (f(&sum), f(&x1), f(&x2));
        for i in 0..fs.len() {
            let lhs = fs.data()[i] - zero.data()[i];
            let rhs = f1.data()[i] - zero.data()[i] + f2.data()[i] - zero.data()[i];
            assert!((lhs - rhs).abs() < 1e-12);
        }
        // homogeneity
        let scaled = x1.map(|v| 2.5 * v);
        let fsc = f(&scaled);
        for i in 0..fsc.len() {
            let lhs = fsc.data()[i] - zero.data()[i];
            let rhs = 2.5 * (f1.data()[i] - zero.data()[i]);
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_mismatch() {
        let x = Tensor::<f32>::zeros(&[1, 2, 1, 1]);
        let p = Tensor::<f32>::zeros(&[3]);
        let (mut rm, mut rv) = (p.clone(), p.clone());
        assert!(batchnorm(&x, &p, &p, &mut rm, &mut rv, Mode::Eval, 0.1, 1e-5).is_err());
    }
}
