use super::{NnError, Param, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moments per parameter, in parameter order.
#[derive(Debug, Clone, Default)]
pub struct AdamState<T: Scalar = f32> {
    pub t: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new() -> Self {
        Self {
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

/// One bias-corrected Adam update over `params`, reading their `grad`.
/// Moments are created on the first call.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut Param<T>],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<(), NnError> {
    if state.m.is_empty() {
        state.m = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        state.v = state.m.clone();
    }
    if state.m.len() != params.len() {
        return Err(NnError::ShapeMismatch(format!(
            "adam: state tracks {} tensors, got {}",
            state.m.len(),
            params.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        p.grad.ensure_same_shape(&p.value, "adam gradient")?;
        state.m[i].ensure_same_shape(&p.value, "adam moment")?;
    }

    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (one_b1, one_b2) = (T::of(1.0 - cfg.beta1), T::of(1.0 - cfg.beta2));
    let step = T::of(cfg.lr / c1);
    let inv_c2 = T::of(1.0 / c2);
    let eps = T::of(cfg.eps);

    for (i, p) in params.iter_mut().enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let g = p.grad.data();
        let w = p.value.data_mut();
        for j in 0..w.len() {
            m[j] = b1 * m[j] + one_b1 * g[j];
            v[j] = b2 * v[j] + one_b2 * g[j] * g[j];
            w[j] -= step * m[j] / ((v[j] * inv_c2).sqrt() + eps);
        }
    }
    Ok(())
}
