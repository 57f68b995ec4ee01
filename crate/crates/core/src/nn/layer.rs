//! Stateful layers that record what their backward pass needs.

use rand::Rng;

use super::activation::{relu, relu_backward, sigmoid, sigmoid_backward};
use super::batchnorm::{batchnorm_backward, batchnorm_forward, BnCache, DEFAULT_EPS, DEFAULT_MOMENTUM};
use super::conv::{conv2d, conv2d_backward};
use super::pool::{pool2d, pool2d_backward, pool2d_with_indices, PoolKind};
use super::{Mode, NnError, Scalar, Tensor};

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T = f32> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    fn accumulate(&mut self, g: &Tensor<T>) {
        for (a, &b) in self.grad.data_mut().iter_mut().zip(g.data()) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d<T: Scalar = f32> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    /// Kaiming-uniform (fan-in, ReLU gain) weights and zero bias.
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = c_in * kernel.0 * kernel.1;
        let bound = (6.0 / fan_in as f64).sqrt();
        let n = c_out * fan_in;
        let w = (0..n).map(|_| T::of(rng.gen_range(-bound..bound))).collect();
        Self {
            weight: Param::new(
                Tensor::new(vec![c_out, c_in, kernel.0, kernel.1], w).expect("weight shape"),
            ),
            bias: Param::new(Tensor::zeros(&[c_out])),
            stride,
            pad,
            input: None,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d<T: Scalar = f32> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache<T>>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(Tensor::full(&[channels], T::one())),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            momentum: DEFAULT_MOMENTUM,
            eps: DEFAULT_EPS,
            cache: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Pool2d {
    pub kind: PoolKind,
    pub size: (usize, usize),
    pub stride: (usize, usize),
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl Pool2d {
    pub fn new(kind: PoolKind, size: (usize, usize), stride: (usize, usize)) -> Self {
        Self {
            kind,
            size,
            stride,
            cache: None,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Layer<T: Scalar = f32> {
    Conv(Conv2d<T>),
    BatchNorm(BatchNorm2d<T>),
    Pool(Pool2d),
    Relu(Option<Tensor<T>>),
    Sigmoid(Option<Tensor<T>>),
}

impl<T: Scalar> Layer<T> {
    pub fn relu() -> Self {
        Layer::Relu(None)
    }

    pub fn sigmoid() -> Self {
        Layer::Sigmoid(None)
    }

    /// Forward pass that records the state `backward` consumes. Train mode
    /// also updates batch-norm running statistics.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        match self {
            Layer::Conv(c) => {
                let y = conv2d(x, &c.weight.value, Some(&c.bias.value), c.stride, c.pad)?;
                c.input = Some(x.clone());
                Ok(y)
            }
            Layer::BatchNorm(bn) => {
                let (y, cache) = batchnorm_forward(
                    x,
                    &bn.gamma.value,
                    &bn.beta.value,
                    &mut bn.running_mean,
                    &mut bn.running_var,
                    mode,
                    bn.momentum,
                    bn.eps,
                )?;
                bn.cache = Some(cache);
                Ok(y)
            }
            Layer::Pool(p) => {
                let pooled = pool2d_with_indices(x, p.kind, p.size, p.stride)?;
                p.cache = Some((x.shape().to_vec(), pooled.argmax));
                Ok(pooled.output)
            }
            Layer::Relu(cache) => {
                let y = relu(x);
                *cache = Some(x.clone());
                Ok(y)
            }
            Layer::Sigmoid(cache) => {
                let y = sigmoid(x);
                *cache = Some(y.clone());
                Ok(y)
            }
        }
    }

    /// Eval-mode forward that leaves the layer untouched.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        match self {
            Layer::Conv(c) => conv2d(x, &c.weight.value, Some(&c.bias.value), c.stride, c.pad),
            Layer::BatchNorm(bn) => {
                let (mut rm, mut rv) = (bn.running_mean.clone(), bn.running_var.clone());
                batchnorm_forward(
                    x,
                    &bn.gamma.value,
                    &bn.beta.value,
                    &mut rm,
                    &mut rv,
                    Mode::Eval,
                    bn.momentum,
                    bn.eps,
                )
                .map(|(y, _)| y)
            }
            Layer::Pool(p) => pool2d(x, p.kind, p.size, p.stride),
            Layer::Relu(_) => Ok(relu(x)),
            Layer::Sigmoid(_) => Ok(sigmoid(x)),
        }
    }

    /// Consumes the recorded forward state, accumulates parameter gradients
    /// and returns the gradient with respect to the layer input.
    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        match self {
            Layer::Conv(c) => {
                let input = c.input.take().ok_or(NnError::GraphNotRecorded)?;
                let g = conv2d_backward(&input, &c.weight.value, grad, c.stride, c.pad)?;
                c.weight.accumulate(&g.weight);
                c.bias.accumulate(&g.bias);
                Ok(g.input)
            }
            Layer::BatchNorm(bn) => {
                let cache = bn.cache.take().ok_or(NnError::GraphNotRecorded)?;
                let (dx, dg, db) = batchnorm_backward(&cache, &bn.gamma.value, grad)?;
                bn.gamma.accumulate(&dg);
                bn.beta.accumulate(&db);
                Ok(dx)
            }
            Layer::Pool(p) => {
                let (shape, argmax) = p.cache.take().ok_or(NnError::GraphNotRecorded)?;
                pool2d_backward(&shape, p.kind, p.size, p.stride, &argmax, grad)
            }
            Layer::Relu(cache) => {
                let x = cache.take().ok_or(NnError::GraphNotRecorded)?;
                x.ensure_same_shape(grad, "relu backward")?;
                Ok(relu_backward(&x, grad))
            }
            Layer::Sigmoid(cache) => {
                let y = cache.take().ok_or(NnError::GraphNotRecorded)?;
                y.ensure_same_shape(grad, "sigmoid backward")?;
                Ok(sigmoid_backward(&y, grad))
            }
        }
    }

    /// Feeds the ReLU sign pattern / max-pool winners recorded by the last
    /// `forward` into `h`. Other layers are smooth and contribute nothing.
    pub(crate) fn hash_switches(&self, h: &mut impl std::hash::Hasher) {
        match self {
            Layer::Relu(Some(x)) => {
                for v in x.data() {
                    h.write_u8((*v > T::zero()) as u8);
                }
            }
            Layer::Pool(Pool2d { kind: PoolKind::Max, cache: Some((_, argmax)), .. }) => {
                for &i in argmax {
                    h.write_usize(i);
                }
            }
            _ => {}
        }
    }

    /// Trainable parameters with their local names.
    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Param<T>)> {
        match self {
            Layer::Conv(c) => vec![("weight", &mut c.weight), ("bias", &mut c.bias)],
            Layer::BatchNorm(bn) => vec![("gamma", &mut bn.gamma), ("beta", &mut bn.beta)],
            _ => Vec::new(),
        }
    }

    pub fn params(&self) -> Vec<(&'static str, &Param<T>)> {
        match self {
            Layer::Conv(c) => vec![("weight", &c.weight), ("bias", &c.bias)],
            Layer::BatchNorm(bn) => vec![("gamma", &bn.gamma), ("beta", &bn.beta)],
            _ => Vec::new(),
        }
    }

    /// Non-trainable state (batch-norm running statistics).
    pub fn buffers(&self) -> Vec<(&'static str, &Tensor<T>)> {
        match self {
            Layer::BatchNorm(bn) => vec![("running_mean", &bn.running_mean), ("running_var", &bn.running_var)],
            _ => Vec::new(),
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        match self {
            Layer::BatchNorm(bn) => vec![
                ("running_mean", &mut bn.running_mean),
                ("running_var", &mut bn.running_var),
            ],
            _ => Vec::new(),
        }
    }
}

/// Named layer stack with a fixed backward order.
#[derive(Debug, Clone, Default)]
pub struct Sequential<T: Scalar = f32> {
    layers: Vec<(String, Layer<T>)>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new() -> Self {
        Self { layers: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, layer: Layer<T>) {
        self.layers.push((name.into(), layer));
    }

    pub fn layers(&self) -> &[(String, Layer<T>)] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [(String, Layer<T>)] {
        &mut self.layers
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let mut cur = x.clone();
        for (name, layer) in &mut self.layers {
            cur = layer.forward(&cur, mode)?;
            if cur.first_non_finite().is_some() {
                return Err(NnError::NonFinite(name.clone()));
            }
        }
        Ok(cur)
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mut cur = x.clone();
        for (name, layer) in &self.layers {
            cur = layer.infer(&cur)?;
            if cur.first_non_finite().is_some() {
                return Err(NnError::NonFinite(name.clone()));
            }
        }
        Ok(cur)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mut cur = grad.clone();
        for (_, layer) in self.layers.iter_mut().rev() {
            cur = layer.backward(&cur)?;
        }
        Ok(cur)
    }

    pub fn zero_grad(&mut self) {
        for (_, layer) in &mut self.layers {
            for (_, p) in layer.params_mut() {
                p.zero_grad();
            }
        }
    }

    /// All trainable parameters as `layer.param` names, in layer order.
    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut out = Vec::new();
        for (lname, layer) in &mut self.layers {
            for (pname, p) in layer.params_mut() {
                out.push((format!("{lname}.{pname}"), p));
            }
        }
        out
    }

    pub fn named_params(&self) -> Vec<(String, &Param<T>)> {
        let mut out = Vec::new();
        for (lname, layer) in &self.layers {
            for (pname, p) in layer.params() {
                out.push((format!("{lname}.{pname}"), p));
            }
        }
        out
    }

    pub fn named_buffers(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (lname, layer) in &self.layers {
            for (bname, b) in layer.buffers() {
                out.push((format!("{lname}.{bname}"), b));
            }
        }
        out
    }

    pub fn named_buffers_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (lname, layer) in &mut self.layers {
            for (bname, b) in layer.buffers_mut() {
                out.push((format!("{lname}.{bname}"), b));
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.value.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_without_forward_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut conv = Layer::<f32>::Conv(Conv2d::new(1, 1, (1, 1), (1, 1), (0, 0), &mut rng));
        let g = Tensor::zeros(&[1, 1, 1, 1]);
        assert!(matches!(conv.backward(&g), Err(NnError::GraphNotRecorded)));
        assert!(matches!(Layer::<f32>::relu().backward(&g), Err(NnError::GraphNotRecorded)));
    }

    #[test]
    fn relu_gradient_blocks_negative_inputs() {
        let mut l = Layer::<f64>::relu();
        let x = Tensor::new(vec![3], vec![-1.0, 0.5, -0.1]).unwrap();
        l.forward(&x, Mode::Train).unwrap();
        let g = l.backward(&Tensor::full(&[3], 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn kaiming_bound_and_determinism() {
        let a = Conv2d::<f32>::new(4, 8, (3, 3), (1, 1), (1, 1), &mut ChaCha8Rng::seed_from_u64(5));
        let b = Conv2d::<f32>::new(4, 8, (3, 3), (1, 1), (1, 1), &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a.weight, b.weight);
        let bound = (6.0f32 / 36.0).sqrt();
        assert!(a.weight.value.data().iter().all(|w| w.abs() <= bound));
        assert!(a.bias.value.data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn infer_matches_eval_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net = Sequential::<f64>::new();
        net.push("c", Layer::Conv(Conv2d::new(1, 2, (3, 3), (1, 1), (1, 1), &mut rng)));
        net.push("bn", Layer::BatchNorm(BatchNorm2d::new(2)));
        net.push("r", Layer::relu());
        net.push("p", Layer::Pool(Pool2d::new(PoolKind::Max, (2, 2), (2, 2))));
        let x = Tensor::new(vec![1, 1, 4, 4], (0..16).map(|i| (i as f64).sin()).collect()).unwrap();
        let a = net.infer(&x).unwrap();
        let b = net.forward(&x, Mode::Eval).unwrap();
        assert_eq!(a, b);
        assert_eq!(net.param_count(), 2 * 9 + 2 + 2 + 2);
    }
}
