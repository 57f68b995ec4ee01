use serde::{Deserialize, Serialize};

use super::{NnError, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Max,
    Avg,
}

/// Result of a window reduction, with the winning input index of every
/// output element for max pooling.
#[derive(Debug, Clone)]
pub(crate) struct Pooled<T> {
    pub output: Tensor<T>,
    pub argmax: Vec<usize>,
}

fn pool_dims(
    shape: [usize; 4],
    size: (usize, usize),
    stride: (usize, usize),
) -> Result<(usize, usize), NnError> {
    let [_, _, h, w] = shape;
    if size.0 == 0 || size.1 == 0 || stride.0 == 0 || stride.1 == 0 {
        return Err(NnError::ShapeMismatch("pool2d: zero window or stride".into()));
    }
    if h < size.0 || w < size.1 {
        return Err(NnError::ShapeMismatch(format!(
            "pool2d: {}x{} window larger than {h}x{w} input",
            size.0, size.1
        )));
    }
    Ok(((h - size.0) / stride.0 + 1, (w - size.1) / stride.1 + 1))
}

pub(crate) fn pool2d_with_indices<T: Scalar>(
    input: &Tensor<T>,
    kind: PoolKind,
    size: (usize, usize),
    stride: (usize, usize),
) -> Result<Pooled<T>, NnError> {
    let dims = input.dims4()?;
    let [n, c, h, w] = dims;
    let (ho, wo) = pool_dims(dims, size, stride)?;
    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    let mut argmax = if kind == PoolKind::Max {
        vec![0usize; n * c * ho * wo]
    } else {
        Vec::new()
    };
    let inv_area = 1.0 / (size.0 * size.1) as f64;
    let x = input.data();
    let y = out.data_mut();

    for plane in 0..n * c {
        let base = plane * h * w;
        for oh in 0..ho {
            for ow in 0..wo {
                let o = (plane * ho + oh) * wo + ow;
                match kind {
                    PoolKind::Max => {
                        let mut best = base + oh * stride.0 * w + ow * stride.1;
                        for i in 0..size.0 {
                            let row = base + (oh * stride.0 + i) * w + ow * stride.1;
                            for idx in row..row + size.1 {
                                if x[idx] > x[best] {
                                    best = idx;
                                }
                            }
                        }
                        y[o] = x[best];
                        argmax[o] = best;
                    }
                    PoolKind::Avg => {
                        let mut acc = 0.0f64;
                        for i in 0..size.0 {
                            let row = base + (oh * stride.0 + i) * w + ow * stride.1;
                            acc += x[row..row + size.1].iter().map(|&v| Scalar::to_f64(v)).sum::<f64>();
                        }
                        y[o] = T::of(acc * inv_area);
                    }
                }
            }
        }
    }
    Ok(Pooled {
        output: out,
        argmax,
    })
}

/// Window reduction over the two trailing axes of `[N, C, H, W]`. Trailing
/// rows/columns that do not fill a window are dropped.
pub fn pool2d<T: Scalar>(
    input: &Tensor<T>,
    kind: PoolKind,
    size: (usize, usize),
    stride: (usize, usize),
) -> Result<Tensor<T>, NnError> {
    pool2d_with_indices(input, kind, size, stride).map(|p| p.output)
}

pub(crate) fn pool2d_backward<T: Scalar>(
    input_shape: &[usize],
    kind: PoolKind,
    size: (usize, usize),
    stride: (usize, usize),
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    let dims: [usize; 4] = input_shape
        .try_into()
        .map_err(|_| NnError::ShapeMismatch("pool2d backward: rank".into()))?;
    let [n, c, h, w] = dims;
    let (ho, wo) = pool_dims(dims, size, stride)?;
    if grad_out.shape() != [n, c, ho, wo] {
        return Err(NnError::ShapeMismatch(format!(
            "pool2d backward: upstream {:?}, expected {:?}",
            grad_out.shape(),
            [n, c, ho, wo]
        )));
    }
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    let g = grad_out.data();
    match kind {
        PoolKind::Max => {
            for (o, &src) in argmax.iter().enumerate() {
                d[src] += g[o];
            }
        }
        PoolKind::Avg => {
            let share = T::of(1.0 / (size.0 * size.1) as f64);
            for plane in 0..n * c {
                let base = plane * h * w;
                for oh in 0..ho {
                    for ow in 0..wo {
                        let v = g[(plane * ho + oh) * wo + ow] * share;
                        for i in 0..size.0 {
                            let row = base + (oh * stride.0 + i) * w + ow * stride.1;
                            d[row..row + size.1].iter_mut().for_each(|x| *x += v);
                        }
                    }
                }
            }
        }
    }
    Ok(dx)
}

/// Reduces `[N, C, K, 1]` over the segment axis `K` to `[N, C]`.
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let (n, c, k) = segment_dims(input)?;
    let out = input
        .data()
        .chunks_exact(k)
        .map(|seg| T::of(seg.iter().map(|&v| Scalar::to_f64(v)).sum::<f64>() / k as f64))
        .collect();
    Tensor::new(vec![n, c], out)
}

pub fn global_avg_pool_backward<T: Scalar>(
    input_shape: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    let k = input_shape.get(2).copied().unwrap_or(0);
    check_upstream(input_shape, grad_out)?;
    let share = T::of(1.0 / k as f64);
    let data = grad_out
        .data()
        .iter()
        .flat_map(|&g| std::iter::repeat_n(g * share, k))
        .collect();
    Tensor::new(input_shape.to_vec(), data)
}

/// Max over the segment axis; returns the winning segment per `(n, c)`.
pub fn global_max_pool<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>), NnError> {
    let (n, c, k) = segment_dims(input)?;
    let mut winners = Vec::with_capacity(n * c);
    let out = input
        .data()
        .chunks_exact(k)
        .map(|seg| {
            let mut best = 0;
            for (i, v) in seg.iter().enumerate() {
                if *v > seg[best] {
                    best = i;
                }
            }
            winners.push(best);
            seg[best]
        })
        .collect();
    Ok((Tensor::new(vec![n, c], out)?, winners))
}

pub fn global_max_pool_backward<T: Scalar>(
    input_shape: &[usize],
    winners: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    check_upstream(input_shape, grad_out)?;
    let k = input_shape[2];
    let mut dx = Tensor::zeros(input_shape);
    for (i, (&g, &win)) in grad_out.data().iter().zip(winners).enumerate() {
        dx.data_mut()[i * k + win] = g;
    }
    Ok(dx)
}

fn segment_dims<T: Scalar>(input: &Tensor<T>) -> Result<(usize, usize, usize), NnError> {
    match input.dims4()? {
        [n, c, k, 1] if k > 0 => Ok((n, c, k)),
        other => Err(NnError::ShapeMismatch(format!(
            "global pool expects [N, C, K>0, 1], got {other:?}"
        ))),
    }
}

fn check_upstream<T: Scalar>(input_shape: &[usize], grad_out: &Tensor<T>) -> Result<(), NnError> {
    match input_shape {
        [n, c, k, 1] if *k > 0 && grad_out.shape() == [*n, *c] => Ok(()),
        _ => Err(NnError::ShapeMismatch(format!(
            "global pool backward: input {input_shape:?}, upstream {:?}",
            grad_out.shape()
        ))),
    }
}
