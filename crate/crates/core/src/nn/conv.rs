//! 2-D cross-correlation via im2col + GEMM.

use super::{NnError, Scalar, Tensor};

/// Output extent of a strided window sweep, `None` if the kernel does not
/// fit the padded input.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || kernel == 0 || padded < kernel {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Geometry {
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: (usize, usize),
    pad: (usize, usize),
    h_out: usize,
    w_out: usize,
}

impl Geometry {
    fn new<T: Scalar>(
        input: &Tensor<T>,
        weight: &Tensor<T>,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<(usize, usize, Self), NnError> {
        let [n, c_in, h, w] = input.dims4()?;
        let [c_out, wc_in, kh, kw] = weight.dims4()?;
        if wc_in != c_in {
            return Err(NnError::ShapeMismatch(format!(
                "conv2d: input has {c_in} channels, weight expects {wc_in}"
            )));
        }
        let (h_out, w_out) = match (
            conv_out_len(h, kh, stride.0, pad.0),
            conv_out_len(w, kw, stride.1, pad.1),
        ) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(NnError::ShapeMismatch(format!(
                    "conv2d: {kh}x{kw} kernel does not fit {h}x{w} input with padding {pad:?}"
                )))
            }
        };
        Ok((
            n,
            c_out,
            Self {
                c_in,
                h,
                w,
                kh,
                kw,
                stride,
                pad,
                h_out,
                w_out,
            },
        ))
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn out_len(&self) -> usize {
        self.h_out * self.w_out
    }

    /// A 1x1 unpadded unit-stride conv reads the input directly as its
    /// column matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == (1, 1) && self.pad == (0, 0)
    }

    /// Output columns `[lo, hi)` whose tap `kj` lands inside the input row,
    /// for unit column stride.
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let lo = self.pad.1.saturating_sub(kj).min(self.w_out);
        let hi = (self.w + self.pad.1).saturating_sub(kj).min(self.w_out).max(lo);
        (lo, hi)
    }

    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        let out_len = self.out_len();
        for c in 0..self.c_in {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * out_len..(row + 1) * out_len];
                    for oh in 0..self.h_out {
                        let ih = (oh * self.stride.0 + ki) as isize - self.pad.0 as isize;
                        let dst_row = &mut dst[oh * self.w_out..(oh + 1) * self.w_out];
                        if ih < 0 || ih as usize >= self.h {
                            dst_row.fill(T::zero());
                            continue;
                        }
                        let src = &plane[ih as usize * self.w..(ih as usize + 1) * self.w];
                        if self.stride.1 == 1 {
                            let (lo, hi) = self.valid_cols(kj);
                            dst_row[..lo].fill(T::zero());
                            dst_row[hi..].fill(T::zero());
                            if lo < hi {
                                let off = lo + kj - self.pad.1;
                                dst_row[lo..hi].copy_from_slice(&src[off..off + hi - lo]);
                            }
                            continue;
                        }
                        for (ow, d) in dst_row.iter_mut().enumerate() {
                            let iw = (ow * self.stride.1 + kj) as isize - self.pad.1 as isize;
                            *d = if iw < 0 || iw as usize >= self.w {
                                T::zero()
                            } else {
                                src[iw as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im_add<T: Scalar>(&self, cols: &[T], dx: &mut [T]) {
        let out_len = self.out_len();
        for c in 0..self.c_in {
            let plane = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * out_len..(row + 1) * out_len];
                    for oh in 0..self.h_out {
                        let ih = (oh * self.stride.0 + ki) as isize - self.pad.0 as isize;
                        if ih < 0 || ih as usize >= self.h {
                            continue;
                        }
                        let dst = &mut plane[ih as usize * self.w..(ih as usize + 1) * self.w];
                        if self.stride.1 == 1 {
                            let (lo, hi) = self.valid_cols(kj);
                            if lo < hi {
                                let off = lo + kj - self.pad.1;
                                let s_row = &src[oh * self.w_out + lo..oh * self.w_out + hi];
                                for (d, v) in dst[off..off + hi - lo].iter_mut().zip(s_row) {
                                    *d += *v;
                                }
                            }
                            continue;
                        }
                        for ow in 0..self.w_out {
                            let iw = (ow * self.stride.1 + kj) as isize - self.pad.1 as isize;
                            if iw >= 0 && (iw as usize) < self.w {
                                dst[iw as usize] += src[oh * self.w_out + ow];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `input [N, Cin, H, W]`, `weight [Cout, Cin, KH, KW]`, `bias [Cout]`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: (usize, usize),
    pad: (usize, usize),
) -> Result<Tensor<T>, NnError> {
    let (n, c_out, g) = Geometry::new(input, weight, stride, pad)?;
    if let Some(b) = bias {
        if b.shape() != [c_out] {
            return Err(NnError::ShapeMismatch(format!(
                "conv2d: bias shape {:?}, expected [{c_out}]",
                b.shape()
            )));
        }
    }
    let in_len = g.c_in * g.h * g.w;
    let out_len = g.out_len();
    let patch = g.patch_len();
    let mut out = Tensor::zeros(&[n, c_out, g.h_out, g.w_out]);
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); patch * out_len]
    };

    for i in 0..n {
        let x = &input.data()[i * in_len..(i + 1) * in_len];
        let y = &mut out.data_mut()[i * c_out * out_len..(i + 1) * c_out * out_len];
        let cols_ref: &[T] = if g.is_pointwise() {
            x
        } else {
            g.im2col(x, &mut cols);
            &cols
        };
        T::gemm(
            c_out,
            patch,
            out_len,
            T::one(),
            weight.data(),
            (patch, 1),
            cols_ref,
            (out_len, 1),
            T::zero(),
            y,
            (out_len, 1),
        );
        if let Some(b) = bias {
            for (co, row) in y.chunks_exact_mut(out_len).enumerate() {
                let bv = b.data()[co];
                row.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: (usize, usize),
    pad: (usize, usize),
) -> Result<ConvGrads<T>, NnError> {
    let (n, c_out, g) = Geometry::new(input, weight, stride, pad)?;
    if grad_out.shape() != [n, c_out, g.h_out, g.w_out] {
        return Err(NnError::ShapeMismatch(format!(
            "conv2d backward: upstream {:?}, expected {:?}",
            grad_out.shape(),
            [n, c_out, g.h_out, g.w_out]
        )));
    }
    let in_len = g.c_in * g.h * g.w;
    let out_len = g.out_len();
    let patch = g.patch_len();
    let mut d_input = Tensor::zeros(input.shape());
    let mut d_weight = Tensor::zeros(weight.shape());
    let mut bias_acc = vec![0.0f64; c_out];
    let pointwise = g.is_pointwise();
    let mut cols = if pointwise {
        Vec::new()
    } else {
        vec![T::zero(); patch * out_len]
    };
    let mut d_cols = vec![T::zero(); patch * out_len];

    for i in 0..n {
        let x = &input.data()[i * in_len..(i + 1) * in_len];
        let dy = &grad_out.data()[i * c_out * out_len..(i + 1) * c_out * out_len];
        for (co, row) in dy.chunks_exact(out_len).enumerate() {
            bias_acc[co] += row.iter().map(|&v| Scalar::to_f64(v)).sum::<f64>();
        }
        let cols_ref: &[T] = if pointwise {
            x
        } else {
            g.im2col(x, &mut cols);
            &cols
        };
        // dW += dY * cols^T
        T::gemm(
            c_out,
            out_len,
            patch,
            T::one(),
            dy,
            (out_len, 1),
            cols_ref,
            (1, out_len),
            T::one(),
            d_weight.data_mut(),
            (patch, 1),
        );
        // dcols = W^T * dY
        let dx = &mut d_input.data_mut()[i * in_len..(i + 1) * in_len];
        if pointwise {
            T::gemm(
                patch,
                c_out,
                out_len,
                T::one(),
                weight.data(),
                (1, patch),
                dy,
                (out_len, 1),
                T::zero(),
                dx,
                (out_len, 1),
            );
        } else {
            T::gemm(
                patch,
                c_out,
                out_len,
                T::one(),
                weight.data(),
                (1, patch),
                dy,
                (out_len, 1),
                T::zero(),
                &mut d_cols,
                (out_len, 1),
            );
            g.col2im_add(&d_cols, dx);
        }
    }

    Ok(ConvGrads {
        input: d_input,
        weight: d_weight,
        bias: Tensor::new(vec![c_out], bias_acc.into_iter().map(T::of).collect())?,
    })
}
