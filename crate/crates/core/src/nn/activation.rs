use super::{Scalar, Tensor};

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| if x > T::zero() { x } else { T::zero() })
}

#[inline]
pub(crate) fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(sigmoid_scalar)
}

/// Upstream gradient masked by the sign of the forward input.
pub(crate) fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(input.shape().to_vec(), data).expect("same shape")
}

/// Uses the forward output `s`: ds/dx = s (1 - s).
pub(crate) fn sigmoid_backward<T: Scalar>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&s, &g)| g * s * (T::one() - s))
        .collect();
    Tensor::new(output.shape().to_vec(), data).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_values() {
        let x = Tensor::<f32>::new(vec![2], vec![-2.0, 3.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 3.0]);
        let g = Tensor::<f32>::new(vec![2], vec![5.0, 7.0]).unwrap();
        assert_eq!(relu_backward(&x, &g).data(), &[0.0, 7.0]);
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid_scalar(0.0f64), 0.5);
        assert!((sigmoid_scalar(3f64.ln()) - 0.75).abs() < 1e-15);
        assert!(sigmoid_scalar(-800.0f64) >= 0.0);
        assert_eq!(sigmoid_scalar(800.0f64), 1.0);
        assert!((sigmoid_scalar(-3f64.ln()) - 0.25).abs() < 1e-15);
    }
}
