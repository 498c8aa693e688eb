//! Element-wise activations, dropout, softmax and the Shannon index.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::scalar::Scalar;

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

/// Gradient through ReLU given its output.
pub fn relu_backward<T: Scalar>(output: &Tensor<T>, dout: &Tensor<T>) -> Tensor<T> {
    let data = output
        .data()
        .iter()
        .zip(dout.data())
        .map(|(&o, &g)| if o > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(output.shape(), data).expect("same shape")
}

/// Inverted dropout. The returned mask holds each element's scale (0 or `1/(1-rate)`)
/// and is `None` when the layer is the identity.
pub fn dropout<T: Scalar>(
    input: &Tensor<T>,
    rate: f64,
    training: bool,
    seed: u64,
) -> Result<(Tensor<T>, Option<Vec<T>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok((input.clone(), None));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..input.len())
        .map(|_| {
            if rng.gen::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect();
    let data = input
        .data()
        .iter()
        .zip(&mask)
        .map(|(&x, &m)| x * m)
        .collect();
    Ok((Tensor::from_vec(input.shape(), data)?, Some(mask)))
}

pub fn dropout_backward<T: Scalar>(mask: Option<&[T]>, dout: &Tensor<T>) -> Tensor<T> {
    match mask {
        None => dout.clone(),
        Some(m) => {
            let data = dout.data().iter().zip(m).map(|(&g, &s)| g * s).collect();
            Tensor::from_vec(dout.shape(), data).expect("same shape")
        }
    }
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `H(p) = -sum p ln p`, with `0 ln 0 = 0`.
pub fn shannon_index<T: Scalar>(p: &[T]) -> T {
    -p.iter()
        .map(|&v| if v > T::zero() { v * v.ln() } else { T::zero() })
        .sum::<T>()
}

/// Entropy of `softmax(z)` and its gradient with respect to `z`:
/// `dH/dz_j = -p_j (ln p_j + H)`.
pub fn softmax_entropy_with_grad<T: Scalar>(z: &[T]) -> (T, Vec<T>) {
    let p = softmax(z);
    let h = shannon_index(&p);
    let grad = p
        .iter()
        .map(|&pj| {
            if pj > T::zero() {
                -pj * (pj.ln() + h)
            } else {
                T::zero()
            }
        })
        .collect();
    (h, grad)
}
