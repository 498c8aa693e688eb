//! Line-shaped kernel regularization over `[f, f, C, F]` convolution kernels.
//!
//! For every (input channel, filter) slice `c` of every kernel:
//! `L_center = -sum c.center`, `L_div = -sum H(softmax(c without center))`,
//! `L_2 = sum e^2` over all elements.

use crate::model::LossConfig;
use crate::nn::{softmax_entropy_with_grad, Tensor};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Penalties {
    pub center: f64,
    pub div: f64,
    pub l2: f64,
}

impl Penalties {
    pub fn weighted(&self, cfg: &LossConfig) -> f64 {
        cfg.gamma_center * self.center + cfg.gamma_div * self.div + cfg.gamma_l2 * self.l2
    }
}

/// Flat indices of each `f x f` slice, center first.
fn slices(shape: &[usize]) -> impl Iterator<Item = (usize, Vec<usize>)> + '_ {
    let (f, c, nf) = (shape[0], shape[2], shape[3]);
    let mid = f / 2;
    let at = move |i: usize, j: usize, ch: usize, filt: usize| ((i * f + j) * c + ch) * nf + filt;
    (0..c).flat_map(move |ch| {
        (0..nf).map(move |filt| {
            let others = (0..f)
                .flat_map(|i| (0..f).map(move |j| (i, j)))
                .filter(|&(i, j)| i != mid || j != mid)
                .map(|(i, j)| at(i, j, ch, filt))
                .collect();
            (at(mid, mid, ch, filt), others)
        })
    })
}

pub fn line_penalties<T: Scalar>(kernels: &[&Tensor<T>]) -> Penalties {
    let mut p = Penalties::default();
    for k in kernels {
        let data = k.data();
        p.l2 += data.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>();
        for (center, others) in slices(k.shape()) {
            p.center -= data[center].as_f64();
            let z: Vec<T> = others.iter().map(|&i| data[i]).collect();
            if !z.is_empty() {
                p.div -= softmax_entropy_with_grad(&z).0.as_f64();
            }
        }
    }
    p
}

/// Adds the gradient of `gamma_center L_center + gamma_div L_div + gamma_l2 L_2`
/// with respect to `kernel` into `grad`.
pub fn line_penalties_backward<T: Scalar>(
    kernel: &Tensor<T>,
    cfg: &LossConfig,
    grad: &mut Tensor<T>,
) {
    let g_center = T::from_f64_lossy(cfg.gamma_center);
    let g_div = T::from_f64_lossy(cfg.gamma_div);
    let two_l2 = T::from_f64_lossy(2.0 * cfg.gamma_l2);
    let data = kernel.data();
    let out = grad.data_mut();
    for (o, &v) in out.iter_mut().zip(data) {
        *o += two_l2 * v;
    }
    for (center, others) in slices(kernel.shape()) {
        out[center] -= g_center;
        if others.is_empty() {
            continue;
        }
        let z: Vec<T> = others.iter().map(|&i| data[i]).collect();
        let (_, dh) = softmax_entropy_with_grad(&z);
        for (&i, &d) in others.iter().zip(&dh) {
            out[i] -= g_div * d;
        }
    }
}
