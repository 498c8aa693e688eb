//! 2x2 / stride-2 pooling with floor extents (a trailing odd row or column is dropped).

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Avg,
}

/// Pooled output plus, for max pooling, the flat input index of each maximum.
#[derive(Debug, Clone)]
pub struct Pooled<T> {
    pub output: Tensor<T>,
    pub argmax: Option<Vec<usize>>,
}

/// Pools an `[H, W, C]` tensor to `[H/2, W/2, C]`.
pub fn pool2d<T: Scalar>(input: &Tensor<T>, mode: PoolMode) -> Result<Pooled<T>> {
    let s = input.shape();
    if s.len() != 3 || s[0] < 2 || s[1] < 2 {
        return Err(Error::shape(format!(
            "pool2d needs [H>=2, W>=2, C], got {s:?}"
        )));
    }
    let (h, w, c) = (s[0], s[1], s[2]);
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = vec![T::zero(); oh * ow * c];
    let mut arg = if mode == PoolMode::Max {
        vec![0usize; oh * ow * c]
    } else {
        Vec::new()
    };
    let quarter = T::from_f64_lossy(0.25);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let idx = [
                    ((2 * oy) * w + 2 * ox) * c + ch,
                    ((2 * oy) * w + 2 * ox + 1) * c + ch,
                    ((2 * oy + 1) * w + 2 * ox) * c + ch,
                    ((2 * oy + 1) * w + 2 * ox + 1) * c + ch,
                ];
                let o = (oy * ow + ox) * c + ch;
                match mode {
                    PoolMode::Max => {
                        let mut best = idx[0];
                        for &i in &idx[1..] {
                            if x[i] > x[best] {
                                best = i;
                            }
                        }
                        out[o] = x[best];
                        arg[o] = best;
                    }
                    PoolMode::Avg => {
                        out[o] = (x[idx[0]] + x[idx[1]] + x[idx[2]] + x[idx[3]]) * quarter;
                    }
                }
            }
        }
    }
    Ok(Pooled {
        output: Tensor::from_vec(&[oh, ow, c], out)?,
        argmax: (mode == PoolMode::Max).then_some(arg),
    })
}

/// Routes an output gradient back to the `[H, W, C]` input of [`pool2d`].
pub fn pool2d_backward<T: Scalar>(
    input_shape: &[usize],
    mode: PoolMode,
    argmax: Option<&[usize]>,
    dout: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (h, w, c) = (input_shape[0], input_shape[1], input_shape[2]);
    let (oh, ow) = (h / 2, w / 2);
    dout.expect_shape(&[oh, ow, c], "pool2d output gradient")?;
    let mut din = Tensor::zeros(input_shape);
    let g = dout.data();
    match mode {
        PoolMode::Max => {
            let arg = argmax.ok_or_else(|| Error::shape("max pooling backward needs argmax"))?;
            for (o, &i) in arg.iter().enumerate() {
                din[i] += g[o];
            }
        }
        PoolMode::Avg => {
            let quarter = T::from_f64_lossy(0.25);
            let d = din.data_mut();
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..c {
                        let v = g[(oy * ow + ox) * c + ch] * quarter;
                        for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                            d[((2 * oy + dy) * w + 2 * ox + dx) * c + ch] += v;
                        }
                    }
                }
            }
        }
    }
    Ok(din)
}

/// Max pooling of an `[L, C]` sequence to `[L/2, C]`.
pub fn pool1d_max<T: Scalar>(input: &Tensor<T>) -> Result<Pooled<T>> {
    let s = input.shape();
    if s.len() != 2 || s[0] < 2 {
        return Err(Error::shape(format!("pool1d needs [L>=2, C], got {s:?}")));
    }
    let (l, c) = (s[0], s[1]);
    let x = input.data();
    let ol = l / 2;
    let mut out = vec![T::zero(); ol * c];
    let mut arg = vec![0usize; ol * c];
    for o in 0..ol {
        for ch in 0..c {
            let (a, b) = ((2 * o) * c + ch, (2 * o + 1) * c + ch);
            let best = if x[b] > x[a] { b } else { a };
            out[o * c + ch] = x[best];
            arg[o * c + ch] = best;
        }
    }
    Ok(Pooled {
        output: Tensor::from_vec(&[ol, c], out)?,
        argmax: Some(arg),
    })
}

pub fn pool1d_max_backward<T: Scalar>(
    input_shape: &[usize],
    argmax: &[usize],
    dout: &Tensor<T>,
) -> Result<Tensor<T>> {
    dout.expect_shape(
        &[input_shape[0] / 2, input_shape[1]],
        "pool1d output gradient",
    )?;
    let mut din = Tensor::zeros(input_shape);
    for (o, &i) in argmax.iter().enumerate() {
        din[i] += dout[o];
    }
    Ok(din)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_block() {
        let t = Tensor::from_vec(&[2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(pool2d(&t, PoolMode::Max).unwrap().output.data(), &[4.0]);
        assert_eq!(pool2d(&t, PoolMode::Avg).unwrap().output.data(), &[2.5]);
    }

    #[test]
    fn floor_extents() {
        for (n, m) in [(100, 50), (25, 12), (2, 1), (3, 1)] {
            let p = pool2d(&Tensor::<f64>::zeros(&[n, n, 2]), PoolMode::Avg).unwrap();
            assert_eq!(p.output.shape(), &[m, m, 2]);
            let p = pool1d_max(&Tensor::<f64>::zeros(&[n, 3])).unwrap();
            assert_eq!(p.output.shape(), &[m, 3]);
        }
        assert_eq!(
            pool1d_max(&Tensor::<f64>::zeros(&[50, 1]))
                .unwrap()
                .output
                .shape(),
            &[25, 1]
        );
        assert!(pool2d(&Tensor::<f64>::zeros(&[1, 4, 1]), PoolMode::Max).is_err());
    }

    #[test]
    fn max_backward_routes_to_argmax() {
        let t = Tensor::from_vec(&[2, 2, 1], vec![1.0, 5.0, 3.0, 4.0]).unwrap();
        let p = pool2d(&t, PoolMode::Max).unwrap();
        let d = pool2d_backward(
            t.shape(),
            PoolMode::Max,
            p.argmax.as_deref(),
            &Tensor::filled(&[1, 1, 1], 2.0),
        )
        .unwrap();
        assert_eq!(d.data(), &[0.0, 2.0, 0.0, 0.0]);
        let d = pool2d_backward(
            t.shape(),
            PoolMode::Avg,
            None,
            &Tensor::filled(&[1, 1, 1], 2.0),
        )
        .unwrap();
        assert_eq!(d.data(), &[0.5; 4]);
    }
}
