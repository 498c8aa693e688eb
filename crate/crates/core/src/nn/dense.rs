use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::scalar::{gemm, MatRef, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
}

fn dims<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(usize, usize, usize)> {
    let ws = weight.shape();
    if ws.len() != 2 {
        return Err(Error::shape(format!(
            "dense weight must be [out, in], got {ws:?}"
        )));
    }
    let (out, inp) = (ws[0], ws[1]);
    let rows = match input.shape() {
        [n] if *n == inp => 1,
        [r, n] if *n == inp => *r,
        s => {
            return Err(Error::shape(format!(
                "dense input {s:?} does not end in {inp}"
            )))
        }
    };
    bias.expect_shape(&[out], "dense bias")?;
    Ok((rows, inp, out))
}

/// `y = act(x W^T + b)` for a vector `[in]` or a row batch `[n, in]`; weight is `[out, in]`.
pub fn dense<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    activation: Activation,
) -> Result<Tensor<T>> {
    let (rows, inp, out) = dims(input, weight, bias)?;
    let mut y = vec![T::zero(); rows * out];
    for row in y.chunks_exact_mut(out) {
        row.copy_from_slice(bias.data());
    }
    gemm(
        MatRef::new(input.data(), rows, inp),
        MatRef::new(weight.data(), out, inp).t(),
        &mut y,
        true,
    );
    if activation == Activation::Relu {
        y.iter_mut().for_each(|v| *v = v.max(T::zero()));
    }
    let shape: Vec<usize> = if input.shape().len() == 1 {
        vec![out]
    } else {
        vec![rows, out]
    };
    Tensor::from_vec(&shape, y)
}

/// Backward of [`dense`] given the layer output (for the ReLU mask).
/// Accumulates weight and bias gradients and returns the input gradient.
pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    output: &Tensor<T>,
    activation: Activation,
    dout: &Tensor<T>,
    dweight: &mut Tensor<T>,
    dbias: &mut Tensor<T>,
) -> Result<Tensor<T>> {
    let (rows, inp, out) = dims(input, weight, dbias)?;
    if dout.len() != rows * out || output.len() != rows * out {
        return Err(Error::shape("dense output gradient size"));
    }
    let mut g = dout.data().to_vec();
    if activation == Activation::Relu {
        for (gv, &o) in g.iter_mut().zip(output.data()) {
            if o <= T::zero() {
                *gv = T::zero();
            }
        }
    }
    gemm(
        MatRef::new(&g, rows, out).t(),
        MatRef::new(input.data(), rows, inp),
        dweight.data_mut(),
        true,
    );
    for row in g.chunks_exact(out) {
        for (b, &v) in dbias.data_mut().iter_mut().zip(row) {
            *b += v;
        }
    }
    let mut dx = vec![T::zero(); rows * inp];
    gemm(
        MatRef::new(&g, rows, out),
        MatRef::new(weight.data(), out, inp),
        &mut dx,
        false,
    );
    Tensor::from_vec(input.shape(), dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let x = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let eye = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(
            dense(&x, &eye, &Tensor::zeros(&[2]), Activation::Linear).unwrap(),
            x
        );
        let w = Tensor::from_vec(&[2, 2], vec![1.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(
            dense(&x, &w, &Tensor::zeros(&[2]), Activation::Linear)
                .unwrap()
                .data(),
            &[3.0, 2.0]
        );
        let neg = Tensor::from_vec(&[1, 2], vec![-1.0, -1.0]).unwrap();
        assert_eq!(
            dense(&x, &neg, &Tensor::zeros(&[1]), Activation::Relu)
                .unwrap()
                .data(),
            &[0.0]
        );
        assert!(dense(
            &x,
            &Tensor::zeros(&[2, 3]),
            &Tensor::zeros(&[2]),
            Activation::Linear
        )
        .is_err());
    }

    #[test]
    fn batch_rows_match_vectors() {
        let w = Tensor::from_vec(&[3, 2], vec![0.5, -1.0, 2.0, 0.25, 1.0, 1.0]).unwrap();
        let b = Tensor::from_vec(&[3], vec![0.1, 0.2, 0.3]).unwrap();
        let batch = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, -3.0, 0.5]).unwrap();
        let yb = dense(&batch, &w, &b, Activation::Relu).unwrap();
        for r in 0..2 {
            let x = Tensor::from_vec(&[2], batch.data()[r * 2..r * 2 + 2].to_vec()).unwrap();
            let y = dense(&x, &w, &b, Activation::Relu).unwrap();
            assert_eq!(&yb.data()[r * 3..r * 3 + 3], y.data());
        }
    }
}
