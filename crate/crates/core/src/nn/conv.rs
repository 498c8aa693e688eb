//! Same-padded convolution (cross-correlation, stride 1) in 2D and 1D.
//!
//! Layouts: 2D input `[H, W, C]`, kernel `[f, f, C, F]`, output `[H, W, F]`;
//! 1D input `[L, C]`, kernel `[f, C, F]`, output `[L, F]`. Both lower to an
//! im2col matrix multiplied by the kernel viewed as `(f*f*C) x F`.

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::scalar::{gemm, MatRef, Scalar};

#[derive(Clone, Copy)]
struct Geometry {
    h: usize,
    w: usize,
    c: usize,
    fh: usize,
    fw: usize,
    filters: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.fh * self.fw * self.c
    }
}

fn im2col<T: Scalar>(input: &[T], g: Geometry) -> Vec<T> {
    let patch = g.patch();
    let (ph, pw) = (g.fh / 2, g.fw / 2);
    let mut col = vec![T::zero(); g.h * g.w * patch];
    for y in 0..g.h {
        for x in 0..g.w {
            let row = &mut col[(y * g.w + x) * patch..][..patch];
            for i in 0..g.fh {
                let yy = y + i;
                if yy < ph || yy - ph >= g.h {
                    continue;
                }
                let yy = yy - ph;
                for j in 0..g.fw {
                    let xx = x + j;
                    if xx < pw || xx - pw >= g.w {
                        continue;
                    }
                    let xx = xx - pw;
                    let src = &input[(yy * g.w + xx) * g.c..][..g.c];
                    row[(i * g.fw + j) * g.c..][..g.c].copy_from_slice(src);
                }
            }
        }
    }
    col
}

fn col2im_add<T: Scalar>(col: &[T], g: Geometry, dinput: &mut [T]) {
    let patch = g.patch();
    let (ph, pw) = (g.fh / 2, g.fw / 2);
    for y in 0..g.h {
        for x in 0..g.w {
            let row = &col[(y * g.w + x) * patch..][..patch];
            for i in 0..g.fh {
                let yy = y + i;
                if yy < ph || yy - ph >= g.h {
                    continue;
                }
                let yy = yy - ph;
                for j in 0..g.fw {
                    let xx = x + j;
                    if xx < pw || xx - pw >= g.w {
                        continue;
                    }
                    let xx = xx - pw;
                    let dst = &mut dinput[(yy * g.w + xx) * g.c..][..g.c];
                    for (d, &s) in dst.iter_mut().zip(&row[(i * g.fw + j) * g.c..][..g.c]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

fn forward<T: Scalar>(input: &[T], kernel: &[T], bias: &[T], g: Geometry) -> Vec<T> {
    let col = im2col(input, g);
    let mut out = vec![T::zero(); g.h * g.w * g.filters];
    for row in out.chunks_exact_mut(g.filters) {
        row.copy_from_slice(bias);
    }
    gemm(
        MatRef::new(&col, g.h * g.w, g.patch()),
        MatRef::new(kernel, g.patch(), g.filters),
        &mut out,
        true,
    );
    out
}

fn backward<T: Scalar>(
    input: &[T],
    kernel: &[T],
    dout: &[T],
    g: Geometry,
    dinput: Option<&mut [T]>,
    dkernel: &mut [T],
    dbias: &mut [T],
) {
    let col = im2col(input, g);
    let rows = g.h * g.w;
    gemm(
        MatRef::new(&col, rows, g.patch()).t(),
        MatRef::new(dout, rows, g.filters),
        dkernel,
        true,
    );
    for row in dout.chunks_exact(g.filters) {
        for (b, &d) in dbias.iter_mut().zip(row) {
            *b += d;
        }
    }
    if let Some(dinput) = dinput {
        let mut dcol = vec![T::zero(); rows * g.patch()];
        gemm(
            MatRef::new(dout, rows, g.filters),
            MatRef::new(kernel, g.patch(), g.filters).t(),
            &mut dcol,
            false,
        );
        col2im_add(&dcol, g, dinput);
    }
}

fn geometry_2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Geometry> {
    let (is, ks) = (input.shape(), kernel.shape());
    if is.len() != 3 || ks.len() != 4 {
        return Err(Error::shape(format!(
            "conv2d expects [H,W,C] and [f,f,C,F], got {is:?} and {ks:?}"
        )));
    }
    if ks[0] != ks[1] || ks[0] % 2 == 0 {
        return Err(Error::shape(format!(
            "conv2d kernel must be square with odd size, got {ks:?}"
        )));
    }
    if ks[2] != is[2] {
        return Err(Error::shape(format!(
            "conv2d kernel expects {} channels, input has {}",
            ks[2], is[2]
        )));
    }
    bias.expect_shape(&[ks[3]], "conv2d bias")?;
    Ok(Geometry {
        h: is[0],
        w: is[1],
        c: is[2],
        fh: ks[0],
        fw: ks[1],
        filters: ks[3],
    })
}

fn geometry_1d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Geometry> {
    let (is, ks) = (input.shape(), kernel.shape());
    if is.len() != 2 || ks.len() != 3 {
        return Err(Error::shape(format!(
            "conv1d expects [L,C] and [f,C,F], got {is:?} and {ks:?}"
        )));
    }
    if ks[0] % 2 == 0 {
        return Err(Error::shape(format!(
            "conv1d kernel size must be odd, got {}",
            ks[0]
        )));
    }
    if ks[1] != is[1] {
        return Err(Error::shape(format!(
            "conv1d kernel expects {} channels, input has {}",
            ks[1], is[1]
        )));
    }
    bias.expect_shape(&[ks[2]], "conv1d bias")?;
    Ok(Geometry {
        h: is[0],
        w: 1,
        c: is[1],
        fh: ks[0],
        fw: 1,
        filters: ks[2],
    })
}

/// Zero-padded 2D cross-correlation preserving spatial extents.
pub fn conv2d_same<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let g = geometry_2d(input, kernel, bias)?;
    Tensor::from_vec(
        &[g.h, g.w, g.filters],
        forward(input.data(), kernel.data(), bias.data(), g),
    )
}

/// Accumulates kernel, bias and (optionally) input gradients of [`conv2d_same`].
pub fn conv2d_same_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    dout: &Tensor<T>,
    dinput: Option<&mut Tensor<T>>,
    dkernel: &mut Tensor<T>,
    dbias: &mut Tensor<T>,
) -> Result<()> {
    let g = geometry_2d(input, kernel, dbias)?;
    dout.expect_shape(&[g.h, g.w, g.filters], "conv2d output gradient")?;
    dkernel.expect_shape(kernel.shape(), "conv2d kernel gradient")?;
    let dinput = match dinput {
        Some(d) => {
            d.expect_shape(input.shape(), "conv2d input gradient")?;
            Some(d.data_mut())
        }
        None => None,
    };
    backward(
        input.data(),
        kernel.data(),
        dout.data(),
        g,
        dinput,
        dkernel.data_mut(),
        dbias.data_mut(),
    );
    Ok(())
}

/// Zero-padded 1D cross-correlation along the sequence axis.
pub fn conv1d_same<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let g = geometry_1d(input, kernel, bias)?;
    Tensor::from_vec(
        &[g.h, g.filters],
        forward(input.data(), kernel.data(), bias.data(), g),
    )
}

pub fn conv1d_same_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    dout: &Tensor<T>,
    dinput: Option<&mut Tensor<T>>,
    dkernel: &mut Tensor<T>,
    dbias: &mut Tensor<T>,
) -> Result<()> {
    let g = geometry_1d(input, kernel, dbias)?;
    dout.expect_shape(&[g.h, g.filters], "conv1d output gradient")?;
    dkernel.expect_shape(kernel.shape(), "conv1d kernel gradient")?;
    let dinput = match dinput {
        Some(d) => {
            d.expect_shape(input.shape(), "conv1d input gradient")?;
            Some(d.data_mut())
        }
        None => None,
    };
    backward(
        input.data(),
        kernel.data(),
        dout.data(),
        g,
        dinput,
        dkernel.data_mut(),
        dbias.data_mut(),
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_kernel(f: usize, c: usize) -> Tensor<f64> {
        let mut k = Tensor::zeros(&[f, f, c, c]);
        let mid = f / 2;
        for ch in 0..c {
            k[((mid * f + mid) * c + ch) * c + ch] = 1.0;
        }
        k
    }

    #[test]
    fn identity_kernel_is_identity() {
        let input =
            Tensor::from_vec(&[4, 5, 2], (0..40).map(|v| v as f64 * 0.1).collect()).unwrap();
        let out = conv2d_same(&input, &identity_kernel(3, 2), &Tensor::zeros(&[2])).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn zero_kernel_gives_bias() {
        let input = Tensor::filled(&[3, 3, 2], 7.0);
        let out = conv2d_same(
            &input,
            &Tensor::zeros(&[3, 3, 2, 4]),
            &Tensor::filled(&[4], 1.5),
        )
        .unwrap();
        assert!(out.data().iter().all(|&v| v == 1.5));
        assert_eq!(out.shape(), &[3, 3, 4]);
    }

    #[test]
    fn ones_kernel_counts_neighbours() {
        let out = conv2d_same(
            &Tensor::filled(&[3, 3, 1], 1.0),
            &Tensor::filled(&[3, 3, 1, 1], 1.0),
            &Tensor::zeros(&[1]),
        )
        .unwrap();
        assert_eq!(out.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn extents_preserved_for_odd_kernels() {
        for f in [1, 3, 5] {
            let out = conv2d_same(
                &Tensor::<f64>::zeros(&[7, 6, 3]),
                &Tensor::zeros(&[f, f, 3, 2]),
                &Tensor::zeros(&[2]),
            )
            .unwrap();
            assert_eq!(out.shape(), &[7, 6, 2]);
            let out = conv1d_same(
                &Tensor::<f64>::zeros(&[9, 3]),
                &Tensor::zeros(&[f, 3, 4]),
                &Tensor::zeros(&[4]),
            )
            .unwrap();
            assert_eq!(out.shape(), &[9, 4]);
        }
    }

    #[test]
    fn shape_errors() {
        let input = Tensor::<f64>::zeros(&[4, 4, 2]);
        assert!(conv2d_same(&input, &Tensor::zeros(&[3, 3, 3, 1]), &Tensor::zeros(&[1])).is_err());
        assert!(conv2d_same(&input, &Tensor::zeros(&[2, 2, 2, 1]), &Tensor::zeros(&[1])).is_err());
        assert!(conv2d_same(&input, &Tensor::zeros(&[3, 3, 2, 1]), &Tensor::zeros(&[2])).is_err());
        assert!(conv1d_same(
            &Tensor::<f64>::zeros(&[4, 2]),
            &Tensor::zeros(&[3, 3, 1]),
            &Tensor::zeros(&[1])
        )
        .is_err());
    }

    #[test]
    fn conv1d_identity_and_neighbours() {
        let input = Tensor::from_vec(&[4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let ident = Tensor::from_vec(&[3, 1, 1], vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(
            conv1d_same(&input, &ident, &Tensor::zeros(&[1]))
                .unwrap()
                .data(),
            input.data()
        );
        let sum = Tensor::filled(&[3, 1, 1], 1.0);
        assert_eq!(
            conv1d_same(&input, &sum, &Tensor::zeros(&[1]))
                .unwrap()
                .data(),
            &[3.0, 6.0, 9.0, 7.0]
        );
    }
}
