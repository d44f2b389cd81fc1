//! Operator norms of convolution layers.
//!
//! A stride-1 convolution on `n×n` inputs with circular boundary is block
//! circulant, so it is diagonalized by the 2-D DFT: its singular values are
//! the union over frequencies of the singular values of the `c_out×c_in`
//! transfer matrices. Strided layers are handled by power iteration on the
//! actual zero-padded operator.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tensor::{conv2d_forward, conv2d_transpose_input, fft2d, Rng, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SpectralMethod {
    Fft,
    PowerIteration { iterations: usize, tolerance: f64 },
}

/// Singular values, largest first, of the stride-1 circular convolution
/// with `kernel` on `n×n` inputs. `stride` other than 1 is accepted and
/// describes the same kernel's stride-1 operator.
pub fn conv_singular_values<T: Scalar>(kernel: &Tensor<T>, n: usize, stride: usize) -> Result<Vec<f64>> {
    let [c_out, c_in, k, k2] = *kernel.shape() else {
        return Err(Error::invalid("kernel must be [c_out, c_in, k, k]"));
    };
    if k != k2 || n == 0 || stride == 0 {
        return Err(Error::invalid("square kernel, positive size and stride required"));
    }
    let kd = kernel.data();
    let mut spectra = Vec::with_capacity(c_out * c_in);
    for o in 0..c_out {
        for i in 0..c_in {
            let mut buf = vec![Complex64::default(); n * n];
            for a in 0..k {
                for b in 0..k {
                    buf[(a % n) * n + b % n] += kd[((o * c_in + i) * k + a) * k + b].f64();
                }
            }
            spectra.push(fft2d(&buf, n)?);
        }
    }
    let mut values = Vec::with_capacity(n * n * c_out.min(c_in));
    for f in 0..n * n {
        let m = DMatrix::from_fn(c_out, c_in, |o, i| spectra[o * c_in + i][f]);
        values.extend(m.singular_values().iter().copied());
    }
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(values)
}

/// Largest singular value of the zero-padded strided convolution (no bias)
/// acting on `[c_in, h, w]` inputs, by power iteration on `AᵀA`.
pub fn power_iteration_norm<T: Scalar>(
    kernel: &Tensor<T>,
    input: [usize; 3],
    stride: usize,
    pad: usize,
    iterations: usize,
    tolerance: f64,
    rng: &mut Rng,
) -> Result<f64> {
    let w = kernel.cast::<f64>();
    let shape = [1, input[0], input[1], input[2]];
    let mut x = Tensor::<f64>::from_fn(&shape, |_| rng.normal());
    let norm = |t: &Tensor<f64>| t.sq_norm().sqrt();
    let nx = norm(&x);
    x.data_mut().iter_mut().for_each(|v| *v /= nx);
    let mut sigma = 0.0;
    for _ in 0..iterations.max(1) {
        let y = conv2d_forward(&x, &w, None, stride, pad)?;
        let z = conv2d_transpose_input(&y, &w, &shape, stride, pad)?;
        let nz = norm(&z);
        if nz == 0.0 {
            return Ok(0.0);
        }
        let next = nz.sqrt();
        x = z;
        x.data_mut().iter_mut().for_each(|v| *v /= nz);
        let done = (next - sigma).abs() <= tolerance * next;
        sigma = next;
        if done {
            break;
        }
    }
    Ok(sigma)
}

/// Spectral norm of one conv layer on its input size.
#[allow(clippy::too_many_arguments)]
pub fn conv_spectral_norm<T: Scalar>(
    kernel: &Tensor<T>,
    input: [usize; 3],
    stride: usize,
    pad: usize,
    method: SpectralMethod,
    rng: &mut Rng,
) -> Result<f64> {
    match method {
        SpectralMethod::PowerIteration {
            iterations,
            tolerance,
        } if stride > 1 => {
            power_iteration_norm(kernel, input, stride, pad, iterations, tolerance, rng)
        }
        _ => Ok(conv_singular_values(kernel, input[1].max(input[2]), 1)?[0]),
    }
}
