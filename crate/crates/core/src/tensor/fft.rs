//! Square 2-D discrete Fourier transform on row-major complex buffers.
//!
//! The forward transform is unnormalized, so a delta at the origin maps to an
//! all-ones spectrum; the inverse divides by `n²`. Parseval therefore reads
//! `Σ|x|² = Σ|X|² / n²`. Any `n` is accepted (rustfft falls back to Bluestein
//! for awkward sizes).

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

fn transform(data: &[Complex64], n: usize, inverse: bool) -> Result<Vec<Complex64>> {
    if n == 0 || data.len() != n * n {
        return Err(Error::invalid(format!(
            "fft2d needs an n x n buffer, got {} values for n = {n}",
            data.len()
        )));
    }
    let mut planner = FftPlanner::<f64>::new();
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    let mut buf = data.to_vec();
    // rows in place, then columns through a transpose
    fft.process(&mut buf);
    let mut t = vec![Complex64::default(); n * n];
    for r in 0..n {
        for c in 0..n {
            t[c * n + r] = buf[r * n + c];
        }
    }
    fft.process(&mut t);
    for r in 0..n {
        for c in 0..n {
            buf[c * n + r] = t[r * n + c];
        }
    }
    if inverse {
        let scale = 1.0 / (n * n) as f64;
        buf.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(buf)
}

pub fn fft2d(data: &[Complex64], n: usize) -> Result<Vec<Complex64>> {
    transform(data, n, false)
}

pub fn ifft2d(data: &[Complex64], n: usize) -> Result<Vec<Complex64>> {
    transform(data, n, true)
}
