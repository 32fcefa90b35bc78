//! Iterative radix-2 FFT on split re/im buffers.
//!
//! Forward applies no normalization; the inverse divides by n. Twiddle
//! factors are computed in f64 and cast, so f32 transforms keep close to
//! full single precision.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

/// In-place forward DFT of a power-of-two-length complex signal.
pub fn fft<S: Scalar>(re: &mut [S], im: &mut [S]) -> Result<()> {
    transform(re, im, false)
}

/// In-place inverse DFT; divides by n.
pub fn ifft<S: Scalar>(re: &mut [S], im: &mut [S]) -> Result<()> {
    transform(re, im, true)?;
    let inv_n = S::ONE / S::from_f64(re.len() as f64);
    for v in re.iter_mut() {
        *v *= inv_n;
    }
    for v in im.iter_mut() {
        *v *= inv_n;
    }
    Ok(())
}

fn transform<S: Scalar>(re: &mut [S], im: &mut [S], inverse: bool) -> Result<()> {
    let n = re.len();
    if im.len() != n {
        return Err(shape_err!("fft", "re/im length mismatch: {} vs {}", n, im.len()));
    }
    if !n.is_power_of_two() {
        return Err(shape_err!("fft", "length {} is not a power of two", n));
    }
    if n <= 1 {
        return Ok(());
    }

    // Bit-reversal permutation.
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }

    let sign = if inverse { 1.0 } else { -1.0 };
    let mut width = 2;
    while width <= n {
        let half = width / 2;
        let theta = sign * 2.0 * core::f64::consts::PI / width as f64;
        for start in (0..n).step_by(width) {
            for k in 0..half {
                let angle = theta * k as f64;
                let (wr, wi) = (S::from_f64(libm::cos(angle)), S::from_f64(libm::sin(angle)));
                let (i0, i1) = (start + k, start + k + half);
                let tr = wr * re[i1] - wi * im[i1];
                let ti = wr * im[i1] + wi * re[i1];
                re[i1] = re[i0] - tr;
                im[i1] = im[i0] - ti;
                re[i0] += tr;
                im[i0] += ti;
            }
        }
        width *= 2;
    }
    Ok(())
}

/// O(n²) direct DFT, the independent oracle for the fast transform.
pub fn dft_direct<S: Scalar>(re: &[S], im: &[S]) -> (Vec<S>, Vec<S>) {
    let n = re.len();
    let mut out_re = vec![S::ZERO; n];
    let mut out_im = vec![S::ZERO; n];
    for k in 0..n {
        let mut acc_re = 0.0f64;
        let mut acc_im = 0.0f64;
        for t in 0..n {
            let angle = -2.0 * core::f64::consts::PI * (k * t % n) as f64 / n as f64;
            let (c, s) = (libm::cos(angle), libm::sin(angle));
            let (xr, xi) = (re[t].to_f64(), im[t].to_f64());
            acc_re += xr * c - xi * s;
            acc_im += xr * s + xi * c;
        }
        out_re[k] = S::from_f64(acc_re);
        out_im[k] = S::from_f64(acc_im);
    }
    (out_re, out_im)
}
