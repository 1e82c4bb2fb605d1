//! Iterative radix-2 decimation-in-time FFT.
//!
//! The transform is the unnormalized forward DFT
//! `X[m] = sum_n x[n] * exp(-2*pi*i*m*n/N)`; no `1/N` factor is applied.

use num_complex::Complex;
use thiserror::Error;

use crate::Scalar;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FftError {
    #[error("fft length {0} is not a power of two >= 2")]
    NonPowerOfTwo(usize),
}

/// Forward FFT of a real signal. The length must be a power of two, at least 2.
pub fn fft<T: Scalar>(signal: &[T]) -> Result<Vec<Complex<T>>, FftError> {
    let mut buf: Vec<Complex<T>> = signal.iter().map(|&x| Complex::new(x, T::zero())).collect();
    fft_in_place(&mut buf)?;
    Ok(buf)
}

/// In-place forward FFT of a complex buffer.
pub fn fft_in_place<T: Scalar>(buf: &mut [Complex<T>]) -> Result<(), FftError> {
    let n = buf.len();
    if n < 2 || !n.is_power_of_two() {
        return Err(FftError::NonPowerOfTwo(n));
    }

    bit_reverse_permute(buf);

    // Twiddles for the full length; stage `len` uses every (n/len)-th entry.
    let step = -T::TAU() / T::of_usize(n);
    let twiddles: Vec<Complex<T>> = (0..n / 2)
        .map(|k| {
            let angle = step * T::of_usize(k);
            Complex::new(angle.cos(), angle.sin())
        })
        .collect();

    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let stride = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let w = twiddles[k * stride];
                let a = buf[start + k];
                let b = buf[start + k + half] * w;
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
    Ok(())
}

fn bit_reverse_permute<T>(buf: &mut [T]) {
    let n = buf.len();
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
}
