//! Plain discrete Fourier transform.
//!
//! Series here are a few hundred samples, so the O(T^2) textbook sum is more
//! than fast enough and keeps the dependency surface flat. Used by the
//! evaluation metrics (daily periodic component) and the synthetic-data
//! spectral checks.

use alloc::borrow::ToOwned;
use alloc::vec::Vec;
use num_complex::Complex64;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};

use super::tensor::Tensor;

/// `X[k] = sum_t x[t] exp(-2 pi i k t / T)`.
pub fn dft(x: &Tensor) -> Result<Vec<Complex64>> {
    if x.rank() != 1 || x.is_empty() {
        return Err(Error::shape(
            "dft expects a non-empty rank-1 tensor".to_owned(),
        ));
    }
    Ok(dft_slice(x.data()))
}

pub fn dft_slice(x: &[f64]) -> Vec<Complex64> {
    let t_len = x.len();
    let step = -2.0 * core::f64::consts::PI / t_len as f64;
    (0..t_len)
        .map(|k| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (t, &v) in x.iter().enumerate() {
                let phase = step * (k as f64) * (t as f64);
                acc += Complex64::new(phase.cos(), phase.sin()) * v;
            }
            acc
        })
        .collect()
}

/// Inverse transform: `x[t] = (1/T) sum_k X[k] exp(+2 pi i k t / T)`.
pub fn idft(spectrum: &[Complex64]) -> Vec<Complex64> {
    let t_len = spectrum.len();
    let step = 2.0 * core::f64::consts::PI / t_len as f64;
    (0..t_len)
        .map(|t| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (k, &v) in spectrum.iter().enumerate() {
                let phase = step * (k as f64) * (t as f64);
                acc += Complex64::new(phase.cos(), phase.sin()) * v;
            }
            acc / t_len as f64
        })
        .collect()
}

/// Real part of the inverse transform; valid for conjugate-symmetric
/// spectra (those of real series).
pub fn idft_real(spectrum: &[Complex64]) -> Vec<f64> {
    idft(spectrum).into_iter().map(|c| c.re).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::rng::Rng;
    use alloc::vec;

    #[test]
    fn constant_series_is_dc_only() {
        let c = 2.5;
        let x = Tensor::full(vec![8], c);
        let spec = dft(&x).unwrap();
        assert!((spec[0].re - 8.0 * c).abs() < 1e-12);
        assert!(spec[0].im.abs() < 1e-12);
        for bin in &spec[1..] {
            assert!(bin.norm() < 1e-12);
        }
    }

    #[test]
    fn pure_cosine_spectrum() {
        let t_len = 8;
        let x: Vec<f64> = (0..t_len)
            .map(|t| (2.0 * core::f64::consts::PI * t as f64 / t_len as f64).cos())
            .collect();
        let spec = dft_slice(&x);
        assert!((spec[1].norm() - 4.0).abs() < 1e-12);
        assert!((spec[7].norm() - 4.0).abs() < 1e-12);
        for (k, bin) in spec.iter().enumerate() {
            if k != 1 && k != 7 {
                assert!(bin.norm() < 1e-12, "bin {k} = {bin}");
            }
        }
    }

    #[test]
    fn roundtrip_length_336() {
        let mut rng = Rng::new(3);
        let x = rng.normal_vec(336);
        let back = idft_real(&dft_slice(&x));
        let err = x
            .iter()
            .zip(&back)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(err < 1e-10, "roundtrip error {err}");
    }
}
