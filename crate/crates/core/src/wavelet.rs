//! Three-level orthonormal Haar analysis of weekly traffic series.
//!
//! Each level maps the previous approximation `x` to
//! `ca[i] = (x[2i] + x[2i+1]) / sqrt(2)` and
//! `cd[i] = (x[2i] - x[2i+1]) / sqrt(2)`, halving the length. The orthonormal
//! (1/sqrt(2)) convention preserves energy exactly, which keeps injected
//! noise variance comparable across bands and gives the transform a Parseval
//! identity to test against.
//!
//! Bands are concatenated coarse to fine as `(CA3, CD3, CD2, CD1)`; the
//! denoiser consumes scales in that order.

use alloc::format;
use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::num::tensor::Tensor;

/// Number of decomposition levels; band layout below assumes this value.
pub const LEVELS: usize = 3;
/// Number of coefficient bands in a stack: `CA3, CD3, CD2, CD1`.
pub const BANDS: usize = LEVELS + 1;

/// Multi-scale coefficient stack of one series.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletStack {
    pub ca3: Tensor,
    pub cd3: Tensor,
    pub cd2: Tensor,
    pub cd1: Tensor,
}

impl WaveletStack {
    /// Original series length.
    pub fn total_len(&self) -> usize {
        self.ca3.len() + self.cd3.len() + self.cd2.len() + self.cd1.len()
    }

    /// Band lengths in concatenation order `(T/8, T/8, T/4, T/2)`.
    pub fn band_lens(&self) -> [usize; BANDS] {
        [
            self.ca3.len(),
            self.cd3.len(),
            self.cd2.len(),
            self.cd1.len(),
        ]
    }

    /// Offsets of each band inside the concatenated view.
    pub fn band_offsets(&self) -> [usize; BANDS] {
        let l = self.band_lens();
        [0, l[0], l[0] + l[1], l[0] + l[1] + l[2]]
    }

    /// Concatenated view `(CA3, CD3, CD2, CD1)` of length `T`.
    pub fn concatenated(&self) -> Tensor {
        Tensor::concat(0, &[&self.ca3, &self.cd3, &self.cd2, &self.cd1])
    }

    /// Rebuilds a stack from a concatenated length-`T` vector.
    pub fn from_concatenated(w: &Tensor) -> Result<WaveletStack> {
        if w.rank() != 1 || w.len() % 8 != 0 {
            return Err(Error::shape(format!(
                "concatenated stack must be rank-1 with length divisible by 8, got {:?}",
                w.shape()
            )));
        }
        let t = w.len();
        Ok(WaveletStack {
            ca3: w.slice_axis(0, 0, t / 8),
            cd3: w.slice_axis(0, t / 8, t / 4),
            cd2: w.slice_axis(0, t / 4, t / 2),
            cd1: w.slice_axis(0, t / 2, t),
        })
    }
}

/// Band lengths for a series of length `t`: `(t/8, t/8, t/4, t/2)`.
pub fn band_lens_for(t: usize) -> [usize; BANDS] {
    [t / 8, t / 8, t / 4, t / 2]
}

/// Band offsets inside the concatenated stack for a series of length `t`.
pub fn band_offsets_for(t: usize) -> [usize; BANDS] {
    [0, t / 8, t / 4, t / 2]
}

/// One orthonormal Haar analysis level.
pub fn haar_level(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    debug_assert!(x.len() % 2 == 0);
    let inv_sqrt2 = core::f64::consts::FRAC_1_SQRT_2;
    let half = x.len() / 2;
    let mut ca = Vec::with_capacity(half);
    let mut cd = Vec::with_capacity(half);
    for pair in x.chunks_exact(2) {
        ca.push((pair[0] + pair[1]) * inv_sqrt2);
        cd.push((pair[0] - pair[1]) * inv_sqrt2);
    }
    (ca, cd)
}

/// One orthonormal Haar synthesis level.
pub fn haar_level_inverse(ca: &[f64], cd: &[f64]) -> Vec<f64> {
    debug_assert_eq!(ca.len(), cd.len());
    let inv_sqrt2 = core::f64::consts::FRAC_1_SQRT_2;
    let mut x = Vec::with_capacity(ca.len() * 2);
    for (&a, &d) in ca.iter().zip(cd) {
        x.push((a + d) * inv_sqrt2);
        x.push((a - d) * inv_sqrt2);
    }
    x
}

/// Three-level analysis. The input length must be divisible by 8.
pub fn dwt3(m: &Tensor) -> Result<WaveletStack> {
    if m.rank() != 1 || m.len() == 0 || m.len() % 8 != 0 {
        return Err(Error::shape(format!(
            "dwt3 expects a rank-1 series with length divisible by 8, got {:?}",
            m.shape()
        )));
    }
    let (ca1, cd1) = haar_level(m.data());
    let (ca2, cd2) = haar_level(&ca1);
    let (ca3, cd3) = haar_level(&ca2);
    Ok(WaveletStack {
        ca3: Tensor::from_vec([ca3.len()], ca3),
        cd3: Tensor::from_vec([cd3.len()], cd3),
        cd2: Tensor::from_vec([cd2.len()], cd2),
        cd1: Tensor::from_vec([cd1.len()], cd1),
    })
}

/// Exact inverse of [`dwt3`].
pub fn idwt3(w: &WaveletStack) -> Result<Tensor> {
    let [l3, l3b, l2, l1] = w.band_lens();
    if l3 != l3b || l2 != 2 * l3 || l1 != 2 * l2 {
        return Err(Error::shape(format!(
            "inconsistent band lengths ({l3}, {l3b}, {l2}, {l1})"
        )));
    }
    let ca2 = haar_level_inverse(w.ca3.data(), w.cd3.data());
    let ca1 = haar_level_inverse(&ca2, w.cd2.data());
    let m = haar_level_inverse(&ca1, w.cd1.data());
    Ok(Tensor::from_vec([m.len()], m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::rng::Rng;
    use alloc::vec;

    #[test]
    fn constant_ones_concentrate_in_ca3() {
        let m = Tensor::full(vec![8], 1.0);
        let w = dwt3(&m).unwrap();
        assert_eq!(w.band_lens(), [1, 1, 2, 4]);
        assert!((w.ca3.item() - 2.0 * core::f64::consts::SQRT_2).abs() < 1e-12);
        assert!((w.ca3.item() - 2.828427).abs() < 1e-6);
        assert!(w.cd3.max_abs() < 1e-12);
        assert!(w.cd2.max_abs() < 1e-12);
        assert!(w.cd1.max_abs() < 1e-12);
    }

    #[test]
    fn single_level_hand_example() {
        let (ca, cd) = haar_level(&[1.0, 2.0, 3.0, 4.0]);
        assert!((ca[0] - 2.121320).abs() < 1e-6);
        assert!((ca[1] - 4.949747).abs() < 1e-6);
        assert!((cd[0] + 0.707107).abs() < 1e-6);
        assert!((cd[1] + 0.707107).abs() < 1e-6);
    }

    #[test]
    fn inverse_of_constant_stack() {
        let w = WaveletStack {
            ca3: Tensor::from_vec(vec![1], vec![2.0 * core::f64::consts::SQRT_2]),
            cd3: Tensor::zeros(vec![1]),
            cd2: Tensor::zeros(vec![2]),
            cd1: Tensor::zeros(vec![4]),
        };
        let m = idwt3(&w).unwrap();
        for &v in m.data() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn parseval_energy_at_336() {
        let mut rng = Rng::new(17);
        let m = rng.normal_tensor(vec![336]);
        let w = dwt3(&m).unwrap();
        let e_time = m.sq_norm();
        let e_bands = w.concatenated().sq_norm();
        assert!((e_time - e_bands).abs() < 1e-9, "{e_time} vs {e_bands}");
    }

    #[test]
    fn roundtrip_and_band_lengths_at_336() {
        let mut rng = Rng::new(4);
        let m = rng.normal_tensor(vec![336]);
        let w = dwt3(&m).unwrap();
        assert_eq!(w.band_lens(), [42, 42, 84, 168]);
        assert_eq!(w.band_offsets(), [0, 42, 84, 168]);
        let back = idwt3(&w).unwrap();
        assert!(back.sub(&m).max_abs() < 1e-10);
    }

    #[test]
    fn indivisible_length_rejected() {
        let m = Tensor::full(vec![12], 1.0);
        assert!(matches!(dwt3(&m), Err(Error::Shape(_))));
    }

    #[test]
    fn concatenated_roundtrip() {
        let mut rng = Rng::new(8);
        let m = rng.normal_tensor(vec![48]);
        let w = dwt3(&m).unwrap();
        let cat = w.concatenated();
        let back = WaveletStack::from_concatenated(&cat).unwrap();
        assert_eq!(back, w);
    }
}
