//! Central-difference verification of analytic gradients.

use alloc::vec::Vec;

use crate::error::{Error, Result};

use super::tensor::Tensor;

/// Compares an analytic gradient against central differences.
///
/// `f` evaluates the scalar objective at a parameter vector; `grad` returns
/// the analytic gradient for the same parameters, one tensor per parameter.
/// Returns the max over all parameter entries of
/// `|analytic - central| / max(1, |central|)`.
pub fn grad_check(
    f: impl Fn(&[Tensor]) -> Result<f64>,
    grad: impl Fn(&[Tensor]) -> Result<Vec<Tensor>>,
    theta: &[Tensor],
    h: f64,
) -> Result<f64> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::contract("grad_check step must be positive"));
    }
    let analytic = grad(theta)?;
    if analytic.len() != theta.len() {
        return Err(Error::shape(
            "analytic gradient count does not match parameter count",
        ));
    }
    let mut worst = 0.0f64;
    let mut params: Vec<Tensor> = theta.to_vec();
    for (pi, t) in theta.iter().enumerate() {
        if analytic[pi].shape() != t.shape() {
            return Err(Error::shape("analytic gradient shape mismatch"));
        }
        for e in 0..t.len() {
            let base = t.data()[e];
            params[pi] = perturbed(t, e, base + h);
            let fp = f(&params)?;
            params[pi] = perturbed(t, e, base - h);
            let fm = f(&params)?;
            params[pi] = t.clone();
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::numeric("non-finite objective in grad_check"));
            }
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[pi].data()[e];
            let err = (a - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

fn perturbed(t: &Tensor, index: usize, value: f64) -> Tensor {
    let mut data = t.to_vec();
    data[index] = value;
    Tensor::from_vec(t.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::rng::Rng;
    use alloc::vec;

    #[test]
    fn quadratic_gradient_is_theta() {
        // f = 0.5 ||theta||^2 has gradient theta itself.
        let mut rng = Rng::new(2);
        let theta = vec![rng.normal_tensor(vec![7])];
        let err = grad_check(
            |p| Ok(0.5 * p[0].sq_norm()),
            |p| Ok(vec![p[0].clone()]),
            &theta,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "error {err}");
    }
}
