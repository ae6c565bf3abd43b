//! Adaptive moment estimation with global-norm gradient clipping.

use alloc::vec;
use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use super::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, clip_norm: Option<f64>) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Applies one update. `params` and `grads` must line up in both count
    /// and shape across every call of this optimizer's lifetime.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        assert_eq!(params.len(), grads.len(), "param/grad count");
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        self.step += 1;

        let mut scale = 1.0;
        if let Some(clip) = self.clip_norm {
            let total: f64 = grads.iter().map(|g| g.sq_norm()).sum();
            let norm = total.sqrt();
            if norm > clip {
                scale = clip / norm;
            }
        }

        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            assert_eq!(p.len(), g.len(), "param/grad shape");
            let mut data = p.to_vec();
            for ((x, &graw), (mj, vj)) in data
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                let gv = graw * scale;
                *mj = self.beta1 * *mj + (1.0 - self.beta1) * gv;
                *vj = self.beta2 * *vj + (1.0 - self.beta2) * gv * gv;
                let mhat = *mj / bc1;
                let vhat = *vj / bc2;
                *x -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
            *p = Tensor::from_vec(p.shape().to_vec(), data);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn converges_on_quadratic() {
        // Minimize ||p - c||^2.
        let target = [3.0, -1.5, 0.25];
        let mut params = vec![Tensor::zeros(vec![3])];
        let mut adam = Adam::new(0.05, Some(1.0));
        for _ in 0..600 {
            let g: Vec<f64> = params[0]
                .data()
                .iter()
                .zip(&target)
                .map(|(&p, &c)| 2.0 * (p - c))
                .collect();
            adam.step(&mut params, &[Tensor::from_vec(vec![3], g)]);
        }
        for (p, c) in params[0].data().iter().zip(&target) {
            assert!((p - c).abs() < 1e-2, "{p} vs {c}");
        }
    }
}
