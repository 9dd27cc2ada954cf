use super::{ParamStore, Tensor};
use crate::{Error, Result};

/// Adam with the standard bias-corrected update.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// One update. A non-finite gradient aborts before anything is
    /// modified.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(
                "adam",
                format!("{} params, {} grads", params.len(), grads.len()),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::shape(
                    "adam",
                    format!("param {i}: {:?} vs grad {:?}", p.shape(), g.shape()),
                ));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter {i}")));
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len()
            || self
                .m
                .iter()
                .zip(params.iter())
                .any(|(m, p)| m.len() != p.len())
        {
            return Err(Error::shape(
                "adam",
                "parameter set changed between steps".to_string(),
            ));
        }

        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((theta, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *theta -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    /// Updates every trainable entry of `store`; `grads` follows
    /// [`ParamStore::trainable_ids`] order.
    pub fn step_store(&mut self, store: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        let ids: Vec<_> = store.trainable_ids().collect();
        let mut owned: Vec<Tensor> = ids.iter().map(|&id| store.get(id).clone()).collect();
        {
            let mut refs: Vec<&mut Tensor> = owned.iter_mut().collect();
            self.step(&mut refs, grads)?;
        }
        for (id, t) in ids.into_iter().zip(owned) {
            *store.get_mut(id) = t;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let before = p.clone();
        let mut adam = Adam::new(0.1);
        for _ in 0..3 {
            adam.step(&mut [&mut p], &[Tensor::zeros(&[3])]).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(adam.step_count(), 3);
    }

    #[test]
    fn single_step_matches_closed_form() {
        // m = 0.1, v = 0.001; m̂ = 1, v̂ = 1; θ' = 1 - 0.1 * 1 / (1 + 1e-8)
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        let mut p = Tensor::scalar(1.0);
        let mut adam = Adam::with_betas(0.1, 0.9, 0.999, 1e-8);
        adam.step(&mut [&mut p], &[Tensor::scalar(1.0)]).unwrap();
        assert!((p.data()[0] - expected).abs() < 1e-15, "{}", p.data()[0]);
        assert!((adam.first_moments()[0][0] - 0.1).abs() < 1e-15);
        assert!((adam.second_moments()[0][0] - 0.001).abs() < 1e-15);
    }

    #[test]
    fn constant_positive_gradient_decreases_monotonically() {
        let mut p = Tensor::scalar(1.0);
        let mut adam = Adam::new(0.01);
        let mut last = p.data()[0];
        for _ in 0..2 {
            adam.step(&mut [&mut p], &[Tensor::scalar(0.3)]).unwrap();
            assert!(p.data()[0] < last);
            last = p.data()[0];
        }
    }

    #[test]
    fn non_finite_gradient_aborts_without_mutation() {
        let mut p = Tensor::scalar(1.0);
        let mut adam = Adam::new(0.01);
        let err = adam.step(&mut [&mut p], &[Tensor::scalar(f64::NAN)]);
        assert!(matches!(err, Err(Error::NonFinite(_))));
        assert_eq!(p.data()[0], 1.0);
        assert_eq!(adam.step_count(), 0);
    }
}
