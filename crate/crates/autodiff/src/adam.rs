use crate::error::AdamError;
use crate::params::{BoundParams, ParamSet};
use crate::tape::Gradients;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are kept in [`ParamSet`]s that mirror
/// the parameters by name.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub first: ParamSet,
    pub second: ParamSet,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        Self {
            config,
            step: 0,
            first: params.zeros_like(),
            second: params.zeros_like(),
        }
    }

    /// Collects gradients for every bound parameter, zero-filling those that
    /// no gradient reached, then applies one update.
    pub fn step_bound(&mut self, params: &mut ParamSet, bound: &BoundParams, grads: &Gradients) -> Result<(), AdamError> {
        let collected: Vec<Tensor> = bound
            .iter()
            .map(|(name, var)| {
                let shape = params.get(name).map(|t| t.shape().to_vec()).unwrap_or_default();
                grads.get_or_zeros(var, &shape)
            })
            .collect();
        self.step(params, &collected)
    }

    /// One update with gradients given in parameter order.
    ///
    /// Nothing is modified if any gradient is non-finite or mis-shaped.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) -> Result<(), AdamError> {
        if grads.len() != params.len() {
            return Err(AdamError::Count {
                expected: params.len(),
                got: grads.len(),
            });
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(AdamError::Shape {
                    name: name.to_string(),
                    param: p.shape().to_vec(),
                    grad: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(AdamError::NonFiniteGradient(name.to_string()));
            }
        }

        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);

        let moments = self.first.iter_mut().zip(self.second.iter_mut());
        for (((_, p), g), ((_, m), (_, v))) in params.iter_mut().zip(grads).zip(moments) {
            let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= learning_rate * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
