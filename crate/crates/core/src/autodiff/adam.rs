use super::params::ParamStore;
use super::tape::Gradients;
use super::tensor::{Scalar, Tensor};
use super::AutodiffError;

/// Hyperparameters of the Adam update.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 0.001, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Per-parameter moment estimates for bias-corrected Adam.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    config: AdamConfig,
    step: u64,
    first_moment: Vec<Tensor<T>>,
    second_moment: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = || params.iter().map(|(_, _, p)| Tensor::zeros(p.shape().to_vec())).collect();
        AdamState { config, step: 0, first_moment: zeros(), second_moment: zeros() }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Number of updates applied so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter in `params`. Parameters without a
    /// gradient entry are treated as having a zero gradient.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>) -> Result<(), AutodiffError> {
        if params.len() != self.first_moment.len() {
            return Err(AutodiffError::ParamCountMismatch { expected: self.first_moment.len(), actual: params.len() });
        }
        for id in params.ids() {
            let param = params.get(id);
            if param.shape() != self.first_moment[id.0].shape() {
                return Err(AutodiffError::ShapeMismatch {
                    name: params.name(id).to_string(),
                    expected: self.first_moment[id.0].shape().to_vec(),
                    actual: param.shape().to_vec(),
                });
            }
            if let Some(g) = grads.get(id) {
                if g.shape() != param.shape() {
                    return Err(AutodiffError::ShapeMismatch {
                        name: params.name(id).to_string(),
                        expected: param.shape().to_vec(),
                        actual: g.shape().to_vec(),
                    });
                }
            }
        }

        self.step += 1;
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        let correction1 = 1.0 - beta1.powi(self.step as i32);
        let correction2 = 1.0 - beta2.powi(self.step as i32);
        for id in params.ids() {
            let m = self.first_moment[id.0].data_mut();
            let v = self.second_moment[id.0].data_mut();
            let grad = grads.get(id).map(Tensor::data);
            let p = params.get_mut(id).data_mut();
            for i in 0..p.len() {
                let g = grad.map_or(0.0, |g| g[i].as_f64());
                let mi = beta1 * m[i].as_f64() + (1.0 - beta1) * g;
                let vi = beta2 * v[i].as_f64() + (1.0 - beta2) * g * g;
                m[i] = T::from_f64_lossy(mi);
                v[i] = T::from_f64_lossy(vi);
                let update = learning_rate * (mi / correction1) / ((vi / correction2).sqrt() + epsilon);
                p[i] = T::from_f64_lossy(p[i].as_f64() - update);
            }
        }
        Ok(())
    }
}

/// Functional form of one Adam update.
pub fn adam_step<T: Scalar>(
    state: &mut AdamState<T>,
    params: &mut ParamStore<T>,
    grads: &Gradients<T>,
) -> Result<(), AutodiffError> {
    state.step(params, grads)
}
