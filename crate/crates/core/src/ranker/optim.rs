use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::encoder::ModelState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Rescales `grad` in place so its L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let scale = max_norm / norm;
        for g in grad.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

/// One optimizer step on `state` with an already clipped gradient.
pub fn apply_update(state: &mut ModelState, grad: &[f64], config: &TrainConfig) {
    let lr = config.learning_rate;
    state.step += 1;
    match config.optimizer {
        OptimizerKind::Sgd => {
            for (p, g) in state.params.data.iter_mut().zip(grad) {
                *p -= lr * g;
            }
        }
        OptimizerKind::Adam => {
            let (b1, b2, eps) = (config.beta1, config.beta2, config.epsilon);
            let t = state.step as i32;
            let c1 = 1.0 - b1.powi(t);
            let c2 = 1.0 - b2.powi(t);
            let moments = state
                .first_moment
                .iter_mut()
                .zip(state.second_moment.iter_mut());
            for ((p, g), (m, v)) in state.params.data.iter_mut().zip(grad).zip(moments) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
}
