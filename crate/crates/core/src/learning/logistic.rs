//! Two-feature logistic regression (score, bias) with per-class weights.

use serde::{Deserialize, Serialize};

pub const STEP_SIZE: f64 = 0.1;
pub const MAX_ITERATIONS: usize = 5000;
pub const GRADIENT_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: f64,
    pub y: bool,
}

/// `P(y = 1 | x) = sigmoid(weight * x + bias)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub weight: f64,
    pub bias: f64,
    /// Weights applied to class 0 and class 1 during fitting.
    pub class_weights: [f64; 2],
}

impl LogRegModel {
    pub fn predict(&self, x: f64) -> f64 {
        sigmoid(self.weight * x + self.bias)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn weight_of(s: &Sample, class_weights: [f64; 2]) -> f64 {
    class_weights[s.y as usize]
}

/// Class-weighted log-likelihood divided by the total weight mass.
pub fn weighted_log_likelihood(
    params: [f64; 2],
    samples: &[Sample],
    class_weights: [f64; 2],
) -> f64 {
    let mut total = 0.0;
    let mut mass = 0.0;
    for s in samples {
        let z = params[0] * s.x + params[1];
        let w = weight_of(s, class_weights);
        // log sigmoid(z) = -softplus(-z), log(1 - sigmoid(z)) = -softplus(z)
        total -= w * if s.y { softplus(-z) } else { softplus(z) };
        mass += w;
    }
    total / mass
}

/// Gradient of [`weighted_log_likelihood`] with respect to (weight, bias).
pub fn weighted_gradient(
    params: [f64; 2],
    samples: &[Sample],
    class_weights: [f64; 2],
) -> [f64; 2] {
    let mut g = [0.0; 2];
    let mut mass = 0.0;
    for s in samples {
        let w = weight_of(s, class_weights);
        let r = w * (f64::from(u8::from(s.y)) - sigmoid(params[0] * s.x + params[1]));
        g[0] += r * s.x;
        g[1] += r;
        mass += w;
    }
    [g[0] / mass, g[1] / mass]
}

/// Balanced weights `n / (2 n_c)`; `None` when a class is absent.
pub fn balanced_class_weights(samples: &[Sample]) -> Option<[f64; 2]> {
    let n = samples.len() as f64;
    let pos = samples.iter().filter(|s| s.y).count() as f64;
    let neg = n - pos;
    if pos == 0.0 || neg == 0.0 {
        return None;
    }
    Some([n / (2.0 * neg), n / (2.0 * pos)])
}

/// Batch gradient ascent from the origin.
pub fn fit_logistic_weighted(samples: &[Sample], class_weights: [f64; 2]) -> LogRegModel {
    let mut params = [0.0f64; 2];
    for _ in 0..MAX_ITERATIONS {
        let g = weighted_gradient(params, samples, class_weights);
        if g[0].hypot(g[1]) < GRADIENT_TOLERANCE {
            break;
        }
        params[0] += STEP_SIZE * g[0];
        params[1] += STEP_SIZE * g[1];
    }
    LogRegModel {
        weight: params[0],
        bias: params[1],
        class_weights,
    }
}

/// Fits with balanced class weights, or returns `None` for single-class data.
pub fn fit_logistic(samples: &[Sample]) -> Option<LogRegModel> {
    balanced_class_weights(samples).map(|cw| fit_logistic_weighted(samples, cw))
}
