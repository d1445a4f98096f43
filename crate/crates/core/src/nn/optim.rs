use super::model::{Gradients, Model};
use crate::error::{Error, Result};

/// One elementwise RMSProp update:
/// `cache ← decay·cache + (1−decay)·g²`, `p ← p − lr·g / (sqrt(cache) + eps)`.
pub fn rmsprop_step(params: &mut [f64], grads: &[f64], cache: &mut [f64], lr: f64, decay: f64, eps: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != cache.len() {
        return Err(Error::ShapeMismatch(format!(
            "rmsprop: {} params, {} grads, {} cache entries",
            params.len(),
            grads.len(),
            cache.len()
        )));
    }
    for ((p, &g), c) in params.iter_mut().zip(grads).zip(cache.iter_mut()) {
        *c = decay * *c + (1.0 - decay) * g * g;
        *p -= lr * g / (c.sqrt() + eps);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    cache: Vec<Vec<Vec<f64>>>,
}

impl RmsProp {
    pub const DEFAULT_DECAY: f64 = 0.9;
    pub const DEFAULT_EPSILON: f64 = 1e-7;

    pub fn new(learning_rate: f64, decay: f64, epsilon: f64) -> Result<Self> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be >= 0, got {learning_rate}"
            )));
        }
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::InvalidArgument(format!("decay must be in (0, 1), got {decay}")));
        }
        Ok(Self {
            learning_rate,
            decay,
            epsilon,
            cache: Vec::new(),
        })
    }

    pub fn step(&mut self, model: &mut Model, grads: &Gradients) -> Result<()> {
        if self.cache.is_empty() {
            self.cache = grads
                .layers()
                .iter()
                .map(|l| l.iter().map(|g| vec![0.0; g.len()]).collect())
                .collect();
        }
        let (lr, decay, eps) = (self.learning_rate, self.decay, self.epsilon);
        let cache = &mut self.cache;
        model.for_each_trainable(grads, |li, pi, values, g| {
            let c = cache
                .get_mut(li)
                .and_then(|l| l.get_mut(pi))
                .ok_or_else(|| Error::ShapeMismatch("optimizer state does not match model".into()))?;
            rmsprop_step(values, g, c, lr, decay, eps)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_noop() {
        let mut p = vec![1.0, -2.0];
        let mut c = vec![0.3, 0.0];
        rmsprop_step(&mut p, &[0.0, 0.0], &mut c, 0.05, 0.9, 1e-8).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn hand_computed_step() {
        let mut p = vec![1.0];
        let mut c = vec![0.0];
        rmsprop_step(&mut p, &[1.0], &mut c, 0.05, 0.9, 1e-8).unwrap();
        assert!((c[0] - 0.1).abs() < 1e-15);
        assert!((p[0] - 0.841_886_121_991_580_9).abs() < 1e-12);
    }

    #[test]
    fn repeated_steps_are_bit_identical() {
        let run = || {
            let mut p = vec![0.3, 0.7];
            let mut c = vec![0.0; 2];
            for _ in 0..2 {
                rmsprop_step(&mut p, &[0.2, -1.3], &mut c, 0.05, 0.9, 1e-7).unwrap();
            }
            (p, c)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch() {
        let mut p = vec![1.0];
        let mut c = vec![0.0, 0.0];
        assert!(matches!(
            rmsprop_step(&mut p, &[1.0], &mut c, 0.1, 0.9, 1e-8),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(RmsProp::new(0.1, 1.0, 1e-7).is_err());
    }
}
