use crate::error::{ensure, Result};

/// Heavy-ball momentum SGD:
/// `v ← momentum·v − learning_rate·g`, then `θ ← θ + v`.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub velocity: Vec<f64>,
    pub momentum: f64,
    pub learning_rate: f64,
}

impl SgdState {
    pub fn new(dim: usize, momentum: f64, learning_rate: f64) -> Result<Self> {
        ensure!((0.0..1.0).contains(&momentum), "momentum must lie in [0, 1), got {momentum}");
        ensure!(
            learning_rate > 0.0 && learning_rate.is_finite(),
            "learning rate must be positive, got {learning_rate}"
        );
        Ok(SgdState {
            velocity: vec![0.0; dim],
            momentum,
            learning_rate,
        })
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        ensure!(
            params.len() == self.velocity.len() && grads.len() == self.velocity.len(),
            "SGD shapes disagree: {} params, {} grads, {} velocity",
            params.len(),
            grads.len(),
            self.velocity.len()
        );
        for ((v, p), g) in self.velocity.iter_mut().zip(params.iter_mut()).zip(grads) {
            *v = self.momentum * *v - self.learning_rate * g;
            *p += *v;
        }
        Ok(())
    }
}
