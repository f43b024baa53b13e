use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// SGD with heavy-ball momentum: `v ← μ·v + g`, `θ ← θ − lr·v`.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    learning_rate: f64,
    momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", format!("must be positive, got {learning_rate}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::config("momentum", format!("{momentum} outside [0, 1)")));
        }
        Ok(OptimizerState { learning_rate, momentum, velocity: Vec::new() })
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    /// Updates `params` in place. Parameters beyond the ones seen so far (a newly
    /// added branch) start with zero velocity.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != grads.len() || params.len() < self.velocity.len() {
            return Err(Error::invalid(
                "sgd_step",
                format!("{} parameters, {} gradients, {} velocities", params.len(), grads.len(), self.velocity.len()),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let known = self.velocity.get(i).map(|v| v.len()).unwrap_or(p.len());
            if g.len() != p.len() || known != p.len() {
                return Err(Error::shape("sgd_step", &[p.shape(), &[g.len()], &[known]]));
            }
        }
        for p in &params[self.velocity.len()..] {
            self.velocity.push(vec![0.0; p.len()]);
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((theta, &gi), vi) in p.data_mut().iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = self.momentum * *vi + gi;
                *theta -= self.learning_rate * *vi;
            }
        }
        Ok(())
    }
}

/// One optimizer step; see [`OptimizerState::step`].
pub fn sgd_step(params: &mut [&mut Tensor], grads: &[Vec<f64>], state: &mut OptimizerState) -> Result<()> {
    state.step(params, grads)
}
