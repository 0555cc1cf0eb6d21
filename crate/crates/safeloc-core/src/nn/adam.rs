//! Adam optimizer over a flat parameter vector.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct AdamState {
    first_moment: Vec<f32>,
    second_moment: Vec<f32>,
    step_count: u64,
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps_stability: f32,
}

impl AdamState {
    pub fn new(param_len: usize, learning_rate: f32) -> Self {
        AdamState {
            first_moment: vec![0.0; param_len],
            second_moment: vec![0.0; param_len],
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps_stability: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One bias-corrected Adam update. A non-finite gradient aborts the step
    /// without touching the parameters or moments.
    pub fn step(&mut self, params: &mut [f32], grads: &[f32]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::dimension(
                "adam_step",
                self.first_moment.len(),
                format!("params {} / grads {}", params.len(), grads.len()),
            ));
        }
        if !grads.iter().all(|g| g.is_finite()) {
            return Err(Error::NonFinite("adam_step gradient"));
        }
        self.step_count += 1;
        let t = self.step_count as f64;
        let corr1 = (1.0 - f64::from(self.beta1).powf(t)) as f32;
        let corr2 = (1.0 - f64::from(self.beta2).powf(t)) as f32;
        for i in 0..params.len() {
            let g = grads[i];
            self.first_moment[i] = self.beta1 * self.first_moment[i] + (1.0 - self.beta1) * g;
            self.second_moment[i] = self.beta2 * self.second_moment[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.first_moment[i] / corr1;
            let v_hat = self.second_moment[i] / corr2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps_stability);
        }
        Ok(())
    }
}

/// Functional wrapper: returns updated params and state.
pub fn adam_step(
    params: &[f32],
    grads: &[f32],
    state: &AdamState,
) -> Result<(Vec<f32>, AdamState)> {
    let mut new_params = params.to_vec();
    let mut new_state = state.clone();
    new_state.step(&mut new_params, grads)?;
    Ok((new_params, new_state))
}
