//! Dual variables of the Lagrangian objective `V(π) - Σ λ_i V_{C_i}(π)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::cmdp::Transition;

/// Non-negative multipliers, one per constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangeState {
    lambdas: Vec<f64>,
}

impl LagrangeState {
    pub fn new(num_constraints: usize, init: f64) -> Self {
        LagrangeState {
            lambdas: vec![init.max(0.0); num_constraints],
        }
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    /// Projected ascent on the dual: `λ_i ← max(0, λ_i + lr (V̂_i - d_i))`.
    pub fn dual_step(&mut self, cost_estimates: &[f64], thresholds: &[f64], lr: f64) {
        for ((l, v), d) in self.lambdas.iter_mut().zip(cost_estimates).zip(thresholds) {
            let next = *l + lr * (v - d);
            *l = if next.is_finite() { next.max(0.0) } else { *l };
        }
    }

    /// Per-step Lagrangian reward `r - Σ λ_i c_i`.
    pub fn penalized(&self, t: &Transition) -> f64 {
        t.train_reward
            - self
                .lambdas
                .iter()
                .enumerate()
                .map(|(i, l)| l * t.cost(i))
                .sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dual_step_follows_constraint_slack() {
        let mut s = LagrangeState::new(2, 0.5);
        s.dual_step(&[0.4, 0.0], &[0.1, 0.1], 1.0);
        assert!((s.lambdas()[0] - 0.8).abs() < 1e-12);
        assert!((s.lambdas()[1] - 0.4).abs() < 1e-12);
        s.dual_step(&[0.0, 0.0], &[0.1, 0.1], 10.0);
        assert_eq!(s.lambdas(), &[0.0, 0.0]);
    }

    #[test]
    fn negative_init_is_projected() {
        assert_eq!(LagrangeState::new(1, -3.0).lambdas(), &[0.0]);
    }
}
