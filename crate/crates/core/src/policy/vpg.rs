//! Vanilla policy gradient with discounted reward-to-go and a batch-mean
//! baseline. Advantages are scaled to unit standard deviation so one step
//! size works across reward scales.

use alloc::vec;
use alloc::vec::Vec;

use libm::sqrt;

use super::{GradientEstimate, Policy, PolicyError};
use crate::cmdp::{Episode, Transition};

/// Normalized advantages `(G_t - b) / sd`, one vector per episode.
pub fn advantages<F: Fn(&Transition) -> f64>(
    batch: &[Episode],
    gamma: f64,
    reward: F,
) -> Vec<Vec<f64>> {
    let mut rtg: Vec<Vec<f64>> = batch
        .iter()
        .map(|ep| {
            let mut out = vec![0.0; ep.len()];
            let mut acc = 0.0;
            for (t, tr) in ep.transitions.iter().enumerate().rev() {
                acc = reward(tr) + gamma * acc;
                out[t] = acc;
            }
            out
        })
        .collect();
    let n: usize = rtg.iter().map(Vec::len).sum();
    if n == 0 {
        return rtg;
    }
    let mean = rtg.iter().flatten().sum::<f64>() / n as f64;
    let var = rtg
        .iter()
        .flatten()
        .map(|g| (g - mean) * (g - mean))
        .sum::<f64>()
        / n as f64;
    let sd = sqrt(var);
    let scale = if sd > 1e-8 { 1.0 / sd } else { 1.0 };
    for g in rtg.iter_mut().flatten() {
        *g = (*g - mean) * scale;
    }
    rtg
}

/// `(1/n) Σ A_t ∇ log π(a_t | s_t)` averaged over the `n` transitions of the
/// batch.
pub fn policy_gradient(
    policy: &Policy,
    batch: &[Episode],
    adv: &[Vec<f64>],
) -> Result<GradientEstimate, PolicyError> {
    let n: usize = batch.iter().map(Episode::len).sum();
    if n == 0 {
        return Err(PolicyError::EmptyBatch);
    }
    let mut g = vec![0.0; policy.num_params()];
    let inv = 1.0 / n as f64;
    for (ep, a) in batch.iter().zip(adv) {
        for (tr, adv_t) in ep.transitions.iter().zip(a) {
            if *adv_t != 0.0 {
                policy.accumulate_grad_log_prob(&tr.state, &tr.action, adv_t * inv, &mut g);
            }
        }
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(PolicyError::NonFiniteGradient);
    }
    Ok(GradientEstimate { g, batch_size: n })
}

/// One ascent step on the (possibly shaped) training reward.
pub fn vpg_update(
    policy: &Policy,
    batch: &[Episode],
    lr: f64,
    gamma: f64,
) -> Result<Policy, PolicyError> {
    vpg_update_with(policy, batch, lr, gamma, |t| t.train_reward)
}

/// One ascent step on an arbitrary per-transition reward.
pub fn vpg_update_with<F: Fn(&Transition) -> f64>(
    policy: &Policy,
    batch: &[Episode],
    lr: f64,
    gamma: f64,
    reward: F,
) -> Result<Policy, PolicyError> {
    let adv = advantages(batch, gamma, reward);
    let grad = policy_gradient(policy, batch, &adv)?;
    policy.ascend(&grad, lr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmdp::TerminationReason;
    use crate::policy::Architecture;

    fn step(state: usize, action: usize, reward: f64) -> Transition {
        let mut s = vec![0.0; 2];
        s[state] = 1.0;
        Transition {
            state: s.clone(),
            action: vec![action as f64],
            next_state: s,
            reward,
            train_reward: reward,
            costs: vec![],
            behavior_logprob: libm::log(0.5),
            terminal: true,
            reason: TerminationReason::Timeout,
        }
    }

    #[test]
    fn reward_to_go_is_centered() {
        let ep = Episode {
            transitions: vec![step(0, 0, 1.0), step(0, 0, 0.0), step(0, 0, 2.0)],
            gamma: 0.5,
            horizon: 3,
        };
        let adv = advantages(&[ep], 0.5, |t| t.reward);
        // raw rtg = [1.5, 1.0, 2.0]
        let sum: f64 = adv[0].iter().sum();
        assert!(sum.abs() < 1e-12);
        assert!(adv[0][2] > adv[0][0] && adv[0][0] > adv[0][1]);
    }

    #[test]
    fn update_moves_toward_rewarded_action() {
        let policy = Policy::zeros(Architecture::tabular(2, 2));
        let batch: Vec<Episode> = (0..4)
            .map(|i| Episode {
                transitions: vec![step(0, i % 2, if i % 2 == 1 { 1.0 } else { 0.0 })],
                gamma: 0.99,
                horizon: 1,
            })
            .collect();
        let next = vpg_update(&policy, &batch, 0.5, 0.99).unwrap();
        let probs = next.tabulate(2).unwrap();
        assert!(probs[0][1] > 0.5);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let policy = Policy::zeros(Architecture::tabular(2, 2));
        assert_eq!(
            vpg_update(&policy, &[], 0.1, 0.9),
            Err(PolicyError::EmptyBatch)
        );
    }
}
