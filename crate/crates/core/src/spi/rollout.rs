//! Predicted trajectories from a dynamics model. Rewards and costs are not
//! learned: they are computed from the task on the predicted features.

use alloc::vec;
use alloc::vec::Vec;

use libm::sqrt;
use rand::{Rng, RngCore};

use super::model::DynamicsModel;
use crate::cmdp::{Cmdp, Episode, TerminationReason, Transition};
use crate::env::FeatureMap;
use crate::policy::{Policy, PolicyError};

/// How a predicted safety violation is rewarded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RolloutReward {
    /// The task's training reward; the particle stops at the violation.
    Task,
    /// The particle enters an absorbing state paying `-penalty` on every
    /// remaining step of the horizon and accruing no further cost. The
    /// discounted tail is credited to the violating transition.
    Pessimistic { penalty: f64 },
}

/// Discounted value of collecting `-penalty` from step `t` up to the
/// horizon `h`, seen from step `t`.
pub fn absorbing_penalty(t: usize, h: usize, gamma: f64, penalty: f64) -> f64 {
    let mut acc = 0.0;
    let mut disc = 1.0;
    for _ in t..h {
        acc -= penalty * disc;
        disc *= gamma;
    }
    acc
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub episodes: Vec<Episode>,
    /// Particles cut short by a non-finite prediction.
    pub diverged: usize,
}

impl RolloutBatch {
    pub fn num_transitions(&self) -> usize {
        self.episodes.iter().map(Episode::len).sum()
    }
}

/// Shoots `particles` trajectories of at most `horizon` steps from each
/// start. At every step the acting member is drawn uniformly from the
/// ensemble.
#[allow(clippy::too_many_arguments)]
pub fn rollout_model<M: DynamicsModel + ?Sized>(
    model: &M,
    pi: &Policy,
    starts: &[Vec<f64>],
    cmdp: &Cmdp,
    features: &dyn FeatureMap,
    horizon: usize,
    particles: usize,
    reward: RolloutReward,
    rng: &mut dyn RngCore,
) -> Result<RolloutBatch, PolicyError> {
    let m = cmdp.with_horizon(horizon);
    let gamma = m.config().gamma;
    let members = model.num_members();
    let mut episodes = Vec::with_capacity(starts.len() * particles);
    let mut diverged = 0;
    for start in starts {
        for _ in 0..particles {
            let mut obs = start.clone();
            let mut feats = features.features(&obs);
            let mut transitions = Vec::with_capacity(horizon);
            for t in 0..horizon {
                let (action, logprob) = pi.sample_action(&obs, rng)?;
                let member = rng.random_range(0..members);
                let next = model.sample_next(member, &obs, &action, rng);
                if next.iter().any(|v| !v.is_finite()) {
                    log::warn!("model prediction diverged at step {t}; particle dropped");
                    diverged += 1;
                    break;
                }
                let next_feats = features.features(&next);
                let out = m.outcome(t, &feats, &next_feats);
                let train_reward = match reward {
                    RolloutReward::Pessimistic { penalty }
                        if out.reason == TerminationReason::SafetyViolation =>
                    {
                        absorbing_penalty(t, horizon, gamma, penalty)
                    }
                    _ => out.train_reward,
                };
                let terminal = out.terminal;
                transitions.push(Transition {
                    state: obs,
                    action,
                    next_state: next.clone(),
                    reward: out.reward,
                    train_reward,
                    costs: out.costs,
                    behavior_logprob: logprob,
                    terminal,
                    reason: out.reason,
                });
                if terminal {
                    break;
                }
                obs = next;
                feats = next_feats;
            }
            episodes.push(Episode {
                transitions,
                gamma,
                horizon,
            });
        }
    }
    Ok(RolloutBatch { episodes, diverged })
}

/// Spread of the members' own mean rollouts. Every member follows its mean
/// prediction under the greedy action of `pi`; at each requested horizon
/// the across-member standard deviation of the predicted state, divided by
/// `scale`, is averaged over dimensions and starts.
pub fn disagreement<M: DynamicsModel + ?Sized>(
    model: &M,
    pi: &Policy,
    starts: &[Vec<f64>],
    horizons: &[usize],
    scale: &[f64],
) -> Result<Vec<f64>, PolicyError> {
    let max_h = horizons.iter().copied().max().unwrap_or(0);
    let members = model.num_members();
    let mut spread = vec![0.0; max_h + 1];
    for start in starts {
        let mut states: Vec<Vec<f64>> = vec![start.clone(); members];
        for h in 1..=max_h {
            for (m, s) in states.iter_mut().enumerate() {
                let a = pi.greedy_action(s)?;
                *s = model.predict_mean(m, s, &a);
            }
            let dim = start.len();
            let mut total = 0.0;
            for j in 0..dim {
                let mean = states.iter().map(|s| s[j]).sum::<f64>() / members as f64;
                let var = states
                    .iter()
                    .map(|s| (s[j] - mean) * (s[j] - mean))
                    .sum::<f64>()
                    / members as f64;
                total += sqrt(var) / scale.get(j).copied().unwrap_or(1.0);
            }
            spread[h] += total / dim as f64;
        }
    }
    let n = starts.len().max(1) as f64;
    Ok(horizons.iter().map(|h| spread[*h] / n).collect())
}
