//! Simulators and episode collection.
//!
//! An environment exposes observations (the policy input) and a feature
//! vector per observation (the variables a task is written over). Rewards,
//! costs and termination are not the environment's business: they come from
//! the [`Cmdp`] compiled from the task.

mod cartpole;
mod presets;
mod tabular;

pub use cartpole::{
    CartPoleEnv, CartPoleState, CartPoleWorld, Obstacle, Physics, WorldError, CARTPOLE_FEATURES,
    NO_OBSTACLE_DISTANCE,
};
pub use presets::{
    chain_oracle, chain_oracle_for, chain_task, AnyEnv, Preset, PresetError, CARTPOLE_BALANCE_TASK,
    CARTPOLE_OBSTACLE_TASK,
};
pub use tabular::{
    enumerate_trajectories, TabularCmdp, TabularEnv, TabularError, Trajectory, MAX_ENUM_ACTIONS,
    MAX_ENUM_HORIZON, MAX_ENUM_STATES, MAX_TRAJECTORIES,
};

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::cmdp::{Cmdp, Episode, Transition};
use crate::policy::{Policy, PolicyError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionSpace {
    Continuous { dim: usize },
    Discrete { n: usize },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("integration produced a non-finite state")]
    NonFiniteState,
    #[error("action outside the action space")]
    InvalidAction,
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Maps observations to task features. Improvement routines receive only
/// this view, so they cannot interact with the real system.
pub trait FeatureMap {
    /// Names of the feature vector entries, in order.
    fn feature_names(&self) -> Vec<String>;
    fn features(&self, obs: &[f64]) -> Vec<f64>;
}

pub trait Environment: FeatureMap {
    fn observation_dim(&self) -> usize;
    fn action_space(&self) -> ActionSpace;
    fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64>;
    fn step<R: Rng + ?Sized>(&mut self, action: &[f64], rng: &mut R) -> Result<Vec<f64>, EnvError>;
}

/// Runs one episode of `policy` until termination or the horizon, logging
/// behaviour log-probabilities. `cmdp` must be bound to the environment's
/// features.
pub fn collect_episode<E: Environment, R: Rng + ?Sized>(
    env: &mut E,
    cmdp: &Cmdp,
    policy: &Policy,
    rng: &mut R,
) -> Result<Episode, EnvError> {
    let horizon = cmdp.config().horizon;
    let mut obs = env.reset(rng);
    let mut feats = env.features(&obs);
    let mut transitions = Vec::new();
    for t in 0..horizon {
        let (action, logprob) = policy.sample_action(&obs, rng)?;
        let next = env.step(&action, rng)?;
        let next_feats = env.features(&next);
        let out = cmdp.outcome(t, &feats, &next_feats);
        let terminal = out.terminal;
        transitions.push(Transition {
            state: obs,
            action,
            next_state: next.clone(),
            reward: out.reward,
            train_reward: out.train_reward,
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
    Ok(Episode {
        transitions,
        gamma: cmdp.config().gamma,
        horizon,
    })
}

/// `n` consecutive episodes.
pub fn collect_batch<E: Environment, R: Rng + ?Sized>(
    env: &mut E,
    cmdp: &Cmdp,
    policy: &Policy,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Episode>, EnvError> {
    (0..n)
        .map(|_| collect_episode(env, cmdp, policy, rng))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmdp::{CmdpConfig, TerminationReason};
    use crate::policy::Architecture;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn balance() -> (AnyEnv, Cmdp) {
        let preset = Preset::CartpoleBalance;
        let env = preset.build().unwrap();
        let task = preset.task().rebind(&env.feature_names()).unwrap();
        let config = CmdpConfig::with_defaults(task.num_constraints());
        (env, Cmdp::new(task, config, false))
    }

    #[test]
    fn episodes_are_valid_and_deterministic() {
        let (mut env, cmdp) = balance();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let policy = Policy::init(Architecture::gaussian(4, 1), &mut rng, -0.5);
        let run = |env: &mut AnyEnv| {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            collect_batch(env, &cmdp, &policy, 5, &mut rng).unwrap()
        };
        let a = run(&mut env);
        let b = run(&mut env);
        assert_eq!(a, b);
        for e in &a {
            e.validate().unwrap();
            assert_ne!(e.final_reason(), TerminationReason::Running);
            for t in &e.transitions {
                assert!((policy.log_prob(&t.state, &t.action) - t.behavior_logprob).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_force_pole_falls() {
        let (mut env, cmdp) = balance();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut policy = Policy::zeros(Architecture::gaussian(4, 1));
        let mut params = policy.params().to_vec();
        *params.last_mut().unwrap() = crate::policy::LOG_STD_MIN;
        policy = policy.with_params(params).unwrap();
        let e = collect_episode(&mut env, &cmdp, &policy, &mut rng).unwrap();
        assert_eq!(e.final_reason(), TerminationReason::SafetyViolation);
        assert!(e.len() < 200);
        assert!(e.discounted_cost(0) > 0.0);
    }
}
