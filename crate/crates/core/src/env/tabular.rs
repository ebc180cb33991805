//! Finite CMDPs small enough for exact oracles.
//!
//! Rewards, costs and termination depend on the entered state only, matching
//! the task-compiled CMDP: a state is terminal when it violates a safety
//! requirement or satisfies an `achieve` target. Observations are one-hot
//! encodings of the state index; discrete actions are encoded as `[index]`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{ActionSpace, EnvError, Environment, FeatureMap};
use crate::cmdp::{sparse_reward, step_costs, Episode, TerminationReason, Transition};
use crate::dsl::{RequirementKind, TaskSpec};
use crate::hprs::PotentialContext;

pub const MAX_ENUM_STATES: usize = 8;
pub const MAX_ENUM_ACTIONS: usize = 4;
pub const MAX_ENUM_HORIZON: usize = 6;
/// Enumeration aborts beyond this many trajectories.
pub const MAX_TRAJECTORIES: usize = 1 << 21;

const ROW_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TabularError {
    #[error("transition row ({state}, {action}) sums to {sum}")]
    RowNotStochastic {
        state: usize,
        action: usize,
        sum: f64,
    },
    #[error("initial distribution does not sum to 1")]
    BadInitial,
    #[error("initial distribution puts mass on terminal state {0}")]
    TerminalStart(usize),
    #[error("table has wrong shape: {0}")]
    Shape(&'static str),
    #[error(
        "instance too large to enumerate: {states} states, {actions} actions, horizon {horizon}"
    )]
    TooLarge {
        states: usize,
        actions: usize,
        horizon: usize,
    },
    #[error("more than {0} trajectories")]
    TooManyTrajectories(usize),
}

/// A finite CMDP. `transitions[(s * A + a) * S + s']` is `P(s' | s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularCmdp {
    pub num_states: usize,
    pub num_actions: usize,
    pub transitions: Vec<f64>,
    /// Reward for entering each state.
    pub reward: Vec<f64>,
    /// Cost indicators for entering each state, one vector per state.
    pub costs: Vec<Vec<bool>>,
    pub terminal: Vec<bool>,
    pub reason: Vec<TerminationReason>,
    pub initial: Vec<f64>,
    /// `Ψ(s)` of the task potential (0 for terminal states' successors is
    /// handled by the oracles).
    pub potential: Vec<f64>,
    /// Feature vector of each state, laid out like `feature_names`.
    pub features: Vec<Vec<f64>>,
    pub feature_names: Vec<String>,
    pub gamma: f64,
    pub horizon: usize,
}

impl TabularCmdp {
    /// Compiles a task over per-state features. `task` must be bound to
    /// `feature_names`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_task(
        task: &TaskSpec,
        feature_names: Vec<String>,
        features: Vec<Vec<f64>>,
        num_actions: usize,
        transitions: Vec<f64>,
        initial: Vec<f64>,
        gamma: f64,
        horizon: usize,
    ) -> Result<Self, TabularError> {
        let n = features.len();
        let safety = task.safety();
        let target = task.target();
        let ctx = PotentialContext::new(task, gamma);
        let mut reward = Vec::with_capacity(n);
        let mut costs = Vec::with_capacity(n);
        let mut terminal = Vec::with_capacity(n);
        let mut reason = Vec::with_capacity(n);
        let mut potential = Vec::with_capacity(n);
        for f in &features {
            let c = step_costs(&safety, f);
            let safe = !c.iter().any(|v| *v);
            let r = sparse_reward(target, f, safe);
            let (term, why) = if !safe {
                (true, TerminationReason::SafetyViolation)
            } else if target.kind == RequirementKind::Achieve && r > 0.0 {
                (true, TerminationReason::GoalAchieved)
            } else {
                (false, TerminationReason::Running)
            };
            reward.push(r);
            costs.push(c);
            terminal.push(term);
            reason.push(why);
            potential.push(ctx.potential(f));
        }
        let m = TabularCmdp {
            num_states: n,
            num_actions,
            transitions,
            reward,
            costs,
            terminal,
            reason,
            initial,
            potential,
            features,
            feature_names,
            gamma,
            horizon,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn num_constraints(&self) -> usize {
        self.costs.first().map_or(0, Vec::len)
    }

    pub fn p(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transitions[(s * self.num_actions + a) * self.num_states + next]
    }

    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.transitions[start..start + self.num_states]
    }

    pub fn validate(&self) -> Result<(), TabularError> {
        let (n, k) = (self.num_states, self.num_actions);
        if self.transitions.len() != n * k * n {
            return Err(TabularError::Shape("transitions"));
        }
        if self.reward.len() != n
            || self.costs.len() != n
            || self.terminal.len() != n
            || self.reason.len() != n
            || self.initial.len() != n
            || self.potential.len() != n
        {
            return Err(TabularError::Shape("per-state table"));
        }
        for s in 0..n {
            for a in 0..k {
                let row = self.row(s, a);
                let sum: f64 = row.iter().sum();
                if row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > ROW_TOLERANCE {
                    return Err(TabularError::RowNotStochastic {
                        state: s,
                        action: a,
                        sum,
                    });
                }
            }
        }
        if (self.initial.iter().sum::<f64>() - 1.0).abs() > ROW_TOLERANCE
            || self.initial.iter().any(|p| !(*p >= 0.0))
        {
            return Err(TabularError::BadInitial);
        }
        if let Some(s) = (0..n).find(|s| self.initial[*s] > 0.0 && self.terminal[*s]) {
            return Err(TabularError::TerminalStart(s));
        }
        Ok(())
    }

    pub fn one_hot(&self, s: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.num_states];
        v[s] = 1.0;
        v
    }

    /// Index of a one-hot observation.
    pub fn state_index(obs: &[f64]) -> usize {
        obs.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| {
                if *v > acc.1 {
                    (i, *v)
                } else {
                    acc
                }
            })
            .0
    }

    fn check_enumerable(&self) -> Result<(), TabularError> {
        if self.num_states > MAX_ENUM_STATES
            || self.num_actions > MAX_ENUM_ACTIONS
            || self.horizon > MAX_ENUM_HORIZON
        {
            return Err(TabularError::TooLarge {
                states: self.num_states,
                actions: self.num_actions,
                horizon: self.horizon,
            });
        }
        Ok(())
    }

    /// Builds the episode a trajectory corresponds to, logging behaviour
    /// log-probabilities from `behavior[s][a]`.
    pub fn to_episode(&self, traj: &Trajectory, behavior: &[Vec<f64>]) -> Episode {
        let len = traj.actions.len();
        let transitions = (0..len)
            .map(|t| {
                let (s, a, next) = (traj.states[t], traj.actions[t], traj.states[t + 1]);
                let timeout = t + 1 >= self.horizon;
                let terminal = self.terminal[next] || timeout;
                let reason = if self.terminal[next] {
                    self.reason[next]
                } else if timeout {
                    TerminationReason::Timeout
                } else {
                    TerminationReason::Running
                };
                Transition {
                    state: self.one_hot(s),
                    action: vec![a as f64],
                    next_state: self.one_hot(next),
                    reward: self.reward[next],
                    train_reward: self.reward[next],
                    costs: self.costs[next].clone(),
                    behavior_logprob: libm::log(behavior[s][a]),
                    terminal,
                    reason,
                }
            })
            .collect();
        Episode {
            transitions,
            gamma: self.gamma,
            horizon: self.horizon,
        }
    }
}

/// State sequence `s_0 .. s_T` and the actions between them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
}

impl Trajectory {
    /// `Σ_t γ^t C_i(s_{t+1})`.
    pub fn discounted_cost(&self, m: &TabularCmdp, i: usize) -> f64 {
        let mut acc = 0.0;
        let mut disc = 1.0;
        for next in &self.states[1..] {
            if m.costs[*next][i] {
                acc += disc;
            }
            disc *= m.gamma;
        }
        acc
    }
}

/// Every trajectory with nonzero probability under the tabular policy
/// `policy[s][a]`, with its probability.
pub fn enumerate_trajectories(
    m: &TabularCmdp,
    policy: &[Vec<f64>],
) -> Result<Vec<(Trajectory, f64)>, TabularError> {
    m.check_enumerable()?;
    if policy.len() != m.num_states || policy.iter().any(|row| row.len() != m.num_actions) {
        return Err(TabularError::Shape("policy"));
    }
    let mut out = Vec::new();
    let mut stack: Vec<(Trajectory, f64)> = (0..m.num_states)
        .filter(|s| m.initial[*s] > 0.0)
        .map(|s| {
            (
                Trajectory {
                    states: vec![s],
                    actions: Vec::new(),
                },
                m.initial[s],
            )
        })
        .collect();
    while let Some((traj, prob)) = stack.pop() {
        let s = *traj.states.last().expect("non-empty");
        let t = traj.actions.len();
        if t >= m.horizon || (t > 0 && m.terminal[s]) {
            out.push((traj, prob));
            if out.len() > MAX_TRAJECTORIES {
                return Err(TabularError::TooManyTrajectories(MAX_TRAJECTORIES));
            }
            continue;
        }
        for a in 0..m.num_actions {
            let pa = policy[s][a];
            if pa == 0.0 {
                continue;
            }
            for next in 0..m.num_states {
                let pn = m.p(s, a, next);
                if pn == 0.0 {
                    continue;
                }
                let mut child = traj.clone();
                child.states.push(next);
                child.actions.push(a);
                stack.push((child, prob * pa * pn));
            }
        }
    }
    Ok(out)
}

/// Sampling wrapper over a tabular CMDP.
#[derive(Debug, Clone)]
pub struct TabularEnv {
    pub cmdp: TabularCmdp,
    state: usize,
}

impl TabularEnv {
    pub fn new(cmdp: TabularCmdp) -> Self {
        TabularEnv { cmdp, state: 0 }
    }

    pub fn state(&self) -> usize {
        self.state
    }
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

impl FeatureMap for TabularEnv {
    fn feature_names(&self) -> Vec<String> {
        self.cmdp.feature_names.clone()
    }

    fn features(&self, obs: &[f64]) -> Vec<f64> {
        self.cmdp.features[TabularCmdp::state_index(obs)].clone()
    }
}

impl Environment for TabularEnv {
    fn observation_dim(&self) -> usize {
        self.cmdp.num_states
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete {
            n: self.cmdp.num_actions,
        }
    }

    fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        self.state = sample_index(&self.cmdp.initial, rng);
        self.cmdp.one_hot(self.state)
    }

    fn step<R: Rng + ?Sized>(&mut self, action: &[f64], rng: &mut R) -> Result<Vec<f64>, EnvError> {
        let a = *action.first().ok_or(EnvError::InvalidAction)?;
        if !(a >= 0.0 && (a as usize) < self.cmdp.num_actions) {
            return Err(EnvError::InvalidAction);
        }
        self.state = sample_index(self.cmdp.row(self.state, a as usize), rng);
        Ok(self.cmdp.one_hot(self.state))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_task;

    /// Two states; action 0 stays, action 1 moves to the other state with
    /// probability 0.7. State 1 is the goal (conquer).
    fn two_state(horizon: usize) -> TabularCmdp {
        let task = parse_task("task t\nstate g\nconquer g >= 0 bounds [-1, 1]\n").unwrap();
        let transitions = vec![
            1.0, 0.0, 0.3, 0.7, //
            0.0, 1.0, 0.7, 0.3,
        ];
        TabularCmdp::from_task(
            &task,
            vec!["g".into()],
            vec![vec![-1.0], vec![1.0]],
            2,
            transitions,
            vec![1.0, 0.0],
            0.9,
            horizon,
        )
        .unwrap()
    }

    #[test]
    fn deterministic_policy_on_deterministic_rows() {
        let m = two_state(4);
        let trajs = enumerate_trajectories(&m, &[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(trajs.len(), 1);
        assert_eq!(trajs[0].1, 1.0);
        assert_eq!(trajs[0].0.states, vec![0; 5]);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let m = two_state(3);
        let trajs = enumerate_trajectories(&m, &[vec![0.4, 0.6], vec![0.5, 0.5]]).unwrap();
        let total: f64 = trajs.iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
        // 2 actions × 2 successors (only one for action 0) per step
        assert_eq!(trajs.len(), 27);
    }

    #[test]
    fn rejects_non_stochastic_rows() {
        let mut m = two_state(3);
        m.transitions[0] = 0.9;
        assert!(matches!(
            m.validate(),
            Err(TabularError::RowNotStochastic {
                state: 0,
                action: 0,
                ..
            })
        ));
    }

    #[test]
    fn enumeration_cap() {
        let m = two_state(7);
        assert!(matches!(
            enumerate_trajectories(&m, &[vec![0.5, 0.5], vec![0.5, 0.5]]),
            Err(TabularError::TooLarge { .. })
        ));
    }

    #[test]
    fn episodes_from_trajectories() {
        let m = two_state(2);
        let traj = Trajectory {
            states: vec![0, 1, 1],
            actions: vec![1, 0],
        };
        let e = m.to_episode(&traj, &[vec![0.5, 0.5], vec![0.5, 0.5]]);
        e.validate().unwrap();
        assert_eq!(e.final_reason(), TerminationReason::Timeout);
        assert!((e.discounted_return() - 1.9).abs() < 1e-12);
    }
}
