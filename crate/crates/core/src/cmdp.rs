//! Constrained MDP compiled from a task: sparse target reward, one binary
//! cost per safety requirement, and episode termination on safety
//! violation, timeout or (for `achieve` targets) goal achievement.

use alloc::vec::Vec;

use crate::dsl::{Requirement, RequirementClass, RequirementKind, TaskSpec};
use crate::hprs::PotentialContext;
use crate::semantics::EpisodeTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TerminationReason {
    SafetyViolation,
    Timeout,
    GoalAchieved,
    Running,
}

impl TerminationReason {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminationReason::SafetyViolation => "safety_violation",
            TerminationReason::Timeout => "timeout",
            TerminationReason::GoalAchieved => "goal_achieved",
            TerminationReason::Running => "running",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            TerminationReason::SafetyViolation,
            TerminationReason::Timeout,
            TerminationReason::GoalAchieved,
            TerminationReason::Running,
        ]
        .into_iter()
        .find(|r| r.as_str() == s)
    }
}

/// One environment step. `state`/`next_state` are policy observations;
/// `reward` is the sparse task reward and `train_reward` the signal the
/// learner optimizes (shaped, penalized, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub train_reward: f64,
    pub costs: Vec<bool>,
    pub behavior_logprob: f64,
    pub terminal: bool,
    pub reason: TerminationReason,
}

impl Transition {
    pub fn cost(&self, i: usize) -> f64 {
        if self.costs[i] {
            1.0
        } else {
            0.0
        }
    }
}

/// A finished (or truncated) episode. Post-terminal steps are implicit and
/// contribute nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub transitions: Vec<Transition>,
    pub gamma: f64,
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EpisodeError {
    #[error("terminal transition at step {0} is not the last")]
    TerminalNotLast(usize),
    #[error("safety termination at step {0} without a cost")]
    ViolationWithoutCost(usize),
    #[error("step {0} records a cost but the episode continues")]
    CostWithoutTermination(usize),
    #[error("step {0} exceeds the horizon")]
    BeyondHorizon(usize),
}

impl Episode {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn num_constraints(&self) -> usize {
        self.transitions.first().map_or(0, |t| t.costs.len())
    }

    pub fn final_reason(&self) -> TerminationReason {
        self.transitions
            .last()
            .map_or(TerminationReason::Running, |t| t.reason)
    }

    /// `Σ_t γ^t C_i`.
    pub fn discounted_cost(&self, i: usize) -> f64 {
        discounted_sum(self.gamma, self.transitions.iter().map(|t| t.cost(i)))
    }

    /// `Σ_t γ^t R`.
    pub fn discounted_return(&self) -> f64 {
        discounted_sum(self.gamma, self.transitions.iter().map(|t| t.reward))
    }

    pub fn discounted_train_return(&self) -> f64 {
        discounted_sum(self.gamma, self.transitions.iter().map(|t| t.train_reward))
    }

    pub fn undiscounted_return(&self) -> f64 {
        self.transitions.iter().map(|t| t.reward).sum()
    }

    /// Structural invariants: at most one terminal transition, placed last;
    /// costs only on the terminal safety step.
    pub fn validate(&self) -> Result<(), EpisodeError> {
        let last = self.transitions.len().saturating_sub(1);
        for (step, t) in self.transitions.iter().enumerate() {
            if step >= self.horizon {
                return Err(EpisodeError::BeyondHorizon(step));
            }
            if t.terminal && step != last {
                return Err(EpisodeError::TerminalNotLast(step));
            }
            let any_cost = t.costs.iter().any(|c| *c);
            if t.reason == TerminationReason::SafetyViolation && !any_cost {
                return Err(EpisodeError::ViolationWithoutCost(step));
            }
            if any_cost && !t.terminal {
                return Err(EpisodeError::CostWithoutTermination(step));
            }
        }
        Ok(())
    }

    /// States `s_0 .. s_T` mapped through `features`.
    pub fn trace<F: Fn(&[f64]) -> Vec<f64>>(
        &self,
        features: F,
        dim: usize,
    ) -> Option<EpisodeTrace> {
        let first = self.transitions.first()?;
        let states = core::iter::once(features(&first.state))
            .chain(self.transitions.iter().map(|t| features(&t.next_state)))
            .collect();
        EpisodeTrace::new(states, dim).ok()
    }
}

fn discounted_sum(gamma: f64, values: impl Iterator<Item = f64>) -> f64 {
    let mut discount = 1.0;
    let mut total = 0.0;
    for v in values {
        total += discount * v;
        discount *= gamma;
    }
    total
}

pub fn discounted_cost(e: &Episode, i: usize) -> f64 {
    e.discounted_cost(i)
}

pub fn discounted_return(e: &Episode) -> f64 {
    e.discounted_return()
}

/// `R(s, a, s') = 1` iff the transition is safe and `s'` satisfies the target.
pub fn sparse_reward(target: &Requirement, next_features: &[f64], safe: bool) -> f64 {
    if safe && target.predicate.holds(next_features) {
        1.0
    } else {
        0.0
    }
}

/// `C_i(s, a, s') = 1` iff `s'` violates the i-th safety requirement.
pub fn step_costs(safety: &[&Requirement], next_features: &[f64]) -> Vec<bool> {
    safety
        .iter()
        .map(|r| !r.predicate.holds(next_features))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmdpConfig {
    pub gamma: f64,
    pub horizon: usize,
    /// Per-constraint thresholds `d_i`.
    pub thresholds: Vec<f64>,
}

impl CmdpConfig {
    pub fn with_defaults(num_constraints: usize) -> Self {
        CmdpConfig {
            gamma: 0.99,
            horizon: 200,
            thresholds: alloc::vec![0.1; num_constraints],
        }
    }
}

/// How the learner's reward is derived from the task reward.
#[derive(Debug, Clone, PartialEq)]
pub enum Shaping {
    None,
    Hprs(PotentialContext),
}

/// Outcome of entering `s'`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub train_reward: f64,
    pub costs: Vec<bool>,
    pub terminal: bool,
    pub reason: TerminationReason,
}

/// Task compiled against an environment's feature vector.
#[derive(Debug, Clone)]
pub struct Cmdp {
    task: TaskSpec,
    config: CmdpConfig,
    shaping: Shaping,
}

impl Cmdp {
    /// `task` must already be bound to the feature layout the outcomes are
    /// evaluated on (see [`TaskSpec::rebind`]).
    pub fn new(task: TaskSpec, config: CmdpConfig, shaping: bool) -> Self {
        let shaping = if shaping {
            Shaping::Hprs(PotentialContext::new(&task, config.gamma))
        } else {
            Shaping::None
        };
        Cmdp {
            task,
            config,
            shaping,
        }
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn config(&self) -> &CmdpConfig {
        &self.config
    }

    pub fn shaping(&self) -> &Shaping {
        &self.shaping
    }

    pub fn num_constraints(&self) -> usize {
        self.task.num_constraints()
    }

    /// Same task and shaping with a different episode horizon.
    pub fn with_horizon(&self, horizon: usize) -> Cmdp {
        let mut m = self.clone();
        m.config.horizon = horizon;
        m
    }

    /// Evaluates step `t` (0-based) which moves from features `current` to
    /// `next`. Safety is checked first; an achieve target reached at the
    /// timeout step counts as goal achievement.
    pub fn outcome(&self, t: usize, current: &[f64], next: &[f64]) -> StepOutcome {
        let safety: Vec<&Requirement> = self.task.of_class(RequirementClass::Safety).collect();
        let costs = step_costs(&safety, next);
        let safe = !costs.iter().any(|c| *c);
        let target = self.task.target();
        let reward = sparse_reward(target, next, safe);
        let (terminal, reason) = if !safe {
            (true, TerminationReason::SafetyViolation)
        } else if target.kind == RequirementKind::Achieve && reward > 0.0 {
            (true, TerminationReason::GoalAchieved)
        } else if t + 1 >= self.config.horizon {
            (true, TerminationReason::Timeout)
        } else {
            (false, TerminationReason::Running)
        };
        let train_reward = match &self.shaping {
            Shaping::None => reward,
            Shaping::Hprs(ctx) => ctx.shaped_reward(reward, current, next, terminal),
        };
        StepOutcome {
            reward,
            train_reward,
            costs,
            terminal,
            reason,
        }
    }

    /// Whether the features satisfy every safety requirement.
    pub fn is_safe(&self, features: &[f64]) -> bool {
        self.task
            .of_class(RequirementClass::Safety)
            .all(|r| r.predicate.holds(features))
    }
}
