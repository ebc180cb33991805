//! Exact oracles on small tabular CMDPs: value iteration under the sparse or
//! shaped reward, policy costs by trajectory enumeration and by dynamic
//! programming, and a Monte-Carlo coverage experiment for the release gate.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cmdp::Episode;
use crate::dsl::parse_task;
use crate::env::{enumerate_trajectories, TabularCmdp, TabularError, Trajectory};
use crate::hcope::{hcope_gate, on_policy_thresholds, HcopeError, ReleaseThresholds};
use crate::policy::{Policy, PolicyError};

pub const MAX_VI_STATES: usize = 4096;
const VI_TOLERANCE: f64 = 1e-12;
const VI_MAX_SWEEPS: usize = 200_000;
const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("value iteration did not converge in {0} sweeps")]
    NoConvergence(usize),
    #[error("instance has {0} states, above the oracle limit")]
    TooLarge(usize),
    #[error(transparent)]
    Tabular(#[from] TabularError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Hcope(#[from] HcopeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardVariant {
    Sparse,
    /// Sparse reward plus `γΨ(s') - Ψ(s)`, with `Ψ = 0` once absorbed.
    Shaped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub values: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    /// Optimal actions per state, ties kept.
    pub greedy: Vec<Vec<usize>>,
    /// Sup-norm change of each sweep.
    pub residuals: Vec<f64>,
}

fn q_values(m: &TabularCmdp, v: &[f64], variant: RewardVariant, s: usize) -> Vec<f64> {
    (0..m.num_actions)
        .map(|a| {
            m.row(s, a)
                .iter()
                .enumerate()
                .filter(|(_, p)| **p > 0.0)
                .map(|(next, p)| {
                    let absorbed = m.terminal[next];
                    let cont = if absorbed { 0.0 } else { v[next] };
                    let shaping = match variant {
                        RewardVariant::Sparse => 0.0,
                        RewardVariant::Shaped => {
                            let psi_next = if absorbed { 0.0 } else { m.potential[next] };
                            m.gamma * psi_next - m.potential[s]
                        }
                    };
                    p * (m.reward[next] + shaping + m.gamma * cont)
                })
                .sum()
        })
        .collect()
}

/// Infinite-horizon discounted optimal values. Requires `γ < 1` unless
/// every policy is absorbed.
pub fn value_iteration(m: &TabularCmdp, variant: RewardVariant) -> Result<ValueTable, OracleError> {
    if m.num_states > MAX_VI_STATES {
        return Err(OracleError::TooLarge(m.num_states));
    }
    let n = m.num_states;
    let mut v = vec![0.0; n];
    let mut residuals = Vec::new();
    for _ in 0..VI_MAX_SWEEPS {
        let next: Vec<f64> = (0..n)
            .map(|s| {
                q_values(m, &v, variant, s)
                    .into_iter()
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let res = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        residuals.push(res);
        v = next;
        if res <= VI_TOLERANCE {
            let q: Vec<Vec<f64>> = (0..n).map(|s| q_values(m, &v, variant, s)).collect();
            let greedy = q.iter().map(|row| greedy_set(row)).collect();
            return Ok(ValueTable {
                values: v,
                q,
                greedy,
                residuals,
            });
        }
    }
    Err(OracleError::NoConvergence(VI_MAX_SWEEPS))
}

fn greedy_set(q: &[f64]) -> Vec<usize> {
    let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = TIE_TOLERANCE * best.abs().max(1.0);
    (0..q.len()).filter(|a| best - q[*a] <= tol).collect()
}

/// Whether two value tables agree on the optimal action sets of every
/// non-terminal state.
pub fn same_greedy(m: &TabularCmdp, a: &ValueTable, b: &ValueTable) -> bool {
    (0..m.num_states).all(|s| m.terminal[s] || a.greedy[s] == b.greedy[s])
}

/// `V_{C_i}^π` over the finite horizon by full enumeration.
pub fn exact_policy_cost(
    m: &TabularCmdp,
    policy: &[Vec<f64>],
    i: usize,
) -> Result<f64, OracleError> {
    Ok(enumerate_trajectories(m, policy)?
        .iter()
        .map(|(traj, p)| p * traj.discounted_cost(m, i))
        .sum())
}

/// Discounted return over the finite horizon by full enumeration.
pub fn exact_policy_return(m: &TabularCmdp, policy: &[Vec<f64>]) -> Result<f64, OracleError> {
    Ok(enumerate_trajectories(m, policy)?
        .iter()
        .map(|(traj, p)| {
            let mut disc = 1.0;
            let mut acc = 0.0;
            for s in &traj.states[1..] {
                acc += disc * m.reward[*s];
                disc *= m.gamma;
            }
            p * acc
        })
        .sum())
}

/// `V_{C_i}^π` by backward induction; no size cap.
pub fn policy_cost_dp(m: &TabularCmdp, policy: &[Vec<f64>], i: usize) -> f64 {
    let n = m.num_states;
    let mut v = vec![0.0; n];
    for _ in 0..m.horizon {
        v = (0..n)
            .map(|s| {
                (0..m.num_actions)
                    .map(|a| {
                        policy[s][a]
                            * m.row(s, a)
                                .iter()
                                .enumerate()
                                .map(|(next, p)| {
                                    let c = if m.costs[next][i] { 1.0 } else { 0.0 };
                                    let cont = if m.terminal[next] { 0.0 } else { v[next] };
                                    p * (c + m.gamma * cont)
                                })
                                .sum::<f64>()
                    })
                    .sum()
            })
            .collect();
    }
    m.initial.iter().zip(&v).map(|(p, x)| p * x).sum()
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

/// Draws one trajectory of a tabular policy directly from the tables.
pub fn sample_trajectory<R: Rng + ?Sized>(
    m: &TabularCmdp,
    policy: &[Vec<f64>],
    rng: &mut R,
) -> Trajectory {
    let mut s = sample_index(&m.initial, rng);
    let mut traj = Trajectory {
        states: vec![s],
        actions: Vec::new(),
    };
    for _ in 0..m.horizon {
        let a = sample_index(&policy[s], rng);
        s = sample_index(m.row(s, a), rng);
        traj.states.push(s);
        traj.actions.push(a);
        if m.terminal[s] {
            break;
        }
    }
    traj
}

/// `n` behaviour episodes with logged log-probabilities.
pub fn sample_episodes<R: Rng + ?Sized>(
    m: &TabularCmdp,
    policy: &[Vec<f64>],
    n: usize,
    rng: &mut R,
) -> Vec<Episode> {
    (0..n)
        .map(|_| m.to_episode(&sample_trajectory(m, policy, rng), policy))
        .collect()
}

/// A tabular instance with a behaviour and a candidate policy.
#[derive(Debug, Clone)]
pub struct CoverageConfig {
    pub instance: TabularCmdp,
    pub behavior: Policy,
    pub candidate: Policy,
    pub episodes: usize,
    pub repetitions: usize,
    pub delta: f64,
    pub seed: u64,
    pub thresholds: CoverageThresholds,
}

/// Where the release thresholds come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoverageThresholds {
    /// The behaviour policy's exact costs.
    Exact,
    /// On-policy upper bounds computed from each repetition's own data.
    SelfBound,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub behavior_costs: Vec<f64>,
    pub candidate_costs: Vec<f64>,
    /// Whether the candidate is truly worse on at least one constraint.
    pub candidate_worse: bool,
    pub passes: usize,
    pub repetitions: usize,
}

impl CoverageReport {
    pub fn pass_rate(&self) -> f64 {
        self.passes as f64 / self.repetitions as f64
    }

    /// Rate of passes that release a truly worse candidate.
    pub fn false_pass_rate(&self) -> f64 {
        if self.candidate_worse {
            self.pass_rate()
        } else {
            0.0
        }
    }
}

impl CoverageConfig {
    /// Exact costs of behaviour and candidate per constraint.
    pub fn true_costs(&self) -> Result<(Vec<f64>, Vec<f64>), OracleError> {
        let m = &self.instance;
        let pb = self.behavior.tabulate(m.num_states)?;
        let pc = self.candidate.tabulate(m.num_states)?;
        let k = m.num_constraints();
        let b = (0..k)
            .map(|i| exact_policy_cost(m, &pb, i))
            .collect::<Result<Vec<_>, _>>()?;
        let c = (0..k)
            .map(|i| exact_policy_cost(m, &pc, i))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((b, c))
    }

    /// One repetition: fresh behaviour data gated against `thresholds`
    /// (ignored in [`CoverageThresholds::SelfBound`] mode). Seeded by `(seed, rep)` so repetitions can run in any
    /// order.
    pub fn repetition(
        &self,
        rep: u64,
        behavior_probs: &[Vec<f64>],
        thresholds: &ReleaseThresholds,
    ) -> bool {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(rep);
        let batch = sample_episodes(&self.instance, behavior_probs, self.episodes, &mut rng);
        let k = self.instance.num_constraints();
        match self.thresholds {
            CoverageThresholds::Exact => {
                hcope_gate(&self.candidate, &batch, thresholds, self.delta, k).pass
            }
            CoverageThresholds::SelfBound => match on_policy_thresholds(&batch, k, self.delta) {
                Ok(own) => hcope_gate(&self.candidate, &batch, &own, self.delta, k).pass,
                Err(_) => false,
            },
        }
    }

    /// Serial run of every repetition.
    pub fn run(&self) -> Result<CoverageReport, OracleError> {
        let (behavior_costs, candidate_costs) = self.true_costs()?;
        let thresholds = ReleaseThresholds::new(behavior_costs.clone())?;
        let probs = self.behavior.tabulate(self.instance.num_states)?;
        let passes = (0..self.repetitions as u64)
            .filter(|rep| self.repetition(*rep, &probs, &thresholds))
            .count();
        Ok(self.report(behavior_costs, candidate_costs, passes))
    }

    pub fn report(
        &self,
        behavior_costs: Vec<f64>,
        candidate_costs: Vec<f64>,
        passes: usize,
    ) -> CoverageReport {
        let candidate_worse = candidate_costs
            .iter()
            .zip(&behavior_costs)
            .any(|(c, b)| c > b);
        CoverageReport {
            behavior_costs,
            candidate_costs,
            candidate_worse,
            passes,
            repetitions: self.repetitions,
        }
    }
}

/// Random-instance knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomInstance {
    pub max_states: usize,
    pub max_actions: usize,
    pub horizon: usize,
}

impl Default for RandomInstance {
    fn default() -> Self {
        RandomInstance {
            max_states: 8,
            max_actions: 4,
            horizon: 6,
        }
    }
}

const RANDOM_TASK: &str = "\
task random
state g u c1 c2
TARGET g >= 0 bounds [-1, 1]
ensure u >= 0 bounds [-1, 1]
encourage c1 >= 0 bounds [-1, 1]
encourage c2 >= 0 bounds [-1, 1]
";

impl RandomInstance {
    /// A random CMDP over random per-state features with one safety, one
    /// target and two comfort requirements. State 0 is a safe non-goal start.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<TabularCmdp, OracleError> {
        let n = rng.random_range(2..=self.max_states.max(2));
        let k = rng.random_range(1..=self.max_actions.max(1));
        let kind = if rng.random_bool(0.5) {
            "achieve"
        } else {
            "conquer"
        };
        let task = parse_task(&RANDOM_TASK.replace("TARGET", kind)).expect("random task parses");
        let mut features: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        features[0][0] = -features[0][0].abs() - 0.01;
        features[0][1] = features[0][1].abs();
        let mut transitions = Vec::with_capacity(n * k * n);
        for _ in 0..n * k {
            let mut row: Vec<f64> = (0..n)
                .map(|_| {
                    if rng.random_bool(0.6) {
                        rng.random_range(0.0..1.0)
                    } else {
                        0.0
                    }
                })
                .collect();
            if row.iter().all(|p| *p == 0.0) {
                row[rng.random_range(0..n)] = 1.0;
            }
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= sum);
            transitions.extend(row);
        }
        let gamma = if rng.random_bool(0.1) {
            0.0
        } else {
            rng.random_range(0.5..0.99)
        };
        let mut initial = vec![0.0; n];
        initial[0] = 1.0;
        let names = ["g", "u", "c1", "c2"]
            .iter()
            .map(|s| String::from(*s))
            .collect();
        Ok(TabularCmdp::from_task(
            &task,
            names,
            features,
            k,
            transitions,
            initial,
            gamma,
            self.horizon,
        )?)
    }
}

/// A chain of `n` cells with a pit at 0 and the goal at `n - 1`; see
/// [`crate::env::chain_oracle`] for the five-cell preset.
pub fn random_chain<R: Rng + ?Sized>(rng: &mut R) -> Result<TabularCmdp, OracleError> {
    let n = rng.random_range(3..=8usize);
    let slip = rng.random_range(0.0..0.4);
    let gamma = rng.random_range(0.5..0.99);
    let task = parse_task(&format!(
        "task chain\nstate pos\nachieve pos >= {g} bounds [-{g}, 0]\nensure pos >= 1 bounds [-1, {h}]\nencourage pos >= {c} bounds [-{c}, {c}]\n",
        g = n - 1,
        h = n - 2,
        c = (n - 1) / 2
    ))
    .expect("chain task parses");
    let mut transitions = vec![0.0; n * 2 * n];
    for s in 0..n {
        for a in 0..2 {
            let row = &mut transitions[(s * 2 + a) * n..(s * 2 + a + 1) * n];
            let left = s.saturating_sub(1);
            let right = (s + 1).min(n - 1);
            let (intended, other) = if a == 0 { (left, right) } else { (right, left) };
            row[intended] += 1.0 - slip;
            row[other] += slip;
        }
    }
    let mut initial = vec![0.0; n];
    initial[1] = 1.0;
    Ok(TabularCmdp::from_task(
        &task,
        vec![String::from("pos")],
        (0..n).map(|s| vec![s as f64]).collect(),
        2,
        transitions,
        initial,
        gamma,
        6,
    )?)
}
