//! Stochastic policies: an MLP body with either a diagonal Gaussian head
//! (state-independent log-std) for continuous actions or a softmax head for
//! discrete ones. Discrete actions are encoded as a one-element vector
//! holding the action index.

mod vpg;

pub use vpg::{advantages, policy_gradient, vpg_update, vpg_update_with};

use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, log};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::nn::MlpShape;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Gaussian { action_dim: usize },
    Softmax { num_actions: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub head: Head,
}

impl Architecture {
    /// Two tanh layers of 32 units with a Gaussian head.
    pub fn gaussian(input_dim: usize, action_dim: usize) -> Self {
        Architecture {
            input_dim,
            hidden: vec![32, 32],
            head: Head::Gaussian { action_dim },
        }
    }

    /// Softmax over logits linear in a one-hot state encoding.
    pub fn tabular(num_states: usize, num_actions: usize) -> Self {
        Architecture {
            input_dim: num_states,
            hidden: Vec::new(),
            head: Head::Softmax { num_actions },
        }
    }

    pub fn body(&self) -> MlpShape {
        let out = match self.head {
            Head::Gaussian { action_dim } => action_dim,
            Head::Softmax { num_actions } => num_actions,
        };
        MlpShape::new(self.input_dim, &self.hidden, out)
    }

    fn log_std_len(&self) -> usize {
        match self.head {
            Head::Gaussian { action_dim } => action_dim,
            Head::Softmax { .. } => 0,
        }
    }

    pub fn num_params(&self) -> usize {
        self.body().num_params() + self.log_std_len()
    }

    /// Length of an action vector.
    pub fn action_len(&self) -> usize {
        match self.head {
            Head::Gaussian { action_dim } => action_dim,
            Head::Softmax { .. } => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("expected {expected} parameters, got {got}")]
    ParamCount { expected: usize, got: usize },
    #[error("state has {got} entries, network expects {expected}")]
    StateDim { expected: usize, got: usize },
    #[error("network produced a non-finite output")]
    NonFiniteOutput,
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("non-finite parameters")]
    NonFiniteParams,
    #[error("empty batch")]
    EmptyBatch,
}

impl PolicyError {
    /// Numerical blow-up, as opposed to a malformed input.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            PolicyError::NonFiniteOutput
                | PolicyError::NonFiniteGradient
                | PolicyError::NonFiniteParams
        )
    }
}

/// Gradient vector aligned with the flat parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub g: Vec<f64>,
    pub batch_size: usize,
}

/// Action distribution at one state.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionDistribution {
    Gaussian { mean: Vec<f64>, log_std: Vec<f64> },
    Categorical { probs: Vec<f64> },
}

/// Parameter snapshot of a policy. Updates return new snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    arch: Architecture,
    params: Vec<f64>,
}

/// Alias matching the parameter-vector view of a policy.
pub type PolicyParams = Policy;

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + log(logits.iter().map(|l| exp(l - max)).sum::<f64>());
    logits.iter().map(|l| l - lse).collect()
}

impl Policy {
    pub fn new(arch: Architecture, params: Vec<f64>) -> Result<Self, PolicyError> {
        let expected = arch.num_params();
        if params.len() != expected {
            return Err(PolicyError::ParamCount {
                expected,
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(PolicyError::NonFiniteParams);
        }
        Ok(Policy { arch, params })
    }

    pub fn zeros(arch: Architecture) -> Self {
        let params = vec![0.0; arch.num_params()];
        Policy { arch, params }
    }

    /// Random body weights with a small output layer (near-zero mean or
    /// near-uniform logits) and the given initial log-std.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R, log_std: f64) -> Self {
        let mut params = arch.body().init(rng, 0.01);
        params.extend(core::iter::repeat_n(
            log_std.clamp(LOG_STD_MIN, LOG_STD_MAX),
            arch.log_std_len(),
        ));
        Policy { arch, params }
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn with_params(&self, params: Vec<f64>) -> Result<Self, PolicyError> {
        Policy::new(self.arch.clone(), params)
    }

    fn body_len(&self) -> usize {
        self.params.len() - self.arch.log_std_len()
    }

    /// Effective (clamped) log standard deviations of the Gaussian head.
    pub fn log_std(&self) -> Vec<f64> {
        self.params[self.body_len()..]
            .iter()
            .map(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX))
            .collect()
    }

    fn check_state(&self, state: &[f64]) -> Result<(), PolicyError> {
        if state.len() != self.arch.input_dim {
            return Err(PolicyError::StateDim {
                expected: self.arch.input_dim,
                got: state.len(),
            });
        }
        Ok(())
    }

    pub fn distribution(&self, state: &[f64]) -> Result<ActionDistribution, PolicyError> {
        self.check_state(state)?;
        let acts = self
            .arch
            .body()
            .forward(&self.params[..self.body_len()], state);
        let out = acts.output();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(PolicyError::NonFiniteOutput);
        }
        Ok(match self.arch.head {
            Head::Gaussian { .. } => ActionDistribution::Gaussian {
                mean: out.to_vec(),
                log_std: self.log_std(),
            },
            Head::Softmax { .. } => ActionDistribution::Categorical {
                probs: log_softmax(out).into_iter().map(exp).collect(),
            },
        })
    }

    /// Draws `a ~ π(·|s)` and returns it with `log π(a|s)`.
    pub fn sample_action<R: Rng + ?Sized>(
        &self,
        state: &[f64],
        rng: &mut R,
    ) -> Result<(Vec<f64>, f64), PolicyError> {
        let action = match self.distribution(state)? {
            ActionDistribution::Gaussian { mean, log_std } => mean
                .iter()
                .zip(&log_std)
                .map(|(m, ls)| {
                    let z: f64 = StandardNormal.sample(rng);
                    m + exp(*ls) * z
                })
                .collect(),
            ActionDistribution::Categorical { probs } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut choice = probs.len() - 1;
                for (i, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        choice = i;
                        break;
                    }
                }
                vec![choice as f64]
            }
        };
        let logprob = self.log_prob(state, &action);
        Ok((action, logprob))
    }

    /// Mode of the distribution (mean or argmax).
    pub fn greedy_action(&self, state: &[f64]) -> Result<Vec<f64>, PolicyError> {
        Ok(match self.distribution(state)? {
            ActionDistribution::Gaussian { mean, .. } => mean,
            ActionDistribution::Categorical { probs } => {
                let best = probs
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (i, p)| {
                        if *p > acc.1 {
                            (i, *p)
                        } else {
                            acc
                        }
                    });
                vec![best.0 as f64]
            }
        })
    }

    /// `log π(a|s)`. Non-finite network output yields `-∞`.
    pub fn log_prob(&self, state: &[f64], action: &[f64]) -> f64 {
        if self.check_state(state).is_err() {
            return f64::NEG_INFINITY;
        }
        let acts = self
            .arch
            .body()
            .forward(&self.params[..self.body_len()], state);
        self.log_prob_from_output(acts.output(), action)
    }

    fn log_prob_from_output(&self, out: &[f64], action: &[f64]) -> f64 {
        match self.arch.head {
            Head::Gaussian { .. } => {
                let log_std = self.log_std();
                out.iter()
                    .zip(&log_std)
                    .zip(action)
                    .map(|((m, ls), a)| {
                        let z = (a - m) / exp(*ls);
                        -0.5 * LN_2PI - ls - 0.5 * z * z
                    })
                    .sum()
            }
            Head::Softmax { num_actions } => {
                let idx = action[0] as usize;
                if idx >= num_actions {
                    return f64::NEG_INFINITY;
                }
                log_softmax(out)[idx]
            }
        }
    }

    /// Adds `scale · ∇_θ log π(a|s)` into `grad`.
    pub fn accumulate_grad_log_prob(
        &self,
        state: &[f64],
        action: &[f64],
        scale: f64,
        grad: &mut [f64],
    ) {
        let body = self.arch.body();
        let body_len = self.body_len();
        let acts = body.forward(&self.params[..body_len], state);
        let out = acts.output();
        let grad_out: Vec<f64> = match self.arch.head {
            Head::Gaussian { .. } => {
                let raw = &self.params[body_len..];
                let mut g_out = Vec::with_capacity(out.len());
                for (j, ((m, a), ls_raw)) in out.iter().zip(action).zip(raw).enumerate() {
                    let ls = ls_raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
                    let var = exp(2.0 * ls);
                    g_out.push((a - m) / var);
                    if (LOG_STD_MIN..=LOG_STD_MAX).contains(ls_raw) {
                        let z2 = (a - m) * (a - m) / var;
                        grad[body_len + j] += scale * (z2 - 1.0);
                    }
                }
                g_out
            }
            Head::Softmax { .. } => {
                let idx = action[0] as usize;
                log_softmax(out)
                    .into_iter()
                    .enumerate()
                    .map(|(i, lp)| f64::from(u8::from(i == idx)) - exp(lp))
                    .collect()
            }
        };
        body.backward(
            &self.params[..body_len],
            &acts,
            &grad_out,
            scale,
            &mut grad[..body_len],
        );
    }

    /// `∇_θ log π(a|s)`.
    pub fn grad_log_prob(&self, state: &[f64], action: &[f64]) -> GradientEstimate {
        let mut g = vec![0.0; self.params.len()];
        self.accumulate_grad_log_prob(state, action, 1.0, &mut g);
        GradientEstimate { g, batch_size: 1 }
    }

    /// `θ + lr · g`, with the log-std projected back into its band.
    pub fn ascend(&self, grad: &GradientEstimate, lr: f64) -> Result<Policy, PolicyError> {
        if grad.g.iter().any(|g| !g.is_finite()) {
            return Err(PolicyError::NonFiniteGradient);
        }
        let body_len = self.body_len();
        let mut params: Vec<f64> = self
            .params
            .iter()
            .zip(&grad.g)
            .map(|(p, g)| p + lr * g)
            .collect();
        for ls in &mut params[body_len..] {
            *ls = ls.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
        Policy::new(self.arch.clone(), params)
    }

    /// Tabular action probabilities for one-hot encoded states.
    pub fn tabulate(&self, num_states: usize) -> Result<Vec<Vec<f64>>, PolicyError> {
        (0..num_states)
            .map(|s| {
                let mut onehot = vec![0.0; num_states];
                onehot[s] = 1.0;
                match self.distribution(&onehot)? {
                    ActionDistribution::Categorical { probs } => Ok(probs),
                    ActionDistribution::Gaussian { .. } => Err(PolicyError::NonFiniteOutput),
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_gaussian(seed: u64) -> (Policy, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = Architecture {
            input_dim: 3,
            hidden: vec![6, 5],
            head: Head::Gaussian { action_dim: 2 },
        };
        let mut policy = Policy::init(arch, &mut rng, -0.3);
        // larger output layer so the mean path is exercised
        let params: Vec<f64> = policy
            .params()
            .iter()
            .map(|p| p + rng.random_range(-0.3..0.3))
            .collect();
        policy = policy.with_params(params).unwrap();
        let s: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a: Vec<f64> = (0..2).map(|_| rng.random_range(-1.5..1.5)).collect();
        (policy, s, a)
    }

    fn fd_gradient(policy: &Policy, s: &[f64], a: &[f64]) -> Vec<f64> {
        let h = 1e-5;
        (0..policy.num_params())
            .map(|i| {
                let mut p = policy.params().to_vec();
                p[i] += h;
                let up = policy.with_params(p.clone()).unwrap().log_prob(s, a);
                p[i] -= 2.0 * h;
                let down = policy.with_params(p).unwrap().log_prob(s, a);
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gaussian_gradient_matches_finite_differences() {
        for seed in 0..5 {
            let (policy, s, a) = random_gaussian(seed);
            let analytic = policy.grad_log_prob(&s, &a);
            assert_eq!(analytic.g.len(), policy.num_params());
            let numeric = fd_gradient(&policy, &s, &a);
            let diff: f64 = analytic
                .g
                .iter()
                .zip(&numeric)
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            let norm: f64 = numeric.iter().map(|y| y * y).sum();
            assert!(libm::sqrt(diff / norm) < 1e-6);
        }
    }

    #[test]
    fn softmax_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let arch = Architecture {
            input_dim: 4,
            hidden: vec![5],
            head: Head::Softmax { num_actions: 3 },
        };
        let policy = Policy::init(arch, &mut rng, 0.0);
        let params = policy
            .params()
            .iter()
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let policy = policy.with_params(params).unwrap();
        let s = [0.2, -0.4, 0.9, 0.0];
        let a = [2.0];
        let analytic = policy.grad_log_prob(&s, &a);
        for (x, y) in analytic.g.iter().zip(fd_gradient(&policy, &s, &a)) {
            assert!((x - y).abs() < 1e-7);
        }
    }

    #[test]
    fn zero_network_gaussian() {
        let mut policy = Policy::zeros(Architecture::gaussian(4, 1));
        let mut params = policy.params().to_vec();
        *params.last_mut().unwrap() = -0.5;
        policy = policy.with_params(params).unwrap();
        let s = [0.1, 0.2, 0.3, 0.4];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (a, lp) = policy.sample_action(&s, &mut rng).unwrap();
        let z = a[0] / exp(-0.5);
        assert!((lp - (-0.5 * LN_2PI + 0.5 - 0.5 * z * z)).abs() < 1e-12);
        // density at the mean
        assert!((policy.log_prob(&s, &[0.0]) - (-0.5 * (LN_2PI - 1.0))).abs() < 1e-12);
    }

    #[test]
    fn gradient_at_mean_vanishes_on_mean_path() {
        let (policy, s, _) = random_gaussian(7);
        let ActionDistribution::Gaussian { mean, .. } = policy.distribution(&s).unwrap() else {
            unreachable!()
        };
        let g = policy.grad_log_prob(&s, &mean);
        let body_len = policy.num_params() - 2;
        assert!(g.g[..body_len].iter().all(|v| v.abs() < 1e-15));
        assert!(g.g[body_len..].iter().all(|v| (v + 1.0).abs() < 1e-12));
    }

    #[test]
    fn uniform_softmax_logprob() {
        let policy = Policy::zeros(Architecture::tabular(3, 2));
        assert!((policy.log_prob(&[1.0, 0.0, 0.0], &[1.0]) - log(0.5)).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (_, lp) = policy.sample_action(&[0.0, 1.0, 0.0], &mut rng).unwrap();
        assert!((lp - log(0.5)).abs() < 1e-15);
    }

    #[test]
    fn softmax_probabilities_normalize() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let arch = Architecture::tabular(2, 4);
        let params = (0..arch.num_params())
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        let policy = Policy::new(arch, params).unwrap();
        let total: f64 = (0..4)
            .map(|a| exp(policy.log_prob(&[0.0, 1.0], &[a as f64])))
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampled_logprob_replays_exactly() {
        let (policy, s, _) = random_gaussian(9);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let (a, lp) = policy.sample_action(&s, &mut rng).unwrap();
            assert!((policy.log_prob(&s, &a) - lp).abs() < 1e-10);
        }
    }

    #[test]
    fn sample_mean_matches_network_mean() {
        let (policy, s, _) = random_gaussian(1);
        let ActionDistribution::Gaussian { mean, log_std } = policy.distribution(&s).unwrap()
        else {
            unreachable!()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 100_000;
        let mut sum = [0.0; 2];
        for _ in 0..n {
            let (a, _) = policy.sample_action(&s, &mut rng).unwrap();
            sum[0] += a[0];
            sum[1] += a[1];
        }
        for j in 0..2 {
            let se = exp(log_std[j]) / libm::sqrt(n as f64);
            assert!((sum[j] / n as f64 - mean[j]).abs() < 3.0 * se);
        }
    }

    #[test]
    fn log_std_is_projected_into_band() {
        let policy = Policy::zeros(Architecture::gaussian(2, 1));
        let mut g = vec![0.0; policy.num_params()];
        *g.last_mut().unwrap() = 100.0;
        let next = policy
            .ascend(&GradientEstimate { g, batch_size: 1 }, 1.0)
            .unwrap();
        assert_eq!(next.log_std(), vec![LOG_STD_MAX]);
        assert_eq!(*next.params().last().unwrap(), LOG_STD_MAX);
    }
}
