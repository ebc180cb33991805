//! Gated policy improvement and the outer training loop.
//!
//! Every epoch the current policy collects a batch in the real environment,
//! its costs are bounded on that batch to obtain the release thresholds
//! `ρ_+`, and an improvement routine proposes a successor. The safe
//! routines ([`smfpi`], [`Smbpi`]) only see the logged batch and a
//! [`FeatureMap`]; they cannot step the environment, and they either return
//! their input unchanged or a candidate whose cost bounds passed the gate.

mod lagrange;
mod model;
mod rollout;
mod smbpi;
mod smfpi;

pub use lagrange::LagrangeState;
pub use model::{
    DynamicsEnsemble, DynamicsModel, EnsembleConfig, FitReport, ModelError, ModelSample,
    TabularOracleModel,
};
pub use rollout::{absorbing_penalty, disagreement, rollout_model, RolloutBatch, RolloutReward};
pub use smbpi::Smbpi;
pub use smfpi::smfpi;

use alloc::string::String;
use alloc::vec::Vec;

use libm::sqrt;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cmdp::{Cmdp, Episode, TerminationReason};
use crate::env::{collect_batch, EnvError, Environment, FeatureMap};
use crate::hcope::{on_policy_thresholds, GateDecision, HcopeError, ReleaseThresholds};
use crate::policy::{vpg_update, Policy, PolicyError};
use crate::semantics::pam;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpiError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{got} episodes cannot be split into train and test sets (need at least {need})")]
    TooFewEpisodes { got: usize, need: usize },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Hcope(#[from] HcopeError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    /// Ungated policy gradient, the unsafe baseline.
    Vpg,
    Smfpi,
    Smbpi,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Vpg, Algorithm::Smfpi, Algorithm::Smbpi];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Vpg => "vpg",
            Algorithm::Smfpi => "smfpi",
            Algorithm::Smbpi => "smbpi",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Algorithm::ALL.into_iter().find(|a| a.name() == s)
    }
}

/// How model-based updates account for safety.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SafetyMode {
    /// Violations lead to an absorbing state paying `-C` per step.
    Pessimistic,
    /// Reward `r - Σ λ_i c_i` with dual ascent on `λ`.
    Lagrangian,
}

impl SafetyMode {
    pub fn name(self) -> &'static str {
        match self {
            SafetyMode::Pessimistic => "pessimistic",
            SafetyMode::Lagrangian => "lagrangian",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [SafetyMode::Pessimistic, SafetyMode::Lagrangian]
            .into_iter()
            .find(|m| m.name() == s)
    }
}

/// Source of the release thresholds `ρ_+`.
#[derive(Debug, Clone, PartialEq)]
pub enum ThresholdMode {
    /// Student-t upper bound of the current policy's own cost on the fresh
    /// batch, at confidence `1 - δ/k` per constraint.
    OnPolicy,
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Rollout horizon `H`.
    pub horizon: usize,
    /// Particles `N` per start state.
    pub particles: usize,
    /// Start states drawn from the real-experience buffer per round.
    pub starts: usize,
    /// Past transitions kept for model fitting (oldest dropped first).
    pub buffer_capacity: usize,
    /// Keep the model between calls instead of reinitializing it.
    pub warm_start: bool,
    /// Refit in every inner round rather than once per call.
    pub refit_each_round: bool,
    pub safety_mode: SafetyMode,
    /// Absorbing-state penalty `C`.
    pub penalty: f64,
    pub lambda_init: f64,
    pub lambda_lr: f64,
    pub ensemble: EnsembleConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            horizon: 10,
            particles: 20,
            starts: 10,
            buffer_capacity: 20_000,
            warm_start: true,
            refit_each_round: false,
            safety_mode: SafetyMode::Pessimistic,
            penalty: 10.0,
            lambda_init: 0.0,
            lambda_lr: 0.05,
            ensemble: EnsembleConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpiConfig {
    /// Outer epochs `N`.
    pub epochs: usize,
    /// Improvement rounds `L` per call.
    pub inner_rounds: usize,
    /// Policy updates `g` per round.
    pub updates_per_round: usize,
    /// Fraction of episodes used for training; the rest is the test set.
    pub split_fraction: f64,
    pub delta: f64,
    pub lr: f64,
    pub episodes_per_epoch: usize,
    pub thresholds: ThresholdMode,
    /// A candidate whose importance weights on the test episodes have an
    /// effective sample size below this fraction of their count is
    /// rejected. 0 disables the check.
    pub min_ess_fraction: f64,
    pub model: ModelConfig,
}

impl Default for SpiConfig {
    fn default() -> Self {
        SpiConfig {
            epochs: 50,
            inner_rounds: 10,
            updates_per_round: 5,
            split_fraction: 0.5,
            delta: 0.05,
            lr: 0.025,
            episodes_per_epoch: 20,
            thresholds: ThresholdMode::OnPolicy,
            min_ess_fraction: 0.5,
            model: ModelConfig::default(),
        }
    }
}

impl SpiConfig {
    /// Smallest acceptable effective sample size for `n_test` episodes.
    pub fn min_ess(&self, n_test: usize) -> f64 {
        self.min_ess_fraction * n_test as f64
    }
}

fn config_error(msg: &str) -> SpiError {
    SpiError::Config(msg.into())
}

impl SpiConfig {
    pub fn validate(&self) -> Result<(), SpiError> {
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(config_error("split_fraction must lie in (0, 1)"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(config_error("delta must lie in (0, 1)"));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(config_error("lr must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.min_ess_fraction) {
            return Err(config_error("min_ess_fraction must lie in [0, 1]"));
        }
        split_sizes(self.episodes_per_epoch, self.split_fraction)?;
        let m = &self.model;
        if m.particles == 0 || m.starts == 0 || m.ensemble.members == 0 {
            return Err(config_error(
                "particles, starts and ensemble size must be positive",
            ));
        }
        if !(m.penalty.is_finite() && m.penalty >= 0.0) {
            return Err(config_error("penalty must be finite and non-negative"));
        }
        if !(m.lambda_init >= 0.0 && m.lambda_lr >= 0.0) {
            return Err(config_error(
                "lambda_init and lambda_lr must be non-negative",
            ));
        }
        if !(m.ensemble.lr > 0.0 && m.ensemble.batch_size > 0) {
            return Err(config_error("model lr and batch size must be positive"));
        }
        if !(m.ensemble.log_std_min < m.ensemble.log_std_max) {
            return Err(config_error("model log-std band is empty"));
        }
        if let ThresholdMode::Fixed(v) = &self.thresholds {
            ReleaseThresholds::new(v.clone())?;
        }
        Ok(())
    }
}

/// Train and test episode indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn split_sizes(n: usize, fraction: f64) -> Result<(usize, usize), SpiError> {
    if n < 3 {
        return Err(SpiError::TooFewEpisodes { got: n, need: 3 });
    }
    let train = ((n as f64 * fraction) as usize).clamp(1, n - 2);
    Ok((train, n - train))
}

/// Uniformly random split by whole episodes. At least one training and two
/// test episodes.
pub fn split_episodes<R: Rng + ?Sized>(
    n: usize,
    fraction: f64,
    rng: &mut R,
) -> Result<Split, SpiError> {
    let (train, _) = split_sizes(n, fraction)?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let test = idx.split_off(train);
    Ok(Split { train: idx, test })
}

fn select(data: &[Episode], idx: &[usize]) -> Vec<Episode> {
    idx.iter().map(|i| data[*i].clone()).collect()
}

/// One gate evaluation inside an improvement call.
#[derive(Debug, Clone, PartialEq)]
pub struct GateRecord {
    pub round: usize,
    pub decision: GateDecision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    /// The input policy is returned.
    Unchanged,
    /// The candidate of `round` passed the gate.
    Accepted { round: usize },
    /// Returned without a gate (baseline only).
    Ungated,
}

/// Result of one improvement call. The safe constructors enforce the
/// release contract: a returned policy is either the input or the last
/// gated candidate, which must have passed.
#[derive(Debug, Clone, PartialEq)]
pub struct ImprovementResult {
    policy: Policy,
    outcome: Outcome,
    pub gates: Vec<GateRecord>,
    pub split: Split,
    pub fit: Option<FitReport>,
    pub model_transitions: usize,
}

impl ImprovementResult {
    pub(crate) fn unchanged(pi: &Policy, gates: Vec<GateRecord>, split: Split) -> Self {
        ImprovementResult {
            policy: pi.clone(),
            outcome: Outcome::Unchanged,
            gates,
            split,
            fit: None,
            model_transitions: 0,
        }
    }

    pub(crate) fn accepted(candidate: Policy, gates: Vec<GateRecord>, split: Split) -> Self {
        let last = gates.last().expect("accepted candidates were gated");
        assert!(
            last.decision.pass && last.decision.failure.is_none(),
            "released a candidate that failed the gate"
        );
        ImprovementResult {
            outcome: Outcome::Accepted { round: last.round },
            policy: candidate,
            gates,
            split,
            fit: None,
            model_transitions: 0,
        }
    }

    fn ungated(candidate: Policy) -> Self {
        ImprovementResult {
            policy: candidate,
            outcome: Outcome::Ungated,
            gates: Vec::new(),
            split: Split::default(),
            fit: None,
            model_transitions: 0,
        }
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn into_policy(self) -> Policy {
        self.policy
    }

    pub fn outcome(&self) -> Outcome {
        self.outcome
    }

    /// Whether the returned policy respects the release contract with
    /// respect to `input`.
    pub fn respects_contract(&self, input: &Policy) -> bool {
        match self.outcome {
            Outcome::Unchanged => &self.policy == input,
            Outcome::Accepted { round } => self
                .gates
                .last()
                .is_some_and(|g| g.round == round && g.decision.pass),
            Outcome::Ungated => false,
        }
    }
}

/// What an improvement routine may see besides the batch.
#[derive(Clone, Copy)]
pub struct ImproveContext<'a> {
    pub cmdp: &'a Cmdp,
    pub features: &'a dyn FeatureMap,
    pub cfg: &'a SpiConfig,
}

/// A policy improvement routine for the outer loop.
pub trait Improver {
    fn improve(
        &mut self,
        pi: &Policy,
        data: &[Episode],
        rho_plus: &ReleaseThresholds,
        ctx: &ImproveContext<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<ImprovementResult, SpiError>;

    /// Current Lagrange multipliers, if the routine keeps any.
    fn lambdas(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// Safe model-free improvement.
#[derive(Debug, Clone, Copy, Default)]
pub struct Smfpi;

impl Improver for Smfpi {
    fn improve(
        &mut self,
        pi: &Policy,
        data: &[Episode],
        rho_plus: &ReleaseThresholds,
        ctx: &ImproveContext<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<ImprovementResult, SpiError> {
        smfpi(pi, data, rho_plus, ctx.cfg.delta, ctx.cfg, rng)
    }
}

/// Unsafe baseline: `g` policy-gradient steps on the whole batch, deployed
/// without a test.
#[derive(Debug, Clone, Copy, Default)]
pub struct VpgBaseline;

impl Improver for VpgBaseline {
    fn improve(
        &mut self,
        pi: &Policy,
        data: &[Episode],
        _rho_plus: &ReleaseThresholds,
        ctx: &ImproveContext<'_>,
        _rng: &mut dyn RngCore,
    ) -> Result<ImprovementResult, SpiError> {
        let gamma = ctx.cmdp.config().gamma;
        let mut candidate = pi.clone();
        for _ in 0..ctx.cfg.updates_per_round {
            candidate = vpg_update(&candidate, data, ctx.cfg.lr, gamma)?;
        }
        Ok(ImprovementResult::ungated(candidate))
    }
}

/// `ρ_+` for the batch of the current policy.
pub fn release_thresholds(
    batch: &[Episode],
    k: usize,
    delta: f64,
    mode: &ThresholdMode,
) -> Result<ReleaseThresholds, SpiError> {
    match mode {
        ThresholdMode::OnPolicy => Ok(on_policy_thresholds(batch, k, delta)?),
        ThresholdMode::Fixed(v) => {
            if v.len() != k {
                return Err(HcopeError::ThresholdCount {
                    expected: k,
                    got: v.len(),
                }
                .into());
            }
            Ok(ReleaseThresholds::new(v.clone())?)
        }
    }
}

/// Metrics of one outer epoch. Batch statistics describe the policy that
/// collected the batch; `policy` is the one deployed for the next epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub episodes: usize,
    pub steps: usize,
    /// Undiscounted task reward per episode.
    pub return_mean: f64,
    pub return_std: f64,
    /// Mean discounted cost per constraint.
    pub cost_mean: Vec<f64>,
    pub violation_rate: f64,
    pub rho_plus: Vec<f64>,
    pub pam: Vec<f64>,
    pub gates: Vec<GateRecord>,
    pub outcome: Outcome,
    pub changed: bool,
    pub lambdas: Vec<f64>,
    pub fit: Option<FitReport>,
    pub policy: Policy,
}

impl EpochRecord {
    pub fn pam_mean(&self) -> f64 {
        mean(&self.pam)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRun {
    pub policy: Policy,
    pub epochs: Vec<EpochRecord>,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    sqrt(v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64)
}

/// Statistics of a behaviour batch.
pub struct BatchStats {
    pub return_mean: f64,
    pub return_std: f64,
    pub cost_mean: Vec<f64>,
    pub violation_rate: f64,
    pub pam: Vec<f64>,
}

pub fn batch_stats(batch: &[Episode], cmdp: &Cmdp, features: &dyn FeatureMap) -> BatchStats {
    let returns: Vec<f64> = batch.iter().map(Episode::undiscounted_return).collect();
    let k = cmdp.num_constraints();
    let cost_mean = (0..k)
        .map(|i| {
            mean(
                &batch
                    .iter()
                    .map(|e| e.discounted_cost(i))
                    .collect::<Vec<_>>(),
            )
        })
        .collect();
    let violations = batch
        .iter()
        .filter(|e| e.final_reason() == TerminationReason::SafetyViolation)
        .count();
    let dim = features.feature_names().len();
    let pam = batch
        .iter()
        .filter_map(|e| e.trace(|o| features.features(o), dim))
        .map(|tau| pam(cmdp.task(), &tau))
        .collect();
    BatchStats {
        return_mean: mean(&returns),
        return_std: std_dev(&returns),
        cost_mean,
        violation_rate: violations as f64 / batch.len().max(1) as f64,
        pam,
    }
}

/// Builds the improver for `algorithm`. The model-based one gets a fresh
/// ensemble sized for the environment.
pub fn make_improver<E: Environment>(
    algorithm: Algorithm,
    env: &E,
    pi0: &Policy,
    cmdp: &Cmdp,
    cfg: &SpiConfig,
    seed: u64,
) -> Result<alloc::boxed::Box<dyn Improver>, SpiError> {
    Ok(match algorithm {
        Algorithm::Vpg => alloc::boxed::Box::new(VpgBaseline),
        Algorithm::Smfpi => alloc::boxed::Box::new(Smfpi),
        Algorithm::Smbpi => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(u64::MAX);
            let model = DynamicsEnsemble::new(
                cfg.model.ensemble.clone(),
                env.observation_dim(),
                pi0.architecture().action_len(),
                &mut rng,
            )?;
            alloc::boxed::Box::new(Smbpi::new(model, cmdp.num_constraints(), &cfg.model))
        }
    })
}

/// The outer loop: collect with the current policy, bound its costs,
/// improve. `observer` sees every epoch as soon as it completes.
///
/// Randomness comes from `seed` alone: collection uses stream 0 and the
/// improvement call of epoch `e` uses stream `e + 1`.
#[allow(clippy::too_many_arguments)]
pub fn safe_policy_optimization<E: Environment, F: FnMut(&EpochRecord)>(
    env: &mut E,
    cmdp: &Cmdp,
    pi0: Policy,
    cfg: &SpiConfig,
    algorithm: Algorithm,
    seed: u64,
    observer: F,
) -> Result<TrainingRun, SpiError> {
    let mut improver = make_improver(algorithm, env, &pi0, cmdp, cfg, seed)?;
    run_with_improver(env, cmdp, pi0, cfg, improver.as_mut(), seed, observer)
}

/// [`safe_policy_optimization`] with a caller-supplied improver.
#[allow(clippy::too_many_arguments)]
pub fn run_with_improver<E: Environment, F: FnMut(&EpochRecord)>(
    env: &mut E,
    cmdp: &Cmdp,
    pi0: Policy,
    cfg: &SpiConfig,
    improver: &mut dyn Improver,
    seed: u64,
    mut observer: F,
) -> Result<TrainingRun, SpiError> {
    cfg.validate()?;
    let k = cmdp.num_constraints();
    let mut collect_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pi = pi0;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let batch = collect_batch(env, cmdp, &pi, cfg.episodes_per_epoch, &mut collect_rng)?;
        let rho_plus = release_thresholds(&batch, k, cfg.delta, &cfg.thresholds)?;
        let stats = batch_stats(&batch, cmdp, &*env);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch as u64 + 1);
        let ctx = ImproveContext {
            cmdp,
            features: &*env,
            cfg,
        };
        let result = improver.improve(&pi, &batch, &rho_plus, &ctx, &mut rng)?;
        let changed = result.policy() != &pi;
        let record = EpochRecord {
            epoch,
            episodes: batch.len(),
            steps: batch.iter().map(Episode::len).sum(),
            return_mean: stats.return_mean,
            return_std: stats.return_std,
            cost_mean: stats.cost_mean,
            violation_rate: stats.violation_rate,
            rho_plus: rho_plus.values().to_vec(),
            pam: stats.pam,
            outcome: result.outcome(),
            changed,
            lambdas: improver.lambdas(),
            fit: result.fit.clone(),
            gates: result.gates.clone(),
            policy: result.policy().clone(),
        };
        pi = result.into_policy();
        observer(&record);
        epochs.push(record);
    }
    Ok(TrainingRun { policy: pi, epochs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_keeps_two_test_episodes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = split_episodes(10, 0.5, &mut rng).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (5, 5));
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        let s = split_episodes(3, 0.9, &mut rng).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (1, 2));
        assert!(split_episodes(2, 0.5, &mut rng).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SpiConfig::default().validate().is_ok());
        let bad = SpiConfig {
            split_fraction: 1.0,
            ..SpiConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SpiConfig {
            episodes_per_epoch: 2,
            ..SpiConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SpiConfig {
            thresholds: ThresholdMode::Fixed(alloc::vec![-1.0]),
            ..SpiConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(Algorithm::parse(a.name()), Some(a));
        }
        assert_eq!(
            SafetyMode::parse("lagrangian"),
            Some(SafetyMode::Lagrangian)
        );
        assert_eq!(Algorithm::parse("ppo"), None);
    }
}
