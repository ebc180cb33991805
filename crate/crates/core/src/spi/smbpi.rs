//! Safe model-based policy improvement.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use rand::{Rng, RngCore};

use super::lagrange::LagrangeState;
use super::model::{DynamicsModel, FitReport, ModelError, ModelSample};
use super::rollout::{rollout_model, RolloutBatch, RolloutReward};
use super::{
    select, split_episodes, GateRecord, ImproveContext, ImprovementResult, Improver, ModelConfig,
    SafetyMode, SpiError, Split,
};
use crate::cmdp::Episode;
use crate::hcope::{hcope_gate_min_ess, ReleaseThresholds};
use crate::policy::{vpg_update, vpg_update_with, Policy};

/// Model-based improver. The model, the buffer of real transitions from
/// earlier calls and the Lagrange multipliers persist between calls.
#[derive(Debug, Clone)]
pub struct Smbpi<M> {
    pub model: M,
    buffer: VecDeque<ModelSample>,
    capacity: usize,
    pub lagrange: LagrangeState,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

impl<M: DynamicsModel> Smbpi<M> {
    pub fn new(model: M, num_constraints: usize, cfg: &ModelConfig) -> Self {
        Smbpi {
            model,
            buffer: VecDeque::new(),
            capacity: cfg.buffer_capacity,
            lagrange: LagrangeState::new(num_constraints, cfg.lambda_init),
        }
    }

    pub fn buffer_len(&self) -> usize {
        self.buffer.len()
    }

    fn remember(&mut self, data: &[Episode]) {
        for e in data {
            for t in &e.transitions {
                self.buffer.push_back(ModelSample::from_transition(t));
            }
        }
        while self.buffer.len() > self.capacity {
            self.buffer.pop_front();
        }
    }

    /// Rolls `pi` out in the model from buffer states and takes `g` policy
    /// gradient steps on the predicted episodes.
    fn model_round(
        &self,
        pi: &Policy,
        fit_data: &[ModelSample],
        ctx: &ImproveContext<'_>,
        reward: RolloutReward,
        rng: &mut dyn RngCore,
    ) -> Result<(Policy, RolloutBatch), SpiError> {
        let cfg = ctx.cfg;
        let mc = &cfg.model;
        let gamma = ctx.cmdp.config().gamma;
        let starts: Vec<Vec<f64>> = (0..mc.starts)
            .map(|_| fit_data[rng.random_range(0..fit_data.len())].state.clone())
            .collect();
        let batch = rollout_model(
            &self.model,
            pi,
            &starts,
            ctx.cmdp,
            ctx.features,
            mc.horizon,
            mc.particles,
            reward,
            rng,
        )?;
        let mut candidate = pi.clone();
        if batch.num_transitions() == 0 {
            return Ok((candidate, batch));
        }
        for _ in 0..cfg.updates_per_round {
            candidate = match mc.safety_mode {
                SafetyMode::Pessimistic => vpg_update(&candidate, &batch.episodes, cfg.lr, gamma)?,
                SafetyMode::Lagrangian => {
                    let l = &self.lagrange;
                    vpg_update_with(&candidate, &batch.episodes, cfg.lr, gamma, |t| {
                        l.penalized(t)
                    })?
                }
            };
        }
        Ok((candidate, batch))
    }

    /// One call of the routine on a batch collected by `pi`.
    ///
    /// The model is fitted on the buffer plus the training episodes (never
    /// on the test episodes the gate uses). Each round rolls the current
    /// candidate out in the model from buffer states, takes `g` policy
    /// gradient steps on the predicted episodes and gates the candidate on
    /// the real test episodes at `δ/k` per constraint.
    #[allow(clippy::too_many_arguments)]
    pub fn improve_with<R: Rng + ?Sized>(
        &mut self,
        pi: &Policy,
        data: &[Episode],
        rho_plus: &ReleaseThresholds,
        delta: f64,
        ctx: &ImproveContext<'_>,
        rng: &mut R,
    ) -> Result<ImprovementResult, SpiError> {
        let cfg = ctx.cfg;
        let mc = &cfg.model;
        if cfg.inner_rounds == 0 {
            self.remember(data);
            return Ok(ImprovementResult::unchanged(
                pi,
                Vec::new(),
                Split::default(),
            ));
        }
        let k = rho_plus.len();
        let split = split_episodes(data.len(), cfg.split_fraction, rng)?;
        let train = select(data, &split.train);
        let test = select(data, &split.test);
        let fit_data: Vec<ModelSample> = self
            .buffer
            .iter()
            .cloned()
            .chain(
                train
                    .iter()
                    .flat_map(|e| e.transitions.iter().map(ModelSample::from_transition)),
            )
            .collect();
        self.remember(data);

        let mut rng = RngAdapter(rng);
        if !mc.warm_start {
            self.model.reset(&mut rng);
        }
        let reward = match mc.safety_mode {
            SafetyMode::Pessimistic => RolloutReward::Pessimistic {
                penalty: mc.penalty,
            },
            SafetyMode::Lagrangian => RolloutReward::Task,
        };
        let mut candidate = pi.clone();
        let mut gates = Vec::with_capacity(cfg.inner_rounds);
        let mut fit: Option<FitReport> = None;
        let mut model_transitions = 0;
        for round in 0..cfg.inner_rounds {
            if round == 0 || mc.refit_each_round {
                match self.model.fit(&fit_data, &mut rng) {
                    Ok(r) => fit = Some(r),
                    Err(ModelError::TooFewTransitions { need, got }) => {
                        log::info!("model not fitted ({got} of {need} transitions); policy kept");
                        return Ok(ImprovementResult::unchanged(pi, gates, split));
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            let batch = match self.model_round(&candidate, &fit_data, ctx, reward, &mut rng) {
                Ok((c, b)) => {
                    candidate = c;
                    b
                }
                Err(SpiError::Policy(e)) if e.is_divergence() => {
                    log::warn!("candidate diverged in round {round} ({e}); policy kept");
                    break;
                }
                Err(e) => return Err(e),
            };
            model_transitions += batch.num_transitions();
            if mc.safety_mode == SafetyMode::Lagrangian {
                let estimates: Vec<f64> = (0..k)
                    .map(|i| mean(batch.episodes.iter().map(|e| e.discounted_cost(i))))
                    .collect();
                self.lagrange
                    .dual_step(&estimates, &ctx.cmdp.config().thresholds, mc.lambda_lr);
            }
            let decision = hcope_gate_min_ess(
                &candidate,
                &test,
                rho_plus,
                delta,
                k,
                cfg.min_ess(test.len()),
            );
            let pass = decision.pass;
            gates.push(GateRecord { round, decision });
            if pass {
                let mut r = ImprovementResult::accepted(candidate, gates, split);
                r.fit = fit;
                r.model_transitions = model_transitions;
                return Ok(r);
            }
        }
        let mut r = ImprovementResult::unchanged(pi, gates, split);
        r.fit = fit;
        r.model_transitions = model_transitions;
        Ok(r)
    }
}

/// Lets a generic `Rng` be used where the model interface takes
/// `&mut dyn RngCore`.
struct RngAdapter<'a, R: ?Sized>(&'a mut R);

impl<R: RngCore + ?Sized> RngCore for RngAdapter<'_, R> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

impl<M: DynamicsModel> Improver for Smbpi<M> {
    fn improve(
        &mut self,
        pi: &Policy,
        data: &[Episode],
        rho_plus: &ReleaseThresholds,
        ctx: &ImproveContext<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<ImprovementResult, SpiError> {
        self.improve_with(pi, data, rho_plus, ctx.cfg.delta, ctx, rng)
    }

    fn lambdas(&self) -> Vec<f64> {
        self.lagrange.lambdas().to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmdp::{Cmdp, CmdpConfig};
    use crate::env::{chain_oracle, chain_task, TabularEnv};
    use crate::oracle::sample_episodes;
    use crate::policy::Architecture;
    use crate::spi::model::TabularOracleModel;
    use crate::spi::{Outcome, SpiConfig};
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixture() -> (TabularEnv, Cmdp, Policy, Vec<Episode>) {
        let m = chain_oracle(0.1, 0.9, 6).unwrap();
        let cmdp = Cmdp::new(
            chain_task(),
            CmdpConfig {
                gamma: 0.9,
                horizon: 6,
                thresholds: vec![0.1],
            },
            false,
        );
        let pi = Policy::zeros(Architecture::tabular(5, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = sample_episodes(&m, &pi.tabulate(5).unwrap(), 40, &mut rng);
        (TabularEnv::new(m), cmdp, pi, data)
    }

    #[test]
    fn zero_rounds_return_input_and_fill_buffer() {
        let (env, cmdp, pi, data) = fixture();
        let cfg = SpiConfig {
            inner_rounds: 0,
            ..SpiConfig::default()
        };
        let mut s = Smbpi::new(
            TabularOracleModel {
                cmdp: env.cmdp.clone(),
            },
            1,
            &cfg.model,
        );
        let ctx = ImproveContext {
            cmdp: &cmdp,
            features: &env,
            cfg: &cfg,
        };
        let rho = ReleaseThresholds::new(vec![1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = s
            .improve_with(&pi, &data, &rho, 0.05, &ctx, &mut rng)
            .unwrap();
        assert_eq!(r.outcome(), Outcome::Unchanged);
        assert_eq!(r.policy(), &pi);
        let n: usize = data.iter().map(Episode::len).sum();
        assert_eq!(s.buffer_len(), n);
    }

    #[test]
    fn oracle_model_rounds_are_gated() {
        let (env, cmdp, pi, data) = fixture();
        let cfg = SpiConfig {
            lr: 0.5,
            ..SpiConfig::default()
        };
        let mut s = Smbpi::new(
            TabularOracleModel {
                cmdp: env.cmdp.clone(),
            },
            1,
            &cfg.model,
        );
        let ctx = ImproveContext {
            cmdp: &cmdp,
            features: &env,
            cfg: &cfg,
        };
        let rho = crate::hcope::on_policy_thresholds(&data, 1, 0.05).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = s
            .improve_with(&pi, &data, &rho, 0.05, &ctx, &mut rng)
            .unwrap();
        assert!(r.respects_contract(&pi));
        assert!(r.model_transitions > 0);
        assert!(!r.gates.is_empty());
    }

    #[test]
    fn lagrange_multiplier_tracks_model_costs() {
        let (env, cmdp, pi, data) = fixture();
        let mut cfg = SpiConfig {
            lr: 0.0,
            inner_rounds: 1,
            ..SpiConfig::default()
        };
        cfg.model.safety_mode = SafetyMode::Lagrangian;
        cfg.model.lambda_lr = 1.0;
        let mut s = Smbpi::new(
            TabularOracleModel {
                cmdp: env.cmdp.clone(),
            },
            1,
            &cfg.model,
        );
        let ctx = ImproveContext {
            cmdp: &cmdp,
            features: &env,
            cfg: &cfg,
        };
        let rho = ReleaseThresholds::new(vec![1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // the uniform policy falls into the pit far more often than d = 0.1
        s.improve_with(&pi, &data, &rho, 0.05, &ctx, &mut rng)
            .unwrap();
        let after_one = s.lagrange.lambdas()[0];
        assert!(after_one > 0.0);
        // with a generous threshold the multiplier shrinks back toward 0
        let cmdp_loose = Cmdp::new(
            chain_task(),
            CmdpConfig {
                gamma: 0.9,
                horizon: 6,
                thresholds: vec![5.0],
            },
            false,
        );
        let ctx = ImproveContext {
            cmdp: &cmdp_loose,
            ..ctx
        };
        s.improve_with(&pi, &data, &rho, 0.05, &ctx, &mut rng)
            .unwrap();
        let after_two = s.lagrange.lambdas()[0];
        assert!(after_two < after_one && after_two >= 0.0);
    }
}
