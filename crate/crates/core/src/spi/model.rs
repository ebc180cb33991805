//! Learned dynamics. Each ensemble member is an MLP over normalized
//! `(s, a)` predicting a diagonal Gaussian over the normalized state change
//! `Δs = s' - s`, trained by maximum likelihood on a bootstrap resample.

use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, sqrt};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::cmdp::Transition;
use crate::env::TabularCmdp;
use crate::nn::{Adam, MlpShape};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("need at least {need} transitions to fit the model, got {got}")]
    TooFewTransitions { need: usize, got: usize },
    #[error("model {member} produced a non-finite loss in epoch {epoch}")]
    NonFiniteLoss { member: usize, epoch: usize },
    #[error("ensemble needs at least one member")]
    EmptyEnsemble,
    #[error("transition has state/action sizes {state}/{action}, model expects {expected_state}/{expected_action}")]
    Shape {
        state: usize,
        action: usize,
        expected_state: usize,
        expected_action: usize,
    },
}

/// One real `(s, a, s')` triple.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSample {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub next_state: Vec<f64>,
}

impl ModelSample {
    pub fn from_transition(t: &Transition) -> Self {
        ModelSample {
            state: t.state.clone(),
            action: t.action.clone(),
            next_state: t.next_state.clone(),
        }
    }
}

/// Training diagnostics. NLLs are per dimension, in normalized units.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitReport {
    /// Mean over members of each epoch's training NLL.
    pub train_nll: Vec<f64>,
    pub holdout_nll: Option<f64>,
    /// Mean absolute error of the ensemble mean on the holdout, per state
    /// dimension.
    pub holdout_mae: Vec<f64>,
    pub n_train: usize,
    pub n_holdout: usize,
}

/// A stochastic one-step simulator with one or more members.
pub trait DynamicsModel {
    fn num_members(&self) -> usize;
    fn fit(&mut self, data: &[ModelSample], rng: &mut dyn RngCore)
        -> Result<FitReport, ModelError>;
    /// Reinitializes the parameters.
    fn reset(&mut self, rng: &mut dyn RngCore);
    fn predict_mean(&self, member: usize, state: &[f64], action: &[f64]) -> Vec<f64>;
    fn sample_next(
        &self,
        member: usize,
        state: &[f64],
        action: &[f64],
        rng: &mut dyn RngCore,
    ) -> Vec<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub members: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub min_transitions: usize,
    /// Fraction of the data held out for the reported holdout metrics.
    pub holdout_fraction: f64,
    pub bootstrap: bool,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            members: 5,
            hidden: vec![32, 32],
            epochs: 20,
            lr: 1e-3,
            batch_size: 64,
            min_transitions: 256,
            holdout_fraction: 0.1,
            bootstrap: true,
            log_std_min: -5.0,
            log_std_max: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Normalizer {
    mean: Vec<f64>,
    std: Vec<f64>,
    /// Columns that varied in the fitted data.
    varies: Vec<bool>,
}

impl Normalizer {
    fn identity(dim: usize) -> Self {
        Normalizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
            varies: vec![true; dim],
        }
    }

    fn fit(rows: impl Iterator<Item = Vec<f64>> + Clone, dim: usize) -> Self {
        let mut mean = vec![0.0; dim];
        let mut n = 0usize;
        for r in rows.clone() {
            for (m, v) in mean.iter_mut().zip(&r) {
                *m += v;
            }
            n += 1;
        }
        let inv = 1.0 / n.max(1) as f64;
        mean.iter_mut().for_each(|m| *m *= inv);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(&r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let varies: Vec<bool> = var.iter().map(|v| sqrt(v * inv) > 1e-8).collect();
        let std = var
            .iter()
            .zip(&varies)
            .map(|(v, keep)| if *keep { sqrt(v * inv) } else { 1.0 })
            .collect();
        Normalizer { mean, std, varies }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + exp(-x))
}

/// Ensemble of Gaussian MLP dynamics models.
#[derive(Debug, Clone)]
pub struct DynamicsEnsemble {
    config: EnsembleConfig,
    shape: MlpShape,
    state_dim: usize,
    action_dim: usize,
    members: Vec<Vec<f64>>,
    input_norm: Normalizer,
    output_norm: Normalizer,
}

impl DynamicsEnsemble {
    pub fn new<R: Rng + ?Sized>(
        config: EnsembleConfig,
        state_dim: usize,
        action_dim: usize,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        if config.members == 0 {
            return Err(ModelError::EmptyEnsemble);
        }
        let shape = MlpShape::new(state_dim + action_dim, &config.hidden, 2 * state_dim);
        let members = (0..config.members).map(|_| shape.init(rng, 0.1)).collect();
        Ok(DynamicsEnsemble {
            config,
            shape,
            state_dim,
            action_dim,
            members,
            input_norm: Normalizer::identity(state_dim + action_dim),
            output_norm: Normalizer::identity(state_dim),
        })
    }

    pub fn config(&self) -> &EnsembleConfig {
        &self.config
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn input(&self, state: &[f64], action: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.state_dim + self.action_dim);
        x.extend_from_slice(state);
        x.extend_from_slice(action);
        self.input_norm.apply(&x)
    }

    /// Maps the raw output into the log-std band, with the derivative.
    fn clamp_log_std(&self, raw: f64) -> (f64, f64) {
        let (lo, hi) = (self.config.log_std_min, self.config.log_std_max);
        let s = sigmoid(raw);
        (lo + (hi - lo) * s, (hi - lo) * s * (1.0 - s))
    }

    /// Normalized mean and clamped log-std of `Δs`.
    fn head(&self, params: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let acts = self.shape.forward(params, x);
        let out = acts.output();
        let mu = out[..self.state_dim].to_vec();
        let ls = out[self.state_dim..]
            .iter()
            .map(|r| self.clamp_log_std(*r).0)
            .collect();
        (mu, ls)
    }

    /// Output columns constant in the training data are predicted as that
    /// constant.
    fn denormalize(&self, state: &[f64], delta_norm: impl Iterator<Item = f64>) -> Vec<f64> {
        state
            .iter()
            .zip(delta_norm)
            .zip(&self.output_norm.mean)
            .zip(&self.output_norm.std)
            .zip(&self.output_norm.varies)
            .map(|((((s, d), m), sd), v)| if *v { s + m + sd * d } else { s + m })
            .collect()
    }

    /// Clamped log-std of member `member` at `(s, a)`, normalized units.
    pub fn log_std(&self, member: usize, state: &[f64], action: &[f64]) -> Vec<f64> {
        self.head(&self.members[member], &self.input(state, action))
            .1
    }

    /// Average of the members' mean predictions.
    pub fn ensemble_mean(&self, state: &[f64], action: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.state_dim];
        for m in 0..self.members.len() {
            for (a, p) in acc.iter_mut().zip(self.predict_mean(m, state, action)) {
                *a += p;
            }
        }
        let inv = 1.0 / self.members.len() as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        acc
    }

    fn check(&self, s: &ModelSample) -> Result<(), ModelError> {
        if s.state.len() != self.state_dim
            || s.next_state.len() != self.state_dim
            || s.action.len() != self.action_dim
        {
            return Err(ModelError::Shape {
                state: s.state.len(),
                action: s.action.len(),
                expected_state: self.state_dim,
                expected_action: self.action_dim,
            });
        }
        Ok(())
    }

    fn delta(s: &ModelSample) -> Vec<f64> {
        s.next_state
            .iter()
            .zip(&s.state)
            .map(|(n, c)| n - c)
            .collect()
    }

    /// Mean per-dimension NLL of `params` on `(x, y)` pairs, accumulating
    /// the gradient (scaled by `1/len`) when `grad` is given.
    fn nll(
        &self,
        params: &[f64],
        xs: &[&[f64]],
        ys: &[&[f64]],
        mut grad: Option<&mut [f64]>,
    ) -> f64 {
        let d = self.state_dim;
        let inv = 1.0 / (xs.len() * d) as f64;
        let mut total = 0.0;
        let mut grad_out = vec![0.0; 2 * d];
        for (x, y) in xs.iter().zip(ys) {
            let acts = self.shape.forward(params, x);
            let out = acts.output();
            for j in 0..d {
                let (l, dl) = self.clamp_log_std(out[d + j]);
                let r = y[j] - out[j];
                let prec = exp(-2.0 * l);
                total += 0.5 * r * r * prec + l + HALF_LN_2PI;
                grad_out[j] = -r * prec;
                grad_out[d + j] = (1.0 - r * r * prec) * dl;
            }
            if let Some(g) = grad.as_deref_mut() {
                self.shape.backward(params, &acts, &grad_out, inv, g);
            }
        }
        total * inv
    }

    fn train_member(
        &self,
        member: usize,
        mut params: Vec<f64>,
        xs: &[Vec<f64>],
        ys: &[Vec<f64>],
        seed: u64,
    ) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = xs.len();
        let mut idx: Vec<usize> = if self.config.bootstrap {
            (0..n).map(|_| rng.random_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        let mut opt = Adam::new(params.len(), self.config.lr);
        let batch = self.config.batch_size.clamp(1, n);
        let mut curve = Vec::with_capacity(self.config.epochs);
        let mut grad = vec![0.0; params.len()];
        for epoch in 0..self.config.epochs {
            if batch < n {
                idx.shuffle(&mut rng);
            }
            let mut loss = 0.0;
            for chunk in idx.chunks(batch) {
                let bx: Vec<&[f64]> = chunk.iter().map(|i| xs[*i].as_slice()).collect();
                let by: Vec<&[f64]> = chunk.iter().map(|i| ys[*i].as_slice()).collect();
                grad.iter_mut().for_each(|g| *g = 0.0);
                let l = self.nll(&params, &bx, &by, Some(&mut grad));
                if !l.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(ModelError::NonFiniteLoss { member, epoch });
                }
                loss += l * chunk.len() as f64;
                opt.step(&mut params, &grad);
            }
            curve.push(loss / n as f64);
        }
        Ok((params, curve))
    }
}

impl DynamicsModel for DynamicsEnsemble {
    fn num_members(&self) -> usize {
        self.members.len()
    }

    /// Refits every member, warm-starting from the current parameters.
    /// Normalization statistics are recomputed from the training part.
    fn fit(
        &mut self,
        data: &[ModelSample],
        rng: &mut dyn RngCore,
    ) -> Result<FitReport, ModelError> {
        if data.len() < self.config.min_transitions.max(1) {
            return Err(ModelError::TooFewTransitions {
                need: self.config.min_transitions.max(1),
                got: data.len(),
            });
        }
        for s in data {
            self.check(s)?;
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(rng);
        let n_holdout = ((data.len() as f64) * self.config.holdout_fraction) as usize;
        let n_holdout = n_holdout.min(data.len() - 1);
        let (holdout, train) = order.split_at(n_holdout);

        let raw_in = |s: &ModelSample| {
            let mut x = s.state.clone();
            x.extend_from_slice(&s.action);
            x
        };
        self.input_norm = Normalizer::fit(
            train.iter().map(|i| raw_in(&data[*i])),
            self.state_dim + self.action_dim,
        );
        self.output_norm =
            Normalizer::fit(train.iter().map(|i| Self::delta(&data[*i])), self.state_dim);
        let xs: Vec<Vec<f64>> = train
            .iter()
            .map(|i| self.input_norm.apply(&raw_in(&data[*i])))
            .collect();
        let ys: Vec<Vec<f64>> = train
            .iter()
            .map(|i| self.output_norm.apply(&Self::delta(&data[*i])))
            .collect();

        let seeds: Vec<u64> = (0..self.members.len()).map(|_| rng.next_u64()).collect();
        let mut curves = Vec::with_capacity(self.members.len());
        let mut fitted = Vec::with_capacity(self.members.len());
        for (m, seed) in seeds.into_iter().enumerate() {
            let (p, c) = self.train_member(m, self.members[m].clone(), &xs, &ys, seed)?;
            fitted.push(p);
            curves.push(c);
        }
        self.members = fitted;

        let epochs = self.config.epochs;
        let train_nll = (0..epochs)
            .map(|e| curves.iter().map(|c| c[e]).sum::<f64>() / curves.len() as f64)
            .collect();

        let mut report = FitReport {
            train_nll,
            holdout_nll: None,
            holdout_mae: Vec::new(),
            n_train: train.len(),
            n_holdout: holdout.len(),
        };
        if !holdout.is_empty() {
            let hx: Vec<Vec<f64>> = holdout
                .iter()
                .map(|i| self.input_norm.apply(&raw_in(&data[*i])))
                .collect();
            let hy: Vec<Vec<f64>> = holdout
                .iter()
                .map(|i| self.output_norm.apply(&Self::delta(&data[*i])))
                .collect();
            let bx: Vec<&[f64]> = hx.iter().map(Vec::as_slice).collect();
            let by: Vec<&[f64]> = hy.iter().map(Vec::as_slice).collect();
            let nll = self
                .members
                .iter()
                .map(|p| self.nll(p, &bx, &by, None))
                .sum::<f64>()
                / self.members.len() as f64;
            report.holdout_nll = Some(nll);
            let mut mae = vec![0.0; self.state_dim];
            for i in holdout {
                let s = &data[*i];
                let pred = self.ensemble_mean(&s.state, &s.action);
                for ((e, p), t) in mae.iter_mut().zip(&pred).zip(&s.next_state) {
                    *e += (p - t).abs();
                }
            }
            mae.iter_mut().for_each(|e| *e /= holdout.len() as f64);
            report.holdout_mae = mae;
        }
        Ok(report)
    }

    fn reset(&mut self, rng: &mut dyn RngCore) {
        for p in &mut self.members {
            *p = self.shape.init(rng, 0.1);
        }
        self.input_norm = Normalizer::identity(self.state_dim + self.action_dim);
        self.output_norm = Normalizer::identity(self.state_dim);
    }

    fn predict_mean(&self, member: usize, state: &[f64], action: &[f64]) -> Vec<f64> {
        let (mu, _) = self.head(&self.members[member], &self.input(state, action));
        self.denormalize(state, mu.into_iter())
    }

    fn sample_next(
        &self,
        member: usize,
        state: &[f64],
        action: &[f64],
        rng: &mut dyn RngCore,
    ) -> Vec<f64> {
        let (mu, ls) = self.head(&self.members[member], &self.input(state, action));
        let noisy: Vec<f64> = mu
            .iter()
            .zip(&ls)
            .map(|(m, l)| {
                let z: f64 = StandardNormal.sample(rng);
                m + exp(*l) * z
            })
            .collect();
        self.denormalize(state, noisy.into_iter())
    }
}

/// The true transition kernel of a tabular CMDP behind the model interface.
/// Observations are one-hot vectors and actions `[index]`.
#[derive(Debug, Clone)]
pub struct TabularOracleModel {
    pub cmdp: TabularCmdp,
}

impl DynamicsModel for TabularOracleModel {
    fn num_members(&self) -> usize {
        1
    }

    fn fit(
        &mut self,
        data: &[ModelSample],
        _rng: &mut dyn RngCore,
    ) -> Result<FitReport, ModelError> {
        Ok(FitReport {
            n_train: data.len(),
            ..FitReport::default()
        })
    }

    fn reset(&mut self, _rng: &mut dyn RngCore) {}

    /// The next-state distribution, i.e. the expected one-hot vector.
    fn predict_mean(&self, _member: usize, state: &[f64], action: &[f64]) -> Vec<f64> {
        let s = TabularCmdp::state_index(state);
        self.cmdp.row(s, action[0] as usize).to_vec()
    }

    fn sample_next(
        &self,
        _member: usize,
        state: &[f64],
        action: &[f64],
        rng: &mut dyn RngCore,
    ) -> Vec<f64> {
        let s = TabularCmdp::state_index(state);
        let row = self.cmdp.row(s, action[0] as usize);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut next = row.iter().rposition(|p| *p > 0.0).unwrap_or(0);
        for (i, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                next = i;
                break;
            }
        }
        self.cmdp.one_hot(next)
    }
}
