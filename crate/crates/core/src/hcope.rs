//! High-confidence off-policy evaluation of safety costs.
//!
//! Each behaviour episode yields the unbiased estimate
//! `Π_t π'(a_t|s_t)/π(a_t|s_t) · Σ_t γ^t C_i(s_{t+1})` of the candidate's
//! discounted cost. A one-sided Student-t bound at confidence `1 - δ/k` per
//! constraint, compared against the release thresholds `ρ_+`, decides
//! whether the candidate may be deployed. Ratios are neither clipped nor
//! self-normalized, and a batch with an overflowing ratio is rejected as a
//! whole rather than filtered.

use alloc::vec::Vec;

use libm::exp;

use crate::cmdp::Episode;
use crate::policy::Policy;
use crate::stats::{SampleSummary, StatsError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HcopeError {
    #[error("importance ratio of episode {episode} is not finite")]
    RatioOverflow { episode: usize },
    #[error("behaviour log-probability of episode {episode} is not finite")]
    Unsupported { episode: usize },
    #[error("{got} thresholds for {expected} constraints")]
    ThresholdCount { expected: usize, got: usize },
    #[error("threshold {0} is negative or not finite")]
    BadThreshold(f64),
    #[error("effective sample size {ess:.3} is below the minimum {min:.3}")]
    LowEffectiveSampleSize { ess: f64, min: f64 },
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Per-constraint release thresholds `ρ_+`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReleaseThresholds {
    rho_plus: Vec<f64>,
}

impl ReleaseThresholds {
    pub fn new(rho_plus: Vec<f64>) -> Result<Self, HcopeError> {
        if let Some(bad) = rho_plus.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
            return Err(HcopeError::BadThreshold(*bad));
        }
        Ok(ReleaseThresholds { rho_plus })
    }

    pub fn values(&self) -> &[f64] {
        &self.rho_plus
    }

    pub fn len(&self) -> usize {
        self.rho_plus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho_plus.is_empty()
    }
}

/// One constraint's bound.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetyEstimate {
    pub constraint: usize,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    /// Confidence parameter used for this test (already split).
    pub delta: f64,
    pub upper_bound: f64,
    pub threshold: f64,
    pub pass: bool,
    /// `(Σw)² / Σw²` over the importance weights of the batch.
    pub effective_sample_size: f64,
}

/// `log Π_t π'(a_t|s_t) / π(a_t|s_t)`.
pub fn log_importance_ratio(candidate: &Policy, e: &Episode) -> f64 {
    e.transitions
        .iter()
        .map(|t| candidate.log_prob(&t.state, &t.action) - t.behavior_logprob)
        .sum()
}

fn discounted(e: &Episode, i: usize, gamma: f64) -> f64 {
    let mut acc = 0.0;
    let mut disc = 1.0;
    for t in &e.transitions {
        acc += disc * t.cost(i);
        disc *= gamma;
    }
    acc
}

fn check_support(e: &Episode, episode: usize) -> Result<(), HcopeError> {
    if e.transitions
        .iter()
        .any(|t| !t.behavior_logprob.is_finite())
    {
        return Err(HcopeError::Unsupported { episode });
    }
    Ok(())
}

/// Importance-sampled discounted cost of constraint `i` for one episode.
pub fn is_cost_estimate(
    candidate: &Policy,
    e: &Episode,
    i: usize,
    gamma: f64,
) -> Result<f64, HcopeError> {
    check_support(e, 0)?;
    let cost = discounted(e, i, gamma);
    if cost == 0.0 {
        return Ok(0.0);
    }
    let w = exp(log_importance_ratio(candidate, e));
    let est = w * cost;
    if !est.is_finite() {
        return Err(HcopeError::RatioOverflow { episode: 0 });
    }
    Ok(est)
}

/// Importance weights of a batch. Fails if any weight is not finite.
pub fn importance_weights(candidate: &Policy, batch: &[Episode]) -> Result<Vec<f64>, HcopeError> {
    batch
        .iter()
        .enumerate()
        .map(|(n, e)| {
            check_support(e, n)?;
            let w = exp(log_importance_ratio(candidate, e));
            if w.is_finite() {
                Ok(w)
            } else {
                Err(HcopeError::RatioOverflow { episode: n })
            }
        })
        .collect()
}

fn effective_sample_size(weights: &[f64]) -> f64 {
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    if s2 > 0.0 {
        s * s / s2
    } else {
        0.0
    }
}

/// Student-t upper bounds for every constraint at confidence `1 - δ/k`.
pub fn estimate_costs(
    candidate: &Policy,
    batch: &[Episode],
    thresholds: &ReleaseThresholds,
    delta: f64,
    k: usize,
) -> Result<Vec<SafetyEstimate>, HcopeError> {
    if thresholds.len() != k {
        return Err(HcopeError::ThresholdCount {
            expected: k,
            got: thresholds.len(),
        });
    }
    let weights = importance_weights(candidate, batch)?;
    let ess = effective_sample_size(&weights);
    let per_test = delta / k as f64;
    (0..k)
        .map(|i| {
            let samples: Vec<f64> = batch
                .iter()
                .zip(&weights)
                .map(|(e, w)| {
                    let c = discounted(e, i, e.gamma);
                    if c == 0.0 {
                        0.0
                    } else {
                        w * c
                    }
                })
                .collect();
            let summary = SampleSummary::of(&samples)?;
            let upper_bound = summary.upper_bound(per_test)?;
            let threshold = thresholds.values()[i];
            Ok(SafetyEstimate {
                constraint: i,
                n: summary.n,
                mean: summary.mean,
                std: summary.std,
                delta: per_test,
                upper_bound,
                threshold,
                pass: upper_bound <= threshold,
                effective_sample_size: ess,
            })
        })
        .collect()
}

/// Outcome of a release test.
#[derive(Debug, Clone, PartialEq)]
pub struct GateDecision {
    pub pass: bool,
    pub estimates: Vec<SafetyEstimate>,
    /// Why the gate could not evaluate the candidate, if it could not.
    pub failure: Option<HcopeError>,
}

impl GateDecision {
    fn rejected(failure: HcopeError) -> Self {
        GateDecision {
            pass: false,
            estimates: Vec::new(),
            failure: Some(failure),
        }
    }
}

/// Passes iff every constraint's upper bound at `1 - δ/k` is at most its
/// release threshold. Evaluation failures reject the candidate.
pub fn hcope_gate(
    candidate: &Policy,
    d_test: &[Episode],
    thresholds: &ReleaseThresholds,
    delta: f64,
    k: usize,
) -> GateDecision {
    hcope_gate_min_ess(candidate, d_test, thresholds, delta, k, 0.0)
}

/// Like [`hcope_gate`], but also rejects the candidate when the importance
/// weights' effective sample size is below `min_ess`. Once the candidate
/// drifts far from the behaviour policy every weight underflows toward
/// zero and the bound collapses to zero with it, which would otherwise
/// pass any threshold.
pub fn hcope_gate_min_ess(
    candidate: &Policy,
    d_test: &[Episode],
    thresholds: &ReleaseThresholds,
    delta: f64,
    k: usize,
    min_ess: f64,
) -> GateDecision {
    if k == 0 {
        // nothing to protect
        return GateDecision {
            pass: true,
            estimates: Vec::new(),
            failure: None,
        };
    }
    match estimate_costs(candidate, d_test, thresholds, delta, k) {
        Ok(estimates) if estimates[0].effective_sample_size < min_ess => {
            let ess = estimates[0].effective_sample_size;
            log::debug!("gate rejected candidate: effective sample size {ess:.3}");
            GateDecision {
                pass: false,
                estimates,
                failure: Some(HcopeError::LowEffectiveSampleSize { ess, min: min_ess }),
            }
        }
        Ok(estimates) => GateDecision {
            pass: estimates.iter().all(|e| e.pass),
            estimates,
            failure: None,
        },
        Err(e) => {
            log::warn!("gate rejected candidate: {e}");
            GateDecision::rejected(e)
        }
    }
}

/// On-policy upper bounds on the behaviour policy's own costs, used as
/// `ρ_+` for the next improvement step.
pub fn on_policy_thresholds(
    batch: &[Episode],
    k: usize,
    delta: f64,
) -> Result<ReleaseThresholds, HcopeError> {
    let per_test = delta / k.max(1) as f64;
    let bounds = (0..k)
        .map(|i| {
            let samples: Vec<f64> = batch.iter().map(|e| e.discounted_cost(i)).collect();
            Ok(SampleSummary::of(&samples)?.upper_bound(per_test)?.max(0.0))
        })
        .collect::<Result<Vec<f64>, HcopeError>>()?;
    ReleaseThresholds::new(bounds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmdp::{TerminationReason, Transition};
    use crate::policy::Architecture;
    use alloc::vec;

    fn episode(actions: &[usize], violation_at: Option<usize>, behavior: f64) -> Episode {
        let transitions = actions
            .iter()
            .enumerate()
            .map(|(t, a)| {
                let cost = violation_at == Some(t);
                let last = t + 1 == actions.len();
                Transition {
                    state: vec![1.0],
                    action: vec![*a as f64],
                    next_state: vec![1.0],
                    reward: 0.0,
                    train_reward: 0.0,
                    costs: vec![cost],
                    behavior_logprob: libm::log(behavior),
                    terminal: last,
                    reason: if cost {
                        TerminationReason::SafetyViolation
                    } else if last {
                        TerminationReason::Timeout
                    } else {
                        TerminationReason::Running
                    },
                }
            })
            .collect();
        Episode {
            transitions,
            gamma: 0.9,
            horizon: 10,
        }
    }

    fn biased(p1: f64) -> Policy {
        // logits (0, log(p1/(1-p1))) on a single-state one-hot input
        let arch = Architecture::tabular(1, 2);
        Policy::new(arch, vec![0.0, libm::log(p1 / (1.0 - p1)), 0.0, 0.0]).unwrap()
    }

    #[test]
    fn identity_candidate_gives_discounted_cost() {
        let pi = Policy::zeros(Architecture::tabular(1, 2));
        let e = episode(&[0, 1, 1], Some(2), 0.5);
        assert!((is_cost_estimate(&pi, &e, 0, 0.9).unwrap() - 0.81).abs() < 1e-12);
    }

    #[test]
    fn zero_cost_is_zero_whatever_the_ratio() {
        let e = episode(&[1, 1, 1], None, 1e-300);
        assert_eq!(is_cost_estimate(&biased(0.9), &e, 0, 0.9).unwrap(), 0.0);
    }

    #[test]
    fn ratio_multiplies_cost() {
        let e = episode(&[1, 1], Some(1), 0.5);
        let est = is_cost_estimate(&biased(0.8), &e, 0, 0.9).unwrap();
        assert!((est - (1.6 * 1.6) * 0.9).abs() < 1e-12);
    }

    #[test]
    fn overflow_rejects_the_batch() {
        let mut batch = vec![episode(&[0, 0], None, 0.5), episode(&[1; 5], Some(4), 0.5)];
        for t in &mut batch[1].transitions {
            t.behavior_logprob = -300.0;
        }
        let thresholds = ReleaseThresholds::new(vec![1.0]).unwrap();
        let d = hcope_gate(&biased(0.9), &batch, &thresholds, 0.05, 1);
        assert!(!d.pass);
        assert_eq!(d.failure, Some(HcopeError::RatioOverflow { episode: 1 }));
    }

    #[test]
    fn bonferroni_split() {
        let pi = Policy::zeros(Architecture::tabular(1, 2));
        let mut batch = vec![];
        for i in 0..10 {
            let mut e = episode(&[0, 1], if i % 3 == 0 { Some(1) } else { None }, 0.5);
            for t in &mut e.transitions {
                t.costs.push(i % 2 == 0 && t.costs[0]);
            }
            batch.push(e);
        }
        let thresholds = ReleaseThresholds::new(vec![1.0, 1.0]).unwrap();
        let d = hcope_gate(&pi, &batch, &thresholds, 0.05, 2);
        assert_eq!(d.estimates.len(), 2);
        assert!(d.estimates.iter().all(|e| e.delta == 0.025));
        assert!((d.estimates[0].effective_sample_size - 10.0).abs() < 1e-9);
    }

    #[test]
    fn self_comparison_passes() {
        let pi = Policy::zeros(Architecture::tabular(1, 2));
        let batch: Vec<Episode> = (0..20)
            .map(|i| episode(&[0, 1, 0], if i % 4 == 0 { Some(2) } else { None }, 0.5))
            .collect();
        let rho = on_policy_thresholds(&batch, 1, 0.05).unwrap();
        assert!(hcope_gate(&pi, &batch, &rho, 0.05, 1).pass);
    }

    #[test]
    fn insufficient_samples_fail() {
        let pi = Policy::zeros(Architecture::tabular(1, 2));
        let thresholds = ReleaseThresholds::new(vec![1.0]).unwrap();
        let d = hcope_gate(&pi, &[episode(&[0], None, 0.5)], &thresholds, 0.05, 1);
        assert!(!d.pass);
        assert_eq!(
            d.failure,
            Some(HcopeError::Stats(StatsError::InsufficientSamples(1)))
        );
    }
}
