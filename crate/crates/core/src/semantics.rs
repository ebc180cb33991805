//! Boolean satisfaction of requirements over finite episodes, the
//! time-averaged comfort score, and the policy-assessment metric
//! `F = σ(Φ_S) + ½σ(Φ_T) + ¼σ_avg(Φ_C)`.

use alloc::vec::Vec;

use crate::dsl::{Requirement, RequirementClass, RequirementKind, TaskSpec};

/// Sequence of feature vectors `s_0 .. s_T` of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    states: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TraceError {
    #[error("episode trace is empty")]
    Empty,
    #[error("state {step} has {got} values, expected {expected}")]
    Dimension {
        step: usize,
        got: usize,
        expected: usize,
    },
}

impl EpisodeTrace {
    /// Builds a trace whose states all have `dim` entries.
    pub fn new(states: Vec<Vec<f64>>, dim: usize) -> Result<Self, TraceError> {
        if states.is_empty() {
            return Err(TraceError::Empty);
        }
        if let Some((step, s)) = states.iter().enumerate().find(|(_, s)| s.len() != dim) {
            return Err(TraceError::Dimension {
                step,
                got: s.len(),
                expected: dim,
            });
        }
        Ok(EpisodeTrace { states })
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    fn indicators<'a>(
        &'a self,
        req: &'a Requirement,
    ) -> impl DoubleEndedIterator<Item = bool> + 'a {
        self.states.iter().map(move |s| req.predicate.holds(s))
    }
}

/// `σ(φ, τ)`.
pub fn satisfies(req: &Requirement, tau: &EpisodeTrace) -> bool {
    match req.kind {
        RequirementKind::Achieve => tau.indicators(req).any(|b| b),
        // ∃i ∀j ≥ i: the suffix witness exists iff the final state holds,
        // checked here literally by scanning the longest satisfied suffix
        RequirementKind::Conquer => tau.indicators(req).rev().take_while(|b| *b).count() > 0,
        RequirementKind::Ensure => tau.indicators(req).all(|b| b),
        RequirementKind::Encourage => true,
    }
}

/// `τ ⊨ Φ`: every requirement is satisfied.
pub fn satisfies_task(phi: &TaskSpec, tau: &EpisodeTrace) -> bool {
    phi.requirements().iter().all(|r| satisfies(r, tau))
}

/// Conjunction over one class. Empty classes are satisfied.
pub fn satisfies_class(phi: &TaskSpec, class: RequirementClass, tau: &EpisodeTrace) -> bool {
    phi.of_class(class).all(|r| satisfies(r, tau))
}

/// Fraction of states at which the comfort predicate holds.
pub fn comfort_avg(req: &Requirement, tau: &EpisodeTrace) -> f64 {
    debug_assert_eq!(req.kind, RequirementKind::Encourage);
    let hits = tau.indicators(req).filter(|b| *b).count();
    hits as f64 / tau.len() as f64
}

/// Set-wise comfort average. A task without comfort requirements scores 1.
pub fn comfort_avg_set(phi: &TaskSpec, tau: &EpisodeTrace) -> f64 {
    let comfort = phi.comfort();
    if comfort.is_empty() {
        return 1.0;
    }
    comfort.iter().map(|r| comfort_avg(r, tau)).sum::<f64>() / comfort.len() as f64
}

/// Policy-assessment metric `F ∈ [0, 1.75]`.
pub fn pam(phi: &TaskSpec, tau: &EpisodeTrace) -> f64 {
    PamReport::evaluate(phi, tau).score
}

/// Per-requirement breakdown of the assessment metric.
#[derive(Debug, Clone, PartialEq)]
pub struct PamReport {
    /// `σ` of each requirement, in task order.
    pub satisfied: Vec<bool>,
    /// Time-averaged satisfaction of each requirement, in task order.
    pub time_avg: Vec<f64>,
    pub safety: bool,
    pub target: bool,
    pub comfort_avg: f64,
    pub score: f64,
    /// First step at which each violated safety requirement fails.
    pub safety_violations: Vec<(usize, usize)>,
}

impl PamReport {
    pub fn evaluate(phi: &TaskSpec, tau: &EpisodeTrace) -> Self {
        let reqs = phi.requirements();
        let satisfied: Vec<bool> = reqs.iter().map(|r| satisfies(r, tau)).collect();
        let time_avg = reqs
            .iter()
            .map(|r| tau.indicators(r).filter(|b| *b).count() as f64 / tau.len() as f64)
            .collect();
        let class_sat = |class| {
            reqs.iter()
                .zip(&satisfied)
                .filter(|(r, _)| r.class() == class)
                .all(|(_, s)| *s)
        };
        let safety = class_sat(RequirementClass::Safety);
        let target = class_sat(RequirementClass::Target);
        let comfort_avg = comfort_avg_set(phi, tau);
        let score =
            f64::from(u8::from(safety)) + 0.5 * f64::from(u8::from(target)) + 0.25 * comfort_avg;
        let safety_violations = reqs
            .iter()
            .enumerate()
            .filter(|(_, r)| r.class() == RequirementClass::Safety)
            .filter_map(|(i, r)| tau.indicators(r).position(|b| !b).map(|step| (i, step)))
            .collect();
        PamReport {
            satisfied,
            time_avg,
            safety,
            target,
            comfort_avg,
            score,
            safety_violations,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_task;
    use alloc::vec;
    use proptest::prelude::*;

    fn spec() -> TaskSpec {
        parse_task(
            "task t\nstate a b c\n\
             ensure a >= 0 bounds [-1, 1]\n\
             conquer b >= 0 bounds [-1, 1]\n\
             encourage c >= 0 bounds [-1, 1]\n",
        )
        .unwrap()
    }

    fn single(kind: &str) -> Requirement {
        let text = alloc::format!(
            "task t\nstate p\n{kind} p >= 0 bounds [-1, 1]\n{}",
            if kind == "achieve" || kind == "conquer" {
                ""
            } else {
                "achieve p >= 0 bounds [-1, 1]\n"
            }
        );
        parse_task(&text).unwrap().requirements()[0].clone()
    }

    fn trace_1d(bits: &[bool]) -> EpisodeTrace {
        EpisodeTrace::new(
            bits.iter()
                .map(|b| vec![if *b { 1.0 } else { -1.0 }])
                .collect(),
            1,
        )
        .unwrap()
    }

    #[test]
    fn achieve_with_single_witness() {
        let mut bits = [false; 10];
        bits[3] = true;
        assert!(satisfies(&single("achieve"), &trace_1d(&bits)));
    }

    #[test]
    fn conquer_needs_a_satisfied_suffix() {
        let mut bits = [false; 11];
        bits[2..=5].iter_mut().for_each(|b| *b = true);
        assert!(!satisfies(&single("conquer"), &trace_1d(&bits)));
        let mut bits = [false; 11];
        bits[6..].iter_mut().for_each(|b| *b = true);
        assert!(satisfies(&single("conquer"), &trace_1d(&bits)));
    }

    #[test]
    fn encourage_is_always_satisfied() {
        assert!(satisfies(&single("encourage"), &trace_1d(&[false; 10])));
    }

    #[test]
    fn comfort_average_counts_hits() {
        let r = single("encourage");
        let half: Vec<bool> = (0..10).map(|i| i % 2 == 0).collect();
        assert_eq!(comfort_avg(&r, &trace_1d(&half)), 0.5);
        assert_eq!(comfort_avg(&r, &trace_1d(&[true; 10])), 1.0);
        assert_eq!(comfort_avg(&r, &trace_1d(&[false; 10])), 0.0);
    }

    #[test]
    fn task_satisfaction_is_a_conjunction() {
        let phi = spec();
        let ok = EpisodeTrace::new(vec![vec![1.0, -1.0, -1.0], vec![1.0, 1.0, -1.0]], 3).unwrap();
        assert!(satisfies_task(&phi, &ok));
        let bad = EpisodeTrace::new(vec![vec![-1.0, -1.0, 1.0], vec![1.0, 1.0, 1.0]], 3).unwrap();
        assert!(!satisfies_task(&phi, &bad));
    }

    #[test]
    fn pam_examples() {
        let phi = spec();
        let states: Vec<Vec<f64>> = (0..10)
            .map(|i| vec![1.0, 1.0, if i < 5 { 1.0 } else { -1.0 }])
            .collect();
        let tau = EpisodeTrace::new(states, 3).unwrap();
        assert_eq!(pam(&phi, &tau), 1.625);
        let states: Vec<Vec<f64>> = (0..10)
            .map(|i| vec![if i == 1 { -1.0 } else { 1.0 }, 1.0, 1.0])
            .collect();
        let tau = EpisodeTrace::new(states, 3).unwrap();
        let report = PamReport::evaluate(&phi, &tau);
        assert!(report.score <= 0.75);
        assert_eq!(report.safety_violations, vec![(0, 1)]);
    }

    #[test]
    fn empty_comfort_set_scores_one() {
        let phi = parse_task("task t\nstate a\nachieve a >= 0 bounds [-1, 1]\n").unwrap();
        let tau = EpisodeTrace::new(vec![vec![1.0]], 1).unwrap();
        assert_eq!(pam(&phi, &tau), 1.75);
    }

    #[test]
    fn empty_trace_rejected() {
        assert_eq!(EpisodeTrace::new(Vec::new(), 1), Err(TraceError::Empty));
    }

    proptest! {
        #[test]
        fn ensure_implies_conquer_implies_achieve(bits in proptest::collection::vec(any::<bool>(), 1..40)) {
            let tau = trace_1d(&bits);
            let e = satisfies(&single("ensure"), &tau);
            let c = satisfies(&single("conquer"), &tau);
            let a = satisfies(&single("achieve"), &tau);
            prop_assert!(!e || c);
            prop_assert!(!c || a);
        }

        #[test]
        fn comfort_average_is_permutation_invariant(
            bits in proptest::collection::vec(any::<bool>(), 1..40),
            seed in any::<u64>(),
        ) {
            use rand::{seq::SliceRandom, SeedableRng};
            let r = single("encourage");
            let mut shuffled = bits.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(comfort_avg(&r, &trace_1d(&bits)), comfort_avg(&r, &trace_1d(&shuffled)));
        }
    }
}
