//! Hierarchical potential-based reward shaping.
//!
//! Each target/comfort predicate gets a normalized score
//! `r(φ, s) = 1 - min(0, f(s)) / m` in `[0, 1]`. The potential sums every
//! score weighted by the product of the scores of all strictly more important
//! requirements, and the shaped reward adds `γΨ(s') - Ψ(s)`.

use alloc::vec::Vec;

use crate::dsl::{precedes, Predicate, Requirement, RequirementClass, TaskSpec};

/// Score of a margin value under the predicate's declared bounds. Margins
/// outside `[lower, upper]` are clamped.
pub fn score_margin(p: &Predicate, margin: f64) -> f64 {
    let mut f = margin;
    if f < p.lower || f > p.upper {
        log::warn!(
            "margin {f} of `{}` outside declared bounds [{}, {}], clamping",
            p.name,
            p.lower,
            p.upper
        );
        f = f.clamp(p.lower, p.upper);
    }
    if p.lower == 0.0 {
        return 1.0;
    }
    1.0 - f.min(0.0) / p.lower
}

/// `r(φ, s)`. A margin that cannot be evaluated scores 0.
pub fn score(p: &Predicate, state: &[f64]) -> f64 {
    match p.margin(state) {
        Ok(f) => score_margin(p, f),
        Err(e) => {
            log::warn!("cannot evaluate `{}`: {e}; scoring 0", p.name);
            0.0
        }
    }
}

/// Target and comfort requirements of a task with the discount used for
/// shaping. Safety requirements never enter the potential.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialContext {
    requirements: Vec<Requirement>,
    gamma: f64,
}

impl PotentialContext {
    pub fn new(task: &TaskSpec, gamma: f64) -> Self {
        let requirements = task
            .of_class(RequirementClass::Target)
            .chain(task.of_class(RequirementClass::Comfort))
            .cloned()
            .collect();
        PotentialContext {
            requirements,
            gamma,
        }
    }

    pub fn requirements(&self) -> &[Requirement] {
        &self.requirements
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn scores(&self, state: &[f64]) -> Vec<f64> {
        self.requirements
            .iter()
            .map(|r| score(&r.predicate, state))
            .collect()
    }

    /// `Ψ(s)` computed from precomputed scores (aligned with
    /// [`requirements`](Self::requirements)).
    pub fn potential_from_scores(&self, scores: &[f64]) -> f64 {
        let reqs = &self.requirements;
        reqs.iter()
            .enumerate()
            .map(|(i, phi)| {
                let weight: f64 = reqs
                    .iter()
                    .zip(scores)
                    .filter(|(other, _)| precedes(other, phi))
                    .map(|(_, r)| *r)
                    .product();
                weight * scores[i]
            })
            .sum()
    }

    pub fn potential(&self, state: &[f64]) -> f64 {
        self.potential_from_scores(&self.scores(state))
    }

    /// `R' = R + γΨ(s') - Ψ(s)`; a terminal transition enters the absorbing
    /// state, whose potential is 0.
    pub fn shaped_reward(&self, reward: f64, state: &[f64], next: &[f64], terminal: bool) -> f64 {
        let next_potential = if terminal { 0.0 } else { self.potential(next) };
        reward + self.gamma * next_potential - self.potential(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_task;
    use proptest::prelude::*;

    fn task() -> TaskSpec {
        // target score = 1 + min(0, t)/2 ; comfort score = 1 + min(0, c)/2
        parse_task(
            "task t\nstate t c u\n\
             ensure u >= 0 bounds [-1, 1]\n\
             achieve t >= 0 bounds [-2, 1]\n\
             encourage c >= 0 bounds [-2, 1]\n",
        )
        .unwrap()
    }

    fn margin_for(score: f64) -> f64 {
        // inverse of 1 - min(0,f)/(-2) on the negative side
        (score - 1.0) * 2.0
    }

    #[test]
    fn score_examples() {
        let p = task().target().predicate.clone();
        assert_eq!(score_margin(&p, 0.7), 1.0);
        assert_eq!(score_margin(&p, -2.0), 0.0);
        assert_eq!(score_margin(&p, -1.0), 0.5);
        // clamped below the declared lower bound
        assert_eq!(score_margin(&p, -5.0), 0.0);
    }

    #[test]
    fn zero_lower_bound_scores_one() {
        let spec = parse_task("task t\nstate a\nachieve a >= 0 bounds [0, 1]\n").unwrap();
        assert_eq!(score(&spec.target().predicate, &[0.5]), 1.0);
    }

    #[test]
    fn potential_examples() {
        let ctx = PotentialContext::new(&task(), 1.0);
        let s = [margin_for(1.0), margin_for(0.5), -1.0];
        assert!((ctx.potential(&s) - 1.5).abs() < 1e-12);
        let s = [margin_for(0.8), margin_for(0.5), 1.0];
        assert!((ctx.potential(&s) - 1.2).abs() < 1e-12);
        let s = [margin_for(0.0), margin_for(0.0), 1.0];
        assert_eq!(ctx.potential(&s), 0.0);
    }

    #[test]
    fn shaped_reward_examples() {
        let ctx = PotentialContext::new(&task(), 1.0);
        let a = [margin_for(0.5), -2.0, 0.0];
        let b = [margin_for(0.9), -2.0, 0.0];
        assert!((ctx.shaped_reward(0.0, &a, &b, false) - 0.4).abs() < 1e-12);
        assert!((ctx.shaped_reward(0.3, &a, &a, false) - 0.3).abs() < 1e-15);
        // absorbing successor has zero potential
        assert!((ctx.shaped_reward(0.0, &a, &b, true) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn telescoping_sum_with_unit_discount() {
        let ctx = PotentialContext::new(&task(), 1.0);
        let states: Vec<[f64; 3]> = (0..8)
            .map(|i| {
                [
                    margin_for(i as f64 / 8.0),
                    margin_for(1.0 - i as f64 / 10.0),
                    0.0,
                ]
            })
            .collect();
        let total: f64 = states
            .windows(2)
            .map(|w| ctx.shaped_reward(0.0, &w[0], &w[1], false))
            .sum();
        let expected = ctx.potential(&states[7]) - ctx.potential(&states[0]);
        assert!((total - expected).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn score_is_monotone_in_margin(a in -3.0f64..2.0, b in -3.0f64..2.0) {
            let p = task().target().predicate.clone();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(score_margin(&p, lo) <= score_margin(&p, hi));
        }

        #[test]
        fn target_score_raises_comfort_weight(rt in 0.0f64..0.99, dt in 0.001f64..0.01, rc in 0.01f64..1.0) {
            let ctx = PotentialContext::new(&task(), 1.0);
            let comfort_term = |r_t: f64| ctx.potential_from_scores(&[r_t, rc]) - r_t;
            prop_assert!(comfort_term(rt + dt) > comfort_term(rt));
        }

        #[test]
        fn potential_is_bounded(t in -2.0f64..1.0, c in -2.0f64..1.0) {
            let ctx = PotentialContext::new(&task(), 0.99);
            let psi = ctx.potential(&[t, c, 0.0]);
            prop_assert!((0.0..=2.0).contains(&psi));
        }
    }
}
