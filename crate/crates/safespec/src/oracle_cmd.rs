//! Paired value iteration under the sparse and the shaped reward.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use safespec_core::env::{chain_oracle_for, TabularCmdp, TabularError};
use safespec_core::oracle::{
    random_chain, same_greedy, value_iteration, OracleError, RewardVariant, ValueTable,
    MAX_VI_STATES,
};
use safespec_core::TaskSpec;

#[derive(Debug, thiserror::Error)]
pub enum OracleCmdError {
    #[error("task does not map onto the chain: {0}")]
    NotAChain(String),
    #[error("instance has {got} states; the oracle handles at most {max}")]
    TooLarge { got: usize, max: usize },
    #[error(transparent)]
    Tabular(#[from] TabularError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// Builds the five-cell chain for a task over the single variable `pos`.
pub fn chain_instance(
    task: &TaskSpec,
    slip: f64,
    gamma: f64,
    horizon: usize,
) -> Result<TabularCmdp, OracleCmdError> {
    let bound = task
        .rebind(&["pos"])
        .map_err(|e| OracleCmdError::NotAChain(format!("state variable `{}` is not `pos`", e.0)))?;
    Ok(chain_oracle_for(&bound, slip, gamma, horizon)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub sparse: ValueTable,
    pub shaped: ValueTable,
    pub agree: bool,
}

pub fn compare(m: &TabularCmdp) -> Result<Comparison, OracleCmdError> {
    if m.num_states > MAX_VI_STATES {
        return Err(OracleCmdError::TooLarge {
            got: m.num_states,
            max: MAX_VI_STATES,
        });
    }
    let sparse = value_iteration(m, RewardVariant::Sparse)?;
    let shaped = value_iteration(m, RewardVariant::Shaped)?;
    let agree = same_greedy(m, &sparse, &shaped);
    Ok(Comparison {
        sparse,
        shaped,
        agree,
    })
}

fn actions(set: &[usize]) -> String {
    let v: Vec<String> = set.iter().map(usize::to_string).collect();
    format!("{{{}}}", v.join(","))
}

pub fn render(m: &TabularCmdp, c: &Comparison) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "state  terminal  V_sparse      greedy_sparse  V_shaped      greedy_shaped"
    )
    .unwrap();
    for s in 0..m.num_states {
        writeln!(
            out,
            "{s:<6} {:<9} {:<13.6} {:<14} {:<13.6} {}",
            m.terminal[s],
            c.sparse.values[s],
            actions(&c.sparse.greedy[s]),
            c.shaped.values[s],
            actions(&c.shaped.greedy[s]),
        )
        .unwrap();
    }
    let verdict = if c.agree { "coincide" } else { "DIFFER" };
    writeln!(out, "greedy action sets {verdict}").unwrap();
    out
}

/// Compares greedy sets on `n` random chains drawn from `seed`; returns
/// the number of agreeing instances.
pub fn sweep(n: usize, seed: u64) -> Result<usize, OracleCmdError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agree = 0;
    for _ in 0..n {
        let m = random_chain(&mut rng)?;
        if compare(&m)?.agree {
            agree += 1;
        }
    }
    Ok(agree)
}
