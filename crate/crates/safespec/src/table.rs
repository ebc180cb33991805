//! Plain-text tables for tabular CMDP instances.
//!
//! One keyword per line, `#` starts a comment:
//!
//! ```text
//! states 2
//! actions 2
//! gamma 0.9
//! horizon 3
//! constraints 1
//! features pos
//! feature 0 0
//! feature 1 1
//! reward 0 1
//! cost 1 0 1
//! terminal 0 1
//! reason running goal_achieved
//! potential 0.5 0
//! initial 1 0
//! p 0 0 1 0
//! p 0 1 0 1
//! p 1 0 0 1
//! p 1 1 0 1
//! ```
//!
//! `cost i` lists constraint `i`'s indicator per state (constraints count
//! from 1), `feature s` the feature vector of state `s` and `p s a` the
//! successor distribution of state `s` under action `a`. Every row must
//! appear exactly once. Floats are written in shortest round-trip form,
//! so writing and re-reading an instance is lossless.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use safespec_core::cmdp::TerminationReason;
use safespec_core::env::{TabularCmdp, TabularError};

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("missing `{0}`")]
    Missing(String),
    #[error(transparent)]
    Invalid(#[from] TabularError),
}

fn syntax(line: usize, message: impl Into<String>) -> TableError {
    TableError::Syntax {
        line,
        message: message.into(),
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(" ")
}

pub fn write_table(m: &TabularCmdp) -> String {
    let mut out = String::new();
    let k = m.num_constraints();
    writeln!(out, "states {}", m.num_states).unwrap();
    writeln!(out, "actions {}", m.num_actions).unwrap();
    writeln!(out, "gamma {}", m.gamma).unwrap();
    writeln!(out, "horizon {}", m.horizon).unwrap();
    writeln!(out, "constraints {k}").unwrap();
    writeln!(out, "features {}", m.feature_names.join(" ")).unwrap();
    for (s, f) in m.features.iter().enumerate() {
        writeln!(out, "feature {s} {}", join(f)).unwrap();
    }
    writeln!(out, "reward {}", join(&m.reward)).unwrap();
    for i in 0..k {
        let c: Vec<u8> = m.costs.iter().map(|c| u8::from(c[i])).collect();
        writeln!(out, "cost {} {}", i + 1, join(&c)).unwrap();
    }
    let t: Vec<u8> = m.terminal.iter().map(|b| u8::from(*b)).collect();
    writeln!(out, "terminal {}", join(&t)).unwrap();
    let r: Vec<&str> = m.reason.iter().map(|r| r.as_str()).collect();
    writeln!(out, "reason {}", r.join(" ")).unwrap();
    writeln!(out, "potential {}", join(&m.potential)).unwrap();
    writeln!(out, "initial {}", join(&m.initial)).unwrap();
    for s in 0..m.num_states {
        for a in 0..m.num_actions {
            writeln!(out, "p {s} {a} {}", join(m.row(s, a))).unwrap();
        }
    }
    out
}

fn parse_num<T: std::str::FromStr>(line: usize, w: &str) -> Result<T, TableError> {
    w.parse()
        .map_err(|_| syntax(line, format!("`{w}` is not a valid number")))
}

fn parse_all<T: std::str::FromStr>(line: usize, ws: &[&str]) -> Result<Vec<T>, TableError> {
    ws.iter().map(|w| parse_num(line, w)).collect()
}

fn parse_bit(line: usize, w: &str) -> Result<bool, TableError> {
    match w {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(syntax(line, format!("`{w}` is not 0 or 1"))),
    }
}

#[derive(Default)]
struct Raw {
    scalars: BTreeMap<&'static str, (usize, String)>,
    feature_names: Option<Vec<String>>,
    features: BTreeMap<usize, Vec<f64>>,
    rows: BTreeMap<&'static str, (usize, Vec<String>)>,
    costs: BTreeMap<usize, (usize, Vec<String>)>,
    p: BTreeMap<(usize, usize), Vec<f64>>,
}

const SCALARS: [&str; 5] = ["states", "actions", "gamma", "horizon", "constraints"];
const ROWS: [&str; 5] = ["reward", "terminal", "reason", "potential", "initial"];

pub fn read_table(text: &str) -> Result<TabularCmdp, TableError> {
    let mut raw = Raw::default();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let words: Vec<&str> = line.split_whitespace().collect();
        let (key, rest) = (words[0], &words[1..]);
        let dup = || syntax(n, format!("duplicate `{line}`"));
        if let Some(k) = SCALARS.iter().find(|k| **k == key) {
            if rest.len() != 1 {
                return Err(syntax(n, format!("`{key}` takes one value")));
            }
            if raw.scalars.insert(k, (n, rest[0].to_string())).is_some() {
                return Err(dup());
            }
        } else if let Some(k) = ROWS.iter().find(|k| **k == key) {
            let v = rest.iter().map(|w| w.to_string()).collect();
            if raw.rows.insert(k, (n, v)).is_some() {
                return Err(dup());
            }
        } else {
            match key {
                "features" => {
                    if raw
                        .feature_names
                        .replace(rest.iter().map(|w| w.to_string()).collect())
                        .is_some()
                    {
                        return Err(dup());
                    }
                }
                "feature" => {
                    let (s, vals) = rest
                        .split_first()
                        .ok_or_else(|| syntax(n, "missing state"))?;
                    let s: usize = parse_num(n, s)?;
                    if raw.features.insert(s, parse_all(n, vals)?).is_some() {
                        return Err(dup());
                    }
                }
                "cost" => {
                    let (i, vals) = rest
                        .split_first()
                        .ok_or_else(|| syntax(n, "missing constraint"))?;
                    let i: usize = parse_num(n, i)?;
                    let v = vals.iter().map(|w| w.to_string()).collect();
                    if raw.costs.insert(i, (n, v)).is_some() {
                        return Err(dup());
                    }
                }
                "p" => {
                    if rest.len() < 2 {
                        return Err(syntax(n, "expected `p <state> <action> <probabilities>`"));
                    }
                    let key = (parse_num(n, rest[0])?, parse_num(n, rest[1])?);
                    if raw.p.insert(key, parse_all(n, &rest[2..])?).is_some() {
                        return Err(dup());
                    }
                }
                other => return Err(syntax(n, format!("unknown keyword `{other}`"))),
            }
        }
    }
    build(raw)
}

fn build(raw: Raw) -> Result<TabularCmdp, TableError> {
    let scalar = |k: &str| {
        raw.scalars
            .get(k)
            .map(|(n, v)| (*n, v.as_str()))
            .ok_or_else(|| TableError::Missing(k.to_string()))
    };
    let (n, v) = scalar("states")?;
    let num_states: usize = parse_num(n, v)?;
    let (n, v) = scalar("actions")?;
    let num_actions: usize = parse_num(n, v)?;
    let (n, v) = scalar("gamma")?;
    let gamma: f64 = parse_num(n, v)?;
    let (n, v) = scalar("horizon")?;
    let horizon: usize = parse_num(n, v)?;
    let (n, v) = scalar("constraints")?;
    let k: usize = parse_num(n, v)?;

    let row = |key: &str| -> Result<(usize, &Vec<String>), TableError> {
        let (n, v) = raw
            .rows
            .get(key)
            .ok_or_else(|| TableError::Missing(key.to_string()))?;
        if v.len() != num_states {
            return Err(syntax(*n, format!("`{key}` needs {num_states} values")));
        }
        Ok((*n, v))
    };
    let floats = |key: &str| -> Result<Vec<f64>, TableError> {
        let (n, v) = row(key)?;
        v.iter().map(|w| parse_num(n, w)).collect()
    };
    let reward = floats("reward")?;
    let potential = floats("potential")?;
    let initial = floats("initial")?;
    let (n, t) = row("terminal")?;
    let terminal = t
        .iter()
        .map(|w| parse_bit(n, w))
        .collect::<Result<Vec<_>, _>>()?;
    let (n, r) = row("reason")?;
    let reason = r
        .iter()
        .map(|w| {
            TerminationReason::parse(w).ok_or_else(|| syntax(n, format!("unknown reason `{w}`")))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut costs = vec![Vec::with_capacity(k); num_states];
    for i in 1..=k {
        let (n, v) = raw
            .costs
            .get(&i)
            .ok_or_else(|| TableError::Missing(format!("cost {i}")))?;
        if v.len() != num_states {
            return Err(syntax(*n, format!("`cost {i}` needs {num_states} values")));
        }
        for (s, w) in v.iter().enumerate() {
            costs[s].push(parse_bit(*n, w)?);
        }
    }
    if raw.costs.keys().any(|i| *i == 0 || *i > k) {
        return Err(TableError::Missing(format!(
            "cost rows must be numbered 1..={k}"
        )));
    }

    let feature_names = raw
        .feature_names
        .ok_or_else(|| TableError::Missing("features".into()))?;
    let mut features = Vec::with_capacity(num_states);
    for s in 0..num_states {
        let f = raw
            .features
            .get(&s)
            .ok_or_else(|| TableError::Missing(format!("feature {s}")))?;
        if f.len() != feature_names.len() {
            return Err(TableError::Missing(format!(
                "feature {s} needs {} values",
                feature_names.len()
            )));
        }
        features.push(f.clone());
    }
    if raw.features.len() != num_states {
        return Err(TableError::Missing(
            "feature rows must cover states exactly".into(),
        ));
    }

    let mut transitions = Vec::with_capacity(num_states * num_actions * num_states);
    for s in 0..num_states {
        for a in 0..num_actions {
            let p = raw
                .p
                .get(&(s, a))
                .ok_or_else(|| TableError::Missing(format!("p {s} {a}")))?;
            if p.len() != num_states {
                return Err(TableError::Missing(format!(
                    "p {s} {a} needs {num_states} values"
                )));
            }
            transitions.extend_from_slice(p);
        }
    }
    if raw.p.len() != num_states * num_actions {
        return Err(TableError::Missing(
            "p rows must cover states and actions exactly".into(),
        ));
    }

    let m = TabularCmdp {
        num_states,
        num_actions,
        transitions,
        reward,
        costs,
        terminal,
        reason,
        initial,
        potential,
        features,
        feature_names,
        gamma,
        horizon,
    };
    m.validate()?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use safespec_core::env::chain_oracle;
    use safespec_core::oracle::random_chain;

    #[test]
    fn chain_round_trips() {
        let m = chain_oracle(0.1, 0.9, 6).unwrap();
        assert_eq!(read_table(&write_table(&m)).unwrap(), m);
    }

    #[test]
    fn random_instances_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let m = random_chain(&mut rng).unwrap();
            assert_eq!(read_table(&write_table(&m)).unwrap(), m);
        }
    }

    #[test]
    fn rejects_broken_tables() {
        let text = write_table(&chain_oracle(0.1, 0.9, 6).unwrap());
        let drop_line = |prefix: &str| -> String {
            text.lines()
                .filter(|l| !l.starts_with(prefix))
                .map(|l| format!("{l}\n"))
                .collect()
        };
        assert!(matches!(
            read_table(&drop_line("p 3 1")),
            Err(TableError::Missing(_))
        ));
        assert!(matches!(
            read_table(&drop_line("gamma")),
            Err(TableError::Missing(_))
        ));
        assert!(read_table(&format!("{text}reward 0 0 0 0 0\n")).is_err());
        assert!(read_table(&text.replace("p 0 0 0.9", "p 0 0 0.8")).is_err());
        assert!(read_table(&format!("{text}bogus 1\n")).is_err());
        assert!(read_table(&text.replace("safety_violation", "crash")).is_err());
    }
}
