//! Plain-text policy checkpoints.
//!
//! ```text
//! safespec-policy 1
//! input 4
//! hidden 32 32
//! head gaussian 1
//! params 1250
//! 0.0123
//! ...
//! ```
//!
//! Parameters are written in Rust's shortest round-trip float form, so a
//! saved policy reloads bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use safespec_core::policy::{Architecture, Head, Policy, PolicyError};

const MAGIC: &str = "safespec-policy 1";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

fn bad(line: usize, message: impl Into<String>) -> CheckpointError {
    CheckpointError::Format {
        line,
        message: message.into(),
    }
}

pub fn to_text(policy: &Policy) -> String {
    let arch = policy.architecture();
    let mut out = String::new();
    writeln!(out, "{MAGIC}").unwrap();
    writeln!(out, "input {}", arch.input_dim).unwrap();
    let hidden: Vec<String> = arch.hidden.iter().map(usize::to_string).collect();
    writeln!(out, "hidden {}", hidden.join(" ")).unwrap();
    match arch.head {
        Head::Gaussian { action_dim } => writeln!(out, "head gaussian {action_dim}").unwrap(),
        Head::Softmax { num_actions } => writeln!(out, "head softmax {num_actions}").unwrap(),
    }
    writeln!(out, "params {}", policy.num_params()).unwrap();
    for p in policy.params() {
        writeln!(out, "{p}").unwrap();
    }
    out
}

fn keyed<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    key: &str,
) -> Result<(usize, Vec<&'a str>), CheckpointError> {
    let (n, line) = lines
        .next()
        .ok_or_else(|| bad(0, format!("missing `{key}` line")))?;
    let mut words = line.split_whitespace();
    if words.next() != Some(key) {
        return Err(bad(n, format!("expected `{key}`")));
    }
    Ok((n, words.collect()))
}

fn number<T: std::str::FromStr>(line: usize, word: &str) -> Result<T, CheckpointError> {
    word.parse()
        .map_err(|_| bad(line, format!("`{word}` is not a valid number")))
}

pub fn from_text(text: &str) -> Result<Policy, CheckpointError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    match lines.next() {
        Some((_, MAGIC)) => {}
        Some((n, _)) => return Err(bad(n, "not a policy checkpoint")),
        None => return Err(bad(1, "empty checkpoint")),
    }
    let (n, w) = keyed(&mut lines, "input")?;
    let input_dim = match w.as_slice() {
        [v] => number(n, v)?,
        _ => return Err(bad(n, "expected one input size")),
    };
    let (n, w) = keyed(&mut lines, "hidden")?;
    let hidden = w
        .iter()
        .map(|v| number(n, v))
        .collect::<Result<Vec<usize>, _>>()?;
    let (n, w) = keyed(&mut lines, "head")?;
    let head = match w.as_slice() {
        ["gaussian", d] => Head::Gaussian {
            action_dim: number(n, d)?,
        },
        ["softmax", a] => Head::Softmax {
            num_actions: number(n, a)?,
        },
        _ => {
            return Err(bad(
                n,
                "expected `head gaussian <dim>` or `head softmax <n>`",
            ))
        }
    };
    let (n, w) = keyed(&mut lines, "params")?;
    let count: usize = match w.as_slice() {
        [v] => number(n, v)?,
        _ => return Err(bad(n, "expected one parameter count")),
    };
    let params = lines
        .map(|(n, l)| number::<f64>(n, l))
        .collect::<Result<Vec<_>, _>>()?;
    if params.len() != count {
        return Err(bad(
            n,
            format!("declared {count} parameters, found {}", params.len()),
        ));
    }
    let arch = Architecture {
        input_dim,
        hidden,
        head,
    };
    Ok(Policy::new(arch, params)?)
}

pub fn save(policy: &Policy, path: &Path) -> Result<(), CheckpointError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, to_text(policy))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Policy, CheckpointError> {
    from_text(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for arch in [Architecture::gaussian(4, 1), Architecture::tabular(5, 2)] {
            let p = Policy::init(arch, &mut rng, -0.5);
            let back = from_text(&to_text(&p)).unwrap();
            assert_eq!(back, p);
        }
    }

    #[test]
    fn rejects_damaged_files() {
        let p = Policy::zeros(Architecture::tabular(2, 2));
        let text = to_text(&p);
        assert!(from_text("").is_err());
        assert!(from_text(&text.replace("safespec-policy", "other")).is_err());
        let n = p.num_params();
        let wrong = text.replace(&format!("params {n}"), &format!("params {}", n + 1));
        assert!(from_text(&wrong).is_err());
        assert!(from_text(&text.replace("softmax", "beta")).is_err());
        let truncated: String = text.lines().take(6).map(|l| format!("{l}\n")).collect();
        assert!(from_text(&truncated).is_err());
    }
}
