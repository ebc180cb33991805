use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use super::expr::{EvalError, Expr};

/// The four requirement operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RequirementKind {
    Achieve,
    Conquer,
    Ensure,
    Encourage,
}

/// Importance class induced by the operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RequirementClass {
    Safety,
    Target,
    Comfort,
}

impl RequirementKind {
    pub const ALL: [RequirementKind; 4] = [
        RequirementKind::Achieve,
        RequirementKind::Conquer,
        RequirementKind::Ensure,
        RequirementKind::Encourage,
    ];

    pub fn class(self) -> RequirementClass {
        match self {
            RequirementKind::Ensure => RequirementClass::Safety,
            RequirementKind::Achieve | RequirementKind::Conquer => RequirementClass::Target,
            RequirementKind::Encourage => RequirementClass::Comfort,
        }
    }

    pub fn keyword(self) -> &'static str {
        match self {
            RequirementKind::Achieve => "achieve",
            RequirementKind::Conquer => "conquer",
            RequirementKind::Ensure => "ensure",
            RequirementKind::Encourage => "encourage",
        }
    }

    pub fn from_keyword(word: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.keyword() == word)
    }
}

/// Atomic predicate `f(s) >= 0` with declared bounds `[lower, upper]` on the
/// margin `f`.
#[derive(Debug, Clone, PartialEq)]
pub struct Predicate {
    pub name: String,
    pub expr: Expr,
    pub lower: f64,
    pub upper: f64,
}

impl Predicate {
    /// Margin `f(s)`.
    pub fn margin(&self, state: &[f64]) -> Result<f64, EvalError> {
        self.expr.eval(state)
    }

    /// `f(s) >= 0`, inclusive. Evaluation failures count as violations.
    pub fn holds(&self, state: &[f64]) -> bool {
        matches!(self.margin(state), Ok(v) if v >= 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Requirement {
    pub kind: RequirementKind,
    pub predicate: Predicate,
}

impl Requirement {
    pub fn class(&self) -> RequirementClass {
        self.kind.class()
    }
}

/// Strict importance order between requirements: safety precedes everything
/// else, and the target precedes comfort.
pub fn precedes(a: &Requirement, b: &Requirement) -> bool {
    class_precedes(a.class(), b.class())
}

pub fn class_precedes(a: RequirementClass, b: RequirementClass) -> bool {
    use RequirementClass::*;
    (a == Safety && b != Safety) || (a == Target && b == Comfort)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ValidationError {
    #[error("missing target: exactly one achieve/conquer requirement is required")]
    MissingTarget,
    #[error("multiple targets: found {0} achieve/conquer requirements, exactly one is required")]
    MultipleTargets(usize),
    #[error("predicate `{name}` declares lower bound {lower} > 0")]
    PositiveLowerBound { name: String, lower: f64 },
    #[error("predicate `{name}` declares invalid bounds [{lower}, {upper}]")]
    InvalidBounds {
        name: String,
        lower: f64,
        upper: f64,
    },
    #[error("predicate `{name}` references undeclared variable #{index}")]
    UndeclaredVariable { name: String, index: usize },
    #[error("variable `{0}` is declared twice")]
    DuplicateVariable(String),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("task variable `{0}` is not provided by the environment")]
pub struct BindError(pub String);

/// Validated requirement set. Construction goes through [`TaskSpec::new`] or
/// the parser, so every instance has exactly one target.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    name: String,
    state_vars: Vec<String>,
    constants: Vec<(String, f64)>,
    requirements: Vec<Requirement>,
}

impl TaskSpec {
    pub fn new(
        name: String,
        state_vars: Vec<String>,
        constants: Vec<(String, f64)>,
        requirements: Vec<Requirement>,
    ) -> Result<Self, ValidationError> {
        for (i, v) in state_vars.iter().enumerate() {
            if state_vars[..i].contains(v) {
                return Err(ValidationError::DuplicateVariable(v.clone()));
            }
        }
        let targets = requirements
            .iter()
            .filter(|r| r.class() == RequirementClass::Target)
            .count();
        match targets {
            0 => return Err(ValidationError::MissingTarget),
            1 => {}
            n => return Err(ValidationError::MultipleTargets(n)),
        }
        for r in &requirements {
            let p = &r.predicate;
            if p.lower > 0.0 {
                return Err(ValidationError::PositiveLowerBound {
                    name: p.name.clone(),
                    lower: p.lower,
                });
            }
            if !(p.lower.is_finite() && p.upper.is_finite()) || p.upper < 0.0 {
                return Err(ValidationError::InvalidBounds {
                    name: p.name.clone(),
                    lower: p.lower,
                    upper: p.upper,
                });
            }
            if let Some(index) = p.expr.max_var() {
                if index >= state_vars.len() {
                    return Err(ValidationError::UndeclaredVariable {
                        name: p.name.clone(),
                        index,
                    });
                }
            }
        }
        Ok(TaskSpec {
            name,
            state_vars,
            constants,
            requirements,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_vars(&self) -> &[String] {
        &self.state_vars
    }

    pub fn constants(&self) -> &[(String, f64)] {
        &self.constants
    }

    pub fn requirements(&self) -> &[Requirement] {
        &self.requirements
    }

    pub fn of_class(&self, class: RequirementClass) -> impl Iterator<Item = &Requirement> + '_ {
        self.requirements.iter().filter(move |r| r.class() == class)
    }

    pub fn safety(&self) -> Vec<&Requirement> {
        self.of_class(RequirementClass::Safety).collect()
    }

    pub fn comfort(&self) -> Vec<&Requirement> {
        self.of_class(RequirementClass::Comfort).collect()
    }

    /// The unique target requirement.
    pub fn target(&self) -> &Requirement {
        self.of_class(RequirementClass::Target)
            .next()
            .expect("validated task has a target")
    }

    /// Number of safety constraints `k`.
    pub fn num_constraints(&self) -> usize {
        self.of_class(RequirementClass::Safety).count()
    }

    /// Re-expresses every predicate over an environment's variable list.
    /// The returned spec declares exactly `vars`, in that order.
    pub fn rebind<S: AsRef<str>>(&self, vars: &[S]) -> Result<TaskSpec, BindError> {
        let map = self
            .state_vars
            .iter()
            .map(|v| {
                vars.iter()
                    .position(|w| w.as_ref() == v)
                    .ok_or_else(|| BindError(v.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let requirements = self
            .requirements
            .iter()
            .map(|r| Requirement {
                kind: r.kind,
                predicate: Predicate {
                    expr: r.predicate.expr.remap(&map),
                    ..r.predicate.clone()
                },
            })
            .collect();
        Ok(TaskSpec {
            name: self.name.clone(),
            state_vars: vars.iter().map(|v| String::from(v.as_ref())).collect(),
            constants: self.constants.clone(),
            requirements,
        })
    }
}

pub(crate) fn default_predicate_name(index: usize) -> String {
    format!("req{}", index + 1)
}

impl fmt::Display for TaskSpec {
    /// Prints source text that parses back to an equal spec.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "task {}", self.name)?;
        if !self.state_vars.is_empty() {
            f.write_str("state")?;
            for v in &self.state_vars {
                write!(f, " {v}")?;
            }
            writeln!(f)?;
        }
        for (name, value) in &self.constants {
            writeln!(f, "const {name} = {value:?}")?;
        }
        for r in &self.requirements {
            let p = &r.predicate;
            writeln!(
                f,
                "{} {} >= 0 bounds [{:?}, {:?}]",
                r.kind.keyword(),
                p.expr.display(&self.state_vars),
                p.lower,
                p.upper
            )?;
        }
        Ok(())
    }
}
