//! Task-specification language: requirements `achieve | conquer | ensure |
//! encourage` over margin predicates `f(s) >= 0`, grouped into a task with a
//! unique target and the safety > target > comfort importance order.
//!
//! Source format, one directive per line, `#` starts a comment:
//!
//! ```text
//! task <identifier>
//! state <var> [<var> ...]
//! const <name> = <real>
//! ensure|achieve|conquer|encourage <expr> <=|>=|<|> <expr> bounds [<m>, <M>]
//! ```

mod expr;
mod lexer;
mod parser;
mod task;

pub use expr::{BinOp, EvalError, Expr};
pub use parser::{parse_task, ParseError, ParseErrorKind};
pub use task::{
    class_precedes, precedes, BindError, Predicate, Requirement, RequirementClass, RequirementKind,
    TaskSpec, ValidationError,
};

/// Margin `f(s)` of a predicate. Satisfaction is `f(s) >= 0`.
pub fn evaluate_margin(p: &Predicate, state: &[f64]) -> Result<f64, EvalError> {
    p.margin(state)
}
