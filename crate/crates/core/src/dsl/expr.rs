use alloc::boxed::Box;
use alloc::string::String;
use core::fmt;

/// Binary arithmetic operators of the expression language.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
        }
    }
}

/// Arithmetic expression over state variables. Variables are stored as
/// indices into the owning task's variable list.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Neg(Box<Expr>),
    Abs(Box<Expr>),
    Min(Box<Expr>, Box<Expr>),
    Max(Box<Expr>, Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("variable #{index} is not bound by a state of length {len}")]
    UnboundVariable { index: usize, len: usize },
    #[error("expression evaluated to a non-finite value")]
    NonFinite,
}

impl Expr {
    pub fn bin(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Bin(op, Box::new(lhs), Box::new(rhs))
    }

    /// Evaluates the expression on a state vector. The result is checked
    /// for finiteness once at the top.
    pub fn eval(&self, state: &[f64]) -> Result<f64, EvalError> {
        let v = self.eval_raw(state)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite)
        }
    }

    fn eval_raw(&self, state: &[f64]) -> Result<f64, EvalError> {
        Ok(match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => *state.get(*i).ok_or(EvalError::UnboundVariable {
                index: *i,
                len: state.len(),
            })?,
            Expr::Neg(e) => -e.eval_raw(state)?,
            Expr::Abs(e) => e.eval_raw(state)?.abs(),
            Expr::Min(a, b) => a.eval_raw(state)?.min(b.eval_raw(state)?),
            Expr::Max(a, b) => a.eval_raw(state)?.max(b.eval_raw(state)?),
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval_raw(state)?, b.eval_raw(state)?);
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                }
            }
        })
    }

    /// Largest variable index referenced, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Const(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Neg(e) | Expr::Abs(e) => e.max_var(),
            Expr::Min(a, b) | Expr::Max(a, b) | Expr::Bin(_, a, b) => {
                match (a.max_var(), b.max_var()) {
                    (Some(x), Some(y)) => Some(x.max(y)),
                    (x, y) => x.or(y),
                }
            }
        }
    }

    /// Rewrites variable indices through `map` (old index -> new index).
    pub fn remap(&self, map: &[usize]) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var(i) => Expr::Var(map[*i]),
            Expr::Neg(e) => Expr::Neg(Box::new(e.remap(map))),
            Expr::Abs(e) => Expr::Abs(Box::new(e.remap(map))),
            Expr::Min(a, b) => Expr::Min(Box::new(a.remap(map)), Box::new(b.remap(map))),
            Expr::Max(a, b) => Expr::Max(Box::new(a.remap(map)), Box::new(b.remap(map))),
            Expr::Bin(op, a, b) => Expr::bin(*op, a.remap(map), b.remap(map)),
        }
    }

    /// Binds variable names for display.
    pub fn display<'a>(&'a self, vars: &'a [String]) -> ExprDisplay<'a> {
        ExprDisplay { expr: self, vars }
    }
}

pub struct ExprDisplay<'a> {
    expr: &'a Expr,
    vars: &'a [String],
}

impl ExprDisplay<'_> {
    // `min_prec` is the binding strength required by the context; `right`
    // marks the right operand of a non-associative operator.
    fn write(
        &self,
        f: &mut fmt::Formatter<'_>,
        e: &Expr,
        min_prec: u8,
        right: bool,
    ) -> fmt::Result {
        match e {
            Expr::Const(c) => {
                if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) {
                    // a bare negative literal re-parses as a constant, but
                    // only in operand position
                    if min_prec > 0 {
                        write!(f, "({c:?})")
                    } else {
                        write!(f, "{c:?}")
                    }
                } else {
                    write!(f, "{c:?}")
                }
            }
            Expr::Var(i) => match self.vars.get(*i) {
                Some(name) => f.write_str(name),
                None => write!(f, "${i}"),
            },
            Expr::Neg(inner) => {
                f.write_str("-(")?;
                self.write(f, inner, 0, false)?;
                f.write_str(")")
            }
            Expr::Abs(inner) => {
                f.write_str("abs(")?;
                self.write(f, inner, 0, false)?;
                f.write_str(")")
            }
            Expr::Min(a, b) | Expr::Max(a, b) => {
                f.write_str(if matches!(e, Expr::Min(..)) {
                    "min("
                } else {
                    "max("
                })?;
                self.write(f, a, 0, false)?;
                f.write_str(", ")?;
                self.write(f, b, 0, false)?;
                f.write_str(")")
            }
            Expr::Bin(op, a, b) => {
                let prec = op.precedence();
                let paren = prec < min_prec || (prec == min_prec && right);
                if paren {
                    f.write_str("(")?;
                }
                self.write(f, a, prec, false)?;
                write!(f, " {} ", op.symbol())?;
                self.write(f, b, prec, true)?;
                if paren {
                    f.write_str(")")?;
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for ExprDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(f, self.expr, 0, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    #[test]
    fn evaluates_margin_form() {
        // 0.2 - abs(theta)
        let e = Expr::bin(
            BinOp::Sub,
            Expr::Const(0.2),
            Expr::Abs(Box::new(Expr::Var(0))),
        );
        assert!((e.eval(&[0.1]).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(e.eval(&[0.2]).unwrap(), 0.0);
        assert!((e.eval(&[0.5]).unwrap() + 0.3).abs() < 1e-15);
    }

    #[test]
    fn unbound_and_non_finite() {
        let e = Expr::bin(BinOp::Div, Expr::Const(1.0), Expr::Var(1));
        assert_eq!(
            e.eval(&[1.0]),
            Err(EvalError::UnboundVariable { index: 1, len: 1 })
        );
        assert_eq!(e.eval(&[1.0, 0.0]), Err(EvalError::NonFinite));
    }

    #[test]
    fn display_parenthesizes_by_precedence() {
        let vars = vec!["a".to_string(), "b".to_string()];
        let e = Expr::bin(
            BinOp::Sub,
            Expr::Var(0),
            Expr::bin(BinOp::Sub, Expr::Var(1), Expr::Const(-1.5)),
        );
        assert_eq!(e.display(&vars).to_string(), "a - (b - (-1.5))");
    }
}
