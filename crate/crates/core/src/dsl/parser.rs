use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::expr::{BinOp, Expr};
use super::lexer::{tokenize, Spanned, Token};
use super::task::{
    default_predicate_name, Predicate, Requirement, RequirementKind, TaskSpec, ValidationError,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseErrorKind {
    #[error("expected {expected}, found {found}")]
    Unexpected {
        expected: &'static str,
        found: String,
    },
    #[error("unexpected character `{0}`")]
    BadCharacter(char),
    #[error("unknown directive `{0}`")]
    UnknownDirective(String),
    #[error("undeclared variable or constant `{0}`")]
    Undeclared(String),
    #[error("name `{0}` is already declared")]
    Duplicate(String),
    #[error("missing `task <name>` line")]
    MissingTask,
    #[error("bounds must be constant expressions")]
    NonConstantBound,
    #[error(transparent)]
    Validation(#[from] ValidationError),
}

/// Parse failure with a 1-based source position. Validation errors that
/// concern the whole task carry line 0.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{line}:{column}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
}

#[derive(Default)]
struct Scope {
    vars: Vec<String>,
    constants: Vec<(String, f64)>,
}

impl Scope {
    fn declared(&self, name: &str) -> bool {
        self.vars.iter().any(|v| v == name) || self.constants.iter().any(|(c, _)| c == name)
    }
}

struct LineParser<'a> {
    tokens: &'a [Spanned],
    pos: usize,
    line: usize,
    end_column: usize,
    scope: &'a Scope,
}

impl<'a> LineParser<'a> {
    fn err(&self, kind: ParseErrorKind) -> ParseError {
        let column = self
            .tokens
            .get(self.pos)
            .map_or(self.end_column, |t| t.column);
        ParseError {
            line: self.line,
            column,
            kind,
        }
    }

    fn unexpected(&self, expected: &'static str) -> ParseError {
        let found = self
            .tokens
            .get(self.pos)
            .map_or_else(|| "end of line".to_string(), |t| t.token.to_string());
        self.err(ParseErrorKind::Unexpected { expected, found })
    }

    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|t| &t.token)
    }

    fn expect(&mut self, want: Token, expected: &'static str) -> Result<(), ParseError> {
        if self.peek() == Some(&want) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.unexpected(expected))
        }
    }

    fn ident(&mut self, expected: &'static str) -> Result<String, ParseError> {
        match self.peek() {
            Some(Token::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.unexpected(expected)),
        }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.tokens.len()
    }

    fn finish(&self) -> Result<(), ParseError> {
        if self.at_end() {
            Ok(())
        } else {
            Err(self.unexpected("end of line"))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(Token::Plus) => BinOp::Add,
                Some(Token::Minus) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Token::Star) => BinOp::Mul,
                Some(Token::Slash) => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.peek() == Some(&Token::Minus) {
            self.pos += 1;
            // `-<number>` is a negative literal, anything else a negation
            if let Some(Token::Number(n)) = self.peek() {
                let n = *n;
                self.pos += 1;
                return Ok(Expr::Const(-n));
            }
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        match self.peek().cloned() {
            Some(Token::Number(n)) => {
                self.pos += 1;
                Ok(Expr::Const(n))
            }
            Some(Token::LParen) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(Token::RParen, "`)`")?;
                Ok(e)
            }
            Some(Token::Ident(name)) => {
                let is_call =
                    self.tokens.get(self.pos + 1).map(|t| &t.token) == Some(&Token::LParen);
                if is_call && matches!(name.as_str(), "abs" | "min" | "max") {
                    self.pos += 2;
                    let a = self.expr()?;
                    let e = if name == "abs" {
                        Expr::Abs(Box::new(a))
                    } else {
                        self.expect(Token::Comma, "`,`")?;
                        let b = self.expr()?;
                        if name == "min" {
                            Expr::Min(Box::new(a), Box::new(b))
                        } else {
                            Expr::Max(Box::new(a), Box::new(b))
                        }
                    };
                    self.expect(Token::RParen, "`)`")?;
                    return Ok(e);
                }
                if let Some(i) = self.scope.vars.iter().position(|v| *v == name) {
                    self.pos += 1;
                    Ok(Expr::Var(i))
                } else if let Some((_, v)) = self.scope.constants.iter().find(|(c, _)| *c == name) {
                    self.pos += 1;
                    Ok(Expr::Const(*v))
                } else {
                    Err(self.err(ParseErrorKind::Undeclared(name)))
                }
            }
            _ => Err(self.unexpected("expression")),
        }
    }

    fn constant(&mut self) -> Result<f64, ParseError> {
        let start = self.pos;
        let e = self.expr()?;
        if e.max_var().is_some() {
            self.pos = start;
            return Err(self.err(ParseErrorKind::NonConstantBound));
        }
        e.eval(&[]).map_err(|_| {
            self.pos = start;
            self.err(ParseErrorKind::NonConstantBound)
        })
    }
}

fn is_zero(e: &Expr) -> bool {
    matches!(e, Expr::Const(c) if *c == 0.0)
}

/// Parses task source text in the format described in the module docs.
pub fn parse_task(text: &str) -> Result<TaskSpec, ParseError> {
    let mut scope = Scope::default();
    let mut name: Option<String> = None;
    let mut requirements = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("");
        let tokens = tokenize(content).map_err(|(column, c)| ParseError {
            line,
            column,
            kind: ParseErrorKind::BadCharacter(c),
        })?;
        if tokens.is_empty() {
            continue;
        }
        let mut p = LineParser {
            tokens: &tokens,
            pos: 0,
            line,
            end_column: content.chars().count() + 1,
            scope: &scope,
        };
        let keyword = p.ident("directive")?;
        match keyword.as_str() {
            "task" => {
                if name.is_some() {
                    return Err(p.err(ParseErrorKind::Duplicate("task".into())));
                }
                name = Some(p.ident("task name")?);
                p.finish()?;
            }
            "state" => {
                let mut new_vars = Vec::new();
                while !p.at_end() {
                    let v = p.ident("state variable name")?;
                    if scope.declared(&v) || new_vars.contains(&v) {
                        p.pos -= 1;
                        return Err(p.err(ParseErrorKind::Duplicate(v)));
                    }
                    new_vars.push(v);
                }
                if new_vars.is_empty() {
                    return Err(p.unexpected("state variable name"));
                }
                scope.vars.extend(new_vars);
            }
            "const" => {
                let c = p.ident("constant name")?;
                if scope.declared(&c) {
                    p.pos -= 1;
                    return Err(p.err(ParseErrorKind::Duplicate(c)));
                }
                p.expect(Token::Assign, "`=`")?;
                let v = p.constant()?;
                p.finish()?;
                scope.constants.push((c, v));
            }
            kw => {
                let Some(kind) = RequirementKind::from_keyword(kw) else {
                    p.pos = 0;
                    return Err(p.err(ParseErrorKind::UnknownDirective(kw.into())));
                };
                let lhs = p.expr()?;
                let cmp = match p.peek() {
                    Some(t @ (Token::Le | Token::Lt | Token::Ge | Token::Gt)) => t.clone(),
                    _ => return Err(p.unexpected("comparison")),
                };
                p.pos += 1;
                let rhs = p.expr()?;
                let expr = match cmp {
                    Token::Le | Token::Lt => {
                        if is_zero(&lhs) {
                            rhs
                        } else {
                            Expr::bin(BinOp::Sub, rhs, lhs)
                        }
                    }
                    _ => {
                        if is_zero(&rhs) {
                            lhs
                        } else {
                            Expr::bin(BinOp::Sub, lhs, rhs)
                        }
                    }
                };
                match p.ident("`bounds`") {
                    Ok(b) if b == "bounds" => {}
                    Ok(_) => {
                        p.pos -= 1;
                        return Err(p.unexpected("`bounds`"));
                    }
                    Err(e) => return Err(e),
                }
                p.expect(Token::LBracket, "`[`")?;
                let lower = p.constant()?;
                p.expect(Token::Comma, "`,`")?;
                let upper = p.constant()?;
                p.expect(Token::RBracket, "`]`")?;
                p.finish()?;
                let predicate = Predicate {
                    name: default_predicate_name(requirements.len()),
                    expr,
                    lower,
                    upper,
                };
                // per-line bound checks get a precise position
                if lower > 0.0 {
                    return Err(ParseError {
                        line,
                        column: 1,
                        kind: ValidationError::PositiveLowerBound {
                            name: predicate.name,
                            lower,
                        }
                        .into(),
                    });
                }
                if upper < 0.0 {
                    return Err(ParseError {
                        line,
                        column: 1,
                        kind: ValidationError::InvalidBounds {
                            name: predicate.name,
                            lower,
                            upper,
                        }
                        .into(),
                    });
                }
                requirements.push(Requirement { kind, predicate });
            }
        }
    }

    let name = name.ok_or(ParseError {
        line: 0,
        column: 0,
        kind: ParseErrorKind::MissingTask,
    })?;
    TaskSpec::new(name, scope.vars, scope.constants, requirements).map_err(|e| ParseError {
        line: 0,
        column: 0,
        kind: e.into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::RequirementClass;

    const TABLE2: &str = "\
# cart-pole with obstacle
task cartpole_obstacle
state x x_dot theta theta_dot dist_goal dist_obstacle
const theta_max = 0.33
const theta_comf = 0.1
const x_lim = 2.4
const eps = 0.1
conquer dist_goal <= eps bounds [-3.8, 0.1]
ensure abs(theta) <= theta_max bounds [-3.14, 0.33]
ensure dist_obstacle > 0 bounds [0, 5]
ensure abs(x) <= x_lim bounds [-1, 2.4]
encourage abs(theta) <= theta_comf bounds [-3.04, 0.1]
";

    #[test]
    fn parses_cartpole_table() {
        let spec = parse_task(TABLE2).unwrap();
        assert_eq!(spec.name(), "cartpole_obstacle");
        assert_eq!(spec.of_class(RequirementClass::Safety).count(), 3);
        assert_eq!(spec.of_class(RequirementClass::Target).count(), 1);
        assert_eq!(spec.of_class(RequirementClass::Comfort).count(), 1);
        assert_eq!(spec.target().kind, RequirementKind::Conquer);
        // theta_max - |theta|
        let theta = spec.requirements()[1].predicate.clone();
        let s = [0.0, 0.0, 0.1, 0.0, 0.0, 0.0];
        assert!((theta.margin(&s).unwrap() - 0.23).abs() < 1e-12);
    }

    #[test]
    fn missing_target() {
        let err = parse_task("task t\nstate x\nensure x >= 0 bounds [-1, 1]\n").unwrap_err();
        assert_eq!(
            err.kind,
            ParseErrorKind::Validation(ValidationError::MissingTarget)
        );
        assert!(err.to_string().contains("missing target"));
    }

    #[test]
    fn undeclared_variable_has_position() {
        let err = parse_task("task t\nstate x\nachieve y >= 0 bounds [-1, 1]\n").unwrap_err();
        assert_eq!(err.line, 3);
        assert_eq!(err.column, 9);
        assert_eq!(err.kind, ParseErrorKind::Undeclared("y".into()));
    }

    #[test]
    fn positive_lower_bound_rejected() {
        let err = parse_task("task t\nstate x\nachieve x >= 0 bounds [0.5, 1]\n").unwrap_err();
        assert_eq!(err.line, 3);
        assert!(matches!(
            err.kind,
            ParseErrorKind::Validation(ValidationError::PositiveLowerBound { .. })
        ));
    }

    #[test]
    fn syntax_error_reports_expected_token() {
        let err = parse_task("task t\nstate x\nachieve x >= 0 bounds [-1 1]\n").unwrap_err();
        assert_eq!(err.line, 3);
        assert_eq!(
            err.kind,
            ParseErrorKind::Unexpected {
                expected: "`,`",
                found: "number `1`".into()
            }
        );
        let err = parse_task("task t\nstate x\nachieve x bounds [-1, 1]\n").unwrap_err();
        assert!(matches!(
            err.kind,
            ParseErrorKind::Unexpected {
                expected: "comparison",
                ..
            }
        ));
    }

    #[test]
    fn printed_spec_reparses() {
        let spec = parse_task(TABLE2).unwrap();
        let text = spec.to_string();
        assert_eq!(parse_task(&text).unwrap(), spec);
    }

    #[test]
    fn comparison_normalizes_to_margin() {
        let spec =
            parse_task("task t\nstate a b\nachieve a + 1 >= b * 2 bounds [-5, 5]\n").unwrap();
        let p = &spec.target().predicate;
        assert_eq!(p.margin(&[1.0, 3.0]).unwrap(), -4.0);
        let spec = parse_task("task t\nstate a\nachieve 0 <= a bounds [-5, 5]\n").unwrap();
        assert_eq!(spec.target().predicate.expr, Expr::Var(0));
    }
}
