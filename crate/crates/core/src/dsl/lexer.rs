use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Token {
    Ident(String),
    Number(f64),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Assign,
    Le,
    Ge,
    Lt,
    Gt,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Ident(s) => write!(f, "identifier `{s}`"),
            Token::Number(n) => write!(f, "number `{n}`"),
            Token::Plus => f.write_str("`+`"),
            Token::Minus => f.write_str("`-`"),
            Token::Star => f.write_str("`*`"),
            Token::Slash => f.write_str("`/`"),
            Token::LParen => f.write_str("`(`"),
            Token::RParen => f.write_str("`)`"),
            Token::LBracket => f.write_str("`[`"),
            Token::RBracket => f.write_str("`]`"),
            Token::Comma => f.write_str("`,`"),
            Token::Assign => f.write_str("`=`"),
            Token::Le => f.write_str("`<=`"),
            Token::Ge => f.write_str("`>=`"),
            Token::Lt => f.write_str("`<`"),
            Token::Gt => f.write_str("`>`"),
        }
    }
}

/// A token with its 1-based column.
#[derive(Debug, Clone, PartialEq)]
pub struct Spanned {
    pub token: Token,
    pub column: usize,
}

/// Tokenizes one source line (comments already stripped). On failure returns
/// the column of the offending character.
pub fn tokenize(line: &str) -> Result<Vec<Spanned>, (usize, char)> {
    let chars: Vec<char> = line.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let column = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let (token, len) = match c {
            '+' => (Token::Plus, 1),
            '-' | '−' => (Token::Minus, 1),
            '*' | '×' => (Token::Star, 1),
            '/' | '÷' => (Token::Slash, 1),
            '(' => (Token::LParen, 1),
            ')' => (Token::RParen, 1),
            '[' => (Token::LBracket, 1),
            ']' => (Token::RBracket, 1),
            ',' => (Token::Comma, 1),
            '≤' => (Token::Le, 1),
            '≥' => (Token::Ge, 1),
            '<' if chars.get(i + 1) == Some(&'=') => (Token::Le, 2),
            '>' if chars.get(i + 1) == Some(&'=') => (Token::Ge, 2),
            '<' => (Token::Lt, 1),
            '>' => (Token::Gt, 1),
            '=' => (Token::Assign, 1),
            c if c.is_ascii_digit() || c == '.' => {
                let mut j = i;
                while j < chars.len() && (chars[j].is_ascii_digit() || chars[j] == '.') {
                    j += 1;
                }
                if j < chars.len() && (chars[j] == 'e' || chars[j] == 'E') {
                    let mut k = j + 1;
                    if k < chars.len() && (chars[k] == '+' || chars[k] == '-') {
                        k += 1;
                    }
                    if k < chars.len() && chars[k].is_ascii_digit() {
                        while k < chars.len() && chars[k].is_ascii_digit() {
                            k += 1;
                        }
                        j = k;
                    }
                }
                let text: String = chars[i..j].iter().collect();
                match text.parse::<f64>() {
                    Ok(v) => (Token::Number(v), j - i),
                    Err(_) => return Err((column, c)),
                }
            }
            c if c.is_alphabetic() || c == '_' => {
                let mut j = i;
                while j < chars.len() && (chars[j].is_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                (Token::Ident(chars[i..j].iter().collect()), j - i)
            }
            other => return Err((column, other)),
        };
        out.push(Spanned { token, column });
        i += len;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexes_comparisons_and_exponents() {
        let toks: Vec<Token> = tokenize("abs(theta) <= 2.5e-1")
            .unwrap()
            .into_iter()
            .map(|s| s.token)
            .collect();
        assert_eq!(
            toks,
            [
                Token::Ident("abs".into()),
                Token::LParen,
                Token::Ident("theta".into()),
                Token::RParen,
                Token::Le,
                Token::Number(0.25),
            ]
        );
    }

    #[test]
    fn reports_bad_character_column() {
        assert_eq!(tokenize("x @ 1"), Err((3, '@')));
    }
}
