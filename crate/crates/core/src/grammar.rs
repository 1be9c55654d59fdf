//! Tokenizer and numeric-expression parser shared by the distribution and
//! policy literal grammars.

use std::collections::BTreeMap;
use std::fmt;

/// Values bound to `$name` placeholders inside literals (sweep axes).
pub type Bindings = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Token {
    Ident(String),
    Number(f64),
    Var(String),
    LParen,
    RParen,
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    Comma,
    Colon,
    Arrow,
    Plus,
    Minus,
    Star,
    Slash,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Ident(s) => write!(f, "`{s}`"),
            Token::Number(x) => write!(f, "`{x}`"),
            Token::Var(s) => write!(f, "`${s}`"),
            Token::LParen => f.write_str("`(`"),
            Token::RParen => f.write_str("`)`"),
            Token::LBracket => f.write_str("`[`"),
            Token::RBracket => f.write_str("`]`"),
            Token::LBrace => f.write_str("`{`"),
            Token::RBrace => f.write_str("`}`"),
            Token::Comma => f.write_str("`,`"),
            Token::Colon => f.write_str("`:`"),
            Token::Arrow => f.write_str("`->`"),
            Token::Plus => f.write_str("`+`"),
            Token::Minus => f.write_str("`-`"),
            Token::Star => f.write_str("`*`"),
            Token::Slash => f.write_str("`/`"),
        }
    }
}

pub(crate) fn tokenize(src: &str) -> Result<Vec<Token>, String> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            c if c.is_whitespace() => i += 1,
            '(' => push(&mut out, &mut i, Token::LParen),
            ')' => push(&mut out, &mut i, Token::RParen),
            '[' => push(&mut out, &mut i, Token::LBracket),
            ']' => push(&mut out, &mut i, Token::RBracket),
            '{' => push(&mut out, &mut i, Token::LBrace),
            '}' => push(&mut out, &mut i, Token::RBrace),
            ',' => push(&mut out, &mut i, Token::Comma),
            ':' => push(&mut out, &mut i, Token::Colon),
            '+' => push(&mut out, &mut i, Token::Plus),
            '*' => push(&mut out, &mut i, Token::Star),
            '/' => push(&mut out, &mut i, Token::Slash),
            '-' => {
                if chars.get(i + 1) == Some(&'>') {
                    out.push(Token::Arrow);
                    i += 2;
                } else {
                    push(&mut out, &mut i, Token::Minus);
                }
            }
            '$' => {
                let start = i + 1;
                let mut j = start;
                while j < chars.len() && (chars[j].is_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                if j == start {
                    return Err(format!("empty variable name at offset {i}"));
                }
                out.push(Token::Var(chars[start..j].iter().collect()));
                i = j;
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
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
                let text: String = chars[start..j].iter().collect();
                let value = text
                    .parse::<f64>()
                    .map_err(|_| format!("malformed number `{text}`"))?;
                out.push(Token::Number(value));
                i = j;
            }
            c if c.is_alphabetic() => {
                let start = i;
                let mut j = i;
                while j < chars.len() {
                    let d = chars[j];
                    let dash_word = d == '-'
                        && chars.get(j + 1).is_some_and(|n| n.is_alphabetic());
                    if d.is_alphanumeric() || d == '_' || dash_word {
                        j += 1;
                    } else {
                        break;
                    }
                }
                out.push(Token::Ident(chars[start..j].iter().collect()));
                i = j;
            }
            other => return Err(format!("unexpected character `{other}` at offset {i}")),
        }
    }
    Ok(out)
}

fn push(out: &mut Vec<Token>, i: &mut usize, t: Token) {
    out.push(t);
    *i += 1;
}

/// Recursive-descent cursor over a token stream.
pub(crate) struct Cursor<'a> {
    tokens: Vec<Token>,
    pos: usize,
    bindings: &'a Bindings,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(src: &str, bindings: &'a Bindings) -> Result<Self, String> {
        Ok(Self {
            tokens: tokenize(src)?,
            pos: 0,
            bindings,
        })
    }

    pub(crate) fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    pub(crate) fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    pub(crate) fn eat(&mut self, want: &Token) -> bool {
        if self.peek() == Some(want) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    pub(crate) fn expect(&mut self, want: Token) -> Result<(), String> {
        match self.next() {
            Some(ref t) if *t == want => Ok(()),
            Some(t) => Err(format!("expected {want}, found {t}")),
            None => Err(format!("expected {want}, found end of input")),
        }
    }

    pub(crate) fn ident(&mut self) -> Result<String, String> {
        match self.next() {
            Some(Token::Ident(s)) => Ok(s),
            Some(t) => Err(format!("expected a name, found {t}")),
            None => Err("expected a name, found end of input".into()),
        }
    }

    pub(crate) fn finish(&self) -> Result<(), String> {
        match self.peek() {
            None => Ok(()),
            Some(t) => Err(format!("trailing input starting at {t}")),
        }
    }

    /// expr := term (('+' | '-') term)*
    pub(crate) fn expr(&mut self) -> Result<f64, String> {
        let mut acc = self.term()?;
        loop {
            if self.eat(&Token::Plus) {
                acc += self.term()?;
            } else if self.eat(&Token::Minus) {
                acc -= self.term()?;
            } else {
                return Ok(acc);
            }
        }
    }

    fn term(&mut self) -> Result<f64, String> {
        let mut acc = self.factor()?;
        loop {
            if self.eat(&Token::Star) {
                acc *= self.factor()?;
            } else if self.eat(&Token::Slash) {
                acc /= self.factor()?;
            } else {
                return Ok(acc);
            }
        }
    }

    fn factor(&mut self) -> Result<f64, String> {
        match self.next() {
            Some(Token::Number(x)) => Ok(x),
            Some(Token::Minus) => Ok(-self.factor()?),
            Some(Token::Ident(s)) if s == "inf" || s == "infinity" => Ok(f64::INFINITY),
            Some(Token::Var(name)) => self
                .bindings
                .get(&name)
                .copied()
                .ok_or_else(|| format!("unbound variable `${name}`")),
            Some(Token::LParen) => {
                let v = self.expr()?;
                self.expect(Token::RParen)?;
                Ok(v)
            }
            Some(t) => Err(format!("expected a number, found {t}")),
            None => Err("expected a number, found end of input".into()),
        }
    }
}

/// Formats a time value for literals; `inf` for infinity.
pub(crate) fn fmt_num(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".to_string()
    } else {
        format!("{x}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arrows_and_dashed_idents() {
        let toks = tokenize("adarep-hom 2->1 1-$p").unwrap();
        assert_eq!(
            toks,
            vec![
                Token::Ident("adarep-hom".into()),
                Token::Number(2.0),
                Token::Arrow,
                Token::Number(1.0),
                Token::Number(1.0),
                Token::Minus,
                Token::Var("p".into()),
            ]
        );
    }

    #[test]
    fn expressions_with_bindings() {
        let mut b = Bindings::new();
        b.insert("p".into(), 0.1);
        let mut c = Cursor::new("(1 - $p) * 2 + 1e-1", &b).unwrap();
        let v = c.expr().unwrap();
        assert!((v - 1.9).abs() < 1e-12);
        assert!(c.finish().is_ok());
        let mut c = Cursor::new("$q", &b).unwrap();
        assert!(c.expr().is_err());
    }
}
