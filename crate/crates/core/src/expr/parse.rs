//! Infix parser for the expression language.
//!
//! ```text
//! expr     = term { ("+" | "-") term } ;
//! term     = unary { ("*" | "/") unary } ;
//! unary    = "-" unary | power ;
//! power    = primary [ "^" exponent ] ;
//! exponent = [ "-" ] power ;                 (* must fold to an exact rational *)
//! primary  = number | name | func "(" expr ")" | "(" expr ")" ;
//! name     = letter { letter | digit | "_" } [ "_(" digit { digit } ")" ] ;
//! func     = "sqrt" | "exp" | "ln" | "log" | "sin" | "cos" | "abs" | "sign" ;
//! number   = digit { digit } [ "." { digit } ] [ ("e" | "E") [ "+" | "-" ] digit { digit } ] ;
//! ```
//!
//! Precedence is `^` over unary minus over `* /` over `+ -`; `^` is right
//! associative. Implicit multiplication is not accepted. Integer literals are
//! exact rationals, decimal literals are floats.

use thiserror::Error;

use super::{Expr, Func, SymbolTable};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("undeclared symbol `{name}` at offset {offset}")]
    UndeclaredSymbol { name: String, offset: usize },
    #[error("exponent at offset {offset} must be an exact rational constant")]
    InexactExponent { offset: usize },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. }
            | ParseError::UndeclaredSymbol { offset, .. }
            | ParseError::InexactExponent { offset } => *offset,
        }
    }
}

/// Parse `source` against the declared `symbols`.
pub fn parse(source: &str, symbols: &SymbolTable) -> Result<Expr, ParseError> {
    let tokens = tokenize(source)?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        symbols,
        end: source.chars().count(),
    };
    let e = parser.expr()?;
    if let Some(tok) = parser.peek() {
        return Err(ParseError::Syntax {
            offset: tok.offset,
            message: format!("unexpected {}", tok.kind.describe()),
        });
    }
    Ok(e)
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Int(i64),
    Float(f64),
    Name(String),
    Op(char),
    LParen,
    RParen,
}

impl Kind {
    fn describe(&self) -> String {
        match self {
            Kind::Int(n) => format!("number `{n}`"),
            Kind::Float(x) => format!("number `{x}`"),
            Kind::Name(n) => format!("name `{n}`"),
            Kind::Op(c) => format!("`{c}`"),
            Kind::LParen => "`(`".into(),
            Kind::RParen => "`)`".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: Kind,
    offset: usize,
}

fn tokenize(source: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = source.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let mut is_float = false;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            if i < chars.len() && chars[i] == '.' {
                is_float = true;
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    is_float = true;
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let kind = if is_float {
                Kind::Float(text.parse().map_err(|_| ParseError::Syntax {
                    offset: start,
                    message: format!("malformed number `{text}`"),
                })?)
            } else {
                match text.parse::<i64>() {
                    Ok(n) => Kind::Int(n),
                    Err(_) => Kind::Float(text.parse().map_err(|_| ParseError::Syntax {
                        offset: start,
                        message: format!("malformed number `{text}`"),
                    })?),
                }
            };
            out.push(Token { kind, offset: start });
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            // copy suffix: name_(a)
            if chars[i - 1] == '_' && chars.get(i) == Some(&'(') {
                let mut j = i + 1;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
                if j > i + 1 && chars.get(j) == Some(&')') {
                    i = j + 1;
                }
            }
            out.push(Token {
                kind: Kind::Name(chars[start..i].iter().collect()),
                offset: start,
            });
            continue;
        }
        let kind = match c {
            '+' | '-' | '*' | '/' | '^' => Kind::Op(c),
            '(' => Kind::LParen,
            ')' => Kind::RParen,
            _ => {
                return Err(ParseError::Syntax {
                    offset: start,
                    message: format!("unexpected character `{c}`"),
                })
            }
        };
        out.push(Token { kind, offset: start });
        i += 1;
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    symbols: &'a SymbolTable,
    end: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_op(&self) -> Option<char> {
        match self.peek() {
            Some(Token {
                kind: Kind::Op(c), ..
            }) => Some(*c),
            _ => None,
        }
    }

    fn offset(&self) -> usize {
        self.peek().map_or(self.end, |t| t.offset)
    }

    fn unexpected(&self, wanted: &str) -> ParseError {
        match self.peek() {
            Some(tok) => ParseError::Syntax {
                offset: tok.offset,
                message: format!("expected {wanted}, found {}", tok.kind.describe()),
            },
            None => ParseError::Syntax {
                offset: self.end,
                message: format!("expected {wanted}, found end of input"),
            },
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Some(op @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == '+' { lhs.add(&rhs) } else { lhs.sub(&rhs) };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(op @ ('*' | '/')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == '*' { lhs.mul(&rhs) } else { lhs.div(&rhs) };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.peek_op() == Some('-') {
            self.pos += 1;
            return Ok(self.unary()?.neg());
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if self.peek_op() == Some('^') {
            self.pos += 1;
            let at = self.offset();
            let negative = if self.peek_op() == Some('-') {
                self.pos += 1;
                true
            } else {
                false
            };
            let first = self.pos;
            let exponent = self.power()?;
            let exponent = if negative { exponent.neg() } else { exponent };
            let has_float = self.tokens[first..self.pos]
                .iter()
                .any(|t| matches!(t.kind, Kind::Float(_)));
            let r = exponent
                .as_rational()
                .filter(|_| !has_float)
                .ok_or(ParseError::InexactExponent { offset: at })?;
            return Ok(base.powr(r));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let Some(tok) = self.peek().cloned() else {
            return Err(self.unexpected("an operand"));
        };
        match tok.kind {
            Kind::Int(n) => {
                self.pos += 1;
                Ok(Expr::int(n))
            }
            Kind::Float(x) => {
                self.pos += 1;
                Ok(Expr::float(x))
            }
            Kind::LParen => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect_rparen()?;
                Ok(e)
            }
            Kind::Name(name) => {
                self.pos += 1;
                let is_call = matches!(self.peek(), Some(Token { kind: Kind::LParen, .. }));
                if is_call {
                    let Some(func) = Func::from_name(&name) else {
                        return Err(ParseError::UndeclaredSymbol {
                            name,
                            offset: tok.offset,
                        });
                    };
                    self.pos += 1;
                    let arg = self.expr()?;
                    self.expect_rparen()?;
                    return Ok(Expr::call(func, &arg));
                }
                if !self.symbols.contains(&name) {
                    return Err(ParseError::UndeclaredSymbol {
                        name,
                        offset: tok.offset,
                    });
                }
                Ok(Expr::var(&name))
            }
            _ => Err(self.unexpected("an operand")),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        match self.peek() {
            Some(Token {
                kind: Kind::RParen, ..
            }) => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.unexpected("`)`")),
        }
    }
}
