//! Perturbation expression language: arithmetic over the time variable `t`
//! with rational exponents and a small function set. Pratt parser with
//! byte-offset error reporting; the printer round-trips.

use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: expected {expected}, found {found}")]
    Unexpected {
        offset: usize,
        expected: String,
        found: String,
    },
    #[error("empty input")]
    Empty,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("division by zero in `{expr}` at t = {t}")]
    DivisionByZero { expr: String, t: f64 },
    #[error("log of non-positive value in `{expr}` at t = {t}")]
    LogNonPositive { expr: String, t: f64 },
    #[error("non-integer power of negative base in `{expr}` at t = {t}")]
    NegativeBasePower { expr: String, t: f64 },
    #[error("non-finite result in `{expr}` at t = {t}")]
    NonFinite { expr: String, t: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sqrt,
    Cbrt,
    Exp,
    Log,
    Sin,
    Cos,
    Abs,
    Pow,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sqrt => "sqrt",
            Func::Cbrt => "cbrt",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Abs => "abs",
            Func::Pow => "pow",
        }
    }

    fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "sqrt" => Func::Sqrt,
            "cbrt" => Func::Cbrt,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "abs" => Func::Abs,
            "pow" => Func::Pow,
            _ => return None,
        })
    }

    fn arity(self) -> usize {
        match self {
            Func::Pow => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

impl Expr {
    pub fn zero() -> Expr {
        Expr::Num(0.0)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Num(v) if *v == 0.0)
    }

    /// Evaluate at time `t`. Real-valued by contract; domain violations are
    /// runtime errors carrying the offending sub-expression.
    pub fn eval(&self, t: f64) -> Result<f64, EvalError> {
        let v = match self {
            Expr::Num(v) => *v,
            Expr::Var => t,
            Expr::Neg(e) => -e.eval(t)?,
            Expr::Add(a, b) => a.eval(t)? + b.eval(t)?,
            Expr::Sub(a, b) => a.eval(t)? - b.eval(t)?,
            Expr::Mul(a, b) => a.eval(t)? * b.eval(t)?,
            Expr::Div(a, b) => {
                let d = b.eval(t)?;
                if d == 0.0 {
                    return Err(EvalError::DivisionByZero {
                        expr: self.to_string(),
                        t,
                    });
                }
                a.eval(t)? / d
            }
            Expr::Pow(a, b) => {
                let base = a.eval(t)?;
                let exp = b.eval(t)?;
                powr(base, exp).ok_or_else(|| EvalError::NegativeBasePower {
                    expr: self.to_string(),
                    t,
                })?
            }
            Expr::Call(f, args) => {
                let x = args[0].eval(t)?;
                match f {
                    Func::Sqrt => {
                        if x < 0.0 {
                            return Err(EvalError::NegativeBasePower {
                                expr: self.to_string(),
                                t,
                            });
                        }
                        x.sqrt()
                    }
                    Func::Cbrt => x.cbrt(),
                    Func::Exp => x.exp(),
                    Func::Log => {
                        if x <= 0.0 {
                            return Err(EvalError::LogNonPositive {
                                expr: self.to_string(),
                                t,
                            });
                        }
                        x.ln()
                    }
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Abs => x.abs(),
                    Func::Pow => {
                        let e = args[1].eval(t)?;
                        powr(x, e).ok_or_else(|| EvalError::NegativeBasePower {
                            expr: self.to_string(),
                            t,
                        })?
                    }
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite {
                expr: self.to_string(),
                t,
            })
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(_, _) | Expr::Sub(_, _) => 1,
            Expr::Mul(_, _) | Expr::Div(_, _) => 2,
            Expr::Neg(_) => 3,
            Expr::Pow(_, _) => 4,
            _ => 5,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, parent: u8, right_of_same: bool) -> fmt::Result {
        let prec = self.precedence();
        let needs_paren = prec < parent || (prec == parent && right_of_same);
        if needs_paren {
            write!(f, "(")?;
        }
        match self {
            Expr::Num(v) => {
                if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) {
                    write!(f, "({v})")?;
                } else {
                    write!(f, "{v}")?;
                }
            }
            Expr::Var => write!(f, "t")?,
            Expr::Neg(e) => {
                write!(f, "-")?;
                e.fmt_prec(f, 3, true)?;
            }
            Expr::Add(a, b) => {
                a.fmt_prec(f, 1, false)?;
                write!(f, "+")?;
                b.fmt_prec(f, 1, true)?;
            }
            Expr::Sub(a, b) => {
                a.fmt_prec(f, 1, false)?;
                write!(f, "-")?;
                b.fmt_prec(f, 1, true)?;
            }
            Expr::Mul(a, b) => {
                a.fmt_prec(f, 2, false)?;
                write!(f, "*")?;
                b.fmt_prec(f, 2, true)?;
            }
            Expr::Div(a, b) => {
                a.fmt_prec(f, 2, false)?;
                write!(f, "/")?;
                b.fmt_prec(f, 2, true)?;
            }
            Expr::Pow(a, b) => {
                // ^ is right-associative and binds tighter than unary minus;
                // a nested pow on the left must re-parenthesize
                a.fmt_prec(f, 5, false)?;
                write!(f, "^")?;
                b.fmt_prec(f, 4, false)?;
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    a.fmt_prec(f, 0, false)?;
                }
                write!(f, ")")?;
            }
        }
        if needs_paren {
            write!(f, ")")?;
        }
        Ok(())
    }
}

/// Real power with the conventions: positive base -> powf; zero base with
/// positive exponent -> 0; negative base only for integer exponents.
fn powr(base: f64, exp: f64) -> Option<f64> {
    if base > 0.0 {
        Some(base.powf(exp))
    } else if base == 0.0 {
        if exp > 0.0 {
            Some(0.0)
        } else if exp == 0.0 {
            Some(1.0)
        } else {
            None
        }
    } else if exp.fract() == 0.0 && exp.abs() < i32::MAX as f64 {
        Some(base.powi(exp as i32))
    } else {
        None
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0, false)
    }
}

// ---------------------------------------------------------------------------
// lexer + Pratt parser

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Caret => "`^`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
        }
    }
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokens(src: &'a str) -> Result<Vec<(usize, Tok)>, ParseError> {
        let mut lx = Lexer {
            src: src.as_bytes(),
            pos: 0,
        };
        let mut out = Vec::new();
        loop {
            lx.skip_ws();
            if lx.pos >= lx.src.len() {
                break;
            }
            let start = lx.pos;
            let c = lx.src[lx.pos];
            let tok = match c {
                b'+' => {
                    lx.pos += 1;
                    Tok::Plus
                }
                b'-' => {
                    lx.pos += 1;
                    Tok::Minus
                }
                b'*' => {
                    lx.pos += 1;
                    Tok::Star
                }
                b'/' => {
                    lx.pos += 1;
                    Tok::Slash
                }
                b'^' => {
                    lx.pos += 1;
                    Tok::Caret
                }
                b'(' => {
                    lx.pos += 1;
                    Tok::LParen
                }
                b')' => {
                    lx.pos += 1;
                    Tok::RParen
                }
                b',' => {
                    lx.pos += 1;
                    Tok::Comma
                }
                b'0'..=b'9' | b'.' => lx.number(start)?,
                c if c.is_ascii_alphabetic() || c == b'_' => lx.ident(start),
                other => {
                    return Err(ParseError::Unexpected {
                        offset: start,
                        expected: "a token".into(),
                        found: format!("`{}`", other as char),
                    })
                }
            };
            out.push((start, tok));
        }
        Ok(out)
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn number(&mut self, start: usize) -> Result<Tok, ParseError> {
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_digit() || self.src[self.pos] == b'.')
        {
            self.pos += 1;
        }
        // exponent suffix like 1e-3
        if self.pos < self.src.len() && (self.src[self.pos] | 32) == b'e' {
            let mut probe = self.pos + 1;
            if probe < self.src.len() && (self.src[probe] == b'+' || self.src[probe] == b'-') {
                probe += 1;
            }
            if probe < self.src.len() && self.src[probe].is_ascii_digit() {
                self.pos = probe;
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        text.parse::<f64>()
            .map(Tok::Num)
            .map_err(|_| ParseError::Unexpected {
                offset: start,
                expected: "a number".into(),
                found: format!("`{text}`"),
            })
    }

    fn ident(&mut self, start: usize) -> Tok {
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        Tok::Ident(std::str::from_utf8(&self.src[start..self.pos]).unwrap().to_string())
    }
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|(o, _)| *o).unwrap_or(self.end)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(_, t)| t.clone());
        self.pos += 1;
        t
    }

    fn err(&self, expected: &str) -> ParseError {
        ParseError::Unexpected {
            offset: self.offset(),
            expected: expected.into(),
            found: self
                .peek()
                .map(|t| t.describe())
                .unwrap_or_else(|| "end of input".into()),
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(what))
        }
    }

    /// Pratt loop. Binding powers: +,- = 1; *,/ = 2; unary minus = 3;
    /// ^ = 4 (right-associative, binds tighter than unary minus).
    fn parse_expr(&mut self, min_bp: u8) -> Result<Expr, ParseError> {
        let mut lhs = match self.bump() {
            Some(Tok::Num(v)) => Expr::Num(v),
            Some(Tok::Ident(name)) => self.ident_expr(name)?,
            Some(Tok::Minus) => {
                let inner = self.parse_expr(3)?;
                Expr::Neg(Box::new(inner))
            }
            Some(Tok::LParen) => {
                let inner = self.parse_expr(0)?;
                self.expect(Tok::RParen, "`)`")?;
                inner
            }
            _ => {
                self.pos = self.pos.saturating_sub(1);
                return Err(self.err("a number, `t`, a function, `-`, or `(`"));
            }
        };
        loop {
            let (op, lbp, rbp) = match self.peek() {
                Some(Tok::Plus) => (Tok::Plus, 1, 2),
                Some(Tok::Minus) => (Tok::Minus, 1, 2),
                Some(Tok::Star) => (Tok::Star, 2, 3),
                Some(Tok::Slash) => (Tok::Slash, 2, 3),
                // right-associative: rbp == lbp
                Some(Tok::Caret) => (Tok::Caret, 4, 4),
                _ => break,
            };
            if lbp < min_bp {
                break;
            }
            self.pos += 1;
            let rhs = self.parse_expr(rbp)?;
            lhs = match op {
                Tok::Plus => Expr::Add(Box::new(lhs), Box::new(rhs)),
                Tok::Minus => Expr::Sub(Box::new(lhs), Box::new(rhs)),
                Tok::Star => Expr::Mul(Box::new(lhs), Box::new(rhs)),
                Tok::Slash => Expr::Div(Box::new(lhs), Box::new(rhs)),
                Tok::Caret => Expr::Pow(Box::new(lhs), Box::new(rhs)),
                _ => unreachable!(),
            };
        }
        Ok(lhs)
    }

    fn ident_expr(&mut self, name: String) -> Result<Expr, ParseError> {
        if name == "t" {
            return Ok(Expr::Var);
        }
        if let Some(func) = Func::from_name(&name) {
            self.expect(Tok::LParen, "`(` after function name")?;
            let mut args = vec![self.parse_expr(0)?];
            while self.peek() == Some(&Tok::Comma) {
                self.pos += 1;
                args.push(self.parse_expr(0)?);
            }
            self.expect(Tok::RParen, "`)`")?;
            if args.len() != func.arity() {
                return Err(ParseError::Unexpected {
                    offset: self.offset(),
                    expected: format!("{} argument(s) to {}", func.arity(), func.name()),
                    found: format!("{}", args.len()),
                });
            }
            return Ok(Expr::Call(func, args));
        }
        self.pos = self.pos.saturating_sub(1);
        Err(self.err("`t` or a function name"))
    }
}

/// Parse an expression. Whitespace-insensitive; errors carry byte offsets.
pub fn parse_expr(text: &str) -> Result<Expr, ParseError> {
    let toks = Lexer::tokens(text)?;
    if toks.is_empty() {
        return Err(ParseError::Empty);
    }
    let mut parser = Parser {
        toks,
        pos: 0,
        end: text.len(),
    };
    let e = parser.parse_expr(0)?;
    if parser.peek().is_some() {
        return Err(parser.err("end of input"));
    }
    Ok(e)
}
