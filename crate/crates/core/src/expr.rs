//! Scalar expressions in `t` and `x` used for utilities, terminals and costs.
//!
//! The grammar is deliberately small: decimal literals, the two variables,
//! `+ - * /`, unary minus, parentheses and the calls `min`, `max`, `abs`,
//! `exp`, `log`, `pow`. Binary operators are left-associative and `* /`
//! bind tighter than `+ -`.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    T,
    X,
}

/// Expression tree. Each variant carries exactly the operands its operator needs.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Lit(f64),
    Var(Var),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Min(Box<Expr>, Box<Expr>),
    Max(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Abs(Box<Expr>),
    Exp(Box<Expr>),
    Log(Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("empty expression")]
    EmptyInput { offset: usize },
    #[error("unbalanced parenthesis at offset {offset}")]
    UnbalancedParenthesis { offset: usize },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("unexpected {found} at offset {offset}")]
    UnexpectedToken { found: String, offset: usize },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::EmptyInput { offset }
            | ParseError::UnbalancedParenthesis { offset }
            | ParseError::UnknownIdentifier { offset, .. }
            | ParseError::UnexpectedToken { offset, .. } => *offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("division by zero in `{subtree}`")]
    DivisionByZero { subtree: String },
    #[error("log of non-positive value in `{subtree}`")]
    LogOfNonPositive { subtree: String },
    #[error("non-finite result in `{subtree}`")]
    NonFiniteResult { subtree: String },
}

impl Expr {
    pub fn lit(v: f64) -> Expr {
        Expr::Lit(v)
    }

    pub fn t() -> Expr {
        Expr::Var(Var::T)
    }

    pub fn x() -> Expr {
        Expr::Var(Var::X)
    }

    pub fn eval(&self, t: f64, x: f64) -> Result<f64, EvalError> {
        let v = match self {
            Expr::Lit(v) => *v,
            Expr::Var(Var::T) => t,
            Expr::Var(Var::X) => x,
            Expr::Neg(a) => -a.eval(t, x)?,
            Expr::Add(a, b) => a.eval(t, x)? + b.eval(t, x)?,
            Expr::Sub(a, b) => a.eval(t, x)? - b.eval(t, x)?,
            Expr::Mul(a, b) => a.eval(t, x)? * b.eval(t, x)?,
            Expr::Div(a, b) => {
                let num = a.eval(t, x)?;
                let den = b.eval(t, x)?;
                if den == 0.0 {
                    return Err(EvalError::DivisionByZero {
                        subtree: self.to_string(),
                    });
                }
                num / den
            }
            Expr::Min(a, b) => a.eval(t, x)?.min(b.eval(t, x)?),
            Expr::Max(a, b) => a.eval(t, x)?.max(b.eval(t, x)?),
            Expr::Pow(a, b) => a.eval(t, x)?.powf(b.eval(t, x)?),
            Expr::Abs(a) => a.eval(t, x)?.abs(),
            Expr::Exp(a) => a.eval(t, x)?.exp(),
            Expr::Log(a) => {
                let v = a.eval(t, x)?;
                if v <= 0.0 {
                    return Err(EvalError::LogOfNonPositive {
                        subtree: self.to_string(),
                    });
                }
                v.ln()
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFiniteResult {
                subtree: self.to_string(),
            })
        }
    }

    /// True when the expression does not mention `x`.
    pub fn is_state_free(&self) -> bool {
        match self {
            Expr::Lit(_) | Expr::Var(Var::T) => true,
            Expr::Var(Var::X) => false,
            Expr::Neg(a) | Expr::Abs(a) | Expr::Exp(a) | Expr::Log(a) => a.is_state_free(),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Min(a, b)
            | Expr::Max(a, b)
            | Expr::Pow(a, b) => a.is_state_free() && b.is_state_free(),
        }
    }
}

// Printing fully parenthesizes binary operators so the output re-parses to
// the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Lit(v) => {
                if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) {
                    write!(f, "-{}", -v)
                } else {
                    write!(f, "{v}")
                }
            }
            Expr::Var(Var::T) => f.write_str("t"),
            Expr::Var(Var::X) => f.write_str("x"),
            Expr::Neg(a) => write!(f, "-({a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Min(a, b) => write!(f, "min({a}, {b})"),
            Expr::Max(a, b) => write!(f, "max({a}, {b})"),
            Expr::Pow(a, b) => write!(f, "pow({a}, {b})"),
            Expr::Abs(a) => write!(f, "abs({a})"),
            Expr::Exp(a) => write!(f, "exp({a})"),
            Expr::Log(a) => write!(f, "log({a})"),
        }
    }
}

impl std::str::FromStr for Expr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
    Comma,
    End,
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
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::End => "end of input".into(),
        }
    }
}

fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match c {
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'/' => Tok::Slash,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b',' => Tok::Comma,
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let lexeme = &text[start..i];
                let v: f64 = lexeme.parse().map_err(|_| ParseError::UnexpectedToken {
                    found: format!("malformed number `{lexeme}`"),
                    offset: start,
                })?;
                out.push((Tok::Num(v), start));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(text[start..i].to_string()), start));
                continue;
            }
            _ => {
                let ch = text[start..].chars().next().unwrap_or('?');
                return Err(ParseError::UnexpectedToken {
                    found: format!("character `{ch}`"),
                    offset: start,
                });
            }
        };
        out.push((tok, start));
        i += 1;
    }
    out.push((Tok::End, text.len()));
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    // offsets of currently open parentheses
    open: Vec<usize>,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn unexpected(&self) -> ParseError {
        if *self.peek() == Tok::End && !self.open.is_empty() {
            return ParseError::UnbalancedParenthesis { offset: self.offset() };
        }
        ParseError::UnexpectedToken {
            found: self.peek().describe(),
            offset: self.offset(),
        }
    }

    fn expect_close(&mut self) -> Result<(), ParseError> {
        match self.peek() {
            Tok::RParen => {
                self.bump();
                self.open.pop();
                Ok(())
            }
            Tok::End => Err(ParseError::UnbalancedParenthesis { offset: self.offset() }),
            _ => Err(self.unexpected()),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.bump();
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Tok::Minus => {
                    self.bump();
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Tok::Star => {
                    self.bump();
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Tok::Slash => {
                    self.bump();
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::Lit(v))
            }
            Tok::LParen => {
                let (_, at) = self.bump();
                self.open.push(at);
                let inner = self.expr()?;
                self.expect_close()?;
                Ok(inner)
            }
            Tok::RParen => match self.open.is_empty() {
                true => Err(ParseError::UnbalancedParenthesis { offset: self.offset() }),
                false => Err(self.unexpected()),
            },
            Tok::Ident(name) => {
                let (_, at) = self.bump();
                match name.as_str() {
                    "t" => return Ok(Expr::t()),
                    "x" => return Ok(Expr::x()),
                    _ => {}
                }
                let arity = match name.as_str() {
                    "abs" | "exp" | "log" => 1,
                    "min" | "max" | "pow" => 2,
                    _ => {
                        return Err(ParseError::UnknownIdentifier { name, offset: at });
                    }
                };
                if *self.peek() != Tok::LParen {
                    return Err(self.unexpected());
                }
                let (_, lp) = self.bump();
                self.open.push(lp);
                let first = self.expr()?;
                let call = if arity == 1 {
                    let a = Box::new(first);
                    match name.as_str() {
                        "abs" => Expr::Abs(a),
                        "exp" => Expr::Exp(a),
                        _ => Expr::Log(a),
                    }
                } else {
                    if *self.peek() != Tok::Comma {
                        return Err(self.unexpected());
                    }
                    self.bump();
                    let second = self.expr()?;
                    let (a, b) = (Box::new(first), Box::new(second));
                    match name.as_str() {
                        "min" => Expr::Min(a, b),
                        "max" => Expr::Max(a, b),
                        _ => Expr::Pow(a, b),
                    }
                };
                self.expect_close()?;
                Ok(call)
            }
            _ => Err(self.unexpected()),
        }
    }
}

/// Parses `text` into an expression tree.
pub fn parse(text: &str) -> Result<Expr, ParseError> {
    if text.trim().is_empty() {
        return Err(ParseError::EmptyInput { offset: 0 });
    }
    let toks = tokenize(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        open: Vec::new(),
    };
    let e = p.expr()?;
    match p.peek() {
        Tok::End => Ok(e),
        Tok::RParen => Err(ParseError::UnbalancedParenthesis { offset: p.offset() }),
        _ => Err(p.unexpected()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(e: Expr) -> Box<Expr> {
        Box::new(e)
    }

    #[test]
    fn precedence_shape() {
        assert_eq!(
            parse("1 + 2*x").unwrap(),
            Expr::Add(b(Expr::lit(1.0)), b(Expr::Mul(b(Expr::lit(2.0)), b(Expr::x()))))
        );
    }

    #[test]
    fn call_shape() {
        assert_eq!(
            parse("max(0, x - 1)").unwrap(),
            Expr::Max(b(Expr::lit(0.0)), b(Expr::Sub(b(Expr::x()), b(Expr::lit(1.0)))))
        );
    }

    #[test]
    fn left_associative() {
        assert_eq!(parse("8 - 2 - 1").unwrap().eval(0.0, 0.0).unwrap(), 5.0);
        assert_eq!(parse("8 / 2 / 2").unwrap().eval(0.0, 0.0).unwrap(), 2.0);
    }

    #[test]
    fn exponent_literals() {
        assert_eq!(parse("1.5e-3").unwrap(), Expr::lit(1.5e-3));
        assert_eq!(parse("2E2").unwrap(), Expr::lit(200.0));
    }

    #[test]
    fn unbalanced_reports_end_offset() {
        assert_eq!(parse("((t"), Err(ParseError::UnbalancedParenthesis { offset: 3 }));
        assert_eq!(parse("t)"), Err(ParseError::UnbalancedParenthesis { offset: 1 }));
    }

    #[test]
    fn parse_errors() {
        assert_eq!(parse("  "), Err(ParseError::EmptyInput { offset: 0 }));
        assert!(matches!(
            parse("1 + y"),
            Err(ParseError::UnknownIdentifier { offset: 4, .. })
        ));
        assert!(matches!(
            parse("sin(x)"),
            Err(ParseError::UnknownIdentifier { offset: 0, .. })
        ));
        assert!(matches!(
            parse("1 + * 2"),
            Err(ParseError::UnexpectedToken { offset: 4, .. })
        ));
        assert!(matches!(
            parse("min(1)"),
            Err(ParseError::UnexpectedToken { offset: 5, .. })
        ));
        assert!(matches!(
            parse("2 x"),
            Err(ParseError::UnexpectedToken { offset: 2, .. })
        ));
        assert!(matches!(parse("0x1f"), Err(ParseError::UnexpectedToken { .. })));
    }

    #[test]
    fn eval_examples() {
        assert_eq!(parse("1 + 2*x").unwrap().eval(0.0, 3.0).unwrap(), 7.0);
        assert_eq!(parse("exp(0)").unwrap().eval(0.7, -2.0).unwrap(), 1.0);
        assert_eq!(
            parse("1/x").unwrap().eval(0.0, 0.0),
            Err(EvalError::DivisionByZero {
                subtree: "(1 / x)".into()
            })
        );
        assert!(matches!(
            parse("log(x - 1)").unwrap().eval(0.0, 1.0),
            Err(EvalError::LogOfNonPositive { .. })
        ));
        assert!(matches!(
            parse("exp(x)").unwrap().eval(0.0, 1e4),
            Err(EvalError::NonFiniteResult { .. })
        ));
        assert_eq!(parse("pow(2, t) - abs(-x)").unwrap().eval(3.0, 1.5).unwrap(), 6.5);
        assert_eq!(parse("min(x, 1) + max(x, 1)").unwrap().eval(0.0, 4.0).unwrap(), 5.0);
    }

    #[test]
    fn state_free_detection() {
        assert!(parse("1 + t*2").unwrap().is_state_free());
        assert!(!parse("max(t, x)").unwrap().is_state_free());
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![(0.0f64..1e6).prop_map(Expr::Lit), Just(Expr::t()), Just(Expr::x()),];
        leaf.prop_recursive(5, 48, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|a| Expr::Neg(Box::new(a))),
                inner.clone().prop_map(|a| Expr::Abs(Box::new(a))),
                inner.clone().prop_map(|a| Expr::Exp(Box::new(a))),
                inner.clone().prop_map(|a| Expr::Log(Box::new(a))),
                (inner.clone(), inner.clone()).prop_map(|(a, c)| Expr::Add(b(a), b(c))),
                (inner.clone(), inner.clone()).prop_map(|(a, c)| Expr::Sub(b(a), b(c))),
                (inner.clone(), inner.clone()).prop_map(|(a, c)| Expr::Mul(b(a), b(c))),
                (inner.clone(), inner.clone()).prop_map(|(a, c)| Expr::Div(b(a), b(c))),
                (inner.clone(), inner.clone()).prop_map(|(a, c)| Expr::Min(b(a), b(c))),
                (inner.clone(), inner.clone()).prop_map(|(a, c)| Expr::Max(b(a), b(c))),
                (inner.clone(), inner).prop_map(|(a, c)| Expr::Pow(b(a), b(c))),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_parse_round_trip(e in arb_expr()) {
            let printed = e.to_string();
            prop_assert_eq!(parse(&printed).unwrap(), e);
        }

        #[test]
        fn eval_is_deterministic(e in arb_expr(), t in 0.0f64..5.0, x in -5.0f64..5.0) {
            prop_assert_eq!(e.eval(t, x), e.eval(t, x));
        }

        #[test]
        fn product_binds_tighter(a in -100.0f64..100.0, bb in -100.0f64..100.0, c in -100.0f64..100.0) {
            let lhs = parse(&format!("{a} + {bb} * {c}")).unwrap().eval(0.0, 0.0).unwrap();
            let rhs = parse(&format!("{a} + ({bb} * {c})")).unwrap().eval(0.0, 0.0).unwrap();
            prop_assert_eq!(lhs, rhs);
        }
    }
}
