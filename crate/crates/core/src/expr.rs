//! A small expression language over coordinates `x1..xn`, used to serialize
//! fields: real constants, `+ - * /`, non-negative integer powers, `exp`,
//! `sin`, `cos`.
//!
//! Precedence, highest first: `^`, unary `-`, `* /`, `+ -`; binary operators
//! associate to the left. A division is accepted only when its denominator
//! folds to a non-zero constant, so every parsed expression is total.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    /// Zero-based coordinate index (`x1` is `Var(0)`).
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, u32),
    Exp(Box<Expr>),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
}

impl Expr {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => x[*i],
            Expr::Neg(a) => -a.eval(x),
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Div(a, b) => a.eval(x) / b.eval(x),
            Expr::Pow(a, k) => a.eval(x).powi(*k as i32),
            Expr::Exp(a) => a.eval(x).exp(),
            Expr::Sin(a) => a.eval(x).sin(),
            Expr::Cos(a) => a.eval(x).cos(),
        }
    }

    /// Random polynomial in `dim` variables of total degree at most `degree`,
    /// coefficients uniform in `[-1, 1]`.
    pub fn random_polynomial<R: rand::Rng + ?Sized>(dim: usize, degree: u32, rng: &mut R) -> Expr {
        let mut exps: Vec<Vec<u32>> = vec![vec![]];
        for _ in 0..dim {
            exps = exps
                .into_iter()
                .flat_map(|e| {
                    let used: u32 = e.iter().sum();
                    (0..=degree - used).map(move |a| {
                        let mut e = e.clone();
                        e.push(a);
                        e
                    })
                })
                .collect();
        }
        let mut sum: Option<Expr> = None;
        for e in exps {
            let c: f64 = rng.random_range(-1.0..1.0);
            let mut term = Expr::Const(c);
            for (k, &a) in e.iter().enumerate() {
                match a {
                    0 => {}
                    1 => term = Expr::Mul(Box::new(term), Box::new(Expr::Var(k))),
                    _ => term = Expr::Mul(Box::new(term), Box::new(Expr::Pow(Box::new(Expr::Var(k)), a))),
                }
            }
            sum = Some(match sum {
                None => term,
                Some(s) => Expr::Add(Box::new(s), Box::new(term)),
            });
        }
        sum.unwrap_or(Expr::Const(0.0))
    }

    /// Value when the expression contains no coordinates.
    pub fn constant_value(&self) -> Option<f64> {
        if self.max_var().is_some() {
            None
        } else {
            Some(self.eval(&[]))
        }
    }

    /// Largest coordinate index used, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Const(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Exp(a) | Expr::Sin(a) | Expr::Cos(a) => a.max_var(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                match (a.max_var(), b.max_var()) {
                    (Some(p), Some(q)) => Some(p.max(q)),
                    (p, q) => p.or(q),
                }
            }
        }
    }

    /// Symbolic partial derivative with respect to coordinate `var`.
    pub fn derivative(&self, var: usize) -> Expr {
        use Expr::*;
        let b = Box::new;
        match self {
            Const(_) => Const(0.0),
            Var(i) => Const(if *i == var { 1.0 } else { 0.0 }),
            Neg(a) => Neg(b(a.derivative(var))),
            Add(p, q) => Add(b(p.derivative(var)), b(q.derivative(var))),
            Sub(p, q) => Sub(b(p.derivative(var)), b(q.derivative(var))),
            Mul(p, q) => Add(
                b(Mul(b(p.derivative(var)), q.clone())),
                b(Mul(p.clone(), b(q.derivative(var)))),
            ),
            // Denominators are constant by construction.
            Div(p, q) => Div(b(p.derivative(var)), q.clone()),
            Pow(_, 0) => Const(0.0),
            Pow(p, k) => Mul(
                b(Mul(b(Const(*k as f64)), b(Pow(p.clone(), k - 1)))),
                b(p.derivative(var)),
            ),
            Exp(p) => Mul(b(Exp(p.clone())), b(p.derivative(var))),
            Sin(p) => Mul(b(Cos(p.clone())), b(p.derivative(var))),
            Cos(p) => Neg(b(Mul(b(Sin(p.clone())), b(p.derivative(var))))),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(_) => 3,
            Expr::Pow(..) => 4,
            _ => 5,
        }
    }

    fn write_with(&self, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
        let paren = self.precedence() < min_prec;
        if paren {
            f.write_str("(")?;
        }
        match self {
            Expr::Const(c) => write!(f, "{c:?}")?,
            Expr::Var(i) => write!(f, "x{}", i + 1)?,
            Expr::Neg(a) => {
                f.write_str("-")?;
                a.write_with(f, 3)?;
            }
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                let p = self.precedence();
                let op = match self {
                    Expr::Add(..) => " + ",
                    Expr::Sub(..) => " - ",
                    Expr::Mul(..) => " * ",
                    _ => " / ",
                };
                a.write_with(f, p)?;
                f.write_str(op)?;
                b.write_with(f, p + 1)?;
            }
            Expr::Pow(a, k) => {
                a.write_with(f, 5)?;
                write!(f, "^{k}")?;
            }
            Expr::Exp(a) | Expr::Sin(a) | Expr::Cos(a) => {
                let name = match self {
                    Expr::Exp(_) => "exp",
                    Expr::Sin(_) => "sin",
                    _ => "cos",
                };
                write!(f, "{name}(")?;
                a.write_with(f, 0)?;
                f.write_str(")")?;
            }
        }
        if paren {
            f.write_str(")")?;
        }
        Ok(())
    }
}

/// Prints an expression that parses back to the same tree (for trees produced
/// by the parser, which never contain negative constants).
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_with(f, 0)
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
}

struct Lexed {
    token: Token,
    offset: usize,
}

fn position(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |s| s.chars().count()) + 1;
    (line, column)
}

fn parse_error(src: &str, offset: usize, message: impl Into<String>) -> Error {
    let (line, column) = position(src, offset);
    Error::Parse {
        line,
        column,
        message: message.into(),
    }
}

fn lex(src: &str) -> Result<Vec<Lexed>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            let value: f64 = text
                .parse()
                .map_err(|_| parse_error(src, start, format!("malformed number `{text}`")))?;
            out.push(Lexed {
                token: Token::Num(value),
                offset: start,
            });
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Lexed {
                token: Token::Ident(src[start..i].to_string()),
                offset: start,
            });
        } else if "+-*/^()".contains(c) {
            out.push(Lexed {
                token: Token::Op(c),
                offset: i,
            });
            i += 1;
        } else {
            let ch = src[i..].chars().next().unwrap_or('?');
            return Err(parse_error(src, i, format!("unexpected character `{ch}`")));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    src: &'a str,
    tokens: Vec<Lexed>,
    pos: usize,
    vars: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|t| &t.token)
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.src.len(), |t| t.offset)
    }

    fn eat(&mut self, op: char) -> bool {
        if self.peek() == Some(&Token::Op(op)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, op: char) -> Result<()> {
        if self.eat(op) {
            Ok(())
        } else {
            Err(parse_error(self.src, self.offset(), format!("expected `{op}`")))
        }
    }

    fn sum(&mut self) -> Result<Expr> {
        let mut lhs = self.product()?;
        loop {
            if self.eat('+') {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.product()?));
            } else if self.eat('-') {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.product()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn product(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat('*') {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.peek() == Some(&Token::Op('/')) {
                let at = self.offset();
                self.pos += 1;
                let rhs = self.unary()?;
                match rhs.constant_value() {
                    Some(c) if c != 0.0 && c.is_finite() => {}
                    _ => {
                        return Err(parse_error(
                            self.src,
                            at,
                            "denominator must be a non-zero constant",
                        ))
                    }
                }
                lhs = Expr::Div(Box::new(lhs), Box::new(rhs));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat('-') {
            Ok(Expr::Neg(Box::new(self.unary()?)))
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.eat('^') {
            let at = self.offset();
            match self.peek() {
                Some(Token::Num(k)) if k.fract() == 0.0 && *k >= 0.0 && *k <= u32::MAX as f64 => {
                    let k = *k as u32;
                    self.pos += 1;
                    if self.peek() == Some(&Token::Op('^')) {
                        return Err(parse_error(self.src, self.offset(), "chained powers need parentheses"));
                    }
                    Ok(Expr::Pow(Box::new(base), k))
                }
                _ => Err(parse_error(self.src, at, "exponent must be a non-negative integer literal")),
            }
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Expr> {
        let at = self.offset();
        let token = self.tokens.get(self.pos).map(|t| t.token.clone());
        match token {
            Some(Token::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Const(v))
            }
            Some(Token::Op('(')) => {
                self.pos += 1;
                let e = self.sum()?;
                self.expect(')')?;
                Ok(e)
            }
            Some(Token::Ident(name)) => {
                self.pos += 1;
                match name.as_str() {
                    "exp" | "sin" | "cos" => {
                        self.expect('(')?;
                        let arg = Box::new(self.sum()?);
                        self.expect(')')?;
                        Ok(match name.as_str() {
                            "exp" => Expr::Exp(arg),
                            "sin" => Expr::Sin(arg),
                            _ => Expr::Cos(arg),
                        })
                    }
                    _ => {
                        let index = name
                            .strip_prefix('x')
                            .and_then(|d| d.parse::<usize>().ok())
                            .filter(|&k| k >= 1 && k <= self.vars && !name[1..].starts_with('0'));
                        match index {
                            Some(k) => Ok(Expr::Var(k - 1)),
                            None => Err(Error::UnknownSymbol(name)),
                        }
                    }
                }
            }
            Some(Token::Op(c)) => Err(parse_error(self.src, at, format!("unexpected `{c}`"))),
            None => Err(parse_error(self.src, at, "unexpected end of input")),
        }
    }
}

/// Parse an expression over coordinates `x1..x{dim}`.
pub fn parse_expression(src: &str, dim: usize) -> Result<Expr> {
    let tokens = lex(src)?;
    let mut p = Parser {
        src,
        tokens,
        pos: 0,
        vars: dim,
    };
    let e = p.sum()?;
    if p.pos != p.tokens.len() {
        return Err(parse_error(src, p.offset(), "trailing input"));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn closing_example_component() {
        let e = parse_expression("(2*x2-1)*x1*(1-x1)", 2).unwrap();
        let (x, y) = (0.3, 0.8);
        assert!((e.eval(&[x, y]) - (2.0 * y - 1.0) * x * (1.0 - x)).abs() < 1e-15);
    }

    #[test]
    fn zero_is_constant() {
        assert_eq!(parse_expression("0", 3).unwrap(), Expr::Const(0.0));
    }

    #[test]
    fn unknown_coordinate() {
        assert_eq!(
            parse_expression("x3", 2),
            Err(Error::UnknownSymbol("x3".into()))
        );
        assert!(matches!(parse_expression("y", 2), Err(Error::UnknownSymbol(_))));
    }

    #[test]
    fn precedence_and_associativity() {
        let e = parse_expression("-x1^2", 1).unwrap();
        assert_eq!(e.eval(&[3.0]), -9.0);
        let e = parse_expression("8 - 3 - 2", 0).unwrap();
        assert_eq!(e.eval(&[]), 3.0);
        let e = parse_expression("8 / 2 / 2", 0).unwrap();
        assert_eq!(e.eval(&[]), 2.0);
        let e = parse_expression("1 + 2 * 3^2", 0).unwrap();
        assert_eq!(e.eval(&[]), 19.0);
    }

    #[test]
    fn division_by_non_constant_is_rejected() {
        assert!(matches!(parse_expression("1 / x1", 1), Err(Error::Parse { .. })));
        assert!(matches!(parse_expression("1 / (2 - 2)", 1), Err(Error::Parse { .. })));
        assert!(parse_expression("x1 / (2 + 1)", 1).is_ok());
    }

    #[test]
    fn error_positions() {
        match parse_expression("x1 +\n  * 2", 1) {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (2, 3)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_expression("x1^x1", 1), Err(Error::Parse { .. })));
        assert!(matches!(parse_expression("(x1", 1), Err(Error::Parse { .. })));
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let e = parse_expression("exp(x1) * sin(x2^2) - cos(x1 * x2) / 3", 2).unwrap();
        let p = [0.4, -0.7];
        for var in 0..2 {
            let d = e.derivative(var).eval(&p);
            let h = 1e-6;
            let mut a = p;
            let mut b = p;
            a[var] += h;
            b[var] -= h;
            let fd = (e.eval(&a) - e.eval(&b)) / (2.0 * h);
            assert!((d - fd).abs() < 1e-8, "var {var}: {d} vs {fd}");
        }
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0.0..100.0f64).prop_map(Expr::Const),
            (0usize..3).prop_map(Expr::Var),
        ];
        leaf.prop_recursive(5, 48, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|a| Expr::Neg(Box::new(a))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Add(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Sub(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Mul(Box::new(a), Box::new(b))),
                (inner.clone(), 1.0..9.0f64)
                    .prop_map(|(a, c)| Expr::Div(Box::new(a), Box::new(Expr::Const(c)))),
                (inner.clone(), 0u32..4).prop_map(|(a, k)| Expr::Pow(Box::new(a), k)),
                inner.clone().prop_map(|a| Expr::Exp(Box::new(a))),
                inner.clone().prop_map(|a| Expr::Sin(Box::new(a))),
                inner.prop_map(|a| Expr::Cos(Box::new(a))),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_parse_round_trip(e in arb_expr()) {
            let printed = e.to_string();
            let back = parse_expression(&printed, 3).unwrap();
            prop_assert_eq!(back, e);
        }
    }
}
