//! Expression language for coefficient fields.
//!
//! Grammar (precedence low to high):
//!
//! ```text
//! expr   := term (("+" | "-") term)*
//! term   := unary (("*" | "/") unary)*
//! unary  := "-" unary | power
//! power  := atom ("^" unary)?
//! atom   := number | "pi" | x<k> | "t" | func "(" expr ("," expr)* ")" | "(" expr ")"
//! func   := sin | cos | exp | abs | min | max
//! ```
//!
//! `^` is right-associative and binds tighter than unary minus, so `-x1^2`
//! is `-(x1^2)`.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at column {col}: {msg}")]
    Syntax { col: usize, msg: String },
    #[error("division by zero")]
    DivisionByZero,
    #[error("variable x{0} is not available (dimension {1})")]
    UnknownVariable(usize, usize),
    #[error("non-real result from {0}")]
    NonReal(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Var {
    /// Spatial coordinate, 1-based.
    X(usize),
    T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Abs,
    Min,
    Max,
}

impl Func {
    fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Abs => "abs",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "abs" => Func::Abs,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }
}

/// Parsed expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr, ExprError> {
        let tokens = lex(src)?;
        let mut p = Parser { tokens, pos: 0 };
        let e = p.expr()?;
        if let Some(tok) = p.peek() {
            return Err(ExprError::Syntax {
                col: tok.col,
                msg: format!("unexpected trailing {:?}", tok.kind),
            });
        }
        Ok(e)
    }

    /// Evaluates at spatial point `x` and time `t`.
    pub fn eval(&self, x: &[f64], t: f64) -> Result<f64, ExprError> {
        Ok(match self {
            Expr::Num(v) => *v,
            Expr::Var(Var::T) => t,
            Expr::Var(Var::X(k)) => *x
                .get(k - 1)
                .ok_or(ExprError::UnknownVariable(*k, x.len()))?,
            Expr::Neg(e) => -e.eval(x, t)?,
            Expr::Bin(op, a, b) => {
                let a = a.eval(x, t)?;
                let b = b.eval(x, t)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(ExprError::DivisionByZero);
                        }
                        a / b
                    }
                    BinOp::Pow => {
                        let v = a.powf(b);
                        if v.is_nan() {
                            return Err(ExprError::NonReal(format!("{a}^{b}")));
                        }
                        v
                    }
                }
            }
            Expr::Call(f, args) => {
                let a = args[0].eval(x, t)?;
                match f {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                    Func::Abs => a.abs(),
                    Func::Min => a.min(args[1].eval(x, t)?),
                    Func::Max => a.max(args[1].eval(x, t)?),
                }
            }
        })
    }

    /// Distinct variables referenced by the expression.
    pub fn variables(&self) -> BTreeSet<Var> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<Var>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(v) => {
                out.insert(*v);
            }
            Expr::Neg(e) => e.collect_vars(out),
            Expr::Bin(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.collect_vars(out)),
        }
    }

    /// Largest spatial index referenced (0 if none).
    pub fn max_spatial_index(&self) -> usize {
        self.variables()
            .iter()
            .filter_map(|v| match v {
                Var::X(k) => Some(*k),
                Var::T => None,
            })
            .max()
            .unwrap_or(0)
    }
}

/// Canonical, fully parenthesized rendering; parsing it returns an equal tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => {
                if *v < 0.0 {
                    write!(f, "(-{})", -v)
                } else {
                    write!(f, "{v:?}")
                }
            }
            Expr::Var(Var::T) => write!(f, "t"),
            Expr::Var(Var::X(k)) => write!(f, "x{k}"),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Bin(op, a, b) => {
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                write!(f, "({a} {sym} {b})")
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokKind {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokKind,
    col: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, ExprError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            // exponent part
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let save = i;
                i += 1;
                if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                    i += 1;
                }
                if i < chars.len() && chars[i].is_ascii_digit() {
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                } else {
                    i = save;
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v: f64 = text.parse().map_err(|_| ExprError::Syntax {
                col,
                msg: format!("invalid number '{text}'"),
            })?;
            out.push(Token { kind: TokKind::Num(v), col });
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token {
                kind: TokKind::Ident(chars[start..i].iter().collect()),
                col,
            });
            continue;
        }
        let kind = match c {
            '+' | '-' | '*' | '/' | '^' => TokKind::Op(c),
            '(' => TokKind::LParen,
            ')' => TokKind::RParen,
            ',' => TokKind::Comma,
            _ => {
                return Err(ExprError::Syntax {
                    col,
                    msg: format!("unexpected character '{c}'"),
                })
            }
        };
        out.push(Token { kind, col });
        i += 1;
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn end_col(&self) -> usize {
        self.tokens.last().map(|t| t.col + 1).unwrap_or(1)
    }

    fn eat_op(&mut self, ops: &[char]) -> Option<char> {
        match self.peek() {
            Some(Token { kind: TokKind::Op(c), .. }) if ops.contains(c) => {
                let c = *c;
                self.pos += 1;
                Some(c)
            }
            _ => None,
        }
    }

    fn expect(&mut self, kind: TokKind, what: &str) -> Result<(), ExprError> {
        match self.peek() {
            Some(t) if t.kind == kind => {
                self.pos += 1;
                Ok(())
            }
            Some(t) => Err(ExprError::Syntax {
                col: t.col,
                msg: format!("expected {what}"),
            }),
            None => Err(ExprError::Syntax {
                col: self.end_col(),
                msg: format!("expected {what}, found end of input"),
            }),
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        while let Some(c) = self.eat_op(&['+', '-']) {
            let rhs = self.term()?;
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(c) = self.eat_op(&['*', '/']) {
            let rhs = self.unary()?;
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.eat_op(&['-']).is_some() {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if self.eat_op(&['^']).is_some() {
            let exp = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        let tok = match self.peek() {
            Some(t) => t.clone(),
            None => {
                return Err(ExprError::Syntax {
                    col: self.end_col(),
                    msg: "unexpected end of input".into(),
                })
            }
        };
        self.pos += 1;
        match tok.kind {
            TokKind::Num(v) => Ok(Expr::Num(v)),
            TokKind::LParen => {
                let e = self.expr()?;
                self.expect(TokKind::RParen, "')'")?;
                Ok(e)
            }
            TokKind::Ident(name) => {
                if name == "t" {
                    return Ok(Expr::Var(Var::T));
                }
                if name == "pi" {
                    return Ok(Expr::Num(std::f64::consts::PI));
                }
                if let Some(rest) = name.strip_prefix('x') {
                    if let Ok(k) = rest.parse::<usize>() {
                        if k >= 1 {
                            return Ok(Expr::Var(Var::X(k)));
                        }
                    }
                }
                let func = Func::from_name(&name).ok_or_else(|| ExprError::Syntax {
                    col: tok.col,
                    msg: format!("unknown identifier '{name}'"),
                })?;
                self.expect(TokKind::LParen, "'(' after function name")?;
                let mut args = vec![self.expr()?];
                while matches!(self.peek(), Some(Token { kind: TokKind::Comma, .. })) {
                    self.pos += 1;
                    args.push(self.expr()?);
                }
                self.expect(TokKind::RParen, "')'")?;
                if args.len() != func.arity() {
                    return Err(ExprError::Syntax {
                        col: tok.col,
                        msg: format!(
                            "{} takes {} argument(s), got {}",
                            func.name(),
                            func.arity(),
                            args.len()
                        ),
                    });
                }
                Ok(Expr::Call(func, args))
            }
            other => Err(ExprError::Syntax {
                col: tok.col,
                msg: format!("unexpected {other:?}"),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn evaluates_drift_expression() {
        let e = Expr::parse("x1*exp(-t)").unwrap();
        assert_eq!(e.variables().len(), 2);
        assert_eq!(e.eval(&[1.0, 0.0], 0.0).unwrap(), 1.0);
    }

    #[test]
    fn precedence_and_associativity() {
        let e = Expr::parse("-x1^2 + 2*3 - 4/2").unwrap();
        assert_eq!(e.eval(&[3.0], 0.0).unwrap(), -9.0 + 6.0 - 2.0);
        let e = Expr::parse("2^3^2").unwrap();
        assert_eq!(e.eval(&[], 0.0).unwrap(), 512.0);
        let e = Expr::parse("min(x1, t) + max(1, abs(-2))").unwrap();
        assert_eq!(e.eval(&[5.0], -1.0).unwrap(), 1.0);
    }

    #[test]
    fn division_by_zero_is_an_error() {
        let e = Expr::parse("1/(x1 - 1)").unwrap();
        assert_eq!(e.eval(&[1.0], 0.0), Err(ExprError::DivisionByZero));
        assert!(e.eval(&[2.0], 0.0).is_ok());
    }

    #[test]
    fn syntax_errors_carry_columns() {
        match Expr::parse("x1 + * 2") {
            Err(ExprError::Syntax { col, .. }) => assert_eq!(col, 6),
            other => panic!("{other:?}"),
        }
        assert!(Expr::parse("foo(1)").is_err());
        assert!(Expr::parse("sin(1, 2)").is_err());
        assert!(Expr::parse("(1 + 2").is_err());
        assert!(Expr::parse("x0").is_err());
    }

    #[test]
    fn unknown_variable_at_eval() {
        let e = Expr::parse("x3").unwrap();
        assert_eq!(e.eval(&[1.0, 2.0], 0.0), Err(ExprError::UnknownVariable(3, 2)));
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0.0f64..100.0).prop_map(Expr::Num),
            (1usize..4).prop_map(|k| Expr::Var(Var::X(k))),
            Just(Expr::Var(Var::T)),
        ];
        leaf.prop_recursive(4, 32, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
                (inner.clone(), inner.clone(), 0usize..5).prop_map(|(a, b, k)| {
                    let op = [BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div, BinOp::Pow][k];
                    Expr::Bin(op, Box::new(a), Box::new(b))
                }),
                (inner.clone(), 0usize..4).prop_map(|(a, k)| {
                    Expr::Call([Func::Sin, Func::Cos, Func::Exp, Func::Abs][k], vec![a])
                }),
                (inner.clone(), inner, any::<bool>()).prop_map(|(a, b, mx)| {
                    Expr::Call(if mx { Func::Max } else { Func::Min }, vec![a, b])
                }),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_parse_is_a_fixed_point(e in arb_expr()) {
            let printed = e.to_string();
            let reparsed = Expr::parse(&printed).unwrap();
            prop_assert_eq!(&reparsed, &e);
            prop_assert_eq!(reparsed.to_string(), printed);
        }

        #[test]
        fn evaluation_is_deterministic(e in arb_expr(), x in proptest::collection::vec(-2.0f64..2.0, 3), t in -1.0f64..1.0) {
            let a = e.eval(&x, t);
            let b = e.eval(&x, t);
            match (a, b) {
                (Ok(a), Ok(b)) => prop_assert_eq!(a.to_bits(), b.to_bits()),
                (a, b) => prop_assert_eq!(a, b),
            }
        }
    }
}
