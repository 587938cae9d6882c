//! A small expression language for time-dependent coefficients.
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' unary)?
//! atom  := number | 't' | 'pi' | func '(' expr ')' | '(' expr ')'
//! func  := sin | cos | tan | exp | log | sqrt | abs | tanh
//! ```
//!
//! `^` is right-associative and binds tighter than a leading minus, so
//! `-t^2` means `-(t^2)` while `2^-1` is one half. Numbers are decimal with an
//! optional exponent. Whitespace is ignored.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

const MAX_DEPTH: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: expected {expected}")]
    Syntax { offset: usize, expected: String },
    #[error("cannot evaluate at t = {t}: {reason}")]
    EvalDomain { t: f64, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Abs,
    Tanh,
}

impl Func {
    pub const ALL: [Func; 8] =
        [Func::Sin, Func::Cos, Func::Tan, Func::Exp, Func::Log, Func::Sqrt, Func::Abs, Func::Tanh];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Tanh => "tanh",
        }
    }

    fn from_name(s: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    T,
    Pi,
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn num(v: f64) -> Self {
        Expr::Num(v)
    }

    pub fn negate(e: Expr) -> Self {
        Expr::Neg(Box::new(e))
    }

    pub fn bin(op: BinOp, l: Expr, r: Expr) -> Self {
        Expr::Bin(op, Box::new(l), Box::new(r))
    }

    pub fn call(f: Func, arg: Expr) -> Self {
        Expr::Call(f, Box::new(arg))
    }

    /// True for the literal `0` (after stripping unary minus).
    pub fn is_zero_literal(&self) -> bool {
        match self {
            Expr::Num(v) => *v == 0.0,
            Expr::Neg(e) => e.is_zero_literal(),
            _ => false,
        }
    }

    /// Whether `t` occurs anywhere in the expression.
    pub fn depends_on_t(&self) -> bool {
        match self {
            Expr::T => true,
            Expr::Num(_) | Expr::Pi => false,
            Expr::Neg(e) | Expr::Call(_, e) => e.depends_on_t(),
            Expr::Bin(_, l, r) => l.depends_on_t() || r.depends_on_t(),
        }
    }

    /// Replace `t` by the expression `s` (used for time reversal `t -> c - t`).
    pub fn substitute_t(&self, s: &Expr) -> Expr {
        match self {
            Expr::T => s.clone(),
            Expr::Num(_) | Expr::Pi => self.clone(),
            Expr::Neg(e) => Expr::negate(e.substitute_t(s)),
            Expr::Call(f, e) => Expr::call(*f, e.substitute_t(s)),
            Expr::Bin(op, l, r) => Expr::bin(*op, l.substitute_t(s), r.substitute_t(s)),
        }
    }

    pub fn eval(&self, t: f64) -> Result<f64, ExprError> {
        eval(self, t)
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
            Expr::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
            Expr::Neg(_) => 3,
            Expr::Num(v) if v.is_sign_negative() => 3,
            Expr::Bin(BinOp::Pow, ..) => 4,
            _ => 5,
        }
    }

    /// Text with the fewest parentheses that parses back to the same tree.
    pub fn render(&self) -> String {
        let mut s = String::new();
        self.write_min(&mut s);
        s
    }

    /// Text with every compound subexpression parenthesized.
    pub fn render_full(&self) -> String {
        match self {
            Expr::Num(_) | Expr::T | Expr::Pi => self.render(),
            Expr::Neg(e) => format!("(-{})", e.render_full()),
            Expr::Bin(op, l, r) => format!("({}{}{})", l.render_full(), op.symbol(), r.render_full()),
            Expr::Call(f, e) => format!("{}({})", f.name(), e.render_full()),
        }
    }

    fn write_min(&self, out: &mut String) {
        fn child(out: &mut String, e: &Expr, parens: bool) {
            if parens {
                out.push('(');
                e.write_min(out);
                out.push(')');
            } else {
                e.write_min(out);
            }
        }
        match self {
            Expr::Num(v) => out.push_str(&v.to_string()),
            Expr::T => out.push('t'),
            Expr::Pi => out.push_str("pi"),
            Expr::Neg(e) => {
                out.push('-');
                child(out, e, e.precedence() < 3);
            }
            Expr::Call(f, e) => {
                out.push_str(f.name());
                child(out, e, true);
            }
            Expr::Bin(op, l, r) => {
                let (lp, rp) = match op {
                    BinOp::Add | BinOp::Sub => (false, r.precedence() <= 1),
                    BinOp::Mul | BinOp::Div => (l.precedence() < 2, r.precedence() <= 2),
                    BinOp::Pow => (l.precedence() < 5, r.precedence() < 3),
                };
                child(out, l, lp);
                out.push(op.symbol());
                child(out, r, rp);
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl FromStr for Expr {
    type Err = ExprError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

/// Evaluate at time `t`; every intermediate value must be finite.
pub fn eval(e: &Expr, t: f64) -> Result<f64, ExprError> {
    let fail = |reason: &str| ExprError::EvalDomain { t, reason: reason.to_string() };
    if !t.is_finite() {
        return Err(fail("time is not finite"));
    }
    let v = match e {
        Expr::Num(v) => *v,
        Expr::T => t,
        Expr::Pi => std::f64::consts::PI,
        Expr::Neg(a) => -eval(a, t)?,
        Expr::Bin(op, l, r) => {
            let (a, b) = (eval(l, t)?, eval(r, t)?);
            match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div if b == 0.0 => return Err(fail("division by zero")),
                BinOp::Div => a / b,
                BinOp::Pow => a.powf(b),
            }
        }
        Expr::Call(f, a) => {
            let x = eval(a, t)?;
            match f {
                Func::Sin => x.sin(),
                Func::Cos => x.cos(),
                Func::Tan => x.tan(),
                Func::Exp => x.exp(),
                Func::Log if x <= 0.0 => return Err(fail("log of a non-positive number")),
                Func::Log => x.ln(),
                Func::Sqrt if x < 0.0 => return Err(fail("sqrt of a negative number")),
                Func::Sqrt => x.sqrt(),
                Func::Abs => x.abs(),
                Func::Tanh => x.tanh(),
            }
        }
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(fail(&format!("non-finite value in {}", e.render())))
    }
}

pub fn parse(src: &str) -> Result<Expr, ExprError> {
    let mut p = Parser { src, pos: 0, depth: 0 };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos < src.len() {
        return Err(p.error("an operator or end of input"));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    depth: usize,
}

impl Parser<'_> {
    fn error(&self, expected: &str) -> ExprError {
        ExprError::Syntax { offset: self.pos, expected: expected.to_string() }
    }

    fn skip_ws(&mut self) {
        let rest = &self.src[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.src[self.pos..].chars().next()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn enter(&mut self) -> Result<(), ExprError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            Err(self.error("a shallower expression (nesting limit reached)"))
        } else {
            Ok(())
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        self.enter()?;
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat('+') {
                BinOp::Add
            } else if self.eat('-') {
                BinOp::Sub
            } else {
                break;
            };
            lhs = Expr::bin(op, lhs, self.term()?);
        }
        self.depth -= 1;
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat('*') {
                BinOp::Mul
            } else if self.eat('/') {
                BinOp::Div
            } else {
                break;
            };
            lhs = Expr::bin(op, lhs, self.unary()?);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        self.enter()?;
        let e = if self.eat('-') { Expr::negate(self.unary()?) } else { self.power()? };
        self.depth -= 1;
        Ok(e)
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if self.eat('^') {
            Ok(Expr::bin(BinOp::Pow, base, self.unary()?))
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        const EXPECTED: &str = "a number, 't', 'pi', a function call or '('";
        match self.peek() {
            Some('(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(')') {
                    return Err(self.error("')'"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                let len = self.src[start..].bytes().take_while(u8::is_ascii_alphanumeric).count();
                let name = &self.src[start..start + len];
                match name {
                    "t" => {
                        self.pos += len;
                        Ok(Expr::T)
                    }
                    "pi" => {
                        self.pos += len;
                        Ok(Expr::Pi)
                    }
                    _ => {
                        let f = Func::from_name(name).ok_or_else(|| self.error(EXPECTED))?;
                        self.pos += len;
                        if !self.eat('(') {
                            return Err(self.error("'(' after function name"));
                        }
                        let arg = self.expr()?;
                        if !self.eat(')') {
                            return Err(self.error("')'"));
                        }
                        Ok(Expr::call(f, arg))
                    }
                }
            }
            _ => Err(self.error(EXPECTED)),
        }
    }

    fn number(&mut self) -> Result<Expr, ExprError> {
        let bytes = self.src.as_bytes();
        let start = self.pos;
        let mut i = start;
        let digits = |i: &mut usize| {
            let s = *i;
            while *i < bytes.len() && bytes[*i].is_ascii_digit() {
                *i += 1;
            }
            *i - s
        };
        let mut mantissa = digits(&mut i);
        if i < bytes.len() && bytes[i] == b'.' {
            i += 1;
            mantissa += digits(&mut i);
        }
        if mantissa == 0 {
            return Err(self.error("a digit"));
        }
        if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
            let mut j = i + 1;
            if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                j += 1;
            }
            if digits(&mut j) == 0 {
                self.pos = j;
                return Err(self.error("exponent digits"));
            }
            i = j;
        }
        let text = &self.src[start..i];
        let v: f64 = text.parse().map_err(|_| self.error("a decimal number"))?;
        if !v.is_finite() {
            return Err(self.error("a finite number"));
        }
        self.pos = i;
        Ok(Expr::Num(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ev(s: &str, t: f64) -> f64 {
        parse(s).unwrap().eval(t).unwrap()
    }

    #[test]
    fn basic_examples() {
        assert_eq!(ev("sin(t)", 0.0), 0.0);
        assert_eq!(ev("1+2*3^2", 0.0), 19.0);
        assert_eq!(ev("2*t+1", 2.0), 5.0);
        assert_eq!(ev("tanh(0)", 0.0), 0.0);
        assert_abs_diff_eq!(ev("exp(1)", 0.0), std::f64::consts::E, epsilon = 1e-15);
        assert_eq!(ev("t^3 - t", 2.0), 6.0);
    }

    #[test]
    fn power_binds_tighter_than_minus() {
        assert_eq!(ev("-t^2", 3.0), -9.0);
        assert_eq!(ev("2^3^2", 0.0), 512.0);
        assert_eq!(ev("2^-1", 0.0), 0.5);
        assert_eq!(ev("(-t)^2", 3.0), 9.0);
        assert_eq!(ev("--t", 4.0), 4.0);
        assert_eq!(ev("8/2/2", 0.0), 2.0);
        assert_eq!(ev("1-2-3", 0.0), -4.0);
    }

    #[test]
    fn literals_and_whitespace() {
        assert_eq!(ev(" 1.5e2 * .5 ", 0.0), 75.0);
        assert_abs_diff_eq!(ev("pi", 0.0), std::f64::consts::PI);
        assert_eq!(ev("abs( - 2 )", 0.0), 2.0);
        assert!(parse("1e").is_err());
        assert!(parse("1e999").is_err());
        assert!(parse("0x10").is_err());
        assert!(parse("1_000").is_err());
    }

    #[test]
    fn syntax_errors_carry_offsets() {
        assert!(matches!(parse("1 +"), Err(ExprError::Syntax { offset: 3, .. })));
        assert!(matches!(parse("sin t"), Err(ExprError::Syntax { offset: 4, .. })));
        assert!(matches!(parse("foo(1)"), Err(ExprError::Syntax { offset: 0, .. })));
        assert!(matches!(parse("(1"), Err(ExprError::Syntax { offset: 2, .. })));
        assert!(matches!(parse("1 2"), Err(ExprError::Syntax { offset: 2, .. })));
        assert!(parse("").is_err());
        assert!(parse(&"(".repeat(10_000)).is_err());
    }

    #[test]
    fn domain_errors() {
        for (s, t) in [("1/t", 0.0), ("log(t)", 0.0), ("log(-1)", 0.0), ("sqrt(t)", -1.0), ("exp(t)", 1000.0)] {
            assert!(matches!(parse(s).unwrap().eval(t), Err(ExprError::EvalDomain { .. })), "{s}");
        }
        assert!(parse("t").unwrap().eval(f64::NAN).is_err());
    }

    #[test]
    fn substitution_reverses_time() {
        let e = parse("sin(t)+t").unwrap();
        let r = e.substitute_t(&parse("3-t").unwrap());
        assert_abs_diff_eq!(r.eval(1.0).unwrap(), e.eval(2.0).unwrap(), epsilon = 1e-15);
        assert!(!parse("pi*2").unwrap().depends_on_t());
        assert!(parse("-0").unwrap().is_zero_literal());
    }

    #[test]
    fn render_examples() {
        for s in ["-t^2", "(-t)^2", "2^3^2", "(2^3)^2", "1-(2-3)", "a", "sin(t)*(1+t)", "-(1+t)", "2^-t", "t/(2*t)"] {
            if let Ok(e) = parse(s) {
                assert_eq!(parse(&e.render()).unwrap(), e, "{s} -> {}", e.render());
                assert_eq!(parse(&e.render_full()).unwrap(), e);
            }
        }
        assert_eq!(parse("1-(2-3)").unwrap().render(), "1-(2-3)");
        assert_eq!(parse("-t^2").unwrap().render(), "-t^2");
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0.0f64..10.0).prop_map(Expr::Num),
            Just(Expr::T),
            Just(Expr::Pi),
        ];
        leaf.prop_recursive(5, 40, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(Expr::negate),
                (
                    prop_oneof![Just(BinOp::Add), Just(BinOp::Sub), Just(BinOp::Mul), Just(BinOp::Div), Just(BinOp::Pow)],
                    inner.clone(),
                    inner.clone()
                )
                    .prop_map(|(op, l, r)| Expr::bin(op, l, r)),
                (prop::sample::select(Func::ALL.to_vec()), inner).prop_map(|(f, a)| Expr::call(f, a)),
            ]
        })
    }

    proptest! {
        #[test]
        fn parser_is_total(s in "\\PC{0,40}") {
            let _ = parse(&s);
        }

        #[test]
        fn parser_is_total_on_grammar_alphabet(s in "[-+*/^() t.0-9episnco]{0,40}") {
            if let Err(ExprError::Syntax { offset, .. }) = parse(&s) {
                prop_assert!(offset <= s.len());
            }
        }

        #[test]
        fn render_round_trips(e in arb_expr()) {
            prop_assert_eq!(parse(&e.render()).unwrap(), e.clone());
            prop_assert_eq!(parse(&e.render_full()).unwrap(), e);
        }

        #[test]
        fn minimal_and_full_rendering_agree(e in arb_expr(), ts in prop::collection::vec(-3.0f64..3.0, 10)) {
            let a = parse(&e.render()).unwrap();
            let b = parse(&e.render_full()).unwrap();
            for t in ts {
                match (a.eval(t), b.eval(t)) {
                    (Ok(x), Ok(y)) => prop_assert_eq!(x.to_bits(), y.to_bits()),
                    (Err(_), Err(_)) => {}
                    other => prop_assert!(false, "mismatch {:?}", other),
                }
            }
        }
    }
}
