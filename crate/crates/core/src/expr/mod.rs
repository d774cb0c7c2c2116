//! Expression trees over named real variables.
//!
//! An [`Expr`] is an immutable, reference-counted tree. Nodes are built only
//! through the smart constructors on [`Expr`], which fold constants and drop
//! structural identities (`x + 0`, `x * 1`, `x^1`, ...). No other
//! simplification is attempted: identities between expressions are decided
//! numerically with [`is_zero_probabilistic`].
//!
//! Powers always carry an exact rational exponent so that differentiation
//! stays exact. Evaluation never fails on a domain violation; it produces a
//! non-finite value instead (see [`Expr::eval`]).

mod diff;
mod eval;
mod parse;
mod print;
mod symbols;
mod zero;

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use num_rational::Ratio;
use num_traits::{CheckedAdd, CheckedDiv, CheckedMul, CheckedSub, One, Signed, ToPrimitive, Zero};

pub use eval::{Env, EvalError, Tape};
pub use parse::{parse, ParseError};
pub use symbols::{Role, SymbolError, SymbolTable};
pub use zero::{is_zero_probabilistic, is_zero_probabilistic_on, SampleBox, ZeroTestOptions, ZeroVerdict};

/// Exact rational used for literals and exponents.
pub type Rational = Ratio<i64>;

/// Name of the global time symbol.
pub const TIME: &str = "t";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Func {
    Sqrt,
    Exp,
    Ln,
    Sin,
    Cos,
    Abs,
    Sign,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sqrt => "sqrt",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Abs => "abs",
            Func::Sign => "sign",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sqrt" => Func::Sqrt,
            "exp" => Func::Exp,
            "ln" | "log" => Func::Ln,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "abs" => Func::Abs,
            "sign" => Func::Sign,
            _ => return None,
        })
    }

    pub(crate) fn apply(self, x: f64) -> f64 {
        match self {
            Func::Sqrt => {
                if x < 0.0 {
                    f64::NAN
                } else {
                    x.sqrt()
                }
            }
            Func::Exp => x.exp(),
            Func::Ln => {
                if x <= 0.0 {
                    f64::NAN
                } else {
                    x.ln()
                }
            }
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Abs => x.abs(),
            Func::Sign => {
                if x.is_nan() {
                    f64::NAN
                } else if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, PartialEq)]
pub enum Node {
    Rat(Rational),
    Float(f64),
    Var(Arc<str>),
    Neg(Expr),
    Call(Func, Expr),
    Add(Expr, Expr),
    Sub(Expr, Expr),
    Mul(Expr, Expr),
    Div(Expr, Expr),
    Pow(Expr, Rational),
}

/// Immutable expression handle. Cloning is cheap.
#[derive(Clone, Debug, PartialEq)]
pub struct Expr(Arc<Node>);

impl Expr {
    pub fn node(&self) -> &Node {
        &self.0
    }

    pub(crate) fn ptr(&self) -> *const Node {
        Arc::as_ptr(&self.0)
    }

    fn wrap(node: Node) -> Expr {
        Expr(Arc::new(node))
    }

    pub fn rational(r: Rational) -> Expr {
        Expr::wrap(Node::Rat(r))
    }

    pub fn int(n: i64) -> Expr {
        Expr::rational(Rational::from_integer(n))
    }

    pub fn zero() -> Expr {
        Expr::int(0)
    }

    pub fn one() -> Expr {
        Expr::int(1)
    }

    /// Float literal. Integral values that fit are stored as exact rationals.
    pub fn float(x: f64) -> Expr {
        if x.is_finite() && x.fract() == 0.0 && x.abs() < 1e15 {
            return Expr::int(x as i64);
        }
        Expr::wrap(Node::Float(x))
    }

    pub fn var(name: &str) -> Expr {
        Expr::wrap(Node::Var(Arc::from(name)))
    }

    /// Constant value if the node is a literal.
    pub fn as_const(&self) -> Option<f64> {
        match self.node() {
            Node::Rat(r) => r.to_f64(),
            Node::Float(x) => Some(*x),
            _ => None,
        }
    }

    pub fn as_rational(&self) -> Option<Rational> {
        match self.node() {
            Node::Rat(r) => Some(*r),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    pub fn is_one(&self) -> bool {
        self.as_const() == Some(1.0)
    }

    pub fn as_var(&self) -> Option<&str> {
        match self.node() {
            Node::Var(name) => Some(name),
            _ => None,
        }
    }

    pub fn neg(&self) -> Expr {
        match self.node() {
            Node::Rat(r) => Expr::rational(-*r),
            Node::Float(x) => Expr::float(-x),
            Node::Neg(inner) => inner.clone(),
            _ => Expr::wrap(Node::Neg(self.clone())),
        }
    }

    pub fn add(&self, other: &Expr) -> Expr {
        if let (Node::Rat(a), Node::Rat(b)) = (self.node(), other.node()) {
            if let Some(r) = a.checked_add(b) {
                return Expr::rational(r);
            }
        }
        if let (Some(a), Some(b)) = (self.as_const(), other.as_const()) {
            return Expr::float(a + b);
        }
        if self.is_zero() {
            return other.clone();
        }
        if other.is_zero() {
            return self.clone();
        }
        if let Node::Neg(b) = other.node() {
            return self.sub(b);
        }
        Expr::wrap(Node::Add(self.clone(), other.clone()))
    }

    pub fn sub(&self, other: &Expr) -> Expr {
        if let (Node::Rat(a), Node::Rat(b)) = (self.node(), other.node()) {
            if let Some(r) = a.checked_sub(b) {
                return Expr::rational(r);
            }
        }
        if let (Some(a), Some(b)) = (self.as_const(), other.as_const()) {
            return Expr::float(a - b);
        }
        if other.is_zero() {
            return self.clone();
        }
        if self.is_zero() {
            return other.neg();
        }
        if let Node::Neg(b) = other.node() {
            return self.add(b);
        }
        Expr::wrap(Node::Sub(self.clone(), other.clone()))
    }

    pub fn mul(&self, other: &Expr) -> Expr {
        if let (Node::Rat(a), Node::Rat(b)) = (self.node(), other.node()) {
            if let Some(r) = a.checked_mul(b) {
                return Expr::rational(r);
            }
        }
        if let (Some(a), Some(b)) = (self.as_const(), other.as_const()) {
            return Expr::float(a * b);
        }
        if self.is_zero() || other.is_zero() {
            return Expr::zero();
        }
        if self.is_one() {
            return other.clone();
        }
        if other.is_one() {
            return self.clone();
        }
        if self.as_const() == Some(-1.0) {
            return other.neg();
        }
        if other.as_const() == Some(-1.0) {
            return self.neg();
        }
        Expr::wrap(Node::Mul(self.clone(), other.clone()))
    }

    pub fn div(&self, other: &Expr) -> Expr {
        if let (Node::Rat(a), Node::Rat(b)) = (self.node(), other.node()) {
            if !b.is_zero() {
                if let Some(r) = a.checked_div(b) {
                    return Expr::rational(r);
                }
            }
        }
        if other.is_one() {
            return self.clone();
        }
        if let (Some(a), Some(b)) = (self.as_const(), other.as_const()) {
            if b != 0.0 {
                return Expr::float(a / b);
            }
        }
        if self.is_zero() && !other.is_zero() {
            return Expr::zero();
        }
        Expr::wrap(Node::Div(self.clone(), other.clone()))
    }

    pub fn powr(&self, exponent: Rational) -> Expr {
        if exponent.is_zero() {
            return Expr::one();
        }
        if exponent.is_one() {
            return self.clone();
        }
        if let Some(base) = self.as_rational() {
            if exponent.is_integer() && exponent.abs() <= Rational::from_integer(16) {
                let n = exponent.to_integer();
                if !(base.is_zero() && n < 0) {
                    if let Some(r) = checked_powi(base, n) {
                        return Expr::rational(r);
                    }
                }
            }
        }
        if let Some(c) = self.as_const() {
            let v = eval::pow_rational(c, exponent);
            if v.is_finite() {
                return Expr::float(v);
            }
        }
        if let Node::Pow(inner, e) = self.node() {
            // integer powers compose without changing the real domain
            if e.is_integer() && exponent.is_integer() {
                if let Some(prod) = e.checked_mul(&exponent) {
                    return inner.powr(prod);
                }
            }
        }
        Expr::wrap(Node::Pow(self.clone(), exponent))
    }

    pub fn powi(&self, n: i64) -> Expr {
        self.powr(Rational::from_integer(n))
    }

    pub fn call(func: Func, arg: &Expr) -> Expr {
        if let Some(c) = arg.as_const() {
            match (func, arg.as_rational()) {
                (Func::Sin, Some(r)) if r.is_zero() => return Expr::zero(),
                (Func::Cos, Some(r)) if r.is_zero() => return Expr::one(),
                (Func::Exp, Some(r)) if r.is_zero() => return Expr::one(),
                (Func::Ln, Some(r)) if r.is_one() => return Expr::zero(),
                (Func::Abs, Some(r)) => return Expr::rational(r.abs()),
                (Func::Sign, Some(r)) => return Expr::rational(r.signum()),
                (Func::Sqrt, Some(r)) => {
                    if let Some(root) = exact_sqrt(r) {
                        return Expr::rational(root);
                    }
                }
                _ => {}
            }
            let v = func.apply(c);
            if v.is_finite() {
                return Expr::float(v);
            }
        }
        Expr::wrap(Node::Call(func, arg.clone()))
    }

    pub fn sqrt(&self) -> Expr {
        Expr::call(Func::Sqrt, self)
    }
    pub fn exp(&self) -> Expr {
        Expr::call(Func::Exp, self)
    }
    pub fn ln(&self) -> Expr {
        Expr::call(Func::Ln, self)
    }
    pub fn sin(&self) -> Expr {
        Expr::call(Func::Sin, self)
    }
    pub fn cos(&self) -> Expr {
        Expr::call(Func::Cos, self)
    }

    pub fn scale(&self, c: f64) -> Expr {
        Expr::float(c).mul(self)
    }

    /// Sum of a list; empty sum is zero.
    pub fn sum<'a>(terms: impl IntoIterator<Item = &'a Expr>) -> Expr {
        terms.into_iter().fold(Expr::zero(), |acc, t| acc.add(t))
    }

    /// Names of all variables referenced by the expression.
    pub fn free_symbols(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut seen = std::collections::HashSet::new();
        collect_symbols(self, &mut out, &mut seen);
        out
    }

    pub fn references(&self, name: &str) -> bool {
        self.free_symbols().contains(name)
    }

    /// Replace variables by expressions. Unmapped variables are kept.
    pub fn substitute(&self, map: &HashMap<String, Expr>) -> Expr {
        let mut memo = HashMap::new();
        substitute_rec(self, map, &mut memo)
    }

    pub fn substitute_one(&self, name: &str, value: &Expr) -> Expr {
        let mut map = HashMap::new();
        map.insert(name.to_string(), value.clone());
        self.substitute(&map)
    }

    /// Rename variables according to `f`; `None` keeps the name.
    pub fn rename(&self, f: &dyn Fn(&str) -> Option<String>) -> Expr {
        let map: HashMap<String, Expr> = self
            .free_symbols()
            .into_iter()
            .filter_map(|name| f(&name).map(|new| (name, Expr::var(&new))))
            .collect();
        self.substitute(&map)
    }

    /// Top-level additive terms (with their signs folded in).
    pub fn terms(&self) -> Vec<Expr> {
        let mut out = Vec::new();
        collect_terms(self, false, &mut out);
        out
    }

    /// Number of distinct nodes in the expression DAG.
    pub fn node_count(&self) -> usize {
        let mut seen = std::collections::HashSet::new();
        count_nodes(self, &mut seen);
        seen.len()
    }
}

fn checked_powi(base: Rational, n: i64) -> Option<Rational> {
    let mut acc = Rational::one();
    for _ in 0..n.unsigned_abs() {
        acc = acc.checked_mul(&base)?;
    }
    if n < 0 {
        if acc.is_zero() {
            return None;
        }
        acc = acc.recip();
    }
    Some(acc)
}

fn exact_sqrt(r: Rational) -> Option<Rational> {
    if r.is_negative() {
        return None;
    }
    let root = |n: i64| -> Option<i64> {
        let s = (n as f64).sqrt().round() as i64;
        (s.checked_mul(s) == Some(n)).then_some(s)
    };
    Some(Rational::new(root(*r.numer())?, root(*r.denom())?))
}

fn collect_symbols(
    e: &Expr,
    out: &mut BTreeSet<String>,
    seen: &mut std::collections::HashSet<*const Node>,
) {
    if !seen.insert(e.ptr()) {
        return;
    }
    match e.node() {
        Node::Rat(_) | Node::Float(_) => {}
        Node::Var(name) => {
            out.insert(name.to_string());
        }
        Node::Neg(a) | Node::Call(_, a) | Node::Pow(a, _) => collect_symbols(a, out, seen),
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
            collect_symbols(a, out, seen);
            collect_symbols(b, out, seen);
        }
    }
}

fn count_nodes(e: &Expr, seen: &mut std::collections::HashSet<*const Node>) {
    if !seen.insert(e.ptr()) {
        return;
    }
    match e.node() {
        Node::Rat(_) | Node::Float(_) | Node::Var(_) => {}
        Node::Neg(a) | Node::Call(_, a) | Node::Pow(a, _) => count_nodes(a, seen),
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
            count_nodes(a, seen);
            count_nodes(b, seen);
        }
    }
}

fn collect_terms(e: &Expr, negate: bool, out: &mut Vec<Expr>) {
    match e.node() {
        Node::Add(a, b) => {
            collect_terms(a, negate, out);
            collect_terms(b, negate, out);
        }
        Node::Sub(a, b) => {
            collect_terms(a, negate, out);
            collect_terms(b, !negate, out);
        }
        Node::Neg(a) => collect_terms(a, !negate, out),
        _ => out.push(if negate { e.neg() } else { e.clone() }),
    }
}

fn substitute_rec(
    e: &Expr,
    map: &HashMap<String, Expr>,
    memo: &mut HashMap<*const Node, Expr>,
) -> Expr {
    if let Some(done) = memo.get(&e.ptr()) {
        return done.clone();
    }
    let out = match e.node() {
        Node::Rat(_) | Node::Float(_) => e.clone(),
        Node::Var(name) => map.get(name.as_ref()).cloned().unwrap_or_else(|| e.clone()),
        Node::Neg(a) => substitute_rec(a, map, memo).neg(),
        Node::Call(f, a) => Expr::call(*f, &substitute_rec(a, map, memo)),
        Node::Pow(a, r) => substitute_rec(a, map, memo).powr(*r),
        Node::Add(a, b) => substitute_rec(a, map, memo).add(&substitute_rec(b, map, memo)),
        Node::Sub(a, b) => substitute_rec(a, map, memo).sub(&substitute_rec(b, map, memo)),
        Node::Mul(a, b) => substitute_rec(a, map, memo).mul(&substitute_rec(b, map, memo)),
        Node::Div(a, b) => substitute_rec(a, map, memo).div(&substitute_rec(b, map, memo)),
    };
    memo.insert(e.ptr(), out.clone());
    out
}

impl std::ops::Add for &Expr {
    type Output = Expr;
    fn add(self, rhs: &Expr) -> Expr {
        Expr::add(self, rhs)
    }
}

impl std::ops::Sub for &Expr {
    type Output = Expr;
    fn sub(self, rhs: &Expr) -> Expr {
        Expr::sub(self, rhs)
    }
}

impl std::ops::Mul for &Expr {
    type Output = Expr;
    fn mul(self, rhs: &Expr) -> Expr {
        Expr::mul(self, rhs)
    }
}

impl std::ops::Div for &Expr {
    type Output = Expr;
    fn div(self, rhs: &Expr) -> Expr {
        Expr::div(self, rhs)
    }
}

impl std::ops::Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::neg(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructors_fold_constants() {
        let half = Expr::int(1).div(&Expr::int(2));
        assert_eq!(half.as_rational(), Some(Rational::new(1, 2)));
        let x = Expr::var("x");
        assert_eq!(x.add(&Expr::zero()), x);
        assert_eq!(x.mul(&Expr::one()), x);
        assert!(x.mul(&Expr::zero()).is_zero());
        assert_eq!(x.powi(1), x);
        assert!(x.powi(0).is_one());
        assert_eq!(x.neg().neg(), x);
        assert_eq!(Expr::int(0).sin(), Expr::zero());
        assert_eq!(Expr::int(4).sqrt().as_rational(), Some(Rational::from_integer(2)));
    }

    #[test]
    fn division_by_literal_zero_is_kept() {
        let e = Expr::one().div(&Expr::zero());
        assert!(matches!(e.node(), Node::Div(_, _)));
    }

    #[test]
    fn terms_flatten_sums_with_signs() {
        let x = Expr::var("x");
        let y = Expr::var("y");
        let e = x.sub(&y.add(&Expr::int(2)));
        assert_eq!(e.terms().len(), 3);
    }

    #[test]
    fn substitution_and_rename() {
        let e = parse("x^2 + y", &SymbolTable::free(&["x", "y"])).unwrap();
        let r = e.rename(&|n| (n == "x").then(|| "x_(1)".to_string()));
        assert!(r.references("x_(1)"));
        assert!(!r.references("x"));
        let s = e.substitute_one("y", &Expr::int(3));
        assert_eq!(s.free_symbols().len(), 1);
    }
}
