use std::collections::{BTreeMap, HashMap};

use num_traits::ToPrimitive;
use thiserror::Error;

use super::{Expr, Func, Node, Rational};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("symbol `{0}` has no assigned value")]
    Unassigned(String),
}

/// Source of variable values for [`Expr::eval`].
pub trait Env {
    fn value(&self, name: &str) -> Option<f64>;
}

impl Env for HashMap<String, f64> {
    fn value(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

impl Env for BTreeMap<String, f64> {
    fn value(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

impl Env for [(&str, f64)] {
    fn value(&self, name: &str) -> Option<f64> {
        self.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }
}

impl<const N: usize> Env for [(&str, f64); N] {
    fn value(&self, name: &str) -> Option<f64> {
        self.as_slice().value(name)
    }
}

pub(crate) fn pow_rational(base: f64, exponent: Rational) -> f64 {
    if exponent.is_integer() {
        let n = exponent.to_integer();
        if base == 0.0 && n < 0 {
            return f64::NAN;
        }
        return match i32::try_from(n) {
            Ok(n) => base.powi(n),
            Err(_) => base.powf(n as f64),
        };
    }
    let e = exponent.to_f64().unwrap_or(f64::NAN);
    if base == 0.0 {
        return if e > 0.0 { 0.0 } else { f64::NAN };
    }
    if base < 0.0 {
        // real odd roots only
        if exponent.denom() % 2 == 0 {
            return f64::NAN;
        }
        let magnitude = (-base).powf(e);
        return if exponent.numer() % 2 == 0 {
            magnitude
        } else {
            -magnitude
        };
    }
    base.powf(e)
}

#[inline]
fn divide(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        f64::NAN
    } else {
        a / b
    }
}

impl Expr {
    /// Evaluate at a point. Domain violations (division by zero, `ln` of a
    /// non-positive number, even roots of negatives) give `NaN`; callers
    /// test the result with `is_finite`.
    pub fn eval<E: Env + ?Sized>(&self, env: &E) -> Result<f64, EvalError> {
        let mut memo = HashMap::new();
        eval_rec(self, env, &mut memo)
    }
}

fn eval_rec<E: Env + ?Sized>(
    e: &Expr,
    env: &E,
    memo: &mut HashMap<*const Node, f64>,
) -> Result<f64, EvalError> {
    if let Some(v) = memo.get(&e.ptr()) {
        return Ok(*v);
    }
    let v = match e.node() {
        Node::Rat(r) => r.to_f64().unwrap_or(f64::NAN),
        Node::Float(x) => *x,
        Node::Var(name) => env
            .value(name)
            .ok_or_else(|| EvalError::Unassigned(name.to_string()))?,
        Node::Neg(a) => -eval_rec(a, env, memo)?,
        Node::Call(f, a) => f.apply(eval_rec(a, env, memo)?),
        Node::Pow(a, r) => pow_rational(eval_rec(a, env, memo)?, *r),
        Node::Add(a, b) => eval_rec(a, env, memo)? + eval_rec(b, env, memo)?,
        Node::Sub(a, b) => eval_rec(a, env, memo)? - eval_rec(b, env, memo)?,
        Node::Mul(a, b) => eval_rec(a, env, memo)? * eval_rec(b, env, memo)?,
        Node::Div(a, b) => divide(eval_rec(a, env, memo)?, eval_rec(b, env, memo)?),
    };
    memo.insert(e.ptr(), v);
    Ok(v)
}

#[derive(Debug, Clone)]
enum Op {
    Const(f64),
    Slot(usize),
    Neg(usize),
    Call(Func, usize),
    Pow(usize, Rational),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
}

/// A set of expressions flattened into one instruction list over a fixed
/// slot layout. Shared subtrees are evaluated once per call.
#[derive(Debug, Clone)]
pub struct Tape {
    slots: Vec<String>,
    ops: Vec<Op>,
    roots: Vec<usize>,
}

impl Tape {
    /// Compile `exprs` so that variable `slots[i]` reads `values[i]`.
    pub fn compile(exprs: &[Expr], slots: &[String]) -> Result<Tape, EvalError> {
        let index: HashMap<&str, usize> = slots
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let mut ops = Vec::new();
        let mut seen = HashMap::new();
        let mut roots = Vec::with_capacity(exprs.len());
        for e in exprs {
            roots.push(emit(e, &index, &mut ops, &mut seen)?);
        }
        Ok(Tape {
            slots: slots.to_vec(),
            ops,
            roots,
        })
    }

    pub fn slots(&self) -> &[String] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.roots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    /// Evaluate all roots into `out`; `scratch` is reused between calls.
    pub fn eval_into(&self, values: &[f64], scratch: &mut Vec<f64>, out: &mut [f64]) {
        debug_assert_eq!(values.len(), self.slots.len());
        scratch.clear();
        scratch.reserve(self.ops.len());
        for op in &self.ops {
            let v = match *op {
                Op::Const(c) => c,
                Op::Slot(i) => values[i],
                Op::Neg(a) => -scratch[a],
                Op::Call(f, a) => f.apply(scratch[a]),
                Op::Pow(a, r) => pow_rational(scratch[a], r),
                Op::Add(a, b) => scratch[a] + scratch[b],
                Op::Sub(a, b) => scratch[a] - scratch[b],
                Op::Mul(a, b) => scratch[a] * scratch[b],
                Op::Div(a, b) => divide(scratch[a], scratch[b]),
            };
            scratch.push(v);
        }
        for (o, r) in out.iter_mut().zip(&self.roots) {
            *o = scratch[*r];
        }
    }

    pub fn eval(&self, values: &[f64]) -> Vec<f64> {
        let mut scratch = Vec::new();
        let mut out = vec![0.0; self.roots.len()];
        self.eval_into(values, &mut scratch, &mut out);
        out
    }
}

fn emit(
    e: &Expr,
    index: &HashMap<&str, usize>,
    ops: &mut Vec<Op>,
    seen: &mut HashMap<*const Node, usize>,
) -> Result<usize, EvalError> {
    if let Some(i) = seen.get(&e.ptr()) {
        return Ok(*i);
    }
    let op = match e.node() {
        Node::Rat(r) => Op::Const(r.to_f64().unwrap_or(f64::NAN)),
        Node::Float(x) => Op::Const(*x),
        Node::Var(name) => Op::Slot(
            *index
                .get(name.as_ref())
                .ok_or_else(|| EvalError::Unassigned(name.to_string()))?,
        ),
        Node::Neg(a) => Op::Neg(emit(a, index, ops, seen)?),
        Node::Call(f, a) => Op::Call(*f, emit(a, index, ops, seen)?),
        Node::Pow(a, r) => Op::Pow(emit(a, index, ops, seen)?, *r),
        Node::Add(a, b) => Op::Add(emit(a, index, ops, seen)?, emit(b, index, ops, seen)?),
        Node::Sub(a, b) => Op::Sub(emit(a, index, ops, seen)?, emit(b, index, ops, seen)?),
        Node::Mul(a, b) => Op::Mul(emit(a, index, ops, seen)?, emit(b, index, ops, seen)?),
        Node::Div(a, b) => Op::Div(emit(a, index, ops, seen)?, emit(b, index, ops, seen)?),
    };
    ops.push(op);
    let i = ops.len() - 1;
    seen.insert(e.ptr(), i);
    Ok(i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, SymbolTable};

    fn p(src: &str) -> Expr {
        parse(src, &SymbolTable::free(&["x", "v", "b0", "y"])).unwrap()
    }

    #[test]
    fn kummer_schwarz_rhs_value() {
        let e = p("3/2 * v^2 / x - 2*b0*x^3");
        let v = e.eval(&[("x", 1.0), ("v", 2.0), ("b0", 1.0)]).unwrap();
        assert_eq!(v, 4.0);
    }

    #[test]
    fn domain_violations_are_not_finite() {
        assert!(!p("ln(-1)").eval(&[("x", 0.0)]).unwrap().is_finite());
        assert!(!p("1/x").eval(&[("x", 0.0)]).unwrap().is_finite());
        assert!(!p("sqrt(x)").eval(&[("x", -1.0)]).unwrap().is_finite());
        assert!(!p("x^(1/2)").eval(&[("x", -4.0)]).unwrap().is_finite());
        assert_eq!(p("x^(1/3)").eval(&[("x", -8.0)]).unwrap(), -2.0);
        assert!(!p("x^(-2)").eval(&[("x", 0.0)]).unwrap().is_finite());
    }

    #[test]
    fn unassigned_symbol_is_an_error() {
        let err = p("x + y").eval(&[("x", 1.0)]).unwrap_err();
        assert_eq!(err, EvalError::Unassigned("y".into()));
    }

    #[test]
    fn tape_matches_tree_evaluation() {
        let exprs = [p("sin(x)*v^3 - x/v"), p("exp(x) + sqrt(v)*b0")];
        let slots: Vec<String> = ["x", "v", "b0"].iter().map(|s| s.to_string()).collect();
        let tape = Tape::compile(&exprs, &slots).unwrap();
        let out = tape.eval(&[0.7, 1.3, -2.0]);
        let env = [("x", 0.7), ("v", 1.3), ("b0", -2.0)];
        assert_eq!(out[0], exprs[0].eval(&env).unwrap());
        assert_eq!(out[1], exprs[1].eval(&env).unwrap());
    }
}
