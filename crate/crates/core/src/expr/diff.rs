use std::collections::HashMap;

use num_traits::One;

use super::{Expr, Func, Node, Rational};

impl Expr {
    /// Exact structural derivative with respect to `var`.
    ///
    /// `abs` and `sign` are differentiated away from their kink:
    /// `d|u| = sign(u) du` and `d sign(u) = 0`.
    pub fn differentiate(&self, var: &str) -> Expr {
        let mut memo = HashMap::new();
        diff_rec(self, var, &mut memo)
    }
}

fn diff_rec(e: &Expr, var: &str, memo: &mut HashMap<*const Node, Expr>) -> Expr {
    if let Some(d) = memo.get(&e.ptr()) {
        return d.clone();
    }
    let d = match e.node() {
        Node::Rat(_) | Node::Float(_) => Expr::zero(),
        Node::Var(name) => {
            if name.as_ref() == var {
                Expr::one()
            } else {
                Expr::zero()
            }
        }
        Node::Neg(a) => diff_rec(a, var, memo).neg(),
        Node::Add(a, b) => diff_rec(a, var, memo).add(&diff_rec(b, var, memo)),
        Node::Sub(a, b) => diff_rec(a, var, memo).sub(&diff_rec(b, var, memo)),
        Node::Mul(a, b) => {
            let da = diff_rec(a, var, memo);
            let db = diff_rec(b, var, memo);
            da.mul(b).add(&a.mul(&db))
        }
        Node::Div(a, b) => {
            let da = diff_rec(a, var, memo);
            let db = diff_rec(b, var, memo);
            if db.is_zero() {
                da.div(b)
            } else {
                da.mul(b).sub(&a.mul(&db)).div(&b.powi(2))
            }
        }
        Node::Pow(a, r) => {
            let da = diff_rec(a, var, memo);
            if da.is_zero() {
                Expr::zero()
            } else {
                Expr::rational(*r)
                    .mul(&a.powr(*r - Rational::one()))
                    .mul(&da)
            }
        }
        Node::Call(f, a) => {
            let da = diff_rec(a, var, memo);
            if da.is_zero() {
                Expr::zero()
            } else {
                let outer = match f {
                    Func::Sqrt => Expr::one().div(&Expr::int(2).mul(e)),
                    Func::Exp => e.clone(),
                    Func::Ln => Expr::one().div(a),
                    Func::Sin => a.cos(),
                    Func::Cos => a.sin().neg(),
                    Func::Abs => Expr::call(Func::Sign, a),
                    Func::Sign => Expr::zero(),
                };
                outer.mul(&da)
            }
        }
    };
    memo.insert(e.ptr(), d.clone());
    d
}

#[cfg(test)]
mod tests {
    use crate::expr::{parse, SymbolTable};

    fn table() -> SymbolTable {
        SymbolTable::free(&["x", "v", "b0", "x_(1)", "k1", "xi"])
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * (1.0 + b.abs())
    }

    #[test]
    fn kummer_schwarz_component_in_v() {
        let e = parse("3/2 * v^2 / x - 2*b0*x^3", &table()).unwrap();
        let d = e.differentiate("v");
        for (x, v) in [(1.0, 2.0), (0.4, -1.3), (2.5, 0.7)] {
            let got = d.eval(&[("x", x), ("v", v), ("b0", 0.3)]).unwrap();
            assert!(close(got, 3.0 * v / x));
        }
    }

    #[test]
    fn translation_in_first_copy() {
        let e = parse("x_(1) + k1", &table()).unwrap();
        assert!(e.differentiate("x_(1)").is_one());
        assert!(e.differentiate("x").is_zero());
    }

    #[test]
    fn reciprocal_in_xi() {
        let e = parse("x^3/xi", &table()).unwrap();
        let d = e.differentiate("xi");
        let got = d.eval(&[("x", 1.5), ("xi", 0.8)]).unwrap();
        assert!(close(got, -(1.5f64.powi(3)) / 0.64));
    }

    #[test]
    fn elementary_functions() {
        let cases = [
            ("sqrt(x)", 0.5 / 1.7f64.sqrt()),
            ("exp(2*x)", 2.0 * (3.4f64).exp()),
            ("ln(x)", 1.0 / 1.7),
            ("sin(x)", 1.7f64.cos()),
            ("cos(x)", -1.7f64.sin()),
            ("abs(-x)", 1.0),
            ("sign(x)", 0.0),
            ("x^(1/3)", (1.0 / 3.0) * 1.7f64.powf(-2.0 / 3.0)),
        ];
        for (src, want) in cases {
            let d = parse(src, &table()).unwrap().differentiate("x");
            let got = d.eval(&[("x", 1.7)]).unwrap();
            assert!(close(got, want), "{src}: {got} vs {want}");
        }
    }
}
