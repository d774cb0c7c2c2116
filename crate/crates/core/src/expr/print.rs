use std::fmt;

use num_traits::Signed;

use super::{Expr, Node};

// Binding strength of the printed form, used to decide parentheses.
const SUM: u8 = 1;
const PRODUCT: u8 = 2;
const UNARY: u8 = 3;
const POWER: u8 = 4;
const ATOM: u8 = 5;

fn precedence(e: &Expr) -> u8 {
    match e.node() {
        Node::Add(..) | Node::Sub(..) => SUM,
        Node::Mul(..) | Node::Div(..) => PRODUCT,
        Node::Neg(_) => UNARY,
        Node::Pow(..) => POWER,
        Node::Rat(r) if !r.is_integer() || r.is_negative() => PRODUCT,
        Node::Float(x) if *x < 0.0 || !x.is_finite() => UNARY,
        _ => ATOM,
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, e: &Expr, min: u8) -> fmt::Result {
    if precedence(e) < min {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

/// True if the printed form starts with a minus sign.
fn leads_negative(e: &Expr) -> bool {
    match e.node() {
        Node::Neg(_) => true,
        Node::Rat(r) => r.is_negative(),
        Node::Float(x) => x.is_sign_negative() && !x.is_nan(),
        Node::Mul(a, _) | Node::Div(a, _) => leads_negative(a),
        _ => false,
    }
}

// `a - -b` parses, but reads badly.
fn write_right_term(f: &mut fmt::Formatter<'_>, e: &Expr) -> fmt::Result {
    if leads_negative(e) {
        write!(f, "({e})")
    } else {
        write_child(f, e, PRODUCT)
    }
}

fn write_float(f: &mut fmt::Formatter<'_>, x: f64) -> fmt::Result {
    if x.is_nan() {
        write!(f, "(0/0)")
    } else if x.is_infinite() {
        write!(f, "{}1e999", if x < 0.0 { "-" } else { "" })
    } else {
        // Debug formatting is the shortest representation that round-trips.
        write!(f, "{x:?}")
    }
}

/// Prints in the grammar accepted by [`super::parse`]; printing then parsing
/// rebuilds the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node() {
            Node::Rat(r) => {
                if r.is_integer() {
                    write!(f, "{}", r.numer())
                } else {
                    write!(f, "{}/{}", r.numer(), r.denom())
                }
            }
            Node::Float(x) => write_float(f, *x),
            Node::Var(name) => write!(f, "{name}"),
            Node::Neg(a) => {
                write!(f, "-")?;
                write_child(f, a, POWER)
            }
            Node::Call(func, a) => write!(f, "{}({a})", func.name()),
            Node::Add(a, b) => {
                write_child(f, a, SUM)?;
                write!(f, " + ")?;
                write_right_term(f, b)
            }
            Node::Sub(a, b) => {
                write_child(f, a, SUM)?;
                write!(f, " - ")?;
                write_right_term(f, b)
            }
            Node::Mul(a, b) => {
                write_child(f, a, PRODUCT)?;
                write!(f, "*")?;
                write_child(f, b, POWER)
            }
            Node::Div(a, b) => {
                write_child(f, a, PRODUCT)?;
                write!(f, "/")?;
                write_child(f, b, POWER)
            }
            Node::Pow(a, r) => {
                write_child(f, a, ATOM)?;
                if r.is_integer() && !r.is_negative() {
                    write!(f, "^{}", r.numer())
                } else if r.is_integer() {
                    write!(f, "^({})", r.numer())
                } else {
                    write!(f, "^({}/{})", r.numer(), r.denom())
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use crate::expr::{parse, SymbolTable};

    #[test]
    fn prints_parseable_text() {
        let table = SymbolTable::free(&["x", "v"]);
        for src in [
            "3/2*v^2/x - 2*x^3",
            "-(x + v)*v",
            "x - (v - 1)",
            "x/(v*x)",
            "(-x)^2",
            "x^(1/2) + x^(-3)",
            "sin(x)^2 - 0.3*cos(v)",
            "-x^2",
            "x*(-v)",
        ] {
            let e = parse(src, &table).unwrap();
            let again = parse(&e.to_string(), &table).unwrap();
            assert_eq!(e, again, "{src} printed as {e}");
        }
    }
}
