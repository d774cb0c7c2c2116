//! Second- and higher-order ODE systems, their first-order lifts, the drift
//! field `X_D` and the time-derivative field `X_L`.
//!
//! A system of order `s` in `n` unknowns is stored as derivative levels:
//! level 0 holds the positions `x^i`, level `j` holds the plain derivatives
//! `d^j x^i / dt^j`, and `rhs[i]` gives `d^s x^i / dt^s`. Jet coordinates
//! with `1/j!` scaling are not used.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::expr::{parse, Expr, ParseError, Role, SampleBox, SymbolError, SymbolTable, TIME};
use crate::liealg::{lie_scheffers_check, AlgebraOptions, LieError, LieSchefferResult};
use crate::vfield::{FieldError, TimeDepVectorField, VectorField};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SodeError {
    #[error("in `{source_text}`: {error}")]
    Parse {
        source_text: String,
        error: ParseError,
    },
    #[error(transparent)]
    Symbol(#[from] SymbolError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    Positive,
    Nonzero,
}

/// `expr > 0` or `expr != 0`, parsed from `a > b`, `a < b` or `a != b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub source: String,
    pub expr: Expr,
    pub relation: Relation,
}

impl Constraint {
    pub fn parse(src: &str, table: &SymbolTable) -> Result<Constraint, ParseError> {
        let (at, op) = ["!=", ">", "<"]
            .iter()
            .find_map(|op| src.find(op).map(|i| (i, *op)))
            .ok_or(ParseError::Syntax {
                offset: 0,
                message: "expected `>`, `<` or `!=`".into(),
            })?;
        let rhs_start = at + op.len();
        let lhs = parse(&src[..at], table)?;
        let rhs = parse(&src[rhs_start..], table).map_err(|e| shift(e, rhs_start))?;
        let (expr, relation) = match op {
            ">" => (lhs.sub(&rhs), Relation::Positive),
            "<" => (rhs.sub(&lhs), Relation::Positive),
            _ => (lhs.sub(&rhs), Relation::Nonzero),
        };
        Ok(Constraint {
            source: src.trim().to_string(),
            expr,
            relation,
        })
    }

    /// Whether `value` satisfies the constraint with at least `margin` to spare.
    pub fn holds(&self, value: f64, margin: f64) -> bool {
        match self.relation {
            Relation::Positive => value > margin,
            Relation::Nonzero => value.abs() > margin,
        }
    }

    pub fn substitute(&self, map: &HashMap<String, Expr>) -> Constraint {
        Constraint {
            source: self.source.clone(),
            expr: self.expr.substitute(map),
            relation: self.relation,
        }
    }

    pub fn rename(&self, f: &dyn Fn(&str) -> Option<String>) -> Constraint {
        Constraint {
            source: self.source.clone(),
            expr: self.expr.rename(f),
            relation: self.relation,
        }
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

fn shift(e: ParseError, by: usize) -> ParseError {
    match e {
        ParseError::Syntax { offset, message } => ParseError::Syntax {
            offset: offset + by,
            message,
        },
        ParseError::UndeclaredSymbol { name, offset } => ParseError::UndeclaredSymbol {
            name,
            offset: offset + by,
        },
        ParseError::InexactExponent { offset } => ParseError::InexactExponent { offset: offset + by },
    }
}

/// An explicit ODE system `d^s x / dt^s = F(t, x, dx/dt, ..)` of order `s >= 1`.
///
/// Order 2 is a SODE, order 3 and above a HODE. Parameters and
/// time-dependent coefficient functions are substituted into `rhs` and
/// `constraints` when the system is built; the originals are kept for reports.
#[derive(Debug, Clone)]
pub struct OdeSystem {
    levels: Vec<Vec<String>>,
    rhs: Vec<Expr>,
    coords: SymbolTable,
    parameters: BTreeMap<String, f64>,
    coefficients: BTreeMap<String, Expr>,
    constraints: Vec<Constraint>,
}

/// Default derivative names: `v` for `x` (and `v1` for `x1`) at order 2,
/// `y1, y2, ..` at higher order.
pub fn default_level_names(positions: &[String], order: usize) -> Vec<Vec<String>> {
    let mut levels = vec![positions.to_vec()];
    for j in 1..order {
        levels.push(
            positions
                .iter()
                .map(|p| {
                    if order == 2 {
                        match p.strip_prefix('x') {
                            Some(rest) => format!("v{rest}"),
                            None => format!("v{p}"),
                        }
                    } else if positions.len() == 1 {
                        format!("y{j}")
                    } else {
                        format!("y{j}{p}")
                    }
                })
                .collect(),
        );
    }
    levels
}

#[derive(Debug, Clone, Default)]
pub struct OdeBuilder {
    order: usize,
    positions: Vec<String>,
    levels: Option<Vec<Vec<String>>>,
    rhs: Vec<String>,
    parameters: Vec<(String, f64)>,
    coefficients: Vec<(String, String)>,
    constraints: Vec<String>,
}

impl OdeBuilder {
    pub fn positions<S: AsRef<str>>(mut self, names: &[S]) -> Self {
        self.positions = names.iter().map(|s| s.as_ref().to_string()).collect();
        self
    }

    /// Derivative names per level, including level 0 (the positions).
    pub fn levels(mut self, levels: Vec<Vec<String>>) -> Self {
        self.positions = levels.first().cloned().unwrap_or_default();
        self.levels = Some(levels);
        self
    }

    pub fn rhs<S: AsRef<str>>(mut self, rhs: &[S]) -> Self {
        self.rhs = rhs.iter().map(|s| s.as_ref().to_string()).collect();
        self
    }

    pub fn parameter(mut self, name: &str, value: f64) -> Self {
        self.parameters.push((name.to_string(), value));
        self
    }

    /// A function of `t` (and parameters) substituted wherever `name` appears.
    pub fn coefficient(mut self, name: &str, expr: &str) -> Self {
        self.coefficients.push((name.to_string(), expr.to_string()));
        self
    }

    pub fn constraint(mut self, src: &str) -> Self {
        self.constraints.push(src.to_string());
        self
    }

    pub fn build(self) -> Result<OdeSystem, SodeError> {
        if self.order == 0 {
            return Err(SodeError::Invalid("order must be at least 1".into()));
        }
        if self.positions.is_empty() {
            return Err(SodeError::Invalid("no positions declared".into()));
        }
        if self.rhs.len() != self.positions.len() {
            return Err(SodeError::Invalid(format!(
                "{} right-hand sides for {} positions",
                self.rhs.len(),
                self.positions.len()
            )));
        }
        let levels = self
            .levels
            .unwrap_or_else(|| default_level_names(&self.positions, self.order));
        if levels.len() != self.order || levels.iter().any(|l| l.len() != self.positions.len()) {
            return Err(SodeError::Invalid(format!(
                "order {} needs {} levels of {} names",
                self.order,
                self.order,
                self.positions.len()
            )));
        }

        let mut coords = SymbolTable::new();
        for (j, level) in levels.iter().enumerate() {
            let role = match j {
                0 => Role::Coordinate,
                1 if self.order == 2 => Role::Velocity,
                _ => Role::HigherDerivative,
            };
            for name in level {
                coords.declare(name, role)?;
            }
        }

        let mut scope = SymbolTable::new().with(TIME, Role::Time)?;
        let mut values: HashMap<String, Expr> = HashMap::new();
        let mut parameters = BTreeMap::new();
        for (name, value) in &self.parameters {
            scope.declare(name, Role::Parameter)?;
            values.insert(name.clone(), Expr::float(*value));
            parameters.insert(name.clone(), *value);
        }
        let parse_in = |src: &str, table: &SymbolTable| {
            parse(src, table).map_err(|error| SodeError::Parse {
                source_text: src.to_string(),
                error,
            })
        };
        let mut coefficients = BTreeMap::new();
        for (name, src) in &self.coefficients {
            let e = parse_in(src, &scope)?;
            let others: Vec<String> = e
                .free_symbols()
                .into_iter()
                .filter(|s| s != TIME && !parameters.contains_key(s))
                .collect();
            if !others.is_empty() {
                return Err(SodeError::Invalid(format!(
                    "coefficient `{name}` may depend only on t and parameters, found {}",
                    others.join(", ")
                )));
            }
            coefficients.insert(name.clone(), e.clone());
            values.insert(name.clone(), e.substitute(&values));
        }
        for name in coefficients.keys() {
            scope.declare(name, Role::Auxiliary)?;
        }
        let full = scope.merged(&coords)?;

        let rhs = self
            .rhs
            .iter()
            .map(|src| Ok(parse_in(src, &full)?.substitute(&values)))
            .collect::<Result<Vec<_>, SodeError>>()?;
        let constraints = self
            .constraints
            .iter()
            .map(|src| {
                Constraint::parse(src, &full)
                    .map(|c| c.substitute(&values))
                    .map_err(|error| SodeError::Parse {
                        source_text: src.clone(),
                        error,
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(OdeSystem {
            levels,
            rhs,
            coords,
            parameters,
            coefficients,
            constraints,
        })
    }
}

impl OdeSystem {
    pub fn builder(order: usize) -> OdeBuilder {
        OdeBuilder {
            order,
            ..OdeBuilder::default()
        }
    }

    pub fn order(&self) -> usize {
        self.levels.len()
    }

    pub fn n(&self) -> usize {
        self.levels[0].len()
    }

    pub fn positions(&self) -> &[String] {
        &self.levels[0]
    }

    pub fn levels(&self) -> &[Vec<String>] {
        &self.levels
    }

    /// Coordinates of the lifted space, level by level.
    pub fn coords(&self) -> &SymbolTable {
        &self.coords
    }

    pub fn coordinate_names(&self) -> Vec<String> {
        self.levels.iter().flatten().cloned().collect()
    }

    pub fn rhs(&self) -> &[Expr] {
        &self.rhs
    }

    pub fn parameters(&self) -> &BTreeMap<String, f64> {
        &self.parameters
    }

    pub fn coefficients(&self) -> &BTreeMap<String, Expr> {
        &self.coefficients
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn is_autonomous(&self) -> bool {
        self.rhs.iter().all(|f| !f.references(TIME))
    }

    /// Components of the lift, in coordinate order.
    fn lift_components(&self) -> Vec<Expr> {
        let mut comps = Vec::new();
        for level in &self.levels[1..] {
            comps.extend(level.iter().map(|name| Expr::var(name)));
        }
        comps.extend(self.rhs.iter().cloned());
        comps
    }

    /// The first-order system obtained by adding derivative variables.
    pub fn to_first_order(&self) -> TimeDepVectorField {
        TimeDepVectorField::new(self.coords.clone(), self.lift_components())
            .expect("lift components reference declared coordinates and t")
    }

    /// Same as [`Self::to_first_order`] with a decomposition attached.
    pub fn to_first_order_decomposed(
        &self,
        terms: Vec<(Expr, VectorField)>,
        sample_box: &SampleBox,
    ) -> Result<TimeDepVectorField, SodeError> {
        Ok(self.to_first_order().with_decomposition(terms, sample_box)?)
    }

    /// `(X_D, X_L)` on the unprolonged lifted space.
    pub fn xd_xl(&self) -> (VectorField, VectorField) {
        let xd = VectorField::time_dependent(self.coords.clone(), self.lift_components())
            .expect("lift components reference declared coordinates and t");
        let top = self.coords.len() - self.n();
        let mut comps = vec![Expr::zero(); self.coords.len()];
        for (i, f) in self.rhs.iter().enumerate() {
            comps[top + i] = f.differentiate(TIME);
        }
        let xl = VectorField::time_dependent(self.coords.clone(), comps)
            .expect("derivatives reference no new symbols");
        (xd, xl)
    }

    /// `(X_D, X_L)` prolonged to the copies `first..=last`.
    pub fn xd_xl_range(&self, first: usize, last: usize) -> (VectorField, VectorField) {
        let (xd, xl) = self.xd_xl();
        (xd.prolong_range(first, last), xl.prolong_range(first, last))
    }

    /// `(X_D^{(m)}, X_L^{(m)})` on the copies `1..=m`.
    pub fn build_xd_xl(&self, m: usize) -> (VectorField, VectorField) {
        assert!(m >= 1, "need at least one copy");
        self.xd_xl_range(1, m)
    }
}

/// Lie–Scheffers evidence for the first-order lift of `system`.
pub fn is_sode_lie_system(
    system: &OdeSystem,
    decomposition: Option<Vec<(Expr, VectorField)>>,
    time_samples: &[f64],
    opts: &AlgebraOptions,
) -> Result<LieSchefferResult, LieError> {
    let lift = match decomposition {
        Some(terms) => system.to_first_order().with_decomposition(terms, &opts.sample_box)?,
        None => system.to_first_order(),
    };
    lie_scheffers_check(&lift, time_samples, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::is_zero_probabilistic;
    use crate::expr::ZeroTestOptions;
    use crate::liealg::Evidence;
    use crate::vfield::{apply, copy_name, diagonal_prolongation};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero(e: &Expr) -> bool {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        is_zero_probabilistic(e, &SampleBox::default(), &ZeroTestOptions::default(), &mut rng).is_zero()
    }

    fn ks2() -> OdeSystem {
        OdeSystem::builder(2)
            .positions(&["x"])
            .rhs(&["3/2*v^2/x - 2*b0*x^3 + 2*a0*x"])
            .parameter("b0", -1.0)
            .coefficient("a0", "sin(t)")
            .constraint("x > 0")
            .build()
            .unwrap()
    }

    fn mp() -> OdeSystem {
        OdeSystem::builder(2)
            .positions(&["x"])
            .rhs(&["-w^2*x + c/x^3"])
            .parameter("c", 1.0)
            .coefficient("w", "1 + 3/10*sin(t)")
            .constraint("x > 0")
            .build()
            .unwrap()
    }

    fn ks3() -> OdeSystem {
        OdeSystem::builder(3)
            .positions(&["x"])
            .rhs(&["3/2*y2^2/y1 - 2*b0*y1^3 + 2*a0*y1"])
            .parameter("b0", -1.0)
            .coefficient("a0", "cos(t)")
            .constraint("y1 != 0")
            .build()
            .unwrap()
    }

    #[test]
    fn kummer_schwarz_lift() {
        let lift = ks2().to_first_order();
        let f = lift.field();
        assert_eq!(f.coordinate_names(), ["x", "v"]);
        assert_eq!(f.components()[0], Expr::var("v"));
        let got = f.components()[1].eval(&[("x", 1.2), ("v", 0.4), ("t", 0.7)]).unwrap();
        let want = 1.5 * 0.16 / 1.2 + 2.0 * 1.2f64.powi(3) + 2.0 * 0.7f64.sin() * 1.2;
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn third_order_lift_chains_levels() {
        let f = ks3().to_first_order();
        assert_eq!(f.field().coordinate_names(), ["x", "y1", "y2"]);
        assert_eq!(f.field().components()[0], Expr::var("y1"));
        assert_eq!(f.field().components()[1], Expr::var("y2"));
        assert_eq!(f.coords().role("y2"), Some(Role::HigherDerivative));
    }

    #[test]
    fn free_particle_lift() {
        let s = OdeSystem::builder(2).positions(&["x"]).rhs(&["0"]).build().unwrap();
        let f = s.to_first_order();
        assert_eq!(f.field().components(), [Expr::var("v"), Expr::zero()]);
        assert!(s.is_autonomous());
    }

    #[test]
    fn t_squared_fields() {
        let s = OdeSystem::builder(2).positions(&["x"]).rhs(&["t^2"]).build().unwrap();
        let (xd, xl) = s.build_xd_xl(1);
        assert_eq!(xd.coordinate_names(), ["x_(1)", "v_(1)"]);
        assert_eq!(xd.components()[0], Expr::var("v_(1)"));
        assert_eq!(xd.components()[1].to_string(), "t^2");
        assert!(xl.components()[0].is_zero());
        assert!(zero(&xl.components()[1].sub(&Expr::int(2).mul(&Expr::var("t")))));
    }

    #[test]
    fn autonomous_xl_vanishes() {
        let s = OdeSystem::builder(2).positions(&["x"]).rhs(&["-x"]).build().unwrap();
        let (_, xl) = s.build_xd_xl(3);
        assert!(xl.components().iter().all(Expr::is_zero));
    }

    #[test]
    fn milne_pinney_xl() {
        let (_, xl) = mp().build_xd_xl(2);
        let w = "(1 + 3/10*sin(t))";
        let dw = "(3/10*cos(t))";
        let table = SymbolTable::free(&["t", "x_(1)", "x_(2)"]);
        for (a, idx) in [(1, 1), (2, 3)] {
            let want = parse(&format!("-2*{w}*{dw}*x_({a})"), &table).unwrap();
            assert!(zero(&xl.components()[idx].sub(&want)));
        }
        assert!(xl.components()[0].is_zero() && xl.components()[2].is_zero());
    }

    #[test]
    fn drift_moves_positions_by_velocities() {
        for s in [ks2(), mp(), ks3()] {
            let (xd, xl) = s.build_xd_xl(3);
            for a in 1..=3 {
                for (x, v) in s.levels()[0].iter().zip(&s.levels()[1]) {
                    let got = apply(&xd, &Expr::var(&copy_name(x, a)));
                    assert_eq!(got, Expr::var(&copy_name(v, a)));
                    assert!(xl.component(&copy_name(x, a)).unwrap().is_zero());
                }
            }
        }
    }

    #[test]
    fn copies_agree_with_diagonal_prolongation() {
        let s = mp();
        let (xd, xl) = s.xd_xl();
        let (xd3, xl3) = s.build_xd_xl(3);
        assert_eq!(diagonal_prolongation(&xd, 3), xd3);
        assert_eq!(diagonal_prolongation(&xl, 3), xl3);
    }

    #[test]
    fn constraints_parse() {
        let table = SymbolTable::free(&["x", "v_(1)", "v_(2)"]);
        let c = Constraint::parse("v_(1) != v_(2)", &table).unwrap();
        assert_eq!(c.relation, Relation::Nonzero);
        assert!(!c.holds(c.expr.eval(&[("v_(1)", 1.0), ("v_(2)", 1.05)]).unwrap(), 0.1));
        let c = Constraint::parse("x < 2", &table).unwrap();
        assert!(c.holds(c.expr.eval(&[("x", 1.0)]).unwrap(), 0.0));
        let e = Constraint::parse("x > q", &table).unwrap_err();
        assert_eq!(e.offset(), 4);
        assert!(Constraint::parse("x", &table).is_err());
    }

    #[test]
    fn build_errors() {
        let missing = OdeSystem::builder(2).positions(&["x"]).rhs(&["w*x"]).build();
        assert!(matches!(missing, Err(SodeError::Parse { .. })));
        let count = OdeSystem::builder(2).positions(&["x", "y"]).rhs(&["x"]).build();
        assert!(matches!(count, Err(SodeError::Invalid(_))));
        let coeff = OdeSystem::builder(2)
            .positions(&["x"])
            .rhs(&["w*x"])
            .coefficient("w", "x")
            .build();
        assert!(coeff.is_err());
    }

    #[test]
    fn lie_system_verdicts() {
        let opts = AlgebraOptions::default();
        let times = [0.0, 0.4, 0.9, 1.3];
        let ho = OdeSystem::builder(2)
            .positions(&["x"])
            .rhs(&["-(1 + t^2)*x"])
            .build()
            .unwrap();
        let r = is_sode_lie_system(&ho, None, &times, &opts).unwrap();
        assert_eq!(r.is_lie_system_evidence, Evidence::Yes);
        assert_eq!(r.closure.unwrap().dimension(), Some(3));

        let r = is_sode_lie_system(&ks3(), None, &times, &opts).unwrap();
        assert_eq!(r.is_lie_system_evidence, Evidence::Yes);
        assert_eq!(r.closure.unwrap().dimension(), Some(3));

        let row2 = OdeSystem::builder(2).positions(&["x"]).rhs(&["t*v^2"]).build().unwrap();
        let r = is_sode_lie_system(&row2, None, &times, &opts).unwrap();
        assert_eq!(r.is_lie_system_evidence, Evidence::NoEvidence);
    }
}
