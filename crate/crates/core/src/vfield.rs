//! Vector fields on coordinate space and their exact Lie brackets.
//!
//! Components are [`Expr`]s over the coordinate symbols of the field's
//! [`SymbolTable`]. Time-dependent fields may additionally reference the
//! global time symbol `t`, which is never replicated by diagonal
//! prolongation.

use std::collections::HashMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::expr::{
    is_zero_probabilistic, Expr, SampleBox, SymbolTable, ZeroTestOptions, TIME,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldError {
    #[error("field has {components} components for {coordinates} coordinates")]
    ComponentCount {
        components: usize,
        coordinates: usize,
    },
    #[error("component {index} references undeclared symbol `{name}`")]
    Undeclared { index: usize, name: String },
    #[error("component {index} depends on time in a time-independent field")]
    TimeDependent { index: usize },
    #[error("coordinate spaces differ: [{left}] vs [{right}]")]
    Mismatch { left: String, right: String },
    #[error("decomposition does not reproduce the field: {0}")]
    Decomposition(String),
    #[error("coefficient `{0}` of a decomposition may only depend on time")]
    Coefficient(String),
}

/// Canonical name of coordinate `base` in copy `a` of a replicated space.
pub fn copy_name(base: &str, copy: usize) -> String {
    format!("{base}_({copy})")
}

/// Split `x_(3)` into `("x", 3)`.
pub fn split_copy_name(name: &str) -> Option<(&str, usize)> {
    let stem = name.strip_suffix(')')?;
    let open = stem.rfind("_(")?;
    let index = stem[open + 2..].parse().ok()?;
    Some((&name[..open], index))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    coords: SymbolTable,
    components: Vec<Expr>,
    time_dependent: bool,
}

impl VectorField {
    /// Time-independent field; components may only reference coordinates.
    pub fn new(coords: SymbolTable, components: Vec<Expr>) -> Result<Self, FieldError> {
        Self::build(coords, components, false)
    }

    /// Field whose components may also reference `t`.
    pub fn time_dependent(coords: SymbolTable, components: Vec<Expr>) -> Result<Self, FieldError> {
        Self::build(coords, components, true)
    }

    fn build(
        coords: SymbolTable,
        components: Vec<Expr>,
        allow_time: bool,
    ) -> Result<Self, FieldError> {
        if coords.len() != components.len() {
            return Err(FieldError::ComponentCount {
                components: components.len(),
                coordinates: coords.len(),
            });
        }
        let mut time_dependent = false;
        for (index, c) in components.iter().enumerate() {
            for name in c.free_symbols() {
                if name == TIME && !coords.contains(TIME) {
                    if !allow_time {
                        return Err(FieldError::TimeDependent { index });
                    }
                    time_dependent = true;
                } else if !coords.contains(&name) {
                    return Err(FieldError::Undeclared { index, name });
                }
            }
        }
        Ok(VectorField {
            coords,
            components,
            time_dependent,
        })
    }

    pub fn zero(coords: SymbolTable) -> Self {
        let components = vec![Expr::zero(); coords.len()];
        VectorField {
            coords,
            components,
            time_dependent: false,
        }
    }

    pub fn coords(&self) -> &SymbolTable {
        &self.coords
    }

    pub fn coordinate_names(&self) -> Vec<String> {
        self.coords.names().map(str::to_string).collect()
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    pub fn component(&self, coordinate: &str) -> Option<&Expr> {
        self.coords.position(coordinate).map(|i| &self.components[i])
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    /// Whether any component references `t` (structural check).
    pub fn is_time_dependent(&self) -> bool {
        self.time_dependent
    }

    fn same_space(&self, other: &VectorField) -> Result<(), FieldError> {
        if self.coordinate_names() == other.coordinate_names() {
            Ok(())
        } else {
            Err(FieldError::Mismatch {
                left: self.coordinate_names().join(", "),
                right: other.coordinate_names().join(", "),
            })
        }
    }

    fn with_components(&self, components: Vec<Expr>, time_dependent: bool) -> VectorField {
        VectorField {
            coords: self.coords.clone(),
            components,
            time_dependent,
        }
    }

    /// Derivative of `f` along the field: `sum_i X^i df/dx^i`.
    pub fn apply(&self, f: &Expr) -> Expr {
        let terms: Vec<Expr> = self
            .coords
            .names()
            .zip(&self.components)
            .filter(|(_, c)| !c.is_zero())
            .map(|(name, c)| c.mul(&f.differentiate(name)))
            .filter(|t| !t.is_zero())
            .collect();
        Expr::sum(&terms)
    }

    pub fn add(&self, other: &VectorField) -> Result<VectorField, FieldError> {
        self.same_space(other)?;
        let components = self
            .components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a.add(b))
            .collect();
        Ok(self.with_components(components, self.time_dependent || other.time_dependent))
    }

    /// Multiply every component by a coefficient expression.
    pub fn scale(&self, coefficient: &Expr) -> VectorField {
        let components = self.components.iter().map(|c| coefficient.mul(c)).collect();
        let td = self.time_dependent || coefficient.references(TIME);
        self.with_components(components, td)
    }

    /// `sum_k c_k X_k` over fields on a common space.
    pub fn linear_combination(
        terms: &[(Expr, &VectorField)],
    ) -> Result<VectorField, FieldError> {
        let Some((_, first)) = terms.first() else {
            panic!("linear combination of no fields");
        };
        let mut acc = VectorField::zero(first.coords.clone());
        for (c, field) in terms {
            acc = acc.add(&field.scale(c))?;
        }
        Ok(acc)
    }

    /// Substitute `t = t0`.
    pub fn at_time(&self, t0: f64) -> VectorField {
        if !self.time_dependent {
            return self.clone();
        }
        let value = Expr::float(t0);
        let components = self
            .components
            .iter()
            .map(|c| c.substitute_one(TIME, &value))
            .collect();
        self.with_components(components, false)
    }

    /// Diagonal prolongation to the copies `first..=last`.
    pub fn prolong_range(&self, first: usize, last: usize) -> VectorField {
        let mut coords = SymbolTable::new();
        let mut components = Vec::new();
        for a in first..=last {
            let rename = |name: &str| -> Option<String> {
                (name != TIME && self.coords.contains(name)).then(|| copy_name(name, a))
            };
            for ((name, role), c) in self.coords.iter().zip(&self.components) {
                coords
                    .declare(&copy_name(name, a), role)
                    .expect("copy names are unique");
                components.push(c.rename(&rename));
            }
        }
        VectorField {
            coords,
            components,
            time_dependent: self.time_dependent,
        }
    }
}

/// `[X, Y]^i = X(Y^i) - Y(X^i)`, by exact differentiation and unsimplified.
pub fn lie_bracket(x: &VectorField, y: &VectorField) -> Result<VectorField, FieldError> {
    x.same_space(y)?;
    let components = x
        .components
        .iter()
        .zip(&y.components)
        .map(|(xi, yi)| x.apply(yi).sub(&y.apply(xi)))
        .collect();
    Ok(x.with_components(components, x.time_dependent || y.time_dependent))
}

/// Derivative of `f` along `x`.
pub fn apply(x: &VectorField, f: &Expr) -> Expr {
    x.apply(f)
}

/// Prolongation to `copies` copies numbered `1..=copies`.
pub fn diagonal_prolongation(x: &VectorField, copies: usize) -> VectorField {
    assert!(copies >= 1, "prolongation needs at least one copy");
    x.prolong_range(1, copies)
}

/// Time-dependent field, optionally with a known decomposition
/// `X_t = sum_k b_k(t) Y_k` over time-independent fields.
#[derive(Debug, Clone)]
pub struct TimeDepVectorField {
    field: VectorField,
    decomposition: Option<Vec<(Expr, VectorField)>>,
}

impl TimeDepVectorField {
    pub fn new(coords: SymbolTable, components: Vec<Expr>) -> Result<Self, FieldError> {
        Ok(TimeDepVectorField {
            field: VectorField::time_dependent(coords, components)?,
            decomposition: None,
        })
    }

    pub fn from_field(field: VectorField) -> Self {
        TimeDepVectorField {
            field,
            decomposition: None,
        }
    }

    /// Attach a decomposition after checking it reproduces the components.
    pub fn with_decomposition(
        mut self,
        terms: Vec<(Expr, VectorField)>,
        sample_box: &SampleBox,
    ) -> Result<Self, FieldError> {
        for (c, y) in &terms {
            self.field.same_space(y)?;
            if c.free_symbols().iter().any(|s| s != TIME) {
                return Err(FieldError::Coefficient(c.to_string()));
            }
            if y.is_time_dependent() {
                return Err(FieldError::Decomposition(
                    "decomposition fields must be time-independent".into(),
                ));
            }
        }
        let refs: Vec<(Expr, &VectorField)> = terms.iter().map(|(c, y)| (c.clone(), y)).collect();
        let sum = VectorField::linear_combination(&refs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for (i, (a, b)) in self.field.components().iter().zip(sum.components()).enumerate() {
            let verdict = is_zero_probabilistic(
                &a.sub(b),
                sample_box,
                &ZeroTestOptions::default(),
                &mut rng,
            );
            if !verdict.is_zero() {
                return Err(FieldError::Decomposition(format!(
                    "component {i}: {verdict:?}"
                )));
            }
        }
        self.decomposition = Some(terms);
        Ok(self)
    }

    pub fn field(&self) -> &VectorField {
        &self.field
    }

    pub fn decomposition(&self) -> Option<&[(Expr, VectorField)]> {
        self.decomposition.as_deref()
    }

    pub fn coords(&self) -> &SymbolTable {
        self.field.coords()
    }

    pub fn prolong(&self, copies: usize) -> TimeDepVectorField {
        self.prolong_range(1, copies)
    }

    pub fn prolong_range(&self, first: usize, last: usize) -> TimeDepVectorField {
        TimeDepVectorField {
            field: self.field.prolong_range(first, last),
            decomposition: self.decomposition.as_ref().map(|terms| {
                terms
                    .iter()
                    .map(|(c, y)| (c.clone(), y.prolong_range(first, last)))
                    .collect()
            }),
        }
    }
}

/// The frozen field `X_{t0}`.
pub fn freeze_time(x: &TimeDepVectorField, t0: f64) -> VectorField {
    x.field.at_time(t0)
}

impl fmt::Display for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (name, c) in self.coords.names().zip(&self.components) {
            if c.is_zero() {
                continue;
            }
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "({c})*d/d{name}")?;
        }
        if first {
            write!(f, "0")?;
        }
        Ok(())
    }
}

/// Map from coordinate name to component, handy for lookups in tests and
/// reports.
pub fn component_map(x: &VectorField) -> HashMap<String, Expr> {
    x.coords
        .names()
        .map(str::to_string)
        .zip(x.components.iter().cloned())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, Role};

    pub(crate) fn tr() -> SymbolTable {
        SymbolTable::new()
            .with("x", Role::Coordinate)
            .unwrap()
            .with("v", Role::Velocity)
            .unwrap()
    }

    fn field(comps: &[&str]) -> VectorField {
        let t = tr().with("t", Role::Time).unwrap();
        let comps = comps.iter().map(|c| parse(c, &t).unwrap()).collect();
        VectorField::time_dependent(tr(), comps).unwrap()
    }

    fn assert_same(a: &VectorField, b: &VectorField) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (p, q) in a.components().iter().zip(b.components()) {
            let v = is_zero_probabilistic(
                &p.sub(q),
                &SampleBox::default(),
                &ZeroTestOptions::default(),
                &mut rng,
            );
            assert!(v.is_zero(), "{a} vs {b}: {v:?}");
        }
    }

    fn ks2() -> [VectorField; 3] {
        [
            field(&["0", "2*x"]),
            field(&["x", "2*v"]),
            field(&["v", "3/2*v^2/x + 2*x^3"]),
        ]
    }

    #[test]
    fn kummer_schwarz_brackets() {
        let [x1, x2, x3] = ks2();
        assert_same(&lie_bracket(&x1, &x2).unwrap(), &x1);
        assert_same(&lie_bracket(&x1, &x3).unwrap(), &x2.scale(&Expr::int(2)));
        assert_same(&lie_bracket(&x2, &x3).unwrap(), &x3);
    }

    #[test]
    fn oscillator_brackets() {
        let x1 = field(&["v", "0"]);
        let x2 = field(&["1/2*x", "-1/2*v"]);
        let x3 = field(&["0", "-x"]);
        assert_same(&lie_bracket(&x1, &x3).unwrap(), &x2.scale(&Expr::int(2)));
        assert_same(&lie_bracket(&x1, &x2).unwrap(), &x1);
        assert_same(&lie_bracket(&x2, &x3).unwrap(), &x3);
    }

    #[test]
    fn self_bracket_vanishes() {
        let [_, _, x3] = ks2();
        assert_same(&lie_bracket(&x3, &x3).unwrap(), &VectorField::zero(tr()));
    }

    #[test]
    fn apply_examples() {
        let t = tr();
        let x = field(&["v", "0"]);
        let f = parse("x^2", &t).unwrap();
        let got = x.apply(&f).eval(&[("x", 1.5), ("v", 0.5)]).unwrap();
        assert_eq!(got, 1.5);
        let dilation = field(&["0", "v"]);
        let g = dilation.apply(&parse("v^2", &t).unwrap());
        assert_eq!(g.eval(&[("v", 3.0)]).unwrap(), 18.0);
    }

    #[test]
    fn prolongation_names_and_components() {
        let x = field(&["v", "0"]);
        let p = diagonal_prolongation(&x, 2);
        assert_eq!(p.coordinate_names(), ["x_(1)", "v_(1)", "x_(2)", "v_(2)"]);
        assert_eq!(p.component("x_(2)").unwrap(), &Expr::var("v_(2)"));
        assert!(p.component("v_(1)").unwrap().is_zero());
        let one = diagonal_prolongation(&x, 1);
        assert_eq!(one.coordinate_names(), ["x_(1)", "v_(1)"]);
        assert_eq!(one.component("x_(1)").unwrap(), &Expr::var("v_(1)"));
    }

    #[test]
    fn prolongation_keeps_time_unreplicated() {
        let x = field(&["v", "sin(t)*x"]);
        let p = diagonal_prolongation(&x, 2);
        assert!(p.is_time_dependent());
        assert!(p.component("v_(2)").unwrap().references("t"));
        assert!(p.component("v_(2)").unwrap().references("x_(2)"));
    }

    #[test]
    fn prolongation_commutes_with_bracket() {
        let [x1, _, x3] = ks2();
        for m in 1..=3 {
            let lhs = diagonal_prolongation(&lie_bracket(&x1, &x3).unwrap(), m);
            let rhs = lie_bracket(
                &diagonal_prolongation(&x1, m),
                &diagonal_prolongation(&x3, m),
            )
            .unwrap();
            assert_same(&lhs, &rhs);
        }
    }

    #[test]
    fn freezing_time() {
        let [x1, _, x3] = ks2();
        let t = tr().with("t", Role::Time).unwrap();
        let xt = TimeDepVectorField::from_field(
            VectorField::linear_combination(&[
                (Expr::one(), &x3),
                (parse("sin(t)", &t).unwrap(), &x1),
            ])
            .unwrap(),
        );
        assert!(xt.field().is_time_dependent());
        let frozen = freeze_time(&xt, 0.0);
        assert!(!frozen.is_time_dependent());
        assert_same(&frozen, &x3);
        assert_eq!(freeze_time(&TimeDepVectorField::from_field(x3.clone()), 1.0), x3);
    }

    #[test]
    fn decomposition_is_checked() {
        let [x1, _, x3] = ks2();
        let t = tr().with("t", Role::Time).unwrap();
        let a0 = parse("sin(t)", &t).unwrap();
        let xt = TimeDepVectorField::new(
            tr(),
            vec![
                parse("v", &t).unwrap(),
                parse("3/2*v^2/x + 2*x^3 + 2*sin(t)*x", &t).unwrap(),
            ],
        )
        .unwrap();
        let good = xt
            .clone()
            .with_decomposition(vec![(Expr::one(), x3.clone()), (a0.clone(), x1.clone())], &SampleBox::default());
        assert!(good.is_ok());
        let bad = xt.with_decomposition(vec![(Expr::one(), x3), (a0.scale(2.0), x1)], &SampleBox::default());
        assert!(matches!(bad, Err(FieldError::Decomposition(_))));
    }

    #[test]
    fn construction_errors() {
        let t = tr().with("t", Role::Time).unwrap();
        let comps = vec![parse("t*v", &t).unwrap(), Expr::zero()];
        assert!(matches!(
            VectorField::new(tr(), comps),
            Err(FieldError::TimeDependent { index: 0 })
        ));
        assert!(matches!(
            VectorField::new(tr(), vec![Expr::zero()]),
            Err(FieldError::ComponentCount { .. })
        ));
        assert!(matches!(
            VectorField::new(tr(), vec![Expr::var("y"), Expr::zero()]),
            Err(FieldError::Undeclared { .. })
        ));
        let other = VectorField::zero(SymbolTable::free(&["y", "w"]));
        assert!(matches!(
            lie_bracket(&other, &VectorField::zero(tr())),
            Err(FieldError::Mismatch { .. })
        ));
    }

    #[test]
    fn copy_names_round_trip() {
        assert_eq!(copy_name("y1", 12), "y1_(12)");
        assert_eq!(split_copy_name("y1_(12)"), Some(("y1", 12)));
        assert_eq!(split_copy_name("x"), None);
    }
}
