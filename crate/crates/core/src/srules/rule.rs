use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{parse, Expr, ParseError, Role, SymbolError, SymbolTable, TIME};
use crate::sode::{Constraint, OdeSystem};
use crate::vfield::{apply, copy_name, split_copy_name};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleKind {
    /// A rule for the first-order lift: one component per lifted coordinate.
    FirstOrder,
    Base,
    QuasiBase,
    General,
    Partial,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuleError {
    #[error("rule `{rule}`: in `{source_text}`: {error}")]
    Parse {
        rule: String,
        source_text: String,
        error: ParseError,
    },
    #[error("rule `{0}`: {1}")]
    Symbol(String, SymbolError),
    #[error("rule `{rule}`: {message}")]
    Invalid { rule: String, message: String },
}

/// A named expression used inside a rule or an integral.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Definition {
    pub name: String,
    pub expr: String,
}

/// Textual description of a superposition rule, as stored in entry files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    pub name: String,
    pub kind: Option<RuleKind>,
    pub m: usize,
    pub constants: Vec<String>,
    #[serde(default)]
    pub branches: Vec<String>,
    /// First integrals the rule depends on, over the copies `1..=m`.
    #[serde(default)]
    pub auxiliary: Vec<Definition>,
    /// Helper expressions, expanded in order.
    #[serde(default)]
    pub definitions: Vec<Definition>,
    pub components: Vec<String>,
    /// Inequalities over the copies `0..=m`; copy 0 is the target solution.
    #[serde(default)]
    pub genericity: Vec<String>,
    #[serde(default)]
    pub parameter_constraints: Vec<String>,
    #[serde(default)]
    pub k_box: BTreeMap<String, (f64, f64)>,
    #[serde(default)]
    pub interchangeable: bool,
    /// Branch name to a quantity over the copies `1..=m` whose sign the
    /// branch follows along solutions. Used when a radical is a perfect
    /// square: its smooth continuation changes sign where the quantity does.
    #[serde(default)]
    pub orientation: BTreeMap<String, String>,
}

pub const DEFAULT_K_BOX: (f64, f64) = (-5.0, 5.0);

/// A superposition rule bound to a system: parameters are substituted and
/// every auxiliary integral and definition is expanded in `components`.
#[derive(Debug, Clone)]
pub struct SuperpositionRule {
    pub name: String,
    pub kind: RuleKind,
    spec: RuleSpec,
    n: usize,
    levels: Vec<Vec<String>>,
    /// Components with auxiliary integrals kept as symbols.
    reduced: Vec<Expr>,
    components: Vec<Expr>,
    auxiliary: Vec<(String, Expr)>,
    genericity: Vec<Constraint>,
    orientation: Vec<Option<Expr>>,
    k_box: Vec<(f64, f64)>,
}

/// Coordinates of copies `first..=last` of the lifted space, copy-major.
pub fn copy_coordinates(levels: &[Vec<String>], first: usize, last: usize) -> Vec<String> {
    let mut out = Vec::new();
    for a in first..=last {
        for level in levels {
            for name in level {
                out.push(copy_name(name, a));
            }
        }
    }
    out
}

impl SuperpositionRule {
    pub fn new(spec: RuleSpec, system: &OdeSystem) -> Result<Self, RuleError> {
        let rule = spec.name.clone();
        let invalid = |message: String| RuleError::Invalid {
            rule: rule.clone(),
            message,
        };
        let symbol = |e: SymbolError| RuleError::Symbol(rule.clone(), e);
        let parse_in = |src: &str, table: &SymbolTable| {
            parse(src, table).map_err(|error| RuleError::Parse {
                rule: rule.clone(),
                source_text: src.to_string(),
                error,
            })
        };
        let kind = spec.kind.ok_or_else(|| invalid("missing kind".into()))?;
        let n = system.n();
        let order = system.order();
        let levels = system.levels().to_vec();
        let m = spec.m;
        if m == 0 {
            return Err(invalid("m must be at least 1".into()));
        }

        let mut table = SymbolTable::new().with(TIME, Role::Time).map_err(symbol)?;
        let mut values: HashMap<String, Expr> = HashMap::new();
        for (name, v) in system.parameters() {
            table.declare(name, Role::Parameter).map_err(symbol)?;
            values.insert(name.clone(), Expr::float(*v));
        }
        for a in 0..=m {
            for level in &levels {
                let role = system.coords().role(&level[0]).unwrap_or(Role::Coordinate);
                for name in level {
                    table.declare(&copy_name(name, a), role).map_err(symbol)?;
                }
            }
        }

        let parameter_constraints = spec
            .parameter_constraints
            .iter()
            .map(|src| {
                Constraint::parse(src, &table)
                    .map(|c| c.substitute(&values))
                    .map_err(|error| RuleError::Parse {
                        rule: rule.clone(),
                        source_text: src.clone(),
                        error,
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        for c in &parameter_constraints {
            let v = c
                .expr
                .eval(&HashMap::<String, f64>::new())
                .map_err(|e| invalid(format!("parameter constraint `{c}`: {e}")))?;
            if !c.holds(v, 0.0) {
                return Err(invalid(format!("parameter constraint `{c}` violated")));
            }
        }

        let mut auxiliary = Vec::new();
        for d in &spec.auxiliary {
            let e = parse_in(&d.expr, &table)?.substitute(&values);
            auxiliary.push((d.name.clone(), e));
        }
        for name in &spec.constants {
            table.declare(name, Role::Constant).map_err(symbol)?;
        }
        for name in &spec.branches {
            table.declare(name, Role::Branch).map_err(symbol)?;
        }
        for (name, _) in &auxiliary {
            table.declare(name, Role::Auxiliary).map_err(symbol)?;
        }
        let aux_map: HashMap<String, Expr> = auxiliary.iter().cloned().collect();
        let mut defs: HashMap<String, Expr> = values.clone();
        for d in &spec.definitions {
            let e = parse_in(&d.expr, &table)?.substitute(&defs);
            table.declare(&d.name, Role::Auxiliary).map_err(symbol)?;
            defs.insert(d.name.clone(), e);
        }
        let reduced = spec
            .components
            .iter()
            .map(|src| Ok(parse_in(src, &table)?.substitute(&defs)))
            .collect::<Result<Vec<_>, RuleError>>()?;
        let components: Vec<Expr> = reduced.iter().map(|c| c.substitute(&aux_map)).collect();

        let mut expand = defs.clone();
        expand.extend(aux_map.clone());
        let genericity = spec
            .genericity
            .iter()
            .map(|src| {
                Constraint::parse(src, &table)
                    .map(|c| c.substitute(&expand))
                    .map_err(|error| RuleError::Parse {
                        rule: rule.clone(),
                        source_text: src.clone(),
                        error,
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;

        let mut orientation = vec![None; spec.branches.len()];
        for (name, src) in &spec.orientation {
            let i = spec
                .branches
                .iter()
                .position(|b| b == name)
                .ok_or_else(|| invalid(format!("orientation for unknown branch `{name}`")))?;
            let e = parse_in(src, &table)?.substitute(&expand);
            if let Some(s) = e.free_symbols().into_iter().find(|s| {
                split_copy_name(s).map_or(table.role(s) != Some(Role::Time), |(_, a)| a == 0 || a > m)
            }) {
                return Err(invalid(format!("orientation of `{name}` references `{s}`")));
            }
            orientation[i] = Some(e);
        }

        let p = spec.constants.len();
        let expected_components = if kind == RuleKind::FirstOrder { n * order } else { n };
        if components.len() != expected_components {
            return Err(invalid(format!(
                "{} components, expected {expected_components}",
                components.len()
            )));
        }
        match kind {
            RuleKind::Partial if p >= n * order => {
                return Err(invalid(format!("a partial rule needs fewer than {} constants", n * order)))
            }
            RuleKind::Partial => {}
            _ if p != n * order => {
                return Err(invalid(format!("{p} constants, expected {}", n * order)));
            }
            _ => {}
        }
        let is_derivative = |name: &str| {
            split_copy_name(name).is_some_and(|(base, _)| levels[1..].iter().flatten().any(|l| l == base))
        };
        for c in &components {
            for s in c.free_symbols() {
                if let Some((_, a)) = split_copy_name(&s) {
                    if a == 0 || a > m {
                        return Err(invalid(format!("component references `{s}` outside copies 1..={m}")));
                    }
                }
            }
        }
        match kind {
            RuleKind::Base => {
                if let Some(s) = components.iter().flat_map(|c| c.free_symbols()).find(|s| is_derivative(s)) {
                    return Err(invalid(format!("base rule references derivative `{s}`")));
                }
            }
            RuleKind::QuasiBase => {
                if let Some(s) = reduced.iter().flat_map(|c| c.free_symbols()).find(|s| is_derivative(s)) {
                    return Err(invalid(format!(
                        "quasi-base rule references `{s}` outside its auxiliary integrals"
                    )));
                }
            }
            _ => {}
        }
        let k_box = spec
            .constants
            .iter()
            .map(|k| spec.k_box.get(k).copied().unwrap_or(DEFAULT_K_BOX))
            .collect();
        Ok(SuperpositionRule {
            name: spec.name.clone(),
            kind,
            n,
            levels,
            reduced,
            components,
            auxiliary,
            genericity,
            orientation,
            k_box,
            spec,
        })
    }

    pub fn spec(&self) -> &RuleSpec {
        &self.spec
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.spec.m
    }

    pub fn order(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &[Vec<String>] {
        &self.levels
    }

    pub fn constants(&self) -> &[String] {
        &self.spec.constants
    }

    pub fn branches(&self) -> &[String] {
        &self.spec.branches
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    /// Components with auxiliary integrals left as symbols.
    pub fn reduced_components(&self) -> &[Expr] {
        &self.reduced
    }

    pub fn auxiliary_integrals(&self) -> &[(String, Expr)] {
        &self.auxiliary
    }

    pub fn genericity(&self) -> &[Constraint] {
        &self.genericity
    }

    /// Per-branch orientation quantity, aligned with `branches()`.
    pub fn orientation(&self) -> &[Option<Expr>] {
        &self.orientation
    }

    pub fn k_box(&self) -> &[(f64, f64)] {
        &self.k_box
    }

    pub fn is_interchangeable(&self) -> bool {
        self.spec.interchangeable
    }

    pub fn is_time_free(&self) -> bool {
        self.components.iter().all(|c| !c.references(TIME))
    }

    /// Coordinates of the particular solutions, copies `1..=m`.
    pub fn particular_coordinates(&self) -> Vec<String> {
        copy_coordinates(&self.levels, 1, self.m())
    }

    /// Number of jet levels matched when fitting constants.
    pub fn fitted_levels(&self) -> usize {
        match self.kind {
            RuleKind::FirstOrder => 1,
            _ => self.constants().len() / self.n,
        }
    }

    /// Jet of the components along solutions: `J_0 = components` and
    /// `J_{j+1} = dJ_j/dt + X_D J_j`, for `levels` levels, level-major.
    pub fn jet(&self, system: &OdeSystem, levels: usize) -> Vec<Expr> {
        let (xd, _) = system.build_xd_xl(self.m());
        let mut out = self.components.clone();
        let mut current = self.components.clone();
        for _ in 1..levels {
            current = current
                .iter()
                .map(|c| c.differentiate(TIME).add(&apply(&xd, c)))
                .collect();
            out.extend(current.iter().cloned());
        }
        out
    }

    /// The rule with copies `a` and `b` exchanged.
    pub fn swapped(&self, a: usize, b: usize) -> SuperpositionRule {
        let swap_name = |name: &str| -> Option<String> {
            let (base, c) = split_copy_name(name)?;
            if c == a {
                Some(copy_name(base, b))
            } else if c == b {
                Some(copy_name(base, a))
            } else {
                None
            }
        };
        let mut out = self.clone();
        out.name = format!("{} (copies {a} and {b} swapped)", self.name);
        out.components = self.components.iter().map(|c| c.rename(&swap_name)).collect();
        out.reduced = self.reduced.iter().map(|c| c.rename(&swap_name)).collect();
        out.auxiliary = self
            .auxiliary
            .iter()
            .map(|(n, e)| (n.clone(), e.rename(&swap_name)))
            .collect();
        out.genericity = self.genericity.iter().map(|g| g.rename(&swap_name)).collect();
        out.orientation = self
            .orientation
            .iter()
            .map(|o| o.as_ref().map(|e| e.rename(&swap_name)))
            .collect();
        out
    }

    /// A rule with components replaced; used to build deliberately altered rules.
    pub fn with_components(&self, components: Vec<Expr>) -> SuperpositionRule {
        let mut out = self.clone();
        out.reduced = components.clone();
        out.components = components;
        out
    }
}

/// Keep only the position block of a rule for the first-order lift.
pub fn project_hode_rule(rule: &SuperpositionRule) -> SuperpositionRule {
    let n = rule.n;
    let mut out = rule.clone();
    out.components.truncate(n);
    out.reduced.truncate(n);
    if rule.kind == RuleKind::FirstOrder {
        let levels = &rule.levels;
        let uses_derivatives = out.components.iter().flat_map(|c| c.free_symbols()).any(|s| {
            split_copy_name(&s).is_some_and(|(base, _)| levels[1..].iter().flatten().any(|l| l == base))
        });
        out.kind = if uses_derivatives {
            RuleKind::General
        } else {
            RuleKind::Base
        };
        out.name = format!("{} (position block)", rule.name);
    }
    out
}

/// The first-order rule `(u, Du, .., D^{s-1}u)` induced by a rule for the
/// positions.
pub fn lift_rule(rule: &SuperpositionRule, system: &OdeSystem) -> SuperpositionRule {
    let mut out = rule.clone();
    out.components = rule.jet(system, system.order());
    out.reduced = out.components.clone();
    out.kind = RuleKind::FirstOrder;
    out.name = format!("{} (lifted)", rule.name);
    out
}
