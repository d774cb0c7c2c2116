use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{parse, Expr, ParseError, Role, SampleBox, SymbolTable, TIME};
use crate::liealg::Evidence;
use crate::sode::{Constraint, OdeSystem, SodeError};
use crate::vfield::{copy_name, FieldError, TimeDepVectorField, VectorField};

use super::rule::{Definition, RuleError, RuleSpec, SuperpositionRule};

const BUILTIN: [(&str, &str); 9] = [
    ("free", include_str!("../../catalog/free.toml")),
    ("tvsq", include_str!("../../catalog/tvsq.toml")),
    ("tsqv", include_str!("../../catalog/tsqv.toml")),
    ("tsq", include_str!("../../catalog/tsq.toml")),
    ("ho", include_str!("../../catalog/ho.toml")),
    ("mp", include_str!("../../catalog/mp.toml")),
    ("dmp", include_str!("../../catalog/dmp.toml")),
    ("ks2", include_str!("../../catalog/ks2.toml")),
    ("ks3", include_str!("../../catalog/ks3.toml")),
];

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("entry file: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("entry `{entry}`: {source}")]
    System { entry: String, source: SodeError },
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error("entry `{entry}`: in `{source_text}`: {error}")]
    Parse {
        entry: String,
        source_text: String,
        error: ParseError,
    },
    #[error("entry `{entry}`: {source}")]
    Field { entry: String, source: FieldError },
    #[error("entry `{entry}`: {message}")]
    Invalid { entry: String, message: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// On-disk form of a catalog entry.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntryFile {
    pub name: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub provenance: String,
    pub order: usize,
    #[serde(default)]
    pub positions: Vec<String>,
    /// Names per derivative level, level 0 being the positions.
    #[serde(default)]
    pub levels: Option<Vec<Vec<String>>>,
    pub rhs: Vec<String>,
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
    #[serde(default)]
    pub coefficients: BTreeMap<String, String>,
    #[serde(default)]
    pub constraints: Vec<String>,
    #[serde(default)]
    pub sample_box: BTreeMap<String, (f64, f64)>,
    pub t_span: Option<(f64, f64)>,
    #[serde(default)]
    pub lie_times: Option<Vec<f64>>,
    #[serde(default)]
    pub expect_lie: Option<Evidence>,
    #[serde(default)]
    pub basis: Option<BasisFile>,
    #[serde(default)]
    pub extra_fields: Vec<NamedFieldFile>,
    #[serde(default)]
    pub rules: Vec<RuleSpec>,
    #[serde(default)]
    pub integrals: Vec<IntegralFile>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisFile {
    pub fields: Vec<Vec<String>>,
    pub dimension: Option<usize>,
    #[serde(default)]
    pub brackets: Vec<BracketFile>,
    #[serde(default)]
    pub decomposition: Vec<TermFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BracketFile {
    /// 1-based indices into the basis.
    pub pair: (usize, usize),
    pub result: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermFile {
    pub coefficient: String,
    /// 1-based index into the basis.
    pub field: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedFieldFile {
    pub name: String,
    pub components: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegralFile {
    pub name: String,
    pub copies: usize,
    pub expr: String,
    #[serde(default)]
    pub definitions: Vec<Definition>,
    /// Where the integral is defined, over the copies `1..=copies`.
    #[serde(default)]
    pub domain: Vec<String>,
}

/// A Vessiot–Guldberg basis with its expected brackets.
#[derive(Debug, Clone)]
pub struct Basis {
    pub fields: Vec<VectorField>,
    pub dimension: Option<usize>,
    /// `[X_i, X_j] = sum_k c_k X_k`, 0-based.
    pub brackets: Vec<((usize, usize), Vec<f64>)>,
    /// `X_t = sum_alpha b_alpha(t) X_alpha`.
    pub decomposition: Option<Vec<(Expr, usize)>>,
}

#[derive(Debug, Clone)]
pub struct FirstIntegral {
    pub name: String,
    pub copies: usize,
    pub expr: Expr,
    pub domain: Vec<Constraint>,
}

impl FirstIntegral {
    pub fn is_time_dependent(&self) -> bool {
        self.expr.references(TIME)
    }
}

#[derive(Debug, Clone)]
pub struct CatalogEntry {
    pub name: String,
    pub title: String,
    pub provenance: String,
    pub system: OdeSystem,
    pub basis: Option<Basis>,
    pub extra_fields: Vec<(String, VectorField)>,
    pub rules: Vec<SuperpositionRule>,
    pub integrals: Vec<FirstIntegral>,
    /// Intervals for initial data, keyed by unprolonged coordinate names.
    pub sample_box: SampleBox,
    pub t_span: (f64, f64),
    pub lie_times: Vec<f64>,
    pub expect_lie: Option<Evidence>,
    pub file: EntryFile,
}

pub const DEFAULT_LIE_TIMES: [f64; 4] = [0.0, 0.37, 0.81, 1.3];

impl CatalogEntry {
    pub fn from_toml(text: &str) -> Result<Self, CatalogError> {
        let file: EntryFile = toml::from_str(text)?;
        Self::from_file(file)
    }

    pub fn from_file(file: EntryFile) -> Result<Self, CatalogError> {
        let entry = file.name.clone();
        let invalid = |message: String| CatalogError::Invalid {
            entry: entry.clone(),
            message,
        };
        let mut builder = OdeSystem::builder(file.order).rhs(&file.rhs);
        builder = match &file.levels {
            Some(levels) => builder.levels(levels.clone()),
            None => builder.positions(&file.positions),
        };
        for (k, v) in &file.parameters {
            builder = builder.parameter(k, *v);
        }
        for (k, v) in &file.coefficients {
            builder = builder.coefficient(k, v);
        }
        for c in &file.constraints {
            builder = builder.constraint(c);
        }
        let system = builder.build().map_err(|source| CatalogError::System {
            entry: entry.clone(),
            source,
        })?;

        // Parameters and coefficient functions are substituted into basis
        // strings and decomposition coefficients alike.
        let mut scope = SymbolTable::new().with(TIME, Role::Time).expect("fresh table");
        let mut values: HashMap<String, Expr> = HashMap::new();
        for (k, v) in system.parameters() {
            scope.declare(k, Role::Parameter).map_err(|e| invalid(e.to_string()))?;
            values.insert(k.clone(), Expr::float(*v));
        }
        for (k, e) in system.coefficients() {
            scope.declare(k, Role::Auxiliary).map_err(|e| invalid(e.to_string()))?;
            values.insert(k.clone(), e.substitute(&values));
        }
        let field_table = scope.merged(system.coords()).map_err(|e| invalid(e.to_string()))?;
        let parse_in = |src: &str, table: &SymbolTable| {
            parse(src, table)
                .map(|e| e.substitute(&values))
                .map_err(|error| CatalogError::Parse {
                    entry: entry.clone(),
                    source_text: src.to_string(),
                    error,
                })
        };
        let build_field = |comps: &[String]| -> Result<VectorField, CatalogError> {
            let exprs = comps
                .iter()
                .map(|c| parse_in(c, &field_table))
                .collect::<Result<Vec<_>, _>>()?;
            VectorField::new(system.coords().clone(), exprs).map_err(|source| CatalogError::Field {
                entry: entry.clone(),
                source,
            })
        };

        let basis = match &file.basis {
            None => None,
            Some(b) => {
                let fields = b
                    .fields
                    .iter()
                    .map(|c| build_field(c))
                    .collect::<Result<Vec<_>, _>>()?;
                let r = fields.len();
                let mut brackets = Vec::new();
                for br in &b.brackets {
                    let (i, j) = br.pair;
                    if i == 0 || j == 0 || i > r || j > r || br.result.len() != r {
                        return Err(invalid(format!("bracket {:?} does not fit a basis of {r}", br.pair)));
                    }
                    brackets.push(((i - 1, j - 1), br.result.clone()));
                }
                let decomposition = if b.decomposition.is_empty() {
                    None
                } else {
                    let mut terms = Vec::new();
                    for term in &b.decomposition {
                        if term.field == 0 || term.field > r {
                            return Err(invalid(format!("decomposition field {} out of range", term.field)));
                        }
                        terms.push((parse_in(&term.coefficient, &scope)?, term.field - 1));
                    }
                    Some(terms)
                };
                Some(Basis {
                    fields,
                    dimension: b.dimension,
                    brackets,
                    decomposition,
                })
            }
        };
        let extra_fields = file
            .extra_fields
            .iter()
            .map(|f| Ok((f.name.clone(), build_field(&f.components)?)))
            .collect::<Result<Vec<_>, CatalogError>>()?;
        let rules = file
            .rules
            .iter()
            .map(|spec| SuperpositionRule::new(spec.clone(), &system))
            .collect::<Result<Vec<_>, _>>()?;

        let mut integrals = Vec::new();
        for f in &file.integrals {
            let mut table = scope.clone();
            for a in 1..=f.copies {
                for (name, role) in system.coords().iter() {
                    table
                        .declare(&copy_name(name, a), role)
                        .map_err(|e| invalid(e.to_string()))?;
                }
            }
            let mut defs: HashMap<String, Expr> = HashMap::new();
            for d in &f.definitions {
                let e = parse_in(&d.expr, &table)?.substitute(&defs);
                table.declare(&d.name, Role::Auxiliary).map_err(|e| invalid(e.to_string()))?;
                defs.insert(d.name.clone(), e);
            }
            let expr = parse_in(&f.expr, &table)?.substitute(&defs);
            let domain = f
                .domain
                .iter()
                .map(|src| {
                    Constraint::parse(src, &table)
                        .map(|c| c.substitute(&values).substitute(&defs))
                        .map_err(|error| CatalogError::Parse {
                            entry: entry.clone(),
                            source_text: src.clone(),
                            error,
                        })
                })
                .collect::<Result<Vec<_>, _>>()?;
            integrals.push(FirstIntegral {
                name: f.name.clone(),
                copies: f.copies,
                expr,
                domain,
            });
        }

        let mut sample_box = SampleBox::default();
        for (k, v) in &file.sample_box {
            if k == "default" {
                sample_box.default = *v;
            } else {
                sample_box.overrides.insert(k.clone(), *v);
            }
        }
        Ok(CatalogEntry {
            name: file.name.clone(),
            title: file.title.clone(),
            provenance: file.provenance.clone(),
            system,
            basis,
            extra_fields,
            rules,
            integrals,
            sample_box,
            t_span: file.t_span.unwrap_or((0.0, 1.0)),
            lie_times: file.lie_times.clone().unwrap_or(DEFAULT_LIE_TIMES.to_vec()),
            expect_lie: file.expect_lie,
            file,
        })
    }

    pub fn rule(&self, name: &str) -> Option<&SuperpositionRule> {
        self.rules.iter().find(|r| r.name == name)
    }

    pub fn integral(&self, name: &str) -> Option<&FirstIntegral> {
        self.integrals.iter().find(|i| i.name == name)
    }

    pub fn extra_field(&self, name: &str) -> Option<&VectorField> {
        self.extra_fields.iter().find(|(n, _)| n == name).map(|(_, f)| f)
    }

    /// Explicit decomposition of the lift over the basis, if declared.
    pub fn decomposition(&self) -> Option<Vec<(Expr, VectorField)>> {
        let b = self.basis.as_ref()?;
        let terms = b.decomposition.as_ref()?;
        Some(terms.iter().map(|(c, i)| (c.clone(), b.fields[*i].clone())).collect())
    }

    /// The first-order lift, carrying its decomposition when one is declared.
    pub fn lift(&self) -> Result<TimeDepVectorField, CatalogError> {
        let lift = self.system.to_first_order();
        match self.decomposition() {
            Some(terms) => lift
                .with_decomposition(terms, &self.copy_box(1))
                .map_err(|source| CatalogError::Field {
                    entry: self.name.clone(),
                    source,
                }),
            None => Ok(lift),
        }
    }

    /// Sample box extended to the copies `1..=copies` of every coordinate.
    pub fn copy_box(&self, copies: usize) -> SampleBox {
        let mut b = self.sample_box.clone();
        for name in self.system.coordinate_names() {
            let interval = self.sample_box.interval(&name);
            for a in 0..=copies {
                b.overrides.insert(copy_name(&name, a), interval);
            }
        }
        b
    }
}

pub fn builtin_catalog() -> Vec<CatalogEntry> {
    BUILTIN
        .iter()
        .map(|(name, text)| {
            CatalogEntry::from_toml(text).unwrap_or_else(|e| panic!("built-in entry {name}: {e}"))
        })
        .collect()
}

pub fn builtin_entry(name: &str) -> Option<CatalogEntry> {
    BUILTIN
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(n, text)| CatalogEntry::from_toml(text).unwrap_or_else(|e| panic!("built-in entry {n}: {e}")))
}

/// Source text of a built-in entry.
pub fn builtin_source(name: &str) -> Option<&'static str> {
    BUILTIN.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

/// Every `*.toml` entry in `dir`, sorted by file name.
pub fn load_dir(dir: &Path) -> Result<Vec<CatalogEntry>, CatalogError> {
    let io = |source| CatalogError::Io {
        path: dir.display().to_string(),
        source,
    };
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_file(p)).collect()
}

pub fn load_file(path: &Path) -> Result<CatalogEntry, CatalogError> {
    let text = std::fs::read_to_string(path).map_err(|source| CatalogError::Io {
        path: path.display().to_string(),
        source,
    })?;
    CatalogEntry::from_toml(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liealg::{span_membership, AlgebraOptions};
    use crate::vfield::lie_bracket;

    #[test]
    fn builtins_load() {
        let all = builtin_catalog();
        assert!(all.len() >= 9);
        for e in &all {
            assert!(e.t_span.1 > e.t_span.0, "{}", e.name);
        }
        let tsqv = builtin_entry("tsqv").unwrap();
        let r = tsqv.rule("affine").unwrap();
        assert_eq!(r.components()[0].to_string(), "k1*x_(1) + k2");
    }

    #[test]
    fn declared_brackets_hold() {
        for e in builtin_catalog() {
            let Some(b) = &e.basis else { continue };
            let opts = AlgebraOptions {
                sample_box: e.sample_box.clone(),
                ..AlgebraOptions::default()
            };
            for ((i, j), expected) in &b.brackets {
                let br = lie_bracket(&b.fields[*i], &b.fields[*j]).unwrap();
                let fit = span_membership(&br, &b.fields, &opts).unwrap();
                assert!(fit.residual < 1e-9, "{} [{i},{j}]", e.name);
                for (c, want) in fit.coefficients.iter().zip(expected) {
                    assert!((c - want).abs() < 1e-7, "{} [{i},{j}]: {c} vs {want}", e.name);
                }
            }
        }
    }

    #[test]
    fn decompositions_match_lifts() {
        for e in builtin_catalog() {
            e.lift().unwrap_or_else(|err| panic!("{}: {err}", e.name));
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = "name = \"x\"\norder = 2\npositions = [\"x\"]\nrhs = [\"0\"]\ncolour = 1\n";
        assert!(matches!(CatalogEntry::from_toml(bad), Err(CatalogError::Toml(_))));
        let unparsable = "name = \"x\"\norder = 2\npositions = [\"x\"]\nrhs = [\"0 +\"]\n";
        assert!(CatalogEntry::from_toml(unparsable).is_err());
    }

    #[test]
    fn load_dir_reads_sorted_entries() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["tsq", "free"] {
            std::fs::write(dir.path().join(format!("{name}.toml")), builtin_source(name).unwrap()).unwrap();
        }
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let names: Vec<_> = load_dir(dir.path()).unwrap().into_iter().map(|e| e.name).collect();
        assert_eq!(names, ["free", "tsq"]);
    }
}
