//! Numerical Lie-algebra machinery: rank and span tests at random points,
//! closure of a set of vector fields under brackets, structure constants,
//! the Lie–Scheffers decision and the minimal number of prolongation copies.
//!
//! All linear algebra is done on matrices of component values stacked over
//! random sample points. Membership in a span is tested with constant
//! coefficients, which is exactly what closure of a finite-dimensional
//! algebra of vector fields requires.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{SampleBox, Tape};
use crate::vfield::{freeze_time, lie_bracket, FieldError, TimeDepVectorField, VectorField};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LieError {
    #[error("only {finite} of {needed} sample points gave finite values")]
    Inconclusive { finite: usize, needed: usize },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("field depends on time; freeze it first")]
    TimeDependent,
    #[error("{0}")]
    Invalid(String),
}

/// Sampling and tolerance settings shared by the operations of this module.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlgebraOptions {
    pub sample_box: SampleBox,
    pub seed: u64,
    /// Sample points per basis element.
    pub points_per_dim: usize,
    /// Singular values below `rank_rtol * sigma_max` count as zero.
    pub rank_rtol: f64,
    /// A candidate with relative span residual above this is independent.
    pub span_tol: f64,
    pub cap: usize,
    pub max_depth: usize,
}

impl Default for AlgebraOptions {
    fn default() -> Self {
        AlgebraOptions {
            sample_box: SampleBox::default(),
            seed: 0,
            points_per_dim: 4,
            rank_rtol: 1e-8,
            span_tol: 1e-7,
            cap: 12,
            max_depth: 5,
        }
    }
}

/// A fixed set of sample points over a coordinate space.
#[derive(Debug, Clone)]
struct Samples {
    coords: Vec<String>,
    points: Vec<Vec<f64>>,
}

impl Samples {
    fn draw<R: Rng + ?Sized>(coords: Vec<String>, count: usize, sample_box: &SampleBox, rng: &mut R) -> Self {
        let points = (0..count)
            .map(|_| coords.iter().map(|c| sample_box.sample(c, rng)).collect())
            .collect();
        Samples { coords, points }
    }

    /// Component values of `field` at every point; `None` where not finite.
    fn evaluate(&self, field: &VectorField) -> Result<Vec<Option<Vec<f64>>>, LieError> {
        if field.is_time_dependent() {
            return Err(LieError::TimeDependent);
        }
        if field.coordinate_names() != self.coords {
            return Err(LieError::Invalid("sample space differs from field space".into()));
        }
        let tape = Tape::compile(field.components(), &self.coords)
            .map_err(|e| LieError::Invalid(e.to_string()))?;
        let mut scratch = Vec::new();
        Ok(self
            .points
            .iter()
            .map(|p| {
                let mut out = vec![0.0; tape.len()];
                tape.eval_into(p, &mut scratch, &mut out);
                out.iter().all(|v| v.is_finite()).then_some(out)
            })
            .collect())
    }
}

/// Evaluations of several fields restricted to the points where all are finite.
fn stacked(
    samples: &Samples,
    columns: &[Vec<Option<Vec<f64>>>],
    min_points: usize,
) -> Result<(DMatrix<f64>, usize), LieError> {
    let good: Vec<usize> = (0..samples.points.len())
        .filter(|&p| columns.iter().all(|c| c[p].is_some()))
        .collect();
    if good.len() < min_points {
        return Err(LieError::Inconclusive {
            finite: good.len(),
            needed: min_points,
        });
    }
    let dim = samples.coords.len();
    let mut m = DMatrix::zeros(good.len() * dim, columns.len());
    for (row_block, &p) in good.iter().enumerate() {
        for (j, col) in columns.iter().enumerate() {
            let vals = col[p].as_ref().expect("filtered to finite points");
            for (i, v) in vals.iter().enumerate() {
                m[(row_block * dim + i, j)] = *v;
            }
        }
    }
    Ok((m, good.len()))
}

fn numerical_rank(m: &DMatrix<f64>, rtol: f64) -> usize {
    if m.ncols() == 0 || m.nrows() == 0 {
        return 0;
    }
    let sv = m.singular_values();
    let max = sv.iter().fold(0.0f64, |a, &b| a.max(b));
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rtol * max).count()
}

fn coordinate_space(fields: &[VectorField]) -> Result<Vec<String>, LieError> {
    let first = fields
        .first()
        .ok_or_else(|| LieError::Invalid("empty field list".into()))?;
    let coords = first.coordinate_names();
    for f in fields {
        if f.coordinate_names() != coords {
            return Err(FieldError::Mismatch {
                left: coords.join(", "),
                right: f.coordinate_names().join(", "),
            }
            .into());
        }
    }
    Ok(coords)
}

/// Numerical rank of the fields' values stacked over `sample_count` points.
pub fn rank_at_samples(
    fields: &[VectorField],
    sample_count: usize,
    opts: &AlgebraOptions,
) -> Result<usize, LieError> {
    if fields.is_empty() {
        return Ok(0);
    }
    if sample_count < fields.len() {
        return Err(LieError::Invalid(format!(
            "{sample_count} sample points for {} fields",
            fields.len()
        )));
    }
    let coords = coordinate_space(fields)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    // oversample so that points on singular loci can be dropped
    let samples = Samples::draw(coords, sample_count * 2, &opts.sample_box, &mut rng);
    let columns = fields
        .iter()
        .map(|f| samples.evaluate(f))
        .collect::<Result<Vec<_>, _>>()?;
    let (m, _) = stacked(&samples, &columns, sample_count)?;
    Ok(numerical_rank(&m, opts.rank_rtol))
}

/// Largest rank of the fields' value vectors at a single sample point, over
/// `sample_count` points.
pub fn pointwise_rank(
    fields: &[VectorField],
    sample_count: usize,
    opts: &AlgebraOptions,
) -> Result<usize, LieError> {
    if fields.is_empty() {
        return Ok(0);
    }
    let coords = coordinate_space(fields)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let samples = Samples::draw(coords, sample_count * 2, &opts.sample_box, &mut rng);
    let columns = fields
        .iter()
        .map(|f| samples.evaluate(f))
        .collect::<Result<Vec<_>, _>>()?;
    let good: Vec<usize> = (0..samples.points.len())
        .filter(|&p| columns.iter().all(|c| c[p].is_some()))
        .collect();
    if good.len() < sample_count {
        return Err(LieError::Inconclusive {
            finite: good.len(),
            needed: sample_count,
        });
    }
    let dim = samples.coords.len();
    let rank = good
        .iter()
        .take(sample_count)
        .map(|&p| {
            let m = DMatrix::from_fn(dim, columns.len(), |i, j| {
                columns[j][p].as_ref().expect("filtered to finite points")[i]
            });
            numerical_rank(&m, opts.rank_rtol)
        })
        .max()
        .unwrap_or(0);
    Ok(rank)
}

/// Least-squares constant coefficients of `candidate` in `basis`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpanFit {
    pub coefficients: Vec<f64>,
    /// Max componentwise deviation divided by the candidate's max magnitude.
    pub residual: f64,
}

fn fit_columns(samples: &Samples, basis: &[Vec<Option<Vec<f64>>>], candidate: &[Option<Vec<f64>>], min_points: usize) -> Result<SpanFit, LieError> {
    let mut columns: Vec<Vec<Option<Vec<f64>>>> = basis.to_vec();
    columns.push(candidate.to_vec());
    let (m, _) = stacked(samples, &columns, min_points)?;
    let k = basis.len();
    let a = m.columns(0, k).into_owned();
    let b: DVector<f64> = m.column(k).into_owned();
    let scale = b.amax();
    if scale < 1e-12 {
        return Ok(SpanFit {
            coefficients: vec![0.0; k],
            residual: scale,
        });
    }
    if k == 0 {
        return Ok(SpanFit {
            coefficients: vec![],
            residual: 1.0,
        });
    }
    let svd = a.clone().svd(true, true);
    let c = svd
        .solve(&b, 1e-12)
        .map_err(|e| LieError::Invalid(e.to_string()))?;
    let r = (&a * &c - &b).amax() / scale;
    Ok(SpanFit {
        coefficients: c.iter().copied().collect(),
        residual: r,
    })
}

/// Constant-coefficient least-squares fit of `candidate` against `basis`.
pub fn span_membership(
    candidate: &VectorField,
    basis: &[VectorField],
    opts: &AlgebraOptions,
) -> Result<SpanFit, LieError> {
    let mut all = basis.to_vec();
    all.push(candidate.clone());
    let coords = coordinate_space(&all)?;
    let needed = (opts.points_per_dim * basis.len().max(1)).max(8);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let samples = Samples::draw(coords, needed * 2, &opts.sample_box, &mut rng);
    let columns = basis
        .iter()
        .map(|f| samples.evaluate(f))
        .collect::<Result<Vec<_>, _>>()?;
    let cand = samples.evaluate(candidate)?;
    fit_columns(&samples, &columns, &cand, needed)
}

/// `c[gamma][alpha][beta]` with `[e_alpha, e_beta] = sum_gamma c^gamma_{alpha beta} e_gamma`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructureConstants {
    pub dimension: usize,
    pub values: Vec<Vec<Vec<f64>>>,
}

impl StructureConstants {
    fn new(dimension: usize) -> Self {
        StructureConstants {
            dimension,
            values: vec![vec![vec![0.0; dimension]; dimension]; dimension],
        }
    }

    /// Store `[e_alpha, e_beta]` coefficients for `alpha < beta`; the
    /// transposed entry is set to the exact negative.
    fn set_pair(&mut self, alpha: usize, beta: usize, coefficients: &[f64]) {
        for (gamma, &c) in coefficients.iter().enumerate() {
            self.values[gamma][alpha][beta] = c;
            self.values[gamma][beta][alpha] = -c;
        }
    }

    pub fn get(&self, gamma: usize, alpha: usize, beta: usize) -> f64 {
        self.values[gamma][alpha][beta]
    }

    /// Largest violation of the Jacobi identity contracted over structure constants.
    pub fn jacobi_defect(&self) -> f64 {
        let n = self.dimension;
        let c = |g: usize, a: usize, b: usize| self.values[g][a][b];
        let mut worst = 0.0f64;
        for a in 0..n {
            for b in 0..n {
                for g in 0..n {
                    for nu in 0..n {
                        let s: f64 = (0..n)
                            .map(|mu| {
                                c(mu, a, b) * c(nu, mu, g)
                                    + c(mu, b, g) * c(nu, mu, a)
                                    + c(mu, g, a) * c(nu, mu, b)
                            })
                            .sum();
                        worst = worst.max(s.abs());
                    }
                }
            }
        }
        worst
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum ClosureStatus {
    Closed {
        dimension: usize,
        #[serde(serialize_with = "serialize_fields")]
        basis: Vec<VectorField>,
        structure_constants: StructureConstants,
    },
    Exceeded {
        cap: usize,
        depth: usize,
        dimension_lower_bound: usize,
    },
}

fn serialize_fields<S: serde::Serializer>(fields: &[VectorField], s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(fields.len()))?;
    for f in fields {
        let comps: BTreeMap<String, String> = f
            .coordinate_names()
            .into_iter()
            .zip(f.components().iter().map(|c| c.to_string()))
            .collect();
        seq.serialize_element(&comps)?;
    }
    seq.end()
}

#[derive(Debug, Clone, Serialize)]
pub struct ClosureResult {
    pub status: ClosureStatus,
    pub bracket_depth_reached: usize,
    pub sample_points_used: usize,
    /// Coordinates of the sample space, in column order of `witness_points`.
    pub coordinates: Vec<String>,
    pub witness_points: Vec<Vec<f64>>,
}

impl ClosureResult {
    pub fn is_closed(&self) -> bool {
        matches!(self.status, ClosureStatus::Closed { .. })
    }

    pub fn dimension(&self) -> Option<usize> {
        match &self.status {
            ClosureStatus::Closed { dimension, .. } => Some(*dimension),
            ClosureStatus::Exceeded { .. } => None,
        }
    }

    pub fn basis(&self) -> Option<&[VectorField]> {
        match &self.status {
            ClosureStatus::Closed { basis, .. } => Some(basis),
            ClosureStatus::Exceeded { .. } => None,
        }
    }

    pub fn structure_constants(&self) -> Option<&StructureConstants> {
        match &self.status {
            ClosureStatus::Closed {
                structure_constants,
                ..
            } => Some(structure_constants),
            ClosureStatus::Exceeded { .. } => None,
        }
    }
}

struct Element {
    field: VectorField,
    depth: usize,
    values: Vec<Option<Vec<f64>>>,
}

/// Close `generators` under the Lie bracket, or report that the cap on
/// dimension or bracket depth was exceeded.
pub fn generate_lie_closure(
    generators: &[VectorField],
    opts: &AlgebraOptions,
) -> Result<ClosureResult, LieError> {
    let coords = coordinate_space(generators)?;
    let needed = opts.points_per_dim * (opts.cap + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let samples = Samples::draw(coords.clone(), needed * 2, &opts.sample_box, &mut rng);
    let min_points = needed;

    let mut basis: Vec<Element> = Vec::new();
    let fit_against = |basis: &[Element], values: &[Option<Vec<f64>>]| {
        let cols: Vec<_> = basis.iter().map(|e| e.values.clone()).collect();
        fit_columns(&samples, &cols, values, min_points)
    };

    for g in generators {
        let values = samples.evaluate(g)?;
        let fit = fit_against(&basis, &values)?;
        if fit.residual > opts.span_tol {
            basis.push(Element {
                field: g.clone(),
                depth: 1,
                values,
            });
            if basis.len() > opts.cap {
                return Ok(exceeded(opts, 1, basis.len(), &samples));
            }
        }
    }

    let mut depth_reached = 1;
    let mut brackets: BTreeMap<(usize, usize), SpanFit> = BTreeMap::new();
    let mut j = 1;
    while j < basis.len() {
        for i in 0..j {
            let field = lie_bracket(&basis[i].field, &basis[j].field)?;
            let values = samples.evaluate(&field)?;
            let fit = fit_against(&basis, &values)?;
            let depth = basis[i].depth.max(basis[j].depth) + 1;
            if fit.residual > opts.span_tol {
                if depth > opts.max_depth {
                    return Ok(exceeded(opts, depth_reached, basis.len(), &samples));
                }
                depth_reached = depth_reached.max(depth);
                basis.push(Element {
                    field,
                    depth,
                    values,
                });
                if basis.len() > opts.cap {
                    return Ok(exceeded(opts, depth_reached, basis.len(), &samples));
                }
            } else {
                brackets.insert((i, j), fit);
            }
        }
        j += 1;
    }

    // Brackets recorded before the basis grew have short coefficient vectors;
    // refit those against the final basis.
    let n = basis.len();
    let mut constants = StructureConstants::new(n);
    for b in 1..n {
        for a in 0..b {
            let fit = match brackets.get(&(a, b)) {
                Some(fit) if fit.coefficients.len() == n => fit.clone(),
                _ => {
                    let field = lie_bracket(&basis[a].field, &basis[b].field)?;
                    fit_against(&basis, &samples.evaluate(&field)?)?
                }
            };
            constants.set_pair(a, b, &fit.coefficients);
        }
    }
    Ok(ClosureResult {
        status: ClosureStatus::Closed {
            dimension: n,
            basis: basis.into_iter().map(|e| e.field).collect(),
            structure_constants: constants,
        },
        bracket_depth_reached: depth_reached,
        sample_points_used: samples.points.len(),
        coordinates: coords,
        witness_points: samples.points,
    })
}

fn exceeded(opts: &AlgebraOptions, depth: usize, dimension: usize, samples: &Samples) -> ClosureResult {
    ClosureResult {
        status: ClosureStatus::Exceeded {
            cap: opts.cap,
            depth: opts.max_depth,
            dimension_lower_bound: dimension,
        },
        bracket_depth_reached: depth,
        sample_points_used: samples.points.len(),
        coordinates: samples.coords.clone(),
        witness_points: samples.points.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Evidence {
    Yes,
    NoEvidence,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct LieSchefferResult {
    pub is_lie_system_evidence: Evidence,
    pub closure: Option<ClosureResult>,
    pub decomposition_checked: bool,
    /// Largest span residual of a frozen field against the closure basis.
    pub max_frozen_residual: Option<f64>,
    pub note: Option<String>,
}

/// Decide, with numerical evidence, whether `x` takes values in a
/// finite-dimensional Lie algebra of vector fields.
pub fn lie_scheffers_check(
    x: &TimeDepVectorField,
    time_samples: &[f64],
    opts: &AlgebraOptions,
) -> Result<LieSchefferResult, LieError> {
    if time_samples.len() < 2 {
        return Err(LieError::Invalid("need at least two time samples".into()));
    }
    let frozen: Vec<VectorField> = time_samples.iter().map(|&t| freeze_time(x, t)).collect();
    let (generators, decomposition_checked) = match x.decomposition() {
        Some(terms) => (terms.iter().map(|(_, f)| f.clone()).collect::<Vec<_>>(), true),
        None => (frozen.clone(), false),
    };
    let closure = match generate_lie_closure(&generators, opts) {
        Ok(c) => c,
        Err(LieError::Inconclusive { finite, needed }) => {
            return Ok(LieSchefferResult {
                is_lie_system_evidence: Evidence::Inconclusive,
                closure: None,
                decomposition_checked,
                max_frozen_residual: None,
                note: Some(format!("{finite} of {needed} sample points finite")),
            })
        }
        Err(e) => return Err(e),
    };
    let Some(basis) = closure.basis() else {
        return Ok(LieSchefferResult {
            is_lie_system_evidence: Evidence::NoEvidence,
            closure: Some(closure),
            decomposition_checked,
            max_frozen_residual: None,
            note: None,
        });
    };
    let mut worst = 0.0f64;
    for f in &frozen {
        worst = worst.max(span_membership(f, basis, opts)?.residual);
    }
    let (evidence, note) = if worst <= opts.span_tol {
        (Evidence::Yes, None)
    } else {
        (
            Evidence::Inconclusive,
            Some("a frozen field lies outside the closed algebra".to_string()),
        )
    };
    Ok(LieSchefferResult {
        is_lie_system_evidence: evidence,
        closure: Some(closure),
        decomposition_checked,
        max_frozen_residual: Some(worst),
        note,
    })
}

/// Smallest `m <= m_max` whose `m`-fold diagonal prolongations of `basis`
/// are independent at a generic point (pointwise rank, not the stacked rank).
pub fn minimal_prolongation_count(
    basis: &[VectorField],
    m_max: usize,
    opts: &AlgebraOptions,
) -> Result<Option<usize>, LieError> {
    let r = basis.len();
    for m in 1..=m_max {
        let prolonged: Vec<VectorField> = basis.iter().map(|f| f.prolong_range(1, m)).collect();
        let count = (opts.points_per_dim * r).max(r);
        if pointwise_rank(&prolonged, count, opts)? == r {
            return Ok(Some(m));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, Expr, Role, SymbolTable};

    fn space(names: &[(&str, Role)]) -> SymbolTable {
        let mut t = SymbolTable::new();
        for (n, r) in names {
            t.declare(n, *r).unwrap();
        }
        t
    }

    fn tr() -> SymbolTable {
        space(&[("x", Role::Coordinate), ("v", Role::Velocity)])
    }

    fn field(coords: &SymbolTable, comps: &[&str]) -> VectorField {
        let parse_table = coords.clone().with("t", Role::Time).unwrap();
        let comps = comps.iter().map(|c| parse(c, &parse_table).unwrap()).collect();
        VectorField::time_dependent(coords.clone(), comps).unwrap()
    }

    fn ks2() -> Vec<VectorField> {
        let c = tr();
        vec![
            field(&c, &["0", "2*x"]),
            field(&c, &["x", "2*v"]),
            field(&c, &["v", "3/2*v^2/x + 2*x^3"]),
        ]
    }

    fn ks3() -> Vec<VectorField> {
        let c = space(&[
            ("x", Role::Coordinate),
            ("y1", Role::HigherDerivative),
            ("y2", Role::HigherDerivative),
        ]);
        vec![
            field(&c, &["0", "0", "2*y1"]),
            field(&c, &["0", "y1", "2*y2"]),
            field(&c, &["y1", "y2", "3/2*y2^2/y1 + 2*y1^3"]),
        ]
    }

    #[test]
    fn rank_examples() {
        let opts = AlgebraOptions::default();
        assert_eq!(rank_at_samples(&ks2(), 8, &opts).unwrap(), 3);
        assert_eq!(pointwise_rank(&ks2(), 8, &opts).unwrap(), 2);
        let x = ks2()[2].clone();
        let doubled = x.scale(&Expr::int(2));
        assert_eq!(rank_at_samples(&[x, doubled], 4, &opts).unwrap(), 1);
        assert_eq!(rank_at_samples(&[VectorField::zero(tr())], 4, &opts).unwrap(), 0);
    }

    #[test]
    fn span_examples() {
        let opts = AlgebraOptions::default();
        let basis = ks2();
        let b13 = lie_bracket(&basis[0], &basis[2]).unwrap();
        let fit = span_membership(&b13, &basis, &opts).unwrap();
        assert!(fit.residual < 1e-8, "{fit:?}");
        for (got, want) in fit.coefficients.iter().zip([0.0, 2.0, 0.0]) {
            assert!((got - want).abs() < 1e-8);
        }
        let same = span_membership(&basis[1], &basis, &opts).unwrap();
        assert!(same.residual < 1e-12);
        assert!((same.coefficients[1] - 1.0).abs() < 1e-12);

        let c = tr();
        let outside = span_membership(&field(&c, &["v^2", "0"]), &[field(&c, &["v", "0"])], &opts).unwrap();
        assert!(outside.residual > 1e-3, "{outside:?}");
    }

    #[test]
    fn kummer_schwarz_closure() {
        let result = generate_lie_closure(&ks2(), &AlgebraOptions::default()).unwrap();
        assert_eq!(result.dimension(), Some(3));
        let c = result.structure_constants().unwrap();
        assert!((c.get(0, 0, 1) - 1.0).abs() < 1e-8);
        assert!((c.get(1, 0, 2) - 2.0).abs() < 1e-8);
        assert!((c.get(2, 1, 2) - 1.0).abs() < 1e-8);
        assert_eq!(c.get(0, 1, 0), -c.get(0, 0, 1));
        assert!(c.jacobi_defect() < 1e-6);
    }

    #[test]
    fn closure_of_closed_basis_adds_nothing() {
        let opts = AlgebraOptions::default();
        let first = generate_lie_closure(&ks2(), &opts).unwrap();
        let again = generate_lie_closure(first.basis().unwrap(), &opts).unwrap();
        assert_eq!(again.dimension(), Some(3));
    }

    #[test]
    fn redundant_generators_are_dropped() {
        let mut gens = ks2();
        gens.push(gens[0].add(&gens[2]).unwrap());
        let result = generate_lie_closure(&gens, &AlgebraOptions::default()).unwrap();
        assert_eq!(result.dimension(), Some(3));
    }

    #[test]
    fn infinite_algebra_exceeds_cap() {
        let c = tr();
        let gens = [field(&c, &["v", "0"]), field(&c, &["0", "v^2"])];
        let result = generate_lie_closure(&gens, &AlgebraOptions::default()).unwrap();
        assert!(matches!(result.status, ClosureStatus::Exceeded { .. }), "{:?}", result.dimension());
    }

    #[test]
    fn constant_field_is_a_lie_system() {
        let c = tr();
        let x = TimeDepVectorField::from_field(field(&c, &["v", "0"]));
        let r = lie_scheffers_check(&x, &[0.0, 0.5, 1.0], &AlgebraOptions::default()).unwrap();
        assert_eq!(r.is_lie_system_evidence, Evidence::Yes);
        assert_eq!(r.closure.unwrap().dimension(), Some(1));
    }

    #[test]
    fn minimal_copies() {
        let opts = AlgebraOptions::default();
        assert_eq!(minimal_prolongation_count(&ks2(), 4, &opts).unwrap(), Some(2));
        assert_eq!(minimal_prolongation_count(&ks2()[2..], 4, &opts).unwrap(), Some(1));
        assert_eq!(minimal_prolongation_count(&ks3(), 4, &opts).unwrap(), Some(1));
    }

    #[test]
    fn kummer_schwarz_third_order_closure() {
        let result = generate_lie_closure(&ks3(), &AlgebraOptions::default()).unwrap();
        assert_eq!(result.dimension(), Some(3));
    }
}
