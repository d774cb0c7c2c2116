use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::expr::{Expr, Tape, TIME};
use crate::integrate::Trajectory;
use crate::sode::{Constraint, OdeSystem, Relation};
use crate::vfield::split_copy_name;

use super::rule::{copy_coordinates, RuleKind, SuperpositionRule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitOptions {
    pub starts: usize,
    pub iterations: usize,
    pub tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            starts: 16,
            iterations: 50,
            tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fit {
    pub constants: Vec<f64>,
    /// Value (+1 or -1) of each branch symbol.
    pub branch: Vec<f64>,
    /// Max-norm of the initial-jet mismatch.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("no root found; best residual {best_residual:e}")]
    NoRoot { best_residual: f64 },
    #[error("particular solutions violate `{0}` at the initial time")]
    Constraint(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReconstructError {
    #[error("genericity condition `{constraint}` fails at t = {t}")]
    Genericity { t: f64, constraint: String },
    #[error("reconstruction not finite at t = {t}")]
    NonFinite { t: f64 },
    #[error("t = {0} outside the particular solutions")]
    OutOfRange(f64),
}

/// Compiled jet of a rule together with its genericity conditions.
///
/// Slots are `t`, the particular coordinates (copies `1..=m`), the
/// constants and the branch symbols.
pub struct RuleEvaluator<'a> {
    rule: &'a SuperpositionRule,
    levels: usize,
    jet: Tape,
    /// Genericity conditions that do not mention the target copy.
    along: Vec<&'a Constraint>,
    along_tape: Tape,
    /// Branch indices paired with rows of `orient_tape`.
    oriented: Vec<usize>,
    orient_tape: Tape,
    slots: usize,
}

impl<'a> RuleEvaluator<'a> {
    /// Evaluator for the first `levels` jet levels (the components when 1).
    pub fn new(rule: &'a SuperpositionRule, system: &OdeSystem, levels: usize) -> Self {
        let slots = Self::slot_names(rule);
        let exprs = rule.jet(system, levels);
        let jet = Tape::compile(&exprs, &slots).expect("rule symbols are declared");
        let along: Vec<&Constraint> = rule
            .genericity()
            .iter()
            .filter(|c| {
                c.expr
                    .free_symbols()
                    .iter()
                    .all(|s| split_copy_name(s).is_none_or(|(_, a)| a != 0))
            })
            .collect();
        let exprs: Vec<Expr> = along.iter().map(|c| c.expr.clone()).collect();
        let along_tape = Tape::compile(&exprs, &slots).expect("genericity symbols are declared");
        let (oriented, exprs): (Vec<usize>, Vec<Expr>) = rule
            .orientation()
            .iter()
            .enumerate()
            .filter_map(|(i, e)| e.clone().map(|e| (i, e)))
            .unzip();
        let orient_tape = Tape::compile(&exprs, &slots).expect("orientation symbols are declared");
        RuleEvaluator {
            rule,
            levels,
            jet,
            along,
            along_tape,
            oriented,
            orient_tape,
            slots: slots.len(),
        }
    }

    fn slot_names(rule: &SuperpositionRule) -> Vec<String> {
        let mut slots = vec![TIME.to_string()];
        slots.extend(rule.particular_coordinates());
        slots.extend(rule.constants().iter().cloned());
        slots.extend(rule.branches().iter().cloned());
        slots
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    fn input(&self, t: f64, particular: &[f64], k: &[f64], branch: &[f64]) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.slots);
        v.push(t);
        v.extend_from_slice(particular);
        v.extend_from_slice(k);
        v.extend_from_slice(branch);
        v
    }

    /// Jet values, level-major.
    pub fn eval(&self, t: f64, particular: &[f64], k: &[f64], branch: &[f64]) -> Vec<f64> {
        self.jet.eval(&self.input(t, particular, k, branch))
    }

    fn along_values(&self, t: f64, particular: &[f64], k: &[f64], branch: &[f64]) -> Vec<f64> {
        self.along_tape.eval(&self.input(t, particular, k, branch))
    }

    /// Branch values along `t_grid`: an oriented branch flips wherever its
    /// orientation quantity changes sign relative to the first grid point.
    pub fn branches_along(&self, branch: &[f64], particular: &[Trajectory], t_grid: &[f64]) -> Vec<Vec<f64>> {
        let k = vec![0.0; self.rule.constants().len()];
        let mut current = branch.to_vec();
        let mut last: Option<Vec<f64>> = None;
        let mut out = Vec::with_capacity(t_grid.len());
        for &t in t_grid {
            if !self.oriented.is_empty() {
                if let Some(p) = particular_state(particular, t) {
                    let o = self.orient_tape.eval(&self.input(t, &p, &k, branch));
                    let prev = last.get_or_insert_with(|| o.iter().map(|v| v.signum()).collect());
                    for ((&i, v), s) in self.oriented.iter().zip(&o).zip(prev.iter_mut()) {
                        if *v != 0.0 && v.signum() != *s {
                            current[i] = -current[i];
                            *s = v.signum();
                        }
                    }
                }
            }
            out.push(current.clone());
        }
        out
    }

    fn orients(&self, c: &Constraint) -> bool {
        self.oriented
            .iter()
            .any(|&i| self.rule.orientation()[i].as_ref() == Some(&c.expr))
    }

    /// First time on `t_grid` where the particular solutions leave the
    /// rule's domain: a positivity condition fails or a nonzero condition
    /// changes sign. Conditions involving the target are not checked, and a
    /// nonzero condition that orients a branch may change sign.
    pub fn along_violation(&self, particular: &[Trajectory], t_grid: &[f64]) -> Option<(f64, String)> {
        let k = vec![0.0; self.rule.constants().len()];
        let branch = vec![1.0; self.rule.branches().len()];
        let mut signs: Option<Vec<f64>> = None;
        for &t in t_grid {
            let Some(p) = particular_state(particular, t) else {
                continue;
            };
            let along = self.along_values(t, &p, &k, &branch);
            let initial = signs.get_or_insert_with(|| along.iter().map(|v| v.signum()).collect());
            for ((c, v), s) in self.along.iter().zip(&along).zip(initial.iter()) {
                let ok = match c.relation {
                    Relation::Positive => *v > 0.0,
                    Relation::Nonzero if self.orients(c) => true,
                    Relation::Nonzero => *v != 0.0 && v.signum() == *s,
                };
                if !ok {
                    return Some((t, c.source.clone()));
                }
            }
        }
        None
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| if x.is_nan() { f64::INFINITY } else { m.max(x.abs()) })
}

/// Concatenated states of the particular solutions at `t`.
pub fn particular_state(particular: &[Trajectory], t: f64) -> Option<Vec<f64>> {
    let mut out = Vec::new();
    for p in particular {
        out.extend(p.dense_eval(t).ok()?);
    }
    Some(out)
}

/// All sign patterns of `count` branch symbols.
fn branch_patterns(count: usize) -> Vec<Vec<f64>> {
    (0..1usize << count)
        .map(|bits| (0..count).map(|i| if bits >> i & 1 == 0 { 1.0 } else { -1.0 }).collect())
        .collect()
}

const START_DRAWS: usize = 64;

/// Solve `jet(k) = target` at `t0` by multi-start Newton over every branch.
///
/// `target` holds the first `levels` jet levels of the wanted solution.
pub fn fit_constants<R: Rng + ?Sized>(
    eval: &RuleEvaluator,
    t0: f64,
    particular: &[f64],
    target: &[f64],
    opts: &FitOptions,
    rng: &mut R,
) -> Result<Fit, FitError> {
    let rule = eval.rule;
    if rule.kind == RuleKind::Partial {
        return Err(FitError::Invalid("partial rules are not fitted".into()));
    }
    let p = rule.constants().len();
    let equations = eval.levels * rule.components().len();
    if target.len() != equations || equations != p {
        return Err(FitError::Invalid(format!(
            "{p} constants against {} target values",
            target.len()
        )));
    }
    for (c, v) in eval.along.iter().zip(eval.along_values(t0, particular, &vec![0.0; p], &vec![1.0; rule.branches().len()])) {
        if !c.holds(v, 0.0) {
            return Err(FitError::Constraint(c.source.clone()));
        }
    }

    let patterns = branch_patterns(rule.branches().len());
    let residual = |k: &[f64], branch: &[f64]| -> Vec<f64> {
        eval.eval(t0, particular, k, branch)
            .iter()
            .zip(target)
            .map(|(a, b)| a - b)
            .collect()
    };
    let mut best: Option<Fit> = None;
    let mut consider = |k: Vec<f64>, branch: &[f64], r: f64| {
        if best.as_ref().is_none_or(|b| r < b.residual) {
            best = Some(Fit {
                constants: k,
                branch: branch.to_vec(),
                residual: r,
            });
        }
    };
    'branches: for branch in &patterns {
        let f = |k: &[f64]| residual(k, branch);
        for start in 0..opts.starts {
            let mut k0: Vec<f64> = rule.k_box().iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect();
            if start > 0 {
                // redraw starts where the rule is undefined, widening the
                // box around its center every 16 draws
                for draw in 0..START_DRAWS {
                    let scale = (1u32 << (draw / 16)) as f64;
                    k0 = rule
                        .k_box()
                        .iter()
                        .map(|&(lo, hi)| {
                            let (c, h) = (0.5 * (lo + hi), 0.5 * (hi - lo) * scale);
                            rng.random_range(c - h..c + h)
                        })
                        .collect();
                    if max_abs(&f(&k0)).is_finite() {
                        break;
                    }
                }
            }
            let (k, r) = newton(&f, k0, opts.iterations);
            if r < opts.tol {
                consider(k, branch, r);
                break 'branches;
            }
            // Branches meet where their radicals vanish, which is where
            // Newton tends to stall; continue from there on the others.
            for other in patterns.iter().filter(|b| *b != branch) {
                let g = |k: &[f64]| residual(k, other);
                let (k2, r2) = newton(&g, k.clone(), opts.iterations);
                consider(k2, other, r2);
                if r2 < opts.tol {
                    break 'branches;
                }
            }
            consider(k, branch, r);
        }
    }
    let best = best.expect("at least one start");
    if best.residual < opts.tol {
        Ok(best)
    } else {
        Err(FitError::NoRoot {
            best_residual: best.residual,
        })
    }
}

/// Difference quotient of `f` along coordinate `j` with step `h`: central
/// where both sides are defined, one-sided at the edge of the domain.
fn difference(f: &dyn Fn(&[f64]) -> Vec<f64>, k: &[f64], r: &[f64], j: usize, h: f64) -> Option<Vec<f64>> {
    let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
    let mut kp = k.to_vec();
    let mut km = k.to_vec();
    kp[j] += h;
    km[j] -= h;
    let (fp, fm) = (f(&kp), f(&km));
    match (finite(&fp), finite(&fm)) {
        (true, true) => Some(fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect()),
        (true, false) => Some(fp.iter().zip(r).map(|(a, b)| (a - b) / h).collect()),
        (false, true) => Some(r.iter().zip(&fm).map(|(a, b)| (a - b) / h).collect()),
        (false, false) => None,
    }
}

/// Finite-difference Jacobian. The step shrinks until two successive
/// quotients agree, which keeps it below the scale on which the residual
/// bends (rules with radicals are steep next to the edge of their domain).
fn jacobian(f: &dyn Fn(&[f64]) -> Vec<f64>, k: &[f64], r: &[f64]) -> Option<DMatrix<f64>> {
    let p = k.len();
    let mut jac = DMatrix::zeros(r.len(), p);
    for j in 0..p {
        let mut h = f64::EPSILON.sqrt() * k[j].abs().max(1.0);
        let mut column = difference(f, k, r, j, h);
        for _ in 0..8 {
            let finer = difference(f, k, r, j, h * 0.1);
            let settled = match (&column, &finer) {
                (Some(a), Some(b)) => a
                    .iter()
                    .zip(b)
                    .all(|(x, y)| (x - y).abs() <= 1e-3 * (x.abs().max(y.abs()) + 1e-12)),
                _ => false,
            };
            if finer.is_some() {
                column = finer;
            }
            if settled {
                break;
            }
            h *= 0.1;
        }
        for (i, v) in column?.into_iter().enumerate() {
            jac[(i, j)] = v;
        }
    }
    Some(jac)
}

fn two_norm(v: &[f64]) -> f64 {
    let s: f64 = v.iter().map(|x| x * x).sum();
    if s.is_nan() {
        f64::INFINITY
    } else {
        s.sqrt()
    }
}

/// Damped Newton; the line search uses the 2-norm, for which the Newton
/// direction is a descent direction. Returns the max-norm of the residual.
fn newton(f: &dyn Fn(&[f64]) -> Vec<f64>, mut k: Vec<f64>, iterations: usize) -> (Vec<f64>, f64) {
    let mut r = f(&k);
    let mut norm = two_norm(&r);
    for _ in 0..iterations {
        if !norm.is_finite() || norm < 1e-15 {
            break;
        }
        let Some(jac) = jacobian(f, &k, &r) else {
            break;
        };
        let rhs = DVector::from_vec(r.iter().map(|v| -v).collect());
        let Ok(step) = jac.svd(true, true).solve(&rhs, 1e-14) else {
            break;
        };
        let mut lambda = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let trial: Vec<f64> = k.iter().zip(step.iter()).map(|(a, d)| a + lambda * d).collect();
            let rt = f(&trial);
            let nt = two_norm(&rt);
            if nt < norm {
                k = trial;
                r = rt;
                norm = nt;
                improved = true;
                break;
            }
            lambda *= 0.5;
        }
        if !improved {
            break;
        }
    }
    let norm = max_abs(&r);
    (k, norm)
}

/// Positions (or full states for first-order rules) along `t_grid`.
pub fn reconstruct(
    eval: &RuleEvaluator,
    k: &[f64],
    branch: &[f64],
    particular: &[Trajectory],
    t_grid: &[f64],
) -> Result<Vec<Vec<f64>>, ReconstructError> {
    let width = eval.rule.components().len();
    if let Some((t, constraint)) = eval.along_violation(particular, t_grid) {
        return Err(ReconstructError::Genericity { t, constraint });
    }
    let branches = eval.branches_along(branch, particular, t_grid);
    let mut out = Vec::with_capacity(t_grid.len());
    for (&t, branch) in t_grid.iter().zip(&branches) {
        let p = particular_state(particular, t).ok_or(ReconstructError::OutOfRange(t))?;
        let values = eval.eval(t, &p, k, branch);
        let x = values[..width].to_vec();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ReconstructError::NonFinite { t });
        }
        out.push(x);
    }
    Ok(out)
}

/// Evaluate every genericity condition, including those on the target copy,
/// on initial states of copies `0..=m`; true if all hold with `margin`.
pub fn generic_at(rule: &SuperpositionRule, t: f64, states: &[f64], margin: f64) -> bool {
    let mut slots = vec![TIME.to_string()];
    slots.extend(copy_coordinates(rule.levels(), 0, rule.m()));
    let exprs: Vec<Expr> = rule.genericity().iter().map(|c| c.expr.clone()).collect();
    let Ok(tape) = Tape::compile(&exprs, &slots) else {
        return false;
    };
    let mut input = vec![t];
    input.extend_from_slice(states);
    tape.eval(&input)
        .iter()
        .zip(rule.genericity())
        .all(|(v, c)| c.holds(*v, margin))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::{integrate_ivp, IvpOptions};
    use crate::srules::rule::RuleSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(name: &str, kind: RuleKind, m: usize, constants: &[&str], component: &str) -> RuleSpec {
        RuleSpec {
            name: name.into(),
            kind: Some(kind),
            m,
            constants: constants.iter().map(|s| s.to_string()).collect(),
            components: vec![component.into()],
            ..RuleSpec::default()
        }
    }

    fn solve(system: &OdeSystem, y0: &[f64], t1: f64) -> Trajectory {
        integrate_ivp(&system.to_first_order(), y0, (0.0, t1), &[], &IvpOptions::default()).unwrap()
    }

    #[test]
    fn free_particle_fit() {
        let s = OdeSystem::builder(2).positions(&["x"]).rhs(&["0"]).build().unwrap();
        let rule = SuperpositionRule::new(spec("r", RuleKind::General, 1, &["k1", "k2"], "v_(1)*(k1*x_(1) + k2)"), &s).unwrap();
        let eval = RuleEvaluator::new(&rule, &s, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fit = fit_constants(&eval, 0.0, &[0.0, 1.0], &[2.0, 3.0], &FitOptions::default(), &mut rng).unwrap();
        assert!((fit.constants[0] - 3.0).abs() < 1e-9);
        assert!((fit.constants[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn identity_target_gives_zero_constants() {
        let s = OdeSystem::builder(2).positions(&["x"]).rhs(&["t^2"]).build().unwrap();
        let mut sp = spec("r", RuleKind::Base, 2, &["k1", "k2"], "k1*(x_(1) - x_(2)) + x_(1) + k2");
        sp.genericity = vec!["v_(1) != v_(2)".into()];
        let rule = SuperpositionRule::new(sp, &s).unwrap();
        let eval = RuleEvaluator::new(&rule, &s, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = [0.3, 1.0, -0.2, 0.4];
        let fit = fit_constants(&eval, 0.0, &p, &[0.3, 1.0], &FitOptions::default(), &mut rng).unwrap();
        assert!(fit.constants.iter().all(|k| k.abs() < 1e-9), "{fit:?}");
    }

    #[test]
    fn linear_superposition_reconstructs() {
        let s = OdeSystem::builder(2).positions(&["x"]).rhs(&["-x"]).build().unwrap();
        let rule = SuperpositionRule::new(
            spec("r", RuleKind::Base, 2, &["k1", "k2"], "k1*x_(1) + k2*x_(2)"),
            &s,
        )
        .unwrap();
        let eval = RuleEvaluator::new(&rule, &s, 1);
        let cos = solve(&s, &[1.0, 0.0], 3.0);
        let sin = solve(&s, &[0.0, 1.0], 3.0);
        let grid: Vec<f64> = (0..=30).map(|i| i as f64 * 0.1).collect();
        let x = reconstruct(&eval, &[1.0, 1.0], &[], &[cos, sin], &grid).unwrap();
        for (t, xt) in grid.iter().zip(&x) {
            assert!((xt[0] - (t.cos() + t.sin())).abs() < 1e-8);
        }
    }

    #[test]
    fn genericity_failure_is_reported_with_time() {
        let s = OdeSystem::builder(2).positions(&["x"]).rhs(&["0"]).build().unwrap();
        let mut sp = spec("r", RuleKind::Partial, 2, &["k1"], "(x_(1) - x_(2))*k1 + x_(1)");
        sp.genericity = vec!["x_(1) != x_(2)".into()];
        let rule = SuperpositionRule::new(sp, &s).unwrap();
        let eval = RuleEvaluator::new(&rule, &s, 1);
        let a = solve(&s, &[0.0, 1.0], 2.0);
        let b = solve(&s, &[1.0, 0.0], 2.0);
        let grid: Vec<f64> = (0..=20).map(|i| i as f64 * 0.1).collect();
        match reconstruct(&eval, &[0.5], &[], &[a, b], &grid) {
            Err(ReconstructError::Genericity { t, .. }) => assert!((1.0..=1.1 + 1e-12).contains(&t), "{t}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn branches_enumerate_all_signs() {
        assert_eq!(branch_patterns(0), vec![Vec::<f64>::new()]);
        assert_eq!(branch_patterns(2).len(), 4);
    }
}
