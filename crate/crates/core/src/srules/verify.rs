use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::expr::{
    is_zero_probabilistic_on, Expr, SampleBox, Tape, ZeroTestOptions, ZeroVerdict, TIME,
};
use crate::integrate::{integrate_ivp, IvpOptions, Trajectory};
use crate::sode::{Constraint, OdeSystem, Relation};
use crate::vfield::{apply, copy_name, TimeDepVectorField};

use super::catalog::{CatalogEntry, FirstIntegral};
use super::fit::{fit_constants, generic_at, particular_state, reconstruct, FitOptions, RuleEvaluator};
use super::rule::{copy_coordinates, RuleKind, SuperpositionRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    /// Pass if every outcome passes, inconclusive if none failed but some
    /// could not be decided.
    fn combine(outcomes: impl IntoIterator<Item = Verdict>) -> Verdict {
        let mut out = Verdict::Pass;
        for v in outcomes {
            match v {
                Verdict::Fail => return Verdict::Fail,
                Verdict::Inconclusive => out = Verdict::Inconclusive,
                Verdict::Pass => {}
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error("{0}")]
    Invalid(String),
    #[error("only {finite} of {needed} sample points were usable")]
    Sampling { finite: usize, needed: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VerifyOptions {
    pub trials: usize,
    pub seed: u64,
    /// Bound on the reconstruction error over the grid.
    pub tol: f64,
    /// Bound on the relative drift of the rule's auxiliary integrals.
    pub drift_tol: f64,
    /// Overrides the entry's time span.
    pub t_span: Option<(f64, f64)>,
    pub grid_points: usize,
    /// Margin by which sampled data must satisfy strict inequalities.
    pub margin: f64,
    pub max_resamples: usize,
    pub ivp: IvpOptions,
    pub fit: FitOptions,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            trials: 20,
            seed: 0,
            tol: 1e-6,
            drift_tol: 1e-7,
            t_span: None,
            grid_points: 201,
            margin: 0.1,
            max_resamples: 2000,
            ivp: IvpOptions::default(),
            fit: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialReport {
    pub index: usize,
    pub seed: u64,
    /// Initial states, target first (absent for partial rules), then the
    /// particular solutions.
    pub initial_data: Vec<Vec<f64>>,
    pub constants: Vec<f64>,
    pub branch: Vec<f64>,
    pub fit_residual: Option<f64>,
    pub max_error: f64,
    pub integral_drift: BTreeMap<String, f64>,
    pub resamples: usize,
    pub passed: bool,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub entry: String,
    pub rule: String,
    pub kind: RuleKind,
    pub t_span: (f64, f64),
    pub trials: Vec<TrialReport>,
    pub max_error: f64,
    pub verdict: Verdict,
    pub tolerances: VerifyOptions,
}

fn trial_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn grid(t_span: (f64, f64), points: usize) -> Vec<f64> {
    let points = points.max(2);
    let (a, b) = t_span;
    (0..points)
        .map(|i| if i + 1 == points { b } else { a + (b - a) * i as f64 / (points - 1) as f64 })
        .collect()
}

fn relative_drift(values: &[f64]) -> f64 {
    let Some(&first) = values.first() else { return 0.0 };
    let scale = first.abs().max(1.0);
    values
        .iter()
        .map(|v| if v.is_finite() { (v - first).abs() / scale } else { f64::INFINITY })
        .fold(0.0, f64::max)
}

/// Samples initial states and checks them against a set of conditions.
struct Sampler<'a> {
    system: &'a OdeSystem,
    sample_box: &'a SampleBox,
    state_check: Tape,
    state_constraints: &'a [Constraint],
    margin: f64,
}

impl<'a> Sampler<'a> {
    fn new(entry: &'a CatalogEntry, margin: f64) -> Self {
        let system = &entry.system;
        let exprs: Vec<Expr> = system.constraints().iter().map(|c| c.expr.clone()).collect();
        let state_check = Tape::compile(&exprs, &Self::slots(system)).expect("constraints use system symbols");
        Sampler {
            system,
            sample_box: &entry.sample_box,
            state_check,
            state_constraints: system.constraints(),
            margin,
        }
    }

    fn slots(system: &OdeSystem) -> Vec<String> {
        let mut s = vec![TIME.to_string()];
        s.extend(system.coordinate_names());
        s
    }

    /// A state satisfying the system constraints with margin.
    fn state<R: Rng + ?Sized>(&self, t0: f64, rng: &mut R) -> Option<Vec<f64>> {
        let names = self.system.coordinate_names();
        let state: Vec<f64> = names.iter().map(|n| self.sample_box.sample(n, rng)).collect();
        let mut input = vec![t0];
        input.extend_from_slice(&state);
        let ok = self
            .state_check
            .eval(&input)
            .iter()
            .zip(self.state_constraints)
            .all(|(v, c)| c.holds(*v, self.margin));
        ok.then_some(state)
    }
}

fn integrate_all(
    lift: &TimeDepVectorField,
    system: &OdeSystem,
    states: &[Vec<f64>],
    t_span: (f64, f64),
    opts: &IvpOptions,
) -> Option<Vec<Trajectory>> {
    states
        .iter()
        .map(|y0| integrate_ivp(lift, y0, t_span, system.constraints(), opts).ok())
        .collect()
}

/// Max-norm distance between `values` and a trajectory over `t_grid`.
fn max_distance(values: &[Vec<f64>], reference: &Trajectory, t_grid: &[f64], width: usize) -> f64 {
    let mut worst = 0.0f64;
    for (row, &t) in values.iter().zip(t_grid) {
        let Ok(r) = reference.dense_eval(t) else { return f64::INFINITY };
        for (a, b) in row.iter().zip(&r[..width]) {
            let d = (a - b).abs();
            if !d.is_finite() {
                return f64::INFINITY;
            }
            worst = worst.max(d);
        }
    }
    worst
}

struct RuleContext<'a> {
    entry: &'a CatalogEntry,
    rule: &'a SuperpositionRule,
    lift: TimeDepVectorField,
    eval: RuleEvaluator<'a>,
    auxiliary: Vec<(String, Tape)>,
    sampler: Sampler<'a>,
    t_span: (f64, f64),
    t_grid: Vec<f64>,
    opts: VerifyOptions,
}

enum Attempt {
    Resample,
    Done(Box<TrialReport>),
}

impl RuleContext<'_> {
    fn run(&self, index: usize) -> TrialReport {
        let seed = trial_seed(self.opts.seed, index);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for resamples in 0..=self.opts.max_resamples {
            let attempt = if self.rule.kind == RuleKind::Partial {
                self.partial_attempt(&mut rng)
            } else {
                self.full_attempt(&mut rng)
            };
            if let Attempt::Done(mut report) = attempt {
                report.index = index;
                report.seed = seed;
                report.resamples = resamples;
                return *report;
            }
        }
        TrialReport {
            index,
            seed,
            initial_data: Vec::new(),
            constants: Vec::new(),
            branch: Vec::new(),
            fit_residual: None,
            max_error: f64::NAN,
            integral_drift: BTreeMap::new(),
            resamples: self.opts.max_resamples,
            passed: false,
            failure: Some(format!(
                "no generic initial data found in {} draws",
                self.opts.max_resamples + 1
            )),
        }
    }

    fn drift(&self, particular: &[Trajectory]) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for (name, tape) in &self.auxiliary {
            let values: Vec<f64> = self
                .t_grid
                .iter()
                .map(|&t| {
                    let mut input = vec![t];
                    input.extend(particular_state(particular, t).unwrap_or_default());
                    tape.eval(&input).first().copied().unwrap_or(f64::NAN)
                })
                .collect();
            out.insert(name.clone(), relative_drift(&values));
        }
        out
    }

    /// Particular solutions first, kept only if they stay in the rule's
    /// domain over the whole grid; then a target, fitted and reconstructed.
    fn full_attempt<R: Rng + ?Sized>(&self, rng: &mut R) -> Attempt {
        let (t0, _) = self.t_span;
        let m = self.rule.m();
        let mut states = Vec::with_capacity(m + 1);
        for _ in 0..=m {
            match self.sampler.state(t0, rng) {
                Some(s) => states.push(s),
                None => return Attempt::Resample,
            }
        }
        let lift = &self.lift;
        let system = &self.entry.system;
        let Some(particular) = integrate_all(lift, system, &states[1..], self.t_span, &self.opts.ivp) else {
            return Attempt::Resample;
        };
        if self.eval.along_violation(&particular, &self.t_grid).is_some() {
            return Attempt::Resample;
        }
        let flat: Vec<f64> = states.iter().flatten().copied().collect();
        if !generic_at(self.rule, t0, &flat, self.opts.margin) {
            return Attempt::Resample;
        }
        let Ok(target) = integrate_ivp(lift, &states[0], self.t_span, system.constraints(), &self.opts.ivp) else {
            return Attempt::Resample;
        };
        let p0 = particular_state(&particular, t0).expect("t0 is inside every trajectory");
        let jet_width = self.eval.levels() * self.rule.components().len();
        let fitted = fit_constants(&self.eval, t0, &p0, &states[0][..jet_width], &self.opts.fit, rng);
        let mut report = TrialReport {
            index: 0,
            seed: 0,
            initial_data: states.clone(),
            constants: Vec::new(),
            branch: Vec::new(),
            fit_residual: None,
            max_error: f64::NAN,
            integral_drift: self.drift(&particular),
            resamples: 0,
            passed: false,
            failure: None,
        };
        let fit = match fitted {
            Ok(fit) => fit,
            Err(e) => {
                report.failure = Some(e.to_string());
                return Attempt::Done(Box::new(report));
            }
        };
        report.constants = fit.constants.clone();
        report.branch = fit.branch.clone();
        report.fit_residual = Some(fit.residual);
        match reconstruct(&self.eval, &fit.constants, &fit.branch, &particular, &self.t_grid) {
            Ok(values) => {
                let width = self.rule.components().len();
                report.max_error = max_distance(&values, &target, &self.t_grid, width);
            }
            Err(e) => {
                report.failure = Some(e.to_string());
                return Attempt::Done(Box::new(report));
            }
        }
        self.judge(&mut report);
        Attempt::Done(Box::new(report))
    }

    fn partial_attempt<R: Rng + ?Sized>(&self, rng: &mut R) -> Attempt {
        let (t0, _) = self.t_span;
        let m = self.rule.m();
        let mut states = Vec::with_capacity(m);
        for _ in 0..m {
            match self.sampler.state(t0, rng) {
                Some(s) => states.push(s),
                None => return Attempt::Resample,
            }
        }
        let Some(particular) = integrate_all(&self.lift, &self.entry.system, &states, self.t_span, &self.opts.ivp)
        else {
            return Attempt::Resample;
        };
        let k: Vec<f64> = self
            .rule
            .k_box()
            .iter()
            .map(|&(lo, hi)| rng.random_range(lo..hi))
            .collect();
        let branch: Vec<f64> = self
            .rule
            .branches()
            .iter()
            .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        let p0 = particular_state(&particular, t0).expect("t0 is inside every trajectory");
        // the reconstruction's own initial jet seeds the reference solution
        let jet0 = self.eval.eval(t0, &p0, &k, &branch);
        if jet0.iter().any(|v| !v.is_finite()) {
            return Attempt::Resample;
        }
        let mut report = TrialReport {
            index: 0,
            seed: 0,
            initial_data: states,
            constants: k.clone(),
            branch: branch.clone(),
            fit_residual: None,
            max_error: f64::NAN,
            integral_drift: self.drift(&particular),
            resamples: 0,
            passed: false,
            failure: None,
        };
        let Ok(reference) = integrate_ivp(&self.lift, &jet0, self.t_span, self.entry.system.constraints(), &self.opts.ivp)
        else {
            return Attempt::Resample;
        };
        if self.eval.along_violation(&particular, &self.t_grid).is_some() {
            return Attempt::Resample;
        }
        match reconstruct(&self.eval, &k, &branch, &particular, &self.t_grid) {
            Ok(values) => {
                report.max_error = max_distance(&values, &reference, &self.t_grid, self.rule.n());
            }
            Err(e) => {
                report.failure = Some(e.to_string());
                return Attempt::Done(Box::new(report));
            }
        }
        self.judge(&mut report);
        Attempt::Done(Box::new(report))
    }

    fn judge(&self, report: &mut TrialReport) {
        let error_ok = report.max_error < self.opts.tol;
        let drift_ok = report.integral_drift.values().all(|d| *d < self.opts.drift_tol);
        report.passed = error_ok && drift_ok;
        if !error_ok {
            report.failure = Some(format!("reconstruction error {:e}", report.max_error));
        } else if !drift_ok {
            report.failure = Some("auxiliary integral drift above tolerance".into());
        }
    }
}

/// Sample generic data, integrate, fit, reconstruct and compare, once per trial.
pub fn verify_superposition(
    entry: &CatalogEntry,
    rule: &SuperpositionRule,
    opts: &VerifyOptions,
) -> Result<VerificationReport, VerifyError> {
    if opts.trials == 0 {
        return Err(VerifyError::Invalid("at least one trial is required".into()));
    }
    if !(opts.tol > 0.0 && opts.drift_tol > 0.0) {
        return Err(VerifyError::Invalid("tolerances must be positive".into()));
    }
    let t_span = opts.t_span.unwrap_or(entry.t_span);
    if !(t_span.1 > t_span.0) {
        return Err(VerifyError::Invalid(format!("bad time span [{}, {}]", t_span.0, t_span.1)));
    }
    let levels = match rule.kind {
        RuleKind::Partial => entry.system.order(),
        _ => rule.fitted_levels(),
    };
    let mut slots = vec![TIME.to_string()];
    slots.extend(rule.particular_coordinates());
    let auxiliary = rule
        .auxiliary_integrals()
        .iter()
        .map(|(name, e)| {
            Tape::compile(std::slice::from_ref(e), &slots)
                .map(|t| (name.clone(), t))
                .map_err(|e| VerifyError::Invalid(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let ctx = RuleContext {
        entry,
        rule,
        lift: entry.system.to_first_order(),
        eval: RuleEvaluator::new(rule, &entry.system, levels),
        auxiliary,
        sampler: Sampler::new(entry, opts.margin),
        t_span,
        t_grid: grid(t_span, opts.grid_points),
        opts: *opts,
    };
    let trials: Vec<TrialReport> = (0..opts.trials).into_par_iter().map(|i| ctx.run(i)).collect();
    let verdict = Verdict::combine(trials.iter().map(|t| {
        if t.passed {
            Verdict::Pass
        } else if t.initial_data.is_empty() {
            Verdict::Inconclusive
        } else {
            Verdict::Fail
        }
    }));
    let max_error = trials.iter().map(|t| t.max_error).fold(0.0, |a: f64, b| if b.is_nan() { a } else { a.max(b) });
    Ok(VerificationReport {
        entry: entry.name.clone(),
        rule: rule.name.clone(),
        kind: rule.kind,
        t_span,
        trials,
        max_error,
        verdict,
        tolerances: *opts,
    })
}

/// Reference solution and reconstruction of one trial, sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialCurves {
    pub t: Vec<f64>,
    pub reference: Vec<Vec<f64>>,
    pub reconstructed: Vec<Vec<f64>>,
}

/// Rebuild the curves behind a trial report from its initial data and constants.
pub fn trial_curves(
    entry: &CatalogEntry,
    rule: &SuperpositionRule,
    trial: &TrialReport,
    report: &VerificationReport,
) -> Result<TrialCurves, VerifyError> {
    let opts = &report.tolerances;
    let invalid = |m: &str| VerifyError::Invalid(format!("trial {}: {m}", trial.index));
    if trial.initial_data.is_empty() || trial.constants.is_empty() && !rule.constants().is_empty() {
        return Err(invalid("no fitted data to plot"));
    }
    let t_grid = grid(report.t_span, opts.grid_points);
    let system = &entry.system;
    let lift = system.to_first_order();
    let partial = rule.kind == RuleKind::Partial;
    let levels = if partial { system.order() } else { rule.fitted_levels() };
    let eval = RuleEvaluator::new(rule, system, levels);
    let particular_states = if partial { &trial.initial_data[..] } else { &trial.initial_data[1..] };
    let particular = integrate_all(&lift, system, particular_states, report.t_span, &opts.ivp)
        .ok_or_else(|| invalid("a particular solution could not be integrated"))?;
    let start = if partial {
        let p0 = particular_state(&particular, report.t_span.0).expect("t0 is inside every trajectory");
        eval.eval(report.t_span.0, &p0, &trial.constants, &trial.branch)
    } else {
        trial.initial_data[0].clone()
    };
    let reference = integrate_ivp(&lift, &start, report.t_span, system.constraints(), &opts.ivp)
        .map_err(|e| invalid(&e.to_string()))?;
    let reconstructed = reconstruct(&eval, &trial.constants, &trial.branch, &particular, &t_grid)
        .map_err(|e| invalid(&e.to_string()))?;
    let width = rule.components().len();
    let reference = t_grid
        .iter()
        .map(|&t| reference.dense_eval(t).map(|s| s[..width].to_vec()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| invalid(&e.to_string()))?;
    Ok(TrialCurves {
        t: t_grid,
        reference,
        reconstructed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConserveOptions {
    pub trials: usize,
    pub seed: u64,
    pub tol: f64,
    pub t_span: Option<(f64, f64)>,
    pub grid_points: usize,
    pub margin: f64,
    pub max_resamples: usize,
    pub ivp: IvpOptions,
    pub zero: ZeroTestOptions,
}

impl Default for ConserveOptions {
    fn default() -> Self {
        ConserveOptions {
            trials: 20,
            seed: 0,
            tol: 1e-7,
            t_span: None,
            grid_points: 201,
            margin: 0.1,
            max_resamples: 200,
            ivp: IvpOptions::default(),
            zero: ZeroTestOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftTrial {
    pub index: usize,
    pub seed: u64,
    pub initial_data: Vec<Vec<f64>>,
    pub initial_value: f64,
    pub drift: f64,
    pub resamples: usize,
    pub passed: bool,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConservationReport {
    pub entry: String,
    pub integral: String,
    pub copies: usize,
    pub time_dependent: bool,
    pub trials: Vec<DriftTrial>,
    pub max_drift: f64,
    /// Zero test of `dI/dt + X_D I` on the integral's domain.
    pub annihilation: ZeroVerdict,
    pub verdict: Verdict,
    pub tolerances: ConserveOptions,
}

/// Domain constraints as expressions that must be positive.
fn positive_forms(constraints: &[Constraint]) -> Vec<Expr> {
    constraints
        .iter()
        .map(|c| match c.relation {
            Relation::Positive => c.expr.clone(),
            Relation::Nonzero => c.expr.powi(2),
        })
        .collect()
}

/// The total derivative of `integral` along solutions, `dI/dt + X_D I`.
pub fn integral_derivative(system: &OdeSystem, integral: &FirstIntegral) -> Expr {
    let (xd, _) = system.xd_xl_range(1, integral.copies);
    integral.expr.differentiate(TIME).add(&apply(&xd, &integral.expr))
}

/// Evaluate an integral along tuples of solutions and zero-test its total derivative.
pub fn check_first_integral_conservation(
    entry: &CatalogEntry,
    integral_name: &str,
    opts: &ConserveOptions,
) -> Result<ConservationReport, VerifyError> {
    let integral = entry
        .integral(integral_name)
        .ok_or_else(|| VerifyError::Invalid(format!("entry `{}` has no integral `{integral_name}`", entry.name)))?;
    if opts.trials == 0 || !(opts.tol > 0.0) {
        return Err(VerifyError::Invalid("need at least one trial and a positive tolerance".into()));
    }
    let t_span = opts.t_span.unwrap_or(entry.t_span);
    let t_grid = grid(t_span, opts.grid_points);
    let system = &entry.system;
    let mut slots = vec![TIME.to_string()];
    slots.extend(copy_coordinates(system.levels(), 1, integral.copies));
    let value_tape =
        Tape::compile(std::slice::from_ref(&integral.expr), &slots).map_err(|e| VerifyError::Invalid(e.to_string()))?;
    let domain_exprs: Vec<Expr> = integral.domain.iter().map(|c| c.expr.clone()).collect();
    let domain_tape = Tape::compile(&domain_exprs, &slots).map_err(|e| VerifyError::Invalid(e.to_string()))?;
    let lift = system.to_first_order();
    let sampler = Sampler::new(entry, opts.margin);

    let run = |index: usize| -> DriftTrial {
        let seed = trial_seed(opts.seed, index);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let in_domain = |t: f64, flat: &[f64], margin: f64| {
            let mut input = vec![t];
            input.extend_from_slice(flat);
            domain_tape
                .eval(&input)
                .iter()
                .zip(&integral.domain)
                .all(|(v, c)| c.holds(*v, margin))
        };
        'draw: for resamples in 0..=opts.max_resamples {
            let mut states = Vec::new();
            for _ in 0..integral.copies {
                match sampler.state(t_span.0, &mut rng) {
                    Some(s) => states.push(s),
                    None => continue 'draw,
                }
            }
            let flat: Vec<f64> = states.iter().flatten().copied().collect();
            if !in_domain(t_span.0, &flat, opts.margin) {
                continue;
            }
            let Some(trajectories) = integrate_all(&lift, system, &states, t_span, &opts.ivp) else {
                continue;
            };
            let mut values = Vec::with_capacity(t_grid.len());
            for &t in &t_grid {
                let p = particular_state(&trajectories, t).expect("grid inside span");
                if !in_domain(t, &p, 0.0) {
                    continue 'draw;
                }
                let mut input = vec![t];
                input.extend(p);
                values.push(value_tape.eval(&input)[0]);
            }
            let drift = relative_drift(&values);
            let passed = drift < opts.tol;
            return DriftTrial {
                index,
                seed,
                initial_data: states,
                initial_value: values[0],
                drift,
                resamples,
                passed,
                failure: (!passed).then(|| format!("drift {drift:e}")),
            };
        }
        DriftTrial {
            index,
            seed,
            initial_data: Vec::new(),
            initial_value: f64::NAN,
            drift: f64::NAN,
            resamples: opts.max_resamples,
            passed: false,
            failure: Some("no initial data stayed in the integral's domain".into()),
        }
    };
    let trials: Vec<DriftTrial> = (0..opts.trials).into_par_iter().map(run).collect();

    let derivative = integral_derivative(system, integral);
    let mut zero_box = entry.copy_box(integral.copies);
    zero_box.overrides.insert(TIME.into(), t_span);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let annihilation = is_zero_probabilistic_on(
        &derivative,
        &zero_box,
        &positive_forms(&integral.domain),
        &opts.zero,
        &mut rng,
    );
    let annihilation_verdict = match annihilation {
        ZeroVerdict::Zero => Verdict::Pass,
        ZeroVerdict::Nonzero { .. } => Verdict::Fail,
        ZeroVerdict::Inconclusive { .. } => Verdict::Inconclusive,
    };
    let verdict = Verdict::combine(
        trials
            .iter()
            .map(|t| match (t.passed, t.initial_data.is_empty()) {
                (true, _) => Verdict::Pass,
                (false, true) => Verdict::Inconclusive,
                (false, false) => Verdict::Fail,
            })
            .chain([annihilation_verdict]),
    );
    let max_drift = trials.iter().map(|t| t.drift).fold(0.0, |a: f64, b| if b.is_nan() { a } else { a.max(b) });
    Ok(ConservationReport {
        entry: entry.name.clone(),
        integral: integral.name.clone(),
        copies: integral.copies,
        time_dependent: integral.is_time_dependent(),
        trials,
        max_drift,
        annihilation,
        verdict,
        tolerances: *opts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CharResidual {
    /// Largest `|lhs - rhs|` over the usable points.
    pub max_abs: f64,
    /// Largest `|lhs - rhs| / max(1, |lhs|, |rhs|)`.
    pub max_scaled: f64,
    pub points_used: usize,
    pub points_drawn: usize,
}

/// Options for [`char_residual`].
#[derive(Debug, Clone, PartialEq)]
pub struct CharOptions {
    pub sample_box: SampleBox,
    pub times: Vec<f64>,
    pub points: usize,
    pub seed: u64,
    /// Conditions (over copies `1..=m`) sampled points must satisfy.
    pub domain: Vec<Constraint>,
    pub margin: f64,
}

/// Residual of `D^2 u + X_L u = F(t, u, D u)` with `D u = X_D u`, for a
/// family `u` over copies `1..=m` of a second-order system and constants.
///
/// Free symbols of `u` that are not coordinates or `t` (the constants and
/// branch symbols) are sampled from `sample_box` as well.
pub fn char_residual(
    system: &OdeSystem,
    u: &[Expr],
    m: usize,
    opts: &CharOptions,
) -> Result<CharResidual, VerifyError> {
    if system.order() != 2 {
        return Err(VerifyError::Invalid("the residual is defined for second-order systems".into()));
    }
    if u.len() != system.n() {
        return Err(VerifyError::Invalid(format!("{} components for {} positions", u.len(), system.n())));
    }
    if opts.times.is_empty() || opts.points == 0 {
        return Err(VerifyError::Invalid("need time samples and sample points".into()));
    }
    let (xd, xl) = system.build_xd_xl(m);
    let du: Vec<Expr> = u.iter().map(|c| apply(&xd, c)).collect();
    let lhs: Vec<Expr> = u
        .iter()
        .zip(&du)
        .map(|(c, d)| apply(&xd, d).add(&apply(&xl, c)))
        .collect();
    let mut subst: HashMap<String, Expr> = HashMap::new();
    for (i, name) in system.levels()[0].iter().enumerate() {
        subst.insert(name.clone(), u[i].clone());
    }
    for (i, name) in system.levels()[1].iter().enumerate() {
        subst.insert(name.clone(), du[i].clone());
    }
    let rhs: Vec<Expr> = system.rhs().iter().map(|f| f.substitute(&subst)).collect();

    let mut slots = vec![TIME.to_string()];
    slots.extend(copy_coordinates(system.levels(), 1, m));
    let mut extra: Vec<String> = lhs
        .iter()
        .chain(&rhs)
        .flat_map(|e| e.free_symbols())
        .filter(|s| !slots.contains(s))
        .collect();
    extra.sort();
    extra.dedup();
    slots.extend(extra.iter().cloned());
    let mut exprs = lhs.clone();
    exprs.extend(rhs.iter().cloned());
    exprs.extend(opts.domain.iter().map(|c| c.expr.clone()));
    let tape = Tape::compile(&exprs, &slots).map_err(|e| VerifyError::Invalid(e.to_string()))?;

    let n = system.n();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out = CharResidual {
        max_abs: 0.0,
        max_scaled: 0.0,
        points_used: 0,
        points_drawn: 0,
    };
    let budget = opts.points * 50;
    while out.points_used < opts.points && out.points_drawn < budget {
        out.points_drawn += 1;
        let t = opts.times[out.points_drawn % opts.times.len()];
        let mut input = vec![t];
        input.extend(slots[1..].iter().map(|s| opts.sample_box.sample(s, &mut rng)));
        let values = tape.eval(&input);
        let domain_ok = values[2 * n..]
            .iter()
            .zip(&opts.domain)
            .all(|(v, c)| c.holds(*v, opts.margin));
        if !domain_ok || values[..2 * n].iter().any(|v| !v.is_finite()) {
            continue;
        }
        out.points_used += 1;
        for i in 0..n {
            let (l, r) = (values[i], values[n + i]);
            let d = (l - r).abs();
            out.max_abs = out.max_abs.max(d);
            out.max_scaled = out.max_scaled.max(d / 1f64.max(l.abs()).max(r.abs()));
        }
    }
    if out.points_used < opts.points {
        return Err(VerifyError::Sampling {
            finite: out.points_used,
            needed: opts.points,
        });
    }
    Ok(out)
}

/// Sampling setup for the residual of a catalog rule's components.
pub fn char_options_for(entry: &CatalogEntry, rule: &SuperpositionRule, seed: u64) -> Vec<CharOptions> {
    let mut base = entry.copy_box(rule.m());
    for (k, interval) in rule.constants().iter().zip(rule.k_box()) {
        base.overrides.insert(k.clone(), *interval);
    }
    // one option set per branch pattern, branch symbols pinned to +-1
    let patterns = 1usize << rule.branches().len();
    let along: Vec<Constraint> = rule
        .genericity()
        .iter()
        .filter(|c| c.expr.free_symbols().iter().all(|s| !s.ends_with("_(0)")))
        .cloned()
        .collect();
    (0..patterns)
        .map(|bits| {
            let mut b = base.clone();
            for (i, s) in rule.branches().iter().enumerate() {
                let v = if bits >> i & 1 == 0 { 1.0 } else { -1.0 };
                b.overrides.insert(s.clone(), (v, v));
            }
            CharOptions {
                sample_box: b,
                times: grid(entry.t_span, 7),
                points: 200,
                seed,
                domain: along.clone(),
                margin: 0.1,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum XlVerdict {
    Annihilates,
    /// `X_L` applied to a component is not identically zero.
    Nonzero {
        component: usize,
        witness: BTreeMap<String, f64>,
        value: f64,
    },
    /// The rule references `t`, so it is not a superposition rule at all.
    TimeDependentRule,
    Inconclusive,
}

/// Zero-test `X_L^{(m)}` applied to each component of `rule`.
pub fn check_xl_annihilates(
    entry: &CatalogEntry,
    rule: &SuperpositionRule,
    zero: &ZeroTestOptions,
    seed: u64,
) -> XlVerdict {
    if !rule.is_time_free() {
        return XlVerdict::TimeDependentRule;
    }
    let (_, xl) = entry.system.build_xd_xl(rule.m());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inconclusive = false;
    for opts in char_options_for(entry, rule, seed) {
        let mut b = opts.sample_box.clone();
        b.overrides.insert(TIME.into(), entry.t_span);
        let domain = positive_forms(&opts.domain);
        for (i, c) in rule.components().iter().enumerate() {
            let e = apply(&xl, c);
            match is_zero_probabilistic_on(&e, &b, &domain, zero, &mut rng) {
                ZeroVerdict::Zero => {}
                ZeroVerdict::Nonzero { witness, value } => {
                    return XlVerdict::Nonzero {
                        component: i,
                        witness,
                        value,
                    }
                }
                ZeroVerdict::Inconclusive { .. } => inconclusive = true,
            }
        }
    }
    if inconclusive {
        XlVerdict::Inconclusive
    } else {
        XlVerdict::Annihilates
    }
}

/// Zero-test `X_D^{(m)}` applied to each auxiliary integral of a rule.
pub fn check_auxiliary_integrals(
    entry: &CatalogEntry,
    rule: &SuperpositionRule,
    zero: &ZeroTestOptions,
    seed: u64,
) -> Vec<(String, ZeroVerdict)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = entry.copy_box(rule.m());
    b.overrides.insert(TIME.into(), entry.t_span);
    rule.auxiliary_integrals()
        .iter()
        .map(|(name, e)| {
            let integral = FirstIntegral {
                name: name.clone(),
                copies: rule.m(),
                expr: e.clone(),
                domain: Vec::new(),
            };
            let d = integral_derivative(&entry.system, &integral);
            (name.clone(), is_zero_probabilistic_on(&d, &b, &[], zero, &mut rng))
        })
        .collect()
}

/// Names `x_(a)` of the copy-`a` positions, handy for building test families.
pub fn position_copies(system: &OdeSystem, a: usize) -> Vec<String> {
    system.positions().iter().map(|p| copy_name(p, a)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::srules::builtin_entry;
    use crate::srules::rule::RuleSpec;

    fn quick(trials: usize, seed: u64) -> VerifyOptions {
        VerifyOptions {
            trials,
            seed,
            ..Default::default()
        }
    }

    fn rule_from(entry: &CatalogEntry, name: &str, component: &str) -> SuperpositionRule {
        let mut spec: RuleSpec = entry.rule(name).unwrap().spec().clone();
        spec.components = vec![component.into()];
        SuperpositionRule::new(spec, &entry.system).unwrap()
    }

    #[test]
    fn verdicts_combine() {
        use Verdict::*;
        assert_eq!(Verdict::combine([Pass, Pass]), Pass);
        assert_eq!(Verdict::combine([Pass, Inconclusive]), Inconclusive);
        assert_eq!(Verdict::combine([Inconclusive, Fail, Pass]), Fail);
        assert_eq!(Verdict::combine([]), Pass);
    }

    #[test]
    fn grid_and_seeds() {
        let g = grid((0.0, 2.0), 201);
        assert_eq!((g[0], g[200], g.len()), (0.0, 2.0, 201));
        let seeds: Vec<u64> = (0..100).map(|i| trial_seed(3, i)).collect();
        let mut sorted = seeds.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), seeds.len());
        assert_eq!(relative_drift(&[2.0, 2.0, 2.0]), 0.0);
        assert!((relative_drift(&[4.0, 4.4]) - 0.1).abs() < 1e-12);
        assert_eq!(relative_drift(&[1.0, f64::NAN]), f64::INFINITY);
    }

    #[test]
    fn free_particle_rule_passes_and_a_wrong_one_fails() {
        let entry = builtin_entry("free").unwrap();
        let rule = &entry.rules[0];
        let report = verify_superposition(&entry, rule, &quick(4, 1)).unwrap();
        assert_eq!(report.verdict, Verdict::Pass, "{report:?}");
        assert!(report.max_error < 1e-8);

        let wrong = rule_from(&entry, &rule.name, "v_(1)*(k1*x_(1) + k2) + 0.01*x_(1)^2");
        let report = verify_superposition(&entry, &wrong, &quick(4, 1)).unwrap();
        assert_eq!(report.verdict, Verdict::Fail);
    }

    #[test]
    fn reports_are_deterministic() {
        let entry = builtin_entry("tsq").unwrap();
        let rule = &entry.rules[0];
        let a = verify_superposition(&entry, rule, &quick(3, 9)).unwrap();
        let b = verify_superposition(&entry, rule, &quick(3, 9)).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = verify_superposition(&entry, rule, &quick(3, 10)).unwrap();
        assert_ne!(a.trials[0].initial_data, c.trials[0].initial_data);
    }

    #[test]
    fn bad_options_are_rejected() {
        let entry = builtin_entry("free").unwrap();
        let rule = &entry.rules[0];
        assert!(verify_superposition(&entry, rule, &quick(0, 0)).is_err());
        let opts = VerifyOptions {
            t_span: Some((1.0, 1.0)),
            ..quick(1, 0)
        };
        assert!(verify_superposition(&entry, rule, &opts).is_err());
    }

    #[test]
    fn conservation_separates_integrals_from_impostors() {
        let mut entry = builtin_entry("mp").unwrap();
        let opts = ConserveOptions {
            trials: 3,
            seed: 2,
            ..Default::default()
        };
        let report = check_first_integral_conservation(&entry, "I3", &opts).unwrap();
        assert_eq!(report.verdict, Verdict::Pass, "{report:?}");
        assert_eq!(report.annihilation, ZeroVerdict::Zero);

        // a perturbed quantity drifts and its derivative is not zero
        let i3 = entry.integral("I3").unwrap().clone();
        let x1 = Expr::var("x_(1)");
        entry.integrals.push(FirstIntegral {
            name: "fake".into(),
            expr: i3.expr.add(&x1),
            ..i3
        });
        let report = check_first_integral_conservation(&entry, "fake", &opts).unwrap();
        assert_eq!(report.verdict, Verdict::Fail);
        assert!(matches!(report.annihilation, ZeroVerdict::Nonzero { .. }));
        assert!(check_first_integral_conservation(&entry, "missing", &opts).is_err());
    }

    #[test]
    fn char_residual_vanishes_only_for_solution_families() {
        let entry = builtin_entry("free").unwrap();
        let rule = &entry.rules[0];
        let opts = &char_options_for(&entry, rule, 4)[0];
        let good = char_residual(&entry.system, rule.components(), rule.m(), opts).unwrap();
        assert!(good.max_abs < 1e-10, "{good:?}");
        assert_eq!(good.points_used, opts.points);

        let square = rule_from(&entry, &rule.name, "x_(1)^2");
        let bad = char_residual(&entry.system, square.components(), 1, opts).unwrap();
        assert!(bad.max_abs > 1e-3);
    }

    #[test]
    fn xl_check_classifies_rules() {
        let entry = builtin_entry("tsq").unwrap();
        let zero = ZeroTestOptions::default();
        for rule in &entry.rules {
            assert_eq!(check_xl_annihilates(&entry, rule, &zero, 1), XlVerdict::Annihilates, "{}", rule.name);
        }
        let timed = rule_from(&entry, "translation", "x_(1) + k1 + t");
        assert_eq!(check_xl_annihilates(&entry, &timed, &zero, 1), XlVerdict::TimeDependentRule);
    }

    #[test]
    fn auxiliary_integrals_are_first_integrals() {
        let entry = builtin_entry("ks2").unwrap();
        let rule = &entry.rules[0];
        let checks = check_auxiliary_integrals(&entry, rule, &ZeroTestOptions::default(), 3);
        assert_eq!(checks.len(), 1);
        assert_eq!(checks[0].1, ZeroVerdict::Zero);
    }
}
