//! Initial value problems for time-dependent vector fields.
//!
//! Two explicit methods: classical RK4 with a fixed step and cubic Hermite
//! dense output, and the adaptive Dormand–Prince 5(4) pair with its
//! fourth-order continuous extension.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::expr::{Expr, Tape, TIME};
use crate::sode::Constraint;
use crate::vfield::TimeDepVectorField;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum Method {
    Rk4 { step: f64 },
    Rk45,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IvpOptions {
    pub method: Method,
    pub atol: f64,
    pub rtol: f64,
    pub max_steps: usize,
}

impl Default for IvpOptions {
    fn default() -> Self {
        IvpOptions {
            method: Method::Rk45,
            atol: 1e-10,
            rtol: 1e-10,
            max_steps: 1_000_000,
        }
    }
}

impl IvpOptions {
    pub fn rk4(step: f64) -> Self {
        IvpOptions {
            method: Method::Rk4 { step },
            ..Self::default()
        }
    }

    pub fn rk45(atol: f64, rtol: f64) -> Self {
        IvpOptions {
            method: Method::Rk45,
            atol,
            rtol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegrateError {
    #[error("state left the domain (`{constraint}`) at t = {t}")]
    DomainExit {
        t: f64,
        constraint: String,
        partial: Box<Trajectory>,
    },
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64, partial: Box<Trajectory> },
    #[error("right-hand side not finite at t = {t}")]
    NonFinite { t: f64, partial: Box<Trajectory> },
    #[error("{0}")]
    Invalid(String),
}

impl IntegrateError {
    /// Trajectory computed before the failure, if any.
    pub fn partial(&self) -> Option<&Trajectory> {
        match self {
            IntegrateError::DomainExit { partial, .. }
            | IntegrateError::StepUnderflow { partial, .. }
            | IntegrateError::NonFinite { partial, .. } => Some(partial),
            IntegrateError::Invalid(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryMeta {
    pub method: Method,
    pub atol: f64,
    pub rtol: f64,
    pub rhs_evaluations: usize,
    pub rejected_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Dense {
    /// Derivatives at every node.
    Hermite(Vec<Vec<f64>>),
    /// Five coefficient vectors per step.
    Dopri(Vec<[Vec<f64>; 5]>),
}

/// A numerical solution with dense output between grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    coords: Vec<String>,
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    dense: Dense,
    meta: TrajectoryMeta,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("t = {t} outside [{start}, {end}]")]
pub struct OutOfRange {
    pub t: f64,
    pub start: f64,
    pub end: f64,
}

impl Trajectory {
    pub fn coords(&self) -> &[String] {
        &self.coords
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn meta(&self) -> &TrajectoryMeta {
        &self.meta
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().expect("trajectories hold at least one node")
    }

    pub fn last_state(&self) -> &[f64] {
        self.states.last().expect("trajectories hold at least one node")
    }

    /// Interpolated state at `t`; the stored state at grid nodes.
    pub fn dense_eval(&self, t: f64) -> Result<Vec<f64>, OutOfRange> {
        let (start, end) = (self.start(), self.end());
        if !(start..=end).contains(&t) {
            return Err(OutOfRange { t, start, end });
        }
        let i = match self.times.binary_search_by(|x| x.total_cmp(&t)) {
            Ok(i) => return Ok(self.states[i].clone()),
            Err(i) => i - 1,
        };
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let h = t1 - t0;
        let theta = (t - t0) / h;
        let y0 = &self.states[i];
        let y1 = &self.states[i + 1];
        Ok(match &self.dense {
            Dense::Hermite(f) => {
                let (f0, f1) = (&f[i], &f[i + 1]);
                let h00 = (1.0 + 2.0 * theta) * (1.0 - theta).powi(2);
                let h10 = theta * (1.0 - theta).powi(2);
                let h01 = theta * theta * (3.0 - 2.0 * theta);
                let h11 = theta * theta * (theta - 1.0);
                (0..y0.len())
                    .map(|k| h00 * y0[k] + h * h10 * f0[k] + h01 * y1[k] + h * h11 * f1[k])
                    .collect()
            }
            Dense::Dopri(c) => {
                let [r1, r2, r3, r4, r5] = &c[i];
                let theta1 = 1.0 - theta;
                (0..y0.len())
                    .map(|k| r1[k] + theta * (r2[k] + theta1 * (r3[k] + theta * (r4[k] + theta1 * r5[k]))))
                    .collect()
            }
        })
    }

    /// Value of one coordinate at `t`.
    pub fn component_at(&self, name: &str, t: f64) -> Option<f64> {
        let k = self.coords.iter().position(|c| c == name)?;
        self.dense_eval(t).ok().map(|s| s[k])
    }

    /// CSV with a `t` column followed by one column per coordinate.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,{}", self.coords.join(","))?;
        for (t, s) in self.times.iter().zip(&self.states) {
            let row: Vec<String> = s.iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{t:e},{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Right-hand side compiled over `(t, coords..)`.
struct Rhs {
    tape: Tape,
    scratch: Vec<f64>,
    input: Vec<f64>,
    evaluations: usize,
}

impl Rhs {
    fn new(x: &TimeDepVectorField) -> Result<Self, IntegrateError> {
        let mut slots = vec![TIME.to_string()];
        slots.extend(x.field().coordinate_names());
        let tape = Tape::compile(x.field().components(), &slots)
            .map_err(|e| IntegrateError::Invalid(e.to_string()))?;
        Ok(Rhs {
            input: vec![0.0; slots.len()],
            tape,
            scratch: Vec::new(),
            evaluations: 0,
        })
    }

    fn eval(&mut self, t: f64, y: &[f64], out: &mut [f64]) -> bool {
        self.evaluations += 1;
        self.input[0] = t;
        self.input[1..].copy_from_slice(y);
        self.tape.eval_into(&self.input, &mut self.scratch, out);
        out.iter().all(|v| v.is_finite())
    }
}

/// Constraints compiled over `(t, coords..)`.
struct Domain<'a> {
    constraints: &'a [Constraint],
    tape: Tape,
    input: Vec<f64>,
    scratch: Vec<f64>,
    out: Vec<f64>,
}

impl<'a> Domain<'a> {
    fn new(constraints: &'a [Constraint], coords: &[String]) -> Result<Self, IntegrateError> {
        let mut slots = vec![TIME.to_string()];
        slots.extend(coords.iter().cloned());
        let exprs: Vec<Expr> = constraints.iter().map(|c| c.expr.clone()).collect();
        let tape = Tape::compile(&exprs, &slots).map_err(|e| IntegrateError::Invalid(e.to_string()))?;
        Ok(Domain {
            constraints,
            tape,
            input: vec![0.0; slots.len()],
            scratch: Vec::new(),
            out: vec![0.0; exprs.len()],
        })
    }

    /// The first violated constraint, if any.
    fn violated(&mut self, t: f64, y: &[f64]) -> Option<&'a Constraint> {
        if self.constraints.is_empty() {
            return None;
        }
        self.input[0] = t;
        self.input[1..].copy_from_slice(y);
        self.tape.eval_into(&self.input, &mut self.scratch, &mut self.out);
        self.constraints
            .iter()
            .zip(&self.out)
            .find(|(c, v)| !c.holds(**v, 0.0))
            .map(|(c, _)| c)
    }
}

/// Integrate `x` from `y0` over `t_span`, aborting if a constraint fails.
pub fn integrate_ivp(
    x: &TimeDepVectorField,
    y0: &[f64],
    t_span: (f64, f64),
    constraints: &[Constraint],
    opts: &IvpOptions,
) -> Result<Trajectory, IntegrateError> {
    let coords = x.field().coordinate_names();
    if y0.len() != coords.len() {
        return Err(IntegrateError::Invalid(format!(
            "initial state has {} entries for {} coordinates",
            y0.len(),
            coords.len()
        )));
    }
    let (t0, t1) = t_span;
    if !(t0.is_finite() && t1.is_finite() && t1 > t0) {
        return Err(IntegrateError::Invalid(format!("bad time span [{t0}, {t1}]")));
    }
    if !(opts.atol > 0.0 && opts.rtol > 0.0) {
        return Err(IntegrateError::Invalid("tolerances must be positive".into()));
    }
    let mut rhs = Rhs::new(x)?;
    let mut domain = Domain::new(constraints, &coords)?;
    if let Some(c) = domain.violated(t0, y0) {
        return Err(IntegrateError::Invalid(format!(
            "initial state violates `{c}`"
        )));
    }
    match opts.method {
        Method::Rk4 { step } => rk4(&mut rhs, &mut domain, coords, y0, t_span, step, opts),
        Method::Rk45 => dopri(&mut rhs, &mut domain, coords, y0, t_span, opts),
    }
}

fn axpy(out: &mut [f64], y: &[f64], h: f64, terms: &[(f64, &[f64])]) {
    for k in 0..y.len() {
        out[k] = y[k] + h * terms.iter().map(|(a, v)| a * v[k]).sum::<f64>();
    }
}

struct Recorder {
    coords: Vec<String>,
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    derivs: Vec<Vec<f64>>,
    dopri: Vec<[Vec<f64>; 5]>,
    method: Method,
    atol: f64,
    rtol: f64,
    rejected: usize,
}

impl Recorder {
    fn finish(self, evaluations: usize) -> Trajectory {
        let dense = match self.method {
            Method::Rk4 { .. } => Dense::Hermite(self.derivs),
            Method::Rk45 => Dense::Dopri(self.dopri),
        };
        Trajectory {
            coords: self.coords,
            times: self.times,
            states: self.states,
            dense,
            meta: TrajectoryMeta {
                method: self.method,
                atol: self.atol,
                rtol: self.rtol,
                rhs_evaluations: evaluations,
                rejected_steps: self.rejected,
            },
        }
    }
}

fn rk4(
    rhs: &mut Rhs,
    domain: &mut Domain,
    coords: Vec<String>,
    y0: &[f64],
    (t0, t1): (f64, f64),
    step: f64,
    opts: &IvpOptions,
) -> Result<Trajectory, IntegrateError> {
    if !(step > 0.0) {
        return Err(IntegrateError::Invalid("rk4 step must be positive".into()));
    }
    let steps = ((t1 - t0) / step).round().max(1.0) as usize;
    let h = (t1 - t0) / steps as f64;
    let n = y0.len();
    let mut rec = Recorder {
        coords,
        times: vec![t0],
        states: vec![y0.to_vec()],
        derivs: Vec::new(),
        dopri: Vec::new(),
        method: opts.method,
        atol: opts.atol,
        rtol: opts.rtol,
        rejected: 0,
    };
    let mut k1 = vec![0.0; n];
    let (mut k2, mut k3, mut k4, mut tmp) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut y = y0.to_vec();
    if !rhs.eval(t0, &y, &mut k1) {
        return Err(IntegrateError::NonFinite {
            t: t0,
            partial: Box::new(rec.finish(rhs.evaluations)),
        });
    }
    rec.derivs.push(k1.clone());
    for i in 0..steps {
        let t = t0 + i as f64 * h;
        let ok = {
            axpy(&mut tmp, &y, h / 2.0, &[(1.0, &k1)]);
            rhs.eval(t + h / 2.0, &tmp, &mut k2)
        } && {
            axpy(&mut tmp, &y, h / 2.0, &[(1.0, &k2)]);
            rhs.eval(t + h / 2.0, &tmp, &mut k3)
        } && {
            axpy(&mut tmp, &y, h, &[(1.0, &k3)]);
            rhs.eval(t + h, &tmp, &mut k4)
        };
        if !ok {
            return Err(IntegrateError::NonFinite {
                t,
                partial: Box::new(rec.finish(rhs.evaluations)),
            });
        }
        axpy(&mut tmp, &y, h / 6.0, &[(1.0, &k1), (2.0, &k2), (2.0, &k3), (1.0, &k4)]);
        let t_next = if i + 1 == steps { t1 } else { t0 + (i + 1) as f64 * h };
        if let Some(c) = domain.violated(t_next, &tmp) {
            return Err(IntegrateError::DomainExit {
                t: t_next,
                constraint: c.source.clone(),
                partial: Box::new(rec.finish(rhs.evaluations)),
            });
        }
        std::mem::swap(&mut y, &mut tmp);
        if !rhs.eval(t_next, &y, &mut k1) {
            return Err(IntegrateError::NonFinite {
                t: t_next,
                partial: Box::new(rec.finish(rhs.evaluations)),
            });
        }
        rec.times.push(t_next);
        rec.states.push(y.clone());
        rec.derivs.push(k1.clone());
    }
    Ok(rec.finish(rhs.evaluations))
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [&[f64]; 7] = [
    &[],
    &[1.0 / 5.0],
    &[3.0 / 40.0, 9.0 / 40.0],
    &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
    &[19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0],
    &[9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0],
    &[35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

fn error_norm(err: &[f64], y0: &[f64], y1: &[f64], atol: f64, rtol: f64) -> f64 {
    let n = err.len().max(1) as f64;
    let s: f64 = err
        .iter()
        .zip(y0.iter().zip(y1))
        .map(|(e, (a, b))| {
            let sc = atol + rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (s / n).sqrt()
}

fn initial_step(rhs: &mut Rhs, t0: f64, y0: &[f64], f0: &[f64], span: f64, atol: f64, rtol: f64) -> f64 {
    let norm = |v: &[f64]| {
        let n = v.len().max(1) as f64;
        (v.iter()
            .zip(y0)
            .map(|(x, y)| (x / (atol + rtol * y.abs())).powi(2))
            .sum::<f64>()
            / n)
            .sqrt()
    };
    let d0 = norm(y0);
    let d1 = norm(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, f)| y + h0 * f).collect();
    let mut f1 = vec![0.0; y0.len()];
    if !rhs.eval(t0 + h0, &y1, &mut f1) {
        return h0 * 1e-3;
    }
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = norm(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span)
}

fn dopri(
    rhs: &mut Rhs,
    domain: &mut Domain,
    coords: Vec<String>,
    y0: &[f64],
    (t0, t1): (f64, f64),
    opts: &IvpOptions,
) -> Result<Trajectory, IntegrateError> {
    let n = y0.len();
    let mut rec = Recorder {
        coords,
        times: vec![t0],
        states: vec![y0.to_vec()],
        derivs: Vec::new(),
        dopri: Vec::new(),
        method: opts.method,
        atol: opts.atol,
        rtol: opts.rtol,
        rejected: 0,
    };
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    let mut y = y0.to_vec();
    let mut y_new = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut err = vec![0.0; n];
    let mut t = t0;
    if !rhs.eval(t, &y, &mut k[0]) {
        return Err(IntegrateError::NonFinite {
            t,
            partial: Box::new(rec.finish(rhs.evaluations)),
        });
    }
    let span = t1 - t0;
    let h_min = 1e-14 * span.max(t0.abs().max(t1.abs()));
    let mut h = initial_step(rhs, t, &y, &k[0].clone(), span, opts.atol, opts.rtol);
    let mut steps = 0;
    let mut last_rejected = false;

    while t < t1 {
        steps += 1;
        if steps > opts.max_steps || h < h_min {
            return Err(IntegrateError::StepUnderflow {
                t,
                partial: Box::new(rec.finish(rhs.evaluations)),
            });
        }
        let last = t + h >= t1;
        if last {
            h = t1 - t;
        }
        let mut finite = true;
        for s in 1..7 {
            let (done, rest) = k.split_at_mut(s);
            let terms: Vec<(f64, &[f64])> = A[s].iter().zip(done.iter()).map(|(a, v)| (*a, v.as_slice())).collect();
            axpy(&mut tmp, &y, h, &terms);
            if s == 6 {
                y_new.copy_from_slice(&tmp);
            }
            if !rhs.eval(t + C[s] * h, &tmp, &mut rest[0]) {
                finite = false;
                break;
            }
        }
        if !finite {
            rec.rejected += 1;
            h *= 0.25;
            last_rejected = true;
            if h < h_min {
                return Err(IntegrateError::NonFinite {
                    t,
                    partial: Box::new(rec.finish(rhs.evaluations)),
                });
            }
            continue;
        }
        for i in 0..n {
            err[i] = h * (0..7).map(|s| E[s] * k[s][i]).sum::<f64>();
        }
        let e = error_norm(&err, &y, &y_new, opts.atol, opts.rtol);
        if e > 1.0 || !e.is_finite() {
            rec.rejected += 1;
            let fac = if e.is_finite() { (0.9 * e.powf(-0.2)).max(0.2) } else { 0.2 };
            h *= fac;
            last_rejected = true;
            continue;
        }
        let t_new = if last { t1 } else { t + h };
        if let Some(c) = domain.violated(t_new, &y_new) {
            return Err(IntegrateError::DomainExit {
                t: t_new,
                constraint: c.source.clone(),
                partial: Box::new(rec.finish(rhs.evaluations)),
            });
        }
        let ydiff: Vec<f64> = y_new.iter().zip(&y).map(|(a, b)| a - b).collect();
        let bspl: Vec<f64> = (0..n).map(|i| h * k[0][i] - ydiff[i]).collect();
        let r4: Vec<f64> = (0..n).map(|i| ydiff[i] - h * k[6][i] - bspl[i]).collect();
        let r5: Vec<f64> = (0..n)
            .map(|i| h * (0..7).map(|s| D[s] * k[s][i]).sum::<f64>())
            .collect();
        rec.dopri.push([y.clone(), ydiff, bspl, r4, r5]);
        // first-same-as-last: the last stage is f(t + h, y_new)
        let k7 = k[6].clone();
        k[0].copy_from_slice(&k7);
        y.copy_from_slice(&y_new);
        t = t_new;
        rec.times.push(t);
        rec.states.push(y.clone());

        let mut fac = (0.9 * e.max(1e-10).powf(-0.2)).clamp(0.2, 10.0);
        if last_rejected {
            fac = fac.min(1.0);
        }
        last_rejected = false;
        h *= fac;
    }
    Ok(rec.finish(rhs.evaluations))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sode::OdeSystem;
    use std::f64::consts::PI;

    fn lift(rhs: &str) -> TimeDepVectorField {
        OdeSystem::builder(2)
            .positions(&["x"])
            .rhs(&[rhs])
            .build()
            .unwrap()
            .to_first_order()
    }

    #[test]
    fn free_particle_is_exact() {
        let x = lift("0");
        for opts in [IvpOptions::default(), IvpOptions::rk4(0.1)] {
            let tr = integrate_ivp(&x, &[0.0, 1.0], (0.0, 1.0), &[], &opts).unwrap();
            assert!((tr.last_state()[0] - 1.0).abs() < 1e-15);
            assert!((tr.dense_eval(0.37).unwrap()[0] - 0.37).abs() < 1e-15);
        }
    }

    #[test]
    fn milne_pinney_equilibrium() {
        let s = OdeSystem::builder(2)
            .positions(&["x"])
            .rhs(&["-x + 1/x^3"])
            .constraint("x > 0")
            .build()
            .unwrap();
        let tr = integrate_ivp(&s.to_first_order(), &[1.0, 0.0], (0.0, 3.0), s.constraints(), &IvpOptions::default()).unwrap();
        assert!(tr.states().iter().all(|y| (y[0] - 1.0).abs() < 1e-14 && y[1].abs() < 1e-14));
    }

    #[test]
    fn oscillator_period() {
        let x = lift("-x");
        let tr = integrate_ivp(&x, &[1.0, 0.0], (0.0, 2.0 * PI), &[], &IvpOptions::default()).unwrap();
        assert!((tr.last_state()[0] - 1.0).abs() < 1e-8);
        assert!(tr.dense_eval(PI / 2.0).unwrap()[0].abs() < 1e-7);
        for i in 0..50 {
            let t = 2.0 * PI * i as f64 / 50.0;
            assert!((tr.dense_eval(t).unwrap()[0] - t.cos()).abs() < 1e-7);
        }
    }

    #[test]
    fn grid_nodes_are_exact() {
        let x = lift("-x - v/3");
        for opts in [IvpOptions::default(), IvpOptions::rk4(0.05)] {
            let tr = integrate_ivp(&x, &[1.0, 0.2], (0.0, 2.0), &[], &opts).unwrap();
            for (t, s) in tr.times().iter().zip(tr.states()) {
                assert_eq!(&tr.dense_eval(*t).unwrap(), s);
            }
            assert!(tr.times().windows(2).all(|w| w[1] > w[0]));
            assert!(tr.dense_eval(2.1).is_err());
        }
    }

    #[test]
    fn rk4_is_fourth_order() {
        let x = lift("-x");
        let error = |h: f64| {
            let tr = integrate_ivp(&x, &[1.0, 0.0], (0.0, 2.0), &[], &IvpOptions::rk4(h)).unwrap();
            (tr.last_state()[0] - 2.0f64.cos()).abs()
        };
        let ratio = error(0.1) / error(0.05);
        assert!((10.0..=24.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn rk45_error_tracks_tolerance() {
        let x = lift("-x");
        let errs: Vec<f64> = [1e-6, 1e-8, 1e-10, 1e-12]
            .iter()
            .map(|&tol| {
                let tr = integrate_ivp(&x, &[1.0, 0.0], (0.0, 5.0), &[], &IvpOptions::rk45(tol, tol)).unwrap();
                (tr.last_state()[0] - 5.0f64.cos()).abs()
            })
            .collect();
        assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
    }

    #[test]
    fn deterministic() {
        let x = lift("-(1 + t^2)*x");
        let a = integrate_ivp(&x, &[0.3, 1.1], (0.0, 2.0), &[], &IvpOptions::default()).unwrap();
        let b = integrate_ivp(&x, &[0.3, 1.1], (0.0, 2.0), &[], &IvpOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn domain_exit_is_reported() {
        let s = OdeSystem::builder(2)
            .positions(&["x"])
            .rhs(&["0"])
            .constraint("x > 0")
            .build()
            .unwrap();
        let err = integrate_ivp(&s.to_first_order(), &[1.0, -1.0], (0.0, 3.0), s.constraints(), &IvpOptions::default())
            .unwrap_err();
        match err {
            IntegrateError::DomainExit { t, partial, .. } => {
                assert!(t >= 1.0);
                assert!(partial.end() <= 1.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn blow_up_is_an_error() {
        let x = lift("v^2");
        let err = integrate_ivp(&x, &[0.0, 1.0], (0.0, 2.0), &[], &IvpOptions::default()).unwrap_err();
        assert!(matches!(
            err,
            IntegrateError::StepUnderflow { .. } | IntegrateError::NonFinite { .. }
        ));
    }

    #[test]
    fn csv_export() {
        let x = lift("0");
        let tr = integrate_ivp(&x, &[0.0, 1.0], (0.0, 1.0), &[], &IvpOptions::rk4(0.5)).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x,v");
        assert_eq!(lines.len(), 4);
    }
}
