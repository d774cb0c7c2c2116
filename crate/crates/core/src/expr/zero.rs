//! Randomized identity testing.
//!
//! An expression is declared zero when it vanishes, up to
//! `atol + rtol * scale`, at every one of `trials` random points drawn from
//! a sampling box. `scale` at a point is the largest magnitude among the
//! expression's top-level additive terms, so that cancellation between large
//! terms is judged relative to their size.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Expr, Tape};

/// Per-symbol sampling intervals with a shared default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBox {
    pub default: (f64, f64),
    pub overrides: BTreeMap<String, (f64, f64)>,
}

impl Default for SampleBox {
    fn default() -> Self {
        SampleBox {
            default: (0.3, 2.0),
            overrides: BTreeMap::new(),
        }
    }
}

impl SampleBox {
    pub fn uniform(lo: f64, hi: f64) -> Self {
        SampleBox {
            default: (lo, hi),
            overrides: BTreeMap::new(),
        }
    }

    pub fn with(mut self, name: &str, lo: f64, hi: f64) -> Self {
        self.overrides.insert(name.to_string(), (lo, hi));
        self
    }

    pub fn interval(&self, name: &str) -> (f64, f64) {
        self.overrides.get(name).copied().unwrap_or(self.default)
    }

    pub fn sample<R: Rng + ?Sized>(&self, name: &str, rng: &mut R) -> f64 {
        let (lo, hi) = self.interval(name);
        if hi > lo {
            rng.random_range(lo..hi)
        } else {
            lo
        }
    }

    /// Overlay `other`'s overrides on top of this box.
    pub fn overlay(&self, other: &SampleBox) -> SampleBox {
        let mut out = self.clone();
        for (k, v) in &other.overrides {
            out.overrides.insert(k.clone(), *v);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroTestOptions {
    pub trials: usize,
    pub atol: f64,
    pub rtol: f64,
    /// Draws allowed per requested trial before giving up as inconclusive.
    pub max_draws_per_trial: usize,
}

impl Default for ZeroTestOptions {
    fn default() -> Self {
        ZeroTestOptions {
            trials: 32,
            atol: 1e-9,
            rtol: 1e-9,
            max_draws_per_trial: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum ZeroVerdict {
    Zero,
    Nonzero {
        witness: BTreeMap<String, f64>,
        value: f64,
    },
    Inconclusive {
        finite: usize,
        draws: usize,
    },
}

impl ZeroVerdict {
    pub fn is_zero(&self) -> bool {
        matches!(self, ZeroVerdict::Zero)
    }
}

/// Decide whether `e` is identically zero on `sample_box` by random evaluation.
pub fn is_zero_probabilistic<R: Rng + ?Sized>(
    e: &Expr,
    sample_box: &SampleBox,
    opts: &ZeroTestOptions,
    rng: &mut R,
) -> ZeroVerdict {
    is_zero_probabilistic_on(e, sample_box, &[], opts, rng)
}

/// As [`is_zero_probabilistic`], counting only points where every
/// expression in `domain` is positive.
pub fn is_zero_probabilistic_on<R: Rng + ?Sized>(
    e: &Expr,
    sample_box: &SampleBox,
    domain: &[Expr],
    opts: &ZeroTestOptions,
    rng: &mut R,
) -> ZeroVerdict {
    assert!(opts.trials >= 1, "zero test needs at least one trial");
    if e.is_zero() {
        return ZeroVerdict::Zero;
    }
    let mut symbols = e.free_symbols();
    for d in domain {
        symbols.extend(d.free_symbols());
    }
    let slots: Vec<String> = symbols.into_iter().collect();
    let mut roots = vec![e.clone()];
    roots.extend(e.terms());
    let n_terms = roots.len();
    roots.extend(domain.iter().cloned());
    let tape = Tape::compile(&roots, &slots).expect("slots cover every free symbol");
    let mut point = vec![0.0; slots.len()];
    let mut out = vec![0.0; roots.len()];
    let mut scratch = Vec::new();
    let max_draws = opts.trials * opts.max_draws_per_trial.max(1);
    let mut finite = 0;
    let mut draws = 0;
    while finite < opts.trials && draws < max_draws {
        draws += 1;
        for (slot, name) in point.iter_mut().zip(&slots) {
            *slot = sample_box.sample(name, rng);
        }
        tape.eval_into(&point, &mut scratch, &mut out);
        if out.iter().any(|v| !v.is_finite()) || out[n_terms..].iter().any(|v| *v <= 0.0) {
            continue;
        }
        finite += 1;
        let value = out[0];
        let scale = out[1..n_terms].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if value.abs() > opts.atol + opts.rtol * scale {
            let witness = slots.iter().cloned().zip(point.iter().copied()).collect();
            return ZeroVerdict::Nonzero { witness, value };
        }
    }
    if finite < opts.trials {
        ZeroVerdict::Inconclusive { finite, draws }
    } else {
        ZeroVerdict::Zero
    }
}
