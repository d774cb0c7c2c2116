//! Invariants of fitted superposition rules that hold independently of any
//! particular closed form.

use lieode::integrate::IvpOptions;
use lieode::srules::{
    builtin_entry, char_options_for, char_residual, fit_constants, verify_superposition, FitOptions, RuleEvaluator,
    Verdict, VerificationReport, VerifyOptions,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn run(entry: &str, rule: &str, opts: &VerifyOptions) -> VerificationReport {
    let e = builtin_entry(entry).unwrap();
    verify_superposition(&e, e.rule(rule).unwrap(), opts).unwrap()
}

fn opts(trials: usize, seed: u64) -> VerifyOptions {
    VerifyOptions {
        trials,
        seed,
        ..VerifyOptions::default()
    }
}

#[test]
fn interchangeable_rules_survive_swapping_the_particular_solutions() {
    for (name, rule) in [("mp", "pinney"), ("tsq", "base"), ("tsq", "general")] {
        let e = builtin_entry(name).unwrap();
        let r = e.rule(rule).unwrap();
        assert!(r.is_interchangeable(), "{name}/{rule}");
        let rep = verify_superposition(&e, &r.swapped(1, 2), &opts(8, 3)).unwrap();
        assert_eq!(rep.verdict, Verdict::Pass, "{name}/{rule}: {:.2e}", rep.max_error);
    }
}

#[test]
fn fitted_constants_reproduce_the_jet_and_separate_targets() {
    for (name, rule) in [("mp", "pinney"), ("ks2", "kummer-schwarz"), ("ks3", "kummer-schwarz"), ("tsq", "general")] {
        let e = builtin_entry(name).unwrap();
        let r = e.rule(rule).unwrap();
        let eval = RuleEvaluator::new(r, &e.system, r.fitted_levels());
        let rep = verify_superposition(&e, r, &opts(4, 5)).unwrap();
        let t0 = rep.t_span.0;
        for trial in &rep.trials {
            let target = &trial.initial_data[0];
            let particular: Vec<f64> = trial.initial_data[1..].concat();
            let jet = eval.eval(t0, &particular, &trial.constants, &trial.branch);
            let mismatch = jet.iter().zip(target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(mismatch < 1e-8, "{name}: jet mismatch {mismatch:e}");

            let mut moved = target.clone();
            moved[0] *= 1.01;
            let mut rng = ChaCha8Rng::seed_from_u64(trial.seed);
            let refit = fit_constants(&eval, t0, &particular, &moved, &FitOptions::default(), &mut rng).unwrap();
            let gap = refit
                .constants
                .iter()
                .zip(&trial.constants)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(gap > 1e-6, "{name}: distinct targets share constants");
        }
    }
}

#[test]
fn reconstruction_error_follows_integrator_tolerance() {
    for (name, rule) in [("mp", "pinney"), ("ks2", "kummer-schwarz")] {
        let error = |tol: f64| {
            let o = VerifyOptions {
                tol: 1.0,
                ivp: IvpOptions::rk45(tol, tol),
                ..opts(5, 1)
            };
            run(name, rule, &o).max_error
        };
        let (coarse, fine) = (error(1e-7), error(1e-9));
        assert!(coarse >= 10.0 * fine, "{name}: {coarse:e} vs {fine:e}");
    }
}

#[test]
fn general_rules_solve_the_characteristic_system() {
    for (name, rule) in [("free", "general"), ("tsq", "general")] {
        let e = builtin_entry(name).unwrap();
        let r = e.rule(rule).unwrap();
        for o in char_options_for(&e, r, 9) {
            let res = char_residual(&e.system, r.components(), r.m(), &o).unwrap();
            assert!(res.points_used > 0 && res.max_abs < 1e-8, "{name}: {res:?}");
        }
    }
}
