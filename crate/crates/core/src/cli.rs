//! Command-line front end: entry resolution, command dispatch and reports.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::expr::SampleBox;
use crate::liealg::{
    generate_lie_closure, lie_scheffers_check, minimal_prolongation_count, span_membership, AlgebraOptions,
    Evidence, LieError,
};
use crate::sode::is_sode_lie_system;
use crate::srules::{
    builtin_catalog, builtin_entry, char_options_for, char_residual, check_first_integral_conservation, load_dir,
    load_file, trial_curves, verify_superposition, CatalogEntry, CatalogError, ConserveOptions, RuleKind, Verdict,
    VerifyError, VerifyOptions,
};
use crate::vfield::{lie_bracket, VectorField};

/// Directory of extra entry files, searched before the built-in catalog.
pub const CATALOG_ENV: &str = "LIEODE_CATALOG";

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "lieode", version, about = "Lie systems, superposition rules and first integrals of ODE systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub config: Config,
}

#[derive(Debug, Clone, Args)]
pub struct Config {
    /// Catalog entry name.
    #[arg(long, global = true)]
    pub entry: Option<String>,
    /// Entry file, used instead of `--entry`.
    #[arg(long, global = true)]
    pub file: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 20)]
    pub trials: usize,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Sampling interval for one symbol, `sym=lo:hi`; repeatable.
    #[arg(long = "box", global = true, value_parser = parse_box)]
    pub boxes: Vec<(String, (f64, f64))>,
    /// Main tolerance of the command.
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub tol: Option<f64>,
    /// Time span `lo:hi`, overriding the entry's.
    #[arg(long, global = true, value_parser = parse_interval)]
    pub t_span: Option<(f64, f64)>,
    /// Dimension cap of closure computations.
    #[arg(long, global = true, default_value_t = 12)]
    pub cap: usize,
    /// Bracket depth cap of closure computations.
    #[arg(long, global = true, default_value_t = 5)]
    pub depth: usize,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// List catalog entries.
    Catalog,
    /// Bracket of two basis fields, decomposed in the basis.
    Bracket {
        /// 1-based basis indices.
        #[arg(long, num_args = 2, value_names = ["I", "J"])]
        pair: Vec<usize>,
    },
    /// Lie closure of the entry's basis.
    Closure {
        /// Extra named fields of the entry to include.
        #[arg(long)]
        with: Vec<String>,
    },
    /// Lie–Scheffers check of the first-order lift from frozen-time fields.
    LieCheck,
    /// Same check using the entry's declared time decomposition, if any.
    SodeCheck,
    /// Smallest number of copies on which the basis is independent.
    MinM {
        #[arg(long, default_value_t = 4)]
        m_max: usize,
    },
    /// Verify superposition rules on seeded random trials.
    VerifySr {
        #[arg(long)]
        rule: Option<String>,
    },
    /// Check conservation of first integrals.
    Conserve {
        #[arg(long)]
        integral: Option<String>,
    },
    /// Residual of the characteristic equation for the rules' families.
    CharResidual {
        #[arg(long)]
        rule: Option<String>,
    },
    /// CSV of one trial's reference and reconstructed solution.
    EmitPlot {
        #[arg(long)]
        rule: Option<String>,
        #[arg(long, default_value_t = 0)]
        trial: usize,
        /// Index of the plotted position.
        #[arg(long, default_value_t = 0)]
        component: usize,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Catalog => "catalog",
            Command::Bracket { .. } => "bracket",
            Command::Closure { .. } => "closure",
            Command::LieCheck => "lie-check",
            Command::SodeCheck => "sode-check",
            Command::MinM { .. } => "min-m",
            Command::VerifySr { .. } => "verify-sr",
            Command::Conserve { .. } => "conserve",
            Command::CharResidual { .. } => "char-residual",
            Command::EmitPlot { .. } => "emit-plot",
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("unknown entry `{0}`")]
    UnknownEntry(String),
    #[error("cannot load entry: {0}")]
    Entry(#[from] CatalogError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("tolerance misuse: {0}")]
    Tolerance(String),
    #[error("{0}")]
    Lie(#[from] LieError),
    #[error("{0}")]
    Verify(#[from] VerifyError),
    #[error("cannot write `{path}`: {source}")]
    Io { path: String, source: std::io::Error },
}

fn parse_interval(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or_else(|| format!("`{s}` is not of the form lo:hi"))?;
    let lo: f64 = lo.trim().parse().map_err(|_| format!("bad lower bound in `{s}`"))?;
    let hi: f64 = hi.trim().parse().map_err(|_| format!("bad upper bound in `{s}`"))?;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(format!("`{s}` is not a finite interval"));
    }
    Ok((lo, hi))
}

fn parse_box(s: &str) -> Result<(String, (f64, f64)), String> {
    let (sym, interval) = s.split_once('=').ok_or_else(|| format!("`{s}` is not of the form sym=lo:hi"))?;
    if sym.trim().is_empty() {
        return Err(format!("missing symbol in `{s}`"));
    }
    Ok((sym.trim().to_string(), parse_interval(interval)?))
}

/// The machine-readable result of one command.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub entry: String,
    pub command: String,
    pub verdict: Verdict,
    pub trials: Vec<Value>,
    pub tolerances: Value,
    pub seed: u64,
    pub version: String,
    pub provenance: String,
    pub result: Value,
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }
}

/// What a command produced: a report, or CSV for `emit-plot`.
#[derive(Debug, Clone)]
pub enum Output {
    Report(Report),
    Csv { verdict: Verdict, text: String },
}

impl Output {
    pub fn verdict(&self) -> Verdict {
        match self {
            Output::Report(r) => r.verdict,
            Output::Csv { verdict, .. } => *verdict,
        }
    }

    pub fn text(&self) -> String {
        match self {
            Output::Report(r) => r.to_json(),
            Output::Csv { text, .. } => text.clone(),
        }
    }
}

pub fn exit_code(verdict: Verdict) -> u8 {
    match verdict {
        Verdict::Pass => 0,
        Verdict::Fail => 1,
        Verdict::Inconclusive => 2,
    }
}

/// Shortest representation that reads back to the same value.
fn number(x: f64) -> String {
    serde_json::to_string(&x).expect("floats serialize")
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("reports serialize")
}

fn evidence_verdict(e: Evidence) -> Verdict {
    match e {
        Evidence::Yes => Verdict::Pass,
        Evidence::NoEvidence => Verdict::Fail,
        Evidence::Inconclusive => Verdict::Inconclusive,
    }
}

fn combine(verdicts: impl IntoIterator<Item = Verdict>) -> Verdict {
    let mut out = Verdict::Pass;
    for v in verdicts {
        match v {
            Verdict::Fail => return Verdict::Fail,
            Verdict::Inconclusive => out = Verdict::Inconclusive,
            Verdict::Pass => {}
        }
    }
    out
}

/// Look an entry up in `dir` (if given) and then among the built-ins.
pub fn find_entry(name: &str, dir: Option<&Path>) -> Result<CatalogEntry, CliError> {
    if let Some(dir) = dir {
        if let Some(e) = load_dir(dir)?.into_iter().find(|e| e.name == name) {
            return Ok(e);
        }
    }
    builtin_entry(name).ok_or_else(|| CliError::UnknownEntry(name.to_string()))
}

fn catalog_dir() -> Option<PathBuf> {
    std::env::var_os(CATALOG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

fn resolve_entry(config: &Config) -> Result<CatalogEntry, CliError> {
    let mut entry = match (&config.file, &config.entry) {
        (Some(_), Some(_)) => return Err(CliError::Config("give either --entry or --file, not both".into())),
        (Some(path), None) => load_file(path)?,
        (None, Some(name)) => find_entry(name, catalog_dir().as_deref())?,
        (None, None) => return Err(CliError::Config("this command needs --entry or --file".into())),
    };
    for (sym, interval) in &config.boxes {
        entry.sample_box.overrides.insert(sym.clone(), *interval);
    }
    Ok(entry)
}

fn tolerance(config: &Config, default: f64) -> Result<f64, CliError> {
    match config.tol {
        None => Ok(default),
        Some(t) if t.is_finite() && t > 0.0 => Ok(t),
        Some(t) => Err(CliError::Tolerance(format!("--tol must be positive and finite, got {t}"))),
    }
}

fn algebra_options(config: &Config, sample_box: SampleBox) -> Result<AlgebraOptions, CliError> {
    let defaults = AlgebraOptions::default();
    if config.cap == 0 {
        return Err(CliError::Config("--cap must be at least 1".into()));
    }
    Ok(AlgebraOptions {
        sample_box,
        seed: config.seed,
        span_tol: tolerance(config, defaults.span_tol)?,
        cap: config.cap,
        max_depth: config.depth,
        ..defaults
    })
}

fn basis_fields(entry: &CatalogEntry) -> Result<&[VectorField], CliError> {
    entry
        .basis
        .as_ref()
        .map(|b| b.fields.as_slice())
        .ok_or_else(|| CliError::Config(format!("entry `{}` declares no basis", entry.name)))
}

fn selected<'a, T>(items: &'a [T], name: Option<&str>, key: impl Fn(&T) -> &str, what: &str) -> Result<Vec<&'a T>, CliError> {
    match name {
        Some(n) => items
            .iter()
            .find(|i| key(i) == n)
            .map(|i| vec![i])
            .ok_or_else(|| CliError::Config(format!("no {what} named `{n}`"))),
        None if items.is_empty() => Err(CliError::Config(format!("the entry has no {what}s"))),
        None => Ok(items.iter().collect()),
    }
}

/// Execute one command.
pub fn run(command: &Command, config: &Config) -> Result<Output, CliError> {
    if config.trials == 0 {
        return Err(CliError::Config("--trials must be at least 1".into()));
    }
    let csv = config.format == Some(Format::Csv);
    match command {
        Command::EmitPlot { .. } if config.format == Some(Format::Json) => {
            return Err(CliError::Config("emit-plot writes CSV only".into()))
        }
        Command::EmitPlot { .. } => {}
        _ if csv => return Err(CliError::Config("CSV output is only available for emit-plot".into())),
        _ => {}
    }
    if let Command::Catalog = command {
        return catalog(config);
    }
    let entry = resolve_entry(config)?;
    let report = |verdict: Verdict, trials: Vec<Value>, tolerances: Value, result: Value| {
        Output::Report(Report {
            entry: entry.name.clone(),
            command: command.name().to_string(),
            verdict,
            trials,
            tolerances,
            seed: config.seed,
            version: VERSION.to_string(),
            provenance: entry.provenance.clone(),
            result,
        })
    };

    match command {
        Command::Catalog => unreachable!("handled above"),
        Command::Bracket { pair } => {
            let fields = basis_fields(&entry)?;
            let (i, j) = (pair[0], pair[1]);
            if i == 0 || j == 0 || i > fields.len() || j > fields.len() {
                return Err(CliError::Config(format!("basis indices must lie in 1..={}", fields.len())));
            }
            let opts = algebra_options(config, entry.sample_box.clone())?;
            let bracket = lie_bracket(&fields[i - 1], &fields[j - 1]).map_err(|e| CliError::Config(e.to_string()))?;
            let fit = span_membership(&bracket, fields, &opts)?;
            let verdict = if fit.residual <= opts.span_tol { Verdict::Pass } else { Verdict::Fail };
            let components: Vec<(String, String)> = bracket
                .coordinate_names()
                .into_iter()
                .zip(bracket.components().iter().map(|c| c.to_string()))
                .collect();
            Ok(report(
                verdict,
                Vec::new(),
                json!({ "span_tol": opts.span_tol }),
                json!({ "pair": [i, j], "components": components, "coefficients": fit.coefficients, "residual": fit.residual }),
            ))
        }
        Command::Closure { with } => {
            let mut generators = basis_fields(&entry)?.to_vec();
            for name in with {
                let f = entry
                    .extra_field(name)
                    .ok_or_else(|| CliError::Config(format!("no extra field named `{name}`")))?;
                generators.push(f.clone());
            }
            let opts = algebra_options(config, entry.sample_box.clone())?;
            let closure = generate_lie_closure(&generators, &opts)?;
            let declared = entry.basis.as_ref().and_then(|b| b.dimension).filter(|_| with.is_empty());
            let verdict = match (closure.dimension(), declared) {
                (None, _) => Verdict::Fail,
                (Some(d), Some(want)) if d != want => Verdict::Fail,
                _ => Verdict::Pass,
            };
            Ok(report(verdict, Vec::new(), to_value(&opts), to_value(&closure)))
        }
        Command::LieCheck | Command::SodeCheck => {
            let opts = algebra_options(config, entry.sample_box.clone())?;
            let result = if let Command::LieCheck = command {
                lie_scheffers_check(&entry.system.to_first_order(), &entry.lie_times, &opts)?
            } else {
                is_sode_lie_system(&entry.system, entry.decomposition(), &entry.lie_times, &opts)?
            };
            let verdict = evidence_verdict(result.is_lie_system_evidence);
            let mut result = to_value(&result);
            result["lie_times"] = to_value(&entry.lie_times);
            Ok(report(verdict, Vec::new(), to_value(&opts), result))
        }
        Command::MinM { m_max } => {
            let fields = basis_fields(&entry)?;
            let opts = algebra_options(config, entry.copy_box(*m_max))?;
            let m = minimal_prolongation_count(fields, *m_max, &opts)?;
            let verdict = if m.is_some() { Verdict::Pass } else { Verdict::Fail };
            Ok(report(verdict, Vec::new(), to_value(&opts), json!({ "m": m, "m_max": m_max })))
        }
        Command::VerifySr { rule } => {
            let rules = selected(&entry.rules, rule.as_deref(), |r| &r.name, "rule")?;
            let opts = verify_options(config)?;
            let mut trials = Vec::new();
            let mut results = Vec::new();
            let mut verdicts = Vec::new();
            for r in rules {
                let rep = verify_superposition(&entry, r, &opts)?;
                for t in &rep.trials {
                    let mut v = to_value(t);
                    v["rule"] = json!(r.name);
                    trials.push(v);
                }
                verdicts.push(rep.verdict);
                results.push(json!({
                    "rule": r.name,
                    "kind": rep.kind,
                    "t_span": rep.t_span,
                    "max_error": rep.max_error,
                    "verdict": rep.verdict,
                }));
            }
            Ok(report(combine(verdicts), trials, to_value(&opts), Value::Array(results)))
        }
        Command::Conserve { integral } => {
            let integrals = selected(&entry.integrals, integral.as_deref(), |i| &i.name, "integral")?;
            let opts = ConserveOptions {
                trials: config.trials,
                seed: config.seed,
                tol: tolerance(config, 1e-7)?,
                t_span: config.t_span,
                ..ConserveOptions::default()
            };
            let mut trials = Vec::new();
            let mut results = Vec::new();
            let mut verdicts = Vec::new();
            for i in integrals {
                let rep = check_first_integral_conservation(&entry, &i.name, &opts)?;
                for t in &rep.trials {
                    let mut v = to_value(t);
                    v["integral"] = json!(i.name);
                    trials.push(v);
                }
                verdicts.push(rep.verdict);
                results.push(json!({
                    "integral": i.name,
                    "copies": rep.copies,
                    "time_dependent": rep.time_dependent,
                    "max_drift": rep.max_drift,
                    "annihilation": rep.annihilation,
                    "verdict": rep.verdict,
                }));
            }
            Ok(report(combine(verdicts), trials, to_value(&opts), Value::Array(results)))
        }
        Command::CharResidual { rule } => {
            let rules = selected(&entry.rules, rule.as_deref(), |r| &r.name, "rule")?;
            let tol = tolerance(config, 1e-8)?;
            let mut results = Vec::new();
            let mut verdicts = Vec::new();
            for r in rules {
                if r.kind == RuleKind::FirstOrder {
                    results.push(json!({ "rule": r.name, "skipped": "rule for the first-order lift" }));
                    continue;
                }
                for (pattern, mut opts) in char_options_for(&entry, r, config.seed).into_iter().enumerate() {
                    if let Some(span) = config.t_span {
                        opts.times = (0..7).map(|i| span.0 + (span.1 - span.0) * i as f64 / 6.0).collect();
                    }
                    let res = char_residual(&entry.system, r.components(), r.m(), &opts)?;
                    let verdict = if res.max_abs < tol { Verdict::Pass } else { Verdict::Fail };
                    verdicts.push(verdict);
                    let branch: Vec<f64> = r.branches().iter().map(|b| opts.sample_box.interval(b).0).collect();
                    results.push(json!({ "rule": r.name, "branch": branch, "pattern": pattern, "residual": res, "verdict": verdict }));
                }
            }
            Ok(report(combine(verdicts), Vec::new(), json!({ "tol": tol }), Value::Array(results)))
        }
        Command::EmitPlot { rule, trial, component } => {
            let r = match rule {
                Some(name) => entry
                    .rule(name)
                    .ok_or_else(|| CliError::Config(format!("no rule named `{name}`")))?,
                None => entry
                    .rules
                    .first()
                    .ok_or_else(|| CliError::Config("the entry has no rules".into()))?,
            };
            if *component >= r.components().len() {
                return Err(CliError::Config(format!("component must be below {}", r.components().len())));
            }
            let opts = VerifyOptions {
                trials: trial + 1,
                ..verify_options(config)?
            };
            let rep = verify_superposition(&entry, r, &opts)?;
            let t = &rep.trials[*trial];
            let curves = trial_curves(&entry, r, t, &rep)?;
            let mut text = String::from("t,reference,reconstructed,abs_error\n");
            for ((time, reference), reconstructed) in curves.t.iter().zip(&curves.reference).zip(&curves.reconstructed) {
                let (a, b) = (reference[*component], reconstructed[*component]);
                let row = [*time, a, b, (a - b).abs()].map(number);
                text.push_str(&row.join(","));
                text.push('\n');
            }
            let verdict = if t.passed { Verdict::Pass } else { Verdict::Fail };
            Ok(Output::Csv { verdict, text })
        }
    }
}

fn verify_options(config: &Config) -> Result<VerifyOptions, CliError> {
    Ok(VerifyOptions {
        trials: config.trials,
        seed: config.seed,
        tol: tolerance(config, 1e-6)?,
        t_span: config.t_span,
        ..VerifyOptions::default()
    })
}

fn catalog(config: &Config) -> Result<Output, CliError> {
    let mut entries = match catalog_dir() {
        Some(dir) => load_dir(&dir)?,
        None => Vec::new(),
    };
    if let Some(path) = &config.file {
        entries.push(load_file(path)?);
    }
    for e in builtin_catalog() {
        if !entries.iter().any(|x| x.name == e.name) {
            entries.push(e);
        }
    }
    let listed: Vec<Value> = entries
        .iter()
        .map(|e| {
            json!({
                "name": e.name,
                "title": e.title,
                "order": e.system.order(),
                "positions": e.system.positions(),
                "rules": e.rules.iter().map(|r| json!({ "name": r.name, "kind": r.kind, "m": r.m() })).collect::<Vec<_>>(),
                "integrals": e.integrals.iter().map(|i| i.name.clone()).collect::<Vec<_>>(),
                "provenance": e.provenance,
            })
        })
        .collect();
    Ok(Output::Report(Report {
        entry: String::new(),
        command: "catalog".into(),
        verdict: Verdict::Pass,
        trials: Vec::new(),
        tolerances: json!({}),
        seed: config.seed,
        version: VERSION.to_string(),
        provenance: String::new(),
        result: Value::Array(listed),
    }))
}

/// Parse arguments, run, write the output and map the verdict to an exit code.
pub fn main_with(cli: Cli) -> ExitCode {
    let output = match run(&cli.command, &cli.config) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let text = output.text();
    let written = match &cli.config.out {
        Some(path) => std::fs::write(path, &text).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        }),
        None => std::io::stdout().lock().write_all(text.as_bytes()).map_err(|source| CliError::Io {
            path: "<stdout>".into(),
            source,
        }),
    };
    if let Err(e) = written {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    ExitCode::from(exit_code(output.verdict()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_flags_parse() {
        assert_eq!(parse_box("x=0.5:1.5"), Ok(("x".to_string(), (0.5, 1.5))));
        assert_eq!(parse_box(" v = -1:1"), Ok(("v".to_string(), (-1.0, 1.0))));
        assert!(parse_box("x").is_err());
        assert!(parse_box("=0:1").is_err());
        assert!(parse_box("x=1:0").is_err());
        assert!(parse_interval("0:inf").is_err());
    }

    #[test]
    fn exit_codes_follow_verdicts() {
        assert_eq!(exit_code(Verdict::Pass), 0);
        assert_eq!(exit_code(Verdict::Fail), 1);
        assert_eq!(exit_code(Verdict::Inconclusive), 2);
    }

    #[test]
    fn flags_are_global() {
        let cli = Cli::try_parse_from(["lieode", "closure", "--entry", "ks2", "--cap", "8", "--with", "a"]).unwrap();
        assert_eq!(cli.config.entry.as_deref(), Some("ks2"));
        assert_eq!(cli.config.cap, 8);
        assert!(matches!(cli.command, Command::Closure { ref with } if with == &["a"]));
    }
}
