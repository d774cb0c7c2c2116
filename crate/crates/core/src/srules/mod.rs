//! Superposition rules: definition, fitting, reconstruction and the
//! built-in catalog of worked systems.

mod catalog;
mod fit;
mod rule;
mod verify;

pub use catalog::{
    builtin_catalog, builtin_entry, builtin_source, load_dir, load_file, Basis, BasisFile, BracketFile,
    CatalogEntry, CatalogError, EntryFile, FirstIntegral, IntegralFile, NamedFieldFile, TermFile,
    DEFAULT_LIE_TIMES,
};
pub use fit::{
    fit_constants, generic_at, particular_state, reconstruct, Fit, FitError, FitOptions, ReconstructError,
    RuleEvaluator,
};
pub use rule::{
    copy_coordinates, lift_rule, project_hode_rule, Definition, RuleError, RuleKind, RuleSpec,
    SuperpositionRule, DEFAULT_K_BOX,
};
pub use verify::{
    char_options_for, char_residual, check_auxiliary_integrals, check_first_integral_conservation,
    check_xl_annihilates, integral_derivative, position_copies, trial_curves, verify_superposition, CharOptions,
    CharResidual, ConservationReport, ConserveOptions, DriftTrial, TrialCurves, TrialReport, VerificationReport, Verdict,
    VerifyError, VerifyOptions, XlVerdict,
};
