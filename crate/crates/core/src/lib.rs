//! Symbolic–numeric toolkit for Lie systems and superposition rules of
//! first-, second- and higher-order ODE systems.

pub mod expr;
pub mod vfield;
pub mod liealg;
pub mod sode;
pub mod integrate;
pub mod srules;
pub mod cli;
