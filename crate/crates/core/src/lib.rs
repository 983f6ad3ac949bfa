//! Numerical laboratory for hyperbolic bubble dynamics of (generalized) SQG.

pub mod data;
pub mod diagnostics;
pub mod evolution;
pub mod io;
pub mod kernel;
pub mod key_lemma;
pub mod spectral;
pub mod tracker;
