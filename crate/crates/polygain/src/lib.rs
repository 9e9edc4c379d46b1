//! Certified incremental L1 / L-infinity gain bounds for polytopic linear
//! differential inclusions.
//!
//! The library alternates two linear programs: a *gain estimation* step that
//! bounds the incremental gain for a fixed polyhedral storage function (or
//! invariant set), and a *polyhedral modification* step that reshapes the
//! polyhedron to tighten the bound. Static output-feedback synthesis reuses
//! the same machinery with the controller entries as extra LP variables.
//!
//! Modules:
//! - [`lp`]: dense revised simplex solver used by everything else
//! - [`polytope`]: V-rep/H-rep C-sets, gauge functions, subdifferentials
//! - [`model`]: polytopic LDI containers, adjoints, parameter boxes
//! - [`gain`]: certificate LPs, the alternating loops, the verifier
//! - [`synthesis`]: static output-feedback design
//! - [`oracle`]: impulse-response gains of LTI vertices (lower bounds, checks)
//! - [`files`]: JSON model/certificate formats and canonical hashing
//! - [`svg`]: flat rendering of 2-D certificate polyhedra

pub mod files;
pub mod gain;
pub mod lp;
pub mod model;
pub mod oracle;
pub mod polytope;
pub mod svg;
pub mod synthesis;

pub use gain::{analyze_l1, analyze_linf, verify_certificate, AlgoOptions, GainCertificate};
pub use lp::{solve_lp, LinearProgram, LpOutcome, LpStatus, SolverOptions};
pub use model::{ControlledLdiModel, GainNorm, KConstraint, LdiModel};
pub use polytope::{HRep, VRep};
pub use synthesis::{synthesize, synthesize_with_init};
