//! Nearest-neighbor anchored first-order Taylor approximations of the AC
//! optimal power flow problem.
//!
//! The crate is organised bottom-up:
//!
//! * [`netmodel`]: per-unit network model and MATPOWER case parsing
//! * [`powerflow`]: branch flow equations and Newton-Raphson power flow
//! * [`convexsolve`]: primal-dual interior point QP solver
//! * [`taylor`]: flow derivatives and the DC, KT-DC and KT-AC programs
//! * [`acopf`]: reference AC-OPF solver, feasibility projection and the
//!   nearest-neighbor + Taylor pipeline
//! * [`learn`]: demand dataset generation, labeling, persistence and KNN
//! * [`metrics`]: error, violation and redispatch metrics with summaries

// Index loops mirror the matrix notation, and negated comparisons are how
// NaN inputs get rejected.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod acopf;
pub mod convexsolve;
pub mod learn;
pub mod metrics;
pub mod netmodel;
pub mod powerflow;
pub mod taylor;
