//! Optimal consumption and investment with a wealth-linked consumption cap
//! `0 <= c <= kx + l`.
//!
//! The crate classifies a parameter set, evaluates the closed forms where
//! they exist, and otherwise solves the free-boundary problem by shooting in
//! the dual variable. A finite-difference policy iteration and a Monte Carlo
//! engine serve as independent checks.

// `!(a < b)` is used throughout to reject NaN along with the failing case.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod closed_form;
pub mod error;
pub mod fd;
pub mod free_boundary;
pub mod mc;
pub mod ode;
pub mod params;
pub mod umap;
pub mod value;
pub mod verify;

pub use closed_form::{
    homogeneous_coefficient, homogeneous_policy, homogeneous_value, merton_policy, merton_value,
    PolicyPoint,
};
pub use error::{Error, Result};
pub use fd::{extract_x_star_fd, solve_fd, FdOptions, FdSolution};
pub use free_boundary::{
    integrate_dual, shooting_residual, solve_x_star, DualTrajectory, SolveOptions, ValueSolution,
};
pub use mc::{compare_policies, simulate, FeedbackPolicy, OptimalPolicy, SimConfig, SimEstimate};
pub use params::{DerivedConstants, Model, ModelParams, Regime};
pub use umap::{UMap, ValueTriple};
pub use value::{hjb_residual, Evaluation, Region, TableRow};
pub use verify::{verify, verify_solution, Check, VerifyOptions, VerifyReport};
