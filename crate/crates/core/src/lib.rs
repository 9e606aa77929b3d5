//! Calculus of variations for Lagrangians whose values live in a bundle of
//! affine values over configuration space rather than in the real numbers.

// `!(a < b)` comparisons are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod action;
pub mod affine;
pub mod autodiff;
pub mod bundled;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod exprlang;
pub mod geometry;
mod linalg;
pub mod suites;

pub use affine::{affine_scalar_diff, box_minus, fiber_diff, fiber_translate, AffineScalar, FiberPoint};
pub use dynamics::{
    integrate_trajectory, AffineCovector, Covector, Forcing, GaugeClassLagrangian, PhaseState,
    SecondOrderPoint, Trajectory,
};
pub use error::{Error, Result};
pub use geometry::{Atlas, AVSection, AffineOneForm, CurveSpec, GaugeFunction};
