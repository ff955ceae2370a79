//! Seam detection and welding path planning on point clouds.
//!
//! Pipeline: multi-view scans are merged by pose pre-alignment and linearized
//! point-to-plane ICP ([`registration`]), smoothed with a normal-direction
//! bilateral filter ([`denoise`]), searched for seam points with an
//! edge-intensity structure-matrix test ([`seam`]), and turned into a dense
//! 6-DOF torch path ([`path`]). [`synth`] provides workpieces with analytic
//! seams and a virtual depth scanner; [`eval`] scores the results.

// `!(x > 0.0)` is how NaN gets rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod denoise;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod path;
pub mod pcio;
pub mod pipeline;
pub mod registration;
pub mod seam;
pub mod synth;
pub mod transform;

pub use error::{Error, Result};
