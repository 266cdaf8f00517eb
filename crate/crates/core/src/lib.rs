//! Yarn-to-shell homogenization.
//!
//! Periodic yarn-level patches are relaxed, tiled onto sampled mid-surface
//! deformations and minimized under homogenization constraints. The recorded
//! energy densities are fitted with an orthotropic St. Venant-Kirchhoff
//! thin-shell model, which is then exercised in shell-level stretch and drape
//! experiments.

pub mod contact;
pub mod error;
pub mod fit;
pub mod homogenize;
pub mod pattern;
pub mod pipeline;
pub mod rod;
pub mod shell;
pub mod shellsim;
pub mod solver;

pub use error::{Error, Result};
