//! Discretization, model reduction and feedback synthesis for the controlled
//! Fokker-Planck equation on a rectangle.
//!
//! The crate is `no_std` + `alloc` when built without the default `std`
//! feature.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod banded;
pub mod closed_loop;
pub mod dense;
pub mod error;
pub mod grid;
pub mod integrate;
pub mod lyapunov;
pub mod operators;
pub mod potential;
pub mod projection;
pub mod riccati;
pub mod shape;
pub mod sparse;
pub mod spectral;

pub use closed_loop::{FeedbackLaw, TrajectoryRecord};
pub use error::{Error, Result};
pub use grid::{Grid2D, Rect, ScalarField};
pub use potential::{Potential, PotentialSpec};
pub use projection::{ReducedSystem, ReductionMap, StateWeight};
pub use riccati::RiccatiSolution;
pub use spectral::SpectralData;
pub use sparse::{LinOp, OpTag};
