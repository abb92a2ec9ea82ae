//! Confining potentials and the Gibbs stationary state they induce.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{Grid2D, ScalarField};

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum Potential {
    /// `G = a (x1^2 - 1)^2 + b x2^2`.
    DoubleWell { a: f64, b: f64 },
    /// `G = (c1 x1^2 + c2 x2^2) / 2`.
    Quadratic { c1: f64, c2: f64 },
    /// Constant potential: pure diffusion.
    Flat,
}

impl Potential {
    pub const DOUBLE_WELL: Potential = Potential::DoubleWell { a: 3.0, b: 6.0 };

    #[inline]
    pub fn eval(&self, x1: f64, x2: f64) -> f64 {
        match *self {
            Potential::DoubleWell { a, b } => {
                let s = x1 * x1 - 1.0;
                a * s * s + b * x2 * x2
            }
            Potential::Quadratic { c1, c2 } => 0.5 * (c1 * x1 * x1 + c2 * x2 * x2),
            Potential::Flat => 0.0,
        }
    }

    #[inline]
    pub fn gradient(&self, x1: f64, x2: f64) -> (f64, f64) {
        match *self {
            Potential::DoubleWell { a, b } => (4.0 * a * x1 * (x1 * x1 - 1.0), 2.0 * b * x2),
            Potential::Quadratic { c1, c2 } => (c1 * x1, c2 * x2),
            Potential::Flat => (0.0, 0.0),
        }
    }
}

/// A potential together with the diffusion coefficient.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PotentialSpec {
    pub potential: Potential,
    pub nu: f64,
}

impl PotentialSpec {
    pub fn new(potential: Potential, nu: f64) -> Result<Self> {
        if !(nu > 0.0) || !nu.is_finite() {
            return Err(Error::InvalidInput(alloc::format!("diffusion must be positive, got {nu}")));
        }
        Ok(Self { potential, nu })
    }

    pub fn double_well() -> Self {
        Self { potential: Potential::DOUBLE_WELL, nu: 1.0 }
    }

    /// `phi = ln(nu) + G / nu`, the exponent of the Gibbs density.
    pub fn phi(&self, x1: f64, x2: f64) -> f64 {
        libm::log(self.nu) + self.potential.eval(x1, x2) / self.nu
    }
}

pub fn eval_potential(spec: &PotentialSpec, grid: &Grid2D) -> ScalarField {
    ScalarField::from_fn(*grid, |x1, x2| spec.potential.eval(x1, x2))
}

pub fn phi_field(spec: &PotentialSpec, grid: &Grid2D) -> ScalarField {
    ScalarField::from_fn(*grid, |x1, x2| spec.phi(x1, x2))
}

/// Nodal `exp(-G/nu)` normalized to unit discrete mass.
///
/// This is the continuous Gibbs density sampled at the nodes; the exact
/// kernel of the discrete generator is `operators::discrete_stationary`.
pub fn stationary_state(spec: &PotentialSpec, grid: &Grid2D) -> ScalarField {
    let g = eval_potential(spec, grid);
    let gmin = g.values().iter().cloned().fold(f64::INFINITY, f64::min);
    let mut vals: Vec<f64> =
        g.values().iter().map(|&v| libm::exp(-(v - gmin) / spec.nu)).collect();
    let mass = grid.w() * vals.iter().sum::<f64>();
    vals.iter_mut().for_each(|v| *v /= mass);
    ScalarField::new(*grid, vals).expect("length matches grid")
}
