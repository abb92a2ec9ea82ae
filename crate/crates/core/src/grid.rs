//! Tensor grids on a rectangle and nodal fields on them.
//!
//! Nodes are vertex-centered and include the boundary. Every node carries
//! the same quadrature weight `w = h1 * h2`, so the discrete mass of a field
//! is `w * sum(values)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::sparse::{CsrMatrix, LinOp, OpTag, TripletBuilder};

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Rect {
    pub a1: f64,
    pub b1: f64,
    pub a2: f64,
    pub b2: f64,
}

impl Rect {
    pub const fn new(a1: f64, b1: f64, a2: f64, b2: f64) -> Self {
        Self { a1, b1, a2, b2 }
    }

    pub const UNIT: Rect = Rect::new(0.0, 1.0, 0.0, 1.0);

    pub fn area(&self) -> f64 {
        (self.b1 - self.a1) * (self.b2 - self.a2)
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.a1 + self.b1), 0.5 * (self.a2 + self.b2))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Grid2D {
    nx1: usize,
    nx2: usize,
    bounds: Rect,
    h1: f64,
    h2: f64,
}

impl Grid2D {
    pub fn new(nx1: usize, nx2: usize, bounds: Rect) -> Result<Self> {
        if nx1 < 3 || nx2 < 3 {
            return Err(Error::InvalidInput(alloc::format!(
                "grid needs at least 3 nodes per axis, got {nx1}x{nx2}"
            )));
        }
        let finite = [bounds.a1, bounds.b1, bounds.a2, bounds.b2].iter().all(|v| v.is_finite());
        if !finite || bounds.b1 <= bounds.a1 || bounds.b2 <= bounds.a2 {
            return Err(Error::InvalidInput(alloc::format!("degenerate bounds {bounds:?}")));
        }
        Ok(Self {
            nx1,
            nx2,
            bounds,
            h1: (bounds.b1 - bounds.a1) / (nx1 - 1) as f64,
            h2: (bounds.b2 - bounds.a2) / (nx2 - 1) as f64,
        })
    }

    pub fn nx1(&self) -> usize {
        self.nx1
    }

    pub fn nx2(&self) -> usize {
        self.nx2
    }

    pub fn bounds(&self) -> Rect {
        self.bounds
    }

    pub fn h1(&self) -> f64 {
        self.h1
    }

    pub fn h2(&self) -> f64 {
        self.h2
    }

    pub fn max_h(&self) -> f64 {
        self.h1.max(self.h2)
    }

    /// Quadrature weight of every node.
    pub fn w(&self) -> f64 {
        self.h1 * self.h2
    }

    /// Total node count.
    pub fn k(&self) -> usize {
        self.nx1 * self.nx2
    }

    /// Row-major index with axis 1 fastest.
    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx1 && j < self.nx2);
        j * self.nx1 + i
    }

    #[inline]
    pub fn ij(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx1, idx / self.nx1)
    }

    #[inline]
    pub fn x1(&self, i: usize) -> f64 {
        self.bounds.a1 + i as f64 * self.h1
    }

    #[inline]
    pub fn x2(&self, j: usize) -> f64 {
        self.bounds.a2 + j as f64 * self.h2
    }

    pub fn point(&self, idx: usize) -> (f64, f64) {
        let (i, j) = self.ij(idx);
        (self.x1(i), self.x2(j))
    }

    pub fn nearest_node(&self, x1: f64, x2: f64) -> usize {
        let clamp = |v: f64, n: usize| -> usize {
            let r = libm::round(v);
            if r <= 0.0 {
                0
            } else if r >= (n - 1) as f64 {
                n - 1
            } else {
                r as usize
            }
        };
        let i = clamp((x1 - self.bounds.a1) / self.h1, self.nx1);
        let j = clamp((x2 - self.bounds.a2) / self.h2, self.nx2);
        self.index(i, j)
    }
}

/// Nodal values bound to a grid.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScalarField {
    grid: Grid2D,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.k() {
            return Err(Error::DimensionMismatch { expected: grid.k(), found: values.len() });
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid2D) -> Self {
        Self { grid, values: vec![0.0; grid.k()] }
    }

    pub fn constant(grid: Grid2D, c: f64) -> Self {
        Self { grid, values: vec![c; grid.k()] }
    }

    pub fn from_fn(grid: Grid2D, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let values = (0..grid.k())
            .map(|p| {
                let (x1, x2) = grid.point(p);
                f(x1, x2)
            })
            .collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Discrete mass `w * sum(values)`.
    pub fn mass(&self) -> f64 {
        self.grid.w() * self.values.iter().sum::<f64>()
    }

    pub fn weighted_norm(&self) -> f64 {
        libm::sqrt(self.grid.w() * self.values.iter().map(|v| v * v).sum::<f64>())
    }

    pub fn weighted_inner(&self, other: &ScalarField) -> Result<f64> {
        weighted_inner(self, other)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// Subtracts the weighted mean so the field has zero mass.
    pub fn zero_mean(mut self) -> ScalarField {
        let mean = self.values.iter().sum::<f64>() / self.values.len() as f64;
        self.values.iter_mut().for_each(|v| *v -= mean);
        self
    }
}

/// `<u, v> = w * sum(u_i v_i)`.
pub fn weighted_inner(u: &ScalarField, v: &ScalarField) -> Result<f64> {
    if u.grid != v.grid {
        return Err(Error::GridMismatch);
    }
    Ok(u.grid.w() * dot(&u.values, &v.values))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gram matrix of the discrete H1 inner product,
/// `y^T K y = w * (|y|^2 + |D1 y|^2 + |D2 y|^2)` with forward differences
/// and no difference across the far boundary.
pub fn h1_gram(grid: &Grid2D) -> LinOp {
    let k = grid.k();
    let w = grid.w();
    let mut tb = TripletBuilder::new(k, k);
    for p in 0..k {
        tb.push(p, p, w);
    }
    let mut edge = |p: usize, q: usize, h: f64| {
        let c = w / (h * h);
        tb.push(p, p, c);
        tb.push(q, q, c);
        tb.push(p, q, -c);
        tb.push(q, p, -c);
    };
    for j in 0..grid.nx2() {
        for i in 0..grid.nx1() {
            let p = grid.index(i, j);
            if i + 1 < grid.nx1() {
                edge(p, grid.index(i + 1, j), grid.h1());
            }
            if j + 1 < grid.nx2() {
                edge(p, grid.index(i, j + 1), grid.h2());
            }
        }
    }
    LinOp::new(*grid, OpTag::Gram, CsrMatrix::from(tb))
}
