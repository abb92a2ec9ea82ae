//! Projections onto the zero-mass subspace and the reduced (k-1)-dimensional system.
//!
//! `P = I - rho_inf 1^T` projects onto zero-mass fields along `rho_inf`, with
//! `1 = w (1, ..., 1)^T` the weighted one-vector; `Q = I - P` is its complement.
//! The reduction factor `R` has columns `e_f - e_a` for every free node `f` and
//! `rho_inf` as its last column, where the anchor `a` is the node of largest
//! stationary density. In these coordinates the mass direction decouples and
//! the dynamics on zero-mass fields are carried by `(k-1)`-vectors.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{dot, Grid2D, ScalarField};
use crate::operators::norm;
use crate::sparse::{CsrMatrix, LinOp, OpTag};

const MASS_TOL: f64 = 1e-12;
pub const IDENTITY_TOL: f64 = 1e-10;

fn check_mass(rho_inf: &ScalarField) -> Result<()> {
    let m = rho_inf.mass();
    if (m - 1.0).abs() > MASS_TOL {
        return Err(Error::NonUnitMass(m));
    }
    Ok(())
}

/// `P = I - rho_inf 1^T`, stored as its two factors.
#[derive(Clone, Debug, PartialEq)]
pub struct Projector {
    rho_inf: Vec<f64>,
    w: f64,
}

pub fn projector_p(rho_inf: &ScalarField) -> Result<Projector> {
    check_mass(rho_inf)?;
    Ok(Projector { rho_inf: rho_inf.values().to_vec(), w: rho_inf.grid().w() })
}

impl Projector {
    pub fn dim(&self) -> usize {
        self.rho_inf.len()
    }

    /// `P y = y - rho_inf <1, y>`.
    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        let m = self.w * y.iter().sum::<f64>();
        y.iter().zip(&self.rho_inf).map(|(v, r)| v - r * m).collect()
    }

    /// `P^T z = z - 1 (rho_inf . z)`.
    pub fn apply_transpose(&self, z: &[f64]) -> Vec<f64> {
        let s = self.w * dot(&self.rho_inf, z);
        z.iter().map(|v| v - s).collect()
    }

    /// `Q y = rho_inf <1, y>`.
    pub fn complement(&self, y: &[f64]) -> Vec<f64> {
        let m = self.w * y.iter().sum::<f64>();
        self.rho_inf.iter().map(|r| r * m).collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let k = self.dim();
        DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { 0.0 } - self.rho_inf[i] * self.w)
    }
}

/// The reduction `R`, its inverse and the selector `Q = (I_{k-1}; 0)` in
/// structured form.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReductionMap {
    anchor: usize,
    free: Vec<usize>,
    rho_inf: Vec<f64>,
    w: f64,
}

/// Builds `R` anchored at the node of largest stationary density.
pub fn build_r(rho_inf: &ScalarField) -> Result<ReductionMap> {
    check_mass(rho_inf)?;
    let v = rho_inf.values();
    let anchor = (0..v.len()).max_by(|&p, &q| v[p].total_cmp(&v[q])).unwrap_or(0);
    ReductionMap::with_anchor(v.to_vec(), rho_inf.grid().w(), anchor)
}

impl ReductionMap {
    /// Reduction with an explicit anchor; `anchor = k - 1` gives the classical
    /// layout where the last node closes the system.
    pub fn with_anchor(rho_inf: Vec<f64>, w: f64, anchor: usize) -> Result<Self> {
        let k = rho_inf.len();
        if k < 2 || anchor >= k {
            return Err(Error::InvalidInput(alloc::format!("anchor {anchor} out of range for k = {k}")));
        }
        let m = w * rho_inf.iter().sum::<f64>();
        if (m - 1.0).abs() > MASS_TOL {
            return Err(Error::NonUnitMass(m));
        }
        if !(rho_inf[anchor] > 0.0) {
            return Err(Error::InvalidInput("stationary density vanishes at the anchor".into()));
        }
        let free = (0..k).filter(|&p| p != anchor).collect();
        Ok(Self { anchor, free, rho_inf, w })
    }

    /// Reduced dimension `k - 1`.
    pub fn n(&self) -> usize {
        self.free.len()
    }

    pub fn k(&self) -> usize {
        self.rho_inf.len()
    }

    pub fn anchor(&self) -> usize {
        self.anchor
    }

    pub fn free_nodes(&self) -> &[usize] {
        &self.free
    }

    pub fn rho_inf(&self) -> &[f64] {
        &self.rho_inf
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    /// `Q^T R^{-1} y`: coordinates of `P y` in the reduced basis.
    pub fn restrict(&self, y: &[f64]) -> Vec<f64> {
        let m = self.w * y.iter().sum::<f64>();
        self.free.iter().map(|&f| y[f] - self.rho_inf[f] * m).collect()
    }

    /// `R Q yhat`: the zero-mass field with reduced coordinates `yhat`.
    pub fn lift(&self, yhat: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.k()];
        for (&f, &v) in self.free.iter().zip(yhat) {
            y[f] = v;
        }
        y[self.anchor] = -yhat.iter().sum::<f64>();
        y
    }

    /// `Q^T R^T z`: reduced representative of a dual (test) vector.
    pub fn reduce_dual(&self, z: &[f64]) -> Vec<f64> {
        let za = z[self.anchor];
        self.free.iter().map(|&f| z[f] - za).collect()
    }

    /// `R^{-T} Q v`, the inverse of `reduce_dual` on vectors with `rho_inf . z = 0`.
    pub fn lift_dual(&self, v: &[f64]) -> Vec<f64> {
        let s: f64 = self.free.iter().zip(v).map(|(&f, x)| self.rho_inf[f] * x).sum();
        let mut z = vec![-self.w * s; self.k()];
        for (&f, &x) in self.free.iter().zip(v) {
            z[f] += x;
        }
        z
    }

    /// `R z` for `z` in reduced-plus-mass coordinates (length `k`).
    pub fn r_apply(&self, z: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut y: Vec<f64> = self.rho_inf.iter().map(|r| r * z[n]).collect();
        let mut s = 0.0;
        for (m, &f) in self.free.iter().enumerate() {
            y[f] += z[m];
            s += z[m];
        }
        y[self.anchor] -= s;
        y
    }

    /// `R^{-1} y`.
    pub fn r_inv_apply(&self, y: &[f64]) -> Vec<f64> {
        let mut z = self.restrict(y);
        z.push(self.w * y.iter().sum::<f64>());
        z
    }

    pub fn r_dense(&self) -> DMatrix<f64> {
        let k = self.k();
        let mut r = DMatrix::zeros(k, k);
        for (m, &f) in self.free.iter().enumerate() {
            r[(f, m)] = 1.0;
            r[(self.anchor, m)] = -1.0;
        }
        for p in 0..k {
            r[(p, k - 1)] = self.rho_inf[p];
        }
        r
    }

    pub fn r_inv_dense(&self) -> DMatrix<f64> {
        let k = self.k();
        let mut ri = DMatrix::zeros(k, k);
        for (m, &f) in self.free.iter().enumerate() {
            for p in 0..k {
                ri[(m, p)] = -self.rho_inf[f] * self.w;
            }
            ri[(m, f)] += 1.0;
        }
        for p in 0..k {
            ri[(k - 1, p)] = self.w;
        }
        ri
    }

    /// Reduced mass gram `w (RQ)^T (RQ) = w (I + 1 1^T)`.
    pub fn mass_gram(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, n, |i, j| self.w * if i == j { 2.0 } else { 1.0 })
    }

    /// `(RQ)^T M (RQ)` for a sparse `M`.
    pub fn reduce_form(&self, m: &CsrMatrix) -> DMatrix<f64> {
        let n = self.n();
        let k = self.k();
        let mut pos = vec![usize::MAX; k];
        for (i, &f) in self.free.iter().enumerate() {
            pos[f] = i;
        }
        let a = self.anchor;
        let mut out = DMatrix::zeros(n, n);
        let mut col_a = vec![0.0; n]; // M[f, a]
        let mut row_a = vec![0.0; n]; // M[a, f]
        let mut aa = 0.0;
        for (r, c, v) in m.triplets() {
            match (r == a, c == a) {
                (false, false) => out[(pos[r], pos[c])] += v,
                (false, true) => col_a[pos[r]] += v,
                (true, false) => row_a[pos[c]] += v,
                (true, true) => aa += v,
            }
        }
        for j in 0..n {
            for i in 0..n {
                out[(i, j)] += aa - col_a[i] - row_a[j];
            }
        }
        out
    }

    /// `Q^T R^{-1} M R Q` for a sparse `M`.
    pub fn reduce_operator(&self, m: &CsrMatrix) -> DMatrix<f64> {
        let n = self.n();
        let k = self.k();
        let mut pos = vec![usize::MAX; k];
        for (i, &f) in self.free.iter().enumerate() {
            pos[f] = i;
        }
        let a = self.anchor;
        let mut out = DMatrix::zeros(n, n);
        let mut col_a = vec![0.0; n];
        for (r, c, v) in m.triplets() {
            if r == a {
                continue;
            }
            if c == a {
                col_a[pos[r]] += v;
            } else {
                out[(pos[r], pos[c])] += v;
            }
        }
        // mass flux of each reduced basis vector: 1^T M (e_f - e_a)
        let cs = m.col_sums();
        let flux: Vec<f64> = self.free.iter().map(|&f| self.w * (cs[f] - cs[a])).collect();
        for j in 0..n {
            for i in 0..n {
                out[(i, j)] -= col_a[i] + self.rho_inf[self.free[i]] * flux[j];
            }
        }
        out
    }
}

/// State weight of the quadratic cost.
#[derive(Clone, Debug, PartialEq)]
pub enum StateWeight {
    /// `M = scale * w P^T P`, the weighted L2 norm of the zero-mass part.
    L2 { scale: f64 },
    Operator(CsrMatrix),
}

impl Default for StateWeight {
    fn default() -> Self {
        StateWeight::L2 { scale: 1.0 }
    }
}

/// The zero-mass model `yhat' = Ahat yhat + u (Nhat yhat + Bhat)` together
/// with the cost weight and the shift used by the Riccati design.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReducedSystem {
    pub ahat: DMatrix<f64>,
    pub bhat: DVector<f64>,
    pub mhat: DMatrix<f64>,
    pub map: ReductionMap,
    pub delta: f64,
}

impl ReducedSystem {
    pub fn n(&self) -> usize {
        self.ahat.nrows()
    }

    pub fn rho_inf(&self) -> &[f64] {
        self.map.rho_inf()
    }

    /// `Ahat + delta I`.
    pub fn shifted(&self) -> DMatrix<f64> {
        let mut f = self.ahat.clone();
        for i in 0..self.n() {
            f[(i, i)] += self.delta;
        }
        f
    }

    pub fn mass_gram(&self) -> DMatrix<f64> {
        self.map.mass_gram()
    }
}

/// Relative residuals of the structural identities the reduction relies on.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IdentityReport {
    pub qa: f64,
    pub pa_minus_a: f64,
    pub qn: f64,
    pub pn_minus_n: f64,
    pub pb_minus_b: f64,
    pub qb: f64,
    /// `|A rho_inf|` relative to `|A| |rho_inf|` (not one of the six, but needed by `R`).
    pub a_rho: f64,
    pub tolerance: f64,
}

impl IdentityReport {
    pub fn six(&self) -> [(&'static str, f64); 6] {
        [
            ("QA", self.qa),
            ("PA-A", self.pa_minus_a),
            ("QN", self.qn),
            ("PN-N", self.pn_minus_n),
            ("PB-B", self.pb_minus_b),
            ("QB", self.qb),
        ]
    }

    pub fn worst(&self) -> (&'static str, f64) {
        self.six().into_iter().fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a })
    }

    pub fn passed(&self) -> bool {
        self.six().iter().all(|(_, v)| *v <= self.tolerance)
    }
}

/// Frobenius norm of `Q M = rho_inf (M^T 1)^T`, a rank-one matrix.
fn q_times_norm(m: &CsrMatrix, rho: &[f64], w: f64) -> f64 {
    let ct: Vec<f64> = m.col_sums().iter().map(|c| w * c).collect();
    norm(rho) * norm(&ct)
}

fn rel(x: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        x / scale
    } else {
        x
    }
}

pub fn verify_identities(a: &LinOp, n: &LinOp, b: &ScalarField, rho_inf: &ScalarField) -> Result<IdentityReport> {
    a.expect_tag(OpTag::Generator)?;
    n.expect_tag(OpTag::Control)?;
    let grid: &Grid2D = a.grid();
    if n.grid() != grid || b.grid() != grid || rho_inf.grid() != grid {
        return Err(Error::GridMismatch);
    }
    let w = grid.w();
    let rho = rho_inf.values();
    let an = a.frobenius_norm();
    let nn = n.frobenius_norm();
    let qa = rel(q_times_norm(a.matrix(), rho, w), an);
    let qn = rel(q_times_norm(n.matrix(), rho, w), nn);
    let mb = w * b.values().iter().sum::<f64>();
    let qb = rel(mb.abs() * norm(rho), norm(b.values()));
    let a_rho = rel(norm(&a.apply(rho)), an * norm(rho));
    Ok(IdentityReport {
        qa,
        pa_minus_a: qa,
        qn,
        pn_minus_n: qn,
        pb_minus_b: qb,
        qb,
        a_rho,
        tolerance: IDENTITY_TOL,
    })
}

/// Builds `(Ahat, Bhat, Mhat)` after checking that the transformed generator
/// `R^{-1} A R` has a null last row and column.
pub fn reduce_system(
    a: &LinOp,
    b: &ScalarField,
    weight: &StateWeight,
    map: &ReductionMap,
    delta: f64,
) -> Result<ReducedSystem> {
    a.expect_tag(OpTag::Generator)?;
    if b.len() != map.k() || a.dim() != map.k() {
        return Err(Error::DimensionMismatch { expected: map.k(), found: b.len() });
    }
    if !(delta >= 0.0) {
        return Err(Error::InvalidInput(alloc::format!("shift must be nonnegative, got {delta}")));
    }
    let w = map.w();
    let an = a.frobenius_norm();
    let ones = vec![w; map.k()];
    let rho = map.rho_inf();
    // last row of R^{-1} A R is (A^T 1)^T R, last column R^{-1} A rho_inf
    let row = rel(norm(&a.apply_transpose(&ones)), an * norm(&ones));
    if row > IDENTITY_TOL {
        return Err(Error::IdentityViolation { which: "1^T A = 0", residual: row });
    }
    let col = rel(norm(&a.apply(rho)), an * norm(rho));
    if col > IDENTITY_TOL {
        return Err(Error::IdentityViolation { which: "A rho_inf = 0", residual: col });
    }
    let bm = rel((w * b.values().iter().sum::<f64>()).abs() * norm(&ones), norm(b.values()));
    if bm > IDENTITY_TOL {
        return Err(Error::IdentityViolation { which: "1^T B = 0", residual: bm });
    }
    let ahat = map.reduce_operator(a.matrix());
    let bhat = DVector::from_vec(map.restrict(b.values()));
    let mhat = match weight {
        StateWeight::L2 { scale } => map.mass_gram() * *scale,
        StateWeight::Operator(m) => {
            let mut mh = map.reduce_form(m);
            crate::dense::symmetrize_in_place(&mut mh);
            mh
        }
    };
    Ok(ReducedSystem { ahat, bhat, mhat, map: map.clone(), delta })
}
