//! Kronecker 2D-DCT / DCT sparsifying bases.
//!
//! The window `X(t)` (N sensors by W instants) is represented as
//! `X = Ψ_S Z Ψ_Tᵀ`, so `vec(X) = (Ψ_T ⊗ Ψ_S) vec(Z)`. Both factors are
//! orthonormal, and the Kronecker operator is only ever applied through the
//! two small factors.

use itertools::Itertools;
use nalgebra::{DMatrix, DMatrixView, DVector, Dyn, U1};

use crate::error::{invalid, Error, Result};

/// Orthonormal DCT-II analysis matrix: row `k` is the `k`-th cosine atom.
pub fn dct_matrix(n: usize) -> DMatrix<f64> {
    let nf = n as f64;
    DMatrix::from_fn(n, n, |k, i| {
        let scale = if k == 0 {
            (1.0 / nf).sqrt()
        } else {
            (2.0 / nf).sqrt()
        };
        scale * (std::f64::consts::PI * (2.0 * i as f64 + 1.0) * k as f64 / (2.0 * nf)).cos()
    })
}

pub(crate) fn exact_sqrt(n: usize) -> Option<usize> {
    let r = (n as f64).sqrt().round() as usize;
    (r * r == n).then_some(r)
}

#[derive(Debug, Clone)]
pub struct SparsifyingBasis {
    grid_side: usize,
    spatial: DMatrix<f64>,
    spatial_t: DMatrix<f64>,
    temporal: DMatrix<f64>,
    temporal_t: DMatrix<f64>,
}

impl SparsifyingBasis {
    /// Spatial factor is the inverse 2D-DCT over the `√N × √N` block grid
    /// (sensor `n` at grid row `n / √N`, column `n % √N`); the temporal
    /// factor is the inverse DCT over the window.
    pub fn new(n_sensors: usize, window: usize) -> Result<Self> {
        let side = exact_sqrt(n_sensors).filter(|&s| s > 0).ok_or_else(|| {
            invalid(format!(
                "sensor count {n_sensors} is not a positive perfect square"
            ))
        })?;
        if window == 0 {
            return Err(invalid("window must be at least 1"));
        }
        let c = dct_matrix(side);
        let spatial = c.kronecker(&c).transpose();
        let temporal = dct_matrix(window).transpose();
        Ok(Self {
            grid_side: side,
            spatial_t: spatial.transpose(),
            spatial,
            temporal_t: temporal.transpose(),
            temporal,
        })
    }

    pub fn n_sensors(&self) -> usize {
        self.spatial.nrows()
    }

    pub fn window(&self) -> usize {
        self.temporal.nrows()
    }

    pub fn grid_side(&self) -> usize {
        self.grid_side
    }

    /// Length of `vec(X)` and `vec(Z)`.
    pub fn dim(&self) -> usize {
        self.n_sensors() * self.window()
    }

    pub fn spatial(&self) -> &DMatrix<f64> {
        &self.spatial
    }

    pub fn temporal(&self) -> &DMatrix<f64> {
        &self.temporal
    }

    /// Materialized `Ψ_T ⊗ Ψ_S`. Only meant for small sizes and tests.
    pub fn kronecker(&self) -> DMatrix<f64> {
        self.temporal.kronecker(&self.spatial)
    }

    /// Rows of `Ψ` selected by `rows` (indices into `vec(X)`), i.e. `ΓΨ`.
    pub fn select_rows(&self, rows: &[usize]) -> DMatrix<f64> {
        let n = self.n_sensors();
        let w = self.window();
        DMatrix::from_fn(rows.len(), self.dim(), |r, col| {
            let (tn, sn) = (rows[r] / n, rows[r] % n);
            let (tk, sk) = (col / n, col % n);
            debug_assert!(tn < w && tk < w);
            self.temporal[(tn, tk)] * self.spatial[(sn, sk)]
        })
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(invalid(format!(
                "vector length {len} does not match N*W = {}",
                self.dim()
            )));
        }
        Ok(())
    }

    /// `x = Ψ z`.
    pub fn synthesize(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(z.len())?;
        Ok(self.synthesize_slice(z.as_slice()))
    }

    /// `z = Ψᵀ x`.
    pub fn analyze(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(x.len())?;
        Ok(self.analyze_slice(x.as_slice()))
    }

    pub(crate) fn synthesize_slice(&self, z: &[f64]) -> DVector<f64> {
        let zm = DMatrixView::from_slice(z, self.n_sensors(), self.window());
        let xm = &self.spatial * zm * &self.temporal_t;
        xm.reshape_generic(Dyn(self.dim()), U1)
    }

    pub(crate) fn analyze_slice(&self, x: &[f64]) -> DVector<f64> {
        let xm = DMatrixView::from_slice(x, self.n_sensors(), self.window());
        let zm = &self.spatial_t * xm * &self.temporal;
        zm.reshape_generic(Dyn(self.dim()), U1)
    }
}

/// Restricted isometry constant of order `order` by exhaustive enumeration of
/// column supports: `max over |S| = order of max(1 - σ_min², σ_max² - 1)`.
///
/// Column counts above [`RIP_MAX_COLUMNS`] are rejected.
pub fn rip_constant(a: &DMatrix<f64>, order: usize) -> Result<f64> {
    let d = a.ncols();
    if d > RIP_MAX_COLUMNS {
        return Err(Error::UnsupportedSize(format!(
            "{d} columns exceeds the enumeration cap of {RIP_MAX_COLUMNS}"
        )));
    }
    if order == 0 || order > d {
        return Err(Error::UnsupportedSize(format!(
            "order {order} is not in 1..={d}"
        )));
    }
    let gram = a.transpose() * a;
    let mut delta = 0.0_f64;
    for support in (0..d).combinations(order) {
        let sub = DMatrix::from_fn(order, order, |i, j| gram[(support[i], support[j])]);
        let eig = sub.symmetric_eigenvalues();
        let lo = eig.min();
        let hi = eig.max();
        delta = delta.max(1.0 - lo).max(hi - 1.0);
    }
    Ok(delta)
}

pub const RIP_MAX_COLUMNS: usize = 20;
