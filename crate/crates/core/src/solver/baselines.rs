use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::admm::{solve_cosr_aa, ConvergenceReport, Problem, SolveOptions};
use super::SolverConfig;
use crate::basis::SparsifyingBasis;
use crate::caching::{CacheLayout, MeasurementSet};
use crate::error::{invalid, Result};

/// A single-agent recovery.
#[derive(Debug, Clone)]
pub struct Recovery {
    pub z: DVector<f64>,
    pub x: DVector<f64>,
    pub report: ConvergenceReport,
}

impl Recovery {
    /// `X̂` as an `N × W` matrix.
    pub fn matrix(&self, n_sensors: usize) -> DMatrix<f64> {
        unvec(&self.x, n_sensors)
    }
}

/// Reshapes a column-major `vec(X)` into `N × W`.
pub fn unvec(x: &DVector<f64>, n_sensors: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(n_sensors, x.len() / n_sensors, x.as_slice())
}

/// `min ‖z‖₁ s.t. y = Ψ z restricted to rows`, run as single-agent ADMM.
pub fn basis_pursuit(
    basis: Arc<SparsifyingBasis>,
    rows: Vec<usize>,
    y: DVector<f64>,
    config: &SolverConfig,
) -> Result<Recovery> {
    let problem = Problem::single(basis, rows, y)?;
    let mut sol = solve_cosr_aa(&problem, config, &SolveOptions::default())?;
    Ok(Recovery {
        z: sol.z.remove(0),
        x: sol.x.remove(0),
        report: sol.report,
    })
}

/// Fusion-center recovery from every cache's samples.
pub fn solve_centralized(
    basis: Arc<SparsifyingBasis>,
    measurements: &MeasurementSet,
    config: &SolverConfig,
) -> Result<Recovery> {
    let (rows, y) = measurements.stacked();
    if rows.is_empty() {
        return Err(invalid(
            "centralized recovery needs at least one measurement",
        ));
    }
    basis_pursuit(basis, rows, y, config)
}

/// Each cache recovers the whole field from its own samples only.
pub fn solve_noncollaborative(
    basis: Arc<SparsifyingBasis>,
    measurements: &MeasurementSet,
    config: &SolverConfig,
) -> Result<Vec<Recovery>> {
    measurements
        .caches()
        .iter()
        .map(|m| basis_pursuit(Arc::clone(&basis), m.rows.clone(), m.y.clone(), config))
        .collect()
}

fn check_shapes(recs: &[DMatrix<f64>]) -> Result<(usize, usize)> {
    let first = recs
        .first()
        .ok_or_else(|| invalid("no reconstructions to fuse"))?;
    let shape = first.shape();
    if recs.iter().any(|r| r.shape() != shape) {
        return Err(invalid("reconstructions differ in shape"));
    }
    Ok(shape)
}

/// Entrywise mean of the per-cache reconstructions.
pub fn baseline_average(recs: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let (n, w) = check_shapes(recs)?;
    let sum = recs.iter().fold(DMatrix::zeros(n, w), |acc, r| acc + r);
    Ok(sum / recs.len() as f64)
}

/// Row `n` taken from the cache covering sensor `n`.
pub fn baseline_partition(recs: &[DMatrix<f64>], layout: &CacheLayout) -> Result<DMatrix<f64>> {
    let (n, w) = check_shapes(recs)?;
    if recs.len() != layout.n_caches() || n != layout.n_sensors() {
        return Err(invalid("reconstructions do not match the cache layout"));
    }
    let mut out = DMatrix::zeros(n, w);
    for s in 0..n {
        let c = layout
            .owner(s)
            .ok_or_else(|| invalid(format!("sensor {s} is in no coverage")))?;
        out.set_row(s, &recs[c].row(s));
    }
    Ok(out)
}
