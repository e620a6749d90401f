//! Consensus ADMM with anchor alignment.
//!
//! Each cache `c` keeps `(z_c, z̃_c, λ_c, {μ_{c,c'}}, ξ_c)`. The consensus
//! variables `v_{c,c'}` and the mirrored multipliers `ν_{c',c}` are
//! eliminated: with equal zero initialization `ν_{c',c} = μ_{c,c'}` at every
//! iteration and `v_{c,c'}` is the mean of the two caches' anchor values.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{adapt_penalty, soft_threshold, SolverConfig};
use crate::basis::SparsifyingBasis;
use crate::caching::{AnchorPlan, CacheLayout, MeasurementSet};
use crate::error::{invalid, Error, Result};
use crate::netsim::{comm_report, CommReport, Inbox, MessageLog, Network};

/// Anchor coupling with one neighbor: row `i` of `Γ_{c,c'}` selects entry
/// `rows[i]` of `vec(X)`. Both endpoints share the same rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub neighbor: usize,
    pub rows: Arc<[usize]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheProblem {
    /// Row `i` of `Φ_c` selects entry `rows[i]` of `vec(X)`.
    pub rows: Vec<usize>,
    pub y: DVector<f64>,
    pub links: Vec<Link>,
}

/// Cached factorization of the z-update system matrix
/// `(Φ_cΨ)ᵀΦ_cΨ + 2 Σ (Γ_{c,c'}Ψ)ᵀΓ_{c,c'}Ψ + I`.
///
/// With `Ψ` orthogonal and `Φ_c`, `Γ_{c,c'}` row selections the matrix equals
/// `Ψᵀ (I + D) Ψ` for a non-negative diagonal `D` counting how often each
/// entry of `vec(X)` is measured or anchored, so its inverse is
/// `Ψᵀ (I + D)⁻¹ Ψ`. The matrix does not depend on `ρ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZUpdateFactor {
    inv_diag: DVector<f64>,
}

impl ZUpdateFactor {
    pub fn new(dim: usize, cache: &CacheProblem) -> Self {
        let mut d = DVector::from_element(dim, 1.0);
        for &r in &cache.rows {
            d[r] += 1.0;
        }
        for link in &cache.links {
            for &r in link.rows.iter() {
                d[r] += 2.0;
            }
        }
        assert!(
            d.iter().all(|&v| v >= 1.0),
            "z-update system matrix must be positive definite"
        );
        Self {
            inv_diag: d.map(|v| 1.0 / v),
        }
    }

    /// `(I + D)⁻¹` as a vector.
    pub fn inverse_diagonal(&self) -> &DVector<f64> {
        &self.inv_diag
    }

    /// Solves `A u = b`.
    pub fn solve(&self, basis: &SparsifyingBasis, b: &DVector<f64>) -> DVector<f64> {
        let scaled = basis
            .synthesize_slice(b.as_slice())
            .component_mul(&self.inv_diag);
        basis.analyze_slice(scaled.as_slice())
    }

    /// The system matrix rebuilt from the factor. Small sizes only.
    pub fn system_matrix(&self, basis: &SparsifyingBasis) -> DMatrix<f64> {
        let psi = basis.kronecker();
        let d = DMatrix::from_diagonal(&self.inv_diag.map(|v| 1.0 / v));
        psi.transpose() * d * psi
    }
}

/// A collaborative recovery instance for one window.
#[derive(Debug, Clone)]
pub struct Problem {
    basis: Arc<SparsifyingBasis>,
    caches: Vec<CacheProblem>,
    factors: Vec<ZUpdateFactor>,
}

impl Problem {
    /// Checks shapes, link symmetry and connectivity of the cache graph,
    /// then factors every cache's z-update system.
    pub fn new(basis: Arc<SparsifyingBasis>, caches: Vec<CacheProblem>) -> Result<Self> {
        let dim = basis.dim();
        let n_caches = caches.len();
        if n_caches == 0 {
            return Err(invalid("problem needs at least one cache"));
        }
        for (c, cp) in caches.iter().enumerate() {
            if cp.rows.len() != cp.y.len() {
                return Err(invalid(format!(
                    "cache {c}: {} rows but {} measurements",
                    cp.rows.len(),
                    cp.y.len()
                )));
            }
            if cp
                .rows
                .iter()
                .chain(cp.links.iter().flat_map(|l| l.rows.iter()))
                .any(|&r| r >= dim)
            {
                return Err(invalid(format!(
                    "cache {c}: selection row out of range for N*W = {dim}"
                )));
            }
            for link in &cp.links {
                let d = link.neighbor;
                if d == c || d >= n_caches {
                    return Err(invalid(format!("cache {c}: invalid neighbor {d}")));
                }
                let back = caches[d].links.iter().find(|l| l.neighbor == c);
                if back.map(|l| &l.rows) != Some(&link.rows) {
                    return Err(invalid(format!(
                        "link {c} -> {d} has no matching reverse link"
                    )));
                }
            }
        }
        let mut seen = vec![false; n_caches];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(c) = stack.pop() {
            for link in &caches[c].links {
                if !std::mem::replace(&mut seen[link.neighbor], true) {
                    stack.push(link.neighbor);
                }
            }
        }
        if seen.iter().any(|&s| !s) {
            return Err(invalid("cache graph is not connected"));
        }
        let factors = caches
            .iter()
            .map(|cp| ZUpdateFactor::new(dim, cp))
            .collect();
        Ok(Self {
            basis,
            caches,
            factors,
        })
    }

    /// One window of the caching model: each cache's stored samples plus the
    /// anchor sets of its graph edges.
    pub fn assemble(
        basis: Arc<SparsifyingBasis>,
        layout: &CacheLayout,
        measurements: &MeasurementSet,
        anchors: &AnchorPlan,
    ) -> Result<Self> {
        let w = basis.window();
        if measurements.n_caches() != layout.n_caches() || measurements.window() != w {
            return Err(invalid("measurements do not match the layout or window"));
        }
        let caches = (0..layout.n_caches())
            .map(|c| {
                let links = layout
                    .neighbors(c)
                    .iter()
                    .map(|&d| {
                        let rows = anchors
                            .rows(c, d, w)
                            .ok_or_else(|| invalid(format!("no anchor set for pair ({c}, {d})")))?;
                        Ok(Link {
                            neighbor: d,
                            rows: rows.into(),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let m = measurements.cache(c);
                Ok(CacheProblem {
                    rows: m.rows.clone(),
                    y: m.y.clone(),
                    links,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        // Share one allocation per undirected pair.
        let mut caches = caches;
        for c in 0..caches.len() {
            for i in 0..caches[c].links.len() {
                let d = caches[c].links[i].neighbor;
                if d < c {
                    let shared = caches[d]
                        .links
                        .iter()
                        .find(|l| l.neighbor == c)
                        .map(|l| Arc::clone(&l.rows));
                    if let Some(rows) = shared {
                        caches[c].links[i].rows = rows;
                    }
                }
            }
        }
        Self::new(basis, caches)
    }

    /// A single agent with no neighbors.
    pub fn single(basis: Arc<SparsifyingBasis>, rows: Vec<usize>, y: DVector<f64>) -> Result<Self> {
        Self::new(
            basis,
            vec![CacheProblem {
                rows,
                y,
                links: Vec::new(),
            }],
        )
    }

    /// Cache `c` on its own, dropping every anchor coupling.
    pub fn isolated(&self, c: usize) -> Result<Self> {
        let cp = &self.caches[c];
        Self::single(Arc::clone(&self.basis), cp.rows.clone(), cp.y.clone())
    }

    pub fn basis(&self) -> &Arc<SparsifyingBasis> {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn n_caches(&self) -> usize {
        self.caches.len()
    }

    pub fn cache(&self, c: usize) -> &CacheProblem {
        &self.caches[c]
    }

    pub fn factor(&self, c: usize) -> &ZUpdateFactor {
        &self.factors[c]
    }

    pub fn neighbor_lists(&self) -> Vec<Vec<usize>> {
        self.caches
            .iter()
            .map(|cp| {
                let mut v: Vec<usize> = cp.links.iter().map(|l| l.neighbor).collect();
                v.sort_unstable();
                v
            })
            .collect()
    }
}

fn gather(x: &DVector<f64>, rows: &[usize]) -> DVector<f64> {
    DVector::from_iterator(rows.len(), rows.iter().map(|&r| x[r]))
}

/// Iterates of one cache.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheState {
    pub z: DVector<f64>,
    pub z_aux: DVector<f64>,
    pub lambda: DVector<f64>,
    /// `μ_{c,c'}`, one per link in link order.
    pub mu: Vec<DVector<f64>>,
    pub xi: DVector<f64>,
    /// `Ψ z`.
    pub x: DVector<f64>,
    /// Neighbors' anchor messages `Γ_{c',c} Ψ z_{c'}` for the same iterate, in link order.
    pub received: Vec<DVector<f64>>,
}

impl CacheState {
    /// This cache's anchor values `Γ_{c,c'} Ψ z_c` for `link`.
    pub fn anchor_values(&self, link: &Link) -> DVector<f64> {
        gather(&self.x, &link.rows)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub caches: Vec<CacheState>,
    pub iteration: usize,
}

impl AdmmState {
    /// Everything zero, which is also a consistent message state.
    pub fn zeros(problem: &Problem) -> Self {
        let dim = problem.dim();
        let caches = problem
            .caches
            .iter()
            .map(|cp| CacheState {
                z: DVector::zeros(dim),
                z_aux: DVector::zeros(dim),
                lambda: DVector::zeros(cp.rows.len()),
                mu: cp
                    .links
                    .iter()
                    .map(|l| DVector::zeros(l.rows.len()))
                    .collect(),
                xi: DVector::zeros(dim),
                x: DVector::zeros(dim),
                received: cp
                    .links
                    .iter()
                    .map(|l| DVector::zeros(l.rows.len()))
                    .collect(),
            })
            .collect();
        Self {
            caches,
            iteration: 0,
        }
    }
}

/// Delivers one synchronous round of anchor messages.
pub trait Exchange {
    fn exchange(&mut self, outgoing: Vec<Vec<(usize, Vec<f64>)>>) -> Result<Vec<Inbox>>;
}

impl Exchange for Network {
    fn exchange(&mut self, outgoing: Vec<Vec<(usize, Vec<f64>)>>) -> Result<Vec<Inbox>> {
        self.exchange_round(outgoing)
    }
}

fn local_update(problem: &Problem, c: usize, st: &CacheState, rho: f64) -> CacheState {
    let cp = &problem.caches[c];
    let basis = &problem.basis;
    let dim = problem.dim();

    let lambda = &st.lambda + (gather(&st.x, &cp.rows) - &cp.y) * rho;
    let mu: Vec<DVector<f64>> = cp
        .links
        .iter()
        .zip(&st.mu)
        .zip(&st.received)
        .map(|((link, mu), recv)| mu + (st.anchor_values(link) - recv) * (0.5 * rho))
        .collect();
    let xi = &st.xi + (&st.z - &st.z_aux) * rho;

    // Sensor-domain part of the right-hand side:
    // Φᵀ(ρy - λ) + Σ Γᵀ(ρ(ΓΨz_c + ΓΨz_c') - 2μ).
    let mut sensor = DVector::zeros(dim);
    for (i, &r) in cp.rows.iter().enumerate() {
        sensor[r] += rho * cp.y[i] - lambda[i];
    }
    for ((link, mu), recv) in cp.links.iter().zip(&mu).zip(&st.received) {
        for (i, &r) in link.rows.iter().enumerate() {
            sensor[r] += rho * (st.x[r] + recv[i]) - 2.0 * mu[i];
        }
    }
    // rhs = Ψᵀ sensor + ρz̃ - ξ, so Ψ rhs = sensor + Ψ(ρz̃ - ξ) and
    // z = (1/ρ) Ψᵀ (I + D)⁻¹ Ψ rhs.
    let free = &st.z_aux * rho - &xi;
    let psi_rhs = basis.synthesize_slice(free.as_slice()) + sensor;
    let x = psi_rhs.component_mul(problem.factors[c].inverse_diagonal()) / rho;
    let z = basis.analyze_slice(x.as_slice());

    let kappa = 1.0 / rho;
    let z_aux = DVector::from_iterator(
        dim,
        z.iter()
            .zip(xi.iter())
            .map(|(&zi, &xii)| soft_threshold(zi + xii / rho, kappa)),
    );

    CacheState {
        z,
        z_aux,
        lambda,
        mu,
        xi,
        x,
        received: st.received.clone(),
    }
}

/// One synchronous CoSR-AA iteration: every cache applies the λ, μ, ξ, z and
/// z̃ updates from iterate `k-1`, then the new anchor values are exchanged.
pub fn cosr_aa_step(
    problem: &Problem,
    state: &AdmmState,
    rho: f64,
    net: &mut dyn Exchange,
) -> Result<AdmmState> {
    let mut caches: Vec<CacheState> = (0..problem.n_caches())
        .map(|c| local_update(problem, c, &state.caches[c], rho))
        .collect();

    let outgoing = problem
        .caches
        .iter()
        .zip(&caches)
        .map(|(cp, st)| {
            cp.links
                .iter()
                .map(|l| (l.neighbor, l.rows.iter().map(|&r| st.x[r]).collect()))
                .collect()
        })
        .collect();
    let mut inboxes = net.exchange(outgoing)?;
    for (c, (cp, st)) in problem.caches.iter().zip(caches.iter_mut()).enumerate() {
        for (i, link) in cp.links.iter().enumerate() {
            let payload = inboxes[c].remove(&link.neighbor).ok_or_else(|| {
                Error::Protocol(format!("cache {c} got no message from {}", link.neighbor))
            })?;
            if payload.len() != link.rows.len() {
                return Err(Error::Protocol(format!(
                    "cache {c} got {} scalars from {}, expected {}",
                    payload.len(),
                    link.neighbor,
                    link.rows.len()
                )));
            }
            st.received[i] = DVector::from_vec(payload);
        }
    }
    Ok(AdmmState {
        caches,
        iteration: state.iteration + 1,
    })
}

/// Squared primal and dual residual norms of iterate `next`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Residuals {
    pub primal_sq: f64,
    pub dual_sq: f64,
}

impl Residuals {
    pub fn primal(&self) -> f64 {
        self.primal_sq.sqrt()
    }

    pub fn dual(&self) -> f64 {
        self.dual_sq.sqrt()
    }
}

/// Primal: measurement misfit, `z - z̃` gap and half the pairwise anchor
/// mismatch. Dual: `ρ² Σ_c ‖z̃ᵏ⁻¹ - z̃ᵏ + Σ (ΓΨ)ᵀΓΨ(Δz_c + Δz_c')‖²` with
/// `Δz = zᵏ⁻¹ - zᵏ`.
pub fn residuals(problem: &Problem, prev: &AdmmState, next: &AdmmState, rho: f64) -> Residuals {
    let mut primal_sq = 0.0;
    let mut dual = 0.0;
    for (c, cp) in problem.caches.iter().enumerate() {
        let (p, n) = (&prev.caches[c], &next.caches[c]);
        primal_sq += (gather(&n.x, &cp.rows) - &cp.y).norm_squared();
        primal_sq += (&n.z - &n.z_aux).norm_squared();
        for (link, recv) in cp.links.iter().zip(&n.received) {
            primal_sq += 0.5 * (n.anchor_values(link) - recv).norm_squared();
        }

        let mut v = &p.z_aux - &n.z_aux;
        if !cp.links.is_empty() {
            let mut g = DVector::zeros(problem.dim());
            for (i, link) in cp.links.iter().enumerate() {
                for (j, &r) in link.rows.iter().enumerate() {
                    g[r] += (p.x[r] - n.x[r]) + (p.received[i][j] - n.received[i][j]);
                }
            }
            v += problem.basis.analyze_slice(g.as_slice());
        }
        dual += v.norm_squared();
    }
    Residuals {
        primal_sq,
        dual_sq: rho * rho * dual,
    }
}

#[derive(Debug, Clone, Default)]
pub struct SolveOptions {
    pub trace: bool,
    /// Ground-truth `vec(X)`; enables per-cache NMSE in the trace.
    pub truth: Option<DVector<f64>>,
    /// Keep one log entry per delivered message, not just round totals.
    pub message_log: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub primal: f64,
    pub dual: f64,
    pub rho: f64,
    pub nmse: Vec<f64>,
}

/// Columns: `iteration,primal,dual,rho,nmse_0,…,nmse_{C-1}`.
pub fn write_trace_csv<W: Write>(rows: &[TraceRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n = rows.first().map_or(0, |r| r.nmse.len());
    let mut header = vec![
        "iteration".to_string(),
        "primal".into(),
        "dual".into(),
        "rho".into(),
    ];
    header.extend((0..n).map(|c| format!("nmse_{c}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.iteration.to_string(),
            r.primal.to_string(),
            r.dual.to_string(),
            r.rho.to_string(),
        ];
        rec.extend(r.nmse.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub iterations: usize,
    pub converged: bool,
    pub primal_sq: f64,
    pub dual_sq: f64,
    pub final_rho: f64,
    pub comm: CommReport,
}

#[derive(Debug, Clone)]
pub struct CosrSolution {
    /// Per-cache `ẑ_c`.
    pub z: Vec<DVector<f64>>,
    /// Per-cache `x̂_c = Ψ ẑ_c`.
    pub x: Vec<DVector<f64>>,
    pub report: ConvergenceReport,
    pub trace: Vec<TraceRow>,
    pub log: MessageLog,
}

/// Runs CoSR-AA over an in-process [`Network`] built from the problem's graph.
pub fn solve_cosr_aa(
    problem: &Problem,
    config: &SolverConfig,
    options: &SolveOptions,
) -> Result<CosrSolution> {
    let mut net = Network::new(problem.neighbor_lists(), problem.dim());
    if options.message_log {
        net = net.with_detailed_log();
    }
    let mut sol = solve_cosr_aa_with(problem, config, options, &mut net)?;
    sol.report.comm = comm_report(net.log(), sol.report.iterations);
    sol.log = net.into_log();
    Ok(sol)
}

/// Runs CoSR-AA with caller-supplied message delivery. Hitting the
/// iteration cap returns the last iterate with `converged = false`.
pub fn solve_cosr_aa_with(
    problem: &Problem,
    config: &SolverConfig,
    options: &SolveOptions,
    net: &mut dyn Exchange,
) -> Result<CosrSolution> {
    config.validate()?;
    let truth_energy = options.truth.as_ref().map(|t| t.norm_squared());
    let mut state = AdmmState::zeros(problem);
    let mut rho = config.rho0;
    let mut trace = Vec::new();
    let mut last = Residuals {
        primal_sq: f64::NAN,
        dual_sq: f64::NAN,
    };
    let mut converged = false;
    let mut rho_used = rho;
    let mut changes = 0;
    while state.iteration < config.max_iterations {
        let next = cosr_aa_step(problem, &state, rho, net)?;
        last = residuals(problem, &state, &next, rho);
        rho_used = rho;
        if options.trace {
            let nmse = match (&options.truth, truth_energy) {
                (Some(t), Some(e)) if e > 0.0 => next
                    .caches
                    .iter()
                    .map(|s| (&s.x - t).norm_squared() / e)
                    .collect(),
                _ => Vec::new(),
            };
            trace.push(TraceRow {
                iteration: next.iteration,
                primal: last.primal(),
                dual: last.dual(),
                rho,
                nmse,
            });
        }
        state = next;
        if last.primal_sq <= config.eps_pri && last.dual_sq <= config.eps_dual {
            converged = true;
            break;
        }
        if config.adapt_penalty && changes < config.max_penalty_changes {
            let next_rho = adapt_penalty(
                rho,
                last.primal(),
                last.dual(),
                config.tau,
                config.eta_ratio,
            );
            if next_rho != rho {
                changes += 1;
            }
            rho = next_rho;
        }
    }
    let iterations = state.iteration;
    let (z, x) = state.caches.into_iter().map(|s| (s.z, s.x)).unzip();
    Ok(CosrSolution {
        z,
        x,
        report: ConvergenceReport {
            iterations,
            converged,
            primal_sq: last.primal_sq,
            dual_sq: last.dual_sq,
            final_rho: rho_used,
            comm: comm_report(&MessageLog::default(), 0),
        },
        trace,
        log: MessageLog::default(),
    })
}
