//! Independent oracles shared by the integration tests and the acceptance
//! runner. Nothing here calls into the solver internals.

#![allow(dead_code)]

use std::sync::Arc;

use cosr_core::basis::SparsifyingBasis;
use cosr_core::caching::{
    selection_matrix, AnchorPlan, AnchorStrategy, CacheLayout, MeasurementSet,
};
use cosr_core::field::{Scenario, ScenarioConfig};
use cosr_core::rng::{stream, Stream};
use cosr_core::solver::{soft_threshold, Problem};
use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;

/// Solution of `min ‖z‖₁ s.t. A z = y` found by enumerating every basic
/// feasible solution of the equivalent LP.
#[derive(Debug, Clone)]
pub struct LpOptimum {
    pub objective: f64,
    pub z: DVector<f64>,
    /// No other vertex attains the optimum, so the LP solution is unique.
    pub unique: bool,
}

pub fn lp_vertex_oracle(a: &DMatrix<f64>, y: &DVector<f64>) -> Option<LpOptimum> {
    let (m, n) = a.shape();
    let mut best: Option<LpOptimum> = None;
    let mut consider = |z: DVector<f64>| {
        let obj = z.lp_norm(1);
        match &mut best {
            Some(b) if obj < b.objective - 1e-9 => {
                *b = LpOptimum {
                    objective: obj,
                    z,
                    unique: true,
                }
            }
            Some(b) if (obj - b.objective).abs() <= 1e-9 => {
                if (&z - &b.z).amax() > 1e-7 {
                    b.unique = false;
                }
            }
            Some(_) => {}
            None => {
                best = Some(LpOptimum {
                    objective: obj,
                    z,
                    unique: true,
                })
            }
        }
    };
    if y.amax() == 0.0 {
        consider(DVector::zeros(n));
    }
    for k in 1..=m.min(n) {
        for support in (0..n).combinations(k) {
            let sub = DMatrix::from_fn(m, k, |i, j| a[(i, support[j])]);
            let svd = sub.clone().svd(true, true);
            if svd.singular_values.min() < 1e-9 {
                continue;
            }
            let coef = svd.solve(y, 1e-12).unwrap();
            if (&sub * &coef - y).amax() > 1e-9 {
                continue;
            }
            let mut z = DVector::zeros(n);
            for (j, &s) in support.iter().enumerate() {
                z[s] = coef[j];
            }
            consider(z);
        }
    }
    best
}

/// A random tiny basis-pursuit instance with an `s`-sparse truth.
pub struct TinyInstance {
    pub basis: Arc<SparsifyingBasis>,
    pub rows: Vec<usize>,
    pub y: DVector<f64>,
    pub z_true: DVector<f64>,
}

pub fn tiny_instance(
    n_sensors: usize,
    window: usize,
    s: usize,
    m: usize,
    rng: &mut impl Rng,
) -> TinyInstance {
    let basis = Arc::new(SparsifyingBasis::new(n_sensors, window).unwrap());
    let dim = basis.dim();
    let mut z_true = DVector::zeros(dim);
    for i in sample(rng, dim, s) {
        let mag: f64 = rng.random_range(0.5..2.0);
        z_true[i] = if rng.random_bool(0.5) { mag } else { -mag };
    }
    let x = basis.synthesize(&z_true).unwrap();
    let mut rows: Vec<usize> = sample(rng, dim, m).into_vec();
    rows.sort_unstable();
    let y = DVector::from_iterator(m, rows.iter().map(|&r| x[r]));
    TinyInstance {
        basis,
        rows,
        y,
        z_true,
    }
}

/// State of the unsimplified ADMM that keeps `ν` and `v` explicitly.
/// Per cache `c` and link `l` to `c' = neighbor`:
/// `mu[c][l] = μ_{c,c'}`, `nu[c][l] = ν_{c',c}`, `v[c][l] = v_{c,c'}`.
#[derive(Debug, Clone)]
pub struct ShadowState {
    pub z: Vec<DVector<f64>>,
    pub z_aux: Vec<DVector<f64>>,
    pub lambda: Vec<DVector<f64>>,
    pub xi: Vec<DVector<f64>>,
    pub mu: Vec<Vec<DVector<f64>>>,
    pub nu: Vec<Vec<DVector<f64>>>,
    pub v: Vec<Vec<DVector<f64>>>,
}

/// Dense operators of one cache: `ΦΨ`, and `ΓΨ` per link.
pub struct ShadowCache {
    pub phi_psi: DMatrix<f64>,
    pub y: DVector<f64>,
    pub neighbors: Vec<usize>,
    pub gamma_psi: Vec<DMatrix<f64>>,
    pub system: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

pub struct Shadow {
    pub caches: Vec<ShadowCache>,
    pub dim: usize,
}

impl Shadow {
    pub fn new(problem: &Problem) -> Self {
        let psi = problem.basis().kronecker();
        let dim = problem.dim();
        let caches = (0..problem.n_caches())
            .map(|c| {
                let cp = problem.cache(c);
                let phi_psi = selection_matrix(&cp.rows, dim) * &psi;
                let gamma_psi: Vec<DMatrix<f64>> = cp
                    .links
                    .iter()
                    .map(|l| selection_matrix(&l.rows, dim) * &psi)
                    .collect();
                let mut a = phi_psi.transpose() * &phi_psi + DMatrix::identity(dim, dim);
                for g in &gamma_psi {
                    a += g.transpose() * g * 2.0;
                }
                ShadowCache {
                    phi_psi,
                    y: cp.y.clone(),
                    neighbors: cp.links.iter().map(|l| l.neighbor).collect(),
                    gamma_psi,
                    system: a.cholesky().expect("system matrix is positive definite"),
                }
            })
            .collect();
        Self { caches, dim }
    }

    pub fn zeros(&self) -> ShadowState {
        let z = vec![DVector::zeros(self.dim); self.caches.len()];
        let per_link = |c: &ShadowCache| {
            c.gamma_psi
                .iter()
                .map(|g| DVector::zeros(g.nrows()))
                .collect::<Vec<_>>()
        };
        ShadowState {
            z: z.clone(),
            z_aux: z.clone(),
            xi: z,
            lambda: self
                .caches
                .iter()
                .map(|c| DVector::zeros(c.y.len()))
                .collect(),
            mu: self.caches.iter().map(per_link).collect(),
            nu: self.caches.iter().map(per_link).collect(),
            v: self.caches.iter().map(per_link).collect(),
        }
    }

    /// Index of the link at `c'` that points back to `c`.
    pub fn back(&self, c: usize, l: usize) -> (usize, usize) {
        let d = self.caches[c].neighbors[l];
        (
            d,
            self.caches[d]
                .neighbors
                .iter()
                .position(|&e| e == c)
                .unwrap(),
        )
    }

    /// One iteration of the unsimplified recursions.
    pub fn step(&self, s: &ShadowState, rho: f64) -> ShadowState {
        let mut next = s.clone();
        for (c, cache) in self.caches.iter().enumerate() {
            next.lambda[c] = &s.lambda[c] + (&cache.phi_psi * &s.z[c] - &cache.y) * rho;
            for (l, g) in cache.gamma_psi.iter().enumerate() {
                let (d, lb) = self.back(c, l);
                let own = g * &s.z[c];
                next.mu[c][l] = &s.mu[c][l] + (&own - &s.v[c][l]) * rho;
                next.nu[c][l] = &s.nu[c][l] + (&own - &s.v[d][lb]) * rho;
            }
            next.xi[c] = &s.xi[c] + (&s.z[c] - &s.z_aux[c]) * rho;

            let mut rhs = cache.phi_psi.transpose() * (&cache.y * rho - &next.lambda[c])
                + &s.z_aux[c] * rho
                - &next.xi[c];
            for (l, g) in cache.gamma_psi.iter().enumerate() {
                let (d, lb) = self.back(c, l);
                rhs += g.transpose()
                    * ((&s.v[c][l] + &s.v[d][lb]) * rho - (&next.mu[c][l] + &next.nu[c][l]));
            }
            next.z[c] = cache.system.solve(&rhs) / rho;
            next.z_aux[c] = (&next.z[c] + &next.xi[c] / rho).map(|a| soft_threshold(a, 1.0 / rho));
        }
        for (c, cache) in self.caches.iter().enumerate() {
            for (l, g) in cache.gamma_psi.iter().enumerate() {
                let (d, lb) = self.back(c, l);
                // ν_{c,c'} is held by c' as its ν toward c.
                let anchors = g * &next.z[c] + &self.caches[d].gamma_psi[lb] * &next.z[d];
                next.v[c][l] = anchors * 0.5 + (&next.mu[c][l] + &next.nu[d][lb]) / (2.0 * rho);
            }
        }
        next
    }
}

/// A small multi-cache problem drawn from the field model.
pub fn field_problem(
    n: usize,
    w: usize,
    c: usize,
    m: usize,
    q: usize,
    seed: u64,
) -> (Problem, DVector<f64>) {
    let cfg = ScenarioConfig {
        n_sensors: n,
        horizon: w,
        ..Default::default()
    };
    let sc = Scenario::generate(&cfg, seed).unwrap();
    let data = sc.window(w, w).unwrap();
    let layout = CacheLayout::assign(&sc.field, c).unwrap();
    let ms = MeasurementSet::sample(
        &layout,
        &data,
        m,
        &mut stream(seed, Stream::Sampling(w as u64)),
    )
    .unwrap();
    let plan = AnchorPlan::select(
        &layout,
        AnchorStrategy::PairwiseUnion,
        q,
        &mut stream(seed, Stream::Anchors(w as u64)),
    )
    .unwrap();
    let basis = Arc::new(SparsifyingBasis::new(n, w).unwrap());
    (
        Problem::assemble(basis, &layout, &ms, &plan).unwrap(),
        data.vec(),
    )
}

/// Every vector with at most `s` nonzeros drawn from `levels`.
pub fn sparse_grid(dim: usize, s: usize, levels: &[f64]) -> Vec<DVector<f64>> {
    let mut out = vec![DVector::zeros(dim)];
    for k in 1..=s {
        for support in (0..dim).combinations(k) {
            for vals in std::iter::repeat_n(levels.iter(), k).multi_cartesian_product() {
                let mut z = DVector::zeros(dim);
                for (&i, &v) in support.iter().zip(&vals) {
                    z[i] = *v;
                }
                out.push(z);
            }
        }
    }
    out
}

/// Pairs `(i, j)`, `i < j`, of distinct grid vectors whose images under
/// `d` coincide.
pub fn colliding_pairs(d: &DMatrix<f64>, grid: &[DVector<f64>]) -> Vec<(usize, usize)> {
    let images: Vec<DVector<f64>> = grid.iter().map(|z| d * z).collect();
    let mut out = Vec::new();
    for i in 0..grid.len() {
        for j in i + 1..grid.len() {
            if (&images[i] - &images[j]).amax() <= 1e-10 && (&grid[i] - &grid[j]).amax() > 0.0 {
                out.push((i, j));
            }
        }
    }
    out
}
