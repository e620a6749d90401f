//! Cache coverage, random sensor sampling and anchor selection.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::field::{DataMatrix, SensorField};

/// Coverage sets `N_c` and the undirected cache graph `D_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheLayout {
    n_sensors: usize,
    coverage: Vec<Vec<usize>>,
    neighbors: Vec<Vec<usize>>,
}

impl CacheLayout {
    pub fn new(
        n_sensors: usize,
        coverage: Vec<Vec<usize>>,
        neighbors: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let c = coverage.len();
        if c == 0 {
            return Err(invalid("at least one cache is required"));
        }
        if neighbors.len() != c {
            return Err(invalid(format!(
                "{} neighbor lists for {c} caches",
                neighbors.len()
            )));
        }
        let mut covered = vec![false; n_sensors];
        for (i, set) in coverage.iter().enumerate() {
            for &n in set {
                if n >= n_sensors {
                    return Err(invalid(format!("cache {i} covers unknown sensor {n}")));
                }
                covered[n] = true;
            }
        }
        if let Some(n) = covered.iter().position(|&v| !v) {
            return Err(invalid(format!("sensor {n} is not covered by any cache")));
        }
        let mut neighbors = neighbors;
        for (i, list) in neighbors.iter_mut().enumerate() {
            list.sort_unstable();
            list.dedup();
            if list.iter().any(|&j| j == i || j >= c) {
                return Err(invalid(format!(
                    "cache {i} has an invalid neighbor list {list:?}"
                )));
            }
        }
        for (i, list) in neighbors.iter().enumerate() {
            if let Some(&j) = list
                .iter()
                .find(|&&j| neighbors[j].binary_search(&i).is_err())
            {
                return Err(invalid(format!("edge {i} -> {j} is not symmetric")));
            }
        }
        let layout = Self {
            n_sensors,
            coverage,
            neighbors,
        };
        if !layout.is_connected() {
            return Err(invalid("cache graph is not connected"));
        }
        Ok(layout)
    }

    /// Splits the block grid into `n_caches` equal rectangular subregions
    /// (square whenever `n_caches` is a perfect square) and connects every
    /// pair of caches. Caches are numbered row-major over the subregions.
    pub fn assign(field: &SensorField, n_caches: usize) -> Result<Self> {
        let side = field.grid_side();
        let (rows, cols) = grid_partition(side, n_caches).ok_or_else(|| {
            invalid(format!(
                "{n_caches} caches cannot evenly partition a {side}x{side} sensor grid"
            ))
        })?;
        let (h, w) = (side / rows, side / cols);
        let mut coverage = vec![Vec::new(); n_caches];
        for n in 0..field.n_sensors() {
            let (r, c) = field.block_of(n);
            coverage[(r / h) * cols + c / w].push(n);
        }
        let neighbors = (0..n_caches)
            .map(|i| (0..n_caches).filter(|&j| j != i).collect())
            .collect();
        Self::new(field.n_sensors(), coverage, neighbors)
    }

    /// Same coverage with a different cache graph.
    pub fn with_neighbors(self, neighbors: Vec<Vec<usize>>) -> Result<Self> {
        Self::new(self.n_sensors, self.coverage, neighbors)
    }

    pub fn n_sensors(&self) -> usize {
        self.n_sensors
    }

    pub fn n_caches(&self) -> usize {
        self.coverage.len()
    }

    pub fn coverage(&self, c: usize) -> &[usize] {
        &self.coverage[c]
    }

    pub fn neighbors(&self, c: usize) -> &[usize] {
        &self.neighbors[c]
    }

    /// Undirected edges `(c, c')` with `c < c'`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (c, list) in self.neighbors.iter().enumerate() {
            out.extend(list.iter().filter(|&&d| d > c).map(|&d| (c, d)));
        }
        out
    }

    /// The first cache whose coverage contains sensor `n`.
    pub fn owner(&self, n: usize) -> Option<usize> {
        self.coverage.iter().position(|set| set.contains(&n))
    }

    /// Sorted `N_c ∪ N_{c'}`.
    pub fn union_coverage(&self, c: usize, d: usize) -> Vec<usize> {
        let mut u: Vec<usize> = self.coverage[c]
            .iter()
            .chain(&self.coverage[d])
            .copied()
            .collect();
        u.sort_unstable();
        u.dedup();
        u
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n_caches()];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(c) = queue.pop_front() {
            for &d in &self.neighbors[c] {
                if !seen[d] {
                    seen[d] = true;
                    queue.push_back(d);
                }
            }
        }
        seen.into_iter().all(|v| v)
    }

    /// Columns: `cache,sensor`.
    pub fn write_coverage_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["cache", "sensor"])?;
        for (c, set) in self.coverage.iter().enumerate() {
            for n in set {
                w.write_record(&[c.to_string(), n.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// `rows × cols == n_caches` with both dividing `side`, as close to square
/// as possible (`rows <= cols`).
fn grid_partition(side: usize, n_caches: usize) -> Option<(usize, usize)> {
    if n_caches == 0 {
        return None;
    }
    (1..=n_caches)
        .filter(|r| n_caches % r == 0)
        .map(|r| (r, n_caches / r))
        .filter(|&(r, c)| r <= c && side % r == 0 && side % c == 0)
        .last()
}

/// Samples stored at one cache: `M` distinct sensors per time instant.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheMeasurements {
    /// Selected sensors for each instant of the window, in draw order.
    pub sensors: Vec<Vec<usize>>,
    /// Row `i` of `Φ_c` selects entry `rows[i]` of `vec(X)`.
    pub rows: Vec<usize>,
    pub y: DVector<f64>,
}

impl CacheMeasurements {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    n_sensors: usize,
    window: usize,
    caches: Vec<CacheMeasurements>,
}

impl MeasurementSet {
    /// Draws `m` sensors without replacement from each coverage at every
    /// instant of the window and stores `y_c = Φ_c vec(X)`.
    pub fn sample<R: Rng + ?Sized>(
        layout: &CacheLayout,
        data: &DataMatrix,
        m: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if data.n_sensors() != layout.n_sensors() {
            return Err(invalid(format!(
                "data has {} sensors but the layout has {}",
                data.n_sensors(),
                layout.n_sensors()
            )));
        }
        if let Some(c) = (0..layout.n_caches()).find(|&c| layout.coverage(c).len() < m) {
            return Err(invalid(format!(
                "{m} samples exceed the {} sensors covered by cache {c}",
                layout.coverage(c).len()
            )));
        }
        let n = layout.n_sensors();
        let w = data.window();
        let x = data.vec();
        let caches = (0..layout.n_caches())
            .map(|c| {
                let sensors: Vec<Vec<usize>> = (0..w)
                    .map(|_| {
                        layout
                            .coverage(c)
                            .choose_multiple(rng, m)
                            .copied()
                            .collect()
                    })
                    .collect();
                let rows: Vec<usize> = sensors
                    .iter()
                    .enumerate()
                    .flat_map(|(j, s)| s.iter().map(move |&i| j * n + i))
                    .collect();
                let y = DVector::from_iterator(rows.len(), rows.iter().map(|&r| x[r]));
                CacheMeasurements { sensors, rows, y }
            })
            .collect();
        Ok(Self {
            n_sensors: n,
            window: w,
            caches,
        })
    }

    /// Builds a set from explicit selections (e.g. read back from disk).
    pub fn from_selections(
        n_sensors: usize,
        window: usize,
        selections: Vec<Vec<Vec<usize>>>,
        x: &DVector<f64>,
    ) -> Result<Self> {
        if x.len() != n_sensors * window {
            return Err(invalid(format!(
                "field length {} is not N*W = {}",
                x.len(),
                n_sensors * window
            )));
        }
        let caches = selections
            .into_iter()
            .enumerate()
            .map(|(c, sensors)| {
                if sensors.len() != window {
                    return Err(invalid(format!(
                        "cache {c} has {} instants, expected {window}",
                        sensors.len()
                    )));
                }
                let mut rows = Vec::new();
                for (j, s) in sensors.iter().enumerate() {
                    let mut sorted = s.clone();
                    sorted.sort_unstable();
                    sorted.dedup();
                    if sorted.len() != s.len() || s.iter().any(|&i| i >= n_sensors) {
                        return Err(invalid(format!(
                            "cache {c} instant {j} has an invalid selection {s:?}"
                        )));
                    }
                    rows.extend(s.iter().map(|&i| j * n_sensors + i));
                }
                let y = DVector::from_iterator(rows.len(), rows.iter().map(|&r| x[r]));
                Ok(CacheMeasurements { sensors, rows, y })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            n_sensors,
            window,
            caches,
        })
    }

    pub fn n_caches(&self) -> usize {
        self.caches.len()
    }

    pub fn n_sensors(&self) -> usize {
        self.n_sensors
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn cache(&self, c: usize) -> &CacheMeasurements {
        &self.caches[c]
    }

    pub fn caches(&self) -> &[CacheMeasurements] {
        &self.caches
    }

    /// Dense `Φ_c` (`M_c W × N W`).
    pub fn selection_matrix(&self, c: usize) -> DMatrix<f64> {
        selection_matrix(&self.caches[c].rows, self.n_sensors * self.window)
    }

    /// All caches' rows and values stacked, as seen by a fusion center.
    pub fn stacked(&self) -> (Vec<usize>, DVector<f64>) {
        let rows: Vec<usize> = self
            .caches
            .iter()
            .flat_map(|m| m.rows.iter().copied())
            .collect();
        let y = DVector::from_iterator(
            rows.len(),
            self.caches.iter().flat_map(|m| m.y.iter().copied()),
        );
        (rows, y)
    }
}

/// Dense selection operator whose row `i` is the canonical vector `e_{rows[i]}`.
pub fn selection_matrix(rows: &[usize], dim: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows.len(), dim);
    for (i, &r) in rows.iter().enumerate() {
        m[(i, r)] = 1.0;
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnchorStrategy {
    /// One random set drawn from the whole field, shared by every pair.
    Global,
    /// An independent random set per pair, drawn from the whole field.
    PairwiseGlobal,
    /// An independent random set per pair, drawn from `N_c ∪ N_{c'}`.
    PairwiseUnion,
}

impl AnchorStrategy {
    pub fn name(self) -> &'static str {
        match self {
            AnchorStrategy::Global => "global",
            AnchorStrategy::PairwiseGlobal => "pairwise-global",
            AnchorStrategy::PairwiseUnion => "pairwise-union",
        }
    }
}

impl std::str::FromStr for AnchorStrategy {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(AnchorStrategy::Global),
            "pairwise-global" => Ok(AnchorStrategy::PairwiseGlobal),
            "pairwise-union" => Ok(AnchorStrategy::PairwiseUnion),
            other => Err(invalid(format!("unknown anchor strategy {other:?}"))),
        }
    }
}

/// Anchor sets `Q_{c,c'}` for every edge of the cache graph. The same set
/// applies at every instant of the window.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorPlan {
    strategy: AnchorStrategy,
    n_sensors: usize,
    pairs: BTreeMap<(usize, usize), Arc<[usize]>>,
}

impl AnchorPlan {
    pub fn select<R: Rng + ?Sized>(
        layout: &CacheLayout,
        strategy: AnchorStrategy,
        q: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let all: Vec<usize> = (0..layout.n_sensors()).collect();
        let edges = layout.edges();
        let mut pairs = BTreeMap::new();
        let draw = |pool: &[usize], rng: &mut R, pair: (usize, usize)| -> Result<Arc<[usize]>> {
            if q > pool.len() {
                return Err(invalid(format!(
                    "{q} anchors exceed the {} candidates of pair {pair:?}",
                    pool.len()
                )));
            }
            let mut set: Vec<usize> = pool.choose_multiple(rng, q).copied().collect();
            set.sort_unstable();
            Ok(set.into())
        };
        match strategy {
            AnchorStrategy::Global => {
                if let Some(&first) = edges.first() {
                    let shared = draw(&all, rng, first)?;
                    for e in edges {
                        pairs.insert(e, Arc::clone(&shared));
                    }
                }
            }
            AnchorStrategy::PairwiseGlobal => {
                for e in edges {
                    pairs.insert(e, draw(&all, rng, e)?);
                }
            }
            AnchorStrategy::PairwiseUnion => {
                for e in edges {
                    pairs.insert(e, draw(&layout.union_coverage(e.0, e.1), rng, e)?);
                }
            }
        }
        Ok(Self {
            strategy,
            n_sensors: layout.n_sensors(),
            pairs,
        })
    }

    /// Explicit per-edge sets, keyed by either orientation.
    pub fn from_sets(
        layout: &CacheLayout,
        strategy: AnchorStrategy,
        sets: Vec<((usize, usize), Vec<usize>)>,
    ) -> Result<Self> {
        let mut pairs = BTreeMap::new();
        for ((a, b), mut set) in sets {
            let key = (a.min(b), a.max(b));
            if !layout.neighbors(key.0).contains(&key.1) {
                return Err(invalid(format!(
                    "pair {key:?} is not an edge of the cache graph"
                )));
            }
            set.sort_unstable();
            set.dedup();
            if set.iter().any(|&n| n >= layout.n_sensors()) {
                return Err(invalid(format!("pair {key:?} names an unknown sensor")));
            }
            pairs.insert(key, set.into());
        }
        if let Some(e) = layout.edges().into_iter().find(|e| !pairs.contains_key(e)) {
            return Err(invalid(format!("edge {e:?} has no anchor set")));
        }
        Ok(Self {
            strategy,
            n_sensors: layout.n_sensors(),
            pairs,
        })
    }

    pub fn strategy(&self) -> AnchorStrategy {
        self.strategy
    }

    /// `Q_{c,c'}`, identical for both orientations.
    pub fn anchors(&self, c: usize, d: usize) -> Option<&Arc<[usize]>> {
        self.pairs.get(&(c.min(d), c.max(d)))
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&(usize, usize), &Arc<[usize]>)> {
        self.pairs.iter()
    }

    /// Rows of `Γ_{c,c'}` as indices into `vec(X)`: anchor `q` at instant `j`
    /// is entry `j N + q`.
    pub fn rows(&self, c: usize, d: usize, window: usize) -> Option<Vec<usize>> {
        let set = self.anchors(c, d)?;
        Some(
            (0..window)
                .flat_map(|j| set.iter().map(move |&q| j * self.n_sensors + q))
                .collect(),
        )
    }

    /// Dense `Γ_{c,c'}` (`Q W × N W`).
    pub fn selection_matrix(&self, c: usize, d: usize, window: usize) -> Option<DMatrix<f64>> {
        Some(selection_matrix(
            &self.rows(c, d, window)?,
            self.n_sensors * window,
        ))
    }

    /// Columns: `cache_a,cache_b,sensor`, one row per anchor.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["cache_a", "cache_b", "sensor"])?;
        for ((a, b), set) in &self.pairs {
            for q in set.iter() {
                w.write_record(&[a.to_string(), b.to_string(), q.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
