use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::basis::SparsifyingBasis;
use crate::caching::AnchorStrategy;
use crate::error::{invalid, io_err, Error, Result};
use crate::field::{ScenarioConfig, SourceConfig};
use crate::solver::SolverConfig;

/// Sensor field, cache network and window shared by every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeploymentConfig {
    pub n_sensors: usize,
    pub n_caches: usize,
    pub window: usize,
    /// Time horizon `T`; windows end at `t = W, ..., T`.
    pub horizon: usize,
    pub sources: SourceConfig,
}

impl Default for DeploymentConfig {
    fn default() -> Self {
        Self {
            n_sensors: 100,
            n_caches: 4,
            window: 4,
            horizon: 20,
            sources: SourceConfig::default(),
        }
    }
}

impl DeploymentConfig {
    pub fn validate(&self) -> Result<()> {
        SparsifyingBasis::new(self.n_sensors, self.window)?;
        self.sources.validate()?;
        if self.horizon < self.window {
            return Err(invalid(format!(
                "horizon {} is shorter than the window {}",
                self.horizon, self.window
            )));
        }
        if self.n_caches == 0 {
            return Err(invalid("at least one cache is required"));
        }
        Ok(())
    }

    pub fn scenario(&self) -> ScenarioConfig {
        ScenarioConfig {
            n_sensors: self.n_sensors,
            horizon: self.horizon,
            sources: self.sources.clone(),
        }
    }

    /// Sensors per cache; the block-grid partition gives equal disjoint coverages.
    pub fn coverage_size(&self) -> usize {
        self.n_sensors / self.n_caches
    }

    /// Candidate pool of one pair's anchors under `strategy`.
    pub fn anchor_pool(&self, strategy: AnchorStrategy) -> usize {
        match (self.n_caches, strategy) {
            (1, _) => 0,
            (_, AnchorStrategy::PairwiseUnion) => 2 * self.coverage_size(),
            _ => self.n_sensors,
        }
    }

    pub fn n_windows(&self) -> usize {
        self.horizon + 1 - self.window
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Centralized,
    Noncollab,
    Avg,
    Partition,
    CosrAa,
    /// Produced by the learned solver; the harness only reads its records.
    DeepCosrAa,
}

impl Method {
    pub const SOLVABLE: [Method; 5] = [
        Method::Centralized,
        Method::Noncollab,
        Method::Avg,
        Method::Partition,
        Method::CosrAa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Centralized => "centralized",
            Method::Noncollab => "noncollab",
            Method::Avg => "avg",
            Method::Partition => "partition",
            Method::CosrAa => "cosr-aa",
            Method::DeepCosrAa => "deep-cosr-aa",
        }
    }

    /// Needs the per-cache non-collaborative solves.
    pub fn uses_noncollab(self) -> bool {
        matches!(self, Method::Noncollab | Method::Avg | Method::Partition)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::SOLVABLE
            .into_iter()
            .chain([Method::DeepCosrAa])
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid(format!("unknown method {s:?}")))
    }
}

/// The swept axis. Each variant expands into a list of [`SweepPoint`]s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Sweep {
    /// Measurements per cache per instant `M`, at fixed `Q`. Plotted against `M/N`.
    Compression {
        m: Vec<usize>,
        q: usize,
        strategy: AnchorStrategy,
    },
    /// Anchors per pair `Q` for each strategy, at fixed `M`.
    Anchors {
        m: usize,
        q: Vec<usize>,
        strategies: Vec<AnchorStrategy>,
    },
    /// Anchors as a fraction of the strategy's candidate pool, with
    /// `m_total` measurements per instant split evenly over the caches.
    Proportion {
        m_total: usize,
        proportions: Vec<f64>,
        strategy: AnchorStrategy,
    },
    /// Explicit `(M, Q)` pairs, plotted against their index.
    Tradeoff {
        points: Vec<(usize, usize)>,
        strategy: AnchorStrategy,
    },
}

impl Default for Sweep {
    fn default() -> Self {
        let mut m: Vec<usize> = (2..=24).step_by(2).collect();
        m.push(25);
        Sweep::Compression {
            m,
            q: 25,
            strategy: AnchorStrategy::PairwiseUnion,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub index: usize,
    /// Abscissa for plots.
    pub x: f64,
    pub m: usize,
    pub q: usize,
    pub strategy: AnchorStrategy,
}

impl Sweep {
    pub fn points(&self, deployment: &DeploymentConfig) -> Result<Vec<SweepPoint>> {
        let raw: Vec<(f64, usize, usize, AnchorStrategy)> = match self {
            Sweep::Compression { m, q, strategy } => m
                .iter()
                .map(|&m| (m as f64 / deployment.n_sensors as f64, m, *q, *strategy))
                .collect(),
            Sweep::Anchors { m, q, strategies } => strategies
                .iter()
                .flat_map(|&s| q.iter().map(move |&q| (q as f64, *m, q, s)))
                .collect(),
            Sweep::Proportion {
                m_total,
                proportions,
                strategy,
            } => {
                let c = deployment.n_caches;
                if m_total % c != 0 {
                    return Err(invalid(format!(
                        "{m_total} measurements do not split evenly over {c} caches"
                    )));
                }
                let pool = deployment.anchor_pool(*strategy) as f64;
                proportions
                    .iter()
                    .map(|&p| {
                        if !(0.0..=1.0).contains(&p) {
                            return Err(invalid(format!("anchor proportion {p} outside [0, 1]")));
                        }
                        Ok((p, m_total / c, (p * pool).round() as usize, *strategy))
                    })
                    .collect::<Result<_>>()?
            }
            Sweep::Tradeoff { points, strategy } => points
                .iter()
                .enumerate()
                .map(|(i, &(m, q))| (i as f64, m, q, *strategy))
                .collect(),
        };
        if raw.is_empty() {
            return Err(invalid("sweep has no points"));
        }
        raw.into_iter()
            .enumerate()
            .map(|(index, (x, m, q, strategy))| {
                if m == 0 || m > deployment.coverage_size() {
                    return Err(invalid(format!(
                        "M = {m} must lie in 1..={} (sensors per cache)",
                        deployment.coverage_size()
                    )));
                }
                if q > deployment.anchor_pool(strategy) {
                    return Err(invalid(format!(
                        "Q = {q} exceeds the {} candidates of {}",
                        deployment.anchor_pool(strategy),
                        strategy.name()
                    )));
                }
                Ok(SweepPoint {
                    index,
                    x,
                    m,
                    q,
                    strategy,
                })
            })
            .collect()
    }
}

/// Everything that determines a sweep's records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Stem of the output files.
    pub name: String,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub output_dir: PathBuf,
    pub deployment: DeploymentConfig,
    pub solver: SolverConfig,
    pub sweep: Sweep,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "compression".into(),
            seeds: (0..10).collect(),
            methods: Method::SOLVABLE.to_vec(),
            output_dir: "results".into(),
            deployment: DeploymentConfig::default(),
            solver: SolverConfig::default(),
            sweep: Sweep::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(invalid("at least one seed is required"));
        }
        if self.methods.is_empty() {
            return Err(invalid("at least one method is required"));
        }
        if self.methods.contains(&Method::DeepCosrAa) {
            return Err(invalid(
                "deep-cosr-aa records come from the trainer, not from sweeps",
            ));
        }
        self.deployment.validate()?;
        self.solver.validate()?;
        self.sweep.points(&self.deployment)?;
        Ok(())
    }

    /// Hex digest of every field that affects the records (not the name or
    /// output directory).
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("name");
            map.remove("output_dir");
        }
        digest(&value)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| invalid(format!("bad experiment config: {e}")))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        toml::from_str(&text).map_err(|e| Error::Format {
            path: path.into(),
            message: e.to_string(),
        })
    }
}

pub(crate) fn digest(value: &serde_json::Value) -> String {
    // serde_json maps are ordered by key, so the encoding is canonical.
    let bytes = serde_json::to_vec(value).expect("json value serializes");
    let hash = Sha256::digest(bytes);
    hash[..8].iter().map(|b| format!("{b:02x}")).collect()
}
