use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::{digest, DeploymentConfig};
use crate::basis::SparsifyingBasis;
use crate::caching::{AnchorPlan, AnchorStrategy, CacheLayout, MeasurementSet};
use crate::error::{invalid, io_err, Error, Result};
use crate::field::Scenario;
use crate::rng::{stream, Stream};
use crate::solver::Problem;

pub const DATASET_FORMAT: &str = "cosr-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.jsonl", self.name())
    }
}

/// Relative lengths of the contiguous train, validation and test time
/// blocks of each deployment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitWeights {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitWeights {
    fn default() -> Self {
        Self {
            train: 80.0,
            val: 20.0,
            test: 25.0,
        }
    }
}

/// Inclusive 1-based time ranges of the three blocks; an empty block is `None`.
pub fn split_blocks(horizon: usize, weights: &SplitWeights) -> Result<[Option<(usize, usize)>; 3]> {
    let w = [weights.train, weights.val, weights.test];
    if w.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(invalid(format!(
            "split weights must be finite and non-negative, got {w:?}"
        )));
    }
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Err(invalid("split weights sum to zero"));
    }
    let mut blocks = [None; 3];
    let (mut acc, mut start) = (0.0, 1);
    for (i, v) in w.iter().enumerate() {
        acc += v;
        let end = if i == 2 {
            horizon
        } else {
            (horizon as f64 * acc / total).round() as usize
        };
        if end >= start {
            blocks[i] = Some((start, end));
        }
        start = start.max(end + 1);
    }
    Ok(blocks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub n_deployments: usize,
    /// Deployment `d` uses seed `first_seed + d`.
    pub first_seed: u64,
    pub m: usize,
    pub q: usize,
    pub strategy: AnchorStrategy,
    pub output_dir: PathBuf,
    pub split: SplitWeights,
    pub deployment: DeploymentConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_deployments: 40,
            first_seed: 0,
            m: 10,
            q: 25,
            strategy: AnchorStrategy::PairwiseUnion,
            output_dir: "dataset".into(),
            split: SplitWeights::default(),
            deployment: DeploymentConfig {
                horizon: 125,
                ..Default::default()
            },
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        self.deployment.validate()?;
        if self.n_deployments == 0 {
            return Err(invalid("at least one deployment is required"));
        }
        if self.m == 0 || self.m > self.deployment.coverage_size() {
            return Err(invalid(format!(
                "M = {} must lie in 1..={}",
                self.m,
                self.deployment.coverage_size()
            )));
        }
        if self.q > self.deployment.anchor_pool(self.strategy) {
            return Err(invalid(format!(
                "Q = {} exceeds the anchor candidates",
                self.q
            )));
        }
        split_blocks(self.deployment.horizon, &self.split)?;
        Ok(())
    }

    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("output_dir");
        }
        digest(&value)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| invalid(format!("bad dataset config: {e}")))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSample {
    pub neighbor: usize,
    /// Rows of `Γ_{c,c'}` as indices into `vec(X)`.
    pub rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheSample {
    /// Rows of `Φ_c` as indices into `vec(X)`, instant-major.
    pub rows: Vec<usize>,
    pub y: Vec<f64>,
    pub links: Vec<LinkSample>,
}

/// One window of one deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSample {
    pub deployment: usize,
    pub seed: u64,
    pub end_time: usize,
    pub caches: Vec<CacheSample>,
    /// Column-major `vec(X(t))`, length `N W`.
    pub x: Vec<f64>,
    /// `Ψᵀ x`.
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub split: Split,
    pub file: String,
    pub samples: usize,
    /// Inclusive window end times per deployment, if any.
    pub end_times: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub n_sensors: usize,
    pub window: usize,
    pub n_caches: usize,
    pub dim: usize,
    pub splits: Vec<SplitInfo>,
    pub config: DatasetConfig,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn format_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Writes `manifest.json` and one JSON-lines file per split into `dir`.
/// A window belongs to a split only when all of its instants fall inside
/// that split's time block.
pub fn export_dataset(config: &DatasetConfig, dir: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    let dep = &config.deployment;
    let blocks = split_blocks(dep.horizon, &config.split)?;
    let ends: Vec<Option<(usize, usize)>> = blocks
        .iter()
        .map(|b| b.and_then(|(a, e)| (e + 1 >= a + dep.window).then_some((a + dep.window - 1, e))))
        .collect();
    let basis = Arc::new(SparsifyingBasis::new(dep.n_sensors, dep.window)?);
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;

    let paths: Vec<PathBuf> = Split::ALL.iter().map(|s| dir.join(s.file_name())).collect();
    let mut writers = paths
        .iter()
        .map(|p| File::create(p).map(BufWriter::new).map_err(io_err(p)))
        .collect::<Result<Vec<_>>>()?;
    let mut counts = [0usize; 3];

    for d in 0..config.n_deployments {
        let seed = config.first_seed + d as u64;
        let sc = Scenario::generate(&dep.scenario(), seed)?;
        let layout = CacheLayout::assign(&sc.field, dep.n_caches)?;
        for (i, range) in ends.iter().enumerate() {
            let Some((first, last)) = *range else {
                continue;
            };
            for t in first..=last {
                let sample = window_sample(&basis, &sc, &layout, config, d, t)?;
                serde_json::to_writer(&mut writers[i], &sample)
                    .map_err(|e| format_err(&paths[i], e))?;
                writers[i].write_all(b"\n").map_err(io_err(&paths[i]))?;
                counts[i] += 1;
            }
        }
        log::info!("exported deployment {d} (seed {seed})");
    }
    for (w, p) in writers.iter_mut().zip(&paths) {
        w.flush().map_err(io_err(p))?;
    }

    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        config_hash: config.hash(),
        n_sensors: dep.n_sensors,
        window: dep.window,
        n_caches: dep.n_caches,
        dim: basis.dim(),
        splits: Split::ALL
            .iter()
            .zip(counts)
            .zip(&ends)
            .map(|((&split, samples), &end_times)| SplitInfo {
                split,
                file: split.file_name(),
                samples,
                end_times,
            })
            .collect(),
        config: config.clone(),
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok(manifest)
}

fn window_sample(
    basis: &Arc<SparsifyingBasis>,
    sc: &Scenario,
    layout: &CacheLayout,
    config: &DatasetConfig,
    deployment: usize,
    t: usize,
) -> Result<DatasetSample> {
    let data = sc.window(t, config.deployment.window)?;
    let ms = MeasurementSet::sample(
        layout,
        &data,
        config.m,
        &mut stream(sc.seed, Stream::Sampling(t as u64)),
    )?;
    let plan = AnchorPlan::select(
        layout,
        config.strategy,
        config.q,
        &mut stream(sc.seed, Stream::Anchors(t as u64)),
    )?;
    let problem = Problem::assemble(Arc::clone(basis), layout, &ms, &plan)?;
    let caches = (0..problem.n_caches())
        .map(|c| {
            let cp = problem.cache(c);
            CacheSample {
                rows: cp.rows.clone(),
                y: cp.y.as_slice().to_vec(),
                links: cp
                    .links
                    .iter()
                    .map(|l| LinkSample {
                        neighbor: l.neighbor,
                        rows: l.rows.to_vec(),
                    })
                    .collect(),
            }
        })
        .collect();
    let x = data.vec();
    let z = basis.analyze(&x)?;
    Ok(DatasetSample {
        deployment,
        seed: sc.seed,
        end_time: t,
        caches,
        x: x.as_slice().to_vec(),
        z: z.as_slice().to_vec(),
    })
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| format_err(&path, e))?;
    if manifest.format != DATASET_FORMAT || manifest.version != DATASET_VERSION {
        return Err(format_err(
            &path,
            format!(
                "unsupported dataset {} v{}",
                manifest.format, manifest.version
            ),
        ));
    }
    Ok(manifest)
}

pub fn read_split(dir: &Path, split: Split) -> Result<Vec<DatasetSample>> {
    let path = dir.join(split.file_name());
    let file = File::open(&path).map_err(io_err(&path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(&path))?;
        if line.is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| format_err(&path, format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}
