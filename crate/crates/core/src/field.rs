//! Synthetic spatio-temporally correlated sensor fields.
//!
//! Sensors sit one per 100×100 block of a `√N × √N` grid; each observation
//! is a Gaussian-kernel mixture of `S` point sources whose values are a
//! low-passed Gauss-Markov process plus a Markov-chain jump process.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::basis::{dct_matrix, exact_sqrt};
use crate::error::{invalid, Result};
use crate::rng::{stream, Stream};

pub const BLOCK_SIDE: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SensorField {
    grid_side: usize,
    positions: Vec<[f64; 2]>,
}

impl SensorField {
    /// One sensor uniformly placed inside each block. Sensor `n` owns block
    /// row `n / √N`, column `n % √N`; `x` runs along columns, `y` along rows.
    pub fn generate(n_sensors: usize, seed: u64) -> Result<Self> {
        let side = exact_sqrt(n_sensors).filter(|&s| s > 0).ok_or_else(|| {
            invalid(format!(
                "sensor count {n_sensors} is not a positive perfect square"
            ))
        })?;
        let mut rng = stream(seed, Stream::Deployment);
        let positions = (0..n_sensors)
            .map(|n| {
                let (row, col) = (n / side, n % side);
                let x = (col as f64 + rng.random::<f64>()) * BLOCK_SIDE;
                let y = (row as f64 + rng.random::<f64>()) * BLOCK_SIDE;
                [x, y]
            })
            .collect();
        Ok(Self {
            grid_side: side,
            positions,
        })
    }

    /// Builds a field from explicit positions, checking each lies in its block.
    pub fn from_positions(positions: Vec<[f64; 2]>) -> Result<Self> {
        let n = positions.len();
        let side = exact_sqrt(n)
            .filter(|&s| s > 0)
            .ok_or_else(|| invalid(format!("sensor count {n} is not a positive perfect square")))?;
        for (i, p) in positions.iter().enumerate() {
            let (row, col) = (i / side, i % side);
            let inside =
                |v: f64, b: usize| v >= b as f64 * BLOCK_SIDE && v < (b + 1) as f64 * BLOCK_SIDE;
            if !(inside(p[0], col) && inside(p[1], row)) {
                return Err(invalid(format!(
                    "sensor {i} at {p:?} lies outside block ({row}, {col})"
                )));
            }
        }
        Ok(Self {
            grid_side: side,
            positions,
        })
    }

    pub fn n_sensors(&self) -> usize {
        self.positions.len()
    }

    pub fn grid_side(&self) -> usize {
        self.grid_side
    }

    pub fn region_side(&self) -> f64 {
        self.grid_side as f64 * BLOCK_SIDE
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    /// Block-grid `(row, col)` of sensor `n`.
    pub fn block_of(&self, n: usize) -> (usize, usize) {
        (n / self.grid_side, n % self.grid_side)
    }

    /// Columns: `sensor,block_row,block_col,x,y`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sensor", "block_row", "block_col", "x", "y"])?;
        for (n, p) in self.positions.iter().enumerate() {
            let (r, c) = self.block_of(n);
            w.write_record(&[
                n.to_string(),
                r.to_string(),
                c.to_string(),
                p[0].to_string(),
                p[1].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Knobs of the source process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceConfig {
    pub n_sources: usize,
    pub correlation_length: f64,
    pub alpha: f64,
    pub n_states: usize,
    pub p_self: f64,
    pub lowpass_fraction: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            n_sources: 10,
            correlation_length: 800.0,
            alpha: 0.9,
            n_states: 10,
            p_self: 0.8,
            lowpass_fraction: 0.25,
        }
    }
}

impl SourceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.correlation_length > 0.0) {
            return Err(invalid("correlation length must be positive"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(invalid(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.n_states == 0 {
            return Err(invalid("Markov state space must be non-empty"));
        }
        if !(self.p_self > 0.0 && self.p_self <= 1.0) {
            return Err(invalid(format!(
                "self-transition probability {} outside (0, 1]",
                self.p_self
            )));
        }
        if !(self.lowpass_fraction > 0.0 && self.lowpass_fraction <= 1.0) {
            return Err(invalid(format!(
                "low-pass fraction {} outside (0, 1]",
                self.lowpass_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Source {
    pub position: [f64; 2],
    pub alpha: f64,
    pub mean: f64,
    pub states: Vec<f64>,
    pub p_self: f64,
    pub lowpass_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceModel {
    pub correlation_length: f64,
    pub sources: Vec<Source>,
}

impl SourceModel {
    /// Sources uniform over the square region. Each Gauss-Markov mean is its
    /// own first value, drawn from N(0, 1); Markov state values are N(0, 1).
    pub fn generate(region_side: f64, config: &SourceConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut pos_rng = stream(seed, Stream::SourcePositions);
        let sources = (0..config.n_sources)
            .map(|s| {
                let position = [
                    pos_rng.random::<f64>() * region_side,
                    pos_rng.random::<f64>() * region_side,
                ];
                let mean: f64 = StandardNormal.sample(&mut stream(seed, Stream::SourceMean(s)));
                let mut state_rng = stream(seed, Stream::MarkovStates(s));
                let states = (0..config.n_states)
                    .map(|_| StandardNormal.sample(&mut state_rng))
                    .collect();
                Source {
                    position,
                    alpha: config.alpha,
                    mean,
                    states,
                    p_self: config.p_self,
                    lowpass_fraction: config.lowpass_fraction,
                }
            })
            .collect();
        Ok(Self {
            correlation_length: config.correlation_length,
            sources,
        })
    }

    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    /// Source trajectories over `1..=horizon`.
    pub fn trajectories(&self, horizon: usize, seed: u64) -> Result<SourceTrajectories> {
        let mut smooth = Vec::with_capacity(self.n_sources());
        let mut jumps = Vec::with_capacity(self.n_sources());
        for (s, src) in self.sources.iter().enumerate() {
            let raw = gauss_markov_sequence(
                src.alpha,
                src.mean,
                horizon,
                &mut stream(seed, Stream::Innovation(s)),
            )?;
            smooth.push(lowpass_smooth(&raw, src.lowpass_fraction)?);
            jumps.push(markov_state_sequence(
                &src.states,
                src.p_self,
                horizon,
                &mut stream(seed, Stream::MarkovChain(s)),
            )?);
        }
        Ok(SourceTrajectories { smooth, jumps })
    }

    /// `N × S` matrix of kernel weights `exp(-(d/η1)²)`.
    pub fn kernel_weights(&self, field: &SensorField) -> DMatrix<f64> {
        let eta = self.correlation_length;
        DMatrix::from_fn(field.n_sensors(), self.n_sources(), |n, s| {
            let p = field.positions()[n];
            let q = self.sources[s].position;
            let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
            (-(d / eta).powi(2)).exp()
        })
    }
}

/// Per-source smooth (`λ_s`) and jump (`π_s`) components; `β_s = λ_s + π_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceTrajectories {
    pub smooth: Vec<Vec<f64>>,
    pub jumps: Vec<Vec<f64>>,
}

impl SourceTrajectories {
    pub fn horizon(&self) -> usize {
        self.smooth.first().map_or(0, Vec::len)
    }

    /// `β(t)` for 1-based `t`.
    pub fn values_at(&self, t: usize) -> Vec<f64> {
        self.smooth
            .iter()
            .zip(&self.jumps)
            .map(|(l, p)| l[t - 1] + p[t - 1])
            .collect()
    }

    /// Columns: `t,source,smooth,jump,value`, time-major.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "source", "smooth", "jump", "value"])?;
        for t in 1..=self.horizon() {
            for s in 0..self.smooth.len() {
                let (l, p) = (self.smooth[s][t - 1], self.jumps[s][t - 1]);
                w.write_record(&[
                    t.to_string(),
                    s.to_string(),
                    l.to_string(),
                    p.to_string(),
                    (l + p).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// `λ(1) = μ`, `λ(t) = α(λ(t-1) - μ) + √(1-α²)·ν(t) + μ` with `ν ~ N(0, 1)`.
pub fn gauss_markov_sequence<R: Rng + ?Sized>(
    alpha: f64,
    mean: f64,
    len: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(invalid(format!("alpha {alpha} outside [0, 1]")));
    }
    if len == 0 {
        return Err(invalid("sequence length must be at least 1"));
    }
    let gain = (1.0 - alpha * alpha).sqrt();
    let mut out = Vec::with_capacity(len);
    let mut prev = mean;
    out.push(prev);
    for _ in 1..len {
        let innovation: f64 = StandardNormal.sample(rng);
        prev = alpha * (prev - mean) + gain * innovation + mean;
        out.push(prev);
    }
    Ok(out)
}

/// Keeps the lowest `⌈fraction·T⌉` orthonormal DCT-II coefficients.
pub fn lowpass_smooth(series: &[f64], fraction: f64) -> Result<Vec<f64>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(invalid(format!(
            "low-pass fraction {fraction} outside (0, 1]"
        )));
    }
    let len = series.len();
    if len == 0 {
        return Ok(Vec::new());
    }
    let keep = ((fraction * len as f64).ceil() as usize).clamp(1, len);
    let dct = dct_matrix(len);
    let mut coeffs = &dct * DVector::from_column_slice(series);
    coeffs.rows_mut(keep, len - keep).fill(0.0);
    Ok((dct.transpose() * coeffs).as_slice().to_vec())
}

/// Markov chain over `states`: stay with probability `p_self`, otherwise
/// jump uniformly to one of the other states. The initial state is uniform.
pub fn markov_state_sequence<R: Rng + ?Sized>(
    states: &[f64],
    p_self: f64,
    len: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if states.is_empty() {
        return Err(invalid("Markov state space must be non-empty"));
    }
    if !(0.0..=1.0).contains(&p_self) {
        return Err(invalid(format!(
            "self-transition probability {p_self} outside [0, 1]"
        )));
    }
    let k = states.len();
    let mut idx = rng.random_range(0..k);
    let mut out = Vec::with_capacity(len);
    for t in 0..len {
        if t > 0 && k > 1 && rng.random::<f64>() >= p_self {
            // Uniform over the k-1 other states.
            let j = rng.random_range(0..k - 1);
            idx = if j >= idx { j + 1 } else { j };
        }
        out.push(states[idx]);
    }
    Ok(out)
}

/// `x̄(t)`: entry `n` is `Σ_s exp(-(d_{n,s}/η1)²) β_s(t)`.
pub fn observe(
    field: &SensorField,
    sources: &SourceModel,
    source_values: &[f64],
) -> Result<DVector<f64>> {
    if source_values.len() != sources.n_sources() {
        return Err(invalid(format!(
            "{} source values for {} sources",
            source_values.len(),
            sources.n_sources()
        )));
    }
    Ok(sources.kernel_weights(field) * DVector::from_column_slice(source_values))
}

/// Window `X(t)`: column `j` is the snapshot at `t - W + 1 + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    pub values: DMatrix<f64>,
    pub end_time: usize,
}

impl DataMatrix {
    pub fn from_snapshots(snapshots: &[DVector<f64>], end_time: usize) -> Result<Self> {
        let n = snapshots
            .first()
            .ok_or_else(|| invalid("window needs at least one snapshot"))?
            .len();
        if let Some(bad) = snapshots.iter().position(|s| s.len() != n) {
            return Err(invalid(format!(
                "snapshot {bad} has length {} but expected {n}",
                snapshots[bad].len()
            )));
        }
        Ok(Self {
            values: DMatrix::from_columns(snapshots),
            end_time,
        })
    }

    pub fn n_sensors(&self) -> usize {
        self.values.nrows()
    }

    pub fn window(&self) -> usize {
        self.values.ncols()
    }

    /// Column-major `vec(X)`.
    pub fn vec(&self) -> DVector<f64> {
        DVector::from_column_slice(self.values.as_slice())
    }
}

/// Deployment parameters for one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub n_sensors: usize,
    pub horizon: usize,
    pub sources: SourceConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_sensors: 100,
            horizon: 20,
            sources: SourceConfig::default(),
        }
    }
}

/// One deployment with its full observation history.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub seed: u64,
    pub field: SensorField,
    pub sources: SourceModel,
    pub trajectories: SourceTrajectories,
    /// `N × T`; column `t - 1` is `x̄(t)`.
    pub observations: DMatrix<f64>,
}

impl Scenario {
    pub fn generate(config: &ScenarioConfig, seed: u64) -> Result<Self> {
        if config.horizon == 0 {
            return Err(invalid("horizon must be at least 1"));
        }
        let field = SensorField::generate(config.n_sensors, seed)?;
        let sources = SourceModel::generate(field.region_side(), &config.sources, seed)?;
        let trajectories = sources.trajectories(config.horizon, seed)?;
        let weights = sources.kernel_weights(&field);
        let mut observations = DMatrix::zeros(field.n_sensors(), config.horizon);
        for t in 1..=config.horizon {
            let beta = DVector::from_vec(trajectories.values_at(t));
            observations.set_column(t - 1, &(&weights * beta));
        }
        Ok(Self {
            seed,
            field,
            sources,
            trajectories,
            observations,
        })
    }

    pub fn horizon(&self) -> usize {
        self.observations.ncols()
    }

    /// `X(t)` for the window ending at 1-based `end_time`.
    pub fn window(&self, end_time: usize, window: usize) -> Result<DataMatrix> {
        if window == 0 || end_time < window || end_time > self.horizon() {
            return Err(invalid(format!(
                "window of {window} ending at {end_time} does not fit horizon {}",
                self.horizon()
            )));
        }
        let snapshots: Vec<_> = (end_time + 1 - window..=end_time)
            .map(|t| self.observations.column(t - 1).into_owned())
            .collect();
        DataMatrix::from_snapshots(&snapshots, end_time)
    }

    /// Columns: `t,sensor,value`, time-major.
    pub fn write_observations_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "sensor", "value"])?;
        for t in 0..self.horizon() {
            for n in 0..self.field.n_sensors() {
                w.write_record(&[
                    (t + 1).to_string(),
                    n.to_string(),
                    self.observations[(n, t)].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
