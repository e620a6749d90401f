use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::config::{DeploymentConfig, ExperimentConfig, Method, SweepPoint};
use super::metrics::NmseAccumulator;
use crate::basis::SparsifyingBasis;
use crate::caching::{AnchorPlan, AnchorStrategy, CacheLayout, MeasurementSet};
use crate::error::{invalid, io_err, Error, Result};
use crate::field::{DataMatrix, Scenario};
use crate::netsim::{CommReport, MessageLog};
use crate::rng::{stream, Stream};
use crate::solver::{
    baseline_average, baseline_partition, solve_centralized, solve_cosr_aa, solve_noncollaborative,
    Problem, SolveOptions, SolverConfig, TraceRow,
};

/// One (seed, sweep point, method) cell, aggregated over all windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub config_hash: String,
    pub seed: u64,
    pub point: usize,
    pub x: f64,
    pub m: usize,
    pub q: usize,
    pub strategy: AnchorStrategy,
    pub method: Method,
    pub nmse: f64,
    pub windows: usize,
    /// Solver iterations summed over windows; per cache for the baselines
    /// built on per-cache solves.
    pub iterations: usize,
    pub non_converged: usize,
    pub messages: usize,
    pub scalars: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Default)]
struct Cell {
    nmse: NmseAccumulator,
    iterations: usize,
    non_converged: usize,
    messages: usize,
    scalars: usize,
    seconds: f64,
}

impl Cell {
    fn record(
        self,
        hash: &str,
        seed: u64,
        p: &SweepPoint,
        method: Method,
        windows: usize,
    ) -> Result<ResultRecord> {
        let nmse = self
            .nmse
            .value()
            .ok_or_else(|| invalid(format!("seed {seed}: every window has zero signal energy")))?;
        Ok(ResultRecord {
            config_hash: hash.to_string(),
            seed,
            point: p.index,
            x: p.x,
            m: p.m,
            q: p.q,
            strategy: p.strategy,
            method,
            nmse,
            windows,
            iterations: self.iterations,
            non_converged: self.non_converged,
            messages: self.messages,
            scalars: self.scalars,
            wall_time_s: self.seconds,
        })
    }
}

struct Window {
    end_time: usize,
    data: DataMatrix,
    measurements: MeasurementSet,
}

/// Per-window results of the anchor-free methods for one `M`, shared by
/// every sweep point with that `M`.
#[derive(Default)]
struct BaselineCells {
    cells: BTreeMap<Method, Cell>,
}

fn sample_windows(
    dep: &DeploymentConfig,
    sc: &Scenario,
    layout: &CacheLayout,
    m: usize,
) -> Result<Vec<Window>> {
    (dep.window..=dep.horizon)
        .map(|t| {
            let data = sc.window(t, dep.window)?;
            let mut rng = stream(sc.seed, Stream::Sampling(t as u64));
            let measurements = MeasurementSet::sample(layout, &data, m, &mut rng)?;
            Ok(Window {
                end_time: t,
                data,
                measurements,
            })
        })
        .collect()
}

fn run_baselines(
    basis: &Arc<SparsifyingBasis>,
    layout: &CacheLayout,
    solver: &SolverConfig,
    methods: &[Method],
    windows: &[Window],
) -> Result<BaselineCells> {
    let mut out = BaselineCells::default();
    let n = basis.n_sensors();
    for w in windows {
        let truth = &w.data.values;
        if methods.contains(&Method::Centralized) {
            let start = Instant::now();
            let rec = solve_centralized(Arc::clone(basis), &w.measurements, solver)?;
            let cell = out.cells.entry(Method::Centralized).or_default();
            cell.nmse.add(&[rec.matrix(n)], truth)?;
            cell.iterations += rec.report.iterations;
            cell.non_converged += usize::from(!rec.report.converged);
            cell.seconds += start.elapsed().as_secs_f64();
        }
        if methods.iter().any(|m| m.uses_noncollab()) {
            let start = Instant::now();
            let recs = solve_noncollaborative(Arc::clone(basis), &w.measurements, solver)?;
            let solve_time = start.elapsed().as_secs_f64();
            let mats: Vec<DMatrix<f64>> = recs.iter().map(|r| r.matrix(n)).collect();
            let iterations: usize = recs.iter().map(|r| r.report.iterations).sum();
            let non_converged = recs.iter().filter(|r| !r.report.converged).count();
            for &method in methods.iter().filter(|m| m.uses_noncollab()) {
                let start = Instant::now();
                let estimates = match method {
                    Method::Avg => vec![baseline_average(&mats)?],
                    Method::Partition => vec![baseline_partition(&mats, layout)?],
                    _ => mats.clone(),
                };
                let cell = out.cells.entry(method).or_default();
                cell.nmse.add(&estimates, truth)?;
                cell.iterations += iterations;
                cell.non_converged += non_converged;
                cell.seconds += solve_time + start.elapsed().as_secs_f64();
            }
        }
    }
    Ok(out)
}

fn run_cosr(
    basis: &Arc<SparsifyingBasis>,
    layout: &CacheLayout,
    solver: &SolverConfig,
    seed: u64,
    point: &SweepPoint,
    windows: &[Window],
) -> Result<Cell> {
    let mut cell = Cell::default();
    let n = basis.n_sensors();
    for w in windows {
        let start = Instant::now();
        let mut rng = stream(seed, Stream::Anchors(w.end_time as u64));
        let plan = AnchorPlan::select(layout, point.strategy, point.q, &mut rng)?;
        let problem = Problem::assemble(Arc::clone(basis), layout, &w.measurements, &plan)?;
        let sol = solve_cosr_aa(&problem, solver, &SolveOptions::default())?;
        let mats: Vec<DMatrix<f64>> = sol.x.iter().map(|x| crate::solver::unvec(x, n)).collect();
        cell.nmse.add(&mats, &w.data.values)?;
        cell.iterations += sol.report.iterations;
        cell.non_converged += usize::from(!sol.report.converged);
        cell.messages += sol.report.comm.messages;
        cell.scalars += sol.report.comm.scalars;
        cell.seconds += start.elapsed().as_secs_f64();
    }
    Ok(cell)
}

/// Runs every (seed, sweep point, method) cell. Each cell scores all windows
/// ending at `t = W, ..., T`. Records are sorted by seed, point and method.
pub fn run_sweep(config: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    config.validate()?;
    let dep = &config.deployment;
    let hash = config.hash();
    let points = config.sweep.points(dep)?;
    let basis = Arc::new(SparsifyingBasis::new(dep.n_sensors, dep.window)?);
    let n_windows = dep.n_windows();
    let mut records = Vec::new();

    for &seed in &config.seeds {
        let sc = Scenario::generate(&dep.scenario(), seed)?;
        let layout = CacheLayout::assign(&sc.field, dep.n_caches)?;
        let mut by_m: BTreeMap<usize, Vec<&SweepPoint>> = BTreeMap::new();
        for p in &points {
            by_m.entry(p.m).or_default().push(p);
        }
        for (m, group) in by_m {
            log::info!("seed {seed}: M = {m}, {} sweep point(s)", group.len());
            let windows = sample_windows(dep, &sc, &layout, m)?;
            let baselines =
                run_baselines(&basis, &layout, &config.solver, &config.methods, &windows)?;
            for p in group {
                for &method in &config.methods {
                    let cell = match method {
                        Method::CosrAa => {
                            run_cosr(&basis, &layout, &config.solver, seed, p, &windows)?
                        }
                        _ => {
                            let base = &baselines.cells[&method];
                            Cell {
                                nmse: base.nmse.clone(),
                                iterations: base.iterations,
                                non_converged: base.non_converged,
                                messages: 0,
                                scalars: 0,
                                seconds: base.seconds,
                            }
                        }
                    };
                    records.push(cell.record(&hash, seed, p, method, n_windows)?);
                }
            }
        }
    }
    records.sort_by(|a, b| (a.seed, a.point, a.method).cmp(&(b.seed, b.point, b.method)));
    Ok(records)
}

/// Columns follow the [`ResultRecord`] field order.
pub fn write_records_csv<W: Write>(records: &[ResultRecord], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records_csv<R: Read>(input: R) -> csv::Result<Vec<ResultRecord>> {
    csv::Reader::from_reader(input).deserialize().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub point: usize,
    pub x: f64,
    pub m: usize,
    pub q: usize,
    pub strategy: AnchorStrategy,
    pub mean_nmse: f64,
    /// Sample standard deviation over seeds; zero for a single seed.
    pub std_nmse: f64,
    pub seeds: usize,
    pub mean_iterations: f64,
    pub non_converged: usize,
    pub mean_scalars: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub method: Method,
    pub points: Vec<CurvePoint>,
}

impl Curve {
    pub fn at(&self, point: usize) -> Option<&CurvePoint> {
        self.points.iter().find(|p| p.point == point)
    }
}

/// Seed-averaged curves, one per method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub config_hashes: Vec<String>,
    pub curves: Vec<Curve>,
}

impl Summary {
    pub fn curve(&self, method: Method) -> Option<&Curve> {
        self.curves.iter().find(|c| c.method == method)
    }
}

pub fn summarize(name: &str, records: &[ResultRecord]) -> Summary {
    let mut groups: BTreeMap<(Method, usize), Vec<&ResultRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.method, r.point)).or_default().push(r);
    }
    let mut curves: Vec<Curve> = Vec::new();
    for ((method, point), rs) in groups {
        let k = rs.len() as f64;
        let mean = rs.iter().map(|r| r.nmse).sum::<f64>() / k;
        let var = if rs.len() > 1 {
            rs.iter().map(|r| (r.nmse - mean).powi(2)).sum::<f64>() / (k - 1.0)
        } else {
            0.0
        };
        let cp = CurvePoint {
            point,
            x: rs[0].x,
            m: rs[0].m,
            q: rs[0].q,
            strategy: rs[0].strategy,
            mean_nmse: mean,
            std_nmse: var.sqrt(),
            seeds: rs.len(),
            mean_iterations: rs.iter().map(|r| r.iterations as f64).sum::<f64>() / k,
            non_converged: rs.iter().map(|r| r.non_converged).sum(),
            mean_scalars: rs.iter().map(|r| r.scalars as f64).sum::<f64>() / k,
        };
        match curves.last_mut() {
            Some(c) if c.method == method => c.points.push(cp),
            _ => curves.push(Curve {
                method,
                points: vec![cp],
            }),
        }
    }
    let mut config_hashes: Vec<String> = records.iter().map(|r| r.config_hash.clone()).collect();
    config_hashes.sort();
    config_hashes.dedup();
    Summary {
        name: name.to_string(),
        config_hashes,
        curves,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepOutput {
    pub records: PathBuf,
    pub summary: PathBuf,
}

/// Writes `<name>.csv` and `<name>.summary.json` under `dir`.
pub fn write_sweep_outputs(
    dir: &Path,
    name: &str,
    records: &[ResultRecord],
) -> Result<SweepOutput> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let out = SweepOutput {
        records: dir.join(format!("{name}.csv")),
        summary: dir.join(format!("{name}.summary.json")),
    };
    let file = std::fs::File::create(&out.records).map_err(io_err(&out.records))?;
    write_records_csv(records, std::io::BufWriter::new(file)).map_err(|e| Error::Format {
        path: out.records.clone(),
        message: e.to_string(),
    })?;
    let text = serde_json::to_string_pretty(&summarize(name, records)).expect("summary serializes");
    std::fs::write(&out.summary, text + "\n").map_err(io_err(&out.summary))?;
    Ok(out)
}

/// One recovery problem: a deployment seed, a window and the budgets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceSpec {
    pub seed: u64,
    pub end_time: usize,
    pub m: usize,
    pub q: usize,
    pub strategy: AnchorStrategy,
}

#[derive(Debug, Clone)]
pub struct InstanceReport {
    pub method: Method,
    pub nmse: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Per-cache estimates (a single entry for fused methods).
    pub estimates: Vec<DMatrix<f64>>,
    pub truth: DMatrix<f64>,
    pub comm: Option<CommReport>,
    pub trace: Vec<TraceRow>,
    pub log: Option<MessageLog>,
}

/// Solves one window with one method, drawing samples and anchors exactly
/// as [`run_sweep`] does for that window. `options` only affects CoSR-AA;
/// its `truth` is filled in here.
pub fn solve_instance(
    dep: &DeploymentConfig,
    solver: &SolverConfig,
    spec: &InstanceSpec,
    method: Method,
    options: &SolveOptions,
) -> Result<InstanceReport> {
    dep.validate()?;
    solver.validate()?;
    if method == Method::DeepCosrAa {
        return Err(invalid("deep-cosr-aa is not solvable here"));
    }
    let sc = Scenario::generate(&dep.scenario(), spec.seed)?;
    let layout = CacheLayout::assign(&sc.field, dep.n_caches)?;
    let data = sc.window(spec.end_time, dep.window)?;
    let mut rng = stream(spec.seed, Stream::Sampling(spec.end_time as u64));
    let ms = MeasurementSet::sample(&layout, &data, spec.m, &mut rng)?;
    let basis = Arc::new(SparsifyingBasis::new(dep.n_sensors, dep.window)?);
    let n = dep.n_sensors;
    let truth = data.values.clone();
    let mut report = InstanceReport {
        method,
        nmse: f64::NAN,
        iterations: 0,
        converged: true,
        estimates: Vec::new(),
        truth: truth.clone(),
        comm: None,
        trace: Vec::new(),
        log: None,
    };
    match method {
        Method::Centralized => {
            let rec = solve_centralized(basis, &ms, solver)?;
            report.iterations = rec.report.iterations;
            report.converged = rec.report.converged;
            report.estimates = vec![rec.matrix(n)];
        }
        Method::CosrAa => {
            let mut rng = stream(spec.seed, Stream::Anchors(spec.end_time as u64));
            let plan = AnchorPlan::select(&layout, spec.strategy, spec.q, &mut rng)?;
            let problem = Problem::assemble(basis, &layout, &ms, &plan)?;
            let opts = SolveOptions {
                truth: Some(data.vec()),
                ..options.clone()
            };
            let sol = solve_cosr_aa(&problem, solver, &opts)?;
            report.iterations = sol.report.iterations;
            report.converged = sol.report.converged;
            report.estimates = sol.x.iter().map(|x| crate::solver::unvec(x, n)).collect();
            report.comm = Some(sol.report.comm);
            report.trace = sol.trace;
            report.log = Some(sol.log);
        }
        _ => {
            let recs = solve_noncollaborative(basis, &ms, solver)?;
            report.iterations = recs.iter().map(|r| r.report.iterations).sum();
            report.converged = recs.iter().all(|r| r.report.converged);
            let mats: Vec<DMatrix<f64>> = recs.iter().map(|r| r.matrix(n)).collect();
            report.estimates = match method {
                Method::Avg => vec![baseline_average(&mats)?],
                Method::Partition => vec![baseline_partition(&mats, &layout)?],
                _ => mats,
            };
        }
    }
    let mut acc = NmseAccumulator::default();
    acc.add(&report.estimates, &truth)?;
    report.nmse = acc
        .value()
        .ok_or_else(|| invalid("the true window has zero energy"))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::Sweep;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            seeds: vec![1, 2],
            deployment: DeploymentConfig {
                n_sensors: 16,
                horizon: 4,
                window: 2,
                ..Default::default()
            },
            sweep: Sweep::Tradeoff {
                points: vec![(2, 3), (3, 3), (2, 5)],
                strategy: AnchorStrategy::PairwiseUnion,
            },
            ..Default::default()
        }
    }

    #[test]
    fn sweep_produces_one_record_per_cell() {
        let cfg = small();
        let records = run_sweep(&cfg).unwrap();
        assert_eq!(records.len(), 2 * 3 * 5);
        let keys: Vec<_> = records
            .iter()
            .map(|r| (r.seed, r.point, r.method))
            .collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert!(records
            .iter()
            .all(|r| r.nmse >= 0.0 && r.windows == 3 && r.config_hash == cfg.hash()));
        for r in &records {
            let cosr = r.method == Method::CosrAa;
            assert_eq!(r.scalars > 0, cosr, "{r:?}");
        }
        // Points 0 and 2 share M, so their anchor-free records agree.
        let pick = |p, m| {
            records
                .iter()
                .find(|r| r.seed == 1 && r.point == p && r.method == m)
                .unwrap()
        };
        assert_eq!(
            pick(0, Method::Centralized).nmse,
            pick(2, Method::Centralized).nmse
        );
        assert_ne!(pick(0, Method::CosrAa).nmse, pick(2, Method::CosrAa).nmse);
    }

    #[test]
    fn sweep_is_reproducible() {
        let strip = |mut rs: Vec<ResultRecord>| {
            rs.iter_mut().for_each(|r| r.wall_time_s = 0.0);
            rs
        };
        let cfg = small();
        assert_eq!(
            strip(run_sweep(&cfg).unwrap()),
            strip(run_sweep(&cfg).unwrap())
        );
    }

    #[test]
    fn instance_matches_sweep_window() {
        let mut cfg = small();
        cfg.deployment.horizon = 2;
        cfg.seeds = vec![4];
        let records = run_sweep(&cfg).unwrap();
        for method in Method::SOLVABLE {
            let spec = InstanceSpec {
                seed: 4,
                end_time: 2,
                m: 3,
                q: 3,
                strategy: AnchorStrategy::PairwiseUnion,
            };
            let opts = SolveOptions {
                trace: true,
                ..Default::default()
            };
            let rep = solve_instance(&cfg.deployment, &cfg.solver, &spec, method, &opts).unwrap();
            let rec = records
                .iter()
                .find(|r| r.point == 1 && r.method == method)
                .unwrap();
            assert_eq!(rep.nmse, rec.nmse, "{method}");
            assert_eq!(rep.comm.is_some(), method == Method::CosrAa);
            assert_eq!(
                rep.trace.len(),
                if method == Method::CosrAa {
                    rep.iterations
                } else {
                    0
                }
            );
        }
    }

    #[test]
    fn records_and_summary_files() {
        let records = run_sweep(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = write_sweep_outputs(dir.path(), "tiny", &records).unwrap();
        let back = read_records_csv(std::fs::File::open(&out.records).unwrap()).unwrap();
        assert_eq!(back, records);
        let header = std::fs::read_to_string(&out.records).unwrap();
        assert!(header.starts_with("config_hash,seed,point,x,m,q,strategy,method,nmse,"));

        let summary: Summary =
            serde_json::from_str(&std::fs::read_to_string(&out.summary).unwrap()).unwrap();
        assert_eq!(summary, summarize("tiny", &records));
        assert_eq!(summary.curves.len(), 5);
        let cen = summary.curve(Method::Centralized).unwrap();
        assert_eq!(cen.points.len(), 3);
        let p0: Vec<f64> = records
            .iter()
            .filter(|r| r.point == 0 && r.method == Method::Centralized)
            .map(|r| r.nmse)
            .collect();
        let mean = (p0[0] + p0[1]) / 2.0;
        assert!((cen.at(0).unwrap().mean_nmse - mean).abs() < 1e-15);
        let sd = ((p0[0] - mean).powi(2) + (p0[1] - mean).powi(2)).sqrt();
        assert!((cen.at(0).unwrap().std_nmse - sd).abs() < 1e-15);
    }
}
