//! Reproducible runs, scaling studies and their JSON-lines records.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::circuit::{CircuitError, CircuitParams, CircuitSystem};
use crate::cnf::{count_defects, generate_planted_ksat, parse_dimacs, Assignment, CnfError, CnfFormula};
use crate::dynamics::{
    default_initial_state, integrate_until, DynamicsError, IntegratorConfig, NoiseConfig, RunOutcome, Verdict,
};
use crate::instrument::{
    index_sequence, lyapunov_max, refine_critical_point, slow_point_trace, CriticalVisit, InstantonTrace,
    InstrumentError, TraceOptions,
};
use crate::rng::{derive_seed, seeded};

pub const SCHEMA: &str = "memflow/1";
pub const DEFAULT_SLOPE_MAX: f64 = 3.0;
pub const DEFAULT_MIN_SOLVE_RATE: f64 = 0.8;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: CnfError },
    #[error(transparent)]
    Cnf(#[from] CnfError),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Instrument(#[from] InstrumentError),
    #[error("{path}, line {line}: {source}")]
    Record { path: PathBuf, line: usize, source: serde_json::Error },
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("cannot fit power law: {0}")]
    Fit(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FormulaSource {
    File { path: PathBuf },
    Planted { n: usize, ratio: f64, k: usize, seed: u64 },
}

impl FormulaSource {
    pub fn load(&self) -> Result<CnfFormula, HarnessError> {
        match self {
            FormulaSource::File { path } => {
                let text =
                    std::fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.clone(), source })?;
                parse_dimacs(&text).map_err(|source| HarnessError::Parse { path: path.clone(), source })
            }
            FormulaSource::Planted { n, ratio, k, seed } => Ok(generate_planted_ksat(*n, *ratio, *k, *seed)?.0),
        }
    }
}

/// Optional post-run analyses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    /// Refine slow points and the final state into an index sequence.
    pub critical: bool,
    /// Lyapunov horizon measured from the solved state, if any.
    pub lyapunov_horizon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub source: FormulaSource,
    /// Parameter values replacing the defaults for this formula.
    pub param_overrides: BTreeMap<String, f64>,
    pub integrator: IntegratorConfig,
    pub noise: NoiseConfig,
    pub seed: u64,
    pub restarts: u32,
    pub analysis: AnalysisOptions,
}

impl RunConfig {
    pub fn new(source: FormulaSource, seed: u64) -> Self {
        RunConfig {
            source,
            param_overrides: BTreeMap::new(),
            integrator: IntegratorConfig::default(),
            noise: NoiseConfig::none(),
            seed,
            restarts: 1,
            analysis: AnalysisOptions::default(),
        }
    }

    pub fn params_for(&self, formula: &CnfFormula) -> Result<CircuitParams, HarnessError> {
        let mut params = CircuitParams::defaults(formula.num_clauses());
        for (key, &value) in &self.param_overrides {
            params.set(key, value)?;
        }
        params.validate()?;
        Ok(params)
    }
}

/// Everything a run produced, before it is flattened into a record.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub formula: CnfFormula,
    pub params: CircuitParams,
    /// Attempt that ended the run (the solving one, or the last).
    pub outcome: RunOutcome,
    pub restarts_used: u32,
    pub steps_total: u64,
    pub crossings_total: usize,
    pub defects_initial: usize,
    pub trace: Option<InstantonTrace>,
    pub lambda_max: Option<f64>,
    pub wall_time_seconds: f64,
}

/// Solves one instance, restarting from fresh random voltages until an
/// attempt is solved or `restarts` attempts are used.
///
/// Attempt `r` draws from `seeded(derive_seed(seed, r))`.
pub fn run(config: &RunConfig) -> Result<RunReport, HarnessError> {
    if config.restarts == 0 {
        return Err(HarnessError::Config("restarts must be at least 1".into()));
    }
    let start = Instant::now();
    let formula = config.source.load()?;
    let params = config.params_for(&formula)?;
    let system = CircuitSystem::new(formula.clone(), params)?;

    let mut steps_total = 0;
    let mut crossings_total = 0;
    let mut defects_initial = None;
    let mut last = None;
    let mut restarts_used = 0;
    let mut rng = seeded(config.seed);
    for attempt in 0..config.restarts {
        rng = seeded(derive_seed(config.seed, u64::from(attempt)));
        let state0 = default_initial_state(&system, &mut rng);
        let outcome = integrate_until(&system, &state0, &config.integrator, &config.noise, &mut rng)?;
        defects_initial.get_or_insert(outcome.samples[0].defects);
        steps_total += outcome.steps_taken;
        crossings_total += outcome.crossings.len();
        restarts_used = attempt + 1;
        let solved = outcome.verdict == Verdict::Solved;
        last = Some(outcome);
        if solved {
            break;
        }
    }
    let outcome = last.expect("at least one attempt");
    if let Some(assignment) = &outcome.assignment {
        debug_assert_eq!(count_defects(&formula, assignment).ok(), Some(0));
    }

    let trace = if config.analysis.critical { Some(critical_trace(&system, &outcome)) } else { None };
    let lambda_max = match (config.analysis.lyapunov_horizon, outcome.verdict) {
        (Some(horizon), Verdict::Solved) => Some(
            lyapunov_max(&system, outcome.final_state.as_slice(), horizon, config.integrator.dt, &mut rng)?.lambda_max,
        ),
        _ => None,
    };

    Ok(RunReport {
        formula,
        params,
        outcome,
        restarts_used,
        steps_total,
        crossings_total,
        defects_initial: defects_initial.unwrap_or(0),
        trace,
        lambda_max,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Slow-point visits along the recorded samples, closed by the refined
/// final state of a solved run.
pub fn critical_trace(system: &CircuitSystem, outcome: &RunOutcome) -> InstantonTrace {
    let opts = TraceOptions::default();
    let mut trace = slow_point_trace(system, outcome.samples.iter().map(|s| (s.t, s.state.as_slice())), &opts);
    if outcome.verdict == Verdict::Solved {
        if let Ok(report) = refine_critical_point(system, outcome.final_state.as_slice(), &opts.refine) {
            trace.push_dedup(CriticalVisit { t: outcome.final_state.t, report });
        }
    }
    trace
}

/// Hex SHA-256 of the assignment's `v` line.
pub fn assignment_hash(assignment: &Assignment) -> String {
    let digest = Sha256::digest(assignment.to_v_line().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// One JSON line of results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub schema: String,
    pub instance_id: String,
    pub instance: FormulaSource,
    pub n: usize,
    pub clauses: usize,
    pub dimension: usize,
    pub verdict: Verdict,
    pub t_solved: Option<f64>,
    pub steps: u64,
    pub restarts_used: u32,
    pub wall_time_seconds: f64,
    pub crossings_total: usize,
    pub defects_initial: usize,
    pub index_sequence: Option<Vec<usize>>,
    pub lambda_max: Option<f64>,
    pub assignment_hash: Option<String>,
    /// Resolved circuit parameters as a `key=value` block.
    pub params: String,
    pub integrator: IntegratorConfig,
    pub noise: NoiseConfig,
    pub seed: u64,
    pub restarts: u32,
    pub analysis: AnalysisOptions,
}

impl BenchResult {
    pub fn from_report(instance_id: impl Into<String>, config: &RunConfig, report: &RunReport) -> Self {
        BenchResult {
            schema: SCHEMA.to_string(),
            instance_id: instance_id.into(),
            instance: config.source.clone(),
            n: report.formula.num_vars(),
            clauses: report.formula.num_clauses(),
            dimension: report.formula.num_vars() + 2 * report.formula.num_clauses(),
            verdict: report.outcome.verdict,
            t_solved: report.outcome.t_solved,
            steps: report.steps_total,
            restarts_used: report.restarts_used,
            wall_time_seconds: report.wall_time_seconds,
            crossings_total: report.crossings_total,
            defects_initial: report.defects_initial,
            index_sequence: report.trace.as_ref().map(index_sequence),
            lambda_max: report.lambda_max,
            assignment_hash: report.outcome.assignment.as_ref().map(assignment_hash),
            params: report.params.to_kv(),
            integrator: config.integrator,
            noise: config.noise,
            seed: config.seed,
            restarts: config.restarts,
            analysis: config.analysis,
        }
    }

    /// The configuration that reproduces this record.
    pub fn config(&self) -> Result<RunConfig, HarnessError> {
        let base = CircuitParams::defaults(self.clauses);
        let params = CircuitParams::from_kv(&self.params, base)?;
        let param_overrides = [
            ("alpha", params.alpha),
            ("beta", params.beta),
            ("gamma", params.gamma),
            ("delta", params.delta),
            ("epsilon", params.epsilon),
            ("zeta", params.zeta),
            ("xl_max", params.xl_max),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Ok(RunConfig {
            source: self.instance.clone(),
            param_overrides,
            integrator: self.integrator,
            noise: self.noise,
            seed: self.seed,
            restarts: self.restarts,
            analysis: self.analysis,
        })
    }

    pub fn is_solved(&self) -> bool {
        self.verdict == Verdict::Solved
    }
}

/// Runs one configuration and flattens it into a record.
pub fn run_record(instance_id: impl Into<String>, config: &RunConfig) -> Result<BenchResult, HarnessError> {
    let report = run(config)?;
    Ok(BenchResult::from_report(instance_id, config, &report))
}

/// Appends one JSON object per line to `path`.
pub fn write_results(results: &[BenchResult], path: &Path) -> Result<(), HarnessError> {
    let io = |source| HarnessError::Io { path: path.to_path_buf(), source };
    let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
    for r in results {
        let line = serde_json::to_string(r).expect("records serialize");
        writeln!(file, "{line}").map_err(io)?;
    }
    file.flush().map_err(io)
}

pub fn read_results(path: &Path) -> Result<Vec<BenchResult>, HarnessError> {
    let file = std::fs::File::open(path).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|source| HarnessError::Record {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        out.push(record);
    }
    Ok(out)
}

/// A scaling study over planted instances.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchSpec {
    pub sizes: Vec<usize>,
    pub ratio: f64,
    pub k: usize,
    pub instances: usize,
    pub seed: u64,
    pub integrator: IntegratorConfig,
    pub noise: NoiseConfig,
    pub param_overrides: BTreeMap<String, f64>,
    pub restarts: u32,
    pub analysis: AnalysisOptions,
}

impl BenchSpec {
    pub fn new(sizes: Vec<usize>, instances: usize, seed: u64) -> Self {
        BenchSpec {
            sizes,
            ratio: 4.25,
            k: 3,
            instances,
            seed,
            integrator: IntegratorConfig::default(),
            noise: NoiseConfig::none(),
            param_overrides: BTreeMap::new(),
            restarts: 1,
            analysis: AnalysisOptions::default(),
        }
    }

    /// `(instance_id, config)` for every run, in a stable order.
    pub fn jobs(&self) -> Vec<(String, RunConfig)> {
        let mut jobs = Vec::new();
        for &n in &self.sizes {
            for i in 0..self.instances {
                let instance_seed = derive_seed(self.seed, ((n as u64) << 32) | i as u64);
                let source = FormulaSource::Planted { n, ratio: self.ratio, k: self.k, seed: instance_seed };
                let config = RunConfig {
                    source,
                    param_overrides: self.param_overrides.clone(),
                    integrator: self.integrator,
                    noise: self.noise,
                    seed: instance_seed,
                    restarts: self.restarts,
                    analysis: self.analysis,
                };
                jobs.push((format!("n{n}-i{i}"), config));
            }
        }
        jobs
    }
}

/// Runs every job on a pool of `workers` threads. Results reach `sink` on
/// the calling thread in completion order; the returned vector is sorted
/// by job order.
pub fn run_bench<S>(spec: &BenchSpec, workers: usize, mut sink: S) -> Result<Vec<BenchResult>, HarnessError>
where
    S: FnMut(&BenchResult) -> Result<(), HarnessError>,
{
    let jobs = spec.jobs();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let (tx, rx) = mpsc::channel::<(usize, Result<BenchResult, HarnessError>)>();
    let mut slots: Vec<Option<BenchResult>> = vec![None; jobs.len()];
    let mut first_error = None;
    std::thread::scope(|scope| {
        let jobs = &jobs;
        scope.spawn(move || {
            pool.install(|| {
                jobs.par_iter().enumerate().for_each_with(tx, |tx, (i, (id, config))| {
                    let _ = tx.send((i, run_record(id.clone(), config)));
                });
            });
        });
        for (i, result) in rx {
            match result.and_then(|r| sink(&r).map(|_| r)) {
                Ok(r) => slots[i] = Some(r),
                Err(e) => {
                    first_error.get_or_insert(e);
                }
            }
        }
    });
    if let Some(e) = first_error {
        return Err(e);
    }
    Ok(slots.into_iter().map(|r| r.expect("every job reported")).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub sizes: Vec<usize>,
    pub medians: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares line through (ln n, ln median).
pub fn fit_power_law(points: &[(usize, f64)]) -> Result<ScalingFit, HarnessError> {
    if points.len() < 3 {
        return Err(HarnessError::Fit(format!("need at least 3 sizes, got {}", points.len())));
    }
    if points.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(HarnessError::Fit("sizes must be strictly increasing".into()));
    }
    if let Some(&(n, m)) = points.iter().find(|(n, m)| *n == 0 || m.is_nan() || *m <= 0.0) {
        return Err(HarnessError::Fit(format!("nonpositive value at n = {n}: {m}")));
    }
    let xs: Vec<f64> = points.iter().map(|(n, _)| (*n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, m)| m.ln()).collect();
    let count = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / count;
    let my = ys.iter().sum::<f64>() / count;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r_squared = if syy == 0.0 { 1.0 } else { (1.0 - ss_res / syy).clamp(0.0, 1.0) };
    Ok(ScalingFit {
        sizes: points.iter().map(|p| p.0).collect(),
        medians: points.iter().map(|p| p.1).collect(),
        slope,
        intercept,
        r_squared,
    })
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    let mid = values.len() / 2;
    Some(if values.len() % 2 == 1 { values[mid] } else { 0.5 * (values[mid - 1] + values[mid]) })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeSummary {
    pub n: usize,
    pub runs: usize,
    pub solved: usize,
    pub solve_rate: f64,
    pub median_crossings: Option<f64>,
}

/// Per-size solve rates and median crossing counts over solved runs.
pub fn summarize(results: &[BenchResult]) -> Vec<SizeSummary> {
    let mut by_size: BTreeMap<usize, Vec<&BenchResult>> = BTreeMap::new();
    for r in results {
        by_size.entry(r.n).or_default().push(r);
    }
    by_size
        .into_iter()
        .map(|(n, runs)| {
            let mut crossings: Vec<f64> =
                runs.iter().filter(|r| r.is_solved()).map(|r| r.crossings_total as f64).collect();
            let solved = crossings.len();
            SizeSummary {
                n,
                runs: runs.len(),
                solved,
                solve_rate: solved as f64 / runs.len() as f64,
                median_crossings: median(&mut crossings),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingVerdict {
    pub summary: Vec<SizeSummary>,
    pub fit: ScalingFit,
    pub slope_max: f64,
    pub min_solve_rate: f64,
    pub pass: bool,
}

/// Fits median crossings against n over solved runs; timed-out runs only
/// count against the solve rate.
pub fn scaling_verdict(
    results: &[BenchResult],
    slope_max: f64,
    min_solve_rate: f64,
) -> Result<ScalingVerdict, HarnessError> {
    let summary = summarize(results);
    let points: Vec<(usize, f64)> = summary
        .iter()
        .map(|s| {
            s.median_crossings
                .map(|m| (s.n, m))
                .ok_or_else(|| HarnessError::Fit(format!("no solved runs at n = {}", s.n)))
        })
        .collect::<Result<_, _>>()?;
    let fit = fit_power_law(&points)?;
    let pass = fit.slope <= slope_max && summary.iter().all(|s| s.solve_rate >= min_solve_rate);
    Ok(ScalingVerdict { summary, fit, slope_max, min_solve_rate, pass })
}
