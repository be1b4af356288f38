//! Topological observables extracted from trajectories.
//!
//! * threshold crossings of the voltages and their signed (intersection) count,
//! * critical points: damped-Newton refinement and unstable-dimension index,
//! * slow-point traces giving the sequence of visited critical points,
//! * the largest Lyapunov exponent (two-trajectory Benettin scheme).

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{rk4_in_place, DynamicsError, Rk4Workspace, TrajectorySample};
use crate::field::{active_faces, jacobian_fd, projected_flow, sup_norm, VectorField, DEFAULT_FD_STEP};

/// Real parts within this band count as center directions.
pub const CENTER_EPS: f64 = 1e-6;
/// Default Newton residual target.
pub const REFINE_TOL: f64 = 1e-9;
/// ‖F‖∞ below which a sample counts as slow.
pub const SLOW_TOL: f64 = 1e-3;
/// Consecutive slow samples needed to open a slow episode.
pub const SLOW_RUN: usize = 5;
/// Refined points closer than this are the same critical point.
pub const DEDUP_DIST: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum InstrumentError {
    #[error("eigenvalue computation failed for a {0}x{0} matrix")]
    Eigen(usize),
    #[error("jacobian has non-finite entries")]
    NonFiniteJacobian,
    #[error("critical-point refinement did not converge in {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("newton system singular")]
    Singular,
    #[error("tangent perturbation collapsed to zero at t = {0}")]
    DegeneratePerturbation(f64),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// A voltage crossing the digital threshold between two sampled times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossingEvent {
    pub t: f64,
    /// 1-based variable index.
    pub variable: usize,
    /// +1 for false→true, -1 for true→false.
    pub direction: i8,
}

/// Side of the threshold as the readout sees it: 1 if v > 0 else 0.
pub fn side(v: f64) -> i64 {
    i64::from(v > 0.0)
}

/// Incremental detector; feeding it every step equals [`detect_crossings`]
/// on the full-resolution trajectory.
///
/// A crossing is a change of readout side between consecutive points, so an
/// exact zero sits on the false side and belongs to the interval it ends.
#[derive(Debug, Clone)]
pub struct CrossingDetector {
    prev_v: Vec<f64>,
    prev_t: f64,
    events: Vec<CrossingEvent>,
}

impl CrossingDetector {
    pub fn new(v0: &[f64], t0: f64) -> Self {
        CrossingDetector { prev_v: v0.to_vec(), prev_t: t0, events: Vec::new() }
    }

    pub fn advance(&mut self, v: &[f64], t: f64) {
        for (i, (&a, &b)) in self.prev_v.iter().zip(v).enumerate() {
            let (sa, sb) = (a > 0.0, b > 0.0);
            if sa != sb {
                let frac = if a == b { 1.0 } else { (a / (a - b)).clamp(0.0, 1.0) };
                let tc = self.prev_t + frac * (t - self.prev_t);
                self.events.push(CrossingEvent { t: tc, variable: i + 1, direction: if sb { 1 } else { -1 } });
            }
        }
        self.prev_v.copy_from_slice(v);
        self.prev_t = t;
    }

    pub fn finish(self) -> Vec<CrossingEvent> {
        self.events
    }
}

/// Crossings between consecutive samples, times linearly interpolated.
pub fn detect_crossings(samples: &[TrajectorySample]) -> Vec<CrossingEvent> {
    let Some(first) = samples.first() else {
        return Vec::new();
    };
    let mut det = CrossingDetector::new(first.state.v(), first.t);
    for s in &samples[1..] {
        det.advance(s.state.v(), s.t);
    }
    det.finish()
}

/// Sum of directions for one variable: its intersection number.
pub fn net_signed_crossings(events: &[CrossingEvent], variable: usize) -> i64 {
    events.iter().filter(|e| e.variable == variable).map(|e| i64::from(e.direction)).sum()
}

/// Elementary-transition proxy for the instanton count of a run.
pub fn instanton_step_count(events: &[CrossingEvent]) -> usize {
    events.len()
}

/// Checks that each variable's crossings alternate in direction.
pub fn directions_alternate(events: &[CrossingEvent]) -> bool {
    let mut last: std::collections::HashMap<usize, i8> = std::collections::HashMap::new();
    events.iter().all(|e| match last.insert(e.variable, e.direction) {
        Some(prev) => prev != e.direction,
        None => true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexCount {
    /// Eigenvalues with real part > eps.
    pub unstable: usize,
    /// Eigenvalues with |real part| <= eps.
    pub center: usize,
    /// Eigenvalues with real part < -eps.
    pub stable: usize,
}

/// Counts eigenvalues of `jacobian` by the sign of their real part.
pub fn index_of(jacobian: &DMatrix<f64>, eps_c: f64) -> Result<IndexCount, InstrumentError> {
    let d = jacobian.nrows();
    if !jacobian.is_square() {
        return Err(InstrumentError::Argument("jacobian must be square".into()));
    }
    if jacobian.iter().any(|x| !x.is_finite()) {
        return Err(InstrumentError::NonFiniteJacobian);
    }
    if d == 0 {
        return Ok(IndexCount { unstable: 0, center: 0, stable: 0 });
    }
    let schur = nalgebra::linalg::Schur::try_new(jacobian.clone(), f64::EPSILON, 1000 * d.max(10))
        .ok_or(InstrumentError::Eigen(d))?;
    let eigen = schur.complex_eigenvalues();
    let mut count = IndexCount { unstable: 0, center: 0, stable: 0 };
    for lambda in eigen.iter() {
        if lambda.re > eps_c {
            count.unstable += 1;
        } else if lambda.re < -eps_c {
            count.stable += 1;
        } else {
            count.center += 1;
        }
    }
    Ok(count)
}

/// Jacobian of the clamped flow: raw finite differences with the rows of
/// face-pinned coordinates zeroed.
pub fn effective_jacobian<F: VectorField + ?Sized>(field: &F, x: &[f64], h: f64) -> DMatrix<f64> {
    let mut jac = jacobian_fd(field, x, h);
    let fx = field.eval_vec(x);
    for (k, pinned) in active_faces(field, x, &fx).into_iter().enumerate() {
        if pinned {
            jac.row_mut(k).fill(0.0);
        }
    }
    jac
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalPointReport {
    pub location: Vec<f64>,
    /// ‖projected F‖∞ at `location`.
    pub residual: f64,
    pub index: usize,
    pub center_dims: usize,
    pub stable_dims: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct RefineOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub eps_c: f64,
    pub fd_step: f64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        RefineOptions { tol: REFINE_TOL, max_iter: 100, eps_c: CENTER_EPS, fd_step: DEFAULT_FD_STEP }
    }
}

/// Damped Newton on the clamped flow.
///
/// Face-pinned coordinates are held fixed; the remaining block is solved by
/// LU. A singular block is retried with a small diagonal shift `J - μI`,
/// which turns a zero row into a long flow step that the box then absorbs.
/// The step length halves while the residual does not decrease.
pub fn refine_critical_point<F: VectorField + ?Sized>(
    field: &F,
    guess: &[f64],
    opts: &RefineOptions,
) -> Result<CriticalPointReport, InstrumentError> {
    let d = field.dim();
    if guess.len() != d {
        return Err(InstrumentError::Argument(format!("guess has length {}, field has {d}", guess.len())));
    }
    let mut x = guess.to_vec();
    field.clamp(&mut x);
    let mut residual = sup_norm(&projected_flow(field, &x));

    for _ in 0..opts.max_iter {
        if residual <= opts.tol {
            return report(field, x, residual, opts);
        }
        let fx = field.eval_vec(&x);
        let active = active_faces(field, &x, &fx);
        let free: Vec<usize> = (0..d).filter(|&k| !active[k]).collect();
        let jac = jacobian_fd(field, &x, opts.fd_step);
        let sub = DMatrix::from_fn(free.len(), free.len(), |r, c| jac[(free[r], free[c])]);
        let rhs = nalgebra::DVector::from_iterator(free.len(), free.iter().map(|&k| -fx[k]));
        let delta = solve_shifted(&sub, &rhs).ok_or(InstrumentError::Singular)?;

        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let mut trial = x.clone();
            for (r, &k) in free.iter().enumerate() {
                trial[k] += lambda * delta[r];
            }
            field.clamp(&mut trial);
            let r_trial = sup_norm(&projected_flow(field, &trial));
            if r_trial < residual {
                x = trial;
                residual = r_trial;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if residual <= opts.tol {
        return report(field, x, residual, opts);
    }
    Err(InstrumentError::NoConvergence { iterations: opts.max_iter, residual })
}

fn solve_shifted(a: &DMatrix<f64>, b: &nalgebra::DVector<f64>) -> Option<nalgebra::DVector<f64>> {
    let n = a.nrows();
    if n == 0 {
        return Some(nalgebra::DVector::zeros(0));
    }
    let scale = a.amax().max(1.0);
    let good = |v: &nalgebra::DVector<f64>| v.iter().all(|x| x.is_finite());
    let lu = a.clone().lu();
    // Reject near-singular pivots rather than trusting a huge step.
    let min_pivot = lu.u().diagonal().iter().fold(f64::INFINITY, |m, x| m.min(x.abs()));
    if min_pivot > 1e-12 * scale {
        if let Some(x) = lu.solve(b).filter(good) {
            return Some(x);
        }
    }
    for shift in [1e-8, 1e-6, 1e-4] {
        let shifted = a - DMatrix::identity(n, n) * (shift * scale);
        if let Some(x) = shifted.lu().solve(b).filter(good) {
            return Some(x);
        }
    }
    None
}

fn report<F: VectorField + ?Sized>(
    field: &F,
    location: Vec<f64>,
    residual: f64,
    opts: &RefineOptions,
) -> Result<CriticalPointReport, InstrumentError> {
    let jac = effective_jacobian(field, &location, opts.fd_step);
    let count = index_of(&jac, opts.eps_c)?;
    Ok(CriticalPointReport {
        location,
        residual,
        index: count.unstable,
        center_dims: count.center,
        stable_dims: count.stable,
    })
}

/// A critical point visit with the time of the slow episode that found it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalVisit {
    pub t: f64,
    pub report: CriticalPointReport,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InstantonTrace {
    pub visits: Vec<CriticalVisit>,
}

impl InstantonTrace {
    /// Transitions between consecutive visits.
    pub fn step_count(&self) -> usize {
        self.visits.len().saturating_sub(1)
    }

    pub fn push_dedup(&mut self, visit: CriticalVisit) {
        let known = self
            .visits
            .last()
            .map(|v| euclid(&v.report.location, &visit.report.location) < DEDUP_DIST)
            .unwrap_or(false);
        if !known {
            self.visits.push(visit);
        }
    }

    /// True when every visit is at least as stable as the one before it.
    pub fn is_monotone(&self) -> bool {
        self.visits.windows(2).all(|w| w[1].report.index <= w[0].report.index)
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy)]
pub struct TraceOptions {
    pub slow_tol: f64,
    pub slow_run: usize,
    pub refine: RefineOptions,
}

impl Default for TraceOptions {
    fn default() -> Self {
        TraceOptions { slow_tol: SLOW_TOL, slow_run: SLOW_RUN, refine: RefineOptions::default() }
    }
}

/// Finds slow episodes (‖projected F‖∞ < slow_tol on `slow_run` consecutive
/// points), refines one critical point per episode from its first slow
/// point, and drops repeats of the previous visit. Failed refinements are
/// skipped.
pub fn slow_point_trace<'a, F, I>(field: &F, points: I, opts: &TraceOptions) -> InstantonTrace
where
    F: VectorField + ?Sized,
    I: IntoIterator<Item = (f64, &'a [f64])>,
{
    let mut trace = InstantonTrace::default();
    let mut run: Option<(f64, Vec<f64>)> = None;
    let mut run_len = 0usize;
    let mut reported = false;
    for (t, x) in points {
        if sup_norm(&projected_flow(field, x)) < opts.slow_tol {
            if run_len == 0 {
                run = Some((t, x.to_vec()));
                reported = false;
            }
            run_len += 1;
            if run_len >= opts.slow_run && !reported {
                reported = true;
                let (t_start, start) = run.as_ref().expect("episode start");
                if let Ok(report) = refine_critical_point(field, start, &opts.refine) {
                    trace.push_dedup(CriticalVisit { t: *t_start, report });
                }
            }
        } else {
            run_len = 0;
        }
    }
    trace
}

/// Unstable-dimension indexes in visit order.
pub fn index_sequence(trace: &InstantonTrace) -> Vec<usize> {
    trace.visits.iter().map(|v| v.report.index).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    pub lambda_max: f64,
    pub horizon: f64,
}

/// Relative size of the finite-difference tangent perturbation.
const TANGENT_SCALE: f64 = 1e-8;

/// Largest Lyapunov exponent by co-evolving a reference trajectory and a
/// perturbed copy under RK4, renormalizing the separation every step.
///
/// The initial tangent direction is a random unit vector drawn from `rng`.
pub fn lyapunov_max<F: VectorField + ?Sized, R: Rng + ?Sized>(
    field: &F,
    state0: &[f64],
    horizon: f64,
    dt: f64,
    rng: &mut R,
) -> Result<LyapunovEstimate, InstrumentError> {
    if !(horizon > 0.0 && dt > 0.0) {
        return Err(InstrumentError::Argument("horizon and dt must be positive".into()));
    }
    let d = field.dim();
    let steps = (horizon / dt).round().max(1.0) as u64;
    let mut x = state0.to_vec();
    field.clamp(&mut x);
    let mut w: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let norm = euclid(&w, &vec![0.0; d]);
    if norm == 0.0 {
        return Err(InstrumentError::DegeneratePerturbation(0.0));
    }
    w.iter_mut().for_each(|c| *c /= norm);

    let mut ws_ref = Rk4Workspace::new(d);
    let mut ws_pert = Rk4Workspace::new(d);
    let mut y = vec![0.0; d];
    let mut log_sum = 0.0;
    for step in 0..steps {
        let t = step as f64 * dt;
        let scale = TANGENT_SCALE * (1.0 + sup_norm(&x));
        for i in 0..d {
            y[i] = x[i] + scale * w[i];
        }
        field.clamp(&mut y);
        let start_sep = euclid(&y, &x);
        if start_sep == 0.0 {
            return Err(InstrumentError::DegeneratePerturbation(t));
        }
        rk4_in_place(field, &mut x, dt, t, &mut ws_ref)?;
        rk4_in_place(field, &mut y, dt, t, &mut ws_pert)?;
        let sep = euclid(&y, &x);
        if sep == 0.0 || !sep.is_finite() {
            return Err(InstrumentError::DegeneratePerturbation(t + dt));
        }
        log_sum += (sep / start_sep).ln();
        for i in 0..d {
            w[i] = (y[i] - x[i]) / sep;
        }
    }
    let horizon = steps as f64 * dt;
    Ok(LyapunovEstimate { lambda_max: log_sum / horizon, horizon })
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventRecord {
    Crossing { t: f64, var: usize, dir: i8 },
    Critical { t: f64, residual: f64, index: usize, center_dims: usize },
}

/// JSON lines, crossings first (chronological), then critical visits.
pub fn event_log_jsonl(crossings: &[CrossingEvent], trace: Option<&InstantonTrace>) -> String {
    let mut records: Vec<EventRecord> =
        crossings.iter().map(|e| EventRecord::Crossing { t: e.t, var: e.variable, dir: e.direction }).collect();
    if let Some(trace) = trace {
        records.extend(trace.visits.iter().map(|v| EventRecord::Critical {
            t: v.t,
            residual: v.report.residual,
            index: v.report.index,
            center_dims: v.report.center_dims,
        }));
    }
    records.iter().map(|r| serde_json::to_string(r).expect("serializable") + "\n").collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::SolverState;
    use crate::field::{DoubleWellFlow, LinearField};
    use crate::rng::seeded;

    fn samples(series: &[(f64, f64)]) -> Vec<TrajectorySample> {
        series
            .iter()
            .map(|&(t, v)| TrajectorySample {
                t,
                state: SolverState::new(vec![v], vec![], vec![], t).unwrap(),
                defects: 0,
            })
            .collect()
    }

    #[test]
    fn single_crossing_interpolated() {
        let ev = detect_crossings(&samples(&[(0.0, 0.5), (1.0, -0.5)]));
        assert_eq!(ev, vec![CrossingEvent { t: 0.5, variable: 1, direction: -1 }]);
    }

    #[test]
    fn constant_sign_has_no_crossings() {
        assert!(detect_crossings(&samples(&[(0.0, 0.5), (1.0, 0.2), (2.0, 0.9)])).is_empty());
    }

    #[test]
    fn alternating_signs() {
        let ev = detect_crossings(&samples(&[(0.0, 0.5), (1.0, -0.5), (2.0, 0.5)]));
        let dirs: Vec<i8> = ev.iter().map(|e| e.direction).collect();
        assert_eq!(dirs, vec![-1, 1]);
        assert!(directions_alternate(&ev));
    }

    #[test]
    fn zero_sits_on_false_side() {
        // 0.5 → 0 is a crossing ending exactly at the zero sample; 0 → -0.5 is not.
        let ev = detect_crossings(&samples(&[(0.0, 0.5), (1.0, 0.0), (2.0, -0.5)]));
        assert_eq!(ev, vec![CrossingEvent { t: 1.0, variable: 1, direction: -1 }]);
        let ev = detect_crossings(&samples(&[(0.0, -0.5), (1.0, 0.0), (2.0, -0.5)]));
        assert!(ev.is_empty());
    }

    #[test]
    fn net_crossings() {
        let mk = |d: i8| CrossingEvent { t: 0.0, variable: 3, direction: d };
        assert_eq!(net_signed_crossings(&[mk(1), mk(-1), mk(1)], 3), 1);
        assert_eq!(net_signed_crossings(&[], 3), 0);
        assert_eq!(instanton_step_count(&[mk(1)]), 1);
    }

    #[test]
    fn index_examples() {
        let diag = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, -1.0, 2.0]));
        assert_eq!(index_of(&diag, CENTER_EPS).unwrap(), IndexCount { unstable: 1, center: 0, stable: 2 });
        let c = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.0, -1.0]));
        assert_eq!(index_of(&c, 1e-6).unwrap(), IndexCount { unstable: 0, center: 1, stable: 1 });
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert_eq!(index_of(&rot, 1e-6).unwrap(), IndexCount { unstable: 0, center: 2, stable: 0 });
        let bad = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        assert!(index_of(&bad, 1e-6).is_err());
    }

    #[test]
    fn refine_linear_sink() {
        let r = refine_critical_point(&LinearField::scalar(1, -1.0), &[0.3], &RefineOptions::default()).unwrap();
        assert!(r.location[0].abs() <= 1e-9);
        assert_eq!(r.index, 0);
    }

    #[test]
    fn refine_saddle() {
        let saddle = LinearField::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]));
        let r = refine_critical_point(&saddle, &[0.1, 0.1], &RefineOptions::default()).unwrap();
        assert_eq!((r.index, r.center_dims, r.stable_dims), (1, 0, 1));
        assert!(r.residual <= REFINE_TOL);
    }

    #[test]
    fn refine_fails_without_zero() {
        struct Drift;
        impl VectorField for Drift {
            fn dim(&self) -> usize {
                1
            }
            fn eval(&self, _x: &[f64], out: &mut [f64]) {
                out[0] = 1.0;
            }
        }
        let opts = RefineOptions { max_iter: 5, ..Default::default() };
        assert!(refine_critical_point(&Drift, &[0.0], &opts).is_err());
    }

    #[test]
    fn double_well_trace_goes_saddle_then_minimum() {
        let field = DoubleWellFlow { tilt: 0.0 };
        let traj = crate::dynamics::integrate_field(&field, &[1e-7, 0.2], 0.05, 1200, 1).unwrap();
        let trace = slow_point_trace(&field, traj.iter().map(|(t, x)| (*t, x.as_slice())), &TraceOptions::default());
        assert_eq!(index_sequence(&trace), vec![1, 0]);
        assert_eq!(trace.step_count(), 1);
        assert!(trace.is_monotone());
        let last = &trace.visits[1].report.location;
        assert!((last[0] - 1.0).abs() < 1e-6 && last[1].abs() < 1e-6);
    }

    #[test]
    fn lyapunov_linear_calibration() {
        let decay = lyapunov_max(&LinearField::scalar(2, -1.0), &[0.5, 0.5], 50.0, 0.01, &mut seeded(1)).unwrap();
        assert!((decay.lambda_max + 1.0).abs() <= 0.01, "{}", decay.lambda_max);
        let growth = lyapunov_max(&LinearField::scalar(2, 1.0), &[0.5, 0.5], 50.0, 0.01, &mut seeded(1)).unwrap();
        assert!((growth.lambda_max - 1.0).abs() <= 0.01, "{}", growth.lambda_max);
        assert!(lyapunov_max(&LinearField::scalar(1, 1.0), &[0.0], 0.0, 0.01, &mut seeded(1)).is_err());
    }

    #[test]
    fn event_log_lines() {
        let ev = [CrossingEvent { t: 0.25, variable: 2, direction: 1 }];
        let text = event_log_jsonl(&ev, None);
        assert_eq!(text, "{\"type\":\"crossing\",\"t\":0.25,\"var\":2,\"dir\":1}\n");
    }
}
