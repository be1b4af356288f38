//! Fixed-step integration of the circuit flow and run termination.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{digital_readout, CircuitError, CircuitSystem, SolverState};
use crate::cnf::Assignment;
use crate::field::VectorField;
use crate::instrument::{CrossingDetector, CrossingEvent};

/// Largest step accepted for the default parameter set.
pub const MAX_DT: f64 = 0.25;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("non-finite derivative in coordinate {coordinate} at t = {t}")]
    NonFinite { coordinate: usize, t: f64 },
    #[error("invalid integrator configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Classical fourth-order Runge–Kutta; ignores noise.
    Rk4,
    /// Euler–Maruyama; deterministic forward Euler when theta = 0.
    EulerMaruyama,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub t_max: f64,
    pub record_stride: usize,
    pub persistence_window: f64,
    pub scheme: Scheme,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig { dt: 0.05, t_max: 1e4, record_stride: 100, persistence_window: 0.5, scheme: Scheme::Rk4 }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.dt > 0.0 && self.dt <= MAX_DT) {
            return Err(DynamicsError::Config(format!("dt must lie in (0, {MAX_DT}], got {}", self.dt)));
        }
        if !(self.t_max.is_finite() && self.t_max >= self.dt) {
            return Err(DynamicsError::Config(format!("t_max must be finite and >= dt, got {}", self.t_max)));
        }
        if self.record_stride == 0 {
            return Err(DynamicsError::Config("record_stride must be positive".into()));
        }
        if !(self.persistence_window >= 0.0 && self.persistence_window.is_finite()) {
            return Err(DynamicsError::Config("persistence_window must be a finite nonnegative time".into()));
        }
        Ok(())
    }

    /// Same config with the persistence window set to ten steps.
    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self.persistence_window = 10.0 * dt;
        self
    }

    fn persistence_steps(&self) -> u64 {
        (self.persistence_window / self.dt - 1e-9).ceil().max(0.0) as u64
    }

    fn max_steps(&self) -> u64 {
        (self.t_max / self.dt - 1e-9).ceil() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    VoltagesOnly,
    AllCoordinates,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Noise intensity Θ.
    pub theta: f64,
    pub coupling: Coupling,
}

impl NoiseConfig {
    pub fn none() -> Self {
        NoiseConfig { theta: 0.0, coupling: Coupling::VoltagesOnly }
    }

    pub fn voltages(theta: f64) -> Self {
        NoiseConfig { theta, coupling: Coupling::VoltagesOnly }
    }
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig::none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub state: SolverState,
    pub defects: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Solved,
    TimedOut,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub verdict: Verdict,
    pub assignment: Option<Assignment>,
    /// Time at which the zero-defect readout completed its persistence window.
    pub t_solved: Option<f64>,
    pub steps_taken: u64,
    pub samples: Vec<TrajectorySample>,
    pub crossings: Vec<CrossingEvent>,
    pub final_state: SolverState,
}

impl RunOutcome {
    pub fn initial_state(&self) -> &SolverState {
        &self.samples[0].state
    }
}

/// Scratch buffers for RK4 on a field of fixed dimension.
#[derive(Debug, Clone)]
pub struct Rk4Workspace {
    k: [Vec<f64>; 4],
    probe: Vec<f64>,
}

impl Rk4Workspace {
    pub fn new(dim: usize) -> Self {
        Rk4Workspace { k: std::array::from_fn(|_| vec![0.0; dim]), probe: vec![0.0; dim] }
    }
}

fn check_finite(values: &[f64], t: f64) -> Result<(), DynamicsError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(coordinate) => Err(DynamicsError::NonFinite { coordinate, t }),
        None => Ok(()),
    }
}

/// One classical RK4 step in place, followed by projection onto the box.
///
/// Stage probes are projected too, so F is only ever evaluated inside the box.
pub fn rk4_in_place<F: VectorField + ?Sized>(
    field: &F,
    x: &mut [f64],
    dt: f64,
    t: f64,
    ws: &mut Rk4Workspace,
) -> Result<(), DynamicsError> {
    let [k1, k2, k3, k4] = &mut ws.k;
    let probe = &mut ws.probe;
    field.eval(x, k1);
    check_finite(k1, t)?;
    for i in 0..x.len() {
        probe[i] = x[i] + 0.5 * dt * k1[i];
    }
    field.clamp(probe);
    field.eval(probe, k2);
    check_finite(k2, t)?;
    for i in 0..x.len() {
        probe[i] = x[i] + 0.5 * dt * k2[i];
    }
    field.clamp(probe);
    field.eval(probe, k3);
    check_finite(k3, t)?;
    for i in 0..x.len() {
        probe[i] = x[i] + dt * k3[i];
    }
    field.clamp(probe);
    field.eval(probe, k4);
    check_finite(k4, t)?;
    for i in 0..x.len() {
        x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    field.clamp(x);
    Ok(())
}

/// One forward-Euler step in place with clamping. `drift` is scratch.
pub fn euler_in_place<F: VectorField + ?Sized>(
    field: &F,
    x: &mut [f64],
    dt: f64,
    t: f64,
    drift: &mut [f64],
) -> Result<(), DynamicsError> {
    field.eval(x, drift);
    check_finite(drift, t)?;
    for (xi, fi) in x.iter_mut().zip(drift.iter()) {
        *xi += dt * fi;
    }
    field.clamp(x);
    Ok(())
}

/// Euler–Maruyama: x' = clamp(x + dt·F(x) + √(2Θ·dt)·η) with η ~ N(0, 1)
/// on the first `coupled` coordinates.
#[allow(clippy::too_many_arguments)]
pub fn euler_maruyama_in_place<F: VectorField + ?Sized, R: Rng + ?Sized>(
    field: &F,
    x: &mut [f64],
    dt: f64,
    t: f64,
    theta: f64,
    coupled: usize,
    rng: &mut R,
    drift: &mut [f64],
) -> Result<(), DynamicsError> {
    field.eval(x, drift);
    check_finite(drift, t)?;
    let scale = (2.0 * theta * dt).sqrt();
    for (i, (xi, fi)) in x.iter_mut().zip(drift.iter()).enumerate() {
        *xi += dt * fi;
        if i < coupled {
            let eta: f64 = rng.sample(StandardNormal);
            *xi += scale * eta;
        }
    }
    field.clamp(x);
    Ok(())
}

fn coupled_count(system: &CircuitSystem, noise: &NoiseConfig) -> usize {
    match noise.coupling {
        Coupling::VoltagesOnly => system.num_vars(),
        Coupling::AllCoordinates => system.dimension(),
    }
}

pub fn step_rk4(system: &CircuitSystem, state: &SolverState, dt: f64) -> Result<SolverState, DynamicsError> {
    system.check_state(state)?;
    let mut next = state.clone();
    let mut ws = Rk4Workspace::new(system.dimension());
    rk4_in_place(system, next.as_mut_slice(), dt, state.t, &mut ws)?;
    next.t = state.t + dt;
    Ok(next)
}

pub fn step_euler(system: &CircuitSystem, state: &SolverState, dt: f64) -> Result<SolverState, DynamicsError> {
    system.check_state(state)?;
    let mut next = state.clone();
    let mut drift = vec![0.0; system.dimension()];
    euler_in_place(system, next.as_mut_slice(), dt, state.t, &mut drift)?;
    next.t = state.t + dt;
    Ok(next)
}

pub fn step_euler_maruyama<R: Rng + ?Sized>(
    system: &CircuitSystem,
    state: &SolverState,
    dt: f64,
    noise: &NoiseConfig,
    rng: &mut R,
) -> Result<SolverState, DynamicsError> {
    if noise.theta.is_nan() || noise.theta < 0.0 {
        return Err(DynamicsError::Config(format!("theta must be nonnegative, got {}", noise.theta)));
    }
    system.check_state(state)?;
    let mut next = state.clone();
    let mut drift = vec![0.0; system.dimension()];
    let coupled = coupled_count(system, noise);
    euler_maruyama_in_place(system, next.as_mut_slice(), dt, state.t, noise.theta, coupled, rng, &mut drift)?;
    next.t = state.t + dt;
    Ok(next)
}

/// Voltages uniform in (-1, 1); xs = 0.5 and xl = 1 everywhere.
pub fn default_initial_state<R: Rng + ?Sized>(system: &CircuitSystem, rng: &mut R) -> SolverState {
    let v = (0..system.num_vars())
        .map(|_| {
            let u: f64 = rng.sample(rand::distr::Open01);
            2.0 * u - 1.0
        })
        .collect();
    let m = system.num_clauses();
    SolverState::new(v, vec![0.5; m], vec![1.0; m], 0.0).expect("consistent shape")
}

/// Integrates until the readout has stayed satisfying for the persistence
/// window or `t_max` is reached.
///
/// Time advances as `t0 + k·dt`. Crossings are detected on every step;
/// samples are kept every `record_stride` steps plus the first and last.
pub fn integrate_until<R: Rng + ?Sized>(
    system: &CircuitSystem,
    state0: &SolverState,
    config: &IntegratorConfig,
    noise: &NoiseConfig,
    rng: &mut R,
) -> Result<RunOutcome, DynamicsError> {
    config.validate()?;
    if !(noise.theta >= 0.0 && noise.theta.is_finite()) {
        return Err(DynamicsError::Config(format!("theta must be finite and nonnegative, got {}", noise.theta)));
    }
    if config.scheme == Scheme::Rk4 && noise.theta > 0.0 {
        return Err(DynamicsError::Config("RK4 is deterministic; use the Euler–Maruyama scheme with noise".into()));
    }
    system.check_state(state0)?;

    let n = system.num_vars();
    let dim = system.dimension();
    let t0 = state0.t;
    let mut x = state0.as_slice().to_vec();
    let mut ws = Rk4Workspace::new(dim);
    let mut drift = vec![0.0; dim];
    let coupled = coupled_count(system, noise);

    let mut detector = CrossingDetector::new(&x[..n], t0);
    let mut samples = Vec::new();
    let defects0 = system.defects_of_voltages(&x[..n]);
    samples.push(TrajectorySample { t: t0, state: state0.clone(), defects: defects0 });

    let window = config.persistence_steps();
    let max_steps = config.max_steps();
    let mut streak = if defects0 == 0 { 1u64 } else { 0 };
    let mut step = 0u64;
    let mut solved_at = None;
    let mut defects = defects0;

    if defects0 == 0 && window == 0 {
        solved_at = Some(t0);
    }
    while solved_at.is_none() && step < max_steps {
        let t_prev = t0 + step as f64 * config.dt;
        match config.scheme {
            Scheme::Rk4 => rk4_in_place(system, &mut x, config.dt, t_prev, &mut ws)?,
            Scheme::EulerMaruyama => {
                euler_maruyama_in_place(system, &mut x, config.dt, t_prev, noise.theta, coupled, rng, &mut drift)?
            }
        }
        step += 1;
        let t = t0 + step as f64 * config.dt;
        detector.advance(&x[..n], t);
        defects = system.defects_of_voltages(&x[..n]);
        if defects == 0 {
            streak += 1;
            // The streak counts states; a window of w steps spans w + 1 of them.
            if streak > window {
                solved_at = Some(t);
            }
        } else {
            streak = 0;
        }
        if step.is_multiple_of(config.record_stride as u64) {
            samples.push(TrajectorySample {
                t,
                state: SolverState::from_flat(n, system.num_clauses(), x.clone(), t),
                defects,
            });
        }
    }

    let t_final = t0 + step as f64 * config.dt;
    let final_state = SolverState::from_flat(n, system.num_clauses(), x, t_final);
    if samples.last().map(|s| s.t) != Some(t_final) {
        samples.push(TrajectorySample { t: t_final, state: final_state.clone(), defects });
    }

    let (verdict, assignment) = match solved_at {
        Some(_) => (Verdict::Solved, Some(digital_readout(&final_state))),
        None => (Verdict::TimedOut, None),
    };
    Ok(RunOutcome {
        verdict,
        assignment,
        t_solved: solved_at,
        steps_taken: step,
        samples,
        crossings: detector.finish(),
        final_state,
    })
}

/// Integrates any field for a fixed number of RK4 steps, keeping every
/// `stride`-th point (and the first and last) as `(t, x)`.
pub fn integrate_field<F: VectorField + ?Sized>(
    field: &F,
    x0: &[f64],
    dt: f64,
    steps: u64,
    stride: u64,
) -> Result<Vec<(f64, Vec<f64>)>, DynamicsError> {
    let stride = stride.max(1);
    let mut x = x0.to_vec();
    field.clamp(&mut x);
    let mut ws = Rk4Workspace::new(field.dim());
    let mut out = vec![(0.0, x.clone())];
    for step in 1..=steps {
        rk4_in_place(field, &mut x, dt, (step - 1) as f64 * dt, &mut ws)?;
        if step % stride == 0 || step == steps {
            out.push((step as f64 * dt, x.clone()));
        }
    }
    Ok(out)
}

/// CSV with header `t,v_1..v_n,xs_1..xs_M,xl_1..xl_M,defects`.
pub fn write_trajectory_csv<W: Write>(samples: &[TrajectorySample], mut out: W) -> std::io::Result<()> {
    let Some(first) = samples.first() else {
        return Ok(());
    };
    let (n, m) = (first.state.num_vars(), first.state.num_clauses());
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("v_{i}")));
    header.extend((1..=m).map(|i| format!("xs_{i}")));
    header.extend((1..=m).map(|i| format!("xl_{i}")));
    header.push("defects".into());
    writeln!(out, "{}", header.join(","))?;
    for s in samples {
        let mut row = format!("{:?}", s.t);
        for x in s.state.as_slice() {
            row.push(',');
            row.push_str(&format!("{x:?}"));
        }
        writeln!(out, "{row},{}", s.defects)?;
    }
    Ok(())
}
