//! Self-organizing logic-gate circuit for a CNF formula.
//!
//! Each clause is one gate. The phase-space point holds one voltage per
//! variable in `[-1, 1]` (digital threshold 0) and two memories per clause:
//! a short-term memory `xs ∈ [0, 1]` and a long-term memory
//! `xl ∈ [1, xl_max]`. With `q` the literal sign and `C_m` the clause value,
//!
//! ```text
//! C_m      = ½ · min_j (1 − q_j v_j)
//! dv_i/dt  = Σ_m  xl_m·xs_m·G_{m,i} + (1 + ζ·xl_m)·(1 − xs_m)·R_{m,i}
//! dxs_m/dt = β·(xs_m + ε)·(C_m − γ)
//! dxl_m/dt = α·(C_m − δ)
//! ```
//!
//! `G_{m,i} = ½·q_i·min_{j≠i}(1 − q_j v_j)` (empty minimum is 1) pulls a
//! voltage toward the rail that satisfies the gate; `R_{m,i} = ½·(q_i − v_i)`
//! acts only on the literal attaining the clause minimum (first position on
//! ties) and holds it there. Trajectories live in the closed state box; the
//! integrators project back onto it after every step.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cnf::{count_defects, Assignment, CnfFormula};
use crate::field::{jacobian_fd, VectorField};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CircuitError {
    #[error("invalid circuit parameter: {0}")]
    Parameter(String),
    #[error("state shape (n={n}, M={m}) does not match circuit (n={expected_n}, M={expected_m})")]
    Shape { n: usize, m: usize, expected_n: usize, expected_m: usize },
    #[error("state component {name}[{index}] = {value} is outside its box")]
    OutOfBox { name: &'static str, index: usize, value: f64 },
    #[error("clause index {index} out of range (M = {m})")]
    ClauseIndex { index: usize, m: usize },
    #[error("cannot parse parameter block: {0}")]
    ParamText(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircuitParams {
    /// Long-memory rate.
    pub alpha: f64,
    /// Short-memory rate.
    pub beta: f64,
    /// Short-memory threshold.
    pub gamma: f64,
    /// Long-memory threshold.
    pub delta: f64,
    /// Short-memory floor.
    pub epsilon: f64,
    /// Rigidity weight.
    pub zeta: f64,
    /// Long-memory cap.
    pub xl_max: f64,
}

const PARAM_KEYS: [&str; 7] = ["alpha", "beta", "gamma", "delta", "epsilon", "zeta", "xl_max"];

impl CircuitParams {
    /// Default operating point for a formula with `num_clauses` clauses.
    pub fn defaults(num_clauses: usize) -> Self {
        CircuitParams {
            alpha: 5.0,
            beta: 20.0,
            gamma: 0.25,
            delta: 0.05,
            epsilon: 1e-3,
            zeta: 0.1,
            xl_max: 1e4 * num_clauses as f64,
        }
    }

    pub fn validate(&self) -> Result<(), CircuitError> {
        let all = [self.alpha, self.beta, self.gamma, self.delta, self.epsilon, self.zeta, self.xl_max];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(CircuitError::Parameter("all parameters must be finite".into()));
        }
        if self.alpha <= 0.0 || self.beta <= 0.0 {
            return Err(CircuitError::Parameter("alpha and beta must be positive".into()));
        }
        if !(0.0 < self.delta && self.delta < self.gamma && self.gamma < 1.0) {
            return Err(CircuitError::Parameter("need 0 < delta < gamma < 1".into()));
        }
        if self.epsilon <= 0.0 {
            return Err(CircuitError::Parameter("epsilon must be positive".into()));
        }
        if self.zeta < 0.0 {
            return Err(CircuitError::Parameter("zeta must be nonnegative".into()));
        }
        if self.xl_max <= 1.0 {
            return Err(CircuitError::Parameter("xl_max must exceed 1".into()));
        }
        Ok(())
    }

    fn values(&self) -> [f64; 7] {
        [self.alpha, self.beta, self.gamma, self.delta, self.epsilon, self.zeta, self.xl_max]
    }

    /// `key=value` lines; values use the shortest decimal that round-trips.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for (key, value) in PARAM_KEYS.iter().zip(self.values()) {
            let _ = writeln!(out, "{key}={value:?}");
        }
        out
    }

    /// Parses a `key=value` block; keys not given keep the values of `base`.
    pub fn from_kv(text: &str, base: CircuitParams) -> Result<Self, CircuitError> {
        let mut map = BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CircuitError::ParamText(format!("expected key=value, got '{line}'")))?;
            let value: f64 =
                v.trim().parse().map_err(|_| CircuitError::ParamText(format!("bad number in '{line}'")))?;
            map.insert(k.trim().to_string(), value);
        }
        let mut params = base;
        for (key, value) in map {
            params.set(&key, value)?;
        }
        params.validate()?;
        Ok(params)
    }

    pub fn set(&mut self, key: &str, value: f64) -> Result<(), CircuitError> {
        let slot = match key {
            "alpha" => &mut self.alpha,
            "beta" => &mut self.beta,
            "gamma" => &mut self.gamma,
            "delta" => &mut self.delta,
            "epsilon" => &mut self.epsilon,
            "zeta" => &mut self.zeta,
            "xl_max" => &mut self.xl_max,
            other => return Err(CircuitError::ParamText(format!("unknown parameter '{other}'"))),
        };
        *slot = value;
        Ok(())
    }
}

/// A phase-space point: voltages, short memories, long memories, and time.
///
/// Stored flat as `[v_1..v_n, xs_1..xs_M, xl_1..xl_M]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    n: usize,
    m: usize,
    x: Vec<f64>,
    pub t: f64,
}

impl SolverState {
    pub fn new(v: Vec<f64>, xs: Vec<f64>, xl: Vec<f64>, t: f64) -> Result<Self, CircuitError> {
        if xs.len() != xl.len() {
            return Err(CircuitError::Shape { n: v.len(), m: xs.len(), expected_n: v.len(), expected_m: xl.len() });
        }
        let (n, m) = (v.len(), xs.len());
        let mut x = v;
        x.extend(xs);
        x.extend(xl);
        Ok(SolverState { n, m, x, t })
    }

    pub fn from_flat(n: usize, m: usize, x: Vec<f64>, t: f64) -> Self {
        assert_eq!(x.len(), n + 2 * m, "flat state has wrong length");
        SolverState { n, m, x, t }
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    pub fn num_clauses(&self) -> usize {
        self.m
    }

    pub fn v(&self) -> &[f64] {
        &self.x[..self.n]
    }

    pub fn xs(&self) -> &[f64] {
        &self.x[self.n..self.n + self.m]
    }

    pub fn xl(&self) -> &[f64] {
        &self.x[self.n + self.m..]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.x
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.x
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.x
    }
}

/// Sign readout: true iff v_i > 0 (v_i = 0 reads false).
pub fn digital_readout(state: &SolverState) -> Assignment {
    Assignment::new(state.v().iter().map(|&v| v > 0.0).collect())
}

/// Projects every component onto its box. Idempotent.
pub fn clamp_state(state: &SolverState, params: &CircuitParams) -> SolverState {
    let mut out = state.clone();
    let (n, m) = (state.n, state.m);
    for (k, x) in out.x.iter_mut().enumerate() {
        let (lo, hi) = box_bounds(k, n, m, params.xl_max);
        *x = x.clamp(lo, hi);
    }
    out
}

fn box_bounds(k: usize, n: usize, m: usize, xl_max: f64) -> (f64, f64) {
    if k < n {
        (-1.0, 1.0)
    } else if k < n + m {
        (0.0, 1.0)
    } else {
        (1.0, xl_max)
    }
}

/// The flow field of one formula under one parameter set.
#[derive(Debug, Clone)]
pub struct CircuitSystem {
    formula: CnfFormula,
    params: CircuitParams,
    // Flattened clause table: literals of clause m are offsets[m]..offsets[m+1].
    offsets: Vec<usize>,
    lit_var: Vec<usize>,
    lit_sign: Vec<f64>,
}

impl CircuitSystem {
    pub fn new(formula: CnfFormula, params: CircuitParams) -> Result<Self, CircuitError> {
        params.validate()?;
        let mut offsets = vec![0];
        let mut lit_var = Vec::new();
        let mut lit_sign = Vec::new();
        for clause in formula.clauses() {
            for lit in clause.literals() {
                lit_var.push(lit.var() - 1);
                lit_sign.push(lit.sign());
            }
            offsets.push(lit_var.len());
        }
        Ok(CircuitSystem { formula, params, offsets, lit_var, lit_sign })
    }

    pub fn with_defaults(formula: CnfFormula) -> Self {
        let params = CircuitParams::defaults(formula.num_clauses());
        CircuitSystem::new(formula, params).expect("default parameters are valid")
    }

    pub fn formula(&self) -> &CnfFormula {
        &self.formula
    }

    pub fn params(&self) -> &CircuitParams {
        &self.params
    }

    pub fn num_vars(&self) -> usize {
        self.formula.num_vars()
    }

    pub fn num_clauses(&self) -> usize {
        self.formula.num_clauses()
    }

    /// Phase-space dimension n + 2M.
    pub fn dimension(&self) -> usize {
        self.num_vars() + 2 * self.num_clauses()
    }

    pub fn check_state(&self, state: &SolverState) -> Result<(), CircuitError> {
        if state.n != self.num_vars() || state.m != self.num_clauses() {
            return Err(CircuitError::Shape {
                n: state.n,
                m: state.m,
                expected_n: self.num_vars(),
                expected_m: self.num_clauses(),
            });
        }
        let names = ["v", "xs", "xl"];
        for (k, &x) in state.x.iter().enumerate() {
            let (lo, hi) = self.bounds(k);
            if !(lo..=hi).contains(&x) {
                let (block, index) = self.split_index(k);
                return Err(CircuitError::OutOfBox { name: names[block], index, value: x });
            }
        }
        Ok(())
    }

    fn split_index(&self, k: usize) -> (usize, usize) {
        let (n, m) = (self.num_vars(), self.num_clauses());
        if k < n {
            (0, k)
        } else if k < n + m {
            (1, k - n)
        } else {
            (2, k - n - m)
        }
    }

    /// C_m(v) ∈ [0, 1].
    pub fn clause_value(&self, clause_index: usize, v: &[f64]) -> Result<f64, CircuitError> {
        if clause_index >= self.num_clauses() {
            return Err(CircuitError::ClauseIndex { index: clause_index, m: self.num_clauses() });
        }
        let (lo, hi) = (self.offsets[clause_index], self.offsets[clause_index + 1]);
        let min = (lo..hi).map(|j| 1.0 - self.lit_sign[j] * v[self.lit_var[j]]).fold(f64::INFINITY, f64::min);
        Ok(0.5 * min)
    }

    /// F(x) for a state inside the box.
    pub fn flow_field(&self, state: &SolverState) -> Result<Vec<f64>, CircuitError> {
        self.check_state(state)?;
        Ok(self.eval_vec(state.as_slice()))
    }

    pub fn jacobian_fd(&self, state: &SolverState, h: f64) -> nalgebra::DMatrix<f64> {
        jacobian_fd(self, state.as_slice(), h)
    }

    /// Number of clauses falsified by the sign readout of `state`.
    pub fn state_defects(&self, state: &SolverState) -> usize {
        count_defects(&self.formula, &digital_readout(state)).expect("state matches formula")
    }

    /// Defect count straight from a flat voltage block, without building an assignment.
    pub(crate) fn defects_of_voltages(&self, v: &[f64]) -> usize {
        (0..self.num_clauses())
            .filter(|&m| {
                !(self.offsets[m]..self.offsets[m + 1]).any(|j| (v[self.lit_var[j]] > 0.0) == (self.lit_sign[j] > 0.0))
            })
            .count()
    }
}

impl VectorField for CircuitSystem {
    fn dim(&self) -> usize {
        self.dimension()
    }

    fn bounds(&self, k: usize) -> (f64, f64) {
        box_bounds(k, self.num_vars(), self.num_clauses(), self.params.xl_max)
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let n = self.num_vars();
        let m_count = self.num_clauses();
        let p = &self.params;
        let (v, mem) = x.split_at(n);
        let (xs, xl) = mem.split_at(m_count);
        let (dv, dmem) = out.split_at_mut(n);
        let (dxs, dxl) = dmem.split_at_mut(m_count);
        dv.fill(0.0);

        for m in 0..m_count {
            let (lo, hi) = (self.offsets[m], self.offsets[m + 1]);
            // Smallest and second-smallest 1 - q·v, first position wins ties.
            let mut min1 = f64::INFINITY;
            let mut min2 = f64::INFINITY;
            let mut arg = lo;
            for j in lo..hi {
                let term = 1.0 - self.lit_sign[j] * v[self.lit_var[j]];
                if term < min1 {
                    min2 = min1;
                    min1 = term;
                    arg = j;
                } else if term < min2 {
                    min2 = term;
                }
            }
            if hi - lo == 1 {
                min2 = 1.0;
            }
            let c = 0.5 * min1;
            let gradient_weight = xl[m] * xs[m];
            let rigidity_weight = (1.0 + p.zeta * xl[m]) * (1.0 - xs[m]);
            for j in lo..hi {
                let i = self.lit_var[j];
                let q = self.lit_sign[j];
                let others = if j == arg { min2 } else { min1 };
                let mut d = gradient_weight * 0.5 * q * others;
                if j == arg {
                    d += rigidity_weight * 0.5 * (q - v[i]);
                }
                dv[i] += d;
            }
            dxs[m] = p.beta * (xs[m] + p.epsilon) * (c - p.gamma);
            dxl[m] = p.alpha * (c - p.delta);
        }
    }
}
