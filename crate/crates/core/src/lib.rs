//! Continuous-time SAT solving with a self-organizing logic-gate circuit,
//! plus instrumentation for the topological observables of its dynamics.

pub mod circuit;
pub mod cnf;
pub mod dynamics;
pub mod field;
pub mod harness;
pub mod instrument;
pub mod rng;
pub mod topology;

pub use circuit::{CircuitParams, CircuitSystem, SolverState};
pub use cnf::{Assignment, Clause, CnfFormula, Literal};
pub use dynamics::{IntegratorConfig, NoiseConfig, RunOutcome, Scheme, Verdict};
pub use field::VectorField;
pub use harness::{BenchResult, RunConfig, ScalingFit};
pub use instrument::{CriticalPointReport, CrossingEvent, IndexCount, InstantonTrace};
