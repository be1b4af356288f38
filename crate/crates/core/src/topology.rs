//! Index sums over the zeros of crafted vector fields.
//!
//! Each built-in family ships an exhaustive zero list, so the Poincaré–Hopf
//! sum of sign-of-determinant indexes can be compared with the Euler
//! characteristic of the domain across a parameter sweep. Gradient flows on
//! Euclidean space get a Morse sum Σ(−1)^index instead.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Vector3};
use serde::Serialize;
use thiserror::Error;

/// Below this |det J| a zero is treated as degenerate.
pub const DEGENERACY_EPS: f64 = 1e-9;
/// |F| above this at a listed zero is an error.
pub const ZERO_TOL: f64 = 1e-9;
const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TopologyError {
    #[error("degenerate zero at {0:?}")]
    DegenerateZero(Vec<f64>),
    #[error("point {location:?} is not a zero (|F| = {norm:e})")]
    NotAZero { location: Vec<f64>, norm: f64 },
    #[error("chart {0} does not exist for this field")]
    NoChart(usize),
    #[error("{0} is not a gradient flow on euclidean space")]
    NotGradient(String),
    #[error("unknown field group '{0}' (expected sphere, torus, circle, doublewell or all)")]
    UnknownGroup(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Sphere,
    Torus,
    Circle,
    EuclideanBox,
}

impl Domain {
    /// χ of the compact domains.
    pub fn euler_characteristic(self) -> Option<i64> {
        match self {
            Domain::Sphere => Some(2),
            Domain::Torus | Domain::Circle => Some(0),
            Domain::EuclideanBox => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldFamily {
    /// Tangential gradient of the height a·p, axis tilted by the parameter (radians).
    SphereHeight,
    /// Tangential gradient of pᵀAp, A = R diag(1,2,3) Rᵀ rotated by the parameter.
    SphereQuadric,
    /// Coordinate gradient of the torus height (R + cos(φ−φ0))·cos(θ−θ0), shifted by the parameter.
    TorusMorse,
    /// dθ/dt = 1 + w·sin θ with wobble w < 1: no zeros.
    CircleRotation,
    /// −V' for V = x⁴/4 − x²/2 + tilt·x.
    DoubleWell1d,
    /// −V' for V = (x − c)²/2.
    SingleWell1d,
    /// −∇V for V = (x² − 1)²/4 + tilt·x + y²/2.
    DoubleWell2d,
}

impl FieldFamily {
    pub fn name(self) -> &'static str {
        match self {
            FieldFamily::SphereHeight => "sphere-height",
            FieldFamily::SphereQuadric => "sphere-quadric",
            FieldFamily::TorusMorse => "torus-morse",
            FieldFamily::CircleRotation => "circle-rotation",
            FieldFamily::DoubleWell1d => "doublewell-1d",
            FieldFamily::SingleWell1d => "singlewell-1d",
            FieldFamily::DoubleWell2d => "doublewell-2d",
        }
    }

    pub fn domain(self) -> Domain {
        match self {
            FieldFamily::SphereHeight | FieldFamily::SphereQuadric => Domain::Sphere,
            FieldFamily::TorusMorse => Domain::Torus,
            FieldFamily::CircleRotation => Domain::Circle,
            _ => Domain::EuclideanBox,
        }
    }

    /// `count` parameter values, all keeping the zeros nondegenerate.
    pub fn sweep(self, count: usize) -> Vec<f64> {
        let count = count.max(1);
        let (lo, hi) = match self {
            FieldFamily::SphereHeight | FieldFamily::SphereQuadric => (0.0, PI),
            FieldFamily::TorusMorse => (0.0, 1.0),
            FieldFamily::CircleRotation => (0.0, 0.95),
            FieldFamily::DoubleWell1d | FieldFamily::DoubleWell2d => (-0.3, 0.3),
            FieldFamily::SingleWell1d => (-1.0, 1.0),
        };
        (0..count).map(|k| lo + (hi - lo) * k as f64 / count as f64).collect()
    }

    pub fn with_parameter(self, parameter: f64) -> AnalyticVectorField {
        AnalyticVectorField { family: self, parameter }
    }
}

/// A field written in one chart's local coordinates.
type LocalField<'a> = Box<dyn Fn(&[f64]) -> Vec<f64> + 'a>;

/// A built-in field family at one parameter value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticVectorField {
    pub family: FieldFamily,
    pub parameter: f64,
}

fn rotation_about_diagonal(angle: f64) -> nalgebra::Matrix3<f64> {
    let axis = nalgebra::Unit::new_normalize(Vector3::new(1.0, 1.0, 1.0));
    *nalgebra::Rotation3::from_axis_angle(&axis, angle).matrix()
}

fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

/// Real roots of x³ − x + tilt = 0 for |tilt| < 2/(3√3), ascending.
fn double_well_roots(tilt: f64) -> Vec<f64> {
    let amp = 2.0 / 3f64.sqrt();
    let phi = (1.5 * tilt * 3f64.sqrt()).clamp(-1.0, 1.0).acos() / 3.0;
    let mut roots: Vec<f64> = (0..3).map(|k| amp * (phi - 2.0 * PI * k as f64 / 3.0).cos()).collect();
    // x = amp·cos(...) solves x³ − x − tilt; negate for the sign used here.
    for r in roots.iter_mut() {
        *r = -*r;
        for _ in 0..4 {
            let f = *r * *r * *r - *r + tilt;
            let df = 3.0 * *r * *r - 1.0;
            *r -= f / df;
        }
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    roots
}

impl AnalyticVectorField {
    pub fn name(&self) -> &'static str {
        self.family.name()
    }

    pub fn domain(&self) -> Domain {
        self.family.domain()
    }

    /// Field value at a point of the domain: a tangent vector in R³ on the
    /// sphere, a vector of angle rates on torus and circle, R^d otherwise.
    pub fn evaluate(&self, p: &[f64]) -> Vec<f64> {
        let s = self.parameter;
        match self.family {
            FieldFamily::SphereHeight => {
                let a = Vector3::new(s.sin(), 0.0, s.cos());
                let p = Vector3::from_column_slice(p);
                (a - p * a.dot(&p)).as_slice().to_vec()
            }
            FieldFamily::SphereQuadric => {
                let r = rotation_about_diagonal(s);
                let a = r * nalgebra::Matrix3::from_diagonal(&Vector3::new(1.0, 2.0, 3.0)) * r.transpose();
                let p = Vector3::from_column_slice(p);
                let ap = a * p;
                ((ap - p * p.dot(&ap)) * 2.0).as_slice().to_vec()
            }
            FieldFamily::TorusMorse => {
                let (t0, f0, big_r) = (s, 2.0 * s, 2.0 + s);
                let (dt, df) = (p[0] - t0, p[1] - f0);
                vec![-(big_r + df.cos()) * dt.sin(), -df.sin() * dt.cos()]
            }
            FieldFamily::CircleRotation => vec![1.0 + s * p[0].sin()],
            FieldFamily::DoubleWell1d => vec![-(p[0] * p[0] * p[0] - p[0] + s)],
            FieldFamily::SingleWell1d => vec![-(p[0] - s)],
            FieldFamily::DoubleWell2d => vec![-(p[0] * p[0] * p[0] - p[0] + s), -p[1]],
        }
    }

    /// Every zero of the field on its domain.
    pub fn known_zeros(&self) -> Vec<Vec<f64>> {
        let s = self.parameter;
        match self.family {
            FieldFamily::SphereHeight => {
                let a = [s.sin(), 0.0, s.cos()];
                vec![a.to_vec(), a.iter().map(|x| -x).collect()]
            }
            FieldFamily::SphereQuadric => {
                let r = rotation_about_diagonal(s);
                (0..3)
                    .flat_map(|i| {
                        let e = r.column(i).into_owned();
                        [e.as_slice().to_vec(), (-e).as_slice().to_vec()]
                    })
                    .collect()
            }
            FieldFamily::TorusMorse => {
                let (t0, f0) = (s, 2.0 * s);
                [(0.0, 0.0), (0.0, PI), (PI, 0.0), (PI, PI)]
                    .iter()
                    .map(|(a, b)| vec![wrap_angle(t0 + a), wrap_angle(f0 + b)])
                    .collect()
            }
            FieldFamily::CircleRotation => Vec::new(),
            FieldFamily::DoubleWell1d => double_well_roots(s).into_iter().map(|x| vec![x]).collect(),
            FieldFamily::SingleWell1d => vec![vec![s]],
            FieldFamily::DoubleWell2d => double_well_roots(s).into_iter().map(|x| vec![x, 0.0]).collect(),
        }
    }

    pub fn chart_count(&self) -> usize {
        2
    }

    /// The field in local coordinates of `chart`, plus the coordinates of `p`.
    fn chart_rep(&self, chart: usize, p: &[f64]) -> Result<(LocalField<'_>, Vec<f64>), TopologyError> {
        if chart >= self.chart_count() {
            return Err(TopologyError::NoChart(chart));
        }
        match self.domain() {
            Domain::Sphere => {
                // Stereographic projection from a pole away from every built-in zero.
                let pole = if chart == 0 { Vector3::new(0.267, 0.534, 0.802) } else { Vector3::new(-0.8, 0.1, 0.55) }
                    .normalize();
                let b1 = pole.cross(&Vector3::z()).normalize();
                let b2 = pole.cross(&b1);
                let project = move |q: &Vector3<f64>| {
                    let den = 1.0 - q.dot(&pole);
                    [q.dot(&b1) / den, q.dot(&b2) / den]
                };
                let u0 = project(&Vector3::from_column_slice(p)).to_vec();
                let rep = move |u: &[f64]| {
                    let s = u[0] * u[0] + u[1] * u[1];
                    let q = (b1 * (2.0 * u[0]) + b2 * (2.0 * u[1]) + pole * (s - 1.0)) / (s + 1.0);
                    let f = Vector3::from_column_slice(&self.evaluate(q.as_slice()));
                    let den = 1.0 - q.dot(&pole);
                    let push = |b: &Vector3<f64>| (f.dot(b) * den + q.dot(b) * f.dot(&pole)) / (den * den);
                    vec![push(&b1), push(&b2)]
                };
                Ok((Box::new(rep), u0))
            }
            Domain::Torus => {
                // Angle chart, and a sheared chart (θ+φ, θ−φ).
                let u0 = if chart == 0 { p.to_vec() } else { vec![p[0] + p[1], p[0] - p[1]] };
                let rep = move |u: &[f64]| {
                    if chart == 0 {
                        self.evaluate(u)
                    } else {
                        let angles = [(u[0] + u[1]) / 2.0, (u[0] - u[1]) / 2.0];
                        let f = self.evaluate(&angles);
                        vec![f[0] + f[1], f[0] - f[1]]
                    }
                };
                Ok((Box::new(rep), u0))
            }
            Domain::Circle | Domain::EuclideanBox => {
                // Identity chart, and a shifted and rescaled copy.
                let scale = if chart == 0 { 1.0 } else { 2.0 };
                let u0: Vec<f64> = p.iter().map(|x| scale * (x + chart as f64)).collect();
                let rep = move |u: &[f64]| {
                    let x: Vec<f64> = u.iter().map(|y| y / scale - chart as f64).collect();
                    self.evaluate(&x).into_iter().map(|f| f * scale).collect()
                };
                Ok((Box::new(rep), u0))
            }
        }
    }

    /// Jacobian of the chart representation at `p`.
    pub fn chart_jacobian(&self, chart: usize, p: &[f64]) -> Result<DMatrix<f64>, TopologyError> {
        let (rep, u0) = self.chart_rep(chart, p)?;
        local_jacobian(&*rep, &u0).map_err(|e| match e {
            TopologyError::NotAZero { norm, .. } => TopologyError::NotAZero { location: p.to_vec(), norm },
            other => other,
        })
    }
}

/// Central-difference Jacobian of a map R^d → R^d at one of its zeros.
pub fn local_jacobian(f: &dyn Fn(&[f64]) -> Vec<f64>, u0: &[f64]) -> Result<DMatrix<f64>, TopologyError> {
    let d = u0.len();
    let norm = f(u0).iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > ZERO_TOL {
        return Err(TopologyError::NotAZero { location: u0.to_vec(), norm });
    }
    let mut jac = DMatrix::zeros(d, d);
    let mut probe = u0.to_vec();
    for k in 0..d {
        probe[k] = u0[k] + FD_STEP;
        let plus = f(&probe);
        probe[k] = u0[k] - FD_STEP;
        let minus = f(&probe);
        probe[k] = u0[k];
        for i in 0..d {
            jac[(i, k)] = (plus[i] - minus[i]) / (2.0 * FD_STEP);
        }
    }
    Ok(jac)
}

/// Sign of det J for a map given directly in local coordinates.
pub fn local_zero_index(f: &dyn Fn(&[f64]) -> Vec<f64>, location: &[f64]) -> Result<i8, TopologyError> {
    sign_of(local_jacobian(f, location)?.determinant(), location)
}

fn sign_of(det: f64, location: &[f64]) -> Result<i8, TopologyError> {
    if det.abs() <= DEGENERACY_EPS {
        return Err(TopologyError::DegenerateZero(location.to_vec()));
    }
    Ok(if det > 0.0 { 1 } else { -1 })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZeroPoint {
    pub location: Vec<f64>,
    pub sign_index: i8,
    pub morse_index: Option<usize>,
}

/// Sign of det J at a nondegenerate zero, computed in `chart`.
pub fn zero_index_in_chart(field: &AnalyticVectorField, location: &[f64], chart: usize) -> Result<i8, TopologyError> {
    sign_of(field.chart_jacobian(chart, location)?.determinant(), location)
}

pub fn zero_index(field: &AnalyticVectorField, location: &[f64]) -> Result<i8, TopologyError> {
    zero_index_in_chart(field, location, 0)
}

/// Σ sign det J over all known zeros.
pub fn poincare_hopf_sum(field: &AnalyticVectorField) -> Result<i64, TopologyError> {
    field.known_zeros().iter().map(|z| zero_index(field, z).map(i64::from)).sum()
}

fn is_gradient_on_euclidean(family: FieldFamily) -> bool {
    matches!(family, FieldFamily::DoubleWell1d | FieldFamily::SingleWell1d | FieldFamily::DoubleWell2d)
}

/// Zeros with their sign index and, for Euclidean gradient flows, their
/// Morse index (number of unstable flow directions).
pub fn classify_zeros(field: &AnalyticVectorField) -> Result<Vec<ZeroPoint>, TopologyError> {
    field
        .known_zeros()
        .into_iter()
        .map(|z| {
            let jac = field.chart_jacobian(0, &z)?;
            let det = jac.determinant();
            if det.abs() <= DEGENERACY_EPS {
                return Err(TopologyError::DegenerateZero(z));
            }
            let morse_index = if is_gradient_on_euclidean(field.family) {
                // F = −∇V has a symmetric Jacobian −Hess V.
                let sym = (&jac + jac.transpose()) * 0.5;
                Some(sym.symmetric_eigenvalues().iter().filter(|&&l| l > 0.0).count())
            } else {
                None
            };
            Ok(ZeroPoint { location: z, sign_index: if det > 0.0 { 1 } else { -1 }, morse_index })
        })
        .collect()
}

/// Σ (−1)^index over the zeros of a Euclidean gradient flow.
pub fn morse_signed_sum(field: &AnalyticVectorField) -> Result<i64, TopologyError> {
    if !is_gradient_on_euclidean(field.family) {
        return Err(TopologyError::NotGradient(field.name().to_string()));
    }
    Ok(classify_zeros(field)?.iter().map(|z| if z.morse_index.unwrap_or(0) % 2 == 0 { 1 } else { -1 }).sum())
}

/// One line of a topology check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopoCheckRow {
    pub field: &'static str,
    pub parameter: f64,
    pub zero_count: usize,
    /// `None` when the sum could not be formed (degenerate zero).
    pub signed_sum: Option<i64>,
    pub expected: i64,
    pub pass: bool,
}

/// Families selected by a CLI group name.
pub fn field_group(name: &str) -> Result<Vec<FieldFamily>, TopologyError> {
    use FieldFamily::*;
    Ok(match name {
        "sphere" => vec![SphereHeight, SphereQuadric],
        "torus" => vec![TorusMorse],
        "circle" => vec![CircleRotation],
        "doublewell" => vec![DoubleWell1d, DoubleWell2d],
        "all" => vec![SphereHeight, SphereQuadric, TorusMorse, CircleRotation, DoubleWell1d, DoubleWell2d],
        other => return Err(TopologyError::UnknownGroup(other.to_string())),
    })
}

/// Compact domains compare the Poincaré–Hopf sum with χ; Euclidean
/// gradient flows compare the Morse sum with 1.
pub fn check_family(family: FieldFamily, sweep: usize) -> Vec<TopoCheckRow> {
    family
        .sweep(sweep)
        .into_iter()
        .map(|parameter| {
            let field = family.with_parameter(parameter);
            let (sum, expected) = match family.domain().euler_characteristic() {
                Some(chi) => (poincare_hopf_sum(&field), chi),
                None => (morse_signed_sum(&field), 1),
            };
            let signed_sum = sum.ok();
            TopoCheckRow {
                field: family.name(),
                parameter,
                zero_count: field.known_zeros().len(),
                signed_sum,
                expected,
                pass: signed_sum == Some(expected),
            }
        })
        .collect()
}
