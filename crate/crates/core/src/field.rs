//! Vector fields on boxes and their finite-difference Jacobians.
//!
//! The circuit flow and the small calibration fields used in tests all
//! implement [`VectorField`], so integrators, Newton refinement and the
//! Lyapunov estimator are written once.

use nalgebra::DMatrix;

/// Default finite-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-6;

pub trait VectorField: Sync {
    fn dim(&self) -> usize;

    /// Writes F(x) into `out`; both slices have length `dim()`.
    fn eval(&self, x: &[f64], out: &mut [f64]);

    /// Closed box for coordinate `k`. Unbounded by default.
    fn bounds(&self, _k: usize) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }

    fn clamp(&self, x: &mut [f64]) {
        for (k, xk) in x.iter_mut().enumerate() {
            let (lo, hi) = self.bounds(k);
            *xk = xk.clamp(lo, hi);
        }
    }

    fn eval_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval(x, &mut out);
        out
    }
}

/// Coordinates sitting on a face of the box while F points out of it.
///
/// Under projected (clamped) dynamics these coordinates are frozen.
pub fn active_faces<F: VectorField + ?Sized>(field: &F, x: &[f64], fx: &[f64]) -> Vec<bool> {
    (0..field.dim())
        .map(|k| {
            let (lo, hi) = field.bounds(k);
            (x[k] <= lo && fx[k] < 0.0) || (x[k] >= hi && fx[k] > 0.0)
        })
        .collect()
}

/// F with the components on active faces zeroed: the velocity of the clamped flow.
pub fn projected_flow<F: VectorField + ?Sized>(field: &F, x: &[f64]) -> Vec<f64> {
    let mut fx = field.eval_vec(x);
    let active = active_faces(field, x, &fx);
    for (v, a) in fx.iter_mut().zip(active) {
        if a {
            *v = 0.0;
        }
    }
    fx
}

pub fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Central-difference Jacobian, one-sided where a step would leave the box.
///
/// Kinks of the clause minimum give one-sided (subgradient) values there.
pub fn jacobian_fd<F: VectorField + ?Sized>(field: &F, x: &[f64], h: f64) -> DMatrix<f64> {
    let d = field.dim();
    let mut jac = DMatrix::zeros(d, d);
    let mut probe = x.to_vec();
    let mut plus = vec![0.0; d];
    let mut minus = vec![0.0; d];
    for k in 0..d {
        let (lo, hi) = field.bounds(k);
        let up = if x[k] + h <= hi { x[k] + h } else { x[k] };
        let down = if x[k] - h >= lo { x[k] - h } else { x[k] };
        let width = up - down;
        if width == 0.0 {
            continue;
        }
        probe[k] = up;
        field.eval(&probe, &mut plus);
        probe[k] = down;
        field.eval(&probe, &mut minus);
        probe[k] = x[k];
        for i in 0..d {
            jac[(i, k)] = (plus[i] - minus[i]) / width;
        }
    }
    jac
}

/// F(x) = A·x on all of R^d.
#[derive(Debug, Clone)]
pub struct LinearField {
    matrix: DMatrix<f64>,
}

impl LinearField {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        assert!(matrix.is_square(), "linear field needs a square matrix");
        LinearField { matrix }
    }

    /// F(x) = rate · x.
    pub fn scalar(dim: usize, rate: f64) -> Self {
        LinearField::new(DMatrix::identity(dim, dim) * rate)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl VectorField for LinearField {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..x.len()).map(|k| self.matrix[(i, k)] * x[k]).sum();
        }
    }
}

/// Gradient flow F = -∇V of the tilted double well
/// V(x, y) = (x² - 1)²/4 + tilt·x + y²/2: two minima and a saddle between them.
#[derive(Debug, Clone, Copy)]
pub struct DoubleWellFlow {
    pub tilt: f64,
}

impl VectorField for DoubleWellFlow {
    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        out[0] = -(x[0] * x[0] * x[0] - x[0] + self.tilt);
        out[1] = -x[1];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_jacobian_recovers_linear_matrix() {
        let a = DMatrix::from_row_slice(3, 3, &[-1.0, 2.0, 0.5, 0.0, -3.0, 1.0, 4.0, 0.25, 2.0]);
        let field = LinearField::new(a.clone());
        let j = jacobian_fd(&field, &[0.3, -0.7, 1.1], DEFAULT_FD_STEP);
        for (got, want) in j.iter().zip(a.iter()) {
            assert!((got - want).abs() <= 1e-6, "{got} vs {want}");
        }
    }

    struct Boxed;
    impl VectorField for Boxed {
        fn dim(&self) -> usize {
            1
        }
        fn eval(&self, x: &[f64], out: &mut [f64]) {
            out[0] = x[0] * x[0];
        }
        fn bounds(&self, _k: usize) -> (f64, f64) {
            (0.0, 1.0)
        }
    }

    #[test]
    fn one_sided_at_faces() {
        // d/dx x² at 0 from the right is h, at 1 from the left is 2 - h.
        let j0 = jacobian_fd(&Boxed, &[0.0], 1e-6);
        assert!(j0[(0, 0)].abs() < 1e-5);
        let j1 = jacobian_fd(&Boxed, &[1.0], 1e-6);
        assert!((j1[(0, 0)] - 2.0).abs() < 1e-5);
    }

    #[test]
    fn projection_zeroes_outward_components() {
        struct Push;
        impl VectorField for Push {
            fn dim(&self) -> usize {
                3
            }
            fn eval(&self, _x: &[f64], out: &mut [f64]) {
                out.copy_from_slice(&[-1.0, 1.0, -1.0]);
            }
            fn bounds(&self, _k: usize) -> (f64, f64) {
                (0.0, 1.0)
            }
        }
        assert_eq!(projected_flow(&Push, &[0.0, 1.0, 1.0]), vec![0.0, 0.0, -1.0]);
    }
}
