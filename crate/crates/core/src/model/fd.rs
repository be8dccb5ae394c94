//! Central finite differences used for linearization, design Jacobians and
//! default cost derivatives.

use crate::linalg::{Matrix, Vector};

/// Step-size policy for central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdOptions {
    /// Relative step for first derivatives of `f` and `g`.
    pub rel_step: f64,
    /// Absolute floor for first-derivative steps.
    pub abs_floor: f64,
    /// Relative step for the outer difference over a design parameter.
    pub design_rel_step: f64,
    pub design_abs_floor: f64,
    /// Relative step for second derivatives of scalar costs.
    pub hessian_rel_step: f64,
    pub hessian_abs_floor: f64,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self {
            rel_step: 1e-6,
            abs_floor: 1e-8,
            design_rel_step: 1e-4,
            design_abs_floor: 1e-6,
            hessian_rel_step: 1e-4,
            hessian_abs_floor: 1e-5,
        }
    }
}

#[inline]
pub fn step_for(value: f64, rel: f64, floor: f64) -> f64 {
    (rel * value.abs()).max(floor)
}

/// Central-difference Jacobian of a vector map.
pub fn jacobian<F>(f: F, x: &Vector, rel: f64, floor: f64) -> Matrix
where
    F: Fn(&Vector) -> Vector,
{
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    let mut probe = x.clone();
    for j in 0..n {
        let h = step_for(x[j], rel, floor);
        probe[j] = x[j] + h;
        let fp = f(&probe);
        probe[j] = x[j] - h;
        let fm = f(&probe);
        probe[j] = x[j];
        cols.push((fp - fm) / (2.0 * h));
    }
    if cols.is_empty() {
        let rows = f(x).len();
        return Matrix::zeros(rows, 0);
    }
    Matrix::from_columns(&cols)
}

pub fn gradient<F>(f: F, x: &Vector, rel: f64, floor: f64) -> Vector
where
    F: Fn(&Vector) -> f64,
{
    let mut g = Vector::zeros(x.len());
    let mut probe = x.clone();
    for j in 0..x.len() {
        let h = step_for(x[j], rel, floor);
        probe[j] = x[j] + h;
        let fp = f(&probe);
        probe[j] = x[j] - h;
        let fm = f(&probe);
        probe[j] = x[j];
        g[j] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Symmetric central-difference Hessian of a scalar map.
pub fn hessian<F>(f: F, x: &Vector, rel: f64, floor: f64) -> Matrix
where
    F: Fn(&Vector) -> f64,
{
    let n = x.len();
    let steps: Vec<f64> = x.iter().map(|v| step_for(*v, rel, floor)).collect();
    let f0 = f(x);
    let mut h = Matrix::zeros(n, n);
    let mut probe = x.clone();
    for i in 0..n {
        let hi = steps[i];
        probe[i] = x[i] + hi;
        let fp = f(&probe);
        probe[i] = x[i] - hi;
        let fm = f(&probe);
        probe[i] = x[i];
        h[(i, i)] = (fp - 2.0 * f0 + fm) / (hi * hi);
        for j in (i + 1)..n {
            let hj = steps[j];
            let mut eval = |si: f64, sj: f64| {
                probe[i] = x[i] + si * hi;
                probe[j] = x[j] + sj * hj;
                let v = f(&probe);
                probe[i] = x[i];
                probe[j] = x[j];
                v
            };
            let v = (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0))
                / (4.0 * hi * hj);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    h
}
