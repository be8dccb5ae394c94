//! Linear-Gaussian plant with quadratic cost. Mostly useful as a reference
//! problem: iLQG on it reduces to LQG.

use crate::linalg::{Matrix, Vector};
use crate::model::{CostModel, Dims, RunningDerivatives, SystemModel, TerminalDerivatives};

/// `x_{t+1} = A x + B u + w`, `y = C x + v`, time invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub w: Matrix,
    pub v: Matrix,
    pub x0_cov: Matrix,
    pub x0_mean: Vector,
    pub horizon: usize,
}

impl SystemModel for LinearSystem {
    fn dims(&self) -> Dims {
        Dims {
            state: self.a.nrows(),
            input: self.b.ncols(),
            obs: self.c.nrows(),
            design: 0,
        }
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn step(&self, x: &Vector, u: &Vector, _phi: &Vector) -> Vector {
        &self.a * x + &self.b * u
    }

    fn observe(&self, x: &Vector, _phi: &Vector) -> Vector {
        &self.c * x
    }

    fn process_noise(&self, _t: usize) -> Matrix {
        self.w.clone()
    }

    fn observation_noise(&self, _t: usize) -> Matrix {
        self.v.clone()
    }

    fn initial_covariance(&self) -> Matrix {
        self.x0_cov.clone()
    }

    fn initial_state(&self) -> Vector {
        self.x0_mean.clone()
    }

    fn step_jacobians(&self, _x: &Vector, _u: &Vector, _phi: &Vector) -> Option<(Matrix, Matrix)> {
        Some((self.a.clone(), self.b.clone()))
    }

    fn observe_jacobian(&self, _x: &Vector, _phi: &Vector) -> Option<Matrix> {
        Some(self.c.clone())
    }
}

/// `ℓ_t = ½x'Qx + ½u'Ru`, `ℓ_T = ½x'Q_f x`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost {
    pub q: Matrix,
    pub r: Matrix,
    pub qf: Matrix,
}

impl CostModel for QuadraticCost {
    fn running(&self, _t: usize, x: &Vector, u: &Vector, _phi: &Vector) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + 0.5 * u.dot(&(&self.r * u))
    }

    fn terminal(&self, x: &Vector, _phi: &Vector) -> f64 {
        0.5 * x.dot(&(&self.qf * x))
    }

    fn running_derivatives(&self, _t: usize, x: &Vector, u: &Vector, _phi: &Vector) -> RunningDerivatives {
        RunningDerivatives {
            lx: &self.q * x,
            lu: &self.r * u,
            lxx: self.q.clone(),
            luu: self.r.clone(),
            lux: Matrix::zeros(u.len(), x.len()),
        }
    }

    fn terminal_derivatives(&self, x: &Vector, _phi: &Vector) -> TerminalDerivatives {
        TerminalDerivatives {
            lx: &self.qf * x,
            lxx: self.qf.clone(),
        }
    }
}
