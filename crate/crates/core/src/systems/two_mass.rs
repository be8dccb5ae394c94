//! Two masses in series: a motor-driven mass coupled through a spring `K₁`
//! to an end mass that contacts a wall of uncertain position through an
//! effective stiffness `K₂`. The wall position is part of the state and
//! stays constant, so the filter can only learn it through contact.
//!
//! State `[x¹, ẋ¹, x², ẋ², x_w]`, input `τ_m`, observation
//! `[x¹, K₁(x² − x¹)]`, design vector `φ = [K₁, K₂]`.
//!
//! Time stepping is backward Euler. With the default dampings an explicit
//! velocity update is unstable over much of the stiffness box, and the
//! implicit step is dissipative: with zero input the mechanical energy never
//! increases, because the potential is convex.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::smooth::{smooth_max, smooth_max_d1, smooth_max_integral};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::model::{CostModel, Dims, RunningDerivatives, SystemModel, TerminalDerivatives};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoMassConfig {
    /// kg
    pub m1: f64,
    pub m2: f64,
    /// N·s/m
    pub b1: f64,
    pub b2: f64,
    /// N/m; initial design point.
    pub k1: f64,
    pub k2: f64,
    pub k1_bounds: [f64; 2],
    pub k2_bounds: [f64; 2],
    /// Prior mean of the wall position, m.
    pub wall_mean: f64,
    /// Target contact force, N.
    pub target_force: f64,
    /// Smoothing width of the contact switch, m.
    pub gamma: f64,
    /// s
    pub dt: f64,
    pub horizon: usize,
    /// Mean initial `[x¹, ẋ¹, x², ẋ²]`.
    pub initial_state: [f64; 4],
    pub process_noise: [f64; 5],
    pub observation_noise: [f64; 2],
    pub initial_covariance: [f64; 5],
    pub velocity_weight: f64,
    pub torque_weight: f64,
}

impl Default for TwoMassConfig {
    fn default() -> Self {
        Self {
            m1: 0.8,
            m2: 0.4,
            b1: 60.0,
            b2: 35.0,
            k1: 500.0,
            k2: 500.0,
            k1_bounds: [50.0, 600.0],
            k2_bounds: [100.0, 600.0],
            wall_mean: 0.1,
            target_force: 10.0,
            gamma: 0.1,
            dt: 0.02,
            horizon: 100,
            initial_state: [0.0; 4],
            process_noise: [1e-7, 5e-3, 1e-7, 1e-2, 0.0],
            observation_noise: [1e-3, 1e-2],
            initial_covariance: [1e-3, 1e-3, 1e-3, 1e-3, 1e-4],
            velocity_weight: 0.1,
            torque_weight: 1e-4,
        }
    }
}

impl TwoMassConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("two_mass: {msg}")));
        if !(self.m1 > 0.0 && self.m2 > 0.0) {
            return bad("masses must be positive");
        }
        if self.b1 < 0.0 || self.b2 < 0.0 {
            return bad("dampings must be non-negative");
        }
        if !(self.gamma > 0.0 && self.dt > 0.0) || self.horizon == 0 {
            return bad("gamma, dt and horizon must be positive");
        }
        if self.k1_bounds[0] >= self.k1_bounds[1] || self.k2_bounds[0] >= self.k2_bounds[1] {
            return bad("empty stiffness bounds");
        }
        Ok(())
    }

    pub fn design(&self) -> Vector {
        Vector::from_vec(vec![self.k1, self.k2])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoMass {
    pub config: TwoMassConfig,
}

const X1: usize = 0;
const V1: usize = 1;
const X2: usize = 2;
const V2: usize = 3;
const XW: usize = 4;

/// Velocities and contact quantities at the end of one implicit step.
struct StepSolution {
    v: Vector2<f64>,
    /// Positions at the end of the step.
    q: Vector2<f64>,
    /// `M + hB + h²∇²U(q')`.
    s: Matrix2<f64>,
    hess: Matrix2<f64>,
    /// `∂∇U/∂x_w` at `q'`.
    wall: Vector2<f64>,
}

impl TwoMass {
    fn mass(&self) -> Matrix2<f64> {
        Matrix2::new(self.config.m1, 0.0, 0.0, self.config.m2)
    }

    fn damping(&self) -> Matrix2<f64> {
        Matrix2::new(self.config.b1, 0.0, 0.0, self.config.b2)
    }

    fn potential(&self, q: &Vector2<f64>, xw: f64, phi: &Vector) -> f64 {
        let spring = q[0] - q[1];
        0.5 * phi[0] * spring * spring + phi[1] * smooth_max_integral(q[1] - xw, self.config.gamma)
    }

    fn potential_gradient(&self, q: &Vector2<f64>, xw: f64, phi: &Vector) -> Vector2<f64> {
        let f = phi[0] * (q[0] - q[1]);
        Vector2::new(f, -f + phi[1] * smooth_max(q[1] - xw, self.config.gamma))
    }

    fn potential_hessian(&self, q: &Vector2<f64>, xw: f64, phi: &Vector) -> Matrix2<f64> {
        let k1 = phi[0];
        let kc = phi[1] * smooth_max_d1(q[1] - xw, self.config.gamma);
        Matrix2::new(k1, -k1, -k1, k1 + kc)
    }

    /// Backward Euler: `M(v' − v) = h(−Bv' − ∇U(q + hv') + τe₁)`, `q' = q + hv'`.
    /// The update minimizes the strictly convex
    /// `½(v'−v)ᵀM(v'−v) + ½h v'ᵀBv' + U(q + hv') − hτv'₁`,
    /// solved by damped Newton.
    fn implicit_step(&self, x: &Vector, tau: f64, phi: &Vector) -> StepSolution {
        let h = self.config.dt;
        let (m, b) = (self.mass(), self.damping());
        let q0 = Vector2::new(x[X1], x[X2]);
        let v0 = Vector2::new(x[V1], x[V2]);
        let xw = x[XW];
        let merit = |v: &Vector2<f64>| {
            let dv = v - v0;
            0.5 * dv.dot(&(m * dv)) + 0.5 * h * v.dot(&(b * v)) + self.potential(&(q0 + v * h), xw, phi) - h * tau * v[0]
        };
        let mut v = v0;
        for _ in 0..100 {
            let q = q0 + v * h;
            let grad = m * (v - v0) + h * (b * v) + h * self.potential_gradient(&q, xw, phi) - Vector2::new(h * tau, 0.0);
            let s = m + b * h + self.potential_hessian(&q, xw, phi) * (h * h);
            let Some(dv) = s.cholesky().map(|c| c.solve(&grad)) else { break };
            let f0 = merit(&v);
            let mut step = 1.0;
            while step > 1e-8 && merit(&(v - dv * step)) > f0 + 1e-14 * f0.abs() {
                step *= 0.5;
            }
            v -= dv * step;
            if (dv * step).norm() <= 1e-15 * (1.0 + v.norm()) {
                break;
            }
        }
        let q = q0 + v * h;
        let hess = self.potential_hessian(&q, xw, phi);
        let wall = Vector2::new(0.0, -phi[1] * smooth_max_d1(q[1] - xw, self.config.gamma));
        StepSolution {
            v,
            q,
            s: m + b * h + hess * (h * h),
            hess,
            wall,
        }
    }

    /// Contact force `K₂ (x² − x_w)₊`.
    pub fn contact_force(&self, x: &Vector, phi: &Vector) -> f64 {
        phi[1] * smooth_max(x[X2] - x[XW], self.config.gamma)
    }

    /// Kinetic plus spring plus smoothed-contact potential energy.
    pub fn energy(&self, x: &Vector, phi: &Vector) -> f64 {
        let v = Vector2::new(x[V1], x[V2]);
        0.5 * v.dot(&(self.mass() * v)) + self.potential(&Vector2::new(x[X1], x[X2]), x[XW], phi)
    }
}

impl SystemModel for TwoMass {
    fn dims(&self) -> Dims {
        Dims { state: 5, input: 1, obs: 2, design: 2 }
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn dt(&self) -> f64 {
        self.config.dt
    }

    fn step(&self, x: &Vector, u: &Vector, phi: &Vector) -> Vector {
        let s = self.implicit_step(x, u[0], phi);
        Vector::from_vec(vec![s.q[0], s.v[0], s.q[1], s.v[1], x[XW]])
    }

    fn observe(&self, x: &Vector, phi: &Vector) -> Vector {
        Vector::from_vec(vec![x[X1], phi[0] * (x[X2] - x[X1])])
    }

    fn process_noise(&self, _t: usize) -> Matrix {
        Matrix::from_diagonal(&Vector::from_row_slice(&self.config.process_noise))
    }

    fn observation_noise(&self, _t: usize) -> Matrix {
        Matrix::from_diagonal(&Vector::from_row_slice(&self.config.observation_noise))
    }

    fn initial_covariance(&self) -> Matrix {
        Matrix::from_diagonal(&Vector::from_row_slice(&self.config.initial_covariance))
    }

    fn initial_state(&self) -> Vector {
        let s = &self.config.initial_state;
        Vector::from_vec(vec![s[0], s[1], s[2], s[3], self.config.wall_mean])
    }

    /// Implicit-function derivatives of the step:
    /// `S dv' = M dv − hH dq − h ∂∇U/∂x_w dx_w + h e₁ dτ`, `dq' = dq + h dv'`.
    fn step_jacobians(&self, x: &Vector, u: &Vector, phi: &Vector) -> Option<(Matrix, Matrix)> {
        let h = self.config.dt;
        let sol = self.implicit_step(x, u[0], phi);
        let s_inv = sol.s.try_inverse()?;
        let dv_dv = s_inv * self.mass();
        let dv_dq = -(s_inv * sol.hess) * h;
        let dv_dw = -(s_inv * sol.wall) * h;
        let dv_du = s_inv.column(0) * h;

        let mut a = Matrix::zeros(5, 5);
        let (qi, vi) = ([X1, X2], [V1, V2]);
        for r in 0..2 {
            for c in 0..2 {
                a[(vi[r], vi[c])] = dv_dv[(r, c)];
                a[(vi[r], qi[c])] = dv_dq[(r, c)];
                a[(qi[r], vi[c])] = h * dv_dv[(r, c)];
                a[(qi[r], qi[c])] = if r == c { 1.0 } else { 0.0 } + h * dv_dq[(r, c)];
            }
            a[(vi[r], XW)] = dv_dw[r];
            a[(qi[r], XW)] = h * dv_dw[r];
        }
        a[(XW, XW)] = 1.0;
        let mut b = Matrix::zeros(5, 1);
        for r in 0..2 {
            b[(vi[r], 0)] = dv_du[r];
            b[(qi[r], 0)] = h * dv_du[r];
        }
        Some((a, b))
    }

    fn observe_jacobian(&self, _x: &Vector, phi: &Vector) -> Option<Matrix> {
        let mut c = Matrix::zeros(2, 5);
        c[(0, X1)] = 1.0;
        c[(1, X1)] = -phi[0];
        c[(1, X2)] = phi[0];
        Some(c)
    }

    fn state_in_bounds(&self, x: &Vector) -> bool {
        x.iter().all(|v| v.is_finite() && v.abs() < 1e3)
    }

    fn environment_states(&self) -> Vec<usize> {
        vec![XW]
    }

    fn design_bounds(&self) -> Option<(Vector, Vector)> {
        let c = &self.config;
        Some((
            Vector::from_vec(vec![c.k1_bounds[0], c.k2_bounds[0]]),
            Vector::from_vec(vec![c.k1_bounds[1], c.k2_bounds[1]]),
        ))
    }
}

/// `ℓ_t = (K₂(x² − x_w)₊ − f₀)² + w_v(ẋ¹² + ẋ²²) + w_τ τ_m²`; the terminal
/// cost is the state part of the running cost.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoMassCost {
    pub config: TwoMassConfig,
}

impl TwoMassCost {
    fn state_cost(&self, x: &Vector, phi: &Vector) -> f64 {
        let c = &self.config;
        let e = phi[1] * smooth_max(x[X2] - x[XW], c.gamma) - c.target_force;
        e * e + c.velocity_weight * (x[V1] * x[V1] + x[V2] * x[V2])
    }

    fn state_derivatives(&self, x: &Vector, phi: &Vector) -> (Vector, Matrix) {
        let c = &self.config;
        let k2 = phi[1];
        let d = x[X2] - x[XW];
        let e = k2 * smooth_max(d, c.gamma) - c.target_force;
        let s1 = k2 * smooth_max_d1(d, c.gamma);
        let mut g = Vector::zeros(5);
        g[V1] = 2.0 * c.velocity_weight * x[V1];
        g[V2] = 2.0 * c.velocity_weight * x[V2];
        g[X2] = 2.0 * e * s1;
        g[XW] = -2.0 * e * s1;
        let mut h = Matrix::zeros(5, 5);
        h[(V1, V1)] = 2.0 * c.velocity_weight;
        h[(V2, V2)] = 2.0 * c.velocity_weight;
        // Gauss-Newton curvature of the force error: keeps ℓ_xx PSD so the
        // value function stays convex through the contact transition.
        let curv = 2.0 * s1 * s1;
        h[(X2, X2)] = curv;
        h[(XW, XW)] = curv;
        h[(X2, XW)] = -curv;
        h[(XW, X2)] = -curv;
        (g, h)
    }
}

impl CostModel for TwoMassCost {
    fn running(&self, _t: usize, x: &Vector, u: &Vector, phi: &Vector) -> f64 {
        self.state_cost(x, phi) + self.config.torque_weight * u[0] * u[0]
    }

    fn terminal(&self, x: &Vector, phi: &Vector) -> f64 {
        self.state_cost(x, phi)
    }

    fn running_derivatives(&self, _t: usize, x: &Vector, u: &Vector, phi: &Vector) -> RunningDerivatives {
        let (lx, lxx) = self.state_derivatives(x, phi);
        RunningDerivatives {
            lx,
            lu: Vector::from_element(1, 2.0 * self.config.torque_weight * u[0]),
            lxx,
            luu: Matrix::from_element(1, 1, 2.0 * self.config.torque_weight),
            lux: Matrix::zeros(1, 5),
        }
    }

    fn terminal_derivatives(&self, x: &Vector, phi: &Vector) -> TerminalDerivatives {
        let (lx, lxx) = self.state_derivatives(x, phi);
        TerminalDerivatives { lx, lxx }
    }
}

pub fn two_mass_model(config: TwoMassConfig) -> Result<(TwoMass, TwoMassCost)> {
    config.validate()?;
    Ok((TwoMass { config: config.clone() }, TwoMassCost { config }))
}
