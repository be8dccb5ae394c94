//! Planar door-opening analog: a torque-controlled two-link arm whose
//! end-effector is tied to a door handle by a diagonal translational
//! stiffness `K = diag(k₁, k₂)` (the design). The door hinge carries a
//! pre-loaded torsion spring whose rest angle is the target opening, so the
//! door swings open on its own and the arm has to guide it in without
//! excessive motion. The hinge position is an uncertain constant of the
//! environment.
//!
//! State `[q₁, q₂, q̇₁, q̇₂, θ, θ̇, h_x, h_y]`, input `[τ₁, τ₂]`, observation
//! `[q₁, q₂, q̇₁, q̇₂, θ]`. Joint inertias are taken as constant (motor
//! dominated), so the arm has no Coriolis terms. Time stepping is backward
//! Euler on the incremental potential, solved by Newton's method.

use nalgebra::{Matrix2x5, Matrix3, Matrix5, Vector2, Vector3, Vector5};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::model::{CostModel, Dims, RunningDerivatives, SystemModel, TerminalDerivatives};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DoorConfig {
    /// m
    pub link_lengths: [f64; 2],
    /// Joint inertias, kg·m².
    pub joint_inertia: [f64; 2],
    /// Joint damping, N·m·s/rad.
    pub joint_damping: [f64; 2],
    pub door_inertia: f64,
    pub door_damping: f64,
    /// Hinge-to-handle distance, m.
    pub handle_radius: f64,
    /// Hinge torsion spring, N·m/rad.
    pub hinge_stiffness: f64,
    /// Rest angle of the hinge spring, rad.
    pub hinge_rest_angle: f64,
    /// Translational coupling stiffnesses; initial design point, N/m.
    pub k1: f64,
    pub k2: f64,
    pub k_bounds: [f64; 2],
    /// Arm pose at rest; the handle starts at the end-effector.
    pub initial_joints: [f64; 2],
    /// Direction from hinge to handle with the door closed, rad.
    pub handle_angle: f64,
    /// Target door angle, rad.
    pub target_angle: f64,
    pub dt: f64,
    pub horizon: usize,
    pub process_noise: [f64; 8],
    pub observation_noise: [f64; 5],
    pub initial_covariance: [f64; 8],
    pub velocity_weight: f64,
    pub torque_weight: f64,
}

impl Default for DoorConfig {
    fn default() -> Self {
        Self {
            link_lengths: [0.5, 0.5],
            joint_inertia: [0.05, 0.05],
            joint_damping: [0.1, 0.1],
            door_inertia: 0.1,
            door_damping: 0.2,
            handle_radius: 0.4,
            hinge_stiffness: 50.0,
            hinge_rest_angle: 0.4,
            k1: 1000.0,
            k2: 1000.0,
            k_bounds: [50.0, 1500.0],
            initial_joints: [0.3, 1.2],
            handle_angle: std::f64::consts::PI,
            target_angle: 0.4,
            dt: 0.01,
            horizon: 150,
            process_noise: [1e-8, 1e-8, 1e-6, 1e-6, 1e-8, 1e-6, 0.0, 0.0],
            observation_noise: [1e-4, 1e-4, 1e-3, 1e-3, 1e-4],
            initial_covariance: [1e-4, 1e-4, 1e-4, 1e-4, 1e-4, 1e-4, 1e-4, 1e-4],
            velocity_weight: 0.05,
            torque_weight: 0.1,
        }
    }
}

impl DoorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("door_analog: {msg}")));
        let positive = self.link_lengths.iter().chain(&self.joint_inertia).all(|v| *v > 0.0)
            && self.door_inertia > 0.0
            && self.handle_radius > 0.0;
        if !positive {
            return bad("lengths, inertias and handle radius must be positive");
        }
        if self.joint_damping.iter().any(|b| *b < 0.0) || self.door_damping < 0.0 || self.hinge_stiffness < 0.0 {
            return bad("dampings and hinge stiffness must be non-negative");
        }
        if !(self.dt > 0.0) || self.horizon == 0 {
            return bad("dt and horizon must be positive");
        }
        if !(self.k_bounds[0] > 0.0 && self.k_bounds[0] < self.k_bounds[1]) {
            return bad("stiffness bounds must satisfy 0 < lower < upper");
        }
        Ok(())
    }

    pub fn design(&self) -> Vector {
        Vector::from_vec(vec![self.k1, self.k2])
    }
}

const Q1: usize = 0;
const Q2: usize = 1;
const DQ1: usize = 2;
const DQ2: usize = 3;
const TH: usize = 4;
const DTH: usize = 5;
const HX: usize = 6;
const HY: usize = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct DoorAnalog {
    pub config: DoorConfig,
    /// Hinge position implied by the initial pose.
    hinge: Vector2<f64>,
}

/// Generalized coordinates `z = (q₁, q₂, θ, h_x, h_y)`.
type Coords = Vector5<f64>;

impl DoorAnalog {
    pub fn new(config: DoorConfig) -> Result<Self> {
        config.validate()?;
        let [a, b] = config.initial_joints;
        let ee = forward_kinematics(&config.link_lengths, a, b);
        let hinge = ee - handle_offset(&config, 0.0);
        Ok(Self {
            hinge,
            config,
        })
    }

    pub fn nominal_hinge(&self) -> Vector2<f64> {
        self.hinge
    }

    pub fn end_effector(&self, x: &Vector) -> Vector2<f64> {
        forward_kinematics(&self.config.link_lengths, x[Q1], x[Q2])
    }

    pub fn handle(&self, x: &Vector) -> Vector2<f64> {
        Vector2::new(x[HX], x[HY]) + handle_offset(&self.config, x[TH])
    }

    /// Joint angles that put the end-effector on the handle for door angle
    /// `theta` (elbow on the same side as the initial pose). `None` when the handle is out of reach.
    pub fn matching_pose(&self, theta: f64) -> Option<[f64; 2]> {
        let [l1, l2] = self.config.link_lengths;
        let p = self.hinge + handle_offset(&self.config, theta);
        let c2 = (p.norm_squared() - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
        if !(-1.0..=1.0).contains(&c2) {
            return None;
        }
        let q2 = c2.acos() * self.config.initial_joints[1].signum();
        let q1 = p.y.atan2(p.x) - (l2 * q2.sin()).atan2(l1 + l2 * q2.cos());
        Some([q1, q2])
    }

    fn coords(x: &Vector) -> Coords {
        Vector5::new(x[Q1], x[Q2], x[TH], x[HX], x[HY])
    }

    fn hinge_error(&self, z: &Coords) -> f64 {
        z[2] - self.config.hinge_rest_angle
    }

    /// Coupling displacement `p_e − p_h` and its Jacobian over `z`.
    fn coupling(&self, z: &Coords) -> (Vector2<f64>, Matrix2x5<f64>) {
        let c = &self.config;
        let [l1, l2] = c.link_lengths;
        let (s1, c1) = z[0].sin_cos();
        let (s12, c12) = (z[0] + z[1]).sin_cos();
        let pe = Vector2::new(l1 * c1 + l2 * c12, l1 * s1 + l2 * s12);
        let ph = Vector2::new(z[3], z[4]) + handle_offset(c, z[2]);
        let (sa, ca) = (c.handle_angle + z[2]).sin_cos();
        let r = c.handle_radius;
        #[rustfmt::skip]
        let jac = Matrix2x5::new(
            -l1 * s1 - l2 * s12, -l2 * s12, r * sa, -1.0, 0.0,
            l1 * c1 + l2 * c12, l2 * c12, -r * ca, 0.0, -1.0,
        );
        (pe - ph, jac)
    }

    fn potential(&self, z: &Coords, phi: &Vector) -> f64 {
        let (d, _) = self.coupling(z);
        let e = self.hinge_error(z);
        0.5 * (phi[0] * d.x * d.x + phi[1] * d.y * d.y) + 0.5 * self.config.hinge_stiffness * e * e
    }

    fn potential_gradient(&self, z: &Coords, phi: &Vector) -> Coords {
        let (d, jac) = self.coupling(z);
        let kd = Vector2::new(phi[0] * d.x, phi[1] * d.y);
        let mut g = jac.transpose() * kd;
        g[2] += self.config.hinge_stiffness * self.hinge_error(z);
        g
    }

    fn potential_hessian(&self, z: &Coords, phi: &Vector) -> Matrix5<f64> {
        let c = &self.config;
        let [l1, l2] = c.link_lengths;
        let (d, jac) = self.coupling(z);
        let k = nalgebra::Matrix2::new(phi[0], 0.0, 0.0, phi[1]);
        let kd = k * d;
        let mut h = jac.transpose() * k * jac;
        // curvature of the kinematics weighted by the coupling force
        let (s1, c1) = z[0].sin_cos();
        let (s12, c12) = (z[0] + z[1]).sin_cos();
        let hx = Matrix3::new(-l1 * c1 - l2 * c12, -l2 * c12, 0.0, -l2 * c12, -l2 * c12, 0.0, 0.0, 0.0, 0.0);
        let hy = Matrix3::new(-l1 * s1 - l2 * s12, -l2 * s12, 0.0, -l2 * s12, -l2 * s12, 0.0, 0.0, 0.0, 0.0);
        let mut curv = hx * kd.x + hy * kd.y;
        let (sa, ca) = (c.handle_angle + z[2]).sin_cos();
        curv[(2, 2)] = c.handle_radius * (ca * kd.x + sa * kd.y) + c.hinge_stiffness;
        let mut block = h.fixed_view_mut::<3, 3>(0, 0);
        block += curv;
        h
    }

    fn mass(&self) -> Vector3<f64> {
        let c = &self.config;
        Vector3::new(c.joint_inertia[0], c.joint_inertia[1], c.door_inertia)
    }

    fn damping(&self) -> Vector3<f64> {
        let c = &self.config;
        Vector3::new(c.joint_damping[0], c.joint_damping[1], c.door_damping)
    }

    /// Backward Euler for the mobile coordinates `(q₁, q₂, θ)`: minimizes
    /// `½(v'−v)ᵀM(v'−v) + ½h v'ᵀBv' + U(z + h v') − h τᵀv'` over `v'`.
    fn implicit_step(&self, x: &Vector, tau: &Vector, phi: &Vector) -> (Vector3<f64>, Coords) {
        let h = self.config.dt;
        let (m, b) = (self.mass(), self.damping());
        let z0 = Self::coords(x);
        let v0 = Vector3::new(x[DQ1], x[DQ2], x[DTH]);
        let force = Vector3::new(tau[0], tau[1], 0.0);
        let lift = |v: &Vector3<f64>| z0 + Vector5::new(h * v[0], h * v[1], h * v[2], 0.0, 0.0);
        let merit = |v: &Vector3<f64>| {
            let dv = v - v0;
            0.5 * dv.component_mul(&m).dot(&dv) + 0.5 * h * v.component_mul(&b).dot(v) + self.potential(&lift(v), phi)
                - h * force.dot(v)
        };
        let mut v = v0;
        for _ in 0..100 {
            let z = lift(&v);
            let gz = self.potential_gradient(&z, phi);
            let grad = (v - v0).component_mul(&m) + h * v.component_mul(&b) + h * gz.fixed_rows::<3>(0) - h * force;
            let hz = self.potential_hessian(&z, phi);
            let mut s = Matrix3::from_diagonal(&(m + b * h)) + hz.fixed_view::<3, 3>(0, 0) * (h * h);
            // keep the Newton matrix positive definite where the kinematic
            // curvature makes the incremental potential locally non-convex
            let mut shift = 0.0;
            let dv = loop {
                if let Some(ch) = s.cholesky() {
                    break ch.solve(&grad);
                }
                shift = if shift == 0.0 { m.min() * 1e-6 } else { shift * 10.0 };
                s += Matrix3::identity() * shift;
            };
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
        (v, lift(&v))
    }

    pub fn energy(&self, x: &Vector, phi: &Vector) -> f64 {
        let v = Vector3::new(x[DQ1], x[DQ2], x[DTH]);
        0.5 * v.component_mul(&self.mass()).dot(&v) + self.potential(&Self::coords(x), phi)
    }
}

fn forward_kinematics(l: &[f64; 2], q1: f64, q2: f64) -> Vector2<f64> {
    Vector2::new(l[0] * q1.cos() + l[1] * (q1 + q2).cos(), l[0] * q1.sin() + l[1] * (q1 + q2).sin())
}

fn handle_offset(c: &DoorConfig, theta: f64) -> Vector2<f64> {
    let a = c.handle_angle + theta;
    Vector2::new(a.cos(), a.sin()) * c.handle_radius
}

impl SystemModel for DoorAnalog {
    fn dims(&self) -> Dims {
        Dims { state: 8, input: 2, obs: 5, design: 2 }
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn dt(&self) -> f64 {
        self.config.dt
    }

    fn step(&self, x: &Vector, u: &Vector, phi: &Vector) -> Vector {
        let (v, z) = self.implicit_step(x, u, phi);
        Vector::from_vec(vec![z[0], z[1], v[0], v[1], z[2], v[2], x[HX], x[HY]])
    }

    fn observe(&self, x: &Vector, _phi: &Vector) -> Vector {
        Vector::from_vec(vec![x[Q1], x[Q2], x[DQ1], x[DQ2], x[TH]])
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
        let [a, b] = self.config.initial_joints;
        Vector::from_vec(vec![a, b, 0.0, 0.0, 0.0, 0.0, self.hinge.x, self.hinge.y])
    }

    /// Implicit-function derivatives of the step: with mobile coordinates
    /// `p` and hinge `e`, `S dv' = M dv − hH_pp dp − hH_pe de + h dτ` and
    /// `dp' = dp + h dv'`.
    fn step_jacobians(&self, x: &Vector, u: &Vector, phi: &Vector) -> Option<(Matrix, Matrix)> {
        let h = self.config.dt;
        let (_, z) = self.implicit_step(x, u, phi);
        let hz = self.potential_hessian(&z, phi);
        let s = Matrix3::from_diagonal(&(self.mass() + self.damping() * h)) + hz.fixed_view::<3, 3>(0, 0) * (h * h);
        let s_inv = s.try_inverse()?;
        let dv_dv = s_inv * Matrix3::from_diagonal(&self.mass());
        let dv_dp = -(s_inv * hz.fixed_view::<3, 3>(0, 0)) * h;
        let dv_de = -(s_inv * hz.fixed_view::<3, 2>(0, 3)) * h;
        let dv_du = s_inv.fixed_view::<3, 2>(0, 0) * h;

        let pos = [Q1, Q2, TH];
        let vel = [DQ1, DQ2, DTH];
        let env = [HX, HY];
        let mut a = Matrix::zeros(8, 8);
        let mut b = Matrix::zeros(8, 2);
        for r in 0..3 {
            for c in 0..3 {
                a[(vel[r], vel[c])] = dv_dv[(r, c)];
                a[(vel[r], pos[c])] = dv_dp[(r, c)];
                a[(pos[r], vel[c])] = h * dv_dv[(r, c)];
                a[(pos[r], pos[c])] = if r == c { 1.0 } else { 0.0 } + h * dv_dp[(r, c)];
            }
            for c in 0..2 {
                a[(vel[r], env[c])] = dv_de[(r, c)];
                a[(pos[r], env[c])] = h * dv_de[(r, c)];
                b[(vel[r], c)] = dv_du[(r, c)];
                b[(pos[r], c)] = h * dv_du[(r, c)];
            }
        }
        a[(HX, HX)] = 1.0;
        a[(HY, HY)] = 1.0;
        Some((a, b))
    }

    fn observe_jacobian(&self, _x: &Vector, _phi: &Vector) -> Option<Matrix> {
        let mut c = Matrix::zeros(5, 8);
        for (row, col) in [Q1, Q2, DQ1, DQ2, TH].into_iter().enumerate() {
            c[(row, col)] = 1.0;
        }
        Some(c)
    }

    fn state_in_bounds(&self, x: &Vector) -> bool {
        x.iter().all(|v| v.is_finite() && v.abs() < 1e3)
    }

    fn design_bounds(&self) -> Option<(Vector, Vector)> {
        let [lo, hi] = self.config.k_bounds;
        Some((Vector::from_element(2, lo), Vector::from_element(2, hi)))
    }

    fn environment_states(&self) -> Vec<usize> {
        vec![HX, HY]
    }
}

/// `ℓ_t = (θ − θ₀)² + w_v|q̇|² + w_τ|τ|²`; the terminal cost drops the
/// torque term.
#[derive(Debug, Clone, PartialEq)]
pub struct DoorCost {
    pub config: DoorConfig,
}

impl DoorCost {
    fn state_cost(&self, x: &Vector) -> f64 {
        let e = x[TH] - self.config.target_angle;
        e * e + self.config.velocity_weight * (x[DQ1] * x[DQ1] + x[DQ2] * x[DQ2])
    }

    fn state_derivatives(&self, x: &Vector) -> (Vector, Matrix) {
        let w = self.config.velocity_weight;
        let mut g = Vector::zeros(8);
        g[TH] = 2.0 * (x[TH] - self.config.target_angle);
        g[DQ1] = 2.0 * w * x[DQ1];
        g[DQ2] = 2.0 * w * x[DQ2];
        let mut h = Matrix::zeros(8, 8);
        h[(TH, TH)] = 2.0;
        h[(DQ1, DQ1)] = 2.0 * w;
        h[(DQ2, DQ2)] = 2.0 * w;
        (g, h)
    }
}

impl CostModel for DoorCost {
    fn running(&self, _t: usize, x: &Vector, u: &Vector, _phi: &Vector) -> f64 {
        self.state_cost(x) + self.config.torque_weight * u.norm_squared()
    }

    fn terminal(&self, x: &Vector, _phi: &Vector) -> f64 {
        self.state_cost(x)
    }

    fn running_derivatives(&self, _t: usize, x: &Vector, u: &Vector, _phi: &Vector) -> RunningDerivatives {
        let (lx, lxx) = self.state_derivatives(x);
        let w = self.config.torque_weight;
        RunningDerivatives {
            lx,
            lu: u * (2.0 * w),
            lxx,
            luu: Matrix::identity(2, 2) * (2.0 * w),
            lux: Matrix::zeros(2, 8),
        }
    }

    fn terminal_derivatives(&self, x: &Vector, _phi: &Vector) -> TerminalDerivatives {
        let (lx, lxx) = self.state_derivatives(x);
        TerminalDerivatives { lx, lxx }
    }
}

pub fn door_analog_model(config: DoorConfig) -> Result<(DoorAnalog, DoorCost)> {
    let model = DoorAnalog::new(config.clone())?;
    Ok((model, DoorCost { config }))
}
