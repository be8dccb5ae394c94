//! System interface, cost interface, and local linearization.
//!
//! A [`SystemModel`] is a discrete-time nonlinear plant
//! `x_{t+1} = f(x_t, u_t; φ) + w_t`, `y_t = g(x_t; φ) + v_t` with Gaussian
//! noise. Design parameters `φ` enter `f` and `g` only; noise covariances are
//! independent of `φ`.

pub mod fd;
mod rollout;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, checked_covariance, min_eigenvalue, Matrix, Vector};

pub use fd::FdOptions;
pub use rollout::{rollout, Policy, RolloutOptions, RolloutResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub state: usize,
    pub input: usize,
    pub obs: usize,
    pub design: usize,
}

/// Nonlinear stochastic plant with design parameters.
///
/// Implementations must be re-entrant; every method is a pure function of
/// its arguments.
pub trait SystemModel: Send + Sync {
    fn dims(&self) -> Dims;

    /// Number of control steps `T`; trajectories have `T + 1` states.
    fn horizon(&self) -> usize;

    fn dt(&self) -> f64 {
        0.02
    }

    /// Noise-free dynamics `f(x, u; φ)`.
    fn step(&self, x: &Vector, u: &Vector, phi: &Vector) -> Vector;

    /// Noise-free observation `g(x; φ)`.
    fn observe(&self, x: &Vector, phi: &Vector) -> Vector;

    fn process_noise(&self, t: usize) -> Matrix;

    fn observation_noise(&self, t: usize) -> Matrix;

    fn initial_covariance(&self) -> Matrix;

    /// Mean of the initial state.
    fn initial_state(&self) -> Vector;

    /// Analytic `(∂f/∂x, ∂f/∂u)`; `None` falls back to finite differences.
    fn step_jacobians(&self, _x: &Vector, _u: &Vector, _phi: &Vector) -> Option<(Matrix, Matrix)> {
        None
    }

    /// Analytic `∂g/∂x`; `None` falls back to finite differences.
    fn observe_jacobian(&self, _x: &Vector, _phi: &Vector) -> Option<Matrix> {
        None
    }

    /// Declared state bounds; rollouts leaving them are flagged divergent.
    fn state_in_bounds(&self, x: &Vector) -> bool {
        x.iter().all(|v| v.is_finite())
    }

    /// Box bounds on the design vector, if the model declares any.
    fn design_bounds(&self) -> Option<(Vector, Vector)> {
        None
    }

    /// Indices of constant states describing the environment (e.g. a wall
    /// position), used by environment-noise experiments.
    fn environment_states(&self) -> Vec<usize> {
        Vec::new()
    }
}

/// Derivatives of a running cost at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningDerivatives {
    pub lx: Vector,
    pub lu: Vector,
    pub lxx: Matrix,
    pub luu: Matrix,
    /// `∂²ℓ/∂u∂x`, shape m×n.
    pub lux: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminalDerivatives {
    pub lx: Vector,
    pub lxx: Matrix,
}

/// Running and terminal cost with derivative evaluators. The default
/// derivative evaluators use central finite differences.
pub trait CostModel: Send + Sync {
    fn running(&self, t: usize, x: &Vector, u: &Vector, phi: &Vector) -> f64;

    fn terminal(&self, x: &Vector, phi: &Vector) -> f64;

    fn running_derivatives(&self, t: usize, x: &Vector, u: &Vector, phi: &Vector) -> RunningDerivatives {
        fd_running_derivatives(self, t, x, u, phi, &FdOptions::default())
    }

    fn terminal_derivatives(&self, x: &Vector, phi: &Vector) -> TerminalDerivatives {
        fd_terminal_derivatives(self, x, phi, &FdOptions::default())
    }
}

pub fn fd_running_derivatives<C: CostModel + ?Sized>(
    cost: &C,
    t: usize,
    x: &Vector,
    u: &Vector,
    phi: &Vector,
    opts: &FdOptions,
) -> RunningDerivatives {
    let n = x.len();
    let m = u.len();
    let z = Vector::from_iterator(n + m, x.iter().chain(u.iter()).copied());
    let split = |z: &Vector| {
        let x = z.rows(0, n).into_owned();
        let u = z.rows(n, m).into_owned();
        cost.running(t, &x, &u, phi)
    };
    let g = fd::gradient(split, &z, opts.rel_step.max(1e-7), opts.abs_floor.max(1e-7));
    let h = fd::hessian(split, &z, opts.hessian_rel_step, opts.hessian_abs_floor);
    RunningDerivatives {
        lx: g.rows(0, n).into_owned(),
        lu: g.rows(n, m).into_owned(),
        lxx: h.view((0, 0), (n, n)).into_owned(),
        luu: h.view((n, n), (m, m)).into_owned(),
        lux: h.view((n, 0), (m, n)).into_owned(),
    }
}

pub fn fd_terminal_derivatives<C: CostModel + ?Sized>(
    cost: &C,
    x: &Vector,
    phi: &Vector,
    opts: &FdOptions,
) -> TerminalDerivatives {
    let f = |x: &Vector| cost.terminal(x, phi);
    TerminalDerivatives {
        lx: fd::gradient(f, x, opts.rel_step.max(1e-7), opts.abs_floor.max(1e-7)),
        lxx: fd::hessian(f, x, opts.hessian_rel_step, opts.hessian_abs_floor),
    }
}

/// Reference states (length `T + 1`) and inputs (length `T`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NominalTrajectory {
    pub states: Vec<Vector>,
    pub inputs: Vec<Vector>,
}

impl NominalTrajectory {
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    pub fn check(&self, model: &dyn SystemModel) -> Result<()> {
        let dims = model.dims();
        let t = model.horizon();
        if self.inputs.len() != t || self.states.len() != t + 1 {
            return Err(Error::Dimension {
                what: "trajectory length",
                expected: format!("{} states / {} inputs", t + 1, t),
                got: format!("{} states / {} inputs", self.states.len(), self.inputs.len()),
            });
        }
        if self.states.iter().any(|x| x.len() != dims.state)
            || self.inputs.iter().any(|u| u.len() != dims.input)
        {
            return Err(Error::Dimension {
                what: "trajectory entry",
                expected: format!("n={}, m={}", dims.state, dims.input),
                got: "mismatched vector".into(),
            });
        }
        Ok(())
    }

    /// Noise-free open-loop rollout of `inputs` from `x0`.
    pub fn from_inputs(model: &dyn SystemModel, phi: &Vector, x0: Vector, inputs: Vec<Vector>) -> Self {
        let mut states = Vec::with_capacity(inputs.len() + 1);
        states.push(x0);
        for u in &inputs {
            let next = model.step(states.last().unwrap(), u, phi);
            states.push(next);
        }
        Self { states, inputs }
    }

    /// Zero-input noise-free rollout from the mean initial state.
    pub fn zero_input(model: &dyn SystemModel, phi: &Vector) -> Self {
        let dims = model.dims();
        let inputs = vec![Vector::zeros(dims.input); model.horizon()];
        Self::from_inputs(model, phi, model.initial_state(), inputs)
    }
}

/// Design Jacobians for one design component.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignJacobians {
    /// `∂A_t/∂φᵢ`, t = 0..T-1.
    pub da: Vec<Matrix>,
    /// `∂C_t/∂φᵢ`, t = 0..T.
    pub dc: Vec<Matrix>,
}

/// Linear time-varying approximation along a nominal trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct LtvApprox {
    /// `∂f/∂x`, t = 0..T-1.
    pub a: Vec<Matrix>,
    /// `∂f/∂u`, t = 0..T-1.
    pub b: Vec<Matrix>,
    /// `∂g/∂x`, t = 0..T.
    pub c: Vec<Matrix>,
    /// One entry per design component when computed.
    pub design: Vec<DesignJacobians>,
}

impl LtvApprox {
    pub fn horizon(&self) -> usize {
        self.a.len()
    }

    pub fn state_dim(&self) -> usize {
        self.a.first().map_or_else(|| self.c[0].ncols(), |a| a.nrows())
    }
}

/// Validated noise covariances along the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    /// `W_t`, t = 0..T-1.
    pub process: Vec<Matrix>,
    /// `V_t`, t = 0..T.
    pub observation: Vec<Matrix>,
    pub initial: Matrix,
}

impl NoiseSchedule {
    /// Reads and validates all covariances of `model`: symmetric within
    /// tolerance (then symmetrized), `W_t` PSD, `V_t` and `X₀` PD.
    pub fn from_model(model: &dyn SystemModel) -> Result<Self> {
        let dims = model.dims();
        let t_max = model.horizon();
        let psd_tol = 1e-12;
        let mut process = Vec::with_capacity(t_max);
        for t in 0..t_max {
            let w = checked_covariance(&model.process_noise(t), format!("W_{t}"))?;
            check_dims(&w, dims.state, "W_t")?;
            if min_eigenvalue(&w) < -psd_tol {
                return Err(Error::Singular { what: "W_t (not PSD)", t });
            }
            process.push(w);
        }
        let mut observation = Vec::with_capacity(t_max + 1);
        for t in 0..=t_max {
            let v = checked_covariance(&model.observation_noise(t), format!("V_{t}"))?;
            check_dims(&v, dims.obs, "V_t")?;
            if min_eigenvalue(&v) <= 0.0 {
                return Err(Error::Singular { what: "V_t", t });
            }
            observation.push(v);
        }
        let initial = checked_covariance(&model.initial_covariance(), "X0")?;
        check_dims(&initial, dims.state, "X0")?;
        if min_eigenvalue(&initial) <= 0.0 {
            return Err(Error::Singular { what: "X0", t: 0 });
        }
        Ok(Self {
            process,
            observation,
            initial,
        })
    }
}

fn check_dims(m: &Matrix, n: usize, what: &'static str) -> Result<()> {
    if m.nrows() != n {
        return Err(Error::Dimension {
            what,
            expected: format!("{n}x{n}"),
            got: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    Ok(())
}

fn check_design(model: &dyn SystemModel, phi: &Vector) -> Result<()> {
    let d = model.dims().design;
    if phi.len() != d {
        return Err(Error::Dimension {
            what: "design vector",
            expected: d.to_string(),
            got: phi.len().to_string(),
        });
    }
    if let Some((lo, hi)) = model.design_bounds() {
        for i in 0..d {
            if phi[i] < lo[i] || phi[i] > hi[i] {
                return Err(Error::DesignOutOfBounds {
                    index: i,
                    value: phi[i],
                    lo: lo[i],
                    hi: hi[i],
                });
            }
        }
    }
    Ok(())
}

fn check_finite(m: &Matrix, what: &'static str, t: usize) -> Result<()> {
    if all_finite(m) {
        return Ok(());
    }
    let (idx, _) = m.iter().enumerate().find(|(_, v)| !v.is_finite()).unwrap();
    // nalgebra storage is column-major
    Err(Error::NonFiniteDerivative {
        what,
        t,
        row: idx % m.nrows(),
        col: idx / m.nrows(),
    })
}

fn dynamics_jacobians(model: &dyn SystemModel, x: &Vector, u: &Vector, phi: &Vector, opts: &FdOptions) -> (Matrix, Matrix) {
    if let Some(ab) = model.step_jacobians(x, u, phi) {
        return ab;
    }
    let a = fd::jacobian(|xp| model.step(xp, u, phi), x, opts.rel_step, opts.abs_floor);
    let b = fd::jacobian(|up| model.step(x, up, phi), u, opts.rel_step, opts.abs_floor);
    (a, b)
}

fn observation_jacobian(model: &dyn SystemModel, x: &Vector, phi: &Vector, opts: &FdOptions) -> Matrix {
    model
        .observe_jacobian(x, phi)
        .unwrap_or_else(|| fd::jacobian(|xp| model.observe(xp, phi), x, opts.rel_step, opts.abs_floor))
}

fn linearize_unchecked(
    model: &dyn SystemModel,
    traj: &NominalTrajectory,
    phi: &Vector,
    opts: &FdOptions,
) -> (Vec<Matrix>, Vec<Matrix>, Vec<Matrix>) {
    let t_max = traj.horizon();
    let mut a = Vec::with_capacity(t_max);
    let mut b = Vec::with_capacity(t_max);
    for t in 0..t_max {
        let (at, bt) = dynamics_jacobians(model, &traj.states[t], &traj.inputs[t], phi, opts);
        a.push(at);
        b.push(bt);
    }
    let c = traj
        .states
        .iter()
        .map(|x| observation_jacobian(model, x, phi, opts))
        .collect();
    (a, b, c)
}

/// `A_t`, `B_t`, `C_t` along `traj` (no design Jacobians).
pub fn linearize(model: &dyn SystemModel, traj: &NominalTrajectory, phi: &Vector) -> Result<LtvApprox> {
    linearize_with(model, traj, phi, &FdOptions::default())
}

pub fn linearize_with(
    model: &dyn SystemModel,
    traj: &NominalTrajectory,
    phi: &Vector,
    opts: &FdOptions,
) -> Result<LtvApprox> {
    traj.check(model)?;
    check_design(model, phi)?;
    let (a, b, c) = linearize_unchecked(model, traj, phi, opts);
    let dims = model.dims();
    for (t, (at, bt)) in a.iter().zip(&b).enumerate() {
        if at.shape() != (dims.state, dims.state) || bt.shape() != (dims.state, dims.input) {
            return Err(Error::Dimension {
                what: "dynamics Jacobian",
                expected: format!("{0}x{0} and {0}x{1}", dims.state, dims.input),
                got: format!("{:?} and {:?}", at.shape(), bt.shape()),
            });
        }
        check_finite(at, "A", t)?;
        check_finite(bt, "B", t)?;
    }
    for (t, ct) in c.iter().enumerate() {
        if ct.shape() != (dims.obs, dims.state) {
            return Err(Error::Dimension {
                what: "observation Jacobian",
                expected: format!("{}x{}", dims.obs, dims.state),
                got: format!("{:?}", ct.shape()),
            });
        }
        check_finite(ct, "C", t)?;
    }
    Ok(LtvApprox {
        a,
        b,
        c,
        design: Vec::new(),
    })
}

/// `(∂A_t/∂φᵢ, ∂C_t/∂φᵢ)` by central differences of the (analytic or
/// numeric) first derivatives over `φᵢ`.
pub fn design_jacobians(
    model: &dyn SystemModel,
    traj: &NominalTrajectory,
    phi: &Vector,
    i: usize,
) -> Result<DesignJacobians> {
    design_jacobians_with(model, traj, phi, i, &FdOptions::default())
}

pub fn design_jacobians_with(
    model: &dyn SystemModel,
    traj: &NominalTrajectory,
    phi: &Vector,
    i: usize,
    opts: &FdOptions,
) -> Result<DesignJacobians> {
    traj.check(model)?;
    check_design(model, phi)?;
    if i >= phi.len() {
        return Err(Error::Config(format!(
            "design index {i} out of range for d = {}",
            phi.len()
        )));
    }
    let h = fd::step_for(phi[i], opts.design_rel_step, opts.design_abs_floor);
    let mut plus = phi.clone();
    plus[i] += h;
    let mut minus = phi.clone();
    minus[i] -= h;
    // Bounds apply to the design point, not to the probes.
    let (ap, _, cp) = linearize_unchecked(model, traj, &plus, opts);
    let (am, _, cm) = linearize_unchecked(model, traj, &minus, opts);
    let scale = 1.0 / (2.0 * h);
    let da: Vec<Matrix> = ap.iter().zip(&am).map(|(p, m)| (p - m) * scale).collect();
    let dc: Vec<Matrix> = cp.iter().zip(&cm).map(|(p, m)| (p - m) * scale).collect();
    for (t, m) in da.iter().enumerate() {
        check_finite(m, "dA", t)?;
    }
    for (t, m) in dc.iter().enumerate() {
        check_finite(m, "dC", t)?;
    }
    Ok(DesignJacobians { da, dc })
}

/// Linearization plus design Jacobians for every design component, the
/// latter computed concurrently.
pub fn linearize_full(model: &dyn SystemModel, traj: &NominalTrajectory, phi: &Vector) -> Result<LtvApprox> {
    let mut ltv = linearize(model, traj, phi)?;
    ltv.design = (0..phi.len())
        .into_par_iter()
        .map(|i| design_jacobians(model, traj, phi, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(ltv)
}
