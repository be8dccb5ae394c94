use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{CostModel, NoiseSchedule, SystemModel};
use crate::error::Result;
use crate::linalg::{psd_factor, Matrix, Vector};

/// Output-feedback policy. Receives the observation at each step and
/// returns the commanded input; any state estimation happens inside.
pub trait Policy {
    fn reset(&mut self) {}
    fn control(&mut self, t: usize, y: &Vector) -> Vector;
}

impl<F> Policy for F
where
    F: FnMut(usize, &Vector) -> Vector,
{
    fn control(&mut self, t: usize, y: &Vector) -> Vector {
        self(t, y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutOptions {
    pub seed: u64,
    /// Enables initial-state, process and observation noise.
    pub noise_on: bool,
    /// Replaces `X₀` when sampling the initial state.
    pub initial_covariance: Option<Matrix>,
    /// Variance of additive Gaussian noise on every applied input.
    pub control_noise: f64,
}

impl RolloutOptions {
    pub fn noiseless() -> Self {
        Self {
            seed: 0,
            noise_on: false,
            initial_covariance: None,
            control_noise: 0.0,
        }
    }

    pub fn seeded(seed: u64) -> Self {
        Self {
            seed,
            noise_on: true,
            initial_covariance: None,
            control_noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub states: Vec<Vector>,
    /// Inputs actually applied to the plant (after control noise).
    pub inputs: Vec<Vector>,
    pub observations: Vec<Vector>,
    /// `Σ ℓ_t + ℓ_T` along the sample; partial sum when divergent.
    pub cost: f64,
    /// The state left the model's declared bounds and the rollout stopped.
    pub divergent: bool,
}

fn sample(rng: &mut ChaCha8Rng, factor: &Matrix) -> Vector {
    let z = Vector::from_iterator(factor.ncols(), (0..factor.ncols()).map(|_| StandardNormal.sample(rng)));
    factor * z
}

/// Simulates the closed loop `x_{t+1} = f(x_t, u_t; φ) + w_t`,
/// `y_t = g(x_t; φ) + v_t`, `u_t = policy(t, y_t)`.
///
/// The output is a deterministic function of the arguments and `opts.seed`.
pub fn rollout(
    model: &dyn SystemModel,
    cost: &dyn CostModel,
    phi: &Vector,
    policy: &mut dyn Policy,
    opts: &RolloutOptions,
) -> Result<RolloutResult> {
    let noise = NoiseSchedule::from_model(model)?;
    let t_max = model.horizon();
    let dims = model.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    policy.reset();

    let mut x = model.initial_state();
    if opts.noise_on || opts.initial_covariance.is_some() {
        let cov = opts.initial_covariance.as_ref().unwrap_or(&noise.initial);
        x += sample(&mut rng, &psd_factor(cov));
    }
    let w_factors: Vec<Matrix> = if opts.noise_on {
        noise.process.iter().map(psd_factor).collect()
    } else {
        Vec::new()
    };
    let v_factors: Vec<Matrix> = if opts.noise_on {
        noise.observation.iter().map(psd_factor).collect()
    } else {
        Vec::new()
    };
    let u_factor = Matrix::identity(dims.input, dims.input) * opts.control_noise.max(0.0).sqrt();

    let mut states = vec![x.clone()];
    let mut inputs = Vec::with_capacity(t_max);
    let mut observations = Vec::with_capacity(t_max + 1);
    let mut total = 0.0;

    if !model.state_in_bounds(&x) {
        return Ok(RolloutResult { states, inputs, observations, cost: total, divergent: true });
    }

    for t in 0..t_max {
        let mut y = model.observe(&x, phi);
        if opts.noise_on {
            y += sample(&mut rng, &v_factors[t]);
        }
        let mut u = policy.control(t, &y);
        observations.push(y);
        if opts.control_noise > 0.0 {
            u += sample(&mut rng, &u_factor);
        }
        total += cost.running(t, &x, &u, phi);
        let mut next = model.step(&x, &u, phi);
        if opts.noise_on {
            next += sample(&mut rng, &w_factors[t]);
        }
        inputs.push(u);
        x = next;
        states.push(x.clone());
        if !model.state_in_bounds(&x) {
            return Ok(RolloutResult { states, inputs, observations, cost: total, divergent: true });
        }
    }
    let mut y = model.observe(&x, phi);
    if opts.noise_on {
        y += sample(&mut rng, &v_factors[t_max]);
    }
    observations.push(y);
    total += cost.terminal(&x, phi);
    Ok(RolloutResult {
        states,
        inputs,
        observations,
        cost: total,
        divergent: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::test_models::Linear;

    struct Zero;
    impl CostModel for Zero {
        fn running(&self, _t: usize, _x: &Vector, _u: &Vector, _phi: &Vector) -> f64 {
            0.0
        }
        fn terminal(&self, _x: &Vector, _phi: &Vector) -> f64 {
            0.0
        }
    }

    fn identity_model(horizon: usize) -> Linear {
        Linear {
            f: Matrix::identity(2, 2),
            g: Matrix::zeros(2, 1),
            h: Matrix::identity(2, 2),
            w: Matrix::identity(2, 2),
            v: Matrix::identity(2, 2),
            x0: Matrix::identity(2, 2),
            mean0: Vector::from_vec(vec![1.0, -2.0]),
            horizon,
        }
    }

    #[test]
    fn noiseless_identity_holds_state() {
        let m = identity_model(10);
        let mut zero = |_t: usize, _y: &Vector| Vector::zeros(1);
        let r = rollout(&m, &Zero, &Vector::zeros(0), &mut zero, &RolloutOptions::noiseless()).unwrap();
        assert_eq!(r.states.len(), 11);
        assert!(r.states.iter().all(|x| x == &m.mean0));
        assert!(!r.divergent);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let m = identity_model(20);
        let mut zero = |_t: usize, _y: &Vector| Vector::zeros(1);
        let a = rollout(&m, &Zero, &Vector::zeros(0), &mut zero, &RolloutOptions::seeded(42)).unwrap();
        let b = rollout(&m, &Zero, &Vector::zeros(0), &mut zero, &RolloutOptions::seeded(42)).unwrap();
        assert_eq!(a, b);
        let c = rollout(&m, &Zero, &Vector::zeros(0), &mut zero, &RolloutOptions::seeded(43)).unwrap();
        assert_ne!(a.states, c.states);
    }

    #[test]
    fn divergent_rollout_is_truncated() {
        let mut m = identity_model(50);
        m.f = Matrix::identity(2, 2) * 1e80;
        let mut zero = |_t: usize, _y: &Vector| Vector::zeros(1);
        let r = rollout(&m, &Zero, &Vector::zeros(0), &mut zero, &RolloutOptions::noiseless()).unwrap();
        assert!(r.divergent);
        assert!(r.states.len() < 51);
    }
}
