use crate::error::{Error, Result};
use crate::infoflow::BeliefSeq;
use crate::linalg::{spd_inverse, Matrix, Vector};
use crate::model::{LtvApprox, NoiseSchedule, NominalTrajectory, Policy, SystemModel};

use super::ControlLaw;

/// Measurement gains `L_t = Σ_t C_t' V_t⁻¹` from precomputed covariances.
pub fn measurement_gains(ltv: &LtvApprox, belief: &BeliefSeq, noise: &NoiseSchedule) -> Result<Vec<Matrix>> {
    (0..=ltv.horizon())
        .map(|t| {
            let v_inv = spd_inverse(&noise.observation[t], "V_t", t)?;
            Ok(&belief.posterior[t] * ltv.c[t].transpose() * v_inv)
        })
        .collect()
}

/// Filter state shared by the batch filter and the closed-loop controller:
/// predicts through `f`, corrects with the innovation against `g` at the
/// predicted mean, using gains fixed along the reference.
#[derive(Debug, Clone)]
struct MeanFilter {
    gains: Vec<Matrix>,
    predicted: Vector,
}

impl MeanFilter {
    fn update(&mut self, model: &dyn SystemModel, phi: &Vector, t: usize, y: &Vector) -> Vector {
        let innovation = y - model.observe(&self.predicted, phi);
        &self.predicted + &self.gains[t] * innovation
    }

    fn predict(&mut self, model: &dyn SystemModel, phi: &Vector, mean: &Vector, u: &Vector) {
        self.predicted = model.step(mean, u, phi);
    }
}

/// Posterior means `μ_t` along a rollout, given its observations and the
/// inputs that the controller commanded. The prior mean of the initial state
/// is the reference's first state.
#[allow(clippy::too_many_arguments)]
pub fn filter_means(
    model: &dyn SystemModel,
    phi: &Vector,
    ltv: &LtvApprox,
    belief: &BeliefSeq,
    noise: &NoiseSchedule,
    observations: &[Vector],
    inputs: &[Vector],
    reference: &NominalTrajectory,
) -> Result<Vec<Vector>> {
    if inputs.len() + 1 < observations.len() {
        return Err(Error::Dimension {
            what: "filter inputs",
            expected: format!("at least {}", observations.len().saturating_sub(1)),
            got: inputs.len().to_string(),
        });
    }
    let mut filter = MeanFilter {
        gains: measurement_gains(ltv, belief, noise)?,
        predicted: reference.states[0].clone(),
    };
    let mut means = Vec::with_capacity(observations.len());
    for (t, y) in observations.iter().enumerate() {
        let mean = filter.update(model, phi, t, y);
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("filtered mean at step {t}")));
        }
        if t < inputs.len() {
            filter.predict(model, phi, &mean, &inputs[t]);
        }
        means.push(mean);
    }
    Ok(means)
}

/// Output-feedback controller `u_t = ū_t + k_t + K_t(μ_t − x̄_t)` with an
/// internal EKF mean estimate.
#[derive(Clone)]
pub struct FeedbackController<'a> {
    model: &'a dyn SystemModel,
    phi: Vector,
    law: ControlLaw,
    reference: NominalTrajectory,
    filter: MeanFilter,
    /// Estimates produced so far in the current rollout.
    pub means: Vec<Vector>,
}

impl<'a> FeedbackController<'a> {
    pub fn new(
        model: &'a dyn SystemModel,
        phi: &Vector,
        law: ControlLaw,
        reference: NominalTrajectory,
        gains: Vec<Matrix>,
    ) -> Self {
        let predicted = reference.states[0].clone();
        Self {
            model,
            phi: phi.clone(),
            law,
            reference,
            filter: MeanFilter { gains, predicted },
            means: Vec::new(),
        }
    }

    pub fn measurement_gains(&self) -> &[Matrix] {
        &self.filter.gains
    }

    /// Measurement update for the terminal observation, which no control
    /// step consumes.
    pub fn finish(&mut self, y_final: &Vector) {
        let t = self.means.len();
        let mean = self.filter.update(self.model, &self.phi, t, y_final);
        self.means.push(mean);
    }
}

impl Policy for FeedbackController<'_> {
    fn reset(&mut self) {
        self.filter.predicted = self.reference.states[0].clone();
        self.means.clear();
    }

    fn control(&mut self, t: usize, y: &Vector) -> Vector {
        let mean = self.filter.update(self.model, &self.phi, t, y);
        let u = &self.reference.inputs[t] + &self.law.feedforward[t] + &self.law.feedback[t] * (&mean - &self.reference.states[t]);
        self.filter.predict(self.model, &self.phi, &mean, &u);
        self.means.push(mean);
        u
    }
}
