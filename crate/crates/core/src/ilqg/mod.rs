//! Partially observed iLQG: EKF belief covariances along a reference,
//! a noise- and belief-aware backward pass, a noise-free forward pass with
//! backtracking, and a moving-average reference update.
//!
//! Iterates are compared by the model-predicted expected cost of running
//! the local feedback law around the reference,
//! `ℓ(x̄, ū) + ½Tr(J_xx,0 X₀) + Σ ½Tr(J_xx⁺W_t) + Σ ½Tr(Ξ_tΣ_t)`,
//! which is deterministic, unlike the cost of any sampled trajectory.

mod backward;
mod filter;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infoflow::{propagate_covariance, BeliefSeq};
use crate::linalg::{Matrix, Vector};
use crate::model::{linearize, CostModel, LtvApprox, NoiseSchedule, NominalTrajectory, SystemModel};

pub use backward::{backward_pass, BackwardPass, ControlLaw, QTerms};
pub use filter::{filter_means, measurement_gains, FeedbackController};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Stop when the relative expected-cost change falls below this.
    pub tolerance: f64,
    pub max_iter: usize,
    pub lambda_init: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda_factor: f64,
    /// Moving-average weight on the newest trajectory.
    pub alpha: f64,
    /// Step scales tried are `1, ½, …, 2^-(line_search_steps-1)`.
    pub line_search_steps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iter: 200,
            lambda_init: 1e-6,
            lambda_min: 1e-9,
            lambda_max: 1e9,
            lambda_factor: 10.0,
            alpha: 0.5,
            line_search_steps: 11,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tolerance > 0.0
            && (0.0..=1.0).contains(&self.alpha)
            && self.lambda_min > 0.0
            && self.lambda_min <= self.lambda_init
            && self.lambda_init <= self.lambda_max
            && self.lambda_factor > 1.0
            && self.line_search_steps > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid solver options {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostBreakdown {
    /// Noise-free cost along the reference.
    pub nominal: f64,
    /// Predicted change from applying the feedforward terms.
    pub delta_j: f64,
    /// `Σ ½Tr(Ξ_tΣ_t)`.
    pub value_of_information: f64,
    /// `Σ ½Tr(J_xx⁺W_t)`.
    pub process_noise: f64,
    /// `½Tr(J_xx,0 X₀)`.
    pub initial_uncertainty: f64,
}

impl CostBreakdown {
    /// Expected cost of the reference under its feedback law, without the
    /// predicted feedforward improvement.
    pub fn trajectory_cost(&self) -> f64 {
        self.nominal + self.value_of_information + self.process_noise + self.initial_uncertainty
    }

    pub fn expected_cost(&self) -> f64 {
        self.trajectory_cost() + self.delta_j
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    /// λ exceeded its ceiling; the best iterate so far is returned.
    RegularizationCeiling,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub final_lambda: f64,
    /// Trajectory cost of every accepted reference, starting with the initial one.
    pub cost_history: Vec<f64>,
    pub status: SolveStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ILQGSolution {
    pub law: ControlLaw,
    pub reference: NominalTrajectory,
    /// `J₀*`.
    pub expected_cost: f64,
    pub breakdown: CostBreakdown,
    pub xi: Vec<Matrix>,
    pub jx: Vec<Vector>,
    pub jxx: Vec<Matrix>,
    /// Posterior covariances `Σ_t` along the reference.
    pub covariances: Vec<Matrix>,
    pub diagnostics: Diagnostics,
}

impl ILQGSolution {
    pub fn converged(&self) -> bool {
        self.diagnostics.status == SolveStatus::Converged
    }
}

/// Everything derived from one reference trajectory.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub reference: NominalTrajectory,
    pub ltv: LtvApprox,
    pub belief: BeliefSeq,
    pub backward: BackwardPass,
    pub breakdown: CostBreakdown,
    /// Regularization needed for a positive-definite `Q_uu` (normally `lambda_min`).
    pub lambda: f64,
}

pub fn nominal_cost(cost: &dyn CostModel, phi: &Vector, traj: &NominalTrajectory) -> f64 {
    let t_max = traj.horizon();
    let running: f64 = (0..t_max)
        .map(|t| cost.running(t, &traj.states[t], &traj.inputs[t], phi))
        .sum();
    running + cost.terminal(&traj.states[t_max], phi)
}

/// Linearizes, propagates covariances and runs a backward pass at the
/// smallest regularization that keeps `Q_uu` positive definite.
pub fn evaluate(
    model: &dyn SystemModel,
    cost: &dyn CostModel,
    phi: &Vector,
    noise: &NoiseSchedule,
    reference: NominalTrajectory,
    opts: &SolverOptions,
) -> Result<Evaluation> {
    let ltv = linearize(model, &reference, phi)?;
    let belief = propagate_covariance(&ltv, noise)?;
    let mut lambda = opts.lambda_min;
    let backward = loop {
        match backward_pass(&ltv, cost, phi, &reference, &belief, noise, lambda) {
            Ok(bp) => break bp,
            Err(Error::NotPositiveDefinite { t }) => {
                lambda *= opts.lambda_factor;
                if lambda > opts.lambda_max {
                    return Err(Error::NotPositiveDefinite { t });
                }
            }
            Err(e) => return Err(e),
        }
    };
    let breakdown = CostBreakdown {
        nominal: nominal_cost(cost, phi, &reference),
        delta_j: backward.delta_j,
        value_of_information: backward.value_of_information,
        process_noise: backward.process_noise,
        initial_uncertainty: backward.initial_uncertainty,
    };
    Ok(Evaluation {
        reference,
        ltv,
        belief,
        backward,
        breakdown,
        lambda,
    })
}

/// Noise-free rollout of `u_t = ū_t + εk_t + K_t(x_t − x̄_t)` from the
/// reference's initial state. `None` when a state leaves the model's bounds.
pub fn rollout_candidate(
    model: &dyn SystemModel,
    phi: &Vector,
    law: &ControlLaw,
    reference: &NominalTrajectory,
    step: f64,
) -> Option<NominalTrajectory> {
    let t_max = reference.horizon();
    let mut states = Vec::with_capacity(t_max + 1);
    let mut inputs = Vec::with_capacity(t_max);
    states.push(reference.states[0].clone());
    for t in 0..t_max {
        let x = &states[t];
        let u = &reference.inputs[t] + &law.feedforward[t] * step + &law.feedback[t] * (x - &reference.states[t]);
        if u.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let next = model.step(x, &u, phi);
        if !model.state_in_bounds(&next) {
            return None;
        }
        inputs.push(u);
        states.push(next);
    }
    Some(NominalTrajectory { states, inputs })
}

/// Moving-average reference update `x̄ ← αμ + (1−α)x̄`, `ū ← αu + (1−α)ū`.
pub fn update_reference(old: &NominalTrajectory, means: &[Vector], inputs: &[Vector], alpha: f64) -> NominalTrajectory {
    let mix = |new: &Vector, old: &Vector| new * alpha + old * (1.0 - alpha);
    NominalTrajectory {
        states: means.iter().zip(&old.states).map(|(n, o)| mix(n, o)).collect(),
        inputs: inputs.iter().zip(&old.inputs).map(|(n, o)| mix(n, o)).collect(),
    }
}

/// Accepted line-search result.
#[derive(Debug, Clone)]
pub struct LineSearchStep {
    pub step: f64,
    pub evaluation: Evaluation,
}

/// Backtracking over `ε ∈ {1, ½, …}`. Each trial rolls out the law without
/// noise, blends it into the reference with weight `α` (the filtered means
/// equal the states on a noise-free rollout), and is accepted when its
/// expected trajectory cost is below `current_cost`. `None` signals the
/// caller to raise regularization.
#[allow(clippy::too_many_arguments)]
pub fn forward_pass(
    model: &dyn SystemModel,
    cost: &dyn CostModel,
    phi: &Vector,
    noise: &NoiseSchedule,
    law: &ControlLaw,
    reference: &NominalTrajectory,
    current_cost: f64,
    opts: &SolverOptions,
) -> Option<LineSearchStep> {
    let mut step = 1.0;
    for _ in 0..opts.line_search_steps {
        if let Some(candidate) = rollout_candidate(model, phi, law, reference, step) {
            let blended = update_reference(reference, &candidate.states, &candidate.inputs, opts.alpha);
            if let Ok(evaluation) = evaluate(model, cost, phi, noise, blended, opts) {
                let c = evaluation.breakdown.trajectory_cost();
                if c.is_finite() && c < current_cost {
                    return Some(LineSearchStep { step, evaluation });
                }
            }
        }
        step *= 0.5;
    }
    None
}

fn into_solution(eval: Evaluation, diagnostics: Diagnostics) -> ILQGSolution {
    ILQGSolution {
        expected_cost: eval.breakdown.expected_cost(),
        breakdown: eval.breakdown,
        law: eval.backward.law,
        reference: eval.reference,
        xi: eval.backward.xi,
        jx: eval.backward.jx,
        jxx: eval.backward.jxx,
        covariances: eval.belief.posterior,
        diagnostics,
    }
}

/// Runs partially observed iLQG from `initial` (or the zero-input rollout
/// from the mean initial state).
pub fn solve(
    model: &dyn SystemModel,
    cost: &dyn CostModel,
    phi: &Vector,
    initial: Option<NominalTrajectory>,
    opts: &SolverOptions,
) -> Result<ILQGSolution> {
    opts.validate()?;
    let noise = NoiseSchedule::from_model(model)?;
    let reference = initial.unwrap_or_else(|| NominalTrajectory::zero_input(model, phi));
    reference.check(model)?;
    if reference.states.iter().chain(&reference.inputs).any(|v| v.iter().any(|x| !x.is_finite())) {
        return Err(Error::NonFinite("initial trajectory".into()));
    }

    let mut eval = evaluate(model, cost, phi, &noise, reference, opts)?;
    let mut current = eval.breakdown.trajectory_cost();
    let mut history = vec![current];
    let mut lambda = opts.lambda_init;
    let mut iterations = 0;
    let mut status = SolveStatus::MaxIterations;

    while iterations < opts.max_iter {
        iterations += 1;
        let bp = match backward_pass(&eval.ltv, cost, phi, &eval.reference, &eval.belief, &noise, lambda) {
            Ok(bp) => bp,
            Err(Error::NotPositiveDefinite { .. }) => {
                lambda *= opts.lambda_factor;
                if lambda > opts.lambda_max {
                    status = SolveStatus::RegularizationCeiling;
                    break;
                }
                continue;
            }
            Err(e) => return Err(e),
        };
        let scale = current.abs().max(1e-12);
        if -bp.delta_j <= opts.tolerance * scale {
            status = SolveStatus::Converged;
            break;
        }
        match forward_pass(model, cost, phi, &noise, &bp.law, &eval.reference, current, opts) {
            Some(accepted) => {
                let next = accepted.evaluation.breakdown.trajectory_cost();
                let rel = (current - next) / scale;
                eval = accepted.evaluation;
                current = next;
                history.push(current);
                lambda = (lambda / opts.lambda_factor).max(opts.lambda_min);
                log::trace!("iLQG iter {iterations}: cost {current:.6e}, step {}, λ {lambda:.1e}", accepted.step);
                if rel < opts.tolerance {
                    status = SolveStatus::Converged;
                    break;
                }
            }
            None => {
                lambda *= opts.lambda_factor;
                if lambda > opts.lambda_max {
                    status = SolveStatus::RegularizationCeiling;
                    break;
                }
            }
        }
    }
    if status == SolveStatus::Converged {
        // Fold the residual feedforward into the reference so the returned
        // law's noise-free closed loop reproduces the reference.
        if let Some(polished) = rollout_candidate(model, phi, &eval.backward.law, &eval.reference, 1.0) {
            if let Ok(next) = evaluate(model, cost, phi, &noise, polished, opts) {
                let c = next.breakdown.trajectory_cost();
                if c <= current {
                    eval = next;
                    current = c;
                    history.push(current);
                }
            }
        }
    }
    Ok(into_solution(
        eval,
        Diagnostics {
            iterations,
            final_lambda: lambda,
            cost_history: history,
            status,
        },
    ))
}

/// Builds the output-feedback controller for a solution.
pub fn controller<'a>(model: &'a dyn SystemModel, phi: &Vector, solution: &ILQGSolution) -> Result<FeedbackController<'a>> {
    let noise = NoiseSchedule::from_model(model)?;
    let ltv = linearize(model, &solution.reference, phi)?;
    let belief = propagate_covariance(&ltv, &noise)?;
    let gains = measurement_gains(&ltv, &belief, &noise)?;
    Ok(FeedbackController::new(model, phi, solution.law.clone(), solution.reference.clone(), gains))
}
