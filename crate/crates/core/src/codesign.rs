//! Outer design loop: alternate an iLQG solve with a barrier-penalized
//! gradient step on the design parameters, minimizing directed information
//! while keeping the expected cost of every task below its bound.
//!
//! The objective is `Σ DI_i − β Σ ln(D_i − J₀*_i)`. The cost gradient only
//! follows the belief-covariance channel, `∂J₀*/∂Σ_t · ∂Σ_t/∂φ`, so every
//! candidate is re-solved before it is accepted: infeasible candidates and
//! failed inner solves are rejected, and with `require_descent` so are
//! candidates that increase the objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ilqg::{solve, ILQGSolution, SolveStatus, SolverOptions};
use crate::infoflow::{
    di_gradient, directed_information, precision_derivatives, propagate_covariance, PrecisionDerivSeq,
};
use crate::linalg::{trace_product, Matrix, Vector};
use crate::model::{linearize, linearize_full, CostModel, NoiseSchedule, NominalTrajectory, SystemModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodesignConfig {
    /// Initial design. Empty means "use the caller's default".
    pub design: Vec<f64>,
    /// Box bounds; fall back to the model's bounds when absent.
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    /// Performance bound `D` on the expected cost.
    pub bound: f64,
    /// Barrier weight `β`.
    pub barrier_weight: f64,
    /// Softening `γ` in the step size `h = tanh(D − J₀* + γ)`.
    pub softening: f64,
    /// Moving-average weight passed to the inner solver.
    pub alpha: f64,
    /// Learning-rate scale `η`.
    pub learning_rate: f64,
    pub max_iter: usize,
    /// Stop when `‖Δφ‖ < tolerance·‖φ‖`.
    pub tolerance: f64,
    /// Consecutive rejected steps before giving up.
    pub max_rejections: usize,
    /// Also reject feasible steps that increase the barrier objective.
    pub require_descent: bool,
    pub solver: SolverOptions,
}

impl Default for CodesignConfig {
    fn default() -> Self {
        Self {
            design: Vec::new(),
            lower: None,
            upper: None,
            bound: 250.0,
            barrier_weight: 1e4,
            softening: 0.1,
            alpha: 0.5,
            learning_rate: 50.0,
            max_iter: 100,
            tolerance: 1e-3,
            max_rejections: 10,
            require_descent: false,
            solver: SolverOptions::default(),
        }
    }
}

impl CodesignConfig {
    fn check_scalars(&self) -> Result<()> {
        let positive = [
            ("barrier_weight", self.barrier_weight),
            ("softening", self.softening),
            ("learning_rate", self.learning_rate),
            ("tolerance", self.tolerance),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("codesign.{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) || self.alpha == 0.0 {
            return Err(Error::Config(format!("codesign.alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if !self.bound.is_finite() {
            return Err(Error::Config("codesign.bound must be finite".into()));
        }
        if self.max_rejections == 0 {
            return Err(Error::Config("codesign.max_rejections must be at least 1".into()));
        }
        Ok(())
    }

    /// Resolves the box against `model`'s bounds and checks the initial design.
    pub fn resolve_bounds(&self, model: &dyn SystemModel) -> Result<(Vector, Vector)> {
        let d = model.dims().design;
        let from_model = model.design_bounds();
        let pick = |given: &Option<Vec<f64>>, fallback: Option<&Vector>, which: &str| -> Result<Vector> {
            match (given, fallback) {
                (Some(v), _) => Ok(Vector::from_column_slice(v)),
                (None, Some(v)) => Ok(v.clone()),
                (None, None) if d == 0 => Ok(Vector::zeros(0)),
                (None, None) => Err(Error::Config(format!("codesign.{which} bounds are required for this model"))),
            }
        };
        let lo = pick(&self.lower, from_model.as_ref().map(|b| &b.0), "lower")?;
        let hi = pick(&self.upper, from_model.as_ref().map(|b| &b.1), "upper")?;
        for (what, v) in [("lower", &lo), ("upper", &hi)] {
            if v.len() != d {
                return Err(Error::Dimension {
                    what: if what == "lower" { "codesign lower bounds" } else { "codesign upper bounds" },
                    expected: d.to_string(),
                    got: v.len().to_string(),
                });
            }
        }
        for i in 0..d {
            if !(lo[i] < hi[i]) {
                return Err(Error::Config(format!("codesign bounds: lower[{i}] = {} is not below upper[{i}] = {}", lo[i], hi[i])));
            }
        }
        Ok((lo, hi))
    }
}

/// `DI − β ln(D − J₀*)`; errors when `J₀* ≥ D`.
pub fn barrier_objective(di_bits: f64, cost: f64, bound: f64, beta: f64) -> Result<f64> {
    if !(cost < bound) {
        return Err(Error::Infeasible { cost, bound });
    }
    Ok(di_bits - beta * (bound - cost).ln())
}

/// Step size `h = tanh(D − J₀* + γ)`.
pub fn step_size(cost: f64, bound: f64, softening: f64) -> f64 {
    (bound - cost + softening).tanh()
}

/// `∂J₀*/∂φᵢ` through the belief covariances only:
/// `Σ_t ½Tr(Ξ_t ∂Σ_t/∂φᵢ)` with `∂Σ_t/∂φᵢ = sign·Σ_t∇ᵢΓ_tΣ_t`. The
/// analytically correct `sign` is −1; [`audit_covariance_sign`] checks it.
pub fn performance_gradient(xi: &[Matrix], posterior: &[Matrix], derivs: &[PrecisionDerivSeq], sign: f64) -> Result<Vec<f64>> {
    if xi.is_empty() {
        return Err(Error::Config("value-of-information matrices are missing".into()));
    }
    if posterior.len() < xi.len() {
        return Err(Error::Config(format!(
            "{} covariances for {} value-of-information matrices",
            posterior.len(),
            xi.len()
        )));
    }
    derivs
        .iter()
        .map(|pd| {
            if pd.dgamma.len() < xi.len() {
                return Err(Error::Config(format!(
                    "precision derivative for component {} covers {} of {} steps",
                    pd.component,
                    pd.dgamma.len(),
                    xi.len()
                )));
            }
            Ok(xi
                .iter()
                .enumerate()
                .map(|(t, x)| {
                    let s = &posterior[t];
                    0.5 * sign * trace_product(&(x * s), &(&pd.dgamma[t] * s))
                })
                .sum())
        })
        .collect()
}

/// Outcome of comparing the covariance-channel gradient with central
/// differences of `Σ ½Tr(Ξ_tΣ_t)` (trajectory and `Ξ` held fixed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignAudit {
    /// Sign `s` in `∂Σ/∂φ = s·Σ∇ΓΣ` that matches the differences.
    pub sign: f64,
    pub finite_difference: Vec<f64>,
    /// Gradient evaluated with `s = +1`.
    pub analytic_unsigned: Vec<f64>,
}

pub fn audit_covariance_sign(
    model: &dyn SystemModel,
    phi: &Vector,
    solution: &ILQGSolution,
    derivs: &[PrecisionDerivSeq],
) -> Result<SignAudit> {
    let noise = NoiseSchedule::from_model(model)?;
    let voi = |p: &Vector| -> Result<f64> {
        let ltv = linearize(model, &solution.reference, p)?;
        let belief = propagate_covariance(&ltv, &noise)?;
        Ok(solution
            .xi
            .iter()
            .enumerate()
            .map(|(t, x)| 0.5 * trace_product(x, &belief.posterior[t]))
            .sum())
    };
    let unsigned = performance_gradient(&solution.xi, &solution.covariances, derivs, 1.0)?;
    let bounds = model.design_bounds();
    let mut fd = Vec::with_capacity(phi.len());
    for i in 0..phi.len() {
        let h = 1e-4 * phi[i].abs().max(1e-2);
        let mut plus = phi.clone();
        let mut minus = phi.clone();
        plus[i] += h;
        minus[i] -= h;
        // one-sided at a bound of the design box
        if let Some((lo, hi)) = &bounds {
            plus[i] = plus[i].min(hi[i]);
            minus[i] = minus[i].max(lo[i]);
        }
        fd.push((voi(&plus)? - voi(&minus)?) / (plus[i] - minus[i]));
    }
    let agreement: f64 = fd.iter().zip(&unsigned).map(|(a, b)| a * b).sum();
    let sign = if agreement > 0.0 { 1.0 } else { -1.0 };
    Ok(SignAudit {
        sign,
        finite_difference: fd,
        analytic_unsigned: unsigned,
    })
}

fn clip(phi: &Vector, lo: &Vector, hi: &Vector) -> Vector {
    Vector::from_iterator(phi.len(), (0..phi.len()).map(|i| phi[i].clamp(lo[i], hi[i])))
}

/// One barrier-gradient step, `φ ← clip(φ − ηh(∂DI/∂φ + β/(D−J₀*)·∂J₀*/∂φ))`.
pub fn design_step(
    phi: &Vector,
    di_grad: &[f64],
    perf_grad: &[f64],
    cost: f64,
    bounds: (&Vector, &Vector),
    config: &CodesignConfig,
) -> Result<Vector> {
    if !(cost < config.bound) {
        return Err(Error::Infeasible { cost, bound: config.bound });
    }
    let h = step_size(cost, config.bound, config.softening);
    let weight = config.barrier_weight / (config.bound - cost);
    let step = Vector::from_iterator(phi.len(), (0..phi.len()).map(|i| di_grad[i] + weight * perf_grad[i]));
    let next = clip(&(phi - step * (config.learning_rate * h)), bounds.0, bounds.1);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("design step from {:?}", phi.as_slice())));
    }
    Ok(next)
}

/// A task the design must serve: plant, cost and its performance bound.
#[derive(Clone, Copy)]
pub struct Task<'a> {
    pub model: &'a dyn SystemModel,
    pub cost: &'a dyn CostModel,
    pub bound: f64,
}

/// Solve plus directed information and gradients at one design.
#[derive(Debug, Clone)]
pub struct DesignEvaluation {
    pub solution: ILQGSolution,
    pub di_bits: f64,
    pub di_gradient: Vec<f64>,
    /// Covariance-channel gradient with the audited sign applied.
    pub performance_gradient: Vec<f64>,
    pub derivs: Vec<PrecisionDerivSeq>,
}

pub fn evaluate_design(
    model: &dyn SystemModel,
    cost: &dyn CostModel,
    phi: &Vector,
    warm_start: Option<NominalTrajectory>,
    solver: &SolverOptions,
    sign: f64,
) -> Result<DesignEvaluation> {
    let solution = solve(model, cost, phi, warm_start, solver)?;
    let noise = NoiseSchedule::from_model(model)?;
    let ltv = linearize_full(model, &solution.reference, phi)?;
    let belief = propagate_covariance(&ltv, &noise)?;
    let di_bits = directed_information(&belief)?.total_bits;
    let derivs = precision_derivatives(&ltv, &noise, &belief)?;
    let di_gradient = di_gradient(&ltv, &belief, &derivs)?;
    let performance_gradient = performance_gradient(&solution.xi, &belief.posterior, &derivs, sign)?;
    Ok(DesignEvaluation {
        solution,
        di_bits,
        di_gradient,
        performance_gradient,
        derivs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub phi: Vec<f64>,
    /// `J₀*` per task.
    pub costs: Vec<f64>,
    /// Directed information summed over tasks, bits.
    pub di_bits: f64,
    /// Barrier objective; infinite for infeasible candidates.
    pub barrier: f64,
    pub di_gradient: Vec<f64>,
    /// `Σ_i β/(D_i − J_i) ∂J_i/∂φ`.
    pub barrier_gradient: Vec<f64>,
    /// Step size `h` used for the step leaving this iterate.
    pub step_size: f64,
    pub learning_rate: f64,
    pub accepted: bool,
    pub converged_inner: bool,
    pub note: String,
}

impl IterationRecord {
    pub fn total_cost(&self) -> f64 {
        self.costs.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Relative design change fell below tolerance.
    Converged,
    MaxIterations,
    /// Too many consecutive rejected steps.
    Stalled,
    /// The design vector is empty.
    NoDesign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodesignTrace {
    pub records: Vec<IterationRecord>,
    pub sign_audit: Option<SignAudit>,
    pub termination: Termination,
}

impl CodesignTrace {
    pub fn accepted(&self) -> impl Iterator<Item = &IterationRecord> {
        self.records.iter().filter(|r| r.accepted)
    }

    /// Last accepted iterate, where the outer loop came to rest. It can differ
    /// from the returned design, which is the best accepted one by barrier
    /// objective.
    pub fn terminal(&self) -> &IterationRecord {
        self.accepted().last().expect("the initial record is always accepted")
    }
}

#[derive(Debug, Clone)]
pub struct CodesignResult {
    /// Best feasible design by barrier objective.
    pub phi: Vector,
    pub trace: CodesignTrace,
    /// Final solutions at `phi`, one per task.
    pub solutions: Vec<ILQGSolution>,
    pub di_bits: f64,
}

impl CodesignResult {
    pub fn solution(&self) -> &ILQGSolution {
        &self.solutions[0]
    }
}

#[derive(Clone)]
struct Point {
    phi: Vector,
    evals: Vec<DesignEvaluation>,
    objective: f64,
}

impl Point {
    fn di(&self) -> f64 {
        self.evals.iter().map(|e| e.di_bits).sum()
    }

    fn converged(&self) -> bool {
        self.evals.iter().all(|e| e.solution.diagnostics.status == SolveStatus::Converged)
    }
}

fn objective(tasks: &[Task], evals: &[DesignEvaluation], beta: f64) -> f64 {
    let mut total = 0.0;
    for (task, e) in tasks.iter().zip(evals) {
        match barrier_objective(e.di_bits, e.solution.expected_cost, task.bound, beta) {
            Ok(v) => total += v,
            Err(_) => return f64::INFINITY,
        }
    }
    total
}

fn record(iteration: usize, point: &Point, tasks: &[Task], config: &CodesignConfig, eta: f64) -> IterationRecord {
    let d = point.phi.len();
    let mut di_gradient = vec![0.0; d];
    let mut barrier_gradient = vec![0.0; d];
    let mut slack = f64::INFINITY;
    for (task, e) in tasks.iter().zip(&point.evals) {
        let gap = task.bound - e.solution.expected_cost;
        slack = slack.min(gap);
        for i in 0..d {
            di_gradient[i] += e.di_gradient[i];
            barrier_gradient[i] += config.barrier_weight / gap * e.performance_gradient[i];
        }
    }
    IterationRecord {
        iteration,
        phi: point.phi.iter().copied().collect(),
        costs: point.evals.iter().map(|e| e.solution.expected_cost).collect(),
        di_bits: point.di(),
        barrier: point.objective,
        di_gradient,
        barrier_gradient,
        step_size: (slack + config.softening).tanh(),
        learning_rate: eta,
        accepted: false,
        converged_inner: point.converged(),
        note: String::new(),
    }
}

fn evaluate_point(
    tasks: &[Task],
    phi: Vector,
    warm: Option<&Point>,
    config: &CodesignConfig,
    sign: f64,
) -> Result<Point> {
    let mut solver = config.solver.clone();
    solver.alpha = config.alpha;
    let mut evals = Vec::with_capacity(tasks.len());
    for (k, task) in tasks.iter().enumerate() {
        let start = warm.map(|w| {
            let inputs = w.evals[k].solution.reference.inputs.clone();
            NominalTrajectory::from_inputs(task.model, &phi, task.model.initial_state(), inputs)
        });
        evals.push(evaluate_design(task.model, task.cost, &phi, start, &solver, sign)?);
    }
    let objective = objective(tasks, &evals, config.barrier_weight);
    Ok(Point { phi, evals, objective })
}

/// Single-task co-design with bound `config.bound`.
pub fn codesign(model: &dyn SystemModel, cost: &dyn CostModel, config: &CodesignConfig) -> Result<CodesignResult> {
    let task = Task {
        model,
        cost,
        bound: config.bound,
    };
    codesign_tasks(&[task], config, &mut |_| {})
}

/// Co-design over several tasks sharing one design vector. `observer` sees
/// every record as soon as it is produced.
pub fn codesign_tasks(
    tasks: &[Task],
    config: &CodesignConfig,
    observer: &mut dyn FnMut(&IterationRecord),
) -> Result<CodesignResult> {
    config.check_scalars()?;
    let first = tasks.first().ok_or_else(|| Error::Config("co-design needs at least one task".into()))?;
    let d = first.model.dims().design;
    if tasks.iter().any(|t| t.model.dims().design != d) {
        return Err(Error::Config("all tasks must share the design dimension".into()));
    }
    let (lo, hi) = config.resolve_bounds(first.model)?;
    if config.design.len() != d {
        return Err(Error::Dimension {
            what: "initial design",
            expected: d.to_string(),
            got: config.design.len().to_string(),
        });
    }
    let phi0 = Vector::from_column_slice(&config.design);
    for i in 0..d {
        if phi0[i] < lo[i] || phi0[i] > hi[i] {
            return Err(Error::DesignOutOfBounds {
                index: i,
                value: phi0[i],
                lo: lo[i],
                hi: hi[i],
            });
        }
    }

    let mut current = evaluate_point(tasks, phi0.clone(), None, config, -1.0)?;
    for (task, e) in tasks.iter().zip(&current.evals) {
        if !(e.solution.expected_cost < task.bound) {
            return Err(Error::Infeasible {
                cost: e.solution.expected_cost,
                bound: task.bound,
            });
        }
    }

    let sign_audit = if d > 0 {
        let audit = audit_covariance_sign(first.model, &phi0, &current.evals[0].solution, &current.evals[0].derivs)?;
        if audit.sign > 0.0 {
            log::warn!("covariance-derivative sign audit selected +1; re-evaluating the initial design");
            current = evaluate_point(tasks, phi0, None, config, audit.sign)?;
        }
        Some(audit)
    } else {
        None
    };
    let sign = sign_audit.as_ref().map_or(-1.0, |a| a.sign);

    let mut eta = config.learning_rate;
    let mut rec = record(0, &current, tasks, config, eta);
    rec.accepted = true;
    rec.note = "initial".into();
    observer(&rec);
    let mut records = vec![rec];

    let mut termination = Termination::MaxIterations;
    if d == 0 {
        termination = Termination::NoDesign;
    }
    let mut best = current.clone();
    let mut rejections = 0;
    let mut iteration = 0;
    while d > 0 && iteration < config.max_iter {
        iteration += 1;
        let slack = tasks
            .iter()
            .zip(&current.evals)
            .map(|(t, e)| t.bound - e.solution.expected_cost)
            .fold(f64::INFINITY, f64::min);
        let h = (slack + config.softening).tanh();
        let last = records.iter().rev().find(|r| r.accepted).expect("initial record is accepted");
        let grad = Vector::from_iterator(d, (0..d).map(|i| last.di_gradient[i] + last.barrier_gradient[i]));
        let candidate = clip(&(&current.phi - grad * (eta * h)), &lo, &hi);
        if candidate.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "design step at iteration {iteration} from {:?}",
                current.phi.as_slice()
            )));
        }
        let change = (&candidate - &current.phi).norm();
        if change < config.tolerance * current.phi.norm().max(f64::MIN_POSITIVE) {
            termination = Termination::Converged;
            break;
        }

        let outcome = evaluate_point(tasks, candidate.clone(), Some(&current), config, sign);
        let (accepted, rec) = match outcome {
            Ok(point) => {
                let mut rec = record(iteration, &point, tasks, config, eta);
                let slack_ok = point.objective.is_finite();
                let improves = !config.require_descent
                    || point.objective <= current.objective + 1e-9 * current.objective.abs().max(1.0);
                rec.accepted = slack_ok && improves && point.converged();
                rec.note = if !slack_ok {
                    "infeasible".into()
                } else if !point.converged() {
                    "inner solver did not converge".into()
                } else if !improves {
                    "objective increased".into()
                } else {
                    String::new()
                };
                let accepted = rec.accepted;
                if accepted {
                    if point.objective < best.objective {
                        best = point.clone();
                    }
                    current = point;
                }
                (accepted, rec)
            }
            Err(e) => {
                let rec = IterationRecord {
                    iteration,
                    phi: candidate.iter().copied().collect(),
                    costs: vec![f64::NAN; tasks.len()],
                    di_bits: f64::NAN,
                    barrier: f64::INFINITY,
                    di_gradient: vec![f64::NAN; d],
                    barrier_gradient: vec![f64::NAN; d],
                    step_size: f64::NAN,
                    learning_rate: eta,
                    accepted: false,
                    converged_inner: false,
                    note: format!("evaluation failed: {e}"),
                };
                (false, rec)
            }
        };
        log::debug!(
            "codesign iter {iteration}: phi {:?} accepted {accepted} ({})",
            rec.phi,
            rec.note
        );
        observer(&rec);
        records.push(rec);
        if accepted {
            rejections = 0;
            eta = (eta * 2.0).min(config.learning_rate);
        } else {
            rejections += 1;
            eta *= 0.5;
            if rejections >= config.max_rejections {
                termination = Termination::Stalled;
                break;
            }
        }
    }

    let di_bits = best.di();
    Ok(CodesignResult {
        phi: best.phi,
        trace: CodesignTrace {
            records,
            sign_audit,
            termination,
        },
        solutions: best.evals.into_iter().map(|e| e.solution).collect(),
        di_bits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn barrier_reference_values() {
        assert_eq!(barrier_objective(3.0, 1.0, 2.0, 0.0).unwrap(), 3.0);
        assert!((barrier_objective(4.0, 9.0, 10.0, 7.0).unwrap() - 4.0).abs() < 1e-15);
        let v = barrier_objective(5.0, 240.0, 250.0, 1e4).unwrap();
        assert!((v - (5.0 - 1e4 * 10f64.ln())).abs() < 1e-9);
        assert!((v + 23020.85).abs() < 0.01);
        assert!(matches!(barrier_objective(1.0, 250.0, 250.0, 1.0), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn step_size_shrinks_towards_bound() {
        let gaps = [10.0, 1.0, 0.1, 0.01, 1e-6];
        let hs: Vec<f64> = gaps.iter().map(|g| step_size(250.0 - g, 250.0, 0.1)).collect();
        assert!(hs.windows(2).all(|w| w[1] < w[0]));
        assert!(hs.iter().all(|h| *h > 0.0 && *h <= 1.0));
        assert!((step_size(250.0, 250.0, 0.1) - 0.1f64.tanh()).abs() < 1e-15);
    }

    fn config_1d() -> CodesignConfig {
        CodesignConfig {
            design: vec![1.0],
            bound: 10.0,
            barrier_weight: 1.0,
            learning_rate: 1.0,
            ..CodesignConfig::default()
        }
    }

    #[test]
    fn zero_gradient_leaves_design() {
        let (lo, hi) = (Vector::from_element(2, -5.0), Vector::from_element(2, 5.0));
        let phi = Vector::from_vec(vec![1.0, -2.0]);
        let next = design_step(&phi, &[0.0, 0.0], &[0.0, 0.0], 1.0, (&lo, &hi), &config_1d()).unwrap();
        assert_eq!(next, phi);
    }

    #[test]
    fn outward_step_is_clipped() {
        let (lo, hi) = (Vector::from_element(1, 0.0), Vector::from_element(1, 2.0));
        let phi = Vector::from_element(1, 1.9);
        let next = design_step(&phi, &[-100.0], &[0.0], 1.0, (&lo, &hi), &config_1d()).unwrap();
        assert_eq!(next[0], 2.0);
        let next = design_step(&phi, &[100.0], &[0.0], 1.0, (&lo, &hi), &config_1d()).unwrap();
        assert_eq!(next[0], 0.0);
    }

    #[test]
    fn step_descends_and_rejects_infeasible() {
        let (lo, hi) = (Vector::from_element(1, -10.0), Vector::from_element(1, 10.0));
        let phi = Vector::from_element(1, 0.0);
        let cfg = config_1d();
        let next = design_step(&phi, &[0.5], &[0.25], 8.0, (&lo, &hi), &cfg).unwrap();
        let h = step_size(8.0, 10.0, cfg.softening);
        assert!((next[0] + h * (0.5 + 0.25 / 2.0)).abs() < 1e-14);
        assert!(design_step(&phi, &[0.5], &[0.25], 10.0, (&lo, &hi), &cfg).is_err());
    }

    #[test]
    fn zero_value_of_information_gives_zero_gradient() {
        let xi = vec![Matrix::zeros(2, 2); 3];
        let sig = vec![Matrix::identity(2, 2); 4];
        let pd = PrecisionDerivSeq {
            component: 0,
            dgamma: vec![Matrix::identity(2, 2); 4],
            psi: Vec::new(),
            n: Vec::new(),
            n0: Vec::new(),
            n1: Vec::new(),
        };
        assert_eq!(performance_gradient(&xi, &sig, &[pd.clone()], -1.0).unwrap(), vec![0.0]);
        let xi = vec![Matrix::identity(2, 2); 3];
        let flat = PrecisionDerivSeq {
            dgamma: vec![Matrix::zeros(2, 2); 4],
            ..pd.clone()
        };
        assert_eq!(performance_gradient(&xi, &sig, &[flat], -1.0).unwrap(), vec![0.0]);
        // ½·3 steps·Tr(I) with the negative sign
        assert_eq!(performance_gradient(&xi, &sig, &[pd], -1.0).unwrap(), vec![-3.0]);
    }
}
