mod support;

use dicodesign::codesign::*;
use dicodesign::ilqg::{solve, SolverOptions};
use dicodesign::systems::{two_mass_model, QuadraticCost, TwoMassConfig};
use dicodesign::{Dims, Error, Matrix, SystemModel, Vector};

/// Double integrator whose scalar sensor `y = φ₀x + φ₁ẋ + v` is the design.
/// The reference and feedback law do not depend on the sensor, so the
/// expected cost varies with `φ` only through the belief covariances.
struct SensorDesign {
    a: Matrix,
    b: Matrix,
}

impl SensorDesign {
    fn new() -> Self {
        let dt = 0.1;
        Self {
            a: Matrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]),
            b: Matrix::from_row_slice(2, 1, &[0.0, dt]),
        }
    }

    fn cost(scale: f64) -> QuadraticCost {
        QuadraticCost {
            q: Matrix::identity(2, 2) * scale,
            r: Matrix::identity(1, 1) * 0.1,
            qf: Matrix::identity(2, 2) * (10.0 * scale),
        }
    }
}

impl SystemModel for SensorDesign {
    fn dims(&self) -> Dims {
        Dims {
            state: 2,
            input: 1,
            obs: 1,
            design: 2,
        }
    }

    fn horizon(&self) -> usize {
        30
    }

    fn step(&self, x: &Vector, u: &Vector, _phi: &Vector) -> Vector {
        &self.a * x + &self.b * u
    }

    fn observe(&self, x: &Vector, phi: &Vector) -> Vector {
        Vector::from_vec(vec![phi[0] * x[0] + phi[1] * x[1]])
    }

    fn process_noise(&self, _t: usize) -> Matrix {
        Matrix::from_diagonal(&Vector::from_vec(vec![1e-4, 1e-3]))
    }

    fn observation_noise(&self, _t: usize) -> Matrix {
        Matrix::identity(1, 1) * 1e-2
    }

    fn initial_covariance(&self) -> Matrix {
        Matrix::identity(2, 2) * 0.1
    }

    fn initial_state(&self) -> Vector {
        Vector::from_vec(vec![1.0, 0.0])
    }

    fn design_bounds(&self) -> Option<(Vector, Vector)> {
        Some((Vector::from_element(2, 0.05), Vector::from_element(2, 5.0)))
    }
}

fn expected_cost(model: &SensorDesign, cost: &QuadraticCost, phi: &[f64]) -> f64 {
    solve(model, cost, &Vector::from_column_slice(phi), None, &SolverOptions::default())
        .unwrap()
        .expected_cost
}

fn sensor_config(bound: f64) -> CodesignConfig {
    CodesignConfig {
        design: vec![2.0, 2.0],
        bound,
        barrier_weight: 1.0,
        learning_rate: 0.05,
        max_iter: 40,
        tolerance: 1e-4,
        ..CodesignConfig::default()
    }
}

fn barrier_at(model: &SensorDesign, cost: &QuadraticCost, phi: &Vector, config: &CodesignConfig) -> (f64, Vec<f64>) {
    let eval = evaluate_design(model, cost, phi, None, &config.solver, -1.0).unwrap();
    let j = eval.solution.expected_cost;
    let value = barrier_objective(eval.di_bits, j, config.bound, config.barrier_weight).unwrap();
    let weight = config.barrier_weight / (config.bound - j);
    let grad = (0..phi.len())
        .map(|i| eval.di_gradient[i] + weight * eval.performance_gradient[i])
        .collect();
    (value, grad)
}

#[test]
fn covariance_channel_gradient_matches_resolved_cost() {
    let model = SensorDesign::new();
    let cost = SensorDesign::cost(1.0);
    let phi = Vector::from_vec(vec![1.5, 0.7]);
    let eval = evaluate_design(&model, &cost, &phi, None, &SolverOptions::default(), -1.0).unwrap();
    for i in 0..2 {
        let h = 1e-4 * phi[i];
        let mut plus = phi.clone();
        let mut minus = phi.clone();
        plus[i] += h;
        minus[i] -= h;
        let fd = (expected_cost(&model, &cost, plus.as_slice()) - expected_cost(&model, &cost, minus.as_slice())) / (2.0 * h);
        let analytic = eval.performance_gradient[i];
        assert!(support::rel_err(analytic, fd, 1e-8) < 1e-4, "component {i}: analytic {analytic}, resolved {fd}");
    }
}

#[test]
fn barrier_step_is_first_order_consistent() {
    let model = SensorDesign::new();
    let cost = SensorDesign::cost(1.0);
    let j0 = expected_cost(&model, &cost, &[2.0, 2.0]);
    let config = sensor_config(1.5 * j0);
    let phi = Vector::from_vec(vec![2.0, 2.0]);
    let (f0, grad) = barrier_at(&model, &cost, &phi, &config);
    let g = Vector::from_vec(grad);
    for eps in [1e-4, 1e-5] {
        let next = &phi - &g * eps;
        let (f1, _) = barrier_at(&model, &cost, &next, &config);
        let predicted = -eps * g.norm_squared();
        let ratio = (f1 - f0) / predicted;
        assert!((ratio - 1.0).abs() < 1e-2, "eps {eps}: actual/predicted = {ratio}");
    }
}

#[test]
fn descent_mode_iterates_are_feasible_monotone_and_in_bounds() {
    let model = SensorDesign::new();
    let cost = SensorDesign::cost(1.0);
    let j0 = expected_cost(&model, &cost, &[2.0, 2.0]);
    let config = CodesignConfig {
        require_descent: true,
        ..sensor_config(1.5 * j0)
    };
    let result = codesign(&model, &cost, &config).unwrap();
    let trace = &result.trace;
    assert!(trace.accepted().count() > 3);
    let mut previous = f64::INFINITY;
    for r in trace.accepted() {
        assert!(r.total_cost() < config.bound);
        assert!(r.barrier <= previous + 1e-9 * previous.abs().max(1.0), "barrier rose to {}", r.barrier);
        previous = r.barrier;
    }
    for r in &trace.records {
        assert!(r.phi.iter().all(|&v| (0.05..=5.0).contains(&v)));
    }
    let first = &trace.records[0];
    assert!(result.di_bits < first.di_bits);
    assert_eq!(trace.sign_audit.as_ref().unwrap().sign, -1.0);
}

#[test]
fn default_mode_keeps_accepted_iterates_feasible() {
    let model = SensorDesign::new();
    let cost = SensorDesign::cost(1.0);
    let j0 = expected_cost(&model, &cost, &[2.0, 2.0]);
    let config = sensor_config(1.5 * j0);
    let result = codesign(&model, &cost, &config).unwrap();
    for r in &result.trace.records {
        assert_eq!(r.accepted, r.total_cost() < config.bound && r.converged_inner);
    }
    // The returned design is the best accepted one by barrier objective.
    let best = result
        .trace
        .accepted()
        .min_by(|a, b| a.barrier.total_cmp(&b.barrier))
        .unwrap();
    assert_eq!(result.phi.as_slice(), best.phi.as_slice());
}

#[test]
fn shared_design_serves_every_task() {
    let model = SensorDesign::new();
    let easy = SensorDesign::cost(1.0);
    let hard = SensorDesign::cost(3.0);
    let bounds = [1.5 * expected_cost(&model, &easy, &[2.0, 2.0]), 1.2 * expected_cost(&model, &hard, &[2.0, 2.0])];
    let tasks = [
        Task {
            model: &model,
            cost: &easy,
            bound: bounds[0],
        },
        Task {
            model: &model,
            cost: &hard,
            bound: bounds[1],
        },
    ];
    let mut streamed = 0;
    let result = codesign_tasks(&tasks, &sensor_config(0.0), &mut |_| streamed += 1).unwrap();
    assert_eq!(streamed, result.trace.records.len());
    assert_eq!(result.solutions.len(), 2);
    for r in result.trace.accepted() {
        assert_eq!(r.costs.len(), 2);
        assert!(r.costs[0] < bounds[0] && r.costs[1] < bounds[1]);
    }
    let first = &result.trace.records[0];
    assert!(result.di_bits < first.di_bits);
}

#[test]
fn rejected_steps_halve_the_learning_rate_until_stalled() {
    let model = SensorDesign::new();
    let cost = SensorDesign::cost(1.0);
    let j0 = expected_cost(&model, &cost, &[2.0, 2.0]);
    let config = CodesignConfig {
        learning_rate: 1e6,
        max_rejections: 3,
        ..sensor_config(j0 + 1e-3)
    };
    let result = codesign(&model, &cost, &config).unwrap();
    let trace = &result.trace;
    assert_eq!(trace.termination, Termination::Stalled);
    assert_eq!(trace.records.len(), 4);
    for (k, r) in trace.records[1..].iter().enumerate() {
        assert!(!r.accepted);
        assert_eq!(r.learning_rate, 1e6 / 2f64.powi(k as i32));
    }
    assert_eq!(result.phi.as_slice(), &[2.0, 2.0]);
}

#[test]
fn design_free_model_returns_single_record() {
    let mut rng = support::rng(5);
    let (sys, cost) = support::random_lq(&mut rng, 2, 1, 10);
    let j = solve(&sys, &cost, &Vector::zeros(0), None, &SolverOptions::default()).unwrap().expected_cost;
    let config = CodesignConfig {
        bound: j + 1.0,
        ..CodesignConfig::default()
    };
    let result = codesign(&sys, &cost, &config).unwrap();
    assert_eq!(result.trace.termination, Termination::NoDesign);
    assert_eq!(result.trace.records.len(), 1);
    assert!(result.trace.sign_audit.is_none());
}

#[test]
fn infeasible_or_out_of_box_start_is_an_error() {
    let (model, cost) = two_mass_model(TwoMassConfig::default()).unwrap();
    let config = CodesignConfig {
        design: vec![500.0, 500.0],
        bound: 10.0,
        ..CodesignConfig::default()
    };
    match codesign(&model, &cost, &config) {
        Err(Error::Infeasible { cost, bound }) => assert!(cost > bound && bound == 10.0),
        other => panic!("expected infeasible start, got {other:?}"),
    }
    let config = CodesignConfig {
        design: vec![700.0, 500.0],
        ..CodesignConfig::default()
    };
    assert!(matches!(codesign(&model, &cost, &config), Err(Error::DesignOutOfBounds { index: 0, .. })));
}

#[test]
fn two_mass_sign_audit_selects_negative_sign() {
    let (model, cost) = two_mass_model(TwoMassConfig::default()).unwrap();
    let phi = Vector::from_vec(vec![500.0, 500.0]);
    let eval = evaluate_design(&model, &cost, &phi, None, &SolverOptions::default(), -1.0).unwrap();
    let audit = audit_covariance_sign(&model, &phi, &eval.solution, &eval.derivs).unwrap();
    assert_eq!(audit.sign, -1.0);
    for i in 0..2 {
        let signed = -audit.analytic_unsigned[i];
        assert!(support::rel_err(signed, audit.finite_difference[i], 1e-6) < 1e-3);
        assert_eq!(signed, eval.performance_gradient[i]);
    }
}

#[test]
fn descent_only_mode_is_monotone_on_two_mass() {
    let (model, cost) = two_mass_model(TwoMassConfig::default()).unwrap();
    let config = CodesignConfig {
        design: vec![500.0, 500.0],
        require_descent: true,
        max_iter: 15,
        ..CodesignConfig::default()
    };
    let result = codesign(&model, &cost, &config).unwrap();
    let mut previous = f64::INFINITY;
    for r in result.trace.accepted() {
        assert!(r.total_cost() < 250.0);
        assert!(r.barrier <= previous + 1e-9 * previous.abs());
        previous = r.barrier;
    }
}
