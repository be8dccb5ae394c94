mod support;

use dicodesign::ilqg::{controller, solve, SolverOptions};
use dicodesign::infoflow::{directed_information, propagate_covariance};
use dicodesign::model::{fd, linearize, rollout, NoiseSchedule, RolloutOptions};
use dicodesign::systems::*;
use dicodesign::{CostModel, Matrix, SystemModel, Vector};

fn two_mass() -> (TwoMass, TwoMassCost) {
    two_mass_model(TwoMassConfig::default()).unwrap()
}

fn zero_input_trajectory(model: &dyn SystemModel, phi: &Vector, x0: Vector, steps: usize) -> Vec<Vector> {
    let u = Vector::zeros(model.dims().input);
    let mut xs = vec![x0];
    for _ in 0..steps {
        let next = model.step(xs.last().unwrap(), &u, phi);
        xs.push(next);
    }
    xs
}

#[test]
fn two_mass_configuration_constants() {
    let cfg = TwoMassConfig::default();
    assert_eq!((cfg.m1, cfg.m2, cfg.b1, cfg.b2), (0.8, 0.4, 60.0, 35.0));
    assert_eq!((cfg.k1_bounds, cfg.k2_bounds), ([50.0, 600.0], [100.0, 600.0]));
    let (model, _) = two_mass();
    let w = model.process_noise(0);
    let expected_w = [1e-7, 5e-3, 1e-7, 1e-2, 0.0];
    for i in 0..5 {
        assert_eq!(w[(i, i)], expected_w[i]);
    }
    let v = model.observation_noise(0);
    assert_eq!((v[(0, 0)], v[(1, 1)]), (1e-3, 1e-2));
    assert_eq!(model.environment_states(), vec![4]);
}

#[test]
fn two_mass_jacobians_match_finite_differences() {
    let (model, _) = two_mass();
    let phi = Vector::from_vec(vec![320.0, 450.0]);
    for x in [
        Vector::from_vec(vec![0.05, 0.3, 0.09, -0.2, 0.1]),
        Vector::from_vec(vec![0.2, 0.0, 0.14, 0.1, 0.1]),
        Vector::from_vec(vec![-0.1, 0.1, -0.05, 0.0, 0.1]),
    ] {
        let u = Vector::from_vec(vec![3.0]);
        let (a, b) = model.step_jacobians(&x, &u, &phi).unwrap();
        let a_fd = fd::jacobian(|z| model.step(z, &u, &phi), &x, 1e-6, 1e-7);
        let b_fd = fd::jacobian(|z| model.step(&x, z, &phi), &u, 1e-6, 1e-7);
        assert!((&a - &a_fd).amax() < 1e-6, "A mismatch {}", (&a - &a_fd).amax());
        assert!((&b - &b_fd).amax() < 1e-6);
        let c = model.observe_jacobian(&x, &phi).unwrap();
        let c_fd = fd::jacobian(|z| model.observe(z, &phi), &x, 1e-6, 1e-7);
        assert!((&c - &c_fd).amax() < 1e-6);
    }
}

#[test]
fn two_mass_far_from_wall_settles_to_spring_equilibrium() {
    let config = TwoMassConfig {
        wall_mean: 5.0,
        ..TwoMassConfig::default()
    };
    let (model, _) = two_mass_model(config.clone()).unwrap();
    let phi = config.design();
    let x0 = Vector::from_vec(vec![0.05, 0.0, -0.02, 0.0, 5.0]);
    let xs = zero_input_trajectory(&model, &phi, x0, 3000);
    for x in &xs {
        assert!(model.contact_force(x, &phi) <= phi[1] * config.gamma / 2.0);
    }
    // The residual smoothed contact force only pushes both masses slowly
    // away from the wall against the dampers; the spring itself is relaxed.
    let last = xs.last().unwrap();
    let drift = model.contact_force(last, &phi) / (config.b1 + config.b2);
    assert!(last[1].abs() <= drift * 1.01 && last[3].abs() <= drift * 1.01);
    assert!((last[0] - last[2]).abs() <= model.contact_force(last, &phi) / phi[0] + 1e-9);
}

#[test]
fn two_mass_is_passive_without_input() {
    let (model, _) = two_mass();
    for (k1, k2) in [(50.0, 100.0), (500.0, 500.0), (600.0, 600.0)] {
        let phi = Vector::from_vec(vec![k1, k2]);
        for x0 in [
            Vector::from_vec(vec![0.3, 1.0, 0.2, 2.0, 0.1]),
            Vector::from_vec(vec![0.0, 0.0, 0.25, 0.0, 0.1]),
            Vector::from_vec(vec![-0.2, -3.0, 0.0, 4.0, 0.1]),
        ] {
            let xs = zero_input_trajectory(&model, &phi, x0, 400);
            for w in xs.windows(2) {
                let (e0, e1) = (model.energy(&w[0], &phi), model.energy(&w[1], &phi));
                assert!(e1 <= e0 + 1e-9, "energy rose from {e0} to {e1} at K = ({k1}, {k2})");
            }
        }
    }
}

#[test]
fn smoothed_contact_force_converges_to_hinge() {
    let (model, _) = two_mass();
    let phi = TwoMassConfig::default().design();
    let xs = zero_input_trajectory(&model, &phi, Vector::from_vec(vec![0.25, 0.0, 0.2, 0.0, 0.1]), 100);
    let mut previous = f64::INFINITY;
    for gamma in [0.1, 0.01, 0.001] {
        let err = xs
            .iter()
            .map(|x| (phi[1] * smooth_max(x[2] - x[4], gamma) - phi[1] * (x[2] - x[4]).max(0.0)).abs())
            .fold(0.0, f64::max);
        assert!(err <= phi[1] * gamma / 2.0 + 1e-12);
        assert!(err < previous);
        previous = err;
    }
}

#[test]
fn wall_variance_shrinks_only_in_contact() {
    let (model, cost) = two_mass();
    let phi = TwoMassConfig::default().design();
    let solution = solve(&model, &cost, &phi, None, &SolverOptions::default()).unwrap();
    let sigma = &solution.covariances;
    let mut contact_steps = 0;
    for t in 0..solution.reference.horizon() {
        if model.contact_force(&solution.reference.states[t + 1], &phi) > 1.0 {
            contact_steps += 1;
            assert!(sigma[t + 1][(4, 4)] < sigma[t][(4, 4)], "no wall information at step {t}");
        }
    }
    assert!(contact_steps > 10);

    // Wall out of reach with a sharp contact model: the prior is untouched.
    let config = TwoMassConfig {
        wall_mean: 5.0,
        gamma: 1e-3,
        ..TwoMassConfig::default()
    };
    let (far, far_cost) = two_mass_model(config).unwrap();
    let solution = solve(&far, &far_cost, &phi, None, &SolverOptions::default()).unwrap();
    let prior = far.initial_covariance()[(4, 4)];
    for s in &solution.covariances {
        assert!(s[(4, 4)] >= prior - 1e-12);
    }
}

fn door(config: DoorConfig) -> (DoorAnalog, DoorCost) {
    door_analog_model(config).unwrap()
}

fn door_rest_state(model: &DoorAnalog, theta: f64) -> Vector {
    let [q1, q2] = model.matching_pose(theta).unwrap();
    let hinge = model.nominal_hinge();
    Vector::from_vec(vec![q1, q2, 0.0, 0.0, theta, 0.0, hinge.x, hinge.y])
}

#[test]
fn door_jacobians_match_finite_differences() {
    let (model, _) = door(DoorConfig::default());
    let phi = Vector::from_vec(vec![700.0, 300.0]);
    let mut x = model.initial_state();
    x[2] = 0.3;
    x[3] = -0.4;
    x[5] = 0.2;
    let u = Vector::from_vec(vec![1.0, -0.5]);
    let (a, b) = model.step_jacobians(&x, &u, &phi).unwrap();
    let a_fd = fd::jacobian(|z| model.step(z, &u, &phi), &x, 1e-6, 1e-7);
    let b_fd = fd::jacobian(|z| model.step(&x, z, &phi), &u, 1e-6, 1e-7);
    assert!((&a - &a_fd).amax() < 1e-5, "A mismatch {}", (&a - &a_fd).amax());
    assert!((&b - &b_fd).amax() < 1e-5);
}

#[test]
fn door_at_target_rest_has_zero_cost_and_stays() {
    let config = DoorConfig::default();
    let (model, cost) = door(config.clone());
    let phi = config.design();
    let x = door_rest_state(&model, config.target_angle);
    let u = Vector::zeros(2);
    assert_eq!(cost.running(0, &x, &u, &phi), 0.0);
    let next = model.step(&x, &u, &phi);
    assert!((&next - &x).amax() < 1e-9);
    assert!((model.end_effector(&x) - model.handle(&x)).norm() < 1e-12);
}

#[test]
fn stiff_door_coupling_tracks_the_handle() {
    let config = DoorConfig {
        k1: 1e5,
        k2: 1e5,
        k_bounds: [50.0, 1e5],
        ..DoorConfig::default()
    };
    let (model, cost) = door(config.clone());
    let phi = config.design();
    let solution = solve(&model, &cost, &phi, None, &SolverOptions::default()).unwrap();
    assert!(solution.converged());
    let states = &solution.reference.states;
    let (e0, h0) = (model.end_effector(&states[0]), model.handle(&states[0]));
    let travel = states.iter().map(|x| (model.handle(x) - h0).norm()).fold(0.0, f64::max);
    assert!(travel > 0.05, "door barely moved: {travel}");
    for x in states {
        let gap = ((model.end_effector(x) - e0) - (model.handle(x) - h0)).norm();
        assert!(gap <= 0.01 * travel, "end-effector lags handle by {gap} of {travel}");
    }
}

#[test]
fn one_cell_grid_equals_single_solve() {
    let (model, cost) = two_mass();
    let opts = SolverOptions::default();
    let sweep = grid_sweep(&model, &cost, &[300.0], &[400.0], Some(250.0), &opts).unwrap();
    let cell = sweep.cell(0, 0);
    let phi = Vector::from_vec(vec![300.0, 400.0]);
    let solution = solve(&model, &cost, &phi, None, &opts).unwrap();
    let ltv = linearize(&model, &solution.reference, &phi).unwrap();
    let belief = propagate_covariance(&ltv, &NoiseSchedule::from_model(&model).unwrap()).unwrap();
    let di = directed_information(&belief).unwrap().total_bits;
    assert_eq!(cell.cost, solution.expected_cost);
    assert_eq!(cell.di_bits, di);
    assert_eq!(cell.feasible, Some(solution.expected_cost < 250.0));
}

#[test]
fn sweep_is_reproducible_and_rejects_out_of_bounds() {
    let (model, cost) = two_mass();
    let opts = SolverOptions::default();
    let k1 = [100.0, 400.0];
    let k2 = [200.0, 600.0];
    let a = grid_sweep(&model, &cost, &k1, &k2, None, &opts).unwrap();
    let b = grid_sweep(&model, &cost, &k1, &k2, None, &opts).unwrap();
    assert_eq!(a, b);
    assert!(grid_sweep(&model, &cost, &[10.0], &k2, None, &opts).is_err());
}

fn robustness_options(levels: Vec<f64>, rollouts: usize, nominal_noise: bool) -> RobustnessOptions {
    RobustnessOptions {
        kind: NoiseKind::Environment,
        levels,
        rollouts,
        seed: 11,
        nominal_noise,
    }
}

#[test]
fn zero_noise_robustness_reproduces_nominal_rollout() {
    let (model, cost) = two_mass();
    let phi = TwoMassConfig::default().design();
    let opts = SolverOptions::default();
    let designs = vec![("nominal".to_string(), phi.clone())];
    let result = noise_robustness(&model, &cost, &designs, &robustness_options(vec![0.0], 1, false), &opts).unwrap();
    let level = &result[0].levels[0];

    let solution = solve(&model, &cost, &phi, None, &opts).unwrap();
    let mut policy = controller(&model, &phi, &solution).unwrap();
    let nominal = rollout(&model, &cost, &phi, &mut policy, &RolloutOptions::noiseless()).unwrap();
    assert!((level.mean_cost - nominal.cost).abs() <= 1e-9 * nominal.cost.abs().max(1.0));
    assert_eq!(level.n_divergent, 0);
}

#[test]
fn robustness_is_reproducible_and_degrades_with_noise() {
    let (model, cost) = two_mass();
    let designs = vec![("a".to_string(), Vector::from_vec(vec![200.0, 600.0]))];
    let opts = robustness_options(vec![1e-4, 1e-2], 8, true);
    let solver = SolverOptions::default();
    let a = noise_robustness(&model, &cost, &designs, &opts, &solver).unwrap();
    let b = noise_robustness(&model, &cost, &designs, &opts, &solver).unwrap();
    assert_eq!(a, b);
    let levels = &a[0].levels;
    assert_eq!(levels[0].rollouts, 8);
    assert!(levels[1].mean_cost > levels[0].mean_cost);

    let control = RobustnessOptions {
        kind: NoiseKind::Control,
        ..opts.clone()
    };
    let c = noise_robustness(&model, &cost, &designs, &control, &solver).unwrap();
    assert_eq!(c[0].kind, NoiseKind::Control);
    assert_ne!(c[0].levels[0].mean_cost, a[0].levels[0].mean_cost);
}

#[test]
fn environment_noise_needs_environment_states() {
    let mut rng = support::rng(3);
    let (sys, cost) = support::random_lq(&mut rng, 2, 1, 5);
    let designs = vec![("lq".to_string(), Vector::zeros(0))];
    let err = noise_robustness(&sys, &cost, &designs, &robustness_options(vec![1.0], 1, false), &SolverOptions::default());
    assert!(err.is_err());
}

#[test]
fn gain_variability_of_simple_sequences() {
    let g = Matrix::from_row_slice(1, 2, &[3.0, 4.0]);
    assert_eq!(gain_sequence_variability(&vec![g.clone(); 6]), 0.0);
    let alternating: Vec<Matrix> = (0..6).map(|t| if t % 2 == 0 { Matrix::zeros(1, 2) } else { g.clone() }).collect();
    assert!((gain_sequence_variability(&alternating) - 5.0).abs() < 1e-15);
    assert_eq!(gain_sequence_variability(&[g]), 0.0);
}

#[test]
fn spearman_detects_monotone_relations() {
    let x: Vec<f64> = (0..10).map(f64::from).collect();
    let y: Vec<f64> = x.iter().map(|v| v.powi(3)).collect();
    let z: Vec<f64> = x.iter().map(|v| (-v).exp()).collect();
    assert!((spearman(&x, &y) - 1.0).abs() < 1e-12);
    assert!((spearman(&x, &z) + 1.0).abs() < 1e-12);
}
