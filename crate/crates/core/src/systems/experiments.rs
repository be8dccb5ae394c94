//! Experiment procedures: stiffness grid sweeps, noise-robustness rollouts
//! and feedback-gain variability.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ilqg::{controller, solve, FeedbackController, ILQGSolution, SolveStatus, SolverOptions};
use crate::infoflow::{directed_information, propagate_covariance};
use crate::linalg::{Matrix, Vector};
use crate::model::{rollout, RolloutOptions};
use crate::model::{linearize, CostModel, NoiseSchedule, SystemModel};

/// Plant and cost shared across worker threads.
pub trait Plant: SystemModel + Sync {}
impl<T: SystemModel + Sync> Plant for T {}

pub trait Objective: CostModel + Sync {}
impl<T: CostModel + Sync> Objective for T {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub k1: f64,
    pub k2: f64,
    /// `J₀*`; NaN when the solve failed.
    pub cost: f64,
    pub di_bits: f64,
    pub converged: bool,
    /// `J₀* < D` when a bound was given.
    pub feasible: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub k1: Vec<f64>,
    pub k2: Vec<f64>,
    /// Row-major over `k1`, then `k2`.
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    pub fn cell(&self, i: usize, j: usize) -> &SweepCell {
        &self.cells[i * self.k2.len() + j]
    }

    pub fn all_failed(&self) -> bool {
        self.cells.iter().all(|c| c.error.is_some())
    }
}

fn solve_and_measure(
    model: &dyn SystemModel,
    cost: &dyn CostModel,
    phi: &Vector,
    opts: &SolverOptions,
) -> Result<(ILQGSolution, f64)> {
    let solution = solve(model, cost, phi, None, opts)?;
    let noise = NoiseSchedule::from_model(model)?;
    let ltv = linearize(model, &solution.reference, phi)?;
    let di = directed_information(&propagate_covariance(&ltv, &noise)?)?.total_bits;
    Ok((solution, di))
}

/// Solves iLQG and evaluates directed information on every cell of a
/// two-parameter design grid. Cells are independent and run in parallel;
/// failures are recorded per cell.
pub fn grid_sweep(
    model: &dyn Plant,
    cost: &dyn Objective,
    k1: &[f64],
    k2: &[f64],
    bound: Option<f64>,
    opts: &SolverOptions,
) -> Result<SweepResult> {
    if model.dims().design != 2 {
        return Err(Error::Config(format!(
            "grid sweeps need a two-component design, the model has {}",
            model.dims().design
        )));
    }
    if let Some((lo, hi)) = model.design_bounds() {
        for (axis, values) in [(0, k1), (1, k2)] {
            if let Some(v) = values.iter().find(|v| **v < lo[axis] || **v > hi[axis]) {
                return Err(Error::DesignOutOfBounds {
                    index: axis,
                    value: *v,
                    lo: lo[axis],
                    hi: hi[axis],
                });
            }
        }
    }
    let points: Vec<(f64, f64)> = k1.iter().flat_map(|a| k2.iter().map(move |b| (*a, *b))).collect();
    let cells = points
        .par_iter()
        .map(|&(a, b)| {
            let phi = Vector::from_vec(vec![a, b]);
            match solve_and_measure(model, cost, &phi, opts) {
                Ok((sol, di)) => SweepCell {
                    k1: a,
                    k2: b,
                    cost: sol.expected_cost,
                    di_bits: di,
                    converged: sol.diagnostics.status == SolveStatus::Converged,
                    feasible: bound.map(|d| sol.expected_cost < d),
                    error: None,
                },
                Err(e) => {
                    log::warn!("sweep cell ({a}, {b}) failed: {e}");
                    SweepCell {
                        k1: a,
                        k2: b,
                        cost: f64::NAN,
                        di_bits: f64::NAN,
                        converged: false,
                        feasible: None,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    Ok(SweepResult {
        k1: k1.to_vec(),
        k2: k2.to_vec(),
        cells,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Variance of the initial draw of the environment states.
    Environment,
    /// Variance of additive Gaussian noise on every input.
    Control,
}

impl NoiseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::Environment => "environment",
            NoiseKind::Control => "control",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub level: f64,
    /// Over non-divergent rollouts; NaN when all diverged.
    pub mean_cost: f64,
    /// Sample standard deviation.
    pub sd_cost: f64,
    pub n_divergent: usize,
    pub rollouts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessResult {
    pub label: String,
    pub phi: Vec<f64>,
    pub kind: NoiseKind,
    pub levels: Vec<LevelStats>,
}

/// Seed for one rollout, mixed from the master seed and its indices so the
/// result does not depend on scheduling.
pub fn derive_seed(master: u64, indices: &[u64]) -> u64 {
    // splitmix64 finalizer over the running state
    let mut z = master;
    for &i in indices {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(i.wrapping_mul(0xD1B5_4A32_D192_ED03));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessOptions {
    pub kind: NoiseKind,
    pub levels: Vec<f64>,
    /// Rollouts per level.
    pub rollouts: usize,
    pub seed: u64,
    /// Process, observation and initial-state noise in addition to the
    /// swept noise.
    pub nominal_noise: bool,
}

/// For each design: solve once, then run seeded closed-loop rollouts of the
/// output-feedback controller at each noise level.
pub fn noise_robustness(
    model: &dyn Plant,
    cost: &dyn Objective,
    designs: &[(String, Vector)],
    opts: &RobustnessOptions,
    solver: &SolverOptions,
) -> Result<Vec<RobustnessResult>> {
    if opts.rollouts == 0 {
        return Err(Error::Config("robustness needs at least one rollout per level".into()));
    }
    if let Some(l) = opts.levels.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        return Err(Error::Config(format!("noise levels must be finite and non-negative, got {l}")));
    }
    let env = model.environment_states();
    if opts.kind == NoiseKind::Environment && env.is_empty() {
        return Err(Error::Config("the model declares no environment states".into()));
    }
    let base_cov = model.initial_covariance();

    let mut results = Vec::with_capacity(designs.len());
    for (d, (label, phi)) in designs.iter().enumerate() {
        let solution = solve(model, cost, phi, None, solver)?;
        // the controller borrows the model, so each worker builds its own
        let gains = controller(model, phi, &solution)?.measurement_gains().to_vec();
        let mut levels = Vec::with_capacity(opts.levels.len());
        for (l, &level) in opts.levels.iter().enumerate() {
            let mut ro = RolloutOptions {
                seed: 0,
                noise_on: opts.nominal_noise,
                initial_covariance: None,
                control_noise: 0.0,
            };
            match opts.kind {
                NoiseKind::Environment => {
                    let mut cov = if opts.nominal_noise { base_cov.clone() } else { base_cov.clone() * 0.0 };
                    for &i in &env {
                        cov[(i, i)] = level;
                    }
                    ro.initial_covariance = Some(cov);
                }
                NoiseKind::Control => ro.control_noise = level,
            }
            let outcomes: Vec<Result<(f64, bool)>> = (0..opts.rollouts)
                .into_par_iter()
                .map(|r| {
                    let mut ro = ro.clone();
                    ro.seed = derive_seed(opts.seed, &[d as u64, l as u64, r as u64]);
                    let plant: &dyn SystemModel = model;
                    let mut policy = FeedbackController::new(
                        plant,
                        phi,
                        solution.law.clone(),
                        solution.reference.clone(),
                        gains.clone(),
                    );
                    let out = rollout(model, cost, phi, &mut policy, &ro)?;
                    Ok((out.cost, out.divergent))
                })
                .collect();
            let mut costs = Vec::with_capacity(opts.rollouts);
            let mut n_divergent = 0;
            for o in outcomes {
                let (c, div) = o?;
                if div || !c.is_finite() {
                    n_divergent += 1;
                } else {
                    costs.push(c);
                }
            }
            let (mean_cost, sd_cost) = mean_sd(&costs);
            levels.push(LevelStats {
                level,
                mean_cost,
                sd_cost,
                n_divergent,
                rollouts: opts.rollouts,
            });
        }
        results.push(RobustnessResult {
            label: label.clone(),
            phi: phi.iter().copied().collect(),
            kind: opts.kind,
            levels,
        });
    }
    Ok(results)
}

/// Mean over time of `‖K_{t+1} − K_t‖_F` for the solution's feedback gains.
pub fn gain_variability(solution: &ILQGSolution) -> f64 {
    gain_sequence_variability(&solution.law.feedback)
}

pub fn gain_sequence_variability(gains: &[Matrix]) -> f64 {
    if gains.len() < 2 {
        return 0.0;
    }
    gains.windows(2).map(|w| (&w[1] - &w[0]).norm()).sum::<f64>() / (gains.len() - 1) as f64
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|a, b| v[*a].total_cmp(&v[*b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    assert_eq!(x.len(), y.len(), "spearman: length mismatch");
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    cov / (vx * vy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_reference_values() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!((spearman(&x, &[2.0, 4.0, 6.0, 8.0, 100.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&x, &[5.0, 4.0, 3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        // classic textbook example with ties: ρ = 0.8 for these ranks
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [2.0, 1.0, 4.0, 3.0, 5.0];
        assert!((spearman(&a, &b) - 0.8).abs() < 1e-12);
        let tied = spearman(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]);
        assert!((tied - 0.866_025_403_784_438_6).abs() < 1e-12);
    }

    #[test]
    fn seeds_depend_on_every_index() {
        let s = derive_seed(7, &[0, 1, 2]);
        assert_eq!(s, derive_seed(7, &[0, 1, 2]));
        assert_ne!(s, derive_seed(7, &[0, 2, 1]));
        assert_ne!(s, derive_seed(8, &[0, 1, 2]));
    }

    #[test]
    fn sample_statistics() {
        let (m, s) = mean_sd(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_sd(&[3.0]), (3.0, 0.0));
        assert!(mean_sd(&[]).0.is_nan());
    }
}
