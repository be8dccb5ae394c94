//! The four subcommands. Each writes its artifacts into a run directory and
//! returns the process exit status; errors propagate to the caller.

use anyhow::{anyhow, Result};
use dicodesign::codesign::{codesign_tasks, IterationRecord, Task, Termination};
use dicodesign::ilqg::{controller, CostBreakdown, Diagnostics, ILQGSolution};
use dicodesign::infoflow::{directed_information, propagate_covariance};
use dicodesign::model::{linearize, rollout, NoiseSchedule, RolloutOptions};
use dicodesign::systems::{derive_seed, grid_sweep, noise_robustness, RobustnessOptions};
use dicodesign::{Error, Matrix, Vector};
use serde::Serialize;

use crate::config::{RunConfig, System};
use crate::output::{fmt_f64, RunDir};
use crate::plot::{Figure, Panel, Series, Style};

/// Settings shared by every command.
pub struct Context {
    pub config: RunConfig,
    pub system: System,
    pub config_hash: String,
    pub plots: bool,
}

impl Context {
    fn provenance(&self, source: &str) -> Vec<String> {
        vec![
            format!("generated by dicodesign {}", env!("CARGO_PKG_VERSION")),
            format!("data: {source}"),
            format!("config sha256: {}", self.config_hash),
            format!("seed: {}", self.config.seed),
        ]
    }

    fn figure(&self, run: &mut RunDir, name: &str, source: &str, panels: Vec<Panel>) -> Result<()> {
        if self.plots {
            let svg = Figure {
                provenance: self.provenance(source),
                panels,
            }
            .render();
            run.text(name, &svg)?;
        }
        Ok(())
    }
}

fn matrix_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn flag(b: bool) -> String {
    if b { "1" } else { "0" }.to_string()
}

#[derive(Serialize)]
struct RolloutSummary {
    seed: u64,
    cost: f64,
    divergent: bool,
}

#[derive(Serialize)]
struct SolutionReport<'a> {
    design_names: Vec<&'static str>,
    phi: Vec<f64>,
    converged: bool,
    expected_cost: f64,
    breakdown: &'a CostBreakdown,
    diagnostics: &'a Diagnostics,
    di_bits: f64,
    di_per_step_bits: Vec<f64>,
    /// `tr Ξ_t`, the weight of the posterior covariance in the cost-to-go.
    xi_trace: Vec<f64>,
    feedback_gains: Vec<Vec<Vec<f64>>>,
    feedforward: Vec<Vec<f64>>,
    rollout: RolloutSummary,
}

/// Writes `trajectory.csv`, `solution.json` and the state/belief plot for
/// `solution` at design `phi`. The trajectory is one seeded closed-loop
/// rollout of the output-feedback controller, alongside its belief.
fn write_solution(ctx: &Context, run: &mut RunDir, phi: &Vector, solution: &ILQGSolution) -> Result<()> {
    let model = ctx.system.model();
    let cost = ctx.system.cost();
    let dims = model.dims();
    let horizon = model.horizon();
    let dt = model.dt();

    let noise = NoiseSchedule::from_model(model)?;
    let ltv = linearize(model, &solution.reference, phi)?;
    let di = directed_information(&propagate_covariance(&ltv, &noise)?)?;

    let seed = derive_seed(ctx.config.seed, &[0]);
    let mut policy = controller(model, phi, solution)?;
    let sample = rollout(model, cost, phi, &mut policy, &RolloutOptions::seeded(seed))?;
    if let Some(y) = sample.observations.last() {
        if !sample.divergent {
            policy.finish(y);
        }
    }
    if sample.divergent {
        run.warn(format!("the closed-loop rollout left the state bounds after {} steps", sample.states.len() - 1));
    }

    let names = ctx.system.state_names();
    let mut header = vec!["t".to_string()];
    header.extend(names.iter().map(|n| n.to_string()));
    header.extend((1..=dims.input).map(|i| format!("u{i}")));
    header.extend(names.iter().map(|n| format!("mu_{n}")));
    header.extend(names.iter().map(|n| format!("sigma_{n}")));
    header.push("di_bits".into());
    let mut csv = run.csv("trajectory.csv", &header)?;
    let nan_vec = |n: usize| Vector::from_element(n, f64::NAN);
    for t in 0..=horizon {
        let mut row = vec![fmt_f64(t as f64 * dt)];
        let x = sample.states.get(t).cloned().unwrap_or_else(|| nan_vec(dims.state));
        let u = sample.inputs.get(t).cloned().unwrap_or_else(|| nan_vec(dims.input));
        let mu = policy.means.get(t).cloned().unwrap_or_else(|| nan_vec(dims.state));
        let sigma = solution.covariances.get(t).map(|s| s.diagonal()).unwrap_or_else(|| nan_vec(dims.state));
        for v in x.iter().chain(u.iter()).chain(mu.iter()).chain(sigma.iter()) {
            row.push(fmt_f64(*v));
        }
        row.push(fmt_f64(di.per_step_bits.get(t).copied().unwrap_or(f64::NAN)));
        csv.row(&row)?;
    }

    let report = SolutionReport {
        design_names: ctx.system.design_names(),
        phi: phi.iter().copied().collect(),
        converged: solution.converged(),
        expected_cost: solution.expected_cost,
        breakdown: &solution.breakdown,
        diagnostics: &solution.diagnostics,
        di_bits: di.total_bits,
        di_per_step_bits: di.per_step_bits.clone(),
        xi_trace: solution.xi.iter().map(|x| x.trace()).collect(),
        feedback_gains: solution.law.feedback.iter().map(matrix_rows).collect(),
        feedforward: solution.law.feedforward.iter().map(|v| v.iter().copied().collect()).collect(),
        rollout: RolloutSummary {
            seed,
            cost: sample.cost,
            divergent: sample.divergent,
        },
    };
    run.json("solution.json", &report)?;

    let times: Vec<f64> = (0..=horizon).map(|t| t as f64 * dt).collect();
    let component = |seq: &[Vector], i: usize| -> Vec<f64> {
        (0..=horizon).map(|t| seq.get(t).map_or(f64::NAN, |v| v[i])).collect()
    };
    let panels = names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let mean = component(&policy.means, i);
            let sd: Vec<f64> = (0..=horizon)
                .map(|t| solution.covariances.get(t).map_or(f64::NAN, |s| s[(i, i)].max(0.0).sqrt()))
                .collect();
            let lower = mean.iter().zip(&sd).map(|(m, s)| m - 2.0 * s).collect();
            let upper = mean.iter().zip(&sd).map(|(m, s)| m + 2.0 * s).collect();
            Panel::Lines {
                title: format!("{name}: true state and belief (mean ± 2σ)"),
                x_label: "time [s]".into(),
                y_label: name.to_string(),
                log_x: false,
                series: vec![
                    Series::line("true", times.clone(), component(&sample.states, i)),
                    Series::line("belief", times.clone(), mean).with_style(Style::Dashed).with_band(lower, upper),
                ],
            }
        })
        .collect();
    ctx.figure(run, "trajectory.svg", "trajectory.csv (true state, belief mean, posterior covariance)", panels)
}

pub fn solve(ctx: &Context, run: &mut RunDir) -> Result<i32> {
    let model = ctx.system.model();
    let phi = ctx.system.design();
    let solution = dicodesign::ilqg::solve(model, ctx.system.cost(), &phi, None, &ctx.config.solver)?;
    write_solution(ctx, run, &phi, &solution)?;
    if solution.converged() {
        Ok(0)
    } else {
        run.warn(format!("iLQG did not converge: {:?}", solution.diagnostics.status));
        Ok(1)
    }
}

#[derive(Serialize)]
struct OptimizeReport<'a> {
    design_names: Vec<&'static str>,
    bound: f64,
    termination: Termination,
    /// The design loop stopped before the tolerance was met.
    early_termination: bool,
    iterations: usize,
    accepted: usize,
    initial: &'a IterationRecord,
    /// Best accepted iterate by barrier objective; the solution artifacts
    /// describe this design.
    best: &'a IterationRecord,
    /// Last accepted iterate.
    terminal: &'a IterationRecord,
    sign_audit: &'a Option<dicodesign::codesign::SignAudit>,
}

pub fn optimize(ctx: &Context, run: &mut RunDir) -> Result<i32> {
    let cfg = ctx.config.codesign_config(&ctx.system);
    let design_names = ctx.system.design_names();
    let mut header = vec!["iteration".to_string()];
    header.extend(design_names.iter().map(|n| n.to_string()));
    header.extend(["cost", "di_bits", "barrier", "h", "learning_rate", "accepted"].map(String::from));
    let mut csv = run.csv("trace.csv", &header)?;

    let task = Task {
        model: ctx.system.model(),
        cost: ctx.system.cost(),
        bound: cfg.bound,
    };
    let mut write_error = None;
    let mut observer = |r: &IterationRecord| {
        if write_error.is_some() {
            return;
        }
        let mut row = vec![r.iteration.to_string()];
        row.extend(r.phi.iter().map(|v| fmt_f64(*v)));
        row.extend([r.total_cost(), r.di_bits, r.barrier, r.step_size, r.learning_rate].map(fmt_f64));
        row.push(flag(r.accepted));
        if let Err(e) = csv.row(&row) {
            write_error = Some(e);
        }
    };
    let result = codesign_tasks(&[task], &cfg, &mut observer)?;
    if let Some(e) = write_error {
        return Err(e);
    }
    let trace = &result.trace;

    let best = trace
        .accepted()
        .filter(|r| r.phi.as_slice() == result.phi.as_slice())
        .min_by(|a, b| a.barrier.total_cmp(&b.barrier))
        .ok_or_else(|| anyhow!("returned design is not among the accepted iterates"))?;
    let early = matches!(trace.termination, Termination::MaxIterations | Termination::Stalled);
    if early {
        run.warn(format!("design loop stopped early: {:?}", trace.termination));
    }
    run.json(
        "optimize.json",
        &OptimizeReport {
            design_names: design_names.clone(),
            bound: cfg.bound,
            termination: trace.termination,
            early_termination: early,
            iterations: trace.records.len(),
            accepted: trace.accepted().count(),
            initial: &trace.records[0],
            best,
            terminal: trace.terminal(),
            sign_audit: &trace.sign_audit,
        },
    )?;
    write_solution(ctx, run, &result.phi, &result.solutions[0])?;

    let accepted: Vec<&IterationRecord> = trace.accepted().collect();
    let iter_of = |rs: &[&IterationRecord]| rs.iter().map(|r| r.iteration as f64).collect::<Vec<_>>();
    let mut panels = Vec::new();
    if result.phi.len() == 2 {
        let rejected: Vec<&IterationRecord> = trace.records.iter().filter(|r| !r.accepted).collect();
        let coord = |rs: &[&IterationRecord], i: usize| rs.iter().map(|r| r.phi[i]).collect::<Vec<_>>();
        panels.push(Panel::Lines {
            title: "design trace".into(),
            x_label: design_names[0].to_string(),
            y_label: design_names[1].to_string(),
            log_x: false,
            series: vec![
                Series::line("accepted", coord(&accepted, 0), coord(&accepted, 1)).with_style(Style::LineMarkers),
                Series::line("rejected", coord(&rejected, 0), coord(&rejected, 1)).with_style(Style::Markers),
                Series::line("best", vec![result.phi[0]], vec![result.phi[1]]).with_style(Style::Markers),
            ],
        });
    }
    panels.push(Panel::Lines {
        title: "directed information of accepted iterates".into(),
        x_label: "iteration".into(),
        y_label: "DI [bits]".into(),
        log_x: false,
        series: vec![Series::line("DI", iter_of(&accepted), accepted.iter().map(|r| r.di_bits).collect())
            .with_style(Style::LineMarkers)],
    });
    let xs = iter_of(&accepted);
    let bound_line = vec![cfg.bound; xs.len()];
    panels.push(Panel::Lines {
        title: "expected cost of accepted iterates".into(),
        x_label: "iteration".into(),
        y_label: "expected cost".into(),
        log_x: false,
        series: vec![
            Series::line("J", xs.clone(), accepted.iter().map(|r| r.total_cost()).collect()).with_style(Style::LineMarkers),
            Series::line("bound", xs, bound_line).with_style(Style::Dashed),
        ],
    });
    ctx.figure(run, "trace.svg", "trace.csv", panels)?;
    Ok(0)
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

pub fn sweep(ctx: &Context, run: &mut RunDir) -> Result<i32> {
    let model = ctx.system.model();
    let section = &ctx.config.sweep;
    let (lo, hi) = model
        .design_bounds()
        .ok_or_else(|| Error::Config("the system has no design bounds; give sweep.k1 and sweep.k2".into()))?;
    let k1 = section.k1.clone().unwrap_or_else(|| linspace(lo[0], hi[0], section.grid_points));
    let k2 = section.k2.clone().unwrap_or_else(|| linspace(lo[1], hi[1], section.grid_points));
    let result = grid_sweep(model, ctx.system.cost(), &k1, &k2, None, &ctx.config.solver)?;

    let header = ["K1", "K2", "cost", "DI_bits", "converged"].map(String::from);
    let mut csv = run.csv("sweep.csv", &header)?;
    for cell in &result.cells {
        csv.row(&[fmt_f64(cell.k1), fmt_f64(cell.k2), fmt_f64(cell.cost), fmt_f64(cell.di_bits), flag(cell.converged)])?;
        if let Some(e) = &cell.error {
            run.warn(format!("cell ({}, {}) failed: {e}", cell.k1, cell.k2));
        } else if !cell.converged {
            run.warn(format!("cell ({}, {}) did not converge", cell.k1, cell.k2));
        }
    }

    let grid = |f: fn(&dicodesign::systems::SweepCell) -> f64| -> Vec<Vec<f64>> {
        (0..k1.len()).map(|i| (0..k2.len()).map(|j| f(result.cell(i, j))).collect()).collect()
    };
    let names = ctx.system.design_names();
    let heatmap = |title: &str, values| Panel::Heatmap {
        title: title.into(),
        x_label: names[0].into(),
        y_label: names[1].into(),
        xs: k1.clone(),
        ys: k2.clone(),
        values,
    };
    let panels = vec![
        heatmap("expected cost", grid(|c| c.cost)),
        heatmap("directed information [bits]", grid(|c| c.di_bits)),
    ];
    ctx.figure(run, "sweep.svg", "sweep.csv", panels)?;

    if result.all_failed() {
        run.warn("every sweep cell failed");
        return Ok(1);
    }
    Ok(0)
}

pub fn robustness(ctx: &Context, run: &mut RunDir) -> Result<i32> {
    let section = &ctx.config.robustness;
    let model = ctx.system.model();
    let d = model.dims().design;
    let designs: Vec<(String, Vector)> = if section.designs.is_empty() {
        vec![("configured".to_string(), ctx.system.design())]
    } else {
        section.designs.iter().map(|l| (l.label.clone(), Vector::from_column_slice(&l.phi))).collect()
    };
    for (label, phi) in &designs {
        if phi.len() != d {
            return Err(Error::Dimension {
                what: "robustness design",
                expected: d.to_string(),
                got: format!("{} (design `{label}`)", phi.len()),
            }
            .into());
        }
    }
    let opts = RobustnessOptions {
        kind: section.kind,
        levels: section.levels.clone(),
        rollouts: section.rollouts,
        seed: ctx.config.seed,
        nominal_noise: section.nominal_noise,
    };
    let results = noise_robustness(model, ctx.system.cost(), &designs, &opts, &ctx.config.solver)?;

    let header = ["phi_label", "kind", "level", "mean_cost", "sd_cost", "n_divergent"].map(String::from);
    let mut csv = run.csv("robustness.csv", &header)?;
    let mut any_ok = false;
    for r in &results {
        for s in &r.levels {
            csv.row(&[
                r.label.clone(),
                r.kind.as_str().to_string(),
                fmt_f64(s.level),
                fmt_f64(s.mean_cost),
                fmt_f64(s.sd_cost),
                s.n_divergent.to_string(),
            ])?;
            if s.n_divergent > 0 {
                run.warn(format!("design `{}`, level {}: {} of {} rollouts diverged", r.label, s.level, s.n_divergent, s.rollouts));
            }
            any_ok |= s.n_divergent < s.rollouts;
        }
    }

    let series = results
        .iter()
        .map(|r| {
            let xs: Vec<f64> = r.levels.iter().map(|s| s.level).collect();
            let mean: Vec<f64> = r.levels.iter().map(|s| s.mean_cost).collect();
            let lower = r.levels.iter().map(|s| s.mean_cost - s.sd_cost).collect();
            let upper = r.levels.iter().map(|s| s.mean_cost + s.sd_cost).collect();
            Series::line(r.label.clone(), xs, mean).with_style(Style::LineMarkers).with_band(lower, upper)
        })
        .collect();
    let panels = vec![Panel::Lines {
        title: format!("closed-loop cost under {} noise (mean ± 1 sd)", opts.kind.as_str()),
        x_label: "noise variance".into(),
        y_label: "cost".into(),
        log_x: section.levels.iter().all(|l| *l > 0.0),
        series,
    }];
    ctx.figure(run, "robustness.svg", "robustness.csv", panels)?;

    if !any_ok {
        run.warn("every rollout diverged");
        return Ok(1);
    }
    Ok(0)
}
