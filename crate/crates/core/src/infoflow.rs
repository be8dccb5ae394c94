//! EKF belief covariances, directed information from state to observations,
//! and its analytic gradient with respect to design parameters.
//!
//! The per-step directed information is the entropy drop of the measurement
//! update, `½ log|Σ_{t|t-1}| − ½ log|Σ_t|` with `Σ_{0|-1} = X₀`. Internally
//! everything is in nats; reported values are in bits.
//!
//! Gradient conventions (validated against central differences of
//! [`directed_information`] in the test suite):
//! * `dΣ/dφᵢ = −Σ (∇ᵢΓ) Σ`;
//! * the precision recursion is
//!   `∇ᵢΓ_{t+1} = N₀ − N₁ + N ∇ᵢΓ_t N'` with `N = Ψ_t A_t Σ_t`,
//!   `Ψ_t = (A_tΣ_tA_t' + W_t)⁻¹`, `N₁ = Ψ_t(∇ᵢA_tΣ_tA_t' + A_tΣ_t∇ᵢA_t')Ψ_t`
//!   and `N₀ = ∇ᵢC_{t+1}'V⁻¹C_{t+1} + C_{t+1}'V⁻¹∇ᵢC_{t+1}`;
//! * the prior-entropy term differentiates to
//!   `½ Tr(Ψ_t (∇ᵢA_tΣ_tA_t' + A_tΣ_t∇ᵢA_t' − A_tΣ_t∇ᵢΓ_tΣ_tA_t'))`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{spd_inverse, spd_logdet, spectral_radius, symmetrize, trace_product, Matrix};
use crate::model::{LtvApprox, NoiseSchedule};

pub const NATS_PER_BIT: f64 = std::f64::consts::LN_2;

/// Prior and posterior belief covariances along the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefSeq {
    /// `Σ_t`, t = 0..T.
    pub posterior: Vec<Matrix>,
    /// `Σ_{t|t-1}`, t = 0..T, with `Σ_{0|-1} = X₀`.
    pub prior: Vec<Matrix>,
    /// `Γ_t = Σ_t⁻¹`.
    pub precision: Vec<Matrix>,
    /// `Σ_{t|t-1}⁻¹`; entry t+1 is `Ψ_t`.
    pub prior_precision: Vec<Matrix>,
}

impl BeliefSeq {
    pub fn horizon(&self) -> usize {
        self.posterior.len() - 1
    }
}

/// EKF covariance recursion
/// `Σ₀ = (X₀⁻¹ + C₀'V₀⁻¹C₀)⁻¹`,
/// `Σ_{t+1} = ((A_tΣ_tA_t' + W_t)⁻¹ + C_{t+1}'V_{t+1}⁻¹C_{t+1})⁻¹`.
pub fn propagate_covariance(ltv: &LtvApprox, noise: &NoiseSchedule) -> Result<BeliefSeq> {
    let t_max = ltv.horizon();
    if noise.process.len() < t_max || noise.observation.len() < t_max + 1 || ltv.c.len() != t_max + 1 {
        return Err(Error::Dimension {
            what: "noise schedule",
            expected: format!("{} W_t and {} V_t", t_max, t_max + 1),
            got: format!("{} W_t and {} V_t", noise.process.len(), noise.observation.len()),
        });
    }
    let info = |t: usize| -> Result<Matrix> {
        let c = &ltv.c[t];
        let v_inv = spd_inverse(&noise.observation[t], "V_t", t)?;
        Ok(c.transpose() * v_inv * c)
    };

    let mut posterior = Vec::with_capacity(t_max + 1);
    let mut prior = Vec::with_capacity(t_max + 1);
    let mut precision = Vec::with_capacity(t_max + 1);
    let mut prior_precision = Vec::with_capacity(t_max + 1);

    let mut prior_t = noise.initial.clone();
    let mut psi = spd_inverse(&prior_t, "X0", 0)?;
    for t in 0..=t_max {
        if t > 0 {
            let a = &ltv.a[t - 1];
            let sigma = &posterior[t - 1];
            prior_t = symmetrize(&(a * sigma * a.transpose() + &noise.process[t - 1]));
            psi = spd_inverse(&prior_t, "prior covariance", t)?;
        }
        let gamma = symmetrize(&(&psi + info(t)?));
        let sigma = spd_inverse(&gamma, "posterior precision", t)?;
        prior.push(prior_t.clone());
        prior_precision.push(psi.clone());
        precision.push(gamma);
        posterior.push(sigma);
    }
    Ok(BeliefSeq {
        posterior,
        prior,
        precision,
        prior_precision,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DiForm {
    /// Prior-vs-posterior entropy difference at each step.
    EntropyDifference,
    /// `½log|A_tΣ_tA_t' + W_t| − ½log|Σ_t|`.
    PredictionPosterior,
    /// `½log|Σ_t⁻¹ + A_t'W_t⁻¹A_t| − ½log|W_t|`.
    InformationForm,
}

/// Values of the two alternative closed forms and their gaps to the
/// normative entropy-difference value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiDiagnostics {
    pub prediction_posterior_bits: f64,
    /// `None` when some `W_t` is singular.
    pub information_form_bits: Option<f64>,
    pub prediction_posterior_gap: f64,
    pub information_form_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DIReport {
    pub total_bits: f64,
    /// Per-step terms, t = 0..T.
    pub per_step_bits: Vec<f64>,
    pub form: DiForm,
    /// `∂DI/∂φᵢ` in bits per unit of φᵢ; empty until computed.
    pub gradient_bits: Vec<f64>,
    pub diagnostics: Option<DiDiagnostics>,
}

/// Directed information `DI(x^T → y^T)` in bits.
pub fn directed_information(belief: &BeliefSeq) -> Result<DIReport> {
    let mut per_step_bits = Vec::with_capacity(belief.posterior.len());
    for (t, (prior, post)) in belief.prior.iter().zip(&belief.posterior).enumerate() {
        let nats = 0.5 * spd_logdet(prior, "prior covariance", t)? - 0.5 * spd_logdet(post, "posterior covariance", t)?;
        per_step_bits.push(nats / NATS_PER_BIT);
    }
    Ok(DIReport {
        total_bits: per_step_bits.iter().sum(),
        per_step_bits,
        form: DiForm::EntropyDifference,
        gradient_bits: Vec::new(),
        diagnostics: None,
    })
}

/// As [`directed_information`], plus evaluation of the two alternative
/// closed forms as diagnostics. The information form is skipped when any
/// `W_t` is singular.
pub fn directed_information_with_diagnostics(
    ltv: &LtvApprox,
    noise: &NoiseSchedule,
    belief: &BeliefSeq,
) -> Result<DIReport> {
    let mut report = directed_information(belief)?;
    let mut pred_post = 0.0;
    let mut info_form = Some(0.0);
    for t in 0..ltv.horizon() {
        let a = &ltv.a[t];
        let sigma = &belief.posterior[t];
        let w = &noise.process[t];
        let pred = symmetrize(&(a * sigma * a.transpose() + w));
        pred_post += 0.5 * spd_logdet(&pred, "prediction covariance", t)? - 0.5 * spd_logdet(sigma, "posterior covariance", t)?;
        if let Some(acc) = info_form.as_mut() {
            match (crate::linalg::min_eigenvalue(w) > crate::linalg::JITTER, spd_inverse(w, "W_t", t)) {
                (true, Ok(w_inv)) => {
                    let m = symmetrize(&(&belief.precision[t] + a.transpose() * w_inv * a));
                    *acc += 0.5 * spd_logdet(&m, "information matrix", t)? - 0.5 * spd_logdet(w, "W_t", t)?;
                }
                _ => info_form = None,
            }
        }
    }
    let pp_bits = pred_post / NATS_PER_BIT;
    let if_bits = info_form.map(|v| v / NATS_PER_BIT);
    report.diagnostics = Some(DiDiagnostics {
        prediction_posterior_bits: pp_bits,
        information_form_bits: if_bits,
        prediction_posterior_gap: pp_bits - report.total_bits,
        information_form_gap: if_bits.map(|v| v - report.total_bits),
    });
    Ok(report)
}

/// `∇ᵢΓ_t` for one design component, with recursion intermediates.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionDerivSeq {
    pub component: usize,
    /// `∇ᵢΓ_t`, t = 0..T.
    pub dgamma: Vec<Matrix>,
    /// `Ψ_t`, t = 0..T-1.
    pub psi: Vec<Matrix>,
    /// `N_t = Ψ_t A_t Σ_t`.
    pub n: Vec<Matrix>,
    /// `N₀` entering step t+1 (index 0 holds the initialization term).
    pub n0: Vec<Matrix>,
    pub n1: Vec<Matrix>,
}

fn measurement_info_derivative(c: &Matrix, dc: &Matrix, v_inv: &Matrix) -> Matrix {
    let half = dc.transpose() * v_inv * c;
    &half + half.transpose()
}

/// Recursive derivative of the posterior precision with respect to φᵢ.
pub fn precision_derivative(
    ltv: &LtvApprox,
    noise: &NoiseSchedule,
    belief: &BeliefSeq,
    i: usize,
) -> Result<PrecisionDerivSeq> {
    let dj = ltv.design.get(i).ok_or_else(|| {
        Error::Config(format!("design Jacobians for component {i} were not computed"))
    })?;
    let t_max = ltv.horizon();
    let v_inv = |t: usize| spd_inverse(&noise.observation[t], "V_t", t);

    let n0_init = measurement_info_derivative(&ltv.c[0], &dj.dc[0], &v_inv(0)?);
    let mut dgamma = vec![symmetrize(&n0_init)];
    let mut n0s = vec![n0_init];
    let mut psis = Vec::with_capacity(t_max);
    let mut ns = Vec::with_capacity(t_max);
    let mut n1s = Vec::with_capacity(t_max);
    for t in 0..t_max {
        let a = &ltv.a[t];
        let da = &dj.da[t];
        let sigma = &belief.posterior[t];
        let psi = &belief.prior_precision[t + 1];
        let n = psi * a * sigma;
        let sym = da * sigma * a.transpose();
        let n1 = psi * (&sym + sym.transpose()) * psi;
        let n0 = measurement_info_derivative(&ltv.c[t + 1], &dj.dc[t + 1], &v_inv(t + 1)?);
        let next = &n0 - &n1 + &n * &dgamma[t] * n.transpose();
        dgamma.push(symmetrize(&next));
        psis.push(psi.clone());
        ns.push(n);
        n0s.push(n0);
        n1s.push(n1);
    }
    Ok(PrecisionDerivSeq {
        component: i,
        dgamma,
        psi: psis,
        n: ns,
        n0: n0s,
        n1: n1s,
    })
}

/// Precision derivatives for all design components, computed concurrently.
pub fn precision_derivatives(ltv: &LtvApprox, noise: &NoiseSchedule, belief: &BeliefSeq) -> Result<Vec<PrecisionDerivSeq>> {
    use rayon::prelude::*;
    (0..ltv.design.len())
        .into_par_iter()
        .map(|i| precision_derivative(ltv, noise, belief, i))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    /// `ρ(N_t)`, t = 0..T-1.
    pub spectral_radii: Vec<f64>,
    /// Some `ρ(N_t) ≥ 1`: the precision-derivative recursion may not contract.
    pub may_diverge: bool,
}

pub fn recursion_stability(ltv: &LtvApprox, belief: &BeliefSeq) -> StabilityReport {
    let spectral_radii: Vec<f64> = (0..ltv.horizon())
        .map(|t| spectral_radius(&(&belief.prior_precision[t + 1] * &ltv.a[t] * &belief.posterior[t])))
        .collect();
    let may_diverge = spectral_radii.iter().any(|r| *r >= 1.0);
    StabilityReport {
        spectral_radii,
        may_diverge,
    }
}

/// `∂DI/∂φ` in bits per unit, one entry per design component.
pub fn di_gradient(ltv: &LtvApprox, belief: &BeliefSeq, derivs: &[PrecisionDerivSeq]) -> Result<Vec<f64>> {
    if derivs.len() != ltv.design.len() {
        return Err(Error::Config(format!(
            "precision derivatives for {} of {} design components",
            derivs.len(),
            ltv.design.len()
        )));
    }
    let t_max = ltv.horizon();
    let mut grad = Vec::with_capacity(derivs.len());
    for (i, pd) in derivs.iter().enumerate() {
        if pd.component != i || pd.dgamma.len() != t_max + 1 {
            return Err(Error::Config(format!("precision derivative sequence {i} is misaligned")));
        }
        let dj = &ltv.design[i];
        let mut nats = 0.0;
        for t in 0..=t_max {
            // posterior entropy term: ½ log|Γ_t|
            nats += 0.5 * trace_product(&belief.posterior[t], &pd.dgamma[t]);
            if t < t_max {
                let a = &ltv.a[t];
                let sigma = &belief.posterior[t];
                let da = &dj.da[t];
                let sym = da * sigma * a.transpose();
                let d_prior = &sym + sym.transpose() - a * sigma * &pd.dgamma[t] * sigma * a.transpose();
                nats += 0.5 * trace_product(&belief.prior_precision[t + 1], &d_prior);
            }
        }
        grad.push(nats / NATS_PER_BIT);
    }
    Ok(grad)
}

/// Directed information with its design gradient filled in. Expects `ltv`
/// to carry design Jacobians for every component.
pub fn directed_information_and_gradient(ltv: &LtvApprox, noise: &NoiseSchedule) -> Result<(BeliefSeq, DIReport)> {
    let belief = propagate_covariance(ltv, noise)?;
    let mut report = directed_information_with_diagnostics(ltv, noise, &belief)?;
    let derivs = precision_derivatives(ltv, noise, &belief)?;
    report.gradient_bits = di_gradient(ltv, &belief, &derivs)?;
    Ok((belief, report))
}
