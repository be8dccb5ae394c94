use nalgebra::Cholesky;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::infoflow::BeliefSeq;
use crate::linalg::{symmetrize, trace_product, Matrix, Vector};
use crate::model::{CostModel, LtvApprox, NoiseSchedule, NominalTrajectory};

/// Quadratic expansion of the state-action value at one step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QTerms {
    pub qx: Vector,
    pub qu: Vector,
    pub qxx: Matrix,
    pub quu: Matrix,
    /// m×n.
    pub qux: Matrix,
}

/// Time-varying affine law `δu_t = k_t + K_t δx̂_t` about a reference.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlLaw {
    pub feedforward: Vec<Vector>,
    pub feedback: Vec<Matrix>,
}

impl ControlLaw {
    pub fn horizon(&self) -> usize {
        self.feedforward.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackwardPass {
    pub law: ControlLaw,
    pub q: Vec<QTerms>,
    /// `J_x`, t = 0..T.
    pub jx: Vec<Vector>,
    /// `J_xx`, t = 0..T.
    pub jxx: Vec<Matrix>,
    /// `Ξ_t = K_t'(ℓ_uu + B_t'J_xx⁺B_t)K_t`, t = 0..T-1.
    pub xi: Vec<Matrix>,
    /// `Σ_t (½k'Q_uuk + k'Q_u)`.
    pub delta_j: f64,
    /// `Σ_t ½Tr(Ξ_tΣ_t)`.
    pub value_of_information: f64,
    /// `Σ_t ½Tr(J_xx⁺W_t)`.
    pub process_noise: f64,
    /// `½Tr(J_xx,0 X₀)`: spread of the initial state.
    pub initial_uncertainty: f64,
}

/// Backward pass of partially observed iLQG.
///
/// `Q_uu` is regularized as `Q_uu + λI` for the gains only; the value
/// recursion and `Ξ_t` use the unregularized terms so they describe the
/// cost of the law actually returned. A regularized `Q_uu` that is not
/// positive definite yields [`Error::NotPositiveDefinite`].
#[allow(clippy::too_many_arguments)]
pub fn backward_pass(
    ltv: &LtvApprox,
    cost: &dyn CostModel,
    phi: &Vector,
    reference: &NominalTrajectory,
    belief: &BeliefSeq,
    noise: &NoiseSchedule,
    lambda: f64,
) -> Result<BackwardPass> {
    let t_max = ltv.horizon();
    if reference.horizon() != t_max || belief.horizon() != t_max {
        return Err(Error::Dimension {
            what: "backward pass inputs",
            expected: format!("horizon {t_max}"),
            got: format!("reference {}, belief {}", reference.horizon(), belief.horizon()),
        });
    }
    let term = cost.terminal_derivatives(&reference.states[t_max], phi);
    let mut jx = vec![Vector::zeros(0); t_max + 1];
    let mut jxx = vec![Matrix::zeros(0, 0); t_max + 1];
    jx[t_max] = term.lx;
    jxx[t_max] = symmetrize(&term.lxx);

    let mut feedforward = vec![Vector::zeros(0); t_max];
    let mut feedback = vec![Matrix::zeros(0, 0); t_max];
    let mut q = Vec::with_capacity(t_max);
    let mut xi = vec![Matrix::zeros(0, 0); t_max];
    let mut delta_j = 0.0;
    let mut voi = 0.0;
    let mut process = 0.0;

    for t in (0..t_max).rev() {
        let a = &ltv.a[t];
        let b = &ltv.b[t];
        let l = cost.running_derivatives(t, &reference.states[t], &reference.inputs[t], phi);
        let vx = jx[t + 1].clone();
        let vxx = jxx[t + 1].clone();

        let qx = &l.lx + a.transpose() * &vx;
        let qu = &l.lu + b.transpose() * &vx;
        let qxx = symmetrize(&(&l.lxx + a.transpose() * &vxx * a));
        let quu = symmetrize(&(&l.luu + b.transpose() * &vxx * b));
        let qux = &l.lux + b.transpose() * &vxx * a;

        let m = quu.nrows();
        let reg = &quu + Matrix::identity(m, m) * lambda;
        let chol = Cholesky::new(reg).ok_or(Error::NotPositiveDefinite { t })?;
        let k = -chol.solve(&qu);
        let big_k = -chol.solve(&qux);

        let kt_quu = big_k.transpose() * &quu;
        jx[t] = &qx + &kt_quu * &k + big_k.transpose() * &qu + qux.transpose() * &k;
        jxx[t] = symmetrize(&(&qxx + &kt_quu * &big_k + big_k.transpose() * &qux + qux.transpose() * &big_k));

        delta_j += 0.5 * k.dot(&(&quu * &k)) + k.dot(&qu);
        xi[t] = symmetrize(&(&kt_quu * &big_k));
        voi += 0.5 * trace_product(&xi[t], &belief.posterior[t]);
        process += 0.5 * trace_product(&vxx, &noise.process[t]);

        feedforward[t] = k;
        feedback[t] = big_k;
        q.push(QTerms { qx, qu, qxx, quu, qux });
    }
    q.reverse();
    let initial_uncertainty = 0.5 * trace_product(&jxx[0], &noise.initial);
    Ok(BackwardPass {
        law: ControlLaw { feedforward, feedback },
        q,
        jx,
        jxx,
        xi,
        delta_j,
        value_of_information: voi,
        process_noise: process,
        initial_uncertainty,
    })
}
