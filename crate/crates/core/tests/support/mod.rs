//! Test-only oracles, independent of the recursions they check.
#![allow(dead_code)]

use dicodesign::linalg::{Matrix, Vector};
use dicodesign::model::{DesignJacobians, LtvApprox, NoiseSchedule};
use nalgebra::Cholesky;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Matrix {
    Matrix::from_fn(r, c, |_, _| scale * (2.0 * rng.random::<f64>() - 1.0))
}

pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> Matrix {
    let l = random_matrix(rng, n, n, 1.0);
    &l * l.transpose() / n as f64 + Matrix::identity(n, n) * floor
}

/// Rescales `m` so its spectral radius is `target`.
pub fn with_radius(m: Matrix, target: f64) -> Matrix {
    let r = m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
    if r < 1e-12 {
        m
    } else {
        m * (target / r)
    }
}

pub fn logdet(m: &Matrix) -> f64 {
    let ch = Cholesky::new(m.clone()).expect("oracle matrix must be PD");
    2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Conditional covariance of block `target` given block `given` of a joint
/// covariance, by Schur complement.
pub fn schur(joint: &Matrix, target: &[usize], given: &[usize]) -> Matrix {
    let pick = |rows: &[usize], cols: &[usize]| Matrix::from_fn(rows.len(), cols.len(), |i, j| joint[(rows[i], cols[j])]);
    let tt = pick(target, target);
    if given.is_empty() {
        return tt;
    }
    let tg = pick(target, given);
    let gg = pick(given, given);
    let gg_inv = Cholesky::new(gg).expect("conditioning block must be PD").inverse();
    &tt - &tg * gg_inv * tg.transpose()
}

/// Directed information `Σ_t I(x^t; y_t | y^{t-1})` in bits, from the full
/// joint covariance of `(x_0..x_T, y_0..y_T)` of the zero-input LTV system.
pub fn joint_gaussian_di_bits(ltv: &LtvApprox, noise: &NoiseSchedule) -> f64 {
    let t_max = ltv.a.len();
    let n = ltv.c[0].ncols();
    let p = ltv.c[0].nrows();
    let nx = n * (t_max + 1);
    let dim = nx + p * (t_max + 1);

    // Cov(x_s, x_r) via forward propagation.
    let mut xcov = Matrix::zeros(nx, nx);
    xcov.view_mut((0, 0), (n, n)).copy_from(&noise.initial);
    for t in 0..t_max {
        let a = &ltv.a[t];
        for s in 0..=t {
            let c_ts = xcov.view((t * n, s * n), (n, n)).into_owned();
            let next = a * c_ts;
            xcov.view_mut(((t + 1) * n, s * n), (n, n)).copy_from(&next);
            xcov.view_mut((s * n, (t + 1) * n), (n, n)).copy_from(&next.transpose());
        }
        let var = xcov.view((t * n, t * n), (n, n)).into_owned();
        let next_var = a * var * a.transpose() + &noise.process[t];
        let next_var = (&next_var + next_var.transpose()) * 0.5;
        xcov.view_mut(((t + 1) * n, (t + 1) * n), (n, n)).copy_from(&next_var);
    }

    let mut joint = Matrix::zeros(dim, dim);
    joint.view_mut((0, 0), (nx, nx)).copy_from(&xcov);
    for t in 0..=t_max {
        let c = &ltv.c[t];
        let yrow = nx + t * p;
        for s in 0..=t_max {
            let xy = c * xcov.view((t * n, s * n), (n, n));
            joint.view_mut((yrow, s * n), (p, n)).copy_from(&xy);
            joint.view_mut((s * n, yrow), (n, p)).copy_from(&xy.transpose());
        }
        for s in 0..=t_max {
            let c_s = &ltv.c[s];
            let mut yy = c * xcov.view((t * n, s * n), (n, n)) * c_s.transpose();
            if s == t {
                yy += &noise.observation[t];
            }
            joint.view_mut((yrow, nx + s * p), (p, p)).copy_from(&yy);
        }
    }

    let mut nats = 0.0;
    for t in 0..=t_max {
        let y_t: Vec<usize> = (nx + t * p..nx + (t + 1) * p).collect();
        let y_past: Vec<usize> = (nx..nx + t * p).collect();
        let x_upto: Vec<usize> = (0..(t + 1) * n).collect();
        let mut given_all = x_upto.clone();
        given_all.extend(&y_past);
        let marginal = schur(&joint, &y_t, &y_past);
        let conditional = schur(&joint, &y_t, &given_all);
        nats += 0.5 * logdet(&marginal) - 0.5 * logdet(&conditional);
    }
    nats / std::f64::consts::LN_2
}

/// Random stable LTV instance whose `A_t`, `C_t` depend smoothly on a
/// design vector through fixed perturbation directions.
pub struct DesignFamily {
    pub base_a: Vec<Matrix>,
    pub base_c: Vec<Matrix>,
    pub dir_a: Vec<Vec<Matrix>>,
    pub dir_c: Vec<Vec<Matrix>>,
    pub noise: NoiseSchedule,
}

impl DesignFamily {
    pub fn random(rng: &mut ChaCha8Rng, n: usize, p: usize, t_max: usize, d: usize) -> Self {
        let base = with_radius(random_matrix(rng, n, n, 1.0), 0.3 + 0.6 * rng.random::<f64>());
        let base_a = (0..t_max).map(|_| &base + random_matrix(rng, n, n, 0.05)).collect();
        let base_c = (0..=t_max).map(|_| random_matrix(rng, p, n, 1.0)).collect();
        let dir_a = (0..d)
            .map(|_| (0..t_max).map(|_| random_matrix(rng, n, n, 0.2)).collect())
            .collect();
        let dir_c = (0..d)
            .map(|_| (0..=t_max).map(|_| random_matrix(rng, p, n, 0.5)).collect())
            .collect();
        let w = random_spd(rng, n, 0.05);
        let v = random_spd(rng, p, 0.1);
        let noise = NoiseSchedule {
            process: vec![w; t_max],
            observation: vec![v; t_max + 1],
            initial: random_spd(rng, n, 0.2),
        };
        Self { base_a, base_c, dir_a, dir_c, noise }
    }

    /// `A_t(φ) = A_t + Σᵢ sin(φᵢ) ΔAᵢ_t`, `C_t(φ) = C_t + Σᵢ φᵢ² ΔCᵢ_t`.
    pub fn ltv(&self, phi: &Vector) -> LtvApprox {
        let t_max = self.base_a.len();
        let n = self.base_a[0].nrows();
        let a = (0..t_max)
            .map(|t| {
                let mut m = self.base_a[t].clone();
                for (i, dirs) in self.dir_a.iter().enumerate() {
                    m += &dirs[t] * phi[i].sin();
                }
                m
            })
            .collect();
        let c = (0..=t_max)
            .map(|t| {
                let mut m = self.base_c[t].clone();
                for (i, dirs) in self.dir_c.iter().enumerate() {
                    m += &dirs[t] * (phi[i] * phi[i]);
                }
                m
            })
            .collect();
        let design = (0..phi.len())
            .map(|i| DesignJacobians {
                da: self.dir_a[i].iter().map(|m| m * phi[i].cos()).collect(),
                dc: self.dir_c[i].iter().map(|m| m * (2.0 * phi[i])).collect(),
            })
            .collect();
        LtvApprox { a, b: vec![Matrix::zeros(n, 1); t_max], c, design }
    }
}

/// Relative error with an absolute floor on the denominator.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / b.abs().max(a.abs()).max(floor)
}

use dicodesign::systems::{LinearSystem, QuadraticCost};

/// Random LQ problem with observation/noise covariances supplied by caller.
pub fn random_lq(rng: &mut ChaCha8Rng, n: usize, m: usize, t_max: usize) -> (LinearSystem, QuadraticCost) {
    let a = with_radius(random_matrix(rng, n, n, 1.0), 0.5 + 0.7 * rng.random::<f64>());
    let b = random_matrix(rng, n, m, 1.0);
    let sys = LinearSystem {
        a,
        b,
        c: Matrix::identity(n, n),
        w: Matrix::zeros(n, n),
        v: Matrix::identity(n, n) * 1e-12,
        x0_cov: Matrix::identity(n, n) * 1e-12,
        x0_mean: Vector::from_fn(n, |_, _| 2.0 * rng.random::<f64>() - 1.0),
        horizon: t_max,
    };
    let cost = QuadraticCost {
        q: random_spd(rng, n, 0.1),
        r: random_spd(rng, m, 0.1),
        qf: random_spd(rng, n, 0.5),
    };
    (sys, cost)
}

/// Finite-horizon discrete Riccati recursion. Returns gains `K_t` (u = K x)
/// and cost-to-go matrices `P_t`, t = 0..T.
pub fn riccati(sys: &LinearSystem, cost: &QuadraticCost) -> (Vec<Matrix>, Vec<Matrix>) {
    let t_max = sys.horizon;
    let mut p = vec![Matrix::zeros(0, 0); t_max + 1];
    let mut k = vec![Matrix::zeros(0, 0); t_max];
    p[t_max] = cost.qf.clone();
    for t in (0..t_max).rev() {
        let pn = &p[t + 1];
        let h = &cost.r + sys.b.transpose() * pn * &sys.b;
        let g = sys.b.transpose() * pn * &sys.a;
        let kt = -h.clone().lu().solve(&g).unwrap();
        let pt = &cost.q + sys.a.transpose() * pn * &sys.a + g.transpose() * &kt;
        p[t] = (&pt + pt.transpose()) * 0.5;
        k[t] = kt;
    }
    (k, p)
}

/// Kalman filter posterior covariances in gain (covariance) form.
pub fn kalman_posteriors(sys: &LinearSystem) -> Vec<Matrix> {
    let mut out = Vec::new();
    let mut prior = sys.x0_cov.clone();
    for t in 0..=sys.horizon {
        if t > 0 {
            let last: &Matrix = out.last().unwrap();
            prior = &sys.a * last * sys.a.transpose() + &sys.w;
        }
        let s = &sys.c * &prior * sys.c.transpose() + &sys.v;
        let gain = &prior * sys.c.transpose() * s.clone().lu().try_inverse().unwrap();
        let post = (Matrix::identity(prior.nrows(), prior.nrows()) - &gain * &sys.c) * &prior;
        out.push((&post + post.transpose()) * 0.5);
    }
    out
}

/// LQG expected cost of the certainty-equivalent controller from the
/// Riccati and Kalman oracles.
pub fn lqg_expected_cost(sys: &LinearSystem, cost: &QuadraticCost) -> f64 {
    let (k, p) = riccati(sys, cost);
    let sig = kalman_posteriors(sys);
    let mut j = 0.5 * sys.x0_mean.dot(&(&p[0] * &sys.x0_mean)) + 0.5 * (&p[0] * &sys.x0_cov).trace();
    for t in 0..sys.horizon {
        let h = &cost.r + sys.b.transpose() * &p[t + 1] * &sys.b;
        let xi = k[t].transpose() * h * &k[t];
        j += 0.5 * (&p[t + 1] * &sys.w).trace() + 0.5 * (xi * &sig[t]).trace();
    }
    j
}
