//! Exact Kalman filtering and smoothing with missing observations, steady
//! states, and the closed-form Riccati solution for the univariate
//! two-vintage model.
//!
//! The measurement equation is exact (no measurement noise): masked entries
//! drop the corresponding rows of `Z` that period, and a fully missing
//! period is a pure prediction step. Innovation covariances are inverted
//! through a Cholesky factorization; a factorization failure signals a
//! degenerate parameter point to the caller instead of being papered over
//! with jitter, so samplers can reject such points cleanly.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::ssm::StateSpaceModel;
use crate::vintages::ObservationMatrix;

const LN_2PI: f64 = 1.8378770664093453;

fn symmetrize(p: &mut DMatrix<f64>) {
    let n = p.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (p[(i, j)] + p[(j, i)]);
            p[(i, j)] = v;
            p[(j, i)] = v;
        }
    }
}

fn select_rows(z: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), z.ncols(), |i, j| z[(rows[i], j)])
}

/// Structure-aware application of the transition matrix. Every model this
/// crate builds has nonzero entries only in the truth companion rows and
/// on the error-block diagonal, which turns the dense `m^3` products of
/// the filter recursions into `O(m^2)` sweeps. Models that do not match
/// the pattern fall back to dense products.
pub(crate) enum TransOps {
    Structured {
        p: usize,
        rho: Vec<f64>,
        diag: Vec<f64>,
    },
    Dense(DMatrix<f64>),
}

impl TransOps {
    pub(crate) fn detect(model: &StateSpaceModel) -> TransOps {
        let m = model.m;
        let p = model.layout.truth.len();
        let t = &model.t;
        if p == 0 || p > m {
            return TransOps::Dense(t.clone());
        }
        for i in 0..m {
            for j in 0..m {
                let v = t[(i, j)];
                let allowed = if i == 0 {
                    j < p
                } else if i < p {
                    j == i - 1
                } else {
                    j == i
                };
                if !allowed && v != 0.0 {
                    return TransOps::Dense(t.clone());
                }
                if (1..p).contains(&i) && j == i - 1 && v != 1.0 {
                    return TransOps::Dense(t.clone());
                }
            }
        }
        TransOps::Structured {
            p,
            rho: (0..p).map(|j| t[(0, j)]).collect(),
            diag: (p..m).map(|k| t[(k, k)]).collect(),
        }
    }

    /// `out = T a`.
    pub(crate) fn mul_vec_into(&self, a: &DVector<f64>, out: &mut DVector<f64>) {
        match self {
            TransOps::Structured { p, rho, diag } => {
                let mut head = 0.0;
                for j in 0..*p {
                    head += rho[j] * a[j];
                }
                for i in (1..*p).rev() {
                    out[i] = a[i - 1];
                }
                out[0] = head;
                for (k, d) in diag.iter().enumerate() {
                    out[p + k] = d * a[p + k];
                }
            }
            TransOps::Dense(t) => out.gemv(1.0, t, a, 0.0),
        }
    }

    /// `out = T' a`.
    fn tr_mul_vec_into(&self, a: &DVector<f64>, out: &mut DVector<f64>) {
        match self {
            TransOps::Structured { p, rho, diag } => {
                for j in 0..*p {
                    out[j] = rho[j] * a[0] + if j + 1 < *p { a[j + 1] } else { 0.0 };
                }
                for (k, d) in diag.iter().enumerate() {
                    out[p + k] = d * a[p + k];
                }
            }
            TransOps::Dense(t) => out.gemv_tr(1.0, t, a, 0.0),
        }
    }

    /// `out = T M` for an `m x c` matrix.
    fn mul_mat_into(&self, mm: &DMatrix<f64>, out: &mut DMatrix<f64>) {
        match self {
            TransOps::Structured { p, rho, diag } => {
                let c = mm.ncols();
                for col in 0..c {
                    let mut head = 0.0;
                    for j in 0..*p {
                        head += rho[j] * mm[(j, col)];
                    }
                    for i in (1..*p).rev() {
                        out[(i, col)] = mm[(i - 1, col)];
                    }
                    out[(0, col)] = head;
                    for (k, d) in diag.iter().enumerate() {
                        out[(p + k, col)] = d * mm[(p + k, col)];
                    }
                }
            }
            TransOps::Dense(t) => out.gemm(1.0, t, mm, 0.0),
        }
    }

    /// `out = M T'` for a `c x m` matrix.
    fn mul_tr_right_into(&self, mm: &DMatrix<f64>, out: &mut DMatrix<f64>) {
        match self {
            TransOps::Structured { p, rho, diag } => {
                let c = mm.nrows();
                for r in 0..c {
                    let mut head = 0.0;
                    for j in 0..*p {
                        head += rho[j] * mm[(r, j)];
                    }
                    for i in (1..*p).rev() {
                        out[(r, i)] = mm[(r, i - 1)];
                    }
                    out[(r, 0)] = head;
                    for (k, d) in diag.iter().enumerate() {
                        out[(r, p + k)] = d * mm[(r, p + k)];
                    }
                }
            }
            TransOps::Dense(t) => {
                out.fill(0.0);
                for jj in 0..t.nrows() {
                    for kk in 0..t.ncols() {
                        let v = t[(jj, kk)];
                        if v != 0.0 {
                            for r in 0..mm.nrows() {
                                out[(r, jj)] += mm[(r, kk)] * v;
                            }
                        }
                    }
                }
            }
        }
    }

    /// `out = T' N T` (used by the covariance smoother on empty periods).
    fn tr_quad_into(&self, nmat: &DMatrix<f64>, scratch: &mut DMatrix<f64>, out: &mut DMatrix<f64>) {
        // T' N T = (T' (T' N')')' with N symmetric; do it in two passes.
        match self {
            TransOps::Structured { p, rho, diag } => {
                let m = nmat.nrows();
                // scratch = T' N
                for col in 0..m {
                    for j in 0..*p {
                        scratch[(j, col)] =
                            rho[j] * nmat[(0, col)] + if j + 1 < *p { nmat[(j + 1, col)] } else { 0.0 };
                    }
                    for (k, d) in diag.iter().enumerate() {
                        scratch[(p + k, col)] = d * nmat[(p + k, col)];
                    }
                }
                // out = scratch T  (columns of T mirror the rows of T')
                for r in 0..m {
                    for j in 0..*p {
                        out[(r, j)] = rho[j] * scratch[(r, 0)]
                            + if j + 1 < *p { scratch[(r, j + 1)] } else { 0.0 };
                    }
                    for (k, d) in diag.iter().enumerate() {
                        out[(r, p + k)] = d * scratch[(r, p + k)];
                    }
                }
            }
            TransOps::Dense(t) => {
                scratch.gemm_tr(1.0, t, nmat, 0.0);
                out.gemm(1.0, scratch, t, 0.0);
            }
        }
    }

    /// Write the dense transition matrix into `out`.
    fn write_into(&self, out: &mut DMatrix<f64>) {
        match self {
            TransOps::Structured { p, rho, diag } => {
                out.fill(0.0);
                for j in 0..*p {
                    out[(0, j)] = rho[j];
                }
                for i in 1..*p {
                    out[(i, i - 1)] = 1.0;
                }
                for (k, d) in diag.iter().enumerate() {
                    out[(p + k, p + k)] = *d;
                }
            }
            TransOps::Dense(t) => out.copy_from(t),
        }
    }
}

/// Covariance-side quantities of a filtering pass. These depend on the
/// model and the missingness pattern but not on observed values, so one
/// pass serves any number of mean recursions (the simulation smoother runs
/// two per draw).
pub(crate) struct CovPass {
    pub obs_rows: Vec<Vec<usize>>,
    pub z_sel: Vec<DMatrix<f64>>,
    pub p_pred: Vec<DMatrix<f64>>,
    pub p_filt: Vec<DMatrix<f64>>,
    pub chol: Vec<Option<Cholesky<f64, Dyn>>>,
    pub gain: Vec<DMatrix<f64>>,
    pub l_mat: Vec<DMatrix<f64>>,
    pub logdet: Vec<f64>,
    pub trans: TransOps,
}

pub(crate) fn cov_pass(model: &StateSpaceModel, obs_rows: Vec<Vec<usize>>) -> Result<CovPass> {
    let horizon = obs_rows.len();
    let m = model.m;
    let rrt = model.rrt();
    let trans = TransOps::detect(model);
    let mut p = model.p1.clone();
    let mut scratch = DMatrix::zeros(m, m);
    let mut pass = CovPass {
        obs_rows,
        z_sel: Vec::with_capacity(horizon),
        p_pred: Vec::with_capacity(horizon),
        p_filt: Vec::with_capacity(horizon),
        chol: Vec::with_capacity(horizon),
        gain: Vec::with_capacity(horizon),
        l_mat: Vec::with_capacity(horizon),
        logdet: Vec::with_capacity(horizon),
        trans,
    };
    for t in 0..horizon {
        let rows = &pass.obs_rows[t];
        let n = rows.len();
        if n == 0 {
            pass.z_sel.push(DMatrix::zeros(0, m));
            pass.chol.push(None);
            pass.gain.push(DMatrix::zeros(m, 0));
            pass.l_mat.push(model.t.clone());
            pass.logdet.push(0.0);
            pass.p_filt.push(p.clone());
            pass.p_pred.push(p.clone());
            // Predict: P <- T P T' + R R'
            pass.trans.mul_mat_into(&pass.p_filt[t], &mut scratch);
            pass.trans.mul_tr_right_into(&scratch, &mut p);
            p += &rrt;
            symmetrize(&mut p);
        } else {
            let z_sel = select_rows(&model.z, rows);
            let mut zp = DMatrix::zeros(n, m);
            zp.gemm(1.0, &z_sel, &p, 0.0);
            // F = Z P Z', built symmetric directly.
            let mut f = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in i..n {
                    let mut acc = 0.0;
                    for k in 0..m {
                        acc += zp[(i, k)] * z_sel[(j, k)];
                    }
                    f[(i, j)] = acc;
                    f[(j, i)] = acc;
                }
            }
            let chol = Cholesky::new(f).ok_or_else(|| {
                Error::Degenerate(format!(
                    "innovation covariance not positive definite at t = {t}"
                ))
            })?;
            let mut logdet = 0.0;
            for i in 0..n {
                logdet += 2.0 * chol.l_dirty()[(i, i)].ln();
            }
            // K = P Z' F^-1 = (F^-1 Z P)'
            let mut sol = zp.clone();
            chol.solve_mut(&mut sol);
            let gain = sol.transpose();
            let mut p_filt = p.clone();
            p_filt.gemm(-1.0, &gain, &zp, 1.0);
            symmetrize(&mut p_filt);
            // L = T (I - K Z) = T - (T K) Z
            let mut tk = DMatrix::zeros(m, n);
            pass.trans.mul_mat_into(&gain, &mut tk);
            let mut l_mat = DMatrix::zeros(m, m);
            pass.trans.write_into(&mut l_mat);
            l_mat.gemm(-1.0, &tk, &z_sel, 1.0);
            // Predict: P <- T P_filt T' + R R'
            pass.trans.mul_mat_into(&p_filt, &mut scratch);
            let mut p_next = DMatrix::zeros(m, m);
            pass.trans.mul_tr_right_into(&scratch, &mut p_next);
            p_next += &rrt;
            symmetrize(&mut p_next);

            pass.z_sel.push(z_sel);
            pass.chol.push(Some(chol));
            pass.gain.push(gain);
            pass.l_mat.push(l_mat);
            pass.logdet.push(logdet);
            pass.p_filt.push(p_filt);
            pass.p_pred.push(std::mem::replace(&mut p, p_next));
        }
    }
    Ok(pass)
}

/// Mean-side quantities of a filtering pass.
pub(crate) struct MeanPass {
    pub a_pred: Vec<DVector<f64>>,
    pub a_filt: Vec<DVector<f64>>,
    pub innovations: Vec<DVector<f64>>,
    pub loglik: f64,
}

/// Run the mean recursion against `values`, where `values(t, i)` is the
/// observed value for the `i`-th retained row of period `t`.
pub(crate) fn mean_pass(
    model: &StateSpaceModel,
    cov: &CovPass,
    values: impl Fn(usize, usize) -> f64,
) -> MeanPass {
    let horizon = cov.obs_rows.len();
    let mean = model.mean.unwrap_or(0.0);
    let mut a = model.a1.clone();
    let mut next = DVector::zeros(model.m);
    let mut out = MeanPass {
        a_pred: Vec::with_capacity(horizon),
        a_filt: Vec::with_capacity(horizon),
        innovations: Vec::with_capacity(horizon),
        loglik: 0.0,
    };
    for t in 0..horizon {
        let n = cov.obs_rows[t].len();
        let a_filt = if n == 0 {
            out.innovations.push(DVector::zeros(0));
            a.clone()
        } else {
            let mut v = DVector::from_fn(n, |i, _| values(t, i) - mean);
            v.gemv(-1.0, &cov.z_sel[t], &a, 1.0);
            let solved = cov.chol[t].as_ref().unwrap().solve(&v);
            out.loglik -= 0.5 * (n as f64 * LN_2PI + cov.logdet[t] + v.dot(&solved));
            let mut a_filt = a.clone();
            a_filt.gemv(1.0, &cov.gain[t], &v, 1.0);
            out.innovations.push(v);
            a_filt
        };
        cov.trans.mul_vec_into(&a_filt, &mut next);
        out.a_pred.push(std::mem::replace(&mut a, next.clone()));
        out.a_filt.push(a_filt);
    }
    out
}

/// Backward recursion producing smoothed state means.
pub(crate) fn smooth_means(
    model: &StateSpaceModel,
    cov: &CovPass,
    mean: &MeanPass,
) -> Vec<DVector<f64>> {
    let horizon = cov.obs_rows.len();
    let m = model.m;
    let mut smoothed = vec![DVector::zeros(m); horizon];
    let mut r = DVector::zeros(m);
    let mut r_prev = DVector::zeros(m);
    for t in (0..horizon).rev() {
        if cov.obs_rows[t].is_empty() {
            cov.trans.tr_mul_vec_into(&r, &mut r_prev);
        } else {
            let chol = cov.chol[t].as_ref().unwrap();
            let finv_v = chol.solve(&mean.innovations[t]);
            r_prev.gemv_tr(1.0, &cov.l_mat[t], &r, 0.0);
            r_prev.gemv_tr(1.0, &cov.z_sel[t], &finv_v, 1.0);
        }
        let mut s = mean.a_pred[t].clone();
        s.gemv(1.0, &cov.p_pred[t], &r_prev, 1.0);
        smoothed[t] = s;
        std::mem::swap(&mut r, &mut r_prev);
    }
    smoothed
}

/// Backward recursion producing smoothed state covariances.
pub(crate) fn smooth_covs(model: &StateSpaceModel, cov: &CovPass) -> Vec<DMatrix<f64>> {
    let horizon = cov.obs_rows.len();
    let m = model.m;
    let mut out = vec![DMatrix::zeros(m, m); horizon];
    let mut n_mat = DMatrix::zeros(m, m);
    let mut scratch = DMatrix::zeros(m, m);
    for t in (0..horizon).rev() {
        let n_prev = if cov.obs_rows[t].is_empty() {
            let mut np = DMatrix::zeros(m, m);
            cov.trans.tr_quad_into(&n_mat, &mut scratch, &mut np);
            np
        } else {
            let chol = cov.chol[t].as_ref().unwrap();
            let finv_z = chol.solve(&cov.z_sel[t]);
            let mut np = cov.z_sel[t].tr_mul(&finv_z);
            scratch.gemm(1.0, &n_mat, &cov.l_mat[t], 0.0);
            np.gemm_tr(1.0, &cov.l_mat[t], &scratch, 1.0);
            np
        };
        let mut v = cov.p_pred[t].clone();
        scratch.gemm(1.0, &n_prev, &cov.p_pred[t], 0.0);
        v.gemm(-1.0, &cov.p_pred[t], &scratch, 1.0);
        symmetrize(&mut v);
        out[t] = v;
        n_mat = n_prev;
    }
    out
}

pub(crate) fn rows_from_mask(obs: &ObservationMatrix) -> Vec<Vec<usize>> {
    (0..obs.n_periods())
        .map(|t| {
            (0..obs.n_columns())
                .filter(|&c| !obs.is_missing(t, c))
                .collect()
        })
        .collect()
}

/// Output of [`kalman_filter`]: per-period predicted and filtered moments,
/// innovations over the observed rows, gains, and the total log-likelihood.
pub struct FilterResult {
    pub loglik: f64,
    pub predicted_mean: Vec<DVector<f64>>,
    pub filtered_mean: Vec<DVector<f64>>,
    pub innovations: Vec<DVector<f64>>,
    pub(crate) cov: CovPass,
}

impl FilterResult {
    pub fn n_periods(&self) -> usize {
        self.predicted_mean.len()
    }

    /// Predicted state covariance at `t`.
    pub fn predicted_cov(&self, t: usize) -> &DMatrix<f64> {
        &self.cov.p_pred[t]
    }

    /// Filtered state covariance at `t`.
    pub fn filtered_cov(&self, t: usize) -> &DMatrix<f64> {
        &self.cov.p_filt[t]
    }

    /// Kalman gain at `t` (`m x n_t`, filtered update form `P Z' F^-1`).
    pub fn gain(&self, t: usize) -> &DMatrix<f64> {
        &self.cov.gain[t]
    }

    /// Observation-matrix columns retained at `t`.
    pub fn observed_columns(&self, t: usize) -> &[usize] {
        &self.cov.obs_rows[t]
    }
}

/// Kalman filter over a (possibly ragged) observation matrix. Masked rows
/// of `Z` are dropped each period; the log-likelihood is the sum of the
/// per-period Gaussian innovation log densities.
pub fn kalman_filter(model: &StateSpaceModel, obs: &ObservationMatrix) -> Result<FilterResult> {
    if obs.n_columns() != model.z.nrows() {
        return Err(Error::Invalid(format!(
            "observation matrix has {} columns, model expects {}",
            obs.n_columns(),
            model.z.nrows()
        )));
    }
    let rows = rows_from_mask(obs);
    let cov = cov_pass(model, rows)?;
    let mean = mean_pass(model, &cov, |t, i| {
        obs.get(t, cov.obs_rows[t][i]).expect("row selected as observed")
    });
    if !mean.loglik.is_finite() {
        return Err(Error::Degenerate("non-finite log-likelihood".into()));
    }
    Ok(FilterResult {
        loglik: mean.loglik,
        predicted_mean: mean.a_pred,
        filtered_mean: mean.a_filt,
        innovations: mean.innovations,
        cov,
    })
}

/// Fixed-interval smoother output.
pub struct Smoothed {
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
}

/// Fixed-interval smoothing from a finished filter pass.
pub fn kalman_smoother(model: &StateSpaceModel, fr: &FilterResult) -> Result<Smoothed> {
    if fr.predicted_mean.is_empty() {
        return Err(Error::Invalid("filter result is empty".into()));
    }
    if fr.predicted_mean[0].len() != model.m || fr.cov.p_pred[0].nrows() != model.m {
        return Err(Error::Invalid(
            "filter result does not match the model dimensions".into(),
        ));
    }
    let mean = MeanPass {
        a_pred: fr.predicted_mean.clone(),
        a_filt: fr.filtered_mean.clone(),
        innovations: fr.innovations.clone(),
        loglik: fr.loglik,
    };
    let means = smooth_means(model, &fr.cov, &mean);
    let covs = smooth_covs(model, &fr.cov);
    Ok(Smoothed { means, covs })
}

/// Stationary filter quantities: steady filtered state covariance, steady
/// gain and steady innovation covariance.
pub struct SteadyState {
    /// Stationary filtered state covariance.
    pub p_filtered: DMatrix<f64>,
    /// Steady Kalman gain (`m x n_obs`, filtered update form).
    pub k: DMatrix<f64>,
    /// Steady innovation covariance.
    pub sigma_a: DMatrix<f64>,
}

const RICCATI_TOL: f64 = 1e-12;
const RICCATI_MAX_ITER: usize = 10_000;

/// Iterate the predicted-covariance Riccati map from the unconditional
/// variance until successive iterates change by less than `1e-12`
/// (max-abs), erroring after 10,000 iterations.
pub fn steady_state(model: &StateSpaceModel) -> Result<SteadyState> {
    let rrt = model.rrt();
    let mut p = model.p1.clone();
    let mut converged = false;
    for _ in 0..RICCATI_MAX_ITER {
        let zp = &model.z * &p;
        let mut f = &zp * model.z.transpose();
        symmetrize(&mut f);
        let chol = Cholesky::new(f)
            .ok_or_else(|| Error::Degenerate("steady state: innovation covariance singular".into()))?;
        let gain = chol.solve(&zp).transpose();
        let mut p_filt = &p - &gain * &zp;
        symmetrize(&mut p_filt);
        let mut p_next = &model.t * &p_filt * model.t.transpose() + &rrt;
        symmetrize(&mut p_next);
        let delta = (&p_next - &p).amax();
        p = p_next;
        if delta < RICCATI_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence(
            "steady-state Riccati iteration did not converge".into(),
        ));
    }
    let zp = &model.z * &p;
    let mut sigma_a = &zp * model.z.transpose();
    symmetrize(&mut sigma_a);
    let chol = Cholesky::new(sigma_a.clone())
        .ok_or_else(|| Error::Degenerate("steady state: innovation covariance singular".into()))?;
    let k = chol.solve(&zp).transpose();
    let mut p_filtered = &p - &k * &zp;
    symmetrize(&mut p_filtered);
    Ok(SteadyState {
        p_filtered,
        k,
        sigma_a,
    })
}

/// Parameters of the univariate two-vintage model, in variance units:
/// `(rho, var_truth, var_news_1, var_news_2, var_noise_1, var_noise_2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnivariateTheta {
    pub rho: f64,
    pub var_truth: f64,
    pub var_news: [f64; 2],
    pub var_noise: [f64; 2],
}

impl UnivariateTheta {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::Invalid(format!(
                "rho must satisfy 0 <= rho < 1, got {}",
                self.rho
            )));
        }
        for v in [self.var_truth]
            .into_iter()
            .chain(self.var_news)
            .chain(self.var_noise)
        {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Invalid(format!(
                    "variances must be finite and nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Variance of the reduced-form truth innovation.
    pub fn sigma_bb(&self) -> f64 {
        self.var_truth + self.var_news[0] + self.var_news[1]
    }

    /// Covariance row between the truth innovation and the measurement
    /// innovations.
    pub fn sigma_bd(&self) -> [f64; 2] {
        [self.var_truth, self.var_truth + self.var_news[0]]
    }

    /// Covariance of the measurement innovations.
    pub fn sigma_dd(&self) -> [[f64; 2]; 2] {
        let s = self.var_truth;
        [
            [s + self.var_noise[0], s],
            [s, s + self.var_news[0] + self.var_noise[1]],
        ]
    }
}

/// Scalar moment summaries of a univariate theta, shared by the quadratic
/// and the innovation representation.
pub(crate) struct UnivariateMoments {
    /// tr(C C' Sdd^-1)
    pub u: f64,
    /// Sigma_BD Sdd^-1 C
    pub v: f64,
    /// Schur complement Sigma_BB - Sigma_BD Sdd^-1 Sigma_DB
    pub c: f64,
    pub sdd_inv: [[f64; 2]; 2],
}

pub(crate) fn univariate_moments(theta: &UnivariateTheta) -> Result<UnivariateMoments> {
    theta.validate()?;
    let sdd = theta.sigma_dd();
    let det = sdd[0][0] * sdd[1][1] - sdd[0][1] * sdd[1][0];
    if sdd[0][0] <= 0.0 || det <= 0.0 {
        return Err(Error::Degenerate(
            "Sigma_DD is not positive definite".into(),
        ));
    }
    let sdd_inv = [
        [sdd[1][1] / det, -sdd[0][1] / det],
        [-sdd[1][0] / det, sdd[0][0] / det],
    ];
    let rho = theta.rho;
    let bd = theta.sigma_bd();
    // C = [rho, rho]'
    let quad = |x: &[f64; 2], y: &[f64; 2]| {
        x[0] * (sdd_inv[0][0] * y[0] + sdd_inv[0][1] * y[1])
            + x[1] * (sdd_inv[1][0] * y[0] + sdd_inv[1][1] * y[1])
    };
    let ones = [1.0, 1.0];
    let u = rho * rho * quad(&ones, &ones);
    let v = rho * quad(&bd, &ones);
    let c = theta.sigma_bb() - quad(&bd, &bd);
    Ok(UnivariateMoments { u, v, c, sdd_inv })
}

/// Solve the scalar Riccati equation of the univariate two-vintage model
/// in closed form, returning the positive root of the quadratic
/// `a p^2 + b p + c = 0` with `a = -tr(C C' Sigma_DD^-1)`.
pub fn riccati_quadratic(theta: &UnivariateTheta) -> Result<f64> {
    let mom = univariate_moments(theta)?;
    if mom.c <= 0.0 {
        return Err(Error::Degenerate(
            "positivity condition violated: Schur complement not positive".into(),
        ));
    }
    let a = -mom.u;
    let b = (theta.rho - mom.v).powi(2) + mom.u * mom.c - 1.0;
    let c = mom.c;
    if a.abs() < 1e-14 {
        // rho = 0 collapses the quadratic to -p + c = 0.
        return Ok(-c / b);
    }
    let disc = b * b - 4.0 * a * c;
    if disc <= 0.0 {
        return Err(Error::Degenerate(
            "positivity condition violated: nonpositive discriminant".into(),
        ));
    }
    let p = (-b - disc.sqrt()) / (2.0 * a);
    if p <= 0.0 {
        return Err(Error::Degenerate(format!(
            "Riccati root is not positive: {p}"
        )));
    }
    Ok(p)
}

/// Rank-one inverse update: given `A^-1` and a rank-one `B`, return
/// `(A + B)^-1 = A^-1 - A^-1 B A^-1 / (1 + tr(B A^-1))`. A zero `B` is
/// treated as a no-op.
pub fn rank1_inverse_update(a_inv: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a_inv.nrows();
    if a_inv.ncols() != n || b.nrows() != n || b.ncols() != n {
        return Err(Error::Invalid(
            "rank1_inverse_update: matrices must be square and conformable".into(),
        ));
    }
    if b.amax() == 0.0 {
        return Ok(a_inv.clone());
    }
    let svd = b.clone().svd(false, false);
    let sv = &svd.singular_values;
    if sv.len() > 1 && sv[1] > 1e-10 * sv[0] {
        return Err(Error::Invalid(
            "rank1_inverse_update: update matrix has rank above one".into(),
        ));
    }
    let denom = 1.0 + (b * a_inv).trace();
    if denom.abs() < 1e-12 {
        return Err(Error::Degenerate(
            "rank1_inverse_update: denominator vanishes".into(),
        ));
    }
    Ok(a_inv - (a_inv * b * a_inv) / denom)
}

/// A labeled steady-gain weight: how much the filtered truth estimate
/// moves with a surprise in one release.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainWeight {
    pub series: usize,
    /// 1-based release index.
    pub release: u32,
    pub weight: f64,
}

/// Steady-state gain row of the truth state, labeled by (series, release).
pub fn kalman_gain_weights(model: &StateSpaceModel) -> Result<Vec<GainWeight>> {
    let l = model.layout.news[0].len();
    let n = model.z.nrows();
    if n != 2 * l {
        return Err(Error::Invalid(
            "gain weights require the two-series layout with 2l measurement rows".into(),
        ));
    }
    let steady = steady_state(model)?;
    let truth_row = model.layout.truth.start;
    Ok((0..n)
        .map(|col| GainWeight {
            series: col / l,
            release: (col % l + 1) as u32,
            weight: steady.k[(truth_row, col)],
        })
        .collect())
}
