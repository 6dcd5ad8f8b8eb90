//! Identification analysis: order-condition moment counting for the
//! reconciliation model and its generalizations, and the innovation
//! representation of the univariate two-vintage model together with the
//! observational-equivalence family that motivates the final-release
//! news restriction.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::filter::{rank1_inverse_update, riccati_quadratic, univariate_moments, UnivariateTheta};
use crate::ssm::{discrete_lyapunov, CrossMode, StateLayout, StateSpaceModel};

/// Structural switches of the generalized reconciliation model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct StructuralFlags {
    pub spillovers: bool,
    pub cross_news: CrossMode,
    pub cross_noise: CrossMode,
}

/// Order-condition bookkeeping: observable moments versus free parameters,
/// with named contributions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentCount {
    pub n_moments: usize,
    pub n_params: usize,
    /// `n_moments >= n_params`.
    pub order_condition_met: bool,
    pub moments: Vec<(String, usize)>,
    pub params: Vec<(String, usize)>,
}

impl MomentCount {
    fn assemble(moments: Vec<(String, usize)>, params: Vec<(String, usize)>) -> Self {
        let n_moments = moments.iter().map(|(_, n)| n).sum();
        let n_params = params.iter().map(|(_, n)| n).sum();
        MomentCount {
            n_moments,
            n_params,
            order_condition_met: n_moments >= n_params,
            moments,
            params,
        }
    }
}

/// Count observable moments against free parameters for two series with
/// `l` releases each and an AR(p) truth. The baseline yields `l(2l + 3)`
/// moments against `2(1 + 2l)` parameters; each structural switch adds its
/// own delta. Cross-series loadings add parameters but no new moments.
pub fn count_moments(l: usize, p: usize, flags: &StructuralFlags) -> MomentCount {
    count_moments_unequal(l, l, p, flags)
}

/// Generalization of [`count_moments`] to per-series release counts. The
/// shared-`l` case reproduces the published arithmetic exactly; unequal
/// counts are this crate's extension of the same counting logic (the
/// stacked observation vector simply has `l0 + l1` rows).
pub fn count_moments_unequal(
    l0: usize,
    l1: usize,
    p: usize,
    flags: &StructuralFlags,
) -> MomentCount {
    let n = l0 + l1;
    let mut moments = vec![
        ("contemporaneous cross moments".into(), n * (n + 1) / 2),
        ("first-order autocorrelations".into(), n),
    ];
    if p > 1 {
        moments.push(("higher-order autocorrelations".into(), 2 * (p - 1)));
    }
    if flags.spillovers {
        moments.push((
            "revision autocorrelations".into(),
            (l0.saturating_sub(1)) + (l1.saturating_sub(1)),
        ));
    }

    let mut params = vec![
        ("autoregressive coefficients".into(), p),
        ("truth shock scale".into(), 1),
        ("news scales".into(), n),
        ("noise scales".into(), n),
    ];
    if flags.spillovers {
        params.push(("spillover diagonal".into(), 2 * n));
    }
    let cross = |mode: CrossMode| match mode {
        CrossMode::None => 0,
        CrossMode::Contemporaneous => l0.min(l1),
        CrossMode::Unrestricted => l0 * l1,
    };
    let cn = cross(flags.cross_news);
    if cn > 0 {
        params.push(("cross-news loadings".into(), cn));
    }
    let cz = cross(flags.cross_noise);
    if cz > 0 {
        params.push(("cross-noise loadings".into(), cz));
    }
    MomentCount::assemble(moments, params)
}

/// Innovation representation of the univariate two-vintage model:
/// `x_{t+1|t+1} = A x_{t|t} + K a_{t+1}`, `z_{t+1} = C x_{t|t} + a_{t+1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnovationRep {
    /// Truth dynamics map (the AR coefficient).
    pub a: f64,
    /// Steady Kalman gain row.
    pub k: [f64; 2],
    /// Observation loading column.
    pub c: [f64; 2],
    /// Steady innovation covariance.
    pub sigma_a: [[f64; 2]; 2],
    /// Stationary filtered-state variance solving the scalar Riccati
    /// equation.
    pub p: f64,
}

impl InnovationRep {
    /// Largest componentwise gap between two representations.
    pub fn max_abs_difference(&self, other: &InnovationRep) -> f64 {
        let mut d: f64 = (self.a - other.a).abs();
        for i in 0..2 {
            d = d.max((self.k[i] - other.k[i]).abs());
            d = d.max((self.c[i] - other.c[i]).abs());
            for j in 0..2 {
                d = d.max((self.sigma_a[i][j] - other.sigma_a[i][j]).abs());
            }
        }
        d
    }
}

/// Compute the innovation representation from the moment matrices of the
/// univariate model, solving the Riccati equation in closed form.
pub fn innovation_representation(theta: &UnivariateTheta) -> Result<InnovationRep> {
    let p = riccati_quadratic(theta)?;
    let mom = univariate_moments(theta)?;
    let rho = theta.rho;
    let c = [rho, rho];
    let sdd = theta.sigma_dd();
    let sdd_inv = DMatrix::from_fn(2, 2, |i, j| mom.sdd_inv[i][j]);
    // (p C C' + Sigma_DD)^-1 through the rank-one update lemma.
    let ones = DVector::from_element(2, 1.0);
    let pcc = (&ones * ones.transpose()) * (p * rho * rho);
    let inv = rank1_inverse_update(&sdd_inv, &pcc)?;
    let bd = theta.sigma_bd();
    let numer = [p * rho * rho + bd[0], p * rho * rho + bd[1]];
    let mut k = [0.0; 2];
    for j in 0..2 {
        k[j] = numer[0] * inv[(0, j)] + numer[1] * inv[(1, j)];
    }
    let mut sigma_a = [[0.0; 2]; 2];
    for (i, row) in sigma_a.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = p * rho * rho + sdd[i][j];
        }
    }
    Ok(InnovationRep {
        a: rho,
        k,
        c,
        sigma_a,
        p,
    })
}

/// Member of the observational-equivalence family through `theta0`: shifts
/// `delta` of variance between the truth shock and the final-release news
/// shock, leaving the innovation representation unchanged:
///
/// ```text
/// var_truth  ->  var_truth - delta rho^2
/// var_news_2 ->  var_news_2 + delta
/// ```
///
/// Every other entry is untouched. `delta` must keep the implied variances
/// nonnegative and the shifted Riccati solution `p0 + delta` positive.
pub fn equivalent_theta(theta0: &UnivariateTheta, delta: f64) -> Result<UnivariateTheta> {
    theta0.validate()?;
    let p0 = riccati_quadratic(theta0)?;
    let var_truth = theta0.var_truth - delta * theta0.rho * theta0.rho;
    let var_news2 = theta0.var_news[1] + delta;
    if var_truth < 0.0 || var_news2 < 0.0 || p0 + delta <= 0.0 {
        return Err(Error::Invalid(format!(
            "delta {delta} leaves the admissible region"
        )));
    }
    Ok(UnivariateTheta {
        rho: theta0.rho,
        var_truth,
        var_news: [theta0.var_news[0], var_news2],
        var_noise: theta0.var_noise,
    })
}

/// Numerical minimality check of the innovation representation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Minimality {
    pub controllable: bool,
    pub observable: bool,
    /// Largest singular value of the controllability matrix `[K, A K]`.
    pub controllability_sv: f64,
    /// Largest singular value of the observability matrix `[C; C A]`.
    pub observability_sv: f64,
    /// Relative rank tolerance applied to the singular values.
    pub tolerance: f64,
}

const RANK_TOL: f64 = 1e-10;

fn numeric_rank(mat: &DMatrix<f64>) -> (usize, f64) {
    let sv = mat.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return (0, 0.0);
    }
    let rank = sv.iter().filter(|&&s| s > RANK_TOL * max).count();
    (rank, max)
}

/// Evaluate controllability (`[K, A K]` full row rank) and observability
/// (`[C; C A]` full column rank) of the scalar-state innovation
/// representation.
pub fn check_minimality(theta: &UnivariateTheta) -> Result<Minimality> {
    let rep = innovation_representation(theta)?;
    let ctrl = DMatrix::from_row_slice(
        1,
        4,
        &[rep.k[0], rep.k[1], rep.a * rep.k[0], rep.a * rep.k[1]],
    );
    let obsv = DMatrix::from_column_slice(
        4,
        1,
        &[rep.c[0], rep.c[1], rep.c[0] * rep.a, rep.c[1] * rep.a],
    );
    let (ctrl_rank, ctrl_sv) = numeric_rank(&ctrl);
    let (obsv_rank, obsv_sv) = numeric_rank(&obsv);
    Ok(Minimality {
        controllable: ctrl_rank == 1,
        observable: obsv_rank == 1,
        controllability_sv: ctrl_sv,
        observability_sv: obsv_sv,
        tolerance: RANK_TOL,
    })
}

/// Assemble the univariate two-vintage model as a five-state system
/// (truth, two news states, two noise states) with scales folded into `R`
/// and unit shock covariance.
pub fn univariate_model(theta: &UnivariateTheta) -> Result<StateSpaceModel> {
    theta.validate()?;
    let s_y = theta.var_truth.sqrt();
    let s_n1 = theta.var_news[0].sqrt();
    let s_n2 = theta.var_news[1].sqrt();
    let s_z1 = theta.var_noise[0].sqrt();
    let s_z2 = theta.var_noise[1].sqrt();
    let z = DMatrix::from_row_slice(
        2,
        5,
        &[
            1.0, 1.0, 0.0, 1.0, 0.0, //
            1.0, 0.0, 1.0, 0.0, 1.0,
        ],
    );
    let mut t = DMatrix::zeros(5, 5);
    t[(0, 0)] = theta.rho;
    let r = DMatrix::from_row_slice(
        5,
        5,
        &[
            s_y, s_n1, s_n2, 0.0, 0.0, //
            0.0, -s_n1, -s_n2, 0.0, 0.0, //
            0.0, 0.0, -s_n2, 0.0, 0.0, //
            0.0, 0.0, 0.0, s_z1, 0.0, //
            0.0, 0.0, 0.0, 0.0, s_z2,
        ],
    );
    let rrt = &r * r.transpose();
    let p1 = discrete_lyapunov(&t, &rrt)?;
    Ok(StateSpaceModel {
        z,
        t,
        r,
        m: 5,
        r_dim: 5,
        layout: StateLayout {
            truth: 0..1,
            news: [1..3, 3..3],
            noise: [3..5, 5..5],
            mean: None,
        },
        a1: DVector::zeros(5),
        p1,
        mean: None,
    })
}
