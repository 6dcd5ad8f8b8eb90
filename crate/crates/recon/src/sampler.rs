//! Bayesian estimation by Gibbs sampling.
//!
//! Each sweep cycles three conditionals, in this order:
//!
//! 1. the full state path, drawn jointly by a mean-corrected simulation
//!    smoother (simulate an unconditional path, smooth both the real and
//!    the synthetic data, recombine). This yields an exact draw from
//!    `p(alpha | Y, theta)` even though the measurement equation is exact
//!    and the state innovation covariance is rank deficient;
//! 2. the autoregressive coefficients (and the common mean when enabled),
//!    from a conjugate normal regression on the drawn truth path with the
//!    news contribution subtracted, rejection-sampled to stationarity;
//! 3. every free shock variance, from its univariate inverse-gamma
//!    conditional after recovering the realized shocks from state-block
//!    differences (news states telescope; noise states are read off
//!    directly; the truth residual nets out the news contribution).
//!
//! Zero-restricted scales stay at zero; restricted coefficients keep a
//! near-zero prior variance. Chains run on independent RNG streams derived
//! from the master seed, so a fixed seed reproduces every draw bit for bit.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{cov_pass, mean_pass, rows_from_mask, smooth_means, CovPass};
use crate::ssm::{
    build_state_space, companion_spectral_radius, psd_sqrt, theta_names, theta_pack, CrossMode,
    ParamVector, ReconConfig, StateLayout, StateSpaceModel,
};
use crate::vintages::ObservationMatrix;

/// Chain schedule: total sweeps, burn-in, thinning, chain count, seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McmcSettings {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
    pub seed: u64,
}

impl Default for McmcSettings {
    /// The published schedule: 100K sweeps, 90K burn-in, keep every 10th.
    fn default() -> Self {
        McmcSettings {
            iterations: 100_000,
            burn_in: 90_000,
            thin: 10,
            chains: 1,
            seed: 0,
        }
    }
}

impl McmcSettings {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::Invalid("burn_in must be below iterations".into()));
        }
        if self.thin == 0 {
            return Err(Error::Invalid("thin must be >= 1".into()));
        }
        if self.chains == 0 {
            return Err(Error::Invalid("chains must be >= 1".into()));
        }
        Ok(())
    }

    pub fn kept_per_chain(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }

    pub fn n_kept(&self) -> usize {
        self.chains * self.kept_per_chain()
    }
}

/// Normal prior for a regression coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalPrior {
    pub mean: f64,
    pub var: f64,
}

/// Inverse-gamma prior (shape, rate) for a shock variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IgPrior {
    pub shape: f64,
    pub rate: f64,
}

const RESTRICTED_COEF_VAR: f64 = 1e-9;

/// Priors for all free parameters plus the set restricted to zero.
/// Restricted scale variances are pinned at exactly zero; restricted
/// coefficients keep a normal prior with near-zero variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub rho: Vec<NormalPrior>,
    pub mean: NormalPrior,
    /// Per-variance priors keyed by flat-theta name (`sigma_e`,
    /// `news_0_1`, `noise_1_2`, ...).
    pub scales: BTreeMap<String, IgPrior>,
    pub restricted: BTreeSet<String>,
}

impl PriorSpec {
    /// Weakly informative defaults: N(0, 10^2) on free coefficients,
    /// IG(3, 2) on free variances, and the final-release news scale of
    /// both series restricted to zero.
    pub fn default_for(config: &ReconConfig) -> Self {
        let mut scales = BTreeMap::new();
        scales.insert("sigma_e".to_string(), IgPrior { shape: 3.0, rate: 2.0 });
        for s in 0..2 {
            for j in 1..=config.l {
                scales.insert(format!("news_{s}_{j}"), IgPrior { shape: 3.0, rate: 2.0 });
                scales.insert(format!("noise_{s}_{j}"), IgPrior { shape: 3.0, rate: 2.0 });
            }
        }
        let restricted = [format!("news_0_{}", config.l), format!("news_1_{}", config.l)]
            .into_iter()
            .collect();
        PriorSpec {
            rho: vec![NormalPrior { mean: 0.0, var: 100.0 }; config.p],
            mean: NormalPrior { mean: 0.0, var: 100.0 },
            scales,
            restricted,
        }
    }

    /// Drop the final-release news restriction (frees both series' last
    /// news scales).
    pub fn without_final_news_restriction(mut self, config: &ReconConfig) -> Self {
        self.restricted.remove(&format!("news_0_{}", config.l));
        self.restricted.remove(&format!("news_1_{}", config.l));
        self
    }

    pub fn is_restricted(&self, name: &str) -> bool {
        self.restricted.contains(name)
    }

    fn scale_prior(&self, name: &str) -> Result<IgPrior> {
        self.scales
            .get(name)
            .copied()
            .ok_or_else(|| Error::Invalid(format!("no prior for scale `{name}`")))
    }

    /// Effective prior for coefficient `i`, accounting for restriction.
    fn rho_prior(&self, i: usize) -> NormalPrior {
        if self.restricted.contains(&format!("rho_{}", i + 1)) {
            NormalPrior { mean: 0.0, var: RESTRICTED_COEF_VAR }
        } else {
            self.rho[i]
        }
    }

    pub fn validate(&self, config: &ReconConfig) -> Result<()> {
        if self.rho.len() != config.p {
            return Err(Error::Invalid(format!(
                "priors: expected {} rho priors, got {}",
                config.p,
                self.rho.len()
            )));
        }
        for pr in self.rho.iter().chain([&self.mean]) {
            if !(pr.var > 0.0 && pr.var.is_finite() && pr.mean.is_finite()) {
                return Err(Error::Invalid(
                    "priors: coefficient variances must be positive".into(),
                ));
            }
        }
        for (name, ig) in &self.scales {
            if !(ig.shape > 0.0 && ig.rate > 0.0) {
                return Err(Error::Invalid(format!(
                    "priors: inverse-gamma shape/rate for `{name}` must be positive"
                )));
            }
        }
        for name in scale_names(config) {
            self.scale_prior(&name)?;
        }
        Ok(())
    }
}

fn scale_names(config: &ReconConfig) -> Vec<String> {
    let mut names = vec!["sigma_e".to_string()];
    for s in 0..2 {
        for j in 1..=config.l {
            names.push(format!("news_{s}_{j}"));
        }
    }
    for s in 0..2 {
        for j in 1..=config.l {
            names.push(format!("noise_{s}_{j}"));
        }
    }
    names
}

/// Per-parameter posterior summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
}

/// Thinned sampler output: kept parameter draws, optional state-path
/// draws, summaries, and recursive-mean diagnostics.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub config: ReconConfig,
    pub settings: McmcSettings,
    pub theta_names: Vec<String>,
    /// `n_kept x n_theta`, chain-major order.
    pub draws: DMatrix<f64>,
    /// One `T x m` state path per kept draw (sampler state layout,
    /// including the mean state when a common mean is estimated).
    pub state_draws: Option<Vec<DMatrix<f64>>>,
    /// Layout of the state paths above.
    pub state_layout: StateLayout,
    pub summaries: Vec<ParamSummary>,
    /// Running means per parameter, element k = mean of the first k kept
    /// draws.
    pub recursive_means: Vec<Vec<f64>>,
    /// Starting values used by every chain (flat-theta layout).
    pub init_theta: Vec<f64>,
    /// Offset subtracted from the data before estimation (zero when the
    /// mean is estimated inside the model).
    pub applied_mean: f64,
    /// The observation matrix the sampler saw.
    pub obs: ObservationMatrix,
}

impl PosteriorDraws {
    pub fn n_kept(&self) -> usize {
        self.draws.nrows()
    }

    pub fn theta_index(&self, name: &str) -> Option<usize> {
        self.theta_names.iter().position(|n| n == name)
    }
}

/// Running mean of one parameter over the kept draws.
pub fn recursive_mean(draws: &PosteriorDraws, param: usize) -> Result<Vec<f64>> {
    if draws.draws.nrows() == 0 {
        return Err(Error::Invalid("no kept draws".into()));
    }
    if param >= draws.draws.ncols() {
        return Err(Error::Invalid(format!(
            "parameter index {param} out of range ({} parameters)",
            draws.draws.ncols()
        )));
    }
    let mut out = Vec::with_capacity(draws.draws.nrows());
    let mut acc = 0.0;
    for k in 0..draws.draws.nrows() {
        acc += draws.draws[(k, param)];
        out.push(acc / (k + 1) as f64);
    }
    Ok(out)
}

/// Append a static mean state: unit transition, zero shock row, a column
/// of ones in `Z`, prior moments from `prior`.
fn augment_mean(base: &StateSpaceModel, prior: NormalPrior) -> StateSpaceModel {
    let m = base.m;
    let n = base.z.nrows();
    let mut z = DMatrix::zeros(n, m + 1);
    z.view_mut((0, 0), (n, m)).copy_from(&base.z);
    for i in 0..n {
        z[(i, m)] = 1.0;
    }
    let mut t = DMatrix::zeros(m + 1, m + 1);
    t.view_mut((0, 0), (m, m)).copy_from(&base.t);
    t[(m, m)] = 1.0;
    let mut r = DMatrix::zeros(m + 1, base.r_dim);
    r.view_mut((0, 0), (m, base.r_dim)).copy_from(&base.r);
    let mut a1 = DVector::zeros(m + 1);
    a1.rows_mut(0, m).copy_from(&base.a1);
    a1[m] = prior.mean;
    let mut p1 = DMatrix::zeros(m + 1, m + 1);
    p1.view_mut((0, 0), (m, m)).copy_from(&base.p1);
    p1[(m, m)] = prior.var;
    let mut layout = base.layout.clone();
    layout.mean = Some(m);
    StateSpaceModel {
        z,
        t,
        r,
        m: m + 1,
        r_dim: base.r_dim,
        layout,
        a1,
        p1,
        mean: None,
    }
}

/// Model the sampler filters with: the plain construction, plus the static
/// mean state when a common mean is estimated.
fn sampler_model(
    config: &ReconConfig,
    params: &ParamVector,
    mean_prior: NormalPrior,
) -> Result<StateSpaceModel> {
    let mut core = params.clone();
    core.mean = None;
    let base = build_state_space(config, &core)?;
    if config.center {
        Ok(augment_mean(&base, mean_prior))
    } else {
        Ok(base)
    }
}

/// One joint draw from `p(alpha_1..alpha_T | Y, theta)` by mean-corrected
/// simulation smoothing. Returns a `T x m` path.
pub fn draw_states(
    model: &StateSpaceModel,
    obs: &ObservationMatrix,
    rng: &mut impl Rng,
) -> Result<DMatrix<f64>> {
    if obs.n_columns() != model.z.nrows() {
        return Err(Error::Invalid(
            "observation matrix does not match the model".into(),
        ));
    }
    let cov = cov_pass(model, rows_from_mask(obs))?;
    draw_states_given_cov(model, obs, &cov, rng)
}

fn draw_states_given_cov(
    model: &StateSpaceModel,
    obs: &ObservationMatrix,
    cov: &CovPass,
    rng: &mut impl Rng,
) -> Result<DMatrix<f64>> {
    let horizon = obs.n_periods();
    let m = model.m;

    // Unconditional synthetic path with the same missingness pattern.
    let sqrt_p1 = psd_sqrt(&model.p1);
    let z0: DVector<f64> = DVector::from_fn(m, |_, _| rng.sample(StandardNormal));
    let mut alpha_plus = &model.a1 + &sqrt_p1 * z0;
    let mut eta = DVector::zeros(model.r_dim);
    let mut plus_paths = DMatrix::zeros(horizon, m);
    let mut plus_obs: Vec<DVector<f64>> = Vec::with_capacity(horizon);
    for t in 0..horizon {
        for i in 0..m {
            plus_paths[(t, i)] = alpha_plus[i];
        }
        plus_obs.push(&model.z * &alpha_plus);
        if t + 1 < horizon {
            for i in 0..model.r_dim {
                eta[i] = rng.sample(StandardNormal);
            }
            let mut next = DVector::zeros(m);
            cov.trans.mul_vec_into(&alpha_plus, &mut next);
            next.gemv(1.0, &model.r, &eta, 1.0);
            alpha_plus = next;
        }
    }

    let mut out = plus_paths;
    if model.a1.iter().all(|v| *v == 0.0) {
        // Smoothing is linear in the data and the prior mean term vanishes,
        // so one pass over the difference Y - Y+ yields the correction
        // E[alpha | Y] - E[alpha+ | Y+] directly.
        let mp_diff = mean_pass(model, cov, |t, i| {
            let c = cov.obs_rows[t][i];
            obs.get(t, c).expect("selected as observed") - plus_obs[t][c]
        });
        let correction = smooth_means(model, cov, &mp_diff);
        for t in 0..horizon {
            for i in 0..m {
                out[(t, i)] += correction[t][i];
            }
        }
    } else {
        let mp = mean_pass(model, cov, |t, i| {
            obs.get(t, cov.obs_rows[t][i]).expect("selected as observed")
        });
        let smoothed = smooth_means(model, cov, &mp);
        let mean = model.mean.unwrap_or(0.0);
        let mp_plus = mean_pass(model, cov, |t, i| plus_obs[t][cov.obs_rows[t][i]] + mean);
        let smoothed_plus = smooth_means(model, cov, &mp_plus);
        for t in 0..horizon {
            for i in 0..m {
                out[(t, i)] += smoothed[t][i] - smoothed_plus[t][i];
            }
        }
    }
    Ok(out)
}

/// Coefficient draw: the AR block, plus the common mean read off the
/// state path when it is part of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientDraw {
    pub rho: Vec<f64>,
    pub mean: Option<f64>,
}

const MAX_STATIONARY_ATTEMPTS: usize = 1000;

/// Conjugate normal draw of the AR coefficients given the state path:
/// regress the truth state net of its news content on the lagged truth
/// block, residual variance `sigma_e^2`. Draws are rejected until the
/// companion matrix is stable; after 1000 failures the previous value is
/// kept.
pub fn draw_coefficients(
    state_path: &DMatrix<f64>,
    config: &ReconConfig,
    priors: &PriorSpec,
    current: &ParamVector,
    rng: &mut impl Rng,
) -> Result<CoefficientDraw> {
    let layout = sampler_layout(config);
    let horizon = state_path.nrows();
    let p = config.p;
    if state_path.ncols() != sampler_state_dim(config) {
        return Err(Error::Invalid(
            "state path does not match the config layout".into(),
        ));
    }
    if horizon < p + 2 {
        return Err(Error::Invalid(format!(
            "need at least p + 1 = {} effective periods, have {}",
            p + 1,
            horizon.saturating_sub(1)
        )));
    }

    let s2 = (current.sigma_e * current.sigma_e).max(1e-12);
    let mut xtx = DMatrix::zeros(p, p);
    let mut xty = DVector::zeros(p);
    for t in 1..horizon {
        // Truth net of the news contribution: the first news state of each
        // series telescopes to minus the sum of that series' news shocks.
        let y = state_path[(t, 0)]
            + state_path[(t, layout.news[0].start)]
            + state_path[(t, layout.news[1].start)];
        for i in 0..p {
            let xi = state_path[(t - 1, i)];
            xty[i] += xi * y;
            for j in 0..p {
                xtx[(i, j)] += xi * state_path[(t - 1, j)];
            }
        }
    }

    let mut precision = xtx / s2;
    let mut lean = xty / s2;
    for i in 0..p {
        let prior = priors.rho_prior(i);
        precision[(i, i)] += 1.0 / prior.var;
        lean[i] += prior.mean / prior.var;
    }
    let chol = Cholesky::new(precision)
        .ok_or_else(|| Error::Degenerate("coefficient posterior precision singular".into()))?;
    let post_mean = chol.solve(&lean);
    // Draw rho = mean + L^-T z with L the Cholesky factor of the precision.
    let mut rho = current.rho.clone();
    for _ in 0..MAX_STATIONARY_ATTEMPTS {
        let z: DVector<f64> = DVector::from_fn(p, |_, _| rng.sample(StandardNormal));
        let perturb = chol
            .l_dirty()
            .transpose()
            .solve_upper_triangular(&z)
            .ok_or_else(|| Error::Degenerate("coefficient posterior factor singular".into()))?;
        let candidate: Vec<f64> = (0..p).map(|i| post_mean[i] + perturb[i]).collect();
        if companion_spectral_radius(&candidate) < 1.0 {
            rho = candidate;
            break;
        }
    }

    let mean = layout.mean.map(|idx| state_path[(0, idx)]);
    Ok(CoefficientDraw { rho, mean })
}

/// All shock-scale draws for one sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleDraws {
    pub sigma_e: f64,
    pub sigma_news: [Vec<f64>; 2],
    pub sigma_noise: [Vec<f64>; 2],
}

fn draw_inverse_gamma(prior: IgPrior, n: usize, ss: f64, rng: &mut impl Rng) -> f64 {
    let shape = prior.shape + 0.5 * n as f64;
    let rate = prior.rate + 0.5 * ss;
    let gamma = Gamma::new(shape, 1.0 / rate).expect("valid gamma parameters");
    let x: f64 = gamma.sample(rng);
    1.0 / x
}

/// Inverse-gamma draws of every free shock variance given the state path.
/// Realized shocks are recovered exactly: news shocks from telescoped
/// news-state differences, noise shocks from the noise states, and the
/// truth shock from the transition residual net of the news contribution.
pub fn draw_scales(
    state_path: &DMatrix<f64>,
    config: &ReconConfig,
    priors: &PriorSpec,
    current: &ParamVector,
    rng: &mut impl Rng,
) -> Result<ScaleDraws> {
    let layout = sampler_layout(config);
    let horizon = state_path.nrows();
    let l = config.l;
    let p = config.p;
    if state_path.ncols() != sampler_state_dim(config) {
        return Err(Error::Invalid(
            "state path does not match the config layout".into(),
        ));
    }
    if horizon < 2 {
        return Err(Error::Invalid(
            "need at least two periods to recover shocks".into(),
        ));
    }
    let n = horizon - 1;

    let mut ss_news = [vec![0.0; l], vec![0.0; l]];
    let mut ss_noise = [vec![0.0; l], vec![0.0; l]];
    let mut ss_truth = 0.0;
    for t in 1..horizon {
        for s in 0..2 {
            let base = layout.news[s].start;
            for i in 0..l {
                let here = state_path[(t, base + i)];
                let next = if i + 1 < l { state_path[(t, base + i + 1)] } else { 0.0 };
                let d = here - next;
                ss_news[s][i] += d * d;
            }
            let nbase = layout.noise[s].start;
            for i in 0..l {
                let v = state_path[(t, nbase + i)];
                ss_noise[s][i] += v * v;
            }
        }
        let mut pred = 0.0;
        for j in 0..p {
            pred += current.rho[j] * state_path[(t - 1, j)];
        }
        let news_sum =
            -(state_path[(t, layout.news[0].start)] + state_path[(t, layout.news[1].start)]);
        let e = state_path[(t, 0)] - pred - news_sum;
        ss_truth += e * e;
    }

    let sigma_e = if priors.is_restricted("sigma_e") {
        0.0
    } else {
        draw_inverse_gamma(priors.scale_prior("sigma_e")?, n, ss_truth, rng).sqrt()
    };
    let mut sigma_news = [vec![0.0; l], vec![0.0; l]];
    let mut sigma_noise = [vec![0.0; l], vec![0.0; l]];
    for s in 0..2 {
        for j in 0..l {
            let news_name = format!("news_{s}_{}", j + 1);
            sigma_news[s][j] = if priors.is_restricted(&news_name) {
                0.0
            } else {
                draw_inverse_gamma(priors.scale_prior(&news_name)?, n, ss_news[s][j], rng).sqrt()
            };
            let noise_name = format!("noise_{s}_{}", j + 1);
            sigma_noise[s][j] = if priors.is_restricted(&noise_name) {
                0.0
            } else {
                draw_inverse_gamma(priors.scale_prior(&noise_name)?, n, ss_noise[s][j], rng)
                    .sqrt()
            };
        }
    }
    Ok(ScaleDraws {
        sigma_e,
        sigma_news,
        sigma_noise,
    })
}

fn sampler_layout(config: &ReconConfig) -> StateLayout {
    let mut layout = StateLayout::for_config(config);
    if config.center {
        layout.mean = Some(config.state_dim());
    }
    layout
}

fn sampler_state_dim(config: &ReconConfig) -> usize {
    config.state_dim() + usize::from(config.center)
}

/// Data-driven starting values: an OLS AR(p) fit to the first series' last
/// release, and scale heuristics from the observed revision spread. The
/// exact values are echoed in [`PosteriorDraws::init_theta`].
pub fn initial_params(config: &ReconConfig, obs: &ObservationMatrix) -> ParamVector {
    let l = config.l;
    let p = config.p;
    let col = l - 1; // series 0, last release
    let series: Vec<f64> = (0..obs.n_periods())
        .filter_map(|t| obs.get(t, col))
        .collect();
    let n = series.len();
    let mean = if n > 0 { series.iter().sum::<f64>() / n as f64 } else { 0.0 };
    let var = if n > 1 {
        series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
    } else {
        1.0
    };

    // OLS AR(p) on the demeaned series, falling back to a mildly
    // persistent default when the fit is unusable.
    let mut rho = vec![0.0; p];
    rho[0] = 0.3;
    if n > p + 2 {
        let mut xtx = DMatrix::zeros(p, p);
        let mut xty = DVector::zeros(p);
        for t in p..n {
            let y = series[t] - mean;
            for i in 0..p {
                let xi = series[t - 1 - i] - mean;
                xty[i] += xi * y;
                for j in 0..p {
                    xtx[(i, j)] += xi * (series[t - 1 - j] - mean);
                }
            }
        }
        if let Some(chol) = Cholesky::new(xtx) {
            let beta = chol.solve(&xty);
            let candidate: Vec<f64> = beta.iter().copied().collect();
            let radius = companion_spectral_radius(&candidate);
            if radius.is_finite() && !candidate.iter().any(|v| !v.is_finite()) {
                if radius < 0.95 {
                    rho = candidate;
                } else {
                    rho = candidate.iter().map(|v| v * 0.9 / radius).collect();
                }
            }
        }
    }

    // Split the observed revision variance between news and noise.
    let mut rev_var = [0.25, 0.25];
    for (s, slot) in rev_var.iter_mut().enumerate() {
        let first = s * l;
        let last = s * l + l - 1;
        let revs: Vec<f64> = (0..obs.n_periods())
            .filter_map(|t| match (obs.get(t, first), obs.get(t, last)) {
                (Some(a), Some(b)) => Some(b - a),
                _ => None,
            })
            .collect();
        if revs.len() > 2 {
            let rm = revs.iter().sum::<f64>() / revs.len() as f64;
            *slot =
                revs.iter().map(|v| (v - rm) * (v - rm)).sum::<f64>() / (revs.len() - 1) as f64;
        }
        if *slot <= 1e-8 {
            *slot = 0.25;
        }
    }
    let radius = companion_spectral_radius(&rho);
    let sigma_e = (0.5 * var * (1.0 - radius * radius)).max(0.01).sqrt();
    let per_release = |v: f64| (v / (2.0 * l as f64)).max(1e-4).sqrt();
    let sigma_news = [vec![per_release(rev_var[0]); l], vec![per_release(rev_var[1]); l]];
    let sigma_noise = [vec![per_release(rev_var[0]); l], vec![per_release(rev_var[1]); l]];

    ParamVector {
        rho,
        sigma_e,
        sigma_news,
        sigma_noise,
        mean: config.center.then_some(mean),
        ts_diag: None,
        psi: None,
        phi: None,
    }
}

fn apply_restrictions(params: &mut ParamVector, config: &ReconConfig, priors: &PriorSpec) {
    if priors.is_restricted("sigma_e") {
        params.sigma_e = 0.0;
    }
    for s in 0..2 {
        for j in 0..config.l {
            if priors.is_restricted(&format!("news_{s}_{}", j + 1)) {
                params.sigma_news[s][j] = 0.0;
            }
            if priors.is_restricted(&format!("noise_{s}_{}", j + 1)) {
                params.sigma_noise[s][j] = 0.0;
            }
        }
    }
}

struct ChainOutput {
    thetas: Vec<Vec<f64>>,
    states: Vec<DMatrix<f64>>,
}

fn run_chain(
    config: &ReconConfig,
    obs: &ObservationMatrix,
    priors: &PriorSpec,
    settings: &McmcSettings,
    init: &ParamVector,
    stream: u64,
    store_states: bool,
) -> Result<ChainOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    rng.set_stream(stream);

    let mut current = init.clone();
    let kept = settings.kept_per_chain();
    let mut out = ChainOutput {
        thetas: Vec::with_capacity(kept),
        states: Vec::with_capacity(if store_states { kept } else { 0 }),
    };
    let reject_limit = (settings.iterations / 10).max(10);
    let mut consecutive_rejects = 0usize;
    let mut last_states: Option<DMatrix<f64>> = None;

    for sweep in 1..=settings.iterations {
        let attempt = (|| -> Result<DMatrix<f64>> {
            let model = sampler_model(config, &current, priors.mean)?;
            let states = draw_states(&model, obs, &mut rng)?;
            let coef = draw_coefficients(&states, config, priors, &current, &mut rng)?;
            current.rho = coef.rho;
            if config.center {
                current.mean = coef.mean;
            }
            let scales = draw_scales(&states, config, priors, &current, &mut rng)?;
            current.sigma_e = scales.sigma_e;
            current.sigma_news = scales.sigma_news;
            current.sigma_noise = scales.sigma_noise;
            Ok(states)
        })();
        match attempt {
            Ok(states) => {
                consecutive_rejects = 0;
                last_states = Some(states);
            }
            Err(Error::Degenerate(msg)) => {
                consecutive_rejects += 1;
                if consecutive_rejects > reject_limit {
                    return Err(Error::Degenerate(format!(
                        "sampler rejected {consecutive_rejects} consecutive sweeps: {msg}"
                    )));
                }
            }
            Err(other) => return Err(other),
        }
        if sweep > settings.burn_in && (sweep - settings.burn_in) % settings.thin == 0 {
            out.thetas.push(theta_pack(&current, config)?);
            if store_states {
                let states = last_states.as_ref().ok_or_else(|| {
                    Error::Degenerate("no accepted state draw before the first kept sweep".into())
                })?;
                out.states.push(states.clone());
            }
        }
    }
    Ok(out)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let idx = (q * (sorted.len() - 1) as f64).round() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

/// Run the Gibbs sampler and keep states for post-estimation analysis.
pub fn run_gibbs(
    config: &ReconConfig,
    obs: &ObservationMatrix,
    priors: &PriorSpec,
    settings: &McmcSettings,
) -> Result<PosteriorDraws> {
    run_gibbs_with_options(config, obs, priors, settings, true)
}

/// [`run_gibbs`] with control over state-path storage.
pub fn run_gibbs_with_options(
    config: &ReconConfig,
    obs: &ObservationMatrix,
    priors: &PriorSpec,
    settings: &McmcSettings,
    store_states: bool,
) -> Result<PosteriorDraws> {
    config.validate()?;
    settings.validate()?;
    priors.validate(config)?;
    if config.spillovers
        || config.cross_news != CrossMode::None
        || config.cross_noise != CrossMode::None
    {
        return Err(Error::Invalid(
            "estimation covers the baseline model class; spillovers and cross-series \
             loadings are available for model building and identification analysis only"
                .into(),
        ));
    }
    if obs.n_columns() != config.obs_dim() {
        return Err(Error::Invalid(format!(
            "data has {} columns, config wants {}",
            obs.n_columns(),
            config.obs_dim()
        )));
    }
    if obs.n_observed() == 0 {
        return Err(Error::Invalid("all observations are missing".into()));
    }

    let mut init = initial_params(config, obs);
    apply_restrictions(&mut init, config, priors);
    let init_theta = theta_pack(&init, config)?;

    let mut chain_outputs: Vec<ChainOutput> = Vec::with_capacity(settings.chains);
    if settings.chains == 1 {
        chain_outputs.push(run_chain(config, obs, priors, settings, &init, 0, store_states)?);
    } else {
        let results: Vec<Result<ChainOutput>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..settings.chains)
                .map(|c| {
                    let init = &init;
                    scope.spawn(move || {
                        run_chain(config, obs, priors, settings, init, c as u64, store_states)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("chain panicked"))
                .collect()
        });
        for r in results {
            chain_outputs.push(r?);
        }
    }

    let names = theta_names(config);
    let k = names.len();
    let n_kept = settings.n_kept();
    let mut draws = DMatrix::zeros(n_kept, k);
    let mut states = store_states.then(Vec::new);
    let mut row = 0usize;
    for chain in chain_outputs {
        for theta in chain.thetas {
            for (j, v) in theta.iter().enumerate() {
                draws[(row, j)] = *v;
            }
            row += 1;
        }
        if let Some(states) = states.as_mut() {
            states.extend(chain.states);
        }
    }
    debug_assert_eq!(row, n_kept);

    let mut summaries = Vec::with_capacity(k);
    let mut recursive = Vec::with_capacity(k);
    for j in 0..k {
        let col: Vec<f64> = (0..n_kept).map(|i| draws[(i, j)]).collect();
        let mean = col.iter().sum::<f64>() / n_kept as f64;
        let sd = if n_kept > 1 {
            (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n_kept - 1) as f64)
                .sqrt()
        } else {
            0.0
        };
        let mut sorted = col.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        summaries.push(ParamSummary {
            name: names[j].clone(),
            mean,
            sd,
            q05: quantile(&sorted, 0.05),
            q50: quantile(&sorted, 0.50),
            q95: quantile(&sorted, 0.95),
        });
        let mut running = Vec::with_capacity(n_kept);
        let mut acc = 0.0;
        for (i, v) in col.iter().enumerate() {
            acc += v;
            running.push(acc / (i + 1) as f64);
        }
        recursive.push(running);
    }

    Ok(PosteriorDraws {
        config: *config,
        settings: *settings,
        theta_names: names,
        draws,
        state_draws: states,
        state_layout: sampler_layout(config),
        summaries,
        recursive_means: recursive,
        init_theta,
        applied_mean: 0.0,
        obs: obs.clone(),
    })
}
