//! State-space construction for the two-series news/noise reconciliation
//! model, plus simulation from it.
//!
//! Two series each publish `l` successive releases of the same latent
//! quarterly value. The state stacks the truth block (an AR(p) in companion
//! form) with per-series news and noise measurement-error states:
//!
//! ```text
//! alpha_t = [ truth (p) | news_0 (l) | news_1 (l) | noise_0 (l) | noise_1 (l) ]
//! Y_t     = Z alpha_t                    (measurement, exact)
//! alpha_t = T alpha_{t-1} + R eta_t      (transition, eta ~ N(0, I))
//! ```
//!
//! All shock scales live in `R`; the shock covariance is the identity.
//! News shocks enter the truth row with `+sigma` and the news states
//! through an upper-triangular pattern with `-sigma`, so that release `i`
//! already incorporates news shocks `1..i-1` while later news is still
//! missing from it. Noise states are scaled identities.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::ops::Range;

use crate::error::{Error, Result};

/// How measurement-error shocks may correlate across the two series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CrossMode {
    /// No cross-series correlation (the estimated baseline).
    #[default]
    None,
    /// Same-release correlation only: diagonal loading matrix.
    Contemporaneous,
    /// Full `l x l` loading matrix.
    Unrestricted,
}

impl CrossMode {
    /// Free parameters contributed by one cross-loading matrix.
    pub fn n_free(self, l: usize) -> usize {
        match self {
            CrossMode::None => 0,
            CrossMode::Contemporaneous => l,
            CrossMode::Unrestricted => l * l,
        }
    }
}

/// Shape of the reconciliation model: release depth, AR order of the
/// truth, and the structural switches of the generalized model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconConfig {
    /// Releases used per series (shared by both series).
    pub l: usize,
    /// AR order of the latent truth.
    pub p: usize,
    /// Estimate a common mean inside the model instead of demeaning.
    #[serde(default)]
    pub center: bool,
    /// Allow measurement errors to persist across calendar periods
    /// (diagonal transition block for the error states).
    #[serde(default)]
    pub spillovers: bool,
    /// Cross-series news-shock loadings.
    #[serde(default)]
    pub cross_news: CrossMode,
    /// Cross-series noise-shock loadings.
    #[serde(default)]
    pub cross_noise: CrossMode,
}

impl ReconConfig {
    /// A plain news+noise model with `l` releases and an AR(p) truth.
    pub fn basic(l: usize, p: usize) -> Self {
        ReconConfig {
            l,
            p,
            center: false,
            spillovers: false,
            cross_news: CrossMode::None,
            cross_noise: CrossMode::None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.l < 1 {
            return Err(Error::Invalid("config: l must be >= 1".into()));
        }
        if self.p < 1 {
            return Err(Error::Invalid("config: p must be >= 1".into()));
        }
        Ok(())
    }

    /// State dimension `p + 4l`.
    pub fn state_dim(&self) -> usize {
        self.p + 4 * self.l
    }

    /// Shock dimension `1 + 4l`.
    pub fn shock_dim(&self) -> usize {
        1 + 4 * self.l
    }

    /// Observation dimension `2l`.
    pub fn obs_dim(&self) -> usize {
        2 * self.l
    }
}

/// Index map into the stacked state vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateLayout {
    pub truth: Range<usize>,
    pub news: [Range<usize>; 2],
    pub noise: [Range<usize>; 2],
    /// Static mean state appended by the sampler when a common mean is
    /// estimated; absent from plain constructions.
    pub mean: Option<usize>,
}

impl StateLayout {
    pub fn for_config(config: &ReconConfig) -> Self {
        let (p, l) = (config.p, config.l);
        StateLayout {
            truth: 0..p,
            news: [p..p + l, p + l..p + 2 * l],
            noise: [p + 2 * l..p + 3 * l, p + 3 * l..p + 4 * l],
            mean: None,
        }
    }

    /// State index of the news state for `(series, release)`; 1-based release.
    pub fn news_state(&self, series: usize, release: usize) -> usize {
        self.news[series].start + release - 1
    }

    /// State index of the noise state for `(series, release)`; 1-based release.
    pub fn noise_state(&self, series: usize, release: usize) -> usize {
        self.noise[series].start + release - 1
    }
}

/// Model parameters: AR coefficients and the shock scales (standard
/// deviations), plus the optional generalized-model blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub rho: Vec<f64>,
    pub sigma_e: f64,
    /// News scales per series and release, `sigma_news[series][release-1]`.
    pub sigma_news: [Vec<f64>; 2],
    /// Noise scales per series and release.
    pub sigma_noise: [Vec<f64>; 2],
    /// Common mean of the observed series (model-level constant).
    pub mean: Option<f64>,
    /// Diagonal of the error-state transition block, length `4l`,
    /// ordered news 0, news 1, noise 0, noise 1.
    pub ts_diag: Option<Vec<f64>>,
    /// Cross-news loading of series-0 news states on series-1 news shocks.
    pub psi: Option<DMatrix<f64>>,
    /// Cross-noise loading of series-0 noise states on series-1 noise shocks.
    pub phi: Option<DMatrix<f64>>,
}

impl ParamVector {
    /// All scales zero except those provided; convenient test/CLI seed.
    pub fn basic(rho: Vec<f64>, sigma_e: f64, sigma_news: [Vec<f64>; 2], sigma_noise: [Vec<f64>; 2]) -> Self {
        ParamVector {
            rho,
            sigma_e,
            sigma_news,
            sigma_noise,
            mean: None,
            ts_diag: None,
            psi: None,
            phi: None,
        }
    }
}

/// Realized system matrices with dimension metadata, the state layout,
/// and the stationary initial distribution `alpha_1 ~ N(a1, p1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    pub z: DMatrix<f64>,
    pub t: DMatrix<f64>,
    pub r: DMatrix<f64>,
    /// State dimension.
    pub m: usize,
    /// Shock dimension.
    pub r_dim: usize,
    pub layout: StateLayout,
    pub a1: DVector<f64>,
    pub p1: DMatrix<f64>,
    /// Constant added to every measurement (kept out of `Z`).
    pub mean: Option<f64>,
}

impl StateSpaceModel {
    /// Observation dimension (rows of `Z`).
    pub fn n_obs(&self) -> usize {
        self.z.nrows()
    }

    /// `R R'`, the state innovation covariance.
    pub fn rrt(&self) -> DMatrix<f64> {
        &self.r * self.r.transpose()
    }
}

/// Spectral radius of the companion matrix of `rho`.
pub fn companion_spectral_radius(rho: &[f64]) -> f64 {
    let p = rho.len();
    if p == 1 {
        return rho[0].abs();
    }
    let mut c = DMatrix::zeros(p, p);
    for (j, &r) in rho.iter().enumerate() {
        c[(0, j)] = r;
    }
    for i in 1..p {
        c[(i, i - 1)] = 1.0;
    }
    c.complex_eigenvalues().iter().map(|e| e.norm()).fold(0.0, f64::max)
}

/// Solve the discrete Lyapunov equation `P = T P T' + Q` by doubling.
/// Requires the spectral radius of `T` to be below one.
pub fn discrete_lyapunov(t: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut a = t.clone();
    let mut p = q.clone();
    for _ in 0..200 {
        let increment = &a * &p * a.transpose();
        let delta = increment.amax();
        p += increment;
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::NonConvergence(
                "Lyapunov iteration diverged; transition not stable".into(),
            ));
        }
        if delta <= 1e-16 * (1.0 + p.amax()) {
            return Ok(p);
        }
        a = &a * &a;
    }
    Err(Error::NonConvergence("Lyapunov doubling did not converge".into()))
}

fn check_scale(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() || v < 0.0 {
        return Err(Error::Invalid(format!(
            "{name} must be finite and nonnegative, got {v}"
        )));
    }
    Ok(())
}

fn check_cross_block(
    name: &str,
    mode: CrossMode,
    block: &Option<DMatrix<f64>>,
    l: usize,
) -> Result<()> {
    match (mode, block) {
        (CrossMode::None, None) => Ok(()),
        (CrossMode::None, Some(_)) => Err(Error::Invalid(format!(
            "{name} provided but the config disables it"
        ))),
        (_, None) => Err(Error::Invalid(format!("{name} required by the config"))),
        (mode, Some(b)) => {
            if b.nrows() != l || b.ncols() != l {
                return Err(Error::Invalid(format!("{name} must be {l}x{l}")));
            }
            if !b.iter().all(|v| v.is_finite()) {
                return Err(Error::Invalid(format!("{name} must be finite")));
            }
            if mode == CrossMode::Contemporaneous {
                for i in 0..l {
                    for j in 0..l {
                        if i != j && b[(i, j)] != 0.0 {
                            return Err(Error::Invalid(format!(
                                "{name}: contemporaneous mode allows diagonal entries only"
                            )));
                        }
                    }
                }
            }
            Ok(())
        }
    }
}

/// Build the exact system matrices for `config` at `params`, including the
/// stationary initial distribution.
pub fn build_state_space(config: &ReconConfig, params: &ParamVector) -> Result<StateSpaceModel> {
    config.validate()?;
    let (l, p) = (config.l, config.p);
    let m = config.state_dim();
    let r_dim = config.shock_dim();
    let n = config.obs_dim();

    if params.rho.len() != p {
        return Err(Error::Invalid(format!(
            "rho has {} coefficients, config wants p = {p}",
            params.rho.len()
        )));
    }
    for s in 0..2 {
        if params.sigma_news[s].len() != l || params.sigma_noise[s].len() != l {
            return Err(Error::Invalid(format!(
                "series {s} scale vectors must have length l = {l}"
            )));
        }
    }
    if !params.rho.iter().all(|v| v.is_finite()) {
        return Err(Error::Invalid("rho must be finite".into()));
    }
    check_scale("sigma_e", params.sigma_e)?;
    for s in 0..2 {
        for (i, &v) in params.sigma_news[s].iter().enumerate() {
            check_scale(&format!("sigma_news[{s}][{i}]"), v)?;
        }
        for (i, &v) in params.sigma_noise[s].iter().enumerate() {
            check_scale(&format!("sigma_noise[{s}][{i}]"), v)?;
        }
    }
    let radius = companion_spectral_radius(&params.rho);
    if radius >= 1.0 {
        return Err(Error::Invalid(format!(
            "rho is nonstationary (companion spectral radius {radius:.4})"
        )));
    }
    match (config.spillovers, &params.ts_diag) {
        (false, None) => {}
        (false, Some(_)) => {
            return Err(Error::Invalid(
                "ts_diag provided but spillovers are disabled".into(),
            ))
        }
        (true, None) => {
            return Err(Error::Invalid("spillovers enabled but ts_diag missing".into()))
        }
        (true, Some(ts)) => {
            if ts.len() != 4 * l {
                return Err(Error::Invalid(format!("ts_diag must have length {}", 4 * l)));
            }
            if ts.iter().any(|v| !v.is_finite() || v.abs() >= 1.0) {
                return Err(Error::Invalid(
                    "ts_diag entries must be finite with absolute value below one".into(),
                ));
            }
        }
    }
    check_cross_block("psi", config.cross_news, &params.psi, l)?;
    check_cross_block("phi", config.cross_noise, &params.phi, l)?;

    let layout = StateLayout::for_config(config);

    // Z = [ ones | p-1 zero columns | I_2l | I_2l ]
    let mut z = DMatrix::zeros(n, m);
    for i in 0..n {
        z[(i, 0)] = 1.0;
        z[(i, p + i)] = 1.0;
        z[(i, p + n + i)] = 1.0;
    }

    // T: companion block for the truth, diagonal (or zero) error block.
    let mut t = DMatrix::zeros(m, m);
    for (j, &r) in params.rho.iter().enumerate() {
        t[(0, j)] = r;
    }
    for i in 1..p {
        t[(i, i - 1)] = 1.0;
    }
    if let Some(ts) = &params.ts_diag {
        for (k, &v) in ts.iter().enumerate() {
            t[(p + k, p + k)] = v;
        }
    }

    // R: truth row carries sigma_e and every news scale; news blocks load
    // -U_l . diag(sigma_news); noise blocks are scaled identities.
    let mut r = DMatrix::zeros(m, r_dim);
    r[(0, 0)] = params.sigma_e;
    for s in 0..2 {
        for j in 0..l {
            let col = 1 + s * l + j;
            r[(0, col)] = params.sigma_news[s][j];
            for i in 0..=j {
                r[(layout.news[s].start + i, col)] = -params.sigma_news[s][j];
            }
        }
        for i in 0..l {
            let col = 1 + n + s * l + i;
            r[(layout.noise[s].start + i, col)] = params.sigma_noise[s][i];
        }
    }
    if let Some(psi) = &params.psi {
        for i in 0..l {
            for j in 0..l {
                r[(layout.news[0].start + i, 1 + l + j)] = psi[(i, j)];
            }
        }
    }
    if let Some(phi) = &params.phi {
        for i in 0..l {
            for j in 0..l {
                r[(layout.noise[0].start + i, 1 + n + l + j)] = phi[(i, j)];
            }
        }
    }

    let rrt = &r * r.transpose();
    let p1 = discrete_lyapunov(&t, &rrt)?;

    Ok(StateSpaceModel {
        z,
        t,
        r,
        m,
        r_dim,
        layout,
        a1: DVector::zeros(m),
        p1,
        mean: params.mean,
    })
}

/// Symmetric square root of a positive semidefinite matrix; tiny negative
/// eigenvalues from rounding are clamped to zero.
pub(crate) fn psd_sqrt(p: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (p + p.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut scaled = eig.eigenvectors.clone();
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        let root = lambda.max(0.0).sqrt();
        for i in 0..scaled.nrows() {
            scaled[(i, j)] *= root;
        }
    }
    scaled * eig.eigenvectors.transpose()
}

/// Simulated state paths and observations.
#[derive(Debug, Clone)]
pub struct Simulation {
    /// `horizon x m` state paths.
    pub states: DMatrix<f64>,
    /// `horizon x n_obs` observations, `Z alpha (+ mean)` exactly.
    pub observations: DMatrix<f64>,
}

/// Simulate `horizon` periods from the model, states initialized from the
/// stationary distribution. A fixed seed yields bit-identical output.
pub fn simulate(model: &StateSpaceModel, horizon: usize, seed: u64) -> Result<Simulation> {
    if horizon < 1 {
        return Err(Error::Invalid("simulation horizon must be >= 1".into()));
    }
    if !model.r.iter().all(|v| v.is_finite()) || !model.t.iter().all(|v| v.is_finite()) {
        return Err(Error::Invalid("model matrices must be finite".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_with_rng(model, horizon, &mut rng)
}

/// Simulation driven by a caller-supplied RNG (used inside the sampler).
pub fn simulate_with_rng(
    model: &StateSpaceModel,
    horizon: usize,
    rng: &mut impl Rng,
) -> Result<Simulation> {
    let m = model.m;
    let n = model.z.nrows();
    let sqrt_p1 = psd_sqrt(&model.p1);
    let mut states = DMatrix::zeros(horizon, m);
    let mut obs = DMatrix::zeros(horizon, n);

    let z0: DVector<f64> = DVector::from_fn(m, |_, _| rng.sample(StandardNormal));
    let mut alpha = &model.a1 + &sqrt_p1 * z0;
    let mean = model.mean.unwrap_or(0.0);
    for t in 0..horizon {
        states.row_mut(t).copy_from(&alpha.transpose());
        let y = &model.z * &alpha;
        for i in 0..n {
            obs[(t, i)] = y[i] + mean;
        }
        if t + 1 < horizon {
            let eta: DVector<f64> =
                DVector::from_fn(model.r_dim, |_, _| rng.sample(StandardNormal));
            alpha = &model.t * alpha + &model.r * eta;
        }
    }
    Ok(Simulation {
        states,
        observations: obs,
    })
}

/// Length of the flat parameter vector for `config`.
pub fn theta_len(config: &ReconConfig) -> usize {
    let l = config.l;
    let mut n = config.p + 1 + 4 * l;
    if config.spillovers {
        n += 4 * l;
    }
    n += config.cross_news.n_free(l);
    n += config.cross_noise.n_free(l);
    if config.center {
        n += 1;
    }
    n
}

/// Column names for the flat layout, aligned with [`theta_pack`].
pub fn theta_names(config: &ReconConfig) -> Vec<String> {
    let l = config.l;
    let mut names = Vec::with_capacity(theta_len(config));
    for i in 1..=config.p {
        names.push(format!("rho_{i}"));
    }
    names.push("sigma_e".into());
    for s in 0..2 {
        for j in 1..=l {
            names.push(format!("news_{s}_{j}"));
        }
    }
    for s in 0..2 {
        for j in 1..=l {
            names.push(format!("noise_{s}_{j}"));
        }
    }
    if config.spillovers {
        for (block, count) in [("news_0", l), ("news_1", l), ("noise_0", l), ("noise_1", l)] {
            for j in 1..=count {
                names.push(format!("ts_{block}_{j}"));
            }
        }
    }
    push_cross_names(&mut names, "psi", config.cross_news, l);
    push_cross_names(&mut names, "phi", config.cross_noise, l);
    if config.center {
        names.push("mean".into());
    }
    names
}

fn push_cross_names(names: &mut Vec<String>, prefix: &str, mode: CrossMode, l: usize) {
    match mode {
        CrossMode::None => {}
        CrossMode::Contemporaneous => {
            for i in 1..=l {
                names.push(format!("{prefix}_{i}_{i}"));
            }
        }
        CrossMode::Unrestricted => {
            for i in 1..=l {
                for j in 1..=l {
                    names.push(format!("{prefix}_{i}_{j}"));
                }
            }
        }
    }
}

/// Flatten parameters in the documented order: rho block, sigma_e, news
/// series 0, news series 1, noise series 0, noise series 1, then optional
/// blocks (spillover diagonal, psi, phi, mean).
pub fn theta_pack(params: &ParamVector, config: &ReconConfig) -> Result<Vec<f64>> {
    let l = config.l;
    if params.rho.len() != config.p {
        return Err(Error::Invalid("theta_pack: rho length mismatch".into()));
    }
    for s in 0..2 {
        if params.sigma_news[s].len() != l || params.sigma_noise[s].len() != l {
            return Err(Error::Invalid("theta_pack: scale length mismatch".into()));
        }
    }
    let mut flat = Vec::with_capacity(theta_len(config));
    flat.extend_from_slice(&params.rho);
    flat.push(params.sigma_e);
    for s in 0..2 {
        flat.extend_from_slice(&params.sigma_news[s]);
    }
    for s in 0..2 {
        flat.extend_from_slice(&params.sigma_noise[s]);
    }
    if config.spillovers {
        let ts = params
            .ts_diag
            .as_ref()
            .ok_or_else(|| Error::Invalid("theta_pack: ts_diag missing".into()))?;
        if ts.len() != 4 * l {
            return Err(Error::Invalid("theta_pack: ts_diag length mismatch".into()));
        }
        flat.extend_from_slice(ts);
    }
    pack_cross(&mut flat, "psi", config.cross_news, &params.psi, l)?;
    pack_cross(&mut flat, "phi", config.cross_noise, &params.phi, l)?;
    if config.center {
        flat.push(
            params
                .mean
                .ok_or_else(|| Error::Invalid("theta_pack: mean missing".into()))?,
        );
    }
    Ok(flat)
}

fn pack_cross(
    flat: &mut Vec<f64>,
    name: &str,
    mode: CrossMode,
    block: &Option<DMatrix<f64>>,
    l: usize,
) -> Result<()> {
    if mode == CrossMode::None {
        return Ok(());
    }
    let b = block
        .as_ref()
        .ok_or_else(|| Error::Invalid(format!("theta_pack: {name} missing")))?;
    if b.nrows() != l || b.ncols() != l {
        return Err(Error::Invalid(format!("theta_pack: {name} must be {l}x{l}")));
    }
    match mode {
        CrossMode::Contemporaneous => {
            for i in 0..l {
                flat.push(b[(i, i)]);
            }
        }
        CrossMode::Unrestricted => {
            for i in 0..l {
                for j in 0..l {
                    flat.push(b[(i, j)]);
                }
            }
        }
        CrossMode::None => unreachable!(),
    }
    Ok(())
}

/// Inverse of [`theta_pack`].
pub fn theta_unpack(flat: &[f64], config: &ReconConfig) -> Result<ParamVector> {
    let expected = theta_len(config);
    if flat.len() != expected {
        return Err(Error::Invalid(format!(
            "theta_unpack: expected {expected} entries, got {}",
            flat.len()
        )));
    }
    let l = config.l;
    let mut at = 0usize;
    let mut take = |n: usize| {
        let slice = &flat[at..at + n];
        at += n;
        slice.to_vec()
    };
    let rho = take(config.p);
    let sigma_e = take(1)[0];
    let news0 = take(l);
    let news1 = take(l);
    let noise0 = take(l);
    let noise1 = take(l);
    let ts_diag = config.spillovers.then(|| take(4 * l));
    let psi = unpack_cross(config.cross_news, &mut take, l);
    let phi = unpack_cross(config.cross_noise, &mut take, l);
    let mean = config.center.then(|| take(1)[0]);
    Ok(ParamVector {
        rho,
        sigma_e,
        sigma_news: [news0, news1],
        sigma_noise: [noise0, noise1],
        mean,
        ts_diag,
        psi,
        phi,
    })
}

fn unpack_cross(
    mode: CrossMode,
    take: &mut impl FnMut(usize) -> Vec<f64>,
    l: usize,
) -> Option<DMatrix<f64>> {
    match mode {
        CrossMode::None => None,
        CrossMode::Contemporaneous => {
            let d = take(l);
            Some(DMatrix::from_fn(l, l, |i, j| if i == j { d[i] } else { 0.0 }))
        }
        CrossMode::Unrestricted => {
            let v = take(l * l);
            Some(DMatrix::from_fn(l, l, |i, j| v[i * l + j]))
        }
    }
}
