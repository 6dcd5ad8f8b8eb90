//! Command-line front end: reproducible simulate/estimate/identify/
//! decompose/gains runs over files.
//!
//! Every artifact-producing command writes a `manifest.json` carrying the
//! echoed configuration, priors, settings, master seed, input hashes and
//! output hashes: enough to bit-reproduce the run. Outputs are
//! deterministic under a fixed seed; set `SOURCE_DATE_EPOCH` to pin the
//! manifest timestamp as well.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{dynamics_pairs, historical_decomposition, reconciled_series};
use crate::error::{Error, Result};
use crate::filter::kalman_gain_weights;
use crate::identify::{count_moments, MomentCount, StructuralFlags};
use crate::sampler::{
    run_gibbs_with_options, IgPrior, McmcSettings, PosteriorDraws, PriorSpec,
};
use crate::ssm::{
    build_state_space, simulate, CrossMode, ParamVector, ReconConfig, StateLayout,
};
use crate::vintages::{
    parse_vintage_csv, serialize_vintage_csv, to_observation_matrix, Quarter,
    SeriesId, VintageObservation, VintagePanel,
};

/// Everything needed to bit-reproduce a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub created_utc: String,
    pub seed: Option<u64>,
    pub config: Option<ReconConfig>,
    pub priors: Option<PriorSpec>,
    pub settings: Option<McmcSettings>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub notes: BTreeMap<String, serde_json::Value>,
}

/// A path together with the SHA-256 of its content.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn digest_file(path: &Path) -> Result<FileDigest> {
    let bytes = fs::read(path)?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

/// RFC 3339 timestamp; honors `SOURCE_DATE_EPOCH` for reproducible runs.
fn created_utc() -> String {
    let ts = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.parse::<i64>().ok())
        .and_then(|secs| chrono::DateTime::from_timestamp(secs, 0))
        .unwrap_or_else(chrono::Utc::now);
    ts.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

fn write_file(dir: &Path, name: &str, content: &str, outputs: &mut Vec<FileDigest>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, content)?;
    outputs.push(FileDigest {
        path: name.to_string(),
        sha256: sha256_hex(content.as_bytes()),
    });
    Ok(())
}

fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Invalid(format!("manifest serialization: {e}")))?;
    fs::write(dir.join("manifest.json"), json + "\n")?;
    Ok(())
}

// ---------------------------------------------------------------------
// Input files
// ---------------------------------------------------------------------

/// Read the model-shape config (TOML, keys: `l`, `p`, `center`,
/// `spillovers`, `cross_news`, `cross_noise`).
pub fn load_config(path: &Path) -> Result<ReconConfig> {
    let text = fs::read_to_string(path)?;
    let config: ReconConfig = toml::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    config.validate()?;
    Ok(config)
}

#[derive(Debug, Deserialize)]
struct ParamsFile {
    rho: Vec<f64>,
    sigma_e: f64,
    sigma_news: [Vec<f64>; 2],
    sigma_noise: [Vec<f64>; 2],
    mean: Option<f64>,
    ts_diag: Option<Vec<f64>>,
    psi: Option<Vec<Vec<f64>>>,
    phi: Option<Vec<Vec<f64>>>,
}

fn rows_to_matrix(rows: &[Vec<f64>], name: &str) -> Result<nalgebra::DMatrix<f64>> {
    let r = rows.len();
    if r == 0 || rows.iter().any(|row| row.len() != rows[0].len()) {
        return Err(Error::Parse(format!("{name}: ragged or empty matrix")));
    }
    let c = rows[0].len();
    Ok(nalgebra::DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

/// Read a parameter vector (TOML, keys mirroring the parameter fields).
pub fn load_params(path: &Path) -> Result<ParamVector> {
    let text = fs::read_to_string(path)?;
    let file: ParamsFile = toml::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    Ok(ParamVector {
        rho: file.rho,
        sigma_e: file.sigma_e,
        sigma_news: file.sigma_news,
        sigma_noise: file.sigma_noise,
        mean: file.mean,
        ts_diag: file.ts_diag,
        psi: file.psi.as_deref().map(|m| rows_to_matrix(m, "psi")).transpose()?,
        phi: file.phi.as_deref().map(|m| rows_to_matrix(m, "phi")).transpose()?,
    })
}

#[derive(Debug, Default, Deserialize)]
struct PriorsFile {
    rho_mean: Option<Vec<f64>>,
    rho_var: Option<Vec<f64>>,
    mean_prior_mean: Option<f64>,
    mean_prior_var: Option<f64>,
    ig_shape: Option<f64>,
    ig_rate: Option<f64>,
    /// Keep the final-release news scales restricted to zero (default on).
    restrict_final_news: Option<bool>,
    /// Additional parameter names pinned to zero.
    restricted: Option<Vec<String>>,
    /// Per-variance overrides of the inverse-gamma prior.
    overrides: Option<BTreeMap<String, IgPrior>>,
}

/// Build the prior specification for `config`, applying any overrides from
/// a TOML priors file on top of the defaults.
pub fn load_priors(path: Option<&Path>, config: &ReconConfig) -> Result<PriorSpec> {
    let file = match path {
        None => PriorsFile::default(),
        Some(p) => {
            let text = fs::read_to_string(p)?;
            toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", p.display())))?
        }
    };
    let mut priors = PriorSpec::default_for(config);
    if let (Some(shape), Some(rate)) = (file.ig_shape, file.ig_rate) {
        for prior in priors.scales.values_mut() {
            *prior = IgPrior { shape, rate };
        }
    } else if file.ig_shape.is_some() || file.ig_rate.is_some() {
        return Err(Error::Parse(
            "priors: ig_shape and ig_rate must be provided together".into(),
        ));
    }
    if let Some(means) = file.rho_mean {
        if means.len() != config.p {
            return Err(Error::Parse("priors: rho_mean length must equal p".into()));
        }
        for (prior, m) in priors.rho.iter_mut().zip(means) {
            prior.mean = m;
        }
    }
    if let Some(vars) = file.rho_var {
        if vars.len() != config.p {
            return Err(Error::Parse("priors: rho_var length must equal p".into()));
        }
        for (prior, v) in priors.rho.iter_mut().zip(vars) {
            prior.var = v;
        }
    }
    if let Some(m) = file.mean_prior_mean {
        priors.mean.mean = m;
    }
    if let Some(v) = file.mean_prior_var {
        priors.mean.var = v;
    }
    if file.restrict_final_news == Some(false) {
        priors = priors.without_final_news_restriction(config);
    }
    if let Some(extra) = file.restricted {
        priors.restricted.extend(extra);
    }
    if let Some(overrides) = file.overrides {
        for (name, ig) in overrides {
            if !priors.scales.contains_key(&name) {
                return Err(Error::Parse(format!(
                    "priors: override for unknown scale `{name}`"
                )));
            }
            priors.scales.insert(name, ig);
        }
    }
    priors.validate(config)?;
    Ok(priors)
}

// ---------------------------------------------------------------------
// Command-line surface
// ---------------------------------------------------------------------

#[derive(Debug, Parser)]
#[command(
    name = "recon",
    version,
    about = "Reconcile multi-release data vintages with a news/noise state-space model"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum CrossModeArg {
    #[default]
    None,
    Contemporaneous,
    Unrestricted,
}

impl From<CrossModeArg> for CrossMode {
    fn from(v: CrossModeArg) -> CrossMode {
        match v {
            CrossModeArg::None => CrossMode::None,
            CrossModeArg::Contemporaneous => CrossMode::Contemporaneous,
            CrossModeArg::Unrestricted => CrossMode::Unrestricted,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate synthetic vintages and true states from a model.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        horizon: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// First simulated quarter, e.g. 2000Q1.
        #[arg(long, default_value = "2000Q1")]
        start: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the model on a vintage CSV by Gibbs sampling.
    Estimate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        priors: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        burn_in: Option<usize>,
        #[arg(long)]
        thin: Option<usize>,
        #[arg(long)]
        chains: Option<usize>,
        /// Skip writing per-draw state paths (disables decompose).
        #[arg(long)]
        no_state_draws: bool,
    },
    /// Count observable moments against free parameters.
    Identify {
        #[arg(long)]
        l: usize,
        #[arg(long, default_value_t = 1)]
        p: usize,
        #[arg(long)]
        spillovers: bool,
        #[arg(long, value_enum, default_value_t)]
        cross_news: CrossModeArg,
        #[arg(long, value_enum, default_value_t)]
        cross_noise: CrossModeArg,
        /// Write the breakdown as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decompose observed revisions into news and noise from a finished
    /// estimation run.
    Decompose {
        /// Output directory of a previous `estimate` run.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        series: usize,
        /// Early release of the revision pair (default: first configured).
        #[arg(long)]
        first: Option<u32>,
        /// Late release of the revision pair (default: last configured).
        #[arg(long)]
        last: Option<u32>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Steady-state Kalman-gain weights of each release on the truth.
    Gains {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        params: PathBuf,
        /// Write the weights as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Dispatch a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            params,
            horizon,
            seed,
            start,
            out,
        } => cmd_simulate(&config, &params, horizon, seed, &start, &out),
        Command::Estimate {
            config,
            priors,
            data,
            out,
            seed,
            iterations,
            burn_in,
            thin,
            chains,
            no_state_draws,
        } => {
            let mut settings = McmcSettings::default();
            if let Some(v) = seed {
                settings.seed = v;
            }
            if let Some(v) = iterations {
                settings.iterations = v;
            }
            if let Some(v) = burn_in {
                settings.burn_in = v;
            }
            if let Some(v) = thin {
                settings.thin = v;
            }
            if let Some(v) = chains {
                settings.chains = v;
            }
            cmd_estimate(&config, priors.as_deref(), &data, settings, &out, !no_state_draws)
                .map(|_| ())
        }
        Command::Identify {
            l,
            p,
            spillovers,
            cross_news,
            cross_noise,
            out,
        } => cmd_identify(
            l,
            p,
            StructuralFlags {
                spillovers,
                cross_news: cross_news.into(),
                cross_noise: cross_noise.into(),
            },
            out.as_deref(),
        ),
        Command::Decompose {
            run,
            series,
            first,
            last,
            out,
        } => cmd_decompose(&run, series, first, last, out.as_deref()),
        Command::Gains { config, params, out } => cmd_gains(&config, &params, out.as_deref()),
    }
}

// ---------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------

fn state_column_names(config: &ReconConfig, layout: &StateLayout) -> Vec<String> {
    let mut names = Vec::new();
    names.push("truth".to_string());
    for lag in 1..config.p {
        names.push(format!("truth_lag{lag}"));
    }
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
    if layout.mean.is_some() {
        names.push("mean".to_string());
    }
    names
}

/// Simulate vintages and write `vintages.csv`, `states.csv` and the
/// manifest into `out`.
pub fn cmd_simulate(
    config_path: &Path,
    params_path: &Path,
    horizon: usize,
    seed: u64,
    start: &str,
    out: &Path,
) -> Result<()> {
    if horizon == 0 {
        return Err(Error::Invalid("horizon must be >= 1".into()));
    }
    let config = load_config(config_path)?;
    let params = load_params(params_path)?;
    let start: Quarter = start.parse()?;
    let model = build_state_space(&config, &params)?;
    let sim = simulate(&model, horizon, seed)?;

    fs::create_dir_all(out)?;
    let mut outputs = Vec::new();

    let mut observations = Vec::new();
    for t in 0..horizon {
        let period = start.offset(t as i64);
        for s in 0..2 {
            for j in 0..config.l {
                observations.push(VintageObservation {
                    series: SeriesId::new(s as u8).expect("0 or 1"),
                    period,
                    release: (j + 1) as u32,
                    value: sim.observations[(t, s * config.l + j)],
                });
            }
        }
    }
    let panel = VintagePanel::from_observations(observations, [])?;
    write_file(out, "vintages.csv", &serialize_vintage_csv(&panel), &mut outputs)?;

    let names = state_column_names(&config, &model.layout);
    let mut states_csv = String::from("period,");
    states_csv.push_str(&names.join(","));
    states_csv.push('\n');
    for t in 0..horizon {
        states_csv.push_str(&start.offset(t as i64).to_string());
        for j in 0..model.m {
            states_csv.push_str(&format!(",{}", sim.states[(t, j)]));
        }
        states_csv.push('\n');
    }
    write_file(out, "states.csv", &states_csv, &mut outputs)?;

    let manifest = RunManifest {
        tool: "recon".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: "simulate".into(),
        created_utc: created_utc(),
        seed: Some(seed),
        config: Some(config),
        priors: None,
        settings: None,
        inputs: vec![digest_file(config_path)?, digest_file(params_path)?],
        outputs,
        notes: BTreeMap::from([
            ("horizon".into(), serde_json::json!(horizon)),
            ("start".into(), serde_json::json!(start.to_string())),
        ]),
    };
    write_manifest(out, &manifest)
}

// ---------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct EstimateSummary {
    config: ReconConfig,
    settings: McmcSettings,
    n_kept: usize,
    applied_mean: f64,
    init: BTreeMap<String, f64>,
    parameters: Vec<crate::sampler::ParamSummary>,
    dynamics: Option<DynamicsSummary>,
    recursive_means: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct DynamicsSummary {
    posterior_mean_rho: f64,
    posterior_mean_sigma2: f64,
}

/// Estimate the model on a vintage CSV; writes `draws.csv`,
/// `summary.json`, `reconciled.csv`, `state_draws.csv` (unless disabled),
/// a copy of the input data and the manifest into `out`. Returns the
/// posterior draws for in-process callers.
pub fn cmd_estimate(
    config_path: &Path,
    priors_path: Option<&Path>,
    data_path: &Path,
    settings: McmcSettings,
    out: &Path,
    store_state_draws: bool,
) -> Result<PosteriorDraws> {
    let config = load_config(config_path)?;
    let priors = load_priors(priors_path, &config)?;
    let data_text = fs::read_to_string(data_path)?;
    let panel = parse_vintage_csv(&data_text)?;
    let mut obs = to_observation_matrix(&panel, &config)?;

    let applied_mean = if config.center {
        0.0
    } else {
        let mean = obs.observed_mean().unwrap_or(0.0);
        obs.subtract(mean);
        mean
    };

    let mut draws = run_gibbs_with_options(&config, &obs, &priors, &settings, store_state_draws)?;
    draws.applied_mean = applied_mean;

    fs::create_dir_all(out)?;
    let mut outputs = Vec::new();

    // Kept parameter draws, one row per draw.
    let mut draws_csv = draws.theta_names.join(",");
    draws_csv.push('\n');
    for k in 0..draws.n_kept() {
        for j in 0..draws.theta_names.len() {
            if j > 0 {
                draws_csv.push(',');
            }
            draws_csv.push_str(&format!("{}", draws.draws[(k, j)]));
        }
        draws_csv.push('\n');
    }
    write_file(out, "draws.csv", &draws_csv, &mut outputs)?;

    // Reconciled series with the 90% band.
    let rec = reconciled_series(&draws).ok();
    if let Some(rec) = &rec {
        let mut csv = String::from("period,mean,lo90,hi90\n");
        for i in 0..rec.periods.len() {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                rec.periods[i], rec.mean[i], rec.lo90[i], rec.hi90[i]
            ));
        }
        write_file(out, "reconciled.csv", &csv, &mut outputs)?;
    }

    // Per-draw state paths for decompositions.
    if let Some(states) = &draws.state_draws {
        let names = state_column_names(&config, &draws.state_layout);
        let mut csv = String::from("draw,period,");
        csv.push_str(&names.join(","));
        csv.push('\n');
        for (k, path) in states.iter().enumerate() {
            for t in 0..path.nrows() {
                csv.push_str(&format!("{k},{}", draws.obs.period(t)));
                for j in 0..path.ncols() {
                    csv.push_str(&format!(",{}", path[(t, j)]));
                }
                csv.push('\n');
            }
        }
        write_file(out, "state_draws.csv", &csv, &mut outputs)?;
    }

    // Input data copied verbatim for self-contained later analysis.
    write_file(out, "data_used.csv", &data_text, &mut outputs)?;

    // Filter diagnostics at the posterior-mean parameter point.
    if let Some(csv) = filter_diagnostics(&config, &draws) {
        write_file(out, "filter_diagnostics.csv", &csv, &mut outputs)?;
    }

    let dynamics = dynamics_pairs(&draws)
        .ok()
        .map(|(_, summary)| DynamicsSummary {
            posterior_mean_rho: summary.rho,
            posterior_mean_sigma2: summary.sigma2,
        });
    let summary = EstimateSummary {
        config,
        settings,
        n_kept: draws.n_kept(),
        applied_mean,
        init: draws
            .theta_names
            .iter()
            .cloned()
            .zip(draws.init_theta.iter().copied())
            .collect(),
        parameters: draws.summaries.clone(),
        dynamics,
        recursive_means: draws
            .theta_names
            .iter()
            .cloned()
            .zip(draws.recursive_means.iter().cloned())
            .collect(),
    };
    let summary_json = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::Invalid(format!("summary serialization: {e}")))?
        + "\n";
    write_file(out, "summary.json", &summary_json, &mut outputs)?;

    let manifest = RunManifest {
        tool: "recon".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: "estimate".into(),
        created_utc: created_utc(),
        seed: Some(settings.seed),
        config: Some(config),
        priors: Some(priors),
        settings: Some(settings),
        inputs: {
            let mut v = vec![digest_file(config_path)?, digest_file(data_path)?];
            if let Some(p) = priors_path {
                v.push(digest_file(p)?);
            }
            v
        },
        outputs,
        notes: BTreeMap::from([(
            "applied_mean".into(),
            serde_json::json!(applied_mean),
        )]),
    };
    write_manifest(out, &manifest)?;
    Ok(draws)
}

/// Per-period filter output at the posterior-mean parameters: predicted
/// and filtered truth, observed-row count and innovation magnitude.
fn filter_diagnostics(config: &ReconConfig, draws: &PosteriorDraws) -> Option<String> {
    let means: Vec<f64> = draws.summaries.iter().map(|s| s.mean).collect();
    let mut params = crate::ssm::theta_unpack(&means, config).ok()?;
    let mut obs = draws.obs.clone();
    if let Some(mu) = params.mean.take() {
        obs.subtract(mu);
    }
    let model = build_state_space(config, &params).ok()?;
    let fr = crate::filter::kalman_filter(&model, &obs).ok()?;
    let mut csv = String::from("period,n_observed,predicted_truth,filtered_truth,innovation_rms\n");
    for t in 0..obs.n_periods() {
        let v = &fr.innovations[t];
        let n = v.len();
        let rms = if n > 0 { (v.dot(v) / n as f64).sqrt() } else { 0.0 };
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            obs.period(t),
            n,
            fr.predicted_mean[t][0],
            fr.filtered_mean[t][0],
            rms
        ));
    }
    Some(csv)
}

// ---------------------------------------------------------------------
// identify
// ---------------------------------------------------------------------

/// Print the moment-count table; optionally write it as JSON.
pub fn cmd_identify(l: usize, p: usize, flags: StructuralFlags, out: Option<&Path>) -> Result<()> {
    if l < 1 || p < 1 {
        return Err(Error::Invalid("identify: l and p must be >= 1".into()));
    }
    let mc = count_moments(l, p, &flags);
    print!("{}", format_moment_table(&mc, l, p));
    if let Some(path) = out {
        let json = serde_json::to_string_pretty(&mc)
            .map_err(|e| Error::Invalid(format!("identify serialization: {e}")))?;
        fs::write(path, json + "\n")?;
    }
    Ok(())
}

fn format_moment_table(mc: &MomentCount, l: usize, p: usize) -> String {
    let mut s = String::new();
    s.push_str(&format!("releases per series (l) = {l}, AR order (p) = {p}\n\n"));
    s.push_str("moments\n");
    for (name, n) in &mc.moments {
        s.push_str(&format!("  {name:<34} {n:>4}\n"));
    }
    s.push_str(&format!("  {:<34} {:>4}\n\n", "total", mc.n_moments));
    s.push_str("parameters\n");
    for (name, n) in &mc.params {
        s.push_str(&format!("  {name:<34} {n:>4}\n"));
    }
    s.push_str(&format!("  {:<34} {:>4}\n\n", "total", mc.n_params));
    s.push_str(&format!(
        "order condition ({} moments vs {} parameters): {}\n",
        mc.n_moments,
        mc.n_params,
        if mc.order_condition_met { "met" } else { "NOT met" }
    ));
    s
}

// ---------------------------------------------------------------------
// decompose
// ---------------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct StoredSummary {
    config: ReconConfig,
    applied_mean: f64,
}

fn read_run_dir(run: &Path) -> Result<PosteriorDraws> {
    let summary_text = fs::read_to_string(run.join("summary.json"))?;
    let stored: StoredSummary = serde_json::from_str(&summary_text)
        .map_err(|e| Error::Parse(format!("summary.json: {e}")))?;
    let config = stored.config;

    let data_text = fs::read_to_string(run.join("data_used.csv"))?;
    let panel = parse_vintage_csv(&data_text)?;
    let mut obs = to_observation_matrix(&panel, &config)?;
    obs.subtract(stored.applied_mean);

    // Kept parameter draws.
    let draws_text = fs::read_to_string(run.join("draws.csv"))?;
    let mut lines = draws_text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Parse("draws.csv is empty".into()))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(str::parse::<f64>).collect();
        rows.push(row.map_err(|e| Error::Parse(format!("draws.csv: {e}")))?);
    }
    let n_kept = rows.len();
    let draws_mat = nalgebra::DMatrix::from_fn(n_kept, header.len(), |i, j| rows[i][j]);

    // Per-draw state paths.
    let states_path = run.join("state_draws.csv");
    if !states_path.exists() {
        return Err(Error::Invalid(
            "state draws were not stored for this run (re-run estimate without --no-state-draws)"
                .into(),
        ));
    }
    let states_text = fs::read_to_string(states_path)?;
    let mut lines = states_text.lines();
    let state_header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Parse("state_draws.csv is empty".into()))?
        .split(',')
        .collect();
    let m = state_header.len().saturating_sub(2);
    let horizon = obs.n_periods();
    let mut states = vec![nalgebra::DMatrix::zeros(horizon, m); n_kept];
    let mut count = vec![0usize; n_kept];
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != m + 2 {
            return Err(Error::Parse("state_draws.csv: ragged row".into()));
        }
        let k: usize = fields[0]
            .parse()
            .map_err(|e| Error::Parse(format!("state_draws.csv: {e}")))?;
        if k >= n_kept {
            return Err(Error::Parse("state_draws.csv: draw index out of range".into()));
        }
        let t = count[k];
        if t >= horizon {
            return Err(Error::Parse("state_draws.csv: too many rows per draw".into()));
        }
        for j in 0..m {
            states[k][(t, j)] = fields[j + 2]
                .parse()
                .map_err(|e| Error::Parse(format!("state_draws.csv: {e}")))?;
        }
        count[k] += 1;
    }
    if count.iter().any(|&c| c != horizon) {
        return Err(Error::Parse("state_draws.csv: incomplete draw paths".into()));
    }

    let mut layout = StateLayout::for_config(&config);
    if config.center {
        layout.mean = Some(config.state_dim());
    }
    let settings = McmcSettings {
        iterations: n_kept.max(2),
        burn_in: 0,
        thin: 1,
        chains: 1,
        seed: 0,
    };
    Ok(PosteriorDraws {
        config,
        settings,
        theta_names: header,
        draws: draws_mat,
        state_draws: Some(states),
        state_layout: layout,
        summaries: Vec::new(),
        recursive_means: Vec::new(),
        init_theta: Vec::new(),
        applied_mean: stored.applied_mean,
        obs,
    })
}

/// Decompose observed revisions from a stored estimation run; writes a
/// tidy CSV (`period,total,news,noise,flag`).
pub fn cmd_decompose(
    run: &Path,
    series: usize,
    first: Option<u32>,
    last: Option<u32>,
    out: Option<&Path>,
) -> Result<()> {
    let draws = read_run_dir(run)?;
    let first = first.unwrap_or(1);
    let last = last.unwrap_or(draws.config.l as u32);
    let dec = historical_decomposition(&draws, series, first, last)?;

    let mut csv = String::from("period,total,news,noise,flag\n");
    for t in 0..dec.periods.len() {
        let total = dec.total_revision[t]
            .map(|v| v.to_string())
            .unwrap_or_else(|| "NA".into());
        let flag = if dec.both_observed[t] { "ok" } else { "missing_release" };
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            dec.periods[t], total, dec.news[t], dec.noise[t], flag
        ));
    }
    let path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| run.join(format!("decomposition_series{series}.csv")));
    fs::write(&path, &csv)?;

    let observed = dec.both_observed.iter().filter(|b| **b).count();
    println!(
        "series {series}, releases {first} -> {last}: {} periods, {} with both releases observed",
        dec.periods.len(),
        observed
    );
    let mean_abs = |v: &[f64]| {
        let n = v.len().max(1);
        v.iter().map(|x| x.abs()).sum::<f64>() / n as f64
    };
    println!(
        "mean |news| = {:.4}, mean |noise| = {:.4}, written to {}",
        mean_abs(&dec.news),
        mean_abs(&dec.noise),
        path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// gains
// ---------------------------------------------------------------------

/// Print the steady-state gain weights of each release on the truth;
/// optionally write them as CSV.
pub fn cmd_gains(config_path: &Path, params_path: &Path, out: Option<&Path>) -> Result<()> {
    let config = load_config(config_path)?;
    let params = load_params(params_path)?;
    let model = build_state_space(&config, &params)?;
    let weights = kalman_gain_weights(&model)?;

    println!("{:<8} {:<9} {:>10}", "series", "release", "weight");
    for w in &weights {
        println!("{:<8} {:<9} {:>10.4}", w.series, w.release, w.weight);
    }
    if let Some(path) = out {
        let mut csv = String::from("series,release,weight\n");
        for w in &weights {
            csv.push_str(&format!("{},{},{}\n", w.series, w.release, w.weight));
        }
        fs::write(path, csv)?;
    }
    Ok(())
}
