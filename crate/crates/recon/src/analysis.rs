//! Post-estimation products: the news/noise decomposition of observed
//! revisions, the reconciled latent series with posterior bands, and the
//! (rho, sigma^2) pairs summarizing the truth dynamics across draws.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sampler::PosteriorDraws;


/// Decomposition of the total revision of one series between two releases
/// into its news and noise components, reported at the posterior mean.
/// The identity `news + noise = total` holds draw by draw whenever both
/// releases are observed; periods missing either release still report
/// state-based components but flag the total as unobservable.
#[derive(Debug, Clone, Serialize)]
pub struct DecompositionSeries {
    pub series: usize,
    pub first_release: u32,
    pub last_release: u32,
    pub periods: Vec<String>,
    pub total_revision: Vec<Option<f64>>,
    pub news: Vec<f64>,
    pub noise: Vec<f64>,
    pub both_observed: Vec<bool>,
}

/// Posterior-mean news/noise split of the revision between two releases.
pub fn historical_decomposition(
    draws: &PosteriorDraws,
    series: usize,
    first_release: u32,
    last_release: u32,
) -> Result<DecompositionSeries> {
    let l = draws.config.l;
    if series > 1 {
        return Err(Error::Invalid("series must be 0 or 1".into()));
    }
    if first_release == last_release {
        return Err(Error::Invalid("release indices must differ".into()));
    }
    if first_release < 1
        || last_release < 1
        || first_release as usize > l
        || last_release as usize > l
        || first_release > last_release
    {
        return Err(Error::Invalid(format!(
            "release pair ({first_release}, {last_release}) outside the schedule 1..={l}"
        )));
    }
    let states = draws
        .state_draws
        .as_ref()
        .ok_or_else(|| Error::Invalid("state draws were not stored for this run".into()))?;
    if states.is_empty() {
        return Err(Error::Invalid("no kept state draws".into()));
    }
    let horizon = states[0].nrows();
    let layout = &draws.state_layout;
    let news_first = layout.news_state(series, first_release as usize);
    let news_last = layout.news_state(series, last_release as usize);
    let noise_first = layout.noise_state(series, first_release as usize);
    let noise_last = layout.noise_state(series, last_release as usize);

    let mut news = vec![0.0; horizon];
    let mut noise = vec![0.0; horizon];
    for path in states {
        for t in 0..horizon {
            news[t] += path[(t, news_last)] - path[(t, news_first)];
            noise[t] += path[(t, noise_last)] - path[(t, noise_first)];
        }
    }
    let n = states.len() as f64;
    for t in 0..horizon {
        news[t] /= n;
        noise[t] /= n;
    }

    let col_first = series * l + (first_release as usize - 1);
    let col_last = series * l + (last_release as usize - 1);
    let mut total = Vec::with_capacity(horizon);
    let mut both = Vec::with_capacity(horizon);
    let mut periods = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let pair = (draws.obs.get(t, col_first), draws.obs.get(t, col_last));
        match pair {
            (Some(a), Some(b)) => {
                total.push(Some(b - a));
                both.push(true);
            }
            _ => {
                total.push(None);
                both.push(false);
            }
        }
        periods.push(draws.obs.period(t).to_string());
    }

    Ok(DecompositionSeries {
        series,
        first_release,
        last_release,
        periods,
        total_revision: total,
        news,
        noise,
        both_observed: both,
    })
}

/// Posterior mean of the latent truth with a 90% band (5th and 95th
/// posterior percentiles), period by period.
#[derive(Debug, Clone, Serialize)]
pub struct ReconciledSeries {
    pub periods: Vec<String>,
    pub mean: Vec<f64>,
    pub lo90: Vec<f64>,
    pub hi90: Vec<f64>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let idx = (q * (sorted.len() - 1) as f64).round() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

/// Extract the reconciled series: pointwise posterior mean and empirical
/// 5%/95% quantiles of the truth state, with any demeaning offset added
/// back.
pub fn reconciled_series(draws: &PosteriorDraws) -> Result<ReconciledSeries> {
    let states = draws
        .state_draws
        .as_ref()
        .ok_or_else(|| Error::Invalid("state draws were not stored for this run".into()))?;
    if states.is_empty() {
        return Err(Error::Invalid("no kept state draws".into()));
    }
    let horizon = states[0].nrows();
    let mean_state = draws.state_layout.mean;
    let offset = draws.applied_mean;

    let mut periods = Vec::with_capacity(horizon);
    let mut mean = Vec::with_capacity(horizon);
    let mut lo = Vec::with_capacity(horizon);
    let mut hi = Vec::with_capacity(horizon);
    let mut values = Vec::with_capacity(states.len());
    for t in 0..horizon {
        values.clear();
        for path in states {
            let mut v = path[(t, 0)] + offset;
            if let Some(idx) = mean_state {
                v += path[(t, idx)];
            }
            values.push(v);
        }
        let avg = values.iter().sum::<f64>() / values.len() as f64;
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        periods.push(draws.obs.period(t).to_string());
        mean.push(avg);
        lo.push(quantile(&values, 0.05));
        hi.push(quantile(&values, 0.95));
    }
    Ok(ReconciledSeries {
        periods,
        mean,
        lo90: lo,
        hi90: hi,
    })
}

/// One (rho, sigma^2) pair per kept draw: the AR(1) coefficient and the
/// full one-step innovation variance of the truth, `sigma_e^2` plus every
/// news-scale contribution entering the truth row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DynamicsPair {
    pub rho: f64,
    pub sigma2: f64,
}

/// Dynamics pairs across draws plus their componentwise posterior mean.
/// Reported for AR(1) models; higher-order configurations have no single
/// reporting convention and are rejected.
pub fn dynamics_pairs(draws: &PosteriorDraws) -> Result<(Vec<DynamicsPair>, DynamicsPair)> {
    if draws.config.p != 1 {
        return Err(Error::Invalid(
            "dynamics pairs are reported for AR(1) models (p = 1)".into(),
        ));
    }
    let rho_idx = draws
        .theta_index("rho_1")
        .ok_or_else(|| Error::Invalid("rho_1 not found in the draw layout".into()))?;
    let sigma_idx = draws
        .theta_index("sigma_e")
        .ok_or_else(|| Error::Invalid("sigma_e not found in the draw layout".into()))?;
    let l = draws.config.l;
    let mut news_idx = Vec::new();
    for s in 0..2 {
        for j in 1..=l {
            news_idx.push(
                draws
                    .theta_index(&format!("news_{s}_{j}"))
                    .ok_or_else(|| Error::Invalid("news scale missing from layout".into()))?,
            );
        }
    }
    let mut pairs = Vec::with_capacity(draws.n_kept());
    let (mut rho_acc, mut var_acc) = (0.0, 0.0);
    for k in 0..draws.n_kept() {
        let rho = draws.draws[(k, rho_idx)];
        let mut sigma2 = draws.draws[(k, sigma_idx)].powi(2);
        for &idx in &news_idx {
            sigma2 += draws.draws[(k, idx)].powi(2);
        }
        rho_acc += rho;
        var_acc += sigma2;
        pairs.push(DynamicsPair { rho, sigma2 });
    }
    let n = pairs.len() as f64;
    let summary = DynamicsPair {
        rho: rho_acc / n,
        sigma2: var_acc / n,
    };
    Ok((pairs, summary))
}
