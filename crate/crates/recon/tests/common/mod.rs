//! Shared test oracles and generators.
#![allow(dead_code)]

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use recon::ssm::{build_state_space, companion_spectral_radius, ParamVector, ReconConfig, StateSpaceModel};
use recon::vintages::ObservationMatrix;

/// Brute-force log density of the observed entries under the joint normal
/// distribution implied directly by the state-space moments. Assembles the
/// full covariance of the stacked observation vector from
/// `cov(alpha_u, alpha_t) = T^(u-t) V_t` and evaluates the Gaussian log
/// density by Cholesky factorization. Independent of the filtering
/// recursions it is used to check.
pub fn dense_gaussian_loglik(model: &StateSpaceModel, obs: &ObservationMatrix) -> f64 {
    let horizon = obs.n_periods();
    let m = model.m;
    let rrt = &model.r * model.r.transpose();

    // Per-period state variances and powers of T.
    let mut v_t: Vec<DMatrix<f64>> = vec![model.p1.clone()];
    for _ in 1..horizon {
        let prev = v_t.last().unwrap();
        v_t.push(&model.t * prev * model.t.transpose() + &rrt);
    }
    let mut t_pow: Vec<DMatrix<f64>> = vec![DMatrix::identity(m, m)];
    for k in 1..horizon {
        t_pow.push(&t_pow[k - 1] * &model.t);
    }

    // Observed entries in (period, column) order.
    let mut entries = Vec::new();
    for t in 0..horizon {
        for c in 0..obs.n_columns() {
            if let Some(v) = obs.get(t, c) {
                entries.push((t, c, v));
            }
        }
    }
    if entries.is_empty() {
        return 0.0;
    }
    let k = entries.len();
    let mean = model.mean.unwrap_or(0.0);

    let mut cov = DMatrix::zeros(k, k);
    let mut y = DVector::zeros(k);
    for (a, &(ta, ca, va)) in entries.iter().enumerate() {
        y[a] = va - mean;
        for (b, &(tb, cb, _)) in entries.iter().enumerate().take(a + 1) {
            // cov(alpha_ta, alpha_tb) with ta >= tb ordering handled below.
            let (hi, lo, chi, clo) = if ta >= tb {
                (ta, tb, ca, cb)
            } else {
                (tb, ta, cb, ca)
            };
            let block = &t_pow[hi - lo] * &v_t[lo];
            let z_hi = model.z.row(chi);
            let z_lo = model.z.row(clo);
            let mut acc = 0.0;
            for i in 0..m {
                if z_hi[i] == 0.0 {
                    continue;
                }
                for j in 0..m {
                    if z_lo[j] != 0.0 {
                        acc += z_hi[i] * block[(i, j)] * z_lo[j];
                    }
                }
            }
            cov[(a, b)] = acc;
            cov[(b, a)] = acc;
        }
    }

    let chol = Cholesky::new(cov).expect("oracle covariance must be positive definite");
    let solved = chol.solve(&y);
    let mut logdet = 0.0;
    for i in 0..k {
        logdet += 2.0 * chol.l_dirty()[(i, i)].ln();
    }
    -0.5 * (k as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + y.dot(&solved))
}

/// Draw a random stationary parameter point for an `(l, p)` configuration.
pub fn random_params(l: usize, p: usize, rng: &mut ChaCha8Rng) -> ParamVector {
    let rho = loop {
        let candidate: Vec<f64> = (0..p).map(|_| rng.gen_range(-0.85..0.9)).collect();
        if companion_spectral_radius(&candidate) < 0.95 {
            break candidate;
        }
    };
    let scale = |rng: &mut ChaCha8Rng| rng.gen_range(0.15..1.2);
    ParamVector::basic(
        rho,
        scale(rng),
        [
            (0..l).map(|_| scale(rng)).collect(),
            (0..l).map(|_| scale(rng)).collect(),
        ],
        [
            (0..l).map(|_| scale(rng)).collect(),
            (0..l).map(|_| scale(rng)).collect(),
        ],
    )
}

/// Simulate observations from a random model and mask entries at `miss`
/// probability.
pub fn random_masked_obs(
    config: &ReconConfig,
    params: &ParamVector,
    horizon: usize,
    miss: f64,
    rng: &mut ChaCha8Rng,
) -> ObservationMatrix {
    let model = build_state_space(config, params).expect("valid params");
    let sim = recon::ssm::simulate(&model, horizon, rng.gen()).expect("simulation");
    let values = DMatrix::from_fn(horizon, config.obs_dim(), |t, c| {
        if rng.gen_bool(miss) {
            f64::NAN
        } else {
            sim.observations[(t, c)]
        }
    });
    ObservationMatrix::from_dense(values, "2000Q1".parse().unwrap())
}
