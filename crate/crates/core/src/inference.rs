//! Covariance estimation for the fitted coefficients.
//!
//! Under the Poisson working model the inverse of the empirical
//! information (score outer product) estimates the covariance directly.
//! For general processes the slope matrix of the estimating function is
//! recovered by resampling: perturb the estimate by `n^{-1/2} Z` with
//! standard normal `Z`, regress the scaled estimating function on `Z`
//! without intercept, and plug the slope and the score outer product
//! into the sandwich `A^{-1} B A^{-T} / n`.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::meanode::Evaluator;
use crate::model::{ParamVector, ResolvedModel};

/// Covariance method selector, as surfaced on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovMethod {
    InverseInformation,
    ResamplingSandwich,
}

/// Wald inference for one regression coefficient.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefInference {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub z: f64,
    pub p_value: f64,
}

/// Covariance estimate over the free parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    pub method: CovMethod,
    /// Score outer product `(1/n) sum_i s_i s_i'`.
    pub b_hat: Vec<Vec<f64>>,
    /// Slope matrix; equals `b_hat` for the inverse-information method.
    pub a_hat: Vec<Vec<f64>>,
    /// Covariance of the estimator: `A^{-1} B A^{-T} / n`.
    pub sigma: Vec<Vec<f64>>,
    /// Standard errors for every free coordinate.
    pub se: Vec<f64>,
    pub free_names: Vec<String>,
    /// Wald rows for the regression coefficients.
    pub beta: Vec<CoefInference>,
    pub ci_level: f64,
    /// Resampling replicates dropped because a perturbed solve failed.
    pub dropped_resamples: usize,
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn from_rows(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let m = rows.first().map(|r| r.len()).unwrap_or(0);
    DMatrix::from_fn(n, m, |i, j| rows[i][j])
}

/// Score outer product `(1/n) sum_i s_i s_i'` over the free parameters.
pub fn score_outer_product(
    data: &Dataset,
    theta: &ParamVector,
    model: &ResolvedModel,
) -> Result<DMatrix<f64>> {
    let rows = Evaluator::new(data, model).per_subject_scores(theta)?;
    let p = model.free().free_len();
    let mut b = DMatrix::zeros(p, p);
    for row in &rows {
        for i in 0..p {
            for j in i..p {
                b[(i, j)] += row[i] * row[j];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            b[(i, j)] = b[(j, i)];
        }
    }
    Ok(b / data.len() as f64)
}

fn invert_spd(m: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    match m.clone().lu().try_inverse() {
        Some(inv) => Ok(inv),
        None => {
            // Report the direction responsible for the rank deficiency.
            let eig = m.clone().symmetric_eigen();
            let (idx, _) = eig
                .eigenvalues
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
                .unwrap();
            let null: Vec<f64> = eig.eigenvectors.column(idx).iter().cloned().collect();
            Err(Error::RankDeficient(format!(
                "{context}; null-space direction approximately {null:?}"
            )))
        }
    }
}

fn wald_rows(
    theta_free: &[f64],
    se: &[f64],
    names: &[String],
    n_beta_free: usize,
    ci_level: f64,
) -> Vec<CoefInference> {
    let normal = Normal::standard();
    let z_crit = normal.inverse_cdf(0.5 + ci_level / 2.0);
    (0..n_beta_free)
        .map(|j| {
            let est = theta_free[j];
            let s = se[j];
            let z = if s > 0.0 { est / s } else { f64::INFINITY };
            let p = 2.0 * (1.0 - normal.cdf(z.abs()));
            CoefInference {
                name: names[j].clone(),
                estimate: est,
                se: s,
                ci_lower: est - z_crit * s,
                ci_upper: est + z_crit * s,
                z,
                p_value: p,
            }
        })
        .collect()
}

fn assemble(
    method: CovMethod,
    a_hat: DMatrix<f64>,
    b_hat: DMatrix<f64>,
    sigma: DMatrix<f64>,
    theta_free: &[f64],
    model: &ResolvedModel,
    ci_level: f64,
    dropped: usize,
) -> CovarianceEstimate {
    let names = model.free().free_names();
    let se: Vec<f64> = (0..sigma.nrows()).map(|i| sigma[(i, i)].max(0.0).sqrt()).collect();
    let beta = wald_rows(theta_free, &se, &names, model.free().beta_free_len(), ci_level);
    CovarianceEstimate {
        method,
        b_hat: to_rows(&b_hat),
        a_hat: to_rows(&a_hat),
        sigma: to_rows(&sigma),
        se,
        free_names: names,
        beta,
        ci_level,
        dropped_resamples: dropped,
    }
}

/// Covariance by inverting the empirical information:
/// `Sigma = (n B)^{-1}` with `B` the score outer product.
pub fn empirical_information(
    data: &Dataset,
    theta: &ParamVector,
    model: &ResolvedModel,
    ci_level: f64,
) -> Result<CovarianceEstimate> {
    let b_hat = score_outer_product(data, theta, model)?;
    let inv = invert_spd(&b_hat, "empirical information is singular")?;
    let sigma = symmetrize(inv / data.len() as f64);
    let theta_free = model.free().pack(theta);
    Ok(assemble(
        CovMethod::InverseInformation,
        b_hat.clone(),
        b_hat,
        sigma,
        &theta_free,
        model,
        ci_level,
        0,
    ))
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// Estimate the slope matrix of a generic estimating function by
/// perturb-and-regress. `u_n` is the unnormalized (summed) estimating
/// function of the free parameters. Each draw is evaluated as an
/// antithetic pair `(+Z, -Z)` and the half-difference is regressed on
/// `Z`, which cancels the estimating function's value at the center and
/// all even-order curvature; `resamples` counts function evaluations, so
/// the pair count is `resamples / 2`. Pairs where either perturbed solve
/// fails are dropped. The sign convention makes the result estimate the
/// negative Jacobian, so that it approximates the information matrix
/// under the Poisson working model.
pub fn slope_from_estimating_fn(
    u_n: impl Fn(&[f64]) -> Option<Vec<f64>> + Sync,
    theta_free: &[f64],
    n_subjects: usize,
    resamples: usize,
    seed: u64,
    scale: Option<&[f64]>,
) -> Result<(DMatrix<f64>, usize)> {
    let p = theta_free.len();
    let pairs = resamples / 2;
    if pairs < p + 1 {
        return Err(Error::RankDeficient(format!(
            "{resamples} resampling evaluations ({pairs} antithetic pairs) cannot identify a \
             {p}x{p} slope; need at least {} pairs",
            p + 1
        )));
    }
    let sqrt_n = (n_subjects as f64).sqrt();
    // Under the expansion the scaled estimating function stays within a
    // few standard deviations of zero; rows orders of magnitude beyond
    // that sit past the breakdown of the linearization (the exponential
    // tail of the model) and would dominate the regression.
    const ROW_LIMIT: f64 = 50.0;
    let run_pair = |stream: u64| -> Option<(Vec<f64>, Vec<f64>)> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let z: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
        let plus: Vec<f64> = theta_free.iter().zip(&z).map(|(t, zi)| t + zi / sqrt_n).collect();
        let minus: Vec<f64> = theta_free.iter().zip(&z).map(|(t, zi)| t - zi / sqrt_n).collect();
        let u_plus = u_n(&plus)?;
        let u_minus = u_n(&minus)?;
        let s: Vec<f64> = u_plus
            .iter()
            .zip(&u_minus)
            .map(|(a, b)| 0.5 * (a - b) / sqrt_n)
            .collect();
        if let Some(scale) = scale {
            let worst = s
                .iter()
                .zip(scale)
                .map(|(v, sc)| v.abs() / sc.max(1e-12))
                .fold(0.0f64, f64::max);
            if !worst.is_finite() || worst > ROW_LIMIT {
                return None;
            }
        }
        Some((z, s))
    };
    // A pair drops when a perturbed solve blows up. Replace dropped pairs
    // in deterministic waves of fresh substreams (the retained design
    // stays symmetric, so the linear slope is untouched), giving up once
    // the attempt budget is twice the plan.
    let mut kept: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(pairs);
    let mut dropped = 0usize;
    let mut next_stream: u64 = 1;
    while kept.len() < pairs && (dropped + kept.len()) < 2 * pairs {
        let missing = pairs - kept.len();
        let wave: Vec<Option<(Vec<f64>, Vec<f64>)>> = (next_stream..next_stream + missing as u64)
            .into_par_iter()
            .map(run_pair)
            .collect();
        next_stream += missing as u64;
        for d in wave {
            match d {
                Some(pair) => kept.push(pair),
                None => dropped += 1,
            }
        }
    }
    if kept.len() < p + 1 || kept.len() * 2 < pairs {
        return Err(Error::RankDeficient(format!(
            "only {} of {pairs} antithetic resampling pairs evaluated ({dropped} dropped)",
            kept.len()
        )));
    }
    // Least squares without intercept: S ~ Z M' row-wise.
    let zmat = DMatrix::from_fn(kept.len(), p, |i, j| kept[i].0[j]);
    let smat = DMatrix::from_fn(kept.len(), p, |i, j| kept[i].1[j]);
    let ztz = zmat.transpose() * &zmat;
    let zts = zmat.transpose() * &smat;
    let mt = invert_spd(&ztz, "resampling design is rank deficient")? * zts;
    // mt is M'; the slope of a score-type map is minus the information.
    let a_hat = -mt.transpose();
    Ok((a_hat, dropped))
}

/// Resampled slope matrix of the dataset's estimating function at
/// `theta`. Deterministic given `(seed, resamples)`.
pub fn resample_slope(
    data: &Dataset,
    theta: &ParamVector,
    model: &ResolvedModel,
    resamples: usize,
    seed: u64,
) -> Result<(DMatrix<f64>, usize)> {
    let free = model.free();
    let theta_free = free.pack(theta);
    let n = data.len();
    let base = Evaluator::new(data, model);
    let u_n = |x: &[f64]| -> Option<Vec<f64>> {
        let th = free.unpack(x);
        match base.fork().loglik_and_score(&th) {
            Ok((_, g)) => Some(g.iter().map(|v| v * n as f64).collect()),
            Err(_) => None,
        }
    };
    // Row validity scale: the score outer product's standard deviations.
    let b_hat = score_outer_product(data, theta, model)?;
    let scale: Vec<f64> = (0..b_hat.nrows()).map(|j| b_hat[(j, j)].max(0.0).sqrt()).collect();
    slope_from_estimating_fn(u_n, &theta_free, n, resamples, seed, Some(&scale))
}

/// Plug a slope and a score outer product into the sandwich
/// `Sigma = A^{-1} B A^{-T} / n`.
pub fn sandwich(
    a_hat: &DMatrix<f64>,
    b_hat: &DMatrix<f64>,
    n_subjects: usize,
    theta_free: &[f64],
    model: &ResolvedModel,
    ci_level: f64,
    dropped: usize,
) -> Result<CovarianceEstimate> {
    let a_inv = invert_spd(a_hat, "slope matrix is singular")?;
    let sigma = symmetrize(&a_inv * b_hat * a_inv.transpose() / n_subjects as f64);
    Ok(assemble(
        CovMethod::ResamplingSandwich,
        a_hat.clone(),
        b_hat.clone(),
        sigma,
        theta_free,
        model,
        ci_level,
        dropped,
    ))
}

/// Full resampling-sandwich covariance: slope by perturbation, score
/// outer product from the data, Wald rows for the coefficients.
pub fn resampling_sandwich(
    data: &Dataset,
    theta: &ParamVector,
    model: &ResolvedModel,
    resamples: usize,
    ci_level: f64,
    seed: u64,
) -> Result<CovarianceEstimate> {
    let (a_hat, dropped) = resample_slope(data, theta, model, resamples, seed)?;
    let b_hat = score_outer_product(data, theta, model)?;
    let theta_free = model.free().pack(theta);
    sandwich(&a_hat, &b_hat, data.len(), &theta_free, model, ci_level, dropped)
}

/// Rebuild a dense matrix from serialized rows (CLI report plumbing).
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> DMatrix<f64> {
    from_rows(rows)
}
