//! Synthetic recurrent-event data and Monte Carlo study harness.
//!
//! Event times are generated by inverting the cumulative mean: with
//! frailty draw `xi`, unit-exponential partial sums `s_1 < s_2 < ...`
//! map to events `t_k = mu_x^{-1}(s_k / xi)`. The inverse is obtained in
//! one pass per subject by integrating the reciprocal equation
//! `dt/du = 1 / (alpha(t) exp(x'beta) q(u))` with dense output in `u`,
//! which makes every inversion a single interpolant lookup.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{Dataset, Subject};
use crate::error::{Error, Result};
use crate::estimator::{fit, FitOptions};
use crate::inference::{empirical_information, resampling_sandwich, CovMethod};
use crate::model::ModelSpec;
use crate::ode::{solve_dense_until, OdeOptions};

pub type PositiveFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Multiplicative Gamma random effect with mean `shape / rate`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GammaFrailty {
    pub shape: f64,
    pub rate: f64,
}

/// Covariate sampler per setting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum CovariateLaw {
    /// Independent normals, mean zero, truncated by rejection.
    TruncNormal { sd: f64, bound: f64, count: usize },
    /// Two standard normals truncated at +-1 plus one Bernoulli(0.5).
    NormalsAndBernoulli,
    /// Fixed covariate vector (oracle checks).
    Fixed(Vec<f64>),
}

impl CovariateLaw {
    fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        match self {
            CovariateLaw::TruncNormal { sd, bound, count } => (0..*count)
                .map(|_| loop {
                    let v: f64 = rand_distr::StandardNormal.sample(rng);
                    let v = v * sd;
                    if v.abs() <= *bound {
                        break v;
                    }
                })
                .collect(),
            CovariateLaw::NormalsAndBernoulli => {
                let mut x: Vec<f64> = (0..2)
                    .map(|_| loop {
                        let v: f64 = rand_distr::StandardNormal.sample(rng);
                        if v.abs() <= 1.0 {
                            break v;
                        }
                    })
                    .collect();
                x.push(if rng.random_range(0.0f64..1.0) < 0.5 { 1.0 } else { 0.0 });
                x
            }
            CovariateLaw::Fixed(x) => x.clone(),
        }
    }
}

/// Censoring sampler per setting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum CensorLaw {
    Uniform { lo: f64, hi: f64 },
    /// `min(U(lo, hi), cap)`.
    UniformCapped { lo: f64, hi: f64, cap: f64 },
    Fixed(f64),
}

impl CensorLaw {
    fn sample(&self, rng: &mut impl Rng) -> f64 {
        loop {
            let c = match self {
                CensorLaw::Uniform { lo, hi } => rng.random_range(*lo..*hi),
                CensorLaw::UniformCapped { lo, hi, cap } => rng.random_range(*lo..*hi).min(*cap),
                CensorLaw::Fixed(c) => *c,
            };
            if c > 0.0 {
                return c;
            }
        }
    }
}

/// A data-generating truth: positive `alpha` and `q`, regression
/// coefficients, covariate and censoring laws, optional frailty.
#[derive(Clone)]
pub struct TrueModel {
    pub alpha: PositiveFn,
    pub q: PositiveFn,
    pub beta: Vec<f64>,
    pub covariates: CovariateLaw,
    pub censoring: CensorLaw,
    pub frailty: Option<GammaFrailty>,
}

/// The six simulation settings. Settings 1-4 are Poisson; 5 and 6 add a
/// Gamma frailty with mean 1 and variance 0.5 to settings 1 and 2.
pub fn setting_catalog(id: usize) -> Result<TrueModel> {
    let trunc_normal = CovariateLaw::TruncNormal { sd: 0.5, bound: 4.0, count: 3 };
    let beta = vec![1.0, 1.0, 1.0];
    let m = match id {
        1 => TrueModel {
            alpha: Arc::new(|t| t * t + 1.0),
            q: Arc::new(|_| 1.0),
            beta,
            covariates: trunc_normal,
            censoring: CensorLaw::Uniform { lo: 0.0, hi: 2.0 },
            frailty: None,
        },
        2 => TrueModel {
            alpha: Arc::new(|_| 1.0),
            q: Arc::new(|u| 2.0 / (u + 1.0)),
            beta,
            covariates: trunc_normal,
            censoring: CensorLaw::Uniform { lo: 1.0, hi: 3.0 },
            frailty: None,
        },
        3 => TrueModel {
            alpha: Arc::new(|t| 0.2 / (1.0 + t)),
            q: Arc::new(|u| 1.0 / (u / 2.0 + 1.0)),
            beta,
            covariates: CovariateLaw::NormalsAndBernoulli,
            censoring: CensorLaw::UniformCapped { lo: 2.0, hi: 6.0, cap: 4.0 },
            frailty: None,
        },
        4 => TrueModel {
            alpha: Arc::new(|t| t + 1.0),
            q: Arc::new(|u| 2.0 / (u + 1.0)),
            beta,
            covariates: trunc_normal,
            censoring: CensorLaw::Uniform { lo: 1.0, hi: 3.0 },
            frailty: None,
        },
        5 => TrueModel {
            frailty: Some(GammaFrailty { shape: 2.0, rate: 2.0 }),
            ..setting_catalog(1)?
        },
        6 => TrueModel {
            frailty: Some(GammaFrailty { shape: 2.0, rate: 2.0 }),
            ..setting_catalog(2)?
        },
        _ => return Err(Error::Config(format!("unknown simulation setting {id}"))),
    };
    Ok(m)
}

/// Inversion bookkeeping returned alongside a simulated subject.
#[cfg_attr(not(test), allow(dead_code))]
pub(crate) struct SubjectDraw {
    pub xi: f64,
    /// Exponential partial sums that produced the events.
    pub exp_sums: Vec<f64>,
}

fn simulate_subject_inner(
    tm: &TrueModel,
    id: &str,
    rng: &mut impl Rng,
) -> Result<(Subject, SubjectDraw)> {
    let x = tm.covariates.sample(rng);
    let c = tm.censoring.sample(rng);
    let xi = match tm.frailty {
        Some(f) => Gamma::new(f.shape, 1.0 / f.rate)
            .map_err(|e| Error::Config(format!("invalid frailty: {e}")))?
            .sample(rng),
        None => 1.0,
    };
    let xb: f64 = x.iter().zip(&tm.beta).map(|(a, b)| a * b).sum();
    let exb = xb.exp();
    let alpha = Arc::clone(&tm.alpha);
    let q = Arc::clone(&tm.q);

    // Reciprocal mean equation: t as a function of the mean level u.
    let rhs = move |_u: f64, y: &[f64], dy: &mut [f64]| {
        dy[0] = 1.0 / (alpha(y[0]) * exb * q(_u));
    };
    let opts = OdeOptions { rtol: 1e-10, atol: 1e-12 };
    let u_cap = 1e7;
    let sol = solve_dense_until(rhs, &[0.0], u_cap, opts, |_, y| y[0] >= c)
        .map_err(|e| e.with_subject(id))?;
    if sol.y_end()[0] < c {
        return Err(Error::SolverFailure {
            last_t: sol.t_end(),
            reason: format!("mean level exceeded {u_cap} before reaching the censor time"),
            subject: Some(id.to_string()),
        });
    }

    let mut events = Vec::new();
    let mut sums = Vec::new();
    let mut s = 0.0f64;
    loop {
        let u: f64 = rng.random_range(0.0f64..1.0);
        s -= u.ln();
        let level = s / xi;
        if level > sol.t_end() {
            break;
        }
        let t = sol.eval_component(level, 0);
        if t > c {
            break;
        }
        events.push(t);
        sums.push(s);
    }
    let subject = Subject::new(id, x, events, c)?;
    Ok((subject, SubjectDraw { xi, exp_sums: sums }))
}

/// Simulate one subject from the truth.
pub fn simulate_subject(tm: &TrueModel, id: &str, rng: &mut impl Rng) -> Result<Subject> {
    simulate_subject_inner(tm, id, rng).map(|(s, _)| s)
}

/// Simulate a dataset of `n` subjects; bitwise deterministic in `seed`.
pub fn simulate_dataset(tm: &TrueModel, n: usize, seed: u64) -> Result<Dataset> {
    let subjects: Vec<Subject> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            simulate_subject(tm, &format!("s{i:06}"), &mut rng)
        })
        .collect::<Result<_>>()?;
    Dataset::new(subjects)
}

/// Covariance route for a Monte Carlo study.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum CovChoice {
    InverseInformation,
    Resampling { resamples: usize },
}

/// One coefficient's Monte Carlo summary: the Bias / SE / ESE / CP
/// columns of the simulation tables.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McRow {
    pub coef: String,
    pub truth: f64,
    pub bias: f64,
    /// Standard deviation of the estimates across replications.
    pub se: f64,
    /// Mean of the estimated standard errors.
    pub ese: f64,
    /// Coverage proportion of the nominal CIs.
    pub cp: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McSummary {
    pub rows: Vec<McRow>,
    pub reps_requested: usize,
    pub reps_used: usize,
    pub failures: usize,
}

/// Run `reps` independent simulate-fit-infer pipelines and summarize.
#[allow(clippy::too_many_arguments)]
pub fn mc_study(
    tm: &TrueModel,
    n: usize,
    reps: usize,
    spec: &ModelSpec,
    fit_opts: &FitOptions,
    cov: CovChoice,
    ci_level: f64,
    seed: u64,
) -> Result<McSummary> {
    if reps < 2 {
        return Err(Error::Config("a Monte Carlo study needs at least 2 replicates".into()));
    }
    let mut root = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..reps).map(|_| root.random()).collect();
    mc_study_with_seeds(tm, n, &seeds, spec, fit_opts, cov, ci_level)
}

/// As [`mc_study`] with explicit per-replicate seeds (two identical seeds
/// give identical replicates, hence zero Monte Carlo SE).
pub fn mc_study_with_seeds(
    tm: &TrueModel,
    n: usize,
    seeds: &[u64],
    spec: &ModelSpec,
    fit_opts: &FitOptions,
    cov: CovChoice,
    ci_level: f64,
) -> Result<McSummary> {
    struct RepOut {
        est: Vec<f64>,
        se: Vec<f64>,
        names: Vec<String>,
    }
    let runs: Vec<Result<RepOut>> = seeds
        .par_iter()
        .map(|&rep_seed| -> Result<RepOut> {
            let data = simulate_dataset(tm, n, rep_seed)?;
            let opts = FitOptions { seed: rep_seed, ..*fit_opts };
            let fitted = fit(&data, spec, &opts)?;
            let cov_est = match cov {
                CovChoice::InverseInformation => empirical_information(
                    &data,
                    &fitted.theta_hat,
                    &fitted.model,
                    ci_level,
                )?,
                CovChoice::Resampling { resamples } => resampling_sandwich(
                    &data,
                    &fitted.theta_hat,
                    &fitted.model,
                    resamples,
                    ci_level,
                    rep_seed ^ 0x9e37_79b9_7f4a_7c15,
                )?,
            };
            Ok(RepOut {
                est: cov_est.beta.iter().map(|c| c.estimate).collect(),
                se: cov_est.beta.iter().map(|c| c.se).collect(),
                names: cov_est.beta.iter().map(|c| c.name.clone()).collect(),
            })
        })
        .collect();

    let mut ok: Vec<RepOut> = Vec::new();
    let mut failures = 0usize;
    for r in runs {
        match r {
            Ok(v) => ok.push(v),
            Err(_) => failures += 1,
        }
    }
    if ok.len() < 2 {
        return Err(Error::Config(format!(
            "only {} replicates succeeded ({failures} failures)",
            ok.len()
        )));
    }
    let names = ok[0].names.clone();
    let z_crit = Normal::standard().inverse_cdf(0.5 + ci_level / 2.0);
    let reps_used = ok.len();
    let rows = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            // Coefficient names are x{k}; the truth comes from the
            // generating beta.
            let truth = name
                .strip_prefix('x')
                .and_then(|s| s.parse::<usize>().ok())
                .and_then(|k| tm.beta.get(k - 1).copied())
                .unwrap_or(f64::NAN);
            let ests: Vec<f64> = ok.iter().map(|r| r.est[j]).collect();
            let ses: Vec<f64> = ok.iter().map(|r| r.se[j]).collect();
            let mean = ests.iter().sum::<f64>() / reps_used as f64;
            let var = ests.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>()
                / (reps_used - 1) as f64;
            let ese = ses.iter().sum::<f64>() / reps_used as f64;
            let covered = ests
                .iter()
                .zip(&ses)
                .filter(|(e, s)| (*e - truth).abs() <= z_crit * **s)
                .count();
            McRow {
                coef: name.clone(),
                truth,
                bias: mean - truth,
                se: var.sqrt(),
                ese,
                cp: covered as f64 / reps_used as f64,
            }
        })
        .collect();
    Ok(McSummary { rows, reps_requested: seeds.len(), reps_used, failures })
}

/// Expose the covariance selector as the tables name it.
impl CovChoice {
    pub fn method(&self) -> CovMethod {
        match self {
            CovChoice::InverseInformation => CovMethod::InverseInformation,
            CovChoice::Resampling { .. } => CovMethod::ResamplingSandwich,
        }
    }
}
