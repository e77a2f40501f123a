//! Fitted-curve grids with pointwise confidence bands.
//!
//! Bands are delta-method intervals on the log scale: the variance of
//! `gamma_hat(t)` is `row' Sigma_aa row` with the basis row mapped
//! through the constraint elimination, and the alpha band is the
//! exponential of the log-scale interval.

use anyhow::{bail, Result};
use recurode::model::{CurveRep, ResolvedModel};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::report::Report;

pub struct CurveGrid {
    pub header: &'static str,
    pub rows: Vec<(f64, f64, Option<f64>, Option<f64>)>,
}

/// `z * sqrt(row' S row)` over a block of the covariance, with the block
/// starting at `offset` in the full free-coordinate indexing.
fn band_half_width(row: &[f64], sigma: &[Vec<f64>], offset: usize, z: f64) -> f64 {
    let mut quad = 0.0;
    for (i, ri) in row.iter().enumerate() {
        for (j, rj) in row.iter().enumerate() {
            quad += ri * sigma[offset + i][offset + j] * rj;
        }
    }
    z * quad.max(0.0).sqrt()
}

fn z_crit(report: &Report) -> f64 {
    let level = report
        .inference
        .as_ref()
        .map(|i| i.estimate.ci_level)
        .unwrap_or(0.95);
    Normal::standard().inverse_cdf(0.5 + level / 2.0)
}

/// Grid for `alpha_hat = exp(gamma_hat)` over the fitted time range.
pub fn alpha_grid(report: &Report, points: usize, rescale_to: Option<f64>) -> Result<CurveGrid> {
    let model = &report.model;
    let basis = match &model.gamma {
        CurveRep::Spline { basis } => basis,
        _ => bail!("the fitted model has no free alpha curve"),
    };
    let free = model.free();
    let sigma = report.inference.as_ref().map(|inf| inf.estimate.sigma.clone());
    let offset = free.beta_free_len();
    let z = z_crit(report);

    let factor = match rescale_to {
        Some(target) => {
            let t0 = match model.t0 {
                Some(t0) => t0,
                None => bail!("--rescale-alpha requires a model with an anchored t0"),
            };
            let g0 = model.gamma_value(&report.theta.a, t0);
            target / g0.exp()
        }
        None => 1.0,
    };

    let (lower, upper) = (basis.lower(), basis.upper());
    let elim = free.a_elim.clone();
    let mut rows = Vec::with_capacity(points);
    for i in 0..points {
        let t = lower + (upper - lower) * i as f64 / (points - 1) as f64;
        let gval = model.gamma_value(&report.theta.a, t);
        let alpha = gval.exp() * factor;
        let (lo, hi) = match &sigma {
            None => (None, None),
            Some(sigma) => {
                let raw = basis.eval(t);
                let row_free: Vec<f64> = match &elim {
                    Some(e) => {
                        let pivot = raw[e.index];
                        raw.iter()
                            .enumerate()
                            .filter(|(j, _)| *j != e.index)
                            .map(|(j, &v)| v + e.weights[j] * pivot)
                            .collect()
                    }
                    None => raw,
                };
                let h = band_half_width(&row_free, sigma, offset, z);
                (Some((gval - h).exp() * factor), Some((gval + h).exp() * factor))
            }
        };
        rows.push((t, alpha, lo, hi));
    }
    Ok(CurveGrid { header: "t,alpha_hat,lo,hi", rows })
}

/// Grid for `q_hat = exp(g_hat)` over the fitted mean range.
pub fn q_grid(report: &Report, points: usize) -> Result<CurveGrid> {
    let model: &ResolvedModel = &report.model;
    let basis = match &model.g {
        CurveRep::Spline { basis } => basis,
        _ => bail!("the fitted model has no free q curve"),
    };
    let free = model.free();
    let sigma = report.inference.as_ref().map(|inf| inf.estimate.sigma.clone());
    let offset = free.beta_free_len() + free.a_free_len();
    let z = z_crit(report);

    let (lower, upper) = (basis.lower(), basis.upper());
    let mut rows = Vec::with_capacity(points);
    for i in 0..points {
        let u = lower + (upper - lower) * i as f64 / (points - 1) as f64;
        let gval = model.g_value(&report.theta.b, u);
        let q = gval.exp();
        let (lo, hi) = match &sigma {
            None => (None, None),
            Some(sigma) => {
                let row = basis.eval(u);
                let h = band_half_width(&row, sigma, offset, z);
                (Some((gval - h).exp()), Some((gval + h).exp()))
            }
        };
        rows.push((u, q, lo, hi));
    }
    Ok(CurveGrid { header: "u,q_hat,lo,hi", rows })
}

impl CurveGrid {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(self.header);
        out.push('\n');
        for (x, y, lo, hi) in &self.rows {
            let lo = lo.map(|v| v.to_string()).unwrap_or_default();
            let hi = hi.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{x},{y},{lo},{hi}\n"));
        }
        out
    }
}
