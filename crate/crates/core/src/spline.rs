//! Polynomial B-spline bases on a clamped (open) knot vector.
//!
//! A basis of order `p` (degree `p - 1`) with `K` interior knots on
//! `[lower, upper]` has dimension `K + p`. Evaluation uses the Cox-de Boor
//! recursion; outside the boundary every basis function is continued
//! linearly with the value and slope it has at the nearer boundary, so
//! that downstream solvers see a smooth function when an argument
//! transiently leaves the fitted range.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Placement rule for interior knots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnotRule {
    /// Split the boundary interval into `K + 1` equal pieces.
    Equal,
    /// Knots at the j/(K+1) empirical quantiles of the distinct values.
    Quantile,
}

/// A B-spline basis: order, interior knots, and boundary interval.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplineBasis {
    order: usize,
    interior: Vec<f64>,
    lower: f64,
    upper: f64,
    /// Clamped knot vector: boundary knots repeated `order` times.
    padded: Vec<f64>,
}

/// Number of interior knots from the sample-size rule: `ceil(N^exponent)`.
///
/// Values that land within one part in 10^9 of an integer are treated as
/// that integer before taking the ceiling, so exact powers are not bumped
/// up by floating-point noise.
pub fn knot_count(n: usize, exponent: f64) -> Result<usize> {
    if n == 0 {
        return Err(Error::Domain("knot_count requires N >= 1".into()));
    }
    if !(0.0..0.5).contains(&exponent) || exponent <= 0.0 {
        return Err(Error::Domain(format!(
            "knot exponent must lie in (0, 0.5), got {exponent}"
        )));
    }
    let v = (n as f64).powf(exponent);
    let nearest = v.round();
    let k = if (v - nearest).abs() < 1e-9 * v.max(1.0) {
        nearest
    } else {
        v.ceil()
    };
    Ok(k as usize)
}

/// Construct `count` interior knots on `(lower, upper)`.
///
/// `values` are only consulted by the quantile rule (type-7 quantiles of
/// the distinct values). Coincident quantiles are nudged apart by
/// `(upper - lower) * 1e-9`; if that cannot produce strictly increasing
/// knots inside the boundary, a degenerate-knots error is returned.
pub fn make_knots(
    values: &[f64],
    rule: KnotRule,
    count: usize,
    boundary: (f64, f64),
) -> Result<Vec<f64>> {
    let (lower, upper) = boundary;
    if !(lower < upper) {
        return Err(Error::Domain(format!(
            "knot boundary must satisfy lower < upper, got ({lower}, {upper})"
        )));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    match rule {
        KnotRule::Equal => {
            let step = (upper - lower) / (count + 1) as f64;
            Ok((1..=count).map(|j| lower + step * j as f64).collect())
        }
        KnotRule::Quantile => {
            if values.is_empty() {
                return Err(Error::Domain(
                    "quantile knot rule requires at least one value".into(),
                ));
            }
            let mut distinct = values.to_vec();
            distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
            distinct.dedup();
            let mut knots: Vec<f64> = (1..=count)
                .map(|j| quantile_type7(&distinct, j as f64 / (count + 1) as f64))
                .collect();
            // Nudge ties apart, keeping knots strictly inside the boundary.
            let eps = (upper - lower) * 1e-9;
            for i in 1..knots.len() {
                if knots[i] <= knots[i - 1] {
                    knots[i] = knots[i - 1] + eps;
                }
            }
            let inside = knots.iter().all(|&k| k > lower && k < upper);
            let increasing = knots.windows(2).all(|w| w[0] < w[1]);
            if !inside || !increasing {
                return Err(Error::DegenerateKnots(format!(
                    "{count} distinct quantile knots unobtainable inside ({lower}, {upper})"
                )));
            }
            Ok(knots)
        }
    }
}

/// Interior knots at type-7 quantiles of a (possibly tied) sorted sample,
/// pushed strictly inside `(lower, upper)` with machine-scale spacing.
/// Used for the mean-scale basis, whose anchor values are integer event
/// ranks: deduplication would distort their distribution, and top
/// quantiles can land on or beyond the truncated domain boundary.
pub(crate) fn quantile_knots_spread(
    sorted: &[f64],
    count: usize,
    boundary: (f64, f64),
) -> Result<Vec<f64>> {
    let (lower, upper) = boundary;
    if sorted.is_empty() {
        return Err(Error::Domain("quantile knots require at least one value".into()));
    }
    let mut knots: Vec<f64> = (1..=count)
        .map(|j| quantile_type7(sorted, j as f64 / (count + 1) as f64))
        .collect();
    let eps = (upper - lower) * 1e-9;
    for k in knots.iter_mut() {
        *k = k.clamp(lower + eps, upper - eps);
    }
    for i in 1..knots.len() {
        if knots[i] <= knots[i - 1] {
            knots[i] = knots[i - 1] + eps;
        }
    }
    if let Some(&last) = knots.last() {
        if last > upper - eps {
            let n = knots.len();
            knots[n - 1] = upper - eps;
            for i in (0..n - 1).rev() {
                if knots[i] >= knots[i + 1] {
                    knots[i] = knots[i + 1] - eps;
                }
            }
        }
    }
    let ok = knots.windows(2).all(|w| w[0] < w[1])
        && knots.iter().all(|&k| k > lower && k < upper);
    if !ok {
        return Err(Error::DegenerateKnots(format!(
            "{count} spread quantile knots unobtainable inside ({lower}, {upper})"
        )));
    }
    Ok(knots)
}

/// Type-7 quantile (linear interpolation) of sorted values.
fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = lo.min(n - 2) + 1;
    let frac = h - lo as f64;
    sorted[lo.min(n - 1)] * (1.0 - frac) + sorted[hi] * frac
}

impl SplineBasis {
    pub fn new(order: usize, interior: Vec<f64>, lower: f64, upper: f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::Domain("spline order must be >= 1".into()));
        }
        if !(lower < upper) {
            return Err(Error::Domain(format!(
                "spline boundary must satisfy lower < upper, got ({lower}, {upper})"
            )));
        }
        let strictly_inside = interior.iter().all(|&k| k > lower && k < upper);
        let increasing = interior.windows(2).all(|w| w[0] < w[1]);
        if !strictly_inside || !increasing {
            return Err(Error::DegenerateKnots(
                "interior knots must be strictly increasing and inside (lower, upper)".into(),
            ));
        }
        let mut padded = Vec::with_capacity(interior.len() + 2 * order);
        padded.extend(std::iter::repeat(lower).take(order));
        padded.extend_from_slice(&interior);
        padded.extend(std::iter::repeat(upper).take(order));
        Ok(SplineBasis { order, interior, lower, upper, padded })
    }

    /// Convenience constructor: count and place knots by rule, then build.
    pub fn from_rule(
        order: usize,
        values: &[f64],
        rule: KnotRule,
        count: usize,
        boundary: (f64, f64),
    ) -> Result<Self> {
        let interior = make_knots(values, rule, count, boundary)?;
        SplineBasis::new(order, interior, boundary.0, boundary.1)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.interior.len() + self.order
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.interior
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    /// Boundaries of the polynomial pieces: lower, interior knots, upper.
    pub fn piece_breaks(&self) -> Vec<f64> {
        let mut b = Vec::with_capacity(self.interior.len() + 2);
        b.push(self.lower);
        b.extend_from_slice(&self.interior);
        b.push(self.upper);
        b
    }

    /// All basis values at `t` (length `dim`).
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(t, &mut out);
        out
    }

    /// All first derivatives at `t` (length `dim`).
    pub fn eval_deriv(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_deriv_into(t, &mut out);
        out
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim());
        out.iter_mut().for_each(|v| *v = 0.0);
        if t < self.lower {
            // Linear extension: value and slope at the lower boundary.
            let mut val = vec![0.0; self.dim()];
            let mut der = vec![0.0; self.dim()];
            self.eval_inside(self.lower, &mut val);
            self.eval_deriv_inside(self.lower, &mut der);
            for j in 0..self.dim() {
                out[j] = val[j] + der[j] * (t - self.lower);
            }
        } else if t > self.upper {
            let mut val = vec![0.0; self.dim()];
            let mut der = vec![0.0; self.dim()];
            self.eval_inside(self.upper, &mut val);
            self.eval_deriv_inside(self.upper, &mut der);
            for j in 0..self.dim() {
                out[j] = val[j] + der[j] * (t - self.upper);
            }
        } else {
            self.eval_inside(t, out);
        }
    }

    pub fn eval_deriv_into(&self, t: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim());
        out.iter_mut().for_each(|v| *v = 0.0);
        let clamped = t.clamp(self.lower, self.upper);
        self.eval_deriv_inside(clamped, out);
    }

    /// Knot span index into the padded vector with
    /// `padded[span] <= t < padded[span + 1]` (right end clamped).
    fn find_span(&self, t: f64) -> usize {
        let p = self.order - 1;
        let n = self.dim() - 1;
        if t >= self.padded[n + 1] {
            // t == upper (or clamped): use the last non-empty span.
            return n;
        }
        if t <= self.padded[p] {
            return p;
        }
        let mut lo = p;
        let mut hi = n + 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if t < self.padded[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Cox-de Boor values for t in [lower, upper], scattered to full length.
    fn eval_inside(&self, t: f64, out: &mut [f64]) {
        let p = self.order - 1;
        let span = self.find_span(t);
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = t - self.padded[span + 1 - j];
            right[j] = self.padded[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        for (r, &v) in n.iter().enumerate() {
            out[span - p + r] = v;
        }
    }

    /// First derivatives for t in [lower, upper], scattered to full length.
    ///
    /// Uses the difference formula
    /// `N'_{i,p} = (p-1) * (N_{i,p-1}/(k_{i+p-1}-k_i) - N_{i+1,p-1}/(k_{i+p}-k_{i+1}))`
    /// over the non-zero window of the order-(p-1) basis.
    fn eval_deriv_inside(&self, t: f64, out: &mut [f64]) {
        let p = self.order - 1; // polynomial degree
        if p == 0 {
            return; // piecewise constant
        }
        let span = self.find_span(t);
        // Lower-order (degree p-1) basis values at t: N_{i,p-1} for
        // i = span-p+1 ..= span.
        let mut n = vec![0.0; p];
        let mut left = vec![0.0; p];
        let mut right = vec![0.0; p];
        n[0] = 1.0;
        for j in 1..p {
            left[j] = t - self.padded[span + 1 - j];
            right[j] = self.padded[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        let deg = p as f64;
        // N_{i,p-1}(t) is non-zero for i in span-p+1 ..= span.
        let lower_val = |i: isize| -> f64 {
            let base = span as isize - p as isize + 1;
            if i < base || i > span as isize {
                0.0
            } else {
                n[(i - base) as usize]
            }
        };
        for i in (span - p)..=span {
            let ii = i as isize;
            let denom1 = self.padded[i + p] - self.padded[i];
            let denom2 = self.padded[i + p + 1] - self.padded[i + 1];
            let term1 = if denom1 > 0.0 { lower_val(ii) / denom1 } else { 0.0 };
            let term2 = if denom2 > 0.0 { lower_val(ii + 1) / denom2 } else { 0.0 };
            out[i] = deg * (term1 - term2);
        }
    }
}
