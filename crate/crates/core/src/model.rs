//! Model configuration: the four transformation-model variants, spline
//! configuration, identifiability constraints, and the mapping between
//! the full parameter blocks and the free optimization coordinates.

use std::fmt;
use std::sync::Arc;

use serde::de::Error as DeError;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::spline::{knot_count, KnotRule, SplineBasis};

/// Which parts of the rate factorization are left unspecified.
///
/// The conditional mean solves `mu' = alpha(t) exp(x'beta) q(mu)`:
/// `Cox` fixes `q = 1`, `Am` fixes `alpha = 1`, `Lt` fixes `q` to a known
/// function, and `Flex` leaves both free under the constraints
/// `beta_1 = 1` and `alpha(t0) = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Cox,
    Am,
    Lt,
    Flex,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::Cox => "cox",
            Variant::Am => "am",
            Variant::Lt => "lt",
            Variant::Flex => "flex",
        };
        f.write_str(s)
    }
}

/// Number of interior knots: fixed, or `ceil(N^exponent)` from the total
/// observed event count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnotSpec {
    Exponent(f64),
    Count(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplineConfig {
    pub order: usize,
    pub rule: KnotRule,
    pub knots: KnotSpec,
}

impl SplineConfig {
    fn resolve_count(&self, n_events: usize) -> Result<usize> {
        match self.knots {
            KnotSpec::Count(k) => Ok(k),
            KnotSpec::Exponent(e) => knot_count(n_events.max(1), e),
        }
    }
}

/// Anchor point of the `alpha(t0) = 1` constraint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum T0Spec {
    /// Median of all pooled event times.
    Median,
    At(f64),
}

/// A known positive function on the log scale, used for the specified
/// transformation of the `Lt` variant and for exact-function hooks in
/// oracle checks.
#[derive(Clone)]
pub enum LogCurve {
    /// `q(u) = c` for a positive constant c.
    ConstQ(f64),
    /// `q(u) = 1 / (u/scale + 1)`.
    ReciprocalLinear { scale: f64 },
    /// Arbitrary log-scale function with derivative; not serializable.
    Custom(Arc<CustomCurve>),
}

pub struct CustomCurve {
    pub name: String,
    pub f: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    pub df: Box<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl LogCurve {
    pub fn custom(
        name: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        LogCurve::Custom(Arc::new(CustomCurve {
            name: name.into(),
            f: Box::new(f),
            df: Box::new(df),
        }))
    }

    /// Log-scale value.
    pub fn value(&self, u: f64) -> f64 {
        match self {
            LogCurve::ConstQ(c) => c.ln(),
            LogCurve::ReciprocalLinear { scale } => -(u / scale + 1.0).ln(),
            LogCurve::Custom(c) => (c.f)(u),
        }
    }

    /// Derivative of the log-scale value.
    pub fn deriv(&self, u: f64) -> f64 {
        match self {
            LogCurve::ConstQ(_) => 0.0,
            LogCurve::ReciprocalLinear { scale } => -1.0 / (u + scale),
            LogCurve::Custom(c) => (c.df)(u),
        }
    }

    /// Parse `const:<c>` or `ratio:<scale>`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (kind, arg) = spec
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("invalid curve spec `{spec}`, expected name:value")))?;
        let v: f64 = arg
            .parse()
            .map_err(|_| Error::Config(format!("invalid numeric argument in curve spec `{spec}`")))?;
        match kind {
            "const" if v > 0.0 => Ok(LogCurve::ConstQ(v)),
            "ratio" if v > 0.0 => Ok(LogCurve::ReciprocalLinear { scale: v }),
            _ => Err(Error::Config(format!("unknown or non-positive curve spec `{spec}`"))),
        }
    }

    pub fn spec_string(&self) -> String {
        match self {
            LogCurve::ConstQ(c) => format!("const:{c}"),
            LogCurve::ReciprocalLinear { scale } => format!("ratio:{scale}"),
            LogCurve::Custom(c) => format!("custom:{}", c.name),
        }
    }
}

impl fmt::Debug for LogCurve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LogCurve({})", self.spec_string())
    }
}

impl Serialize for LogCurve {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            LogCurve::Custom(_) => Err(serde::ser::Error::custom(
                "custom curves cannot be serialized",
            )),
            other => serializer.serialize_str(&other.spec_string()),
        }
    }
}

impl<'de> Deserialize<'de> for LogCurve {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        LogCurve::parse(&s).map_err(D::Error::custom)
    }
}

/// One of the two log-scale nuisance functions as actually represented
/// in a fitted model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum CurveRep {
    /// Identically zero (the function is fixed at 1).
    Zero,
    /// Spline span with free coefficients.
    Spline { basis: SplineBasis },
    /// Known function, no free coefficients.
    Known { curve: LogCurve },
}

impl CurveRep {
    pub fn coef_len(&self) -> usize {
        match self {
            CurveRep::Spline { basis } => basis.dim(),
            _ => 0,
        }
    }

    pub fn basis(&self) -> Option<&SplineBasis> {
        match self {
            CurveRep::Spline { basis } => Some(basis),
            _ => None,
        }
    }
}

/// User-facing model configuration prior to seeing data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub gamma: SplineConfig,
    pub g: SplineConfig,
    /// Known `log q` for the `Lt` variant.
    pub lt_log_q: Option<LogCurve>,
    pub t0: T0Spec,
}

impl ModelSpec {
    pub fn new(variant: Variant) -> Self {
        ModelSpec {
            variant,
            // Quartic splines with ceil(N^(1/7)) equal knots for gamma,
            // cubic with ceil(N^(1/5)) for g: the defaults used across
            // the simulation studies.
            gamma: SplineConfig {
                order: 5,
                rule: KnotRule::Equal,
                knots: KnotSpec::Exponent(1.0 / 7.0),
            },
            g: SplineConfig {
                order: 4,
                rule: KnotRule::Equal,
                knots: KnotSpec::Exponent(1.0 / 5.0),
            },
            lt_log_q: None,
            t0: T0Spec::Median,
        }
    }

    /// Realize the spec against a dataset: count knots, place them, and
    /// freeze the constraint anchor.
    pub fn resolve(&self, data: &Dataset) -> Result<ResolvedModel> {
        if matches!(self.variant, Variant::Lt) && self.lt_log_q.is_none() {
            return Err(Error::Config(
                "the lt variant requires a known q function".into(),
            ));
        }
        if !matches!(self.variant, Variant::Lt) && self.lt_log_q.is_some() {
            return Err(Error::Config(format!(
                "known q supplied but variant is {}",
                self.variant
            )));
        }
        let n_events = data.total_events();
        let gamma = match self.variant {
            Variant::Am => CurveRep::Zero,
            _ => {
                let count = self.gamma.resolve_count(n_events)?;
                let upper = data.max_time();
                let values = data.pooled_event_times();
                let basis = SplineBasis::from_rule(
                    self.gamma.order,
                    &values,
                    self.gamma.rule,
                    count,
                    (0.0, upper),
                )?;
                CurveRep::Spline { basis }
            }
        };
        let g = match self.variant {
            Variant::Cox => CurveRep::Zero,
            Variant::Lt => CurveRep::Known {
                curve: self.lt_log_q.clone().unwrap(),
            },
            _ => {
                let count = self.g.resolve_count(n_events)?;
                let upper = data.mean_scale_upper();
                let basis = match self.g.rule {
                    KnotRule::Equal => SplineBasis::from_rule(
                        self.g.order,
                        &[],
                        KnotRule::Equal,
                        count,
                        (0.0, upper),
                    )?,
                    KnotRule::Quantile => {
                        // Anchor on the tied distribution of event ranks;
                        // the distinct-value rule of the time scale would
                        // flatten it to a uniform grid.
                        let ranks = data.pooled_event_ranks();
                        let interior = crate::spline::quantile_knots_spread(
                            &ranks,
                            count,
                            (0.0, upper),
                        )?;
                        SplineBasis::new(self.g.order, interior, 0.0, upper)?
                    }
                };
                CurveRep::Spline { basis }
            }
        };
        let (t0, fix_beta1) = if matches!(self.variant, Variant::Flex) {
            let t0 = match self.t0 {
                T0Spec::At(v) => v,
                T0Spec::Median => crate::estimator::choose_t0(data)?,
            };
            (Some(t0), true)
        } else {
            (None, false)
        };
        ResolvedModel::new(self.variant, gamma, g, data.n_covariates(), t0, fix_beta1)
    }
}

/// Parameter blocks in full coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub beta: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(model: &ResolvedModel) -> Self {
        ParamVector {
            beta: vec![0.0; model.n_covariates],
            a: vec![0.0; model.gamma.coef_len()],
            b: vec![0.0; model.g.coef_len()],
        }
    }

    pub fn len(&self) -> usize {
        self.beta.len() + self.a.len() + self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Elimination data for the linear constraint `sum_j a_j A_j(t0) = 0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AElimination {
    /// Index of the eliminated coefficient (largest |A_j(t0)|).
    pub index: usize,
    /// `a[index] = sum_{j != index} weights[j] * a[j]`.
    pub weights: Vec<f64>,
}

/// Mapping between full parameters and free optimization coordinates.
///
/// Free layout: `[beta (minus beta_1 when fixed), a (minus the eliminated
/// coefficient), b]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FreeMap {
    pub n_beta: usize,
    pub n_a: usize,
    pub n_b: usize,
    pub fix_beta1: bool,
    pub a_elim: Option<AElimination>,
}

impl FreeMap {
    pub fn free_len(&self) -> usize {
        let beta = if self.fix_beta1 { self.n_beta - 1 } else { self.n_beta };
        let a = if self.a_elim.is_some() { self.n_a - 1 } else { self.n_a };
        beta + a + self.n_b
    }

    pub fn beta_free_len(&self) -> usize {
        if self.fix_beta1 {
            self.n_beta - 1
        } else {
            self.n_beta
        }
    }

    pub fn a_free_len(&self) -> usize {
        if self.a_elim.is_some() {
            self.n_a - 1
        } else {
            self.n_a
        }
    }

    /// Range of the beta block within the free vector.
    pub fn beta_range(&self) -> std::ops::Range<usize> {
        0..self.beta_free_len()
    }

    /// Range of the (a, b) block within the free vector.
    pub fn ab_range(&self) -> std::ops::Range<usize> {
        self.beta_free_len()..self.free_len()
    }

    pub fn pack(&self, theta: &ParamVector) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.free_len());
        let beta_skip = if self.fix_beta1 { 1 } else { 0 };
        out.extend_from_slice(&theta.beta[beta_skip..]);
        match &self.a_elim {
            Some(e) => {
                for (j, &v) in theta.a.iter().enumerate() {
                    if j != e.index {
                        out.push(v);
                    }
                }
            }
            None => out.extend_from_slice(&theta.a),
        }
        out.extend_from_slice(&theta.b);
        out
    }

    pub fn unpack(&self, free: &[f64]) -> ParamVector {
        debug_assert_eq!(free.len(), self.free_len());
        let mut beta = Vec::with_capacity(self.n_beta);
        let mut idx = 0;
        if self.fix_beta1 {
            beta.push(1.0);
        }
        for _ in 0..self.beta_free_len() {
            beta.push(free[idx]);
            idx += 1;
        }
        let mut a = vec![0.0; self.n_a];
        match &self.a_elim {
            Some(e) => {
                let mut acc = 0.0;
                for j in 0..self.n_a {
                    if j != e.index {
                        a[j] = free[idx];
                        acc += e.weights[j] * free[idx];
                        idx += 1;
                    }
                }
                a[e.index] = acc;
            }
            None => {
                for j in 0..self.n_a {
                    a[j] = free[idx];
                    idx += 1;
                }
            }
        }
        let mut b = vec![0.0; self.n_b];
        for j in 0..self.n_b {
            b[j] = free[idx];
            idx += 1;
        }
        ParamVector { beta, a, b }
    }

    /// Chain rule from a gradient in full coordinates to free coordinates.
    pub fn grad_to_free(&self, full: &ThetaGrad) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.free_len());
        let beta_skip = if self.fix_beta1 { 1 } else { 0 };
        out.extend_from_slice(&full.beta[beta_skip..]);
        match &self.a_elim {
            Some(e) => {
                let g_elim = full.a[e.index];
                for (j, &g) in full.a.iter().enumerate() {
                    if j != e.index {
                        out.push(g + e.weights[j] * g_elim);
                    }
                }
            }
            None => out.extend_from_slice(&full.a),
        }
        out.extend_from_slice(&full.b);
        out
    }

    /// Names of the free coordinates, for reporting.
    pub fn free_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.free_len());
        let beta_skip = if self.fix_beta1 { 1 } else { 0 };
        for j in beta_skip..self.n_beta {
            names.push(format!("x{}", j + 1));
        }
        for j in 0..self.n_a {
            if let Some(e) = &self.a_elim {
                if j == e.index {
                    continue;
                }
            }
            names.push(format!("a{}", j + 1));
        }
        for j in 0..self.n_b {
            names.push(format!("b{}", j + 1));
        }
        names
    }
}

/// Gradient container matching the full parameter blocks.
#[derive(Debug, Clone)]
pub struct ThetaGrad {
    pub beta: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl ThetaGrad {
    pub fn zeros(model: &ResolvedModel) -> Self {
        ThetaGrad {
            beta: vec![0.0; model.n_covariates],
            a: vec![0.0; model.gamma.coef_len()],
            b: vec![0.0; model.g.coef_len()],
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.beta.iter_mut().for_each(|v| *v *= c);
        self.a.iter_mut().for_each(|v| *v *= c);
        self.b.iter_mut().for_each(|v| *v *= c);
    }

    pub fn add(&mut self, other: &ThetaGrad) {
        for (d, s) in self.beta.iter_mut().zip(&other.beta) {
            *d += s;
        }
        for (d, s) in self.a.iter_mut().zip(&other.a) {
            *d += s;
        }
        for (d, s) in self.b.iter_mut().zip(&other.b) {
            *d += s;
        }
    }
}

/// A model with realized spline bases and frozen constraints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedModel {
    pub variant: Variant,
    pub gamma: CurveRep,
    pub g: CurveRep,
    pub n_covariates: usize,
    /// Anchor of `gamma(t0) = 0`; present only for the flex variant.
    pub t0: Option<f64>,
    pub fix_beta1: bool,
    free: FreeMap,
}

impl ResolvedModel {
    pub fn new(
        variant: Variant,
        gamma: CurveRep,
        g: CurveRep,
        n_covariates: usize,
        t0: Option<f64>,
        fix_beta1: bool,
    ) -> Result<Self> {
        if n_covariates == 0 {
            return Err(Error::Config("model requires at least one covariate".into()));
        }
        if fix_beta1 && n_covariates < 2 {
            return Err(Error::Config(
                "fixing beta_1 requires at least two covariates".into(),
            ));
        }
        let a_elim = match (t0, &gamma) {
            (Some(t0), CurveRep::Spline { basis }) => {
                let row = basis.eval(t0);
                let (index, pivot) = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
                    .map(|(i, v)| (i, *v))
                    .unwrap();
                if pivot.abs() < 1e-12 {
                    return Err(Error::Config(format!(
                        "no basis function is active at t0 = {t0}"
                    )));
                }
                let weights = row.iter().map(|&v| -v / pivot).collect();
                Some(AElimination { index, weights })
            }
            _ => None,
        };
        let free = FreeMap {
            n_beta: n_covariates,
            n_a: gamma.coef_len(),
            n_b: g.coef_len(),
            fix_beta1,
            a_elim,
        };
        Ok(ResolvedModel { variant, gamma, g, n_covariates, t0, fix_beta1, free })
    }

    pub fn free(&self) -> &FreeMap {
        &self.free
    }

    /// Value of `gamma` at `t` under coefficients `a`.
    pub fn gamma_value(&self, a: &[f64], t: f64) -> f64 {
        match &self.gamma {
            CurveRep::Zero => 0.0,
            CurveRep::Spline { basis } => {
                let v = basis.eval(t);
                v.iter().zip(a).map(|(x, c)| x * c).sum()
            }
            CurveRep::Known { curve } => curve.value(t),
        }
    }

    /// Value of `g` at `u` under coefficients `b`.
    pub fn g_value(&self, b: &[f64], u: f64) -> f64 {
        match &self.g {
            CurveRep::Zero => 0.0,
            CurveRep::Spline { basis } => {
                let v = basis.eval(u);
                v.iter().zip(b).map(|(x, c)| x * c).sum()
            }
            CurveRep::Known { curve } => curve.value(u),
        }
    }

    /// Derivative of `g` at `u` under coefficients `b`.
    pub fn g_deriv(&self, b: &[f64], u: f64) -> f64 {
        match &self.g {
            CurveRep::Zero => 0.0,
            CurveRep::Spline { basis } => {
                let v = basis.eval_deriv(u);
                v.iter().zip(b).map(|(x, c)| x * c).sum()
            }
            CurveRep::Known { curve } => curve.deriv(u),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Subject;
    use approx::assert_abs_diff_eq;

    fn toy_dataset() -> Dataset {
        let s1 = Subject::new("s1", vec![0.2, -0.1], vec![0.4, 1.1], 2.0).unwrap();
        let s2 = Subject::new("s2", vec![-0.3, 0.5], vec![0.9], 1.5).unwrap();
        Dataset::new(vec![s1, s2]).unwrap()
    }

    #[test]
    fn variant_block_presence() {
        let data = toy_dataset();
        let mut spec = ModelSpec::new(Variant::Cox);
        spec.gamma.knots = KnotSpec::Count(2);
        spec.g.knots = KnotSpec::Count(2);
        let m = spec.resolve(&data).unwrap();
        assert!(matches!(m.g, CurveRep::Zero));
        assert!(m.gamma.coef_len() > 0);
        assert!(m.t0.is_none());
        assert!(!m.fix_beta1);

        let mut spec = ModelSpec::new(Variant::Am);
        spec.g.knots = KnotSpec::Count(1);
        let m = spec.resolve(&data).unwrap();
        assert!(matches!(m.gamma, CurveRep::Zero));
        assert!(m.g.coef_len() > 0);

        let mut spec = ModelSpec::new(Variant::Lt);
        spec.gamma.knots = KnotSpec::Count(1);
        spec.lt_log_q = Some(LogCurve::ReciprocalLinear { scale: 2.0 });
        let m = spec.resolve(&data).unwrap();
        assert!(matches!(m.g, CurveRep::Known { .. }));
        assert_eq!(m.g.coef_len(), 0);

        // lt without a q function is a configuration error.
        let mut spec = ModelSpec::new(Variant::Lt);
        spec.lt_log_q = None;
        assert!(spec.resolve(&data).is_err());
    }

    #[test]
    fn flex_constraints_and_elimination() {
        let data = toy_dataset();
        let mut spec = ModelSpec::new(Variant::Flex);
        spec.gamma.knots = KnotSpec::Count(1);
        spec.g.knots = KnotSpec::Count(1);
        spec.gamma.order = 3;
        spec.g.order = 3;
        let m = spec.resolve(&data).unwrap();
        assert!(m.fix_beta1);
        let t0 = m.t0.unwrap();
        assert_abs_diff_eq!(t0, 0.9); // median of {0.4, 0.9, 1.1}

        let free = m.free();
        assert_eq!(free.free_len(), (2 - 1) + (m.gamma.coef_len() - 1) + m.g.coef_len());

        // Any unpacked point satisfies the constraints exactly.
        let x: Vec<f64> = (0..free.free_len()).map(|i| 0.3 * i as f64 - 0.5).collect();
        let theta = free.unpack(&x);
        assert_eq!(theta.beta[0], 1.0);
        assert_abs_diff_eq!(m.gamma_value(&theta.a, t0), 0.0, epsilon = 1e-14);

        // pack . unpack is the identity on free coordinates.
        let back = free.pack(&theta);
        for (u, v) in back.iter().zip(&x) {
            assert_abs_diff_eq!(u, v, epsilon = 1e-15);
        }
    }

    #[test]
    fn grad_to_free_matches_finite_differences() {
        let data = toy_dataset();
        let mut spec = ModelSpec::new(Variant::Flex);
        spec.gamma.knots = KnotSpec::Count(1);
        spec.g.knots = KnotSpec::Count(1);
        spec.gamma.order = 3;
        spec.g.order = 2;
        let m = spec.resolve(&data).unwrap();
        let free = m.free();

        // A smooth scalar function of the full parameters.
        let f = |th: &ParamVector| -> f64 {
            let sb: f64 = th.beta.iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * v * v).sum();
            let sa: f64 = th.a.iter().enumerate().map(|(i, v)| (0.5 + i as f64) * v).sum::<f64>().sin();
            let sbb: f64 = th.b.iter().map(|v| v.exp()).sum();
            sb + sa + sbb
        };
        let x: Vec<f64> = (0..free.free_len()).map(|i| 0.1 * (i as f64 + 1.0)).collect();
        let theta = free.unpack(&x);

        // Full-coordinate analytic gradient of f.
        let mut full = ThetaGrad {
            beta: theta.beta.iter().enumerate().map(|(i, v)| 2.0 * (i as f64 + 1.0) * v).collect(),
            a: {
                let inner: f64 = theta.a.iter().enumerate().map(|(i, v)| (0.5 + i as f64) * v).sum();
                theta.a.iter().enumerate().map(|(i, _)| (0.5 + i as f64) * inner.cos()).collect()
            },
            b: theta.b.iter().map(|v| v.exp()).collect(),
        };
        let g_free = free.grad_to_free(&full);
        full.scale(1.0); // keep mutable binding exercised

        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (f(&free.unpack(&xp)) - f(&free.unpack(&xm))) / (2.0 * h);
            assert!(
                (fd - g_free[i]).abs() < 1e-5 * fd.abs().max(1.0),
                "coordinate {i}: fd {fd} vs analytic {}",
                g_free[i]
            );
        }
    }

    #[test]
    fn log_curve_parse_and_values() {
        let c = LogCurve::parse("const:2").unwrap();
        assert_abs_diff_eq!(c.value(5.0), 2f64.ln());
        assert_eq!(c.deriv(5.0), 0.0);
        let r = LogCurve::parse("ratio:2").unwrap();
        assert_abs_diff_eq!(r.value(1.0), -(1.5f64).ln());
        assert_abs_diff_eq!(r.deriv(1.0), -1.0 / 3.0);
        assert!(LogCurve::parse("bogus:1").is_err());
        assert!(LogCurve::parse("const:-1").is_err());
    }
}
