//! Conditional-mean solves and parameter sensitivities.
//!
//! Every subject shares one solve of the covariate-free equation
//! `dmu~/dt~ = exp(g(mu~))` after the time transformation
//! `t~ = exp(x'beta) * int_0^t exp(gamma(s)) ds`. The transform integral
//! is evaluated by 10-point Gauss-Legendre quadrature on each polynomial
//! piece of the gamma spline, so it is exact to machine precision for the
//! spline orders in use. Gradients of the mean with respect to the g
//! coefficients solve a linear auxiliary ODE jointly with the mean;
//! gradients with respect to beta and the gamma coefficients ride on the
//! transform derivative and never enlarge the ODE state.

use std::sync::Arc;

use rayon::prelude::*;

use crate::data::{Dataset, Subject};
use crate::error::{Error, Result};
use crate::model::{CurveRep, ParamVector, ResolvedModel, ThetaGrad};
use crate::ode::{extend_dense, solve_dense, DenseSolution, OdeOptions};

/// 10-point Gauss-Legendre nodes and weights on [-1, 1] (positive half;
/// mirrored for the negative nodes).
const GL_X: [f64; 5] = [
    0.148_874_338_981_631_21,
    0.433_395_394_129_247_19,
    0.679_409_568_299_024_41,
    0.865_063_366_688_984_51,
    0.973_906_528_517_171_72,
];
const GL_W: [f64; 5] = [
    0.295_524_224_714_752_87,
    0.269_266_719_309_996_36,
    0.219_086_362_515_982_04,
    0.149_451_349_150_580_59,
    0.066_671_344_308_688_14,
];

fn gl10(a: f64, b: f64, mut emit: impl FnMut(f64, f64)) {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    for i in 0..5 {
        emit(mid - half * GL_X[i], half * GL_W[i]);
        emit(mid + half * GL_X[i], half * GL_W[i]);
    }
}

/// Split `(a, b]` at the piece breaks that fall strictly inside.
fn split_at_breaks(breaks: &[f64], a: f64, b: f64, out: &mut Vec<(f64, f64)>) {
    let mut lo = a;
    for &k in breaks {
        if k > lo && k < b {
            out.push((lo, k));
            lo = k;
        }
    }
    if b > lo {
        out.push((lo, b));
    }
}

/// Evaluation controls shared by mean solves and likelihood assembly.
#[derive(Debug, Clone, Copy, Default)]
pub struct EvalOptions {
    pub ode: OdeOptions,
}

/// Mean values (and optionally sensitivities) of one subject on a grid.
#[derive(Debug, Clone)]
pub struct MeanPath {
    pub times: Vec<f64>,
    pub mu: Vec<f64>,
    /// Per time point, the gradient of `mu` with respect to the free
    /// parameters; `None` when only values were requested.
    pub sens: Option<Vec<Vec<f64>>>,
}

/// Time-transform quadrature plan for one ordered list of query times.
/// Node positions, weights, and basis rows depend only on the times and
/// the model structure, never on the coefficients, so the per-iteration
/// work is one dot product and one exponential per node.
struct QuadPlan {
    times: Vec<f64>,
    /// Node range `node_end[k-1]..node_end[k]` integrates
    /// `(times[k-1], times[k]]` (with `times[-1] = 0`).
    node_end: Vec<usize>,
    node_w: Vec<f64>,
    /// Gamma spline rows per node (node-major, `q1` wide); empty unless
    /// gamma is a spline.
    node_basis: Vec<f64>,
    /// `exp(gamma(node)) * w` per node for a known gamma; empty otherwise.
    node_known: Vec<f64>,
    q1: usize,
}

impl QuadPlan {
    fn build(gamma: &CurveRep, times: &[f64]) -> QuadPlan {
        let q1 = gamma.coef_len();
        let mut node_end = Vec::with_capacity(times.len());
        let mut node_w = Vec::new();
        let mut node_basis = Vec::new();
        let mut node_known = Vec::new();
        let breaks = match gamma {
            CurveRep::Spline { basis } => basis.piece_breaks(),
            _ => Vec::new(),
        };
        let mut prev = 0.0f64;
        let mut segs = Vec::new();
        for &t in times {
            if t > prev {
                segs.clear();
                split_at_breaks(&breaks, prev, t, &mut segs);
                for &(a, b) in &segs {
                    gl10(a, b, |node, w| {
                        node_w.push(w);
                        match gamma {
                            CurveRep::Spline { basis } => {
                                node_basis.extend_from_slice(&basis.eval(node));
                            }
                            CurveRep::Known { curve } => {
                                node_known.push(curve.value(node).exp() * w);
                            }
                            CurveRep::Zero => {}
                        }
                    });
                }
            }
            node_end.push(node_w.len());
            prev = prev.max(t);
        }
        QuadPlan { times: times.to_vec(), node_end, node_w, node_basis, node_known, q1 }
    }

    /// Cumulative `R(t_k) = int_0^{t_k} exp(gamma)` at the query times.
    fn r_values(&self, gamma: &CurveRep, a: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let mut acc = 0.0;
        let mut start = 0;
        for (k, &end) in self.node_end.iter().enumerate() {
            match gamma {
                CurveRep::Zero => {
                    acc = self.times[k];
                }
                CurveRep::Known { .. } => {
                    for n in start..end {
                        acc += self.node_known[n];
                    }
                }
                CurveRep::Spline { .. } => {
                    for n in start..end {
                        let row = &self.node_basis[n * self.q1..(n + 1) * self.q1];
                        let e: f64 = row.iter().zip(a).map(|(x, c)| x * c).sum();
                        acc += self.node_w[n] * e.exp();
                    }
                }
            }
            out.push(acc);
            start = end;
        }
    }

    /// Cumulative `R` and `dR/da` at the query times; `dr` is filled
    /// time-major with `q1` entries per time.
    fn r_and_dr(&self, gamma: &CurveRep, a: &[f64], out: &mut Vec<f64>, dr: &mut Vec<f64>) {
        out.clear();
        dr.clear();
        if self.q1 == 0 {
            self.r_values(gamma, a, out);
            return;
        }
        let mut acc = 0.0;
        let mut dacc = vec![0.0; self.q1];
        let mut start = 0;
        for &end in &self.node_end {
            for n in start..end {
                let row = &self.node_basis[n * self.q1..(n + 1) * self.q1];
                let e: f64 = row.iter().zip(a).map(|(x, c)| x * c).sum();
                let we = self.node_w[n] * e.exp();
                acc += we;
                for (d, &x) in dacc.iter_mut().zip(row) {
                    *d += we * x;
                }
            }
            out.push(acc);
            dr.extend_from_slice(&dacc);
            start = end;
        }
    }
}

/// Transformed time `t~ = exp(x'beta) * int_0^t exp(gamma(s)) ds`.
pub fn transformed_time(
    subject: &Subject,
    beta: &[f64],
    a: &[f64],
    gamma: &CurveRep,
    t: f64,
) -> Result<f64> {
    if !t.is_finite() || t < 0.0 {
        return Err(Error::Domain(format!("transformed_time requires t >= 0, got {t}")));
    }
    let plan = QuadPlan::build(gamma, &[t]);
    let mut r = Vec::new();
    plan.r_values(gamma, a, &mut r);
    let xb: f64 = subject.x.iter().zip(beta).map(|(x, b)| x * b).sum();
    Ok(xb.exp() * r[0])
}

/// Shared covariate-free mean solution on `[0, horizon]`.
pub enum SharedMean {
    /// `g = 0`: the mean equals the transformed time exactly.
    Identity,
    Dense(DenseSolution),
}

impl SharedMean {
    pub fn mu(&self, ttilde: f64) -> f64 {
        match self {
            SharedMean::Identity => ttilde,
            SharedMean::Dense(sol) => sol.eval_component(ttilde, 0),
        }
    }
}

fn mu_rhs<'m>(model: &'m ResolvedModel, b: &'m [f64]) -> impl FnMut(f64, &[f64], &mut [f64]) + 'm {
    let mut row = vec![0.0; model.g.coef_len()];
    move |_t, y, dy| {
        dy[0] = match &model.g {
            CurveRep::Zero => 1.0,
            CurveRep::Known { curve } => curve.value(y[0]).exp(),
            CurveRep::Spline { basis } => {
                basis.eval_into(y[0], &mut row);
                let v: f64 = row.iter().zip(b).map(|(x, c)| x * c).sum();
                v.exp()
            }
        };
    }
}

fn joint_rhs<'m>(
    model: &'m ResolvedModel,
    b: &'m [f64],
) -> impl FnMut(f64, &[f64], &mut [f64]) + 'm {
    let q2 = model.g.coef_len();
    let mut row = vec![0.0; q2];
    let mut drow = vec![0.0; q2];
    move |_t, y, dy| {
        let mu = y[0];
        match model.g.basis() {
            Some(basis) => {
                basis.eval_into(mu, &mut row);
                basis.eval_deriv_into(mu, &mut drow);
                let g: f64 = row.iter().zip(b).map(|(x, c)| x * c).sum();
                let gp: f64 = drow.iter().zip(b).map(|(x, c)| x * c).sum();
                let f = g.exp();
                dy[0] = f;
                for j in 0..q2 {
                    dy[1 + j] = f * (row[j] + gp * y[1 + j]);
                }
            }
            None => {
                dy[0] = model.g_value(b, mu).exp();
            }
        }
    }
}

/// Solve the shared mean equation `dmu~/dt~ = exp(g(mu~))`, `mu~(0) = 0`,
/// up to `horizon`, returning a densely evaluable solution.
pub fn solve_shared(
    model: &ResolvedModel,
    b: &[f64],
    horizon: f64,
    opts: &EvalOptions,
) -> Result<SharedMean> {
    if matches!(model.g, CurveRep::Zero) {
        return Ok(SharedMean::Identity);
    }
    let sol = solve_dense(mu_rhs(model, b), &[0.0], horizon, opts.ode)?;
    Ok(SharedMean::Dense(sol))
}

/// Cache of the shared solves, keyed by the exact bits of `b`. The dense
/// solutions are extended in place when a larger horizon is requested, so
/// beta-block updates at fixed spline coefficients never re-solve.
struct OdeCache {
    key: Option<Vec<u64>>,
    mu: Option<DenseSolution>,
    joint: Option<DenseSolution>,
}

impl OdeCache {
    fn new() -> Self {
        OdeCache { key: None, mu: None, joint: None }
    }

    fn ensure(
        &mut self,
        model: &ResolvedModel,
        b: &[f64],
        horizon: f64,
        need_joint: bool,
        opts: &EvalOptions,
    ) -> Result<()> {
        if matches!(model.g, CurveRep::Zero) {
            return Ok(());
        }
        if !horizon.is_finite() {
            return Err(Error::SolverFailure {
                last_t: 0.0,
                reason: "non-finite transformed horizon".into(),
                subject: None,
            });
        }
        let key: Vec<u64> = b.iter().map(|v| v.to_bits()).collect();
        if self.key.as_ref() != Some(&key) {
            self.key = Some(key);
            self.mu = None;
            self.joint = None;
        }
        // Solve slightly past the requested horizon so that nearby
        // requests (finite differences, small beta moves) reuse it.
        let target = horizon * 1.0001 + 1e-12;
        if need_joint {
            match &mut self.joint {
                Some(sol) if sol.t_end() >= horizon => {}
                Some(sol) => {
                    extend_dense(joint_rhs(model, b), sol, target, opts.ode, |_, _| false)?
                }
                None => {
                    let y0 = vec![0.0; 1 + model.g.coef_len()];
                    self.joint = Some(solve_dense(joint_rhs(model, b), &y0, target, opts.ode)?);
                }
            }
        } else if self.joint.as_ref().map(|s| s.t_end() >= horizon) != Some(true) {
            match &mut self.mu {
                Some(sol) if sol.t_end() >= horizon => {}
                Some(sol) => extend_dense(mu_rhs(model, b), sol, target, opts.ode, |_, _| false)?,
                None => {
                    self.mu = Some(solve_dense(mu_rhs(model, b), &[0.0], target, opts.ode)?);
                }
            }
        }
        Ok(())
    }

    fn mu_at(&self, model: &ResolvedModel, ttilde: f64) -> f64 {
        if matches!(model.g, CurveRep::Zero) {
            return ttilde;
        }
        if let Some(sol) = &self.joint {
            if sol.t_end() >= ttilde {
                return sol.eval_component(ttilde, 0);
            }
        }
        self.mu
            .as_ref()
            .expect("ensure() must run before evaluation")
            .eval_component(ttilde, 0)
    }

    /// Writes the joint state `[mu, dmu/db...]` into `state`; returns mu.
    fn mu_and_sens_at(&self, model: &ResolvedModel, ttilde: f64, state: &mut [f64]) -> f64 {
        if matches!(model.g, CurveRep::Zero) {
            return ttilde;
        }
        let sol = self.joint.as_ref().expect("joint solve required");
        sol.eval_into(ttilde, state);
        state[0]
    }
}

/// Per-subject precomputation: the transform plan over the subject's
/// event times plus censor time, and the gamma rows at the event times.
struct SubjectPlan {
    plan: QuadPlan,
    /// Gamma spline rows at event times (event-major); empty otherwise.
    event_gamma: Vec<f64>,
    /// Gamma values at event times for a known gamma; empty otherwise.
    event_gamma_known: Vec<f64>,
    n_events: usize,
}

impl SubjectPlan {
    fn build(model: &ResolvedModel, subject: &Subject) -> SubjectPlan {
        let mut times = subject.event_times.clone();
        times.push(subject.censor_time);
        let plan = QuadPlan::build(&model.gamma, &times);
        let mut event_gamma = Vec::new();
        let mut event_gamma_known = Vec::new();
        match &model.gamma {
            CurveRep::Spline { basis } => {
                event_gamma.reserve(subject.event_times.len() * basis.dim());
                for &t in &subject.event_times {
                    event_gamma.extend_from_slice(&basis.eval(t));
                }
            }
            CurveRep::Known { curve } => {
                event_gamma_known = subject.event_times.iter().map(|&t| curve.value(t)).collect();
            }
            CurveRep::Zero => {}
        }
        SubjectPlan { plan, event_gamma, event_gamma_known, n_events: subject.event_times.len() }
    }
}

struct TransformResult {
    xb: f64,
    exb: f64,
    dr: Vec<f64>,
    ttilde: Vec<f64>,
}

/// One subject's contribution to the objective and (optionally) the
/// full-coordinate gradient.
pub(crate) struct SubjectTerm {
    pub value: f64,
    pub grad: Option<ThetaGrad>,
}

/// Batched evaluation engine for a dataset under one resolved model.
///
/// Owns the per-subject quadrature plans and the shared-solve cache; all
/// likelihood and score evaluations during fitting go through one of
/// these so that the dense mean solution is recomputed only when the g
/// coefficients change.
pub struct Evaluator<'a> {
    data: &'a Dataset,
    model: &'a ResolvedModel,
    plans: Arc<Vec<SubjectPlan>>,
    cache: OdeCache,
    pub opts: EvalOptions,
}

impl<'a> Evaluator<'a> {
    pub fn new(data: &'a Dataset, model: &'a ResolvedModel) -> Self {
        let plans: Vec<SubjectPlan> = data
            .subjects()
            .par_iter()
            .map(|s| SubjectPlan::build(model, s))
            .collect();
        Evaluator {
            data,
            model,
            plans: Arc::new(plans),
            cache: OdeCache::new(),
            opts: EvalOptions::default(),
        }
    }

    /// Share the precomputed plans but use a fresh solve cache; used by
    /// resampling replicates evaluated in parallel.
    pub fn fork(&self) -> Evaluator<'a> {
        Evaluator {
            data: self.data,
            model: self.model,
            plans: Arc::clone(&self.plans),
            cache: OdeCache::new(),
            opts: self.opts,
        }
    }

    pub fn with_options(mut self, opts: EvalOptions) -> Self {
        self.opts = opts;
        self
    }

    pub fn model(&self) -> &ResolvedModel {
        self.model
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    /// Average log pseudo-likelihood.
    pub fn loglik(&mut self, theta: &ParamVector) -> Result<f64> {
        let terms = self.subject_terms(theta, false)?;
        Ok(terms.iter().map(|t| t.value).sum::<f64>() / self.data.len() as f64)
    }

    /// Average log pseudo-likelihood and its gradient in free coordinates.
    pub fn loglik_and_score(&mut self, theta: &ParamVector) -> Result<(f64, Vec<f64>)> {
        let terms = self.subject_terms(theta, true)?;
        let n = self.data.len() as f64;
        let mut value = 0.0;
        let mut full = ThetaGrad::zeros(self.model);
        for t in &terms {
            value += t.value;
            full.add(t.grad.as_ref().unwrap());
        }
        full.scale(1.0 / n);
        Ok((value / n, self.model.free().grad_to_free(&full)))
    }

    /// Un-averaged per-subject score rows in free coordinates.
    pub fn per_subject_scores(&mut self, theta: &ParamVector) -> Result<Vec<Vec<f64>>> {
        let terms = self.subject_terms(theta, true)?;
        Ok(terms
            .iter()
            .map(|t| self.model.free().grad_to_free(t.grad.as_ref().unwrap()))
            .collect())
    }

    fn transform_stage(
        &self,
        theta: &ParamVector,
        with_dr: bool,
    ) -> Result<(Vec<TransformResult>, f64)> {
        let model = self.model;
        let results: Vec<TransformResult> = self
            .data
            .subjects()
            .par_iter()
            .zip(self.plans.par_iter())
            .map(|(s, plan)| {
                let xb: f64 = s.x.iter().zip(&theta.beta).map(|(x, b)| x * b).sum();
                let exb = xb.exp();
                let mut r = Vec::new();
                let mut dr = Vec::new();
                if with_dr {
                    plan.plan.r_and_dr(&model.gamma, &theta.a, &mut r, &mut dr);
                } else {
                    plan.plan.r_values(&model.gamma, &theta.a, &mut r);
                }
                let ttilde: Vec<f64> = r.iter().map(|v| v * exb).collect();
                TransformResult { xb, exb, dr, ttilde }
            })
            .collect();
        let mut horizon: f64 = 0.0;
        for tr in &results {
            if let Some(&last) = tr.ttilde.last() {
                if !last.is_finite() {
                    return Err(Error::SolverFailure {
                        last_t: 0.0,
                        reason: "non-finite transformed horizon".into(),
                        subject: None,
                    });
                }
                horizon = horizon.max(last);
            }
        }
        Ok((results, horizon))
    }

    pub(crate) fn subject_terms(
        &mut self,
        theta: &ParamVector,
        with_grad: bool,
    ) -> Result<Vec<SubjectTerm>> {
        let (transforms, horizon) = self.transform_stage(theta, with_grad)?;
        self.cache
            .ensure(self.model, &theta.b, horizon, with_grad, &self.opts)?;
        let model = self.model;
        let cache = &self.cache;
        let terms: Vec<SubjectTerm> = self
            .data
            .subjects()
            .par_iter()
            .zip(self.plans.par_iter())
            .zip(transforms.par_iter())
            .map(|((s, plan), tr)| subject_term(model, cache, s, plan, tr, theta, with_grad))
            .collect();
        Ok(terms)
    }

    /// Mean path (and optionally free-coordinate sensitivities) of one
    /// dataset subject at arbitrary nondecreasing times.
    pub fn mean_path(
        &mut self,
        subject_index: usize,
        theta: &ParamVector,
        times: &[f64],
        with_sens: bool,
    ) -> Result<MeanPath> {
        let s = &self.data.subjects()[subject_index];
        if times.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Domain("times must be nondecreasing".into()));
        }
        if times.iter().any(|&t| t < 0.0 || !t.is_finite()) {
            return Err(Error::Domain("times must be finite and nonnegative".into()));
        }
        let model = self.model;
        let plan = QuadPlan::build(&model.gamma, times);
        let xb: f64 = s.x.iter().zip(&theta.beta).map(|(x, b)| x * b).sum();
        let exb = xb.exp();
        let mut r = Vec::new();
        let mut dr = Vec::new();
        if with_sens {
            plan.r_and_dr(&model.gamma, &theta.a, &mut r, &mut dr);
        } else {
            plan.r_values(&model.gamma, &theta.a, &mut r);
        }
        let ttilde: Vec<f64> = r.iter().map(|v| v * exb).collect();
        let horizon = ttilde.iter().cloned().fold(0.0, f64::max);
        if !horizon.is_finite() {
            return Err(Error::SolverFailure {
                last_t: 0.0,
                reason: "non-finite transformed horizon".into(),
                subject: Some(s.id.clone()),
            });
        }
        self.cache
            .ensure(model, &theta.b, horizon, with_sens, &self.opts)
            .map_err(|e| e.with_subject(&s.id))?;
        let q1 = model.gamma.coef_len();
        let q2 = model.g.coef_len();
        let mut mu = Vec::with_capacity(times.len());
        let mut sens = if with_sens { Some(Vec::with_capacity(times.len())) } else { None };
        let mut state = vec![0.0; 1 + q2];
        for (k, &tt) in ttilde.iter().enumerate() {
            if with_sens {
                let m = if q2 > 0 {
                    self.cache.mu_and_sens_at(model, tt, &mut state)
                } else {
                    self.cache.mu_at(model, tt)
                };
                mu.push(m);
                let ftil = model.g_value(&theta.b, m).exp();
                let mut g = ThetaGrad::zeros(model);
                for (j, &x) in s.x.iter().enumerate() {
                    g.beta[j] = ftil * tt * x;
                }
                for j in 0..q1 {
                    g.a[j] = ftil * exb * dr[k * q1 + j];
                }
                if q2 > 0 {
                    g.b.copy_from_slice(&state[1..]);
                }
                sens.as_mut().unwrap().push(model.free().grad_to_free(&g));
            } else {
                mu.push(self.cache.mu_at(model, tt));
            }
        }
        Ok(MeanPath { times: times.to_vec(), mu, sens })
    }
}

fn subject_term(
    model: &ResolvedModel,
    cache: &OdeCache,
    s: &Subject,
    plan: &SubjectPlan,
    tr: &TransformResult,
    theta: &ParamVector,
    with_grad: bool,
) -> SubjectTerm {
    let q1 = model.gamma.coef_len();
    let q2 = model.g.coef_len();
    let n_events = plan.n_events;
    let mut value = 0.0;
    let mut grad = if with_grad { Some(ThetaGrad::zeros(model)) } else { None };
    let mut state = vec![0.0; 1 + q2];
    let mut b_row = vec![0.0; q2];
    let mut db_row = vec![0.0; q2];
    let need_joint = with_grad && q2 > 0;

    for j in 0..n_events {
        let tt = tr.ttilde[j];
        let mu = if need_joint {
            cache.mu_and_sens_at(model, tt, &mut state)
        } else {
            cache.mu_at(model, tt)
        };
        let gamma_t = match &model.gamma {
            CurveRep::Zero => 0.0,
            CurveRep::Spline { .. } => {
                let row = &plan.event_gamma[j * q1..(j + 1) * q1];
                row.iter().zip(&theta.a).map(|(x, c)| x * c).sum()
            }
            CurveRep::Known { .. } => plan.event_gamma_known[j],
        };
        let (g_mu, gp_mu) = match &model.g {
            CurveRep::Zero => (0.0, 0.0),
            CurveRep::Spline { basis } => {
                basis.eval_into(mu, &mut b_row);
                let v: f64 = b_row.iter().zip(&theta.b).map(|(x, c)| x * c).sum();
                let gp = if with_grad {
                    basis.eval_deriv_into(mu, &mut db_row);
                    db_row.iter().zip(&theta.b).map(|(x, c)| x * c).sum()
                } else {
                    0.0
                };
                (v, gp)
            }
            CurveRep::Known { curve } => {
                (curve.value(mu), if with_grad { curve.deriv(mu) } else { 0.0 })
            }
        };
        value += tr.xb + gamma_t + g_mu;
        if let Some(g) = grad.as_mut() {
            let ftil = g_mu.exp();
            let chain = gp_mu * ftil;
            for (k, &x) in s.x.iter().enumerate() {
                g.beta[k] += x + chain * tt * x;
            }
            if q1 > 0 {
                let row = &plan.event_gamma[j * q1..(j + 1) * q1];
                let drow = &tr.dr[j * q1..(j + 1) * q1];
                for m in 0..q1 {
                    g.a[m] += row[m] + chain * tr.exb * drow[m];
                }
            }
            if q2 > 0 {
                for m in 0..q2 {
                    g.b[m] += b_row[m] + gp_mu * state[1 + m];
                }
            }
        }
    }

    // Censor term.
    let kc = plan.plan.times.len() - 1;
    let ttc = tr.ttilde[kc];
    let mu_c = if need_joint {
        cache.mu_and_sens_at(model, ttc, &mut state)
    } else {
        cache.mu_at(model, ttc)
    };
    value -= mu_c;
    if let Some(g) = grad.as_mut() {
        let ftil_c = model.g_value(&theta.b, mu_c).exp();
        for (k, &x) in s.x.iter().enumerate() {
            g.beta[k] -= ftil_c * ttc * x;
        }
        if q1 > 0 {
            let drow = &tr.dr[kc * q1..(kc + 1) * q1];
            for m in 0..q1 {
                g.a[m] -= ftil_c * tr.exb * drow[m];
            }
        }
        for m in 0..q2 {
            g.b[m] -= state[1 + m];
        }
    }
    SubjectTerm { value, grad }
}

/// Mean of one subject at the given times under `theta`.
///
/// Builds a throwaway single-subject evaluation; batched fitting uses
/// [`Evaluator`] so the shared solve is reused across subjects.
pub fn mean_at(
    subject: &Subject,
    theta: &ParamVector,
    model: &ResolvedModel,
    times: &[f64],
) -> Result<MeanPath> {
    let data = Dataset::new(vec![subject.clone()])?;
    let mut ev = Evaluator::new(&data, model);
    ev.mean_path(0, theta, times, false)
}

/// Mean and free-parameter sensitivities of one subject at the given times.
pub fn sensitivities_at(
    subject: &Subject,
    theta: &ParamVector,
    model: &ResolvedModel,
    times: &[f64],
) -> Result<MeanPath> {
    let data = Dataset::new(vec![subject.clone()])?;
    let mut ev = Evaluator::new(&data, model);
    ev.mean_path(0, theta, times, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LogCurve, Variant};
    use approx::assert_abs_diff_eq;

    fn subject(x: Vec<f64>, events: Vec<f64>, c: f64) -> Subject {
        Subject::new("s", x, events, c).unwrap()
    }

    fn cox_model_with_spline(order: usize, interior: Vec<f64>, upper: f64) -> ResolvedModel {
        let basis = crate::spline::SplineBasis::new(order, interior, 0.0, upper).unwrap();
        ResolvedModel::new(
            Variant::Cox,
            CurveRep::Spline { basis },
            CurveRep::Zero,
            1,
            None,
            false,
        )
        .unwrap()
    }

    #[test]
    fn gl10_integrates_high_degree_polynomials_exactly() {
        // Degree 19 on [0, 1]: integral of t^19 is 1/20.
        let mut acc = 0.0;
        gl10(0.0, 1.0, |x, w| acc += w * x.powi(19));
        assert_abs_diff_eq!(acc, 0.05, epsilon = 1e-15);
        let mut total_w = 0.0;
        gl10(-1.0, 1.0, |_, w| total_w += w);
        assert_abs_diff_eq!(total_w, 2.0, epsilon = 1e-14);
    }

    #[test]
    fn transformed_time_trivial_cases() {
        let m = cox_model_with_spline(4, vec![1.0], 2.0);
        let s = subject(vec![1.0], vec![], 2.0);
        // a = 0 so the integrand is 1: ttilde = exp(xb) * t.
        let a = vec![0.0; m.gamma.coef_len()];
        let tt = transformed_time(&s, &[2f64.ln()], &a, &m.gamma, 1.5).unwrap();
        assert_abs_diff_eq!(tt, 3.0, epsilon = 1e-12);
        let tt = transformed_time(&s, &[0.0], &a, &m.gamma, 0.0).unwrap();
        assert_eq!(tt, 0.0);
        assert!(transformed_time(&s, &[0.0], &a, &m.gamma, -0.5).is_err());
    }

    /// Adaptive Simpson oracle for the transform integral.
    fn simpson_adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
            (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
        }
        fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let left = simpson(f, a, m);
            let right = simpson(f, m, b);
            if depth > 40 || (left + right - whole).abs() < 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                rec(f, a, m, left, tol / 2.0, depth + 1)
                    + rec(f, m, b, right, tol / 2.0, depth + 1)
            }
        }
        let whole = simpson(f, a, b);
        rec(f, a, b, whole, tol, 0)
    }

    #[test]
    fn quadrature_matches_adaptive_simpson() {
        let m = cox_model_with_spline(4, vec![0.7, 1.4, 2.3], 3.0);
        let q1 = m.gamma.coef_len();
        let s = subject(vec![0.0], vec![], 3.0);
        let mut seed = 42u64;
        let mut next = move || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (seed >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..20 {
            let a: Vec<f64> = (0..q1).map(|_| 2.0 * next() - 1.0).collect();
            let t = 0.3 + 2.5 * next();
            let got = transformed_time(&s, &[0.0], &a, &m.gamma, t).unwrap();
            let gamma = m.gamma.clone();
            let a2 = a.clone();
            let f = move |s: f64| -> f64 {
                match &gamma {
                    CurveRep::Spline { basis } => {
                        let row = basis.eval(s);
                        let v: f64 = row.iter().zip(&a2).map(|(x, c)| x * c).sum();
                        v.exp()
                    }
                    _ => unreachable!(),
                }
            };
            let want = simpson_adaptive(&f, 0.0, t, 1e-13);
            assert!(
                (got - want).abs() <= 1e-10 * want.abs().max(1.0),
                "t {t}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn solve_shared_unit_rate() {
        // b = 0 keeps g identically zero on the spline span, so the mean
        // is the identity map up to solver tolerance.
        let basis = crate::spline::SplineBasis::new(4, vec![1.0, 2.0], 0.0, 4.0).unwrap();
        let m = ResolvedModel::new(
            Variant::Am,
            CurveRep::Zero,
            CurveRep::Spline { basis },
            1,
            None,
            false,
        )
        .unwrap();
        let b = vec![0.0; m.g.coef_len()];
        let sh = solve_shared(&m, &b, 3.5, &EvalOptions::default()).unwrap();
        assert!((sh.mu(3.0) - 3.0).abs() < 1e-8);
        // Monotone along a dense grid.
        let mut prev = -1.0;
        for i in 0..=300 {
            let t = 3.5 * i as f64 / 300.0;
            let v = sh.mu(t);
            assert!(v >= prev - 1e-12);
            prev = v;
        }
    }

    #[test]
    fn solve_shared_known_hook_closed_form() {
        // g(u) = log(2/(u+1)) gives mu(t) = -1 + sqrt(1 + 4 t).
        let g = LogCurve::custom(
            "log-2-over-1p",
            |u: f64| (2.0 / (u + 1.0)).ln(),
            |u: f64| -1.0 / (u + 1.0),
        );
        let m = ResolvedModel::new(
            Variant::Lt,
            CurveRep::Zero,
            CurveRep::Known { curve: g },
            1,
            None,
            false,
        )
        .unwrap();
        let sh = solve_shared(&m, &[], 3.0, &EvalOptions::default()).unwrap();
        assert_abs_diff_eq!(sh.mu(1.0), 1.236_068_0, epsilon = 1e-7);
        for i in 0..=30 {
            let t = 3.0 * i as f64 / 30.0;
            let exact = -1.0 + (1.0 + 4.0 * t).sqrt();
            assert!((sh.mu(t) - exact).abs() < 1e-8);
        }
    }

    #[test]
    fn mean_at_cox_hook_analytic() {
        // gamma = log(t^2 + 1) known exactly, g = 0, xb = 0:
        // mu(1) = int_0^1 (s^2 + 1) ds = 4/3.
        let gamma = LogCurve::custom(
            "log-quadratic",
            |t: f64| (t * t + 1.0).ln(),
            |t: f64| 2.0 * t / (t * t + 1.0),
        );
        let m = ResolvedModel::new(
            Variant::Cox,
            CurveRep::Known { curve: gamma },
            CurveRep::Zero,
            1,
            None,
            false,
        )
        .unwrap();
        let s = subject(vec![0.3], vec![], 2.0);
        let theta = ParamVector { beta: vec![0.0], a: vec![], b: vec![] };
        let path = mean_at(&s, &theta, &m, &[0.0, 1.0]).unwrap();
        assert_eq!(path.mu[0], 0.0);
        assert_abs_diff_eq!(path.mu[1], 4.0 / 3.0, epsilon = 1e-10);
    }

    #[test]
    fn sensitivities_cox_proportional_identity() {
        // Cox: mu = exp(xb) R(t), so dmu/dbeta_k = mu * x_k.
        let m = cox_model_with_spline(4, vec![1.0], 2.0);
        let q1 = m.gamma.coef_len();
        let s = subject(vec![0.7], vec![], 2.0);
        let theta = ParamVector {
            beta: vec![0.4],
            a: (0..q1).map(|i| 0.1 * i as f64 - 0.2).collect(),
            b: vec![],
        };
        let path = sensitivities_at(&s, &theta, &m, &[0.0, 0.5, 1.7]).unwrap();
        let sens = path.sens.as_ref().unwrap();
        assert_eq!(sens[0][0], 0.0); // G(0) = 0
        for (k, &t) in path.times.iter().enumerate() {
            let _ = t;
            assert_abs_diff_eq!(sens[k][0], path.mu[k] * 0.7, epsilon = 1e-10);
        }
    }

    #[test]
    fn sensitivities_match_finite_differences() {
        // AM model with a g spline: the b-sensitivities go through the
        // auxiliary ODE.
        let basis = crate::spline::SplineBasis::new(3, vec![1.5], 0.0, 3.0).unwrap();
        let m = ResolvedModel::new(
            Variant::Am,
            CurveRep::Zero,
            CurveRep::Spline { basis },
            2,
            None,
            false,
        )
        .unwrap();
        let q2 = m.g.coef_len();
        let s = subject(vec![0.3, -0.2], vec![], 2.0);
        let theta = ParamVector {
            beta: vec![0.25, -0.4],
            a: vec![],
            b: (0..q2).map(|i| 0.15 - 0.07 * i as f64).collect(),
        };
        let times = [0.6, 1.3, 2.0];
        let tight = EvalOptions { ode: OdeOptions { rtol: 1e-11, atol: 1e-13 } };
        let data = Dataset::new(vec![s.clone()]).unwrap();
        let mut ev = Evaluator::new(&data, &m).with_options(tight);
        let path = ev.mean_path(0, &theta, &times, true).unwrap();
        let sens = path.sens.as_ref().unwrap();
        let free = m.free();
        let x0 = free.pack(&theta);
        let h = 1e-6;
        for (k, &t) in times.iter().enumerate() {
            for i in 0..x0.len() {
                let mut xp = x0.clone();
                let mut xm = x0.clone();
                xp[i] += h;
                xm[i] -= h;
                let mp = mean_at(&s, &free.unpack(&xp), &m, &[t]).unwrap().mu[0];
                let mm = mean_at(&s, &free.unpack(&xm), &m, &[t]).unwrap().mu[0];
                let fd = (mp - mm) / (2.0 * h);
                assert!(
                    (fd - sens[k][i]).abs() < 2e-5 * fd.abs().max(1.0),
                    "time {t} coord {i}: fd {fd} vs {}",
                    sens[k][i]
                );
            }
        }
    }

    #[test]
    fn covariate_shift_equals_time_scale() {
        // Replacing xb by xb + d scales ttilde by exp(d); mean values at
        // matched transformed times agree.
        let basis = crate::spline::SplineBasis::new(3, vec![2.0], 0.0, 6.0).unwrap();
        let m = ResolvedModel::new(
            Variant::Am,
            CurveRep::Zero,
            CurveRep::Spline { basis },
            1,
            None,
            false,
        )
        .unwrap();
        let q2 = m.g.coef_len();
        let b: Vec<f64> = (0..q2).map(|i| 0.1 - 0.05 * i as f64).collect();
        let s1 = subject(vec![1.0], vec![], 3.0);
        let theta0 = ParamVector { beta: vec![0.0], a: vec![], b: b.clone() };
        let theta1 = ParamVector { beta: vec![0.5], a: vec![], b };
        let d: f64 = 0.5;
        let path0 = mean_at(&s1, &theta0, &m, &[1.0 * d.exp()]).unwrap();
        let path1 = mean_at(&s1, &theta1, &m, &[1.0]).unwrap();
        assert_abs_diff_eq!(path0.mu[0], path1.mu[0], epsilon = 1e-8);
    }
}
