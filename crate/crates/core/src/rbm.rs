//! Resource-based stochastic model.
//!
//! Activity durations derive from per-resource work quantities and stochastic
//! efficiency multipliers: a resource with efficiency R finishes its share of
//! work q at rate R * p_s, so t = q / (R * p_s) and cost = c * t. Per-resource
//! times compose into an activity duration through a parallelism parameter
//! lambda (lambda = 1 serial sum, lambda = 0 parallel max). Crashing trades
//! duration for convex extra cost, and the frontier solver minimizes total
//! crash cost under a makespan cap.

use crate::graph::{GraphError, ProjectGraph};
use crate::rng::StreamRng;
use rand_distr::{Beta, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Gaussian efficiency samples below this value are truncated up to it so the
/// division in the duration formula stays defined. Truncations are counted.
pub const EFFICIENCY_TRUNCATION: f64 = 1e-3;

/// Crash floor: durations may not be crashed below this fraction of the
/// normal duration (the exponential tradeoff diverges as T -> 0).
pub const CRASH_FLOOR_FRACTION: f64 = 0.2;

#[derive(Debug, Error)]
pub enum RbmError {
    #[error("non-positive efficiency at resource position {0}")]
    NonPositiveEfficiency(usize),
    #[error("activity has no assigned resources")]
    EmptyResourceSet,
    #[error("parallelism must lie in [0, 1], got {0}")]
    InvalidParallelism(f64),
    #[error("non-positive posterior mean at resource position {0}")]
    NonPositiveMean(usize),
    #[error("target duration {duration} exceeds normal duration {normal}")]
    DurationAboveNormal { duration: f64, normal: f64 },
    #[error("target duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("makespan cap {t_max} infeasible; minimum achievable makespan is {min_makespan}")]
    Infeasible { t_max: f64, min_makespan: f64 },
    #[error("missing crash parameters for activity {0}")]
    MissingCrashParams(String),
    #[error("invalid efficiency distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid work spec: {0}")]
    InvalidWorkSpec(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistributionFamily {
    Gaussian,
    LogNormal,
    Beta,
}

/// Per-activity efficiency distribution over its assigned resources.
/// For the log-normal family the mean/variance parameters live in log space.
/// Covariance is diagonal plus an optional uniform pairwise correlation
/// (gaussian and log-normal only).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EfficiencyDistribution {
    pub family: DistributionFamily,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    #[serde(default)]
    pub correlation: f64,
    /// Affine rescale bounds for the beta family; defaults to [0.5, 1.5].
    #[serde(default)]
    pub bounds: Option<(f64, f64)>,
}

impl EfficiencyDistribution {
    pub fn validate(&self) -> Result<(), RbmError> {
        if self.means.len() != self.variances.len() {
            return Err(RbmError::InvalidDistribution(
                "means and variances must have equal length".into(),
            ));
        }
        if self.variances.iter().any(|&v| v <= 0.0 || !v.is_finite()) {
            return Err(RbmError::InvalidDistribution(
                "variance entries must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.correlation) {
            return Err(RbmError::InvalidDistribution(format!(
                "pairwise correlation must lie in [0, 1), got {}",
                self.correlation
            )));
        }
        match self.family {
            DistributionFamily::Beta => {
                if self.correlation != 0.0 {
                    return Err(RbmError::InvalidDistribution(
                        "beta family supports diagonal covariance only".into(),
                    ));
                }
                let (a, b) = self.beta_bounds();
                if a >= b {
                    return Err(RbmError::InvalidDistribution(format!(
                        "beta bounds must satisfy a < b, got [{a}, {b}]"
                    )));
                }
                for (k, (&m, &v)) in self.means.iter().zip(&self.variances).enumerate() {
                    beta_shape(m, v, a, b).map_err(|e| {
                        RbmError::InvalidDistribution(format!("resource {k}: {e}"))
                    })?;
                }
            }
            DistributionFamily::Gaussian => {
                if self.means.iter().any(|&m| m <= 0.0) {
                    return Err(RbmError::InvalidDistribution(
                        "gaussian efficiency means must be positive".into(),
                    ));
                }
            }
            DistributionFamily::LogNormal => {}
        }
        Ok(())
    }

    fn beta_bounds(&self) -> (f64, f64) {
        self.bounds.unwrap_or((0.5, 1.5))
    }

    /// Mean efficiency per resource, in efficiency space.
    pub fn mean_efficiency(&self) -> Vec<f64> {
        match self.family {
            DistributionFamily::Gaussian => self.means.clone(),
            DistributionFamily::LogNormal => self
                .means
                .iter()
                .zip(&self.variances)
                .map(|(&m, &v)| (m + v / 2.0).exp())
                .collect(),
            DistributionFamily::Beta => self.means.clone(),
        }
    }

    /// Draw one efficiency vector. Returns the samples and the number of
    /// gaussian truncations applied.
    pub fn sample(&self, rng: &mut StreamRng) -> (Vec<f64>, u64) {
        let p = self.means.len();
        let mut out = Vec::with_capacity(p);
        let mut truncated = 0u64;
        match self.family {
            DistributionFamily::Gaussian | DistributionFamily::LogNormal => {
                let rho = self.correlation;
                let common: f64 = if rho > 0.0 {
                    StandardNormal.sample(rng)
                } else {
                    0.0
                };
                for k in 0..p {
                    let own: f64 = StandardNormal.sample(rng);
                    let z = rho.sqrt() * common + (1.0 - rho).sqrt() * own;
                    let x = self.means[k] + self.variances[k].sqrt() * z;
                    match self.family {
                        DistributionFamily::Gaussian => {
                            if x < EFFICIENCY_TRUNCATION {
                                truncated += 1;
                                out.push(EFFICIENCY_TRUNCATION);
                            } else {
                                out.push(x);
                            }
                        }
                        DistributionFamily::LogNormal => out.push(x.exp()),
                        DistributionFamily::Beta => unreachable!(),
                    }
                }
            }
            DistributionFamily::Beta => {
                let (a, b) = self.beta_bounds();
                for k in 0..p {
                    let (alpha, beta) =
                        beta_shape(self.means[k], self.variances[k], a, b).expect("validated");
                    let dist = Beta::new(alpha, beta).expect("validated shape");
                    let u: f64 = dist.sample(rng);
                    out.push(a + (b - a) * u);
                }
            }
        }
        (out, truncated)
    }
}

/// Convert a mean/variance pair on [a, b] into standard beta shape params.
fn beta_shape(mean: f64, var: f64, a: f64, b: f64) -> Result<(f64, f64), String> {
    let width = b - a;
    let m = (mean - a) / width;
    let v = var / (width * width);
    if !(0.0 < m && m < 1.0) {
        return Err(format!("mean {mean} outside bounds ({a}, {b})"));
    }
    let cap = m * (1.0 - m);
    if v >= cap {
        return Err(format!("variance {var} too large for bounds [{a}, {b}]"));
    }
    let nu = cap / v - 1.0;
    Ok((m * nu, (1.0 - m) * nu))
}

/// Exponential time-cost tradeoff parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrashParams {
    /// Normal (uncrashed) duration T_N.
    pub normal_duration: f64,
    /// Minimum direct cost at T = T_N.
    pub min_cost: f64,
    /// Curvature scale a > 0.
    pub a: f64,
    /// Curvature rate b > 0.
    pub b: f64,
}

/// One resource's share of an activity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceUse {
    /// Work quantity q (work units).
    pub work: f64,
    /// Standard productivity p_s (work units per time).
    pub productivity: f64,
    /// Cost rate c (currency per time).
    pub cost_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityWorkSpec {
    pub uses: Vec<ResourceUse>,
    /// Parallelism lambda in [0, 1].
    pub parallelism: f64,
    #[serde(default)]
    pub crash: Option<CrashParams>,
}

impl ActivityWorkSpec {
    pub fn validate(&self) -> Result<(), RbmError> {
        if !(0.0..=1.0).contains(&self.parallelism) {
            return Err(RbmError::InvalidParallelism(self.parallelism));
        }
        for (k, u) in self.uses.iter().enumerate() {
            if u.work <= 0.0 || u.productivity <= 0.0 || u.cost_rate <= 0.0 {
                return Err(RbmError::InvalidWorkSpec(format!(
                    "resource position {k}: work, productivity and cost rate must be positive"
                )));
            }
        }
        if let Some(c) = &self.crash {
            if c.normal_duration <= 0.0 || c.a <= 0.0 || c.b <= 0.0 {
                return Err(RbmError::InvalidWorkSpec(
                    "crash parameters must be positive".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Per-resource (time, cost) pairs: t = q / (R * p_s), C = c * t.
pub fn resource_time_cost(
    spec: &ActivityWorkSpec,
    efficiencies: &[f64],
) -> Result<Vec<(f64, f64)>, RbmError> {
    if efficiencies.len() != spec.uses.len() {
        return Err(RbmError::InvalidWorkSpec(format!(
            "expected {} efficiencies, got {}",
            spec.uses.len(),
            efficiencies.len()
        )));
    }
    let mut out = Vec::with_capacity(spec.uses.len());
    for (k, (u, &r)) in spec.uses.iter().zip(efficiencies).enumerate() {
        if r <= 0.0 || !r.is_finite() {
            return Err(RbmError::NonPositiveEfficiency(k));
        }
        let t = u.work / (r * u.productivity);
        out.push((t, u.cost_rate * t));
    }
    Ok(out)
}

/// Convex serial/parallel combination: T = lambda * sum(t) + (1 - lambda) * max(t).
pub fn aggregate_duration(times: &[f64], lambda: f64) -> Result<f64, RbmError> {
    if times.is_empty() {
        return Err(RbmError::EmptyResourceSet);
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(RbmError::InvalidParallelism(lambda));
    }
    let sum: f64 = times.iter().sum();
    let max = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(lambda * sum + (1.0 - lambda) * max)
}

/// Total activity cost: additive over resources regardless of parallelism.
pub fn activity_cost(spec: &ActivityWorkSpec, efficiencies: &[f64]) -> Result<f64, RbmError> {
    Ok(resource_time_cost(spec, efficiencies)?
        .iter()
        .map(|&(_, c)| c)
        .sum())
}

/// Closed-form E[1/R] for R ~ LogNormal(mu, var) with log-space parameters.
pub fn lognormal_mean_inverse(mu: f64, var: f64) -> f64 {
    (-mu + var / 2.0).exp()
}

/// Second-order Taylor expectation of the serial duration:
/// sum_j q / (p_s * mu) * (1 + var / mu^2).
pub fn expected_duration_taylor(
    spec: &ActivityWorkSpec,
    means: &[f64],
    variances: &[f64],
) -> Result<f64, RbmError> {
    if means.len() != spec.uses.len() || variances.len() != spec.uses.len() {
        return Err(RbmError::InvalidWorkSpec(
            "posterior moments must match the resource list".into(),
        ));
    }
    let mut total = 0.0;
    for (k, u) in spec.uses.iter().enumerate() {
        let mu = means[k];
        if mu <= 0.0 {
            return Err(RbmError::NonPositiveMean(k));
        }
        total += u.work / (u.productivity * mu) * (1.0 + variances[k] / (mu * mu));
    }
    Ok(total)
}

/// Exact serial expectation under log-normal efficiencies (log-space params).
pub fn expected_duration_lognormal(
    spec: &ActivityWorkSpec,
    log_means: &[f64],
    log_vars: &[f64],
) -> Result<f64, RbmError> {
    if log_means.len() != spec.uses.len() || log_vars.len() != spec.uses.len() {
        return Err(RbmError::InvalidWorkSpec(
            "posterior moments must match the resource list".into(),
        ));
    }
    Ok(spec
        .uses
        .iter()
        .zip(log_means.iter().zip(log_vars))
        .map(|(u, (&m, &v))| u.work / u.productivity * lognormal_mean_inverse(m, v))
        .sum())
}

/// Crash cost at target duration T: C_min + a * (e^{b (T_N - T)} - 1).
/// Strictly decreasing and convex on (0, T_N].
pub fn crash_cost(duration: f64, params: &CrashParams) -> Result<f64, RbmError> {
    if duration <= 0.0 {
        return Err(RbmError::NonPositiveDuration(duration));
    }
    if duration > params.normal_duration {
        return Err(RbmError::DurationAboveNormal {
            duration,
            normal: params.normal_duration,
        });
    }
    Ok(params.min_cost + params.a * ((params.b * (params.normal_duration - duration)).exp() - 1.0))
}

fn crash_cost_derivative(duration: f64, params: &CrashParams) -> f64 {
    -params.a * params.b * (params.b * (params.normal_duration - duration)).exp()
}

/// CPM forward pass over raw duration slices; returns earliest starts,
/// the makespan, and the argmax predecessor per node (for subgradients).
fn cpm_forward(
    graph: &ProjectGraph,
    order: &[usize],
    durations: &[f64],
) -> (Vec<f64>, f64, Vec<Option<usize>>) {
    let n = graph.n_activities();
    let mut es = vec![0.0f64; n];
    let mut finish = vec![0.0f64; n];
    let mut argmax = vec![None; n];
    for &i in order {
        let mut best = 0.0f64;
        let mut who = None;
        for &j in graph.preds(i) {
            if finish[j] > best {
                best = finish[j];
                who = Some(j);
            }
        }
        es[i] = best;
        argmax[i] = who;
        finish[i] = best + durations[i];
    }
    let makespan = finish.iter().copied().fold(0.0f64, f64::max);
    (es, makespan, argmax)
}

/// Log-sum-exp relaxation of the makespan over node finish times, plus its
/// gradient with respect to each duration (softmax weights pushed back along
/// the argmax predecessor chains).
fn lse_makespan_grad(
    graph: &ProjectGraph,
    order: &[usize],
    durations: &[f64],
    tau: f64,
) -> (f64, Vec<f64>) {
    let n = graph.n_activities();
    let (es, _, argmax) = cpm_forward(graph, order, durations);
    let finish: Vec<f64> = (0..n).map(|i| es[i] + durations[i]).collect();
    let fmax = finish.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for &f in &finish {
        z += (tau * (f - fmax)).exp();
    }
    let lse = fmax + z.ln() / tau;
    let mut acc: Vec<f64> = finish
        .iter()
        .map(|&f| (tau * (f - fmax)).exp() / z)
        .collect();
    for &i in order.iter().rev() {
        if let Some(j) = argmax[i] {
            acc[j] += acc[i];
        }
    }
    (lse, acc)
}

/// Durations from uniformly scaling normal durations down to meet the cap
/// (clamped at the crash floor). The baseline the solver must beat.
pub fn uniform_scaling_durations(
    graph: &ProjectGraph,
    crash: &BTreeMap<String, CrashParams>,
    t_max: f64,
) -> Result<BTreeMap<String, f64>, RbmError> {
    let ctx = FrontierContext::new(graph, crash)?;
    ctx.check_feasible(t_max)?;
    let durations = ctx.scale_feasible(t_max);
    Ok(ctx.to_map(&durations))
}

/// Total crash cost of a duration assignment.
pub fn frontier_cost(
    crash: &BTreeMap<String, CrashParams>,
    durations: &BTreeMap<String, f64>,
) -> Result<f64, RbmError> {
    let mut total = 0.0;
    for (id, &t) in durations {
        let p = crash
            .get(id)
            .ok_or_else(|| RbmError::MissingCrashParams(id.clone()))?;
        total += crash_cost(t, p)?;
    }
    Ok(total)
}

struct FrontierContext<'a> {
    graph: &'a ProjectGraph,
    order: Vec<usize>,
    normal: Vec<f64>,
    floor: Vec<f64>,
    params: Vec<CrashParams>,
}

impl<'a> FrontierContext<'a> {
    fn new(
        graph: &'a ProjectGraph,
        crash: &BTreeMap<String, CrashParams>,
    ) -> Result<Self, RbmError> {
        let mut normal = Vec::new();
        let mut floor = Vec::new();
        let mut params = Vec::new();
        for id in graph.activity_ids() {
            let p = crash
                .get(id)
                .ok_or_else(|| RbmError::MissingCrashParams(id.clone()))?;
            if p.normal_duration <= 0.0 || p.a <= 0.0 || p.b <= 0.0 {
                return Err(RbmError::InvalidWorkSpec(format!(
                    "crash parameters for {id} must be positive"
                )));
            }
            normal.push(p.normal_duration);
            floor.push(CRASH_FLOOR_FRACTION * p.normal_duration);
            params.push(*p);
        }
        let order = graph.topo_order()?;
        Ok(FrontierContext {
            graph,
            order,
            normal,
            floor,
            params,
        })
    }

    fn makespan(&self, durations: &[f64]) -> f64 {
        cpm_forward(self.graph, &self.order, durations).1
    }

    fn total_cost(&self, durations: &[f64]) -> f64 {
        durations
            .iter()
            .zip(&self.params)
            .map(|(&t, p)| crash_cost(t, p).expect("duration within bounds"))
            .sum()
    }

    fn check_feasible(&self, t_max: f64) -> Result<(), RbmError> {
        let min_makespan = self.makespan(&self.floor);
        if min_makespan > t_max * (1.0 + 1e-12) {
            return Err(RbmError::Infeasible { t_max, min_makespan });
        }
        Ok(())
    }

    /// Largest uniform interpolation between floor and normal durations that
    /// meets the cap. Monotone in the interpolation parameter.
    fn scale_feasible(&self, t_max: f64) -> Vec<f64> {
        let at = |s: f64| -> Vec<f64> {
            self.floor
                .iter()
                .zip(&self.normal)
                .map(|(&lo, &hi)| lo + s * (hi - lo))
                .collect()
        };
        if self.makespan(&self.normal) <= t_max {
            return self.normal.clone();
        }
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.makespan(&at(mid)) <= t_max {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        at(lo)
    }

    /// Projected gradient descent on the penalized objective.
    fn descend(&self, start: Vec<f64>, t_max: f64, tau: f64) -> Vec<f64> {
        let mut t = start;
        let mut penalty = 1.0f64;
        let scale: f64 = self.normal.iter().cloned().fold(0.0, f64::max).max(1e-9);
        let objective = |t: &[f64], pen: f64| -> f64 {
            let (lse, _) = lse_makespan_grad(self.graph, &self.order, t, tau);
            let viol = (lse - t_max).max(0.0);
            self.total_cost(t) + pen * viol * viol
        };
        let mut step = 0.05 * scale;
        for iter in 0..400 {
            let (lse, ms_grad) = lse_makespan_grad(self.graph, &self.order, &t, tau);
            let viol = (lse - t_max).max(0.0);
            let mut grad: Vec<f64> = (0..t.len())
                .map(|i| {
                    crash_cost_derivative(t[i], &self.params[i])
                        + 2.0 * penalty * viol * ms_grad[i]
                })
                .collect();
            let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            if gmax < 1e-14 {
                break;
            }
            for g in &mut grad {
                *g /= gmax;
            }
            let before = objective(&t, penalty);
            let mut eta = step;
            let mut accepted = false;
            for _ in 0..25 {
                let cand: Vec<f64> = (0..t.len())
                    .map(|i| (t[i] - eta * grad[i]).clamp(self.floor[i], self.normal[i]))
                    .collect();
                if objective(&cand, penalty) < before {
                    t = cand;
                    step = eta * 1.5;
                    accepted = true;
                    break;
                }
                eta *= 0.5;
            }
            if !accepted {
                step *= 0.5;
            }
            if iter % 40 == 39 {
                let ms = self.makespan(&t);
                if ms > t_max * (1.0 + 1e-9) {
                    penalty = (penalty * 10.0).min(1e12);
                }
            }
        }
        t
    }

    /// Repair any residual violation by interpolating toward the floor, then
    /// un-crash activities one at a time (ascending id) by bisection while
    /// the cap holds. Monotonically lowers cost and preserves feasibility.
    fn polish(&self, mut t: Vec<f64>, t_max: f64) -> Vec<f64> {
        if self.makespan(&t) > t_max {
            let base = t.clone();
            let at = |s: f64| -> Vec<f64> {
                base.iter()
                    .zip(&self.floor)
                    .map(|(&v, &lo)| lo + s * (v - lo))
                    .collect()
            };
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if self.makespan(&at(mid)) <= t_max {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            t = at(lo);
        }
        let mut by_id: Vec<usize> = (0..t.len()).collect();
        by_id.sort_by(|&a, &b| self.graph.activity_ids()[a].cmp(&self.graph.activity_ids()[b]));
        for _sweep in 0..4 {
            let mut changed = false;
            for &i in &by_id {
                if t[i] >= self.normal[i] {
                    continue;
                }
                let mut probe = t.clone();
                probe[i] = self.normal[i];
                if self.makespan(&probe) <= t_max {
                    t[i] = self.normal[i];
                    changed = true;
                    continue;
                }
                let (mut lo, mut hi) = (t[i], self.normal[i]);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    probe[i] = mid;
                    if self.makespan(&probe) <= t_max {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                if lo > t[i] {
                    t[i] = lo;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        t
    }

    fn to_map(&self, durations: &[f64]) -> BTreeMap<String, f64> {
        self.graph
            .activity_ids()
            .iter()
            .zip(durations)
            .map(|(id, &t)| (id.clone(), t))
            .collect()
    }
}

/// Minimize total crash cost subject to makespan <= t_max.
///
/// Projected gradient descent on the duration vector with a log-sum-exp
/// relaxation (tau = 50) of the makespan constraint, started from both the
/// normal durations and the uniform-scaling baseline, then polished by
/// per-activity bisection on the binding constraint. The best candidate is
/// returned, so the result never costs more than the baseline.
pub fn solve_cost_frontier(
    graph: &ProjectGraph,
    crash: &BTreeMap<String, CrashParams>,
    t_max: f64,
) -> Result<BTreeMap<String, f64>, RbmError> {
    let ctx = FrontierContext::new(graph, crash)?;
    if ctx.makespan(&ctx.normal) <= t_max {
        return Ok(ctx.to_map(&ctx.normal));
    }
    ctx.check_feasible(t_max)?;
    let tau = 50.0;
    let scaled = ctx.scale_feasible(t_max);
    let candidates = [
        ctx.polish(ctx.descend(ctx.normal.clone(), t_max, tau), t_max),
        ctx.polish(ctx.descend(scaled.clone(), t_max, tau), t_max),
        ctx.polish(scaled, t_max),
    ];
    let best = candidates
        .into_iter()
        .min_by(|a, b| {
            ctx.total_cost(a)
                .partial_cmp(&ctx.total_cost(b))
                .expect("finite costs")
        })
        .expect("non-empty candidate set");
    Ok(ctx.to_map(&best))
}

/// Monte Carlo rollout summary. All moments are over `n_samples` draws.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McSummary {
    pub n_samples: usize,
    pub makespan_mean: f64,
    pub makespan_var: f64,
    pub makespan_quantiles: BTreeMap<String, f64>,
    pub total_cost_mean: f64,
    pub total_cost_var: f64,
    pub total_cost_quantiles: BTreeMap<String, f64>,
    pub activity_duration_mean: Vec<f64>,
    pub activity_duration_var: Vec<f64>,
    pub activity_cost_mean: Vec<f64>,
    pub activity_cost_var: Vec<f64>,
    /// Makespan with every efficiency at its distribution mean.
    pub makespan_at_mean_efficiency: f64,
    /// Count of gaussian samples truncated at the positivity floor.
    pub truncated_samples: u64,
    pub overhead: f64,
}

const MC_CHUNK: usize = 4096;
const QUANTILES: [(&str, f64); 5] = [
    ("p05", 0.05),
    ("p25", 0.25),
    ("p50", 0.50),
    ("p75", 0.75),
    ("p95", 0.95),
];

struct ChunkResult {
    makespans: Vec<f64>,
    costs: Vec<f64>,
    dur_stats: Welford,
    cost_stats: Welford,
    truncated: u64,
}

impl ChunkResult {
    fn new(n: usize, capacity: usize) -> Self {
        ChunkResult {
            makespans: Vec::with_capacity(capacity),
            costs: Vec::with_capacity(capacity),
            dur_stats: Welford::new(n),
            cost_stats: Welford::new(n),
            truncated: 0,
        }
    }
}

struct Welford {
    mean: Vec<f64>,
    m2: Vec<f64>,
    count: u64,
}

impl Welford {
    fn new(n: usize) -> Self {
        Welford {
            mean: vec![0.0; n],
            m2: vec![0.0; n],
            count: 0,
        }
    }

    fn push(&mut self, xs: &[f64]) {
        self.count += 1;
        let c = self.count as f64;
        for (k, &x) in xs.iter().enumerate() {
            let d = x - self.mean[k];
            self.mean[k] += d / c;
            self.m2[k] += d * (x - self.mean[k]);
        }
    }

    /// Chandrasekaran-style parallel merge of two accumulators.
    fn merge(&mut self, other: &Welford) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            self.mean = other.mean.clone();
            self.m2 = other.m2.clone();
            self.count = other.count;
            return;
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let total = na + nb;
        for k in 0..self.mean.len() {
            let delta = other.mean[k] - self.mean[k];
            self.mean[k] += delta * nb / total;
            self.m2[k] += other.m2[k] + delta * delta * na * nb / total;
        }
        self.count += other.count;
    }

    fn variance(&self) -> Vec<f64> {
        if self.count < 2 {
            return vec![0.0; self.mean.len()];
        }
        self.m2
            .iter()
            .map(|&m| m / (self.count - 1) as f64)
            .collect()
    }
}

fn quantile_map(samples: &mut [f64]) -> BTreeMap<String, f64> {
    samples.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    QUANTILES
        .iter()
        .map(|&(name, q)| {
            let idx = if samples.is_empty() {
                0
            } else {
                (((samples.len() - 1) as f64) * q).round() as usize
            };
            (name.to_string(), samples.get(idx).copied().unwrap_or(0.0))
        })
        .collect()
}

/// Monte Carlo project rollout. Samples are drawn in fixed-size chunks,
/// each from an independent substream of (seed, chunk index), so the result
/// is identical no matter how chunks are scheduled.
pub fn monte_carlo_project(
    graph: &ProjectGraph,
    specs: &[ActivityWorkSpec],
    distributions: &[EfficiencyDistribution],
    n_samples: usize,
    seed: u64,
    overhead: f64,
) -> Result<McSummary, RbmError> {
    let n = graph.n_activities();
    if specs.len() != n || distributions.len() != n {
        return Err(RbmError::InvalidWorkSpec(format!(
            "expected {n} specs and distributions, got {} and {}",
            specs.len(),
            distributions.len()
        )));
    }
    if n_samples == 0 {
        return Err(RbmError::InvalidWorkSpec("n_samples must be >= 1".into()));
    }
    for (i, (s, d)) in specs.iter().zip(distributions).enumerate() {
        s.validate()?;
        d.validate()?;
        if d.means.len() != s.uses.len() {
            return Err(RbmError::InvalidWorkSpec(format!(
                "activity {i}: distribution arity {} != resource count {}",
                d.means.len(),
                s.uses.len()
            )));
        }
    }
    let order = graph.topo_order()?;
    let root = StreamRng::from_seed(seed).stream("monte-carlo");

    // Chunks are independent (one counter-based substream each) and their
    // results are folded in chunk order, so the outcome is identical no
    // matter how many workers rayon schedules.
    let n_chunks = n_samples.div_ceil(MC_CHUNK);
    let chunk_results: Vec<Result<ChunkResult, RbmError>> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = root.substream(chunk as u64);
            let lo = chunk * MC_CHUNK;
            let hi = ((chunk + 1) * MC_CHUNK).min(n_samples);
            let mut out = ChunkResult::new(n, hi - lo);
            let mut durations = vec![0.0f64; n];
            let mut act_costs = vec![0.0f64; n];
            for _ in lo..hi {
                for i in 0..n {
                    if specs[i].uses.is_empty() {
                        // No assigned resources: nothing to do (dummy nodes).
                        durations[i] = 0.0;
                        act_costs[i] = 0.0;
                        continue;
                    }
                    let (eff, trunc) = distributions[i].sample(&mut rng);
                    out.truncated += trunc;
                    let per_res = resource_time_cost(&specs[i], &eff)?;
                    let times: Vec<f64> = per_res.iter().map(|&(t, _)| t).collect();
                    durations[i] = aggregate_duration(&times, specs[i].parallelism)?;
                    act_costs[i] = per_res.iter().map(|&(_, c)| c).sum();
                }
                let (_, makespan, _) = cpm_forward(graph, &order, &durations);
                out.makespans.push(makespan);
                out.costs.push(act_costs.iter().sum::<f64>() + overhead);
                out.dur_stats.push(&durations);
                out.cost_stats.push(&act_costs);
            }
            Ok(out)
        })
        .collect();

    let mut makespans = Vec::with_capacity(n_samples);
    let mut costs = Vec::with_capacity(n_samples);
    let mut dur_stats = Welford::new(n);
    let mut cost_stats = Welford::new(n);
    let mut truncated = 0u64;
    for result in chunk_results {
        let chunk = result?;
        makespans.extend(chunk.makespans);
        costs.extend(chunk.costs);
        dur_stats.merge(&chunk.dur_stats);
        cost_stats.merge(&chunk.cost_stats);
        truncated += chunk.truncated;
    }

    // Deterministic reference point: every efficiency at its mean.
    let mut mean_durations = vec![0.0f64; n];
    for i in 0..n {
        if specs[i].uses.is_empty() {
            continue;
        }
        let eff = distributions[i].mean_efficiency();
        let per_res = resource_time_cost(&specs[i], &eff)?;
        let times: Vec<f64> = per_res.iter().map(|&(t, _)| t).collect();
        mean_durations[i] = aggregate_duration(&times, specs[i].parallelism)?;
    }
    let (_, makespan_at_mean, _) = cpm_forward(graph, &order, &mean_durations);

    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let var = |xs: &[f64], m: f64| {
        if xs.len() < 2 {
            0.0
        } else {
            xs.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
        }
    };
    let ms_mean = if makespans.is_empty() { 0.0 } else { mean(&makespans) };
    let ms_var = var(&makespans, ms_mean);
    let c_mean = if costs.is_empty() { overhead } else { mean(&costs) };
    let c_var = var(&costs, c_mean);
    Ok(McSummary {
        n_samples,
        makespan_mean: ms_mean,
        makespan_var: ms_var,
        makespan_quantiles: quantile_map(&mut makespans),
        total_cost_mean: c_mean,
        total_cost_var: c_var,
        total_cost_quantiles: quantile_map(&mut costs),
        activity_duration_mean: dur_stats.mean.clone(),
        activity_duration_var: dur_stats.variance(),
        activity_cost_mean: cost_stats.mean.clone(),
        activity_cost_var: cost_stats.variance(),
        makespan_at_mean_efficiency: makespan_at_mean,
        truncated_samples: truncated,
        overhead,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Edge, Relation};

    fn spec(entries: &[(f64, f64, f64)], lambda: f64) -> ActivityWorkSpec {
        ActivityWorkSpec {
            uses: entries
                .iter()
                .map(|&(work, productivity, cost_rate)| ResourceUse {
                    work,
                    productivity,
                    cost_rate,
                })
                .collect(),
            parallelism: lambda,
            crash: None,
        }
    }

    #[test]
    fn time_cost_plug_in() {
        let s = spec(&[(10.0, 2.0, 3.0)], 1.0);
        let out = resource_time_cost(&s, &[1.0]).unwrap();
        assert_eq!(out[0], (5.0, 15.0));
        // Doubling efficiency halves both.
        let out2 = resource_time_cost(&s, &[2.0]).unwrap();
        assert_eq!(out2[0], (2.5, 7.5));
    }

    #[test]
    fn zero_efficiency_rejected() {
        let s = spec(&[(10.0, 2.0, 3.0)], 1.0);
        assert!(matches!(
            resource_time_cost(&s, &[0.0]),
            Err(RbmError::NonPositiveEfficiency(0))
        ));
    }

    #[test]
    fn aggregation_endpoints() {
        assert_eq!(aggregate_duration(&[2.0, 3.0], 1.0).unwrap(), 5.0);
        assert_eq!(aggregate_duration(&[2.0, 3.0], 0.0).unwrap(), 3.0);
        assert_eq!(aggregate_duration(&[2.0, 3.0], 0.5).unwrap(), 4.0);
        assert!(matches!(
            aggregate_duration(&[], 0.5),
            Err(RbmError::EmptyResourceSet)
        ));
    }

    #[test]
    fn activity_cost_is_additive() {
        let s = spec(&[(10.0, 2.0, 3.0), (10.0, 3.0, 3.0)], 0.0);
        let c = activity_cost(&s, &[1.0, 1.0]).unwrap();
        assert!((c - (15.0 + 10.0)).abs() < 1e-12);
        // Doubling cost rates doubles activity cost.
        let s2 = spec(&[(10.0, 2.0, 6.0), (10.0, 3.0, 6.0)], 0.0);
        assert!((activity_cost(&s2, &[1.0, 1.0]).unwrap() - 2.0 * c).abs() < 1e-12);
    }

    #[test]
    fn taylor_expectation_matches_examples() {
        let s = spec(&[(1.0, 1.0, 1.0)], 1.0);
        // sigma = 0 reduces to the deterministic value.
        assert!((expected_duration_taylor(&s, &[2.0], &[0.0]).unwrap() - 0.5).abs() < 1e-12);
        // q = p_s = mu = 1, var = 0.04 -> 1.04.
        assert!((expected_duration_taylor(&s, &[1.0], &[0.04]).unwrap() - 1.04).abs() < 1e-12);
        // Log-normal closed form at mu = 0, var = 0.5.
        assert!((lognormal_mean_inverse(0.0, 0.5) - 0.25f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn crash_cost_closed_forms() {
        let p = CrashParams {
            normal_duration: 4.0,
            min_cost: 2.0,
            a: 1.0,
            b: std::f64::consts::LN_2,
        };
        assert!((crash_cost(4.0, &p).unwrap() - 2.0).abs() < 1e-12);
        assert!((crash_cost(3.0, &p).unwrap() - 3.0).abs() < 1e-12);
        assert!(matches!(
            crash_cost(5.0, &p),
            Err(RbmError::DurationAboveNormal { .. })
        ));
        assert!(matches!(
            crash_cost(0.0, &p),
            Err(RbmError::NonPositiveDuration(_))
        ));
    }

    #[test]
    fn crash_cost_monotone_and_convex() {
        let p = CrashParams {
            normal_duration: 5.0,
            min_cost: 1.0,
            a: 0.7,
            b: 0.9,
        };
        let grid: Vec<f64> = (1..=50).map(|k| 0.1 * k as f64).collect();
        for w in grid.windows(2) {
            assert!(crash_cost(w[0], &p).unwrap() > crash_cost(w[1], &p).unwrap());
        }
        for w in grid.windows(3) {
            let mid = crash_cost(w[1], &p).unwrap();
            let avg = 0.5 * (crash_cost(w[0], &p).unwrap() + crash_cost(w[2], &p).unwrap());
            assert!(mid <= avg + 1e-12);
        }
    }

    fn single_activity_graph() -> ProjectGraph {
        ProjectGraph::new(vec!["A".into()], vec![], vec![]).unwrap()
    }

    fn crash_a() -> BTreeMap<String, CrashParams> {
        [(
            "A".to_string(),
            CrashParams {
                normal_duration: 4.0,
                min_cost: 2.0,
                a: 1.0,
                b: 1.0,
            },
        )]
        .into_iter()
        .collect()
    }

    #[test]
    fn frontier_slack_returns_normal_durations() {
        let t = solve_cost_frontier(&single_activity_graph(), &crash_a(), 10.0).unwrap();
        assert_eq!(t["A"], 4.0);
    }

    #[test]
    fn frontier_binding_single_activity() {
        let t = solve_cost_frontier(&single_activity_graph(), &crash_a(), 3.0).unwrap();
        assert!((t["A"] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn frontier_infeasible_cap() {
        assert!(matches!(
            solve_cost_frontier(&single_activity_graph(), &crash_a(), 0.1),
            Err(RbmError::Infeasible { .. })
        ));
    }

    #[test]
    fn monte_carlo_zero_variance_is_degenerate() {
        let g = ProjectGraph::new(
            vec!["A".into()],
            vec!["r0".into()],
            vec![Edge::new("A", "r0", Relation::Assignment)],
        )
        .unwrap();
        let specs = vec![spec(&[(10.0, 2.0, 3.0)], 1.0)];
        let dists = vec![EfficiencyDistribution {
            family: DistributionFamily::Gaussian,
            means: vec![1.0],
            variances: vec![1e-18],
            correlation: 0.0,
            bounds: None,
        }];
        let s = monte_carlo_project(&g, &specs, &dists, 200, 13, 0.0).unwrap();
        assert!(s.makespan_var < 1e-12);
        assert!((s.makespan_mean - 5.0).abs() < 1e-6);
    }

    #[test]
    fn monte_carlo_overhead_only() {
        let g = ProjectGraph::new(vec![], vec![], vec![]).unwrap();
        let s = monte_carlo_project(&g, &[], &[], 10, 1, 7.0).unwrap();
        assert_eq!(s.total_cost_mean, 7.0);
        assert_eq!(s.makespan_mean, 0.0);
    }

    #[test]
    fn monte_carlo_deterministic_per_seed() {
        let g = ProjectGraph::new(
            vec!["A".into()],
            vec!["r0".into()],
            vec![Edge::new("A", "r0", Relation::Assignment)],
        )
        .unwrap();
        let specs = vec![spec(&[(10.0, 2.0, 3.0)], 1.0)];
        let dists = vec![EfficiencyDistribution {
            family: DistributionFamily::LogNormal,
            means: vec![0.0],
            variances: vec![0.25],
            correlation: 0.0,
            bounds: None,
        }];
        let a = monte_carlo_project(&g, &specs, &dists, 500, 29, 0.0).unwrap();
        let b = monte_carlo_project(&g, &specs, &dists, 500, 29, 0.0).unwrap();
        assert_eq!(a.makespan_mean.to_bits(), b.makespan_mean.to_bits());
        let c = monte_carlo_project(&g, &specs, &dists, 500, 30, 0.0).unwrap();
        assert_ne!(a.makespan_mean.to_bits(), c.makespan_mean.to_bits());
    }

    #[test]
    fn lognormal_sample_mean_matches_closed_form() {
        let g = ProjectGraph::new(
            vec!["A".into()],
            vec!["r0".into()],
            vec![Edge::new("A", "r0", Relation::Assignment)],
        )
        .unwrap();
        let specs = vec![spec(&[(3.0, 2.0, 1.0)], 1.0)];
        let dists = vec![EfficiencyDistribution {
            family: DistributionFamily::LogNormal,
            means: vec![0.1],
            variances: vec![0.25],
            correlation: 0.0,
            bounds: None,
        }];
        let s = monte_carlo_project(&g, &specs, &dists, 100_000, 47, 0.0).unwrap();
        let expect = 3.0 / 2.0 * lognormal_mean_inverse(0.1, 0.25);
        assert!(
            (s.makespan_mean - expect).abs() / expect < 0.02,
            "mc {} vs closed form {expect}",
            s.makespan_mean
        );
    }

    #[test]
    fn beta_family_samples_within_bounds() {
        let d = EfficiencyDistribution {
            family: DistributionFamily::Beta,
            means: vec![1.0],
            variances: vec![0.02],
            correlation: 0.0,
            bounds: None,
        };
        d.validate().unwrap();
        let mut rng = StreamRng::from_seed(5).stream("beta");
        for _ in 0..500 {
            let (xs, _) = d.sample(&mut rng);
            assert!(xs[0] > 0.5 && xs[0] < 1.5);
        }
    }
}
