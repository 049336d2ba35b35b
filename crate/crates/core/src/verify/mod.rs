//! Residual checks for a computed `Y = K(u)`: invariance under the flow,
//! periodicity under the Wiener shift, the pull-back limit, agreement of the
//! fixed-point and pull-back routes, and a Gaussian moment oracle.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{log_slope, Propagator};
use crate::linalg::{max_norm_diff, max_norm_vec};
use crate::noise::{sample_path, TimeGrid, WienerPath};
use crate::operators::{fixed_point_iterate, FixedPointOptions, GridProcess, InitialGuess};
use crate::system::SystemSpec;

/// Residual tolerance `c_dt·dt + c_tail·e^{λ·M·T} + c_iter·tol`.
///
/// The last term accounts for the fixed point being known only to the
/// iteration tolerance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToleranceModel {
    pub c_dt: f64,
    pub c_tail: f64,
    pub c_iter: f64,
}

impl ToleranceModel {
    pub fn new(c_dt: f64, c_tail: f64, c_iter: f64) -> Self {
        assert!(c_dt >= 0.0 && c_tail >= 0.0 && c_iter >= 0.0, "tolerance coefficients must be nonnegative");
        Self { c_dt, c_tail, c_iter }
    }

    pub fn tolerance(&self, spec: &SystemSpec, dt: f64, tail_periods: usize, tol: f64) -> f64 {
        self.c_dt * dt + self.c_tail * (spec.lambda * tail_periods as f64 * spec.period).exp() + self.c_iter * tol
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub dt: f64,
    pub tail_periods: usize,
    pub n_max: usize,
    pub seed: u64,
    pub stream_id: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerificationReport {
    pub check: String,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub meta: ReportMeta,
    pub note: Option<String>,
}

impl VerificationReport {
    /// Passes iff `residual ≤ tolerance` (a NaN residual fails).
    pub fn new(check: impl Into<String>, residual: f64, tolerance: f64, meta: ReportMeta) -> Self {
        Self { check: check.into(), residual, tolerance, pass: residual <= tolerance, meta, note: None }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

/// Flows `Y(s)` forward to `t` on the same path and compares with `Y(t)`.
pub fn check_invariance<P: WienerPath + ?Sized>(
    y: &GridProcess,
    spec: &SystemSpec,
    path: &P,
    s_step: i64,
    t_step: i64,
    tolerance: f64,
    meta: ReportMeta,
) -> Result<VerificationReport> {
    if s_step > t_step || !y.contains(s_step) || !y.contains(t_step) {
        return Err(Error::Window(format!("invariance pair ({s_step}, {t_step}) not inside [{}, {}]", y.start(), y.end())));
    }
    let prop = Propagator::new(spec, path.dt())?;
    let end = prop.endpoint(s_step, t_step, y.at(s_step), path)?;
    Ok(VerificationReport::new("invariance", max_norm_diff(&end, y.at(t_step)), tolerance, meta))
}

/// `sup_{s ∈ [lo, hi]} |Y_base(s + T) − Y_shifted(s)|` where `Y_shifted` was
/// computed on the path shifted by one period.
pub fn check_periodicity(
    y_base: &GridProcess,
    y_shifted: &GridProcess,
    steps_per_period: usize,
    window: (i64, i64),
    tolerance: f64,
    meta: ReportMeta,
) -> Result<VerificationReport> {
    let (lo, hi) = window;
    let residual = y_shifted.sup_distance_shifted(y_base, lo, hi, steps_per_period as i64)?;
    Ok(VerificationReport::new("periodicity", residual, tolerance, meta))
}

/// Overlap of the reliable windows of two solves, in the shifted path's
/// time: steps `s` with `s ∈ shifted` and `s + T ∈ base`.
pub fn periodicity_overlap(base: (i64, i64), shifted: (i64, i64), steps_per_period: usize) -> Result<(i64, i64)> {
    let spp = steps_per_period as i64;
    let lo = shifted.0.max(base.0 - spp);
    let hi = shifted.1.min(base.1 - spp);
    if hi < lo {
        return Err(Error::Window("reliable windows do not overlap after the period shift".into()));
    }
    Ok((lo, hi))
}

/// Pull-back distances `g(n, x) = |φ(t, −nT)x − Y(t)|` and the checks
/// derived from them.
#[derive(Clone, Debug, PartialEq)]
pub struct PullbackReport {
    pub t_eval: i64,
    /// One row per initial state: `g(1, x), …, g(n_max, x)`.
    pub distances: Vec<(Vec<f64>, Vec<f64>)>,
    /// Least-squares slope of `log g` against `n` on this path, over points
    /// above the plateau, worst over `x`. Informational; the rate check uses
    /// the ensemble (see [`pullback_rate`]).
    pub slope: Option<f64>,
    pub slope_bound: f64,
    /// Largest `g(n+1, x) − g(n, x)` for `n ≥ 2` on this path, ignoring pairs
    /// already at the tolerance floor. Positive values are common: a single
    /// path need not approach its limit monotonically.
    pub pathwise_increase: f64,
    pub reports: Vec<VerificationReport>,
}

impl PullbackReport {
    pub fn all_pass(&self) -> bool {
        self.reports.iter().all(|r| r.pass)
    }
}

/// Runs the pull-backs from `−nT`, `n = 1..=n_max`, for each `x` to step
/// `t_eval` and checks that `g(n_max, x)` is within tolerance and that the
/// limits for different `x` agree. Monotonicity in `n` is judged over an
/// ensemble by [`pullback_monotonicity`].
///
/// The decay-rate check against `(λ + L·d²)·T + 0.1` is an empirical
/// surrogate; no rate is known for the limit.
#[allow(clippy::too_many_arguments)]
pub fn check_pullback_limit<P: WienerPath + ?Sized>(
    spec: &SystemSpec,
    path: &P,
    x_list: &[Vec<f64>],
    n_max: usize,
    t_eval: i64,
    y: &GridProcess,
    tolerance: f64,
    meta: ReportMeta,
) -> Result<PullbackReport> {
    if n_max < 2 || x_list.is_empty() {
        return Err(Error::InvalidParameter("need n_max >= 2 and at least one initial state".into()));
    }
    if !y.contains(t_eval) {
        return Err(Error::Window(format!("t_eval = {t_eval} outside Y's window")));
    }
    let spp = path.steps_per_period() as i64;
    path.require_cells(-(n_max as i64) * spp, t_eval)?;
    let prop = Propagator::new(spec, path.dt())?;
    let target = y.at(t_eval);

    let mut distances = Vec::with_capacity(x_list.len());
    let mut limits = Vec::with_capacity(x_list.len());
    for x in x_list {
        let mut g = Vec::with_capacity(n_max);
        let mut last = Vec::new();
        for n in 1..=n_max {
            last = prop.endpoint(-(n as i64) * spp, t_eval, x, path)?;
            g.push(max_norm_diff(&last, target));
        }
        limits.push(last);
        distances.push((x.clone(), g));
    }

    let floor = tolerance.max(1e-13);
    let mut increase: f64 = 0.0;
    for (_, g) in &distances {
        for w in g[1..].windows(2) {
            if w[1].max(w[0]) > floor {
                increase = increase.max(w[1] - w[0]);
            }
        }
    }
    let limit = distances.iter().map(|(_, g)| g[n_max - 1]).fold(0.0, f64::max);
    let spread = limits
        .iter()
        .flat_map(|a| limits.iter().map(move |b| max_norm_diff(a, b)))
        .fold(0.0, f64::max);

    let slope = distances.iter().filter_map(|(_, g)| plateau_slope(g)).reduce(f64::max);
    let d = spec.dim() as f64;
    let slope_bound = (spec.lambda + spec.lipschitz * d * d) * spec.period + 0.1;

    let reports = vec![
        VerificationReport::new("pullback_limit", limit, tolerance, meta),
        VerificationReport::new("pullback_x_independence", spread, tolerance, meta),
    ];
    Ok(PullbackReport { t_eval, distances, slope, slope_bound, pathwise_increase: increase, reports })
}

/// Checks that the ensemble geometric mean of `g(n, x)` decreases in `n`
/// from `n = 2` on, for every `x`. Steps where both means are at or below
/// `tolerance` count as converged.
pub fn pullback_monotonicity(reports: &[PullbackReport], tolerance: f64, meta: ReportMeta) -> Result<VerificationReport> {
    let floor = tolerance.max(1e-13);
    let mut increase: f64 = 0.0;
    for means in geometric_means(reports)? {
        for w in means[1..].windows(2) {
            if w[0].max(w[1]) > floor {
                increase = increase.max(w[1] - w[0]);
            }
        }
    }
    let wobbly = reports.iter().filter(|r| r.pathwise_increase > 0.0).count();
    Ok(VerificationReport::new("pullback_decreasing", increase, 0.0, meta)
        .with_note(format!("ensemble geometric mean; {wobbly} of {} paths not monotone", reports.len())))
}

/// Slope of `log g` against `n` over the points above `100·g(n_max)`: the
/// plateau the sequence settles on is set by roundoff and by the truncation
/// of Y, not by the decay rate.
fn plateau_slope(g: &[f64]) -> Option<f64> {
    let plateau = (100.0 * g[g.len() - 1]).max(1e-13);
    let pts: Vec<(f64, f64)> = g.iter().enumerate().filter(|(_, v)| **v > plateau).map(|(i, v)| ((i + 1) as f64, *v)).collect();
    log_slope(&pts)
}

/// Per initial state, the geometric mean over paths of `g(n, x)`.
fn geometric_means(reports: &[PullbackReport]) -> Result<Vec<Vec<f64>>> {
    let first = reports.first().ok_or_else(|| Error::InvalidParameter("no pull-back reports".into()))?;
    let n_x = first.distances.len();
    let n_max = first.distances[0].1.len();
    if reports.iter().any(|r| r.distances.len() != n_x || r.distances.iter().any(|(_, g)| g.len() != n_max)) {
        return Err(Error::Dimension("pull-back reports differ in shape".into()));
    }
    let paths = reports.len() as f64;
    Ok((0..n_x)
        .map(|i| {
            (0..n_max).map(|n| (reports.iter().map(|r| r.distances[i].1[n].max(1e-300).ln()).sum::<f64>() / paths).exp()).collect()
        })
        .collect())
}

/// Geometric decay rate of the ensemble geometric mean of `g(n, x)`,
/// worst over `x`, against `(λ + L·d²)·T + 0.1`. An empirical surrogate for
/// the exponential convergence of the pull-back.
pub fn pullback_rate(reports: &[PullbackReport], meta: ReportMeta) -> Result<VerificationReport> {
    let bound = reports.first().map_or(f64::NAN, |r| r.slope_bound);
    let slope = geometric_means(reports)?.iter().filter_map(|m| plateau_slope(m)).reduce(f64::max);
    let (lo, hi) = reports
        .iter()
        .filter_map(|r| r.slope)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s), hi.max(s)));
    Ok(match slope {
        Some(s) => VerificationReport::new("pullback_rate", s, bound, meta)
            .with_note(format!("ensemble geometric mean; per-path slopes {lo:.2} to {hi:.2}")),
        None => VerificationReport::new("pullback_rate", f64::NEG_INFINITY, bound, meta)
            .with_note("fewer than two points above the plateau"),
    })
}

/// `sup_{t ∈ window} |Y(t) − φ(t, −n·T)x|`.
#[allow(clippy::too_many_arguments)]
pub fn cross_route_agreement<P: WienerPath + ?Sized>(
    spec: &SystemSpec,
    path: &P,
    y: &GridProcess,
    window: (i64, i64),
    n: usize,
    x: &[f64],
    tolerance: f64,
    meta: ReportMeta,
) -> Result<VerificationReport> {
    let prop = Propagator::new(spec, path.dt())?;
    let start = -(n as i64) * path.steps_per_period() as i64;
    if window.0 < start {
        return Err(Error::Window(format!("window starts before the pull-back start {start}")));
    }
    let traj = prop.integrate(start, window.1, x, path)?;
    let residual = y.sup_distance(&traj, window.0, window.1)?;
    Ok(VerificationReport::new("cross_route", residual, tolerance, meta))
}

/// Ensemble moments of `Y(0)` for a system with `h ≡ 0`, where `Y` is the
/// Gaussian stochastic convolution. The mean must lie within four standard
/// errors of zero; for a scalar system with constant `σ` the variance must be
/// within 5% of `σ²/(−2a)`.
pub fn ou_moment_oracle(
    spec: &SystemSpec,
    ensemble: usize,
    steps_per_period: usize,
    tail_periods: usize,
    seed: u64,
) -> Result<Vec<VerificationReport>> {
    if ensemble < 2 {
        return Err(Error::InvalidParameter("the moment oracle needs at least two paths".into()));
    }
    let d = spec.dim();
    let lag = (tail_periods * steps_per_period) as i64;
    let grid = TimeGrid::new(spec.period, steps_per_period, -lag, 1)?;
    let opts = FixedPointOptions { tail_periods, tol: 1e-12, max_iter: 10, force: false };
    let samples: Vec<Vec<f64>> = (0..ensemble as u64)
        .into_par_iter()
        .map(|stream| {
            let path = sample_path(grid, spec.noise_dim, seed, stream)?;
            let r = fixed_point_iterate(spec, &path, (0, 0), &opts, InitialGuess::Zero)?;
            Ok(r.y.at(0).to_vec())
        })
        .collect::<Result<_>>()?;

    let n = ensemble as f64;
    let meta = ReportMeta { dt: grid.dt(), tail_periods, n_max: 0, seed, stream_id: 0 };
    let mut reports = Vec::new();
    let mut variances = Vec::with_capacity(d);
    for i in 0..d {
        let mean = samples.iter().map(|s| s[i]).sum::<f64>() / n;
        let var = samples.iter().map(|s| (s[i] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        variances.push(var);
        reports.push(VerificationReport::new(format!("ou_mean_{i}"), mean.abs(), 4.0 * (var / n).sqrt(), meta));
    }

    if d == 1 && spec.noise_dim == 1 {
        let s0 = spec.sigma_at(0.0).get(0, 0);
        let constant = (0..16).all(|k| spec.sigma_at(spec.period * k as f64 / 16.0).get(0, 0) == s0);
        if constant {
            let exact = s0 * s0 / (-2.0 * spec.a.get(0, 0));
            let rel = if exact > 0.0 { (variances[0] - exact).abs() / exact } else { max_norm_vec(&variances) };
            reports.push(VerificationReport::new("ou_variance", rel, 0.05, meta).with_note(format!("variance {:.5}, exact {exact:.5}", variances[0])));
        }
    }
    Ok(reports)
}

/// Log-log slope of residual against dt.
pub fn refinement_slope(points: &[(f64, f64)]) -> Option<f64> {
    let logged: Vec<(f64, f64)> = points.iter().filter(|(dt, _)| *dt > 0.0).map(|(dt, r)| (dt.ln(), *r)).collect();
    log_slope(&logged)
}
