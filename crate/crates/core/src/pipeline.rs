//! Solve, verify and sweep runs over an ensemble of noise paths.
//!
//! Path `k` of an ensemble is stream `k` of the configured seed. Ensemble
//! members run in parallel; results are collected in stream order, so every
//! output is a deterministic function of the configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::flow::{flow_composition_residual, period_shift_residual, validate_spec};
use crate::noise::{sample_path, NoisePath, TimeGrid, WienerPath};
use crate::operators::{
    fixed_point_iterate, iterate_envelope_sandwich, FixedPointOptions, FixedPointResult, InitialGuess, KOperator, SandwichOptions,
};
use crate::output::{fmt_f64, write_reports, write_solution_file, write_table};
use crate::presets;
use crate::system::SystemSpec;
use crate::verify::{
    check_invariance, check_periodicity, check_pullback_limit, cross_route_agreement, ou_moment_oracle, periodicity_overlap,
    pullback_monotonicity, pullback_rate, refinement_slope, PullbackReport, ReportMeta, ToleranceModel, VerificationReport,
};

/// Tolerances for inline systems, which have no calibration of their own.
pub const DEFAULT_TOLERANCE: ToleranceModel = ToleranceModel { c_dt: 0.0, c_tail: 100.0, c_iter: 1000.0 };

/// Absolute tolerance of the exact discrete flow identities.
pub const FLOW_TOL: f64 = 1e-12;

/// Slack on observed contraction ratios.
pub const RATIO_SLACK: f64 = 0.05;

const FLOW_TRIPLES: usize = 100;
const SHIFT_PAIRS: usize = 20;
const SANDWICH_LEVELS: usize = 4;
/// RNG stream namespace for probe points, disjoint from noise streams.
const PROBE_STREAM: u64 = 1 << 63;

#[derive(Clone, Debug)]
pub struct ResolvedSystem {
    pub spec: SystemSpec,
    pub tolerance: ToleranceModel,
    /// `h ≡ 0`, in which case the Gaussian moment oracle applies.
    pub drift_is_zero: bool,
}

pub fn resolve_system(cfg: &RunConfig) -> Result<ResolvedSystem> {
    match (&cfg.preset, &cfg.system) {
        (Some(name), None) => {
            let p = presets::lookup(name)?;
            Ok(ResolvedSystem { spec: p.spec, tolerance: p.tolerance, drift_is_zero: false })
        }
        (None, Some(sys)) => Ok(ResolvedSystem { spec: sys.build()?, tolerance: DEFAULT_TOLERANCE, drift_is_zero: sys.drift_is_zero() }),
        _ => Err(Error::Config("give exactly one of `preset` or `[system]`".into())),
    }
}

fn fixed_point_options(cfg: &RunConfig) -> FixedPointOptions {
    FixedPointOptions { tail_periods: cfg.tail_periods, tol: cfg.tol, max_iter: cfg.max_iter, force: cfg.force }
}

fn ensemble_path(spec: &SystemSpec, cfg: &RunConfig, stream: u64, first_periods: i64, last_periods: i64) -> Result<NoisePath> {
    let grid = TimeGrid::covering_periods(spec.period, cfg.steps_per_period, first_periods, last_periods)?;
    sample_path(grid, spec.noise_dim, cfg.seed, stream)
}

/// Fixed point for one ensemble member on the window `[0, T]`.
pub fn solve_stream(spec: &SystemSpec, cfg: &RunConfig, stream: u64) -> Result<FixedPointResult> {
    let path = ensemble_path(spec, cfg, stream, -(cfg.tail_periods as i64), 1)?;
    let spp = cfg.steps_per_period as i64;
    fixed_point_iterate(spec, &path, (0, spp), &fixed_point_options(cfg), InitialGuess::Zero)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveRecord {
    pub stream_id: u64,
    pub iterations: usize,
    pub final_step_norm: f64,
    pub observed_ratios: Vec<f64>,
    pub contraction_bound: f64,
    pub guaranteed: bool,
    pub deterministic_tail_bound: f64,
    pub stochastic_tail_bound: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveSummary {
    pub system: String,
    pub records: Vec<SolveRecord>,
    pub files: Vec<PathBuf>,
}

impl SolveSummary {
    pub fn guaranteed(&self) -> bool {
        self.records.iter().all(|r| r.guaranteed)
    }

    pub fn render(&self, cfg: &RunConfig) -> String {
        let mut s = String::new();
        let q = self.records.first().map_or(f64::NAN, |r| r.contraction_bound);
        let _ = writeln!(s, "system: {}", self.system);
        let _ = writeln!(s, "paths: {}  steps per period: {}  tail periods: {}  tol: {:e}", self.records.len(), cfg.steps_per_period, cfg.tail_periods, cfg.tol);
        if self.guaranteed() {
            let _ = writeln!(s, "contraction bound: {q:.6} (< 1, fixed point guaranteed)");
        } else {
            let _ = writeln!(s, "contraction bound: {q:.6} UNGUARANTEED (run forced past the small-gain condition)");
        }
        let max_it = self.records.iter().map(|r| r.iterations).max().unwrap_or(0);
        let max_ratio = self.records.iter().flat_map(|r| r.observed_ratios.iter().copied()).fold(0.0, f64::max);
        let _ = writeln!(s, "iterations: at most {max_it}  largest observed ratio: {max_ratio:.4}");
        s
    }
}

/// Solves every ensemble member and writes `path_NNNN.csv` (rows on `[0, T]`),
/// `summary.csv`, `summary.txt` and the effective `config.toml` to `out_dir`.
pub fn run_solve(cfg: &RunConfig, out_dir: &Path) -> Result<SolveSummary> {
    cfg.validate()?;
    let sys = resolve_system(cfg)?;
    let spec = &sys.spec;
    let results: Vec<Result<FixedPointResult>> =
        (0..cfg.ensemble as u64).into_par_iter().map(|stream| solve_stream(spec, cfg, stream)).collect();
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;

    fs::create_dir_all(out_dir)?;
    let spp = cfg.steps_per_period as i64;
    let mut files = Vec::new();
    let mut records = Vec::new();
    for (stream, r) in results.iter().enumerate() {
        let file = out_dir.join(format!("path_{stream:04}.csv"));
        write_solution_file(&file, &r.u, &r.y, 0, spp)?;
        files.push(file);
        records.push(SolveRecord {
            stream_id: stream as u64,
            iterations: r.iterations,
            final_step_norm: r.final_step_norm,
            observed_ratios: r.observed_ratios.clone(),
            contraction_bound: r.contraction_bound,
            guaranteed: r.guaranteed,
            deterministic_tail_bound: r.deterministic_tail_bound,
            stochastic_tail_bound: r.stochastic_tail_bound,
        });
    }
    let summary = SolveSummary { system: spec.name.clone(), records, files };

    let rows: Vec<Vec<String>> = summary
        .records
        .iter()
        .map(|r| {
            vec![
                r.stream_id.to_string(),
                r.iterations.to_string(),
                fmt_f64(r.final_step_norm),
                fmt_f64(r.observed_ratios.iter().copied().fold(0.0, f64::max)),
                r.observed_ratios.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(";"),
                fmt_f64(r.contraction_bound),
                if r.guaranteed { "guaranteed" } else { "unguaranteed" }.to_string(),
                fmt_f64(r.deterministic_tail_bound),
                fmt_f64(r.stochastic_tail_bound),
            ]
        })
        .collect();
    write_table(
        fs::File::create(out_dir.join("summary.csv"))?,
        &[
            "stream_id",
            "iterations",
            "final_step_norm",
            "max_ratio",
            "ratios",
            "contraction_bound",
            "status",
            "deterministic_tail_bound",
            "stochastic_tail_bound",
        ],
        &rows,
    )?;
    fs::write(out_dir.join("summary.txt"), summary.render(cfg))?;
    fs::write(out_dir.join("config.toml"), cfg.to_toml()?)?;
    Ok(summary)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CheckGroup {
    Spec,
    Flow,
    FixedPoint,
    Invariance,
    Periodicity,
    Pullback,
    CrossRoute,
    Sandwich,
    Ou,
}

impl CheckGroup {
    pub const ALL: [CheckGroup; 9] = [
        Self::Spec,
        Self::Flow,
        Self::FixedPoint,
        Self::Invariance,
        Self::Periodicity,
        Self::Pullback,
        Self::CrossRoute,
        Self::Sandwich,
        Self::Ou,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Spec => "spec",
            Self::Flow => "flow",
            Self::FixedPoint => "fixed_point",
            Self::Invariance => "invariance",
            Self::Periodicity => "periodicity",
            Self::Pullback => "pullback",
            Self::CrossRoute => "cross_route",
            Self::Sandwich => "sandwich",
            Self::Ou => "ou",
        }
    }
}

impl FromStr for CheckGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown check `{s}`; expected one of {}", Self::ALL.map(|c| c.name()).join(", "))))
    }
}

/// Parses a comma-separated check list; `all` selects every group.
pub fn parse_checks(list: &str) -> Result<Vec<CheckGroup>> {
    if list.trim() == "all" {
        return Ok(CheckGroup::ALL.to_vec());
    }
    let mut out: Vec<CheckGroup> = list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect::<Result<_>>()?;
    out.sort();
    out.dedup();
    if out.is_empty() {
        return Err(Error::Config("empty check list".into()));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifySummary {
    pub system: String,
    pub reports: Vec<VerificationReport>,
}

impl VerifySummary {
    pub fn all_pass(&self) -> bool {
        self.reports.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> Vec<&VerificationReport> {
        self.reports.iter().filter(|r| !r.pass).collect()
    }

    /// One line per check name: pass count and the worst residual relative
    /// to its tolerance.
    pub fn render(&self) -> String {
        let mut by_check: BTreeMap<&str, (usize, usize, f64, f64)> = BTreeMap::new();
        for r in &self.reports {
            let e = by_check.entry(&r.check).or_insert((0, 0, f64::NEG_INFINITY, f64::NAN));
            e.0 += 1;
            e.1 += usize::from(r.pass);
            if r.residual > e.2 || e.2.is_nan() || !r.pass {
                e.2 = r.residual;
                e.3 = r.tolerance;
            }
        }
        let mut s = format!("system: {}\n", self.system);
        for (name, (n, ok, res, tol)) in by_check {
            let status = if ok == n { "PASS" } else { "FAIL" };
            let _ = writeln!(s, "{status} {name:<28} {ok:>4}/{n:<4} worst residual {res:>11.3e}  tolerance {tol:>10.3e}");
        }
        let _ = writeln!(s, "{}", if self.all_pass() { "all checks passed" } else { "some checks FAILED" });
        s
    }
}

struct VerifyContext<'a> {
    spec: &'a SystemSpec,
    cfg: &'a RunConfig,
    model: ToleranceModel,
    checks: &'a [CheckGroup],
}

struct StreamOutcome {
    reports: Vec<VerificationReport>,
    pullback: Option<PullbackReport>,
}

impl VerifyContext<'_> {
    fn wants(&self, c: CheckGroup) -> bool {
        self.checks.contains(&c)
    }

    fn tolerance(&self, horizon_periods: usize) -> f64 {
        let dt = self.spec.period / self.cfg.steps_per_period as f64;
        self.model.tolerance(self.spec, dt, horizon_periods, self.cfg.tol)
    }

    fn m_max(&self) -> usize {
        self.cfg.n_max + 2
    }

    fn stream(&self, stream: u64) -> Result<StreamOutcome> {
        let spec = self.spec;
        let cfg = self.cfg;
        let spp = cfg.steps_per_period as i64;
        let first = (cfg.tail_periods + 1).max(self.m_max()) as i64;
        let path = ensemble_path(spec, cfg, stream, -first, 2)?;
        let meta = ReportMeta { dt: path.dt(), tail_periods: cfg.tail_periods, n_max: cfg.n_max, seed: cfg.seed, stream_id: stream };
        let mut reports = Vec::new();
        let mut pullback = None;

        if self.wants(CheckGroup::Flow) {
            reports.extend(self.flow_identities(&path, meta)?);
        }
        if self.wants(CheckGroup::Sandwich) {
            reports.extend(self.sandwich(&path, meta)?);
        }

        let needs_solution =
            [CheckGroup::FixedPoint, CheckGroup::Invariance, CheckGroup::Periodicity, CheckGroup::Pullback, CheckGroup::CrossRoute]
                .iter()
                .any(|c| self.wants(*c));
        if !needs_solution {
            return Ok(StreamOutcome { reports, pullback });
        }
        let opts = fixed_point_options(cfg);
        let window = (-spp, spp);
        let fp = match fixed_point_iterate(spec, &path, window, &opts, InitialGuess::Zero) {
            Ok(fp) => fp,
            Err(Error::NoContraction { bound }) => {
                reports.push(VerificationReport::new("fixed_point", bound, 1.0, meta).with_note("refused: no contraction"));
                return Ok(StreamOutcome { reports, pullback });
            }
            Err(Error::NotConverged { iterations, last_step }) => {
                reports.push(
                    VerificationReport::new("fixed_point", last_step, cfg.tol, meta)
                        .with_note(format!("not converged after {iterations} iterations")),
                );
                return Ok(StreamOutcome { reports, pullback });
            }
            Err(e) => return Err(e),
        };
        let q = fp.contraction_bound;
        let note = |r: VerificationReport| if fp.guaranteed { r } else { r.with_note("unguaranteed") };

        if self.wants(CheckGroup::FixedPoint) {
            let max_ratio = fp.observed_ratios.iter().copied().fold(0.0, f64::max);
            reports.push(note(VerificationReport::new("fixed_point_ratio", max_ratio, q + RATIO_SLACK, meta)));
            let bound = |factor: f64| if q < 1.0 { factor / (1.0 - q) } else { f64::INFINITY };
            let top = fixed_point_iterate(spec, &path, window, &opts, InitialGuess::Upper)?;
            let gap = fp.u.sup_distance_common(&top.u)?;
            reports.push(note(VerificationReport::new("fixed_point_uniqueness", gap, bound(2.0 * cfg.tol), meta)));
            let op = KOperator::new(spec, &path, cfg.tail_periods, fp.u.start(), fp.u.end())?;
            let residual = op.apply_gain(&fp.u)?.sup_distance_common(&fp.u)?;
            reports.push(note(VerificationReport::new("fixed_point_residual", residual, bound(cfg.tol * (1.0 + q)), meta)));
        }

        let tol_tail = self.tolerance(cfg.tail_periods);
        if self.wants(CheckGroup::Invariance) {
            let a = check_invariance(&fp.y, spec, &path, 0, spp, tol_tail, meta)?;
            let b = check_invariance(&fp.y, spec, &path, -spp, spp, tol_tail, meta)?;
            let worst = if a.residual >= b.residual { a } else { b };
            reports.push(worst.with_note("worst of (s, t) = (0, T), (-T, T)"));
        }
        if self.wants(CheckGroup::Periodicity) {
            let view = path.shift_by_periods(1)?;
            let shifted = fixed_point_iterate(spec, &view, window, &opts, InitialGuess::Zero)?;
            let overlap = periodicity_overlap(window, window, cfg.steps_per_period)?;
            reports.push(check_periodicity(&fp.y, &shifted.y, cfg.steps_per_period, overlap, tol_tail, meta)?);
        }
        let tol_pull = self.tolerance(cfg.tail_periods.min(cfg.n_max));
        if self.wants(CheckGroup::Pullback) {
            let n = spec.drift_bound.clone();
            let neg: Vec<f64> = n.iter().map(|v| -v).collect();
            let x_list = vec![vec![0.0; spec.dim()], n, neg];
            let pb = check_pullback_limit(spec, &path, &x_list, cfg.n_max, 0, &fp.y, tol_pull, meta)?;
            reports.extend(pb.reports.iter().cloned());
            pullback = Some(pb);
        }
        if self.wants(CheckGroup::CrossRoute) {
            let zero = vec![0.0; spec.dim()];
            reports.push(cross_route_agreement(spec, &path, &fp.y, (0, spp), cfg.n_max, &zero, tol_pull, meta)?);
        }
        Ok(StreamOutcome { reports, pullback })
    }

    /// Flow composition over random triples and the one-period shift
    /// identity over random pairs, from random initial states in `[−1, 1]^d`.
    fn flow_identities(&self, path: &NoisePath, meta: ReportMeta) -> Result<Vec<VerificationReport>> {
        let spec = self.spec;
        let spp = self.cfg.steps_per_period as i64;
        let dt = path.dt();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(PROBE_STREAM | meta.stream_id);
        let state = |rng: &mut ChaCha8Rng| (0..spec.dim()).map(|_| rng.random_range(-1.0..=1.0)).collect::<Vec<f64>>();

        let mut composition: f64 = 0.0;
        for _ in 0..FLOW_TRIPLES {
            let s = rng.random_range(-2 * spp..=spp);
            let t = rng.random_range(s..=(s + spp).min(2 * spp));
            let r = rng.random_range(s..=t);
            let x = state(&mut rng);
            composition = composition.max(flow_composition_residual(spec, s as f64 * dt, r as f64 * dt, t as f64 * dt, &x, path)?);
        }
        let mut shift: f64 = 0.0;
        for _ in 0..SHIFT_PAIRS {
            let s = rng.random_range(-spp..=0);
            let t = rng.random_range(s..=s + spp);
            let x = state(&mut rng);
            shift = shift.max(period_shift_residual(spec, s as f64 * dt, t as f64 * dt, &x, path)?);
        }
        Ok(vec![
            VerificationReport::new("flow_composition", composition, FLOW_TOL, meta),
            VerificationReport::new("flow_period_shift", shift, FLOW_TOL, meta),
        ])
    }

    fn sandwich(&self, path: &NoisePath, meta: ReportMeta) -> Result<Vec<VerificationReport>> {
        let opts = SandwichOptions {
            n: 2,
            m_max: self.m_max(),
            k_iters: SANDWICH_LEVELS,
            tail_periods: self.cfg.tail_periods,
            x: vec![0.0; self.spec.dim()],
            memory_coefficient: None,
        };
        let r = iterate_envelope_sandwich(self.spec, path, (0, self.cfg.steps_per_period as i64), &opts)?;
        let lower = r.levels.iter().map(|l| l.lower_violation).fold(f64::NEG_INFINITY, f64::max);
        let upper = r.levels.iter().map(|l| l.upper_violation).fold(f64::NEG_INFINITY, f64::max);
        let last_gap = r.levels.last().map_or(f64::NAN, |l| l.gap);
        Ok(vec![
            VerificationReport::new("sandwich_lower", lower, 0.0, meta),
            VerificationReport::new("sandwich_upper", upper, 0.0, meta),
            VerificationReport::new("sandwich_ratio", r.max_ratio(), r.contraction_bound.powi(2) + RATIO_SLACK, meta)
                .with_note(format!("gap after k = {SANDWICH_LEVELS}: {last_gap:.3e}")),
        ])
    }
}

/// Runs the selected check groups on every ensemble member plus the
/// ensemble-level checks.
pub fn run_verify(cfg: &RunConfig, checks: &[CheckGroup]) -> Result<VerifySummary> {
    cfg.validate()?;
    let sys = resolve_system(cfg)?;
    verify_system(&sys, cfg, checks)
}

pub fn verify_system(sys: &ResolvedSystem, cfg: &RunConfig, checks: &[CheckGroup]) -> Result<VerifySummary> {
    let ctx = VerifyContext { spec: &sys.spec, cfg, model: sys.tolerance, checks };
    let spec = &sys.spec;
    let dt = spec.period / cfg.steps_per_period as f64;
    let meta = ReportMeta { dt, tail_periods: cfg.tail_periods, n_max: cfg.n_max, seed: cfg.seed, stream_id: 0 };
    let mut reports = Vec::new();

    if ctx.wants(CheckGroup::Spec) {
        let v = validate_spec(spec, 2000, cfg.seed);
        for c in &v.checks {
            let mut r = VerificationReport::new(format!("spec_{}", c.name), c.worst, 0.0, meta);
            r.pass = c.pass;
            reports.push(r);
        }
    }

    let outcomes: Vec<Result<StreamOutcome>> = (0..cfg.ensemble as u64).into_par_iter().map(|s| ctx.stream(s)).collect();
    let mut pullbacks = Vec::new();
    for o in outcomes {
        let o = o?;
        reports.extend(o.reports);
        pullbacks.extend(o.pullback);
    }
    if !pullbacks.is_empty() {
        reports.push(pullback_monotonicity(&pullbacks, ctx.tolerance(cfg.tail_periods.min(cfg.n_max)), meta)?);
        reports.push(pullback_rate(&pullbacks, meta)?);
    }

    if ctx.wants(CheckGroup::Ou) && sys.drift_is_zero {
        reports.extend(ou_moment_oracle(spec, cfg.ensemble.max(2), cfg.steps_per_period, cfg.tail_periods, cfg.seed)?);
    }
    Ok(VerifySummary { system: spec.name.clone(), reports })
}

/// Writes `reports.csv`, `summary.txt` and the effective `config.toml`.
pub fn write_verify(summary: &VerifySummary, cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    write_reports(fs::File::create(out_dir.join("reports.csv"))?, &summary.reports)?;
    fs::write(out_dir.join("summary.txt"), summary.render())?;
    fs::write(out_dir.join("config.toml"), cfg.to_toml()?)?;
    Ok(())
}

/// Grid of the refinement sweep.
pub const SWEEP_STEPS: [usize; 4] = [128, 256, 512, 1024];
pub const SWEEP_TAILS: [usize; 3] = [4, 6, 8];
const SWEEP_PATHS: usize = 8;
/// Factor between the largest observed residual and the fitted tolerance.
pub const SWEEP_SAFETY: f64 = 10.0;
const SWEEP_CHECKS: [&str; 5] = ["invariance", "periodicity", "cross_route", "pullback_limit", "pullback_x_independence"];

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub steps_per_period: usize,
    pub tail_periods: usize,
    pub tol: f64,
    pub check: String,
    /// Largest residual over the sweep paths.
    pub residual: f64,
    /// `e^{λ·M·T}`.
    pub tail_term: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSummary {
    pub system: String,
    pub rows: Vec<SweepRow>,
    pub fitted: ToleranceModel,
    /// Log-log slope of residual against dt at the configured tail and tol.
    pub dt_slopes: Vec<(String, Option<f64>)>,
}

/// Smallest coefficients (times [`SWEEP_SAFETY`]) such that each row is
/// covered by its dominant term: `c_tail·e^{λMT}` where the tail term
/// exceeds the iteration tolerance, `c_iter·tol` elsewhere. No residual in
/// the sweep grows with dt, so `c_dt` stays zero.
pub fn fit_tolerance(rows: &[SweepRow]) -> ToleranceModel {
    let mut c_tail: f64 = 0.0;
    let mut c_iter: f64 = 0.0;
    for r in rows {
        if r.tail_term >= r.tol {
            c_tail = c_tail.max(r.residual / r.tail_term);
        } else {
            c_iter = c_iter.max(r.residual / r.tol);
        }
    }
    ToleranceModel::new(0.0, SWEEP_SAFETY * c_tail, SWEEP_SAFETY * c_iter)
}

/// dt and tail refinement at two iteration tolerances (`tol` and `tol/100`)
/// on the first few ensemble members; fits a [`ToleranceModel`].
pub fn run_sweep(cfg: &RunConfig) -> Result<SweepSummary> {
    cfg.validate()?;
    let sys = resolve_system(cfg)?;
    let checks = [CheckGroup::Invariance, CheckGroup::Periodicity, CheckGroup::Pullback, CheckGroup::CrossRoute];
    let mut settings = Vec::new();
    for &spp in &SWEEP_STEPS {
        for &tail in &SWEEP_TAILS {
            for tol in [cfg.tol, cfg.tol / 100.0] {
                settings.push((spp, tail, tol));
            }
        }
    }
    let rows: Vec<Vec<SweepRow>> = settings
        .par_iter()
        .map(|&(spp, tail, tol)| {
            let run = RunConfig {
                steps_per_period: spp,
                tail_periods: tail,
                n_max: tail,
                tol,
                ensemble: cfg.ensemble.min(SWEEP_PATHS),
                ..cfg.clone()
            };
            let ctx = VerifyContext { spec: &sys.spec, cfg: &run, model: sys.tolerance, checks: &checks };
            let mut worst: BTreeMap<String, f64> = BTreeMap::new();
            for stream in 0..run.ensemble as u64 {
                for r in ctx.stream(stream)?.reports {
                    let e = worst.entry(r.check).or_insert(0.0);
                    *e = e.max(r.residual);
                }
            }
            let tail_term = (sys.spec.lambda * tail as f64 * sys.spec.period).exp();
            Ok(SWEEP_CHECKS
                .iter()
                .filter_map(|c| worst.get(*c).map(|r| (c, *r)))
                .map(|(c, residual)| SweepRow { steps_per_period: spp, tail_periods: tail, tol, check: c.to_string(), residual, tail_term })
                .collect())
        })
        .collect::<Result<_>>()?;
    let rows: Vec<SweepRow> = rows.into_iter().flatten().collect();
    let fitted = fit_tolerance(&rows);
    let dt_slopes = SWEEP_CHECKS
        .iter()
        .map(|c| {
            let pts: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.check == *c && r.tail_periods == cfg.tail_periods && r.tol == cfg.tol)
                .map(|r| (sys.spec.period / r.steps_per_period as f64, r.residual))
                .collect();
            (c.to_string(), refinement_slope(&pts))
        })
        .collect();
    Ok(SweepSummary { system: sys.spec.name.clone(), rows, fitted, dt_slopes })
}

impl SweepSummary {
    pub fn render(&self) -> String {
        let mut s = format!("system: {}\n", self.system);
        let _ = writeln!(
            s,
            "fitted tolerance: c_dt = {:e}, c_tail = {:.4e}, c_iter = {:.4e}",
            self.fitted.c_dt, self.fitted.c_tail, self.fitted.c_iter
        );
        for (c, slope) in &self.dt_slopes {
            match slope {
                Some(v) => {
                    let _ = writeln!(s, "dt slope {c:<24} {v:+.3}");
                }
                None => {
                    let _ = writeln!(s, "dt slope {c:<24} n/a");
                }
            }
        }
        s
    }
}

pub fn write_sweep(summary: &SweepSummary, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let rows: Vec<Vec<String>> = summary
        .rows
        .iter()
        .map(|r| {
            vec![
                r.steps_per_period.to_string(),
                r.tail_periods.to_string(),
                fmt_f64(r.tol),
                r.check.clone(),
                fmt_f64(r.residual),
                fmt_f64(r.tail_term),
            ]
        })
        .collect();
    write_table(
        fs::File::create(out_dir.join("sweep.csv"))?,
        &["steps_per_period", "tail_periods", "tol", "check", "residual", "tail_term"],
        &rows,
    )?;
    fs::write(out_dir.join("sweep.txt"), summary.render())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(name: &str) -> RunConfig {
        RunConfig { steps_per_period: 64, ensemble: 2, tol: 1e-10, ..RunConfig::for_preset(name) }
    }

    #[test]
    fn parse_check_lists() {
        assert_eq!(parse_checks("flow").unwrap(), vec![CheckGroup::Flow]);
        assert_eq!(parse_checks("pullback, flow,flow").unwrap(), vec![CheckGroup::Flow, CheckGroup::Pullback]);
        assert_eq!(parse_checks("all").unwrap().len(), 9);
        assert!(parse_checks("flows").is_err());
    }

    #[test]
    fn flow_only_verify() {
        let s = run_verify(&small("example_5_2"), &[CheckGroup::Flow]).unwrap();
        assert!(s.reports.iter().all(|r| r.check.starts_with("flow_")));
        assert_eq!(s.reports.len(), 4);
        assert!(s.all_pass(), "{}", s.render());
    }

    #[test]
    fn refusal_is_a_failing_report() {
        let s = run_verify(&small("no_small_gain"), &[CheckGroup::FixedPoint]).unwrap();
        assert!(!s.all_pass());
        assert!(s.reports.iter().any(|r| r.note.as_deref() == Some("refused: no contraction")));
    }

    #[test]
    fn fit_covers_rows() {
        let rows = vec![
            SweepRow { steps_per_period: 64, tail_periods: 4, tol: 1e-8, check: "a".into(), residual: 2e-6, tail_term: 1e-5 },
            SweepRow { steps_per_period: 64, tail_periods: 8, tol: 1e-8, check: "a".into(), residual: 3e-8, tail_term: 1e-12 },
        ];
        let m = fit_tolerance(&rows);
        assert!((m.c_tail - 2.0).abs() < 1e-12 && (m.c_iter - 30.0).abs() < 1e-9);
    }
}
