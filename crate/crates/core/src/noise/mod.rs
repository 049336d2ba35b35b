//! Two-sided discretized Wiener paths, the exact Wiener shift θ_{kT}, and the
//! truncated stochastic convolution `∫ Φ(t−s)σ(s) dW_s`.
//!
//! Grid times are addressed by integer steps `n`, with `t = n·dt`. The period
//! `T` is always `steps_per_period · dt`, so shifting by whole periods is pure
//! index arithmetic.

mod dump;
mod rng;

pub use dump::{read_path, write_path};

use crate::error::{Error, Result};
use crate::linalg::{expm_scaled, Matrix};
use crate::system::DiffusionFn;

/// Uniform grid over `[first_step·dt, last_step·dt]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    dt: f64,
    steps_per_period: usize,
    /// Array index of `t = 0`; always inside `0..n_points`.
    origin_index: i64,
    n_points: usize,
}

impl TimeGrid {
    /// Grid over the steps `first_step ..= last_step` with `dt = period / steps_per_period`.
    pub fn new(period: f64, steps_per_period: usize, first_step: i64, last_step: i64) -> Result<Self> {
        if !(period > 0.0) || !period.is_finite() {
            return Err(Error::InvalidParameter(format!("period must be positive, got {period}")));
        }
        Self::with_dt(period / steps_per_period as f64, steps_per_period, first_step, last_step)
    }

    pub(crate) fn with_dt(dt: f64, steps_per_period: usize, first_step: i64, last_step: i64) -> Result<Self> {
        if steps_per_period == 0 || !(dt > 0.0) {
            return Err(Error::InvalidParameter("steps_per_period and dt must be positive".into()));
        }
        if last_step <= first_step {
            return Err(Error::Window(format!("empty grid [{first_step}, {last_step}]")));
        }
        if first_step > 0 || last_step < 0 {
            return Err(Error::Window(format!("grid [{first_step}, {last_step}] must contain t = 0")));
        }
        Ok(Self {
            dt,
            steps_per_period,
            origin_index: -first_step,
            n_points: (last_step - first_step + 1) as usize,
        })
    }

    /// Grid covering `[lo_periods·T, hi_periods·T]`.
    pub fn covering_periods(period: f64, steps_per_period: usize, lo_periods: i64, hi_periods: i64) -> Result<Self> {
        let s = steps_per_period as i64;
        Self::new(period, steps_per_period, lo_periods * s, hi_periods * s)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps_per_period(&self) -> usize {
        self.steps_per_period
    }

    pub fn period(&self) -> f64 {
        self.steps_per_period as f64 * self.dt
    }

    pub fn origin_index(&self) -> i64 {
        self.origin_index
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn first_step(&self) -> i64 {
        -self.origin_index
    }

    pub fn last_step(&self) -> i64 {
        self.first_step() + self.n_points as i64 - 1
    }

    pub fn time(&self, step: i64) -> f64 {
        step as f64 * self.dt
    }

    /// Step index of a grid time; times more than `1e-9·dt` off the grid
    /// are rejected.
    pub fn step_of(&self, t: f64) -> Result<i64> {
        step_of(t, self.dt)
    }
}

pub(crate) fn step_of(t: f64, dt: f64) -> Result<i64> {
    let k = (t / dt).round();
    if !t.is_finite() || (t - k * dt).abs() > 1e-9 * dt {
        return Err(Error::OffGrid { t, dt });
    }
    Ok(k as i64)
}

/// Read access to a discretized two-sided Wiener path.
///
/// `increment(n)` is `W((n+1)dt) − W(n dt)`, valid for
/// `first_step() <= n < last_step()`.
pub trait WienerPath: Sync {
    fn dt(&self) -> f64;
    fn steps_per_period(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn first_step(&self) -> i64;
    fn last_step(&self) -> i64;
    fn increment(&self, n: i64) -> &[f64];
    /// `W(n dt)`, with `W(0) = 0`.
    fn value(&self, n: i64) -> Vec<f64>;
    /// Identifier of the ensemble member (the RNG stream).
    fn path_id(&self) -> u64;

    fn period(&self) -> f64 {
        self.steps_per_period() as f64 * self.dt()
    }

    fn time(&self, n: i64) -> f64 {
        n as f64 * self.dt()
    }

    /// Errors unless every cell of `[from, to]` lies inside the path.
    fn require_cells(&self, from: i64, to: i64) -> Result<()> {
        if from < self.first_step() || to > self.last_step() {
            return Err(Error::Window(format!(
                "steps [{from}, {to}] fall outside the path window [{}, {}]",
                self.first_step(),
                self.last_step()
            )));
        }
        Ok(())
    }
}

/// Sampled path realizing one ω. Immutable after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisePath {
    grid: TimeGrid,
    m: usize,
    /// `(n_points − 1) × m`, cell-major.
    increments: Vec<f64>,
    /// `n_points × m` cumulative values.
    values: Vec<f64>,
    seed: u64,
    stream_id: u64,
}

/// Draws the increments of a path. Each increment is a function of
/// `(seed, stream_id, absolute cell index, component)` only, so paths over
/// overlapping windows agree on their common cells.
pub fn sample_path(grid: TimeGrid, m: usize, seed: u64, stream_id: u64) -> Result<NoisePath> {
    if m == 0 {
        return Err(Error::InvalidParameter("noise dimension must be at least 1".into()));
    }
    let cells = grid.n_points() - 1;
    let mut increments = vec![0.0; cells * m];
    let sd = grid.dt().sqrt();
    rng::fill_standard_normals(seed, stream_id, grid.first_step(), m, &mut increments);
    for v in &mut increments {
        *v *= sd;
    }
    Ok(NoisePath::from_increments(grid, m, increments, seed, stream_id))
}

impl NoisePath {
    pub(crate) fn from_increments(grid: TimeGrid, m: usize, increments: Vec<f64>, seed: u64, stream_id: u64) -> Self {
        let n = grid.n_points();
        let mut values = vec![0.0; n * m];
        let origin = grid.origin_index();
        let o = origin as usize;
        for k in o + 1..n {
            for l in 0..m {
                values[k * m + l] = values[(k - 1) * m + l] + increments[(k - 1) * m + l];
            }
        }
        for k in (0..o).rev() {
            for l in 0..m {
                values[k * m + l] = values[(k + 1) * m + l] - increments[k * m + l];
            }
        }
        Self { grid, m, increments, values, seed, stream_id }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// θ_{kT}: the view `W(· + kT) − W(kT)` over the same storage.
    pub fn shift_by_periods(&self, k: i64) -> Result<ShiftedView<'_>> {
        ShiftedView::new(self, k * self.grid.steps_per_period() as i64)
    }

    /// Sums blocks of `factor` increments: the same Brownian path on a grid
    /// with step `factor·dt`.
    pub fn coarsen(&self, factor: usize) -> Result<NoisePath> {
        let f = factor as i64;
        if factor == 0 || self.grid.steps_per_period() % factor != 0 {
            return Err(Error::InvalidParameter(format!(
                "coarsening factor {factor} must divide steps_per_period {}",
                self.grid.steps_per_period()
            )));
        }
        let (first, last) = (self.grid.first_step(), self.grid.last_step());
        if first.rem_euclid(f) != 0 || last.rem_euclid(f) != 0 {
            return Err(Error::Window("path window is not aligned with the coarsening factor".into()));
        }
        let grid = TimeGrid::new(self.grid.period(), self.grid.steps_per_period() / factor, first / f, last / f)?;
        let m = self.m;
        let cells = grid.n_points() - 1;
        let mut inc = vec![0.0; cells * m];
        for c in 0..cells {
            for j in 0..factor {
                let src = (c * factor + j) * m;
                for l in 0..m {
                    inc[c * m + l] += self.increments[src + l];
                }
            }
        }
        Ok(NoisePath::from_increments(grid, m, inc, self.seed, self.stream_id))
    }

    fn cell_offset(&self, n: i64) -> usize {
        (n - self.grid.first_step()) as usize * self.m
    }
}

impl WienerPath for NoisePath {
    fn dt(&self) -> f64 {
        self.grid.dt()
    }

    fn steps_per_period(&self) -> usize {
        self.grid.steps_per_period()
    }

    fn noise_dim(&self) -> usize {
        self.m
    }

    fn first_step(&self) -> i64 {
        self.grid.first_step()
    }

    fn last_step(&self) -> i64 {
        self.grid.last_step()
    }

    #[inline]
    fn increment(&self, n: i64) -> &[f64] {
        let o = self.cell_offset(n);
        &self.increments[o..o + self.m]
    }

    fn value(&self, n: i64) -> Vec<f64> {
        let o = self.cell_offset(n);
        self.values[o..o + self.m].to_vec()
    }

    fn path_id(&self) -> u64 {
        self.stream_id
    }
}

/// Read-only alias of a path shifted by a whole number of periods.
#[derive(Clone, Copy, Debug)]
pub struct ShiftedView<'a> {
    base: &'a NoisePath,
    shift_steps: i64,
}

impl<'a> ShiftedView<'a> {
    fn new(base: &'a NoisePath, shift_steps: i64) -> Result<Self> {
        if shift_steps < base.first_step() || shift_steps > base.last_step() {
            return Err(Error::Window(format!(
                "shift of {shift_steps} steps leaves the path window [{}, {}]",
                base.first_step(),
                base.last_step()
            )));
        }
        Ok(Self { base, shift_steps })
    }

    pub fn base(&self) -> &'a NoisePath {
        self.base
    }

    pub fn shift_steps(&self) -> i64 {
        self.shift_steps
    }

    /// θ_{kT} ∘ θ_{shift}, again a view of the same base path.
    pub fn shift_by_periods(&self, k: i64) -> Result<ShiftedView<'a>> {
        ShiftedView::new(self.base, self.shift_steps + k * self.base.steps_per_period() as i64)
    }
}

impl WienerPath for ShiftedView<'_> {
    fn dt(&self) -> f64 {
        self.base.dt()
    }

    fn steps_per_period(&self) -> usize {
        self.base.steps_per_period()
    }

    fn noise_dim(&self) -> usize {
        self.base.noise_dim()
    }

    fn first_step(&self) -> i64 {
        self.base.first_step() - self.shift_steps
    }

    fn last_step(&self) -> i64 {
        self.base.last_step() - self.shift_steps
    }

    #[inline]
    fn increment(&self, n: i64) -> &[f64] {
        self.base.increment(n + self.shift_steps)
    }

    fn value(&self, n: i64) -> Vec<f64> {
        let w = self.base.value(n + self.shift_steps);
        let w0 = self.base.value(self.shift_steps);
        w.iter().zip(&w0).map(|(a, b)| a - b).collect()
    }

    fn path_id(&self) -> u64 {
        self.base.path_id()
    }
}

/// Truncated stochastic convolution at one grid time.
#[derive(Clone, Debug, PartialEq)]
pub struct Convolution {
    pub value: Vec<f64>,
    /// Six-standard-deviation envelope of the neglected part `∫_{-∞}^{t-MT}`,
    /// per component in max-norm.
    pub tail_bound: f64,
}

/// Six standard deviations of the Gaussian tail `∫_{-∞}^{t-τ} Φ(t−s)σ(s)dW_s`
/// under `‖Φ(t)‖ ≤ e^{λt}`: each component has variance at most
/// `m d² sup‖σ‖² e^{2λτ} / (−2λ)`.
pub fn convolution_tail_bound(d: usize, m: usize, sigma_sup: f64, lambda: f64, horizon: f64) -> f64 {
    6.0 * (m as f64).sqrt() * d as f64 * sigma_sup * (lambda * horizon).exp() / (-2.0 * lambda).sqrt()
}

/// `Σ_j Φ(t − s_j)σ(s_j)ΔW_j` over the cells of `[t − tail_periods·T, t]`,
/// left-endpoint (Itô) rule, with Φ(t − s_j) realized as powers of the
/// one-step propagator `exp(dt·A)`.
pub fn stochastic_convolution<P: WienerPath + ?Sized>(
    a: &Matrix,
    lambda: f64,
    sigma: &DiffusionFn,
    path: &P,
    t_step: i64,
    tail_periods: usize,
) -> Result<Convolution> {
    if !a.is_square() {
        return Err(Error::NotSquare { rows: a.rows(), cols: a.cols() });
    }
    if lambda >= 0.0 {
        return Err(Error::NonNegativeRate(lambda));
    }
    let d = a.rows();
    let m = path.noise_dim();
    let span = tail_periods as i64 * path.steps_per_period() as i64;
    let from = t_step - span;
    path.require_cells(from, t_step)?;

    let one_step = expm_scaled(a, path.dt())?;
    let mut sig = vec![0.0; d * m];
    let mut acc = vec![0.0; d];
    let mut tmp = vec![0.0; d];
    for j in from..t_step {
        sigma(path.time(j), &mut sig);
        let dw = path.increment(j);
        for (i, t) in tmp.iter_mut().enumerate() {
            let row = &sig[i * m..(i + 1) * m];
            *t = acc[i] + row.iter().zip(dw).map(|(s, w)| s * w).sum::<f64>();
        }
        one_step.mul_vec_into(&tmp, &mut acc);
    }
    let sigma_sup = sup_sigma(sigma, d, m, path.period());
    Ok(Convolution {
        value: acc,
        tail_bound: convolution_tail_bound(d, m, sigma_sup, lambda, span as f64 * path.dt()),
    })
}

/// `max_t max_ij |σ_ij(t)|` sampled at 1024 points of one period.
pub fn sup_sigma(sigma: &DiffusionFn, d: usize, m: usize, period: f64) -> f64 {
    let mut buf = vec![0.0; d * m];
    let mut sup: f64 = 0.0;
    for k in 0..1024 {
        sigma(period * k as f64 / 1024.0, &mut buf);
        sup = buf.iter().fold(sup, |s, v| s.max(v.abs()));
    }
    sup
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn grid(steps: usize, lo: i64, hi: i64) -> TimeGrid {
        TimeGrid::covering_periods(1.0, steps, lo, hi).unwrap()
    }

    fn unit_sigma() -> DiffusionFn {
        Arc::new(|_t, out: &mut [f64]| out.fill(1.0))
    }

    #[test]
    fn origin_value_is_zero() {
        for seed in [0, 1, 99] {
            let p = sample_path(grid(64, -3, 2), 2, seed, 4).unwrap();
            assert_eq!(p.value(0), vec![0.0, 0.0]);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_path(grid(64, -2, 2), 3, 11, 5).unwrap();
        let b = sample_path(grid(64, -2, 2), 3, 11, 5).unwrap();
        assert_eq!(a.increments(), b.increments());
        let c = sample_path(grid(64, -2, 2), 3, 11, 6).unwrap();
        assert_ne!(a.increments(), c.increments());
    }

    #[test]
    fn overlapping_windows_share_increments() {
        let wide = sample_path(grid(32, -5, 3), 2, 7, 1).unwrap();
        let narrow = sample_path(grid(32, -1, 1), 2, 7, 1).unwrap();
        for n in narrow.first_step()..narrow.last_step() {
            assert_eq!(wide.increment(n), narrow.increment(n));
            assert_eq!(wide.value(n), narrow.value(n));
        }
    }

    #[test]
    fn values_accumulate_increments() {
        let p = sample_path(grid(16, -2, 2), 1, 3, 0).unwrap();
        for n in p.first_step()..p.last_step() {
            let dw = p.value(n + 1)[0] - p.value(n)[0];
            assert!((dw - p.increment(n)[0]).abs() < 1e-14);
        }
    }

    #[test]
    fn shift_identities() {
        let p = sample_path(grid(16, -4, 4), 2, 3, 0).unwrap();
        let id = p.shift_by_periods(0).unwrap();
        for n in p.first_step()..=p.last_step() {
            assert_eq!(id.value(n), p.value(n));
        }
        let one = p.shift_by_periods(1).unwrap();
        assert_eq!(one.value(0), vec![0.0, 0.0]);
        let twice = one.shift_by_periods(1).unwrap();
        let two = p.shift_by_periods(2).unwrap();
        assert_eq!(twice.first_step(), two.first_step());
        for n in two.first_step()..two.last_step() {
            assert_eq!(twice.increment(n), two.increment(n));
            assert_eq!(twice.value(n), two.value(n));
        }
        for n in one.first_step()..one.last_step() {
            assert_eq!(one.increment(n), p.increment(n + 16));
        }
        assert!(p.shift_by_periods(5).is_err());
        assert!(p.shift_by_periods(-5).is_err());
    }

    #[test]
    fn off_grid_times_rejected() {
        let g = grid(64, -1, 1);
        assert_eq!(g.step_of(0.25).unwrap(), 16);
        assert!(g.step_of(0.2501).is_err());
    }

    #[test]
    fn coarsen_sums_blocks() {
        let fine = sample_path(grid(64, -1, 1), 1, 2, 0).unwrap();
        let coarse = fine.coarsen(8).unwrap();
        assert_eq!(coarse.grid().steps_per_period(), 8);
        for n in coarse.first_step()..=coarse.last_step() {
            assert!((coarse.value(n)[0] - fine.value(8 * n)[0]).abs() < 1e-13);
        }
        assert!(fine.coarsen(3).is_err());
    }

    #[test]
    fn increments_have_unit_rate_moments() {
        let dt_steps = 256;
        let p = sample_path(grid(dt_steps, -20, 20), 1, 42, 0).unwrap();
        let inc = p.increments();
        let n = inc.len() as f64;
        let dt = 1.0 / dt_steps as f64;
        let mean = inc.iter().sum::<f64>() / n;
        let var = inc.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() <= 4.0 * (dt / n).sqrt());
        assert!((var / dt - 1.0).abs() <= 0.05);
    }

    #[test]
    fn zero_sigma_gives_zero_convolution() {
        let p = sample_path(grid(64, -9, 1), 1, 1, 0).unwrap();
        let a = Matrix::diag(&[-1.0]);
        let zero: DiffusionFn = Arc::new(|_t, out: &mut [f64]| out.fill(0.0));
        let c = stochastic_convolution(&a, -1.0, &zero, &p, 0, 8).unwrap();
        assert_eq!(c.value, vec![0.0]);
    }

    #[test]
    fn convolution_linear_in_sigma() {
        let p = sample_path(grid(64, -9, 1), 2, 1, 0).unwrap();
        let a = Matrix::from_rows(&[[-1.0, 0.5], [0.2, -2.0]]).unwrap();
        let s1: DiffusionFn = Arc::new(|t, out: &mut [f64]| {
            out.copy_from_slice(&[t.cos(), 0.3, -0.1, 1.0]);
        });
        let s2: DiffusionFn = Arc::new(|t, out: &mut [f64]| {
            out.copy_from_slice(&[2.0 * t.cos(), 0.6, -0.2, 2.0]);
        });
        let c1 = stochastic_convolution(&a, -0.5, &s1, &p, 64, 8).unwrap();
        let c2 = stochastic_convolution(&a, -0.5, &s2, &p, 64, 8).unwrap();
        for (x, y) in c1.value.iter().zip(&c2.value) {
            assert_eq!(2.0 * x, *y);
        }
    }

    #[test]
    fn insufficient_window_rejected() {
        let p = sample_path(grid(64, -3, 1), 1, 1, 0).unwrap();
        let a = Matrix::diag(&[-1.0]);
        assert!(matches!(
            stochastic_convolution(&a, -1.0, &unit_sigma(), &p, 0, 8),
            Err(Error::Window(_))
        ));
    }

    #[test]
    fn tail_increments_stay_within_reported_bound() {
        let a = Matrix::from_rows(&[[-1.0, 0.5], [0.5, -1.0]]).unwrap();
        let lambda = -0.5;
        let sig: DiffusionFn = Arc::new(|t, out: &mut [f64]| out.copy_from_slice(&[t.sin(), 0.0, 0.0, 1.0]));
        for stream in 0..50 {
            let p = sample_path(grid(64, -12, 1), 2, 8, stream).unwrap();
            for tail in [2usize, 4, 6] {
                let short = stochastic_convolution(&a, lambda, &sig, &p, 0, tail).unwrap();
                let long = stochastic_convolution(&a, lambda, &sig, &p, 0, tail + 4).unwrap();
                let diff = crate::linalg::max_norm_diff(&short.value, &long.value);
                assert!(diff <= short.tail_bound, "stream {stream} tail {tail}: {diff} > {}", short.tail_bound);
            }
        }
    }

    #[test]
    fn scalar_ou_stationary_moments() {
        // Var ∫_{-∞}^0 e^{s} dW_s = 1/2.
        let a = Matrix::diag(&[-1.0]);
        let n = 10_000;
        let vals: Vec<f64> = (0..n)
            .map(|s| {
                let p = sample_path(grid(256, -8, 0), 1, 2024, s).unwrap();
                stochastic_convolution(&a, -1.0, &unit_sigma(), &p, 0, 8).unwrap().value[0]
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() <= 3.0 * (var / n as f64).sqrt(), "mean {mean}");
        assert!((var / 0.5 - 1.0).abs() <= 0.05, "var {var}");
    }
}
