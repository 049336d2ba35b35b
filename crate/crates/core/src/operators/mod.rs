//! The input-to-state operator K, the gain operator K^h = h(·, K(·)), and
//! the Picard iteration for the fixed point `u = K^h(u)`.
//!
//! On a window of grid steps `[start, end]` the operator is
//!
//! ```text
//! K(u)(t_k) = Σ_{j=k−L}^{k−1} Φ(dt)^{k−j} (u_j·dt + σ(t_j)·ΔW_j),   L = tail_periods · steps_per_period
//! ```
//!
//! i.e. the left-endpoint quadrature of `∫_{t−MT}^{t} Φ(t−s)(u(s)ds + σ(s)dW_s)`
//! with the same propagator powers the flow integrator uses. Near the left
//! edge of the window the sum is clipped at `start`; only steps from
//! `start + L` on see the full truncation horizon (the reliable zone).
//!
//! The sums are evaluated by the running recursion
//! `S_{k+1} = Φ(dt)(S_k + v_k)` and the identity
//! `K(u)_k = S_k − Φ(dt)^L S_{k−L}`, so one application costs O(window·d²).

mod process;
mod sandwich;

pub use process::{GridProcess, ProcessTag};
pub use sandwich::{iterate_envelope_sandwich, SandwichLevel, SandwichOptions, SandwichReport};

use crate::error::{Error, Result};
use crate::linalg::{expm_scaled, Matrix};
use crate::noise::{convolution_tail_bound, sup_sigma, WienerPath};
use crate::system::SystemSpec;

/// Lipschitz constant of K^h in the sup metric: `−L·d²/λ`.
pub fn contraction_bound(lipschitz: f64, lambda: f64, d: usize) -> Result<f64> {
    if !(lambda < 0.0) {
        return Err(Error::NonNegativeRate(lambda));
    }
    if !(lipschitz >= 0.0) || d == 0 {
        return Err(Error::InvalidParameter(format!("need L >= 0 and d >= 1, got L = {lipschitz}, d = {d}")));
    }
    Ok(-lipschitz * (d * d) as f64 / lambda)
}

/// K bound to one system, one path and one window of steps. The stochastic
/// convolution does not depend on the input and is computed once.
pub struct KOperator<'a, P: WienerPath + ?Sized> {
    spec: &'a SystemSpec,
    path: &'a P,
    tail_periods: usize,
    lag: i64,
    one_step: Matrix,
    far: Matrix,
    start: i64,
    end: i64,
    noise: Vec<f64>,
}

impl<'a, P: WienerPath + ?Sized> KOperator<'a, P> {
    pub fn new(spec: &'a SystemSpec, path: &'a P, tail_periods: usize, start: i64, end: i64) -> Result<Self> {
        if tail_periods == 0 {
            return Err(Error::InvalidParameter("tail_periods must be at least 1".into()));
        }
        if end < start {
            return Err(Error::Window(format!("empty operator window [{start}, {end}]")));
        }
        if path.noise_dim() != spec.noise_dim {
            return Err(Error::Dimension(format!(
                "path has {} noise components, system expects {}",
                path.noise_dim(),
                spec.noise_dim
            )));
        }
        path.require_cells(start, end)?;
        let lag = tail_periods as i64 * path.steps_per_period() as i64;
        let one_step = expm_scaled(&spec.a, path.dt())?;
        let far = one_step.powi(lag as u64)?;
        let mut op = Self { spec, path, tail_periods, lag, one_step, far, start, end, noise: Vec::new() };

        let d = spec.dim();
        let m = spec.noise_dim;
        let mut sig = vec![0.0; d * m];
        op.noise = op.sliding_sum(|k, v| {
            (spec.sigma)(path.time(k), &mut sig);
            let dw = path.increment(k);
            for (i, vi) in v.iter_mut().enumerate() {
                *vi = sig[i * m..(i + 1) * m].iter().zip(dw).map(|(a, b)| a * b).sum();
            }
        });
        Ok(op)
    }

    pub fn start(&self) -> i64 {
        self.start
    }

    pub fn end(&self) -> i64 {
        self.end
    }

    pub fn tail_periods(&self) -> usize {
        self.tail_periods
    }

    /// First step whose sum spans the full truncation horizon.
    pub fn reliable_start(&self) -> i64 {
        self.start + self.lag
    }

    pub fn spec(&self) -> &SystemSpec {
        self.spec
    }

    pub fn path(&self) -> &P {
        self.path
    }

    /// Bound on the neglected deterministic part `∫_{-∞}^{t−MT} Φ(t−s)u(s)ds`
    /// for `u ∈ [0, N]`: `d·max N·e^{λMT}/(−λ)`.
    pub fn deterministic_tail_bound(&self) -> f64 {
        let horizon = self.lag as f64 * self.path.dt();
        self.spec.dim() as f64 * self.spec.max_drift_bound() * (self.spec.lambda * horizon).exp() / -self.spec.lambda
    }

    /// Six-sigma envelope of the neglected stochastic tail.
    pub fn stochastic_tail_bound(&self) -> f64 {
        let d = self.spec.dim();
        let m = self.spec.noise_dim;
        let s = sup_sigma(&self.spec.sigma, d, m, self.spec.period);
        convolution_tail_bound(d, m, s, self.spec.lambda, self.lag as f64 * self.path.dt())
    }

    /// The stochastic convolution on the window (`K(0)`).
    pub fn noise_series(&self) -> &[f64] {
        &self.noise
    }

    /// Truncated sums `Σ_{j=max(k−L,start)}^{k−1} Φ^{k−j} v_j` for every `k`.
    fn sliding_sum(&self, mut input: impl FnMut(i64, &mut [f64])) -> Vec<f64> {
        let d = self.spec.dim();
        let len = (self.end - self.start + 1) as usize;
        let mut running = vec![0.0; len * d];
        let mut v = vec![0.0; d];
        let mut tmp = vec![0.0; d];
        for idx in 0..len - 1 {
            input(self.start + idx as i64, &mut v);
            for i in 0..d {
                tmp[i] = running[idx * d + i] + v[i];
            }
            let (_, rest) = running.split_at_mut((idx + 1) * d);
            self.one_step.mul_vec_into(&tmp, &mut rest[..d]);
        }
        let lag = self.lag as usize;
        let mut out = running.clone();
        for idx in lag..len {
            self.far.mul_vec_into(&running[(idx - lag) * d..(idx - lag + 1) * d], &mut tmp);
            for i in 0..d {
                out[idx * d + i] -= tmp[i];
            }
        }
        out
    }

    fn check_input(&self, u: &GridProcess) -> Result<()> {
        if u.start() != self.start || u.end() != self.end {
            return Err(Error::Window(format!(
                "input window [{}, {}] differs from operator window [{}, {}]",
                u.start(),
                u.end(),
                self.start,
                self.end
            )));
        }
        if u.dim() != self.spec.dim() {
            return Err(Error::Dimension(format!("input has dimension {}, expected {}", u.dim(), self.spec.dim())));
        }
        Ok(())
    }

    /// Deterministic part `Σ Φ^{k−j} u_j dt` alone.
    pub fn deterministic_part(&self, u: &GridProcess) -> Result<Vec<f64>> {
        self.check_input(u)?;
        let dt = self.path.dt();
        Ok(self.sliding_sum(|k, v| {
            for (vi, ui) in v.iter_mut().zip(u.at(k)) {
                *vi = ui * dt;
            }
        }))
    }

    pub fn apply_k(&self, u: &GridProcess) -> Result<GridProcess> {
        let mut values = self.deterministic_part(u)?;
        for (y, n) in values.iter_mut().zip(&self.noise) {
            *y += n;
        }
        GridProcess::from_values(self.start, self.path.dt(), self.spec.dim(), values, self.path.path_id(), ProcessTag::SolutionY)
    }

    /// `K^h(u)(t) = h(t, K(u)(t))`.
    pub fn apply_gain(&self, u: &GridProcess) -> Result<GridProcess> {
        let y = self.apply_k(u)?;
        self.gain_of(&y)
    }

    /// `h(t, y(t))` for an already computed `y`.
    pub fn gain_of(&self, y: &GridProcess) -> Result<GridProcess> {
        let d = self.spec.dim();
        let mut out = vec![0.0; y.values().len()];
        for (k, v) in y.iter() {
            let o = (k - self.start) as usize * d;
            (self.spec.drift)(self.path.time(k), v, &mut out[o..o + d]);
        }
        GridProcess::from_values(self.start, self.path.dt(), d, out, self.path.path_id(), ProcessTag::InputU)
    }
}

/// `K(u)` on `u`'s window.
pub fn apply_k<P: WienerPath + ?Sized>(u: &GridProcess, spec: &SystemSpec, path: &P, tail_periods: usize) -> Result<GridProcess> {
    KOperator::new(spec, path, tail_periods, u.start(), u.end())?.apply_k(u)
}

/// `K^h(u)` on `u`'s window.
pub fn apply_gain<P: WienerPath + ?Sized>(u: &GridProcess, spec: &SystemSpec, path: &P, tail_periods: usize) -> Result<GridProcess> {
    KOperator::new(spec, path, tail_periods, u.start(), u.end())?.apply_gain(u)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FixedPointOptions {
    pub tail_periods: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Iterate even when the contraction bound is not below 1.
    pub force: bool,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self { tail_periods: 8, tol: 1e-8, max_iter: 200, force: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum InitialGuess {
    Zero,
    /// `u ≡ N`.
    Upper,
    Process(GridProcess),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixedPointResult {
    /// Fixed point on the extended window `[lo − MT, hi]`.
    pub u: GridProcess,
    /// `Y = K(u)` on the same window.
    pub y: GridProcess,
    pub iterations: usize,
    pub final_step_norm: f64,
    /// `‖u_{k+1} − u_k‖ / ‖u_k − u_{k−1}‖` per iteration.
    pub observed_ratios: Vec<f64>,
    pub contraction_bound: f64,
    /// False when the run was forced past a failed small-gain condition.
    pub guaranteed: bool,
    /// Lower edge of the requested window; steps before it are warm-up.
    pub reliable_start: i64,
    pub deterministic_tail_bound: f64,
    pub stochastic_tail_bound: f64,
}

/// Picard iteration `u_{k+1} = K^h(u_k)` on `[lo − tail·T, hi]` until the
/// sup-norm step drops to `tol`.
pub fn fixed_point_iterate<P: WienerPath + ?Sized>(
    spec: &SystemSpec,
    path: &P,
    window: (i64, i64),
    opts: &FixedPointOptions,
    u0: InitialGuess,
) -> Result<FixedPointResult> {
    let bound = contraction_bound(spec.lipschitz, spec.lambda, spec.dim())?;
    if bound >= 1.0 && !opts.force {
        return Err(Error::NoContraction { bound });
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {}", opts.tol)));
    }
    let (lo, hi) = window;
    let lag = opts.tail_periods as i64 * path.steps_per_period() as i64;
    let op = KOperator::new(spec, path, opts.tail_periods, lo - lag, hi)?;

    let d = spec.dim();
    let mut u = match u0 {
        InitialGuess::Zero => GridProcess::constant(op.start(), hi, path.dt(), &vec![0.0; d], path.path_id(), ProcessTag::InputU),
        InitialGuess::Upper => GridProcess::constant(op.start(), hi, path.dt(), &spec.drift_bound, path.path_id(), ProcessTag::InputU),
        InitialGuess::Process(p) => {
            if !p.within_bounds(&spec.drift_bound, 1e-12) {
                return Err(Error::InvalidParameter("initial guess leaves the order interval [0, N]".into()));
            }
            p
        }
    };

    let mut ratios = Vec::new();
    let mut prev_step: Option<f64> = None;
    for iteration in 1..=opts.max_iter {
        let next = op.apply_gain(&u)?;
        let step = next.sup_distance_common(&u)?;
        if let Some(p) = prev_step {
            if p > 0.0 {
                ratios.push(step / p);
            }
        }
        prev_step = Some(step);
        u = next;
        if step <= opts.tol {
            let y = op.apply_k(&u)?;
            return Ok(FixedPointResult {
                u,
                y,
                iterations: iteration,
                final_step_norm: step,
                observed_ratios: ratios,
                contraction_bound: bound,
                guaranteed: bound < 1.0,
                reliable_start: lo,
                deterministic_tail_bound: op.deterministic_tail_bound(),
                stochastic_tail_bound: op.stochastic_tail_bound(),
            });
        }
    }
    Err(Error::NotConverged { iterations: opts.max_iter, last_step: prev_step.unwrap_or(f64::NAN) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{sample_path, stochastic_convolution, NoisePath, TimeGrid};
    use crate::presets;
    use crate::system::{DiffusionFn, Monotonicity};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn path(spec: &SystemSpec, steps: usize, lo: i64, hi: i64, stream: u64) -> NoisePath {
        sample_path(TimeGrid::covering_periods(spec.period, steps, lo, hi).unwrap(), spec.noise_dim, 31, stream).unwrap()
    }

    #[test]
    fn preset_contraction_constants() {
        let l51 = (-3.0 + 5f64.sqrt()) / 2.0;
        let want = 1.0 / (2.0 * (3.0 - 5f64.sqrt()));
        assert!((contraction_bound(1.0 / 36.0, l51, 3).unwrap() - want).abs() < 1e-12);
        assert!((want - 0.654508).abs() < 1e-6);
        assert!((contraction_bound(1.0 / 16.0, -1.0, 3).unwrap() - 0.5625).abs() < 1e-12);
        let want53 = 9.0 / (16.0 * (2.0 - 2f64.sqrt()));
        assert!((contraction_bound(1.0 / 16.0, -2.0 + 2f64.sqrt(), 3).unwrap() - want53).abs() < 1e-12);
        assert!((want53 - 0.960248).abs() < 1e-6);
        assert!(matches!(contraction_bound(0.1, 0.0, 3), Err(Error::NonNegativeRate(_))));
    }

    #[test]
    fn zero_input_gives_stochastic_convolution() {
        let spec = presets::example_5_1();
        let p = path(&spec, 64, -10, 1, 2);
        let (lo, hi) = (-64, 64);
        let op = KOperator::new(&spec, &p, 8, lo - 8 * 64, hi).unwrap();
        let zero = GridProcess::constant(op.start(), hi, p.dt(), &[0.0; 3], 2, ProcessTag::InputU);
        let y = op.apply_k(&zero).unwrap();
        assert_eq!(y.values(), op.noise_series());
        // Independent route: direct Horner sum at a few reliable times.
        for t in [lo, 0, hi] {
            let direct = stochastic_convolution(&spec.a, spec.lambda, &spec.sigma, &p, t, 8).unwrap();
            assert!(crate::linalg::max_norm_diff(&direct.value, y.at(t)) < 1e-12);
        }
    }

    #[test]
    fn scalar_constant_input_geometric_sum() {
        // A = (−1), σ ≡ 0, u ≡ c: K(u) → c(1 − e^{−MT}) up to O(dt).
        let c = 0.8;
        let drift = Arc::new(move |_t: f64, _x: &[f64], out: &mut [f64]| out[0] = c);
        let sig: DiffusionFn = Arc::new(|_t, out: &mut [f64]| out[0] = 0.0);
        let spec = SystemSpec::new("scalar", Matrix::diag(&[-1.0]), drift, Monotonicity::OrderPreserving, vec![c], sig, 1.0, 1, -1.0, 0.0)
            .unwrap();
        let p = path(&spec, 256, -9, 1, 0);
        let u = GridProcess::constant(-9 * 256, 256, p.dt(), &[c], 0, ProcessTag::InputU);
        let y = apply_k(&u, &spec, &p, 8).unwrap();
        let dt = p.dt();
        // Exact discrete sum: c·dt·Σ_{k=1}^{L} e^{−k dt}.
        let q = (-dt).exp();
        let exact = c * dt * q * (1.0 - q.powi(8 * 256)) / (1.0 - q);
        for k in [-256, 0, 256] {
            assert!((y.at(k)[0] - exact).abs() < 1e-12);
            assert!((y.at(k)[0] - c).abs() <= c * (-8.0f64).exp() + c * dt);
        }
    }

    #[test]
    fn noiseless_k_is_path_independent() {
        let spec = presets::example_5_2().with_sigma(Arc::new(|_t, out: &mut [f64]| out.fill(0.0)));
        let p1 = path(&spec, 64, -9, 1, 1);
        let p2 = path(&spec, 64, -9, 1, 2);
        let u = GridProcess::constant(-9 * 64, 64, p1.dt(), &[0.1, 0.2, 0.05], 0, ProcessTag::InputU);
        let y1 = apply_k(&u, &spec, &p1, 8).unwrap();
        let y2 = apply_k(&u, &spec, &p2, 8).unwrap();
        assert_eq!(y1.values(), y2.values());
    }

    #[test]
    fn gain_range_and_constant_drift() {
        let spec = presets::example_5_2();
        let p = path(&spec, 64, -9, 1, 4);
        let zero = GridProcess::constant(-9 * 64, 64, p.dt(), &[0.0; 3], 4, ProcessTag::InputU);
        let g = apply_gain(&zero, &spec, &p, 8).unwrap();
        assert!(g.values().iter().all(|v| (0.125..=0.25).contains(v)));

        let constant = spec.with_drift("constant", Arc::new(|_t, _x: &[f64], out: &mut [f64]| out.fill(0.3)));
        let g = apply_gain(&zero, &constant, &p, 8).unwrap();
        assert!(g.values().iter().all(|v| *v == 0.3));
    }

    #[test]
    fn window_too_small_rejected() {
        let spec = presets::example_5_2();
        let p = path(&spec, 64, -2, 1, 4);
        let u = GridProcess::constant(-9 * 64, 64, p.dt(), &[0.0; 3], 4, ProcessTag::InputU);
        assert!(matches!(apply_k(&u, &spec, &p, 8), Err(Error::Window(_))));
    }

    #[test]
    fn refuses_without_contraction() {
        let mut spec = presets::example_5_2();
        spec.lipschitz = 0.2;
        let p = path(&spec, 64, -9, 1, 0);
        let r = fixed_point_iterate(&spec, &p, (0, 64), &FixedPointOptions::default(), InitialGuess::Zero);
        assert!(matches!(r, Err(Error::NoContraction { .. })));
        let forced = FixedPointOptions { force: true, ..Default::default() };
        let r = fixed_point_iterate(&spec, &p, (0, 64), &forced, InitialGuess::Zero).unwrap();
        assert!(!r.guaranteed);
    }

    #[test]
    fn constant_drift_converges_immediately() {
        let spec = presets::example_5_1().with_drift("constant", Arc::new(|_t, _x: &[f64], out: &mut [f64]| out.fill(0.15)));
        let p = path(&spec, 64, -9, 1, 0);
        let r = fixed_point_iterate(&spec, &p, (0, 64), &FixedPointOptions { tol: 1e-10, ..Default::default() }, InitialGuess::Zero)
            .unwrap();
        assert!(r.u.values().iter().all(|v| *v == 0.15));
        assert_eq!(r.final_step_norm, 0.0);
        assert!(r.iterations <= 2);
    }

    #[test]
    fn fixed_point_is_unique_and_contracting() {
        let spec = presets::example_5_2();
        let p = path(&spec, 128, -9, 1, 7);
        let opts = FixedPointOptions { tol: 1e-10, ..Default::default() };
        let from_zero = fixed_point_iterate(&spec, &p, (0, 128), &opts, InitialGuess::Zero).unwrap();
        let from_top = fixed_point_iterate(&spec, &p, (0, 128), &opts, InitialGuess::Upper).unwrap();
        let q = from_zero.contraction_bound;
        assert!(from_zero.u.sup_distance_common(&from_top.u).unwrap() <= 2.0 * opts.tol / (1.0 - q));
        assert!(from_zero.observed_ratios.iter().all(|r| *r <= q + 0.05));

        let op = KOperator::new(&spec, &p, 8, from_zero.u.start(), from_zero.u.end()).unwrap();
        let residual = op.apply_gain(&from_zero.u).unwrap().sup_distance_common(&from_zero.u).unwrap();
        assert!(residual <= opts.tol * (1.0 + q) / (1.0 - q));
    }

    fn admissible(len: usize, bound: f64) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0..=bound, len)
    }

    // Inputs are piecewise constant over 32 blocks to keep the strategy small.
    fn expand(blocks: &[f64], n_steps: usize, d: usize) -> Vec<f64> {
        let per = n_steps.div_ceil(blocks.len() / d);
        (0..n_steps).flat_map(|k| (0..d).map(move |i| (k / per, i))).map(|(b, i)| blocks[b * d + i]).collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]

        #[test]
        fn gain_is_contraction(f1 in admissible(96, 0.25), f2 in admissible(96, 0.25)) {
            let spec = presets::example_5_2();
            let p = path(&spec, 64, -9, 1, 3);
            let (start, end) = (-9 * 64, 64);
            let n = (end - start + 1) as usize;
            let u1 = GridProcess::from_values(start, p.dt(), 3, expand(&f1, n, 3), 3, ProcessTag::InputU).unwrap();
            let u2 = GridProcess::from_values(start, p.dt(), 3, expand(&f2, n, 3), 3, ProcessTag::InputU).unwrap();
            let op = KOperator::new(&spec, &p, 8, start, end).unwrap();
            let lhs = op.apply_gain(&u1).unwrap().sup_distance_common(&op.apply_gain(&u2).unwrap()).unwrap();
            let rhs = spec.contraction_bound() * u1.sup_distance_common(&u2).unwrap() + 1e-8;
            prop_assert!(lhs <= rhs);
        }

        #[test]
        fn k_is_monotone(f1 in admissible(96, 0.2), bump in admissible(96, 0.05)) {
            let spec = presets::example_5_1();
            let p = path(&spec, 64, -9, 1, 5);
            let (start, end) = (-9 * 64, 64);
            let n = (end - start + 1) as usize;
            let lo_vals = expand(&f1, n, 3);
            let hi_vals: Vec<f64> = lo_vals.iter().zip(expand(&bump, n, 3)).map(|(a, b)| a + b).collect();
            let u1 = GridProcess::from_values(start, p.dt(), 3, lo_vals, 5, ProcessTag::InputU).unwrap();
            let u2 = GridProcess::from_values(start, p.dt(), 3, hi_vals, 5, ProcessTag::InputU).unwrap();
            let op = KOperator::new(&spec, &p, 8, start, end).unwrap();
            let (y1, y2) = (op.apply_k(&u1).unwrap(), op.apply_k(&u2).unwrap());
            prop_assert!(y1.min_gap_to(&y2).unwrap() >= -1e-14);
            // Order-preserving h keeps the order; the anti-monotone preset reverses it.
            let (g1, g2) = (op.gain_of(&y1).unwrap(), op.gain_of(&y2).unwrap());
            prop_assert!(g1.min_gap_to(&g2).unwrap() >= -1e-14);
            let anti = presets::example_5_3();
            let q = path(&anti, 64, -9, 1, 5);
            let op = KOperator::new(&anti, &q, 8, start, end).unwrap();
            let (g1, g2) = (op.apply_gain(&u1).unwrap(), op.apply_gain(&u2).unwrap());
            prop_assert!(g2.min_gap_to(&g1).unwrap() >= -1e-14);
        }
    }
}
