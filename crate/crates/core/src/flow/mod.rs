//! Forward stochastic flow φ(t, s, ω)x by exponential Euler, pull-back
//! trajectories started at −nT, and the envelope processes built from them.
//!
//! One step of the scheme is
//!
//! ```text
//! X_{k+1} = Φ(dt) · (X_k + h(t_k, X_k)·dt + σ(t_k)·ΔW_k)
//! ```
//!
//! with `Φ(dt) = exp(dt·A)` computed once per propagator. The linear part is
//! exact, so with `h ≡ 0, σ ≡ 0` the scheme reproduces `Φ(t − s)x`, and the
//! discrete flow composes exactly over any intermediate grid time.

mod envelope;
mod validate;

pub use envelope::{envelopes, EnvelopePair};
pub use validate::{validate_spec, CheckOutcome, SpecReport};

use std::ops::Deref;

use crate::error::{Error, Result};
use crate::linalg::{expm_scaled, max_norm_diff, Matrix};
use crate::noise::{step_of, NoisePath, WienerPath};
use crate::operators::{GridProcess, ProcessTag};
use crate::system::SystemSpec;

/// Values of `φ(·, s, ω)x` at every grid time from `s` on.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowTrajectory(GridProcess);

impl FlowTrajectory {
    pub fn start_step(&self) -> i64 {
        self.0.start()
    }

    pub fn last(&self) -> &[f64] {
        self.0.at(self.0.end())
    }

    pub fn into_process(self) -> GridProcess {
        self.0
    }
}

impl Deref for FlowTrajectory {
    type Target = GridProcess;

    fn deref(&self) -> &GridProcess {
        &self.0
    }
}

/// Exponential-Euler stepper with `Φ(dt)` cached for one system and step.
#[derive(Clone, Debug)]
pub struct Propagator<'a> {
    spec: &'a SystemSpec,
    dt: f64,
    one_step: Matrix,
}

impl<'a> Propagator<'a> {
    pub fn new(spec: &'a SystemSpec, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        Ok(Self { spec, dt, one_step: expm_scaled(&spec.a, dt)? })
    }

    pub fn one_step(&self) -> &Matrix {
        &self.one_step
    }

    pub fn spec(&self) -> &SystemSpec {
        self.spec
    }

    /// Integrates from `(s_step, x)` to `t_step` on `path`, recording every
    /// grid point.
    pub fn integrate<P: WienerPath + ?Sized>(&self, s_step: i64, t_step: i64, x: &[f64], path: &P) -> Result<FlowTrajectory> {
        let d = self.spec.dim();
        if x.len() != d {
            return Err(Error::Dimension(format!("initial state has {} components, expected {d}", x.len())));
        }
        if s_step > t_step {
            return Err(Error::Window(format!("start step {s_step} is after end step {t_step}")));
        }
        self.check_path(path)?;
        path.require_cells(s_step, t_step)?;

        let n = (t_step - s_step + 1) as usize;
        let mut values = Vec::with_capacity(n * d);
        values.extend_from_slice(x);
        let mut scratch = StepScratch::new(d, self.spec.noise_dim);
        for k in s_step..t_step {
            let off = values.len() - d;
            scratch.state.copy_from_slice(&values[off..]);
            self.step_in_place(k, path, &mut scratch);
            values.extend_from_slice(&scratch.state);
        }
        Ok(FlowTrajectory(GridProcess::from_values(
            s_step,
            self.dt,
            d,
            values,
            path.path_id(),
            ProcessTag::Trajectory,
        )?))
    }

    /// Endpoint only, without recording the trajectory.
    pub fn endpoint<P: WienerPath + ?Sized>(&self, s_step: i64, t_step: i64, x: &[f64], path: &P) -> Result<Vec<f64>> {
        if s_step > t_step {
            return Err(Error::Window(format!("start step {s_step} is after end step {t_step}")));
        }
        self.check_path(path)?;
        path.require_cells(s_step, t_step)?;
        let mut scratch = StepScratch::new(self.spec.dim(), self.spec.noise_dim);
        scratch.state.copy_from_slice(x);
        for k in s_step..t_step {
            self.step_in_place(k, path, &mut scratch);
        }
        Ok(scratch.state)
    }

    #[inline]
    fn step_in_place<P: WienerPath + ?Sized>(&self, k: i64, path: &P, s: &mut StepScratch) {
        let t = path.time(k);
        let m = self.spec.noise_dim;
        (self.spec.drift)(t, &s.state, &mut s.drift);
        (self.spec.sigma)(t, &mut s.sigma);
        let dw = path.increment(k);
        for i in 0..s.state.len() {
            let noise: f64 = s.sigma[i * m..(i + 1) * m].iter().zip(dw).map(|(a, b)| a * b).sum();
            s.rhs[i] = s.state[i] + s.drift[i] * self.dt + noise;
        }
        self.one_step.mul_vec_into(&s.rhs, &mut s.state);
    }

    fn check_path<P: WienerPath + ?Sized>(&self, path: &P) -> Result<()> {
        if path.noise_dim() != self.spec.noise_dim {
            return Err(Error::Dimension(format!(
                "path has {} noise components, system expects {}",
                path.noise_dim(),
                self.spec.noise_dim
            )));
        }
        if (path.dt() - self.dt).abs() > 1e-12 * self.dt {
            return Err(Error::InvalidParameter(format!("path step {} differs from propagator step {}", path.dt(), self.dt)));
        }
        Ok(())
    }
}

struct StepScratch {
    state: Vec<f64>,
    drift: Vec<f64>,
    sigma: Vec<f64>,
    rhs: Vec<f64>,
}

impl StepScratch {
    fn new(d: usize, m: usize) -> Self {
        Self { state: vec![0.0; d], drift: vec![0.0; d], sigma: vec![0.0; d * m], rhs: vec![0.0; d] }
    }
}

/// φ(t, s, ω)x on the grid times of `[s, t]`.
pub fn integrate_flow<P: WienerPath + ?Sized>(spec: &SystemSpec, s: f64, t: f64, x: &[f64], path: &P) -> Result<FlowTrajectory> {
    let dt = path.dt();
    Propagator::new(spec, dt)?.integrate(step_of(s, dt)?, step_of(t, dt)?, x, path)
}

/// `|φ(t,s)x − φ(t,r)(φ(r,s)x)|` where the left side is one run.
pub fn flow_composition_residual<P: WienerPath + ?Sized>(
    spec: &SystemSpec,
    s: f64,
    r: f64,
    t: f64,
    x: &[f64],
    path: &P,
) -> Result<f64> {
    let dt = path.dt();
    let (s, r, t) = (step_of(s, dt)?, step_of(r, dt)?, step_of(t, dt)?);
    if !(s <= r && r <= t) {
        return Err(Error::Window(format!("need s <= r <= t, got steps {s}, {r}, {t}")));
    }
    let prop = Propagator::new(spec, dt)?;
    let direct = prop.endpoint(s, t, x, path)?;
    let mid = prop.endpoint(s, r, x, path)?;
    let composed = prop.endpoint(r, t, &mid, path)?;
    Ok(max_norm_diff(&direct, &composed))
}

/// `sup |φ(τ+kT, s+kT, ω)x − φ(τ, s, θ_{kT}ω)x|` over τ ∈ [s, t].
pub fn period_shift_residual_k(spec: &SystemSpec, s: f64, t: f64, x: &[f64], path: &NoisePath, k: i64) -> Result<f64> {
    let dt = path.dt();
    let (s, t) = (step_of(s, dt)?, step_of(t, dt)?);
    let shift = k * path.steps_per_period() as i64;
    let view = path.shift_by_periods(k)?;
    let prop = Propagator::new(spec, dt)?;
    let on_base = prop.integrate(s + shift, t + shift, x, path)?;
    let on_view = prop.integrate(s, t, x, &view)?;
    on_view.sup_distance_shifted(&on_base, s, t, shift)
}

/// Period-shift residual for one period.
pub fn period_shift_residual(spec: &SystemSpec, s: f64, t: f64, x: &[f64], path: &NoisePath) -> Result<f64> {
    period_shift_residual_k(spec, s, t, x, path, 1)
}

/// φ(·, −nT, ω)x restricted to the eval window `[t_lo, t_hi]` (in steps).
pub fn pullback_trajectory<P: WienerPath + ?Sized>(
    prop: &Propagator<'_>,
    n: usize,
    x: &[f64],
    path: &P,
    t_lo: i64,
    t_hi: i64,
) -> Result<FlowTrajectory> {
    let start = -(n as i64) * path.steps_per_period() as i64;
    if t_lo < start {
        return Err(Error::Window(format!("eval window starts at step {t_lo}, before the pull-back start {start}")));
    }
    let full = prop.integrate(start, t_hi, x, path)?;
    Ok(FlowTrajectory(full.0.restrict(t_lo, t_hi)?))
}

/// `D_n = sup_{window} |φ(·, −nT)x − φ(·, −(n+1)T)x|` for each requested n.
pub fn pullback_cauchy<P: WienerPath + ?Sized>(
    prop: &Propagator<'_>,
    x: &[f64],
    path: &P,
    t_lo: i64,
    t_hi: i64,
    ns: std::ops::RangeInclusive<usize>,
) -> Result<Vec<(usize, f64)>> {
    ns.map(|n| {
        let a = pullback_trajectory(prop, n, x, path, t_lo, t_hi)?;
        let b = pullback_trajectory(prop, n + 1, x, path, t_lo, t_hi)?;
        Ok((n, a.sup_distance(&b, t_lo, t_hi)?))
    })
    .collect()
}

/// Least-squares slope of `log y` against `x`, ignoring non-positive `y`.
pub fn log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points.iter().filter(|(_, y)| *y > 0.0).map(|(x, y)| (*x, y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
