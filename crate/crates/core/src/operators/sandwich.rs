use super::{GridProcess, KOperator};
use crate::error::{Error, Result};
use crate::flow::{envelopes, Propagator};
use crate::noise::{sup_sigma, WienerPath};
use crate::system::SystemSpec;

/// Gaps below this are treated as converged and excluded from ratios.
const GAP_FLOOR: f64 = 1e-13;
const ROUNDOFF: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct SandwichOptions {
    /// Smallest pull-back index in the envelopes.
    pub n: usize,
    /// Largest pull-back index; the domain starts at `−m_max·T`.
    pub m_max: usize,
    /// Envelopes are pushed through `(K^h)^{2k}` for `k = 0..=k_iters`.
    pub k_iters: usize,
    pub tail_periods: usize,
    /// Initial state of every pull-back.
    pub x: Vec<f64>,
    /// Coefficient of the memory allowance `c·e^{λ·min(t + mT, MT)}`;
    /// `None` picks [`default_memory_allowance`].
    pub memory_coefficient: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SandwichLevel {
    pub k: usize,
    /// `sup |(K^h)^{2k}(b) − (K^h)^{2k}(a)|` over the whole domain.
    pub gap: f64,
    /// The same gap restricted to the requested window.
    pub window_gap: f64,
    /// `max (lower − h(t, X^m(t)) − slack)`; the lower bound holds iff ≤ 0.
    pub lower_violation: f64,
    /// `max (h(t, X^m(t)) − upper − slack)`.
    pub upper_violation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SandwichReport {
    pub levels: Vec<SandwichLevel>,
    /// `gap_k / gap_{k−1}` where the previous gap is above the roundoff floor.
    pub ratios: Vec<f64>,
    pub contraction_bound: f64,
    pub memory_coefficient: f64,
}

impl SandwichReport {
    pub fn sandwich_holds(&self) -> bool {
        self.levels.iter().all(|l| l.lower_violation <= 0.0 && l.upper_violation <= 0.0)
    }

    pub fn max_ratio(&self) -> f64 {
        self.ratios.iter().copied().fold(0.0, f64::max)
    }

    pub fn ratios_within(&self, slack: f64) -> bool {
        self.max_ratio() <= self.contraction_bound.powi(2) + slack
    }
}

/// A priori size of the terms by which a finite pull-back and the clipped
/// operator disagree: the decayed initial state, the deterministic and the
/// stochastic memory before the pull-back start, each passed once through h.
pub fn default_memory_allowance(spec: &SystemSpec, x: &[f64]) -> f64 {
    let d = spec.dim() as f64;
    let lam = -spec.lambda;
    let xs = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let noise = 6.0 * d * (spec.noise_dim as f64).sqrt() * sup_sigma(&spec.sigma, spec.dim(), spec.noise_dim, spec.period) / (2.0 * lam).sqrt();
    let memory = d * xs + d * spec.max_drift_bound() / lam + noise;
    let q = spec.contraction_bound().min(0.99);
    (1.0 + spec.lipschitz * d) * memory / (1.0 - q)
}

/// Pushes the envelopes `a_n^h, b_n^h` through even powers of the gain
/// operator on the domain `[−m_max·T, w_hi]` and checks, at every step of
/// the window `[w_lo, w_hi]` and for every started pull-back `m`, that
/// `(K^h)^{2k}(a) ≤ h(t, φ(t, −mT)x) ≤ (K^h)^{2k}(b)` up to roundoff and the
/// memory allowance.
pub fn iterate_envelope_sandwich<P: WienerPath + ?Sized>(
    spec: &SystemSpec,
    path: &P,
    window: (i64, i64),
    opts: &SandwichOptions,
) -> Result<SandwichReport> {
    let (w_lo, w_hi) = window;
    let spp = path.steps_per_period() as i64;
    let e0 = -(opts.m_max as i64) * spp;
    if w_lo < e0 || w_hi < w_lo {
        return Err(Error::Window(format!("sandwich window [{w_lo}, {w_hi}] must lie inside [{e0}, ..]")));
    }
    if opts.x.len() != spec.dim() {
        return Err(Error::Dimension(format!("initial state has {} components, expected {}", opts.x.len(), spec.dim())));
    }
    let prop = Propagator::new(spec, path.dt())?;
    let env = envelopes(&prop, &opts.x, opts.n, opts.m_max, path, e0, w_hi)?;
    let op = KOperator::new(spec, path, opts.tail_periods, e0, w_hi)?;

    let d = spec.dim();
    let mut pullbacks = Vec::new();
    let mut h = vec![0.0; d];
    for m in opts.n..=opts.m_max {
        let start = -(m as i64) * spp;
        let lo = w_lo.max(start);
        if lo > w_hi {
            continue;
        }
        let traj = prop.integrate(start, w_hi, &opts.x, path)?;
        let mut vals = Vec::with_capacity((w_hi - lo + 1) as usize * d);
        for step in lo..=w_hi {
            (spec.drift)(path.time(step), traj.at(step), &mut h);
            vals.extend_from_slice(&h);
        }
        pullbacks.push((m, GridProcess::from_values(lo, path.dt(), d, vals, path.path_id(), super::ProcessTag::Trajectory)?));
    }

    let coef = opts.memory_coefficient.unwrap_or_else(|| default_memory_allowance(spec, &opts.x));
    let horizon = opts.tail_periods as f64 * spec.period;
    let slack = |t: f64, m: usize| ROUNDOFF + coef * (spec.lambda * (t + m as f64 * spec.period).min(horizon)).exp();

    let (mut a, mut b) = (env.lower, env.upper);
    let mut levels = Vec::new();
    for k in 0..=opts.k_iters {
        if k > 0 {
            for _ in 0..2 {
                a = op.apply_gain(&a)?;
                b = op.apply_gain(&b)?;
            }
        }
        let mut lower_violation = f64::NEG_INFINITY;
        let mut upper_violation = f64::NEG_INFINITY;
        for (m, hm) in &pullbacks {
            for (step, hv) in hm.iter() {
                let s = slack(path.time(step), *m);
                for i in 0..d {
                    lower_violation = lower_violation.max(a.at(step)[i] - hv[i] - s);
                    upper_violation = upper_violation.max(hv[i] - b.at(step)[i] - s);
                }
            }
        }
        levels.push(SandwichLevel {
            k,
            gap: a.sup_distance_common(&b)?,
            window_gap: a.sup_distance(&b, w_lo, w_hi)?,
            lower_violation,
            upper_violation,
        });
    }
    let ratios = levels.windows(2).filter(|w| w[0].gap > GAP_FLOOR).map(|w| w[1].gap / w[0].gap).collect();
    Ok(SandwichReport { levels, ratios, contraction_bound: spec.contraction_bound(), memory_coefficient: coef })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{sample_path, TimeGrid};
    use crate::presets;
    use std::sync::Arc;

    fn opts(x: Vec<f64>) -> SandwichOptions {
        SandwichOptions { n: 2, m_max: 10, k_iters: 4, tail_periods: 8, x, memory_coefficient: None }
    }

    #[test]
    fn constant_drift_closes_gap() {
        let spec = presets::example_5_2().with_drift("constant", Arc::new(|_t, _x: &[f64], out: &mut [f64]| out.fill(0.2)));
        let p = sample_path(TimeGrid::covering_periods(spec.period, 64, -10, 1).unwrap(), 3, 0, 0).unwrap();
        let r = iterate_envelope_sandwich(&spec, &p, (0, 64), &opts(vec![0.0; 3])).unwrap();
        assert!(r.levels.iter().all(|l| l.gap == 0.0));
        assert!(r.sandwich_holds());
    }

    #[test]
    fn example_5_2_sandwich_and_ratios() {
        let spec = presets::example_5_2();
        let p = sample_path(TimeGrid::covering_periods(spec.period, 128, -10, 1).unwrap(), 3, 0, 1).unwrap();
        let r = iterate_envelope_sandwich(&spec, &p, (0, 128), &opts(vec![0.0; 3])).unwrap();
        assert!(r.levels[0].lower_violation <= -ROUNDOFF + 1e-300);
        assert!(r.sandwich_holds(), "{r:?}");
        assert!(r.ratios_within(0.05), "{r:?}");
        assert!(r.levels[4].gap < r.levels[0].gap);
    }

    #[test]
    fn window_before_domain_rejected() {
        let spec = presets::example_5_1();
        let p = sample_path(TimeGrid::covering_periods(spec.period, 64, -10, 1).unwrap(), 3, 0, 0).unwrap();
        assert!(iterate_envelope_sandwich(&spec, &p, (-11 * 64, 0), &opts(vec![0.0; 3])).is_err());
    }
}
