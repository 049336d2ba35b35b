use super::Propagator;
use crate::error::{Error, Result};
use crate::noise::WienerPath;
use crate::operators::{GridProcess, ProcessTag};

/// Componentwise inf/sup of `h(t, φ(t, −mT, ω)x)` over `m ∈ [n, m_max]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvelopePair {
    pub lower: GridProcess,
    pub upper: GridProcess,
    pub n: usize,
    pub m_max: usize,
}

/// Envelope processes on `[t_lo, t_hi]` (steps). At a time `t` only the
/// pull-backs already started by `t` (those with `−mT ≤ t`) take part, so
/// `t_lo` must not precede `−m_max·T`. All pull-backs share `path`.
pub fn envelopes<P: WienerPath + ?Sized>(
    prop: &Propagator<'_>,
    x: &[f64],
    n: usize,
    m_max: usize,
    path: &P,
    t_lo: i64,
    t_hi: i64,
) -> Result<EnvelopePair> {
    if n == 0 || m_max < n {
        return Err(Error::InvalidParameter(format!("need m_max >= n >= 1, got n = {n}, m_max = {m_max}")));
    }
    let spp = path.steps_per_period() as i64;
    if t_lo < -(m_max as i64) * spp || t_hi < t_lo {
        return Err(Error::Window(format!(
            "envelope window [{t_lo}, {t_hi}] must lie after the earliest start {}",
            -(m_max as i64) * spp
        )));
    }
    let spec = prop.spec();
    let d = spec.dim();
    let len = (t_hi - t_lo + 1) as usize;
    let mut lower = vec![f64::INFINITY; len * d];
    let mut upper = vec![f64::NEG_INFINITY; len * d];
    let mut h = vec![0.0; d];
    for m in n..=m_max {
        let start = -(m as i64) * spp;
        let traj = prop.integrate(start, t_hi, x, path)?;
        for step in t_lo.max(start)..=t_hi {
            (spec.drift)(path.time(step), traj.at(step), &mut h);
            let o = (step - t_lo) as usize * d;
            for i in 0..d {
                lower[o + i] = lower[o + i].min(h[i]);
                upper[o + i] = upper[o + i].max(h[i]);
            }
        }
    }
    let dt = path.dt();
    let id = path.path_id();
    Ok(EnvelopePair {
        lower: GridProcess::from_values(t_lo, dt, d, lower, id, ProcessTag::EnvelopeLower)?,
        upper: GridProcess::from_values(t_lo, dt, d, upper, id, ProcessTag::EnvelopeUpper)?,
        n,
        m_max,
    })
}
