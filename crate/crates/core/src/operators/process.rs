use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::max_norm_diff;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessTag {
    InputU,
    EnvelopeLower,
    EnvelopeUpper,
    SolutionY,
    Trajectory,
}

/// A `d`-vector valued function on the grid steps `start ..= end` of one
/// noise path.
#[derive(Clone, Debug, PartialEq)]
pub struct GridProcess {
    start: i64,
    dt: f64,
    d: usize,
    values: Vec<f64>,
    path_id: u64,
    tag: ProcessTag,
}

impl GridProcess {
    pub fn from_values(start: i64, dt: f64, d: usize, values: Vec<f64>, path_id: u64, tag: ProcessTag) -> Result<Self> {
        if d == 0 || values.is_empty() || values.len() % d != 0 {
            return Err(Error::Dimension(format!("{} values do not form {d}-vectors", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("grid process values must be finite".into()));
        }
        Ok(Self { start, dt, d, values, path_id, tag })
    }

    pub fn constant(start: i64, end: i64, dt: f64, value: &[f64], path_id: u64, tag: ProcessTag) -> Self {
        let n = (end - start + 1).max(0) as usize;
        let values = value.iter().copied().cycle().take(n * value.len()).collect();
        Self { start, dt, d: value.len(), values, path_id, tag }
    }

    pub fn start(&self) -> i64 {
        self.start
    }

    pub fn end(&self) -> i64 {
        self.start + self.len() as i64 - 1
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn path_id(&self) -> u64 {
        self.path_id
    }

    pub fn tag(&self) -> ProcessTag {
        self.tag
    }

    pub fn with_tag(mut self, tag: ProcessTag) -> Self {
        self.tag = tag;
        self
    }

    pub fn time(&self, step: i64) -> f64 {
        step as f64 * self.dt
    }

    pub fn contains(&self, step: i64) -> bool {
        step >= self.start && step <= self.end()
    }

    #[inline]
    pub fn at(&self, step: i64) -> &[f64] {
        let o = (step - self.start) as usize * self.d;
        &self.values[o..o + self.d]
    }

    #[inline]
    pub fn at_mut(&mut self, step: i64) -> &mut [f64] {
        let o = (step - self.start) as usize * self.d;
        &mut self.values[o..o + self.d]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Steps and values in order.
    pub fn iter(&self) -> impl Iterator<Item = (i64, &[f64])> {
        self.values.chunks(self.d).enumerate().map(move |(k, v)| (self.start + k as i64, v))
    }

    /// Copy restricted to `lo ..= hi`.
    pub fn restrict(&self, lo: i64, hi: i64) -> Result<Self> {
        if lo < self.start || hi > self.end() || hi < lo {
            return Err(Error::Window(format!(
                "[{lo}, {hi}] is not inside the process window [{}, {}]",
                self.start,
                self.end()
            )));
        }
        let a = (lo - self.start) as usize * self.d;
        let b = (hi - self.start + 1) as usize * self.d;
        Ok(Self { start: lo, values: self.values[a..b].to_vec(), ..self.clone() })
    }

    /// `sup_{lo ≤ n ≤ hi} |self(n) − other(n + offset)|`.
    pub fn sup_distance_shifted(&self, other: &GridProcess, lo: i64, hi: i64, offset: i64) -> Result<f64> {
        if !self.contains(lo) || !self.contains(hi) || !other.contains(lo + offset) || !other.contains(hi + offset) {
            return Err(Error::Window(format!("comparison window [{lo}, {hi}] (offset {offset}) not covered")));
        }
        Ok((lo..=hi).fold(0.0, |m, n| m.max(max_norm_diff(self.at(n), other.at(n + offset)))))
    }

    /// Sup-distance over `lo ..= hi`.
    pub fn sup_distance(&self, other: &GridProcess, lo: i64, hi: i64) -> Result<f64> {
        self.sup_distance_shifted(other, lo, hi, 0)
    }

    /// Sup-distance over the common window.
    pub fn sup_distance_common(&self, other: &GridProcess) -> Result<f64> {
        let lo = self.start.max(other.start);
        let hi = self.end().min(other.end());
        if hi < lo {
            return Err(Error::Window("processes do not overlap".into()));
        }
        self.sup_distance(other, lo, hi)
    }

    /// Smallest value of `other − self` over all components and common
    /// steps; nonnegative iff `self ≤ other` componentwise.
    pub fn min_gap_to(&self, other: &GridProcess) -> Result<f64> {
        let lo = self.start.max(other.start);
        let hi = self.end().min(other.end());
        if hi < lo {
            return Err(Error::Window("processes do not overlap".into()));
        }
        Ok((lo..=hi)
            .flat_map(|n| self.at(n).iter().zip(other.at(n)).map(|(a, b)| b - a))
            .fold(f64::INFINITY, f64::min))
    }

    /// True iff all values lie in `[−tol, N_i + tol]`.
    pub fn within_bounds(&self, bound: &[f64], tol: f64) -> bool {
        self.values
            .chunks(self.d)
            .all(|v| v.iter().zip(bound).all(|(x, n)| *x >= -tol && *x <= n + tol))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_arithmetic() {
        let p = GridProcess::constant(-4, 5, 0.5, &[1.0, 2.0], 3, ProcessTag::InputU);
        assert_eq!(p.len(), 10);
        assert_eq!(p.end(), 5);
        assert_eq!(p.at(-4), &[1.0, 2.0]);
        assert_eq!(p.time(2), 1.0);
        let r = p.restrict(0, 2).unwrap();
        assert_eq!((r.start(), r.end()), (0, 2));
        assert!(p.restrict(-5, 0).is_err());
    }

    #[test]
    fn distances_and_order() {
        let a = GridProcess::constant(0, 3, 1.0, &[1.0, 1.0], 0, ProcessTag::InputU);
        let mut b = a.clone();
        b.at_mut(2)[1] = 1.5;
        assert_eq!(a.sup_distance_common(&b).unwrap(), 0.5);
        assert_eq!(a.min_gap_to(&b).unwrap(), 0.0);
        assert_eq!(b.min_gap_to(&a).unwrap(), -0.5);
        assert!(b.within_bounds(&[2.0, 2.0], 0.0));
        assert!(!b.within_bounds(&[2.0, 1.2], 0.0));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(GridProcess::from_values(0, 1.0, 1, vec![f64::NAN], 0, ProcessTag::InputU).is_err());
        assert!(GridProcess::from_values(0, 1.0, 2, vec![1.0], 0, ProcessTag::InputU).is_err());
    }
}
