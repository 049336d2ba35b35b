//! Run configuration, read from TOML.
//!
//! ```toml
//! preset = "example_5_2"
//! steps_per_period = 512   # dt = T / steps_per_period, at least 64
//! tail_periods = 8         # truncation horizon M, at least 2
//! n_max = 8
//! ensemble = 64
//! seed = 0
//! tol = 1e-8
//! max_iter = 200
//! ```
//!
//! Instead of `preset`, a `[system]` table defines a system from the family
//!
//! ```text
//! h_i(t, x) = base_i + sin_i·sin(2πt/T) + cos_i·cos(2πt/T) + Σ_j gain_ij·tanh(x_j)
//! σ(t)     = sigma.constant + sigma.cos·cos(2πt/T) + sigma.sin·sin(2πt/T)
//! ```
//!
//! for which `N_i = base_i + |sin_i| + |cos_i| + Σ_j |gain_ij|` and
//! `L = max |gain_ij|`. Nonnegative gains give an order-preserving drift,
//! nonpositive gains an anti-order-preserving one.

use std::f64::consts::PI;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_cooperative, Matrix};
use crate::system::{DiffusionFn, DriftFn, Monotonicity, SystemSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default = "defaults::steps_per_period")]
    pub steps_per_period: usize,
    #[serde(default = "defaults::tail_periods")]
    pub tail_periods: usize,
    #[serde(default = "defaults::n_max")]
    pub n_max: usize,
    #[serde(default = "defaults::ensemble")]
    pub ensemble: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::tol")]
    pub tol: f64,
    #[serde(default = "defaults::max_iter")]
    pub max_iter: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Iterate even when the small-gain condition fails.
    #[serde(default)]
    pub force: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<InlineSystem>,
}

mod defaults {
    pub fn steps_per_period() -> usize {
        512
    }
    pub fn tail_periods() -> usize {
        8
    }
    pub fn n_max() -> usize {
        8
    }
    pub fn ensemble() -> usize {
        64
    }
    pub fn tol() -> f64 {
        1e-8
    }
    pub fn max_iter() -> usize {
        200
    }
    pub fn period() -> f64 {
        2.0 * std::f64::consts::PI
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: None,
            steps_per_period: defaults::steps_per_period(),
            tail_periods: defaults::tail_periods(),
            n_max: defaults::n_max(),
            ensemble: defaults::ensemble(),
            seed: 0,
            tol: defaults::tol(),
            max_iter: defaults::max_iter(),
            out_dir: None,
            force: false,
            system: None,
        }
    }
}

impl RunConfig {
    pub fn for_preset(name: &str) -> Self {
        Self { preset: Some(name.to_string()), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.preset, &self.system) {
            (Some(_), Some(_)) => return Err(Error::Config("give either `preset` or `[system]`, not both".into())),
            (None, None) => return Err(Error::Config("missing `preset` or `[system]`".into())),
            _ => {}
        }
        if self.steps_per_period < 64 {
            return Err(Error::Config(format!("steps_per_period must be at least 64, got {}", self.steps_per_period)));
        }
        if self.tail_periods < 2 {
            return Err(Error::Config(format!("tail_periods must be at least 2, got {}", self.tail_periods)));
        }
        if !(self.tol > 0.0) || !self.tol.is_finite() {
            return Err(Error::Config(format!("tol must be positive, got {}", self.tol)));
        }
        if self.n_max < 2 {
            return Err(Error::Config(format!("n_max must be at least 2, got {}", self.n_max)));
        }
        if self.ensemble == 0 || self.max_iter == 0 {
            return Err(Error::Config("ensemble and max_iter must be positive".into()));
        }
        if let Some(sys) = &self.system {
            sys.build()?;
        }
        Ok(())
    }

    /// The effective configuration as TOML; loading it back gives an equal
    /// config.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Parses and validates a TOML document, filling defaults.
pub fn load_config(source: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(source).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config_file(path: &std::path::Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    load_config(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineSystem {
    #[serde(default = "InlineSystem::default_name")]
    pub name: String,
    pub a: Vec<Vec<f64>>,
    /// Decay rate with `‖exp(tA)‖ ≤ e^{λt}`.
    pub lambda: f64,
    #[serde(default = "defaults::period")]
    pub period: f64,
    pub drift: InlineDrift,
    pub sigma: InlineSigma,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineDrift {
    pub base: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sin: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cos: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<Vec<Vec<f64>>>,
}

/// `d×m` coefficient matrices; absent ones are zero. `m` is taken from the
/// first one given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineSigma {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cos: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sin: Option<Vec<Vec<f64>>>,
}

fn vector_or_zero(v: &Option<Vec<f64>>, d: usize, field: &str) -> Result<Vec<f64>> {
    match v {
        None => Ok(vec![0.0; d]),
        Some(v) if v.len() == d && v.iter().all(|x| x.is_finite()) => Ok(v.clone()),
        Some(v) => Err(Error::Config(format!("system.drift.{field}: expected {d} finite entries, got {}", v.len()))),
    }
}

fn matrix_or_zero(m: &Option<Vec<Vec<f64>>>, rows: usize, cols: usize, field: &str) -> Result<Matrix> {
    match m {
        None => Ok(Matrix::zeros(rows, cols)),
        Some(r) => {
            let mat = Matrix::from_rows(r).map_err(|e| Error::Config(format!("{field}: {e}")))?;
            if mat.rows() != rows || mat.cols() != cols {
                return Err(Error::Config(format!("{field}: expected {rows}x{cols}, got {}x{}", mat.rows(), mat.cols())));
            }
            Ok(mat)
        }
    }
}

impl InlineSystem {
    fn default_name() -> String {
        "inline".into()
    }

    /// True when the drift is identically zero.
    pub fn drift_is_zero(&self) -> bool {
        let zero = |v: &Option<Vec<f64>>| v.as_ref().is_none_or(|v| v.iter().all(|x| *x == 0.0));
        self.drift.base.iter().all(|x| *x == 0.0)
            && zero(&self.drift.sin)
            && zero(&self.drift.cos)
            && self.drift.gain.as_ref().is_none_or(|g| g.iter().flatten().all(|x| *x == 0.0))
    }

    pub fn build(&self) -> Result<SystemSpec> {
        let a = Matrix::from_rows(&self.a).map_err(|e| Error::Config(format!("system.a: {e}")))?;
        if !a.is_square() {
            return Err(Error::Config(format!("system.a must be square, got {}x{}", a.rows(), a.cols())));
        }
        let d = a.rows();
        if !check_cooperative(&a)? {
            return Err(Error::Config("system.a has a negative off-diagonal entry (not cooperative)".into()));
        }
        if !(self.lambda < 0.0) {
            return Err(Error::Config(format!("system.lambda must be negative, got {}", self.lambda)));
        }
        if !(self.period > 0.0) || !self.period.is_finite() {
            return Err(Error::Config(format!("system.period must be positive, got {}", self.period)));
        }

        let base = vector_or_zero(&Some(self.drift.base.clone()), d, "base")?;
        let sin = vector_or_zero(&self.drift.sin, d, "sin")?;
        let cos = vector_or_zero(&self.drift.cos, d, "cos")?;
        let gain = matrix_or_zero(&self.drift.gain, d, d, "system.drift.gain")?;
        let g = gain.as_slice();
        let monotonicity = if g.iter().all(|x| *x >= 0.0) {
            Monotonicity::OrderPreserving
        } else if g.iter().all(|x| *x <= 0.0) {
            Monotonicity::AntiOrderPreserving
        } else {
            return Err(Error::Config("system.drift.gain mixes signs; h would be neither monotone nor anti-monotone".into()));
        };
        let mut bound = Vec::with_capacity(d);
        for i in 0..d {
            let swing = sin[i].abs() + cos[i].abs() + gain.row(i).iter().map(|x| x.abs()).sum::<f64>();
            if base[i] < swing {
                return Err(Error::Config(format!("h_{} can become negative: base {} < swing {swing}", i + 1, base[i])));
            }
            bound.push(base[i] + swing);
        }
        let lipschitz = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));

        let m = [&self.sigma.constant, &self.sigma.cos, &self.sigma.sin]
            .iter()
            .find_map(|s| s.as_ref().and_then(|r| r.first().map(|row| row.len())))
            .ok_or_else(|| Error::Config("system.sigma needs at least one of constant, cos, sin".into()))?;
        let s0 = matrix_or_zero(&self.sigma.constant, d, m, "system.sigma.constant")?;
        let sc = matrix_or_zero(&self.sigma.cos, d, m, "system.sigma.cos")?;
        let ss = matrix_or_zero(&self.sigma.sin, d, m, "system.sigma.sin")?;

        let omega = 2.0 * PI / self.period;
        let drift: DriftFn = Arc::new(move |t, x, out| {
            let (st, ct) = ((omega * t).sin(), (omega * t).cos());
            for i in 0..d {
                let coupling: f64 = gain.row(i).iter().zip(x).map(|(g, xj)| g * xj.tanh()).sum();
                out[i] = base[i] + sin[i] * st + cos[i] * ct + coupling;
            }
        });
        let sigma: DiffusionFn = Arc::new(move |t, out| {
            let (st, ct) = ((omega * t).sin(), (omega * t).cos());
            for (k, o) in out.iter_mut().enumerate() {
                *o = s0.as_slice()[k] + sc.as_slice()[k] * ct + ss.as_slice()[k] * st;
            }
        });
        SystemSpec::new(self.name.clone(), a, drift, monotonicity, bound, sigma, self.period, m, self.lambda, lipschitz)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::validate_spec;

    const INLINE: &str = r#"
steps_per_period = 128

[system]
name = "two-cell"
a = [[-2.0, 0.5], [0.5, -2.0]]
lambda = -1.5
drift = { base = [0.5, 0.5], cos = [0.1, 0.0], gain = [[0.0, 0.05], [0.05, 0.0]] }
sigma = { constant = [[0.3, 0.0], [0.0, 0.3]] }
"#;

    #[test]
    fn minimal_preset_gets_defaults() {
        let cfg = load_config("preset = \"example_5_2\"").unwrap();
        assert_eq!(cfg, RunConfig::for_preset("example_5_2"));
        assert_eq!((cfg.steps_per_period, cfg.tail_periods, cfg.n_max, cfg.ensemble), (512, 8, 8, 64));
        assert_eq!(cfg.tol, 1e-8);
    }

    #[test]
    fn coarse_grid_rejected() {
        let err = load_config("preset = \"example_5_2\"\nsteps_per_period = 10").unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("at least 64")), "{err}");
        assert!(load_config("preset = \"example_5_2\"\ntail_periods = 1").is_err());
        assert!(load_config("preset = \"example_5_2\"\ntol = 0.0").is_err());
    }

    #[test]
    fn schema_errors_carry_location() {
        let err = load_config("preset = \"example_5_2\"\nsteps = 64\n").unwrap_err().to_string();
        assert!(err.contains("line 2") || err.contains("steps"), "{err}");
        let err = load_config("preset = 3").unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
    }

    #[test]
    fn inline_non_cooperative_rejected() {
        let src = INLINE.replace("[[-2.0, 0.5], [0.5, -2.0]]", "[[-2.0, -0.5], [0.5, -2.0]]");
        let err = load_config(&src).unwrap_err();
        assert!(err.to_string().contains("cooperative"), "{err}");
    }

    #[test]
    fn inline_dimension_mismatch_rejected() {
        let src = INLINE.replace("base = [0.5, 0.5]", "base = [0.5, 0.5, 0.5]");
        assert!(load_config(&src).is_err());
        let src = INLINE.replace("gain = [[0.0, 0.05], [0.05, 0.0]]", "gain = [[0.0, 0.05], [-0.05, 0.0]]");
        assert!(load_config(&src).unwrap_err().to_string().contains("mixes signs"));
    }

    #[test]
    fn inline_system_is_valid() {
        let cfg = load_config(INLINE).unwrap();
        let spec = cfg.system.as_ref().unwrap().build().unwrap();
        assert_eq!(spec.drift_bound, vec![0.65, 0.55]);
        assert_eq!(spec.lipschitz, 0.05);
        assert_eq!(spec.monotonicity, Monotonicity::OrderPreserving);
        let report = validate_spec(&spec, 500, 1);
        assert!(report.all_pass(), "{report:?}");
    }

    #[test]
    fn round_trip() {
        for cfg in [load_config(INLINE).unwrap(), RunConfig { seed: 7, force: true, ..RunConfig::for_preset("example_5_1") }] {
            let text = cfg.to_toml().unwrap();
            assert_eq!(load_config(&text).unwrap(), cfg, "{text}");
        }
    }
}
