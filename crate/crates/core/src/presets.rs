//! Built-in systems: the three worked examples (all with `T = 2π`, `d = m = 3`,
//! diagonal noise) and a few deliberately broken variants used as negative
//! controls.

use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::system::{diagonal_sigma, DriftFn, Monotonicity, SystemSpec};
use crate::verify::ToleranceModel;

const PERIOD: f64 = 2.0 * PI;

#[derive(Clone, Debug)]
pub struct Preset {
    pub spec: SystemSpec,
    /// Real parts of the eigenvalues of `A`.
    pub eigenvalues: Vec<f64>,
    /// Closed form of `−L·d²/λ`.
    pub contraction_bound: f64,
    /// Fitted residual tolerances for the verification suite.
    pub tolerance: ToleranceModel,
    pub summary: &'static str,
}

impl Preset {
    pub fn name(&self) -> &str {
        &self.spec.name
    }
}

/// Cooperative `A` with eigenvalues `−1, (−3 ± √5)/2` and order-preserving
/// `h_i(t, x) = sin(t)/10 + 1/(6 + π/2 − arctan x_i)`; `σ_i(t) = cos t`.
pub fn example_5_1() -> SystemSpec {
    let a = Matrix::from_rows(&[[-1.0, 1.0, 0.0], [1.0, -2.0, 0.0], [0.0, 1.0, -1.0]]).expect("static matrix");
    let drift: DriftFn = Arc::new(|t, x, out| {
        let s = 0.1 * t.sin();
        for i in 0..3 {
            out[i] = s + 1.0 / (6.0 + FRAC_PI_2 - x[i].atan());
        }
    });
    SystemSpec::new(
        "example_5_1",
        a,
        drift,
        Monotonicity::OrderPreserving,
        vec![0.1 + 1.0 / 6.0; 3],
        diagonal_sigma(3, f64::cos),
        PERIOD,
        3,
        (-3.0 + 5f64.sqrt()) / 2.0,
        1.0 / 36.0,
    )
    .expect("static preset")
}

/// `A = diag(−1, −2, −3)` and anti-order-preserving
/// `h_i(t, x) = 1/(6 + cos t + tanh x_{i−1})` with `x_0 = x_3`.
///
/// The same drift is sometimes written `1/(5 + cos t + g(x_{i−1}))` with
/// `g = 1 + tanh`; the two forms are identical.
pub fn example_5_2() -> SystemSpec {
    SystemSpec::new(
        "example_5_2",
        Matrix::diag(&[-1.0, -2.0, -3.0]),
        cyclic_drift(|t, y| 1.0 / (6.0 + t.cos() + y.tanh())),
        Monotonicity::AntiOrderPreserving,
        vec![0.25; 3],
        diagonal_sigma(3, f64::cos),
        PERIOD,
        3,
        -1.0,
        1.0 / 16.0,
    )
    .expect("static preset")
}

/// Cyclically coupled cooperative `A` with eigenvalues `−3, −2 ± √2` and
/// anti-order-preserving `h_i(t, x) = sin(t)/8 + 1/(4 + π/2 + arctan x_{i−1})`;
/// `σ_i(t) = sin t`.
pub fn example_5_3() -> SystemSpec {
    let c = 2f64.cbrt();
    let a = Matrix::from_rows(&[[-1.0, c, 0.0], [0.0, -2.0, c], [c, 0.0, -4.0]]).expect("static matrix");
    SystemSpec::new(
        "example_5_3",
        a,
        cyclic_drift(|t, y| 0.125 * t.sin() + 1.0 / (4.0 + FRAC_PI_2 + y.atan())),
        Monotonicity::AntiOrderPreserving,
        vec![0.375; 3],
        diagonal_sigma(3, f64::sin),
        PERIOD,
        3,
        -2.0 + 2f64.sqrt(),
        1.0 / 16.0,
    )
    .expect("static preset")
}

/// `h_i(t, x) = f(t, x_{i−1})`, indices mod 3.
fn cyclic_drift(f: fn(f64, f64) -> f64) -> DriftFn {
    Arc::new(move |t, x, out| {
        for i in 0..3 {
            out[i] = f(t, x[(i + 2) % 3]);
        }
    })
}

pub fn preset_registry() -> Vec<Preset> {
    let s5 = 5f64.sqrt();
    let s2 = 2f64.sqrt();
    vec![
        Preset {
            spec: example_5_1(),
            eigenvalues: vec![-1.0, (-3.0 + s5) / 2.0, (-3.0 - s5) / 2.0],
            contraction_bound: 1.0 / (2.0 * (3.0 - s5)),
            tolerance: ToleranceModel::new(0.0, 30.0, 1.0),
            summary: "order-preserving, symmetric coupling of x1 and x2",
        },
        Preset {
            spec: example_5_2(),
            eigenvalues: vec![-1.0, -2.0, -3.0],
            contraction_bound: 9.0 / 16.0,
            tolerance: ToleranceModel::new(0.0, 20.0, 3.0),
            summary: "anti-order-preserving, diagonal A, cyclic drift",
        },
        Preset {
            spec: example_5_3(),
            eigenvalues: vec![-3.0, -2.0 + s2, -2.0 - s2],
            contraction_bound: 9.0 / (16.0 * (2.0 - s2)),
            tolerance: ToleranceModel::new(0.0, 35.0, 5.0),
            summary: "anti-order-preserving, cyclic A and drift",
        },
    ]
}

/// Variants that break one hypothesis each: a drift whose period is 1.5T
/// while T is declared, a non-cooperative `A`, and a drift too steep for the
/// small-gain condition.
pub fn negative_controls() -> Vec<Preset> {
    let base = preset_registry();
    let (p51, p52) = (&base[0], &base[1]);

    let aperiodic = example_5_2().with_drift(
        "aperiodic_h",
        cyclic_drift(|t, y| 1.0 / (6.0 + (t / 1.5).cos() + y.tanh())),
    );

    let mut non_cooperative = example_5_1();
    non_cooperative.name = "non_cooperative_a".into();
    non_cooperative.a = Matrix::from_rows(&[[-1.0, 1.0, 0.0], [-1.0, -2.0, 0.0], [0.0, 1.0, -1.0]]).expect("static matrix");

    let mut steep = example_5_2().with_drift("no_small_gain", cyclic_drift(|t, y| 0.3 + 0.05 * t.cos() - 0.2 * y.tanh()));
    steep.drift_bound = vec![0.55; 3];
    steep.lipschitz = 0.2;

    vec![
        Preset { spec: aperiodic, summary: "drift period 1.5T, declared T", ..p52.clone() },
        Preset {
            spec: non_cooperative,
            eigenvalues: vec![-1.0, -1.5, -1.5],
            summary: "A has a negative off-diagonal entry",
            ..p51.clone()
        },
        Preset { spec: steep, contraction_bound: 1.8, summary: "L·d² = 1.8 > −λ = 1", ..p52.clone() },
    ]
}

/// Looks up a preset or negative control by name.
pub fn lookup(name: &str) -> Result<Preset> {
    preset_registry()
        .into_iter()
        .chain(negative_controls())
        .find(|p| p.spec.name == name)
        .ok_or_else(|| Error::UnknownPreset(name.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::validate_spec;
    use crate::linalg::{certify_stability, expm_scaled};

    fn ex51_phi(t: f64) -> [[f64; 3]; 3] {
        let s5 = 5f64.sqrt();
        let (e1, e2, e3) = ((-t).exp(), ((-3.0 + s5) / 2.0 * t).exp(), ((-3.0 - s5) / 2.0 * t).exp());
        let p = (5.0 + s5) / 10.0;
        let m = (5.0 - s5) / 10.0;
        let c = s5 / 5.0;
        [
            [p * e2 + m * e3, c * e2 - c * e3, 0.0],
            [c * e2 - c * e3, m * e2 + p * e3, 0.0],
            [-e1 + p * e2 + m * e3, c * e2 - c * e3, e1],
        ]
    }

    #[test]
    fn registry_constants() {
        for p in preset_registry() {
            assert!((p.spec.contraction_bound() - p.contraction_bound).abs() < 1e-12, "{}", p.name());
            assert!(p.contraction_bound < 1.0);
            let cert = certify_stability(&p.spec.a, p.spec.lambda, 10.0, 1000).unwrap();
            assert!(cert.is_valid(), "{}: {cert:?}", p.name());
            let lmax = p.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!((lmax - p.spec.lambda).abs() < 1e-12);
        }
    }

    #[test]
    fn registry_validates() {
        for p in preset_registry() {
            assert!(validate_spec(&p.spec, 1000, 11).all_pass(), "{}", p.name());
        }
    }

    #[test]
    fn example_5_1_closed_form() {
        let a = example_5_1().a;
        for t in [0.1, 1.0, 3.0] {
            let got = expm_scaled(&a, t).unwrap();
            let want = ex51_phi(t);
            for i in 0..3 {
                for j in 0..3 {
                    assert!((got.get(i, j) - want[i][j]).abs() < 1e-10, "({i},{j}) at t={t}");
                }
            }
        }
    }

    #[test]
    fn printed_example_5_1_entry_1_2_is_inconsistent_at_zero() {
        // The printed (1,2) entry uses −√5/10 on the second exponential,
        // which does not vanish at t = 0 although Φ(0) = I.
        let s5 = 5f64.sqrt();
        let printed = |t: f64| s5 / 5.0 * ((-3.0 + s5) / 2.0 * t).exp() - s5 / 10.0 * ((-3.0 - s5) / 2.0 * t).exp();
        assert!((printed(0.0) - s5 / 10.0).abs() < 1e-15);
        let got = expm_scaled(&example_5_1().a, 1.0).unwrap();
        assert!((got.get(0, 1) - printed(1.0)).abs() > 1e-3);
        assert!((got.get(0, 1) - ex51_phi(1.0)[0][1]).abs() < 1e-12);
    }

    #[test]
    fn example_5_2_drift_forms_agree() {
        let spec = example_5_2();
        for (t, y) in [(0.3, -1.2), (2.0, 0.0), (5.5, 3.0)] {
            let h = spec.drift_at(t, &[0.0, 0.0, y]);
            let alt = 1.0 / (5.0 + f64::cos(t) + (1.0 + y.tanh()));
            assert!((h[0] - alt).abs() < 1e-15);
        }
    }

    #[test]
    fn lookup_by_name() {
        assert_eq!(lookup("example_5_3").unwrap().name(), "example_5_3");
        assert_eq!(lookup("aperiodic_h").unwrap().name(), "aperiodic_h");
        assert!(matches!(lookup("example_9"), Err(Error::UnknownPreset(_))));
        assert_eq!(negative_controls().len(), 3);
    }
}
