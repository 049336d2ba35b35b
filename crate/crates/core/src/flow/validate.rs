use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::{certify_stability, check_cooperative};
use crate::system::{Monotonicity, SystemSpec};

/// Finite-difference step for the Lipschitz estimate.
const FD_STEP: f64 = 1e-5;
const LIPSCHITZ_SLACK: f64 = 1e-6;
const PERIODICITY_TOL: f64 = 1e-10;
const RANGE_TOL: f64 = 1e-12;
const MONOTONE_TOL: f64 = 1e-12;
/// States are probed in `[-PROBE_RADIUS, PROBE_RADIUS]^d`.
const PROBE_RADIUS: f64 = 5.0;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub pass: bool,
    /// Largest observed violation (negative or zero when the check holds).
    pub worst: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpecReport {
    pub checks: Vec<CheckOutcome>,
    /// Finite-difference estimate of `max_ij |∂h_i/∂x_j|`.
    pub estimated_lipschitz: f64,
}

impl SpecReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn outcome(name: &'static str, worst: f64, limit: f64) -> CheckOutcome {
    CheckOutcome { name, pass: worst <= limit, worst }
}

/// Probes the structural hypotheses at `probe_count` random `(t, x₁ ≤ x₂)`.
///
/// Checks: cooperativity and the claimed decay rate of `A`; `T`-periodicity of
/// `h` and `σ`; `h ∈ [0, N]`; the declared monotonicity; a central-difference
/// Lipschitz estimate against `L`; and the small-gain condition `L·d² < −λ`.
pub fn validate_spec(spec: &SystemSpec, probe_count: usize, seed: u64) -> SpecReport {
    let d = spec.dim();
    let m = spec.noise_dim;
    let t_period = spec.period;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut periodic_h: f64 = 0.0;
    let mut periodic_sigma: f64 = 0.0;
    let mut range: f64 = f64::NEG_INFINITY;
    let mut monotone: f64 = f64::NEG_INFINITY;
    let mut lipschitz: f64 = 0.0;

    let mut h1 = vec![0.0; d];
    let mut h2 = vec![0.0; d];
    let mut s1 = vec![0.0; d * m];
    let mut s2 = vec![0.0; d * m];
    for _ in 0..probe_count {
        let t = rng.random_range(-4.0 * t_period..4.0 * t_period);
        let x1: Vec<f64> = (0..d).map(|_| rng.random_range(-PROBE_RADIUS..PROBE_RADIUS)).collect();
        let x2: Vec<f64> = x1.iter().map(|v| v + rng.random_range(0.0..2.0)).collect();

        (spec.drift)(t, &x1, &mut h1);
        (spec.drift)(t + t_period, &x1, &mut h2);
        periodic_h = h1.iter().zip(&h2).fold(periodic_h, |w, (a, b)| w.max((a - b).abs()));

        (spec.sigma)(t, &mut s1);
        (spec.sigma)(t + t_period, &mut s2);
        periodic_sigma = s1.iter().zip(&s2).fold(periodic_sigma, |w, (a, b)| w.max((a - b).abs()));

        for (v, n) in h1.iter().zip(&spec.drift_bound) {
            range = range.max(-v).max(v - n);
        }

        (spec.drift)(t, &x2, &mut h2);
        for (a, b) in h1.iter().zip(&h2) {
            let v = match spec.monotonicity {
                Monotonicity::OrderPreserving => a - b,
                Monotonicity::AntiOrderPreserving => b - a,
            };
            monotone = monotone.max(v);
        }

        let mut xp = x1.clone();
        let mut xm = x1.clone();
        for j in 0..d {
            xp[j] = x1[j] + FD_STEP;
            xm[j] = x1[j] - FD_STEP;
            (spec.drift)(t, &xp, &mut h1);
            (spec.drift)(t, &xm, &mut h2);
            for (a, b) in h1.iter().zip(&h2) {
                lipschitz = lipschitz.max((a - b).abs() / (2.0 * FD_STEP));
            }
            xp[j] = x1[j];
            xm[j] = x1[j];
        }
    }

    let cooperative = check_cooperative(&spec.a).unwrap_or(false);
    let mut checks = vec![CheckOutcome {
        name: "cooperative_a",
        pass: cooperative,
        worst: if cooperative { 0.0 } else { 1.0 },
    }];
    checks.push(match certify_stability(&spec.a, spec.lambda, 10.0, 1000) {
        Ok(cert) => CheckOutcome { name: "stability_bound", pass: cert.is_valid(), worst: cert.max_violation },
        Err(_) => CheckOutcome { name: "stability_bound", pass: false, worst: f64::INFINITY },
    });
    checks.push(outcome("periodic_h", periodic_h, PERIODICITY_TOL));
    checks.push(outcome("periodic_sigma", periodic_sigma, PERIODICITY_TOL));
    checks.push(outcome("range_h", range, RANGE_TOL));
    checks.push(outcome("monotone_h", monotone, MONOTONE_TOL));
    checks.push(outcome("lipschitz_h", lipschitz - spec.lipschitz, LIPSCHITZ_SLACK));
    let gain = spec.lipschitz * (d * d) as f64 + spec.lambda;
    checks.push(CheckOutcome { name: "small_gain", pass: gain < 0.0, worst: gain });

    SpecReport { checks, estimated_lipschitz: lipschitz }
}
