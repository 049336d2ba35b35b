//! Matrix exponential by scaling and squaring with diagonal Padé approximants
//! (Higham 2005). The approximant degree m ∈ {3, 5, 7, 9, 13} is the lowest
//! whose backward-error threshold θ_m exceeds ‖tA‖₁; above θ_13 the argument
//! is scaled by 2^{-s} and the result squared s times. No eigendecomposition
//! is used, so non-normal matrices are handled the same way as normal ones.

use super::Matrix;
use crate::error::{Error, Result};

const THETA_3: f64 = 1.495585217958292e-2;
const THETA_5: f64 = 2.539398330063230e-1;
const THETA_7: f64 = 9.504178996162932e-1;
const THETA_9: f64 = 2.097847961257068e0;
const THETA_13: f64 = 5.371920351148152e0;

const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const B9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const B13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Computes `exp(tA)`, i.e. the fundamental matrix Φ(t) of `x' = Ax`.
///
/// `t` may have either sign. `t == 0` returns the identity exactly.
pub fn expm_scaled(a: &Matrix, t: f64) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::NotSquare { rows: a.rows(), cols: a.cols() });
    }
    if !t.is_finite() {
        return Err(Error::InvalidParameter(format!("time must be finite, got {t}")));
    }
    let n = a.rows();
    if t == 0.0 {
        return Ok(Matrix::identity(n));
    }
    let x = a.scale(t);
    let norm = x.one_norm();
    if norm == 0.0 {
        return Ok(Matrix::identity(n));
    }

    let low_order: [(f64, &[f64]); 4] = [(THETA_3, &B3), (THETA_5, &B5), (THETA_7, &B7), (THETA_9, &B9)];
    for (theta, coeffs) in low_order {
        if norm <= theta {
            return pade_low(&x, coeffs);
        }
    }

    let squarings = if norm > THETA_13 { (norm / THETA_13).log2().ceil() as i32 } else { 0 };
    let scaled = x.scale(2f64.powi(-squarings));
    let mut r = pade13(&scaled)?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    Ok(r)
}

/// Degree 3..9 approximant: `U = X Σ b_{2k+1} X^{2k}`, `V = Σ b_{2k} X^{2k}`,
/// `r = (V − U)^{-1}(V + U)`.
fn pade_low(x: &Matrix, b: &[f64]) -> Result<Matrix> {
    let n = x.rows();
    let x2 = x * x;
    let mut u = Matrix::zeros(n, n);
    let mut v = Matrix::zeros(n, n);
    let mut power = Matrix::identity(n);
    for k in 0..b.len() / 2 {
        u = &u + &power.scale(b[2 * k + 1]);
        v = &v + &power.scale(b[2 * k]);
        power = &power * &x2;
    }
    let u = x * &u;
    (&v - &u).solve(&(&v + &u))
}

fn pade13(x: &Matrix) -> Result<Matrix> {
    let n = x.rows();
    let id = Matrix::identity(n);
    let x2 = x * x;
    let x4 = &x2 * &x2;
    let x6 = &x2 * &x4;
    let b = &B13;

    let inner_u = &(&x6.scale(b[13]) + &x4.scale(b[11])) + &x2.scale(b[9]);
    let outer_u = &(&(&x6.scale(b[7]) + &x4.scale(b[5])) + &x2.scale(b[3])) + &id.scale(b[1]);
    let u = x * &(&(&x6 * &inner_u) + &outer_u);

    let inner_v = &(&x6.scale(b[12]) + &x4.scale(b[10])) + &x2.scale(b[8]);
    let outer_v = &(&(&x6.scale(b[6]) + &x4.scale(b[4])) + &x2.scale(b[2])) + &id.scale(b[0]);
    let v = &(&x6 * &inner_v) + &outer_v;

    (&v - &u).solve(&(&v + &u))
}
