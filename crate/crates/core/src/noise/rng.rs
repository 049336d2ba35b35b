//! Counter-addressed Gaussian stream.
//!
//! ChaCha8 keyed by `seed`, with the ChaCha stream number set to the ensemble
//! member id. The normal for `(cell n, component l)` is produced by
//! Box–Muller from the two 64-bit words at position `(n + CELL_OFFSET)·m + l`,
//! so any window of cells can be regenerated without touching the others.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Keeps absolute cell indices of two-sided paths nonnegative.
const CELL_OFFSET: i64 = 1 << 40;

/// 32-bit ChaCha words consumed per normal (two `u64` draws).
const WORDS_PER_NORMAL: u128 = 4;

const TWO_POW_M53: f64 = 1.0 / (1u64 << 53) as f64;

pub(super) fn fill_standard_normals(seed: u64, stream_id: u64, first_cell: i64, m: usize, out: &mut [f64]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    let counter = (first_cell + CELL_OFFSET) as u128 * m as u128;
    rng.set_word_pos(counter * WORDS_PER_NORMAL);
    for v in out.iter_mut() {
        // u1 in (0, 1], u2 in [0, 1)
        let u1 = ((rng.next_u64() >> 11) + 1) as f64 * TWO_POW_M53;
        let u2 = (rng.next_u64() >> 11) as f64 * TWO_POW_M53;
        *v = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
    }
}
