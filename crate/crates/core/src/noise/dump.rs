//! Binary path dumps for replay.
//!
//! Layout, all little-endian:
//! `b"RPWPATH1"`, `dt: f64`, `n_points: u64`, `m: u64`, `seed: u64`,
//! `stream_id: u64`, `first_step: i64`, `steps_per_period: u64`, followed by
//! `(n_points − 1)·m` increments as `f64`, cell-major.

use std::io::{Read, Write};

use super::{NoisePath, TimeGrid};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"RPWPATH1";

pub fn write_path<W: Write>(path: &NoisePath, mut w: W) -> Result<()> {
    let g = path.grid();
    w.write_all(MAGIC)?;
    w.write_all(&g.dt().to_le_bytes())?;
    w.write_all(&(g.n_points() as u64).to_le_bytes())?;
    w.write_all(&(path.m as u64).to_le_bytes())?;
    w.write_all(&path.seed().to_le_bytes())?;
    w.write_all(&path.stream_id().to_le_bytes())?;
    w.write_all(&g.first_step().to_le_bytes())?;
    w.write_all(&(g.steps_per_period() as u64).to_le_bytes())?;
    for v in path.increments() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read8<R: Read>(r: &mut R) -> Result<[u8; 8]> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| Error::Dump(e.to_string()))?;
    Ok(b)
}

pub fn read_path<R: Read>(mut r: R) -> Result<NoisePath> {
    if &read8(&mut r)? != MAGIC {
        return Err(Error::Dump("bad magic".into()));
    }
    let dt = f64::from_le_bytes(read8(&mut r)?);
    let n_points = u64::from_le_bytes(read8(&mut r)?) as usize;
    let m = u64::from_le_bytes(read8(&mut r)?) as usize;
    let seed = u64::from_le_bytes(read8(&mut r)?);
    let stream_id = u64::from_le_bytes(read8(&mut r)?);
    let first_step = i64::from_le_bytes(read8(&mut r)?);
    let steps_per_period = u64::from_le_bytes(read8(&mut r)?) as usize;
    if n_points < 2 || m == 0 || !(dt > 0.0) {
        return Err(Error::Dump(format!("invalid header: n_points {n_points}, m {m}, dt {dt}")));
    }
    let grid = TimeGrid::with_dt(
        dt,
        steps_per_period,
        first_step,
        first_step + n_points as i64 - 1,
    )?;
    let mut increments = Vec::with_capacity((n_points - 1) * m);
    for _ in 0..(n_points - 1) * m {
        increments.push(f64::from_le_bytes(read8(&mut r)?));
    }
    Ok(NoisePath::from_increments(grid, m, increments, seed, stream_id))
}
