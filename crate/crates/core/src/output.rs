//! CSV emission. Floats are written in shortest round-trip form, so reruns
//! with the same seeds produce byte-identical files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;
use crate::operators::GridProcess;
use crate::verify::VerificationReport;

/// Plain decimal for moderate magnitudes, exponent form otherwise; both are
/// shortest round-trip representations.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 || !x.is_finite() || (1e-4..1e15).contains(&x.abs()) {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

/// Rows `time, u_1..u_d, Y_1..Y_d` for steps `lo ..= hi`.
pub fn write_solution<W: Write>(w: W, u: &GridProcess, y: &GridProcess, lo: i64, hi: i64) -> Result<()> {
    let d = u.dim();
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["time".to_string()];
    header.extend((1..=d).map(|i| format!("u_{i}")));
    header.extend((1..=d).map(|i| format!("Y_{i}")));
    out.write_record(&header)?;
    for step in lo..=hi {
        let mut row = vec![fmt_f64(u.time(step))];
        row.extend(u.at(step).iter().copied().map(fmt_f64));
        row.extend(y.at(step).iter().copied().map(fmt_f64));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_solution_file(path: &Path, u: &GridProcess, y: &GridProcess, lo: i64, hi: i64) -> Result<()> {
    write_solution(BufWriter::new(File::create(path)?), u, y, lo, hi)
}

pub const REPORT_HEADER: [&str; 10] = ["check", "stream_id", "residual", "tolerance", "pass", "dt", "tail_periods", "n_max", "seed", "note"];

pub fn write_reports<W: Write>(w: W, reports: &[VerificationReport]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(REPORT_HEADER)?;
    for r in reports {
        out.write_record([
            r.check.clone(),
            r.meta.stream_id.to_string(),
            fmt_f64(r.residual),
            fmt_f64(r.tolerance),
            r.pass.to_string(),
            fmt_f64(r.meta.dt),
            r.meta.tail_periods.to_string(),
            r.meta.n_max.to_string(),
            r.meta.seed.to_string(),
            r.note.clone().unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Generic table writer for summaries.
pub fn write_table<W: Write>(w: W, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header)?;
    for row in rows {
        out.write_record(row)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::ProcessTag;
    use crate::verify::ReportMeta;

    #[test]
    fn solution_schema() {
        let u = GridProcess::constant(0, 2, 0.5, &[0.1, 0.2], 0, ProcessTag::InputU);
        let y = GridProcess::constant(0, 2, 0.5, &[1.0, -1.0], 0, ProcessTag::SolutionY);
        let mut buf = Vec::new();
        write_solution(&mut buf, &u, &y, 1, 2).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "time,u_1,u_2,Y_1,Y_2\n0.5,0.1,0.2,1,-1\n1,0.1,0.2,1,-1\n");
    }

    #[test]
    fn report_rows() {
        let r = VerificationReport::new("invariance", 1e-9, 1e-8, ReportMeta { stream_id: 3, ..Default::default() }).with_note("a, b");
        let mut buf = Vec::new();
        write_reports(&mut buf, &[r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("check,stream_id,residual"));
        assert!(text.contains("invariance,3,1e-9,1e-8,true,0,0,0,0,\"a, b\""), "{text}");
    }
}
