//! Trace CSV and metrics JSON writers.
//!
//! Files are staged next to their destination and renamed into place, so an
//! interrupted run never leaves a truncated file behind.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;
use crate::sim::TraceRecord;

/// Nine significant digits.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.8e}")
}

pub fn trace_header(dim: usize) -> Vec<String> {
    let mut cols: Vec<String> = ["run", "slot", "system"].iter().map(|s| s.to_string()).collect();
    cols.extend((0..dim).map(|d| format!("x{d}")));
    cols.extend(
        [
            "abs_angle",
            "beta",
            "alpha",
            "xi",
            "power",
            "tr_k",
            "tr_v",
            "m_bar",
            "q_beta",
            "q_power",
            "q_stab",
            "gamma_beta",
            "gamma_power",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    cols
}

fn trace_row(r: &TraceRecord) -> Vec<String> {
    let mut row = vec![r.run.to_string(), r.slot.to_string(), r.system.to_string()];
    row.extend(r.x.iter().map(|v| fmt_float(*v)));
    row.push(fmt_float(r.abs_angle));
    row.push(r.beta.to_string());
    row.push(u8::from(r.alpha).to_string());
    row.push(u8::from(r.xi).to_string());
    for v in [r.power, r.tr_k, r.tr_v, r.m_bar, r.q_beta, r.q_power, r.q_stab, r.gamma_beta, r.gamma_power] {
        row.push(fmt_float(v));
    }
    row
}

pub fn write_trace_csv<W: Write>(out: W, dim: usize, trace: &[TraceRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trace_header(dim))?;
    for r in trace {
        w.write_record(trace_row(r))?;
    }
    w.flush()?;
    Ok(())
}

fn staging_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

/// Writes through `f` into a staging file, then renames it over `path`.
pub fn write_atomic(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> Result<()>) -> Result<()> {
    let tmp = staging_path(path);
    let result = (|| {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        f(&mut w)?;
        w.flush()?;
        w.get_ref().sync_all()?;
        Ok(())
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(e);
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_trace_file(path: &Path, dim: usize, trace: &[TraceRecord]) -> Result<()> {
    write_atomic(path, |w| write_trace_csv(w, dim, trace))
}

pub fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_float(0.1), "1.00000000e-1");
        assert_eq!(fmt_float(-123456.7891), "-1.23456789e5");
        assert_eq!(fmt_float(0.0), "0.00000000e0");
        assert_eq!(fmt_float(1.23456789e5).parse::<f64>().unwrap(), 123456.789);
    }

    #[test]
    fn row_matches_header() {
        let r = TraceRecord {
            run: 0,
            slot: 3,
            system: 1,
            x: DVector::from_row_slice(&[0.0, 1.0, 2.0, 3.0]),
            abs_angle: 2.0,
            beta: 4,
            alpha: true,
            xi: false,
            power: 1.5,
            tr_k: 0.0,
            tr_v: 0.0,
            m_bar: 0.0,
            q_beta: 0.0,
            q_power: 0.0,
            q_stab: 0.0,
            gamma_beta: 0.0,
            gamma_power: 0.0,
        };
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, 4, &[r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].split(',').count(), lines[1].split(',').count());
        assert!(lines[1].starts_with("0,3,1,"));
        assert!(lines[1].contains(",4,1,0,"));
    }

    #[test]
    fn atomic_write_leaves_no_staging_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        write_json_file(&path, &serde_json::json!({"a": 1})).unwrap();
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names, vec![std::ffi::OsString::from("m.json")]);
    }
}
