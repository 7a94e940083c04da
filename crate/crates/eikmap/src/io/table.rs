//! CSV tables: measurement points, activation times, tensor parameters and
//! optimization traces. Plain comma-separated text with fixed headers.

use crate::tensor::TensorParamField;
use crate::tv::TraceRow;
use crate::{Error, Result};
use nalgebra::Point3;
use std::io::Write;
use std::path::Path;

pub const MEASUREMENT_HEADER: &str = "x_mm,y_mm,z_mm,lat_ms";
pub const ACTIVATION_HEADER: &str = "vertex_id,u_ms";
pub const TENSOR_HEADER: &str = "triangle,d1,d2,d3";
pub const TRACE_HEADER: &str = "iter,data_term,tv_term,L,step_norm";

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

fn rows(path: &Path, expected_header: &str) -> Result<Vec<(usize, Vec<String>)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty file"))?;
    if header.trim() != expected_header {
        return Err(Error::parse(
            path,
            1,
            format!("expected header '{expected_header}', got '{}'", header.trim()),
        ));
    }
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        out.push((i + 1, line.split(',').map(|s| s.trim().to_string()).collect()));
    }
    Ok(out)
}

fn parse_f64(path: &Path, line: usize, s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::parse(path, line, format!("bad number '{s}'")))
}

/// Measurement CSV: `x_mm,y_mm,z_mm,lat_ms`, one row per point.
pub fn read_measurements_csv(path: &Path) -> Result<(Vec<Point3<f64>>, Vec<f64>)> {
    let mut points = Vec::new();
    let mut times = Vec::new();
    for (lno, fields) in rows(path, MEASUREMENT_HEADER)? {
        if fields.len() != 4 {
            return Err(Error::parse(path, lno, "expected 4 comma-separated fields"));
        }
        points.push(Point3::new(
            parse_f64(path, lno, &fields[0])?,
            parse_f64(path, lno, &fields[1])?,
            parse_f64(path, lno, &fields[2])?,
        ));
        times.push(parse_f64(path, lno, &fields[3])?);
    }
    Ok((points, times))
}

pub fn write_measurements_csv(path: &Path, points: &[Point3<f64>], times: &[f64]) -> Result<()> {
    let mut text = String::from(MEASUREMENT_HEADER);
    text.push('\n');
    for (p, t) in points.iter().zip(times) {
        text.push_str(&format!("{},{},{},{}\n", p.x, p.y, p.z, t));
    }
    write_text(path, &text)
}

pub fn write_activation_csv(path: &Path, u: &[f64]) -> Result<()> {
    let mut text = String::from(ACTIVATION_HEADER);
    text.push('\n');
    for (i, v) in u.iter().enumerate() {
        text.push_str(&format!("{i},{v}\n"));
    }
    write_text(path, &text)
}

pub fn read_activation_csv(path: &Path) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (lno, fields) in rows(path, ACTIVATION_HEADER)? {
        if fields.len() != 2 {
            return Err(Error::parse(path, lno, "expected 2 fields"));
        }
        let id: usize = fields[0]
            .parse()
            .map_err(|_| Error::parse(path, lno, "bad vertex id"))?;
        if id != out.len() {
            return Err(Error::parse(path, lno, "vertex ids must be consecutive"));
        }
        out.push(parse_f64(path, lno, &fields[1])?);
    }
    Ok(out)
}

pub fn write_tensor_csv(path: &Path, params: &TensorParamField) -> Result<()> {
    let mut text = String::from(TENSOR_HEADER);
    text.push('\n');
    for (t, d) in params.values().iter().enumerate() {
        text.push_str(&format!("{t},{},{},{}\n", d[0], d[1], d[2]));
    }
    write_text(path, &text)
}

pub fn read_tensor_csv(path: &Path) -> Result<TensorParamField> {
    let mut values = Vec::new();
    for (lno, fields) in rows(path, TENSOR_HEADER)? {
        if fields.len() != 4 {
            return Err(Error::parse(path, lno, "expected 4 fields"));
        }
        let id: usize = fields[0]
            .parse()
            .map_err(|_| Error::parse(path, lno, "bad triangle id"))?;
        if id != values.len() {
            return Err(Error::parse(path, lno, "triangle ids must be consecutive"));
        }
        values.push([
            parse_f64(path, lno, &fields[1])?,
            parse_f64(path, lno, &fields[2])?,
            parse_f64(path, lno, &fields[3])?,
        ]);
    }
    Ok(TensorParamField::new(values))
}

pub fn write_trace_csv(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut text = String::from(TRACE_HEADER);
    text.push('\n');
    for r in trace {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            r.iter, r.data_term, r.tv_term, r.l, r.step_norm
        ));
    }
    write_text(path, &text)
}
