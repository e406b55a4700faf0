//! Field export: CSV tables and SVG director plots.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::qfield::QField;

pub const CSV_HEADER: &str = "x,y,q11,q12";

/// `x,y,q11,q12` rows, y-major, numbers in shortest round-trip form.
pub fn to_csv(q: &QField) -> String {
    let mut out = String::with_capacity(q.m * q.m * 48);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for j in 0..q.m {
        for i in 0..q.m {
            let p = q.point(i, j);
            let k = q.idx(i, j);
            let _ = writeln!(out, "{},{},{},{}", p.x, p.y, q.q11[k], q.q12[k]);
        }
    }
    out
}

pub fn from_csv(text: &str) -> Result<QField> {
    let bad = |detail: String| Error::Format {
        what: "field csv",
        detail,
    };
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(bad(format!("missing header {CSV_HEADER:?}")));
    }
    let rows: Vec<&str> = lines.filter(|l| !l.is_empty()).collect();
    let m = (rows.len() as f64).sqrt().round() as usize;
    if m < 2 || m * m != rows.len() {
        return Err(bad(format!("{} rows is not a square lattice", rows.len())));
    }
    let mut q = QField::zeros(m);
    for (n, row) in rows.iter().enumerate() {
        let vals: Vec<f64> = row
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(format!("row {}: {e}", n + 2)))?;
        if vals.len() != 4 {
            return Err(bad(format!("row {} has {} columns", n + 2, vals.len())));
        }
        let (i, j) = (n % m, n / m);
        let p = q.point(i, j);
        if vals[0] != p.x || vals[1] != p.y {
            return Err(bad(format!(
                "row {} at ({}, {}) out of lattice order",
                n + 2,
                vals[0],
                vals[1]
            )));
        }
        let k = q.idx(i, j);
        q.q11[k] = vals[2];
        q.q12[k] = vals[3];
    }
    Ok(q)
}

pub fn export_csv(q: &QField, path: &Path) -> Result<()> {
    fs::write(path, to_csv(q)).map_err(|e| Error::io(path, e))
}

pub fn import_csv(path: &Path) -> Result<QField> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_csv(&text)
}

const CANVAS: f64 = 640.0;
const MARGIN: f64 = 16.0;

/// Director segments at every `stride`-th node, at angle `½·atan2(q12, q11)`
/// and length `min(|Q|, 1)` times the plotted cell size. The y axis points up.
pub fn director_svg(q: &QField, stride: usize) -> Result<String> {
    if stride == 0 {
        return Err(Error::domain("stride must be at least 1"));
    }
    let side = CANVAS - 2.0 * MARGIN;
    let cell = side * q.spacing() * stride as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{CANVAS}" height="{CANVAS}" viewBox="0 0 {CANVAS} {CANVAS}">"#
    );
    let _ = writeln!(
        out,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{side}" height="{side}" fill="white" stroke="black"/>"#
    );
    let _ = writeln!(
        out,
        r#"<g stroke="black" stroke-width="1.2" stroke-linecap="round">"#
    );
    for j in (0..q.m).step_by(stride) {
        for i in (0..q.m).step_by(stride) {
            let k = q.idx(i, j);
            let (a, b) = (q.q11[k], q.q12[k]);
            let len = a.hypot(b).min(1.0) * cell;
            if len == 0.0 {
                continue;
            }
            let theta = 0.5 * b.atan2(a);
            let p = q.point(i, j);
            let (cx, cy) = (MARGIN + p.x * side, MARGIN + (1.0 - p.y) * side);
            let (dx, dy) = (0.5 * len * theta.cos(), -0.5 * len * theta.sin());
            let _ = writeln!(
                out,
                r#"<line x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}"/>"#,
                cx - dx,
                cy - dy,
                cx + dx,
                cy + dy
            );
        }
    }
    out.push_str("</g>\n</svg>\n");
    Ok(out)
}

pub fn export_svg_director(q: &QField, path: &Path, stride: usize) -> Result<()> {
    let svg = director_svg(q, stride)?;
    fs::write(path, svg).map_err(|e| Error::io(path, e))
}
