//! CSV and Matrix Market output.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use fpk_core::spectral::SpectralData;
use fpk_core::{Grid2D, LinOp, ScalarField, TrajectoryRecord};

pub fn write_trajectory_csv(path: &Path, rec: &TrajectoryRecord) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["t", "l2dev", "u", "mass", "minrho", "V"])?;
    for i in 0..rec.len() {
        let v = rec.v.as_ref().map(|v| format!("{:e}", v[i])).unwrap_or_default();
        w.write_record([
            format!("{:e}", rec.t[i]),
            format!("{:e}", rec.l2dev[i]),
            format!("{:e}", rec.u[i]),
            format!("{:.17e}", rec.mass[i]),
            format!("{:e}", rec.min_rho[i]),
            v,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub struct TrajectoryColumns {
    pub t: Vec<f64>,
    pub l2dev: Vec<f64>,
}

pub fn read_trajectory_csv(path: &Path) -> Result<TrajectoryColumns> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let (mut t, mut l2dev) = (Vec::new(), Vec::new());
    for row in r.records() {
        let row = row?;
        t.push(row.get(0).unwrap_or_default().parse()?);
        l2dev.push(row.get(1).unwrap_or_default().parse()?);
    }
    Ok(TrajectoryColumns { t, l2dev })
}

pub fn write_spectrum_csv(path: &Path, spec: &SpectralData) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["index", "re", "im", "residual_right", "residual_left"])?;
    for (i, p) in spec.pairs.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            format!("{:e}", p.re),
            format!("{:e}", p.im),
            format!("{:e}", p.residual_right),
            format!("{:e}", p.residual_left),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `x1, x2, value` per node, in node order.
pub fn write_field_csv(path: &Path, grid: &Grid2D, values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x1", "x2", "value"])?;
    for (idx, v) in values.iter().enumerate() {
        let (x1, x2) = grid.point(idx);
        w.write_record([format!("{x1:e}"), format!("{x2:e}"), format!("{v:e}")])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a field written by [`write_field_csv`], or a bare column of values.
pub fn read_field_csv(path: &Path, grid: &Grid2D) -> Result<ScalarField> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut values = Vec::with_capacity(grid.k());
    for row in r.records() {
        let row = row?;
        let last = row.get(row.len().saturating_sub(1)).unwrap_or_default().trim();
        match last.parse::<f64>() {
            Ok(v) => values.push(v),
            Err(_) if values.is_empty() => continue, // header
            Err(e) => bail!("bad value {last:?}: {e}"),
        }
    }
    Ok(ScalarField::new(*grid, values)?)
}

pub fn write_matrix_market(path: &Path, op: &LinOp) -> Result<()> {
    let m = op.matrix();
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(w, "% {:?} operator on a {}x{} grid", op.tag(), op.grid().nx1(), op.grid().nx2())?;
    writeln!(w, "{} {} {}", m.nrows(), m.ncols(), m.nnz())?;
    for (r, c, v) in m.triplets() {
        writeln!(w, "{} {} {:.17e}", r + 1, c + 1, v)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_vector_csv(path: &Path, header: &str, v: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{header}")?;
    for x in v {
        writeln!(w, "{x:.17e}")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use fpk_core::Rect;

    #[test]
    fn field_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid2D::new(5, 4, Rect::UNIT).unwrap();
        let f = ScalarField::from_fn(g, |x, y| x + 10.0 * y);
        let p = dir.path().join("f.csv");
        write_field_csv(&p, &g, f.values()).unwrap();
        let back = read_field_csv(&p, &g).unwrap();
        for (a, b) in back.values().iter().zip(f.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        let g2 = Grid2D::new(4, 4, Rect::UNIT).unwrap();
        assert!(read_field_csv(&p, &g2).is_err());
    }
}
