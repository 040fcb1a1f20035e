//! On-disk formats.
//!
//! Field dump (`*.bin`), little endian:
//!
//! ```text
//! b"MFGF" | version u32 = 1 | dim u32 | J u32 | L f64 | count u32 | count × J^dim f64
//! ```
//!
//! Ensemble dump: `N u64 | dim u32 | N × dim f64`. CSV exports print floats in
//! shortest round-trip exponent form.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{MfgError, Result};
use crate::field::ScalarField;
use crate::grid::Grid;
use crate::integrate::Trajectory;
use crate::sde::Ensemble;

pub const FIELD_MAGIC: [u8; 4] = *b"MFGF";
pub const FIELD_VERSION: u32 = 1;

fn read_exact<const N: usize>(r: &mut impl Read, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|_| MfgError::Format(format!("truncated {what}")))?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    read_exact::<4>(r, what).map(u32::from_le_bytes)
}

fn read_f64(r: &mut impl Read, what: &str) -> Result<f64> {
    read_exact::<8>(r, what).map(f64::from_le_bytes)
}

/// Write frames sharing one grid.
pub fn encode_fields(mut w: impl Write, frames: &[ScalarField]) -> Result<()> {
    let first = frames
        .first()
        .ok_or_else(|| MfgError::Format("no frames to dump".into()))?;
    let g = *first.grid();
    if frames.iter().any(|f| *f.grid() != g) {
        return Err(MfgError::Format("frames live on different grids".into()));
    }
    w.write_all(&FIELD_MAGIC)?;
    w.write_all(&FIELD_VERSION.to_le_bytes())?;
    w.write_all(&(g.dim() as u32).to_le_bytes())?;
    w.write_all(&(g.points() as u32).to_le_bytes())?;
    w.write_all(&g.half_width().to_le_bytes())?;
    w.write_all(&(frames.len() as u32).to_le_bytes())?;
    for f in frames {
        for v in f.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn decode_fields(mut r: impl Read) -> Result<(Grid, Vec<ScalarField>)> {
    if read_exact::<4>(&mut r, "magic")? != FIELD_MAGIC {
        return Err(MfgError::Format("bad magic, not a field dump".into()));
    }
    let version = read_u32(&mut r, "version")?;
    if version != FIELD_VERSION {
        return Err(MfgError::Format(format!("unsupported field dump version {version}")));
    }
    let dim = read_u32(&mut r, "header")? as usize;
    let points = read_u32(&mut r, "header")? as usize;
    let l = read_f64(&mut r, "header")?;
    let count = read_u32(&mut r, "header")? as usize;
    let g = Grid::new(dim, l, points).map_err(|e| MfgError::Format(format!("bad grid in header: {e}")))?;
    let mut frames = Vec::with_capacity(count);
    let mut buf = vec![0u8; 8 * g.len()];
    for _ in 0..count {
        r.read_exact(&mut buf)
            .map_err(|_| MfgError::Format("truncated field data".into()))?;
        let vals = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        frames.push(ScalarField::from_values(g, vals));
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(MfgError::Format("trailing bytes after field data".into()));
    }
    Ok((g, frames))
}

pub fn write_fields(path: &Path, frames: &[ScalarField]) -> Result<()> {
    encode_fields(BufWriter::new(File::create(path)?), frames)
}

pub fn read_fields(path: &Path) -> Result<(Grid, Vec<ScalarField>)> {
    decode_fields(BufReader::new(File::open(path)?))
}

pub fn encode_ensemble(mut w: impl Write, ens: &Ensemble) -> Result<()> {
    w.write_all(&(ens.len() as u64).to_le_bytes())?;
    w.write_all(&(ens.dim() as u32).to_le_bytes())?;
    for x in ens.positions() {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// `(dim, positions)` of an ensemble dump.
pub fn decode_ensemble(mut r: impl Read) -> Result<(usize, Vec<f64>)> {
    let n = u64::from_le_bytes(read_exact::<8>(&mut r, "ensemble header")?) as usize;
    let dim = read_u32(&mut r, "ensemble header")? as usize;
    if !(1..=2).contains(&dim) {
        return Err(MfgError::Format(format!("ensemble dimension {dim}")));
    }
    let mut pos = Vec::with_capacity(n * dim);
    for _ in 0..n * dim {
        pos.push(read_f64(&mut r, "ensemble positions")?);
    }
    Ok((dim, pos))
}

pub fn write_ensemble(path: &Path, ens: &Ensemble) -> Result<()> {
    encode_ensemble(BufWriter::new(File::create(path)?), ens)
}

pub fn read_ensemble(path: &Path) -> Result<(usize, Vec<f64>)> {
    decode_ensemble(BufReader::new(File::open(path)?))
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

/// Generic table with a header row.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Numeric table; floats in round-trip form.
pub fn write_numeric_table(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let rows: Vec<Vec<String>> = rows.iter().map(|r| r.iter().copied().map(num).collect()).collect();
    write_table(path, header, &rows)
}

/// One row per node: `x,value` in 1D, `x,y,value` in 2D.
pub fn write_field_csv(path: &Path, f: &ScalarField) -> Result<()> {
    let g = f.grid();
    let header: &[&str] = if g.dim() == 1 {
        &["x", "value"]
    } else {
        &["x", "y", "value"]
    };
    let rows: Vec<Vec<f64>> = f
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let [x, y] = g.coords(i);
            if g.dim() == 1 {
                vec![x, v]
            } else {
                vec![x, y, v]
            }
        })
        .collect();
    write_numeric_table(path, header, &rows)
}

/// Inverse of [`write_field_csv`] for a known grid.
pub fn read_field_csv(path: &Path, grid: &Grid) -> Result<ScalarField> {
    let mut r = csv::Reader::from_path(path)?;
    let col = grid.dim();
    let mut vals = Vec::with_capacity(grid.len());
    for rec in r.records() {
        let rec = rec?;
        let cell = rec.get(col).ok_or_else(|| MfgError::Format("short CSV row".into()))?;
        vals.push(
            cell.trim()
                .parse::<f64>()
                .map_err(|e| MfgError::Format(format!("bad number `{cell}`: {e}")))?,
        );
    }
    if vals.len() != grid.len() {
        return Err(MfgError::Format(format!(
            "expected {} rows, found {}",
            grid.len(),
            vals.len()
        )));
    }
    Ok(ScalarField::from_values(*grid, vals))
}

/// Space-time table `s,x,value` of a 1D trajectory.
pub fn write_space_time_csv(path: &Path, traj: &Trajectory<ScalarField>) -> Result<()> {
    let g = traj.first().grid();
    if g.dim() != 1 {
        return Err(MfgError::Format(
            "space-time CSV is for one-dimensional trajectories".into(),
        ));
    }
    let mut rows = Vec::with_capacity(traj.len() * g.len());
    for (i, f) in traj.frames().iter().enumerate() {
        let s = traj.frame_time(i);
        for (j, &v) in f.values().iter().enumerate() {
            rows.push(vec![s, g.node(j), v]);
        }
    }
    write_numeric_table(path, &["s", "x", "value"], &rows)
}
