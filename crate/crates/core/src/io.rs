//! Binary snapshots of time-indexed value functions.
//!
//! Layout (little-endian): magic `HJRS`, `u32` version, `u32` dimension
//! count, then per axis `u64` count, `f64` lower, `f64` upper; `u64` time
//! count and the times; then every field's values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::grid::{Axis, GridError, GridSpec, ScalarField};
use crate::pde::{PdeError, TimeSeriesField};

pub const MAGIC: [u8; 4] = *b"HJRS";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a snapshot file")]
    BadMagic,
    #[error("unsupported snapshot version {0}")]
    Version(u32),
    #[error("snapshot header is implausible: {0}")]
    Header(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Pde(#[from] PdeError),
}

pub fn write_snapshot<W: Write>(mut w: W, series: &TimeSeriesField) -> Result<(), SnapshotError> {
    let grid = series.grid();
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(grid.ndim() as u32).to_le_bytes())?;
    for a in grid.axes() {
        w.write_all(&(a.count as u64).to_le_bytes())?;
        w.write_all(&a.lower.to_le_bytes())?;
        w.write_all(&a.upper.to_le_bytes())?;
    }
    w.write_all(&(series.times().len() as u64).to_le_bytes())?;
    for t in series.times() {
        w.write_all(&t.to_le_bytes())?;
    }
    for f in series.fields() {
        for v in f.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> std::io::Result<f64> {
    let mut b = [0; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn read_snapshot<R: Read>(mut r: R) -> Result<TimeSeriesField, SnapshotError> {
    let mut magic = [0; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(SnapshotError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(SnapshotError::Version(version));
    }
    let ndim = read_u32(&mut r)? as usize;
    if ndim == 0 || ndim > 16 {
        return Err(SnapshotError::Header(format!("{ndim} dimensions")));
    }
    let mut axes = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let count = read_u64(&mut r)?;
        let count = usize::try_from(count).map_err(|_| SnapshotError::Header(format!("axis count {count}")))?;
        axes.push(Axis::new(count, read_f64(&mut r)?, read_f64(&mut r)?));
    }
    let grid = GridSpec::new(axes)?;
    let ntimes = read_u64(&mut r)?;
    if ntimes == 0 || ntimes > 1 << 24 {
        return Err(SnapshotError::Header(format!("{ntimes} time levels")));
    }
    let times = (0..ntimes).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>, _>>()?;
    let mut fields = Vec::with_capacity(times.len());
    let mut buf = vec![0u8; grid.len() * 8];
    for _ in 0..times.len() {
        r.read_exact(&mut buf)?;
        let data = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        fields.push(ScalarField::new(grid.clone(), data)?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(SnapshotError::Header("trailing bytes".into()));
    }
    Ok(TimeSeriesField::new(times, fields)?)
}

pub fn save_snapshot(path: &Path, series: &TimeSeriesField) -> Result<(), SnapshotError> {
    write_snapshot(BufWriter::new(File::create(path)?), series)
}

pub fn load_snapshot(path: &Path) -> Result<TimeSeriesField, SnapshotError> {
    read_snapshot(BufReader::new(File::open(path)?))
}
