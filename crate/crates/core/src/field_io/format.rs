//! On-disk snapshot formats.
//!
//! `DMDS` binary: magic `DMDS`, `u32` version (1), `u64` D, `u64` N, `f64` dt
//! (hours), `f64` t0 (hours), then `D·N` little-endian `f64` in column-major
//! order. An optional JSON grid sidecar (`<stem>.grid.json`) carries the layout.
//! Small fixtures may instead be CSV with one column per snapshot and a header
//! row of `t=<hours>` labels.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{Channel, GridLayout, SnapshotMatrix, VelocityField, STACKING_ORDER};
use crate::error::{DmdError, Result};
use crate::scalar::Real;

pub const DMDS_MAGIC: &[u8; 4] = b"DMDS";
pub const DMDS_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 8 + 8 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    Dmds,
    Csv,
}

impl InputFormat {
    pub fn from_path(path: &Path) -> Option<InputFormat> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "dmds" | "bin" => Some(InputFormat::Dmds),
            "csv" => Some(InputFormat::Csv),
            _ => None,
        }
    }
}

/// What the rows of a data file hold relative to the sidecar's grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FieldContent {
    /// Stacked observables: either ocean rows only, or every cell per channel
    /// (land rows are dropped and may hold NaN).
    #[default]
    Stacked,
    /// Raw `Ux, Uy, Uz` on every cell (`3 · n_cells` rows); stacked at ingestion.
    Velocity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub channels: Vec<Channel>,
    /// Row-major `(k, j, i)` mask, 1 = ocean.
    pub mask: Vec<u8>,
    pub stacking_order: String,
    #[serde(default)]
    pub content: FieldContent,
}

impl Sidecar {
    pub fn from_layout(layout: &GridLayout) -> Self {
        let (nx, ny, nz) = layout.dims();
        Sidecar {
            nx,
            ny,
            nz,
            channels: layout.channels().to_vec(),
            mask: layout.mask().iter().map(|&b| u8::from(b)).collect(),
            stacking_order: STACKING_ORDER.to_string(),
            content: FieldContent::Stacked,
        }
    }

    pub fn layout(&self) -> Result<GridLayout> {
        if self.stacking_order != STACKING_ORDER {
            return Err(DmdError::Format(format!(
                "unsupported stacking order {:?}, expected {STACKING_ORDER:?}",
                self.stacking_order
            )));
        }
        let mut mask = Vec::with_capacity(self.mask.len());
        for &m in &self.mask {
            match m {
                0 => mask.push(false),
                1 => mask.push(true),
                other => return Err(DmdError::Format(format!("mask entries must be 0 or 1, found {other}"))),
            }
        }
        GridLayout::new(self.nx, self.ny, self.nz, mask, self.channels.clone())
    }
}

/// `data.dmds` → `data.grid.json`.
pub fn sidecar_path(data_path: &Path) -> PathBuf {
    data_path.with_extension("grid.json")
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let f = File::open(path)?;
    Ok(serde_json::from_reader(BufReader::new(f))?)
}

pub fn write_sidecar(path: &Path, sidecar: &Sidecar) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, sidecar)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Raw matrix plus time axis as stored on disk.
struct RawSnapshots {
    data: DMatrix<f64>,
    dt: f64,
    t0: f64,
}

fn read_raw_dmds(path: &Path) -> Result<RawSnapshots> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)
        .map_err(|_| DmdError::Format(format!("{}: truncated DMDS header", path.display())))?;
    if &header[0..4] != DMDS_MAGIC {
        return Err(DmdError::Format(format!("{}: bad magic, expected DMDS", path.display())));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != DMDS_VERSION {
        return Err(DmdError::Format(format!("unsupported DMDS version {version}")));
    }
    let d = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
    let n = u64::from_le_bytes(header[16..24].try_into().unwrap()) as usize;
    let dt = f64::from_le_bytes(header[24..32].try_into().unwrap());
    let t0 = f64::from_le_bytes(header[32..40].try_into().unwrap());
    let expected = d
        .checked_mul(n)
        .and_then(|x| x.checked_mul(8))
        .ok_or_else(|| DmdError::Format(format!("header dimensions {d}x{n} overflow")))?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != expected {
        return Err(DmdError::Format(format!(
            "header declares {d}x{n} values ({expected} bytes) but payload has {} bytes",
            payload.len()
        )));
    }
    let values: Vec<f64> = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(RawSnapshots { data: DMatrix::from_vec(d, n, values), dt, t0 })
}

fn read_raw_csv(path: &Path) -> Result<RawSnapshots> {
    let r = BufReader::new(File::open(path)?);
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| DmdError::Format("empty CSV".into()))??;
    let mut times = Vec::new();
    for field in header.split(',') {
        let t = field
            .trim()
            .strip_prefix("t=")
            .and_then(|s| s.parse::<f64>().ok())
            .ok_or_else(|| DmdError::Format(format!("CSV header field {field:?} is not t=<hours>")))?;
        times.push(t);
    }
    let n = times.len();
    if n < 2 {
        return Err(DmdError::TooFewSnapshots { required: 2, got: n });
    }
    let dt = times[1] - times[0];
    for w in times.windows(2) {
        if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.abs().max(1.0) {
            return Err(DmdError::Format("CSV snapshot times are not uniformly spaced".into()));
        }
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| DmdError::Format(format!("line {}: bad number {s:?}", lineno + 2)))
            })
            .collect::<Result<_>>()?;
        if row.len() != n {
            return Err(DmdError::Format(format!("line {}: {} values, header has {n}", lineno + 2, row.len())));
        }
        values.extend(row);
        rows += 1;
    }
    if rows == 0 {
        return Err(DmdError::Format("CSV has no data rows".into()));
    }
    Ok(RawSnapshots { data: DMatrix::from_row_slice(rows, n, &values), dt, t0: times[0] })
}

fn cast<T: Real>(m: &DMatrix<f64>) -> DMatrix<T> {
    m.map(T::lit)
}

fn finish<T: Real>(raw: RawSnapshots, sidecar: Option<Sidecar>) -> Result<SnapshotMatrix<T>> {
    let Some(sidecar) = sidecar else {
        return SnapshotMatrix::new(cast(&raw.data), T::lit(raw.dt), T::lit(raw.t0));
    };
    let layout = sidecar.layout()?;
    let (d, n) = raw.data.shape();
    match sidecar.content {
        FieldContent::Stacked if d == layout.dim() => {
            SnapshotMatrix::new(cast(&raw.data), T::lit(raw.dt), T::lit(raw.t0))?.with_layout(layout)
        }
        FieldContent::Stacked if d == layout.channels().len() * layout.n_cells() => {
            let cells = layout.n_cells();
            let rows: Vec<usize> = (0..layout.channels().len())
                .flat_map(|c| layout.ocean_cells().iter().map(move |&cell| c * cells + cell))
                .collect();
            let kept = raw.data.select_rows(rows.iter());
            SnapshotMatrix::new(cast(&kept), T::lit(raw.dt), T::lit(raw.t0))
                .map_err(|e| match e {
                    DmdError::NonFinite { row, col } => DmdError::NonFinite { row: rows[row], col },
                    other => other,
                })?
                .with_layout(layout)
        }
        FieldContent::Stacked => Err(DmdError::ShapeMismatch(format!(
            "file has {d} rows; layout expects {} (ocean) or {} (full grid)",
            layout.dim(),
            layout.channels().len() * layout.n_cells()
        ))),
        FieldContent::Velocity => {
            let cells = layout.n_cells();
            if d != 3 * cells {
                return Err(DmdError::ShapeMismatch(format!(
                    "velocity file has {d} rows, expected 3 x {cells} cells"
                )));
            }
            let fields = (0..n)
                .map(|col| {
                    let c = raw.data.column(col);
                    let part = |k: usize| c.rows(k * cells, cells).iter().map(|&v| T::lit(v)).collect();
                    VelocityField::new(part(0), part(1), part(2))
                })
                .collect::<Result<Vec<_>>>()?;
            SnapshotMatrix::from_fields(&fields, layout, T::lit(raw.dt), T::lit(raw.t0))
        }
    }
}

fn optional_sidecar(path: &Path) -> Result<Option<Sidecar>> {
    let p = sidecar_path(path);
    if p.exists() {
        Ok(Some(read_sidecar(&p)?))
    } else {
        Ok(None)
    }
}

/// Reads a snapshot file; a `<stem>.grid.json` sidecar next to it is applied when present.
pub fn ingest<T: Real>(path: &Path, format: InputFormat) -> Result<SnapshotMatrix<T>> {
    let raw = match format {
        InputFormat::Dmds => read_raw_dmds(path)?,
        InputFormat::Csv => read_raw_csv(path)?,
    };
    finish(raw, optional_sidecar(path)?)
}

/// Reads a DMDS file without looking for a sidecar.
pub fn read_dmds<T: Real>(path: &Path) -> Result<SnapshotMatrix<T>> {
    finish(read_raw_dmds(path)?, None)
}

pub fn read_csv<T: Real>(path: &Path) -> Result<SnapshotMatrix<T>> {
    finish(read_raw_csv(path)?, None)
}

/// Writes the DMDS binary, plus a sidecar when the matrix carries a layout.
pub fn write_dmds<T: Real>(path: &Path, x: &SnapshotMatrix<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DMDS_MAGIC)?;
    w.write_all(&DMDS_VERSION.to_le_bytes())?;
    w.write_all(&(x.dim() as u64).to_le_bytes())?;
    w.write_all(&(x.len() as u64).to_le_bytes())?;
    w.write_all(&x.dt().as_f64().to_le_bytes())?;
    w.write_all(&x.t0().as_f64().to_le_bytes())?;
    for v in x.data().iter() {
        w.write_all(&v.as_f64().to_le_bytes())?;
    }
    w.flush()?;
    if let Some(layout) = x.layout() {
        write_sidecar(&sidecar_path(path), &Sidecar::from_layout(layout))?;
    }
    Ok(())
}

pub fn write_csv<T: Real>(path: &Path, x: &SnapshotMatrix<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header: Vec<String> = (0..x.len()).map(|n| format!("t={}", x.time(n).as_f64())).collect();
    writeln!(w, "{}", header.join(","))?;
    for row in x.data().row_iter() {
        let fields: Vec<String> = row.iter().map(|v| format!("{:.16e}", v.as_f64())).collect();
        writeln!(w, "{}", fields.join(","))?;
    }
    w.flush()?;
    Ok(())
}
