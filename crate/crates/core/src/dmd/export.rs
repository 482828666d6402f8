//! Persisted decomposition: a JSON header plus a binary mode file.
//!
//! The mode file (`.dmdm`) is: 4-byte magic `DMDM`, u32 version, u64 D,
//! u64 r, then `D·r` little-endian `(re, im)` f64 pairs in column-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{DmdOptions, DmdResult};
use crate::error::{DmdError, Result};
use crate::scalar::{cln, cplx, creal, Real, C};

pub const DMDM_MAGIC: &[u8; 4] = b"DMDM";
const DMDM_VERSION: u32 = 1;
pub const RESULT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultHeader {
    pub schema_version: u32,
    pub dim: usize,
    pub rank: usize,
    pub dt: f64,
    pub t0: f64,
    pub options: DmdOptions,
    /// `[re, im]` pairs.
    pub mu: Vec<[f64; 2]>,
    pub b: Vec<[f64; 2]>,
    pub partner: Vec<Option<usize>>,
    pub residuals: Vec<f64>,
    pub singular_values: Vec<f64>,
    pub reduced_operator_norm: f64,
    pub eigenvector_condition: f64,
    pub mean: Option<Vec<f64>>,
    pub modes_file: String,
}

fn pair<T: Real>(z: C<T>) -> [f64; 2] {
    [z.re.as_f64(), z.im.as_f64()]
}

fn unpair<T: Real>(p: [f64; 2]) -> C<T> {
    cplx(T::lit(p[0]), T::lit(p[1]))
}

/// Writes `<stem>.json` and `<stem>.dmdm`; returns both paths.
pub fn write_result<T: Real>(result: &DmdResult<T>, stem: &Path) -> Result<(PathBuf, PathBuf)> {
    let json_path = stem.with_extension("json");
    let modes_path = stem.with_extension("dmdm");
    let header = ResultHeader {
        schema_version: RESULT_SCHEMA_VERSION,
        dim: result.dim(),
        rank: result.rank(),
        dt: result.dt.as_f64(),
        t0: result.t0.as_f64(),
        options: result.options.clone(),
        mu: result.mu.iter().map(|&z| pair(z)).collect(),
        b: result.b.iter().map(|&z| pair(z)).collect(),
        partner: result.partner.clone(),
        residuals: result.residuals.iter().map(|r| r.as_f64()).collect(),
        singular_values: result.singular_values.iter().map(|s| s.as_f64()).collect(),
        reduced_operator_norm: result.reduced_operator_norm.as_f64(),
        eigenvector_condition: result.eigenvector_condition.as_f64(),
        mean: result.mean.as_ref().map(|m| m.iter().map(|v| v.as_f64()).collect()),
        modes_file: modes_path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    let mut w = BufWriter::new(File::create(&json_path)?);
    serde_json::to_writer_pretty(&mut w, &header)?;
    w.write_all(b"\n")?;
    w.flush()?;

    write_mode_matrix(&modes_path, &result.modes)?;
    Ok((json_path, modes_path))
}

/// Writes a complex `D×r` matrix in the `.dmdm` layout.
pub fn write_mode_matrix<T: Real>(path: &Path, modes: &DMatrix<C<T>>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DMDM_MAGIC)?;
    w.write_all(&DMDM_VERSION.to_le_bytes())?;
    w.write_all(&(modes.nrows() as u64).to_le_bytes())?;
    w.write_all(&(modes.ncols() as u64).to_le_bytes())?;
    for z in modes.iter() {
        w.write_all(&z.re.as_f64().to_le_bytes())?;
        w.write_all(&z.im.as_f64().to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a `.dmdm` matrix.
pub fn read_mode_matrix(path: &Path) -> Result<DMatrix<C<f64>>> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() < 24 || &bytes[0..4] != DMDM_MAGIC {
        return Err(DmdError::Format(format!("{}: not a mode file", path.display())));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != DMDM_VERSION {
        return Err(DmdError::Format(format!("unsupported mode file version {version}")));
    }
    let d = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let r = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let expect = d.checked_mul(r).and_then(|n| n.checked_mul(16)).and_then(|n| n.checked_add(24));
    if expect != Some(bytes.len()) {
        return Err(DmdError::Format(format!(
            "{}: payload length {} does not match {d}x{r}",
            path.display(),
            bytes.len() - 24
        )));
    }
    let vals: Vec<C<f64>> = bytes[24..]
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[0..8].try_into().unwrap());
            let im = f64::from_le_bytes(c[8..16].try_into().unwrap());
            C::new(re, im)
        })
        .collect();
    Ok(DMatrix::from_vec(d, r, vals))
}

/// Loads a result written by [`write_result`]; `json_path` names the header.
pub fn read_result<T: Real>(json_path: &Path) -> Result<DmdResult<T>> {
    let header: ResultHeader = serde_json::from_reader(BufReader::new(File::open(json_path)?))?;
    if header.schema_version != RESULT_SCHEMA_VERSION {
        return Err(DmdError::Format(format!("unsupported result schema {}", header.schema_version)));
    }
    let modes_path = json_path.with_file_name(&header.modes_file);
    let modes = read_mode_matrix(&modes_path)?;
    let r = header.rank;
    if modes.shape() != (header.dim, r)
        || header.mu.len() != r
        || header.b.len() != r
        || header.partner.len() != r
        || header.residuals.len() != r
    {
        return Err(DmdError::Format("result header and mode file disagree".into()));
    }
    if header.partner.iter().flatten().any(|&p| p >= r) {
        return Err(DmdError::Format("partner index out of range".into()));
    }
    if let Some(m) = &header.mean {
        if m.len() != header.dim {
            return Err(DmdError::Format("mean length does not match dimension".into()));
        }
    }
    let dt = T::lit(header.dt);
    let mu: Vec<C<T>> = header.mu.iter().map(|&p| unpair(p)).collect();
    Ok(DmdResult {
        modes: modes.map(|z| cplx(T::lit(z.re), T::lit(z.im))),
        gamma: mu.iter().map(|&m| cln(m) / creal(dt)).collect(),
        mu,
        b: header.b.iter().map(|&p| unpair(p)).collect(),
        partner: header.partner,
        singular_values: header.singular_values.iter().map(|&s| T::lit(s)).collect(),
        residuals: header.residuals.iter().map(|&s| T::lit(s)).collect(),
        reduced_operator_norm: T::lit(header.reduced_operator_norm),
        eigenvector_condition: T::lit(header.eigenvector_condition),
        options: header.options,
        dt,
        t0: T::lit(header.t0),
        mean: header.mean.map(|m| DVector::from_iterator(m.len(), m.into_iter().map(T::lit))),
    })
}
