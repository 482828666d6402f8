//! Two-dimensional cuts through stacked fields and modes.

use serde::{Deserialize, Serialize};

use super::GridLayout;
use crate::error::{DmdError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceSpec {
    /// Horizontal map at depth level `k` (`k = 0` is the surface); rows `j`, columns `i`.
    Layer { channel: usize, k: usize },
    /// Vertical section below a polyline of `(i, j)` vertices; rows `k`, columns along the path.
    Section { channel: usize, path: Vec<(usize, usize)> },
    /// Per water column, the value in the deepest ocean cell; rows `j`, columns `i`.
    Bottom { channel: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceKind {
    Layer,
    Section,
    Bottom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellCoord {
    pub i: usize,
    pub j: usize,
    pub k: usize,
}

/// Row-major 2-D array; `None` marks land (missing) cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice2d<S> {
    pub kind: SliceKind,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<Option<S>>,
    /// Grid cell behind each entry, when one exists.
    pub cells: Vec<Option<CellCoord>>,
}

impl<S: Copy> Slice2d<S> {
    pub fn get(&self, row: usize, col: usize) -> Option<S> {
        self.values[row * self.cols + col]
    }

    pub fn map<U: Copy>(&self, f: impl Fn(S) -> U) -> Slice2d<U> {
        Slice2d {
            kind: self.kind,
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|v| v.map(&f)).collect(),
            cells: self.cells.clone(),
        }
    }

    pub fn is_all_missing(&self) -> bool {
        self.values.iter().all(Option::is_none)
    }
}

/// Grid columns visited by a polyline, consecutive duplicates removed.
fn rasterize_path(path: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    let mut push = |p: (usize, usize)| {
        if out.last() != Some(&p) {
            out.push(p);
        }
    };
    if let Some(&first) = path.first() {
        push(first);
    }
    for seg in path.windows(2) {
        let (x0, y0) = (seg[0].0 as i64, seg[0].1 as i64);
        let (x1, y1) = (seg[1].0 as i64, seg[1].1 as i64);
        let steps = (x1 - x0).abs().max((y1 - y0).abs());
        for s in 1..=steps {
            let x = x0 as f64 + (x1 - x0) as f64 * s as f64 / steps as f64;
            let y = y0 as f64 + (y1 - y0) as f64 * s as f64 / steps as f64;
            push((x.round() as usize, y.round() as usize));
        }
    }
    out
}

/// Copies entries of a stacked vector (length `layout.dim()`) into a 2-D slice.
pub fn extract_slice<S: Copy>(values: &[S], layout: &GridLayout, spec: &SliceSpec) -> Result<Slice2d<S>> {
    if values.len() != layout.dim() {
        return Err(DmdError::ShapeMismatch(format!(
            "vector has {} entries, layout dimension is {}",
            values.len(),
            layout.dim()
        )));
    }
    let (nx, ny, nz) = layout.dims();
    let channel = match spec {
        SliceSpec::Layer { channel, .. } | SliceSpec::Section { channel, .. } | SliceSpec::Bottom { channel } => *channel,
    };
    if channel >= layout.channels().len() {
        return Err(DmdError::InvalidInput(format!(
            "channel {channel} out of range (layout has {})",
            layout.channels().len()
        )));
    }
    let fetch = |i: usize, j: usize, k: usize| layout.stacked_index(channel, i, j, k).map(|r| values[r]);

    match spec {
        SliceSpec::Layer { k, .. } => {
            if *k >= nz {
                return Err(DmdError::InvalidInput(format!("depth level {k} out of range 0..{nz}")));
            }
            let mut out = Vec::with_capacity(nx * ny);
            let mut cells = Vec::with_capacity(nx * ny);
            for j in 0..ny {
                for i in 0..nx {
                    out.push(fetch(i, j, *k));
                    cells.push(Some(CellCoord { i, j, k: *k }));
                }
            }
            Ok(Slice2d { kind: SliceKind::Layer, rows: ny, cols: nx, values: out, cells })
        }
        SliceSpec::Section { path, .. } => {
            if path.is_empty() {
                return Err(DmdError::InvalidInput("section path is empty".into()));
            }
            if let Some(&(i, j)) = path.iter().find(|&&(i, j)| i >= nx || j >= ny) {
                return Err(DmdError::InvalidInput(format!("section vertex ({i}, {j}) outside {nx}x{ny}")));
            }
            let columns = rasterize_path(path);
            let cols = columns.len();
            let mut out = Vec::with_capacity(nz * cols);
            let mut cells = Vec::with_capacity(nz * cols);
            for k in 0..nz {
                for &(i, j) in &columns {
                    out.push(fetch(i, j, k));
                    cells.push(Some(CellCoord { i, j, k }));
                }
            }
            Ok(Slice2d { kind: SliceKind::Section, rows: nz, cols, values: out, cells })
        }
        SliceSpec::Bottom { .. } => {
            let mut out = Vec::with_capacity(nx * ny);
            let mut cells = Vec::with_capacity(nx * ny);
            for j in 0..ny {
                for i in 0..nx {
                    let deepest = (0..nz).rev().find(|&k| layout.is_ocean(i, j, k));
                    out.push(deepest.and_then(|k| fetch(i, j, k)));
                    cells.push(deepest.map(|k| CellCoord { i, j, k }));
                }
            }
            Ok(Slice2d { kind: SliceKind::Bottom, rows: ny, cols: nx, values: out, cells })
        }
    }
}
