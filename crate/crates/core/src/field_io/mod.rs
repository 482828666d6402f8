//! Grid/snapshot data model and observable stacking.
//!
//! A snapshot is the concatenation of weighted observable channels evaluated on
//! the ocean (unmasked) cells of a `nx × ny × nz` grid. Rows of the stacked
//! vector are ordered channel-outermost, then depth `k`, latitude `j`, and
//! longitude `i`. With the velocity channels
//! `(√2/2)·[Ux; Uy; √2·Uz; √(Ux²+Uy²)]` the ℓ2 norm of a stacked snapshot equals
//! the ℓ2 norm of the raw three-component velocity field.

mod format;
mod slice;

pub use format::{
    ingest, read_csv, read_dmds, read_sidecar, sidecar_path, write_csv, write_dmds, write_sidecar, FieldContent,
    InputFormat, Sidecar, DMDS_MAGIC, DMDS_VERSION,
};
pub use slice::{extract_slice, CellCoord, Slice2d, SliceKind, SliceSpec};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{DmdError, Result};
use crate::scalar::Real;

/// Stacking-order tag written to grid sidecars.
pub const STACKING_ORDER: &str = "channel,k,j,i";

/// Raw quantity a stacked channel is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    Ux,
    Uy,
    Uz,
    /// Horizontal speed `√(Ux² + Uy²)`, always recomputed from `Ux`, `Uy`.
    Speed,
    /// Opaque scalar channel (synthetic or pre-stacked data).
    Scalar,
}

impl Observable {
    pub fn from_name(name: &str) -> Observable {
        match name.to_ascii_lowercase().as_str() {
            "ux" | "u" => Observable::Ux,
            "uy" | "v" => Observable::Uy,
            "uz" | "w" => Observable::Uz,
            "speed" | "us" => Observable::Speed,
            _ => Observable::Scalar,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub name: String,
    pub weight: f64,
}

impl Channel {
    pub fn new(name: impl Into<String>, weight: f64) -> Self {
        Channel { name: name.into(), weight }
    }

    pub fn observable(&self) -> Observable {
        Observable::from_name(&self.name)
    }
}

/// The four norm-preserving velocity observables.
pub fn velocity_channels() -> Vec<Channel> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    vec![
        Channel::new("ux", h),
        Channel::new("uy", h),
        Channel::new("uz", 1.0),
        Channel::new("speed", h),
    ]
}

/// Masked 3-D grid and the bijection between (channel, k, j, i) and stacked rows.
#[derive(Debug, Clone, PartialEq)]
pub struct GridLayout {
    nx: usize,
    ny: usize,
    nz: usize,
    mask: Vec<bool>,
    channels: Vec<Channel>,
    ocean_cells: Vec<usize>,
    cell_rank: Vec<Option<usize>>,
}

impl GridLayout {
    /// `mask` is indexed row-major as `(k·ny + j)·nx + i`; `true` marks ocean cells.
    pub fn new(nx: usize, ny: usize, nz: usize, mask: Vec<bool>, channels: Vec<Channel>) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(DmdError::InvalidInput(format!("grid extents must be positive, got {nx}x{ny}x{nz}")));
        }
        let n_cells = nx * ny * nz;
        if mask.len() != n_cells {
            return Err(DmdError::ShapeMismatch(format!("mask has {} entries, grid has {n_cells} cells", mask.len())));
        }
        if channels.is_empty() {
            return Err(DmdError::InvalidInput("layout needs at least one channel".into()));
        }
        let mut ocean_cells = Vec::new();
        let mut cell_rank = vec![None; n_cells];
        for (cell, &wet) in mask.iter().enumerate() {
            if wet {
                cell_rank[cell] = Some(ocean_cells.len());
                ocean_cells.push(cell);
            }
        }
        Ok(GridLayout { nx, ny, nz, mask, channels, ocean_cells, cell_rank })
    }

    pub fn all_ocean(nx: usize, ny: usize, nz: usize, channels: Vec<Channel>) -> Result<Self> {
        Self::new(nx, ny, nz, vec![true; nx * ny * nz], channels)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.nz)
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn n_cells(&self) -> usize {
        self.mask.len()
    }

    pub fn n_ocean(&self) -> usize {
        self.ocean_cells.len()
    }

    /// Stacked dimension `D = n_channels · n_ocean`.
    pub fn dim(&self) -> usize {
        self.channels.len() * self.n_ocean()
    }

    pub fn cell_index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.ny + j) * self.nx + i
    }

    pub fn cell_coords(&self, cell: usize) -> (usize, usize, usize) {
        let i = cell % self.nx;
        let j = (cell / self.nx) % self.ny;
        let k = cell / (self.nx * self.ny);
        (i, j, k)
    }

    pub fn in_bounds(&self, i: usize, j: usize, k: usize) -> bool {
        i < self.nx && j < self.ny && k < self.nz
    }

    pub fn is_ocean(&self, i: usize, j: usize, k: usize) -> bool {
        self.in_bounds(i, j, k) && self.mask[self.cell_index(i, j, k)]
    }

    /// Row of the stacked vector holding `channel` at cell `(i, j, k)`; `None` on land.
    pub fn stacked_index(&self, channel: usize, i: usize, j: usize, k: usize) -> Option<usize> {
        if channel >= self.channels.len() || !self.in_bounds(i, j, k) {
            return None;
        }
        self.cell_rank[self.cell_index(i, j, k)].map(|r| channel * self.n_ocean() + r)
    }

    /// Inverse of [`stacked_index`](Self::stacked_index).
    pub fn unstack_index(&self, row: usize) -> Option<(usize, usize, usize, usize)> {
        if row >= self.dim() {
            return None;
        }
        let n = self.n_ocean();
        let (i, j, k) = self.cell_coords(self.ocean_cells[row % n]);
        Some((row / n, i, j, k))
    }

    pub fn channel_position(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c.name.eq_ignore_ascii_case(name))
    }

    pub fn channel_rows(&self, channel: usize) -> std::ops::Range<usize> {
        let n = self.n_ocean();
        channel * n..(channel + 1) * n
    }

    /// Stacked rows of the named channels, in stacking order.
    pub fn rows_for_channels(&self, names: &[&str]) -> Result<Vec<usize>> {
        let mut positions = Vec::with_capacity(names.len());
        for name in names {
            positions.push(
                self.channel_position(name)
                    .ok_or_else(|| DmdError::InvalidInput(format!("unknown channel {name:?}")))?,
            );
        }
        positions.sort_unstable();
        positions.dedup();
        Ok(positions.into_iter().flat_map(|c| self.channel_rows(c)).collect())
    }

    pub(crate) fn ocean_cells(&self) -> &[usize] {
        &self.ocean_cells
    }
}

/// Three-component velocity over all grid cells (m/s), indexed like the mask.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField<T: Real> {
    pub ux: Vec<T>,
    pub uy: Vec<T>,
    pub uz: Vec<T>,
}

impl<T: Real> VelocityField<T> {
    pub fn new(ux: Vec<T>, uy: Vec<T>, uz: Vec<T>) -> Result<Self> {
        if ux.len() != uy.len() || ux.len() != uz.len() {
            return Err(DmdError::ShapeMismatch(format!(
                "velocity components have lengths {}, {}, {}",
                ux.len(),
                uy.len(),
                uz.len()
            )));
        }
        Ok(VelocityField { ux, uy, uz })
    }

    /// ℓ2 norm of `(Ux, Uy, Uz)` over the ocean cells of `layout`.
    pub fn ocean_norm(&self, layout: &GridLayout) -> T {
        layout
            .ocean_cells()
            .iter()
            .fold(T::zero(), |acc, &c| {
                acc + self.ux[c] * self.ux[c] + self.uy[c] * self.uy[c] + self.uz[c] * self.uz[c]
            })
            .sqrt()
    }
}

/// Weighted observable vector of one velocity field, restricted to ocean cells.
pub fn stack_observables<T: Real>(field: &VelocityField<T>, layout: &GridLayout) -> Result<DVector<T>> {
    let n_cells = layout.n_cells();
    if field.ux.len() != n_cells {
        return Err(DmdError::ShapeMismatch(format!(
            "field has {} cells, layout has {n_cells}",
            field.ux.len()
        )));
    }
    let n = layout.n_ocean();
    let mut out = DVector::zeros(layout.dim());
    for (c, channel) in layout.channels().iter().enumerate() {
        let w = T::lit(channel.weight);
        let obs = channel.observable();
        if obs == Observable::Scalar {
            return Err(DmdError::InvalidInput(format!(
                "channel {:?} is not a velocity observable",
                channel.name
            )));
        }
        for (r, &cell) in layout.ocean_cells().iter().enumerate() {
            let (x, y, z) = (field.ux[cell], field.uy[cell], field.uz[cell]);
            if !(x.is_finite() && y.is_finite() && z.is_finite()) {
                return Err(DmdError::NonFinite { row: cell, col: 0 });
            }
            let value = match obs {
                Observable::Ux => x,
                Observable::Uy => y,
                Observable::Uz => z,
                Observable::Speed => x.hypot(y),
                Observable::Scalar => unreachable!(),
            };
            out[c * n + r] = w * value;
        }
    }
    Ok(out)
}

/// `D × N` matrix of stacked snapshots sampled every `dt` hours from `t0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix<T: Real> {
    data: DMatrix<T>,
    dt: T,
    t0: T,
    layout: Option<GridLayout>,
}

impl<T: Real> SnapshotMatrix<T> {
    pub fn new(data: DMatrix<T>, dt: T, t0: T) -> Result<Self> {
        if data.ncols() == 0 || data.nrows() == 0 {
            return Err(DmdError::InvalidInput(format!(
                "snapshot matrix must be non-empty, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if !(dt > T::zero()) || !dt.is_finite() || !t0.is_finite() {
            return Err(DmdError::InvalidInput(format!("time step must be positive and finite, got {dt}")));
        }
        for (col, column) in data.column_iter().enumerate() {
            if let Some(row) = column.iter().position(|x| !x.is_finite()) {
                return Err(DmdError::NonFinite { row, col });
            }
        }
        Ok(SnapshotMatrix { data, dt, t0, layout: None })
    }

    pub fn with_layout(mut self, layout: GridLayout) -> Result<Self> {
        if layout.dim() != self.data.nrows() {
            return Err(DmdError::ShapeMismatch(format!(
                "layout dimension {} does not match {} snapshot rows",
                layout.dim(),
                self.data.nrows()
            )));
        }
        self.layout = Some(layout);
        Ok(self)
    }

    /// Stacks a time series of velocity fields.
    pub fn from_fields(fields: &[VelocityField<T>], layout: GridLayout, dt: T, t0: T) -> Result<Self> {
        let mut data = DMatrix::zeros(layout.dim(), fields.len());
        for (n, f) in fields.iter().enumerate() {
            let col = stack_observables(f, &layout).map_err(|e| match e {
                DmdError::NonFinite { row, .. } => DmdError::NonFinite { row, col: n },
                other => other,
            })?;
            data.set_column(n, &col);
        }
        SnapshotMatrix::new(data, dt, t0)?.with_layout(layout)
    }

    pub fn data(&self) -> &DMatrix<T> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<T> {
        self.data
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn t0(&self) -> T {
        self.t0
    }

    pub fn layout(&self) -> Option<&GridLayout> {
        self.layout.as_ref()
    }

    /// State dimension `D`.
    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    /// Number of snapshots `N`.
    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }

    pub fn time(&self, n: usize) -> T {
        self.t0 + self.dt * T::of_usize(n)
    }

    /// Same time axis and layout, new data.
    pub(crate) fn with_data(&self, data: DMatrix<T>) -> Self {
        SnapshotMatrix { data, dt: self.dt, t0: self.t0, layout: self.layout.clone() }
    }
}

/// Subtracts the time-averaged snapshot from every column.
pub fn remove_temporal_mean<T: Real>(x: &SnapshotMatrix<T>) -> (DVector<T>, SnapshotMatrix<T>) {
    let n = T::of_usize(x.len());
    let mean = x.data().column_sum() / n;
    let mut centered = x.data().clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    (mean, x.with_data(centered))
}
