//! Dynamic mode decomposition of stacked velocity snapshots: exact and
//! modified (normalized, total-least-squares) DMD, spectral readouts, mode
//! ranking and leave-one-out robustness, reduced-order models, and a
//! synthetic oracle with known spectra.
//!
//! Numerics are generic over [`scalar::Real`] (`f32`, `f64`); the `*F64`
//! aliases below fix the common case.

// `!(x > 0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dmd;
pub mod error;
pub mod field_io;
pub mod linalg;
pub mod modal;
pub mod rom;
pub mod scalar;
pub mod spectrum;
pub mod synth;

pub use dmd::{exact_dmd, reconstruct, BFit, DmdOptions, DmdResult};
pub use error::{DmdError, Result};
pub use field_io::{GridLayout, SnapshotMatrix, VelocityField};
pub use linalg::{SvdMode, TruncatedSvd};
pub use modal::{leave_one_out, LeaveOneOutResult};
pub use rom::{build_rom, RomModel, RomSelection};
pub use scalar::{Real, C};
pub use spectrum::ModeInfo;
pub use synth::{generate, GroundTruth, Oracle, OracleSpec};

pub type SnapshotMatrixF64 = SnapshotMatrix<f64>;
pub type VelocityFieldF64 = VelocityField<f64>;
pub type DmdResultF64 = DmdResult<f64>;
pub type TruncatedSvdF64 = TruncatedSvd<f64>;
pub type ModeInfoF64 = ModeInfo<f64>;
pub type LeaveOneOutResultF64 = LeaveOneOutResult<f64>;
pub type RomModelF64 = RomModel<f64>;
pub type OracleF64 = Oracle<f64>;
pub type Complex64 = C<f64>;
