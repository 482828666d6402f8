//! Mode ranking (RMS contributions), persistence, leave-one-out robustness,
//! kernel density estimates over the complex plane and eigenvalue clustering.

mod kde;
mod loo;

pub use kde::{
    cluster_eigenvalues, energy_density, kde_eval, robustness_scores, write_grid_csv, write_grid_json, Clustering,
    DensityGrid, KdeDensity, CLUSTER_BANDWIDTH, CLUSTER_LEVEL_FRACTION, ROBUSTNESS_BANDWIDTH,
};
pub use loo::{leave_one_out, write_pooled_csv, LeaveOneOutResult, LooTrial, DEFAULT_TRIALS};

use nalgebra::DVector;

use crate::dmd::DmdResult;
use crate::error::{DmdError, Result};
use crate::scalar::{cabs, Real, C};
use crate::spectrum::{half_doubling_time, period, ModeInfo};

/// Default decay factor below which a mode counts as non-persistent.
pub const PERSISTENCE_FACTOR: f64 = 0.1;

/// `sqrt((e^{2x} − 1)/(2x))` with its series limit 1 near `x = 0`.
fn rms_factor<T: Real>(x: T) -> T {
    if x.abs() < T::lit(1e-8) {
        return T::one();
    }
    let two_x = x + x;
    (two_x.exp_m1() / two_x).sqrt()
}

/// Root-mean-square magnitude of `b e^{γt}` over `[0, T]`.
pub fn rms_contribution<T: Real>(b: C<T>, gamma: C<T>, window: T) -> T {
    cabs(b) * rms_factor(gamma.re * window)
}

/// Like [`rms_contribution`] for the mode restricted to the given rows.
pub fn component_rms<T: Real>(mode: &DVector<C<T>>, b: C<T>, gamma: C<T>, window: T, rows: &[usize]) -> Result<T> {
    if rows.is_empty() {
        return Err(DmdError::EmptySelection);
    }
    if let Some(&bad) = rows.iter().find(|&&r| r >= mode.len()) {
        return Err(DmdError::InvalidInput(format!("row {bad} outside a mode of length {}", mode.len())));
    }
    let sub = rows.iter().fold(T::zero(), |acc, &r| acc + mode[r].norm_sqr()).sqrt();
    Ok(cabs(b) * sub * rms_factor(gamma.re * window))
}

/// False when the mode's envelope falls below `factor` of its initial
/// magnitude within the window (`e^{σT} < factor`).
pub fn persistence_filter<T: Real>(gamma: C<T>, window: T, factor: T) -> bool {
    !((gamma.re * window).exp() < factor)
}

/// Halving time (negative) at which [`persistence_filter`] flips:
/// `−T·ln2/ln(1/factor)`.
pub fn persistence_boundary<T: Real>(window: T, factor: T) -> T {
    -(window * T::ln_2() / (T::one() / factor).ln())
}

/// Optional per-mode columns of a mode table.
#[derive(Debug, Clone, Default)]
pub struct TableExtras<'a, T: Real> {
    /// Stacked rows entering the restricted (e.g. vertical-velocity) RMS.
    pub component_rows: Option<&'a [usize]>,
    pub robustness: Option<&'a [T]>,
    pub clusters: Option<&'a [Option<usize>]>,
}

/// One [`ModeInfo`] per mode of `result`, in result order.
pub fn build_mode_table<T: Real>(result: &DmdResult<T>, window: T, extras: &TableExtras<T>) -> Result<Vec<ModeInfo<T>>> {
    let r = result.rank();
    if extras.robustness.is_some_and(|v| v.len() != r) || extras.clusters.is_some_and(|v| v.len() != r) {
        return Err(DmdError::ShapeMismatch(format!("per-mode columns must have {r} entries")));
    }
    (0..r)
        .map(|k| {
            let gamma = result.gamma[k];
            let rms_vertical = match extras.component_rows {
                Some(rows) => Some(component_rms(&result.mode(k), result.b[k], gamma, window, rows)?),
                None => None,
            };
            Ok(ModeInfo {
                index: k + 1,
                mu: result.mu[k],
                gamma,
                period_hours: period(gamma),
                half_double_hours: half_doubling_time(gamma),
                conj_partner: result.partner[k].map(|p| p + 1),
                is_real: result.partner[k].is_none(),
                b_mag: cabs(result.b[k]),
                rms: rms_contribution(result.b[k], gamma, window),
                rms_vertical,
                robustness: extras.robustness.map(|v| v[k]),
                cluster: extras.clusters.and_then(|v| v[k]),
            })
        })
        .collect()
}
