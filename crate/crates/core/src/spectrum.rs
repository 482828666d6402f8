//! Interpretation of eigenvalues and modes: continuous-time rates, periods,
//! halving/doubling times, conjugate pairing, polar form, tidal ellipses.

use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{DmdError, Result};
use crate::scalar::{cabs, carg, cln, creal, Real, C};

/// Default absolute tolerance for conjugate pairing and the real-eigenvalue test.
pub const PAIRING_TOL: f64 = 1e-9;

fn infinity<T: Real>() -> T {
    T::lit(f64::INFINITY)
}

/// `γ = ln(μ)/dt` on the principal branch.
pub fn to_continuous<T: Real>(mu: C<T>, dt: T) -> Result<C<T>> {
    if mu.re == T::zero() && mu.im == T::zero() {
        return Err(DmdError::InvalidInput("eigenvalue 0 has no continuous-time counterpart".into()));
    }
    if !(dt > T::zero()) {
        return Err(DmdError::InvalidInput(format!("time step must be positive, got {dt}")));
    }
    Ok(cln(mu) / creal(dt))
}

/// `2π/|ω|`, infinite for a non-oscillating eigenvalue.
pub fn period<T: Real>(gamma: C<T>) -> T {
    if gamma.im == T::zero() {
        infinity()
    } else {
        T::two_pi() / gamma.im.abs()
    }
}

/// `ln 2/σ`: positive doubling time for growth, negative halving time for decay,
/// infinite when `σ = 0`.
pub fn half_doubling_time<T: Real>(gamma: C<T>) -> T {
    if gamma.re == T::zero() {
        infinity()
    } else {
        T::ln_2() / gamma.re
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pairing {
    /// Index of each eigenvalue's conjugate partner.
    pub partner: Vec<Option<usize>>,
    pub is_real: Vec<bool>,
}

/// Greedy nearest matching of each complex eigenvalue against the conjugates of
/// the others, within an absolute tolerance.
///
/// An eigenvalue with `|Im μ| ≤ tol` is real. A non-real eigenvalue must have
/// exactly one unmatched candidate within `tol` of its conjugate; zero or
/// several candidates is reported as an ambiguous pairing.
pub fn pair_conjugates<T: Real>(mus: &[C<T>], tol: T) -> Result<Pairing> {
    let n = mus.len();
    let is_real: Vec<bool> = mus.iter().map(|m| m.im.abs() <= tol).collect();
    let mut partner = vec![None; n];
    for k in 0..n {
        if is_real[k] || partner[k].is_some() {
            continue;
        }
        let target = mus[k].conj();
        let mut candidates: Vec<(T, usize)> = (0..n)
            .filter(|&j| j != k && !is_real[j] && partner[j].is_none())
            .map(|j| (cabs(mus[j] - target), j))
            .filter(|&(d, _)| d <= tol)
            .collect();
        if candidates.len() != 1 {
            candidates.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
            return Err(DmdError::AmbiguousPairing {
                index: k,
                candidates: candidates.into_iter().map(|(_, j)| j).collect(),
            });
        }
        let j = candidates[0].1;
        partner[k] = Some(j);
        partner[j] = Some(k);
    }
    Ok(Pairing { partner, is_real })
}

/// Entrywise `|Φ|·|b|` and `arg Φ + arg b` wrapped to `(−π, π]`.
pub fn polar_mode<T: Real>(mode: &DVector<C<T>>, b: C<T>) -> (DVector<T>, DVector<T>) {
    let bm = cabs(b);
    let bp = carg(b);
    let amp = mode.map(|z| cabs(z) * bm);
    let phase = mode.map(|z| wrap_phase(carg(z) + bp));
    (amp, phase)
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_phase<T: Real>(a: T) -> T {
    let two_pi = T::two_pi();
    let mut w = a - two_pi * ((a + T::pi()) / two_pi).floor();
    // Now in [−π, π); move the lower end to +π.
    if w <= -T::pi() {
        w += two_pi;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rotation {
    Ccw,
    Cw,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse<T> {
    pub semi_major: T,
    pub semi_minor: T,
    /// Angle of the major axis from the u-axis, in `[0, π)`.
    pub orientation: T,
    pub rotation: Rotation,
}

/// Ellipse traced by `u = Re(U e^{iωt})`, `v = Re(V e^{iωt})`, from the rotary
/// decomposition `u + iv = w⁺ e^{iωt} + w⁻ e^{−iωt}`.
pub fn tidal_ellipse<T: Real>(u: C<T>, v: C<T>) -> Ellipse<T> {
    let i = C::new(T::zero(), T::one());
    let half = creal(T::lit(0.5));
    let wp = (u + i * v) * half;
    let wm = (u - i * v).conj() * half;
    let (ap, am) = (cabs(wp), cabs(wm));
    let mut orientation = (carg(wp) + carg(wm)) / T::lit(2.0);
    let pi = T::pi();
    orientation -= pi * (orientation / pi).floor();
    if orientation >= pi {
        orientation -= pi;
    }
    Ellipse {
        semi_major: ap + am,
        semi_minor: (ap - am).abs(),
        orientation,
        rotation: if ap > am { Rotation::Ccw } else { Rotation::Cw },
    }
}

/// Phase speed of the first baroclinic long gravity wave in a two-layer fluid.
pub fn two_layer_wave_speed<T: Real>(g_prime: T, h1: T, h2: T) -> Result<T> {
    if !(g_prime > T::zero() && h1 > T::zero() && h2 > T::zero()) {
        return Err(DmdError::InvalidInput(format!(
            "wave speed needs positive g', h1, h2; got {g_prime}, {h1}, {h2}"
        )));
    }
    Ok((g_prime * h1 * h2 / (h1 + h2)).sqrt())
}

/// One row of a spectrum table.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeInfo<T: Real> {
    /// 1-based rank in the sorted spectrum.
    pub index: usize,
    pub mu: C<T>,
    pub gamma: C<T>,
    pub period_hours: T,
    pub half_double_hours: T,
    /// Rank (1-based) of the conjugate partner.
    pub conj_partner: Option<usize>,
    pub is_real: bool,
    pub b_mag: T,
    pub rms: T,
    pub rms_vertical: Option<T>,
    pub robustness: Option<T>,
    pub cluster: Option<usize>,
}

impl<T: Real> ModeInfo<T> {
    /// True for the member of a pair (or a real mode) that tables list.
    pub fn is_listed(&self) -> bool {
        self.gamma.im >= T::zero()
    }
}

pub const MODE_TABLE_HEADER: &str = "idx,Cluster,PT,HLT,L2RMS,L2wRMS,KSnarrow";

fn fmt_value<T: Real>(v: T, decimals: Option<usize>) -> String {
    let v = v.as_f64();
    if v.is_nan() {
        "NaN".into()
    } else if !v.is_finite() {
        String::new()
    } else if let Some(d) = decimals {
        format!("{v:.d$}")
    } else {
        format!("{v:.16e}")
    }
}

/// Writes the listed rows (`ω ≥ 0`) as CSV with 17 significant digits.
/// Infinite values become empty fields; unclustered modes get `NaN` in the
/// cluster column, and missing optional columns are left empty.
pub fn write_mode_table<T: Real, W: Write>(infos: &[ModeInfo<T>], out: W) -> Result<()> {
    write_rows(infos, None, out)
}

/// [`write_mode_table`] rounded to two decimals, for reading.
pub fn write_mode_table_rounded<T: Real, W: Write>(infos: &[ModeInfo<T>], out: W) -> Result<()> {
    write_rows(infos, Some(2), out)
}

fn write_rows<T: Real, W: Write>(infos: &[ModeInfo<T>], decimals: Option<usize>, mut out: W) -> Result<()> {
    let fmt = |v: T| fmt_value(v, decimals);
    writeln!(out, "{MODE_TABLE_HEADER}")?;
    for m in infos.iter().filter(|m| m.is_listed()) {
        let cluster = m.cluster.map_or("NaN".to_string(), |c| c.to_string());
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            m.index,
            cluster,
            fmt(m.period_hours),
            fmt(m.half_double_hours),
            fmt(m.rms),
            m.rms_vertical.map(fmt).unwrap_or_default(),
            m.robustness.map(fmt).unwrap_or_default(),
        )?;
    }
    Ok(())
}
