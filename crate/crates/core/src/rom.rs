//! Reduced-order models built from conjugate-closed subsets of DMD modes.
//!
//! Mode references are 1-based ranks, the same numbers as the `idx` column of
//! the mode table.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dmd::{reconstruct_complex, DmdResult};
use crate::error::{DmdError, Result};
use crate::field_io::SnapshotMatrix;
use crate::modal::persistence_filter;
use crate::scalar::{Real, C};
use crate::spectrum::ModeInfo;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Persistence {
    /// Analysis window `T` in the time unit of `dt`.
    pub window: f64,
    pub factor: f64,
}

/// Inclusive box in (RMS, robustness) space; absent bounds are open.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RomCriteria {
    pub rms_min: Option<f64>,
    pub rms_max: Option<f64>,
    pub robustness_min: Option<f64>,
    pub robustness_max: Option<f64>,
    /// Keep only persistent modes when set.
    pub persistence: Option<Persistence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RomSelection {
    Explicit { ranks: Vec<usize> },
    Criteria(RomCriteria),
}

fn within(v: f64, lo: Option<f64>, hi: Option<f64>) -> bool {
    lo.is_none_or(|lo| v >= lo) && hi.is_none_or(|hi| v <= hi)
}

/// Ranks chosen by `sel`, closed under conjugate pairing (a partner outside
/// the box is still added), sorted ascending.
pub fn select_modes<T: Real>(table: &[ModeInfo<T>], sel: &RomSelection) -> Result<Vec<usize>> {
    let by_rank = |rank: usize| table.iter().find(|m| m.index == rank);
    let mut chosen: Vec<usize> = match sel {
        RomSelection::Explicit { ranks } => {
            if let Some(&bad) = ranks.iter().find(|&&r| by_rank(r).is_none()) {
                return Err(DmdError::InvalidInput(format!("mode rank {bad} is not in the table")));
            }
            ranks.clone()
        }
        RomSelection::Criteria(c) => {
            for (lo, hi) in [(c.rms_min, c.rms_max), (c.robustness_min, c.robustness_max)] {
                if let (Some(lo), Some(hi)) = (lo, hi) {
                    if lo > hi {
                        return Err(DmdError::InvalidInput(format!("empty range [{lo}, {hi}]")));
                    }
                }
            }
            if let Some(p) = &c.persistence {
                if !(p.window > 0.0 && p.factor > 0.0 && p.factor < 1.0) {
                    return Err(DmdError::InvalidInput(format!(
                        "persistence needs T > 0 and factor in (0, 1), got T = {}, factor = {}",
                        p.window, p.factor
                    )));
                }
            }
            let needs_scores = c.robustness_min.is_some() || c.robustness_max.is_some();
            let mut out = Vec::new();
            for m in table {
                let robust_ok = if needs_scores {
                    match m.robustness {
                        Some(d) => within(d.as_f64(), c.robustness_min, c.robustness_max),
                        None => {
                            return Err(DmdError::InvalidInput(
                                "robustness bounds need leave-one-out scores in the table".into(),
                            ))
                        }
                    }
                } else {
                    true
                };
                let persistent = c
                    .persistence
                    .as_ref()
                    .is_none_or(|p| persistence_filter(m.gamma, T::lit(p.window), T::lit(p.factor)));
                if robust_ok && persistent && within(m.rms.as_f64(), c.rms_min, c.rms_max) {
                    out.push(m.index);
                }
            }
            out
        }
    };
    let partners: Vec<usize> = chosen
        .iter()
        .filter_map(|&r| by_rank(r).and_then(|m| m.conj_partner))
        .collect();
    chosen.extend(partners);
    chosen.sort_unstable();
    chosen.dedup();
    if chosen.is_empty() {
        return Err(DmdError::EmptySelection);
    }
    Ok(chosen)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RomModel<T: Real> {
    /// Selected modes only, in rank order.
    pub result: DmdResult<T>,
    /// 1-based ranks of the selected modes in the parent result.
    pub ranks: Vec<usize>,
    pub selection: Option<RomSelection>,
}

/// Restricts `result` to the given ranks, which must be conjugate-closed.
pub fn build_rom<T: Real>(result: &DmdResult<T>, ranks: &[usize]) -> Result<RomModel<T>> {
    if ranks.is_empty() {
        return Err(DmdError::EmptySelection);
    }
    if let Some(&bad) = ranks.iter().find(|&&r| r == 0 || r > result.rank()) {
        return Err(DmdError::InvalidInput(format!("mode rank {bad} outside 1..={}", result.rank())));
    }
    let mut ranks = ranks.to_vec();
    ranks.sort_unstable();
    ranks.dedup();
    let pos: Vec<usize> = ranks.iter().map(|r| r - 1).collect();
    for &k in &pos {
        if let Some(p) = result.partner[k] {
            if !pos.contains(&p) {
                return Err(DmdError::NotConjugateClosed { mode: k + 1, partner: p + 1 });
            }
        }
    }
    Ok(RomModel { result: result.subset(&pos)?, ranks, selection: None })
}

impl<T: Real> RomModel<T> {
    pub fn with_selection(mut self, sel: RomSelection) -> Self {
        self.selection = Some(sel);
        self
    }

    pub fn dimension(&self) -> usize {
        self.ranks.len()
    }

    pub fn reconstruct_complex(&self, times: &[usize]) -> DMatrix<C<T>> {
        reconstruct_complex(&self.result, times)
    }

    pub fn reconstruct(&self, times: &[usize]) -> DMatrix<T> {
        self.reconstruct_complex(times).map(|z| z.re)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCurve<T: Real> {
    pub times: Vec<T>,
    /// `‖X̂[n]‖₂`.
    pub rom_norm: Vec<T>,
    /// `‖X[n] − X̂[n]‖₂ / ‖X[n]‖₂` (0 when both vanish, ∞ when only X does).
    pub rel_error: Vec<T>,
}

impl<T: Real> ErrorCurve<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

fn check_compatible<T: Real>(x: &SnapshotMatrix<T>, rom: &RomModel<T>) -> Result<()> {
    if x.dim() != rom.result.dim() {
        return Err(DmdError::ShapeMismatch(format!(
            "data has dimension {}, model {}",
            x.dim(),
            rom.result.dim()
        )));
    }
    let (a, b) = (x.dt(), rom.result.dt);
    if (a - b).abs() > T::lit(1e-12) * a.abs().max(b.abs()) {
        return Err(DmdError::InvalidInput(format!("time step mismatch: data {a}, model {b}")));
    }
    Ok(())
}

/// Per-snapshot model norm and relative error over `n = 0..N−1`.
pub fn error_curve<T: Real>(x: &SnapshotMatrix<T>, rom: &RomModel<T>) -> Result<ErrorCurve<T>> {
    check_compatible(x, rom)?;
    let times: Vec<usize> = (0..x.len()).collect();
    let xhat = rom.reconstruct(&times);
    let mut out = ErrorCurve { times: Vec::new(), rom_norm: Vec::new(), rel_error: Vec::new() };
    for n in times {
        let col = x.data().column(n);
        let est = xhat.column(n);
        let err = (col - est).norm();
        let base = col.norm();
        let rel = if base > T::zero() {
            err / base
        } else if err == T::zero() {
            T::zero()
        } else {
            T::lit(f64::INFINITY)
        };
        out.times.push(x.time(n));
        out.rom_norm.push(est.norm());
        out.rel_error.push(rel);
    }
    Ok(out)
}

/// `Σ_n ‖X[n] − X̂[n]‖₂²` over all snapshots.
pub fn sum_squared_error<T: Real>(x: &SnapshotMatrix<T>, rom: &RomModel<T>) -> Result<T> {
    check_compatible(x, rom)?;
    let times: Vec<usize> = (0..x.len()).collect();
    Ok((x.data() - rom.reconstruct(&times)).norm_squared())
}

/// `n,t_hours,rom_norm,rel_error` with 17 significant digits; ∞ as an empty field.
pub fn write_error_curve_csv<T: Real, W: Write>(curve: &ErrorCurve<T>, mut out: W) -> Result<()> {
    writeln!(out, "n,t_hours,rom_norm,rel_error")?;
    for n in 0..curve.len() {
        let rel = curve.rel_error[n].as_f64();
        let rel = if rel.is_finite() { format!("{rel:.16e}") } else { String::new() };
        writeln!(
            out,
            "{n},{:.16e},{:.16e},{rel}",
            curve.times[n].as_f64(),
            curve.rom_norm[n].as_f64()
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dmd::{exact_dmd, reconstruct, DmdOptions};
    use crate::modal::{build_mode_table, TableExtras};
    use crate::scalar::{cplx, creal};

    fn info(index: usize, gamma: C<f64>, partner: Option<usize>, rms: f64, robustness: Option<f64>) -> ModeInfo<f64> {
        ModeInfo {
            index,
            mu: gamma.exp(),
            gamma,
            period_hours: crate::spectrum::period(gamma),
            half_double_hours: crate::spectrum::half_doubling_time(gamma),
            conj_partner: partner,
            is_real: partner.is_none(),
            b_mag: rms,
            rms,
            rms_vertical: None,
            robustness,
            cluster: None,
        }
    }

    fn table() -> Vec<ModeInfo<f64>> {
        vec![
            info(1, creal(0.0), None, 5.0, Some(100.0)),
            info(2, cplx(-0.001, -0.5), Some(3), 3.0, Some(90.0)),
            info(3, cplx(-0.001, 0.5), Some(2), 3.0, Some(80.0)),
            info(4, cplx(-0.1, 0.26), Some(5), 1.0, Some(5.0)),
            info(5, cplx(-0.1, -0.26), Some(4), 1.0, Some(5.0)),
            info(6, creal(-0.2), None, 0.5, Some(1.0)),
        ]
    }

    #[test]
    fn explicit_selection_closes_pairs() {
        let t = table();
        assert_eq!(select_modes(&t, &RomSelection::Explicit { ranks: vec![1] }).unwrap(), vec![1]);
        assert_eq!(select_modes(&t, &RomSelection::Explicit { ranks: vec![2] }).unwrap(), vec![2, 3]);
        assert!(matches!(
            select_modes(&t, &RomSelection::Explicit { ranks: vec![] }),
            Err(DmdError::EmptySelection)
        ));
        assert!(select_modes(&t, &RomSelection::Explicit { ranks: vec![9] }).is_err());
    }

    #[test]
    fn box_selection() {
        let t = table();
        // Robustness 85..100 catches mode 2 but not its partner 3; closure adds it.
        let c = RomCriteria { robustness_min: Some(85.0), ..Default::default() };
        assert_eq!(select_modes(&t, &RomSelection::Criteria(c)).unwrap(), vec![1, 2, 3]);
        let c = RomCriteria { rms_min: Some(0.9), rms_max: Some(3.0), ..Default::default() };
        assert_eq!(select_modes(&t, &RomSelection::Criteria(c)).unwrap(), vec![2, 3, 4, 5]);
        let c = RomCriteria {
            persistence: Some(Persistence { window: 143.0, factor: 0.1 }),
            ..Default::default()
        };
        assert_eq!(select_modes(&t, &RomSelection::Criteria(c)).unwrap(), vec![1, 2, 3]);
        let c = RomCriteria { rms_min: Some(100.0), ..Default::default() };
        assert!(matches!(select_modes(&t, &RomSelection::Criteria(c)), Err(DmdError::EmptySelection)));
        let c = RomCriteria { rms_min: Some(2.0), rms_max: Some(1.0), ..Default::default() };
        assert!(select_modes(&t, &RomSelection::Criteria(c)).is_err());
    }

    fn oracle() -> SnapshotMatrix<f64> {
        let w = 2.0 * std::f64::consts::PI / 12.0;
        let c0 = [1.0, 0.2, -0.5, 0.3];
        let a = [1.0, 2.0, 0.0, -1.0];
        let s = [0.0, 1.0, -1.0, 2.0];
        let d = [0.5, -1.0, 1.0, 0.2];
        let data = DMatrix::from_fn(4, 30, |i, n| {
            let n = n as f64;
            c0[i] + a[i] * (w * n).cos() + s[i] * (w * n).sin() + d[i] * 0.9f64.powf(n)
        });
        SnapshotMatrix::new(data, 1.0, 0.0).unwrap()
    }

    #[test]
    fn all_modes_rom_equals_full_reconstruction() {
        let x = oracle();
        let res = exact_dmd(&x, &DmdOptions::exact(4)).unwrap();
        let rom = build_rom(&res, &[1, 2, 3, 4]).unwrap();
        let times: Vec<usize> = (0..30).collect();
        assert_eq!(rom.reconstruct(&times), reconstruct(&res, &times));
        let curve = error_curve(&x, &rom).unwrap();
        assert!(curve.rel_error.iter().all(|&e| e < 1e-8));
    }

    #[test]
    fn non_closed_and_constant_roms() {
        let x = oracle();
        let res = exact_dmd(&x, &DmdOptions::exact(4)).unwrap();
        let k = res.partner.iter().position(|p| p.is_some()).unwrap();
        assert!(matches!(build_rom(&res, &[k + 1]), Err(DmdError::NotConjugateClosed { .. })));
        let real = res
            .mu
            .iter()
            .enumerate()
            .position(|(k, m)| res.partner[k].is_none() && (m - creal(1.0)).norm() < 1e-8)
            .unwrap();
        let rom = build_rom(&res, &[real + 1]).unwrap();
        let xr = rom.reconstruct(&[0, 7, 29]);
        assert!((xr.column(0) - xr.column(2)).amax() < 1e-10);
        let table = build_mode_table(&res, 29.0, &TableExtras::default()).unwrap();
        let ranks = select_modes(&table, &RomSelection::Explicit { ranks: vec![k + 1] }).unwrap();
        assert!(build_rom(&res, &ranks).is_ok());
    }

    #[test]
    fn dt_mismatch_is_rejected() {
        let x = oracle();
        let res = exact_dmd(&x, &DmdOptions::exact(4)).unwrap();
        let rom = build_rom(&res, &[1, 2, 3, 4]).unwrap();
        let other = SnapshotMatrix::new(x.data().clone(), 2.0, 0.0).unwrap();
        assert!(error_curve(&other, &rom).is_err());
        let short = SnapshotMatrix::new(x.data().rows(0, 3).into_owned(), 1.0, 0.0).unwrap();
        assert!(error_curve(&short, &rom).is_err());
    }

    #[test]
    fn csv_layout() {
        let curve = ErrorCurve { times: vec![0.0, 1.0], rom_norm: vec![1.0, 2.0], rel_error: vec![0.5, f64::INFINITY] };
        let mut buf = Vec::new();
        write_error_curve_csv(&curve, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "n,t_hours,rom_norm,rel_error");
        assert_eq!(lines[1], "0,0.0000000000000000e0,1.0000000000000000e0,5.0000000000000000e-1");
        assert!(lines[2].ends_with(','));
    }
}
