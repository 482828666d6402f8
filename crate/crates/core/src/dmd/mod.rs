//! Exact DMD and its modified variant.
//!
//! The pipeline: optional temporal-mean removal, past/future split, optional
//! column normalization by the past-snapshot norms, optional total-least-squares
//! projection onto the leading right singular vectors of `[X1; X2]`, truncated
//! SVD of `X1`, the reduced operator `K̃ = Uᵣᵀ X2 Vᵣ Σᵣ⁻¹`, its eigenpairs, the
//! exact modes `Φ = X2 Vᵣ Σᵣ⁻¹ W`, and an ℓ2 fit of the mode amplitudes `b`
//! against the original snapshots.

mod export;

pub use export::{
    read_mode_matrix, read_result, write_mode_matrix, write_result, ResultHeader, DMDM_MAGIC, RESULT_SCHEMA_VERSION,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{DmdError, Result};
use crate::field_io::{remove_temporal_mean, SnapshotMatrix};
use crate::linalg::{complex_lstsq, complex_norm, fix_phase, real_eigen, thin_svd, SvdMode};
use crate::scalar::{cabs, carg, cln, cpowu, cplx, creal, Real, C};

pub use crate::linalg::{truncated_svd, TruncatedSvd};

/// Default number of snapshots in the multi-snapshot amplitude fit.
pub const DEFAULT_FIT_SNAPSHOTS: usize = 10;

/// Strategy for fitting mode amplitudes `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BFit {
    /// Least squares against `X[0]` only.
    FirstSnapshot,
    /// Joint least squares over `count` snapshots evenly spread over `0..N`
    /// (both ends included); clamped to `N` when fewer snapshots exist.
    MultiSnapshot { count: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmdOptions {
    /// Truncation rank `r`.
    pub rank: usize,
    pub use_tlsq: bool,
    /// Rank of the `[X1; X2]` projection; `None` means `rank`.
    pub tlsq_rank: Option<usize>,
    pub normalize_columns: bool,
    pub remove_mean: bool,
    pub b_fit: BFit,
    pub svd_mode: SvdMode,
}

impl DmdOptions {
    /// Baseline exact DMD: no preprocessing, first-snapshot fit, standard SVD.
    pub fn exact(rank: usize) -> Self {
        DmdOptions {
            rank,
            use_tlsq: false,
            tlsq_rank: None,
            normalize_columns: false,
            remove_mean: false,
            b_fit: BFit::FirstSnapshot,
            svd_mode: SvdMode::Standard,
        }
    }

    /// Modified exact DMD: column normalization, TLSQ, high-accuracy SVD and a
    /// multi-snapshot amplitude fit. Mean removal stays off.
    pub fn modified(rank: usize) -> Self {
        DmdOptions {
            rank,
            use_tlsq: true,
            tlsq_rank: None,
            normalize_columns: true,
            remove_mean: false,
            b_fit: BFit::MultiSnapshot { count: DEFAULT_FIT_SNAPSHOTS },
            svd_mode: SvdMode::HighAccuracy,
        }
    }

    pub fn effective_tlsq_rank(&self) -> usize {
        self.tlsq_rank.unwrap_or(self.rank)
    }

    fn validate(&self, dim: usize, pairs: usize) -> Result<()> {
        let cap = dim.min(pairs);
        if self.rank == 0 || self.rank > cap {
            return Err(DmdError::InvalidInput(format!(
                "rank {} outside 1..={cap} (D = {dim}, N - 1 = {pairs})",
                self.rank
            )));
        }
        if self.use_tlsq {
            let t = self.effective_tlsq_rank();
            let tcap = (2 * dim).min(pairs);
            if t > tcap {
                return Err(DmdError::InvalidInput(format!("TLSQ rank {t} exceeds {tcap}")));
            }
            if t < self.rank {
                return Err(DmdError::InvalidInput(format!(
                    "TLSQ rank {t} is below the truncation rank {}",
                    self.rank
                )));
            }
        }
        if let BFit::MultiSnapshot { count } = self.b_fit {
            if count < 2 {
                return Err(DmdError::InvalidInput(format!("multi-snapshot fit needs count >= 2, got {count}")));
            }
        }
        Ok(())
    }
}

impl Default for DmdOptions {
    fn default() -> Self {
        DmdOptions::modified(1)
    }
}

/// Modes, eigenvalues, amplitudes and diagnostics of one decomposition.
///
/// Modes are ordered by descending `|b|`, then descending `|μ|`, then ascending
/// `arg μ`. Every mode has unit ℓ2 norm and its largest-magnitude entry is real
/// and positive. Conjugate partners are exact conjugates of each other.
#[derive(Debug, Clone, PartialEq)]
pub struct DmdResult<T: Real> {
    pub modes: DMatrix<C<T>>,
    pub mu: Vec<C<T>>,
    pub gamma: Vec<C<T>>,
    pub b: Vec<C<T>>,
    pub partner: Vec<Option<usize>>,
    /// Full singular spectrum of the (normalized, projected) past-snapshot matrix.
    pub singular_values: Vec<T>,
    /// `‖K̃ w_k − μ_k w_k‖₂` per mode.
    pub residuals: Vec<T>,
    /// Frobenius norm of `K̃`.
    pub reduced_operator_norm: T,
    /// Condition estimate of the eigenvector matrix of `K̃`.
    pub eigenvector_condition: T,
    pub options: DmdOptions,
    pub dt: T,
    pub t0: T,
    /// Temporal mean removed before the decomposition, added back on reconstruction.
    pub mean: Option<DVector<T>>,
}

impl<T: Real> DmdResult<T> {
    pub fn rank(&self) -> usize {
        self.mu.len()
    }

    pub fn dim(&self) -> usize {
        self.modes.nrows()
    }

    pub fn mode(&self, k: usize) -> DVector<C<T>> {
        self.modes.column(k).into_owned()
    }

    /// True when every listed mode's conjugate partner is also listed.
    pub fn is_conjugate_closed(&self, indices: &[usize]) -> bool {
        indices.iter().all(|&k| self.partner[k].is_none_or(|p| indices.contains(&p)))
    }

    /// Restriction to the given modes, partners re-indexed.
    pub fn subset(&self, indices: &[usize]) -> Result<DmdResult<T>> {
        if let Some(&bad) = indices.iter().find(|&&k| k >= self.rank()) {
            return Err(DmdError::InvalidInput(format!("mode index {bad} out of range 0..{}", self.rank())));
        }
        let pos = |k: usize| indices.iter().position(|&x| x == k);
        Ok(DmdResult {
            modes: self.modes.select_columns(indices.iter()),
            mu: indices.iter().map(|&k| self.mu[k]).collect(),
            gamma: indices.iter().map(|&k| self.gamma[k]).collect(),
            b: indices.iter().map(|&k| self.b[k]).collect(),
            partner: indices.iter().map(|&k| self.partner[k].and_then(pos)).collect(),
            singular_values: self.singular_values.clone(),
            residuals: indices.iter().map(|&k| self.residuals[k]).collect(),
            reduced_operator_norm: self.reduced_operator_norm,
            eigenvector_condition: self.eigenvector_condition,
            options: self.options.clone(),
            dt: self.dt,
            t0: self.t0,
            mean: self.mean.clone(),
        })
    }
}

/// Past (`X[0..N-1]`) and future (`X[1..N]`) snapshot matrices.
pub fn split_snapshots<T: Real>(x: &SnapshotMatrix<T>) -> Result<(DMatrix<T>, DMatrix<T>)> {
    split_columns(x.data())
}

fn split_columns<T: Real>(x: &DMatrix<T>) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let n = x.ncols();
    if n < 2 {
        return Err(DmdError::TooFewSnapshots { required: 2, got: n });
    }
    Ok((x.columns(0, n - 1).into_owned(), x.columns(1, n - 1).into_owned()))
}

/// Divides column `k` of both matrices by `‖X1[:, k]‖₂`.
pub fn column_normalize<T: Real>(
    x1: &DMatrix<T>,
    x2: &DMatrix<T>,
) -> Result<(DMatrix<T>, DMatrix<T>, DVector<T>)> {
    if x1.shape() != x2.shape() {
        return Err(DmdError::ShapeMismatch(format!("X1 is {:?}, X2 is {:?}", x1.shape(), x2.shape())));
    }
    let mut scales = DVector::zeros(x1.ncols());
    let mut y1 = x1.clone();
    let mut y2 = x2.clone();
    for k in 0..x1.ncols() {
        let s = x1.column(k).norm();
        if s == T::zero() {
            return Err(DmdError::ZeroColumn(k));
        }
        scales[k] = s;
        y1.column_mut(k).unscale_mut(s);
        y2.column_mut(k).unscale_mut(s);
    }
    Ok((y1, y2, scales))
}

/// Projects both matrices onto the leading `rank` right singular vectors of `[X1; X2]`.
pub fn tlsq_project<T: Real>(
    x1: &DMatrix<T>,
    x2: &DMatrix<T>,
    rank: usize,
    mode: SvdMode,
) -> Result<(DMatrix<T>, DMatrix<T>)> {
    if x1.shape() != x2.shape() {
        return Err(DmdError::ShapeMismatch(format!("X1 is {:?}, X2 is {:?}", x1.shape(), x2.shape())));
    }
    let (d, m) = x1.shape();
    let cap = (2 * d).min(m);
    if rank == 0 || rank > cap {
        return Err(DmdError::InvalidInput(format!("TLSQ rank {rank} outside 1..={cap}")));
    }
    let mut z = DMatrix::zeros(2 * d, m);
    z.rows_mut(0, d).copy_from(x1);
    z.rows_mut(d, d).copy_from(x2);
    let svd = thin_svd(&z, mode)?;
    let vz = svd.v.columns(0, rank);
    Ok((x1 * vz, x2 * vz))
}

struct Regression<T: Real> {
    mu: Vec<C<T>>,
    modes: DMatrix<C<T>>,
    partner: Vec<Option<usize>>,
    residuals: Vec<T>,
    singular_values: Vec<T>,
    operator_norm: T,
    condition: T,
}

fn regress<T: Real>(x1: DMatrix<T>, x2: DMatrix<T>, opts: &DmdOptions, want_modes: bool) -> Result<Regression<T>> {
    let (x1, x2) = if opts.normalize_columns {
        let (a, b, _) = column_normalize(&x1, &x2)?;
        (a, b)
    } else {
        (x1, x2)
    };
    let (x1, x2) = if opts.use_tlsq {
        tlsq_project(&x1, &x2, opts.effective_tlsq_rank(), opts.svd_mode)?
    } else {
        (x1, x2)
    };

    let svd = thin_svd(&x1, opts.svd_mode)?;
    let numerical_rank = svd.numerical_rank(x1.nrows(), x1.ncols());
    let r = opts.rank;
    if r > numerical_rank {
        return Err(DmdError::RankDeficient { requested: r, rank: numerical_rank });
    }
    let singular_values: Vec<T> = svd.sigma.iter().copied().collect();
    let svd = svd.truncate(r);

    // X2 Vr Σr⁻¹, shared by K̃ and the exact modes.
    let mut x2v = &x2 * &svd.v;
    for (j, &s) in svd.sigma.iter().enumerate() {
        x2v.column_mut(j).unscale_mut(s);
    }
    let k_tilde = svd.u.transpose() * &x2v;
    let operator_norm = k_tilde.norm();
    let eig = real_eigen(&k_tilde)?;
    let limit = T::one() / (T::lit(100.0) * T::eps());
    if eig.condition > limit {
        return Err(DmdError::Defective { condition: eig.condition.as_f64() });
    }

    let modes = if want_modes {
        let w_re = eig.vectors.map(|z| z.re);
        let w_im = eig.vectors.map(|z| z.im);
        let phi_re = &x2v * &w_re;
        let phi_im = &x2v * &w_im;
        let mut modes = DMatrix::<C<T>>::zeros(x2.nrows(), r);
        for k in 0..r {
            if eig.partner[k].is_some() && eig.values[k].im < T::zero() {
                // Filled from the representative with Im μ > 0.
                continue;
            }
            let mut col = DVector::from_fn(x2.nrows(), |i, _| cplx(phi_re[(i, k)], phi_im[(i, k)]));
            let mut nrm = complex_norm(&col);
            if nrm == T::zero() {
                // μ = 0: the exact mode vanishes; fall back to the projected mode Uᵣ w.
                let ur = svd.u.map(creal);
                col = ur * eig.vectors.column(k);
                nrm = complex_norm(&col);
            }
            if nrm > T::zero() {
                col /= creal(nrm);
            }
            fix_phase(&mut col);
            if eig.partner[k].is_none() {
                col.apply(|z| *z = creal(z.re));
            }
            if let Some(p) = eig.partner[k] {
                modes.set_column(p, &col.map(|z| z.conj()));
            }
            modes.set_column(k, &col);
        }
        modes
    } else {
        DMatrix::zeros(0, 0)
    };

    Ok(Regression {
        mu: eig.values.clone(),
        modes,
        partner: eig.partner.clone(),
        residuals: eig.residuals.clone(),
        singular_values,
        operator_norm,
        condition: eig.condition,
    })
}

/// Evenly spaced snapshot indices over `0..n`, both ends included, deduplicated.
pub fn multi_snapshot_subset(n: usize, count: usize) -> Vec<usize> {
    let count = count.min(n).max(1);
    if count == 1 {
        return vec![0];
    }
    let mut out: Vec<usize> = (0..count)
        .map(|j| ((j as f64) * ((n - 1) as f64) / ((count - 1) as f64)).round() as usize)
        .collect();
    out.dedup();
    out
}

/// `b = argmin ‖Φ v − x0‖₂`.
pub fn fit_coefficients_first<T: Real>(modes: &DMatrix<C<T>>, x0: &DVector<T>) -> Result<Vec<C<T>>> {
    if x0.len() != modes.nrows() {
        return Err(DmdError::ShapeMismatch(format!(
            "snapshot has {} entries, modes have {} rows",
            x0.len(),
            modes.nrows()
        )));
    }
    let rhs = x0.map(creal);
    Ok(complex_lstsq(modes, &rhs)?.iter().copied().collect())
}

/// `b = argmin Σ_{n ∈ subset} ‖X[n] − Φ diag(μⁿ) v‖₂²`, solved as one stacked
/// least-squares problem.
pub fn fit_coefficients_multi<T: Real>(
    modes: &DMatrix<C<T>>,
    mu: &[C<T>],
    x: &DMatrix<T>,
    subset: &[usize],
) -> Result<Vec<C<T>>> {
    let (d, r) = modes.shape();
    if mu.len() != r {
        return Err(DmdError::ShapeMismatch(format!("{} eigenvalues for {r} modes", mu.len())));
    }
    if x.nrows() != d {
        return Err(DmdError::ShapeMismatch(format!("data has {} rows, modes have {d}", x.nrows())));
    }
    if subset.is_empty() {
        return Err(DmdError::InvalidInput("snapshot subset is empty".into()));
    }
    if let Some(&bad) = subset.iter().find(|&&n| n >= x.ncols()) {
        return Err(DmdError::InvalidInput(format!("snapshot index {bad} out of range 0..{}", x.ncols())));
    }
    let mut a = DMatrix::<C<T>>::zeros(d * subset.len(), r);
    let mut rhs = DVector::<C<T>>::zeros(d * subset.len());
    for (blk, &n) in subset.iter().enumerate() {
        for k in 0..r {
            let p = cpowu(mu[k], n);
            for i in 0..d {
                a[(blk * d + i, k)] = modes[(i, k)] * p;
            }
        }
        for i in 0..d {
            rhs[blk * d + i] = creal(x[(i, n)]);
        }
    }
    Ok(complex_lstsq(&a, &rhs)?.iter().copied().collect())
}

/// Runs the configured DMD pipeline on a snapshot matrix.
pub fn exact_dmd<T: Real>(x: &SnapshotMatrix<T>, opts: &DmdOptions) -> Result<DmdResult<T>> {
    let n = x.len();
    if n < 2 {
        return Err(DmdError::TooFewSnapshots { required: 2, got: n });
    }
    opts.validate(x.dim(), n - 1)?;

    let (mean, data) = if opts.remove_mean {
        let (m, centered) = remove_temporal_mean(x);
        (Some(m), centered.into_data())
    } else {
        (None, x.data().clone())
    };
    let (x1, x2) = split_columns(&data)?;
    let reg = regress(x1, x2, opts, true)?;

    let mut b = match opts.b_fit {
        BFit::FirstSnapshot => fit_coefficients_first(&reg.modes, &data.column(0).into_owned())?,
        BFit::MultiSnapshot { count } => {
            let subset = multi_snapshot_subset(n, count);
            fit_coefficients_multi(&reg.modes, &reg.mu, &data, &subset)?
        }
    };
    for k in 0..b.len() {
        match reg.partner[k] {
            None => b[k] = creal(b[k].re),
            Some(p) if reg.mu[k].im > T::zero() => {
                let avg = (b[k] + b[p].conj()) * creal(T::lit(0.5));
                b[k] = avg;
                b[p] = avg.conj();
            }
            Some(_) => {}
        }
    }

    let r = reg.mu.len();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&i, &j| {
        let key = |k: usize| (cabs(b[k]), cabs(reg.mu[k]), carg(reg.mu[k]));
        let (bi, mi, ai) = key(i);
        let (bj, mj, aj) = key(j);
        bj.partial_cmp(&bi)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(mj.partial_cmp(&mi).unwrap_or(std::cmp::Ordering::Equal))
            .then(ai.partial_cmp(&aj).unwrap_or(std::cmp::Ordering::Equal))
            .then(i.cmp(&j))
    });
    let mut new_pos = vec![0; r];
    for (dst, &src) in order.iter().enumerate() {
        new_pos[src] = dst;
    }
    let dt = x.dt();
    let mu: Vec<C<T>> = order.iter().map(|&k| reg.mu[k]).collect();
    let gamma = mu.iter().map(|&m| cln(m) / creal(dt)).collect();
    Ok(DmdResult {
        modes: reg.modes.select_columns(order.iter()),
        gamma,
        mu,
        b: order.iter().map(|&k| b[k]).collect(),
        partner: order.iter().map(|&k| reg.partner[k].map(|p| new_pos[p])).collect(),
        singular_values: reg.singular_values,
        residuals: order.iter().map(|&k| reg.residuals[k]).collect(),
        reduced_operator_norm: reg.operator_norm,
        eigenvector_condition: reg.condition,
        options: opts.clone(),
        dt,
        t0: x.t0(),
        mean,
    })
}

/// Eigenvalues of `K̃` for an explicit pair of past/future matrices (no modes, no fit).
pub fn dmd_eigenvalues<T: Real>(x1: &DMatrix<T>, x2: &DMatrix<T>, opts: &DmdOptions) -> Result<Vec<C<T>>> {
    if x1.shape() != x2.shape() {
        return Err(DmdError::ShapeMismatch(format!("X1 is {:?}, X2 is {:?}", x1.shape(), x2.shape())));
    }
    opts.validate(x1.nrows(), x1.ncols())?;
    Ok(regress(x1.clone(), x2.clone(), opts, false)?.mu)
}

/// `Σ_k Φ_k μ_kⁿ b_k` (plus the removed mean, if any) for each step index `n`.
pub fn reconstruct_complex<T: Real>(result: &DmdResult<T>, times: &[usize]) -> DMatrix<C<T>> {
    reconstruct_parts(result, times, |_| true)
}

pub(crate) fn reconstruct_parts<T: Real>(
    result: &DmdResult<T>,
    times: &[usize],
    keep: impl Fn(usize) -> bool,
) -> DMatrix<C<T>> {
    let d = result.dim();
    let r = result.rank();
    let phi_re = result.modes.map(|z| z.re);
    let phi_im = result.modes.map(|z| z.im);
    let mut coeff_re = DMatrix::<T>::zeros(r, times.len());
    let mut coeff_im = DMatrix::<T>::zeros(r, times.len());
    for (col, &n) in times.iter().enumerate() {
        for k in (0..r).filter(|&k| keep(k)) {
            let c = cpowu(result.mu[k], n) * result.b[k];
            coeff_re[(k, col)] = c.re;
            coeff_im[(k, col)] = c.im;
        }
    }
    let re = &phi_re * &coeff_re - &phi_im * &coeff_im;
    let im = &phi_re * &coeff_im + &phi_im * &coeff_re;
    let mut out = DMatrix::from_fn(d, times.len(), |i, j| cplx(re[(i, j)], im[(i, j)]));
    if let Some(mean) = &result.mean {
        for mut col in out.column_iter_mut() {
            for (z, &m) in col.iter_mut().zip(mean.iter()) {
                z.re += m;
            }
        }
    }
    out
}

/// Real part of [`reconstruct_complex`]; the imaginary residue is discarded.
pub fn reconstruct<T: Real>(result: &DmdResult<T>, times: &[usize]) -> DMatrix<T> {
    reconstruct_complex(result, times).map(|z| z.re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn snapshots(data: DMatrix<f64>) -> SnapshotMatrix<f64> {
        SnapshotMatrix::new(data, 1.0, 0.0).unwrap()
    }

    #[test]
    fn split_shapes() {
        let x = snapshots(DMatrix::from_fn(3, 2, |i, j| (i + 10 * j) as f64));
        let (a, b) = split_snapshots(&x).unwrap();
        assert_eq!(a.column(0), x.data().column(0));
        assert_eq!(b.column(0), x.data().column(1));

        let x = snapshots(DMatrix::from_fn(4, 144, |i, j| (i * j) as f64));
        let (a, b) = split_snapshots(&x).unwrap();
        assert_eq!((a.ncols(), b.ncols()), (143, 143));
        for k in 0..143 {
            assert_eq!(b.column(k), x.data().column(k + 1));
        }
        let one = snapshots(DMatrix::from_element(3, 1, 1.0));
        assert!(matches!(split_snapshots(&one), Err(DmdError::TooFewSnapshots { .. })));
    }

    #[test]
    fn normalization_cases() {
        let x1 = DMatrix::from_column_slice(2, 1, &[0.0, 2.0]);
        let x2 = DMatrix::from_column_slice(2, 1, &[4.0, 6.0]);
        let (y1, y2, s) = column_normalize(&x1, &x2).unwrap();
        assert_eq!(s[0], 2.0);
        assert_eq!(y1.column(0).norm(), 1.0);
        assert_eq!(y2.as_slice(), &[2.0, 3.0]);

        let unit = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let (y1, _, _) = column_normalize(&unit, &unit).unwrap();
        assert_eq!(y1, unit);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = DMatrix::from_fn(50, 10, |_, _| rng.random_range(-1.0..1.0));
        let b = DMatrix::from_fn(50, 10, |_, _| rng.random_range(-1.0..1.0));
        let (_, y2, s) = column_normalize(&a, &b).unwrap();
        for k in 0..10 {
            assert!((y2.column(k) * s[k] - b.column(k)).amax() <= 1e-15 * b.amax() * 4.0);
        }

        let zero = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(column_normalize(&zero, &zero), Err(DmdError::ZeroColumn(1))));
    }

    #[test]
    fn tlsq_rank_bounds() {
        let a = DMatrix::from_element(3, 4, 1.0);
        assert!(tlsq_project(&a, &a, 5, SvdMode::Standard).is_err());
        let (p1, p2) = tlsq_project(&a, &a, 2, SvdMode::Standard).unwrap();
        assert_eq!(p1.shape(), (3, 2));
        assert_eq!(p2.shape(), (3, 2));
    }

    #[test]
    fn constant_field_has_unit_eigenvalue() {
        let c = DVector::from_vec(vec![1.0, 2.0, 2.0]);
        let x = snapshots(DMatrix::from_fn(3, 6, |i, _| c[i]));
        for opts in [DmdOptions::exact(1), DmdOptions::modified(1)] {
            let res = exact_dmd(&x, &opts).unwrap();
            assert_eq!(res.rank(), 1);
            assert!((res.mu[0] - creal(1.0)).norm() < 1e-12, "{opts:?} {:?}", res.mu);
            assert!((res.b[0].re - 3.0).abs() < 1e-12 && res.b[0].im == 0.0);
            let phi = res.mode(0).map(|z| z.re);
            assert!((phi * 3.0 - &c).amax() < 1e-12);
        }
    }

    #[test]
    fn doubling_sequence() {
        let x = snapshots(DMatrix::from_row_slice(1, 4, &[1.0, 2.0, 4.0, 8.0]));
        for opts in [DmdOptions::exact(1), DmdOptions::modified(1)] {
            let res = exact_dmd(&x, &opts).unwrap();
            assert!((res.mu[0].re - 2.0).abs() < 1e-12);
            assert!((res.gamma[0].re - 2f64.ln()).abs() < 1e-12);
            assert_eq!(res.gamma[0].im, 0.0);
        }
    }

    #[test]
    fn fit_first_cases() {
        let phi: DMatrix<C<f64>> = DMatrix::identity(2, 2);
        let b = fit_coefficients_first(&phi, &DVector::from_vec(vec![5.0, 7.0])).unwrap();
        assert!((b[0] - creal(5.0)).norm() < 1e-15 && (b[1] - creal(7.0)).norm() < 1e-15);

        // Orthonormal complex Φ: b = Φᴴ x0.
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let phi = DMatrix::from_row_slice(2, 2, &[cplx(s, 0.0), cplx(s, 0.0), cplx(0.0, s), cplx(0.0, -s)]);
        let x0 = DVector::from_vec(vec![1.0, -3.0]);
        let b = fit_coefficients_first(&phi, &x0).unwrap();
        let expect = phi.adjoint() * x0.map(creal);
        for k in 0..2 {
            assert!((b[k] - expect[k]).norm() < 1e-14);
        }
    }

    #[test]
    fn fit_first_residual_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let phi = DMatrix::from_fn(40, 5, |_, _| cplx(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let x0 = DVector::from_fn(40, |_, _| rng.random_range(-1.0..1.0));
        let b = DVector::from_vec(fit_coefficients_first(&phi, &x0).unwrap());
        let resid = x0.map(creal) - &phi * b;
        let proj = phi.adjoint() * resid;
        assert!(proj.iter().all(|z| z.norm() < 1e-10));
    }

    #[test]
    fn multi_with_first_only_matches_first_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let phi = DMatrix::from_fn(12, 3, |_, _| cplx(rng.random_range(-1.0_f64..1.0), rng.random_range(-1.0..1.0)));
        let mu = vec![cplx(0.9, 0.1), cplx(0.5, -0.2), creal(1.1)];
        let x = DMatrix::from_fn(12, 5, |_, _| rng.random_range(-1.0..1.0));
        let a = fit_coefficients_first(&phi, &x.column(0).into_owned()).unwrap();
        let b = fit_coefficients_multi(&phi, &mu, &x, &[0]).unwrap();
        for k in 0..3 {
            assert!((a[k] - b[k]).norm() <= 1e-12 * a[k].norm().max(1.0));
        }
        assert!(fit_coefficients_multi(&phi, &mu, &x, &[]).is_err());
        assert!(fit_coefficients_multi(&phi, &mu, &x, &[5]).is_err());
    }

    #[test]
    fn subset_is_evenly_spread() {
        assert_eq!(multi_snapshot_subset(144, 10), vec![0, 16, 32, 48, 64, 79, 95, 111, 127, 143]);
        assert_eq!(multi_snapshot_subset(4, 10), vec![0, 1, 2, 3]);
        assert_eq!(multi_snapshot_subset(5, 3), vec![0, 2, 4]);
    }

    #[test]
    fn options_validation() {
        let x = snapshots(DMatrix::from_fn(3, 5, |i, j| ((i + 1) * (j + 2)) as f64));
        assert!(exact_dmd(&x, &DmdOptions::exact(0)).is_err());
        assert!(exact_dmd(&x, &DmdOptions::exact(4)).is_err());
        let mut o = DmdOptions::modified(2);
        o.tlsq_rank = Some(1);
        assert!(exact_dmd(&x, &o).is_err());
        // Rank-1 data cannot support r = 2.
        assert!(matches!(exact_dmd(&x, &DmdOptions::exact(2)), Err(DmdError::RankDeficient { .. })));
    }

    #[test]
    fn single_pair_reconstructs_sinusoid() {
        let w = 2.0 * std::f64::consts::PI / 12.0;
        let x = snapshots(DMatrix::from_fn(2, 40, |i, n| if i == 0 { (w * n as f64).cos() } else { (w * n as f64).sin() }));
        let res = exact_dmd(&x, &DmdOptions::exact(2)).unwrap();
        let p = res.partner[0].unwrap();
        assert_eq!(res.mu[p], res.mu[0].conj());
        let times: Vec<usize> = (0..40).collect();
        let xc = reconstruct_complex(&res, &times);
        for n in 0..40 {
            let col = xc.column(n);
            let im = col.iter().map(|z| z.im * z.im).sum::<f64>().sqrt();
            let re = col.iter().map(|z| z.re * z.re).sum::<f64>().sqrt();
            assert!(im <= 1e-10 * re);
            // amplitude 2|Φ_i||b| on each entry
            let amp = 2.0 * res.modes[(0, 0)].norm() * res.b[0].norm();
            assert!((amp - std::f64::consts::FRAC_1_SQRT_2 * 2.0 * res.b[0].norm()).abs() < 1e-12);
        }
        let xr = reconstruct(&res, &times);
        assert!((xr - x.data()).amax() < 1e-10);
    }
}
