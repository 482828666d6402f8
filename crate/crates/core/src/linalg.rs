//! Dense kernels used by the DMD pipeline.
//!
//! Two SVD routes are provided. [`SvdMode::Standard`] delegates to nalgebra's
//! bidiagonalization + implicit-shift QR. [`SvdMode::HighAccuracy`] runs a
//! Householder QR followed by one-sided Jacobi on the triangular factor; Jacobi
//! rotations are applied to whole columns, so the small singular values of
//! column-graded matrices come out with high relative accuracy.

use nalgebra::{DMatrix, DVector, Schur};
use serde::{Deserialize, Serialize};

use crate::error::{DmdError, Result};
use crate::scalar::{cabs, cplx, creal, Real, C};

const MAX_JACOBI_SWEEPS: usize = 80;
const MAX_QR_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SvdMode {
    Standard,
    #[default]
    HighAccuracy,
}

/// Thin or truncated SVD `A ≈ U diag(sigma) Vᵀ` with descending `sigma`.
#[derive(Debug, Clone)]
pub struct TruncatedSvd<T: Real> {
    pub u: DMatrix<T>,
    pub sigma: DVector<T>,
    pub v: DMatrix<T>,
}

impl<T: Real> TruncatedSvd<T> {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// Number of singular values above `max(m, n) · eps · sigma_1`.
    pub fn numerical_rank(&self, rows: usize, cols: usize) -> usize {
        let Some(&top) = self.sigma.iter().next() else {
            return 0;
        };
        if top <= T::zero() {
            return 0;
        }
        let tol = T::of_usize(rows.max(cols)) * T::eps() * top;
        self.sigma.iter().filter(|&&s| s > tol).count()
    }

    pub fn truncate(mut self, r: usize) -> Self {
        let r = r.min(self.sigma.len());
        self.u = self.u.columns(0, r).into_owned();
        self.v = self.v.columns(0, r).into_owned();
        self.sigma = self.sigma.rows(0, r).into_owned();
        self
    }

    pub fn recompose(&self) -> DMatrix<T> {
        let mut us = self.u.clone();
        for (j, &s) in self.sigma.iter().enumerate() {
            us.column_mut(j).scale_mut(s);
        }
        us * self.v.transpose()
    }
}

/// Thin SVD with `min(m, n)` singular triplets.
pub fn thin_svd<T: Real>(a: &DMatrix<T>, mode: SvdMode) -> Result<TruncatedSvd<T>> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Err(DmdError::InvalidInput("SVD of an empty matrix".into()));
    }
    if m < n {
        let t = thin_svd(&a.transpose(), mode)?;
        return Ok(TruncatedSvd { u: t.v, sigma: t.sigma, v: t.u });
    }
    match mode {
        SvdMode::Standard => standard_svd(a),
        SvdMode::HighAccuracy => jacobi_svd(a),
    }
}

/// Best rank-`r` approximation factors of `a`.
pub fn truncated_svd<T: Real>(a: &DMatrix<T>, r: usize, mode: SvdMode) -> Result<TruncatedSvd<T>> {
    let k = a.nrows().min(a.ncols());
    if r == 0 || r > k {
        return Err(DmdError::InvalidInput(format!(
            "truncation rank {r} outside 1..={k}"
        )));
    }
    Ok(thin_svd(a, mode)?.truncate(r))
}

/// Bidiagonal divide-and-conquer SVD (faer), evaluated in `f64`.
fn standard_svd<T: Real>(a: &DMatrix<T>) -> Result<TruncatedSvd<T>> {
    if a.iter().any(|x| !x.is_finite()) {
        return Err(DmdError::InvalidInput("SVD input contains non-finite values".into()));
    }
    let fa = faer::Mat::<f64>::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)].as_f64());
    let svd = fa.thin_svd().map_err(|_| DmdError::NoConvergence("bidiagonal SVD"))?;
    let (u, v) = (svd.U(), svd.V());
    let s = svd.S().column_vector();
    let raw: Vec<T> = (0..s.nrows()).map(|i| T::lit(s[i])).collect();
    let order = descending_order(&raw);
    let k = order.len();
    let sigma = DVector::from_iterator(k, order.iter().map(|&src| raw[src]));
    let out_u = DMatrix::from_fn(a.nrows(), k, |i, j| T::lit(u[(i, order[j])]));
    let out_v = DMatrix::from_fn(a.ncols(), k, |i, j| T::lit(v[(i, order[j])]));
    Ok(TruncatedSvd { u: out_u, sigma, v: out_v })
}

fn descending_order<T: Real>(s: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[j].partial_cmp(&s[i]).unwrap_or(std::cmp::Ordering::Equal).then(i.cmp(&j)));
    order
}

fn jacobi_svd<T: Real>(a: &DMatrix<T>) -> Result<TruncatedSvd<T>> {
    let (m, n) = a.shape();
    debug_assert!(m >= n);
    if a.iter().any(|x| !x.is_finite()) {
        return Err(DmdError::InvalidInput("SVD input contains non-finite values".into()));
    }
    let qr = a.clone().qr();
    let q = qr.q();
    let mut w = qr.r();
    let mut v = DMatrix::<T>::identity(n, n);
    let tol = T::eps();

    let mut converged = n < 2;
    for _ in 0..MAX_JACOBI_SWEEPS {
        let mut rotated = false;
        for p in 0..n - 1 {
            for qq in p + 1..n {
                let (alpha, beta, gamma) = {
                    let cp = w.column(p);
                    let cq = w.column(qq);
                    (cp.norm_squared(), cq.norm_squared(), cp.dot(&cq))
                };
                if alpha == T::zero() || beta == T::zero() {
                    continue;
                }
                if gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::lit(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let t = if zeta == T::zero() { T::one() } else { t };
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                rotate_columns(&mut w, p, qq, c, s);
                rotate_columns(&mut v, p, qq, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(DmdError::NoConvergence("one-sided Jacobi SVD"));
    }

    let norms: Vec<T> = (0..n).map(|j| w.column(j).norm()).collect();
    let order = descending_order(&norms);
    let mut ur = DMatrix::<T>::zeros(n, n);
    let mut vout = DMatrix::<T>::zeros(n, n);
    let mut sigma = DVector::<T>::zeros(n);
    for (dst, &src) in order.iter().enumerate() {
        sigma[dst] = norms[src];
        if norms[src] > T::zero() {
            ur.set_column(dst, &(w.column(src) / norms[src]));
        }
        vout.set_column(dst, &v.column(src));
    }
    complete_orthonormal(&mut ur, &sigma);
    Ok(TruncatedSvd { u: q * ur, sigma, v: vout })
}

fn rotate_columns<T: Real>(m: &mut DMatrix<T>, p: usize, q: usize, c: T, s: T) {
    for i in 0..m.nrows() {
        let xp = m[(i, p)];
        let xq = m[(i, q)];
        m[(i, p)] = c * xp - s * xq;
        m[(i, q)] = s * xp + c * xq;
    }
}

/// Replaces columns belonging to zero singular values with unit vectors
/// orthogonal to the rest (Gram-Schmidt against the canonical basis).
fn complete_orthonormal<T: Real>(u: &mut DMatrix<T>, sigma: &DVector<T>) {
    let n = u.nrows();
    for j in 0..u.ncols() {
        if sigma[j] > T::zero() {
            continue;
        }
        for e in 0..n {
            let mut cand = DVector::<T>::zeros(n);
            cand[e] = T::one();
            for _ in 0..2 {
                for k in 0..u.ncols() {
                    if k == j || (sigma[k] == T::zero() && k > j) {
                        continue;
                    }
                    let proj = u.column(k).dot(&cand);
                    cand -= u.column(k) * proj;
                }
            }
            let nrm = cand.norm();
            if nrm > T::lit(0.5) {
                u.set_column(j, &(cand / nrm));
                break;
            }
        }
    }
}

/// Eigenpairs of a real square matrix with conjugate symmetry enforced.
#[derive(Debug, Clone)]
pub struct RealEigen<T: Real> {
    pub values: Vec<C<T>>,
    /// Unit-norm eigenvectors as columns.
    pub vectors: DMatrix<C<T>>,
    /// `partner[k] = Some(j)` when `values[j] = conj(values[k])` is a distinct eigenvalue.
    pub partner: Vec<Option<usize>>,
    /// `‖A w_k − λ_k w_k‖₂` per pair.
    pub residuals: Vec<T>,
    /// 2-norm condition estimate of the eigenvector matrix.
    pub condition: T,
}

/// Eigendecomposition of a real (generally non-symmetric) matrix via complex
/// Schur form and triangular back-substitution.
///
/// Eigenvalues that are real up to rounding are snapped to the real axis with
/// real eigenvectors; complex eigenvalues are matched into conjugate pairs and
/// the partner's eigenvector is the exact conjugate of its representative.
pub fn real_eigen<T: Real>(a: &DMatrix<T>) -> Result<RealEigen<T>> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(DmdError::ShapeMismatch(format!(
            "eigendecomposition needs a non-empty square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(DmdError::InvalidInput("eigendecomposition of a non-finite matrix".into()));
    }
    let ac: DMatrix<C<T>> = a.map(creal);
    let schur = Schur::try_new(ac.clone(), T::eps(), MAX_QR_ITERATIONS)
        .ok_or(DmdError::NoConvergence("complex Schur iteration"))?;
    let (q, t) = schur.unpack();
    let scale = if a.norm() > T::zero() { a.norm() } else { T::one() };
    let small = T::eps() * scale;

    let raw_values: Vec<C<T>> = (0..n).map(|i| t[(i, i)]).collect();
    let mut vectors = DMatrix::<C<T>>::zeros(n, n);
    for k in 0..n {
        let lambda = t[(k, k)];
        let mut y = DVector::<C<T>>::zeros(n);
        y[k] = creal(T::one());
        for i in (0..k).rev() {
            let mut acc = C::new(T::zero(), T::zero());
            for j in i + 1..=k {
                acc += t[(i, j)] * y[j];
            }
            let mut denom = t[(i, i)] - lambda;
            if cabs(denom) < small {
                denom = creal(small);
            }
            y[i] = -acc / denom;
        }
        let x = &q * y;
        vectors.set_column(k, &x);
    }

    // Conjugate pairing.
    let real_tol = T::lit(100.0) * T::eps() * scale.max(T::one());
    let mut values = raw_values.clone();
    let mut partner = vec![None; n];
    let mut is_real = vec![false; n];
    for k in 0..n {
        if values[k].im.abs() <= real_tol {
            is_real[k] = true;
        }
    }
    let mut upper: Vec<usize> = (0..n).filter(|&k| !is_real[k] && values[k].im > T::zero()).collect();
    let mut lower: Vec<usize> = (0..n).filter(|&k| !is_real[k] && values[k].im < T::zero()).collect();
    let mut candidates: Vec<(T, usize, usize)> = Vec::new();
    for &p in &upper {
        for &l in &lower {
            candidates.push((cabs(values[l] - values[p].conj()), p, l));
        }
    }
    candidates.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap_or(std::cmp::Ordering::Equal).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    for (_, p, l) in candidates {
        if partner[p].is_none() && partner[l].is_none() {
            partner[p] = Some(l);
            partner[l] = Some(p);
        }
    }
    upper.retain(|&p| partner[p].is_none());
    lower.retain(|&l| partner[l].is_none());
    // Leftover complex eigenvalues of a real matrix can only be rounding-level
    // splits of real ones.
    for k in upper.into_iter().chain(lower) {
        is_real[k] = true;
    }

    for k in 0..n {
        if is_real[k] {
            values[k] = creal(values[k].re);
            let mut col: DVector<C<T>> = vectors.column(k).into_owned();
            fix_phase(&mut col);
            let re: DVector<C<T>> = col.map(|z| creal(z.re));
            let nrm = complex_norm(&re);
            let re = if nrm > T::zero() { re / creal(nrm) } else { re };
            vectors.set_column(k, &re);
        } else if let Some(l) = partner[k] {
            if values[k].im > T::zero() {
                let mut col: DVector<C<T>> = vectors.column(k).into_owned();
                let nrm = complex_norm(&col);
                if nrm > T::zero() {
                    col /= creal(nrm);
                }
                fix_phase(&mut col);
                let mid = (values[k] + values[l].conj()) * creal(T::lit(0.5));
                values[k] = mid;
                values[l] = mid.conj();
                vectors.set_column(l, &col.map(|z| z.conj()));
                vectors.set_column(k, &col);
            }
        }
    }

    let residuals = (0..n)
        .map(|k| {
            let w = vectors.column(k);
            let r = &ac * w - w * values[k];
            complex_norm(&r.into_owned())
        })
        .collect();

    let sv = to_faer_complex(&vectors)
        .singular_values()
        .map_err(|_| DmdError::NoConvergence("eigenvector condition SVD"))?;
    let smax = T::lit(sv.iter().copied().fold(0.0, f64::max));
    let smin = T::lit(sv.iter().copied().fold(f64::INFINITY, f64::min));
    let condition = if smin > T::zero() { smax / smin } else { T::max_value().unwrap_or(smax) };

    Ok(RealEigen { values, vectors, partner, residuals, condition })
}

pub(crate) fn complex_norm<T: Real>(v: &DVector<C<T>>) -> T {
    v.iter().fold(T::zero(), |acc, z| acc + z.re * z.re + z.im * z.im).sqrt()
}

/// Rotates `v` so that its largest-magnitude entry (first one on ties) is real and positive.
pub(crate) fn fix_phase<T: Real>(v: &mut DVector<C<T>>) {
    let mut best = 0;
    let mut best_mag = T::zero();
    for (i, z) in v.iter().enumerate() {
        let m = cabs(*z);
        if m > best_mag {
            best_mag = m;
            best = i;
        }
    }
    if best_mag == T::zero() {
        return;
    }
    let rot = v[best].conj() / creal(best_mag);
    for z in v.iter_mut() {
        *z *= rot;
    }
    v[best] = creal(best_mag);
}

/// Minimum-norm least-squares solution of `A x = b` for complex `A` with full
/// column rank. Rank deficiency is reported with the extreme singular values.
pub fn complex_lstsq<T: Real>(a: &DMatrix<C<T>>, b: &DVector<C<T>>) -> Result<DVector<C<T>>> {
    let (m, n) = a.shape();
    if b.len() != m {
        return Err(DmdError::ShapeMismatch(format!("lstsq: A has {m} rows, b has {}", b.len())));
    }
    if n == 0 || m < n {
        return Err(DmdError::ShapeMismatch(format!(
            "lstsq needs a tall system, got {m}x{n}"
        )));
    }
    if a.iter().chain(b.iter()).any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(DmdError::InvalidInput("least-squares input contains non-finite values".into()));
    }
    let svd = to_faer_complex(a)
        .thin_svd()
        .map_err(|_| DmdError::NoConvergence("least-squares SVD"))?;
    let s = svd.S().column_vector();
    let smax = (0..n).map(|i| s[i].re).fold(0.0, f64::max);
    let smin = (0..n).map(|i| s[i].re).fold(f64::INFINITY, f64::min);
    let tol = m.max(n) as f64 * T::eps().as_f64() * smax;
    if smax == 0.0 || smin <= tol {
        return Err(DmdError::SingularSystem { smallest: smin, largest: smax });
    }
    let (u, v) = (svd.U(), svd.V());
    let coeff: Vec<C64> = (0..n)
        .map(|k| {
            let dot = (0..m).fold(C64::new(0.0, 0.0), |acc, i| acc + u[(i, k)].conj() * to_c64(b[i]));
            dot / s[k].re
        })
        .collect();
    Ok(DVector::from_fn(n, |j, _| {
        let x = (0..n).fold(C64::new(0.0, 0.0), |acc, k| acc + v[(j, k)] * coeff[k]);
        cplx(T::lit(x.re), T::lit(x.im))
    }))
}

type C64 = C<f64>;

fn to_c64<T: Real>(z: C<T>) -> C64 {
    C64::new(z.re.as_f64(), z.im.as_f64())
}

fn to_faer_complex<T: Real>(a: &DMatrix<C<T>>) -> faer::Mat<C64> {
    faer::Mat::from_fn(a.nrows(), a.ncols(), |i, j| to_c64(a[(i, j)]))
}
