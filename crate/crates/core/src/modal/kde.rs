use std::collections::VecDeque;
use std::io::Write;

use serde::Serialize;

use super::loo::LeaveOneOutResult;
use crate::error::{DmdError, Result};
use crate::scalar::{Real, C};

/// Kernel width for leave-one-out robustness scores.
pub const ROBUSTNESS_BANDWIDTH: f64 = 2e-3;
/// Kernel width for the level-set clustering of eigenvalues.
pub const CLUSTER_BANDWIDTH: f64 = 2.5e-2;
/// Superlevel threshold, as a fraction of the maximum density.
pub const CLUSTER_LEVEL_FRACTION: f64 = 0.1;

/// Kernels are truncated at this many bandwidths when rasterizing
/// (`e^{−36} ≈ 2e-16` relative to the peak).
const GRID_SUPPORT: f64 = 6.0;
const MAX_GRID_CELLS: usize = 64_000_000;

/// Weighted Gaussian mixture over the complex plane,
/// `d(z) = (1/Z) Σ w_k exp(−|z − p_k|²/h²)` with `Z = (Σ w)·π·h²`.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeDensity<T: Real> {
    points: Vec<C<T>>,
    weights: Vec<T>,
    bandwidth: T,
}

impl<T: Real> KdeDensity<T> {
    /// Unit weights.
    pub fn new(points: Vec<C<T>>, bandwidth: T) -> Result<Self> {
        let n = points.len();
        Self::with_weights(points, vec![T::one(); n], bandwidth)
    }

    pub fn with_weights(points: Vec<C<T>>, weights: Vec<T>, bandwidth: T) -> Result<Self> {
        if !(bandwidth > T::zero()) || !bandwidth.is_finite() {
            return Err(DmdError::InvalidInput(format!("bandwidth must be positive, got {bandwidth}")));
        }
        if points.len() != weights.len() {
            return Err(DmdError::ShapeMismatch(format!("{} points, {} weights", points.len(), weights.len())));
        }
        if points.is_empty() {
            return Err(DmdError::InvalidInput("density needs at least one point".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= T::zero()) || !w.is_finite()) {
            return Err(DmdError::InvalidInput(format!("weights must be finite and nonnegative, got {w}")));
        }
        if weights.iter().all(|w| *w == T::zero()) {
            return Err(DmdError::InvalidInput("all weights are zero".into()));
        }
        Ok(KdeDensity { points, weights, bandwidth })
    }

    pub fn points(&self) -> &[C<T>] {
        &self.points
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn bandwidth(&self) -> T {
        self.bandwidth
    }

    /// `Z = (Σ w)·π·h²`.
    pub fn normalization(&self) -> T {
        let total = self.weights.iter().fold(T::zero(), |a, &w| a + w);
        total * T::pi() * self.bandwidth * self.bandwidth
    }

    /// `Σ w_k exp(−|z − p_k|²/h²)`, with compensated summation.
    pub fn unnormalized(&self, z: C<T>) -> T {
        let h2 = self.bandwidth * self.bandwidth;
        let (mut sum, mut comp) = (T::zero(), T::zero());
        for (p, &w) in self.points.iter().zip(&self.weights) {
            let term = w * (-(z - p).norm_sqr() / h2).exp();
            let t = sum + term;
            comp += if sum.abs() >= term.abs() { (sum - t) + term } else { (term - t) + sum };
            sum = t;
        }
        sum + comp
    }

    pub fn eval(&self, z: C<T>) -> T {
        self.unnormalized(z) / self.normalization()
    }

    /// Normalized density on a regular grid covering the points (and `extra`)
    /// with the given margin. Points are splatted in sorted order so the grid
    /// does not depend on the order they were supplied in.
    pub fn rasterize(&self, step: T, margin: T, extra: &[C<T>]) -> Result<DensityGrid<T>> {
        if !(step > T::zero()) || !(margin >= T::zero()) {
            return Err(DmdError::InvalidInput("grid step must be positive and margin nonnegative".into()));
        }
        let all = || self.points.iter().chain(extra.iter());
        if all().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(DmdError::InvalidInput("non-finite eigenvalue in density grid".into()));
        }
        let lo_re = all().map(|z| z.re).fold(self.points[0].re, |a, b| a.min(b)) - margin;
        let hi_re = all().map(|z| z.re).fold(self.points[0].re, |a, b| a.max(b)) + margin;
        let lo_im = all().map(|z| z.im).fold(self.points[0].im, |a, b| a.min(b)) - margin;
        let hi_im = all().map(|z| z.im).fold(self.points[0].im, |a, b| a.max(b)) + margin;
        let nre = ((hi_re - lo_re) / step).ceil().as_f64() as usize + 1;
        let nim = ((hi_im - lo_im) / step).ceil().as_f64() as usize + 1;
        if nre.saturating_mul(nim) > MAX_GRID_CELLS {
            return Err(DmdError::InvalidInput(format!("density grid of {nre}x{nim} cells is too large")));
        }
        let mut values = vec![T::zero(); nre * nim];

        let mut order: Vec<usize> = (0..self.points.len()).collect();
        order.sort_by(|&a, &b| {
            let (p, q) = (self.points[a], self.points[b]);
            (p.re, p.im, self.weights[a])
                .partial_cmp(&(q.re, q.im, self.weights[b]))
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let h = self.bandwidth;
        let h2 = h * h;
        let reach = (T::lit(GRID_SUPPORT) * h / step).ceil().as_f64() as isize;
        for &k in &order {
            let (p, w) = (self.points[k], self.weights[k]);
            if w == T::zero() {
                continue;
            }
            let cx = ((p.re - lo_re) / step).round().as_f64() as isize;
            let cy = ((p.im - lo_im) / step).round().as_f64() as isize;
            for iy in (cy - reach).max(0)..=(cy + reach).min(nim as isize - 1) {
                let y = lo_im + step * T::of_usize(iy as usize);
                let dy = y - p.im;
                for ix in (cx - reach).max(0)..=(cx + reach).min(nre as isize - 1) {
                    let x = lo_re + step * T::of_usize(ix as usize);
                    let dx = x - p.re;
                    values[iy as usize * nre + ix as usize] += w * (-(dx * dx + dy * dy) / h2).exp();
                }
            }
        }
        let z = self.normalization();
        for v in values.iter_mut() {
            *v /= z;
        }
        Ok(DensityGrid { re0: lo_re, im0: lo_im, step, nre, nim, values })
    }
}

/// Normalized density at `z`.
pub fn kde_eval<T: Real>(density: &KdeDensity<T>, z: C<T>) -> T {
    density.eval(z)
}

/// Row-major grid (`im` rows, `re` columns) of density values.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid<T: Real> {
    pub re0: T,
    pub im0: T,
    pub step: T,
    pub nre: usize,
    pub nim: usize,
    pub values: Vec<T>,
}

impl<T: Real> DensityGrid<T> {
    pub fn coord(&self, ix: usize, iy: usize) -> C<T> {
        C::new(self.re0 + self.step * T::of_usize(ix), self.im0 + self.step * T::of_usize(iy))
    }

    pub fn value(&self, ix: usize, iy: usize) -> T {
        self.values[iy * self.nre + ix]
    }

    /// Nearest grid node to `z`, if inside the grid.
    pub fn cell_of(&self, z: C<T>) -> Option<(usize, usize)> {
        let fx = ((z.re - self.re0) / self.step).round().as_f64();
        let fy = ((z.im - self.im0) / self.step).round().as_f64();
        if fx < 0.0 || fy < 0.0 || fx >= self.nre as f64 || fy >= self.nim as f64 {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    /// Riemann sum `Σ value·step²`.
    pub fn integral(&self) -> T {
        self.values.iter().fold(T::zero(), |a, &v| a + v) * self.step * self.step
    }

    pub fn max_value(&self) -> T {
        self.values.iter().copied().fold(T::zero(), |a, b| a.max(b))
    }
}

/// `re,im,value` rows with 17 significant digits.
pub fn write_grid_csv<T: Real, W: Write>(grid: &DensityGrid<T>, mut out: W) -> Result<()> {
    writeln!(out, "re,im,value")?;
    for iy in 0..grid.nim {
        for ix in 0..grid.nre {
            let z = grid.coord(ix, iy);
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e}",
                z.re.as_f64(),
                z.im.as_f64(),
                grid.value(ix, iy).as_f64()
            )?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct GridJson<'a> {
    schema_version: u32,
    re0: f64,
    im0: f64,
    step: f64,
    nre: usize,
    nim: usize,
    bandwidth: f64,
    /// Row-major, `im` rows.
    values: &'a [f64],
}

pub fn write_grid_json<T: Real, W: Write>(grid: &DensityGrid<T>, bandwidth: T, mut out: W) -> Result<()> {
    let values: Vec<f64> = grid.values.iter().map(|v| v.as_f64()).collect();
    let doc = GridJson {
        schema_version: 1,
        re0: grid.re0.as_f64(),
        im0: grid.im0.as_f64(),
        step: grid.step.as_f64(),
        nre: grid.nre,
        nim: grid.nim,
        bandwidth: bandwidth.as_f64(),
        values: &values,
    };
    serde_json::to_writer(&mut out, &doc)?;
    writeln!(out)?;
    Ok(())
}

/// Density of the pooled leave-one-out eigenvalues at each full-data eigenvalue.
pub fn robustness_scores<T: Real>(base: &[C<T>], loo: &LeaveOneOutResult<T>, bandwidth: T) -> Result<Vec<T>> {
    let pooled = loo.pooled();
    if pooled.is_empty() {
        return Err(DmdError::InvalidInput("no leave-one-out eigenvalues".into()));
    }
    let d = KdeDensity::new(pooled, bandwidth)?;
    Ok(base.iter().map(|&z| d.eval(z)).collect())
}

/// Eigenvalues weighted by their RMS contributions.
pub fn energy_density<T: Real>(mus: &[C<T>], rms_weights: &[T], bandwidth: T) -> Result<KdeDensity<T>> {
    KdeDensity::with_weights(mus.to_vec(), rms_weights.to_vec(), bandwidth)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering<T: Real> {
    /// 1-based cluster label of each base eigenvalue, `None` outside every cluster.
    pub labels: Vec<Option<usize>>,
    pub n_clusters: usize,
    /// Total member RMS per cluster, indexed by `label − 1` (descending).
    pub cluster_rms: Vec<T>,
    pub threshold: T,
    pub grid: DensityGrid<T>,
}

/// 4-connected components of `values ≥ threshold`; `-1` marks cells below it.
fn components<T: Real>(grid: &DensityGrid<T>, threshold: T) -> Vec<isize> {
    let (nre, nim) = (grid.nre, grid.nim);
    let mut comp = vec![-1isize; nre * nim];
    let mut next = 0;
    let mut queue = VecDeque::new();
    for start in 0..nre * nim {
        if comp[start] >= 0 || grid.values[start] < threshold {
            continue;
        }
        comp[start] = next;
        queue.push_back(start);
        while let Some(c) = queue.pop_front() {
            let (ix, iy) = (c % nre, c / nre);
            let mut visit = |n: usize| {
                if comp[n] < 0 && grid.values[n] >= threshold {
                    comp[n] = next;
                    queue.push_back(n);
                }
            };
            if ix > 0 {
                visit(c - 1);
            }
            if ix + 1 < nre {
                visit(c + 1);
            }
            if iy > 0 {
                visit(c - nre);
            }
            if iy + 1 < nim {
                visit(c + nre);
            }
        }
        next += 1;
    }
    comp
}

/// Clusters eigenvalues by the superlevel set of the pooled-sample density.
///
/// The density (bandwidth `h`) is rasterized with step `h/4` and margin `3h`
/// around all pooled and base eigenvalues, thresholded at `level_fraction`
/// times its maximum, and split into 4-connected components. A base eigenvalue
/// takes the component of its nearest grid node. Components holding at least
/// one base eigenvalue are numbered from 1 by descending total member RMS
/// (ties by lowest member index).
pub fn cluster_eigenvalues<T: Real>(
    base: &[C<T>],
    base_rms: &[T],
    pooled: &[C<T>],
    bandwidth: T,
    level_fraction: T,
) -> Result<Clustering<T>> {
    if base.len() != base_rms.len() {
        return Err(DmdError::ShapeMismatch(format!("{} eigenvalues, {} RMS values", base.len(), base_rms.len())));
    }
    if !(level_fraction > T::zero() && level_fraction <= T::one()) {
        return Err(DmdError::InvalidInput(format!("level fraction must be in (0, 1], got {level_fraction}")));
    }
    let density = KdeDensity::new(pooled.to_vec(), bandwidth)?;
    let grid = density.rasterize(bandwidth / T::lit(4.0), bandwidth * T::lit(3.0), base)?;
    let threshold = level_fraction * grid.max_value();
    let comp = components(&grid, threshold);

    let raw: Vec<Option<usize>> = base
        .iter()
        .map(|&z| {
            grid.cell_of(z)
                .and_then(|(ix, iy)| usize::try_from(comp[iy * grid.nre + ix]).ok())
        })
        .collect();
    // (component, total RMS, first member)
    let mut totals: Vec<(usize, T, usize)> = Vec::new();
    for (k, c) in raw.iter().enumerate() {
        if let Some(c) = *c {
            match totals.iter_mut().find(|t| t.0 == c) {
                Some(t) => t.1 += base_rms[k],
                None => totals.push((c, base_rms[k], k)),
            }
        }
    }
    totals.sort_by(|a, b| {
        b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.2.cmp(&b.2))
    });
    let labels = raw
        .iter()
        .map(|c| c.and_then(|c| totals.iter().position(|t| t.0 == c).map(|p| p + 1)))
        .collect();
    Ok(Clustering {
        labels,
        n_clusters: totals.len(),
        cluster_rms: totals.iter().map(|t| t.1).collect(),
        threshold,
        grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modal::loo::LooTrial;
    use crate::scalar::{cplx, creal};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn peak_and_linearity() {
        let h = 2e-3;
        let p = cplx(0.3, 0.9);
        let d = KdeDensity::new(vec![p], h).unwrap();
        let peak = kde_eval(&d, p);
        assert!((peak - 1.0 / (std::f64::consts::PI * h * h)).abs() <= 1e-12 * peak);

        for m in [2usize, 3, 7, 30, 101] {
            let many = KdeDensity::new(vec![p; m], h).unwrap();
            for q in [p, p + cplx(1e-3, -5e-4), p + cplx(-2.5e-3, 1e-4)] {
                assert_eq!(many.unnormalized(q), m as f64 * d.unnormalized(q));
                assert!((many.eval(q) - d.eval(q)).abs() <= 1e-14 * d.eval(q));
            }
        }
    }

    #[test]
    fn grid_integral_is_one() {
        let h = 2e-3;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<C<f64>> = (0..20)
            .map(|_| cplx(rng.random_range(0.9..0.91), rng.random_range(0.4..0.41)))
            .collect();
        let d = KdeDensity::new(pts, h).unwrap();
        let g = d.rasterize(h / 4.0, 3.0 * h, &[]).unwrap();
        assert!((g.integral() - 1.0).abs() < 1e-3, "{}", g.integral());
    }

    #[test]
    fn bad_parameters() {
        assert!(KdeDensity::new(vec![creal(1.0)], 0.0).is_err());
        assert!(KdeDensity::with_weights(vec![creal(1.0)], vec![-1.0], 1.0).is_err());
        assert!(energy_density(&[creal(1.0), creal(0.5)], &[0.0, 0.0], 1e-3).is_err());
    }

    #[test]
    fn energy_density_single_weight() {
        let mus = [creal(1.0_f64), cplx(0.97, 0.25), cplx(0.97, -0.25)];
        let d = energy_density(&mus, &[0.0, 2.0, 0.0], 2e-3).unwrap();
        let single = KdeDensity::new(vec![mus[1]], 2e-3).unwrap();
        for z in [mus[1], mus[1] + cplx(1e-3, 0.0), mus[0]] {
            assert!((d.eval(z) - single.eval(z)).abs() <= 1e-12 * single.eval(mus[1]));
        }
        let doubled = energy_density(&mus, &[0.0, 4.0, 0.0], 2e-3).unwrap();
        assert!((doubled.eval(mus[1]) - d.eval(mus[1])).abs() <= 1e-12 * d.eval(mus[1]));
    }

    #[test]
    fn robustness_prefers_tight_eigenvalue() {
        let h = 2e-3;
        let fixed = cplx(0.99, 0.5);
        let loose = cplx(0.95, -0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let trials = (0..30)
            .map(|t| {
                let (r, a) = (10.0 * h * rng.random::<f64>().sqrt(), rng.random_range(0.0..std::f64::consts::TAU));
                LooTrial { omitted: t, mus: vec![fixed, loose + cplx(r * a.cos(), r * a.sin())] }
            })
            .collect();
        let loo = LeaveOneOutResult { trials, base: vec![fixed, loose], seed: 0 };
        let s = robustness_scores(&[fixed, loose, creal(3.0)], &loo, h).unwrap();
        assert!(s[0] > s[1]);
        assert!(s[2] < 1e-30);
    }

    #[test]
    fn two_separated_groups() {
        let h = CLUSTER_BANDWIDTH;
        let a = cplx(0.9, 0.4);
        let b = a + creal(10.0 * h);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut pooled = Vec::new();
        for _ in 0..30 {
            pooled.push(a + cplx(rng.random_range(-0.2..0.2) * h, rng.random_range(-0.2..0.2) * h));
            pooled.push(b + cplx(rng.random_range(-0.2..0.2) * h, rng.random_range(-0.2..0.2) * h));
        }
        let c = cluster_eigenvalues(&[a, b], &[1.0, 2.0], &pooled, h, CLUSTER_LEVEL_FRACTION).unwrap();
        assert_eq!(c.n_clusters, 2);
        // b carries more RMS, so it is cluster 1.
        assert_eq!(c.labels, vec![Some(2), Some(1)]);
    }

    #[test]
    fn single_and_isolated() {
        let z = cplx(0.5, 0.5);
        let c = cluster_eigenvalues(&[z], &[1.0], &[z], CLUSTER_BANDWIDTH, 0.1).unwrap();
        assert_eq!((c.n_clusters, c.labels.clone()), (1, vec![Some(1)]));

        let mass = cplx(1.0, 0.0);
        let outlier = cplx(0.6, 0.0);
        let mut pooled = vec![mass; 100];
        pooled.push(outlier);
        let c = cluster_eigenvalues(&[mass, outlier], &[1.0, 1.0], &pooled, CLUSTER_BANDWIDTH, 0.1).unwrap();
        assert_eq!(c.labels, vec![Some(1), None]);
    }

    proptest! {
        #[test]
        fn labels_ignore_pooled_order(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let base: Vec<C<f64>> = (0..4).map(|_| cplx(rng.random_range(0.5..1.0), rng.random_range(-0.5..0.5))).collect();
            let mut pooled: Vec<C<f64>> = base.iter().flat_map(|&z| {
                (0..5).map(|_| z + cplx(rng.random_range(-0.01..0.01), rng.random_range(-0.01..0.01))).collect::<Vec<_>>()
            }).collect();
            let rms = vec![1.0, 2.0, 3.0, 4.0];
            let a = cluster_eigenvalues(&base, &rms, &pooled, CLUSTER_BANDWIDTH, 0.1).unwrap();
            pooled.reverse();
            let shift = seed as usize % pooled.len();
            pooled.rotate_left(shift);
            let b = cluster_eigenvalues(&base, &rms, &pooled, CLUSTER_BANDWIDTH, 0.1).unwrap();
            prop_assert_eq!(a.labels, b.labels);
            prop_assert_eq!(a.grid, b.grid);
        }

        #[test]
        fn kde_permutation_and_nonnegativity(seed in 0u64..1000, qr in 0.0..1.0f64, qi in -0.5..0.5f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<C<f64>> = (0..8).map(|_| cplx(rng.random_range(0.0..1.0), rng.random_range(-0.5..0.5))).collect();
            let w: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..2.0)).collect();
            let d = KdeDensity::with_weights(pts.clone(), w.clone(), 0.05).unwrap();
            let mut idx: Vec<usize> = (0..8).collect();
            idx.reverse();
            let e = KdeDensity::with_weights(idx.iter().map(|&i| pts[i]).collect(), idx.iter().map(|&i| w[i]).collect(), 0.05).unwrap();
            let q = cplx(qr, qi);
            prop_assert!(d.eval(q) >= 0.0);
            prop_assert!((d.eval(q) - e.eval(q)).abs() <= 1e-12 * d.eval(q).max(1e-300));
        }
    }
}
