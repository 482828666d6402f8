//! Synthetic snapshot data with exactly known spectra and modes.
//!
//! Each generator `(γ, b, profile)` with `ω ≠ 0` contributes itself and its
//! conjugate, so the data are real:
//! `X[n] = Σ_k Φ_k b_k e^{γ_k n dt} + noise`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::dmd::write_mode_matrix;
use crate::error::{DmdError, Result};
use crate::field_io::{GridLayout, SnapshotMatrix};
use crate::scalar::{cabs, cplx, Real, C};
use crate::spectrum::period;

/// The eight principal tidal constituents and their periods in hours.
pub const TIDAL_CONSTITUENTS: [(&str, f64); 8] = [
    ("M2", 12.421),
    ("S2", 12.000),
    ("N2", 12.658),
    ("K2", 11.967),
    ("K1", 23.935),
    ("O1", 25.819),
    ("P1", 24.066),
    ("Q1", 26.868),
];

pub const GROUND_TRUTH_SCHEMA_VERSION: u32 = 1;

/// Continuous eigenvalues `i·2π/P` of the tidal constituents, in table order,
/// followed by the constant mode `γ = 0`.
pub fn tidal_preset() -> Vec<C<f64>> {
    TIDAL_CONSTITUENTS
        .iter()
        .map(|&(_, p)| C::new(0.0, 2.0 * PI / p))
        .chain(std::iter::once(C::new(0.0, 0.0)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    /// Independent Gaussian real and imaginary parts, normalized.
    RandomUnit,
    /// Real and imaginary parts drawn jointly with every other orthogonalized
    /// generator and made orthonormal, so mode energies separate exactly.
    Orthogonalized,
    /// `e^{i·slope·row}/√D`; oscillatory generators only.
    PhaseRamp { slope: f64 },
    /// Given vector, scaled to unit norm. `im` may be empty.
    Explicit { re: Vec<f64>, im: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    /// Per hour.
    pub gamma: C<f64>,
    pub b: C<f64>,
    pub profile: Profile,
}

impl Generator {
    pub fn new(gamma: C<f64>, b: C<f64>, profile: Profile) -> Self {
        Generator { gamma, b, profile }
    }

    pub fn is_real(&self) -> bool {
        self.gamma.im == 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSpec {
    pub dim: usize,
    pub snapshots: usize,
    pub dt: f64,
    pub modes: Vec<Generator>,
    /// Noise standard deviation as a fraction of the clean data's RMS.
    pub noise_sigma: f64,
    pub seed: u64,
    /// Attached to the generated matrix; must have `dim` rows.
    pub layout: Option<GridLayout>,
}

impl OracleSpec {
    /// Tidal preset with orthogonalized profiles and fixed amplitudes.
    pub fn tidal(dim: usize, snapshots: usize, dt: f64, noise_sigma: f64, seed: u64) -> Self {
        const AMPLITUDE: [f64; 9] = [0.5, 0.23, 0.1, 0.06, 0.3, 0.2, 0.1, 0.04, 0.2];
        let modes = tidal_preset()
            .into_iter()
            .enumerate()
            .map(|(k, gamma)| {
                let b = if gamma.im == 0.0 {
                    C::new(AMPLITUDE[k], 0.0)
                } else {
                    C::from_polar(AMPLITUDE[k], 0.9 * k as f64)
                };
                Generator::new(gamma, b, Profile::Orthogonalized)
            })
            .collect();
        OracleSpec { dim, snapshots, dt, modes, noise_sigma, seed, layout: None }
    }

    /// Number of modes after conjugate closure.
    pub fn closed_count(&self) -> usize {
        self.modes.iter().map(|g| if g.is_real() { 1 } else { 2 }).sum()
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DmdError::InvalidInput(m));
        if self.dim == 0 || self.snapshots == 0 {
            return bad("oracle needs D ≥ 1 and N ≥ 1".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("time step must be positive and finite, got {}", self.dt));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise level must be non-negative, got {}", self.noise_sigma));
        }
        if self.modes.is_empty() {
            return bad("oracle has no modes".into());
        }
        if let Some(layout) = &self.layout {
            if layout.dim() != self.dim {
                return Err(DmdError::ShapeMismatch(format!(
                    "layout has {} rows, oracle D = {}",
                    layout.dim(),
                    self.dim
                )));
            }
        }
        for (k, g) in self.modes.iter().enumerate() {
            if !(g.gamma.re.is_finite() && g.gamma.im.is_finite() && g.b.re.is_finite() && g.b.im.is_finite()) {
                return bad(format!("generator {k}: non-finite γ or b"));
            }
            if g.gamma.im.abs() * self.dt >= PI {
                return bad(format!("generator {k}: frequency {} aliases at dt = {}", g.gamma.im, self.dt));
            }
            if g.is_real() {
                if g.b.im != 0.0 {
                    return bad(format!("generator {k}: a non-oscillatory mode needs a real b"));
                }
                match &g.profile {
                    Profile::PhaseRamp { .. } => return bad(format!("generator {k}: phase ramp on a real mode")),
                    Profile::Explicit { im, .. } if im.iter().any(|&v| v != 0.0) => {
                        return bad(format!("generator {k}: complex profile on a real mode"))
                    }
                    _ => {}
                }
            }
            if let Profile::Explicit { re, im } = &g.profile {
                if re.len() != self.dim || !(im.is_empty() || im.len() == self.dim) {
                    return bad(format!("generator {k}: explicit profile length differs from D = {}", self.dim));
                }
                if re.iter().chain(im).any(|v| !v.is_finite()) {
                    return bad(format!("generator {k}: non-finite profile entry"));
                }
            }
        }
        if self.closed_count() > self.dim {
            return bad(format!("D = {} is smaller than the {} closed modes", self.dim, self.closed_count()));
        }
        Ok(())
    }
}

/// Exact modes, eigenvalues and coefficients, conjugate-closed: each
/// oscillatory generator appears as `(γ, γ̄)` in generator order.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth<T: Real> {
    /// Unit-norm columns.
    pub modes: DMatrix<C<T>>,
    pub gamma: Vec<C<T>>,
    pub mu: Vec<C<T>>,
    pub b: Vec<C<T>>,
}

#[derive(Debug, Clone)]
pub struct Oracle<T: Real> {
    pub data: SnapshotMatrix<T>,
    pub truth: GroundTruth<T>,
}

fn gaussian_vector(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| StandardNormal.sample(rng))
}

fn unit(v: DVector<f64>) -> Result<DVector<f64>> {
    let n = v.norm();
    if n == 0.0 {
        return Err(DmdError::InvalidInput("zero profile vector".into()));
    }
    Ok(v / n)
}

/// Profiles for every generator, before closure.
fn profiles(spec: &OracleSpec, rng: &mut ChaCha8Rng) -> Result<Vec<DVector<C<f64>>>> {
    let d = spec.dim;
    let n_orth: usize = spec
        .modes
        .iter()
        .filter(|g| g.profile == Profile::Orthogonalized)
        .map(|g| if g.is_real() { 1 } else { 2 })
        .sum();
    let basis = if n_orth > 0 {
        let g = DMatrix::from_fn(d, n_orth, |_, _| StandardNormal.sample(rng));
        Some(g.qr().q())
    } else {
        None
    };
    let mut next = 0;
    spec.modes
        .iter()
        .map(|g| {
            let v = match &g.profile {
                Profile::Orthogonalized => {
                    let q = basis.as_ref().expect("basis drawn for orthogonalized profiles");
                    let a = q.column(next).into_owned();
                    next += 1;
                    if g.is_real() {
                        a.map(|x| C::new(x, 0.0))
                    } else {
                        let b = q.column(next).into_owned();
                        next += 1;
                        DVector::from_fn(d, |i, _| C::new(a[i], b[i]) * FRAC_1_SQRT_2)
                    }
                }
                Profile::RandomUnit => {
                    let a = gaussian_vector(rng, d);
                    if g.is_real() {
                        unit(a)?.map(|x| C::new(x, 0.0))
                    } else {
                        let b = gaussian_vector(rng, d);
                        let v = DVector::from_fn(d, |i, _| C::new(a[i], b[i]));
                        let n = v.norm();
                        v.map(|z| z / n)
                    }
                }
                Profile::PhaseRamp { slope } => {
                    let s = 1.0 / (d as f64).sqrt();
                    DVector::from_fn(d, |i, _| C::from_polar(s, slope * i as f64))
                }
                Profile::Explicit { re, im } => {
                    let v = DVector::from_fn(d, |i, _| C::new(re[i], im.get(i).copied().unwrap_or(0.0)));
                    let n = v.norm();
                    if n == 0.0 {
                        return Err(DmdError::InvalidInput("zero explicit profile".into()));
                    }
                    v.map(|z| z / n)
                }
            };
            Ok(v)
        })
        .collect()
}

/// Synthesizes the snapshot matrix and its ground truth. Profiles and noise
/// come from independent streams of one seed, so changing the noise level
/// leaves the clean signal unchanged.
pub fn generate<T: Real>(spec: &OracleSpec) -> Result<Oracle<T>> {
    spec.validate()?;
    let (d, n, dt) = (spec.dim, spec.snapshots, spec.dt);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let profs = profiles(spec, &mut rng)?;

    let mut data = DMatrix::<f64>::zeros(d, n);
    for (g, phi) in spec.modes.iter().zip(&profs) {
        let weight = if g.is_real() { 1.0 } else { 2.0 };
        for t in 0..n {
            let z = g.b * (g.gamma * (t as f64 * dt)).exp();
            for i in 0..d {
                data[(i, t)] += weight * (phi[i] * z).re;
            }
        }
    }

    if spec.noise_sigma > 0.0 {
        let rms = (data.norm_squared() / (d * n) as f64).sqrt();
        let scale = spec.noise_sigma * rms;
        let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed);
        noise_rng.set_stream(1);
        for v in data.iter_mut() {
            let e: f64 = StandardNormal.sample(&mut noise_rng);
            *v += scale * e;
        }
    }

    let k = spec.closed_count();
    let mut modes = DMatrix::from_element(d, k, C::new(T::zero(), T::zero()));
    let (mut gamma, mut mu, mut b) = (Vec::with_capacity(k), Vec::with_capacity(k), Vec::with_capacity(k));
    let conv = |z: C<f64>| cplx(T::lit(z.re), T::lit(z.im));
    let mut col = 0;
    for (g, phi) in spec.modes.iter().zip(&profs) {
        let mut push = |phi: &DVector<C<f64>>, gm: C<f64>, bk: C<f64>| {
            modes.set_column(col, &phi.map(conv));
            gamma.push(conv(gm));
            mu.push(conv((gm * dt).exp()));
            b.push(conv(bk));
            col += 1;
        };
        push(phi, g.gamma, g.b);
        if !g.is_real() {
            push(&phi.map(|z| z.conj()), g.gamma.conj(), g.b.conj());
        }
    }

    let mut x = SnapshotMatrix::new(data.map(T::lit), T::lit(dt), T::zero())?;
    if let Some(layout) = &spec.layout {
        x = x.with_layout(layout.clone())?;
    }
    Ok(Oracle { data: x, truth: GroundTruth { modes, gamma, mu, b } })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchedEigenvalue<T: Real> {
    pub estimated: usize,
    pub truth: usize,
    pub error: T,
    /// Angle between the matched mode vectors, when modes were supplied.
    pub angle: Option<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumComparison<T: Real> {
    /// Sorted by true index.
    pub matches: Vec<MatchedEigenvalue<T>>,
    pub unmatched_estimated: Vec<usize>,
    pub unmatched_true: Vec<usize>,
    /// Zero when nothing matched.
    pub max_error: T,
    pub max_angle: Option<T>,
}

/// Angle between the complex lines spanned by `u` and `v`.
pub fn subspace_angle<T: Real>(u: &DVector<C<T>>, v: &DVector<C<T>>) -> T {
    let (nu, nv) = (u.norm(), v.norm());
    if nu == T::zero() || nv == T::zero() {
        return T::frac_pi_2();
    }
    let u = u.map(|z| z.unscale(nu));
    let v = v.map(|z| z.unscale(nv));
    let proj = u.dotc(&v);
    let perp = (&v - &u * proj).norm();
    perp.atan2(cabs(proj))
}

/// Estimated and true mode matrices, column-aligned with their eigenvalues.
pub type ModePair<'a, T> = (&'a DMatrix<C<T>>, &'a DMatrix<C<T>>);

/// Greedy nearest-neighbour matching: repeatedly pairs the closest remaining
/// estimated and true eigenvalues. `modes = (estimated, true)` adds angles.
pub fn compare_spectra<T: Real>(
    estimated: &[C<T>],
    truth: &[C<T>],
    modes: Option<ModePair<'_, T>>,
) -> Result<SpectrumComparison<T>> {
    if let Some((me, mt)) = modes {
        if me.ncols() != estimated.len() || mt.ncols() != truth.len() || me.nrows() != mt.nrows() {
            return Err(DmdError::ShapeMismatch("mode matrices do not match the eigenvalue lists".into()));
        }
    }
    let mut cand: Vec<(T, usize, usize)> = estimated
        .iter()
        .enumerate()
        .flat_map(|(i, &e)| truth.iter().enumerate().map(move |(j, &t)| (cabs(e - t), i, j)))
        .collect();
    cand.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then((a.1, a.2).cmp(&(b.1, b.2))));

    let mut used_e = vec![false; estimated.len()];
    let mut used_t = vec![false; truth.len()];
    let mut matches = Vec::new();
    for (err, i, j) in cand {
        if used_e[i] || used_t[j] {
            continue;
        }
        used_e[i] = true;
        used_t[j] = true;
        let angle = modes.map(|(me, mt)| subspace_angle(&me.column(i).into_owned(), &mt.column(j).into_owned()));
        matches.push(MatchedEigenvalue { estimated: i, truth: j, error: err, angle });
    }
    matches.sort_by_key(|m| m.truth);
    let max_error = matches.iter().fold(T::zero(), |a, m| a.max(m.error));
    let max_angle = modes.map(|_| matches.iter().fold(T::zero(), |a, m| a.max(m.angle.unwrap_or(T::zero()))));
    Ok(SpectrumComparison {
        matches,
        unmatched_estimated: (0..estimated.len()).filter(|&i| !used_e[i]).collect(),
        unmatched_true: (0..truth.len()).filter(|&j| !used_t[j]).collect(),
        max_error,
        max_angle,
    })
}

#[derive(Serialize)]
struct GroundTruthFile<'a> {
    schema_version: u32,
    dim: usize,
    snapshots: usize,
    dt: f64,
    noise_sigma: f64,
    seed: u64,
    gamma: Vec<[f64; 2]>,
    mu: Vec<[f64; 2]>,
    b: Vec<[f64; 2]>,
    /// Hours; null for the constant mode.
    period_hours: Vec<Option<f64>>,
    modes_file: &'a str,
}

/// Writes `<stem>.truth.json` and the true modes to `<stem>.truth.dmdm`.
pub fn write_ground_truth<T: Real>(oracle: &Oracle<T>, spec: &OracleSpec, stem: &Path) -> Result<(PathBuf, PathBuf)> {
    let json_path = stem.with_extension("truth.json");
    let modes_path = stem.with_extension("truth.dmdm");
    let pair = |z: &C<T>| [z.re.as_f64(), z.im.as_f64()];
    let t = &oracle.truth;
    let modes_file = modes_path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let file = GroundTruthFile {
        schema_version: GROUND_TRUTH_SCHEMA_VERSION,
        dim: spec.dim,
        snapshots: spec.snapshots,
        dt: spec.dt,
        noise_sigma: spec.noise_sigma,
        seed: spec.seed,
        gamma: t.gamma.iter().map(pair).collect(),
        mu: t.mu.iter().map(pair).collect(),
        b: t.b.iter().map(pair).collect(),
        period_hours: t
            .gamma
            .iter()
            .map(|&g| {
                let p = period(g).as_f64();
                p.is_finite().then_some(p)
            })
            .collect(),
        modes_file: &modes_file,
    };
    let mut w = BufWriter::new(File::create(&json_path)?);
    serde_json::to_writer_pretty(&mut w, &file)?;
    w.write_all(b"\n")?;
    w.flush()?;
    write_mode_matrix(&modes_path, &t.modes)?;
    Ok((json_path, modes_path))
}
