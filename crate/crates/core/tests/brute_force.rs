//! Reduced operator versus the full regression `A = X2·pinv(X1)` on small
//! dense problems, with an independent eigensolver and pseudoinverse.

use dmdkit::dmd::{dmd_eigenvalues, exact_dmd, split_snapshots, DmdOptions};
use dmdkit::synth::compare_spectra;
use dmdkit::{SnapshotMatrix, C};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Full-rank pseudoinverse through the normal equations.
fn pinv(a: &DMatrix<f64>) -> DMatrix<f64> {
    let at = a.transpose();
    if a.nrows() >= a.ncols() {
        (&at * a).try_inverse().unwrap() * at
    } else {
        &at * (a * &at).try_inverse().unwrap()
    }
}

fn eigenvalues(a: &DMatrix<f64>) -> Vec<C<f64>> {
    let m = faer::Mat::<f64>::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)]);
    m.eigenvalues().unwrap().into_iter().map(|z| C::new(z.re, z.im)).collect()
}

/// Random dense snapshot matrix with `D ≤ 20`. Independent entries keep `X1`
/// well conditioned (a Krylov sequence would not be).
fn random_system(rng: &mut ChaCha8Rng) -> SnapshotMatrix<f64> {
    let d = rng.random_range(2..=20);
    let n = rng.random_range(3..=30);
    let x = DMatrix::from_fn(d, n, |_, _| rng.random_range(-1.0..1.0));
    SnapshotMatrix::new(x, 1.0, 0.0).unwrap()
}

#[test]
fn reduced_spectrum_matches_full_regression() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let x = random_system(&mut rng);
        let (x1, x2) = split_snapshots(&x).unwrap();
        let r = x1.nrows().min(x1.ncols());
        let k = dmd_eigenvalues(&x1, &x2, &DmdOptions::exact(r)).unwrap();
        let a = &x2 * pinv(&x1);
        let full = eigenvalues(&a);
        let top = full.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let nonzero: Vec<C<f64>> = full.into_iter().filter(|z| z.norm() > 1e-8 * top).collect();
        let cmp = compare_spectra(&k, &nonzero, None).unwrap();
        assert!(
            cmp.unmatched_estimated.is_empty() && cmp.unmatched_true.is_empty(),
            "case {case}: {} reduced vs {} nonzero eigenvalues",
            k.len(),
            nonzero.len()
        );
        assert!(cmp.max_error < 1e-8, "case {case}: max error {:e}", cmp.max_error);
        worst = worst.max(cmp.max_error);
    }
    println!("worst eigenvalue discrepancy over 50 systems: {worst:e}");
}

#[test]
fn exact_modes_are_eigenvectors_of_full_operator() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0;
    for _ in 0..20 {
        let x = random_system(&mut rng);
        let (x1, x2) = split_snapshots(&x).unwrap();
        if x1.ncols() < x1.nrows() {
            continue;
        }
        let r = x1.nrows();
        let res = exact_dmd(&x, &DmdOptions::exact(r)).unwrap();
        let a = (&x2 * pinv(&x1)).map(|v| C::new(v, 0.0));
        for k in 0..r {
            let phi = res.mode(k);
            let resid = (&a * &phi - &phi * res.mu[k]).norm();
            assert!(resid < 1e-8, "mode {k}: residual {resid:e}");
        }
        checked += 1;
    }
    assert!(checked >= 5, "only {checked} square-or-wide systems drawn");
}
