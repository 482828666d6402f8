use std::io::Write;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dmd::{dmd_eigenvalues, split_snapshots, DmdOptions};
use crate::error::{DmdError, Result};
use crate::field_io::{remove_temporal_mean, SnapshotMatrix};
use crate::scalar::{Real, C};

pub const DEFAULT_TRIALS: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct LooTrial<T: Real> {
    /// Snapshot-pair column removed from both `X1` and `X2`.
    pub omitted: usize,
    pub mus: Vec<C<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeaveOneOutResult<T: Real> {
    pub trials: Vec<LooTrial<T>>,
    /// Eigenvalues of the full-data regression.
    pub base: Vec<C<T>>,
    pub seed: u64,
}

impl<T: Real> LeaveOneOutResult<T> {
    /// All trial eigenvalues, trial by trial.
    pub fn pooled(&self) -> Vec<C<T>> {
        self.trials.iter().flat_map(|t| t.mus.iter().copied()).collect()
    }
}

/// Omitted columns for each trial: a seeded shuffle of `0..m`, reshuffled each
/// time it is exhausted, so no column repeats while `trials ≤ m`.
fn omitted_columns(m: usize, trials: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(trials);
    while out.len() < trials {
        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(&mut rng);
        out.extend(perm.into_iter().take(trials - out.len()));
    }
    out
}

fn drop_column<T: Real>(a: &DMatrix<T>, col: usize) -> DMatrix<T> {
    a.clone().remove_column(col)
}

/// Options for a trial on `m` columns: ranks capped at what the smaller
/// problem can support.
fn trial_options(opts: &DmdOptions, dim: usize, m: usize) -> Result<DmdOptions> {
    let mut o = opts.clone();
    o.rank = o.rank.min(dim).min(m);
    if o.rank == 0 {
        return Err(DmdError::RankDeficient { requested: opts.rank, rank: 0 });
    }
    if o.use_tlsq {
        o.tlsq_rank = Some(o.effective_tlsq_rank().min(2 * dim).min(m).max(o.rank));
    }
    Ok(o)
}

fn eigenvalues_capped<T: Real>(x1: &DMatrix<T>, x2: &DMatrix<T>, opts: &DmdOptions) -> Result<Vec<C<T>>> {
    let o = trial_options(opts, x1.nrows(), x1.ncols())?;
    match dmd_eigenvalues(x1, x2, &o) {
        Err(DmdError::RankDeficient { rank, .. }) if rank > 0 && rank < o.rank => {
            let mut o = o;
            o.rank = rank;
            if o.use_tlsq {
                o.tlsq_rank = Some(o.effective_tlsq_rank().max(rank));
            }
            dmd_eigenvalues(x1, x2, &o)
        }
        other => other,
    }
}

/// Re-estimates the spectrum `trials` times, each time deleting one randomly
/// chosen snapshot pair. Trials run in parallel; the result does not depend on
/// the thread count.
pub fn leave_one_out<T: Real>(
    x: &SnapshotMatrix<T>,
    opts: &DmdOptions,
    trials: usize,
    seed: u64,
) -> Result<LeaveOneOutResult<T>> {
    if trials == 0 {
        return Err(DmdError::InvalidInput("leave-one-out needs at least one trial".into()));
    }
    if x.len() < 3 {
        return Err(DmdError::TooFewSnapshots { required: 3, got: x.len() });
    }
    let centered;
    let x = if opts.remove_mean {
        centered = remove_temporal_mean(x).1;
        &centered
    } else {
        x
    };
    let (x1, x2) = split_snapshots(x)?;
    let base = dmd_eigenvalues(&x1, &x2, opts)?;
    let omitted = omitted_columns(x1.ncols(), trials, seed);
    let trials = omitted
        .par_iter()
        .map(|&col| {
            let mus = eigenvalues_capped(&drop_column(&x1, col), &drop_column(&x2, col), opts)?;
            Ok(LooTrial { omitted: col, mus })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LeaveOneOutResult { trials, base, seed })
}

/// `trial,omitted,re,im` rows, 17 significant digits.
pub fn write_pooled_csv<T: Real, W: Write>(loo: &LeaveOneOutResult<T>, mut out: W) -> Result<()> {
    writeln!(out, "trial,omitted,re,im")?;
    for (t, trial) in loo.trials.iter().enumerate() {
        for m in &trial.mus {
            writeln!(out, "{},{},{:.16e},{:.16e}", t, trial.omitted, m.re.as_f64(), m.im.as_f64())?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn oracle(n: usize) -> SnapshotMatrix<f64> {
        let w = [2.0 * std::f64::consts::PI / 12.421, 2.0 * std::f64::consts::PI / 23.935];
        let data = DMatrix::from_fn(8, n, |i, t| {
            let t = t as f64;
            let i = i as f64;
            let (a, c) = ((i * 0.7).sin(), (i * 1.3).cos());
            let (d, e) = ((0.4 * i + 1.0).cos(), (2.1 * i).sin());
            a * (w[0] * t).cos() + c * (w[0] * t).sin() + 0.5 * (d * (w[1] * t).cos() + e * (w[1] * t).sin()) + 0.2
        });
        SnapshotMatrix::new(data, 1.0, 0.0).unwrap()
    }

    #[test]
    fn omitted_without_replacement() {
        let cols = omitted_columns(143, 30, 7);
        assert_eq!(cols.len(), 30);
        assert_eq!(cols.iter().collect::<HashSet<_>>().len(), 30);
        assert!(cols.iter().all(|&c| c < 143));
        let many = omitted_columns(5, 12, 1);
        assert_eq!(many[..5].iter().collect::<HashSet<_>>().len(), 5);
    }

    #[test]
    fn noiseless_single_trial_matches_base() {
        let x = oracle(60);
        let loo = leave_one_out(&x, &DmdOptions::modified(5), 1, 3).unwrap();
        assert_eq!(loo.trials.len(), 1);
        let mut a = loo.base.clone();
        let mut b = loo.trials[0].mus.clone();
        let key = |z: &C<f64>| (z.im, z.re);
        a.sort_by(|p, q| key(p).partial_cmp(&key(q)).unwrap());
        b.sort_by(|p, q| key(p).partial_cmp(&key(q)).unwrap());
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).norm() < 1e-8);
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let x = oracle(40);
        let o = DmdOptions::exact(5);
        let a = leave_one_out(&x, &o, 10, 11).unwrap();
        let b = leave_one_out(&x, &o, 10, 11).unwrap();
        assert_eq!(a, b);
        let c = leave_one_out(&x, &o, 10, 12).unwrap();
        assert_ne!(
            a.trials.iter().map(|t| t.omitted).collect::<Vec<_>>(),
            c.trials.iter().map(|t| t.omitted).collect::<Vec<_>>()
        );
    }

    #[test]
    fn rank_is_capped_after_deletion() {
        // N − 1 = 4 pairs, r = 4 leaves only 3 columns per trial.
        let x = oracle(5);
        let loo = leave_one_out(&x, &DmdOptions::exact(4), 3, 0).unwrap();
        assert!(loo.trials.iter().all(|t| t.mus.len() == 3));
        assert!(leave_one_out(&x, &DmdOptions::exact(4), 0, 0).is_err());
        assert!(leave_one_out(&oracle(2), &DmdOptions::exact(1), 1, 0).is_err());
    }

    #[test]
    fn pooled_is_conjugate_closed() {
        let x = oracle(50);
        let loo = leave_one_out(&x, &DmdOptions::modified(5), 6, 2).unwrap();
        let pooled = loo.pooled();
        for z in &pooled {
            assert!(pooled.iter().any(|w| (w - z.conj()).norm() <= 1e-12));
        }
    }
}
