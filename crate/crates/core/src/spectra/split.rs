use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::SpectraSet;
use crate::error::{Error, Result};

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Random train/test index split; both halves returned sorted.
pub fn split_indices(n: usize, n_test: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_test == 0 || n_test >= n {
        return Err(Error::InvalidInput(format!(
            "test count {n_test} must lie in 1..{n}"
        )));
    }
    let idx = shuffled(n, seed);
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

/// Splits a set into `(train, test)` with `n_test` test samples.
pub fn train_test_split(
    set: &SpectraSet,
    n_test: usize,
    seed: u64,
) -> Result<(SpectraSet, SpectraSet)> {
    let (train, test) = split_indices(set.n_samples(), n_test, seed)?;
    Ok((set.select(&train), set.select(&test)))
}

/// `k` folds over `0..n` as `(train_idx, val_idx)` pairs. Validation folds
/// partition `0..n` and differ in size by at most one.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 || k > n {
        return Err(Error::InvalidInput(format!(
            "fold count {k} must lie in 2..={n}"
        )));
    }
    let idx = shuffled(n, seed);
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let mut val = idx[start..start + len].to_vec();
        let mut train: Vec<usize> = idx[..start]
            .iter()
            .chain(&idx[start + len..])
            .copied()
            .collect();
        val.sort_unstable();
        train.sort_unstable();
        folds.push((train, val));
        start += len;
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn forty_seven_samples_split_forty_seven() {
        let (train, test) = split_indices(47, 7, 1).unwrap();
        assert_eq!((train.len(), test.len()), (40, 7));
        let all: BTreeSet<usize> = train.iter().chain(&test).copied().collect();
        assert_eq!(all.len(), 47);
        assert_eq!(split_indices(47, 7, 1).unwrap(), (train, test));
        assert!(split_indices(5, 5, 0).is_err());
        assert!(split_indices(5, 0, 0).is_err());
    }

    #[test]
    fn ten_folds_of_four() {
        let folds = kfold_indices(40, 10, 3).unwrap();
        assert_eq!(folds.len(), 10);
        assert!(folds.iter().all(|(t, v)| v.len() == 4 && t.len() == 36));
    }

    #[test]
    fn leave_one_out() {
        let folds = kfold_indices(5, 5, 0).unwrap();
        assert!(folds.iter().all(|(_, v)| v.len() == 1));
        assert!(kfold_indices(5, 6, 0).is_err());
        assert!(kfold_indices(5, 1, 0).is_err());
    }

    #[test]
    fn folds_partition_exhaustively() {
        for n in 2..30 {
            for k in 2..=n.min(12) {
                let folds = kfold_indices(n, k, n as u64 * 31 + k as u64).unwrap();
                let mut count = vec![0usize; n];
                let sizes: Vec<usize> = folds.iter().map(|(_, v)| v.len()).collect();
                for (train, val) in &folds {
                    for &i in val {
                        count[i] += 1;
                    }
                    let t: BTreeSet<_> = train.iter().collect();
                    assert!(val.iter().all(|i| !t.contains(i)));
                    assert_eq!(train.len() + val.len(), n);
                }
                assert!(count.iter().all(|&c| c == 1));
                assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            }
        }
    }
}
