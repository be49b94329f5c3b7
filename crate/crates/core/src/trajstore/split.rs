use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{PoolView, TrajectoryPool};
use crate::error::{Error, Result};
use crate::rng::{rng_for, tag};

/// Train/val/test fractions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitFractions {
    pub const fn new(train: f64, val: f64, test: f64) -> Self {
        SplitFractions { train, val, test }
    }

    fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
            return Err(Error::Split(format!("fractions must be non-negative: {self:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Split(format!("fractions sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions::new(0.8, 0.1, 0.1)
    }
}

/// A pool partitioned at trajectory granularity.
#[derive(Clone, Debug)]
pub struct SplitPool {
    pool: TrajectoryPool,
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
    fractions: SplitFractions,
}

impl SplitPool {
    pub fn pool(&self) -> &TrajectoryPool {
        &self.pool
    }

    pub fn fractions(&self) -> SplitFractions {
        self.fractions
    }

    pub fn train_indices(&self) -> &[usize] {
        &self.train
    }

    pub fn val_indices(&self) -> &[usize] {
        &self.val
    }

    pub fn test_indices(&self) -> &[usize] {
        &self.test
    }

    pub fn train(&self) -> PoolView<'_> {
        self.view(&self.train)
    }

    pub fn val(&self) -> PoolView<'_> {
        self.view(&self.val)
    }

    pub fn test(&self) -> PoolView<'_> {
        self.view(&self.test)
    }

    fn view<'a>(&'a self, idx: &[usize]) -> PoolView<'a> {
        PoolView {
            pool: &self.pool,
            indices: idx.to_vec(),
        }
    }
}

/// Shuffles trajectory indices with `seed` and allocates floor(n * f) to val
/// and test, the remainder to train. A split with a nonzero fraction always
/// receives at least one trajectory; a zero fraction yields an empty split.
pub fn split_pool(pool: TrajectoryPool, fractions: SplitFractions, seed: u64) -> Result<SplitPool> {
    fractions.validate()?;
    let n = pool.n_traj();
    let (n_train, n_val, n_test) = split_sizes(n, fractions)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, &[tag("split"), n as u64]));
    let mut train = order[..n_train].to_vec();
    let mut val = order[n_train..n_train + n_val].to_vec();
    let mut test = order[n_train + n_val..n_train + n_val + n_test].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitPool {
        pool,
        train,
        val,
        test,
        fractions,
    })
}

fn split_sizes(n: usize, f: SplitFractions) -> Result<(usize, usize, usize)> {
    let nonzero = [f.train, f.val, f.test].iter().filter(|&&x| x > 0.0).count();
    if n < nonzero {
        return Err(Error::Split(format!(
            "{n} trajectories cannot fill {nonzero} nonempty splits"
        )));
    }
    let alloc = |frac: f64| -> usize {
        if frac > 0.0 {
            ((n as f64 * frac + 1e-9).floor() as usize).max(1)
        } else {
            0
        }
    };
    let mut n_val = alloc(f.val);
    let mut n_test = alloc(f.test);
    let min_train = usize::from(f.train > 0.0);
    // bumping tiny splits to one trajectory may overdraw train
    while n_val + n_test + min_train > n {
        if n_val >= n_test && n_val > usize::from(f.val > 0.0) {
            n_val -= 1;
        } else if n_test > usize::from(f.test > 0.0) {
            n_test -= 1;
        } else {
            return Err(Error::Split(format!("cannot allocate splits for n={n}: {f:?}")));
        }
    }
    Ok((n - n_val - n_test, n_val, n_test))
}

#[cfg(test)]
mod tests {
    use super::super::{PoolMeta, PoolShape};
    use super::*;
    use proptest::prelude::*;

    fn pool(n: usize) -> TrajectoryPool {
        let shape = PoolShape {
            n_traj: n,
            t: 2,
            c: 1,
            h: 1,
            w: 1,
        };
        TrajectoryPool::new(shape, (0..2 * n).map(|v| v as f32).collect(), PoolMeta::default()).unwrap()
    }

    #[test]
    fn exact_division_sizes() {
        let s = split_pool(pool(10), SplitFractions::new(0.8, 0.1, 0.1), 0).unwrap();
        assert_eq!((s.train().len(), s.val().len(), s.test().len()), (8, 1, 1));
        let s = split_pool(pool(1000), SplitFractions::default(), 0).unwrap();
        assert_eq!((s.train().len(), s.val().len(), s.test().len()), (800, 100, 100));
    }

    #[test]
    fn all_train() {
        let s = split_pool(pool(7), SplitFractions::new(1.0, 0.0, 0.0), 4).unwrap();
        assert_eq!(s.train_indices(), &[0, 1, 2, 3, 4, 5, 6]);
        assert!(s.val().is_empty() && s.test().is_empty());
    }

    #[test]
    fn too_few_trajectories() {
        let err = split_pool(pool(2), SplitFractions::default(), 0).unwrap_err();
        assert!(matches!(err, Error::Split(_)));
    }

    #[test]
    fn bad_fractions() {
        assert!(split_pool(pool(5), SplitFractions::new(0.5, 0.1, 0.1), 0).is_err());
        assert!(split_pool(pool(5), SplitFractions::new(1.2, -0.1, -0.1), 0).is_err());
    }

    #[test]
    fn deterministic_partition() {
        let a = split_pool(pool(50), SplitFractions::default(), 9).unwrap();
        let b = split_pool(pool(50), SplitFractions::default(), 9).unwrap();
        assert_eq!(a.train_indices(), b.train_indices());
        assert_eq!(a.val_indices(), b.val_indices());
        assert_eq!(a.test_indices(), b.test_indices());
    }

    proptest! {
        #[test]
        fn partition_is_disjoint_and_exhaustive(
            n in 3usize..200,
            seed in any::<u64>(),
            a in 0.0f64..1.0,
            b in 0.0f64..1.0,
        ) {
            let val = a * 0.5;
            let test = (1.0 - val) * b * 0.5;
            let f = SplitFractions::new(1.0 - val - test, val, test);
            let s = split_pool(pool(n), f, seed).unwrap();
            let mut all: Vec<usize> = s.train_indices().iter()
                .chain(s.val_indices())
                .chain(s.test_indices())
                .copied()
                .collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            if val > 0.0 { prop_assert!(!s.val().is_empty()); }
            if test > 0.0 { prop_assert!(!s.test().is_empty()); }
        }
    }
}
