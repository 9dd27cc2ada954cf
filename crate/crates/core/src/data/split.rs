//! Train / validation / test partitions.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Training sequences of the fixed-count DHG protocol.
pub const DHG_TRAIN_COUNT: usize = 1960;
/// Fraction of the training pool held out for validation (floored).
pub const VALIDATION_FRACTION: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub enum SplitProtocol {
    /// Seeded shuffle; the first `train_count` sequences train, the rest test.
    DhgFixedCount { train_count: usize, seed: u64 },
    /// Per class, the first half (rounded up, input order) trains.
    FphaStandard { seed: u64 },
    /// Per class, a seeded `test_fraction` (rounded) is held out for test.
    SyntheticRandom { seed: u64, test_fraction: f64 },
}

impl SplitProtocol {
    pub fn dhg(seed: u64) -> Self {
        SplitProtocol::DhgFixedCount {
            train_count: DHG_TRAIN_COUNT,
            seed,
        }
    }

    fn seed(&self) -> u64 {
        match *self {
            SplitProtocol::DhgFixedCount { seed, .. }
            | SplitProtocol::FphaStandard { seed }
            | SplitProtocol::SyntheticRandom { seed, .. } => seed,
        }
    }
}

/// Indices into the input sequence list, each sorted ascending.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub warnings: Vec<String>,
}

fn per_class(labels: &[usize]) -> Vec<Vec<usize>> {
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut groups = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        groups[l].push(i);
    }
    groups
}

/// Builds a disjoint, exhaustive split of `labels.len()` sequences. The
/// validation set is `floor(0.05 · |pool|)` sequences drawn from the
/// training pool. Classes missing from a split produce warnings.
pub fn build_split(labels: &[usize], protocol: &SplitProtocol) -> Result<Split> {
    let n = labels.len();
    if n == 0 {
        return Err(Error::InvalidArgument("no sequences to split".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(protocol.seed());
    let (mut pool, mut test) = match *protocol {
        SplitProtocol::DhgFixedCount { train_count, .. } => {
            if train_count >= n {
                return Err(Error::InvalidArgument(format!(
                    "{n} sequences cannot provide {train_count} training sequences and a test set"
                )));
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let test = order.split_off(train_count);
            (order, test)
        }
        SplitProtocol::FphaStandard { .. } => {
            let (mut pool, mut test) = (Vec::new(), Vec::new());
            for group in per_class(labels) {
                let cut = group.len().div_ceil(2);
                pool.extend_from_slice(&group[..cut]);
                test.extend_from_slice(&group[cut..]);
            }
            (pool, test)
        }
        SplitProtocol::SyntheticRandom { test_fraction, .. } => {
            if !(0.0..1.0).contains(&test_fraction) {
                return Err(Error::InvalidArgument(format!(
                    "test fraction {test_fraction} outside [0, 1)"
                )));
            }
            let (mut pool, mut test) = (Vec::new(), Vec::new());
            for mut group in per_class(labels) {
                group.shuffle(&mut rng);
                let k = (group.len() as f64 * test_fraction).round() as usize;
                test.extend_from_slice(&group[..k]);
                pool.extend_from_slice(&group[k..]);
            }
            (pool, test)
        }
    };
    pool.sort_unstable();
    pool.shuffle(&mut rng);
    let n_val = (pool.len() as f64 * VALIDATION_FRACTION).floor() as usize;
    let mut val = pool.drain(..n_val).collect::<Vec<_>>();
    pool.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();

    let mut split = Split {
        train: pool,
        val,
        test,
        warnings: Vec::new(),
    };
    let present: Vec<bool> = per_class(labels).iter().map(|g| !g.is_empty()).collect();
    for (name, part) in [
        ("train", &split.train),
        ("validation", &split.val),
        ("test", &split.test),
    ] {
        if part.is_empty() && name == "validation" {
            continue;
        }
        let mut seen = vec![false; present.len()];
        for &i in part {
            seen[labels[i]] = true;
        }
        for (c, (&p, &s)) in present.iter().zip(&seen).enumerate() {
            if p && !s {
                let w = format!("class {c} has no sequences in the {name} split");
                log::warn!("{w}");
                split.warnings.push(w);
            }
        }
    }
    Ok(split)
}
