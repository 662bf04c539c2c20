use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::numgrad::Rng;

/// Seen-class train/test partition plus the unseen test samples.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GzslSplit {
    pub train_seen_idx: Vec<usize>,
    pub test_seen_idx: Vec<usize>,
    pub test_unseen_idx: Vec<usize>,
}

/// Per seen class: seeded shuffle, first `⌊ratio·n_c⌋` samples to train, the
/// rest to test. Every unseen-class sample goes to `test_unseen_idx`.
///
/// A dataset that carries a fixed `test_idx` list uses it instead: its
/// seen-class members form the seen test side and `ratio`/`seed` are ignored.
pub fn split_gzsl(ds: &Dataset, ratio: f64, seed: u64) -> Result<GzslSplit> {
    let test_unseen_idx = ds.unseen_indices();
    if let Some(fixed) = ds.test_idx() {
        let seen = ds.seen_indices();
        let (test, train): (Vec<usize>, Vec<usize>) =
            seen.into_iter().partition(|i| fixed.binary_search(i).is_ok());
        if train.is_empty() || test.is_empty() {
            return Err(Error::Data("fixed test_idx leaves an empty seen train or test side".into()));
        }
        return Ok(GzslSplit {
            train_seen_idx: train,
            test_seen_idx: test,
            test_unseen_idx,
        });
    }

    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Parameter(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let root = Rng::new(seed);
    let mut train_seen_idx = Vec::new();
    let mut test_seen_idx = Vec::new();
    for &c in ds.seen() {
        let mut idx = ds.indices_of(&[c]);
        if idx.len() < 2 {
            return Err(Error::Data(format!(
                "seen class {c} has {} samples; at least 2 are needed to split",
                idx.len()
            )));
        }
        root.child(c as u64).shuffle(&mut idx);
        let n_train = (ratio * idx.len() as f64).floor() as usize;
        let (train, test) = idx.split_at(n_train);
        train_seen_idx.extend_from_slice(train);
        test_seen_idx.extend_from_slice(test);
    }
    Ok(GzslSplit {
        train_seen_idx,
        test_seen_idx,
        test_unseen_idx,
    })
}
