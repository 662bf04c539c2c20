//! Feature/attribute datasets, their on-disk format, a synthetic generator and
//! seen-class train/test splits.

mod format;
mod split;
mod synth;

use std::collections::BTreeSet;

pub(crate) use format::{put_f32s, put_u32, Reader};
pub use format::{load_dataset, save_dataset, ATTRIBUTES_FILE, FEATURES_FILE, LABELS_FILE, SPLITS_FILE};
pub use split::{split_gzsl, GzslSplit};
pub use synth::{class_centers, make_synthetic, SynthConfig};

use crate::error::{Error, Result};
use crate::numgrad::Tensor2;

/// Samples with class labels, per-class attribute vectors and a seen/unseen
/// class partition.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Tensor2,
    labels: Vec<usize>,
    attributes: Tensor2,
    seen: Vec<usize>,
    unseen: Vec<usize>,
    test_idx: Option<Vec<usize>>,
}

impl Dataset {
    /// Validates and assembles a dataset. Class id lists are stored sorted.
    pub fn new(
        features: Tensor2,
        labels: Vec<usize>,
        attributes: Tensor2,
        seen: Vec<usize>,
        unseen: Vec<usize>,
    ) -> Result<Self> {
        let ds = Dataset {
            features,
            labels,
            attributes,
            seen: sorted_unique(seen, "seen")?,
            unseen: sorted_unique(unseen, "unseen")?,
            test_idx: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Attaches a fixed list of held-out seen-class sample indices.
    pub fn with_test_idx(mut self, mut idx: Vec<usize>) -> Result<Self> {
        idx.sort_unstable();
        idx.dedup();
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.num_samples()) {
            return Err(Error::Data(format!("test index {bad} out of range")));
        }
        self.test_idx = Some(idx);
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let n = self.features.rows();
        if n == 0 {
            return Err(Error::Data("dataset has no samples".into()));
        }
        if self.attributes.cols() == 0 {
            return Err(Error::Data("attribute length must be > 0".into()));
        }
        if self.labels.len() != n {
            return Err(Error::Data(format!(
                "{} labels for {} feature rows",
                self.labels.len(),
                n
            )));
        }
        let c = self.attributes.rows();
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= c) {
            return Err(Error::Data(format!("label {bad} has no attribute row (C = {c})")));
        }
        if let Some(&bad) = self.seen.iter().chain(&self.unseen).find(|&&id| id >= c) {
            return Err(Error::Data(format!("split class {bad} has no attribute row (C = {c})")));
        }
        let seen: BTreeSet<_> = self.seen.iter().copied().collect();
        if let Some(&both) = self.unseen.iter().find(|id| seen.contains(id)) {
            return Err(Error::Data(format!("class {both} is both seen and unseen")));
        }
        if let Some(&orphan) = self
            .labels
            .iter()
            .find(|l| !seen.contains(l) && self.unseen.binary_search(l).is_err())
        {
            return Err(Error::Data(format!("label {orphan} is neither seen nor unseen")));
        }
        self.attributes.ensure_finite("attributes")?;
        self.features.ensure_finite("features")?;
        Ok(())
    }

    pub fn features(&self) -> &Tensor2 {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn attributes(&self) -> &Tensor2 {
        &self.attributes
    }

    pub fn seen(&self) -> &[usize] {
        &self.seen
    }

    pub fn unseen(&self) -> &[usize] {
        &self.unseen
    }

    /// Seen ∪ unseen, sorted.
    pub fn all_classes(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.seen.iter().chain(&self.unseen).copied().collect();
        all.sort_unstable();
        all
    }

    pub fn test_idx(&self) -> Option<&[usize]> {
        self.test_idx.as_deref()
    }

    pub fn num_samples(&self) -> usize {
        self.features.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.attributes.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn attr_dim(&self) -> usize {
        self.attributes.cols()
    }

    /// Sample indices whose label is in `classes`, in index order.
    pub fn indices_of(&self, classes: &[usize]) -> Vec<usize> {
        let set: BTreeSet<_> = classes.iter().copied().collect();
        (0..self.num_samples())
            .filter(|&i| set.contains(&self.labels[i]))
            .collect()
    }

    pub fn seen_indices(&self) -> Vec<usize> {
        self.indices_of(&self.seen)
    }

    pub fn unseen_indices(&self) -> Vec<usize> {
        self.indices_of(&self.unseen)
    }

    /// Attribute row of each listed label.
    pub fn attrs_for(&self, labels: &[usize]) -> Tensor2 {
        self.attributes.select_rows(labels)
    }

    pub fn labels_at(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.labels[i]).collect()
    }
}

fn sorted_unique(mut ids: Vec<usize>, what: &str) -> Result<Vec<usize>> {
    ids.sort_unstable();
    let before = ids.len();
    ids.dedup();
    if ids.len() != before {
        return Err(Error::Data(format!("duplicate class id in {what} list")));
    }
    Ok(ids)
}
