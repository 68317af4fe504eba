//! Datasets: loading, synthesis, domain shifts, splits, and batching.
//!
//! A [`DomainDataset`] is an immutable set of equally-shaped images tagged
//! with a domain identity. Labels come in two flavors: training labels
//! (source role) and evaluation-only labels (held-out target ground truth
//! that the training path must never read).

mod batch;
mod idx;
mod split;
mod store;
mod synth;

pub use batch::{epoch_batches, BatchPlan, EpochBatches, SourceBatch};
pub use idx::load_idx_dataset;
pub use split::{concat_targets, split_mixed_targets, train_eval_split};
pub use store::{load_dataset, save_dataset, DatasetMeta};
pub use synth::{generate_shifted_domain, synthesize_digits, DomainShiftSpec, TransformKind};

use ndarray::{Array4, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// How labels attached to a dataset may be used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelUse {
    /// No labels at all (unlabeled target).
    None,
    /// Labels readable by the training path (source role).
    Train,
    /// Held-out ground truth, readable by evaluation code only.
    EvalOnly,
}

/// An immutable image dataset bound to one domain.
#[derive(Debug, Clone)]
pub struct DomainDataset<S> {
    images: Array4<S>, // (N, C, H, W), values in [0, 1]
    labels: Option<Vec<u32>>,
    label_use: LabelUse,
    domain_id: String,
    num_classes: usize,
}

impl<S: Scalar> DomainDataset<S> {
    /// Source-role dataset: labels are visible to training code.
    pub fn labeled(
        images: Array4<S>,
        labels: Vec<u32>,
        domain_id: impl Into<String>,
        num_classes: usize,
    ) -> Result<Self> {
        Self::build(images, Some(labels), LabelUse::Train, domain_id.into(), num_classes)
    }

    /// Target-role dataset without any labels.
    pub fn unlabeled(images: Array4<S>, domain_id: impl Into<String>) -> Result<Self> {
        Self::build(images, None, LabelUse::None, domain_id.into(), 0)
    }

    /// Target-role dataset whose labels exist for evaluation only.
    pub fn with_eval_labels(
        images: Array4<S>,
        labels: Vec<u32>,
        domain_id: impl Into<String>,
        num_classes: usize,
    ) -> Result<Self> {
        Self::build(images, Some(labels), LabelUse::EvalOnly, domain_id.into(), num_classes)
    }

    fn build(
        images: Array4<S>,
        labels: Option<Vec<u32>>,
        label_use: LabelUse,
        domain_id: String,
        num_classes: usize,
    ) -> Result<Self> {
        let n = images.len_of(Axis(0));
        if n == 0 {
            return Err(Error::Argument(format!("dataset '{domain_id}' is empty")));
        }
        if let Some(ref l) = labels {
            if l.len() != n {
                return Err(Error::Consistency(format!(
                    "dataset '{domain_id}': {} labels for {} images",
                    l.len(),
                    n
                )));
            }
            if let Some(&bad) = l.iter().find(|&&c| c as usize >= num_classes) {
                return Err(Error::Consistency(format!(
                    "dataset '{domain_id}': label {bad} outside [0, {num_classes})"
                )));
            }
        }
        let zero = S::zero();
        let one = S::one();
        if images.iter().any(|&v| !(v >= zero && v <= one)) {
            return Err(Error::Argument(format!(
                "dataset '{domain_id}': pixel values must lie in [0, 1]"
            )));
        }
        Ok(Self { images, labels, label_use, domain_id, num_classes })
    }

    pub fn len(&self) -> usize {
        self.images.len_of(Axis(0))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// (channels, height, width) of every sample.
    pub fn sample_shape(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    pub fn domain_id(&self) -> &str {
        &self.domain_id
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn label_use(&self) -> LabelUse {
        self.label_use
    }

    pub fn images(&self) -> &Array4<S> {
        &self.images
    }

    pub fn sample(&self, index: usize) -> ArrayView3<'_, S> {
        self.images.index_axis(Axis(0), index)
    }

    /// Labels for the training path. Fails on unlabeled data and on
    /// evaluation-only labels: targets must stay unlabeled during training.
    pub fn training_labels(&self) -> Result<&[u32]> {
        match self.label_use {
            LabelUse::Train => Ok(self.labels.as_deref().expect("label_use Train implies labels")),
            LabelUse::EvalOnly => Err(Error::LabelLeakage(format!(
                "dataset '{}' carries evaluation-only labels",
                self.domain_id
            ))),
            LabelUse::None => Err(Error::LabelLeakage(format!(
                "dataset '{}' has no labels",
                self.domain_id
            ))),
        }
    }

    /// Labels for evaluation code (accuracy computation). Works for both
    /// training labels and held-out evaluation labels.
    pub fn eval_labels(&self) -> Result<&[u32]> {
        self.labels.as_deref().ok_or_else(|| {
            Error::Argument(format!("dataset '{}' has no labels to evaluate against", self.domain_id))
        })
    }

    /// Gather a batch of images by index.
    pub fn gather(&self, indices: &[usize]) -> Array4<S> {
        let (c, h, w) = self.sample_shape();
        let mut out = Array4::zeros((indices.len(), c, h, w));
        for (row, &i) in indices.iter().enumerate() {
            out.index_axis_mut(Axis(0), row).assign(&self.images.index_axis(Axis(0), i));
        }
        out
    }

    /// Gather training labels by index; same access rules as [`Self::training_labels`].
    pub fn gather_training_labels(&self, indices: &[usize]) -> Result<Vec<u32>> {
        let labels = self.training_labels()?;
        Ok(indices.iter().map(|&i| labels[i]).collect())
    }

    pub(crate) fn parts(&self) -> (&Array4<S>, Option<&Vec<u32>>, LabelUse) {
        (&self.images, self.labels.as_ref(), self.label_use)
    }

    pub(crate) fn from_parts(
        images: Array4<S>,
        labels: Option<Vec<u32>>,
        label_use: LabelUse,
        domain_id: String,
        num_classes: usize,
    ) -> Result<Self> {
        Self::build(images, labels, label_use, domain_id, num_classes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    fn images(n: usize) -> Array4<f64> {
        Array4::from_elem((n, 1, 4, 4), 0.5)
    }

    #[test]
    fn label_count_mismatch_is_consistency_error() {
        let err = DomainDataset::labeled(images(3), vec![0, 1], "d", 2).unwrap_err();
        assert!(matches!(err, Error::Consistency(_)));
    }

    #[test]
    fn out_of_range_label_rejected() {
        let err = DomainDataset::labeled(images(2), vec![0, 5], "d", 3).unwrap_err();
        assert!(matches!(err, Error::Consistency(_)));
    }

    #[test]
    fn training_path_cannot_read_eval_only_labels() {
        let ds = DomainDataset::with_eval_labels(images(2), vec![0, 1], "t", 2).unwrap();
        assert!(matches!(ds.training_labels(), Err(Error::LabelLeakage(_))));
        assert_eq!(ds.eval_labels().unwrap(), &[0, 1]);
    }

    #[test]
    fn unlabeled_has_no_labels_on_either_path() {
        let ds = DomainDataset::unlabeled(images(2), "t").unwrap();
        assert!(matches!(ds.training_labels(), Err(Error::LabelLeakage(_))));
        assert!(matches!(ds.eval_labels(), Err(Error::Argument(_))));
    }

    #[test]
    fn pixels_outside_unit_interval_rejected() {
        let mut im = images(1);
        im[[0, 0, 0, 0]] = 1.5;
        assert!(DomainDataset::unlabeled(im, "d").is_err());
    }
}
