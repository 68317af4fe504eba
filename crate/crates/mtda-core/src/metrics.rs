//! Evaluation: per-target accuracies, aggregates, the cosine domain-shift
//! diagnostic, reports, and feature export.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::DomainDataset;
use crate::error::{Error, Result};
use crate::models::{predict_rows, ClassifierNetwork};
use crate::scalar::Scalar;

pub const REPORT_SCHEMA_VERSION: u32 = 1;
const EVAL_CHUNK: usize = 256;

/// Accuracy (percent) of `net` on one labeled evaluation set.
pub fn dataset_accuracy<S: Scalar>(
    net: &ClassifierNetwork<S>,
    eval_set: &DomainDataset<S>,
) -> Result<f64> {
    let labels = eval_set.eval_labels()?;
    let n = eval_set.len();
    let mut correct = 0usize;
    let mut lo = 0;
    while lo < n {
        let hi = (lo + EVAL_CHUNK).min(n);
        let idx: Vec<usize> = (lo..hi).collect();
        let batch = eval_set.gather(&idx);
        let preds = predict_rows(&net.infer_logits(&batch));
        correct += preds
            .iter()
            .zip(&labels[lo..hi])
            .filter(|(p, l)| p == l)
            .count();
        lo = hi;
    }
    Ok(100.0 * correct as f64 / n as f64)
}

/// Accuracy of `net` on each labeled evaluation set, in order.
pub fn per_target_accuracy<S: Scalar>(
    net: &ClassifierNetwork<S>,
    eval_sets: &[DomainDataset<S>],
) -> Result<Vec<f64>> {
    eval_sets.iter().map(|ds| dataset_accuracy(net, ds)).collect()
}

/// Unweighted mean of per-target accuracies.
pub fn equal_weight_accuracy(accs: &[f64]) -> Result<f64> {
    if accs.is_empty() {
        return Err(Error::Argument("no accuracies to average".into()));
    }
    Ok(accs.iter().sum::<f64>() / accs.len() as f64)
}

/// Sample-count-weighted mean: sum_i (N_i / sum_j N_j) * Acc_i.
pub fn weighted_accuracy(accs: &[f64], counts: &[usize]) -> Result<f64> {
    if accs.len() != counts.len() {
        return Err(Error::Argument(format!(
            "{} accuracies vs {} counts",
            accs.len(),
            counts.len()
        )));
    }
    if accs.is_empty() {
        return Err(Error::Argument("no accuracies to average".into()));
    }
    if counts.iter().any(|&c| c == 0) {
        return Err(Error::Argument("sample counts must be positive".into()));
    }
    let total: usize = counts.iter().sum();
    Ok(accs
        .iter()
        .zip(counts)
        .map(|(a, &c)| a * c as f64 / total as f64)
        .sum())
}

/// 1 - cosine similarity between the two feature centroids. Symmetric, in
/// [0, 2], and invariant to positive rescaling of either matrix.
pub fn cosine_domain_shift<S: Scalar>(
    features_source: &Array2<S>,
    features_target: &Array2<S>,
) -> Result<f64> {
    if features_source.is_empty() || features_target.is_empty() {
        return Err(Error::Argument("feature matrices must be non-empty".into()));
    }
    if features_source.shape()[1] != features_target.shape()[1] {
        return Err(Error::Shape(format!(
            "feature dims differ: {} vs {}",
            features_source.shape()[1],
            features_target.shape()[1]
        )));
    }
    let centroid = |m: &Array2<S>| -> Vec<f64> {
        let n = m.shape()[0] as f64;
        m.sum_axis(Axis(0)).iter().map(|v| v.to_f64().unwrap() / n).collect()
    };
    let a = centroid(features_source);
    let b = centroid(features_target);
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Undefined("zero-norm feature centroid".into()));
    }
    Ok(1.0 - dot / (na * nb))
}

/// One per-target row of a report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetMetrics {
    pub domain_id: String,
    pub accuracy: f64,
    pub sample_count: usize,
}

/// Run provenance attached to every report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetadata {
    pub seed: u64,
    pub unix_timestamp: u64,
    /// Echo of the resolved training configuration (JSON).
    pub config_echo: serde_json::Value,
}

/// Final evaluation document. `equal_weight` is the unweighted mean of the
/// per-target accuracies; `weighted` weights them by sample counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub per_target: Vec<TargetMetrics>,
    pub equal_weight: f64,
    pub weighted: f64,
    pub source_accuracy: Option<f64>,
    /// Accuracy of the teacher assigned to target i, on target i (present
    /// when teachers align one-to-one with the evaluation sets).
    pub teacher_accuracies: Option<Vec<f64>>,
    pub run_metadata: RunMetadata,
}

impl MetricsReport {
    /// Evaluate `student` (and optionally aligned teachers) on labeled
    /// evaluation sets and assemble the report.
    pub fn build<S: Scalar>(
        student: &ClassifierNetwork<S>,
        teachers: &[&ClassifierNetwork<S>],
        eval_sets: &[DomainDataset<S>],
        source_eval: Option<&DomainDataset<S>>,
        seed: u64,
        config_echo: serde_json::Value,
    ) -> Result<Self> {
        if eval_sets.is_empty() {
            return Err(Error::Argument("no evaluation sets".into()));
        }
        let accs = per_target_accuracy(student, eval_sets)?;
        let counts: Vec<usize> = eval_sets.iter().map(|d| d.len()).collect();
        let per_target = eval_sets
            .iter()
            .zip(&accs)
            .map(|(d, &a)| TargetMetrics {
                domain_id: d.domain_id().to_string(),
                accuracy: a,
                sample_count: d.len(),
            })
            .collect();
        let teacher_accuracies = if teachers.len() == eval_sets.len() && !teachers.is_empty() {
            Some(
                teachers
                    .iter()
                    .zip(eval_sets)
                    .map(|(t, d)| dataset_accuracy(t, d))
                    .collect::<Result<Vec<f64>>>()?,
            )
        } else {
            None
        };
        let source_accuracy = match source_eval {
            Some(ds) => Some(dataset_accuracy(student, ds)?),
            None => None,
        };
        Ok(Self {
            schema_version: REPORT_SCHEMA_VERSION,
            equal_weight: equal_weight_accuracy(&accs)?,
            weighted: weighted_accuracy(&accs, &counts)?,
            per_target,
            source_accuracy,
            teacher_accuracies,
            run_metadata: RunMetadata {
                seed,
                unix_timestamp: std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
                config_echo,
            },
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: Self = serde_json::from_str(text)?;
        if report.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::Incompatible(format!(
                "report schema version {} (supported: {REPORT_SCHEMA_VERSION})",
                report.schema_version
            )));
        }
        Ok(report)
    }
}

/// Write one row per sample: domain_id, label (empty when absent), then the
/// feature values, full round-trip precision, comma-delimited with a header.
pub fn export_features<S: Scalar>(
    net: &ClassifierNetwork<S>,
    dataset: &DomainDataset<S>,
    path: &Path,
) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Argument("dataset is empty".into()));
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let dim = net.feature_dim();
    write!(out, "domain_id,label")?;
    for j in 0..dim {
        write!(out, ",f{j}")?;
    }
    writeln!(out)?;

    let labels = dataset.eval_labels().ok();
    let n = dataset.len();
    let mut lo = 0;
    while lo < n {
        let hi = (lo + EVAL_CHUNK).min(n);
        let idx: Vec<usize> = (lo..hi).collect();
        let feats = net.infer_features(&dataset.gather(&idx));
        for (row, i) in (lo..hi).enumerate() {
            write!(out, "{}", dataset.domain_id())?;
            match labels {
                Some(l) => write!(out, ",{}", l[i])?,
                None => write!(out, ",")?,
            }
            for j in 0..dim {
                write!(out, ",{}", feats[[row, j]].to_f64().unwrap())?;
            }
            writeln!(out)?;
        }
        lo = hi;
    }
    Ok(())
}
