//! Pooling, partitioning, and train/eval splitting of datasets.

use ndarray::{Array4, Axis};

use crate::error::{Error, Result};
use crate::rng::{permutation, stream_rng, Stream};
use crate::scalar::Scalar;

use super::DomainDataset;

fn check_shapes<S: Scalar>(targets: &[DomainDataset<S>]) -> Result<(usize, usize, usize)> {
    let shape = targets[0].sample_shape();
    for t in targets {
        if t.sample_shape() != shape {
            return Err(Error::Consistency(format!(
                "sample shape mismatch: '{}' has {:?}, '{}' has {:?}",
                targets[0].domain_id(),
                shape,
                t.domain_id(),
                t.sample_shape()
            )));
        }
    }
    Ok(shape)
}

fn pool<S: Scalar>(targets: &[DomainDataset<S>]) -> Result<(Array4<S>, Option<Vec<u32>>, usize)> {
    let (c, h, w) = check_shapes(targets)?;
    let total: usize = targets.iter().map(|t| t.len()).sum();
    let mut images = Array4::<S>::zeros((total, c, h, w));
    let all_labeled = targets.iter().all(|t| t.parts().1.is_some());
    let mut labels = if all_labeled { Some(Vec::with_capacity(total)) } else { None };
    let mut row = 0;
    for t in targets {
        for i in 0..t.len() {
            images.index_axis_mut(Axis(0), row).assign(&t.sample(i));
            row += 1;
        }
        if let (Some(acc), Some(l)) = (labels.as_mut(), t.parts().1) {
            acc.extend_from_slice(l);
        }
    }
    let num_classes = targets.iter().map(|t| t.num_classes()).max().unwrap_or(0);
    Ok((images, labels, num_classes))
}

/// Pool all target samples, ignore domain identities, and partition the pool
/// into `k` pseudo-targets of near-equal size (sizes differ by at most one,
/// remainder going to the lowest-index subsets). Deterministic per seed.
pub fn split_mixed_targets<S: Scalar>(
    targets: &[DomainDataset<S>],
    k: usize,
    seed: u64,
) -> Result<Vec<DomainDataset<S>>> {
    if targets.is_empty() {
        return Err(Error::Argument("no targets to pool".into()));
    }
    if k < 1 {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    let (images, labels, num_classes) = pool(targets)?;
    let total = images.len_of(Axis(0));
    if k > total {
        return Err(Error::Argument(format!(
            "cannot split {total} pooled samples into {k} subsets"
        )));
    }
    let mut rng = stream_rng(seed, 0, Stream::MixedSplit);
    let order = permutation(&mut rng, total);

    let base = total / k;
    let rem = total % k;
    let mut out = Vec::with_capacity(k);
    let mut cursor = 0;
    let (c, h, w) = (images.shape()[1], images.shape()[2], images.shape()[3]);
    for j in 0..k {
        let size = base + usize::from(j < rem);
        let idx = &order[cursor..cursor + size];
        cursor += size;
        let mut sub = Array4::<S>::zeros((size, c, h, w));
        for (row, &i) in idx.iter().enumerate() {
            sub.index_axis_mut(Axis(0), row).assign(&images.index_axis(Axis(0), i));
        }
        let sub_labels = labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect());
        let ds = match sub_labels {
            Some(sl) => {
                DomainDataset::with_eval_labels(sub, sl, format!("mixed-{j}"), num_classes)?
            }
            None => DomainDataset::unlabeled(sub, format!("mixed-{j}"))?,
        };
        out.push(ds);
    }
    Ok(out)
}

/// Concatenate all targets into a single pseudo-target, preserving the
/// listing order. Labels survive only when every input has them, and stay
/// evaluation-only.
pub fn concat_targets<S: Scalar>(targets: &[DomainDataset<S>]) -> Result<DomainDataset<S>> {
    if targets.is_empty() {
        return Err(Error::Argument("no targets to merge".into()));
    }
    let (images, labels, num_classes) = pool(targets)?;
    match labels {
        Some(l) => DomainDataset::with_eval_labels(images, l, "merged", num_classes),
        None => DomainDataset::unlabeled(images, "merged"),
    }
}

/// Deterministic 90/10-style split into (train, eval) parts.
///
/// `eval_fraction` of the samples (at least one) are held out by a seeded
/// permutation; both halves keep the parent's label semantics.
pub fn train_eval_split<S: Scalar>(
    ds: &DomainDataset<S>,
    eval_fraction: f64,
    seed: u64,
) -> Result<(DomainDataset<S>, DomainDataset<S>)> {
    if !(0.0..1.0).contains(&eval_fraction) || eval_fraction <= 0.0 {
        return Err(Error::Argument(format!(
            "eval_fraction {eval_fraction} outside (0, 1)"
        )));
    }
    let n = ds.len();
    let n_eval = ((n as f64 * eval_fraction).round() as usize).clamp(1, n - 1);
    let mut rng = stream_rng(seed, 0, Stream::TrainEvalSplit);
    let order = permutation(&mut rng, n);
    let (eval_idx, train_idx) = order.split_at(n_eval);

    let take = |idx: &[usize], suffix: &str| -> Result<DomainDataset<S>> {
        let images = ds.gather(idx);
        let (_, labels, label_use) = ds.parts();
        let sub_labels = labels.map(|l| idx.iter().map(|&i| l[i]).collect::<Vec<u32>>());
        DomainDataset::from_parts(
            images,
            sub_labels,
            label_use,
            format!("{}/{suffix}", ds.domain_id()),
            ds.num_classes(),
        )
    };
    Ok((take(train_idx, "train")?, take(eval_idx, "eval")?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthesize_digits, LabelUse};
    use std::collections::HashMap;

    fn targets(sizes: &[usize]) -> Vec<DomainDataset<f64>> {
        sizes
            .iter()
            .enumerate()
            .filter(|(_, &n)| n > 0)
            .map(|(j, &n)| {
                let mut images = Array4::<f64>::zeros((n, 1, 4, 4));
                for i in 0..n {
                    // unique fingerprint per sample for multiset checks
                    images[[i, 0, 0, 0]] = (j as f64 * 1000.0 + i as f64) / 10000.0;
                }
                DomainDataset::unlabeled(images, format!("t{j}")).unwrap()
            })
            .collect()
    }

    fn fingerprints(ds: &DomainDataset<f64>) -> Vec<u64> {
        (0..ds.len()).map(|i| ds.images()[[i, 0, 0, 0]].to_bits()).collect()
    }

    #[test]
    fn exact_division_gives_equal_sizes() {
        let out = split_mixed_targets(&targets(&[4, 5]), 3, 1).unwrap();
        let sizes: Vec<usize> = out.iter().map(|d| d.len()).collect();
        assert_eq!(sizes, vec![3, 3, 3]);
    }

    #[test]
    fn remainder_goes_to_lowest_index_subsets() {
        let out = split_mixed_targets(&targets(&[6, 4]), 3, 1).unwrap();
        let sizes: Vec<usize> = out.iter().map(|d| d.len()).collect();
        assert_eq!(sizes, vec![4, 3, 3]);
        assert_eq!(out[0].domain_id(), "mixed-0");
        assert_eq!(out[2].domain_id(), "mixed-2");
    }

    #[test]
    fn partition_is_disjoint_cover_for_many_pool_sizes() {
        for total in 1..=50usize {
            for k in 1..=10usize.min(total) {
                let ts = targets(&[total / 2, total - total / 2]);
                let out = split_mixed_targets(&ts, k, 77).unwrap();
                let mut seen: HashMap<u64, usize> = HashMap::new();
                for sub in &out {
                    for fp in fingerprints(sub) {
                        *seen.entry(fp).or_insert(0) += 1;
                    }
                }
                let mut expect: HashMap<u64, usize> = HashMap::new();
                for t in &ts {
                    for fp in fingerprints(t) {
                        *expect.entry(fp).or_insert(0) += 1;
                    }
                }
                assert_eq!(seen, expect, "total={total} k={k}");
                let sizes: Vec<usize> = out.iter().map(|d| d.len()).collect();
                let spread = sizes.iter().max().unwrap() - sizes.iter().min().unwrap();
                assert!(spread <= 1, "total={total} k={k} sizes={sizes:?}");
            }
        }
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        let ts = targets(&[7, 6]);
        let a = split_mixed_targets(&ts, 4, 5).unwrap();
        let b = split_mixed_targets(&ts, 4, 5).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.images(), y.images());
        }
        let c = split_mixed_targets(&ts, 4, 6).unwrap();
        assert!(a.iter().zip(&c).any(|(x, y)| x.images() != y.images()));
    }

    #[test]
    fn oversized_k_is_argument_error() {
        let ts = targets(&[2, 1]);
        assert!(matches!(
            split_mixed_targets(&ts, 4, 0),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn concat_preserves_order_and_total() {
        let ts = targets(&[3, 2]);
        let merged = concat_targets(&ts).unwrap();
        assert_eq!(merged.len(), 5);
        assert_eq!(merged.domain_id(), "merged");
        let mut expect = fingerprints(&ts[0]);
        expect.extend(fingerprints(&ts[1]));
        assert_eq!(fingerprints(&merged), expect);
    }

    #[test]
    fn train_eval_split_is_disjoint_and_labeled_consistently() {
        let ds = synthesize_digits::<f64>(5, 16, 3).unwrap();
        let (train, eval) = train_eval_split(&ds, 0.1, 11).unwrap();
        assert_eq!(train.len() + eval.len(), ds.len());
        assert_eq!(eval.len(), 5);
        assert_eq!(train.label_use(), LabelUse::Train);
        // determinism
        let (train2, _) = train_eval_split(&ds, 0.1, 11).unwrap();
        assert_eq!(train.images(), train2.images());
    }
}
