//! Per-epoch batch iteration over one source and many target streams.

use ndarray::Array4;

use crate::error::{Error, Result};
use crate::rng::{permutation, stream_rng, Stream};
use crate::scalar::Scalar;

use super::DomainDataset;

/// Batch-iteration parameters. The epoch length is defined by the source:
/// targets cycle (with per-cycle reshuffles) until the source is exhausted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub epoch_length: usize,
    pub seed: u64,
}

impl BatchPlan {
    pub fn new(batch_size: usize, source_len: usize, seed: u64) -> Result<Self> {
        if batch_size < 2 {
            return Err(Error::Argument(format!("batch_size {batch_size} < 2")));
        }
        if source_len == 0 {
            return Err(Error::Argument("source dataset is empty".into()));
        }
        Ok(Self {
            batch_size,
            epoch_length: source_len.div_ceil(batch_size),
            seed,
        })
    }
}

/// A labeled source mini-batch.
pub struct SourceBatch<S> {
    pub images: Array4<S>,
    pub labels: Vec<u32>,
}

struct CycledStream {
    len: usize,
    target: usize,
    seed: u64,
    epoch: u64,
    perm: Vec<usize>,
    pos: usize,
    cycle: u64,
}

impl CycledStream {
    fn new(len: usize, target: usize, seed: u64, epoch: u64) -> Self {
        let mut s = Self { len, target, seed, epoch, perm: Vec::new(), pos: 0, cycle: 0 };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        let mut rng = stream_rng(
            self.seed,
            self.epoch,
            Stream::TargetShuffle { target: self.target, cycle: self.cycle },
        );
        self.perm = permutation(&mut rng, self.len);
        self.pos = 0;
    }

    fn take(&mut self, count: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            if self.pos == self.len {
                self.cycle += 1;
                self.reshuffle();
            }
            out.push(self.perm[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Iterator over one epoch of aligned (source, per-target) batches.
pub struct EpochBatches<'a, S> {
    source: &'a DomainDataset<S>,
    targets: Vec<&'a DomainDataset<S>>,
    plan: BatchPlan,
    source_order: Vec<usize>,
    target_streams: Vec<CycledStream>,
    next_batch: usize,
}

impl<'a, S: Scalar> Iterator for EpochBatches<'a, S> {
    type Item = (SourceBatch<S>, Vec<Array4<S>>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.next_batch >= self.plan.epoch_length {
            return None;
        }
        let b = self.plan.batch_size;
        let lo = self.next_batch * b;
        let hi = (lo + b).min(self.source.len());
        let src_idx = &self.source_order[lo..hi];
        let source = SourceBatch {
            images: self.source.gather(src_idx),
            labels: self
                .source
                .gather_training_labels(src_idx)
                .expect("source carries training labels"),
        };
        let target_batches = self
            .target_streams
            .iter_mut()
            .zip(&self.targets)
            .map(|(stream, ds)| ds.gather(&stream.take(b)))
            .collect();
        self.next_batch += 1;
        Some((source, target_batches))
    }
}

/// Build the aligned batch iterator for one epoch.
///
/// Yields exactly `plan.epoch_length` tuples. The source is shuffled once
/// per epoch; each target stream is shuffled independently and cycled with
/// a fresh shuffle per cycle, so target batches always hold `batch_size`
/// samples. The i-th entry of every target list lines up with teacher i.
pub fn epoch_batches<'a, S: Scalar>(
    source: &'a DomainDataset<S>,
    targets: &'a [DomainDataset<S>],
    plan: BatchPlan,
    epoch: u64,
) -> Result<EpochBatches<'a, S>> {
    source.training_labels()?;
    if targets.iter().any(|t| t.is_empty()) {
        return Err(Error::Argument("all target datasets must be non-empty".into()));
    }
    let mut rng = stream_rng(plan.seed, epoch, Stream::SourceShuffle);
    let source_order = permutation(&mut rng, source.len());
    let target_streams = targets
        .iter()
        .enumerate()
        .map(|(i, t)| CycledStream::new(t.len(), i, plan.seed, epoch))
        .collect();
    Ok(EpochBatches {
        source,
        targets: targets.iter().collect(),
        plan,
        source_order,
        target_streams,
        next_batch: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    fn source(n: usize) -> DomainDataset<f64> {
        let mut images = Array4::<f64>::zeros((n, 1, 2, 2));
        for i in 0..n {
            images[[i, 0, 0, 0]] = i as f64 / 1000.0;
        }
        DomainDataset::labeled(images, (0..n as u32).map(|i| i % 3).collect(), "s", 3).unwrap()
    }

    fn target(n: usize, id: &str) -> DomainDataset<f64> {
        let mut images = Array4::<f64>::zeros((n, 1, 2, 2));
        for i in 0..n {
            images[[i, 0, 0, 1]] = i as f64 / 1000.0;
        }
        DomainDataset::unlabeled(images, id).unwrap()
    }

    #[test]
    fn epoch_length_is_ceil_of_source_over_batch() {
        let s = source(100);
        let ts = [target(40, "a")];
        let plan = BatchPlan::new(16, s.len(), 0).unwrap();
        assert_eq!(plan.epoch_length, 7);
        let tuples: Vec<_> = epoch_batches(&s, &ts, plan, 0).unwrap().collect();
        assert_eq!(tuples.len(), 7);
        // last source batch is the remainder, target batches stay full-size
        assert_eq!(tuples[6].0.images.shape()[0], 4);
        assert_eq!(tuples[6].1[0].shape()[0], 16);
    }

    #[test]
    fn short_target_cycles_with_reshuffle() {
        let s = source(100);
        let ts = [target(10, "a")];
        let plan = BatchPlan::new(16, s.len(), 3).unwrap();
        let mut counts = vec![0usize; 10];
        for (_, tb) in epoch_batches(&s, &ts, plan, 0).unwrap() {
            for row in 0..tb[0].shape()[0] {
                let fp = (tb[0][[row, 0, 0, 1]] * 1000.0).round() as usize;
                counts[fp] += 1;
            }
        }
        // 112 draws over 10 samples: each appears 11 or 12 times
        assert_eq!(counts.iter().sum::<usize>(), 112);
        assert!(counts.iter().all(|&c| c == 11 || c == 12), "{counts:?}");
    }

    #[test]
    fn same_seed_and_epoch_reproduce_identical_sequences() {
        let s = source(30);
        let ts = [target(7, "a"), target(50, "b")];
        let plan = BatchPlan::new(8, s.len(), 5).unwrap();
        let a: Vec<_> = epoch_batches(&s, &ts, plan, 2).unwrap().collect();
        let b: Vec<_> = epoch_batches(&s, &ts, plan, 2).unwrap().collect();
        for ((sa, ta), (sb, tb)) in a.iter().zip(&b) {
            assert_eq!(sa.images, sb.images);
            assert_eq!(sa.labels, sb.labels);
            assert_eq!(ta, tb);
        }
        // different epoch shuffles differently
        let c: Vec<_> = epoch_batches(&s, &ts, plan, 3).unwrap().collect();
        assert!(a.iter().zip(&c).any(|((sa, _), (sc, _))| sa.images != sc.images));
    }

    #[test]
    fn source_epoch_covers_every_sample_once() {
        let s = source(30);
        let ts = [target(5, "a")];
        let plan = BatchPlan::new(8, s.len(), 1).unwrap();
        let mut seen = vec![0usize; 30];
        for (sb, _) in epoch_batches(&s, &ts, plan, 0).unwrap() {
            for row in 0..sb.images.shape()[0] {
                let fp = (sb.images[[row, 0, 0, 0]] * 1000.0).round() as usize;
                seen[fp] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }
}
