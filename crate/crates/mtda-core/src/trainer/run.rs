//! The alternating multi-teacher training loop and its baseline modes.
//!
//! Per batch tuple and teacher i, the alternating loop takes three optimizer
//! steps: (1) the teacher and its domain classifier descend the
//! (1-beta)-scaled adaptation loss; (2) the student descends the beta-scaled
//! source distillation loss; (3) the student and its domain classifier
//! descend the beta-scaled target distillation loss. Fusion baselines keep
//! step (1) identical and replace (2)/(3) with distillation against the
//! summed or averaged logits of all teachers.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{concat_targets, epoch_batches, split_mixed_targets, BatchPlan, DomainDataset};
use crate::error::{Error, Result};
use crate::losses::{
    combined_teacher_objective, cross_entropy_with_grad, kd_source_step,
    kd_source_step_distilling, kd_source_step_from_logits, kd_target_step,
    kd_target_step_distilling, kd_target_step_from_logits, teacher_da_step,
};
use crate::metrics::{dataset_accuracy, per_target_accuracy};
use crate::models::{
    build_backbone, channel_stats, ClassifierNetwork, DomainClassifier, Preset,
};
use crate::optim::SgdMomentum;
use crate::rng::{derive_seed, Stream};
use crate::scalar::Scalar;
use crate::schedule::BetaSchedule;

use super::config::{BetaGranularity, Mode, TrainConfig};
use super::sink::{RunSink, StepRecord};

/// Divergence guard: abort when any loss exceeds this or goes non-finite.
pub const DIVERGENCE_CAP: f64 = 1e6;

/// One teacher with its domain classifier and optimizer.
pub struct TeacherUnit<S> {
    pub net: ClassifierNetwork<S>,
    pub dclf: DomainClassifier<S>,
    pub opt: SgdMomentum<S>,
}

/// The student, its shared domain classifier, and their optimizers.
pub struct StudentUnit<S> {
    pub net: ClassifierNetwork<S>,
    pub dclf: DomainClassifier<S>,
    pub opt_net: SgdMomentum<S>,
    pub opt_dclf: SgdMomentum<S>,
}

/// Optimizer-step bookkeeping, split by step kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepCounters {
    pub da: u64,
    pub kd_source: u64,
    pub kd_target: u64,
    pub supervised: u64,
}

/// Per-epoch evaluation snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSnapshot {
    pub epoch: u32,
    pub beta: f64,
    /// Student accuracy on each evaluation set, in the given order.
    pub student_target_acc: Vec<f64>,
    /// Accuracy of the teacher assigned to evaluation set i, when teachers
    /// align one-to-one with the evaluation sets.
    pub teacher_acc: Option<Vec<f64>>,
    pub source_acc: Option<f64>,
    /// Mean combined objective over the epoch's batch tuples.
    pub mean_total: f64,
}

/// Mutable run state: every network, optimizer, counter, and snapshot.
pub struct RunState<S> {
    pub config: TrainConfig,
    pub teachers: Vec<TeacherUnit<S>>,
    pub student: StudentUnit<S>,
    pub next_epoch: u32,
    pub step: u64,
    pub counters: StepCounters,
    pub history: Vec<EpochSnapshot>,
}

impl<S: Scalar> RunState<S> {
    /// Bit-level checksum over every parameter of every network.
    pub fn checksum(&self) -> u64 {
        let mut h = crate::scalar::FNV_OFFSET;
        let mut fold = |v: u64| {
            crate::scalar::fold_bits(&mut h, &[f64::from_bits(v)]);
        };
        fold(self.student.net.checksum());
        fold(self.student.dclf.checksum());
        for t in &self.teachers {
            fold(t.net.checksum());
            fold(t.dclf.checksum());
        }
        h
    }
}

fn guard(value: f64, step: u64, teacher: usize, kind: &str) -> Result<()> {
    if !value.is_finite() || value > DIVERGENCE_CAP {
        return Err(Error::Diverged { step, teacher, kind: kind.to_string(), value });
    }
    Ok(())
}

/// A fully resolved training job: configuration plus data, with pooled or
/// permuted pseudo-targets already materialized.
pub struct TrainJob<'a, S: Scalar> {
    config: TrainConfig,
    source_train: &'a DomainDataset<S>,
    resolved_targets: Vec<DomainDataset<S>>,
    eval_targets: &'a [DomainDataset<S>],
    source_eval: Option<&'a DomainDataset<S>>,
    /// teacher j evaluates against eval set teacher_eval_map[j]
    teacher_eval_map: Option<Vec<usize>>,
    schedule: BetaSchedule,
    plan: BatchPlan,
    norm_mean: Vec<f64>,
    norm_std: Vec<f64>,
}

impl<'a, S: Scalar> TrainJob<'a, S> {
    pub fn new(
        config: TrainConfig,
        source_train: &'a DomainDataset<S>,
        targets: &'a [DomainDataset<S>],
        eval_targets: &'a [DomainDataset<S>],
        source_eval: Option<&'a DomainDataset<S>>,
    ) -> Result<Self> {
        config.validate(targets.len())?;
        source_train.training_labels()?;
        if config.distill_updates_teacher
            && matches!(config.mode, Mode::FusionSum | Mode::FusionMean)
        {
            return Err(Error::Config(
                "distill_updates_teacher is undefined for fused distillation".into(),
            ));
        }

        let order: Vec<usize> = config
            .target_order
            .clone()
            .unwrap_or_else(|| (0..targets.len()).collect());
        let ordered: Vec<DomainDataset<S>> = order.iter().map(|&i| targets[i].clone()).collect();

        let (resolved_targets, teacher_eval_map) = match config.mode {
            Mode::MtMtda | Mode::FusionSum | Mode::FusionMean => {
                let map = (eval_targets.len() == targets.len()).then(|| order.clone());
                (ordered, map)
            }
            Mode::MtMtdaMixed => {
                let k = config.k_splits.expect("validated");
                let resolved = split_mixed_targets(&ordered, k, config.seed)?;
                let map = (eval_targets.len() == resolved.len())
                    .then(|| (0..resolved.len()).collect());
                (resolved, map)
            }
            Mode::SingleTeacherMixed => {
                let merged = concat_targets(&ordered)?;
                let map = (eval_targets.len() == 1).then(|| vec![0]);
                (vec![merged], map)
            }
            Mode::SourceOnly => (Vec::new(), None),
        };

        let schedule = config.schedule()?;
        let plan = BatchPlan::new(config.batch_size, source_train.len(), config.seed)?;
        let (norm_mean, norm_std) = channel_stats(source_train.images());

        Ok(Self {
            config,
            source_train,
            resolved_targets,
            eval_targets,
            source_eval,
            teacher_eval_map,
            schedule,
            plan,
            norm_mean,
            norm_std,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn resolved_targets(&self) -> &[DomainDataset<S>] {
        &self.resolved_targets
    }

    /// Fresh networks and optimizers, deterministic per config seed.
    pub fn init_state(&self) -> Result<RunState<S>> {
        let cfg = &self.config;
        let shape = self.source_train.sample_shape();
        let classes = self.source_train.num_classes();
        let lambda = S::from_f64c(cfg.grl_lambda);

        let build_unit = |net_idx: usize, preset: Preset| -> Result<(ClassifierNetwork<S>, DomainClassifier<S>)> {
            let net_seed = derive_seed(cfg.seed, 0, Stream::NetworkInit { network: 2 * net_idx });
            let dclf_seed =
                derive_seed(cfg.seed, 0, Stream::NetworkInit { network: 2 * net_idx + 1 });
            let mut net = build_backbone::<S>(preset, shape, classes, net_seed)?;
            net.set_normalizer(&self.norm_mean, &self.norm_std)?;
            let dclf = DomainClassifier::new(net.feature_dim(), lambda, dclf_seed)?;
            Ok((net, dclf))
        };

        let (student_net, student_dclf) = build_unit(0, Preset::StudentCompact)?;
        let student = StudentUnit {
            net: student_net,
            dclf: student_dclf,
            opt_net: SgdMomentum::new(cfg.kd_learning_rate, cfg.momentum, cfg.weight_decay)?,
            opt_dclf: SgdMomentum::new(cfg.kd_learning_rate, cfg.momentum, cfg.weight_decay)?,
        };

        let mut teachers = Vec::with_capacity(self.resolved_targets.len());
        for i in 0..self.resolved_targets.len() {
            let (net, dclf) = build_unit(1 + i, Preset::TeacherWide)?;
            teachers.push(TeacherUnit {
                net,
                dclf,
                opt: SgdMomentum::new(cfg.uda_learning_rate, cfg.momentum, cfg.weight_decay)?,
            });
        }

        Ok(RunState {
            config: cfg.clone(),
            teachers,
            student,
            next_epoch: 0,
            step: 0,
            counters: StepCounters::default(),
            history: Vec::new(),
        })
    }

    /// Run epochs `state.next_epoch .. until_epoch`.
    pub fn run(
        &self,
        state: &mut RunState<S>,
        until_epoch: u32,
        sink: &mut dyn RunSink,
    ) -> Result<()> {
        if state.config != self.config {
            return Err(Error::Incompatible(
                "run state was produced under a different configuration".into(),
            ));
        }
        let until = until_epoch.min(self.config.epochs);
        while state.next_epoch < until {
            let epoch = state.next_epoch;
            let mean_total = match self.config.mode {
                Mode::SourceOnly => self.epoch_source_only(state, epoch, sink)?,
                Mode::FusionSum | Mode::FusionMean => self.epoch_fusion(state, epoch, sink)?,
                _ => self.epoch_alternating(state, epoch, sink)?,
            };
            let snapshot = self.evaluate_epoch(state, epoch, mean_total)?;
            sink.on_epoch(&snapshot);
            state.history.push(snapshot);
            state.next_epoch = epoch + 1;
        }
        Ok(())
    }

    /// Convenience: init + run to the configured epoch count.
    pub fn train(&self, sink: &mut dyn RunSink) -> Result<RunState<S>> {
        let mut state = self.init_state()?;
        self.run(&mut state, self.config.epochs, sink)?;
        Ok(state)
    }

    fn beta_for(&self, epoch: u32, batch_index: usize) -> f64 {
        match self.config.beta_granularity {
            BetaGranularity::Epoch => self.schedule.beta_at(f64::from(epoch)),
            BetaGranularity::Batch => self.schedule.beta_at(
                f64::from(epoch) + batch_index as f64 / self.plan.epoch_length as f64,
            ),
        }
    }

    fn epoch_alternating(
        &self,
        state: &mut RunState<S>,
        epoch: u32,
        sink: &mut dyn RunSink,
    ) -> Result<f64> {
        let cfg = &self.config;
        let n = state.teachers.len();
        let mut total_sum = 0.0;
        let mut tuples = 0u64;
        for (bi, (src, tgts)) in
            epoch_batches(self.source_train, &self.resolved_targets, self.plan, u64::from(epoch))?
                .enumerate()
        {
            let beta = self.beta_for(epoch, bi);
            let da_scale = S::from_f64c(1.0 - beta);
            let kd_scale = S::from_f64c(beta);
            for i in 0..n {
                // step 1: teacher domain adaptation
                let t = &mut state.teachers[i];
                t.net.zero_grad();
                t.dclf.zero_grad();
                let da = teacher_da_step(
                    &mut t.net,
                    &mut t.dclf,
                    &src.images,
                    &src.labels,
                    &tgts[i],
                    &cfg.weights,
                    da_scale,
                )?;
                guard(da, state.step, i, "da")?;
                step_teacher(t);
                state.step += 1;
                state.counters.da += 1;
                sink.on_step(&StepRecord {
                    step: state.step,
                    epoch,
                    teacher: i,
                    kind: "da",
                    beta,
                    value: da,
                    breakdown: None,
                });

                // step 2: source distillation into the student
                let su = &mut state.student;
                su.net.zero_grad();
                let kds = if cfg.distill_updates_teacher {
                    t.net.zero_grad();
                    let v = kd_source_step_distilling(
                        &mut t.net,
                        &mut su.net,
                        &src.images,
                        &src.labels,
                        &cfg.weights,
                        kd_scale,
                    )?;
                    step_teacher_net_only(t);
                    v
                } else {
                    kd_source_step(
                        &t.net,
                        &mut su.net,
                        &src.images,
                        &src.labels,
                        &cfg.weights,
                        kd_scale,
                    )?
                };
                guard(kds, state.step, i, "kd_source")?;
                step_student_net(su);
                state.step += 1;
                state.counters.kd_source += 1;
                sink.on_step(&StepRecord {
                    step: state.step,
                    epoch,
                    teacher: i,
                    kind: "kd_source",
                    beta,
                    value: kds,
                    breakdown: None,
                });

                // step 3: target distillation into the student
                su.net.zero_grad();
                su.dclf.zero_grad();
                let kdt = if cfg.distill_updates_teacher {
                    t.net.zero_grad();
                    let v = kd_target_step_distilling(
                        &mut t.net,
                        &mut su.net,
                        &mut su.dclf,
                        &tgts[i],
                        &src.images,
                        cfg.consistency_enabled,
                        &cfg.weights,
                        kd_scale,
                    )?;
                    step_teacher_net_only(t);
                    v
                } else {
                    kd_target_step(
                        &t.net,
                        &mut su.net,
                        &mut su.dclf,
                        &tgts[i],
                        &src.images,
                        cfg.consistency_enabled,
                        &cfg.weights,
                        kd_scale,
                    )?
                };
                guard(kdt, state.step, i, "kd_target")?;
                step_student_net(su);
                if cfg.consistency_enabled {
                    step_student_dclf(su);
                }
                state.step += 1;
                state.counters.kd_target += 1;

                let breakdown = combined_teacher_objective(da, kds, kdt, beta)?;
                guard(breakdown.total, state.step, i, "total")?;
                sink.on_step(&StepRecord {
                    step: state.step,
                    epoch,
                    teacher: i,
                    kind: "kd_target",
                    beta,
                    value: kdt,
                    breakdown: Some(breakdown),
                });
                total_sum += breakdown.total;
                tuples += 1;
            }
        }
        Ok(total_sum / tuples.max(1) as f64)
    }

    fn epoch_fusion(
        &self,
        state: &mut RunState<S>,
        epoch: u32,
        sink: &mut dyn RunSink,
    ) -> Result<f64> {
        let cfg = &self.config;
        let n = state.teachers.len();
        let mean_fusion = cfg.mode == Mode::FusionMean;
        let mut total_sum = 0.0;
        let mut tuples = 0u64;
        for (bi, (src, tgts)) in
            epoch_batches(self.source_train, &self.resolved_targets, self.plan, u64::from(epoch))?
                .enumerate()
        {
            let beta = self.beta_for(epoch, bi);
            let da_scale = S::from_f64c(1.0 - beta);
            let kd_scale = S::from_f64c(beta);

            let mut da_sum = 0.0;
            for i in 0..n {
                let t = &mut state.teachers[i];
                t.net.zero_grad();
                t.dclf.zero_grad();
                let da = teacher_da_step(
                    &mut t.net,
                    &mut t.dclf,
                    &src.images,
                    &src.labels,
                    &tgts[i],
                    &cfg.weights,
                    da_scale,
                )?;
                guard(da, state.step, i, "da")?;
                step_teacher(t);
                state.step += 1;
                state.counters.da += 1;
                sink.on_step(&StepRecord {
                    step: state.step,
                    epoch,
                    teacher: i,
                    kind: "da",
                    beta,
                    value: da,
                    breakdown: None,
                });
                da_sum += da;
            }

            // fused source distillation (once per tuple)
            let fused = fuse_logits(&state.teachers, &src.images, mean_fusion);
            let su = &mut state.student;
            su.net.zero_grad();
            let kds = kd_source_step_from_logits(
                &fused,
                &mut su.net,
                &src.images,
                &src.labels,
                &cfg.weights,
                kd_scale,
            )?;
            guard(kds, state.step, 0, "kd_source")?;
            step_student_net(su);
            state.step += 1;
            state.counters.kd_source += 1;
            sink.on_step(&StepRecord {
                step: state.step,
                epoch,
                teacher: 0,
                kind: "kd_source",
                beta,
                value: kds,
                breakdown: None,
            });

            // fused target distillation (once per target)
            let mut kdt_sum = 0.0;
            for (i, x_t) in tgts.iter().enumerate() {
                let fused = fuse_logits(&state.teachers, x_t, mean_fusion);
                let su = &mut state.student;
                su.net.zero_grad();
                su.dclf.zero_grad();
                let kdt = kd_target_step_from_logits(
                    &fused,
                    &mut su.net,
                    &mut su.dclf,
                    x_t,
                    &src.images,
                    cfg.consistency_enabled,
                    &cfg.weights,
                    kd_scale,
                )?;
                guard(kdt, state.step, i, "kd_target")?;
                step_student_net(su);
                if cfg.consistency_enabled {
                    step_student_dclf(su);
                }
                state.step += 1;
                state.counters.kd_target += 1;
                kdt_sum += kdt;
                sink.on_step(&StepRecord {
                    step: state.step,
                    epoch,
                    teacher: i,
                    kind: "kd_target",
                    beta,
                    value: kdt,
                    breakdown: None,
                });
            }

            let breakdown =
                combined_teacher_objective(da_sum / n as f64, kds, kdt_sum / n as f64, beta)?;
            guard(breakdown.total, state.step, 0, "total")?;
            total_sum += breakdown.total;
            tuples += 1;
        }
        Ok(total_sum / tuples.max(1) as f64)
    }

    fn epoch_source_only(
        &self,
        state: &mut RunState<S>,
        epoch: u32,
        sink: &mut dyn RunSink,
    ) -> Result<f64> {
        let mut loss_sum = 0.0;
        let mut batches = 0u64;
        for (src, _) in
            epoch_batches(self.source_train, &self.resolved_targets, self.plan, u64::from(epoch))?
        {
            let su = &mut state.student;
            su.net.zero_grad();
            let fwd = su.net.forward(&src.images);
            let (ce, grad) = cross_entropy_with_grad(&fwd.logits, &src.labels)?;
            let ce = ce.to_f64().unwrap();
            su.net.backward(&fwd.cache, Some(&grad), None);
            guard(ce, state.step, 0, "supervised")?;
            step_student_net(su);
            state.step += 1;
            state.counters.supervised += 1;
            sink.on_step(&StepRecord {
                step: state.step,
                epoch,
                teacher: 0,
                kind: "supervised",
                beta: 0.0,
                value: ce,
                breakdown: None,
            });
            loss_sum += ce;
            batches += 1;
        }
        Ok(loss_sum / batches.max(1) as f64)
    }

    fn evaluate_epoch(
        &self,
        state: &RunState<S>,
        epoch: u32,
        mean_total: f64,
    ) -> Result<EpochSnapshot> {
        let student_target_acc = per_target_accuracy(&state.student.net, self.eval_targets)?;
        let teacher_acc = match &self.teacher_eval_map {
            Some(map) => {
                let mut accs = vec![0.0; self.eval_targets.len()];
                for (j, unit) in state.teachers.iter().enumerate() {
                    let e = map[j];
                    accs[e] = dataset_accuracy(&unit.net, &self.eval_targets[e])?;
                }
                Some(accs)
            }
            None => None,
        };
        let source_acc = match self.source_eval {
            Some(ds) => Some(dataset_accuracy(&state.student.net, ds)?),
            None => None,
        };
        Ok(EpochSnapshot {
            epoch,
            beta: self.schedule.beta_at(f64::from(epoch)),
            student_target_acc,
            teacher_acc,
            source_acc,
            mean_total,
        })
    }
}

fn fuse_logits<S: Scalar>(
    teachers: &[TeacherUnit<S>],
    batch: &ndarray::Array4<S>,
    mean: bool,
) -> Array2<S> {
    let mut iter = teachers.iter();
    let first = iter.next().expect("fusion requires at least one teacher");
    let mut fused = first.net.infer_logits(batch);
    for t in iter {
        fused = fused + t.net.infer_logits(batch);
    }
    if mean {
        let inv = S::one() / S::from_f64c(teachers.len() as f64);
        fused.mapv_inplace(|v| v * inv);
    }
    fused
}

fn step_teacher<S: Scalar>(t: &mut TeacherUnit<S>) {
    let TeacherUnit { net, dclf, opt } = t;
    opt.begin_step();
    net.visit_params_mut(&mut |_, _, v, g| opt.update(v, g));
    dclf.visit_params_mut(&mut |_, _, v, g| opt.update(v, g));
}

/// Teacher step that skips the domain-classifier slabs (used by the
/// distill-updates-teacher path, where only the backbone receives KD
/// gradients). Velocity slabs still advance in the same order, with zero
/// gradients for the classifier head.
fn step_teacher_net_only<S: Scalar>(t: &mut TeacherUnit<S>) {
    let TeacherUnit { net, dclf, opt } = t;
    dclf.zero_grad();
    opt.begin_step();
    net.visit_params_mut(&mut |_, _, v, g| opt.update(v, g));
    dclf.visit_params_mut(&mut |_, _, v, g| opt.update(v, g));
}

fn step_student_net<S: Scalar>(su: &mut StudentUnit<S>) {
    let StudentUnit { net, opt_net, .. } = su;
    opt_net.begin_step();
    net.visit_params_mut(&mut |_, _, v, g| opt_net.update(v, g));
}

fn step_student_dclf<S: Scalar>(su: &mut StudentUnit<S>) {
    let StudentUnit { dclf, opt_dclf, .. } = su;
    opt_dclf.begin_step();
    dclf.visit_params_mut(&mut |_, _, v, g| opt_dclf.update(v, g));
}
