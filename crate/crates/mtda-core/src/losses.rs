//! Loss functions and their training steps.
//!
//! Three composite steps drive the alternating loop:
//!   - [`teacher_da_step`]: supervised source cross-entropy plus the
//!     gamma-weighted domain confusion term, with gradient reversal between
//!     the feature extractor and the domain classifier.
//!   - [`kd_source_step`]: temperature-softened teacher distribution
//!     distilled into the student on source data, plus alpha-weighted
//!     supervised cross-entropy. The teacher is a constant.
//!   - [`kd_target_step`]: the same distillation on target data, plus the
//!     alpha-weighted consistency term (domain confusion on the student's
//!     own features over the current source/target batches).
//!
//! Every step takes a `grad_scale` so the trainer can weight updates by
//! (1 - beta) or beta without touching the reported raw loss values.

use ndarray::{Array2, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{
    log_softmax_rows, temperature_softmax_rows, ClassifierNetwork, DomainClassifier,
};
use crate::scalar::Scalar;

const EPS_CLAMP: f64 = 1e-12;
const NORMALIZATION_TOL: f64 = 1e-5;

/// Hyper-parameters shared by the loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Domain-confusion weight in the teacher objective.
    pub gamma: f64,
    /// Auxiliary-term weight in both distillation losses.
    pub alpha: f64,
    /// Distillation temperature applied to the teacher.
    pub tau: f64,
}

impl LossWeights {
    pub fn new(gamma: f64, alpha: f64, tau: f64) -> Result<Self> {
        if !gamma.is_finite() || gamma < 0.0 {
            return Err(Error::Argument(format!("gamma {gamma} must be finite and >= 0")));
        }
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(Error::Argument(format!("alpha {alpha} must be finite and >= 0")));
        }
        if !tau.is_finite() || tau <= 0.0 {
            return Err(Error::Argument(format!("tau {tau} must be finite and > 0")));
        }
        Ok(Self { gamma, alpha, tau })
    }
}

/// The per-teacher objective, decomposed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub da_term: f64,
    pub kd_source_term: f64,
    pub kd_target_term: f64,
    pub beta_used: f64,
}

/// total = (1 - beta) * da + beta * (kd_source + kd_target).
pub fn combined_teacher_objective(
    da_term: f64,
    kd_source_term: f64,
    kd_target_term: f64,
    beta: f64,
) -> Result<LossBreakdown> {
    if !(beta > 0.0) {
        return Err(Error::Schedule(format!("beta {beta} must be positive")));
    }
    Ok(LossBreakdown {
        total: (1.0 - beta) * da_term + beta * (kd_source_term + kd_target_term),
        da_term,
        kd_source_term,
        kd_target_term,
        beta_used: beta,
    })
}

fn check_labels(labels: &[u32], classes: usize, batch: usize) -> Result<()> {
    if labels.len() != batch {
        return Err(Error::Argument(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
        return Err(Error::Argument(format!("label {bad} outside [0, {classes})")));
    }
    Ok(())
}

/// Mean over the batch of -log softmax(logits)[label].
pub fn cross_entropy<S: Scalar>(logits: &Array2<S>, labels: &[u32]) -> Result<S> {
    Ok(cross_entropy_with_grad(logits, labels)?.0)
}

/// Cross-entropy value and its gradient w.r.t. the logits
/// ((softmax - onehot) / batch).
pub fn cross_entropy_with_grad<S: Scalar>(
    logits: &Array2<S>,
    labels: &[u32],
) -> Result<(S, Array2<S>)> {
    let (b, c) = (logits.shape()[0], logits.shape()[1]);
    check_labels(labels, c, b)?;
    let lsm = log_softmax_rows(logits)?;
    let inv_b = S::one() / S::from_f64c(b as f64);
    let mut loss = S::zero();
    let mut grad = lsm.mapv(|v| v.exp() * inv_b);
    for (i, &label) in labels.iter().enumerate() {
        loss -= lsm[[i, label as usize]];
        grad[[i, label as usize]] -= inv_b;
    }
    Ok((loss * inv_b, grad))
}

fn check_distribution_rows<S: Scalar>(m: &Array2<S>, name: &str) -> Result<()> {
    let one = S::one();
    let tol = S::from_f64c(NORMALIZATION_TOL);
    for row in m.axis_iter(Axis(0)) {
        if row.iter().any(|&v| !v.is_finite() || v < S::zero()) {
            return Err(Error::Argument(format!("{name}: entries must be finite and >= 0")));
        }
        let sum = row.sum();
        if (sum - one).abs() > tol {
            return Err(Error::Argument(format!(
                "{name}: row sums to {sum}, not a distribution"
            )));
        }
    }
    Ok(())
}

/// Batch-mean KL divergence sum_i p_i log(p_i / q_i), rows as distributions.
/// 0 log 0 counts as 0; q is clamped at 1e-12 inside the log.
pub fn kl_divergence<S: Scalar>(p: &Array2<S>, q: &Array2<S>) -> Result<S> {
    if p.shape() != q.shape() {
        return Err(Error::Shape(format!(
            "p {:?} vs q {:?}",
            p.shape(),
            q.shape()
        )));
    }
    check_distribution_rows(p, "p")?;
    check_distribution_rows(q, "q")?;
    let clamp = S::from_f64c(EPS_CLAMP);
    let b = S::from_f64c(p.shape()[0] as f64);
    let mut total = S::zero();
    for (pr, qr) in p.axis_iter(Axis(0)).zip(q.axis_iter(Axis(0))) {
        for (&pi, &qi) in pr.iter().zip(qr.iter()) {
            if pi > S::zero() {
                total += pi * (pi.max(clamp) / qi.max(clamp)).ln();
            }
        }
    }
    Ok(total / b)
}

/// Mean binary cross-entropy of the domain classifier over the concatenated
/// source (label 0) and target (label 1) feature batches. Gradient reversal
/// does not change this value: it only alters the backward pass.
pub fn domain_confusion_loss<S: Scalar>(
    features_source: &Array2<S>,
    features_target: &Array2<S>,
    dclf: &DomainClassifier<S>,
) -> Result<S> {
    let (value, _, _) = domain_confusion_forward(features_source, features_target, dclf)?;
    Ok(value)
}

/// Shared forward: returns (value, grad w.r.t. dclf logits, cache carrier).
fn domain_confusion_forward<S: Scalar>(
    features_source: &Array2<S>,
    features_target: &Array2<S>,
    dclf: &DomainClassifier<S>,
) -> Result<(S, Array2<S>, crate::models::DclfCache<S>)> {
    let (bs, bt) = (features_source.shape()[0], features_target.shape()[0]);
    if bs + bt == 0 {
        return Err(Error::Argument("empty domain-confusion batch".into()));
    }
    let f = features_source.shape()[1];
    if features_target.shape()[1] != f {
        return Err(Error::Shape(format!(
            "feature dims differ: {f} vs {}",
            features_target.shape()[1]
        )));
    }
    let mut concat = Array2::<S>::zeros((bs + bt, f));
    concat.slice_mut(ndarray::s![..bs, ..]).assign(features_source);
    concat.slice_mut(ndarray::s![bs.., ..]).assign(features_target);
    let wrapped = dclf.grl().forward(&concat);
    let (logits, cache) = dclf.forward(&wrapped)?;
    let labels: Vec<u32> = (0..bs + bt).map(|i| u32::from(i >= bs)).collect();
    let (value, grad_logits) = cross_entropy_with_grad(&logits, &labels)?;
    Ok((value, grad_logits, cache))
}

fn scaled<S: Scalar>(m: &Array2<S>, k: S) -> Array2<S> {
    m.mapv(|v| v * k)
}

/// One teacher domain-adaptation step: forward both batches, accumulate
/// gradients for the teacher and its domain classifier, return the raw
/// (unscaled) loss value `ce + gamma * dc`.
///
/// Gradient contract: the feature extractor receives the reversed
/// (-lambda-scaled) domain-confusion gradient while the domain classifier
/// head receives the standard minimizing gradient; both are premultiplied by
/// `grad_scale`.
pub fn teacher_da_step<S: Scalar>(
    teacher: &mut ClassifierNetwork<S>,
    dclf: &mut DomainClassifier<S>,
    x_s: &Array4<S>,
    y_s: &[u32],
    x_t: &Array4<S>,
    weights: &LossWeights,
    grad_scale: S,
) -> Result<f64> {
    let gamma = S::from_f64c(weights.gamma);
    let fwd_s = teacher.forward(x_s);
    let fwd_t = teacher.forward(x_t);

    let (ce, grad_ce) = cross_entropy_with_grad(&fwd_s.logits, y_s)?;
    let (dc, grad_dc_logits, dc_cache) =
        domain_confusion_forward(&fwd_s.features, &fwd_t.features, dclf)?;

    // domain-classifier head: minimize, scaled by gamma * grad_scale
    let grad_feats = dclf.backward(&scaled(&grad_dc_logits, gamma * grad_scale), &dc_cache);
    // feature extractor: reversed gradient through the GRL
    let grad_feats = dclf.grl().backward(&grad_feats);
    let bs = x_s.shape()[0];
    let (gf_s, gf_t) = grad_feats.view().split_at(Axis(0), bs);

    teacher.backward(
        &fwd_s.cache,
        Some(&scaled(&grad_ce, grad_scale)),
        Some(&gf_s.to_owned()),
    );
    teacher.backward(&fwd_t.cache, None, Some(&gf_t.to_owned()));

    Ok((ce + gamma * dc).to_f64().unwrap())
}

/// KL(teacher at tau, student at 1) value and student-logit gradient.
fn distill_kl<S: Scalar>(
    teacher_logits: &Array2<S>,
    student_logits: &Array2<S>,
    tau: f64,
) -> Result<(S, Array2<S>)> {
    let p = temperature_softmax_rows(teacher_logits, S::from_f64c(tau))?;
    let q = temperature_softmax_rows(student_logits, S::one())?;
    let value = kl_divergence(&p, &q)?;
    let inv_b = S::one() / S::from_f64c(p.shape()[0] as f64);
    let grad = (&q - &p).mapv(|v| v * inv_b);
    Ok((value, grad))
}

/// Source-domain distillation step. The teacher is constant (no gradient can
/// reach it through this signature); the student accumulates gradients for
/// the KL term plus `alpha * cross_entropy` on the true labels. Returns the
/// raw loss value.
pub fn kd_source_step<S: Scalar>(
    teacher: &ClassifierNetwork<S>,
    student: &mut ClassifierNetwork<S>,
    x_s: &Array4<S>,
    y_s: &[u32],
    weights: &LossWeights,
    grad_scale: S,
) -> Result<f64> {
    let teacher_logits = teacher.infer_logits(x_s);
    kd_source_inner(&teacher_logits, student, x_s, y_s, weights, grad_scale)
}

/// Variant used by fusion baselines: distill from an arbitrary logit matrix.
pub fn kd_source_step_from_logits<S: Scalar>(
    teacher_logits: &Array2<S>,
    student: &mut ClassifierNetwork<S>,
    x_s: &Array4<S>,
    y_s: &[u32],
    weights: &LossWeights,
    grad_scale: S,
) -> Result<f64> {
    kd_source_inner(teacher_logits, student, x_s, y_s, weights, grad_scale)
}

fn kd_source_inner<S: Scalar>(
    teacher_logits: &Array2<S>,
    student: &mut ClassifierNetwork<S>,
    x_s: &Array4<S>,
    y_s: &[u32],
    weights: &LossWeights,
    grad_scale: S,
) -> Result<f64> {
    Ok(kd_source_core(teacher_logits, student, x_s, y_s, weights, grad_scale)?.0)
}

fn kd_source_core<S: Scalar>(
    teacher_logits: &Array2<S>,
    student: &mut ClassifierNetwork<S>,
    x_s: &Array4<S>,
    y_s: &[u32],
    weights: &LossWeights,
    grad_scale: S,
) -> Result<(f64, Array2<S>)> {
    let alpha = S::from_f64c(weights.alpha);
    let fwd = student.forward(x_s);
    let (kl, grad_kl) = distill_kl(teacher_logits, &fwd.logits, weights.tau)?;
    let (ce, grad_ce) = cross_entropy_with_grad(&fwd.logits, y_s)?;
    let grad = grad_kl + scaled(&grad_ce, alpha);
    student.backward(&fwd.cache, Some(&scaled(&grad, grad_scale)), None);
    Ok(((kl + alpha * ce).to_f64().unwrap(), fwd.logits))
}

/// [`kd_source_step`] variant that also accumulates the KL gradient into the
/// distilling teacher (for configurations where distillation updates both
/// networks).
pub fn kd_source_step_distilling<S: Scalar>(
    teacher: &mut ClassifierNetwork<S>,
    student: &mut ClassifierNetwork<S>,
    x_s: &Array4<S>,
    y_s: &[u32],
    weights: &LossWeights,
    grad_scale: S,
) -> Result<f64> {
    let fwd_t = teacher.forward(x_s);
    let (value, student_logits) =
        kd_source_core(&fwd_t.logits, student, x_s, y_s, weights, grad_scale)?;
    let tg = distill_teacher_grad(&fwd_t.logits, &student_logits, weights.tau)?;
    teacher.backward(&fwd_t.cache, Some(&scaled(&tg, grad_scale)), None);
    Ok(value)
}

/// Target-domain distillation step with the optional consistency term
/// (domain confusion over the student's features of the current source and
/// target batches, through the student's own reversal operator). Returns the
/// raw loss value.
pub fn kd_target_step<S: Scalar>(
    teacher: &ClassifierNetwork<S>,
    student: &mut ClassifierNetwork<S>,
    student_dclf: &mut DomainClassifier<S>,
    x_t: &Array4<S>,
    x_s: &Array4<S>,
    consistency: bool,
    weights: &LossWeights,
    grad_scale: S,
) -> Result<f64> {
    let teacher_logits = teacher.infer_logits(x_t);
    kd_target_inner(&teacher_logits, student, student_dclf, x_t, x_s, consistency, weights, grad_scale)
}

/// Fusion-baseline variant of [`kd_target_step`].
#[allow(clippy::too_many_arguments)]
pub fn kd_target_step_from_logits<S: Scalar>(
    teacher_logits: &Array2<S>,
    student: &mut ClassifierNetwork<S>,
    student_dclf: &mut DomainClassifier<S>,
    x_t: &Array4<S>,
    x_s: &Array4<S>,
    consistency: bool,
    weights: &LossWeights,
    grad_scale: S,
) -> Result<f64> {
    kd_target_inner(teacher_logits, student, student_dclf, x_t, x_s, consistency, weights, grad_scale)
}

#[allow(clippy::too_many_arguments)]
fn kd_target_inner<S: Scalar>(
    teacher_logits: &Array2<S>,
    student: &mut ClassifierNetwork<S>,
    student_dclf: &mut DomainClassifier<S>,
    x_t: &Array4<S>,
    x_s: &Array4<S>,
    consistency: bool,
    weights: &LossWeights,
    grad_scale: S,
) -> Result<f64> {
    Ok(kd_target_core(
        teacher_logits,
        student,
        student_dclf,
        x_t,
        x_s,
        consistency,
        weights,
        grad_scale,
    )?
    .0)
}

/// [`kd_target_step`] variant that also accumulates the KL gradient into the
/// distilling teacher.
#[allow(clippy::too_many_arguments)]
pub fn kd_target_step_distilling<S: Scalar>(
    teacher: &mut ClassifierNetwork<S>,
    student: &mut ClassifierNetwork<S>,
    student_dclf: &mut DomainClassifier<S>,
    x_t: &Array4<S>,
    x_s: &Array4<S>,
    consistency: bool,
    weights: &LossWeights,
    grad_scale: S,
) -> Result<f64> {
    let fwd_t = teacher.forward(x_t);
    let (value, student_logits) = kd_target_core(
        &fwd_t.logits,
        student,
        student_dclf,
        x_t,
        x_s,
        consistency,
        weights,
        grad_scale,
    )?;
    let tg = distill_teacher_grad(&fwd_t.logits, &student_logits, weights.tau)?;
    teacher.backward(&fwd_t.cache, Some(&scaled(&tg, grad_scale)), None);
    Ok(value)
}

#[allow(clippy::too_many_arguments)]
fn kd_target_core<S: Scalar>(
    teacher_logits: &Array2<S>,
    student: &mut ClassifierNetwork<S>,
    student_dclf: &mut DomainClassifier<S>,
    x_t: &Array4<S>,
    x_s: &Array4<S>,
    consistency: bool,
    weights: &LossWeights,
    grad_scale: S,
) -> Result<(f64, Array2<S>)> {
    let alpha = S::from_f64c(weights.alpha);
    let fwd_t = student.forward(x_t);
    let (kl, grad_kl) = distill_kl(teacher_logits, &fwd_t.logits, weights.tau)?;

    if !consistency {
        student.backward(&fwd_t.cache, Some(&scaled(&grad_kl, grad_scale)), None);
        return Ok((kl.to_f64().unwrap(), fwd_t.logits));
    }

    let fwd_s = student.forward(x_s);
    let (dc, grad_dc_logits, dc_cache) =
        domain_confusion_forward(&fwd_s.features, &fwd_t.features, student_dclf)?;
    let grad_feats =
        student_dclf.backward(&scaled(&grad_dc_logits, alpha * grad_scale), &dc_cache);
    let grad_feats = student_dclf.grl().backward(&grad_feats);
    let bs = x_s.shape()[0];
    let (gf_s, gf_t) = grad_feats.view().split_at(Axis(0), bs);

    student.backward(
        &fwd_t.cache,
        Some(&scaled(&grad_kl, grad_scale)),
        Some(&gf_t.to_owned()),
    );
    student.backward(&fwd_s.cache, None, Some(&gf_s.to_owned()));

    Ok(((kl + alpha * dc).to_f64().unwrap(), fwd_t.logits))
}

/// Teacher-side KL gradient used when distillation is configured to also
/// update the distilling teacher: d/dt_j mean KL(softmax(t/tau) || q)
/// = p_j (r_j - sum_i p_i r_i) / (tau * B) with r = log p - log q.
pub fn distill_teacher_grad<S: Scalar>(
    teacher_logits: &Array2<S>,
    student_logits: &Array2<S>,
    tau: f64,
) -> Result<Array2<S>> {
    let p = temperature_softmax_rows(teacher_logits, S::from_f64c(tau))?;
    let q = temperature_softmax_rows(student_logits, S::one())?;
    let clamp = S::from_f64c(EPS_CLAMP);
    let b = p.shape()[0];
    let scale = S::one() / (S::from_f64c(tau) * S::from_f64c(b as f64));
    let mut grad = Array2::<S>::zeros(p.raw_dim());
    for i in 0..b {
        let pr = p.row(i);
        let qr = q.row(i);
        let r: Vec<S> = pr
            .iter()
            .zip(qr.iter())
            .map(|(&pi, &qi)| pi.max(clamp).ln() - qi.max(clamp).ln())
            .collect();
        let mean_r: S = pr.iter().zip(&r).map(|(&pi, &ri)| pi * ri).sum();
        for j in 0..pr.len() {
            grad[[i, j]] = pr[j] * (r[j] - mean_r) * scale;
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_backbone, Preset};
    use ndarray::{array, Array4};

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn uniform_binary_ce_is_ln2() {
        let logits = array![[0.0, 0.0]];
        assert!((cross_entropy(&logits, &[0]).unwrap() - LN2).abs() < 1e-12);
        assert!((cross_entropy(&logits, &[1]).unwrap() - LN2).abs() < 1e-12);
    }

    #[test]
    fn saturated_ce_is_negligible() {
        let logits = array![[30.0, -30.0]];
        assert!(cross_entropy(&logits, &[0]).unwrap() < 1e-9);
    }

    #[test]
    fn batch_ce_is_mean_of_rows() {
        let a = cross_entropy(&array![[2.0f64, -1.0, 0.3]], &[1]).unwrap();
        let b = cross_entropy(&array![[0.1, 0.2, 0.3]], &[2]).unwrap();
        let both = cross_entropy(&array![[2.0, -1.0, 0.3], [0.1, 0.2, 0.3]], &[1, 2]).unwrap();
        assert!((both - (a + b) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_label_is_argument_error() {
        let err = cross_entropy(&array![[0.0, 0.0]], &[2]).unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }

    #[test]
    fn ce_gradient_matches_finite_difference() {
        let logits = array![[0.4f64, -0.7, 1.2], [0.0, 0.1, -0.2]];
        let labels = [2u32, 0];
        let (_, grad) = cross_entropy_with_grad(&logits, &labels).unwrap();
        let eps = 1e-6;
        for i in 0..2 {
            for j in 0..3 {
                let mut plus = logits.clone();
                plus[[i, j]] += eps;
                let mut minus = logits.clone();
                minus[[i, j]] -= eps;
                let fd = (cross_entropy(&plus, &labels).unwrap()
                    - cross_entropy(&minus, &labels).unwrap())
                    / (2.0 * eps);
                assert!((grad[[i, j]] - fd).abs() < 1e-8, "({i},{j})");
            }
        }
    }

    #[test]
    fn kl_of_identical_distributions_is_zero() {
        let p = array![[0.2f64, 0.5, 0.3]];
        assert!(kl_divergence(&p, &p).unwrap().abs() < 1e-12);
    }

    #[test]
    fn kl_handles_zero_mass_in_p() {
        // p = [1, 0], q = [0.5, 0.5] -> ln 2
        let v = kl_divergence(&array![[1.0, 0.0]], &array![[0.5, 0.5]]).unwrap();
        assert!((v - LN2).abs() < 1e-12);
    }

    #[test]
    fn kl_matches_direct_scalar_evaluation() {
        // 0.5 ln(0.5/0.9) + 0.5 ln(0.5/0.1)
        let expected = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        let v = kl_divergence(&array![[0.5, 0.5]], &array![[0.9, 0.1]]).unwrap();
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 0.5108).abs() < 5e-5);
    }

    #[test]
    fn unnormalized_input_is_argument_error() {
        let err = kl_divergence(&array![[0.7, 0.7]], &array![[0.5, 0.5]]).unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }

    #[test]
    fn breakdown_reconstruction_identity() {
        let b = combined_teacher_objective(2.0, 1.0, 1.0, 0.5).unwrap();
        assert!((b.total - 2.0).abs() < 1e-12);
        let b = combined_teacher_objective(3.0, 0.25, 0.75, 0.1).unwrap();
        assert!((b.total - (0.9 * 3.0 + 0.1 * 1.0)).abs() < 1e-12);
        let b = combined_teacher_objective(0.0, 0.0, 0.0, 0.7).unwrap();
        assert_eq!(b.total, 0.0);
    }

    #[test]
    fn nonpositive_beta_is_schedule_error() {
        assert!(matches!(
            combined_teacher_objective(1.0, 1.0, 1.0, 0.0),
            Err(Error::Schedule(_))
        ));
        assert!(matches!(
            combined_teacher_objective(1.0, 1.0, 1.0, -0.2),
            Err(Error::Schedule(_))
        ));
    }

    #[test]
    fn distill_kl_value_matches_closed_form() {
        // teacher [2, 0] at tau 2 -> p = [e, 1] / (e+1); student [0, 0] -> q uniform
        let e = std::f64::consts::E;
        let p0 = e / (e + 1.0);
        let p1 = 1.0 / (e + 1.0);
        let expected = p0 * (p0 / 0.5).ln() + p1 * (p1 / 0.5).ln();
        let (v, _) = distill_kl(&array![[2.0, 0.0]], &array![[0.0, 0.0]], 2.0).unwrap();
        assert!((v - expected).abs() < 1e-12);
        // frozen from the direct scalar evaluation above
        assert!((v - 0.1109440716717).abs() < 1e-10);
    }

    #[test]
    fn matched_logits_at_tau_one_distill_to_zero() {
        let logits = array![[0.3f64, -0.4, 1.0]];
        let (v, _) = distill_kl(&logits, &logits, 1.0).unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn teacher_grad_matches_finite_difference() {
        let t = array![[0.8f64, -0.3, 0.5]];
        let s = array![[0.1, 0.4, -0.2]];
        let tau = 2.5;
        let grad = distill_teacher_grad(&t, &s, tau).unwrap();
        let eps = 1e-6;
        for j in 0..3 {
            let mut plus = t.clone();
            plus[[0, j]] += eps;
            let mut minus = t.clone();
            minus[[0, j]] -= eps;
            let fd = (distill_kl(&plus, &s, tau).unwrap().0
                - distill_kl(&minus, &s, tau).unwrap().0)
                / (2.0 * eps);
            assert!((grad[[0, j]] - fd).abs() < 1e-8, "j={j}");
        }
    }

    fn toy_batch(b: usize, seed: u64) -> Array4<f64> {
        Array4::from_shape_fn((b, 1, 16, 16), |(n, _, y, x)| {
            let v = ((n as u64 + seed) * 31 + (y * 16 + x) as u64) % 97;
            v as f64 / 96.0
        })
    }

    #[test]
    fn da_step_with_zero_gamma_is_plain_cross_entropy() {
        let mut teacher = build_backbone::<f64>(Preset::TeacherWide, (1, 16, 16), 3, 1).unwrap();
        let mut dclf =
            crate::models::DomainClassifier::new(teacher.feature_dim(), 1.0, 2).unwrap();
        let x_s = toy_batch(4, 0);
        let x_t = toy_batch(4, 100);
        let y_s = [0u32, 1, 2, 0];
        let w = LossWeights::new(0.0, 0.0, 1.0).unwrap();
        let da = teacher_da_step(&mut teacher, &mut dclf, &x_s, &y_s, &x_t, &w, 1.0).unwrap();
        let ce = cross_entropy(&teacher.infer_logits(&x_s), &y_s).unwrap();
        assert!((da - ce).abs() < 1e-12);
    }

    #[test]
    fn kd_steps_cannot_touch_teacher_parameters() {
        let teacher = build_backbone::<f64>(Preset::TeacherWide, (1, 16, 16), 3, 1).unwrap();
        let mut student = build_backbone::<f64>(Preset::StudentCompact, (1, 16, 16), 3, 5).unwrap();
        let mut sdclf =
            crate::models::DomainClassifier::new(student.feature_dim(), 1.0, 6).unwrap();
        let before = teacher.checksum();
        let w = LossWeights::new(0.5, 0.5, 4.0).unwrap();
        let x_s = toy_batch(4, 0);
        let x_t = toy_batch(4, 50);
        kd_source_step(&teacher, &mut student, &x_s, &[0, 1, 2, 0], &w, 1.0).unwrap();
        kd_target_step(&teacher, &mut student, &mut sdclf, &x_t, &x_s, true, &w, 1.0).unwrap();
        assert_eq!(teacher.checksum(), before);
    }

    #[test]
    fn consistency_off_drops_the_alpha_term() {
        let teacher = build_backbone::<f64>(Preset::TeacherWide, (1, 16, 16), 3, 1).unwrap();
        let student = build_backbone::<f64>(Preset::StudentCompact, (1, 16, 16), 3, 5).unwrap();
        let sdclf =
            crate::models::DomainClassifier::new(student.feature_dim(), 1.0, 6).unwrap();
        let x_s = toy_batch(4, 0);
        let x_t = toy_batch(4, 50);
        let w = LossWeights::new(0.5, 0.7, 3.0).unwrap();
        let with =
            kd_target_step(&teacher, &mut student.clone(), &mut sdclf.clone(), &x_t, &x_s, true, &w, 1.0)
                .unwrap();
        let without =
            kd_target_step(&teacher, &mut student.clone(), &mut sdclf.clone(), &x_t, &x_s, false, &w, 1.0)
                .unwrap();
        let dc = domain_confusion_loss(
            &student.infer_features(&x_s),
            &student.infer_features(&x_t),
            &sdclf,
        )
        .unwrap();
        assert!((with - without - 0.7 * dc).abs() < 1e-12);
    }
}
