//! Training configuration and mode dispatch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::schedule::BetaSchedule;

/// Training modes: the alternating multi-teacher method, its pooled-target
/// variant, and the baselines it is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Alternating multi-teacher adaptation, one teacher per true target.
    MtMtda,
    /// Alternating multi-teacher on k random equal-size splits of the pooled
    /// targets (no domain labels used).
    MtMtdaMixed,
    /// One teacher on all targets merged into a single pseudo-target.
    SingleTeacherMixed,
    /// Per-target teachers, distillation against the summed teacher logits.
    FusionSum,
    /// Per-target teachers, distillation against the averaged teacher logits.
    FusionMean,
    /// Supervised lower bound: student trained on source only.
    SourceOnly,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::MtMtda => "mt_mtda",
            Mode::MtMtdaMixed => "mt_mtda_mixed",
            Mode::SingleTeacherMixed => "single_teacher_mixed",
            Mode::FusionSum => "fusion_sum",
            Mode::FusionMean => "fusion_mean",
            Mode::SourceOnly => "source_only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mt_mtda" => Ok(Mode::MtMtda),
            "mt_mtda_mixed" => Ok(Mode::MtMtdaMixed),
            "single_teacher_mixed" => Ok(Mode::SingleTeacherMixed),
            "fusion_sum" => Ok(Mode::FusionSum),
            "fusion_mean" => Ok(Mode::FusionMean),
            "source_only" => Ok(Mode::SourceOnly),
            other => Err(Error::Config(format!("unknown mode '{other}'"))),
        }
    }
}

/// Whether beta advances once per epoch or fractionally per batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaGranularity {
    Epoch,
    Batch,
}

/// Full configuration of one training run. Defaults mirror the digits-scale
/// hyper-parameter column: tau 20, gamma 0.5, alpha 0.5, s 0.1, f 0.8,
/// batch 64, 100 epochs, both learning rates 5e-4, weight decay 5e-4.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    pub epochs: u32,
    pub batch_size: usize,
    pub weights: LossWeights,
    /// Schedule start value s.
    pub schedule_start: f64,
    /// Schedule final value f.
    pub schedule_final: f64,
    pub uda_learning_rate: f64,
    pub kd_learning_rate: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Number of pooled-target splits (mixed mode only).
    pub k_splits: Option<usize>,
    /// Permutation of target indices fixing the alternation order.
    pub target_order: Option<Vec<usize>>,
    /// Keep the consistency term of the target distillation loss.
    pub consistency_enabled: bool,
    pub beta_granularity: BetaGranularity,
    /// When set, distillation steps also update the distilling teacher.
    pub distill_updates_teacher: bool,
    /// Reversal strength inside the gradient reversal operator.
    pub grl_lambda: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::MtMtda,
            epochs: 100,
            batch_size: 64,
            weights: LossWeights { gamma: 0.5, alpha: 0.5, tau: 20.0 },
            schedule_start: 0.1,
            schedule_final: 0.8,
            uda_learning_rate: 5e-4,
            kd_learning_rate: 5e-4,
            weight_decay: 5e-4,
            momentum: 0.9,
            seed: 0,
            k_splits: None,
            target_order: None,
            consistency_enabled: true,
            beta_granularity: BetaGranularity::Epoch,
            distill_updates_teacher: false,
            grl_lambda: 1.0,
        }
    }
}

impl TrainConfig {
    /// Validate against the number of true targets supplied to the run.
    pub fn validate(&self, n_targets: usize) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        LossWeights::new(self.weights.gamma, self.weights.alpha, self.weights.tau)?;
        BetaSchedule::new(self.schedule_start, self.schedule_final, self.epochs)?;
        for (name, lr) in [
            ("uda_learning_rate", self.uda_learning_rate),
            ("kd_learning_rate", self.kd_learning_rate),
        ] {
            if !(lr > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        if self.weight_decay < 0.0 || self.momentum < 0.0 {
            return Err(Error::Config("weight_decay and momentum must be nonnegative".into()));
        }
        if self.grl_lambda < 0.0 {
            return Err(Error::Config("grl_lambda must be nonnegative".into()));
        }
        match self.mode {
            Mode::MtMtdaMixed => {
                let k = self.k_splits.ok_or_else(|| {
                    Error::Config("mt_mtda_mixed requires k_splits >= 1".into())
                })?;
                if k < 1 {
                    return Err(Error::Config("k_splits must be at least 1".into()));
                }
            }
            Mode::FusionSum | Mode::FusionMean => {
                if n_targets < 2 {
                    return Err(Error::Config(format!(
                        "{} requires at least 2 targets",
                        self.mode.name()
                    )));
                }
            }
            Mode::MtMtda | Mode::SingleTeacherMixed => {
                if n_targets < 1 {
                    return Err(Error::Config(format!(
                        "{} requires at least 1 target",
                        self.mode.name()
                    )));
                }
            }
            Mode::SourceOnly => {}
        }
        if let Some(order) = &self.target_order {
            let mut seen = vec![false; n_targets];
            if order.len() != n_targets {
                return Err(Error::Config(format!(
                    "target_order lists {} indices for {} targets",
                    order.len(),
                    n_targets
                )));
            }
            for &i in order {
                if i >= n_targets || seen[i] {
                    return Err(Error::Config(format!(
                        "target_order is not a permutation of 0..{n_targets}"
                    )));
                }
                seen[i] = true;
            }
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<BetaSchedule> {
        BetaSchedule::new(self.schedule_start, self.schedule_final, self.epochs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_for_plain_mode() {
        TrainConfig::default().validate(3).unwrap();
    }

    #[test]
    fn mixed_mode_requires_k_splits() {
        let cfg = TrainConfig { mode: Mode::MtMtdaMixed, ..Default::default() };
        assert!(cfg.validate(3).is_err());
        let cfg = TrainConfig { k_splits: Some(2), ..cfg };
        cfg.validate(3).unwrap();
    }

    #[test]
    fn fusion_needs_two_targets() {
        let cfg = TrainConfig { mode: Mode::FusionSum, ..Default::default() };
        assert!(cfg.validate(1).is_err());
        cfg.validate(2).unwrap();
    }

    #[test]
    fn schedule_final_above_one_rejected() {
        let cfg = TrainConfig { schedule_final: 1.3, ..Default::default() };
        assert!(matches!(cfg.validate(2), Err(Error::Schedule(_))));
    }

    #[test]
    fn bad_target_order_rejected() {
        let cfg = TrainConfig { target_order: Some(vec![0, 0, 1]), ..Default::default() };
        assert!(cfg.validate(3).is_err());
        let cfg = TrainConfig { target_order: Some(vec![2, 0, 1]), ..Default::default() };
        cfg.validate(3).unwrap();
    }
}
