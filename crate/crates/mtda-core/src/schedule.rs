//! Exponential progression shifting weight from adaptation to distillation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// g = ln(f / s) / n_epochs.
pub fn growth_rate(start: f64, final_value: f64, n_epochs: u32) -> Result<f64> {
    if !(start > 0.0) || !(final_value > 0.0) {
        return Err(Error::Argument(format!(
            "schedule endpoints must be positive (s={start}, f={final_value})"
        )));
    }
    if n_epochs < 1 {
        return Err(Error::Argument("n_epochs must be at least 1".into()));
    }
    Ok((final_value / start).ln() / f64::from(n_epochs))
}

/// beta = s * exp(g * e), clamped at max(s, f) against drift past the final
/// epoch. `epoch` may be fractional (batch-granular schedules).
pub fn beta(start: f64, growth: f64, cap: f64, epoch: f64) -> f64 {
    debug_assert!(epoch >= 0.0);
    let b = start * (growth * epoch).exp();
    b.min(start.max(cap))
}

/// The (s, f, N_e, g) progression. Weights in Eq-style objectives read
/// (1 - beta) for adaptation and beta for distillation, so both endpoints
/// must stay inside (0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaSchedule {
    start: f64,
    final_value: f64,
    n_epochs: u32,
    growth: f64,
}

impl BetaSchedule {
    pub fn new(start: f64, final_value: f64, n_epochs: u32) -> Result<Self> {
        for (name, v) in [("s", start), ("f", final_value)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Schedule(format!(
                    "{name} = {v} outside (0, 1]: (1 - beta) must stay a convex weight"
                )));
            }
        }
        let growth = growth_rate(start, final_value, n_epochs)?;
        Ok(Self { start, final_value, n_epochs, growth })
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn final_value(&self) -> f64 {
        self.final_value
    }

    pub fn n_epochs(&self) -> u32 {
        self.n_epochs
    }

    pub fn growth(&self) -> f64 {
        self.growth
    }

    /// Beta at an (integer or fractional) epoch position.
    pub fn beta_at(&self, epoch: f64) -> f64 {
        beta(self.start, self.growth, self.final_value, epoch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn growth_rate_matches_direct_evaluation() {
        // ln(8)/100 with (s, f, N_e) = (0.1, 0.8, 100)
        let g = growth_rate(0.1, 0.8, 100).unwrap();
        assert!((g - 8.0f64.ln() / 100.0).abs() < 1e-15);
        assert!((g - 0.020794).abs() < 5e-7);
        // ln(5)/200 with (0.1, 0.5, 200)
        let g = growth_rate(0.1, 0.5, 200).unwrap();
        assert!((g - 5.0f64.ln() / 200.0).abs() < 1e-15);
        assert!((g - 0.0080472).abs() < 5e-8);
    }

    #[test]
    fn equal_endpoints_mean_zero_growth() {
        assert_eq!(growth_rate(0.3, 0.3, 50).unwrap(), 0.0);
    }

    #[test]
    fn invalid_arguments_rejected() {
        assert!(growth_rate(0.0, 0.5, 10).is_err());
        assert!(growth_rate(0.5, -0.1, 10).is_err());
        assert!(growth_rate(0.5, 0.5, 0).is_err());
        assert!(BetaSchedule::new(0.1, 1.2, 10).is_err());
    }

    #[test]
    fn beta_endpoints_are_exact() {
        let s = BetaSchedule::new(0.1, 0.8, 100).unwrap();
        assert_eq!(s.beta_at(0.0), 0.1);
        assert!((s.beta_at(100.0) - 0.8).abs() < 1e-9);
    }

    #[test]
    fn beta_midpoint_matches_direct_evaluation() {
        // s = 0.1, g = ln(8)/100, e = 50 -> 0.1 * sqrt(8)
        let s = BetaSchedule::new(0.1, 0.8, 100).unwrap();
        let expected = 0.1 * 8.0f64.sqrt();
        assert!((s.beta_at(50.0) - expected).abs() < 1e-12);
        assert!((s.beta_at(50.0) - 0.28284).abs() < 5e-6);
    }

    #[test]
    fn randomized_endpoints_and_monotonicity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let s = rng.gen_range(0.01..1.0);
            let f = rng.gen_range(0.01..1.0);
            let n = rng.gen_range(1..400u32);
            let sched = BetaSchedule::new(s, f, n).unwrap();
            assert_eq!(sched.beta_at(0.0), s);
            assert!((sched.beta_at(f64::from(n)) - f).abs() < 1e-9, "s={s} f={f} n={n}");
            for e in 0..n {
                let d = sched.beta_at(f64::from(e + 1)) - sched.beta_at(f64::from(e));
                if f > s {
                    assert!(d >= 0.0);
                } else if f < s {
                    assert!(d <= 0.0);
                }
            }
        }
    }

    #[test]
    fn multiplicative_self_similarity() {
        let sched = BetaSchedule::new(0.1, 0.8, 100).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let e1 = rng.gen_range(0.0..50.0);
            let e2 = rng.gen_range(0.0..50.0);
            let lhs = sched.beta_at(e1 + e2) * sched.start();
            let rhs = sched.beta_at(e1) * sched.beta_at(e2);
            assert!((lhs - rhs).abs() < 1e-9);
        }
    }

    #[test]
    fn clamp_guards_drift_past_final_epoch() {
        let sched = BetaSchedule::new(0.1, 0.8, 10).unwrap();
        assert!(sched.beta_at(10.5) <= 0.8);
        assert!(sched.beta_at(1000.0) <= 0.8);
    }
}
