//! Stochastic gradient descent with classical momentum and L2 weight decay.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Velocity update v <- m*v + (g + wd*theta); parameter update
/// theta <- theta - lr*v. One instance per network group; slabs are keyed by
/// visitation order, which is fixed per network type.
#[derive(Debug, Clone)]
pub struct SgdMomentum<S> {
    lr: S,
    momentum: S,
    weight_decay: S,
    velocities: Vec<Vec<S>>,
    cursor: usize,
}

impl<S: Scalar> SgdMomentum<S> {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(Error::Argument(format!("learning rate {lr} must be positive")));
        }
        if momentum < 0.0 || weight_decay < 0.0 {
            return Err(Error::Argument(
                "momentum and weight_decay must be nonnegative".into(),
            ));
        }
        Ok(Self {
            lr: S::from_f64c(lr),
            momentum: S::from_f64c(momentum),
            weight_decay: S::from_f64c(weight_decay),
            velocities: Vec::new(),
            cursor: 0,
        })
    }

    /// Start a step; subsequent [`Self::update`] calls must replay the same
    /// slab sequence every step.
    pub fn begin_step(&mut self) {
        self.cursor = 0;
    }

    /// Apply the update rule to one parameter slab.
    pub fn update(&mut self, value: &mut [S], grad: &[S]) {
        if self.cursor == self.velocities.len() {
            self.velocities.push(vec![S::zero(); value.len()]);
        }
        let vel = &mut self.velocities[self.cursor];
        debug_assert_eq!(vel.len(), value.len(), "slab sequence changed between steps");
        self.cursor += 1;
        for ((v, &g), vel) in value.iter_mut().zip(grad).zip(vel.iter_mut()) {
            let g = g + self.weight_decay * *v;
            *vel = self.momentum * *vel + g;
            *v -= self.lr * *vel;
        }
    }

    pub fn velocities(&self) -> &[Vec<S>] {
        &self.velocities
    }

    pub fn restore_velocities(&mut self, velocities: Vec<Vec<S>>) {
        self.velocities = velocities;
        self.cursor = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_sgd_without_momentum_or_decay() {
        let mut opt = SgdMomentum::<f64>::new(0.1, 0.0, 0.0).unwrap();
        let mut theta = [1.0, -2.0];
        opt.begin_step();
        opt.update(&mut theta, &[0.5, -1.0]);
        assert!((theta[0] - 0.95).abs() < 1e-15);
        assert!((theta[1] + 1.9).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_augments_gradient() {
        let mut opt = SgdMomentum::<f64>::new(0.1, 0.0, 0.01).unwrap();
        let mut theta = [2.0];
        opt.begin_step();
        opt.update(&mut theta, &[0.0]);
        // effective gradient = 0 + 0.01 * 2
        assert!((theta[0] - (2.0 - 0.1 * 0.02)).abs() < 1e-15);
    }

    #[test]
    fn momentum_recurrence() {
        let m = 0.9;
        let mut opt = SgdMomentum::<f64>::new(1.0, m, 0.0).unwrap();
        let mut theta = [0.0];
        let g1 = 1.0;
        let g2 = 0.5;
        opt.begin_step();
        opt.update(&mut theta, &[g1]);
        // v1 = g1
        assert!((theta[0] + g1).abs() < 1e-15);
        opt.begin_step();
        opt.update(&mut theta, &[g2]);
        // v2 = m*v1 + g2
        let v2 = m * g1 + g2;
        assert!((theta[0] + g1 + v2).abs() < 1e-15);
    }

    #[test]
    fn nonpositive_lr_rejected() {
        assert!(SgdMomentum::<f64>::new(0.0, 0.9, 0.0).is_err());
        assert!(SgdMomentum::<f64>::new(-0.1, 0.9, 0.0).is_err());
    }
}
