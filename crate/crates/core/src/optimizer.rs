//! Local SGD update: Nesterov momentum, coupled weight decay, milestone LR
//! decay.

use crate::error::{Error, Result};
use crate::numerics::ParamVector;

/// Hyper-parameters of the local optimizer, shared by all agents.
#[derive(Clone, Debug, PartialEq)]
pub struct OptSettings {
    pub base_lr: f64,
    /// Momentum coefficient beta in [0, 1).
    pub momentum: f64,
    /// Coupled weight decay lambda >= 0.
    pub weight_decay: f64,
    /// Epochs at which the learning rate is multiplied by `decay_factor`.
    pub milestones: Vec<usize>,
    pub decay_factor: f64,
    /// When false, weight decay skips bias parameters.
    pub decay_biases: bool,
}

impl Default for OptSettings {
    fn default() -> Self {
        OptSettings {
            base_lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            milestones: vec![],
            decay_factor: 0.1,
            decay_biases: true,
        }
    }
}

impl OptSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::invalid(format!(
                "optimizer: base_lr must be positive, got {}",
                self.base_lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!(
                "optimizer: momentum must be in [0,1), got {}",
                self.momentum
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::invalid(format!(
                "optimizer: weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor.is_finite()) {
            return Err(Error::invalid(format!(
                "optimizer: decay_factor must be positive, got {}",
                self.decay_factor
            )));
        }
        Ok(())
    }
}

/// Per-agent optimizer state: the momentum buffer plus the shared settings.
#[derive(Clone, Debug)]
pub struct OptState {
    settings: OptSettings,
    momentum_buf: ParamVector,
    /// true at bias coordinates; used only when `decay_biases` is false.
    bias_mask: Option<Vec<bool>>,
}

impl OptState {
    pub fn new(settings: OptSettings, dim: usize, bias_mask: Option<Vec<bool>>) -> Result<Self> {
        settings.validate()?;
        if let Some(mask) = &bias_mask {
            if mask.len() != dim {
                return Err(Error::DimensionMismatch {
                    left: mask.len(),
                    right: dim,
                });
            }
        }
        Ok(OptState {
            settings,
            momentum_buf: ParamVector::zeros(dim),
            bias_mask,
        })
    }

    pub fn settings(&self) -> &OptSettings {
        &self.settings
    }

    pub fn momentum_buf(&self) -> &ParamVector {
        &self.momentum_buf
    }

    /// Learning rate in effect at `epoch`: base_lr times decay_factor once
    /// per milestone that has been reached.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let hits = self
            .settings
            .milestones
            .iter()
            .filter(|&&m| m <= epoch)
            .count();
        self.settings.base_lr * self.settings.decay_factor.powi(hits as i32)
    }

    /// One Nesterov step:
    ///   g' = grad + lambda * params
    ///   u  = beta * u + g'
    ///   params -= lr * (g' + beta * u)
    pub fn nesterov_step(
        &mut self,
        params: &mut ParamVector,
        grad: &ParamVector,
        lr: f64,
    ) -> Result<()> {
        let d = params.len();
        if grad.len() != d {
            return Err(Error::DimensionMismatch {
                left: d,
                right: grad.len(),
            });
        }
        if self.momentum_buf.len() != d {
            return Err(Error::DimensionMismatch {
                left: d,
                right: self.momentum_buf.len(),
            });
        }
        let beta = self.settings.momentum;
        let lambda = self.settings.weight_decay;
        let p = params.as_mut_slice();
        let g = grad.as_slice();
        let u = self.momentum_buf.as_mut_slice();
        for k in 0..d {
            let decayed = if lambda == 0.0 {
                g[k]
            } else {
                let skip = !self.settings.decay_biases
                    && self.bias_mask.as_ref().map_or(false, |m| m[k]);
                if skip {
                    g[k]
                } else {
                    g[k] + lambda * p[k]
                }
            };
            u[k] = beta * u[k] + decayed;
            p[k] -= lr * (decayed + beta * u[k]);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(values: &[f64]) -> ParamVector {
        ParamVector::from_vec(values.to_vec()).unwrap()
    }

    fn settings(base_lr: f64, momentum: f64, weight_decay: f64) -> OptSettings {
        OptSettings {
            base_lr,
            momentum,
            weight_decay,
            milestones: vec![],
            decay_factor: 0.1,
            decay_biases: true,
        }
    }

    #[test]
    fn lr_milestone_decay() {
        let s = OptSettings {
            base_lr: 0.1,
            milestones: vec![150, 180],
            ..settings(0.1, 0.0, 0.0)
        };
        let st = OptState::new(s, 1, None).unwrap();
        assert_eq!(st.lr_at(0), 0.1);
        assert_eq!(st.lr_at(149), 0.1);
        assert!((st.lr_at(150) - 0.01).abs() < 1e-15);
        assert!((st.lr_at(180) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn lr_constant_without_milestones() {
        let st = OptState::new(settings(0.05, 0.0, 0.0), 1, None).unwrap();
        for epoch in [0usize, 10, 1000] {
            assert_eq!(st.lr_at(epoch), 0.05);
        }
    }

    #[test]
    fn beta_zero_is_plain_sgd() {
        let mut st = OptState::new(settings(0.1, 0.0, 0.0), 2, None).unwrap();
        let mut params = pv(&[1.0, -1.0]);
        st.nesterov_step(&mut params, &pv(&[2.0, 4.0]), 0.1).unwrap();
        assert_eq!(params.as_slice(), &[1.0 - 0.1 * 2.0, -1.0 - 0.1 * 4.0]);
    }

    #[test]
    fn constant_gradient_two_steps_hand_iterated() {
        // u1 = G, step1 = -lr*(1.9 G); u2 = 1.9 G, step2 = -lr*(1 + 1.71) G.
        let g = 3.0;
        let lr = 0.01;
        let mut st = OptState::new(settings(0.01, 0.9, 0.0), 1, None).unwrap();
        let mut params = pv(&[0.0]);

        st.nesterov_step(&mut params, &pv(&[g]), lr).unwrap();
        assert!((params.as_slice()[0] - (-lr * 1.9 * g)).abs() < 1e-15);
        assert!((st.momentum_buf().as_slice()[0] - g).abs() < 1e-15);

        let before = params.as_slice()[0];
        st.nesterov_step(&mut params, &pv(&[g]), lr).unwrap();
        assert!((st.momentum_buf().as_slice()[0] - 1.9 * g).abs() < 1e-14);
        assert!((params.as_slice()[0] - (before - lr * (1.0 + 1.71) * g)).abs() < 1e-14);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut st = OptState::new(settings(0.1, 0.9, 0.0), 2, None).unwrap();
        let mut params = pv(&[0.5, -0.5]);
        st.nesterov_step(&mut params, &ParamVector::zeros(2), 0.1).unwrap();
        assert_eq!(params.as_slice(), &[0.5, -0.5]);
    }

    #[test]
    fn weight_decay_couples_into_gradient() {
        let mut st = OptState::new(settings(1.0, 0.0, 0.1), 1, None).unwrap();
        let mut params = pv(&[2.0]);
        st.nesterov_step(&mut params, &ParamVector::zeros(1), 1.0).unwrap();
        // g' = 0 + 0.1*2 = 0.2; params = 2 - 0.2.
        assert!((params.as_slice()[0] - 1.8).abs() < 1e-15);
    }

    #[test]
    fn bias_mask_skips_decay_when_configured() {
        let s = OptSettings {
            decay_biases: false,
            ..settings(1.0, 0.0, 0.1)
        };
        let mut st = OptState::new(s, 2, Some(vec![false, true])).unwrap();
        let mut params = pv(&[2.0, 2.0]);
        st.nesterov_step(&mut params, &ParamVector::zeros(2), 1.0).unwrap();
        assert!((params.as_slice()[0] - 1.8).abs() < 1e-15);
        assert_eq!(params.as_slice()[1], 2.0);
    }

    #[test]
    fn dimension_mismatch_errors() {
        let mut st = OptState::new(settings(0.1, 0.0, 0.0), 2, None).unwrap();
        let mut params = pv(&[1.0, 2.0]);
        assert!(st.nesterov_step(&mut params, &pv(&[1.0]), 0.1).is_err());
    }

    #[test]
    fn invalid_settings_rejected() {
        assert!(OptState::new(settings(0.0, 0.0, 0.0), 1, None).is_err());
        assert!(OptState::new(settings(0.1, 1.0, 0.0), 1, None).is_err());
        assert!(OptState::new(settings(0.1, 0.0, -0.1), 1, None).is_err());
    }

    #[test]
    fn momentum_norm_stays_bounded_under_bounded_gradients() {
        let mut st = OptState::new(settings(0.01, 0.9, 0.0), 1, None).unwrap();
        let mut params = pv(&[0.0]);
        let g_bound = 2.0;
        for i in 0..500 {
            let g = if i % 2 == 0 { g_bound } else { -g_bound * 0.5 };
            st.nesterov_step(&mut params, &pv(&[g]), 0.01).unwrap();
            let u = st.momentum_buf().as_slice()[0];
            assert!(u.is_finite());
            assert!(u.abs() <= g_bound / (1.0 - 0.9) + 1e-9);
        }
        assert!(params.is_finite());
    }
}
