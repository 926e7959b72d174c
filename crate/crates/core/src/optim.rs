//! Momentum SGD with coupled weight decay and warm-up momentum correction.
//!
//! The update is the Caffe-style form
//!
//! ```text
//! u ← m · (η_t/η_{t−1}) · u + η_t · (g + λ·w)
//! w ← w − u
//! ```
//!
//! where the `η_t/η_{t−1}` factor rescales the velocity when the learning
//! rate changes (warm-up momentum correction); it is applied only when
//! `η_{t−1} > 0`. Weight decay enters the velocity (coupled form). BN
//! statistics receive neither momentum nor decay, and BN gamma/shift
//! parameters are excluded from decay unless [`OptimConfig::decay_bn_params`]
//! is set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamRole, ParamSet};
use crate::sched::ScheduleSpec;
use crate::tensor::Tensor;

/// Optimizer hyperparameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OptimConfig {
    /// Momentum m in [0, 1).
    pub momentum: f64,
    /// Whether BN gamma/shift parameters receive weight decay.
    pub decay_bn_params: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            momentum: 0.9,
            decay_bn_params: false,
        }
    }
}

fn is_bn_affine(name: &str) -> bool {
    name.ends_with(".gamma") || name.ends_with(".beta")
}

/// Velocity buffers plus the schedules driving η and λ.
#[derive(Debug)]
pub struct OptimState {
    config: OptimConfig,
    lr_sched: ScheduleSpec,
    wd_sched: ScheduleSpec,
    velocity: ParamSet,
    prev_lr: f64,
}

impl OptimState {
    /// Velocity buffers are zero-initialized mirrors of the trainable
    /// entries.
    pub fn new(
        config: OptimConfig,
        lr_sched: ScheduleSpec,
        wd_sched: ScheduleSpec,
        params: &ParamSet,
    ) -> Result<OptimState> {
        if !(0.0..1.0).contains(&config.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must be in [0, 1), got {}",
                config.momentum
            )));
        }
        let mut velocity = ParamSet::new();
        for (name, e) in params.iter() {
            if e.role == ParamRole::Trainable {
                velocity.insert(name, Tensor::zeros(e.tensor.shape()), ParamRole::Trainable);
            }
        }
        Ok(OptimState {
            config,
            lr_sched,
            wd_sched,
            velocity,
            prev_lr: 0.0,
        })
    }

    pub fn lr_at(&self, iter: u64) -> Result<f64> {
        self.lr_sched.value_at(iter)
    }

    pub fn wd_at(&self, iter: u64) -> Result<f64> {
        self.wd_sched.value_at(iter)
    }

    /// Apply one update in place. `grads` must mirror the parameter layout
    /// (as produced by the backward pass, with zero BN-statistic entries).
    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet, iter: u64) -> Result<()> {
        if let Some(name) = grads.first_non_finite() {
            return Err(Error::NonFinite { name: name.into() });
        }
        let lr = self.lr_sched.value_at(iter)?;
        let wd = self.wd_sched.value_at(iter)?;
        let correction = if self.prev_lr > 0.0 {
            self.config.momentum * (lr / self.prev_lr)
        } else {
            self.config.momentum
        };

        for (name, entry) in params.iter_mut() {
            if entry.role != ParamRole::Trainable {
                continue;
            }
            let g = grads
                .get(name)
                .ok_or_else(|| Error::InvalidArgument(format!("missing gradient for '{name}'")))?;
            if g.shape() != entry.tensor.shape() {
                return Err(Error::ShapeMismatch {
                    site: format!("optim step for {name}"),
                    expected: entry.tensor.shape().to_vec(),
                    actual: g.shape().to_vec(),
                });
            }
            let lambda = if !self.config.decay_bn_params && is_bn_affine(name) {
                0.0
            } else {
                wd
            };
            let vel = self.velocity.get_mut(name).expect("velocity mirrors trainables");
            let w = entry.tensor.data_mut();
            let vd = vel.data_mut();
            let gd = g.data();
            for k in 0..w.len() {
                let u = correction * vd[k] as f64 + lr * (gd[k] as f64 + lambda * w[k] as f64);
                vd[k] = u as f32;
                w[k] = (w[k] as f64 - u) as f32;
            }
            if !vel.all_finite() {
                return Err(Error::NonFinite {
                    name: format!("velocity of {name}"),
                });
            }
        }
        self.prev_lr = lr;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sched::{build_constant_wd, ScheduleKind, ScheduleSpec, Segment};

    fn const_lr(value: f64, total: u64) -> ScheduleSpec {
        ScheduleSpec::new(
            vec![Segment {
                start_iter: 0,
                end_iter: total,
                start_value: value,
                end_value: value,
                power: 1.0,
            }],
            ScheduleKind::LearningRate,
        )
        .unwrap()
    }

    fn two_rate_lr(a: f64, b: f64) -> ScheduleSpec {
        ScheduleSpec::new(
            vec![
                Segment {
                    start_iter: 0,
                    end_iter: 1,
                    start_value: a,
                    end_value: a,
                    power: 1.0,
                },
                Segment {
                    start_iter: 1,
                    end_iter: 2,
                    start_value: b,
                    end_value: b,
                    power: 1.0,
                },
            ],
            ScheduleKind::LearningRate,
        )
        .unwrap()
    }

    fn scalar_params(w: f32) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::from_vec(&[1], vec![w]).unwrap(), ParamRole::Trainable);
        p
    }

    fn scalar_grads(g: f32) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::from_vec(&[1], vec![g]).unwrap(), ParamRole::Trainable);
        p
    }

    #[test]
    fn plain_sgd_when_momentum_and_decay_are_zero() {
        let mut params = scalar_params(1.0);
        let cfg = OptimConfig {
            momentum: 0.0,
            decay_bn_params: false,
        };
        let mut state =
            OptimState::new(cfg, const_lr(0.1, 4), build_constant_wd(0.0, 4).unwrap(), &params)
                .unwrap();
        state.step(&mut params, &scalar_grads(0.5), 0).unwrap();
        assert!((params.get("w").unwrap().data()[0] - 0.95).abs() < 1e-7);
    }

    #[test]
    fn hand_computed_two_step_trajectory() {
        // η = 0.1 then 0.05, m = 0.9, λ = 0, g = 0.5 then 0.3:
        //   step 1: u = 0.05,   w = 0.95
        //   step 2: u = 0.9·(0.05/0.1)·0.05 + 0.05·0.3 = 0.0375, w = 0.9125
        let mut params = scalar_params(1.0);
        let mut state = OptimState::new(
            OptimConfig::default(),
            two_rate_lr(0.1, 0.05),
            build_constant_wd(0.0, 2).unwrap(),
            &params,
        )
        .unwrap();
        state.step(&mut params, &scalar_grads(0.5), 0).unwrap();
        assert!((params.get("w").unwrap().data()[0] - 0.95).abs() < 1e-7);
        state.step(&mut params, &scalar_grads(0.3), 1).unwrap();
        assert!((params.get("w").unwrap().data()[0] - 0.9125).abs() < 1e-7);
    }

    #[test]
    fn hand_computed_trajectory_with_weight_decay() {
        // Same as above with λ = 1e-4 coupled into the velocity:
        //   step 1: u = 0.1·(0.5 + 1e-4·1.0)   = 0.05001,  w = 0.94999
        //   step 2: u = 0.045·0.5·... = 0.037509249950..., w = 0.91248075005
        let mut params = scalar_params(1.0);
        let mut state = OptimState::new(
            OptimConfig::default(),
            two_rate_lr(0.1, 0.05),
            build_constant_wd(1e-4, 2).unwrap(),
            &params,
        )
        .unwrap();
        state.step(&mut params, &scalar_grads(0.5), 0).unwrap();
        assert!((params.get("w").unwrap().data()[0] - 0.94999).abs() < 1e-7);
        state.step(&mut params, &scalar_grads(0.3), 1).unwrap();
        assert!((params.get("w").unwrap().data()[0] - 0.912_480_75).abs() < 1e-7);
    }

    #[test]
    fn constant_lr_reduces_to_standard_momentum() {
        // With a constant rate the correction factor is exactly m.
        let run = |steps: &[f32]| {
            let mut params = scalar_params(1.0);
            let mut state = OptimState::new(
                OptimConfig::default(),
                const_lr(0.1, steps.len() as u64),
                build_constant_wd(0.0, steps.len() as u64).unwrap(),
                &params,
            )
            .unwrap();
            for (i, &g) in steps.iter().enumerate() {
                state.step(&mut params, &scalar_grads(g), i as u64).unwrap();
            }
            params.get("w").unwrap().data()[0]
        };
        // Reference: classic u ← m·u + η·g computed by hand.
        let mut u = 0.0f64;
        let mut w = 1.0f64;
        for &g in &[0.5f64, 0.3, -0.2] {
            u = 0.9 * u + 0.1 * g;
            w -= u;
        }
        let got = run(&[0.5, 0.3, -0.2]);
        assert!((got as f64 - w).abs() < 1e-6, "{got} vs {w}");
    }

    #[test]
    fn gradient_scaling_and_lr_division_commute_without_decay() {
        // Scaling all gradients by c and dividing η by c gives the same
        // trajectory when λ = 0.
        let c = 8.0f32;
        let grads = [0.5f32, -0.25, 0.125, 0.5];
        let run = |lr: f64, scale: f32| {
            let mut params = scalar_params(1.0);
            let mut state = OptimState::new(
                OptimConfig::default(),
                const_lr(lr, grads.len() as u64),
                build_constant_wd(0.0, grads.len() as u64).unwrap(),
                &params,
            )
            .unwrap();
            for (i, &g) in grads.iter().enumerate() {
                state
                    .step(&mut params, &scalar_grads(g * scale), i as u64)
                    .unwrap();
            }
            params.get("w").unwrap().data()[0]
        };
        let a = run(0.1, 1.0);
        let b = run(0.1 / c as f64, c);
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }

    #[test]
    fn bn_affine_params_skip_decay_by_default() {
        let mut params = ParamSet::new();
        params.insert("bn0.gamma", Tensor::full(&[1], 1.0), ParamRole::Trainable);
        params.insert("fc.w", Tensor::full(&[1], 1.0), ParamRole::Trainable);
        let grads = {
            let mut g = ParamSet::new();
            g.insert("bn0.gamma", Tensor::zeros(&[1]), ParamRole::Trainable);
            g.insert("fc.w", Tensor::zeros(&[1]), ParamRole::Trainable);
            g
        };
        let mut state = OptimState::new(
            OptimConfig::default(),
            const_lr(1.0, 2),
            build_constant_wd(0.1, 2).unwrap(),
            &params,
        )
        .unwrap();
        state.step(&mut params, &grads, 0).unwrap();
        // gamma untouched (zero grad, no decay); fc.w decayed by η·λ·w.
        assert_eq!(params.get("bn0.gamma").unwrap().data()[0], 1.0);
        assert!((params.get("fc.w").unwrap().data()[0] - 0.9).abs() < 1e-6);

        let mut decaying = OptimState::new(
            OptimConfig {
                momentum: 0.9,
                decay_bn_params: true,
            },
            const_lr(1.0, 2),
            build_constant_wd(0.1, 2).unwrap(),
            &params,
        )
        .unwrap();
        let before = params.get("bn0.gamma").unwrap().data()[0];
        decaying.step(&mut params, &grads, 0).unwrap();
        assert!(params.get("bn0.gamma").unwrap().data()[0] < before);
    }

    #[test]
    fn bn_statistics_are_never_touched() {
        let mut params = ParamSet::new();
        params.insert("w", Tensor::full(&[1], 1.0), ParamRole::Trainable);
        params.insert("bn.running_mean", Tensor::full(&[1], 0.5), ParamRole::BnStatistic);
        let mut grads = ParamSet::new();
        grads.insert("w", Tensor::full(&[1], 1.0), ParamRole::Trainable);
        grads.insert("bn.running_mean", Tensor::zeros(&[1]), ParamRole::BnStatistic);
        let mut state = OptimState::new(
            OptimConfig::default(),
            const_lr(0.1, 2),
            build_constant_wd(1e-4, 2).unwrap(),
            &params,
        )
        .unwrap();
        state.step(&mut params, &grads, 0).unwrap();
        assert_eq!(params.get("bn.running_mean").unwrap().data()[0], 0.5);
    }

    #[test]
    fn non_finite_gradient_aborts_with_name() {
        let mut params = scalar_params(1.0);
        let mut state = OptimState::new(
            OptimConfig::default(),
            const_lr(0.1, 2),
            build_constant_wd(0.0, 2).unwrap(),
            &params,
        )
        .unwrap();
        let err = state
            .step(&mut params, &scalar_grads(f32::NAN), 0)
            .unwrap_err();
        match err {
            Error::NonFinite { name } => assert_eq!(name, "w"),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn momentum_out_of_range_is_rejected() {
        let params = scalar_params(1.0);
        let cfg = OptimConfig {
            momentum: 1.0,
            decay_bn_params: false,
        };
        assert!(OptimState::new(
            cfg,
            const_lr(0.1, 1),
            build_constant_wd(0.0, 1).unwrap(),
            &params
        )
        .is_err());
    }
}
