//! Learning-rate and weight-decay schedules as piecewise segments.
//!
//! Every curve is a list of contiguous [`Segment`]s covering `[0, total)`
//! iterations. A segment interpolates between its endpoint values with
//!
//! ```text
//! value(u) = end + (start - end) * (1 - u)^power,   u = (iter - s)/(e - s)
//! ```
//!
//! which is linear for power 1 and the endpoint-anchored polynomial decay
//! for power 2. Builders produce the named curves used for large-minibatch
//! training: linear decay with warm-up, classic 3-step decay, the final
//! collapse (power-2 tail with doubled weight decay and augmentation off),
//! the cyclic collapsed-ensemble schedule, and multi-step weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weight decay used before a collapse phase (half the classic 1e-4).
pub const WEIGHT_DECAY_LOW: f64 = 0.00005;
/// Classic weight decay, restored during collapse phases.
pub const WEIGHT_DECAY_COLLAPSE: f64 = 0.0001;

/// One piecewise-polynomial span over `[start_iter, end_iter)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start_iter: u64,
    pub end_iter: u64,
    pub start_value: f64,
    pub end_value: f64,
    pub power: f64,
}

impl Segment {
    fn validate(&self) -> Result<()> {
        if self.start_iter >= self.end_iter {
            return Err(Error::Schedule(format!(
                "segment [{}, {}) is empty",
                self.start_iter, self.end_iter
            )));
        }
        if self.start_value < 0.0 || self.end_value < 0.0 {
            return Err(Error::Schedule("segment values must be >= 0".into()));
        }
        if !(self.power > 0.0) {
            return Err(Error::Schedule("segment power must be positive".into()));
        }
        Ok(())
    }

    fn value_at(&self, iter: u64) -> f64 {
        // Exact at the left endpoint so builder anchors are hit bit-for-bit.
        if iter == self.start_iter {
            return self.start_value;
        }
        let u = (iter - self.start_iter) as f64 / (self.end_iter - self.start_iter) as f64;
        self.end_value + (self.start_value - self.end_value) * (1.0 - u).powf(self.power)
    }
}

/// Whether a spec describes a learning-rate or weight-decay curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScheduleKind {
    LearningRate,
    WeightDecay,
}

/// Ordered, gap-free list of segments covering `[0, total_iters)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    segments: Vec<Segment>,
    kind: ScheduleKind,
}

impl ScheduleSpec {
    /// Validates contiguity: the first segment starts at 0 and each segment
    /// starts where the previous one ended.
    pub fn new(segments: Vec<Segment>, kind: ScheduleKind) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Schedule("schedule has no segments".into()));
        }
        let mut expected_start = 0u64;
        for seg in &segments {
            seg.validate()?;
            if seg.start_iter != expected_start {
                return Err(Error::Schedule(format!(
                    "segment starts at {} but previous coverage ends at {}",
                    seg.start_iter, expected_start
                )));
            }
            expected_start = seg.end_iter;
        }
        Ok(ScheduleSpec { segments, kind })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// One past the last covered iteration.
    pub fn total_iters(&self) -> u64 {
        self.segments.last().map(|s| s.end_iter).unwrap_or(0)
    }

    /// Evaluate the curve at an iteration index.
    pub fn value_at(&self, iter: u64) -> Result<f64> {
        let total = self.total_iters();
        if iter >= total {
            return Err(Error::IterOutOfRange { iter, total });
        }
        let seg = self
            .segments
            .iter()
            .find(|s| iter >= s.start_iter && iter < s.end_iter)
            .expect("contiguous coverage was validated");
        Ok(seg.value_at(iter))
    }

    /// True when consecutive segments meet at equal values (no jumps).
    /// Step schedules (3-step decay, weight-decay steps) return false.
    pub fn is_continuous(&self) -> bool {
        self.segments
            .windows(2)
            .all(|w| w[0].end_value == w[1].start_value)
    }

    /// Sample `(iter, value)` every `stride` iterations, starting at 0.
    pub fn dump_curve(&self, stride: u64) -> Result<Vec<(u64, f64)>> {
        if stride == 0 {
            return Err(Error::InvalidArgument("stride must be >= 1".into()));
        }
        (0..self.total_iters())
            .step_by(stride as usize)
            .map(|i| Ok((i, self.value_at(i)?)))
            .collect()
    }
}

/// How the peak learning rate is derived from the global batch size.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScalingRule {
    /// Reference learning rate for a 256-example global batch.
    pub base_lr_per_256: f64,
    /// Hard ceiling on the scaled rate (runs at 16K batch and above sit here).
    pub lr_cap: f64,
    /// Length of the warm-up ramp, in epochs.
    pub warmup_epochs: f64,
}

impl Default for ScalingRule {
    fn default() -> Self {
        ScalingRule {
            base_lr_per_256: 0.1,
            lr_cap: 6.4,
            warmup_epochs: 5.0,
        }
    }
}

impl ScalingRule {
    fn validate(&self) -> Result<()> {
        if !(self.base_lr_per_256 > 0.0 && self.lr_cap > 0.0 && self.warmup_epochs > 0.0) {
            return Err(Error::InvalidArgument(
                "scaling rule fields must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Linearly scaled learning rate, capped: `min(base·B/256, cap)`.
    pub fn peak_lr(&self, global_batch: u64) -> f64 {
        (self.base_lr_per_256 * global_batch as f64 / 256.0).min(self.lr_cap)
    }
}

/// Learning-rate curve plus the weight-decay curve and capture points that
/// go with it. `augmentation_off_at` is the iteration from which scale and
/// aspect-ratio augmentation is disabled (random crop stays on).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleBundle {
    pub lr: ScheduleSpec,
    pub weight_decay: ScheduleSpec,
    pub snapshot_epochs: Vec<u32>,
    pub augmentation_off_at: Option<u64>,
}

fn epoch_iter(epoch: f64, iters_per_epoch: u64) -> u64 {
    (epoch * iters_per_epoch as f64).floor() as u64
}

fn check_epoch_args(iters_per_epoch: u64, total_epochs: u32) -> Result<()> {
    if iters_per_epoch == 0 {
        return Err(Error::InvalidArgument("iters_per_epoch must be >= 1".into()));
    }
    if total_epochs == 0 {
        return Err(Error::InvalidArgument("total_epochs must be >= 1".into()));
    }
    Ok(())
}

/// Constant weight-decay curve.
pub fn build_constant_wd(value: f64, total_iters: u64) -> Result<ScheduleSpec> {
    ScheduleSpec::new(
        vec![Segment {
            start_iter: 0,
            end_iter: total_iters,
            start_value: value,
            end_value: value,
            power: 1.0,
        }],
        ScheduleKind::WeightDecay,
    )
}

/// Warm-up from the base rate to the scaled peak, then linear (power-1
/// polynomial) decay to zero at `total_epochs`. The 90-epoch run is the
/// reference configuration.
pub fn build_linear(
    rule: &ScalingRule,
    global_batch: u64,
    iters_per_epoch: u64,
    total_epochs: u32,
) -> Result<ScheduleSpec> {
    rule.validate()?;
    check_epoch_args(iters_per_epoch, total_epochs)?;
    let total = total_epochs as u64 * iters_per_epoch;
    let warm_end = epoch_iter(rule.warmup_epochs, iters_per_epoch).min(total);
    let peak = rule.peak_lr(global_batch);
    let mut segments = Vec::new();
    if warm_end > 0 {
        segments.push(Segment {
            start_iter: 0,
            end_iter: warm_end,
            start_value: rule.base_lr_per_256.min(peak),
            end_value: peak,
            power: 1.0,
        });
    }
    if warm_end < total {
        segments.push(Segment {
            start_iter: warm_end,
            end_iter: total,
            start_value: peak,
            end_value: 0.0,
            power: 1.0,
        });
    }
    ScheduleSpec::new(segments, ScheduleKind::LearningRate)
}

/// Warm-up, then piecewise-constant with 10-fold drops. For the reference
/// 90-epoch run the drops land at epochs 30, 60 and 80; other budgets scale
/// those anchors proportionally (1/3, 2/3 and 8/9 of the budget).
pub fn build_3step(
    rule: &ScalingRule,
    global_batch: u64,
    iters_per_epoch: u64,
    total_epochs: u32,
) -> Result<ScheduleSpec> {
    rule.validate()?;
    check_epoch_args(iters_per_epoch, total_epochs)?;
    let total = total_epochs as u64 * iters_per_epoch;
    let warm_end = epoch_iter(rule.warmup_epochs, iters_per_epoch).min(total);
    let peak = rule.peak_lr(global_batch);
    let e = total_epochs as f64;
    let drops = [e / 3.0, 2.0 * e / 3.0, 8.0 * e / 9.0];

    let mut segments = Vec::new();
    if warm_end > 0 {
        segments.push(Segment {
            start_iter: 0,
            end_iter: warm_end,
            start_value: rule.base_lr_per_256.min(peak),
            end_value: peak,
            power: 1.0,
        });
    }
    let mut start = warm_end;
    let mut value = peak;
    for drop_epoch in drops {
        let end = epoch_iter(drop_epoch, iters_per_epoch).clamp(start, total);
        if end > start {
            segments.push(Segment {
                start_iter: start,
                end_iter: end,
                start_value: value,
                end_value: value,
                power: 1.0,
            });
            start = end;
        }
        value /= 10.0;
    }
    if start < total {
        segments.push(Segment {
            start_iter: start,
            end_iter: total,
            start_value: value,
            end_value: value,
            power: 1.0,
        });
    }
    ScheduleSpec::new(segments, ScheduleKind::LearningRate)
}

/// Replace the tail of a learning-rate curve with a collapse: from the
/// value where the base curve left off, decay to zero with power 2, double
/// the weight decay to 0.0001, and disable scale/aspect augmentation.
///
/// `collapse_epochs` is 0 (no collapse; the base curve is returned with a
/// constant low weight decay) or in `[3, 10]` as used in practice. The tail
/// split is exact for linear base segments, which is what the procedure
/// runs on: the pre-collapse phase always uses linear decay.
pub fn build_final_collapse(
    base: &ScheduleSpec,
    iters_per_epoch: u64,
    collapse_epochs: f64,
) -> Result<ScheduleBundle> {
    if base.kind() != ScheduleKind::LearningRate {
        return Err(Error::Schedule(
            "final collapse applies to a learning-rate curve".into(),
        ));
    }
    if collapse_epochs != 0.0 && !(3.0..=10.0).contains(&collapse_epochs) {
        return Err(Error::InvalidArgument(format!(
            "collapse_epochs must be 0 or in [3, 10], got {collapse_epochs}"
        )));
    }
    let total = base.total_iters();
    if collapse_epochs == 0.0 {
        return Ok(ScheduleBundle {
            lr: base.clone(),
            weight_decay: build_constant_wd(WEIGHT_DECAY_LOW, total)?,
            snapshot_epochs: Vec::new(),
            augmentation_off_at: None,
        });
    }
    let collapse_len = epoch_iter(collapse_epochs, iters_per_epoch);
    if collapse_len == 0 || collapse_len >= total {
        return Err(Error::Schedule(format!(
            "collapse of {collapse_len} iters does not fit a {total}-iter curve"
        )));
    }
    let start = total - collapse_len;
    let lr_at_start = base.value_at(start)?;

    let mut segments = Vec::new();
    for seg in base.segments() {
        if seg.end_iter <= start {
            segments.push(seg.clone());
        } else if seg.start_iter < start {
            segments.push(Segment {
                start_iter: seg.start_iter,
                end_iter: start,
                start_value: seg.start_value,
                end_value: lr_at_start,
                power: seg.power,
            });
        }
    }
    segments.push(Segment {
        start_iter: start,
        end_iter: total,
        start_value: lr_at_start,
        end_value: 0.0,
        power: 2.0,
    });
    let lr = ScheduleSpec::new(segments, ScheduleKind::LearningRate)?;

    let weight_decay = ScheduleSpec::new(
        vec![
            Segment {
                start_iter: 0,
                end_iter: start,
                start_value: WEIGHT_DECAY_LOW,
                end_value: WEIGHT_DECAY_LOW,
                power: 1.0,
            },
            Segment {
                start_iter: start,
                end_iter: total,
                start_value: WEIGHT_DECAY_COLLAPSE,
                end_value: WEIGHT_DECAY_COLLAPSE,
                power: 1.0,
            },
        ],
        ScheduleKind::WeightDecay,
    )?;

    Ok(ScheduleBundle {
        lr,
        weight_decay,
        snapshot_epochs: Vec::new(),
        augmentation_off_at: Some(start),
    })
}

/// Cyclic collapsed-ensemble curve over a 120-epoch budget:
///
/// * warm-up to the scaled peak;
/// * linear decay to epoch 30, continuing the slope a full linear run
///   would have (value `peak·(E−30)/(E−w)`);
/// * power-2 decay to 22% of the peak at epoch 45;
/// * five 15-epoch cycles: a 3-epoch linear rise by 3×, then a 12-epoch
///   power-2 fall to a quarter of the cycle peak (net 3/4 per cycle).
///
/// Snapshots are captured at the cycle ends: epochs 60, 75, 90, 105, 120.
/// A budget other than 120 epochs rescales every anchor proportionally
/// (including the warm-up and snapshot epochs). Weight decay starts at the
/// low value and doubles when the cyclic phase begins, which is also where
/// scale/aspect augmentation turns off.
pub fn build_collapsed_ensemble(
    rule: &ScalingRule,
    global_batch: u64,
    iters_per_epoch: u64,
    total_epochs: u32,
) -> Result<ScheduleBundle> {
    rule.validate()?;
    check_epoch_args(iters_per_epoch, total_epochs)?;
    let scale = total_epochs as f64 / 120.0;
    let at = |epoch_120: f64| epoch_iter(epoch_120 * scale, iters_per_epoch);

    let total = total_epochs as u64 * iters_per_epoch;
    let warm_end = at(rule.warmup_epochs);
    let a30 = at(30.0);
    let a45 = at(45.0);
    if !(warm_end > 0 && warm_end < a30 && a30 < a45) {
        return Err(Error::Schedule(
            "collapsed-ensemble anchors collapsed together; increase iters_per_epoch".into(),
        ));
    }
    let peak = rule.peak_lr(global_batch);
    // Endpoint the linear phase would reach at epoch 30 of a full linear run.
    let v30 = peak * (total_epochs as f64 - 30.0 * scale)
        / (total_epochs as f64 - rule.warmup_epochs * scale);
    let v45 = 0.22 * peak;

    let mut segments = vec![
        Segment {
            start_iter: 0,
            end_iter: warm_end,
            start_value: rule.base_lr_per_256.min(peak),
            end_value: peak,
            power: 1.0,
        },
        Segment {
            start_iter: warm_end,
            end_iter: a30,
            start_value: peak,
            end_value: v30,
            power: 1.0,
        },
        Segment {
            start_iter: a30,
            end_iter: a45,
            start_value: v30,
            end_value: v45,
            power: 2.0,
        },
    ];

    let mut snapshot_epochs = Vec::new();
    let mut cycle_start_value = v45;
    for cycle in 0..5u32 {
        let e0 = 45.0 + 15.0 * cycle as f64;
        let rise_start = at(e0);
        let rise_end = at(e0 + 3.0);
        let fall_end = at(e0 + 15.0);
        if !(rise_start < rise_end && rise_end < fall_end) {
            return Err(Error::Schedule(
                "collapsed-ensemble cycle anchors collapsed together".into(),
            ));
        }
        let cycle_peak = 3.0 * cycle_start_value;
        segments.push(Segment {
            start_iter: rise_start,
            end_iter: rise_end,
            start_value: cycle_start_value,
            end_value: cycle_peak,
            power: 1.0,
        });
        segments.push(Segment {
            start_iter: rise_end,
            end_iter: fall_end,
            start_value: cycle_peak,
            end_value: cycle_peak / 4.0,
            power: 2.0,
        });
        snapshot_epochs.push(((e0 + 15.0) * scale).round() as u32);
        cycle_start_value = cycle_peak / 4.0;
    }
    debug_assert_eq!(segments.last().unwrap().end_iter, total);

    let lr = ScheduleSpec::new(segments, ScheduleKind::LearningRate)?;
    let weight_decay = ScheduleSpec::new(
        vec![
            Segment {
                start_iter: 0,
                end_iter: a45,
                start_value: WEIGHT_DECAY_LOW,
                end_value: WEIGHT_DECAY_LOW,
                power: 1.0,
            },
            Segment {
                start_iter: a45,
                end_iter: total,
                start_value: WEIGHT_DECAY_COLLAPSE,
                end_value: WEIGHT_DECAY_COLLAPSE,
                power: 1.0,
            },
        ],
        ScheduleKind::WeightDecay,
    )?;

    Ok(ScheduleBundle {
        lr,
        weight_decay,
        snapshot_epochs,
        augmentation_off_at: Some(a45),
    })
}

/// Piecewise-constant, non-decreasing weight-decay curve from
/// `(start_epoch, value)` phases. The first phase must start at epoch 0.
pub fn build_multistep_wd(
    phases: &[(f64, f64)],
    iters_per_epoch: u64,
    total_epochs: u32,
) -> Result<ScheduleSpec> {
    check_epoch_args(iters_per_epoch, total_epochs)?;
    if phases.is_empty() {
        return Err(Error::Schedule("multistep wd needs at least one phase".into()));
    }
    if phases[0].0 != 0.0 {
        return Err(Error::Schedule("first wd phase must start at epoch 0".into()));
    }
    let total = total_epochs as u64 * iters_per_epoch;
    let mut segments = Vec::new();
    for (i, &(start_epoch, value)) in phases.iter().enumerate() {
        if i > 0 {
            let (prev_epoch, prev_value) = phases[i - 1];
            if start_epoch <= prev_epoch {
                return Err(Error::Schedule("wd phases must have increasing epochs".into()));
            }
            if value < prev_value {
                return Err(Error::Schedule(
                    "multistep weight decay must be non-decreasing".into(),
                ));
            }
        }
        let start = epoch_iter(start_epoch, iters_per_epoch);
        let end = match phases.get(i + 1) {
            Some(&(next, _)) => epoch_iter(next, iters_per_epoch),
            None => total,
        };
        if start >= total {
            return Err(Error::Schedule(format!(
                "wd phase at epoch {start_epoch} starts beyond the run"
            )));
        }
        segments.push(Segment {
            start_iter: start,
            end_iter: end.min(total),
            start_value: value,
            end_value: value,
            power: 1.0,
        });
    }
    ScheduleSpec::new(segments, ScheduleKind::WeightDecay)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seg(s: u64, e: u64, sv: f64, ev: f64, p: f64) -> Segment {
        Segment {
            start_iter: s,
            end_iter: e,
            start_value: sv,
            end_value: ev,
            power: p,
        }
    }

    #[test]
    fn linear_segment_midpoint() {
        // Midpoint of a 3.2 -> 0 linear decay.
        let spec = ScheduleSpec::new(vec![seg(0, 100, 3.2, 0.0, 1.0)], ScheduleKind::LearningRate)
            .unwrap();
        assert_eq!(spec.value_at(50).unwrap(), 1.6);
        assert_eq!(spec.value_at(0).unwrap(), 3.2);
    }

    #[test]
    fn warmup_interpolates_linearly() {
        // 5-epoch warm-up 0.1 -> 3.2 sampled at 2.5 epochs (ipe = 100).
        let spec = ScheduleSpec::new(vec![seg(0, 500, 0.1, 3.2, 1.0)], ScheduleKind::LearningRate)
            .unwrap();
        let v = spec.value_at(250).unwrap();
        assert!((v - 1.65).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn power2_segment_quarter_at_midpoint() {
        let spec = ScheduleSpec::new(vec![seg(0, 100, 1.0, 0.0, 2.0)], ScheduleKind::LearningRate)
            .unwrap();
        assert!((spec.value_at(50).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_is_an_error() {
        let spec =
            ScheduleSpec::new(vec![seg(0, 10, 1.0, 0.0, 1.0)], ScheduleKind::LearningRate).unwrap();
        assert!(matches!(
            spec.value_at(10),
            Err(Error::IterOutOfRange { iter: 10, total: 10 })
        ));
    }

    #[test]
    fn gaps_and_overlaps_rejected() {
        assert!(ScheduleSpec::new(
            vec![seg(0, 10, 1.0, 1.0, 1.0), seg(12, 20, 1.0, 1.0, 1.0)],
            ScheduleKind::LearningRate,
        )
        .is_err());
        assert!(ScheduleSpec::new(
            vec![seg(0, 10, 1.0, 1.0, 1.0), seg(8, 20, 1.0, 1.0, 1.0)],
            ScheduleKind::LearningRate,
        )
        .is_err());
        assert!(ScheduleSpec::new(vec![seg(5, 3, 1.0, 1.0, 1.0)], ScheduleKind::LearningRate)
            .is_err());
    }

    #[test]
    fn peak_lr_matches_linear_scaling_and_cap() {
        let rule = ScalingRule::default();
        assert_eq!(rule.peak_lr(8192), 3.2);
        assert_eq!(rule.peak_lr(256), 0.1);
        assert_eq!(rule.peak_lr(49152), 6.4);
        // 16K is exactly where the linear rule meets the cap.
        assert_eq!(rule.peak_lr(16384), 6.4);
    }

    #[test]
    fn linear_builder_shape() {
        let rule = ScalingRule::default();
        let spec = build_linear(&rule, 8192, 100, 90).unwrap();
        assert_eq!(spec.total_iters(), 9000);
        assert!(spec.is_continuous());
        assert_eq!(spec.value_at(0).unwrap(), 0.1);
        assert_eq!(spec.value_at(500).unwrap(), 3.2); // warm-up peak at epoch 5
        assert_eq!(spec.segments().last().unwrap().end_value, 0.0);
    }

    #[test]
    fn three_step_drops_tenfold_at_30_60_80() {
        let rule = ScalingRule::default();
        let spec = build_3step(&rule, 8192, 100, 90).unwrap();
        assert_eq!(spec.value_at(2999).unwrap(), 3.2);
        assert_eq!(spec.value_at(3000).unwrap(), 0.32);
        assert_eq!(spec.value_at(6000).unwrap(), 0.032);
        assert_eq!(spec.value_at(8000).unwrap(), 0.0032);
        assert!(!spec.is_continuous());
    }

    #[test]
    fn final_collapse_anchors() {
        let rule = ScalingRule::default();
        let base = build_linear(&rule, 4096, 100, 90).unwrap();
        let bundle = build_final_collapse(&base, 100, 5.0).unwrap();
        let start = 8500;
        assert_eq!(bundle.augmentation_off_at, Some(start));
        // Continuity: collapse starts from the value where the base left off.
        assert_eq!(
            bundle.lr.value_at(start).unwrap(),
            base.value_at(start).unwrap()
        );
        assert!(bundle.lr.is_continuous());
        // Power-2 tail ends at zero.
        assert_eq!(bundle.lr.segments().last().unwrap().end_value, 0.0);
        assert_eq!(bundle.lr.segments().last().unwrap().power, 2.0);
        // Weight decay steps 0.00005 -> 0.0001 at the collapse point.
        assert_eq!(bundle.weight_decay.value_at(start - 1).unwrap(), 0.00005);
        assert_eq!(bundle.weight_decay.value_at(start).unwrap(), 0.0001);
    }

    #[test]
    fn final_collapse_zero_epochs_returns_base() {
        let rule = ScalingRule::default();
        let base = build_linear(&rule, 4096, 100, 90).unwrap();
        let bundle = build_final_collapse(&base, 100, 0.0).unwrap();
        assert_eq!(bundle.lr, base);
        assert_eq!(bundle.augmentation_off_at, None);
        assert!(build_final_collapse(&base, 100, 1.0).is_err());
        assert!(build_final_collapse(&base, 100, 11.0).is_err());
    }

    #[test]
    fn collapsed_ensemble_anchor_values() {
        let rule = ScalingRule::default();
        let ipe = 100u64;
        let bundle = build_collapsed_ensemble(&rule, 4096, ipe, 120).unwrap();
        let peak = rule.peak_lr(4096);
        assert_eq!(peak, 1.6);
        let lr = &bundle.lr;
        assert!(lr.is_continuous());
        assert_eq!(lr.total_iters(), 12_000);
        // 22% of the peak at epoch 45.
        assert!((lr.value_at(4500).unwrap() - 0.22 * peak).abs() < 1e-12);
        // 3x rise over 3 epochs.
        assert!((lr.value_at(4800).unwrap() - 3.0 * lr.value_at(4500).unwrap()).abs() < 1e-12);
        // Cycle 2 starts at the cycle-1 peak divided by 4.
        assert!((lr.value_at(6000).unwrap() - 0.165 * peak).abs() < 1e-12);
        assert_eq!(bundle.snapshot_epochs, vec![60, 75, 90, 105, 120]);
        assert_eq!(bundle.augmentation_off_at, Some(4500));
        // Weight decay doubles when the cyclic phase starts.
        assert_eq!(bundle.weight_decay.value_at(4499).unwrap(), 0.00005);
        assert_eq!(bundle.weight_decay.value_at(4500).unwrap(), 0.0001);
    }

    #[test]
    fn collapsed_ensemble_cycle_net_three_quarters() {
        let rule = ScalingRule::default();
        let bundle = build_collapsed_ensemble(&rule, 4096, 50, 120).unwrap();
        let lr = &bundle.lr;
        for cycle in 0..5u64 {
            let start = (45 + 15 * cycle) * 50;
            let end_value = if cycle == 4 {
                lr.segments().last().unwrap().end_value
            } else {
                lr.value_at((60 + 15 * cycle) * 50).unwrap()
            };
            let start_value = lr.value_at(start).unwrap();
            assert!(
                (end_value - start_value * 0.75).abs() < 1e-12,
                "cycle {cycle}: {start_value} -> {end_value}"
            );
        }
    }

    #[test]
    fn collapsed_ensemble_rescales_other_budgets() {
        let rule = ScalingRule::default();
        let bundle = build_collapsed_ensemble(&rule, 4096, 100, 60).unwrap();
        // Anchors halve: cyclic phase starts at epoch 22.5, cycles end every
        // 7.5 epochs from 30.
        assert_eq!(bundle.snapshot_epochs, vec![30, 38, 45, 53, 60]);
        assert_eq!(bundle.augmentation_off_at, Some(2250));
        assert_eq!(bundle.lr.total_iters(), 6000);
    }

    #[test]
    fn multistep_wd_builds_non_decreasing_steps() {
        let spec = build_multistep_wd(&[(0.0, 5e-5), (40.0, 1e-4), (80.0, 2e-4)], 10, 100).unwrap();
        assert_eq!(spec.value_at(0).unwrap(), 5e-5);
        assert_eq!(spec.value_at(399).unwrap(), 5e-5);
        assert_eq!(spec.value_at(400).unwrap(), 1e-4);
        assert_eq!(spec.value_at(999).unwrap(), 2e-4);
        assert!(build_multistep_wd(&[(0.0, 2e-4), (40.0, 1e-4)], 10, 100).is_err());
        assert!(build_multistep_wd(&[(5.0, 1e-4)], 10, 100).is_err());
    }

    #[test]
    fn dump_curve_strides() {
        let spec =
            ScheduleSpec::new(vec![seg(0, 10, 1.0, 0.0, 1.0)], ScheduleKind::LearningRate).unwrap();
        let rows = spec.dump_curve(3).unwrap();
        assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), vec![0, 3, 6, 9]);
        assert!(spec.dump_curve(0).is_err());
    }

    proptest! {
        // Linear scaling is monotone in the batch size and saturates at the
        // cap from 16K up.
        #[test]
        fn prop_peak_lr_monotone_and_capped(a in 1u64..200_000, b in 1u64..200_000) {
            let rule = ScalingRule::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(rule.peak_lr(lo) <= rule.peak_lr(hi));
            if hi >= 16384 {
                prop_assert_eq!(rule.peak_lr(hi), rule.lr_cap);
            }
        }

        // Builder outputs stay non-negative everywhere.
        #[test]
        fn prop_builders_non_negative(batch in 256u64..65_536, ipe in 10u64..200, probe in 0u64..1_000) {
            let rule = ScalingRule::default();
            let linear = build_linear(&rule, batch, ipe, 90).unwrap();
            let ce = build_collapsed_ensemble(&rule, batch, ipe, 120).unwrap();
            for spec in [&linear, &ce.lr, &ce.weight_decay] {
                let iter = probe % spec.total_iters();
                prop_assert!(spec.value_at(iter).unwrap() >= 0.0);
            }
        }
    }
}
