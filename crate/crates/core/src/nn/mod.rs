//! Model construction and exact forward/backward passes.
//!
//! Two desk-scale architectures are provided: an MLP with batch-normalized
//! hidden layers, and a small residual conv net (stem conv + BN + ReLU,
//! identity residual blocks, global average pooling, linear head). Both are
//! assembled as a flat layer program; residual blocks are bracketed by
//! enter/exit markers so the backward walk mirrors the forward walk.
//!
//! Residual blocks have no post-add activation, so with the final block BN
//! initialized at `gamma = 0` the block is exactly the identity at
//! initialization.

pub mod layers;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamRole, ParamSet};
use crate::tensor::Tensor;

use layers::BnStats;

/// Batch-norm behaviour knobs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BnConfig {
    /// Moving-average fraction β in `S_t = (1−β)Y_t + β·S_{t−1}`.
    pub beta: f64,
    /// Variance stabilizer.
    pub epsilon: f32,
    /// Initial gamma of the last BN in each residual block (0 makes the
    /// block start as the identity).
    pub gamma_init_final_block: f32,
}

impl Default for BnConfig {
    fn default() -> Self {
        BnConfig {
            beta: 0.95,
            epsilon: 1e-5,
            gamma_init_final_block: 0.0,
        }
    }
}

impl BnConfig {
    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidArgument(format!(
                "bn beta must be in [0, 1], got {}",
                self.beta
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument("bn epsilon must be > 0".into()));
        }
        if !self.gamma_init_final_block.is_finite() {
            return Err(Error::InvalidArgument("bn gamma init must be finite".into()));
        }
        Ok(())
    }
}

/// Which architecture to build.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arch {
    /// Flatten, then `hidden` batch-normalized ReLU layers, then a linear head.
    Mlp { hidden: Vec<usize> },
    /// 3×3 conv stem and `blocks` identity residual blocks at `channels` width.
    SmallResnet { channels: usize, blocks: usize },
}

/// Complete, seeded description of a model. Two workers constructing the
/// same spec produce bit-identical parameter sets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Arch,
    /// Input geometry `[channels, height, width]`.
    pub input: [usize; 3],
    pub classes: usize,
    pub bn: BnConfig,
    pub seed: u64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        self.bn.validate()?;
        if self.classes < 2 {
            return Err(Error::InvalidArgument("need at least 2 classes".into()));
        }
        if self.input.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument("input extents must be positive".into()));
        }
        match &self.arch {
            Arch::Mlp { hidden } => {
                if hidden.iter().any(|&h| h == 0) {
                    return Err(Error::InvalidArgument("hidden widths must be positive".into()));
                }
            }
            Arch::SmallResnet { channels, blocks } => {
                if *channels == 0 {
                    return Err(Error::InvalidArgument("channel count must be positive".into()));
                }
                if *blocks == 0 {
                    return Err(Error::InvalidArgument(
                        "small-resnet needs at least one residual block".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Forward-pass mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Normalize over the current minibatch; running stats get an update.
    Train,
    /// Backprop-capable, but BN uses the accumulated running statistics and
    /// does not update them. Makes gradients linear in the batch.
    TrainFrozenBn,
    /// Inference: running statistics, no caches.
    Eval,
}

impl Mode {
    fn is_train(self) -> bool {
        matches!(self, Mode::Train | Mode::TrainFrozenBn)
    }
}

/// A labelled minibatch.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `[N, C, H, W]` inputs.
    pub inputs: Tensor,
    pub labels: Vec<u32>,
}

#[derive(Debug, Clone)]
enum Op {
    Flatten,
    Dense { name: String, in_dim: usize, out_dim: usize },
    Conv { name: String, in_ch: usize, out_ch: usize, k: usize },
    BatchNorm { name: String, channels: usize, final_of_block: bool },
    Relu,
    GlobalAvgPool,
    /// Remember the activation entering a residual block.
    ResidualEnter,
    /// Add the remembered activation to the block output.
    ResidualExit,
}

/// Compiled layer program for a [`ModelSpec`].
#[derive(Debug, Clone)]
pub struct Network {
    spec: ModelSpec,
    ops: Vec<Op>,
}

/// Result of a forward pass. Train-mode passes carry the caches backward
/// needs; eval passes do not.
#[derive(Debug)]
pub struct ForwardPass {
    pub logits: Tensor,
    pub loss: f64,
    mode: Mode,
    /// Activation entering each op (train modes only).
    inputs: Vec<Tensor>,
    /// Statistics used by each BN op, in op order (train modes only).
    bn_stats: Vec<BnStats>,
}

/// Gradients produced by a backward pass.
#[derive(Debug)]
pub struct Gradients {
    /// Mirrors the parameter layout; BN statistics entries are zero.
    pub params: ParamSet,
    /// Gradient of the mean loss w.r.t. the batch inputs.
    pub input: Tensor,
}

impl Network {
    pub fn new(spec: ModelSpec) -> Result<Network> {
        spec.validate()?;
        let mut ops = Vec::new();
        match &spec.arch {
            Arch::Mlp { hidden } => {
                ops.push(Op::Flatten);
                let mut dim = spec.input.iter().product::<usize>();
                for (i, &h) in hidden.iter().enumerate() {
                    ops.push(Op::Dense {
                        name: format!("fc{i}"),
                        in_dim: dim,
                        out_dim: h,
                    });
                    ops.push(Op::BatchNorm {
                        name: format!("bn{i}"),
                        channels: h,
                        final_of_block: false,
                    });
                    ops.push(Op::Relu);
                    dim = h;
                }
                ops.push(Op::Dense {
                    name: "head".into(),
                    in_dim: dim,
                    out_dim: spec.classes,
                });
            }
            Arch::SmallResnet { channels, blocks } => {
                let ch = *channels;
                ops.push(Op::Conv {
                    name: "stem.conv".into(),
                    in_ch: spec.input[0],
                    out_ch: ch,
                    k: 3,
                });
                ops.push(Op::BatchNorm {
                    name: "stem.bn".into(),
                    channels: ch,
                    final_of_block: false,
                });
                ops.push(Op::Relu);
                for b in 0..*blocks {
                    ops.push(Op::ResidualEnter);
                    ops.push(Op::Conv {
                        name: format!("block{b}.conv1"),
                        in_ch: ch,
                        out_ch: ch,
                        k: 3,
                    });
                    ops.push(Op::BatchNorm {
                        name: format!("block{b}.bn1"),
                        channels: ch,
                        final_of_block: false,
                    });
                    ops.push(Op::Relu);
                    ops.push(Op::Conv {
                        name: format!("block{b}.conv2"),
                        in_ch: ch,
                        out_ch: ch,
                        k: 3,
                    });
                    ops.push(Op::BatchNorm {
                        name: format!("block{b}.bn2"),
                        channels: ch,
                        final_of_block: true,
                    });
                    ops.push(Op::ResidualExit);
                }
                ops.push(Op::GlobalAvgPool);
                ops.push(Op::Dense {
                    name: "head".into(),
                    in_dim: ch,
                    out_dim: spec.classes,
                });
            }
        }
        Ok(Network { spec, ops })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Seeded He-style initialization. Deterministic: the same spec yields
    /// bit-identical parameters on every worker and every run.
    pub fn init_params(&self) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        let mut params = ParamSet::new();
        for op in &self.ops {
            match op {
                Op::Dense { name, in_dim, out_dim } => {
                    let std = (2.0 / *in_dim as f64).sqrt();
                    let dist = Normal::new(0.0, std).unwrap();
                    let w: Vec<f32> = (0..out_dim * in_dim)
                        .map(|_| dist.sample(&mut rng) as f32)
                        .collect();
                    params.insert(
                        format!("{name}.w"),
                        Tensor::from_vec(&[*out_dim, *in_dim], w).unwrap(),
                        ParamRole::Trainable,
                    );
                    params.insert(
                        format!("{name}.b"),
                        Tensor::zeros(&[*out_dim]),
                        ParamRole::Trainable,
                    );
                }
                Op::Conv { name, in_ch, out_ch, k } => {
                    let fan_in = in_ch * k * k;
                    let std = (2.0 / fan_in as f64).sqrt();
                    let dist = Normal::new(0.0, std).unwrap();
                    let w: Vec<f32> = (0..out_ch * in_ch * k * k)
                        .map(|_| dist.sample(&mut rng) as f32)
                        .collect();
                    params.insert(
                        format!("{name}.w"),
                        Tensor::from_vec(&[*out_ch, *in_ch, *k, *k], w).unwrap(),
                        ParamRole::Trainable,
                    );
                    params.insert(
                        format!("{name}.b"),
                        Tensor::zeros(&[*out_ch]),
                        ParamRole::Trainable,
                    );
                }
                Op::BatchNorm { name, channels, final_of_block } => {
                    let gamma = if *final_of_block {
                        self.spec.bn.gamma_init_final_block
                    } else {
                        1.0
                    };
                    params.insert(
                        format!("{name}.gamma"),
                        Tensor::full(&[*channels], gamma),
                        ParamRole::Trainable,
                    );
                    params.insert(
                        format!("{name}.beta"),
                        Tensor::zeros(&[*channels]),
                        ParamRole::Trainable,
                    );
                    params.insert(
                        format!("{name}.running_mean"),
                        Tensor::zeros(&[*channels]),
                        ParamRole::BnStatistic,
                    );
                    params.insert(
                        format!("{name}.running_var"),
                        Tensor::full(&[*channels], 1.0),
                        ParamRole::BnStatistic,
                    );
                }
                _ => {}
            }
        }
        params
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        let [c, h, w] = self.spec.input;
        let shape = batch.inputs.shape();
        if shape.len() != 4 || shape[1] != c || shape[2] != h || shape[3] != w {
            return Err(Error::ShapeMismatch {
                site: "input".into(),
                expected: vec![batch.labels.len(), c, h, w],
                actual: shape.to_vec(),
            });
        }
        if shape[0] != batch.labels.len() {
            return Err(Error::ShapeMismatch {
                site: "labels".into(),
                expected: vec![shape[0]],
                actual: vec![batch.labels.len()],
            });
        }
        Ok(())
    }

    fn param<'a>(&self, params: &'a ParamSet, name: &str) -> Result<&'a Tensor> {
        params
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter '{name}'")))
    }

    /// Run the network and compute the mean cross-entropy loss.
    pub fn forward(&self, params: &ParamSet, batch: &Batch, mode: Mode) -> Result<ForwardPass> {
        self.check_batch(batch)?;
        let train = mode.is_train();
        let mut inputs: Vec<Tensor> = Vec::new();
        let mut bn_stats: Vec<BnStats> = Vec::new();
        let mut shortcut: Vec<Tensor> = Vec::new();
        let mut x = batch.inputs.clone();

        for op in &self.ops {
            if train {
                inputs.push(x.clone());
            }
            x = match op {
                Op::Flatten => {
                    let n = x.shape()[0];
                    let d = x.len() / n;
                    x.reshape(&[n, d])?
                }
                Op::Dense { name, .. } => layers::dense_forward(
                    &x,
                    self.param(params, &format!("{name}.w"))?,
                    self.param(params, &format!("{name}.b"))?,
                    name,
                )?,
                Op::Conv { name, .. } => layers::conv2d_forward(
                    &x,
                    self.param(params, &format!("{name}.w"))?,
                    self.param(params, &format!("{name}.b"))?,
                    name,
                )?,
                Op::BatchNorm { name, .. } => {
                    let gamma = self.param(params, &format!("{name}.gamma"))?;
                    let shift = self.param(params, &format!("{name}.beta"))?;
                    let stats = if mode == Mode::Train {
                        layers::bn_batch_stats(&x)
                    } else {
                        let rm = self.param(params, &format!("{name}.running_mean"))?;
                        let rv = self.param(params, &format!("{name}.running_var"))?;
                        BnStats {
                            mean: rm.data().iter().map(|&v| v as f64).collect(),
                            var: rv.data().iter().map(|&v| v as f64).collect(),
                        }
                    };
                    let y = layers::bn_forward(&x, gamma, shift, &stats, self.spec.bn.epsilon);
                    if train {
                        bn_stats.push(stats);
                    }
                    y
                }
                Op::Relu => layers::relu_forward(&x),
                Op::GlobalAvgPool => layers::global_avg_pool_forward(&x),
                Op::ResidualEnter => {
                    shortcut.push(x.clone());
                    x
                }
                Op::ResidualExit => {
                    let sc = shortcut.pop().expect("balanced residual markers");
                    let data = x
                        .data()
                        .iter()
                        .zip(sc.data())
                        .map(|(&a, &b)| a + b)
                        .collect();
                    Tensor::from_vec(x.shape(), data)?
                }
            };
        }

        let (loss, _) = layers::softmax_cross_entropy(&x, &batch.labels)?;
        Ok(ForwardPass {
            logits: x,
            loss,
            mode,
            inputs,
            bn_stats,
        })
    }

    /// Backward pass for a train-mode forward. Produces one gradient tensor
    /// per trainable entry (zeros for BN statistics) plus the input gradient.
    pub fn backward(
        &self,
        params: &ParamSet,
        pass: &ForwardPass,
        batch: &Batch,
    ) -> Result<Gradients> {
        if !pass.mode.is_train() {
            return Err(Error::InvalidArgument(
                "backward requires a train-mode forward pass".into(),
            ));
        }
        if pass.inputs.len() != self.ops.len() {
            return Err(Error::InvalidArgument(
                "forward pass does not match this network".into(),
            ));
        }
        // Gradient set mirrors the parameter layout.
        let mut grads = ParamSet::new();
        for (name, entry) in params.iter() {
            grads.insert(name, Tensor::zeros(entry.tensor.shape()), entry.role);
        }

        let (_, mut dy) = layers::softmax_cross_entropy(&pass.logits, &batch.labels)?;
        let mut bn_idx = pass.bn_stats.len();
        let mut shortcut_grads: Vec<Tensor> = Vec::new();

        for (i, op) in self.ops.iter().enumerate().rev() {
            let x = &pass.inputs[i];
            dy = match op {
                Op::Flatten => dy.reshape(x.shape())?,
                Op::Dense { name, .. } => {
                    let w = self.param(params, &format!("{name}.w"))?;
                    let (dx, dw, db) = layers::dense_backward(x, w, &dy);
                    *grads.get_mut(&format!("{name}.w")).unwrap() = dw;
                    *grads.get_mut(&format!("{name}.b")).unwrap() = db;
                    dx
                }
                Op::Conv { name, .. } => {
                    let w = self.param(params, &format!("{name}.w"))?;
                    let (dx, dw, db) = layers::conv2d_backward(x, w, &dy);
                    *grads.get_mut(&format!("{name}.w")).unwrap() = dw;
                    *grads.get_mut(&format!("{name}.b")).unwrap() = db;
                    dx
                }
                Op::BatchNorm { name, .. } => {
                    bn_idx -= 1;
                    let gamma = self.param(params, &format!("{name}.gamma"))?;
                    let stats = &pass.bn_stats[bn_idx];
                    let (dx, dgamma, dshift) = if pass.mode == Mode::Train {
                        layers::bn_backward_batch(x, gamma, stats, self.spec.bn.epsilon, &dy)
                    } else {
                        layers::bn_backward_frozen(x, gamma, stats, self.spec.bn.epsilon, &dy)
                    };
                    *grads.get_mut(&format!("{name}.gamma")).unwrap() = dgamma;
                    *grads.get_mut(&format!("{name}.beta")).unwrap() = dshift;
                    dx
                }
                Op::Relu => layers::relu_backward(x, &dy),
                Op::GlobalAvgPool => layers::global_avg_pool_backward(x.shape(), &dy),
                // Reverse walk: the block exit is where the gradient forks.
                Op::ResidualExit => {
                    shortcut_grads.push(dy.clone());
                    dy
                }
                Op::ResidualEnter => {
                    let sg = shortcut_grads.pop().expect("balanced residual markers");
                    let data = dy
                        .data()
                        .iter()
                        .zip(sg.data())
                        .map(|(&a, &b)| a + b)
                        .collect();
                    Tensor::from_vec(dy.shape(), data)?
                }
            };
        }

        Ok(Gradients {
            params: grads,
            input: dy,
        })
    }

    /// Fold the batch statistics of a [`Mode::Train`] pass into the running
    /// statistics: `S ← (1−β)·Y + β·S`.
    pub fn apply_bn_updates(&self, params: &mut ParamSet, pass: &ForwardPass) -> Result<()> {
        if pass.mode != Mode::Train {
            return Ok(());
        }
        let beta = self.spec.bn.beta;
        let mut bn_idx = 0;
        for op in &self.ops {
            if let Op::BatchNorm { name, .. } = op {
                let stats = &pass.bn_stats[bn_idx];
                bn_idx += 1;
                for (suffix, values) in [("running_mean", &stats.mean), ("running_var", &stats.var)]
                {
                    let key = format!("{name}.{suffix}");
                    let batch_value = Tensor::from_vec(
                        &[values.len()],
                        values.iter().map(|&v| v as f32).collect(),
                    )?;
                    let current = self.param(params, &key)?;
                    let updated = layers::bn_update_running(current, &batch_value, beta)?;
                    *params.get_mut(&key).unwrap() = updated;
                }
            }
        }
        Ok(())
    }

    /// Eval-mode class probabilities, one `f64` row per example.
    pub fn predict_probs(&self, params: &ParamSet, inputs: &Tensor) -> Result<Vec<Vec<f64>>> {
        let batch = Batch {
            inputs: inputs.clone(),
            labels: vec![0; inputs.shape()[0]],
        };
        let pass = self.forward(params, &batch, Mode::Eval)?;
        let c = self.spec.classes;
        Ok((0..inputs.shape()[0])
            .map(|n| layers::softmax_probs(&pass.logits.data()[n * c..(n + 1) * c]))
            .collect())
    }
}

/// Loss/accuracy summary of an evaluation pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub loss: f64,
    pub top1: f64,
    pub top5: f64,
}

/// Whether `label` ranks among the `k` highest probabilities. Ties break
/// toward the lower class index, deterministically.
pub fn in_top_k(probs: &[f64], label: usize, k: usize) -> bool {
    let p = probs[label];
    let better = probs
        .iter()
        .enumerate()
        .filter(|&(i, &v)| v > p || (v == p && i < label))
        .count();
    better < k
}

/// Evaluate a model on a labelled set using eval-mode (accumulated) BN
/// statistics, processing `eval_batch` examples at a time.
pub fn evaluate(
    net: &Network,
    params: &ParamSet,
    inputs: &Tensor,
    labels: &[u32],
    eval_batch: usize,
) -> Result<EvalMetrics> {
    let n = inputs.shape()[0];
    if labels.len() != n || n == 0 {
        return Err(Error::InvalidArgument(
            "evaluation needs a non-empty labelled set".into(),
        ));
    }
    let c: usize = net.spec.classes;
    let feat: usize = inputs.len() / n;
    let k = c.min(5);
    let mut loss = 0.0f64;
    let mut top1 = 0usize;
    let mut top5 = 0usize;
    let mut start = 0usize;
    while start < n {
        let end = (start + eval_batch.max(1)).min(n);
        let rows = end - start;
        let slice = Tensor::from_vec(
            &[rows, net.spec.input[0], net.spec.input[1], net.spec.input[2]],
            inputs.data()[start * feat..end * feat].to_vec(),
        )?;
        let probs = net.predict_probs(params, &slice)?;
        for (row, p) in probs.iter().enumerate() {
            let y = labels[start + row] as usize;
            loss -= p[y].max(f64::MIN_POSITIVE).ln();
            if in_top_k(p, y, 1) {
                top1 += 1;
            }
            if in_top_k(p, y, k) {
                top5 += 1;
            }
        }
        start = end;
    }
    Ok(EvalMetrics {
        loss: loss / n as f64,
        top1: top1 as f64 / n as f64,
        top5: top5 as f64 / n as f64,
    })
}
