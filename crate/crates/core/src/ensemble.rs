//! Parameter snapshots at collapse-cycle ends and collapsed-ensemble
//! evaluation.
//!
//! A snapshot is the full parameter set at a cycle end plus its held-out
//! metrics. An ensemble combines member predictions by averaging softmax
//! probabilities per example (probability-mean), then scoring top-1/top-5
//! and the cross-entropy of the averaged distribution.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{evaluate, in_top_k, EvalMetrics, Network};
use crate::params::ParamSet;
use crate::tensor::Tensor;

/// Parameters captured at a collapse-cycle end.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub epoch: u32,
    /// 1-based cycle index within the run.
    pub cycle: u32,
    pub params: ParamSet,
    pub eval: EvalMetrics,
}

/// Sidecar metadata stored next to the serialized parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SnapshotMeta {
    epoch: u32,
    cycle: u32,
    eval: EvalMetrics,
}

/// Evaluate the current parameters on the held-out set and package them as
/// a snapshot.
pub fn capture(
    net: &Network,
    params: &ParamSet,
    val_inputs: &Tensor,
    val_labels: &[u32],
    epoch: u32,
    cycle: u32,
    eval_batch: usize,
) -> Result<Snapshot> {
    let eval = evaluate(net, params, val_inputs, val_labels, eval_batch)?;
    Ok(Snapshot {
        epoch,
        cycle,
        params: params.clone(),
        eval,
    })
}

fn snapshot_paths(dir: &Path, epoch: u32) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("epoch_{epoch:04}.params")),
        dir.join(format!("epoch_{epoch:04}.json")),
    )
}

/// Persist a snapshot as a params file plus a JSON sidecar.
pub fn save_snapshot(dir: &Path, snap: &Snapshot) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (params_path, meta_path) = snapshot_paths(dir, snap.epoch);
    fs::write(&params_path, snap.params.to_bytes())?;
    let meta = SnapshotMeta {
        epoch: snap.epoch,
        cycle: snap.cycle,
        eval: snap.eval,
    };
    let json = serde_json::to_string_pretty(&meta)
        .map_err(|e| Error::Format(format!("snapshot metadata: {e}")))?;
    fs::write(&meta_path, json)?;
    Ok(())
}

/// Load one snapshot from its params file (sidecar expected next to it).
pub fn load_snapshot(params_path: &Path) -> Result<Snapshot> {
    let bytes = fs::read(params_path)?;
    let params = ParamSet::from_bytes(&bytes)?;
    let meta_path = params_path.with_extension("json");
    let meta: SnapshotMeta = serde_json::from_str(&fs::read_to_string(&meta_path)?)
        .map_err(|e| Error::Format(format!("{}: {e}", meta_path.display())))?;
    Ok(Snapshot {
        epoch: meta.epoch,
        cycle: meta.cycle,
        params,
        eval: meta.eval,
    })
}

/// Load every `*.params` snapshot in a directory, ordered by epoch.
pub fn load_snapshot_dir(dir: &Path) -> Result<Vec<Snapshot>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|x| x == "params").unwrap_or(false))
        .collect();
    paths.sort();
    let mut snaps = Vec::with_capacity(paths.len());
    for p in paths {
        snaps.push(load_snapshot(&p)?);
    }
    if snaps.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no snapshots found in {}",
            dir.display()
        )));
    }
    Ok(snaps)
}

/// Evaluate a probability-mean ensemble of snapshots on a labelled set.
///
/// Per example the member softmax distributions are averaged; top-1/top-5
/// use the averaged distribution and the loss is its cross-entropy.
pub fn ensemble_eval(
    net: &Network,
    members: &[&ParamSet],
    inputs: &Tensor,
    labels: &[u32],
    eval_batch: usize,
) -> Result<EvalMetrics> {
    if members.is_empty() {
        return Err(Error::InvalidArgument("ensemble needs at least one member".into()));
    }
    let n = inputs.shape()[0];
    if labels.len() != n || n == 0 {
        return Err(Error::InvalidArgument(
            "evaluation needs a non-empty labelled set".into(),
        ));
    }
    for (idx, member) in members.iter().enumerate().skip(1) {
        let layouts_match = member.len() == members[0].len()
            && members[0]
                .iter()
                .zip(member.iter())
                .all(|((an, a), (bn, b))| an == bn && a.tensor.shape() == b.tensor.shape());
        if !layouts_match {
            return Err(Error::ShapeMismatch {
                site: format!("ensemble member {idx}"),
                expected: vec![members[0].scalar_count()],
                actual: vec![member.scalar_count()],
            });
        }
    }

    let c = net.spec().classes;
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
            &[rows, net.spec().input[0], net.spec().input[1], net.spec().input[2]],
            inputs.data()[start * feat..end * feat].to_vec(),
        )?;
        let mut mean_probs = vec![0.0f64; rows * c];
        for member in members {
            let probs = net.predict_probs(member, &slice)?;
            for (row, p) in probs.iter().enumerate() {
                for ci in 0..c {
                    mean_probs[row * c + ci] += p[ci];
                }
            }
        }
        for v in mean_probs.iter_mut() {
            *v /= members.len() as f64;
        }
        for row in 0..rows {
            let y = labels[start + row] as usize;
            let p = &mean_probs[row * c..(row + 1) * c];
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Arch, BnConfig, ModelSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn net_and_data(seed: u64) -> (Network, Tensor, Vec<u32>) {
        let spec = ModelSpec {
            arch: Arch::Mlp { hidden: vec![6] },
            input: [1, 2, 2],
            classes: 6,
            bn: BnConfig::default(),
            seed,
        };
        let net = Network::new(spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inputs = Tensor::from_vec(
            &[20, 1, 2, 2],
            (0..80).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let labels = (0..20).map(|i| (i % 6) as u32).collect();
        (net, inputs, labels)
    }

    #[test]
    fn ensemble_of_one_equals_single_model_eval() {
        let (net, inputs, labels) = net_and_data(1);
        let params = net.init_params();
        let single = evaluate(&net, &params, &inputs, &labels, 8).unwrap();
        let ens = ensemble_eval(&net, &[&params], &inputs, &labels, 8).unwrap();
        assert_eq!(single.top1, ens.top1);
        assert_eq!(single.top5, ens.top5);
        assert!((single.loss - ens.loss).abs() < 1e-9);
    }

    #[test]
    fn ensemble_of_identical_members_equals_single() {
        let (net, inputs, labels) = net_and_data(2);
        let params = net.init_params();
        let one = ensemble_eval(&net, &[&params], &inputs, &labels, 8).unwrap();
        let five = ensemble_eval(
            &net,
            &[&params, &params, &params, &params, &params],
            &inputs,
            &labels,
            8,
        )
        .unwrap();
        assert_eq!(one.top1, five.top1);
        assert!((one.loss - five.loss).abs() < 1e-9);
    }

    #[test]
    fn ensemble_is_invariant_to_member_order() {
        let (net, inputs, labels) = net_and_data(3);
        let a = net.init_params();
        let b = {
            let spec = ModelSpec {
                arch: Arch::Mlp { hidden: vec![6] },
                input: [1, 2, 2],
                classes: 6,
                bn: BnConfig::default(),
                seed: 77,
            };
            Network::new(spec).unwrap().init_params()
        };
        let ab = ensemble_eval(&net, &[&a, &b], &inputs, &labels, 8).unwrap();
        let ba = ensemble_eval(&net, &[&b, &a], &inputs, &labels, 8).unwrap();
        assert_eq!(ab.top1, ba.top1);
        assert_eq!(ab.top5, ba.top5);
        assert!((ab.loss - ba.loss).abs() < 1e-12);
    }

    #[test]
    fn empty_ensemble_is_an_error() {
        let (net, inputs, labels) = net_and_data(4);
        assert!(ensemble_eval(&net, &[], &inputs, &labels, 8).is_err());
    }

    #[test]
    fn snapshot_round_trips_byte_exactly() {
        let (net, inputs, labels) = net_and_data(5);
        let params = net.init_params();
        let snap = capture(&net, &params, &inputs, &labels, 60, 1, 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_snapshot(dir.path(), &snap).unwrap();
        let loaded = load_snapshot(&dir.path().join("epoch_0060.params")).unwrap();
        assert!(snap.params.bit_identical(&loaded.params));
        assert_eq!(loaded.epoch, 60);
        assert_eq!(loaded.cycle, 1);
        assert_eq!(loaded.eval, snap.eval);

        let all = load_snapshot_dir(dir.path()).unwrap();
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].epoch, 60);
    }

    #[test]
    fn loading_empty_snapshot_dir_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_snapshot_dir(dir.path()).is_err());
    }
}
