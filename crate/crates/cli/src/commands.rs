//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use scaleout_core::data::center_crop_set;
use scaleout_core::dist::{run_worker_tcp, ssgd_run, RunOptions, Transport, WorkerOutcome};
use scaleout_core::ensemble::{ensemble_eval, load_snapshot_dir};
use scaleout_core::nn::{evaluate, Network};
use scaleout_core::params::ParamSet;
use scaleout_core::perf::{project_ttt, AccuracyEpochMap, PerfTable, DEFAULT_DATASET_SIZE};
use scaleout_core::{Error, Result};

use crate::config::RunConfig;

/// Overrides from `train` command-line flags.
#[derive(Debug, Default)]
pub struct TrainOverrides {
    pub workers: Option<usize>,
    pub local_batch: Option<usize>,
    pub transport: Option<String>,
    pub listen: Option<String>,
    pub peers: Option<Vec<String>>,
    pub deterministic: Option<bool>,
    pub output_dir: Option<PathBuf>,
}

fn apply_overrides(config: &mut RunConfig, ov: &TrainOverrides) -> Result<()> {
    if let Some(w) = ov.workers {
        config.cluster.workers = w;
    }
    if let Some(b) = ov.local_batch {
        config.cluster.local_batch = b;
    }
    if let Some(t) = &ov.transport {
        config.cluster.transport = t.clone();
    }
    if let Some(peers) = &ov.peers {
        config.cluster.endpoints = peers.clone();
        config.cluster.transport = "tcp".into();
        config.cluster.workers = peers.len();
    }
    if let Some(d) = ov.deterministic {
        config.cluster.deterministic = d;
    }
    if let Some(dir) = &ov.output_dir {
        config.run.output_dir = dir.clone();
    }
    Ok(())
}

fn run_options(config: &RunConfig, output_dir: &Path) -> Result<RunOptions> {
    Ok(RunOptions {
        epochs: config.run.epochs,
        bn_frozen: config.model.bn.frozen,
        seed: config.run.seed,
        eval_batch: config.run.eval_batch,
        validate_every: 1,
        augment: config.augment_policy()?,
        stream_dir: Some(output_dir.to_path_buf()),
        snapshot_dir: Some(output_dir.join("snapshots")),
    })
}

fn write_run_artifacts(output_dir: &Path, worker: &WorkerOutcome) -> Result<()> {
    fs::write(output_dir.join("final.params"), worker.final_params.to_bytes())?;
    for epoch in &worker.metrics.capture_failures {
        eprintln!("warning: snapshot capture at epoch {epoch} failed; run continued");
    }
    Ok(())
}

/// `train`: run a full synchronous job from a config file.
pub fn cmd_train(config_path: &Path, overrides: TrainOverrides) -> Result<()> {
    let mut config = RunConfig::load(config_path)?;
    apply_overrides(&mut config, &overrides)?;

    let model = config.model_spec()?;
    let cluster = config.cluster_spec()?;
    let data = config.load_dataset()?;
    let global_batch = cluster.global_batch();
    if data.n_train() < global_batch {
        return Err(Error::Config(format!(
            "global batch {global_batch} exceeds training set of {}",
            data.n_train()
        )));
    }
    let ipe = (data.n_train() / global_batch) as u64;
    let bundle = config.schedule_bundle(global_batch as u64, ipe)?;
    let output_dir = config.run.output_dir.clone();
    fs::create_dir_all(&output_dir)?;
    fs::write(output_dir.join("run_config.toml"), config.to_toml()?)?;
    let options = run_options(&config, &output_dir)?;
    let optim = config.optim_config()?;

    let primary = match &cluster.transport {
        Transport::InProcess => {
            let outcome = ssgd_run(&model, Arc::new(data), &cluster, &bundle, optim, &options)?;
            outcome.workers.into_iter().next().expect("rank 0 present")
        }
        Transport::Tcp { endpoints } => {
            let listen = overrides
                .listen
                .as_ref()
                .ok_or_else(|| Error::Config("tcp transport needs --listen".into()))?;
            let rank = endpoints
                .iter()
                .position(|e| e == listen)
                .ok_or_else(|| Error::Config(format!("--listen {listen} not in peer list")))?;
            run_worker_tcp(
                rank,
                &model,
                &data,
                &cluster,
                &bundle,
                optim,
                &options,
                Duration::from_secs(60),
            )?
        }
    };

    for row in &primary.metrics.epochs {
        println!(
            "epoch {:>4}  wall {:>8.3}s  val_loss {:.4}  top1 {:.4}  top5 {:.4}",
            row.epoch, row.wall_seconds, row.val_loss, row.val_top1, row.val_top5
        );
    }
    if primary.rank == 0 {
        write_run_artifacts(&output_dir, &primary)?;
        println!(
            "wrote {} ({} snapshots)",
            output_dir.display(),
            primary.snapshots.len()
        );
    }
    Ok(())
}

fn print_eval(prefix: &str, m: scaleout_core::nn::EvalMetrics) {
    println!("{prefix} loss {:.4}  top1 {:.4}  top5 {:.4}", m.loss, m.top1, m.top5);
}

/// `eval`: score a saved parameter set on the config's validation split.
pub fn cmd_eval(config_path: &Path, params_path: &Path) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let net = Network::new(config.model_spec()?)?;
    let params = ParamSet::from_bytes(&fs::read(params_path)?)?;
    let data = config.load_dataset()?;
    let val = center_crop_set(data.val_inputs(), data.geometry, config.model.input)?;
    let metrics = evaluate(&net, &params, &val, data.val_labels(), config.run.eval_batch)?;
    print_eval("eval", metrics);
    Ok(())
}

/// `ensemble-eval`: score every snapshot and the probability-mean ensemble.
pub fn cmd_ensemble_eval(config_path: &Path, snapshots_dir: &Path) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let net = Network::new(config.model_spec()?)?;
    let data = config.load_dataset()?;
    let val = center_crop_set(data.val_inputs(), data.geometry, config.model.input)?;
    let snapshots = load_snapshot_dir(snapshots_dir)?;
    for snap in &snapshots {
        let m = evaluate(&net, &snap.params, &val, data.val_labels(), config.run.eval_batch)?;
        print_eval(&format!("snapshot epoch {:>4} cycle {}", snap.epoch, snap.cycle), m);
    }
    let members: Vec<&ParamSet> = snapshots.iter().map(|s| &s.params).collect();
    let ensemble = ensemble_eval(&net, &members, &val, data.val_labels(), config.run.eval_batch)?;
    print_eval(&format!("ensemble of {}", members.len()), ensemble);
    Ok(())
}

/// `project`: time-to-accuracy from a calibration table.
pub fn cmd_project(
    table: &str,
    workers: u32,
    local_batch: u32,
    target: f64,
    dataset_size: Option<u64>,
) -> Result<()> {
    let size = dataset_size.unwrap_or(DEFAULT_DATASET_SIZE);
    let table = if Path::new(table).exists() {
        PerfTable::from_csv_path(Path::new(table), size)?
    } else {
        PerfTable::builtin(table)?
    };
    let map = AccuracyEpochMap::default();
    let minutes = project_ttt(&table, workers, local_batch, target, &map)?;
    let row = table.lookup(workers, local_batch)?;
    println!(
        "workers {workers}  local_batch {local_batch}  {:.1} s/epoch  target {target}% -> {minutes} min",
        row.seconds_per_epoch
    );
    Ok(())
}

/// `schedule-dump`: CSV of the configured learning-rate/decay curves.
pub fn cmd_schedule_dump(config_path: &Path, stride: u64, out: Option<&Path>) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let cluster = config.cluster_spec()?;
    let data = config.load_dataset()?;
    let global_batch = cluster.global_batch();
    if data.n_train() < global_batch {
        return Err(Error::Config(format!(
            "global batch {global_batch} exceeds training set of {}",
            data.n_train()
        )));
    }
    let ipe = (data.n_train() / global_batch) as u64;
    let bundle = config.schedule_bundle(global_batch as u64, ipe)?;

    let mut text = String::from("iter,epoch,lr,weight_decay,augmentation_on\n");
    let aug_off = bundle.augmentation_off_at.unwrap_or(u64::MAX);
    let aug_enabled = config.augment_policy()?.enabled;
    for (iter, lr) in bundle.lr.dump_curve(stride)? {
        let wd = bundle.weight_decay.value_at(iter)?;
        let on = aug_enabled && iter < aug_off;
        text.push_str(&format!(
            "{iter},{:.6},{lr},{wd},{}\n",
            iter as f64 / ipe as f64,
            u8::from(on)
        ));
    }
    match out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}
