//! Dataset ingestion, deterministic batching, and augmentation.
//!
//! Two sources: a seeded synthetic Gaussian-cluster classifier (so the
//! whole test suite runs without downloads) and IDX-format image/label
//! file pairs. Batch sampling is a pure function of `(seed, iter)`, so
//! every worker draws the same global batch and takes its own shard;
//! augmentation draws from a per-worker stream keyed by
//! `(seed, rank, iter)`.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use rand::distributions::Uniform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Batch;
use crate::tensor::Tensor;

/// Parameters of the synthetic Gaussian-cluster task. Class overlap (and so
/// the attainable accuracy) is controlled by `separation / cluster_std`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    /// Geometry `[channels, height, width]`; examples are dense vectors of
    /// that volume.
    pub geometry: [usize; 3],
    pub n_train: usize,
    pub n_val: usize,
    /// Standard deviation of the per-class mean coordinates.
    pub separation: f64,
    /// Standard deviation of the noise around the class mean.
    pub cluster_std: f64,
    pub seed: u64,
}

/// A fully materialized dataset split into train and validation parts.
#[derive(Debug, Clone)]
pub struct DatasetHandle {
    pub geometry: [usize; 3],
    pub classes: usize,
    train_inputs: Tensor,
    train_labels: Vec<u32>,
    val_inputs: Tensor,
    val_labels: Vec<u32>,
}

impl DatasetHandle {
    pub fn n_train(&self) -> usize {
        self.train_labels.len()
    }

    pub fn n_val(&self) -> usize {
        self.val_labels.len()
    }

    pub fn val_inputs(&self) -> &Tensor {
        &self.val_inputs
    }

    pub fn val_labels(&self) -> &[u32] {
        &self.val_labels
    }

    fn feature_len(&self) -> usize {
        self.geometry.iter().product()
    }

    fn train_example(&self, index: usize) -> (&[f32], u32) {
        let f = self.feature_len();
        (
            &self.train_inputs.data()[index * f..(index + 1) * f],
            self.train_labels[index],
        )
    }

    /// Generate the Gaussian-cluster task. Train and validation examples
    /// are drawn from disjoint positions of one seeded stream.
    pub fn synthetic(spec: &SyntheticSpec) -> Result<DatasetHandle> {
        if spec.classes < 2 {
            return Err(Error::InvalidArgument("need at least 2 classes".into()));
        }
        if spec.n_train == 0 || spec.n_val == 0 {
            return Err(Error::InvalidArgument("train and val must be non-empty".into()));
        }
        let dim: usize = spec.geometry.iter().product();
        if dim == 0 {
            return Err(Error::InvalidArgument("geometry must be non-empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let normal = rand_distr::Normal::new(0.0f64, 1.0).unwrap();
        let means: Vec<Vec<f64>> = (0..spec.classes)
            .map(|_| {
                (0..dim)
                    .map(|_| rng.sample(normal) * spec.separation)
                    .collect()
            })
            .collect();

        let mut draw = |n: usize, offset: usize| {
            let mut inputs = Vec::with_capacity(n * dim);
            let mut labels = Vec::with_capacity(n);
            for i in 0..n {
                let class = (offset + i) % spec.classes;
                labels.push(class as u32);
                for d in 0..dim {
                    let v = means[class][d] + rng.sample(normal) * spec.cluster_std;
                    inputs.push(v as f32);
                }
            }
            (inputs, labels)
        };
        let (train_inputs, train_labels) = draw(spec.n_train, 0);
        let (val_inputs, val_labels) = draw(spec.n_val, spec.n_train);
        let [c, h, w] = spec.geometry;
        Ok(DatasetHandle {
            geometry: spec.geometry,
            classes: spec.classes,
            train_inputs: Tensor::from_vec(&[spec.n_train, c, h, w], train_inputs)?,
            train_labels,
            val_inputs: Tensor::from_vec(&[spec.n_val, c, h, w], val_inputs)?,
            val_labels,
        })
    }

    /// Load train/val splits from IDX image+label file pairs.
    pub fn from_idx(
        train_images: &Path,
        train_labels: &Path,
        val_images: &Path,
        val_labels: &Path,
        classes: usize,
    ) -> Result<DatasetHandle> {
        let (ti, geom) = read_idx_images(train_images)?;
        let tl = read_idx_labels(train_labels)?;
        let (vi, vgeom) = read_idx_images(val_images)?;
        let vl = read_idx_labels(val_labels)?;
        if geom != vgeom {
            return Err(Error::Format("train/val image geometry differs".into()));
        }
        if ti.shape()[0] != tl.len() || vi.shape()[0] != vl.len() {
            return Err(Error::Format("image/label counts differ".into()));
        }
        if let Some(&bad) = tl.iter().chain(vl.iter()).find(|&&l| l as usize >= classes) {
            return Err(Error::Format(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(DatasetHandle {
            geometry: geom,
            classes,
            train_inputs: ti,
            train_labels: tl,
            val_inputs: vi,
            val_labels: vl,
        })
    }
}

// ── IDX format ─────────────────────────────────────────────────────

const IDX_UBYTE: u8 = 0x08;
const IDX_F32: u8 = 0x0D;

fn read_idx(path: &Path) -> Result<(u8, Vec<usize>, Vec<u8>)> {
    let mut file = File::open(path)?;
    let mut raw = Vec::new();
    file.read_to_end(&mut raw)?;
    if raw.len() < 4 || raw[0] != 0 || raw[1] != 0 {
        return Err(Error::Format(format!("{}: bad IDX magic", path.display())));
    }
    let dtype = raw[2];
    let ndims = raw[3] as usize;
    let header = 4 + 4 * ndims;
    if raw.len() < header {
        return Err(Error::Format(format!("{}: truncated IDX header", path.display())));
    }
    let dims: Vec<usize> = (0..ndims)
        .map(|d| {
            u32::from_be_bytes([
                raw[4 + 4 * d],
                raw[5 + 4 * d],
                raw[6 + 4 * d],
                raw[7 + 4 * d],
            ]) as usize
        })
        .collect();
    Ok((dtype, dims, raw[header..].to_vec()))
}

/// Read an IDX image tensor. 3-D files are treated as single-channel
/// `[n, 1, H, W]`; 4-D files as `[n, C, H, W]`. u8 pixels are scaled to
/// `[0, 1]`; f32 payloads (big-endian, per the format) are taken as-is.
pub fn read_idx_images(path: &Path) -> Result<(Tensor, [usize; 3])> {
    let (dtype, dims, payload) = read_idx(path)?;
    let (n, geom) = match dims.as_slice() {
        [n, h, w] => (*n, [1usize, *h, *w]),
        [n, c, h, w] => (*n, [*c, *h, *w]),
        other => {
            return Err(Error::Format(format!(
                "{}: expected 3-D or 4-D IDX images, got {} dims",
                path.display(),
                other.len()
            )))
        }
    };
    let volume = n * geom[0] * geom[1] * geom[2];
    let data = match dtype {
        IDX_UBYTE => {
            if payload.len() != volume {
                return Err(Error::Format(format!("{}: truncated IDX data", path.display())));
            }
            payload.iter().map(|&b| b as f32 / 255.0).collect()
        }
        IDX_F32 => {
            if payload.len() != volume * 4 {
                return Err(Error::Format(format!("{}: truncated IDX data", path.display())));
            }
            payload
                .chunks_exact(4)
                .map(|c| f32::from_be_bytes([c[0], c[1], c[2], c[3]]))
                .collect()
        }
        other => {
            return Err(Error::Format(format!(
                "{}: unsupported IDX dtype 0x{other:02x}",
                path.display()
            )))
        }
    };
    Ok((
        Tensor::from_vec(&[n, geom[0], geom[1], geom[2]], data)?,
        geom,
    ))
}

/// Read a 1-D unsigned-byte IDX label vector.
pub fn read_idx_labels(path: &Path) -> Result<Vec<u32>> {
    let (dtype, dims, payload) = read_idx(path)?;
    if dtype != IDX_UBYTE || dims.len() != 1 {
        return Err(Error::Format(format!(
            "{}: labels must be a 1-D ubyte IDX file",
            path.display()
        )));
    }
    if payload.len() != dims[0] {
        return Err(Error::Format(format!("{}: truncated IDX data", path.display())));
    }
    Ok(payload.into_iter().map(|b| b as u32).collect())
}

// ── Batch sampling ─────────────────────────────────────────────────

fn batch_rng(seed: u64, iter: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iter);
    rng
}

fn worker_rng(seed: u64, rank: usize, iter: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    rng.set_stream(((rank as u64) << 40) ^ iter);
    rng
}

/// Draw the index set of one global minibatch. Deterministic in
/// `(seed, iter)`; indices are sampled without replacement.
pub fn sample_global_batch(
    data: &DatasetHandle,
    iter: u64,
    global_batch: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if global_batch == 0 {
        return Err(Error::InvalidArgument("global batch must be positive".into()));
    }
    if global_batch > data.n_train() {
        return Err(Error::InvalidArgument(format!(
            "global batch {global_batch} exceeds training set of {}",
            data.n_train()
        )));
    }
    let mut rng = batch_rng(seed, iter);
    Ok(rand::seq::index::sample(&mut rng, data.n_train(), global_batch).into_vec())
}

/// Split a sampled global batch into `n_workers` equal contiguous shards.
/// The shards partition the batch by construction.
pub fn shard_indices(global: &[usize], n_workers: usize) -> Result<Vec<Vec<usize>>> {
    if n_workers == 0 || global.len() % n_workers != 0 {
        return Err(Error::Config(format!(
            "global batch {} not divisible by {} workers",
            global.len(),
            n_workers
        )));
    }
    let per = global.len() / n_workers;
    Ok(global.chunks(per).map(|c| c.to_vec()).collect())
}

// ── Augmentation ───────────────────────────────────────────────────

/// Crop placement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CropMode {
    Center,
    Random,
}

/// Scale/aspect-ratio augmentation policy. When disabled only the crop is
/// applied (validation always uses a center crop).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub enabled: bool,
    /// Sampled crop area as a fraction of the source area.
    pub scale_area_range: [f64; 2],
    /// Sampled width/height ratio.
    pub aspect_range: [f64; 2],
    pub crop: CropMode,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            enabled: true,
            scale_area_range: [0.08, 1.0],
            aspect_range: [0.75, 4.0 / 3.0],
            crop: CropMode::Random,
        }
    }
}

impl AugmentPolicy {
    pub fn validate(&self) -> Result<()> {
        let [s0, s1] = self.scale_area_range;
        let [a0, a1] = self.aspect_range;
        if !(s0 > 0.0 && s0 <= s1 && s1 <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "scale area range [{s0}, {s1}] invalid"
            )));
        }
        if !(a0 > 0.0 && a0 <= a1) {
            return Err(Error::InvalidArgument(format!(
                "aspect range [{a0}, {a1}] invalid"
            )));
        }
        Ok(())
    }

    /// Policy with scale/aspect sampling turned off but the crop retained,
    /// as required once a collapse phase starts.
    pub fn without_scale_aspect(&self) -> AugmentPolicy {
        AugmentPolicy {
            enabled: false,
            ..self.clone()
        }
    }
}

fn crop_offset(limit: usize, mode: CropMode, rng: &mut ChaCha8Rng) -> usize {
    match mode {
        CropMode::Center => limit / 2,
        CropMode::Random => {
            if limit == 0 {
                0
            } else {
                rng.sample(Uniform::new_inclusive(0, limit))
            }
        }
    }
}

fn bilinear_resize(
    src: &[f32],
    channels: usize,
    sh: usize,
    sw: usize,
    th: usize,
    tw: usize,
) -> Vec<f32> {
    if sh == th && sw == tw {
        return src.to_vec();
    }
    let mut out = vec![0.0f32; channels * th * tw];
    for c in 0..channels {
        for y in 0..th {
            let fy = if th > 1 {
                y as f64 * (sh - 1) as f64 / (th - 1) as f64
            } else {
                0.0
            };
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(sh - 1);
            let dy = fy - y0 as f64;
            for x in 0..tw {
                let fx = if tw > 1 {
                    x as f64 * (sw - 1) as f64 / (tw - 1) as f64
                } else {
                    0.0
                };
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(sw - 1);
                let dx = fx - x0 as f64;
                let at = |yy: usize, xx: usize| src[(c * sh + yy) * sw + xx] as f64;
                let v = at(y0, x0) * (1.0 - dy) * (1.0 - dx)
                    + at(y0, x1) * (1.0 - dy) * dx
                    + at(y1, x0) * dy * (1.0 - dx)
                    + at(y1, x1) * dy * dx;
                out[(c * th + y) * tw + x] = v as f32;
            }
        }
    }
    out
}

/// Apply the augmentation policy to one `[C, H, W]` example and produce an
/// example of the target geometry.
///
/// Enabled: a crop window is drawn from the scale-area and aspect ranges,
/// placed per the crop mode, and resized to the target. Disabled: a crop of
/// exactly the target geometry is taken (center or random), no resize.
pub fn augment(
    example: &[f32],
    source: [usize; 3],
    target: [usize; 3],
    policy: &AugmentPolicy,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f32>> {
    policy.validate()?;
    let [c, sh, sw] = source;
    let [tc, th, tw] = target;
    if c != tc {
        return Err(Error::ShapeMismatch {
            site: "augment channels".into(),
            expected: vec![tc],
            actual: vec![c],
        });
    }
    if example.len() != c * sh * sw {
        return Err(Error::ShapeMismatch {
            site: "augment example".into(),
            expected: vec![c * sh * sw],
            actual: vec![example.len()],
        });
    }

    let (ch, cw) = if policy.enabled {
        let area = rng.gen_range(policy.scale_area_range[0]..=policy.scale_area_range[1])
            * (sh * sw) as f64;
        let aspect = rng.gen_range(policy.aspect_range[0]..=policy.aspect_range[1]);
        let cw = (area * aspect).sqrt().round().max(1.0) as usize;
        let ch = (area / aspect).sqrt().round().max(1.0) as usize;
        (ch.min(sh), cw.min(sw))
    } else {
        if th > sh || tw > sw {
            return Err(Error::InvalidArgument(format!(
                "crop {th}x{tw} larger than source {sh}x{sw}"
            )));
        }
        (th, tw)
    };

    let oy = crop_offset(sh - ch, policy.crop, rng);
    let ox = crop_offset(sw - cw, policy.crop, rng);
    let mut cropped = Vec::with_capacity(c * ch * cw);
    for ci in 0..c {
        for y in 0..ch {
            let row = (ci * sh + oy + y) * sw + ox;
            cropped.extend_from_slice(&example[row..row + cw]);
        }
    }
    Ok(bilinear_resize(&cropped, c, ch, cw, th, tw))
}

/// Center-crop every example of a `[N, C, H, W]` set to the target
/// geometry, with no resizing. This is the single-crop evaluation path;
/// validation never sees random augmentation.
pub fn center_crop_set(inputs: &Tensor, source: [usize; 3], target: [usize; 3]) -> Result<Tensor> {
    if source == target {
        return Ok(inputs.clone());
    }
    let [c, sh, sw] = source;
    let [tc, th, tw] = target;
    if tc != c || th > sh || tw > sw {
        return Err(Error::ShapeMismatch {
            site: "center_crop_set".into(),
            expected: target.to_vec(),
            actual: source.to_vec(),
        });
    }
    let n = inputs.shape()[0];
    let (oy, ox) = ((sh - th) / 2, (sw - tw) / 2);
    let mut out = Vec::with_capacity(n * c * th * tw);
    for e in 0..n {
        for ci in 0..c {
            for y in 0..th {
                let row = ((e * c + ci) * sh + oy + y) * sw + ox;
                out.extend_from_slice(&inputs.data()[row..row + tw]);
            }
        }
    }
    Tensor::from_vec(&[n, c, th, tw], out)
}

/// Materialize one worker shard as a training batch, applying augmentation
/// with the worker's own `(seed, rank, iter)` stream.
pub fn materialize_shard(
    data: &DatasetHandle,
    shard: &[usize],
    target: [usize; 3],
    policy: &AugmentPolicy,
    seed: u64,
    rank: usize,
    iter: u64,
) -> Result<Batch> {
    let mut rng = worker_rng(seed, rank, iter);
    let [c, h, w] = target;
    let mut inputs = Vec::with_capacity(shard.len() * c * h * w);
    let mut labels = Vec::with_capacity(shard.len());
    for &idx in shard {
        let (features, label) = data.train_example(idx);
        labels.push(label);
        if !policy.enabled && data.geometry == target {
            // A crop of the full geometry is the identity in either mode.
            inputs.extend_from_slice(features);
        } else {
            inputs.extend(augment(features, data.geometry, target, policy, &mut rng)?);
        }
    }
    Ok(Batch {
        inputs: Tensor::from_vec(&[shard.len(), c, h, w], inputs)?,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn spec() -> SyntheticSpec {
        SyntheticSpec {
            classes: 4,
            geometry: [1, 2, 3],
            n_train: 64,
            n_val: 16,
            separation: 2.0,
            cluster_std: 1.0,
            seed: 7,
        }
    }

    #[test]
    fn synthetic_is_deterministic_and_disjoint() {
        let a = DatasetHandle::synthetic(&spec()).unwrap();
        let b = DatasetHandle::synthetic(&spec()).unwrap();
        assert_eq!(a.train_inputs.data(), b.train_inputs.data());
        assert_eq!(a.val_inputs.data(), b.val_inputs.data());
        // Train and val come from disjoint stream positions: no shared rows.
        let f = a.feature_len();
        for vi in 0..a.n_val() {
            let val_row = &a.val_inputs.data()[vi * f..(vi + 1) * f];
            for ti in 0..a.n_train() {
                assert_ne!(&a.train_inputs.data()[ti * f..(ti + 1) * f], val_row);
            }
        }
    }

    #[test]
    fn synthetic_labels_in_range_and_balanced() {
        let d = DatasetHandle::synthetic(&spec()).unwrap();
        assert!(d.train_labels.iter().all(|&l| l < 4));
        let count0 = d.train_labels.iter().filter(|&&l| l == 0).count();
        assert_eq!(count0, 16);
    }

    #[test]
    fn batch_sampling_is_deterministic_and_in_range() {
        let d = DatasetHandle::synthetic(&spec()).unwrap();
        let a = sample_global_batch(&d, 3, 32, 42).unwrap();
        let b = sample_global_batch(&d, 3, 32, 42).unwrap();
        assert_eq!(a, b);
        let c = sample_global_batch(&d, 4, 32, 42).unwrap();
        assert_ne!(a, c);
        assert!(a.iter().all(|&i| i < d.n_train()));
        // Without replacement.
        let mut sorted = a.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), a.len());
    }

    #[test]
    fn shards_partition_the_batch() {
        let d = DatasetHandle::synthetic(&spec()).unwrap();
        let global = sample_global_batch(&d, 0, 32, 1).unwrap();
        let shards = shard_indices(&global, 4).unwrap();
        assert_eq!(shards.len(), 4);
        assert!(shards.iter().all(|s| s.len() == 8));
        let mut union: Vec<usize> = shards.concat();
        union.sort_unstable();
        let mut expected = global.clone();
        expected.sort_unstable();
        assert_eq!(union, expected);
        assert!(shard_indices(&global, 5).is_err());
    }

    #[test]
    fn single_worker_shard_is_whole_batch() {
        let d = DatasetHandle::synthetic(&spec()).unwrap();
        let global = sample_global_batch(&d, 0, 16, 1).unwrap();
        let shards = shard_indices(&global, 1).unwrap();
        assert_eq!(shards[0], global);
    }

    #[test]
    fn disabled_center_crop_is_deterministic_identity() {
        let d = DatasetHandle::synthetic(&spec()).unwrap();
        let policy = AugmentPolicy {
            enabled: false,
            crop: CropMode::Center,
            ..AugmentPolicy::default()
        };
        let shard = [0usize, 5, 9];
        let a = materialize_shard(&d, &shard, d.geometry, &policy, 1, 0, 0).unwrap();
        let b = materialize_shard(&d, &shard, d.geometry, &policy, 2, 1, 7).unwrap();
        assert_eq!(a.inputs.data(), b.inputs.data());
        let f = d.feature_len();
        assert_eq!(&a.inputs.data()[..f], d.train_example(0).0);
    }

    #[test]
    fn degenerate_ranges_equal_disabled_random_crop() {
        // With area and aspect pinned to 1, a square source, and equal
        // source/target geometry both paths produce the untouched example.
        let mut square = spec();
        square.geometry = [1, 3, 3];
        let d = DatasetHandle::synthetic(&square).unwrap();
        let enabled = AugmentPolicy {
            enabled: true,
            scale_area_range: [1.0, 1.0],
            aspect_range: [1.0, 1.0],
            crop: CropMode::Random,
        };
        let disabled = enabled.without_scale_aspect();
        let shard = [3usize, 4];
        let a = materialize_shard(&d, &shard, d.geometry, &enabled, 9, 0, 2).unwrap();
        let b = materialize_shard(&d, &shard, d.geometry, &disabled, 9, 0, 2).unwrap();
        assert_eq!(a.inputs.data(), b.inputs.data());
    }

    #[test]
    fn center_crop_set_takes_the_middle_window() {
        let inputs = Tensor::from_vec(
            &[1, 1, 4, 4],
            (0..16).map(|v| v as f32).collect(),
        )
        .unwrap();
        let out = center_crop_set(&inputs, [1, 4, 4], [1, 2, 2]).unwrap();
        assert_eq!(out.data(), &[5.0, 6.0, 9.0, 10.0]);
        assert!(center_crop_set(&inputs, [1, 4, 4], [1, 5, 5]).is_err());
        let same = center_crop_set(&inputs, [1, 4, 4], [1, 4, 4]).unwrap();
        assert_eq!(same.data(), inputs.data());
    }

    #[test]
    fn augment_always_yields_target_geometry() {
        let source = [2usize, 9, 7];
        let target = [2usize, 5, 5];
        let example: Vec<f32> = (0..source.iter().product::<usize>())
            .map(|i| i as f32 * 0.01)
            .collect();
        let policy = AugmentPolicy::default();
        let mut rng = worker_rng(11, 0, 0);
        for _ in 0..1000 {
            let out = augment(&example, source, target, &policy, &mut rng).unwrap();
            assert_eq!(out.len(), target.iter().product::<usize>());
            assert!(out.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn augment_rejects_bad_ranges_and_shapes() {
        let example = vec![0.0f32; 4];
        let mut rng = worker_rng(0, 0, 0);
        let mut policy = AugmentPolicy::default();
        policy.scale_area_range = [0.5, 0.2];
        assert!(augment(&example, [1, 2, 2], [1, 2, 2], &policy, &mut rng).is_err());
        let policy = AugmentPolicy::default();
        assert!(augment(&example, [1, 2, 2], [2, 2, 2], &policy, &mut rng).is_err());
        // Disabled crop larger than source.
        let disabled = policy.without_scale_aspect();
        assert!(augment(&example, [1, 2, 2], [1, 3, 3], &disabled, &mut rng).is_err());
    }

    #[test]
    fn idx_round_trip_ubyte() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("images.idx");
        let lbl_path = dir.path().join("labels.idx");
        // 2 images of 2x3 ubyte pixels.
        let mut img = vec![0u8, 0, 0x08, 3];
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&3u32.to_be_bytes());
        img.extend_from_slice(&[0, 51, 102, 153, 204, 255, 10, 20, 30, 40, 50, 60]);
        File::create(&img_path).unwrap().write_all(&img).unwrap();
        let mut lbl = vec![0u8, 0, 0x08, 1];
        lbl.extend_from_slice(&2u32.to_be_bytes());
        lbl.extend_from_slice(&[1, 0]);
        File::create(&lbl_path).unwrap().write_all(&lbl).unwrap();

        let (images, geom) = read_idx_images(&img_path).unwrap();
        assert_eq!(geom, [1, 2, 3]);
        assert_eq!(images.shape(), &[2, 1, 2, 3]);
        assert!((images.data()[1] - 0.2).abs() < 1e-6);
        assert_eq!(images.data()[5], 1.0);
        let labels = read_idx_labels(&lbl_path).unwrap();
        assert_eq!(labels, vec![1, 0]);

        let d = DatasetHandle::from_idx(&img_path, &lbl_path, &img_path, &lbl_path, 2).unwrap();
        assert_eq!(d.n_train(), 2);
        assert!(DatasetHandle::from_idx(&img_path, &lbl_path, &img_path, &lbl_path, 1).is_err());
    }

    #[test]
    fn idx_rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.idx");
        File::create(&p).unwrap().write_all(&[1, 0, 0x08, 1]).unwrap();
        assert!(read_idx_labels(&p).is_err());
        let mut short = vec![0u8, 0, 0x08, 1];
        short.extend_from_slice(&5u32.to_be_bytes());
        short.extend_from_slice(&[1, 2]);
        File::create(&p).unwrap().write_all(&short).unwrap();
        assert!(read_idx_labels(&p).is_err());
    }
}
