//! Named, ordered collection of model tensors.
//!
//! A [`ParamSet`] is the unit that is replicated per worker, flattened for
//! the gradient allreduce, stepped by the optimizer, and serialized for
//! snapshots. Iteration order is insertion order and therefore identical on
//! every worker that constructs the same model.
//!
//! Binary format (all integers little-endian):
//!
//! ```text
//! magic "PSET" | version u32 | entry_count u32
//! per entry:
//!   name_len u32 | name bytes (utf-8) | role u8 | rank u64
//!   extents u64 × rank | values f32 × product(extents)
//! ```
//!
//! Round-trips are byte-exact: floats are written as raw IEEE 754 bits.

use std::io::{Read, Write};

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"PSET";
const VERSION: u32 = 1;

/// What a parameter entry is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    /// Updated by the optimizer, exchanged by the gradient allreduce.
    Trainable,
    /// Batch-norm running statistic: per-worker, never averaged or decayed.
    BnStatistic,
}

impl ParamRole {
    fn to_byte(self) -> u8 {
        match self {
            ParamRole::Trainable => 0,
            ParamRole::BnStatistic => 1,
        }
    }

    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(ParamRole::Trainable),
            1 => Ok(ParamRole::BnStatistic),
            other => Err(Error::Format(format!("unknown param role byte {other}"))),
        }
    }
}

/// One named tensor with its role.
#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub tensor: Tensor,
    pub role: ParamRole,
}

/// Ordered map name → tensor. The map preserves insertion order.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: IndexMap<String, ParamEntry>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert an entry. Names must be unique within a set.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor, role: ParamRole) {
        let name = name.into();
        debug_assert!(
            !self.entries.contains_key(&name),
            "duplicate param name {name}"
        );
        self.entries.insert(name, ParamEntry { tensor, role });
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|e| &e.tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name).map(|e| &mut e.tensor)
    }

    pub fn role(&self, name: &str) -> Option<ParamRole> {
        self.entries.get(name).map(|e| e.role)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Iterate in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamEntry)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total number of scalars across all entries.
    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(|e| e.tensor.len()).sum()
    }

    /// Number of scalars in trainable entries (the allreduce payload size).
    pub fn trainable_count(&self) -> usize {
        self.entries
            .values()
            .filter(|e| e.role == ParamRole::Trainable)
            .map(|e| e.tensor.len())
            .sum()
    }

    /// Name of the first entry containing a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.entries
            .iter()
            .find(|(_, e)| !e.tensor.all_finite())
            .map(|(k, _)| k.as_str())
    }

    /// Flatten trainable entries, in order, into one contiguous buffer.
    pub fn flatten_trainable(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.trainable_count());
        for e in self.entries.values() {
            if e.role == ParamRole::Trainable {
                out.extend_from_slice(e.tensor.data());
            }
        }
        out
    }

    /// Write a flat buffer produced by [`flatten_trainable`] back into the
    /// trainable entries. Length must match exactly.
    ///
    /// [`flatten_trainable`]: ParamSet::flatten_trainable
    pub fn unflatten_trainable(&mut self, flat: &[f32]) -> Result<()> {
        let expected = self.trainable_count();
        if flat.len() != expected {
            return Err(Error::ShapeMismatch {
                site: "ParamSet::unflatten_trainable".into(),
                expected: vec![expected],
                actual: vec![flat.len()],
            });
        }
        let mut off = 0;
        for e in self.entries.values_mut() {
            if e.role == ParamRole::Trainable {
                let n = e.tensor.len();
                e.tensor.data_mut().copy_from_slice(&flat[off..off + n]);
                off += n;
            }
        }
        Ok(())
    }

    /// Maximum absolute elementwise difference against another set with the
    /// same entry layout. Used by replica-consistency checks.
    pub fn max_abs_diff(&self, other: &ParamSet) -> Result<f32> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::ShapeMismatch {
                site: "ParamSet::max_abs_diff".into(),
                expected: vec![self.entries.len()],
                actual: vec![other.entries.len()],
            });
        }
        let mut max = 0.0f32;
        for ((name, a), (other_name, b)) in self.entries.iter().zip(other.entries.iter()) {
            if name != other_name || a.tensor.shape() != b.tensor.shape() {
                return Err(Error::ShapeMismatch {
                    site: format!("ParamSet::max_abs_diff entry {name}"),
                    expected: a.tensor.shape().to_vec(),
                    actual: b.tensor.shape().to_vec(),
                });
            }
            for (x, y) in a.tensor.data().iter().zip(b.tensor.data()) {
                max = max.max((x - y).abs());
            }
        }
        Ok(max)
    }

    /// True when both sets have identical layout and bit-identical values.
    pub fn bit_identical(&self, other: &ParamSet) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(other.entries.iter())
                .all(|((an, a), (bn, b))| {
                    an == bn
                        && a.role == b.role
                        && a.tensor.shape() == b.tensor.shape()
                        && a.tensor
                            .data()
                            .iter()
                            .zip(b.tensor.data())
                            .all(|(x, y)| x.to_bits() == y.to_bits())
                })
    }

    /// Serialize to the binary format described in the module docs.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, e) in &self.entries {
            let bytes = name.as_bytes();
            w.write_all(&(bytes.len() as u32).to_le_bytes())?;
            w.write_all(bytes)?;
            w.write_all(&[e.role.to_byte()])?;
            w.write_all(&(e.tensor.shape().len() as u64).to_le_bytes())?;
            for &ext in e.tensor.shape() {
                w.write_all(&(ext as u64).to_le_bytes())?;
            }
            for v in e.tensor.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Deserialize from the binary format. Strict: bad magic, version, or
    /// truncation is an error.
    pub fn read_from(r: &mut impl Read) -> Result<ParamSet> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad ParamSet magic".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported ParamSet version {version}"
            )));
        }
        let count = read_u32(r)?;
        let mut set = ParamSet::new();
        for _ in 0..count {
            let name_len = read_u32(r)? as usize;
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| Error::Format("param name is not utf-8".into()))?;
            let mut role_byte = [0u8; 1];
            r.read_exact(&mut role_byte)?;
            let role = ParamRole::from_byte(role_byte[0])?;
            let rank = read_u64(r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(r)? as usize);
            }
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            let mut buf = [0u8; 4];
            for _ in 0..len {
                r.read_exact(&mut buf)?;
                data.push(f32::from_le_bytes(buf));
            }
            set.insert(name, Tensor::from_vec(&shape, data)?, role);
        }
        Ok(set)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("vec write cannot fail");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ParamSet> {
        let mut cursor = bytes;
        let set = Self::read_from(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(Error::Format(format!(
                "{} trailing bytes after ParamSet",
                cursor.len()
            )));
        }
        Ok(set)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_set() -> ParamSet {
        let mut p = ParamSet::new();
        p.insert(
            "fc.w",
            Tensor::from_vec(&[2, 3], vec![0.5, -1.25, 3.0, 0.0, 2.5, -0.125]).unwrap(),
            ParamRole::Trainable,
        );
        p.insert(
            "fc.b",
            Tensor::from_vec(&[2], vec![0.1, -0.2]).unwrap(),
            ParamRole::Trainable,
        );
        p.insert(
            "bn.running_mean",
            Tensor::from_vec(&[2], vec![0.0, 1.0]).unwrap(),
            ParamRole::BnStatistic,
        );
        p
    }

    #[test]
    fn iteration_order_is_insertion_order() {
        let p = sample_set();
        let names: Vec<&str> = p.iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["fc.w", "fc.b", "bn.running_mean"]);
    }

    #[test]
    fn flatten_skips_bn_statistics() {
        let p = sample_set();
        assert_eq!(p.trainable_count(), 8);
        assert_eq!(p.scalar_count(), 10);
        let flat = p.flatten_trainable();
        assert_eq!(flat.len(), 8);
        assert_eq!(flat[0], 0.5);
        assert_eq!(flat[6], 0.1);
    }

    #[test]
    fn unflatten_restores_values_and_checks_len() {
        let mut p = sample_set();
        let mut flat = p.flatten_trainable();
        for v in flat.iter_mut() {
            *v += 1.0;
        }
        p.unflatten_trainable(&flat).unwrap();
        assert_eq!(p.get("fc.w").unwrap().data()[0], 1.5);
        // BN stat untouched
        assert_eq!(p.get("bn.running_mean").unwrap().data()[1], 1.0);
        assert!(p.unflatten_trainable(&flat[..3]).is_err());
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let p = sample_set();
        let bytes = p.to_bytes();
        let q = ParamSet::from_bytes(&bytes).unwrap();
        assert!(p.bit_identical(&q));
        assert_eq!(bytes, q.to_bytes());
    }

    #[test]
    fn read_rejects_bad_magic_and_truncation() {
        let p = sample_set();
        let mut bytes = p.to_bytes();
        bytes[0] = b'X';
        assert!(ParamSet::from_bytes(&bytes).is_err());
        let bytes = p.to_bytes();
        assert!(ParamSet::from_bytes(&bytes[..bytes.len() - 2]).is_err());
    }

    #[test]
    fn first_non_finite_names_the_entry() {
        let mut p = sample_set();
        p.get_mut("fc.b").unwrap().data_mut()[1] = f32::INFINITY;
        assert_eq!(p.first_non_finite(), Some("fc.b"));
    }

    proptest! {
        // Round-trip through bytes preserves every bit, including negative
        // zero and subnormals.
        #[test]
        fn prop_serialization_round_trip(values in proptest::collection::vec(any::<f32>(), 1..64)) {
            let finite: Vec<f32> = values
                .into_iter()
                .map(|v| if v.is_finite() { v } else { 0.0 })
                .collect();
            let n = finite.len();
            let mut p = ParamSet::new();
            p.insert("t", Tensor::from_vec(&[n], finite).unwrap(), ParamRole::Trainable);
            let q = ParamSet::from_bytes(&p.to_bytes()).unwrap();
            prop_assert!(p.bit_identical(&q));
        }
    }
}
