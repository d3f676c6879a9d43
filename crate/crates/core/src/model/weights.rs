//! Named weight tensors and their on-disk format.
//!
//! Layout (little endian, no padding):
//!
//! ```text
//! "YMUW" | u32 version (=1) | u32 tensor count | u32 num_classes
//! per tensor: u16 name length | name (UTF-8) | u8 rank | rank x u32 dims | f32 payload
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::graph::{ModelGraph, ParamRole};

pub const MAGIC: &[u8; 4] = b"YMUW";
pub const VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 16;

#[derive(Debug, Error)]
pub enum WeightError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported weight file version {0}")]
    BadVersion(u32),
    #[error("weight file truncated at byte {0}")]
    Truncated(usize),
    #[error("{0} trailing bytes after the last tensor")]
    TrailingBytes(usize),
    #[error("tensor name is not valid UTF-8")]
    BadName,
    #[error("duplicate tensor {0}")]
    Duplicate(String),
    #[error("tensor {name} has {len} elements but dims {dims:?}")]
    PayloadMismatch {
        name: String,
        dims: Vec<usize>,
        len: usize,
    },
    #[error("missing tensor {0}")]
    Missing(String),
    #[error("unexpected tensor {0}")]
    Unexpected(String),
    #[error("tensor {name} has shape {got:?}, graph expects {expected:?}")]
    ShapeMismatch {
        name: String,
        got: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("weights are for {got} classes, graph has {expected}")]
    ClassMismatch { got: usize, expected: usize },
    #[error("value too large for the file format: {0}")]
    TooLarge(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl ParamTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Self { dims, data }
    }

    /// Bitwise equality, so NaN payloads compare equal to themselves.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.dims == other.dims
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Weights keyed by `layer<id>.<role path>`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightStore {
    pub num_classes: usize,
    tensors: BTreeMap<String, ParamTensor>,
}

impl WeightStore {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: ParamTensor) -> Option<ParamTensor> {
        self.tensors.insert(name.into(), tensor)
    }

    pub fn get(&self, name: &str) -> Option<&ParamTensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamTensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamTensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ParamTensor)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn element_count(&self) -> usize {
        self.tensors.values().map(|t| t.data.len()).sum()
    }

    /// Element count excluding batch-norm running statistics.
    pub fn param_count(&self) -> usize {
        self.tensors
            .iter()
            .filter(|(name, _)| !name.ends_with(".running_mean") && !name.ends_with(".running_var"))
            .map(|(_, t)| t.data.len())
            .sum()
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.num_classes == other.num_classes
            && self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((na, a), (nb, b))| na == nb && a.bit_eq(b))
    }

    /// Checks that the store holds exactly the graph's tensors.
    pub fn validate(&self, graph: &ModelGraph) -> Result<(), WeightError> {
        if self.num_classes != graph.num_classes {
            return Err(WeightError::ClassMismatch {
                got: self.num_classes,
                expected: graph.num_classes,
            });
        }
        let manifest = graph.param_manifest();
        for spec in &manifest {
            let t = self
                .tensors
                .get(&spec.name)
                .ok_or_else(|| WeightError::Missing(spec.name.clone()))?;
            if t.dims != spec.dims {
                return Err(WeightError::ShapeMismatch {
                    name: spec.name.clone(),
                    got: t.dims.clone(),
                    expected: spec.dims.clone(),
                });
            }
        }
        if self.tensors.len() != manifest.len() {
            let known: std::collections::HashSet<&str> =
                manifest.iter().map(|s| s.name.as_str()).collect();
            if let Some(extra) = self.tensors.keys().find(|k| !known.contains(k.as_str())) {
                return Err(WeightError::Unexpected(extra.clone()));
            }
        }
        Ok(())
    }

    /// Size in bytes of the serialized store.
    pub fn encoded_len(&self) -> usize {
        HEADER_BYTES
            + self
                .tensors
                .iter()
                .map(|(name, t)| 2 + name.len() + 1 + 4 * t.dims.len() + 4 * t.data.len())
                .sum::<usize>()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, WeightError> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let count =
            u32::try_from(self.tensors.len()).map_err(|_| WeightError::TooLarge("tensor count"))?;
        out.extend_from_slice(&count.to_le_bytes());
        let nc =
            u32::try_from(self.num_classes).map_err(|_| WeightError::TooLarge("num_classes"))?;
        out.extend_from_slice(&nc.to_le_bytes());
        for (name, t) in &self.tensors {
            let len =
                u16::try_from(name.len()).map_err(|_| WeightError::TooLarge("name length"))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let rank = u8::try_from(t.dims.len()).map_err(|_| WeightError::TooLarge("rank"))?;
            out.push(rank);
            for &d in &t.dims {
                let d = u32::try_from(d).map_err(|_| WeightError::TooLarge("dimension"))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WeightError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        if &magic != MAGIC {
            return Err(WeightError::BadMagic(magic));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(WeightError::BadVersion(version));
        }
        let count = r.u32()? as usize;
        let num_classes = r.u32()? as usize;
        let mut store = WeightStore::new(num_classes);
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| WeightError::BadName)?
                .to_string();
            let rank = r.take(1)?[0] as usize;
            let dims = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let numel: usize = dims.iter().product();
            let payload = r.take(numel.checked_mul(4).ok_or(WeightError::Truncated(r.pos))?)?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            if store.tensors.contains_key(&name) {
                return Err(WeightError::Duplicate(name));
            }
            store.tensors.insert(name, ParamTensor { dims, data });
        }
        if r.pos != bytes.len() {
            return Err(WeightError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(store)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WeightError> {
        let end = self
            .pos
            .checked_add(n)
            .ok_or(WeightError::Truncated(self.pos))?;
        if end > self.bytes.len() {
            return Err(WeightError::Truncated(self.bytes.len()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, WeightError> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32, WeightError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

/// Seeded initialization: conv weights and biases uniform in
/// `±1/sqrt(fan_in)`, batch norm at identity, DFL projection `0..reg_max`.
pub fn init_weights(graph: &ModelGraph, seed: u64) -> WeightStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = WeightStore::new(graph.num_classes);
    for spec in graph.param_manifest() {
        let n = spec.numel();
        let data: Vec<f32> = match spec.role {
            ParamRole::ConvWeight { fan_in } | ParamRole::ConvBias { fan_in } => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                (0..n)
                    .map(|_| rng.gen_range(-bound..=bound) as f32)
                    .collect()
            }
            ParamRole::BnGamma | ParamRole::BnVar => vec![1.0; n],
            ParamRole::BnBeta | ParamRole::BnMean => vec![0.0; n],
            ParamRole::DflProjection => (0..n).map(|i| i as f32).collect(),
        };
        store.insert(spec.name, ParamTensor::new(spec.dims, data));
    }
    store
}

pub fn save_weights(store: &WeightStore, path: impl AsRef<Path>) -> Result<(), WeightError> {
    fs::write(path, store.to_bytes()?)?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightStore, WeightError> {
    WeightStore::from_bytes(&fs::read(path)?)
}

/// Loads and checks the store against `graph`.
pub fn load_weights_for(
    path: impl AsRef<Path>,
    graph: &ModelGraph,
) -> Result<WeightStore, WeightError> {
    let store = load_weights(path)?;
    store.validate(graph)?;
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::graph::build_yolov5mu;

    fn tiny_store() -> WeightStore {
        let mut s = WeightStore::new(2);
        s.insert(
            "layer0.conv.weight",
            ParamTensor::new(vec![2, 1, 1, 1], vec![1.5, -0.25]),
        );
        s.insert(
            "layer0.bn.weight",
            ParamTensor::new(vec![2], vec![f32::NAN, 3.0]),
        );
        s
    }

    #[test]
    fn init_is_deterministic_and_complete() {
        let g = build_yolov5mu(4).unwrap();
        let a = init_weights(&g, 7);
        let b = init_weights(&g, 7);
        assert!(a.bit_eq(&b));
        let c = init_weights(&g, 8);
        assert!(!a.bit_eq(&c));
        assert_eq!(a.param_count(), 25_067_452);
        a.validate(&g).unwrap();
        let dfl = a.get("layer24.dfl.conv.weight").unwrap();
        assert_eq!(dfl.data, (0..16).map(|i| i as f32).collect::<Vec<_>>());
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let g = build_yolov5mu(1).unwrap();
        let s = init_weights(&g, 3);
        let w = s.get("layer0.conv.weight").unwrap();
        let bound = 1.0 / (108f32).sqrt();
        assert!(w.data.iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn round_trip_and_size() {
        let s = tiny_store();
        let bytes = s.to_bytes().unwrap();
        // header + (2 + 18 + 1 + 16 + 8) + (2 + 16 + 1 + 4 + 8)
        assert_eq!(bytes.len(), 16 + 45 + 31);
        assert_eq!(bytes.len(), s.encoded_len());
        let back = WeightStore::from_bytes(&bytes).unwrap();
        assert!(back.bit_eq(&s));
    }

    #[test]
    fn rejects_corruption() {
        let bytes = tiny_store().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            WeightStore::from_bytes(&bad),
            Err(WeightError::BadMagic(_))
        ));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(
            WeightStore::from_bytes(&bad),
            Err(WeightError::BadVersion(2))
        ));
        assert!(matches!(
            WeightStore::from_bytes(&bytes[..bytes.len() - 1]),
            Err(WeightError::Truncated(_))
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(
            WeightStore::from_bytes(&long),
            Err(WeightError::TrailingBytes(1))
        ));
    }

    #[test]
    fn validate_reports_mismatches() {
        let g = build_yolov5mu(4).unwrap();
        let mut s = init_weights(&g, 1);
        s.get_mut("layer3.conv.weight").unwrap().dims = vec![1];
        assert!(matches!(
            s.validate(&g),
            Err(WeightError::ShapeMismatch { .. })
        ));

        let s = init_weights(&build_yolov5mu(3).unwrap(), 1);
        assert!(matches!(
            s.validate(&g),
            Err(WeightError::ClassMismatch { .. })
        ));

        let mut s = init_weights(&g, 1);
        s.tensors.remove("layer5.bn.bias");
        assert!(matches!(s.validate(&g), Err(WeightError::Missing(_))));

        let mut s = init_weights(&g, 1);
        s.insert("layer99.extra", ParamTensor::new(vec![1], vec![0.0]));
        assert!(matches!(s.validate(&g), Err(WeightError::Unexpected(_))));
    }
}
