//! Neutral checkpoint container and the flatten/restore bridge to a single
//! parameter vector.
//!
//! File layout:
//!
//! ```text
//! [u64 LE header length][UTF-8 JSON header][raw little-endian data]
//! ```
//!
//! The header maps each tensor name to `{"dtype", "shape", "data_offsets"}`,
//! where `data_offsets` is a `[begin, end)` byte range relative to the start
//! of the data section. Ranges must tile the data section exactly.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Header record of one tensor as it appears in a container file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub data_offsets: (usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        }
    }

    /// Value at `index` widened to f64.
    pub fn get(&self, index: usize) -> f64 {
        match self {
            TensorData::F32(v) => f64::from(v[index]),
            TensorData::F64(v) => v[index],
        }
    }

    /// Stores `value`, narrowing to the tensor's dtype.
    pub fn set(&mut self, index: usize, value: f64) {
        match self {
            TensorData::F32(v) => v[index] = value as f32,
            TensorData::F64(v) => v[index] = value,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: TensorData,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self> {
        let expected = element_count(&shape)?;
        if expected != data.len() {
            return Err(Error::LengthMismatch {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn from_f64(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        Self::new(shape, TensorData::F64(values))
    }

    pub fn from_f32(shape: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        Self::new(shape, TensorData::F32(values))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut TensorData {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Bitwise equality, so NaN payloads and signed zeros compare exactly.
    pub fn bitwise_eq(&self, other: &Tensor) -> bool {
        if self.shape != other.shape {
            return false;
        }
        match (&self.data, &other.data) {
            (TensorData::F32(a), TensorData::F32(b)) => {
                a.iter().map(|x| x.to_bits()).eq(b.iter().map(|x| x.to_bits()))
            }
            (TensorData::F64(a), TensorData::F64(b)) => {
                a.iter().map(|x| x.to_bits()).eq(b.iter().map(|x| x.to_bits()))
            }
            _ => false,
        }
    }
}

fn element_count(shape: &[usize]) -> Result<usize> {
    shape
        .iter()
        .try_fold(1usize, |acc, &dim| acc.checked_mul(dim))
        .ok_or_else(|| Error::Container(format!("shape {shape:?} overflows element count")))
}

/// Named tensors, iterated in lexicographic (byte-wise) name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Option<Tensor> {
        self.tensors.insert(name.into(), tensor)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters (n_p).
    pub fn num_params(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn bitwise_eq(&self, other: &ParameterSet) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(other.tensors.iter())
                .all(|((na, ta), (nb, tb))| na == nb && ta.bitwise_eq(tb))
    }

    /// All values in flatten order, widened to f64, without finiteness checks.
    pub fn values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for tensor in self.tensors.values() {
            match &tensor.data {
                TensorData::F32(v) => out.extend(v.iter().map(|&x| f64::from(x))),
                TensorData::F64(v) => out.extend_from_slice(v),
            }
        }
        out
    }

    /// Overwrites every value in flatten order, keeping each tensor's dtype.
    pub fn set_values(&mut self, values: &[f64]) -> Result<()> {
        let n = self.num_params();
        if values.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: values.len(),
            });
        }
        let mut cursor = 0;
        for tensor in self.tensors.values_mut() {
            let len = tensor.len();
            let src = &values[cursor..cursor + len];
            match &mut tensor.data {
                TensorData::F32(v) => {
                    for (dst, &x) in v.iter_mut().zip(src) {
                        *dst = x as f32;
                    }
                }
                TensorData::F64(v) => v.copy_from_slice(src),
            }
            cursor += len;
        }
        Ok(())
    }

    /// Header records in file order (name order, ascending offsets).
    pub fn specs(&self) -> Vec<TensorSpec> {
        let mut offset = 0;
        self.tensors
            .iter()
            .map(|(name, tensor)| {
                let bytes = tensor.len() * tensor.dtype().size();
                let spec = TensorSpec {
                    name: name.clone(),
                    dtype: tensor.dtype(),
                    shape: tensor.shape.clone(),
                    data_offsets: (offset, offset + bytes),
                };
                offset += bytes;
                spec
            })
            .collect()
    }

    /// Serializes to the container byte layout. Output depends only on the
    /// set's contents.
    pub fn to_bytes(&self) -> Vec<u8> {
        let specs = self.specs();
        let header: BTreeMap<&str, HeaderEntry> = specs
            .iter()
            .map(|s| {
                (
                    s.name.as_str(),
                    HeaderEntry {
                        dtype: s.dtype,
                        shape: s.shape.clone(),
                        data_offsets: [s.data_offsets.0, s.data_offsets.1],
                    },
                )
            })
            .collect();
        let header_json =
            serde_json::to_vec(&header).expect("container header serialization is infallible");
        let data_len = specs.last().map_or(0, |s| s.data_offsets.1);

        let mut out = Vec::with_capacity(8 + header_json.len() + data_len);
        out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_json);
        for tensor in self.tensors.values() {
            match &tensor.data {
                TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Container("file shorter than the 8-byte header length".into()));
        }
        let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap());
        let header_end = usize::try_from(header_len)
            .ok()
            .and_then(|len| len.checked_add(8))
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| {
                Error::Container(format!("header length {header_len} exceeds file size"))
            })?;
        let header: HeaderMap = serde_json::from_slice(&bytes[8..header_end])
            .map_err(|e| Error::Container(format!("invalid header JSON: {e}")))?;
        let data = &bytes[header_end..];

        let mut specs = header
            .0
            .into_iter()
            .map(|(name, entry)| TensorSpec {
                name,
                dtype: entry.dtype,
                shape: entry.shape,
                data_offsets: (entry.data_offsets[0], entry.data_offsets[1]),
            })
            .collect::<Vec<_>>();
        specs.sort_by_key(|s| s.data_offsets);

        let mut cursor = 0usize;
        for spec in &specs {
            let (begin, end) = spec.data_offsets;
            if end < begin {
                return Err(Error::Container(format!(
                    "tensor `{}` has inverted range [{begin}, {end})",
                    spec.name
                )));
            }
            if begin < cursor {
                return Err(Error::Container(format!(
                    "overlapping ranges at tensor `{}` ([{begin}, {end}) starts before {cursor})",
                    spec.name
                )));
            }
            if begin > cursor {
                return Err(Error::Container(format!(
                    "gap in data section before tensor `{}` ({cursor}..{begin})",
                    spec.name
                )));
            }
            let expected = element_count(&spec.shape)?
                .checked_mul(spec.dtype.size())
                .ok_or_else(|| Error::Container(format!("tensor `{}` too large", spec.name)))?;
            if end - begin != expected {
                return Err(Error::Container(format!(
                    "tensor `{}` declares {} bytes but shape {:?} x {:?} needs {expected}",
                    spec.name,
                    end - begin,
                    spec.shape,
                    spec.dtype
                )));
            }
            cursor = end;
        }
        if cursor > data.len() {
            return Err(Error::Container(format!(
                "truncated data section: header covers {cursor} bytes, file has {}",
                data.len()
            )));
        }
        if cursor < data.len() {
            return Err(Error::Container(format!(
                "{} trailing bytes after the last tensor",
                data.len() - cursor
            )));
        }

        let mut set = ParameterSet::new();
        for spec in specs {
            let raw = &data[spec.data_offsets.0..spec.data_offsets.1];
            let tensor_data = match spec.dtype {
                DType::F32 => TensorData::F32(
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                DType::F64 => TensorData::F64(
                    raw.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
            };
            let non_finite = (0..tensor_data.len())
                .filter(|&i| !tensor_data.get(i).is_finite())
                .count();
            if non_finite > 0 {
                log::warn!("tensor `{}` holds {non_finite} non-finite values", spec.name);
            }
            set.insert(spec.name, Tensor::new(spec.shape, tensor_data)?);
        }
        Ok(set)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderEntry {
    dtype: DType,
    shape: Vec<usize>,
    data_offsets: [usize; 2],
}

/// Header entries in document order; rejects duplicate names, which a plain
/// map would silently collapse.
struct HeaderMap(Vec<(String, HeaderEntry)>);

impl<'de> Deserialize<'de> for HeaderMap {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct HeaderVisitor;

        impl<'de> Visitor<'de> for HeaderVisitor {
            type Value = HeaderMap;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map of tensor names to header entries")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<HeaderMap, A::Error> {
                let mut seen = std::collections::HashSet::new();
                let mut entries = Vec::new();
                while let Some((name, entry)) = map.next_entry::<String, HeaderEntry>()? {
                    if !seen.insert(name.clone()) {
                        return Err(serde::de::Error::custom(format!("duplicate tensor name `{name}`")));
                    }
                    entries.push((name, entry));
                }
                Ok(HeaderMap(entries))
            }
        }

        deserializer.deserialize_map(HeaderVisitor)
    }
}

pub fn load_container(path: impl AsRef<Path>) -> Result<ParameterSet> {
    ParameterSet::from_bytes(&fs::read(path)?)
}

pub fn save_container(set: &ParameterSet, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, set.to_bytes())?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub start: usize,
}

impl ManifestEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Where each tensor lives inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlattenManifest {
    pub entries: Vec<ManifestEntry>,
    pub total: usize,
}

impl FlattenManifest {
    pub fn for_set(set: &ParameterSet) -> Self {
        let mut start = 0;
        let entries = set
            .iter()
            .map(|(name, tensor)| {
                let entry = ManifestEntry {
                    name: name.to_owned(),
                    shape: tensor.shape().to_vec(),
                    dtype: tensor.dtype(),
                    start,
                };
                start += tensor.len();
                entry
            })
            .collect();
        Self {
            entries,
            total: start,
        }
    }

    /// Tensor name and local element index of a flat index.
    pub fn locate(&self, flat_index: usize) -> Option<(&str, usize)> {
        if flat_index >= self.total {
            return None;
        }
        let pos = self.entries.partition_point(|e| e.start <= flat_index) - 1;
        // zero-length tensors share a start with their successor
        let entry = self.entries[..=pos]
            .iter()
            .rev()
            .find(|e| flat_index < e.start + e.len())?;
        Some((entry.name.as_str(), flat_index - entry.start))
    }
}

/// Concatenates all tensors (name order, row-major) into one f64 vector.
pub fn flatten(set: &ParameterSet) -> Result<(Vec<f64>, FlattenManifest)> {
    for (name, tensor) in set.iter() {
        if let Some(index) = (0..tensor.len()).find(|&i| !tensor.data().get(i).is_finite()) {
            return Err(Error::NonFinite {
                name: name.to_owned(),
                index,
            });
        }
    }
    Ok((set.values(), FlattenManifest::for_set(set)))
}

/// Rebuilds named tensors from a flat vector. Every tensor comes back as f64.
pub fn restore(flat: &[f64], manifest: &FlattenManifest) -> Result<ParameterSet> {
    if flat.len() != manifest.total {
        return Err(Error::LengthMismatch {
            expected: manifest.total,
            actual: flat.len(),
        });
    }
    let mut set = ParameterSet::new();
    for entry in &manifest.entries {
        let values = flat[entry.start..entry.start + entry.len()].to_vec();
        set.insert(entry.name.clone(), Tensor::from_f64(entry.shape.clone(), values)?);
    }
    Ok(set)
}
