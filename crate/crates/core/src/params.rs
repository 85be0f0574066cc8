//! Named parameter tensors and their binary file format.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! magic   b"SWNL"
//! version u32 (= 1)
//! dtype   u32 (1 = f32, 2 = f64)
//! count   u32
//! count × { len u32, UTF-8 path bytes }          sorted by path
//! count × { rank u32, rank × u32 extents }
//! count × raw little-endian scalars
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::tensor::{DType, Scalar, Tape, Tensor};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"SWNL";
const VERSION: u32 = 1;

/// Learnable tensors addressed by stable dotted paths, iterated in sorted
/// order.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T: Scalar = f64> {
    map: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for Params<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Params<T> {
    pub fn new() -> Self {
        Params {
            map: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, path: impl Into<String>, t: Tensor<T>) -> Option<Tensor<T>> {
        self.map.insert(path.into(), t)
    }

    pub fn get(&self, path: &str) -> Option<&Tensor<T>> {
        self.map.get(path)
    }

    /// Like [`Params::get`] but reports the missing path as an error.
    pub fn require(&self, path: &str) -> Result<&Tensor<T>> {
        self.map
            .get(path)
            .ok_or_else(|| Error::invalid(format!("missing parameter {path}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn num_scalars(&self) -> usize {
        self.map.values().map(Tensor::len).sum()
    }

    /// Registers every tensor as a leaf on `tape`.
    pub fn track(&self, tape: &Tape<T>) -> Params<T> {
        Params {
            map: self
                .map
                .iter()
                .map(|(k, v)| (k.clone(), tape.leaf(v)))
                .collect(),
        }
    }

    pub fn detach(&self) -> Params<T> {
        self.map_tensors(|_, t| t.detach())
    }

    pub fn map_tensors<U: Scalar>(
        &self,
        mut f: impl FnMut(&str, &Tensor<T>) -> Tensor<U>,
    ) -> Params<U> {
        Params {
            map: self.map.iter().map(|(k, v)| (k.clone(), f(k, v))).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        self.map_tensors(|_, t| t.cast())
    }

    pub fn all_finite(&self) -> bool {
        self.map.values().all(Tensor::all_finite)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.num_scalars() * T::DTYPE.size());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&T::DTYPE.code().to_le_bytes());
        out.extend_from_slice(&(self.map.len() as u32).to_le_bytes());
        for path in self.map.keys() {
            out.extend_from_slice(&(path.len() as u32).to_le_bytes());
            out.extend_from_slice(path.as_bytes());
        }
        for t in self.map.values() {
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
        }
        for t in self.map.values() {
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        out
    }

    /// Parses a parameter file. Files stored at a different precision are
    /// converted.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let dtype = DType::from_code(r.u32()?)
            .ok_or_else(|| Error::Format("unknown scalar type".into()))?;
        let count = r.u32()? as usize;
        let mut paths = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let raw = r.take(len)?;
            let path =
                std::str::from_utf8(raw).map_err(|_| Error::Format("path is not UTF-8".into()))?;
            paths.push(path.to_owned());
        }
        if paths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Format("path table is not strictly sorted".into()));
        }
        let mut shapes = Vec::with_capacity(count);
        for _ in 0..count {
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            shapes.push(shape);
        }
        let mut map = BTreeMap::new();
        for (path, shape) in paths.into_iter().zip(shapes) {
            let n: usize = shape.iter().product();
            let raw = r.take(n * dtype.size())?;
            let data: Vec<T> = match dtype {
                DType::F32 => raw
                    .chunks_exact(4)
                    .map(|c| T::from_f64(f32::read_le(c) as f64))
                    .collect(),
                DType::F64 => raw
                    .chunks_exact(8)
                    .map(|c| T::from_f64(f64::read_le(c)))
                    .collect(),
            };
            let t =
                Tensor::from_vec(shape, data).map_err(|e| Error::Format(format!("{path}: {e}")))?;
            map.insert(path, t);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Params { map })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

impl<T: Scalar> FromIterator<(String, Tensor<T>)> for Params<T> {
    fn from_iter<I: IntoIterator<Item = (String, Tensor<T>)>>(iter: I) -> Self {
        Params {
            map: iter.into_iter().collect(),
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Params<f64> {
        let mut p = Params::new();
        p.insert(
            "b.weight",
            Tensor::from_fn([2, 3], |i| i as f64 * 0.5 - 1.0),
        );
        p.insert("a.bias", Tensor::from_fn([3], |i| i as f64));
        p
    }

    #[test]
    fn iteration_is_sorted() {
        let p = sample();
        assert_eq!(p.paths().collect::<Vec<_>>(), vec!["a.bias", "b.weight"]);
    }

    #[test]
    fn header_layout() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..4], b"SWNL");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 6);
        assert_eq!(&bytes[20..26], b"a.bias");
    }

    #[test]
    fn truncated_and_trailing_bytes_are_rejected() {
        let bytes = sample().to_bytes();
        for cut in [0, 3, 10, 30, bytes.len() - 1] {
            assert!(matches!(
                Params::<f64>::from_bytes(&bytes[..cut]),
                Err(Error::Format(_))
            ));
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Params::<f64>::from_bytes(&extra).is_err());
    }

    #[test]
    fn precision_conversion_on_load() {
        let p32: Params<f32> = sample().cast();
        let back = Params::<f64>::from_bytes(&p32.to_bytes()).unwrap();
        assert_eq!(back, sample());
    }

    proptest! {
        #[test]
        fn bytes_round_trip(values in proptest::collection::vec(-1e6f64..1e6, 1..40), split in 1usize..40) {
            let split = split.min(values.len());
            let mut p = Params::new();
            p.insert("x", Tensor::from_vec([split], values[..split].to_vec()).unwrap());
            if split < values.len() {
                p.insert("y.z", Tensor::from_vec([values.len() - split], values[split..].to_vec()).unwrap());
            }
            prop_assert_eq!(Params::<f64>::from_bytes(&p.to_bytes()).unwrap(), p);
        }
    }
}
