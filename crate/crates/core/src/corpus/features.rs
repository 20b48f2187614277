//! `VDF1` coarse-feature and `VOF1` object-feature files.
//!
//! ```text
//! VDF1 | u32 count | u32 dim | count*dim f32
//! VOF1 | u32 num_images | u32 dim | (u32 m_j | m_j*dim f32) per image
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use crate::error::CorpusError;

const VDF_MAGIC: &[u8; 4] = b"VDF1";
const VOF_MAGIC: &[u8; 4] = b"VOF1";

/// One pooled vector per image.
#[derive(Clone, Debug, PartialEq)]
pub struct CoarseFeatureStore {
    dim: usize,
    data: Vec<f32>,
}

/// A variable-size set of object vectors per image.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectFeatureStore {
    dim: usize,
    offsets: Vec<usize>,
    data: Vec<f32>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn need(&self, n: usize) -> Result<(), CorpusError> {
        if self.pos + n > self.bytes.len() {
            Err(CorpusError::Truncated { needed: self.pos + n, available: self.bytes.len() })
        } else {
            Ok(())
        }
    }

    fn magic(&mut self, expected: &'static [u8; 4]) -> Result<(), CorpusError> {
        self.need(4)?;
        let found = &self.bytes[..4];
        if found != expected {
            return Err(CorpusError::BadMagic {
                expected: std::str::from_utf8(expected).unwrap_or("?"),
                found: found.to_vec(),
            });
        }
        self.pos = 4;
        Ok(())
    }

    fn u32(&mut self) -> Result<usize, CorpusError> {
        self.need(4)?;
        let v = u32::from_le_bytes(self.bytes[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        Ok(v as usize)
    }

    fn floats(&mut self, n: usize, row_len: usize, first_row: usize) -> Result<Vec<f32>, CorpusError> {
        let bytes = n.checked_mul(4).ok_or(CorpusError::Truncated { needed: usize::MAX, available: self.bytes.len() })?;
        self.need(bytes)?;
        let out: Vec<f32> = self.bytes[self.pos..self.pos + bytes]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(CorpusError::NonFinite { row: first_row + i / row_len.max(1) });
        }
        self.pos += bytes;
        Ok(out)
    }
}

fn push_f32s(out: &mut Vec<u8>, data: &[f32]) {
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn push_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("count fits in u32").to_le_bytes());
}

impl CoarseFeatureStore {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self, CorpusError> {
        if dim == 0 {
            return Err(CorpusError::ZeroDim);
        }
        assert_eq!(data.len() % dim, 0, "data length not a multiple of dim");
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(CorpusError::NonFinite { row: i / dim });
        }
        Ok(Self { dim, data })
    }

    pub fn count(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CorpusError> {
        let mut r = Reader { bytes, pos: 0 };
        r.magic(VDF_MAGIC)?;
        let count = r.u32()?;
        let dim = r.u32()?;
        if dim == 0 {
            return Err(CorpusError::ZeroDim);
        }
        let data = r.floats(count * dim, dim, 0)?;
        Ok(Self { dim, data })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.data.len() * 4);
        out.extend_from_slice(VDF_MAGIC);
        push_u32(&mut out, self.count());
        push_u32(&mut out, self.dim);
        push_f32s(&mut out, &self.data);
        out
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| CorpusError::io(path, e))?)
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| CorpusError::io(path, e))
    }
}

impl ObjectFeatureStore {
    /// Builds a store from per-image object matrices given as flat row-major data.
    pub fn new(dim: usize, images: &[Vec<f32>]) -> Result<Self, CorpusError> {
        if dim == 0 {
            return Err(CorpusError::ZeroDim);
        }
        let mut offsets = vec![0];
        let mut data = Vec::new();
        for (i, img) in images.iter().enumerate() {
            assert_eq!(img.len() % dim, 0, "object data not a multiple of dim");
            if img.is_empty() {
                return Err(CorpusError::EmptyObjectSet { image: i });
            }
            if img.iter().any(|v| !v.is_finite()) {
                return Err(CorpusError::NonFinite { row: i });
            }
            data.extend_from_slice(img);
            offsets.push(data.len() / dim);
        }
        Ok(Self { dim, offsets, data })
    }

    pub fn count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_objects(&self, image: usize) -> usize {
        self.offsets[image + 1] - self.offsets[image]
    }

    /// Row-major `m_j × dim` block for one image.
    pub fn objects(&self, image: usize) -> &[f32] {
        &self.data[self.offsets[image] * self.dim..self.offsets[image + 1] * self.dim]
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CorpusError> {
        let mut r = Reader { bytes, pos: 0 };
        r.magic(VOF_MAGIC)?;
        let count = r.u32()?;
        let dim = r.u32()?;
        if dim == 0 {
            return Err(CorpusError::ZeroDim);
        }
        let mut offsets = Vec::with_capacity(count + 1);
        offsets.push(0);
        let mut data = Vec::new();
        for image in 0..count {
            let m = r.u32()?;
            if m == 0 {
                return Err(CorpusError::EmptyObjectSet { image });
            }
            data.extend(r.floats(m * dim, dim, image)?);
            offsets.push(offsets[image] + m);
        }
        Ok(Self { dim, offsets, data })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.count() + self.data.len() * 4);
        out.extend_from_slice(VOF_MAGIC);
        push_u32(&mut out, self.count());
        push_u32(&mut out, self.dim);
        for i in 0..self.count() {
            push_u32(&mut out, self.num_objects(i));
            push_f32s(&mut out, self.objects(i));
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| CorpusError::io(path, e))?)
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| CorpusError::io(path, e))
    }
}

pub fn load_coarse_features(path: &Path) -> Result<CoarseFeatureStore, CorpusError> {
    CoarseFeatureStore::load(path)
}

pub fn load_object_features(path: &Path) -> Result<ObjectFeatureStore, CorpusError> {
    ObjectFeatureStore::load(path)
}
