//! `VCKPT1` parameter container.
//!
//! ```text
//! "VCKPT1" | u32 version | u32 header_len | header JSON
//! u32 tensor_count | per tensor: u32 name_len | name | u32 rank | u32 dims... | f32 payload
//! ```
//! All integers and floats are little-endian.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::corpus::vocab::NUM_SPECIAL;
use crate::corpus::Vocabulary;
use crate::error::CheckpointError;
use crate::mi::{DiscConfig, Discriminator};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::seqmodel::{Mode, ModelConfig, Seq2Seq};
use crate::tensor::Matrix;

pub const MAGIC: &[u8; 6] = b"VCKPT1";
pub const VERSION: u32 = 1;

/// What a checkpoint holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Forward,
    Backward,
    Disc,
    Adv,
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Component::Forward => "forward",
            Component::Backward => "backward",
            Component::Disc => "disc",
            Component::Adv => "adv",
        })
    }
}

impl FromStr for Component {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "forward" => Ok(Component::Forward),
            "backward" => Ok(Component::Backward),
            "disc" => Ok(Component::Disc),
            "adv" => Ok(Component::Adv),
            other => Err(format!("unknown component {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub component: Component,
    pub mode: Mode,
    pub config: serde_json::Value,
    /// Non-special vocabulary entries in id order.
    pub vocab: Vec<String>,
}

impl Header {
    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::from_tokens(&self.vocab)
    }

    pub fn typed_config<C: DeserializeOwned>(&self) -> Result<C, CheckpointError> {
        serde_json::from_value(self.config.clone()).map_err(|e| CheckpointError::CorruptCheckpoint(e.to_string()))
    }

    /// Fails with `VersionMismatch` unless this is a `component` checkpoint for `mode`.
    pub fn expect(&self, component: Component, mode: Option<Mode>) -> Result<(), CheckpointError> {
        if self.component != component {
            return Err(CheckpointError::VersionMismatch(format!(
                "expected a {component} checkpoint, found {}",
                self.component
            )));
        }
        if let Some(m) = mode {
            if m != self.mode {
                return Err(CheckpointError::VersionMismatch(format!(
                    "checkpoint was trained in {} mode, {m} requested",
                    self.mode
                )));
            }
        }
        Ok(())
    }
}

pub fn header_for(component: Component, mode: Mode, config: &impl Serialize, vocab: &Vocabulary) -> Header {
    Header {
        component,
        mode,
        config: serde_json::to_value(config).expect("configs serialise"),
        vocab: vocab.tokens()[NUM_SPECIAL..].to_vec(),
    }
}

pub fn encode_checkpoint<T: Scalar>(header: &Header, params: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let json = serde_json::to_vec(header).expect("header serialises");
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (_, name, m) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&2u32.to_le_bytes());
        out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
        for &v in m.data() {
            out.extend_from_slice(&v.as_f32().to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            CheckpointError::CorruptCheckpoint(format!("truncated at byte {} (need {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Named tensors in file order.
pub type Tensors = Vec<(String, Matrix<f32>)>;

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Header, Tensors), CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len()).map_err(|_| CheckpointError::CorruptCheckpoint("file too short".into()))? != MAGIC {
        return Err(CheckpointError::CorruptCheckpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch(format!("format version {version}, expected {VERSION}")));
    }
    let hlen = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(hlen)?)
        .map_err(|e| CheckpointError::CorruptCheckpoint(format!("header: {e}")))?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let nlen = r.u32()? as usize;
        let name = String::from_utf8(r.take(nlen)?.to_vec())
            .map_err(|_| CheckpointError::CorruptCheckpoint("tensor name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let (rows, cols) = match dims.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => return Err(CheckpointError::CorruptCheckpoint(format!("{name}: unsupported rank {rank}"))),
        };
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| CheckpointError::CorruptCheckpoint(format!("{name}: size overflow")))?;
        let payload = r.take(n.checked_mul(4).ok_or_else(|| CheckpointError::CorruptCheckpoint("size overflow".into()))?)?;
        let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        tensors.push((name, Matrix::from_vec(rows, cols, data)));
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::CorruptCheckpoint("trailing bytes".into()));
    }
    Ok((header, tensors))
}

pub fn write_checkpoint<T: Scalar>(path: &Path, header: &Header, params: &ParamStore<T>) -> Result<(), CheckpointError> {
    std::fs::write(path, encode_checkpoint(header, params))
        .map_err(|e| CheckpointError::Io { path: path.to_path_buf(), source: e })
}

pub fn read_checkpoint(path: &Path) -> Result<(Header, Tensors), CheckpointError> {
    let bytes = std::fs::read(path).map_err(|e| CheckpointError::Io { path: path.to_path_buf(), source: e })?;
    decode_checkpoint(&bytes)
}

/// Overwrites every tensor of `params` with the same-named tensor of the file.
pub fn restore_params<T: Scalar>(params: &mut ParamStore<T>, tensors: &Tensors) -> Result<(), CheckpointError> {
    if tensors.len() != params.len() {
        return Err(CheckpointError::CorruptCheckpoint(format!(
            "{} tensors stored, model has {}",
            tensors.len(),
            params.len()
        )));
    }
    for (name, m) in tensors {
        let id = params
            .id(name)
            .ok_or_else(|| CheckpointError::CorruptCheckpoint(format!("unknown tensor {name}")))?;
        let dst = params.get_mut(id);
        if dst.shape() != m.shape() {
            return Err(CheckpointError::CorruptCheckpoint(format!(
                "{name}: stored shape {:?}, expected {:?}",
                m.shape(),
                dst.shape()
            )));
        }
        *dst = m.cast();
    }
    Ok(())
}

pub fn save_seq2seq<T: Scalar>(
    path: &Path,
    component: Component,
    model: &Seq2Seq<T>,
    vocab: &Vocabulary,
) -> Result<(), CheckpointError> {
    let header = header_for(component, model.config().mode, model.config(), vocab);
    write_checkpoint(path, &header, model.params())
}

/// Loads a sequence model, checking its component tag and, when given, its mode.
pub fn load_seq2seq<T: Scalar>(
    path: &Path,
    component: Component,
    mode: Option<Mode>,
) -> Result<(Seq2Seq<T>, Vocabulary), CheckpointError> {
    let (header, tensors) = read_checkpoint(path)?;
    seq2seq_from(&header, &tensors, component, mode)
}

pub fn seq2seq_from<T: Scalar>(
    header: &Header,
    tensors: &Tensors,
    component: Component,
    mode: Option<Mode>,
) -> Result<(Seq2Seq<T>, Vocabulary), CheckpointError> {
    header.expect(component, mode)?;
    let cfg: ModelConfig = header.typed_config()?;
    let mut model = Seq2Seq::new(cfg, 0).map_err(|e| CheckpointError::CorruptCheckpoint(e.to_string()))?;
    restore_params(model.params_mut(), tensors)?;
    Ok((model, header.vocabulary()))
}

pub fn save_discriminator<T: Scalar>(path: &Path, disc: &Discriminator<T>, vocab: &Vocabulary) -> Result<(), CheckpointError> {
    let header = header_for(Component::Disc, disc.config().kind, disc.config(), vocab);
    write_checkpoint(path, &header, disc.params())
}

/// Loads a discriminator, checking its evidence kind when given.
pub fn load_discriminator<T: Scalar>(
    path: &Path,
    kind: Option<Mode>,
) -> Result<(Discriminator<T>, Vocabulary), CheckpointError> {
    let (header, tensors) = read_checkpoint(path)?;
    header.expect(Component::Disc, kind)?;
    let cfg: DiscConfig = header.typed_config()?;
    let mut disc = Discriminator::new(cfg, 0).map_err(|e| CheckpointError::CorruptCheckpoint(e.to_string()))?;
    restore_params(disc.params_mut(), &tensors)?;
    Ok((disc, header.vocabulary()))
}
