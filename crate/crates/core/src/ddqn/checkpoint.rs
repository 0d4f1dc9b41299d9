//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! | field            | encoding                                           |
//! |------------------|----------------------------------------------------|
//! | magic            | `PGQN`                                             |
//! | version          | u32 (currently 1)                                  |
//! | action count     | u32                                                |
//! | input shape      | u8 tag (0 flat, 1 image) then 1 or 3 u32 dims      |
//! | layers           | u32 count, then per layer a u8 tag and its fields  |
//! | train config     | u32 byte length + JSON                             |
//! | parameter count  | u64                                                |
//! | θ then θ′        | f32 arrays of `parameter count` each               |
//!
//! Dense layers store `width: u32, bias: u8`; convolutions store
//! `out_channels, kernel, stride` as u32.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::learner::TrainConfig;
use super::network::{InputShape, LayerSpec, QNetwork, Topology};
use super::NetError;

pub const MAGIC: &[u8; 4] = b"PGQN";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {VERSION})")]
    Version { found: u32 },
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint has {0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("checkpoint shape mismatch: {0}")]
    Shape(String),
    #[error("checkpoint network: {0}")]
    Network(#[from] NetError),
    #[error("checkpoint config: {0}")]
    Config(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub online: QNetwork<f32>,
    pub target: QNetwork<f32>,
    pub config: TrainConfig,
}

impl Checkpoint {
    pub fn action_count(&self) -> usize {
        self.online.output_width()
    }

    /// Rejects checkpoints whose action head differs from `actions`.
    pub fn expect_actions(&self, actions: usize) -> Result<(), CheckpointError> {
        if self.action_count() != actions {
            return Err(CheckpointError::Shape(format!(
                "checkpoint has {} actions, config expects {actions}",
                self.action_count()
            )));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode_checkpoint(online: &QNetwork<f32>, target: &QNetwork<f32>, config: &TrainConfig) -> Result<Vec<u8>, CheckpointError> {
    if online.topology() != target.topology() {
        return Err(CheckpointError::Shape("online and target topologies differ".into()));
    }
    let topo = online.topology();
    let mut out = Vec::with_capacity(64 + 8 * online.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, topo.output_width());
    match topo.input {
        InputShape::Flat(n) => {
            out.push(0);
            put_u32(&mut out, n);
        }
        InputShape::Image { channels, height, width } => {
            out.push(1);
            for d in [channels, height, width] {
                put_u32(&mut out, d);
            }
        }
    }
    put_u32(&mut out, topo.layers.len());
    for layer in &topo.layers {
        match *layer {
            LayerSpec::Dense { width, bias } => {
                out.push(0);
                put_u32(&mut out, width);
                out.push(u8::from(bias));
            }
            LayerSpec::Conv { out_channels, kernel, stride } => {
                out.push(1);
                for d in [out_channels, kernel, stride] {
                    put_u32(&mut out, d);
                }
            }
        }
    }
    let cfg = serde_json::to_vec(config)?;
    put_u32(&mut out, cfg.len());
    out.extend_from_slice(&cfg);
    out.extend_from_slice(&(online.param_count() as u64).to_le_bytes());
    for net in [online, target] {
        for p in net.params() {
            out.extend_from_slice(&p.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() < n {
            return Err(CheckpointError::Truncated);
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn usize(&mut self) -> Result<usize, CheckpointError> {
        Ok(self.u32()? as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, CheckpointError> {
        let bytes = self.take(n.checked_mul(4).ok_or(CheckpointError::Truncated)?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut cur = Cursor { bytes };
    if cur.take(4)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version { found: version });
    }
    let actions = cur.usize()?;
    let input = match cur.u8()? {
        0 => InputShape::Flat(cur.usize()?),
        1 => InputShape::Image { channels: cur.usize()?, height: cur.usize()?, width: cur.usize()? },
        t => return Err(CheckpointError::Shape(format!("unknown input tag {t}"))),
    };
    let n_layers = cur.usize()?;
    let mut layers = Vec::with_capacity(n_layers.min(64));
    for _ in 0..n_layers {
        layers.push(match cur.u8()? {
            0 => LayerSpec::Dense { width: cur.usize()?, bias: cur.u8()? != 0 },
            1 => LayerSpec::Conv { out_channels: cur.usize()?, kernel: cur.usize()?, stride: cur.usize()? },
            t => return Err(CheckpointError::Shape(format!("unknown layer tag {t}"))),
        });
    }
    let topology = Topology { input, layers };
    if topology.output_width() != actions {
        return Err(CheckpointError::Shape(format!(
            "header declares {actions} actions, topology outputs {}",
            topology.output_width()
        )));
    }
    let cfg_len = cur.usize()?;
    let config: TrainConfig = serde_json::from_slice(cur.take(cfg_len)?)?;
    let count = u64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes")) as usize;
    let expected = topology.param_count()?;
    if count != expected {
        return Err(CheckpointError::Shape(format!("{count} parameters stored, topology needs {expected}")));
    }
    let online = QNetwork::from_params(topology.clone(), cur.f32s(count)?)?;
    let target = QNetwork::from_params(topology, cur.f32s(count)?)?;
    if !cur.bytes.is_empty() {
        return Err(CheckpointError::TrailingBytes(cur.bytes.len()));
    }
    Ok(Checkpoint { online, target, config })
}

pub fn save_checkpoint(online: &QNetwork<f32>, target: &QNetwork<f32>, config: &TrainConfig, path: &Path) -> Result<(), CheckpointError> {
    let bytes = encode_checkpoint(online, target, config)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}
