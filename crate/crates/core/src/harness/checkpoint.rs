//! Binary agent checkpoints.
//!
//! Layout: `DGFT`, version (u32), payload length (u64), payload, CRC32 of
//! the payload (u32). All integers and floats are little-endian. The
//! payload holds iteration and seed (u64), the config hash and parameter
//! digest (u32 length + UTF-8), the actor and critic layer counts (u32),
//! then every tensor as rank (u32), dims (u64 each) and row-major f64 data.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::nn::{Actor, Critic, Dense, Mlp};
use crate::selfplay::AgentCheckpoint;

pub const MAGIC: &[u8; 4] = b"DGFT";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("not a checkpoint: magic bytes {found:02x?}")]
    BadMagic { found: Vec<u8> },
    #[error("checkpoint format version {found}, this build reads version {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Crc { stored: u32, computed: u32 },
    #[error("malformed checkpoint payload: {0}")]
    Malformed(String),
    #[error("parameter digest mismatch: recorded {recorded}, computed {computed}")]
    Digest { recorded: String, computed: String },
}

pub fn encode(ckpt: &AgentCheckpoint) -> Vec<u8> {
    let mut p = Vec::new();
    p.extend(ckpt.iteration.to_le_bytes());
    p.extend(ckpt.seed.to_le_bytes());
    put_str(&mut p, &ckpt.config_hash);
    put_str(&mut p, &ckpt.params_digest());
    p.extend((ckpt.actor.net.layers.len() as u32).to_le_bytes());
    p.extend((ckpt.critic.net.layers.len() as u32).to_le_bytes());
    put_mlp(&mut p, &ckpt.actor.net);
    put_tensor(&mut p, &[ckpt.actor.log_std.len()], &ckpt.actor.log_std);
    put_mlp(&mut p, &ckpt.critic.net);

    let mut out = Vec::with_capacity(HEADER_LEN + p.len() + 4);
    out.extend(MAGIC);
    out.extend(FORMAT_VERSION.to_le_bytes());
    out.extend((p.len() as u64).to_le_bytes());
    out.extend(&p);
    out.extend(crc32fast::hash(&p).to_le_bytes());
    out
}

fn put_str(p: &mut Vec<u8>, s: &str) {
    p.extend((s.len() as u32).to_le_bytes());
    p.extend(s.as_bytes());
}

fn put_mlp(p: &mut Vec<u8>, net: &Mlp) {
    for l in &net.layers {
        put_tensor(p, &[l.outputs, l.inputs], &l.weights);
        put_tensor(p, &[l.outputs], &l.bias);
    }
}

fn put_tensor(p: &mut Vec<u8>, dims: &[usize], data: &[f64]) {
    p.extend((dims.len() as u32).to_le_bytes());
    for d in dims {
        p.extend((*d as u64).to_le_bytes());
    }
    for x in data {
        p.extend(x.to_le_bytes());
    }
}

pub fn decode(bytes: &[u8]) -> Result<AgentCheckpoint, CheckpointError> {
    if bytes.len() < 4 {
        return Err(CheckpointError::Truncated { needed: HEADER_LEN, available: bytes.len() });
    }
    if &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic { found: bytes[..4].to_vec() });
    }
    if bytes.len() < HEADER_LEN {
        return Err(CheckpointError::Truncated { needed: HEADER_LEN, available: bytes.len() });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let needed = HEADER_LEN.saturating_add(len).saturating_add(4);
    if bytes.len() < needed {
        return Err(CheckpointError::Truncated { needed, available: bytes.len() });
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + len];
    let stored = u32::from_le_bytes(bytes[HEADER_LEN + len..needed].try_into().unwrap());
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(CheckpointError::Crc { stored, computed });
    }
    if bytes.len() > needed {
        return Err(CheckpointError::Malformed(format!("{} trailing bytes", bytes.len() - needed)));
    }

    let mut r = Reader { buf: payload, pos: 0 };
    let iteration = r.u64()?;
    let seed = r.u64()?;
    let config_hash = r.string()?;
    let recorded = r.string()?;
    let actor_layers = r.u32()? as usize;
    let critic_layers = r.u32()? as usize;
    let actor_net = r.mlp(actor_layers)?;
    let log_std = r.tensor(1)?.1;
    let critic_net = r.mlp(critic_layers)?;
    if r.pos != payload.len() {
        return Err(CheckpointError::Malformed("unread payload bytes".into()));
    }
    if log_std.len() != actor_net.output_dim() {
        return Err(CheckpointError::Malformed("log_std length differs from actor output".into()));
    }
    let ckpt = AgentCheckpoint {
        iteration,
        seed,
        config_hash,
        actor: Actor { net: actor_net, log_std },
        critic: Critic { net: critic_net },
    };
    let computed = ckpt.params_digest();
    if computed != recorded {
        return Err(CheckpointError::Digest { recorded, computed });
    }
    Ok(ckpt)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| CheckpointError::Malformed(format!("field at offset {} overruns payload", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| CheckpointError::Malformed(e.to_string()))
    }

    fn tensor(&mut self, rank: u32) -> Result<(Vec<usize>, Vec<f64>), CheckpointError> {
        let found = self.u32()?;
        if found != rank {
            return Err(CheckpointError::Malformed(format!("tensor rank {found}, expected {rank}")));
        }
        let mut dims = Vec::new();
        for _ in 0..rank {
            dims.push(self.u64()? as usize);
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| CheckpointError::Malformed("tensor size overflow".into()))?;
        let raw = self.take(count.checked_mul(8).ok_or_else(|| CheckpointError::Malformed("tensor size overflow".into()))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok((dims, data))
    }

    fn mlp(&mut self, layers: usize) -> Result<Mlp, CheckpointError> {
        let mut out = Vec::with_capacity(layers);
        for _ in 0..layers {
            let (wd, weights) = self.tensor(2)?;
            let (bd, bias) = self.tensor(1)?;
            if bd[0] != wd[0] {
                return Err(CheckpointError::Malformed("bias length differs from layer outputs".into()));
            }
            if let Some(prev) = out.last().map(|l: &Dense| l.outputs) {
                if prev != wd[1] {
                    return Err(CheckpointError::Malformed("layer sizes do not chain".into()));
                }
            }
            out.push(Dense { inputs: wd[1], outputs: wd[0], weights, bias });
        }
        if out.is_empty() {
            return Err(CheckpointError::Malformed("network without layers".into()));
        }
        Ok(Mlp { layers: out })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &AgentCheckpoint) -> Result<(), CheckpointError> {
    std::fs::write(path, encode(ckpt)).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })
}

pub fn load_checkpoint(path: &Path) -> Result<AgentCheckpoint, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })?;
    decode(&bytes)
}
