//! Binary checkpoint format, all integers and floats little-endian:
//!
//! ```text
//! "RDNC" | version u32 = 1
//! depth u32 | filters u32 | kernel_size u32 | input_channels u32 | flags u32
//! per layer: kernel, bias [, gamma, beta, running_mean, running_var]
//!     each as rank u32, dims u32 * rank, values f32 * product(dims)
//! if flags bit 0: per layer, the kernel's activity bitmap,
//!     ceil(n / 8) bytes, least-significant bit first, 1 = active
//! ```
//!
//! Flags bits 1-2 record the phase that produced the weights
//! (0 dense, 1 sparse, 2 retrained); other bits must be zero.

use std::fs;
use std::path::Path;

use crate::dsd::{Mask, Phase};
use crate::error::{Error, Result};
use crate::network::{Network, NetworkConfig};
use crate::ops::RunningStats;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"RDNC";
pub const VERSION: u32 = 1;

const FLAG_MASK: u32 = 1;
const PHASE_SHIFT: u32 = 1;
const PHASE_BITS: u32 = 0b11 << PHASE_SHIFT;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub network: Network,
    pub mask: Option<Mask>,
    pub phase: Phase,
}

fn phase_code(phase: Phase) -> u32 {
    match phase {
        Phase::Dense => 0,
        Phase::Sparse => 1,
        Phase::Retrain => 2,
    }
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_tensor(out: &mut Vec<u8>, t: &Tensor) {
    push_u32(out, t.rank() as u32);
    for &d in t.shape() {
        push_u32(out, d as u32);
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn new(network: Network, mask: Option<Mask>, phase: Phase) -> Result<Self> {
        if let Some(m) = &mask {
            m.check_compatible(&network)?;
        }
        Ok(Checkpoint {
            network,
            mask,
            phase,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let cfg = self.network.config();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        push_u32(&mut out, VERSION);
        for v in [cfg.depth, cfg.filters, cfg.kernel_size, cfg.input_channels] {
            push_u32(&mut out, v as u32);
        }
        let flags =
            self.mask.as_ref().map_or(0, |_| FLAG_MASK) | (phase_code(self.phase) << PHASE_SHIFT);
        push_u32(&mut out, flags);
        for layer in self.network.layers() {
            push_tensor(&mut out, &layer.kernel);
            push_tensor(&mut out, &layer.bias);
            if let Some(bn) = &layer.bn {
                push_tensor(&mut out, &bn.gamma);
                push_tensor(&mut out, &bn.beta);
                push_tensor(&mut out, &bn.stats.mean);
                push_tensor(&mut out, &bn.stats.var);
            }
        }
        if let Some(mask) = &self.mask {
            for active in mask.layers() {
                let mut bytes = vec![0u8; active.len().div_ceil(8)];
                for (i, &a) in active.iter().enumerate() {
                    if a {
                        bytes[i / 8] |= 1 << (i % 8);
                    }
                }
                out.extend_from_slice(&bytes);
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::parse(0, "bad magic, not a checkpoint"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::parse(
                4,
                format!("unsupported checkpoint version {version}, expected {VERSION}"),
            ));
        }
        let config = NetworkConfig {
            depth: r.u32()? as usize,
            filters: r.u32()? as usize,
            kernel_size: r.u32()? as usize,
            input_channels: r.u32()? as usize,
        };
        config
            .validate()
            .map_err(|e| Error::parse(8, format!("invalid network header: {e}")))?;
        let flags_at = r.pos;
        let flags = r.u32()?;
        if flags & !(FLAG_MASK | PHASE_BITS) != 0 {
            return Err(Error::parse(
                flags_at,
                format!("unknown flag bits {flags:#x}"),
            ));
        }
        let phase = match (flags & PHASE_BITS) >> PHASE_SHIFT {
            0 => Phase::Dense,
            1 => Phase::Sparse,
            2 => Phase::Retrain,
            code => return Err(Error::parse(flags_at, format!("unknown phase code {code}"))),
        };

        let template = Network::new(config, 0)?;
        let mut layers = Vec::with_capacity(config.depth);
        for t in template.layers() {
            let kernel = r.tensor(t.kernel.shape())?;
            let bias = r.tensor(t.bias.shape())?;
            let bn = match &t.bn {
                Some(p) => {
                    let c = p.gamma.shape();
                    let gamma = r.tensor(c)?;
                    let beta = r.tensor(c)?;
                    let mean = r.tensor(c)?;
                    let var = r.tensor(c)?;
                    Some((gamma, beta, RunningStats { mean, var }))
                }
                None => None,
            };
            layers.push(Network::layer_from_parts(kernel, bias, bn, t.has_relu()));
        }
        let network = Network::from_layers(config, layers)?;

        let mask = if flags & FLAG_MASK != 0 {
            let mut maps = Vec::with_capacity(config.depth);
            for layer in network.layers() {
                let n = layer.kernel.len();
                let bits = r.take(n.div_ceil(8))?;
                maps.push((0..n).map(|i| bits[i / 8] >> (i % 8) & 1 == 1).collect());
            }
            Some(Mask::from_layers(maps))
        } else {
            None
        };
        if r.pos != bytes.len() {
            return Err(Error::parse(r.pos, "trailing bytes after checkpoint"));
        }
        Ok(Checkpoint {
            network,
            mask,
            phase,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::parse(
                self.bytes.len(),
                format!("truncated: needed {n} bytes at offset {}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn tensor(&mut self, expected: &[usize]) -> Result<Tensor> {
        let at = self.pos;
        let rank = self.u32()? as usize;
        if rank != expected.len() {
            return Err(Error::parse(
                at,
                format!("tensor rank {rank}, expected {}", expected.len()),
            ));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32()? as usize);
        }
        if shape != expected {
            return Err(Error::parse(
                at,
                format!("tensor shape {shape:?}, expected {expected:?}"),
            ));
        }
        let n: usize = shape.iter().product();
        let raw = self.take(n * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Tensor::from_vec(&shape, data)
    }
}

/// Writes `bytes` to a sibling temporary file and renames it into place, so
/// `path` either keeps its old content or gets the complete new one.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".partial");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(&tmp, e)
    })?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &checkpoint.encode())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::decode(&bytes)
}
