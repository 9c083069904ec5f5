//! Checkpoint byte layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic "VOXRELCK"
//! 8       4     u32 format version (currently 1)
//! 12      8     u64 header length H
//! 20      H     UTF-8 JSON header: config, iteration, rng state, segment
//!               tables, optimizer rule and step, blob list
//! 20+H    ...   f64 blobs in header order: online, momentum, then the two
//!               optimizer moment vectors (empty for plain steps)
//! ```

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::numerics::{Optimizer, ParamVector, Segment, StepRule};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VOXRELCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const PREAMBLE: u64 = 20;

/// Serialized position of a ChaCha8 stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Word position; decimal string because JSON numbers cannot hold 128 bits.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::validation("rng.word_pos", format!("`{}` is not an integer", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// Everything needed to resume training bit-identically.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub iteration: u64,
    pub rng: RngState,
    pub online: ParamVector,
    pub momentum: ParamVector,
    pub optimizer: Optimizer,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Blob {
    name: String,
    len: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: TrainConfig,
    iteration: u64,
    rng: RngState,
    online_segments: Vec<Segment>,
    momentum_segments: Vec<Segment>,
    optimizer_rule: StepRule,
    optimizer_step: u64,
    blobs: Vec<Blob>,
}

const BLOB_NAMES: [&str; 4] = ["online", "momentum", "first_moment", "second_moment"];

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn read_u64(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let arrays: [&[f64]; 4] = [
            self.online.values(),
            self.momentum.values(),
            &self.optimizer.first_moment,
            &self.optimizer.second_moment,
        ];
        let header = Header {
            config: self.config.clone(),
            iteration: self.iteration,
            rng: self.rng.clone(),
            online_segments: self.online.segments().to_vec(),
            momentum_segments: self.momentum.segments().to_vec(),
            optimizer_rule: self.optimizer.rule,
            optimizer_step: self.optimizer.step,
            blobs: BLOB_NAMES
                .iter()
                .zip(arrays)
                .map(|(n, a)| Blob {
                    name: n.to_string(),
                    len: a.len() as u64,
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::validation("checkpoint", e.to_string()))?;
        let values: usize = arrays.iter().map(|a| a.len()).sum();
        let mut out = Vec::with_capacity(PREAMBLE as usize + json.len() + 8 * values);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for a in arrays {
            for v in a {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let found = bytes.len() as u64;
        if found < PREAMBLE {
            return Err(Error::Truncated { expected: PREAMBLE, found });
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Format {
                offset: 0,
                reason: "not a checkpoint (bad magic)".into(),
            });
        }
        let version = read_u32(bytes, 8);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let header_len = read_u64(bytes, 12);
        let body = PREAMBLE.checked_add(header_len).ok_or(Error::Format {
            offset: 12,
            reason: "header length overflows".into(),
        })?;
        if found < body {
            return Err(Error::Truncated { expected: body, found });
        }
        let header: Header = serde_json::from_slice(&bytes[PREAMBLE as usize..body as usize]).map_err(|e| Error::Format {
            // The header is written on a single line.
            offset: PREAMBLE + e.column().saturating_sub(1) as u64,
            reason: format!("header: {e}"),
        })?;

        let names: Vec<&str> = header.blobs.iter().map(|b| b.name.as_str()).collect();
        if names != BLOB_NAMES {
            return Err(Error::Format {
                offset: PREAMBLE,
                reason: format!("unexpected blob list {names:?}"),
            });
        }
        let total: u64 = header.blobs.iter().map(|b| b.len).sum();
        let expected = total
            .checked_mul(8)
            .and_then(|n| n.checked_add(body))
            .ok_or(Error::Format {
                offset: PREAMBLE,
                reason: "blob lengths overflow".into(),
            })?;
        if found < expected {
            return Err(Error::Truncated { expected, found });
        }
        if found > expected {
            return Err(Error::Format {
                offset: expected,
                reason: format!("{} trailing bytes", found - expected),
            });
        }

        let mut cursor = body as usize;
        let mut arrays = Vec::with_capacity(4);
        for blob in &header.blobs {
            let start = cursor;
            let values: Vec<f64> = bytes[start..start + 8 * blob.len as usize]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            cursor += 8 * blob.len as usize;
            arrays.push((start as u64, values));
        }
        let mut arrays = arrays.into_iter();
        let mut params = |segments: Vec<Segment>| -> Result<ParamVector> {
            let (offset, values) = arrays.next().expect("four blobs");
            ParamVector::from_parts(segments, values).map_err(|e| Error::Format {
                offset,
                reason: e.to_string(),
            })
        };
        let online = params(header.online_segments)?;
        let momentum = params(header.momentum_segments)?;
        let (m_offset, first_moment) = arrays.next().expect("four blobs");
        let (_, second_moment) = arrays.next().expect("four blobs");
        let moments = Optimizer::new(header.optimizer_rule, online.len()).first_moment.len();
        if first_moment.len() != moments || second_moment.len() != moments {
            return Err(Error::Format {
                offset: m_offset,
                reason: format!("optimizer moments hold {} values, expected {moments}", first_moment.len()),
            });
        }
        header.config.validate().map_err(|e| Error::Format {
            offset: PREAMBLE,
            reason: e.to_string(),
        })?;
        header.rng.restore().map_err(|e| Error::Format {
            offset: PREAMBLE,
            reason: e.to_string(),
        })?;
        Ok(Checkpoint {
            config: header.config,
            iteration: header.iteration,
            rng: header.rng,
            online,
            momentum,
            optimizer: Optimizer {
                rule: header.optimizer_rule,
                step: header.optimizer_step,
                first_moment,
                second_moment,
            },
        })
    }

    /// Writes through a temporary sibling file and renames it into place, so
    /// readers never see a partial checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
