//! `EPK1` packed feature files.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "EPK1"                      4 ASCII bytes
//! version      u32            = 1
//! n_mels       u32
//! n_frames     u32
//! n_members    u32
//! total_dur_s  f32
//! values       f32 × n_mels·n_frames, mel-bin major
//! members      n_members × { u32 id_len, id (UTF-8), f32 start_s, f32 dur_s,
//!                            f32 × 8 emotion scores, u32 domain_id }
//! ```
//!
//! Golden fixtures use the same layout with `n_members = 0`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::emotion::N_EMOTIONS;
use crate::error::{Error, Result};
use crate::features::MelSpectrogram;

pub const MAGIC: &[u8; 4] = b"EPK1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberRecord {
    pub id: String,
    pub start_s: f32,
    pub dur_s: f32,
    pub emotion: [f32; N_EMOTIONS],
    pub domain_id: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub mel: MelSpectrogram,
    pub total_duration_s: f32,
    pub members: Vec<MemberRecord>,
}

impl FeatureFile {
    pub fn encode(&self) -> Vec<u8> {
        let values = self.mel.values();
        let mut out = Vec::with_capacity(24 + 4 * values.len() + 64 * self.members.len());
        out.extend_from_slice(MAGIC);
        for v in [
            VERSION,
            self.mel.n_mels() as u32,
            self.mel.n_frames() as u32,
            self.members.len() as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.total_duration_s.to_le_bytes());
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for m in &self.members {
            out.extend_from_slice(&(m.id.len() as u32).to_le_bytes());
            out.extend_from_slice(m.id.as_bytes());
            out.extend_from_slice(&m.start_s.to_le_bytes());
            out.extend_from_slice(&m.dur_s.to_le_bytes());
            for s in m.emotion {
                out.extend_from_slice(&s.to_le_bytes());
            }
            out.extend_from_slice(&m.domain_id.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic, expected EPK1".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let n_mels = r.u32()? as usize;
        let n_frames = r.u32()? as usize;
        let n_members = r.u32()? as usize;
        let total_duration_s = r.f32()?;
        let n_values = n_mels
            .checked_mul(n_frames)
            .ok_or_else(|| Error::Format("matrix size overflows".into()))?;
        let raw = r.take(
            n_values
                .checked_mul(4)
                .ok_or_else(|| Error::Format("matrix size overflows".into()))?,
        )?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut members = Vec::with_capacity(n_members.min(1024));
        for _ in 0..n_members {
            let len = r.u32()? as usize;
            let id = std::str::from_utf8(r.take(len)?)
                .map_err(|e| Error::Format(format!("member id is not UTF-8: {e}")))?
                .to_string();
            let start_s = r.f32()?;
            let dur_s = r.f32()?;
            let mut emotion = [0.0; N_EMOTIONS];
            for s in &mut emotion {
                *s = r.f32()?;
            }
            let domain_id = r.u32()?;
            members.push(MemberRecord {
                id,
                start_s,
                dur_s,
                emotion,
                domain_id,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(FeatureFile {
            mel: MelSpectrogram::from_values(n_mels, n_frames, values)?,
            total_duration_s,
            members,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
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
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
