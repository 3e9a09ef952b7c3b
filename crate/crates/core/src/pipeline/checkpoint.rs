//! Checkpoints: a little-endian binary body plus a JSON sidecar.
//!
//! Body layout: magic `MRCK`, format version (u32), stage (u8), step (u64),
//! rng state (u64), parameter count (u64), parameters (f64 each), reference
//! count (u64), reference parameters. Everything else lives in the sidecar.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PipelineError, Stage};
use crate::fsutil::write_atomic;
use crate::grpo::ToyPolicyConfig;
use crate::seed::sha256_hex;

const MAGIC: &[u8; 4] = b"MRCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub stage: Stage,
    /// Completed optimisation steps.
    pub step: u64,
    pub parameters: Vec<f64>,
    pub reference: Vec<f64>,
    /// Seed of the next step's randomness.
    pub rng_state: u64,
    pub config_hash: String,
    pub policy: ToyPolicyConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    format_version: u32,
    stage: Stage,
    step: u64,
    rng_state: u64,
    config_hash: String,
    policy: ToyPolicyConfig,
    n_parameters: usize,
    body_sha256: String,
}

pub fn checkpoint_paths(dir: &Path, step: u64) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("ckpt_{step}.bin")),
        dir.join(format!("ckpt_{step}.json")),
    )
}

fn put_vec(out: &mut Vec<u8>, v: &[f64]) {
    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Option<&[u8]> {
        let s = self.buf.get(self.at..self.at.checked_add(n)?)?;
        self.at += n;
        Some(s)
    }
    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
    fn vec(&mut self) -> Option<Vec<f64>> {
        let n = usize::try_from(self.u64()?).ok()?;
        if n > self.buf.len() / 8 {
            return None;
        }
        (0..n)
            .map(|_| Some(f64::from_le_bytes(self.take(8)?.try_into().ok()?)))
            .collect()
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(48 + 8 * (self.parameters.len() + self.reference.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(self.stage.number());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.rng_state.to_le_bytes());
        put_vec(&mut out, &self.parameters);
        put_vec(&mut out, &self.reference);
        out
    }

    /// Decodes the body; identity fields not in the body come from `meta`.
    fn decode(bytes: &[u8], meta: &Sidecar, path: &Path) -> Result<Self, PipelineError> {
        let bad = |why: &str| PipelineError::BadCheckpoint {
            path: path.to_path_buf(),
            reason: why.to_string(),
        };
        let mut r = Reader { buf: bytes, at: 0 };
        if r.take(4) != Some(&MAGIC[..]) {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(r.take(4).ok_or_else(|| bad("truncated"))?.try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported format version {version}")));
        }
        let stage = match r.take(1).ok_or_else(|| bad("truncated"))?[0] {
            1 => Stage::One,
            2 => Stage::Two,
            s => return Err(bad(&format!("unknown stage {s}"))),
        };
        let step = r.u64().ok_or_else(|| bad("truncated"))?;
        let rng_state = r.u64().ok_or_else(|| bad("truncated"))?;
        let parameters = r.vec().ok_or_else(|| bad("truncated parameters"))?;
        let reference = r.vec().ok_or_else(|| bad("truncated reference"))?;
        if r.at != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        if stage != meta.stage || step != meta.step || rng_state != meta.rng_state {
            return Err(bad("body and sidecar disagree"));
        }
        if parameters.len() != meta.n_parameters || reference.len() != parameters.len() {
            return Err(bad("parameter count mismatch"));
        }
        Ok(Self {
            stage,
            step,
            parameters,
            reference,
            rng_state,
            config_hash: meta.config_hash.clone(),
            policy: meta.policy,
        })
    }

    /// Writes `ckpt_<step>.bin` and `ckpt_<step>.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf, PipelineError> {
        let (bin, json) = checkpoint_paths(dir, self.step);
        let body = self.encode();
        let meta = Sidecar {
            format_version: FORMAT_VERSION,
            stage: self.stage,
            step: self.step,
            rng_state: self.rng_state,
            config_hash: self.config_hash.clone(),
            policy: self.policy,
            n_parameters: self.parameters.len(),
            body_sha256: sha256_hex(&body),
        };
        let io = |p: &Path| {
            let p = p.to_path_buf();
            move |source| PipelineError::Io { path: p, source }
        };
        write_atomic(&bin, &body).map_err(io(&bin))?;
        let side = serde_json::to_vec_pretty(&meta).expect("sidecar serialises");
        write_atomic(&json, &side).map_err(io(&json))?;
        Ok(bin)
    }

    /// Loads from the `.bin` path (or the `.json` sidecar path).
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let bin = path.with_extension("bin");
        let json = path.with_extension("json");
        let read = |p: &Path| {
            std::fs::read(p).map_err(|source| PipelineError::Io {
                path: p.to_path_buf(),
                source,
            })
        };
        let meta: Sidecar = serde_json::from_slice(&read(&json)?).map_err(|e| PipelineError::BadCheckpoint {
            path: json.clone(),
            reason: e.to_string(),
        })?;
        let body = read(&bin)?;
        if sha256_hex(&body) != meta.body_sha256 {
            return Err(PipelineError::BadCheckpoint {
                path: bin,
                reason: "checksum mismatch".into(),
            });
        }
        Self::decode(&body, &meta, &bin)
    }
}

/// The checkpoint with the highest step in `dir`, if any.
pub fn latest_checkpoint(dir: &Path) -> Option<PathBuf> {
    let entries = std::fs::read_dir(dir).ok()?;
    entries
        .filter_map(|e| {
            let name = e.ok()?.file_name().into_string().ok()?;
            let step: u64 = name.strip_prefix("ckpt_")?.strip_suffix(".bin")?.parse().ok()?;
            Some((step, dir.join(name)))
        })
        .max_by_key(|(s, _)| *s)
        .map(|(_, p)| p)
}
