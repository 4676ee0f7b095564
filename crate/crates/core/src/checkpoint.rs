//! Versioned checkpoints.
//!
//! A checkpoint is a directory:
//!
//! ```text
//! checkpoint/
//!   config.toml     run configuration that produced it
//!   weights.fnqs    binary parameters, see below
//!   state.json      optimizer step, divergence guard, sampler chains
//!   README.md       human-readable card
//! ```
//!
//! `weights.fnqs` is `b"FNQSWGT\0"`, a little-endian `u32` version, a
//! little-endian `u64` header length, a JSON header (model config, family,
//! parameter count), the parameters as little-endian `f64`, and finally the
//! SHA-256 of everything before it.
//!
//! Directories are written next to the target and renamed into place, so a
//! reader sees either the previous checkpoint or the complete new one.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::couplings::CouplingVector;
use crate::error::{Error, Result};
use crate::hamiltonian::HamiltonianFamily;
use crate::sampler::ChainSnapshot;
use crate::vit::{ViT, ViTConfig};

pub const MAGIC: &[u8; 8] = b"FNQSWGT\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct WeightsHeader {
    model: ViTConfig,
    family: HamiltonianFamily,
    n_params: usize,
}

/// Optimizer and sampler state next to the weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingState {
    pub step: usize,
    pub guard: Option<(f64, f64)>,
    pub couplings: Vec<CouplingVector>,
    pub sampler_started: bool,
    pub chains: Vec<ChainSnapshot>,
}

/// Everything needed to rebuild a model and continue its training.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ViTConfig,
    pub family: HamiltonianFamily,
    pub params: Vec<f64>,
    pub state: TrainingState,
    /// Serialized run configuration, stored verbatim.
    pub config_toml: String,
}

impl Checkpoint {
    pub fn from_model(model: &ViT, state: TrainingState, config_toml: String) -> Self {
        Checkpoint {
            model: model.config.clone(),
            family: model.family.clone(),
            params: model.params.values.clone(),
            state,
            config_toml,
        }
    }

    /// Rebuilds the model with the stored parameters.
    pub fn to_model(&self) -> Result<ViT> {
        let mut vit = ViT::build(self.model.clone(), self.family.clone())?;
        if vit.n_params() != self.params.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "model needs {} parameters, checkpoint has {}",
                vit.n_params(),
                self.params.len()
            )));
        }
        vit.params.values.copy_from_slice(&self.params);
        Ok(vit)
    }

    pub fn encode_weights(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&WeightsHeader {
            model: self.model.clone(),
            family: self.family.clone(),
            n_params: self.params.len(),
        })?;
        let mut out = Vec::with_capacity(20 + header.len() + 8 * self.params.len() + 32);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    /// Parses `weights.fnqs`; returns `(model, family, params)`.
    pub fn decode_weights(bytes: &[u8]) -> Result<(ViTConfig, HamiltonianFamily, Vec<f64>)> {
        let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_string());
        if bytes.len() < 20 + 32 || &bytes[..8] != MAGIC {
            return Err(corrupt("not a weights file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: VERSION,
            });
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch"));
        }
        let hlen = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
        let header_end = 20usize.checked_add(hlen).filter(|&e| e <= body.len()).ok_or_else(|| corrupt("header length"))?;
        let header: WeightsHeader = serde_json::from_slice(&body[20..header_end])?;
        let raw = &body[header_end..];
        if raw.len() != 8 * header.n_params {
            return Err(corrupt("parameter block length"));
        }
        let params = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok((header.model, header.family, params))
    }

    fn card(&self) -> String {
        format!(
            "# Checkpoint\n\n\
             - family: {}\n\
             - lattice: {:?}\n\
             - model: {} layers, {} heads, width {}, patch {}\n\
             - parameters: {}\n\
             - optimizer step: {}\n\
             - systems in the training ensemble: {}\n\n\
             Load with `fnqs evaluate` or `Checkpoint::load`.\n",
            self.family.kind.name(),
            self.family.lattice,
            self.model.layers,
            self.model.heads,
            self.model.dim,
            self.model.patch,
            self.params.len(),
            self.state.step,
            self.state.couplings.len(),
        )
    }

    /// Writes the checkpoint directory atomically.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(parent)?;
        let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or("checkpoint");
        let tmp = tempfile::Builder::new().prefix(&format!(".{name}.tmp")).tempdir_in(parent)?;
        fs::write(tmp.path().join("weights.fnqs"), self.encode_weights()?)?;
        fs::write(tmp.path().join("state.json"), serde_json::to_vec_pretty(&self.state)?)?;
        fs::write(tmp.path().join("config.toml"), &self.config_toml)?;
        fs::write(tmp.path().join("README.md"), self.card())?;
        let staged = tmp.keep();
        let old = parent.join(format!(".{name}.old"));
        if dir.exists() {
            if old.exists() {
                fs::remove_dir_all(&old)?;
            }
            fs::rename(dir, &old)?;
        }
        fs::rename(&staged, dir)?;
        if old.exists() {
            fs::remove_dir_all(&old)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (model, family, params) = Self::decode_weights(&fs::read(dir.join("weights.fnqs"))?)?;
        let state: TrainingState = serde_json::from_slice(&fs::read(dir.join("state.json"))?)?;
        let config_toml = fs::read_to_string(dir.join("config.toml"))?;
        Ok(Checkpoint {
            model,
            family,
            params,
            state,
            config_toml,
        })
    }
}

/// Default checkpoint location inside a run's output directory.
pub fn checkpoint_dir(output: &Path) -> PathBuf {
    output.join("checkpoint")
}
