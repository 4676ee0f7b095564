//! On-disk cache for oracle results, keyed by family, lattice and the exact
//! bit patterns of the couplings.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::hamiltonian::HamiltonianFamily;

#[derive(Clone, Debug)]
pub struct OracleCache {
    dir: PathBuf,
}

impl OracleCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(OracleCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Hex key for a `(quantity, family, gamma)` triple.
    pub fn key(quantity: &str, family: &HamiltonianFamily, gamma: &[f64]) -> String {
        let mut h = Sha256::new();
        h.update(quantity.as_bytes());
        h.update([0]);
        h.update(family.kind.name().as_bytes());
        h.update([0]);
        h.update(serde_json::to_vec(&family.lattice).expect("lattice serializes"));
        h.update(family.j.to_bits().to_le_bytes());
        for g in gamma {
            h.update(g.to_bits().to_le_bytes());
        }
        let digest = h.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Returns the cached value or computes and stores it.
    pub fn get_or_compute<T, F>(&self, quantity: &str, family: &HamiltonianFamily, gamma: &[f64], f: F) -> Result<T>
    where
        T: Serialize + DeserializeOwned,
        F: FnOnce() -> Result<T>,
    {
        let path = self.dir.join(format!("{}.json", Self::key(quantity, family, gamma)));
        if let Ok(bytes) = fs::read(&path) {
            if let Ok(v) = serde_json::from_slice(&bytes) {
                return Ok(v);
            }
        }
        let value = f()?;
        let tmp = tempfile_in(&self.dir)?;
        fs::write(&tmp, serde_json::to_vec(&value)?)?;
        fs::rename(&tmp, &path)?;
        Ok(value)
    }
}

fn tempfile_in(dir: &Path) -> Result<PathBuf> {
    use std::sync::atomic::{AtomicU64, Ordering};
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let k = COUNTER.fetch_add(1, Ordering::Relaxed);
    Ok(dir.join(format!(".tmp-{}-{k}", std::process::id())))
}
