//! Content-addressed store of Hamiltonian eigendecompositions.
//!
//! Entries are keyed by the SHA-256 of `(2j, Ω_x, ξ_y)` bit patterns. Each
//! file carries its own SHA-256 trailer and the fingerprint of the
//! Hamiltonian it diagonalizes, so a corrupt or stale entry is detected and
//! recomputed. Writers take a lock file; a writer that finds the lock held
//! skips the store rather than waiting.

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::time::{Duration, Instant, SystemTime};

use elmg_core::dynamics::{make_propagator, FiniteModel, Propagator};
use elmg_core::linalg::fingerprint;
use elmg_core::spin_model::{build_hamiltonian, build_spin_ops};
use elmg_core::ModelParams;
use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use crate::output::CacheStats;
use crate::CliError;

pub const CACHE_ENV: &str = "ELMG_CACHE_DIR";

const MAGIC: &[u8; 8] = b"ELMGEIG1";
const STALE_LOCK: Duration = Duration::from_secs(600);

pub fn default_root() -> PathBuf {
    if let Some(dir) = std::env::var_os(CACHE_ENV) {
        return PathBuf::from(dir);
    }
    if let Some(dir) = std::env::var_os("XDG_CACHE_HOME") {
        return PathBuf::from(dir).join("elmg");
    }
    if let Some(home) = std::env::var_os("HOME") {
        return PathBuf::from(home).join(".cache").join("elmg");
    }
    std::env::temp_dir().join("elmg-cache")
}

#[derive(Debug)]
pub struct EigenCache {
    root: Option<PathBuf>,
    hits: AtomicUsize,
    misses: AtomicUsize,
    diag_nanos: AtomicU64,
}

pub fn key(p: &ModelParams) -> String {
    let mut h = Sha256::new();
    h.update(b"elmg-eigen-v1");
    h.update(p.spin.twice_j().to_le_bytes());
    h.update(p.omega_x.to_bits().to_le_bytes());
    h.update(p.xi_y.to_bits().to_le_bytes());
    hex::encode(h.finalize())
}

fn encode(prop: &Propagator) -> Vec<u8> {
    let d = prop.dim();
    let mut out = Vec::with_capacity(32 + 8 * d * (d + 1) + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(d as u64).to_le_bytes());
    out.extend_from_slice(&prop.fingerprint.to_le_bytes());
    for v in prop.eigenvalues.iter().chain(prop.eigenvectors.iter()) {
        out.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

fn decode(bytes: &[u8], expected_fingerprint: u64) -> Option<Propagator> {
    if bytes.len() < 24 + 32 || &bytes[..8] != MAGIC {
        return None;
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != trailer {
        return None;
    }
    let word = |k: usize| u64::from_le_bytes(body[8 * k..8 * k + 8].try_into().unwrap());
    let d = usize::try_from(word(1)).ok()?;
    let fp = word(2);
    if fp != expected_fingerprint || body.len() != 24 + 8 * d * (d + 1) {
        return None;
    }
    let floats: Vec<f64> = (3..3 + d * (d + 1))
        .map(|k| f64::from_bits(word(k)))
        .collect();
    Some(Propagator {
        eigenvalues: DVector::from_column_slice(&floats[..d]),
        eigenvectors: DMatrix::from_column_slice(d, d, &floats[d..]),
        fingerprint: fp,
    })
}

impl EigenCache {
    pub fn new(root: Option<PathBuf>) -> Self {
        Self {
            root,
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
            diag_nanos: AtomicU64::new(0),
        }
    }

    pub fn disabled() -> Self {
        Self::new(None)
    }

    fn entry_path(&self, key: &str) -> Option<PathBuf> {
        self.root
            .as_ref()
            .map(|r| r.join(&key[..2]).join(format!("{key}.eig")))
    }

    /// Exact finite-j model at `p`, diagonalizing only on a cache miss.
    pub fn model(&self, p: ModelParams) -> Result<FiniteModel, CliError> {
        let ops = build_spin_ops(p.spin)?;
        let h = build_hamiltonian(&p, &ops)?;
        let fp = fingerprint(&h);
        let path = self.entry_path(&key(&p));
        if let Some(path) = &path {
            if let Some(prop) = fs::read(path).ok().and_then(|b| decode(&b, fp)) {
                self.hits.fetch_add(1, Ordering::Relaxed);
                return Ok(FiniteModel::from_parts(p, ops, h, prop));
            }
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let start = Instant::now();
        let prop = make_propagator(&h)?;
        self.diag_nanos
            .fetch_add(start.elapsed().as_nanos() as u64, Ordering::Relaxed);
        if let Some(path) = &path {
            if let Err(e) = store(path, &encode(&prop)) {
                log::warn!("cache store at {} failed: {e}", path.display());
            }
        }
        Ok(FiniteModel::from_parts(p, ops, h, prop))
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            enabled: self.root.is_some(),
            root: self.root.as_ref().map(|r| r.display().to_string()),
            hits: self.hits(),
            misses: self.misses(),
            diagonalization_seconds: self.diag_nanos.load(Ordering::Relaxed) as f64 * 1e-9,
        }
    }
}

struct LockGuard(PathBuf);

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn acquire(lock: &Path) -> std::io::Result<Option<LockGuard>> {
    for _ in 0..2 {
        match OpenOptions::new().write(true).create_new(true).open(lock) {
            Ok(_) => return Ok(Some(LockGuard(lock.to_path_buf()))),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                let age = fs::metadata(lock)
                    .and_then(|m| m.modified())
                    .ok()
                    .and_then(|m| SystemTime::now().duration_since(m).ok());
                if age.is_some_and(|a| a > STALE_LOCK) {
                    let _ = fs::remove_file(lock);
                    continue;
                }
                return Ok(None);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(None)
}

fn store(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path
        .parent()
        .expect("cache entries live in a shard directory");
    fs::create_dir_all(dir)?;
    let lock = path.with_extension("lock");
    let Some(_guard) = acquire(&lock)? else {
        return Ok(());
    };
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}
