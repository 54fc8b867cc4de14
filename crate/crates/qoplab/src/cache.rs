//! On-disk cache of eigendecompositions.
//!
//! Entry format (`<key>.eig`): a 16-byte magic `QOPLAB-EIGCACHE1`, a `u32`
//! format version, the operator dimension and eigenpair count as `u64`,
//! then a little-endian `f64` payload — the eigenvalues followed by the
//! eigenvector components interleaved as (re, im) in column-major order.
//! Everything else in a decomposition (quadrature weights, the solver's
//! norm scale) is a cheap deterministic function of the model and operator
//! and is supplied by the caller on a hit.
//!
//! Writes go through a per-entry lock file plus an atomic rename, so
//! concurrent runs never observe a partial entry.  Entries with a stale
//! version are ignored but left in place (an older binary may still want
//! them); corrupt or truncated entries are logged and treated as misses.

use num_complex::Complex64;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use qoplab_core::spectral::{SolverPath, SpectralDecomposition};

pub const MAGIC: &[u8; 16] = b"QOPLAB-EIGCACHE1";
pub const FORMAT_VERSION: u32 = 1;

/// Handle to a cache directory.
#[derive(Debug, Clone)]
pub struct EigenCache {
    dir: PathBuf,
}

/// Removes the lock file when the guard goes out of scope.
struct LockGuard {
    path: PathBuf,
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

impl EigenCache {
    pub fn new(dir: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(EigenCache {
            dir: dir.to_path_buf(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn entry_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.eig"))
    }

    fn acquire_lock(&self, key: &str) -> Option<LockGuard> {
        let path = self.dir.join(format!("{key}.lock"));
        for _ in 0..100 {
            match fs::OpenOptions::new()
                .write(true)
                .create_new(true)
                .open(&path)
            {
                Ok(_) => return Some(LockGuard { path }),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    std::thread::sleep(Duration::from_millis(50));
                }
                Err(e) => {
                    log::warn!("cannot create lock file {}: {e}", path.display());
                    return None;
                }
            }
        }
        log::warn!("gave up waiting for cache lock {}", path.display());
        None
    }

    /// Store a decomposition.  Failure to cache is logged, never fatal:
    /// the caller already holds the computed result.
    pub fn put(&self, key: &str, decomp: &SpectralDecomposition) {
        let Some(_lock) = self.acquire_lock(key) else {
            return;
        };
        let tmp = self.dir.join(format!("{key}.tmp.{}", std::process::id()));
        let result = (|| -> std::io::Result<()> {
            let mut file = fs::File::create(&tmp)?;
            let mut buf = Vec::with_capacity(
                MAGIC.len() + 4 + 16 + 8 * (decomp.count() + 2 * decomp.dim() * decomp.count()),
            );
            buf.extend_from_slice(MAGIC);
            buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
            buf.extend_from_slice(&(decomp.dim() as u64).to_le_bytes());
            buf.extend_from_slice(&(decomp.count() as u64).to_le_bytes());
            for &ev in decomp.eigenvalues() {
                buf.extend_from_slice(&ev.to_le_bytes());
            }
            for z in decomp.vectors_flat() {
                buf.extend_from_slice(&z.re.to_le_bytes());
                buf.extend_from_slice(&z.im.to_le_bytes());
            }
            file.write_all(&buf)?;
            file.sync_all()?;
            drop(file);
            fs::rename(&tmp, self.entry_path(key))
        })();
        if let Err(e) = result {
            log::warn!("failed to write cache entry {key}: {e}");
            let _ = fs::remove_file(&tmp);
        }
    }

    /// Look up a decomposition.  `weights` and `norm_scale` are the
    /// deterministic companions of the cached eigenproblem; `path` must be
    /// the solver path the caller would otherwise take, so reports stay
    /// truthful on hits.
    pub fn get(
        &self,
        key: &str,
        weights: &[f64],
        norm_scale: f64,
        path: SolverPath,
    ) -> Option<SpectralDecomposition> {
        let path_on_disk = self.entry_path(key);
        let mut file = match fs::File::open(&path_on_disk) {
            Ok(f) => f,
            Err(_) => return None,
        };
        let mut bytes = Vec::new();
        if let Err(e) = file.read_to_end(&mut bytes) {
            log::warn!("unreadable cache entry {key}: {e}");
            return None;
        }
        let header = MAGIC.len() + 4 + 16;
        if bytes.len() < header {
            log::warn!("cache entry {key} truncated at {} bytes", bytes.len());
            return None;
        }
        if &bytes[..MAGIC.len()] != MAGIC {
            log::warn!("cache entry {key} has wrong magic");
            return None;
        }
        let mut off = MAGIC.len();
        let version = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        off += 4;
        if version != FORMAT_VERSION {
            log::debug!("cache entry {key} has version {version}, ignoring");
            return None;
        }
        let dim = u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()) as usize;
        off += 8;
        let count = u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()) as usize;
        off += 8;
        let expected = header + 8 * (count + 2 * dim * count);
        if bytes.len() != expected || dim != weights.len() {
            log::warn!(
                "cache entry {key} inconsistent: {} bytes for dim {dim}, count {count}",
                bytes.len()
            );
            return None;
        }
        let mut read_f64 = || {
            let v = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
            off += 8;
            v
        };
        let eigenvalues: Vec<f64> = (0..count).map(|_| read_f64()).collect();
        let vectors: Vec<Complex64> = (0..dim * count)
            .map(|_| {
                let re = read_f64();
                let im = read_f64();
                Complex64::new(re, im)
            })
            .collect();
        Some(SpectralDecomposition::from_raw_parts(
            eigenvalues,
            vectors,
            dim,
            weights.to_vec(),
            path,
            norm_scale,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use qoplab_core::geometry::{build_model, ModelKind};
    use qoplab_core::operator::{assemble_bochner, compute_tau, renormalize};
    use qoplab_core::prequantum::build_landau_phases;
    use qoplab_core::spectral::eigendecompose;

    fn small_decomposition() -> (SpectralDecomposition, Vec<f64>, f64) {
        let m = build_model(ModelKind::FlatTorus2, 12, None).unwrap();
        let raw = assemble_bochner(&m, &build_landau_phases(&m, 2).unwrap()).unwrap();
        let op = renormalize(&raw, &compute_tau(&m), 2, None).unwrap();
        let d = eigendecompose(&op, Some(6)).unwrap();
        let (lo, hi) = op.gershgorin();
        (d, m.weights().to_vec(), lo.abs().max(hi.abs()))
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let cache = EigenCache::new(dir.path()).unwrap();
        let (d, weights, scale) = small_decomposition();
        cache.put("k1", &d);
        let restored = cache
            .get("k1", &weights, scale, SolverPath::Iterative)
            .expect("hit");
        assert_eq!(restored.dim(), d.dim());
        assert_eq!(restored.count(), d.count());
        for (a, b) in restored.eigenvalues().iter().zip(d.eigenvalues()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in restored.vectors_flat().iter().zip(d.vectors_flat()) {
            assert_eq!(a.re.to_bits(), b.re.to_bits());
            assert_eq!(a.im.to_bits(), b.im.to_bits());
        }
        // Lock file cleaned up after the put.
        assert!(!dir.path().join("k1.lock").exists());
    }

    #[test]
    fn missing_stale_and_corrupt_entries_miss() {
        let dir = tempfile::tempdir().unwrap();
        let cache = EigenCache::new(dir.path()).unwrap();
        let (d, weights, scale) = small_decomposition();
        assert!(cache
            .get("absent", &weights, scale, SolverPath::Iterative)
            .is_none());

        // Stale version: patch the version field; ignored but kept.
        cache.put("stale", &d);
        let path = dir.path().join("stale.eig");
        let mut bytes = fs::read(&path).unwrap();
        bytes[16..20].copy_from_slice(&2u32.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        assert!(cache
            .get("stale", &weights, scale, SolverPath::Iterative)
            .is_none());
        assert!(path.exists(), "stale entries are left in place");

        // Truncation and magic corruption are misses.
        cache.put("short", &d);
        let path = dir.path().join("short.eig");
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(cache
            .get("short", &weights, scale, SolverPath::Iterative)
            .is_none());

        cache.put("mangled", &d);
        let path = dir.path().join("mangled.eig");
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] ^= 0xff;
        fs::write(&path, &bytes).unwrap();
        assert!(cache
            .get("mangled", &weights, scale, SolverPath::Iterative)
            .is_none());
    }
}
