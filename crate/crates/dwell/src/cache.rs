//! On-disk cache for level-0 base propagators.
//!
//! Building the base propagator (a Liouville-space matrix exponential) is the
//! dominant setup cost of a run, and it depends only on the generator and the
//! base step.  Entries are keyed by a SHA-256 fingerprint over exact float
//! bits of every parameter that enters the generator, so a warm run replays
//! the identical matrix bit for bit and downstream output cannot drift.
//!
//! File layout (all little-endian): magic `DWELLPRP`, format version (u32),
//! Hilbert dimension (u64), squaring level (u32, always 0 here), base step
//! (f64 bits), then the row-major dim^2 x dim^2 complex matrix as (re, im)
//! f64 pairs.  Files are written to a temporary name and renamed into place,
//! and any header or size mismatch on read is treated as a miss.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use num_complex::Complex64;
use sha2::{Digest, Sha256};

use crate::config::SolverSpec;
use crate::fock::SystemSpec;
use crate::liouville::{Liouvillian, Propagator};
use crate::{Error, Result};

/// Environment variable that supplies a cache directory when no explicit
/// `--cache-dir` is given.
pub const CACHE_DIR_ENV: &str = "DWELL_CACHE_DIR";

const MAGIC: &[u8; 8] = b"DWELLPRP";
const FORMAT_VERSION: u32 = 1;

/// Handle to a cache directory.
#[derive(Debug, Clone)]
pub struct PropagatorCache {
    dir: PathBuf,
}

impl PropagatorCache {
    /// Open (creating if needed) a cache at `dir`.
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)
            .map_err(|e| Error::Cache(format!("cannot create cache dir {}: {e}", dir.display())))?;
        Ok(PropagatorCache {
            dir: dir.to_path_buf(),
        })
    }

    /// Resolve the cache location: an explicit path wins, else the
    /// `DWELL_CACHE_DIR` environment variable, else caching is off.
    pub fn resolve(explicit: Option<&Path>) -> Result<Option<Self>> {
        if let Some(dir) = explicit {
            return Ok(Some(Self::open(dir)?));
        }
        match std::env::var_os(CACHE_DIR_ENV) {
            Some(dir) => Ok(Some(Self::open(Path::new(&dir))?)),
            None => Ok(None),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn entry_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.prp"))
    }

    /// Load a cached base propagator.  Any mismatch — absent file, foreign
    /// magic, wrong dimension or step, truncation — is a miss, never an
    /// error: the caller just rebuilds and overwrites.
    pub fn load(&self, key: &str, generator: &Liouvillian, dt: f64) -> Option<Propagator> {
        let path = self.entry_path(key);
        let mut file = fs::File::open(path).ok()?;

        let mut header = [0u8; 8 + 4 + 8 + 4 + 8];
        file.read_exact(&mut header).ok()?;
        if &header[0..8] != MAGIC {
            return None;
        }
        let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
        let dim = u64::from_le_bytes(header[12..20].try_into().unwrap()) as usize;
        let level = u32::from_le_bytes(header[20..24].try_into().unwrap());
        let step_bits = u64::from_le_bytes(header[24..32].try_into().unwrap());
        if version != FORMAT_VERSION
            || dim != generator.dim()
            || level != 0
            || step_bits != dt.to_bits()
        {
            return None;
        }

        let n = dim * dim;
        let mut payload = vec![0u8; n * n * 16];
        file.read_exact(&mut payload).ok()?;
        // Exactly one matrix and nothing more.
        let mut trailer = [0u8; 1];
        if file.read(&mut trailer).ok()? != 0 {
            return None;
        }

        let mut entries = Vec::with_capacity(n * n);
        for chunk in payload.chunks_exact(16) {
            let re = f64::from_le_bytes(chunk[0..8].try_into().unwrap());
            let im = f64::from_le_bytes(chunk[8..16].try_into().unwrap());
            if !(re.is_finite() && im.is_finite()) {
                return None;
            }
            entries.push(Complex64::new(re, im));
        }
        let matrix = Array2::from_shape_vec((n, n), entries).ok()?;
        Some(Propagator::from_parts(matrix, dt, 0, generator.basis()))
    }

    /// Store a level-0 base propagator under `key`.
    pub fn store(&self, key: &str, propagator: &Propagator) -> Result<()> {
        if propagator.level() != 0 {
            return Err(Error::Cache(
                "only level-0 base propagators are cacheable".into(),
            ));
        }
        let matrix = propagator.matrix();
        let mut bytes =
            Vec::with_capacity(32 + matrix.len() * 16);
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        bytes.extend_from_slice(&(propagator.dim() as u64).to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes());
        bytes.extend_from_slice(&propagator.base_step().to_bits().to_le_bytes());
        for z in matrix.iter() {
            bytes.extend_from_slice(&z.re.to_le_bytes());
            bytes.extend_from_slice(&z.im.to_le_bytes());
        }

        let final_path = self.entry_path(key);
        let tmp_path = self.dir.join(format!("{key}.prp.tmp"));
        {
            let mut tmp = fs::File::create(&tmp_path)
                .map_err(|e| Error::Cache(format!("cannot write cache entry: {e}")))?;
            tmp.write_all(&bytes)
                .map_err(|e| Error::Cache(format!("cannot write cache entry: {e}")))?;
            tmp.sync_all()
                .map_err(|e| Error::Cache(format!("cannot flush cache entry: {e}")))?;
        }
        fs::rename(&tmp_path, &final_path)
            .map_err(|e| Error::Cache(format!("cannot finalize cache entry: {e}")))?;
        Ok(())
    }
}

/// Cache key for the base propagator of one run: a SHA-256 digest over the
/// exact bit patterns of everything the generator depends on.
pub fn propagator_key(system: &SystemSpec, solver: &SolverSpec, dt: f64) -> String {
    let mut h = Sha256::new();
    h.update(b"dwell-propagator-v1");
    h.update((system.particles() as u64).to_le_bytes());
    h.update(system.tunneling().to_bits().to_le_bytes());
    h.update(system.interaction().to_bits().to_le_bytes());
    match solver {
        SolverSpec::Redfield { bath } => {
            h.update([1u8]);
            h.update(bath.coupling().to_bits().to_le_bytes());
            h.update(bath.temperature().value().to_bits().to_le_bytes());
            h.update(bath.cutoff().to_bits().to_le_bytes());
            h.update([bath.include_lamb_shift() as u8]);
        }
        SolverSpec::Lindblad { rate } => {
            h.update([2u8]);
            h.update(rate.to_bits().to_le_bytes());
        }
    }
    h.update(dt.to_bits().to_le_bytes());
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::{BathSpec, Temperature};
    use crate::liouville::build_propagator;

    fn sample() -> (SystemSpec, SolverSpec, Liouvillian) {
        let system = SystemSpec::new(4, 1.0, 10.0).unwrap();
        let solver = SolverSpec::Lindblad { rate: 0.1 };
        let gen = Liouvillian::lindblad(&system, 0.1).unwrap();
        (system, solver, gen)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let tmp = std::env::temp_dir().join(format!("dwell-cache-rt-{}", std::process::id()));
        let cache = PropagatorCache::open(&tmp).unwrap();
        let (system, solver, gen) = sample();
        let dt = 0.01;
        let key = propagator_key(&system, &solver, dt);

        assert!(cache.load(&key, &gen, dt).is_none());
        let built = build_propagator(&gen, dt).unwrap();
        cache.store(&key, &built).unwrap();
        let loaded = cache.load(&key, &gen, dt).expect("warm hit");

        assert_eq!(loaded.dim(), built.dim());
        assert_eq!(loaded.base_step().to_bits(), built.base_step().to_bits());
        for (a, b) in loaded.matrix().iter().zip(built.matrix().iter()) {
            assert_eq!(a.re.to_bits(), b.re.to_bits());
            assert_eq!(a.im.to_bits(), b.im.to_bits());
        }
        fs::remove_dir_all(&tmp).ok();
    }

    #[test]
    fn key_separates_parameters_and_step() {
        let (system, solver, _) = sample();
        let base = propagator_key(&system, &solver, 0.01);
        assert_ne!(base, propagator_key(&system, &solver, 0.02));
        assert_ne!(
            base,
            propagator_key(&system, &SolverSpec::Lindblad { rate: 0.2 }, 0.01)
        );
        let other_system = SystemSpec::new(5, 1.0, 10.0).unwrap();
        assert_ne!(base, propagator_key(&other_system, &solver, 0.01));
        let bath = BathSpec::new(0.1, Temperature::new(10.0).unwrap(), 500.0, false).unwrap();
        assert_ne!(
            base,
            propagator_key(&system, &SolverSpec::Redfield { bath }, 0.01)
        );
        // Same inputs, same key.
        assert_eq!(base, propagator_key(&system, &solver, 0.01));
    }

    #[test]
    fn mismatched_entries_are_misses_not_errors() {
        let tmp = std::env::temp_dir().join(format!("dwell-cache-miss-{}", std::process::id()));
        let cache = PropagatorCache::open(&tmp).unwrap();
        let (system, solver, gen) = sample();
        let dt = 0.01;
        let key = propagator_key(&system, &solver, dt);
        let built = build_propagator(&gen, dt).unwrap();
        cache.store(&key, &built).unwrap();

        // Wrong step: header check fails.
        assert!(cache.load(&key, &gen, 0.02).is_none());
        // Wrong generator dimension: header check fails.
        let bigger = Liouvillian::lindblad(&SystemSpec::new(6, 1.0, 10.0).unwrap(), 0.1).unwrap();
        assert!(cache.load(&key, &bigger, dt).is_none());
        // Truncated file: size check fails.
        let path = cache.entry_path(&key);
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(cache.load(&key, &gen, dt).is_none());
        // Foreign magic: rejected outright.
        fs::write(&path, b"NOTADWELLFILE").unwrap();
        assert!(cache.load(&key, &gen, dt).is_none());
        fs::remove_dir_all(&tmp).ok();
    }

    #[test]
    fn resolve_prefers_explicit_path() {
        let tmp = std::env::temp_dir().join(format!("dwell-cache-res-{}", std::process::id()));
        let cache = PropagatorCache::resolve(Some(&tmp)).unwrap().unwrap();
        assert_eq!(cache.dir(), tmp.as_path());
        fs::remove_dir_all(&tmp).ok();
    }
}
