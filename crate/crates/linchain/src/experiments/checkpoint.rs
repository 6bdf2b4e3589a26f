//! Versioned binary container for adapter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   8 bytes  b"LINCHKPT"
//! version u32      currently 1
//! config  u64 length + UTF-8 TOML of the AdapterConfig (may be empty)
//! count   u64      number of matrices
//! per matrix: name (u64 length + UTF-8), rows u64, cols u64,
//!             rows·cols f64 entries (IEEE-754 bit patterns)
//! ```
//!
//! Entries are stored as raw bit patterns, so save → load round-trips
//! every matrix bitwise.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::adapters::{AdaptedLinear, AdapterConfig};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

const MAGIC: &[u8; 8] = b"LINCHKPT";
const VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn write_bytes(out: &mut impl Write, bytes: &[u8]) -> Result<()> {
    out.write_all(&(bytes.len() as u64).to_le_bytes())?;
    out.write_all(bytes)?;
    Ok(())
}

fn write_matrix(out: &mut impl Write, name: &str, m: &Matrix) -> Result<()> {
    write_bytes(out, name.as_bytes())?;
    out.write_all(&(m.rows() as u64).to_le_bytes())?;
    out.write_all(&(m.cols() as u64).to_le_bytes())?;
    for v in m.as_slice() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn exact(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| bad("truncated checkpoint file"))?;
        Ok(buf)
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.exact(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn sized_bytes(&mut self) -> Result<Vec<u8>> {
        let len = self.u64()?;
        if len > 1 << 32 {
            return Err(bad(format!("implausible block length {len}")));
        }
        self.exact(len as usize)
    }

    fn string(&mut self) -> Result<String> {
        String::from_utf8(self.sized_bytes()?).map_err(|_| bad("non-UTF-8 string block"))
    }

    fn matrix(&mut self) -> Result<(String, Matrix)> {
        let name = self.string()?;
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        if rows == 0 || cols == 0 || rows.saturating_mul(cols) > 1 << 28 {
            return Err(bad(format!("implausible matrix shape {rows}x{cols}")));
        }
        let bytes = self.exact(rows * cols * 8)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((name, Matrix::from_vec(rows, cols, data)?))
    }
}

/// Write named matrices (with an optional config string) to `path`.
pub fn save_container(
    path: &Path,
    config_toml: &str,
    matrices: &[(&str, &Matrix)],
) -> Result<()> {
    let mut out = Vec::new();
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    write_bytes(&mut out, config_toml.as_bytes())?;
    out.write_all(&(matrices.len() as u64).to_le_bytes())?;
    for (name, m) in matrices {
        write_matrix(&mut out, name, m)?;
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read a container back as (config string, named matrices).
pub fn load_container(path: &Path) -> Result<(String, Vec<(String, Matrix)>)> {
    let file = fs::File::open(path)?;
    let mut r = Reader {
        inner: std::io::BufReader::new(file),
    };
    let magic = r.exact(8)?;
    if magic != MAGIC {
        return Err(bad(format!(
            "bad magic {:?}; not a linchain checkpoint",
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = u32::from_le_bytes(r.exact(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(bad(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let config = r.string()?;
    let count = r.u64()?;
    if count > 4096 {
        return Err(bad(format!("implausible matrix count {count}")));
    }
    let mut matrices = Vec::with_capacity(count as usize);
    for _ in 0..count {
        matrices.push(r.matrix()?);
    }
    Ok((config, matrices))
}

/// Save an adapter: its config plus `w0`, `A`, `W1` … `Wn`, `B`.
pub fn checkpoint_save(ad: &AdaptedLinear, path: &Path) -> Result<()> {
    let config_toml =
        toml::to_string_pretty(ad.config()).map_err(|e| bad(format!("config encode: {e}")))?;
    let mut matrices: Vec<(&str, &Matrix)> = vec![("w0", ad.w0())];
    let names = ad.param_names();
    for (name, m) in names.iter().zip(ad.params()) {
        matrices.push((name.as_str(), m));
    }
    // `names` lives until here; re-borrow to satisfy the container call.
    save_container(path, &config_toml, &matrices)
}

/// Load an adapter checkpoint, re-validating every shape.
pub fn checkpoint_load(path: &Path) -> Result<AdaptedLinear> {
    let (config_toml, matrices) = load_container(path)?;
    let config: AdapterConfig = toml::from_str(&config_toml)
        .map_err(|e| bad(format!("config block does not parse: {e}")))?;

    let take = |name: &str| -> Result<Matrix> {
        matrices
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m.clone())
            .ok_or_else(|| bad(format!("checkpoint is missing matrix {name:?}")))
    };
    let w0 = take("w0")?;
    let a = take("A")?;
    let chain: Vec<Matrix> = (1..=config.num_chain_matrices())
        .map(|i| take(&format!("W{i}")))
        .collect::<Result<_>>()?;
    let b = take("B")?;
    AdaptedLinear::from_parts(config, w0, a, chain, b)
        .map_err(|e| bad(format!("inconsistent checkpoint: {e}")))
}

/// Load a checkpoint that must match `expected`; a different stored
/// config is an explicit error rather than a silent reinterpretation.
pub fn checkpoint_load_with_config(
    path: &Path,
    expected: &AdapterConfig,
) -> Result<AdaptedLinear> {
    let ad = checkpoint_load(path)?;
    if ad.config() != expected {
        return Err(bad(format!(
            "checkpoint config {} does not match expected {}",
            ad.config().label(),
            expected.label()
        )));
    }
    Ok(ad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::{init_adapter, Method};
    use crate::linalg::RngState;

    fn sample_adapter() -> AdaptedLinear {
        let config = AdapterConfig::new(Method::Linchain, 6, 5, vec![3, 2, 3]);
        let mut rng = RngState::new(77);
        let w0 = Matrix::uniform(6, 5, -1.0, 1.0, &mut rng);
        let mut ad = init_adapter(&config, w0, &mut rng.derive()).unwrap();
        ad.randomize_uniform(-1.0, 1.0, &mut rng);
        ad
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("adapter.ckpt");
        let ad = sample_adapter();
        checkpoint_save(&ad, &path).unwrap();
        let loaded = checkpoint_load(&path).unwrap();

        assert_eq!(loaded.config(), ad.config());
        assert!(loaded.w0().bit_equal(ad.w0()));
        for (a, b) in loaded.params().iter().zip(ad.params()) {
            assert!(a.bit_equal(b));
        }
    }

    #[test]
    fn mismatched_config_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("adapter.ckpt");
        let ad = sample_adapter();
        checkpoint_save(&ad, &path).unwrap();

        let other = AdapterConfig::new(Method::Lora, 6, 5, vec![3]);
        let err = checkpoint_load_with_config(&path, &other).unwrap_err();
        assert!(err.to_string().contains("does not match"));
    }

    #[test]
    fn bad_magic_and_truncation_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"NOTACKPT------------").unwrap();
        assert!(checkpoint_load(&path).is_err());

        let good = dir.path().join("good.ckpt");
        checkpoint_save(&sample_adapter(), &good).unwrap();
        let bytes = std::fs::read(&good).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        let err = checkpoint_load(&path).unwrap_err();
        assert!(err.to_string().contains("truncated"));
    }

    #[test]
    fn merged_weight_container_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("merged.ckpt");
        let ad = sample_adapter();
        let merged = ad.merge();
        save_container(&path, "", &[("merged", &merged)]).unwrap();
        let (config, matrices) = load_container(&path).unwrap();
        assert!(config.is_empty());
        assert!(matrices[0].1.bit_equal(&merged));

        let reconstructed = ad.w0().add(&ad.delta_weight()).unwrap();
        assert_eq!(matrices[0].1.max_abs_diff(&reconstructed).unwrap(), 0.0);
    }
}
