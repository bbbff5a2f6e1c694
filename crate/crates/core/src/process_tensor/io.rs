//! Binary PT cache file.
//!
//! Layout: the 7 magic bytes `PTMPO1\0`, a little-endian `u64` header length,
//! the UTF-8 JSON header, then the payload. The payload holds every node in time
//! order as row-major `(bond_left, bond_right, out, in)` arrays of `(re, im)`
//! little-endian `f64` pairs, followed by caps 0 … N. The header records the
//! SHA-256 of the payload.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array4};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bath::BathSpec;
use crate::error::{Error, Result};
use crate::linalg::C64;

use super::{CompressionConfig, ProcessTensorMPO, PtMeta};

pub const MAGIC: &[u8; 7] = b"PTMPO1\0";
pub const FORMAT_VERSION: u32 = 1;

/// Largest system dimension accepted from a file.
const MAX_SYS_DIM: usize = 16;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    dt: f64,
    n_steps: usize,
    sys_dim: usize,
    bond_dims: Vec<usize>,
    memory_steps: usize,
    compression: CompressionConfig,
    bath: BathSpec,
    payload_sha256: String,
}

/// Only the version, so that files from other versions report a version error
/// rather than a schema error.
#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

fn payload(pt: &ProcessTensorMPO) -> Vec<u8> {
    let entries: usize = pt.nodes().iter().map(|t| t.len()).sum::<usize>()
        + pt.caps().iter().map(|c| c.len()).sum::<usize>();
    let mut out = Vec::with_capacity(entries * 16);
    let mut push = |z: &C64| {
        out.extend_from_slice(&z.re.to_le_bytes());
        out.extend_from_slice(&z.im.to_le_bytes());
    };
    for node in pt.nodes() {
        // logical (row-major) order regardless of memory layout
        node.iter().for_each(&mut push);
    }
    for cap in pt.caps() {
        cap.iter().for_each(&mut push);
    }
    out
}

/// SHA-256 of the payload, lowercase hex.
pub fn payload_sha256(pt: &ProcessTensorMPO) -> String {
    hex::encode(Sha256::digest(payload(pt)))
}

/// Serializes a PT to the cache format.
pub fn to_bytes(pt: &ProcessTensorMPO) -> Result<Vec<u8>> {
    let body = payload(pt);
    let meta = pt.meta();
    let header = Header {
        format_version: FORMAT_VERSION,
        dt: meta.dt,
        n_steps: meta.n_steps,
        sys_dim: meta.sys_dim,
        bond_dims: pt.bond_dims(),
        memory_steps: meta.memory_steps,
        compression: meta.compression,
        bath: meta.bath.clone(),
        payload_sha256: hex::encode(Sha256::digest(&body)),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + json.len() + body.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&body);
    Ok(out)
}

fn overflow() -> Error {
    Error::Format("declared tensor sizes overflow".into())
}

/// Parses and validates a PT cache file image.
pub fn from_bytes(bytes: &[u8]) -> Result<ProcessTensorMPO> {
    let fixed = MAGIC.len() + 8;
    if bytes.len() < fixed {
        return Err(Error::Format(format!("file too short ({} bytes)", bytes.len())));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let mut len_bytes = [0u8; 8];
    len_bytes.copy_from_slice(&bytes[MAGIC.len()..fixed]);
    let header_len = u64::from_le_bytes(len_bytes);
    let rest = &bytes[fixed..];
    let header_len = usize::try_from(header_len)
        .ok()
        .filter(|&n| n <= rest.len())
        .ok_or_else(|| Error::Format("header length exceeds file size".into()))?;
    let (header_bytes, body) = rest.split_at(header_len);

    let probe: VersionProbe = serde_json::from_slice(header_bytes)
        .map_err(|e| Error::Format(format!("unreadable header: {e}")))?;
    if probe.format_version != FORMAT_VERSION {
        return Err(Error::Version {
            found: probe.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let header: Header = serde_json::from_slice(header_bytes)
        .map_err(|e| Error::Format(format!("invalid header: {e}")))?;

    if !(header.dt > 0.0 && header.dt.is_finite()) {
        return Err(Error::Format(format!("invalid dt {}", header.dt)));
    }
    if header.sys_dim == 0 || header.sys_dim > MAX_SYS_DIM {
        return Err(Error::Format(format!("unsupported sys_dim {}", header.sys_dim)));
    }
    if header.bath.sys_dim() != header.sys_dim {
        return Err(Error::Format("bath coupling operator does not match sys_dim".into()));
    }
    header
        .compression
        .validate()
        .map_err(|e| Error::Format(format!("invalid compression settings: {e}")))?;
    let n = header.n_steps;
    let bonds = &header.bond_dims;
    if n == 0 || bonds.len() != n + 1 {
        return Err(Error::Format(format!(
            "{} bond dimensions for {} steps",
            bonds.len(),
            n
        )));
    }
    if bonds[0] != 1 || bonds[n] != 1 || bonds.contains(&0) {
        return Err(Error::Format("bond dimensions must be positive with unit ends".into()));
    }
    if header.memory_steps == 0 {
        return Err(Error::Format("memory_steps must be positive".into()));
    }

    let dd = header.sys_dim * header.sys_dim;
    let dd2 = dd * dd;
    let mut entries: usize = 0;
    for w in bonds.windows(2) {
        let node = w[0]
            .checked_mul(w[1])
            .and_then(|x| x.checked_mul(dd2))
            .ok_or_else(overflow)?;
        entries = entries.checked_add(node).ok_or_else(overflow)?;
    }
    for &b in bonds {
        entries = entries.checked_add(b).ok_or_else(overflow)?;
    }
    let expected_len = entries.checked_mul(16).ok_or_else(overflow)?;
    if body.len() != expected_len {
        return Err(Error::Format(format!(
            "payload has {} bytes, header implies {expected_len}",
            body.len()
        )));
    }
    let digest = hex::encode(Sha256::digest(body));
    if digest != header.payload_sha256 {
        return Err(Error::Integrity {
            expected: header.payload_sha256,
            found: digest,
        });
    }

    let mut values = body.chunks_exact(16).map(|c| {
        let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
        let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
        C64::new(re, im)
    });
    let mut nodes = Vec::with_capacity(n);
    for w in bonds.windows(2) {
        let shape = (w[0], w[1], dd, dd);
        let data: Vec<C64> = values.by_ref().take(w[0] * w[1] * dd2).collect();
        nodes.push(Array4::from_shape_vec(shape, data).expect("length checked above"));
    }
    let caps: Vec<Array1<C64>> = bonds
        .iter()
        .map(|&b| Array1::from_iter(values.by_ref().take(b)))
        .collect();

    let meta = PtMeta {
        dt: header.dt,
        n_steps: n,
        sys_dim: header.sys_dim,
        memory_steps: header.memory_steps,
        compression: header.compression,
        bath: header.bath,
    };
    ProcessTensorMPO::from_parts(nodes, caps, meta).map_err(|e| match e {
        Error::NonFinite(what) => Error::Format(format!("non-finite value in {what}")),
        other => other,
    })
}

/// Writes the PT to `path` (via a sibling temporary file and rename).
pub fn save_pt(pt: &ProcessTensorMPO, path: &Path) -> Result<()> {
    let bytes = to_bytes(pt)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_pt(path: &Path) -> Result<ProcessTensorMPO> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process_tensor::build_pt;

    fn small_pt(alpha: f64) -> ProcessTensorMPO {
        let bath = BathSpec {
            alpha,
            ..BathSpec::reference()
        };
        let cfg = CompressionConfig {
            memory_time: 0.25,
            ..CompressionConfig::default()
        };
        build_pt(&bath, 0.05, 8, &cfg).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        for alpha in [0.0, 0.126] {
            let pt = small_pt(alpha);
            let back = from_bytes(&to_bytes(&pt).unwrap()).unwrap();
            assert_eq!(payload(&pt), payload(&back));
            assert_eq!(pt, back);
        }
    }

    #[test]
    fn save_and_load_through_the_filesystem() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pt.bin");
        let pt = small_pt(0.126);
        save_pt(&pt, &path).unwrap();
        assert_eq!(load_pt(&path).unwrap(), pt);
    }

    #[test]
    fn corrupted_payload_fails_integrity() {
        let mut bytes = to_bytes(&small_pt(0.126)).unwrap();
        let last = bytes.len() - 20;
        bytes[last] ^= 0x01;
        assert!(matches!(from_bytes(&bytes), Err(Error::Integrity { .. })));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let bytes = to_bytes(&small_pt(0.126)).unwrap();
        for cut in [3, 12, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(from_bytes(&bytes[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
    }

    #[test]
    fn other_versions_are_reported() {
        let mut bytes = to_bytes(&small_pt(0.0)).unwrap();
        let key = b"\"format_version\":1";
        let at = bytes.windows(key.len()).position(|w| w == key).unwrap();
        bytes[at + key.len() - 1] = b'7';
        assert!(matches!(
            from_bytes(&bytes),
            Err(Error::Version { found: 7, expected: 1 })
        ));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut bytes = to_bytes(&small_pt(0.0)).unwrap();
        bytes[0] = b'X';
        assert!(matches!(from_bytes(&bytes), Err(Error::Format(_))));
    }
}
