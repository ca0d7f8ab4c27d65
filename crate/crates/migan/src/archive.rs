//! Tensor archive: a magic tag, a JSON header and a little-endian `f64`
//! payload guarded by SHA-256.
//!
//! ```text
//! b"MIGANARC" | u32 version | u64 header length | header JSON | payload
//! ```
//!
//! The header names the archive kind, carries free-form metadata and lists
//! every tensor with its shape and element offset into the payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use migan_core::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MIGANARC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Element offset into the payload.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
    pub payload_sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Archive {
    pub fn new(kind: &str, meta: serde_json::Value, tensors: Vec<(String, Tensor)>) -> Self {
        Archive { kind: kind.to_string(), meta, tensors }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let total: usize = self.tensors.iter().map(|(_, t)| t.len()).sum();
        let mut payload = Vec::with_capacity(total * 8);
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0;
        for (name, t) in &self.tensors {
            entries.push(TensorEntry { name: name.clone(), shape: t.shape().to_vec(), offset });
            offset += t.len();
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            tensors: entries,
            payload_sha256: sha256_hex(&payload),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        out
    }

    /// Parses and verifies an archive. `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |m: String| Error::format(path, "tensor archive", m);
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("missing archive magic".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = &bytes[20..];
        if hlen > body.len() {
            return Err(bad("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| bad(format!("header: {e}")))?;
        let payload = &body[hlen..];
        let digest = sha256_hex(payload);
        if digest != header.payload_sha256 {
            return Err(migan_core::Error::Checksum(format!(
                "{}: payload hash {digest} differs from recorded {}",
                path.display(),
                header.payload_sha256
            ))
            .into());
        }
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in &header.tensors {
            let n: usize = e.shape.iter().product();
            let (start, end) = (e.offset * 8, (e.offset + n) * 8);
            if end > payload.len() {
                return Err(bad(format!("tensor {} runs past the payload", e.name)));
            }
            let data = payload[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push((e.name.clone(), Tensor::from_vec(&e.shape, data)?));
        }
        Ok(Archive { kind: header.kind, meta: header.meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Archive::from_bytes(&bytes, path)
    }

    /// Loads and checks the archive kind.
    pub fn load_kind(path: &Path, kind: &'static str) -> Result<Self> {
        let a = Archive::load(path)?;
        if a.kind != kind {
            return Err(Error::format(path, kind, format!("archive holds {:?}", a.kind)));
        }
        Ok(a)
    }
}

/// Writes via a sibling temporary file so readers never see a partial file.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Archive {
        Archive::new(
            "test",
            serde_json::json!({"k": 1}),
            vec![
                ("a".into(), Tensor::from_vec(&[2, 2], vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300]).unwrap()),
                ("b".into(), Tensor::from_vec(&[3], vec![0.1, 0.2, 0.3]).unwrap()),
            ],
        )
    }

    #[test]
    fn round_trips_bit_exactly() {
        let a = sample();
        let back = Archive::from_bytes(&a.to_bytes(), Path::new("x")).unwrap();
        assert_eq!(back.kind, "test");
        for ((n1, t1), (n2, t2)) in a.tensors.iter().zip(&back.tensors) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(t1), bits(t2));
        }
        assert_eq!(a.to_bytes(), back.to_bytes());
    }

    #[test]
    fn corrupted_payload_fails_the_checksum() {
        let mut bytes = sample().to_bytes();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        let err = Archive::from_bytes(&bytes, Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::Core(migan_core::Error::Checksum(_))));
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn rejects_foreign_files() {
        assert!(Archive::from_bytes(b"PNG....", Path::new("x")).is_err());
        let mut bytes = sample().to_bytes();
        bytes[8] = 9;
        assert!(matches!(Archive::from_bytes(&bytes, Path::new("x")), Err(Error::Format { .. })));
    }
}
