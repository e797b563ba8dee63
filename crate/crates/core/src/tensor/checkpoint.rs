//! Parameter checkpoint files.
//!
//! Layout:
//!
//! ```text
//! magic        8 bytes  "MDPARAMS"
//! header_len   u64 little-endian
//! header       header_len bytes of UTF-8 JSON
//! payload      f64 little-endian values, blocks concatenated in header order
//! ```
//!
//! The header records the ordering version, the named blocks with their
//! lengths, and free-form metadata (architecture, normalizer statistics,
//! config hash) supplied by the owner of the parameters.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MDPARAMS";
/// Canonical parameter ordering version; bump whenever a layout changes.
pub const ORDERING_VERSION: u32 = 1;
pub const ORDERING: &str = "per layer: weight (fan_in x fan_out, row-major) then bias; \
gru blocks Wz Uz bz Wr Ur br Wn Un bn Wo bo";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub ordering_version: u32,
    pub ordering: String,
    pub blocks: Vec<BlockInfo>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    pub blocks: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn new(metadata: serde_json::Value) -> Self {
        Self {
            header: Header {
                ordering_version: ORDERING_VERSION,
                ordering: ORDERING.to_string(),
                blocks: Vec::new(),
                metadata,
            },
            blocks: Vec::new(),
        }
    }

    pub fn with_block(mut self, name: &str, values: &[f64]) -> Self {
        self.header.blocks.push(BlockInfo {
            name: name.to_string(),
            len: values.len(),
        });
        self.blocks.push(values.to_vec());
        self
    }

    pub fn block(&self, name: &str) -> Result<&[f64]> {
        self.header
            .blocks
            .iter()
            .position(|b| b.name == name)
            .map(|i| self.blocks[i].as_slice())
            .ok_or_else(|| Error::Artifact(format!("checkpoint has no block `{name}`")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let total: usize = self.blocks.iter().map(Vec::len).sum();
        let mut out = Vec::with_capacity(16 + header.len() + 8 * total);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for b in &self.blocks {
            for v in b {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Artifact("checkpoint truncated before magic".into()))?;
        if &magic != MAGIC {
            return Err(Error::Artifact("not a parameter checkpoint (bad magic)".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)
            .map_err(|_| Error::Artifact("checkpoint truncated in header length".into()))?;
        let len = u64::from_le_bytes(len) as usize;
        if r.len() < len {
            return Err(Error::Artifact("checkpoint truncated in header".into()));
        }
        let header: Header = serde_json::from_slice(&r[..len])?;
        r = &r[len..];
        if header.ordering_version != ORDERING_VERSION {
            return Err(Error::Artifact(format!(
                "unsupported ordering version {} (expected {ORDERING_VERSION})",
                header.ordering_version
            )));
        }
        let total: usize = header.blocks.iter().map(|b| b.len).sum();
        if r.len() != total * 8 {
            return Err(Error::Artifact(format!(
                "checkpoint payload has {} bytes, header declares {} values",
                r.len(),
                total
            )));
        }
        let mut blocks = Vec::with_capacity(header.blocks.len());
        for info in &header.blocks {
            let mut b = Vec::with_capacity(info.len);
            for chunk in r[..info.len * 8].chunks_exact(8) {
                b.push(f64::from_le_bytes(chunk.try_into().unwrap()));
            }
            r = &r[info.len * 8..];
            blocks.push(b);
        }
        Ok(Self { header, blocks })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes()?)?;
            f.sync_all()?;
        }
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::Artifact(format!("missing checkpoint {}", path.display()))
            } else {
                Error::Io(e)
            }
        })?;
        Self::from_bytes(&bytes)
    }

    /// Reads only the header.
    pub fn read_header(path: &Path) -> Result<Header> {
        Ok(Self::load(path)?.header)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn bytes_round_trip(a in proptest::collection::vec(any::<f64>(), 0..40),
                            b in proptest::collection::vec(-1e6f64..1e6, 0..40)) {
            let ck = Checkpoint::new(serde_json::json!({"arch": [3, 4, 2]}))
                .with_block("theta", &a)
                .with_block("psi", &b);
            let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
            prop_assert_eq!(back.header, ck.header);
            for (x, y) in back.blocks.iter().flatten().zip(ck.blocks.iter().flatten()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn payload_is_little_endian_after_header() {
        let ck = Checkpoint::new(serde_json::Value::Null).with_block("theta", &[1.5, -2.0]);
        let bytes = ck.to_bytes().unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[16..16 + n]).unwrap();
        assert_eq!(header["blocks"][0]["len"], 2);
        assert_eq!(&bytes[16 + n..16 + n + 8], &1.5f64.to_le_bytes());
        assert_eq!(bytes.len(), 16 + n + 16);
    }

    #[test]
    fn corrupt_inputs_are_artifact_errors() {
        assert!(matches!(Checkpoint::from_bytes(b"nope"), Err(Error::Artifact(_))));
        let mut bytes = Checkpoint::new(serde_json::Value::Null)
            .with_block("theta", &[1.0])
            .to_bytes()
            .unwrap();
        bytes.pop();
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Artifact(_))));
        let missing = Checkpoint::load(Path::new("/nonexistent/ck.bin"));
        assert!(matches!(missing, Err(Error::Artifact(_))));
    }
}
