//! Run manifests: every artifact the CLI produces is traceable to the
//! command, config, seed, and content hashes of its inputs.

use std::path::Path;

use seal_core::Result;
use serde::Serialize;

#[derive(Serialize)]
pub struct FileRef {
    pub path: String,
    pub fnv1a: String,
}

#[derive(Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub inputs: Vec<FileRef>,
    pub outputs: Vec<FileRef>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seed: u64) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(file_ref(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(file_ref(path)?);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }
}

fn file_ref(path: &Path) -> Result<FileRef> {
    let bytes = std::fs::read(path)?;
    Ok(FileRef {
        path: path.display().to_string(),
        fnv1a: format!("{:016x}", fnv1a(&bytes)),
    })
}

/// FNV-1a over raw bytes; enough to pin dataset and cache contents.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        // Well-known FNV-1a test vectors.
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x85944171f73967e8);
    }
}
