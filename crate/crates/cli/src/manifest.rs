//! Run manifests: enough metadata to verify that a rerun saw the same
//! inputs and settings.

use std::fmt::Write as _;
use std::path::Path;

use mfd_core::Error;

/// FNV-1a 64-bit digest.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Key/value description of one command invocation.
pub struct RunManifest {
    entries: Vec<(String, String)>,
    blocks: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        let mut m = Self { entries: Vec::new(), blocks: Vec::new() };
        m.set("command", command.to_string());
        m.set("tool_version", env!("CARGO_PKG_VERSION").to_string());
        let timestamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        m.set("timestamp_unix", timestamp.to_string());
        m
    }

    pub fn set(&mut self, key: &str, value: String) {
        self.entries.push((key.to_string(), value));
    }

    /// Record an input file along with its content digest.
    pub fn add_input(&mut self, path: &Path) -> Result<(), Error> {
        let bytes = std::fs::read(path)?;
        self.set(
            "input",
            format!("{} fnv1a64={:016x}", path.display(), fnv1a64(&bytes)),
        );
        Ok(())
    }

    pub fn add_output(&mut self, name: &str) {
        self.set("output", name.to_string());
    }

    /// Multi-line block rendered indented under its key.
    pub fn set_block(&mut self, key: &str, text: &str) {
        self.blocks.push((key.to_string(), text.to_string()));
    }

    pub fn write(&self, path: &Path) -> Result<(), Error> {
        let mut out = String::new();
        for (k, v) in &self.entries {
            writeln!(out, "{k} = {v}").expect("write to string");
        }
        for (k, block) in &self.blocks {
            writeln!(out, "{k}:").expect("write to string");
            for line in block.lines() {
                writeln!(out, "  {line}").expect("write to string");
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_stable() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
    }
}
