//! Reproducibility sidecars: every primary output gets a manifest naming
//! the command, its inputs (as a digest), the seed, and the tool version.

use std::path::Path;

use serde_json::json;

/// FNV-1a over the given byte chunks.
fn digest(chunks: &[&[u8]]) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for chunk in chunks {
        for &b in *chunk {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        hash ^= 0xff;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("fnv1a64:{hash:016x}")
}

pub struct RunManifest {
    pub command: &'static str,
    pub args: Vec<String>,
    pub config_digest: String,
    pub seed: Option<u64>,
}

impl RunManifest {
    pub fn new(command: &'static str, inputs: &[&[u8]], seed: Option<u64>) -> Self {
        RunManifest {
            command,
            args: std::env::args().skip(1).collect(),
            config_digest: digest(inputs),
            seed,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let created_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        json!({
            "schema": "ancreg/run_manifest/v1",
            "command": self.command,
            "args": self.args,
            "config_digest": self.config_digest,
            "seed": self.seed,
            "version": env!("CARGO_PKG_VERSION"),
            "created_unix": created_unix,
        })
    }

    /// Writes `<output>.manifest.json` next to a primary output file.
    pub fn write_sidecar(&self, primary: &Path) -> std::io::Result<()> {
        let mut name = primary
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "output".into());
        name.push_str(".manifest.json");
        let path = primary.with_file_name(name);
        crate::write_atomic(&path, &format!("{:#}\n", self.to_json()))
    }
}
