//! Run manifests: what was run, on which inputs, and when.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

pub const FILE_NAME: &str = "manifest.txt";

pub struct Manifest {
    command: String,
    argv: Vec<String>,
    out: PathBuf,
    config: Option<PathBuf>,
    seed: Option<u64>,
    hasher: Sha256,
    started: u64,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl Manifest {
    pub fn start(command: &str, argv: &[String], out: &Path) -> Self {
        Self {
            command: command.into(),
            argv: argv.to_vec(),
            out: out.to_path_buf(),
            config: None,
            seed: None,
            hasher: Sha256::new(),
            started: unix_now(),
        }
    }

    pub fn config(&mut self, path: &Path, seed: u64) {
        self.config = Some(path.to_path_buf());
        self.seed = Some(seed);
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    /// Feeds an input file's bytes into the content hash.
    pub fn hash_input(&mut self, bytes: &[u8]) {
        self.hasher.update((bytes.len() as u64).to_le_bytes());
        self.hasher.update(bytes);
    }

    pub fn finish(self) -> io::Result<()> {
        let mut s = format!("command={}\n", self.command);
        s.push_str(&format!("argv={}\n", self.argv.join(" ")));
        if let Some(c) = &self.config {
            s.push_str(&format!("config={}\n", c.display()));
        }
        if let Some(seed) = self.seed {
            s.push_str(&format!("seed={seed}\n"));
        }
        s.push_str(&format!("input_sha256={}\n", hex(&self.hasher.finalize())));
        s.push_str(&format!("out={}\n", self.out.display()));
        s.push_str(&format!("version={}\n", env!("CARGO_PKG_VERSION")));
        s.push_str(&format!("started={}\nfinished={}\n", self.started, unix_now()));
        fs::create_dir_all(&self.out)?;
        fs::write(self.out.join(FILE_NAME), s)
    }
}
