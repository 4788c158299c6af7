#![allow(dead_code)]

use std::path::{Path, PathBuf};

use hybridrag::config::Config;
use hybridrag::workspace::{Providers, Workspace};

pub fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/mock-corpus")
}

pub fn corpus_config() -> Config {
    Config::load(&corpus_dir().join("hybridrag.toml")).expect("bundled config parses")
}

pub fn layout_files() -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(corpus_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.to_string_lossy().ends_with(".layout.json"))
        .collect();
    v.sort();
    v
}

/// Runs ingest through index into `root` with the given config.
pub fn build_pipeline(root: &Path, config: Config) -> (Workspace, Providers) {
    let ws = Workspace::with_config(root, config).unwrap();
    let p = ws.providers().unwrap();
    ws.ingest(&layout_files()).unwrap();
    ws.enrich(p.chat.as_ref(), false).unwrap();
    ws.chunk(p.chat.as_ref(), false).unwrap();
    ws.genqa(p.chat.as_ref(), false).unwrap();
    ws.index(p.embed.as_ref(), None, false).unwrap();
    (ws, p)
}

/// Small deterministic generator for test fixtures.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        self.0 >> 33
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.next() % n
    }

    pub fn unit(&mut self) -> f32 {
        (self.next() as f64 / (1u64 << 31) as f64) as f32 * 2.0 - 1.0
    }
}
