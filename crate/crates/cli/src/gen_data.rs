use crate::error::{CliError, CliResult};
use crate::files::{create_dir, read_text, sha256_file, write_json};
use detdiv_core::data::{generate, save_dataset, GeneratorConfig};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const TRAIN_FILE: &str = "train.dvds";
pub const TEST_FILE: &str = "test.dvds";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct FileEntry {
    pub samples: usize,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub seed: u64,
    pub config: GeneratorConfig,
    pub files: BTreeMap<String, FileEntry>,
}

pub fn load_generator_config(path: Option<&Path>) -> CliResult<GeneratorConfig> {
    let Some(path) = path else { return Ok(GeneratorConfig::default()) };
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn gen_data(config: Option<&Path>, seed: Option<u64>, out: &Path) -> CliResult<Manifest> {
    let mut cfg = load_generator_config(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let split = generate(&cfg)?;
    create_dir(out)?;
    let mut files = BTreeMap::new();
    for (name, data) in [(TRAIN_FILE, &split.train), (TEST_FILE, &split.test)] {
        let path: PathBuf = out.join(name);
        save_dataset(data, &path).map_err(|e| CliError::read(&path, e))?;
        files.insert(name.to_string(), FileEntry { samples: data.len(), sha256: sha256_file(&path)? });
    }
    let manifest = Manifest { seed: cfg.seed, config: cfg, files };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}
