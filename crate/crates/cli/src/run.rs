//! Layout of a training run directory and helpers shared by the commands.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use dapper_core::checkpoint::Checkpoint;
use dapper_core::corpus::{read_vocab, CorpusFormat, TimeMode};
use dapper_core::trainer::TrainConfig;
use dapper_core::Error;
use sha2::{Digest, Sha256};

use crate::{CliResult, Failure};

pub const MANIFEST: &str = "manifest.txt";
pub const CONFIG: &str = "config.toml";
pub const VOCAB: &str = "vocab.txt";
pub const AUTHORS: &str = "authors.txt";
pub const CHECKPOINTS: &str = "checkpoints";
pub const MODEL: &str = "model.ckpt";
pub const REPORT: &str = "report.tsv";
pub const TIMING: &str = "timing.tsv";
pub const STATUS: &str = "status.txt";

pub fn epoch_checkpoint(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(CHECKPOINTS).join(format!("epoch-{epoch:04}.ckpt"))
}

pub fn parse_format(s: &str) -> Result<CorpusFormat, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

pub fn parse_time_mode(s: &str) -> Result<TimeMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

pub fn write(path: &Path, contents: &str) -> CliResult {
    fs::write(path, contents).map_err(|e| {
        Failure::from(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

pub fn create_dir(path: &Path) -> CliResult {
    fs::create_dir_all(path).map_err(|e| {
        Failure::from(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

pub fn read_config(path: &Path) -> CliResult<TrainConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    TrainConfig::from_toml(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let mut file = fs::File::open(path).map_err(|e| {
        Failure::from(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| {
            Failure::from(Error::Io {
                path: path.to_path_buf(),
                source: e,
            })
        })?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn unix_seconds() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// A finished (or in-progress) training run on disk.
pub struct Run {
    pub config: TrainConfig,
    pub vocab: Vec<String>,
    pub authors: Vec<String>,
    pub checkpoint: Checkpoint,
}

impl Run {
    /// Loads the run's configuration, vocabulary, authors and a checkpoint
    /// (the final model unless another is given), and checks that the
    /// checkpoint was produced by that configuration.
    pub fn open(dir: &Path, checkpoint: Option<&Path>, config: Option<&Path>) -> CliResult<Run> {
        let config_path = config.map_or_else(|| dir.join(CONFIG), Path::to_path_buf);
        let config = read_config(&config_path)?;
        let vocab = read_vocab(dir.join(VOCAB))?;
        let authors = read_vocab(dir.join(AUTHORS))?;
        let ckpt_path = match checkpoint {
            Some(p) => p.to_path_buf(),
            None => latest_checkpoint(dir)?,
        };
        let checkpoint = Checkpoint::load(&ckpt_path)?;
        if checkpoint.config_hash != config.hash() {
            return Err(Failure::config(format!(
                "{} was not produced by the configuration in {} (hash mismatch)",
                ckpt_path.display(),
                config_path.display()
            )));
        }
        let state = &checkpoint.state;
        if state.vocab_size() != vocab.len() || state.num_authors() != authors.len() {
            return Err(Failure::data(format!(
                "{} does not match the run's vocabulary ({} terms) and authors ({})",
                ckpt_path.display(),
                vocab.len(),
                authors.len()
            )));
        }
        Ok(Run {
            config,
            vocab,
            authors,
            checkpoint,
        })
    }
}

/// The final model if present, otherwise the newest epoch checkpoint.
pub fn latest_checkpoint(dir: &Path) -> CliResult<PathBuf> {
    let model = dir.join(MODEL);
    if model.exists() {
        return Ok(model);
    }
    let mut epochs: Vec<PathBuf> = fs::read_dir(dir.join(CHECKPOINTS))
        .map(|entries| {
            entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
                .collect()
        })
        .unwrap_or_default();
    epochs.sort();
    epochs
        .pop()
        .ok_or_else(|| Failure::data(format!("no checkpoint found in {}", dir.display())))
}
