//! Checkpoint directories.
//!
//! ```text
//! ckpt_<iter>/
//!   adapter.bin     adapter tensors
//!   optimizer.bin   Adam moments
//!   losses.csv      loss log up to this iteration
//!   samples.csv     sampled ages up to this iteration
//!   config.json     resolved configuration
//!   meta.json       run metadata and the SHA-256 of every file above
//! ```
//!
//! A checkpoint is written to a sibling temporary directory and renamed into
//! place, so an interrupted save never replaces a complete checkpoint.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapter::{AdapterNetwork, AdapterParams, AdapterShape};
use crate::backends::BackendBundle;
use crate::config::{AblationFlags, TrainingConfig};
use crate::data::AgedPhotoCollection;
use crate::optim::Adam;
use crate::tensor_io::{read_tensors, write_tensors, NamedTensor};
use crate::trainer::{losses_csv, parse_logs, samples_csv, TrainingState, LOSSES_CSV, SAMPLES_CSV};

pub const ADAPTER_FILE: &str = "adapter.bin";
pub const OPTIMIZER_FILE: &str = "optimizer.bin";
pub const CONFIG_FILE: &str = "config.json";
pub const META_FILE: &str = "meta.json";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o at {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("checkpoint metadata: {0}")]
    Meta(String),
    #[error("{file} does not match the hash recorded in the metadata (expected {expected}, found {actual})")]
    HashMismatch {
        file: String,
        expected: String,
        actual: String,
    },
    #[error("checkpoint tensors: {0}")]
    Tensor(String),
    #[error("checkpoint log: {0}")]
    Log(String),
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
}

type CkResult<T> = Result<T, CheckpointError>;

fn io(path: &Path, e: impl std::fmt::Display) -> CheckpointError {
    CheckpointError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub iteration: u64,
    pub age_min: f64,
    pub age_max: f64,
    pub config_hash: String,
    pub backend_name: String,
    pub backend_seed: u64,
    pub seed: u64,
    pub adapter_shape: AdapterShape,
    pub flags: AblationFlags,
    pub adam_step: u64,
    pub rng_seed: String,
    pub rng_stream: u64,
    /// u128 word position, as a decimal string.
    pub rng_word_pos: String,
    /// SHA-256 of each data file, keyed by file name.
    pub files: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn named<'a>(params: &'a AdapterParams, prefix: &str) -> Vec<(String, Vec<usize>, &'a [f64])> {
    params
        .shapes()
        .into_iter()
        .zip(params.tensors())
        .map(|((n, shape), (_, data))| (format!("{prefix}{n}"), shape, data))
        .collect()
}

fn tensor_bytes(list: &[(String, Vec<usize>, &[f64])]) -> CkResult<Vec<u8>> {
    let view: Vec<(&str, &[usize], &[f64])> = list
        .iter()
        .map(|(n, s, d)| (n.as_str(), s.as_slice(), *d))
        .collect();
    let mut out = Vec::new();
    write_tensors(&mut out, &view).map_err(|e| CheckpointError::Tensor(e.to_string()))?;
    Ok(out)
}

fn fill_params(params: &mut AdapterParams, tensors: &[NamedTensor], prefix: &str) -> CkResult<()> {
    let shapes = params.shapes();
    for ((name, shape), (_, slot)) in shapes.iter().zip(params.tensors_mut()) {
        let full = format!("{prefix}{name}");
        let t = tensors
            .iter()
            .find(|t| t.name == full)
            .ok_or_else(|| CheckpointError::Tensor(format!("missing tensor {full}")))?;
        if &t.shape != shape {
            return Err(CheckpointError::Tensor(format!(
                "tensor {full} has shape {:?}, expected {shape:?}",
                t.shape
            )));
        }
        slot.copy_from_slice(&t.data);
    }
    Ok(())
}

pub fn save_checkpoint(
    dir: &Path,
    state: &TrainingState,
    config: &TrainingConfig,
    collection: &AgedPhotoCollection,
    bundle: &BackendBundle,
) -> CkResult<()> {
    let mut moments = named(&state.optimizer.m, "m.");
    moments.extend(named(&state.optimizer.v, "v."));
    let files: Vec<(&str, Vec<u8>)> = vec![
        (ADAPTER_FILE, tensor_bytes(&named(state.net.params(), ""))?),
        (OPTIMIZER_FILE, tensor_bytes(&moments)?),
        (LOSSES_CSV, losses_csv(&state.log).into_bytes()),
        (SAMPLES_CSV, samples_csv(&state.log).into_bytes()),
        (CONFIG_FILE, config.canonical_json().into_bytes()),
    ];
    let meta = CheckpointMeta {
        format_version: FORMAT_VERSION,
        iteration: state.iteration,
        age_min: collection.age_min().years(),
        age_max: collection.age_max().years(),
        config_hash: config.hash(),
        backend_name: bundle.name.clone(),
        backend_seed: bundle.seed,
        seed: config.seed,
        adapter_shape: *state.net.shape(),
        flags: config.flags,
        adam_step: state.optimizer.step,
        rng_seed: hex::encode(state.rng.get_seed()),
        rng_stream: state.rng.get_stream(),
        rng_word_pos: state.rng.get_word_pos().to_string(),
        files: files
            .iter()
            .map(|(n, b)| (n.to_string(), sha256_hex(b)))
            .collect(),
    };

    let name = dir
        .file_name()
        .ok_or_else(|| CheckpointError::Meta(format!("bad checkpoint path {}", dir.display())))?;
    let parent = dir.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
    let tmp = parent.join(format!(".{}.tmp", name.to_string_lossy()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| io(&tmp, e))?;
    }
    fs::create_dir_all(&tmp).map_err(|e| io(&tmp, e))?;
    for (n, bytes) in &files {
        let p = tmp.join(n);
        fs::write(&p, bytes).map_err(|e| io(&p, e))?;
    }
    let meta_json = serde_json::to_string_pretty(&meta).map_err(|e| CheckpointError::Meta(e.to_string()))?;
    let p = tmp.join(META_FILE);
    fs::write(&p, meta_json).map_err(|e| io(&p, e))?;
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| io(dir, e))?;
    }
    fs::rename(&tmp, dir).map_err(|e| io(dir, e))?;
    Ok(())
}

pub fn read_meta(dir: &Path) -> CkResult<CheckpointMeta> {
    let p = dir.join(META_FILE);
    let text = fs::read_to_string(&p).map_err(|e| io(&p, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| CheckpointError::Meta(e.to_string()))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(CheckpointError::Meta(format!(
            "unsupported format version {}",
            meta.format_version
        )));
    }
    Ok(meta)
}

/// Reads a data file and checks it against the recorded hash.
fn read_verified(dir: &Path, meta: &CheckpointMeta, name: &str) -> CkResult<Vec<u8>> {
    let expected = meta
        .files
        .get(name)
        .ok_or_else(|| CheckpointError::Meta(format!("no hash recorded for {name}")))?;
    let p = dir.join(name);
    let bytes = fs::read(&p).map_err(|e| io(&p, e))?;
    let actual = sha256_hex(&bytes);
    if &actual != expected {
        return Err(CheckpointError::HashMismatch {
            file: name.to_string(),
            expected: expected.clone(),
            actual,
        });
    }
    Ok(bytes)
}

fn read_params(bytes: &[u8], shape: &AdapterShape, prefix: &str) -> CkResult<AdapterParams> {
    let tensors = read_tensors(&mut &bytes[..]).map_err(|e| CheckpointError::Tensor(e.to_string()))?;
    let mut params = AdapterParams::zeros(shape);
    fill_params(&mut params, &tensors, prefix)?;
    Ok(params)
}

/// The adapter stored in a checkpoint.
pub fn load_adapter(dir: &Path) -> CkResult<(AdapterNetwork, CheckpointMeta)> {
    let meta = read_meta(dir)?;
    let bytes = read_verified(dir, &meta, ADAPTER_FILE)?;
    let params = read_params(&bytes, &meta.adapter_shape, "")?;
    let net = AdapterNetwork::from_params(meta.adapter_shape, params)
        .map_err(|e| CheckpointError::Tensor(e.to_string()))?;
    Ok((net, meta))
}

pub fn load_config(dir: &Path) -> CkResult<TrainingConfig> {
    let meta = read_meta(dir)?;
    let bytes = read_verified(dir, &meta, CONFIG_FILE)?;
    serde_json::from_slice(&bytes).map_err(|e| CheckpointError::Meta(e.to_string()))
}

pub fn load_checkpoint(dir: &Path) -> CkResult<(TrainingState, CheckpointMeta)> {
    let (net, meta) = load_adapter(dir)?;
    let config = load_config(dir)?;
    let opt = read_verified(dir, &meta, OPTIMIZER_FILE)?;
    let mut optimizer = Adam::new(config.adam, &meta.adapter_shape);
    optimizer.step = meta.adam_step;
    optimizer.m = read_params(&opt, &meta.adapter_shape, "m.")?;
    optimizer.v = read_params(&opt, &meta.adapter_shape, "v.")?;

    let losses = String::from_utf8(read_verified(dir, &meta, LOSSES_CSV)?)
        .map_err(|e| CheckpointError::Log(e.to_string()))?;
    let samples = String::from_utf8(read_verified(dir, &meta, SAMPLES_CSV)?)
        .map_err(|e| CheckpointError::Log(e.to_string()))?;
    let log = parse_logs(&losses, &samples)?;

    let seed_bytes = hex::decode(&meta.rng_seed).map_err(|e| CheckpointError::Meta(e.to_string()))?;
    let seed: [u8; 32] = seed_bytes
        .try_into()
        .map_err(|_| CheckpointError::Meta("rng seed must be 32 bytes".into()))?;
    let word_pos: u128 = meta
        .rng_word_pos
        .parse()
        .map_err(|e: std::num::ParseIntError| CheckpointError::Meta(e.to_string()))?;
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::from_seed(seed);
    rng.set_stream(meta.rng_stream);
    rng.set_word_pos(word_pos);

    let state = TrainingState {
        iteration: meta.iteration,
        net,
        optimizer,
        rng,
        log,
    };
    Ok((state, meta))
}
