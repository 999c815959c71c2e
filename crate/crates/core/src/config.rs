//! Run configuration: a flat TOML document of typed keys.
//!
//! ```toml
//! backend = "toy"
//! iterations = 500
//! learning_rate = 1e-4
//! lambda_pers_age = 1.0
//! p_extrapolate = 0.5
//! use_adaptive_wnorm = false
//! ```
//!
//! Every key is optional; unknown keys are rejected. The config hash is the
//! SHA-256 of the canonical JSON form of the resolved [`TrainingConfig`], so
//! it does not depend on key order or on which defaults were spelled out.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapter::AdapterShape;
use crate::backends::real::RealBackendPaths;
use crate::backends::{self, BackendBundle};
use crate::losses::{LossWeights, REFERENCE_WINDOW};
use crate::optim::AdamConfig;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Toy,
    Real,
}

impl std::str::FromStr for BackendKind {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "toy" => Ok(BackendKind::Toy),
            "real" => Ok(BackendKind::Real),
            other => Err(ConfigError::Invalid(format!("unknown backend {other:?} (toy | real)"))),
        }
    }
}

/// Switches for the ablation ladder. All on is the full method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    pub use_adapter: bool,
    pub use_extrapolation_reg: bool,
    pub use_personalized_aging_loss: bool,
    pub use_adaptive_wnorm: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self::all_on()
    }
}

impl AblationFlags {
    pub fn all_on() -> Self {
        Self {
            use_adapter: true,
            use_extrapolation_reg: true,
            use_personalized_aging_loss: true,
            use_adaptive_wnorm: true,
        }
    }

    pub fn all_off() -> Self {
        Self {
            use_adapter: false,
            use_extrapolation_reg: false,
            use_personalized_aging_loss: false,
            use_adaptive_wnorm: false,
        }
    }

    /// Turns off the components named in a comma-separated list of
    /// `adapter`, `extra`, `persage`, `wnorm`.
    pub fn ablate(&mut self, list: &str) -> Result<(), ConfigError> {
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item {
                "adapter" => self.use_adapter = false,
                "extra" => self.use_extrapolation_reg = false,
                "persage" => self.use_personalized_aging_loss = false,
                "wnorm" => self.use_adaptive_wnorm = false,
                other => {
                    return Err(ConfigError::Invalid(format!(
                        "unknown ablation {other:?} (adapter, extra, persage, wnorm)"
                    )))
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub backend: BackendKind,
    pub backend_seed: u64,
    pub real_paths: RealBackendPaths,
    pub iterations: u64,
    pub optimizer: String,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub weights: LossWeights,
    pub p_extrapolate: f64,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub reference_window: u32,
    pub flags: AblationFlags,
    pub adapter: AdapterShape,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Toy,
            backend_seed: 0,
            real_paths: RealBackendPaths::default(),
            iterations: 10_000,
            optimizer: "adam".into(),
            adam: AdamConfig::default(),
            batch_size: 1,
            weights: LossWeights::default(),
            p_extrapolate: 0.5,
            seed: 0,
            checkpoint_every: 1_000,
            reference_window: REFERENCE_WINDOW,
            flags: AblationFlags::all_on(),
            adapter: AdapterShape::default(),
        }
    }
}

/// On-disk form: every key flat and optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    backend: Option<BackendKind>,
    backend_seed: Option<u64>,
    iterations: Option<u64>,
    optimizer: Option<String>,
    learning_rate: Option<f64>,
    adam_beta1: Option<f64>,
    adam_beta2: Option<f64>,
    adam_eps: Option<f64>,
    batch_size: Option<usize>,
    lambda_l2: Option<f64>,
    lambda_lpips: Option<f64>,
    lambda_id: Option<f64>,
    lambda_age: Option<f64>,
    lambda_pers_age: Option<f64>,
    lambda_reg_extra: Option<f64>,
    lambda_reg: Option<f64>,
    p_extrapolate: Option<f64>,
    seed: Option<u64>,
    checkpoint_every: Option<u64>,
    reference_window: Option<u32>,
    use_adapter: Option<bool>,
    use_extrapolation_reg: Option<bool>,
    use_personalized_aging_loss: Option<bool>,
    use_adaptive_wnorm: Option<bool>,
    global_hidden: Option<usize>,
    global_feat: Option<usize>,
    aging_hidden: Option<usize>,
    aging_feat: Option<usize>,
    style_hidden: Option<usize>,
    encoder_path: Option<PathBuf>,
    decoder_path: Option<PathBuf>,
    identity_embedder_path: Option<PathBuf>,
    age_estimator_train_path: Option<PathBuf>,
    age_estimator_eval_path: Option<PathBuf>,
    perceptual_metric_path: Option<PathBuf>,
    face_swapper_path: Option<PathBuf>,
    aligner_path: Option<PathBuf>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl TrainingConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut c = TrainingConfig::default();
        set(&mut c.backend, file.backend);
        set(&mut c.backend_seed, file.backend_seed);
        set(&mut c.iterations, file.iterations);
        set(&mut c.optimizer, file.optimizer);
        set(&mut c.adam.learning_rate, file.learning_rate);
        set(&mut c.adam.beta1, file.adam_beta1);
        set(&mut c.adam.beta2, file.adam_beta2);
        set(&mut c.adam.eps, file.adam_eps);
        set(&mut c.batch_size, file.batch_size);
        set(&mut c.weights.lambda_l2, file.lambda_l2);
        set(&mut c.weights.lambda_lpips, file.lambda_lpips);
        set(&mut c.weights.lambda_id, file.lambda_id);
        set(&mut c.weights.lambda_age, file.lambda_age);
        set(&mut c.weights.lambda_pers_age, file.lambda_pers_age);
        set(&mut c.weights.lambda_reg_extra, file.lambda_reg_extra);
        set(&mut c.weights.lambda_reg, file.lambda_reg);
        set(&mut c.p_extrapolate, file.p_extrapolate);
        set(&mut c.seed, file.seed);
        set(&mut c.checkpoint_every, file.checkpoint_every);
        set(&mut c.reference_window, file.reference_window);
        set(&mut c.flags.use_adapter, file.use_adapter);
        set(&mut c.flags.use_extrapolation_reg, file.use_extrapolation_reg);
        set(&mut c.flags.use_personalized_aging_loss, file.use_personalized_aging_loss);
        set(&mut c.flags.use_adaptive_wnorm, file.use_adaptive_wnorm);
        set(&mut c.adapter.global_hidden, file.global_hidden);
        set(&mut c.adapter.global_feat, file.global_feat);
        set(&mut c.adapter.aging_hidden, file.aging_hidden);
        set(&mut c.adapter.aging_feat, file.aging_feat);
        set(&mut c.adapter.style_hidden, file.style_hidden);
        let p = &mut c.real_paths;
        p.encoder = file.encoder_path;
        p.decoder = file.decoder_path;
        p.identity_embedder = file.identity_embedder_path;
        p.age_estimator_train = file.age_estimator_train_path;
        p.age_estimator_eval = file.age_estimator_eval_path;
        p.perceptual_metric = file.perceptual_metric_path;
        p.face_swapper = file.face_swapper_path;
        p.aligner = file.aligner_path;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.iterations == 0 {
            return bad("iterations must be positive".into());
        }
        if self.optimizer != "adam" {
            return bad(format!("unsupported optimizer {:?} (adam)", self.optimizer));
        }
        let a = self.adam;
        if !(a.learning_rate.is_finite() && a.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", a.learning_rate));
        }
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and eps must be positive".into());
        }
        if self.batch_size != 1 {
            return bad(format!("batch_size {} is not supported; training uses one photo per step", self.batch_size));
        }
        self.weights.validate().map_err(ConfigError::Invalid)?;
        if !(0.0..=1.0).contains(&self.p_extrapolate) {
            return bad(format!("p_extrapolate must lie in [0, 1], got {}", self.p_extrapolate));
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be positive".into());
        }
        let s = self.adapter;
        if [s.global_hidden, s.global_feat, s.aging_hidden, s.aging_feat, s.style_hidden].contains(&0) {
            return bad("adapter widths must be positive".into());
        }
        Ok(())
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn load_bundle(&self) -> Result<BackendBundle, backends::BackendError> {
        match self.backend {
            BackendKind::Toy => Ok(BackendBundle::toy(self.backend_seed)),
            BackendKind::Real => backends::real::load(&self.real_paths),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_default() {
        let c = TrainingConfig::from_toml_str("").unwrap();
        assert_eq!(c, TrainingConfig::default());
        assert_eq!(c.iterations, 10_000);
        assert_eq!(c.weights.lambda_pers_age, 1.0);
        assert_eq!(c.adam.learning_rate, 1e-4);
    }

    #[test]
    fn keys_override_defaults() {
        let c = TrainingConfig::from_toml_str(
            "backend = \"real\"\niterations = 5\nlambda_id = 0.5\nuse_adapter = false\nstyle_hidden = 32\nencoder_path = \"/w/e.pt\"\n",
        )
        .unwrap();
        assert_eq!(c.backend, BackendKind::Real);
        assert_eq!(c.iterations, 5);
        assert_eq!(c.weights.lambda_id, 0.5);
        assert!(!c.flags.use_adapter);
        assert_eq!(c.adapter.style_hidden, 32);
        assert_eq!(c.real_paths.encoder.as_deref(), Some(Path::new("/w/e.pt")));
    }

    #[test]
    fn hash_ignores_key_order_and_spelled_out_defaults() {
        let a = TrainingConfig::from_toml_str("seed = 3\niterations = 7\n").unwrap();
        let b = TrainingConfig::from_toml_str("iterations = 7\nseed = 3\np_extrapolate = 0.5\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = TrainingConfig::from_toml_str("iterations = 7\nseed = 4\n").unwrap();
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn rejects_bad_documents() {
        for text in [
            "iterations = 0",
            "unknown_key = 1",
            "lambda_l2 = -1.0",
            "p_extrapolate = 1.5",
            "optimizer = \"sgd\"",
            "batch_size = 4",
            "backend = \"gpu\"",
            "iterations = \"many\"",
        ] {
            assert!(TrainingConfig::from_toml_str(text).is_err(), "{text}");
        }
    }

    #[test]
    fn ablation_list() {
        let mut f = AblationFlags::all_on();
        f.ablate("extra, wnorm").unwrap();
        assert!(f.use_adapter && f.use_personalized_aging_loss);
        assert!(!f.use_extrapolation_reg && !f.use_adaptive_wnorm);
        f.ablate("adapter,persage").unwrap();
        assert_eq!(f, AblationFlags::all_off());
        assert!(f.ablate("everything").is_err());
    }

    #[test]
    fn real_backend_without_weights_is_unavailable() {
        let c = TrainingConfig {
            backend: BackendKind::Real,
            ..Default::default()
        };
        assert!(matches!(
            c.load_bundle(),
            Err(backends::BackendError::Unavailable(_))
        ));
    }
}
