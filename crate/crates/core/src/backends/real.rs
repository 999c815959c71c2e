//! Loader for pretrained-weight backends.
//!
//! Each component is resolved by name to a checkpoint file, either from an
//! explicit path in the configuration or from `MYTM_BACKEND_DIR`. This build
//! carries no neural-network inference runtime, so a fully resolved set of
//! weights still reports [`BackendError::Unavailable`]; the toy backend is
//! never substituted silently.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BackendBundle, BackendError};

pub const BACKEND_DIR_ENV: &str = "MYTM_BACKEND_DIR";

/// Component name and the file expected under the backend directory.
pub const COMPONENTS: [(&str, &str); 8] = [
    ("encoder", "sam_ffhq_aging.pt"),
    ("decoder", "stylegan2_ffhq_1024.pt"),
    ("identity_embedder", "arcface_ir_se50.pth"),
    ("age_estimator_train", "dex_age_classifier.pth"),
    ("age_estimator_eval", "fpage.pth"),
    ("perceptual_metric", "lpips_alex.pth"),
    ("face_swapper", "inswapper_128.onnx"),
    ("aligner", "shape_predictor_68_face_landmarks.dat"),
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RealBackendPaths {
    pub encoder: Option<PathBuf>,
    pub decoder: Option<PathBuf>,
    pub identity_embedder: Option<PathBuf>,
    pub age_estimator_train: Option<PathBuf>,
    pub age_estimator_eval: Option<PathBuf>,
    pub perceptual_metric: Option<PathBuf>,
    pub face_swapper: Option<PathBuf>,
    pub aligner: Option<PathBuf>,
}

impl RealBackendPaths {
    fn explicit(&self, name: &str) -> Option<&PathBuf> {
        match name {
            "encoder" => self.encoder.as_ref(),
            "decoder" => self.decoder.as_ref(),
            "identity_embedder" => self.identity_embedder.as_ref(),
            "age_estimator_train" => self.age_estimator_train.as_ref(),
            "age_estimator_eval" => self.age_estimator_eval.as_ref(),
            "perceptual_metric" => self.perceptual_metric.as_ref(),
            "face_swapper" => self.face_swapper.as_ref(),
            "aligner" => self.aligner.as_ref(),
            _ => None,
        }
    }

    /// Resolves every component to an existing file.
    pub fn resolve(&self, backend_dir: Option<&Path>) -> Result<Vec<(String, PathBuf)>, BackendError> {
        let mut out = Vec::new();
        for (name, default_file) in COMPONENTS {
            let path = match (self.explicit(name), backend_dir) {
                (Some(p), _) => p.clone(),
                (None, Some(dir)) => dir.join(default_file),
                (None, None) => {
                    return Err(BackendError::Unavailable(format!(
                        "no checkpoint configured for {name} and {BACKEND_DIR_ENV} is unset"
                    )))
                }
            };
            if !path.is_file() {
                return Err(BackendError::Unavailable(format!(
                    "{name} checkpoint not found at {}",
                    path.display()
                )));
            }
            out.push((name.to_string(), path));
        }
        Ok(out)
    }
}

pub fn load(paths: &RealBackendPaths) -> Result<BackendBundle, BackendError> {
    let dir = std::env::var_os(BACKEND_DIR_ENV).map(PathBuf::from);
    let resolved = paths.resolve(dir.as_deref())?;
    Err(BackendError::Unavailable(format!(
        "resolved {} pretrained checkpoints but this build has no inference runtime for them",
        resolved.len()
    )))
}
