//! Interfaces for the pretrained components, plus the bundle that holds one
//! handle per interface.
//!
//! Differentiable components expose a vector-Jacobian product next to their
//! forward pass so the trainer can backpropagate through the frozen encoder,
//! decoder, identity network, perceptual metric and training-time age
//! estimator into the adapter.

use std::sync::Arc;

use ndarray::{Array1, Array2, Array3};

use crate::image::ImageTensor;
use crate::latent::{AgeYears, IdentityEmbedding, LatentCode, MeanLatent};

pub mod real;
pub mod toy;

pub use toy::ToyBackend;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{0} is not differentiable")]
    NotDifferentiable(&'static str),
    #[error("no face found: {0}")]
    NoFace(String),
}

pub type BackendResult<T> = Result<T, BackendError>;

/// Global age encoder E(x, a): image and target age to a W+ code.
pub trait AgeEncoder: Send + Sync {
    fn encode(&self, image: &ImageTensor, target_age: AgeYears) -> BackendResult<LatentCode>;

    /// Gradient of a scalar with respect to the image pixels, given its
    /// gradient with respect to the produced code.
    fn encode_vjp(
        &self,
        image: &ImageTensor,
        target_age: AgeYears,
        grad_code: &Array2<f64>,
    ) -> BackendResult<Array3<f64>>;
}

/// Style-based generator D(w).
pub trait LatentDecoder: Send + Sync {
    fn decode(&self, code: &LatentCode) -> BackendResult<ImageTensor>;

    fn decode_vjp(&self, code: &LatentCode, grad_image: &Array3<f64>) -> BackendResult<Array2<f64>>;

    /// Side length of decoded (and aligned) faces.
    fn resolution(&self) -> usize;
}

/// Face-recognition network R(x).
pub trait IdentityEmbedder: Send + Sync {
    fn embed(&self, image: &ImageTensor) -> BackendResult<IdentityEmbedding>;

    fn embed_vjp(&self, image: &ImageTensor, grad_embedding: &Array1<f64>)
        -> BackendResult<Array3<f64>>;
}

pub trait AgeEstimator: Send + Sync {
    fn estimate(&self, image: &ImageTensor) -> BackendResult<AgeYears>;

    /// d(estimate)/d(pixels). Evaluation-only estimators return
    /// [`BackendError::NotDifferentiable`].
    fn gradient(&self, image: &ImageTensor) -> BackendResult<Array3<f64>>;
}

pub trait PerceptualMetric: Send + Sync {
    fn distance(&self, a: &ImageTensor, b: &ImageTensor) -> BackendResult<f64>;

    /// Gradient of `distance(a, b)` with respect to `a`.
    fn distance_grad(&self, a: &ImageTensor, b: &ImageTensor) -> BackendResult<Array3<f64>>;
}

#[derive(Debug, Clone, PartialEq)]
pub enum SwapOutcome {
    Swapped(ImageTensor),
    /// The swapper found no face in the target frame.
    NoFace,
}

pub trait FaceSwapper: Send + Sync {
    fn swap(&self, source_face: &ImageTensor, target_face: &ImageTensor) -> BackendResult<SwapOutcome>;
}

/// Square region of a raw frame that an aligned face was taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CropBox {
    pub top: usize,
    pub left: usize,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedFace {
    pub face: ImageTensor,
    pub crop: CropBox,
}

pub trait FaceAligner: Send + Sync {
    fn align(&self, raw: &ImageTensor) -> BackendResult<AlignedFace>;

    /// Warps `face` back into `frame` at `crop`.
    fn paste_back(&self, frame: &ImageTensor, face: &ImageTensor, crop: CropBox)
        -> BackendResult<ImageTensor>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorMode {
    /// The estimator the age loss trains against.
    Train,
    /// The held-out estimator used for Age_MAE.
    Eval,
}

/// One handle per pretrained component, sharing resolution and latent
/// conventions.
#[derive(Clone)]
pub struct BackendBundle {
    pub name: String,
    pub seed: u64,
    pub encoder: Arc<dyn AgeEncoder>,
    pub decoder: Arc<dyn LatentDecoder>,
    pub identity_embedder: Arc<dyn IdentityEmbedder>,
    pub age_estimator_train: Arc<dyn AgeEstimator>,
    pub age_estimator_eval: Arc<dyn AgeEstimator>,
    pub perceptual_metric: Arc<dyn PerceptualMetric>,
    pub mean_latent: MeanLatent,
    pub face_swapper: Arc<dyn FaceSwapper>,
    pub aligner: Arc<dyn FaceAligner>,
}

impl std::fmt::Debug for BackendBundle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BackendBundle")
            .field("name", &self.name)
            .field("seed", &self.seed)
            .field("resolution", &self.resolution())
            .finish_non_exhaustive()
    }
}

impl BackendBundle {
    pub fn toy(seed: u64) -> Self {
        let toy = Arc::new(ToyBackend::new(seed));
        Self {
            name: "toy".into(),
            seed,
            encoder: toy.clone(),
            decoder: toy.clone(),
            identity_embedder: toy.clone(),
            age_estimator_train: Arc::new(toy::ToyTrainAgeEstimator(toy.clone())),
            age_estimator_eval: Arc::new(toy::ToyEvalAgeEstimator(toy.clone())),
            perceptual_metric: toy.clone(),
            mean_latent: toy.mean_latent().clone(),
            face_swapper: toy.clone(),
            aligner: toy,
        }
    }

    pub fn resolution(&self) -> usize {
        self.decoder.resolution()
    }

    pub fn encode(&self, image: &ImageTensor, target_age: AgeYears) -> BackendResult<LatentCode> {
        self.encoder.encode(image, target_age)
    }

    pub fn decode(&self, code: &LatentCode) -> BackendResult<ImageTensor> {
        self.decoder.decode(code)
    }

    pub fn embed_identity(&self, image: &ImageTensor) -> BackendResult<IdentityEmbedding> {
        self.identity_embedder.embed(image)
    }

    pub fn estimate_age(&self, image: &ImageTensor, mode: EstimatorMode) -> BackendResult<AgeYears> {
        match mode {
            EstimatorMode::Train => self.age_estimator_train.estimate(image),
            EstimatorMode::Eval => self.age_estimator_eval.estimate(image),
        }
    }

    pub fn perceptual_distance(&self, a: &ImageTensor, b: &ImageTensor) -> BackendResult<f64> {
        self.perceptual_metric.distance(a, b)
    }

    pub fn swap_face(&self, source: &ImageTensor, target: &ImageTensor) -> BackendResult<SwapOutcome> {
        self.face_swapper.swap(source, target)
    }

    pub fn align_face(&self, raw: &ImageTensor) -> BackendResult<AlignedFace> {
        self.aligner.align(raw)
    }

    /// The adapter-bypassed global path D(E(x, a)).
    pub fn global_reage(&self, image: &ImageTensor, target_age: AgeYears) -> BackendResult<ImageTensor> {
        self.decode(&self.encode(image, target_age)?)
    }
}
