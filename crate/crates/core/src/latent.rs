//! Latent codes, identity embeddings and ages.
//!
//! A [`LatentCode`] is one W+ code: 18 style vectors of 512 entries. Adapter
//! offsets use the same type since they are added directly to the global code.

use ndarray::{Array1, Array2, Zip};
use serde::{Deserialize, Serialize};

pub const NUM_STYLES: usize = 18;
pub const STYLE_DIM: usize = 512;
pub const LATENT_LEN: usize = NUM_STYLES * STYLE_DIM;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LatentError {
    #[error("latent shape {got:?}, expected {expected:?}")]
    Shape {
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("embedding has zero norm")]
    ZeroNorm,
    #[error("embedding length mismatch: {0} vs {1}")]
    EmbeddingLength(usize, usize),
    #[error("age {0} outside [0, 100]")]
    AgeOutOfRange(f64),
}

/// One W+ latent code (18 x 512, all entries finite).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    styles: Array2<f64>,
}

impl LatentCode {
    pub fn zeros() -> Self {
        Self {
            styles: Array2::zeros((NUM_STYLES, STYLE_DIM)),
        }
    }

    pub fn from_array(styles: Array2<f64>) -> Result<Self, LatentError> {
        check_shape(&styles)?;
        if !styles.iter().all(|v| v.is_finite()) {
            return Err(LatentError::NonFinite("latent code"));
        }
        Ok(Self { styles })
    }

    pub fn from_vec(values: Vec<f64>) -> Result<Self, LatentError> {
        let len = values.len();
        let styles = Array2::from_shape_vec((NUM_STYLES, STYLE_DIM), values).map_err(|_| {
            LatentError::Shape {
                got: (len / STYLE_DIM, len % STYLE_DIM),
                expected: (NUM_STYLES, STYLE_DIM),
            }
        })?;
        Self::from_array(styles)
    }

    pub fn styles(&self) -> &Array2<f64> {
        &self.styles
    }

    pub fn into_array(self) -> Array2<f64> {
        self.styles
    }

    /// Elementwise sum. Fails only if the sum overflows to a non-finite value.
    pub fn add(&self, other: &LatentCode) -> Result<LatentCode, LatentError> {
        let styles = &self.styles + &other.styles;
        LatentCode::from_array(styles)
    }

    /// Frobenius distance to the latent-space mean.
    pub fn wnorm_distance(&self, mean: &MeanLatent) -> f64 {
        let mut acc = 0.0;
        Zip::from(&self.styles)
            .and(&mean.center)
            .for_each(|&w, &m| acc += (w - m) * (w - m));
        acc.sqrt()
    }
}

fn check_shape(a: &Array2<f64>) -> Result<(), LatentError> {
    if a.dim() != (NUM_STYLES, STYLE_DIM) {
        return Err(LatentError::Shape {
            got: a.dim(),
            expected: (NUM_STYLES, STYLE_DIM),
        });
    }
    Ok(())
}

/// Sum of two codes; see [`LatentCode::add`].
pub fn latent_add(a: &LatentCode, b: &LatentCode) -> Result<LatentCode, LatentError> {
    a.add(b)
}

pub fn latent_wnorm_distance(w: &LatentCode, mean: &MeanLatent) -> f64 {
    w.wnorm_distance(mean)
}

/// The average latent of a decoder backend.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanLatent {
    center: Array2<f64>,
}

impl MeanLatent {
    pub fn new(center: Array2<f64>) -> Result<Self, LatentError> {
        let code = LatentCode::from_array(center)?;
        Ok(Self {
            center: code.styles,
        })
    }

    pub fn center(&self) -> &Array2<f64> {
        &self.center
    }

    pub fn as_code(&self) -> LatentCode {
        LatentCode {
            styles: self.center.clone(),
        }
    }
}

/// Unit-norm identity feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityEmbedding {
    vector: Array1<f64>,
}

impl IdentityEmbedding {
    /// Normalizes `raw` to unit length; a zero vector has no direction.
    pub fn normalize(raw: Array1<f64>) -> Result<Self, LatentError> {
        if !raw.iter().all(|v| v.is_finite()) {
            return Err(LatentError::NonFinite("embedding"));
        }
        let norm = raw.dot(&raw).sqrt();
        if norm <= f64::MIN_POSITIVE {
            return Err(LatentError::ZeroNorm);
        }
        Ok(Self { vector: raw / norm })
    }

    pub fn vector(&self) -> &Array1<f64> {
        &self.vector
    }

    pub fn len(&self) -> usize {
        self.vector.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vector.is_empty()
    }

    pub fn cosine(&self, other: &IdentityEmbedding) -> Result<f64, LatentError> {
        cosine_similarity(self, other)
    }
}

/// Cosine similarity of two unit embeddings, clamped to [-1, 1].
///
/// Both inputs are unit length by construction, so this is the dot product.
/// The summation order is the same for `(a, b)` and `(b, a)`, which makes the
/// result exactly symmetric.
pub fn cosine_similarity(a: &IdentityEmbedding, b: &IdentityEmbedding) -> Result<f64, LatentError> {
    if a.len() != b.len() {
        return Err(LatentError::EmbeddingLength(a.len(), b.len()));
    }
    let dot: f64 = a
        .vector
        .iter()
        .zip(b.vector.iter())
        .map(|(x, y)| x * y)
        .sum();
    Ok(dot.clamp(-1.0, 1.0))
}

/// An age in years within [0, 100].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct AgeYears(f64);

impl AgeYears {
    pub const MIN: f64 = 0.0;
    pub const MAX: f64 = 100.0;

    pub fn new(value: f64) -> Result<Self, LatentError> {
        if !value.is_finite() || !(Self::MIN..=Self::MAX).contains(&value) {
            return Err(LatentError::AgeOutOfRange(value));
        }
        Ok(Self(value))
    }

    /// Clamps into range. NaN maps to 0.
    pub fn saturating(value: f64) -> Self {
        if value.is_nan() {
            return Self(0.0);
        }
        Self(value.clamp(Self::MIN, Self::MAX))
    }

    pub fn years(self) -> f64 {
        self.0
    }

    /// Age scaled to [0, 1], the convention at the encoder boundary.
    pub fn normalized(self) -> f64 {
        self.0 / 100.0
    }

    pub fn abs_diff(self, other: AgeYears) -> AgeYears {
        AgeYears((self.0 - other.0).abs())
    }
}

impl TryFrom<f64> for AgeYears {
    type Error = LatentError;
    fn try_from(v: f64) -> Result<Self, Self::Error> {
        AgeYears::new(v)
    }
}

impl From<AgeYears> for f64 {
    fn from(a: AgeYears) -> f64 {
        a.0
    }
}

impl std::fmt::Display for AgeYears {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}
