//! Training losses.
//!
//! * SAM composite: pixel MSE, perceptual distance, identity (1 - cosine) and
//!   age error of a re-aged image against the input photo, applied to the
//!   forward output and again to the cycle output.
//! * Personalized aging loss: 1 - max cosine similarity to real photos of the
//!   person near the target age.
//! * Extrapolation regularization: the forward terms (minus age) between the
//!   personalized output and the adapter-bypassed output.
//! * Adaptive W-norm regularization: distance of the decoded code to the
//!   latent mean, weighted by `1 - cos(pi * |a_in - a_tgt| / 100)`.
//!
//! The `*_grad` helpers return the gradient with respect to the image being
//! scored, alongside the value, for the trainer's backward pass.

use std::f64::consts::PI;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::adapter::{personalized_reage, AdapterNetwork};
use crate::backends::{BackendBundle, BackendError};
use crate::data::{AgedPhotoCollection, Split};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::latent::{cosine_similarity, AgeYears, IdentityEmbedding, LatentCode, MeanLatent};

/// Default reference window, in years either side of the target age.
pub const REFERENCE_WINDOW: u32 = 3;
/// Widest window tried before a reference set is declared empty.
pub const MAX_REFERENCE_WINDOW: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_l2: f64,
    pub lambda_lpips: f64,
    pub lambda_id: f64,
    /// Weight on the age error in years. SAM weighs the error on ages
    /// scaled to [0, 1] by 5, which is 0.05 per year.
    pub lambda_age: f64,
    pub lambda_pers_age: f64,
    pub lambda_reg_extra: f64,
    pub lambda_reg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_l2: 0.25,
            lambda_lpips: 0.1,
            lambda_id: 0.1,
            lambda_age: 0.05,
            lambda_pers_age: 1.0,
            lambda_reg_extra: 1.0,
            lambda_reg: 1.0,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self {
            lambda_l2: 0.0,
            lambda_lpips: 0.0,
            lambda_id: 0.0,
            lambda_age: 0.0,
            lambda_pers_age: 0.0,
            lambda_reg_extra: 0.0,
            lambda_reg: 0.0,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let all = [
            ("lambda_l2", self.lambda_l2),
            ("lambda_lpips", self.lambda_lpips),
            ("lambda_id", self.lambda_id),
            ("lambda_age", self.lambda_age),
            ("lambda_pers_age", self.lambda_pers_age),
            ("lambda_reg_extra", self.lambda_reg_extra),
            ("lambda_reg", self.lambda_reg),
        ];
        for (name, v) in all {
            if !v.is_finite() || v < 0.0 {
                return Err(format!("{name} must be a finite non-negative number, got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTerm {
    pub name: String,
    /// `None` when the term was skipped (disabled, or inputs unavailable).
    pub raw: Option<f64>,
    pub weight: f64,
    pub contribution: f64,
}

impl LossTerm {
    pub fn active(name: impl Into<String>, raw: f64, weight: f64) -> Self {
        Self {
            name: name.into(),
            raw: Some(raw),
            weight,
            contribution: raw * weight,
        }
    }

    pub fn skipped(name: impl Into<String>, weight: f64) -> Self {
        Self {
            name: name.into(),
            raw: None,
            weight,
            contribution: 0.0,
        }
    }

    pub fn is_skipped(&self) -> bool {
        self.raw.is_none()
    }
}

/// Itemized loss. `total` is the sum of the terms' contributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub terms: Vec<LossTerm>,
    pub total: f64,
}

impl LossReport {
    pub fn from_terms(terms: Vec<LossTerm>) -> Self {
        let total = terms.iter().map(|t| t.contribution).sum();
        Self { terms, total }
    }

    pub fn term(&self, name: &str) -> Option<&LossTerm> {
        self.terms.iter().find(|t| t.name == name)
    }

    pub fn raw(&self, name: &str) -> Option<f64> {
        self.term(name).and_then(|t| t.raw)
    }
}

/// Raw forward-loss values: pixel MSE, perceptual, identity, age error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardTerms {
    pub l2: f64,
    pub lpips: f64,
    pub id: f64,
    pub age: f64,
}

impl ForwardTerms {
    pub fn weighted(&self, w: &LossWeights) -> f64 {
        w.lambda_l2 * self.l2 + w.lambda_lpips * self.lpips + w.lambda_id * self.id + w.lambda_age * self.age
    }

    fn into_terms(self, prefix: &str, w: &LossWeights) -> Vec<LossTerm> {
        vec![
            LossTerm::active(format!("{prefix}_l2"), self.l2, w.lambda_l2),
            LossTerm::active(format!("{prefix}_lpips"), self.lpips, w.lambda_lpips),
            LossTerm::active(format!("{prefix}_id"), self.id, w.lambda_id),
            LossTerm::active(format!("{prefix}_age"), self.age, w.lambda_age),
        ]
    }
}

pub fn mse(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::Shape("pixel loss operands differ".into()));
    }
    let n = a.as_slice().len() as f64;
    Ok(a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n)
}

fn mse_grad(a: &ImageTensor, b: &ImageTensor) -> Array3<f64> {
    let n = a.as_slice().len() as f64;
    (a.pixels() - b.pixels()) * (2.0 / n)
}

/// Forward-loss values and, optionally, the gradient of their
/// weighted sum with respect to `y`.
pub(crate) fn forward_terms_grad(
    bundle: &BackendBundle,
    y: &ImageTensor,
    x: &ImageTensor,
    x_embedding: &IdentityEmbedding,
    target_age: AgeYears,
    w: &LossWeights,
    want_grad: bool,
) -> Result<(ForwardTerms, Option<Array3<f64>>)> {
    let l2 = mse(y, x)?;
    let lpips = bundle.perceptual_distance(y, x)?;
    let e_y = bundle.embed_identity(y)?;
    let id = 1.0 - cosine_similarity(&e_y, x_embedding)?;
    let estimate = bundle.age_estimator_train.estimate(y)?;
    let signed = estimate.years() - target_age.years();
    let age = signed.abs();
    let terms = ForwardTerms { l2, lpips, id, age };
    if !want_grad {
        return Ok((terms, None));
    }
    let mut grad = mse_grad(y, x) * w.lambda_l2;
    grad.scaled_add(w.lambda_lpips, &bundle.perceptual_metric.distance_grad(y, x)?);
    grad.scaled_add(
        -w.lambda_id,
        &bundle.identity_embedder.embed_vjp(y, x_embedding.vector())?,
    );
    if signed != 0.0 {
        grad.scaled_add(
            w.lambda_age * signed.signum(),
            &bundle.age_estimator_train.gradient(y)?,
        );
    }
    Ok((terms, Some(grad)))
}

/// Forward SAM loss of a re-aged image `y` against the input photo `x`.
pub fn sam_forward_loss(
    bundle: &BackendBundle,
    y: &ImageTensor,
    x: &ImageTensor,
    target_age: AgeYears,
    w: &LossWeights,
) -> Result<LossReport> {
    let e_x = bundle.embed_identity(x)?;
    let (terms, _) = forward_terms_grad(bundle, y, x, &e_x, target_age, w, false)?;
    Ok(LossReport::from_terms(terms.into_terms("forward", w)))
}

/// Cycle SAM loss: `y_tgt` is re-encoded at the input age through the same
/// (personalized) path, decoded, and scored against `x`.
pub fn sam_cycle_loss(
    bundle: &BackendBundle,
    net: Option<&AdapterNetwork>,
    y_tgt: &ImageTensor,
    x: &ImageTensor,
    input_age: AgeYears,
    w: &LossWeights,
) -> Result<LossReport> {
    let (y_cycle, _) = personalized_reage(bundle, net, y_tgt, input_age)?;
    let e_x = bundle.embed_identity(x)?;
    let (terms, _) = forward_terms_grad(bundle, &y_cycle, x, &e_x, input_age, w, false)?;
    Ok(LossReport::from_terms(terms.into_terms("cycle", w)))
}

/// Indices of reference photos near a target age.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSet {
    pub indices: Vec<usize>,
    /// Window that produced the set, in years.
    pub window: u32,
    /// Set when no record was found within [`MAX_REFERENCE_WINDOW`].
    pub empty_warning: bool,
}

impl ReferenceSet {
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Records of `split` within `window_years` of `target_age`. An empty
/// result widens the window one year at a time up to
/// [`MAX_REFERENCE_WINDOW`]; if still empty, the set is flagged.
pub fn build_reference_set(
    collection: &AgedPhotoCollection,
    target_age: AgeYears,
    window_years: u32,
    split: Split,
) -> ReferenceSet {
    let mut window = window_years;
    loop {
        let indices: Vec<usize> = collection
            .records()
            .iter()
            .enumerate()
            .filter(|(_, r)| r.split == split)
            .filter(|(_, r)| (r.age_years.years() - target_age.years()).abs() <= window as f64)
            .map(|(i, _)| i)
            .collect();
        if !indices.is_empty() {
            return ReferenceSet {
                indices,
                window,
                empty_warning: false,
            };
        }
        if window >= MAX_REFERENCE_WINDOW {
            return ReferenceSet {
                indices,
                window,
                empty_warning: true,
            };
        }
        window += 1;
    }
}

/// Maximum cosine similarity and the index attaining it.
pub(crate) fn max_similarity(
    embedding: &IdentityEmbedding,
    references: &[IdentityEmbedding],
) -> Result<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (j, r) in references.iter().enumerate() {
        let c = cosine_similarity(embedding, r)?;
        if best.is_none_or(|(b, _)| c > b) {
            best = Some((c, j));
        }
    }
    best.ok_or(Error::EmptyReferenceSet)
}

/// 1 - max_j cos(R(y_p), R(x_j)), in [0, 2].
pub fn personalized_aging_loss(
    bundle: &BackendBundle,
    y_p: &ImageTensor,
    reference: &[ImageTensor],
) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::EmptyReferenceSet);
    }
    let e_y = bundle.embed_identity(y_p)?;
    let refs = reference
        .iter()
        .map(|r| bundle.embed_identity(r))
        .collect::<std::result::Result<Vec<_>, BackendError>>()?;
    Ok(1.0 - max_similarity(&e_y, &refs)?.0)
}

pub(crate) fn personalized_aging_loss_grad(
    bundle: &BackendBundle,
    y_p: &ImageTensor,
    reference: &[IdentityEmbedding],
    want_grad: bool,
) -> Result<(f64, Option<Array3<f64>>)> {
    let e_y = bundle.embed_identity(y_p)?;
    let (best, j) = max_similarity(&e_y, reference)?;
    let grad = if want_grad {
        Some(-bundle.identity_embedder.embed_vjp(y_p, reference[j].vector())?)
    } else {
        None
    };
    Ok((1.0 - best, grad))
}

/// Experience-replay penalty between the personalized output and the
/// adapter-bypassed output at the same (extrapolated) age.
pub fn extrapolation_regularization(
    bundle: &BackendBundle,
    y_p: &ImageTensor,
    y_global: &ImageTensor,
    w: &LossWeights,
) -> Result<f64> {
    let e_g = bundle.embed_identity(y_global)?;
    Ok(extrapolation_regularization_grad(bundle, y_p, y_global, &e_g, w, false)?.0)
}

pub(crate) fn extrapolation_regularization_grad(
    bundle: &BackendBundle,
    y_p: &ImageTensor,
    y_global: &ImageTensor,
    global_embedding: &IdentityEmbedding,
    w: &LossWeights,
    want_grad: bool,
) -> Result<(f64, Option<Array3<f64>>)> {
    let l2 = mse(y_p, y_global)?;
    let lpips = bundle.perceptual_distance(y_p, y_global)?;
    let id = 1.0 - cosine_similarity(&bundle.embed_identity(y_p)?, global_embedding)?;
    let value = w.lambda_l2 * l2 + w.lambda_lpips * lpips + w.lambda_id * id;
    if !want_grad {
        return Ok((value, None));
    }
    let mut grad = mse_grad(y_p, y_global) * w.lambda_l2;
    grad.scaled_add(
        w.lambda_lpips,
        &bundle.perceptual_metric.distance_grad(y_p, y_global)?,
    );
    grad.scaled_add(
        -w.lambda_id,
        &bundle
            .identity_embedder
            .embed_vjp(y_p, global_embedding.vector())?,
    );
    Ok((value, Some(grad)))
}

/// `1 - cos(pi * delta / 100)`: 0 at no age change, 1 at 50 years, 2 at 100.
pub fn adaptive_reg_weight(delta_age: AgeYears) -> f64 {
    // cos(x) written as sin(pi/2 - x) so the 0, 50 and 100 year endpoints are exact.
    1.0 - (PI * (50.0 - delta_age.years()) / 100.0).sin()
}

pub fn adaptive_wnorm_loss(
    combined: &LatentCode,
    mean: &MeanLatent,
    input_age: AgeYears,
    target_age: AgeYears,
) -> f64 {
    adaptive_reg_weight(input_age.abs_diff(target_age)) * combined.wnorm_distance(mean)
}

pub(crate) fn adaptive_wnorm_loss_grad(
    combined: &LatentCode,
    mean: &MeanLatent,
    input_age: AgeYears,
    target_age: AgeYears,
) -> (f64, Array2<f64>) {
    let weight = adaptive_reg_weight(input_age.abs_diff(target_age));
    let diff = combined.styles() - mean.center();
    let dist = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
    let grad = if dist > 0.0 && weight != 0.0 {
        diff * (weight / dist)
    } else {
        Array2::zeros(combined.styles().dim())
    };
    (weight * dist, grad)
}

/// Raw values of one training step's terms. `None` marks a skipped term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepTerms {
    pub forward: ForwardTerms,
    pub cycle: ForwardTerms,
    pub pers_age: Option<f64>,
    pub reg_extra: Option<f64>,
    pub reg_wnorm: Option<f64>,
}

pub const TERM_NAMES: [&str; 11] = [
    "forward_l2",
    "forward_lpips",
    "forward_id",
    "forward_age",
    "cycle_l2",
    "cycle_lpips",
    "cycle_id",
    "cycle_age",
    "pers_age",
    "reg_extra",
    "reg_wnorm",
];

/// SAM forward + cycle, personalized aging, extrapolation and adaptive
/// W-norm terms, itemized. Skipped terms are listed with zero contribution.
pub fn total_personalization_loss(terms: &StepTerms, w: &LossWeights) -> LossReport {
    let mut out = terms.forward.into_terms("forward", w);
    out.extend(terms.cycle.into_terms("cycle", w));
    let optional = [
        ("pers_age", terms.pers_age, w.lambda_pers_age),
        ("reg_extra", terms.reg_extra, w.lambda_reg_extra),
        ("reg_wnorm", terms.reg_wnorm, w.lambda_reg),
    ];
    for (name, value, weight) in optional {
        out.push(match value {
            Some(v) => LossTerm::active(name, v, weight),
            None => LossTerm::skipped(name, weight),
        });
    }
    LossReport::from_terms(out)
}
