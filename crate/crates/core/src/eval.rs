//! Re-aging metrics and the evaluation protocols.
//!
//! * Age_MAE: |estimate - target| with the evaluation-mode age estimator.
//! * ID_sim: maximum cosine similarity between the re-aged face and the
//!   held-out reference photos near the target age.
//!
//! Regression re-ages a test photo taken at 70 to every decade 0..70;
//! progression re-ages a photo taken at 40 to every decade 40..100.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapter::{personalized_reage, AdapterNetwork};
use crate::backends::{BackendBundle, EstimatorMode};
use crate::data::{AgedPhotoCollection, Split};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::latent::{cosine_similarity, AgeYears, IdentityEmbedding};
use crate::losses::{build_reference_set, REFERENCE_WINDOW};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Regression,
    Progression,
}

impl std::str::FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "regression" => Ok(Task::Regression),
            "progression" => Ok(Task::Progression),
            other => Err(format!("unknown task {other:?} (regression | progression)")),
        }
    }
}

/// A named target-age range over which per-age values are averaged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeRange {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

impl AgeRange {
    fn new(lo: f64, hi: f64) -> Self {
        Self {
            name: format!("{lo}~{hi}"),
            lo,
            hi,
        }
    }

    fn contains(&self, a: f64) -> bool {
        (self.lo..=self.hi).contains(&a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalProtocol {
    pub task: Task,
    pub target_ages: Vec<f64>,
    /// Test photos within `reference_window` years of this age are inputs.
    pub input_age: f64,
    pub reference_window: u32,
    pub sub_ranges: Vec<AgeRange>,
}

impl EvalProtocol {
    pub fn regression() -> Self {
        Self {
            task: Task::Regression,
            target_ages: (0..=7).map(|d| 10.0 * d as f64).collect(),
            input_age: 70.0,
            reference_window: REFERENCE_WINDOW,
            sub_ranges: vec![AgeRange::new(50.0, 70.0), AgeRange::new(30.0, 70.0)],
        }
    }

    pub fn progression() -> Self {
        Self {
            task: Task::Progression,
            target_ages: (4..=10).map(|d| 10.0 * d as f64).collect(),
            input_age: 40.0,
            reference_window: REFERENCE_WINDOW,
            sub_ranges: vec![AgeRange::new(40.0, 60.0)],
        }
    }

    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Regression => Self::regression(),
            Task::Progression => Self::progression(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_ages.is_empty() {
            return Err(Error::Shape("protocol has no target ages".into()));
        }
        for &a in &self.target_ages {
            if !(0.0..=100.0).contains(&a) || a % 10.0 != 0.0 {
                return Err(Error::Shape(format!("target age {a} is not a multiple of 10 in [0, 100]")));
            }
        }
        Ok(())
    }
}

pub fn age_mae(predicted: AgeYears, target: AgeYears) -> f64 {
    (predicted.years() - target.years()).abs()
}

pub fn mean_age_mae(pairs: &[(AgeYears, AgeYears)]) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    Some(pairs.iter().map(|&(p, t)| age_mae(p, t)).sum::<f64>() / pairs.len() as f64)
}

pub(crate) fn max_cosine(embedding: &IdentityEmbedding, references: &[IdentityEmbedding]) -> Result<f64> {
    let mut best: Option<f64> = None;
    for r in references {
        let c = cosine_similarity(embedding, r)?;
        best = Some(best.map_or(c, |b| b.max(c)));
    }
    best.ok_or(Error::EmptyReferenceSet)
}

/// max_j cos(R(reaged), R(x_j)). Errors on an empty reference set.
pub fn id_sim(bundle: &BackendBundle, reaged: &ImageTensor, reference: &[ImageTensor]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::EmptyReferenceSet);
    }
    let e = bundle.embed_identity(reaged)?;
    let refs = reference
        .iter()
        .map(|r| Ok(bundle.embed_identity(r)?))
        .collect::<Result<Vec<_>>>()?;
    max_cosine(&e, &refs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeMetrics {
    pub target_age: f64,
    pub age_mae: f64,
    /// `None` when no reference photo lies near the target age.
    pub id_sim: Option<f64>,
    pub reference_count: usize,
    pub reference_window: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub name: String,
    pub age_mae: Option<f64>,
    pub id_sim: Option<f64>,
    /// Ages contributing to `age_mae` / to `id_sim`.
    pub age_count: usize,
    pub id_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub input_count: usize,
    pub per_age: Vec<AgeMetrics>,
    pub aggregates: Vec<Aggregate>,
    /// Target ages whose ID_sim is undefined.
    pub undefined_ages: Vec<f64>,
    #[serde(default)]
    pub config_hash: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Means of per-age values over `range` (or every age when `None`).
pub fn aggregate(name: &str, per_age: &[AgeMetrics], range: Option<&AgeRange>) -> Aggregate {
    let within: Vec<&AgeMetrics> = per_age
        .iter()
        .filter(|m| range.is_none_or(|r| r.contains(m.target_age)))
        .collect();
    let maes: Vec<f64> = within.iter().map(|m| m.age_mae).collect();
    let ids: Vec<f64> = within.iter().filter_map(|m| m.id_sim).collect();
    Aggregate {
        name: name.to_string(),
        age_mae: mean(&maes),
        id_sim: mean(&ids),
        age_count: maes.len(),
        id_count: ids.len(),
    }
}

impl EvalReport {
    pub fn aggregate(&self, name: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.name == name)
    }

    pub fn write(&self, out_dir: &Path) -> Result<()> {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))?;
        let p = out_dir.join("report.json");
        fs::write(&p, json).map_err(|e| Error::io(&p, e))?;
        let p = out_dir.join("report.csv");
        fs::write(&p, self.to_csv()).map_err(|e| Error::io(&p, e))?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("target_age,age_mae,id_sim,reference_count,reference_window\n");
        for m in &self.per_age {
            let id = m.id_sim.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                m.target_age, m.age_mae, id, m.reference_count, m.reference_window
            ));
        }
        out
    }

    /// Per-age rows from [`EvalReport::to_csv`] output.
    pub fn parse_csv(text: &str) -> Result<Vec<AgeMetrics>> {
        let bad = |line: usize| Error::Serde(format!("report csv line {line} is malformed"));
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad(i + 1));
            }
            out.push(AgeMetrics {
                target_age: f[0].parse().map_err(|_| bad(i + 1))?,
                age_mae: f[1].parse().map_err(|_| bad(i + 1))?,
                id_sim: if f[2].is_empty() {
                    None
                } else {
                    Some(f[2].parse().map_err(|_| bad(i + 1))?)
                },
                reference_count: f[3].parse().map_err(|_| bad(i + 1))?,
                reference_window: f[4].parse().map_err(|_| bad(i + 1))?,
            });
        }
        Ok(out)
    }
}

/// Runs `protocol` for `net` (or the global path when `None`).
pub fn run_protocol(
    bundle: &BackendBundle,
    net: Option<&AdapterNetwork>,
    collection: &AgedPhotoCollection,
    protocol: &EvalProtocol,
) -> Result<EvalReport> {
    protocol.validate()?;
    let inputs: Vec<usize> = collection
        .indices(Split::Test)
        .into_iter()
        .filter(|&i| {
            (collection.records()[i].age_years.years() - protocol.input_age).abs() <= protocol.reference_window as f64
        })
        .collect();
    if inputs.is_empty() {
        return Err(Error::Shape(format!(
            "no test photo within {} years of age {}",
            protocol.reference_window, protocol.input_age
        )));
    }

    let mut per_age = Vec::new();
    let mut undefined_ages = Vec::new();
    for &target in &protocol.target_ages {
        let a = AgeYears::new(target)?;
        let refs = build_reference_set(collection, a, protocol.reference_window, Split::Reference);
        let ref_embeddings = refs
            .indices
            .iter()
            .map(|&i| Ok(bundle.embed_identity(collection.image(i))?))
            .collect::<Result<Vec<_>>>()?;
        let mut maes = Vec::new();
        let mut ids = Vec::new();
        for &i in &inputs {
            let (y, _) = personalized_reage(bundle, net, collection.image(i), a)?;
            maes.push(age_mae(bundle.estimate_age(&y, EstimatorMode::Eval)?, a));
            if !ref_embeddings.is_empty() {
                ids.push(max_cosine(&bundle.embed_identity(&y)?, &ref_embeddings)?);
            }
        }
        if ids.is_empty() {
            undefined_ages.push(target);
        }
        per_age.push(AgeMetrics {
            target_age: target,
            age_mae: mean(&maes).expect("at least one input"),
            id_sim: mean(&ids),
            reference_count: refs.indices.len(),
            reference_window: refs.window,
        });
    }

    let mut aggregates = vec![aggregate("overall", &per_age, None)];
    for r in &protocol.sub_ranges {
        aggregates.push(aggregate(&r.name, &per_age, Some(r)));
    }
    let in_range = AgeRange {
        name: "in_range".into(),
        lo: collection.age_min().years(),
        hi: collection.age_max().years(),
    };
    aggregates.push(aggregate("in_range", &per_age, Some(&in_range)));

    Ok(EvalReport {
        task: protocol.task,
        input_count: inputs.len(),
        per_age,
        aggregates,
        undefined_ages,
        config_hash: None,
        seed: None,
    })
}
