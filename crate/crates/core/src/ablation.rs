//! Component ladder and training-set-size ablations.
//!
//! The ladder starts from the global model and switches on one component
//! per row. Rows without the adapter have no trainable parameters here,
//! since encoder fine-tuning is not implemented, so they are evaluated on
//! the global path directly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backends::BackendBundle;
use crate::config::{AblationFlags, TrainingConfig};
use crate::data::{subsample_collection, AgedPhotoCollection, DataError};
use crate::error::{Error, Result};
use crate::eval::{run_protocol, EvalProtocol, EvalReport};
use crate::trainer::Trainer;

pub const DATASET_SIZES: [usize; 3] = [10, 50, 100];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Trained,
    /// Evaluated on the global path; the row has nothing to train.
    GlobalOnly,
    Unavailable,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub flags: AblationFlags,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_size: Option<usize>,
    pub status: RowStatus,
    pub iterations: u64,
    pub age_mae: Option<f64>,
    pub id_sim: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    /// Aggregate of the evaluation report the metric columns are taken from.
    pub aggregate: String,
    pub config_hash: String,
    pub seed: u64,
    pub rows: Vec<AblationRow>,
}

/// Ladder rows from the full method down to the global baseline.
pub fn ladder() -> Vec<(&'static str, AblationFlags)> {
    let on = AblationFlags::all_on();
    let off = AblationFlags::all_off();
    vec![
        ("Ours", on),
        ("A", AblationFlags { use_adapter: false, ..on }),
        (
            "B",
            AblationFlags {
                use_adapter: false,
                use_extrapolation_reg: false,
                ..on
            },
        ),
        (
            "C",
            AblationFlags {
                use_adaptive_wnorm: true,
                ..off
            },
        ),
        ("SAM Pers. f.t.", off),
        ("SAM", off),
    ]
}

fn metrics(report: &EvalReport, aggregate: &str) -> (Option<f64>, Option<f64>) {
    report
        .aggregate(aggregate)
        .map_or((None, None), |a| (a.age_mae, a.id_sim))
}

fn failed(name: &str, flags: AblationFlags, train_size: Option<usize>, e: &Error) -> AblationRow {
    log::warn!("ablation row {name} failed: {e}");
    AblationRow {
        name: name.to_string(),
        flags,
        train_size,
        status: RowStatus::Failed,
        iterations: 0,
        age_mae: None,
        id_sim: None,
        note: Some(e.to_string()),
    }
}

fn run_row(
    bundle: &BackendBundle,
    collection: &AgedPhotoCollection,
    config: &TrainingConfig,
    protocol: &EvalProtocol,
    aggregate: &str,
    name: &str,
    flags: AblationFlags,
    train_size: Option<usize>,
) -> Result<AblationRow> {
    let (report, status, iterations, note) = if flags.use_adapter && name != "SAM" {
        let cfg = TrainingConfig {
            flags,
            ..config.clone()
        };
        let trainer = Trainer::new(bundle.clone(), collection.clone(), cfg)?;
        let state = trainer.train_in_memory()?;
        let report = run_protocol(bundle, Some(&state.net), collection, protocol)?;
        (report, RowStatus::Trained, state.iteration, None)
    } else {
        let report = run_protocol(bundle, None, collection, protocol)?;
        let note = (name != "SAM").then(|| "no trainable path without the adapter".to_string());
        (report, RowStatus::GlobalOnly, 0, note)
    };
    let (age_mae, id_sim) = metrics(&report, aggregate);
    Ok(AblationRow {
        name: name.to_string(),
        flags,
        train_size,
        status,
        iterations,
        age_mae,
        id_sim,
        note,
    })
}

/// Trains and evaluates every ladder row. A failing row is recorded and
/// the remaining rows still run.
pub fn run_ladder(
    bundle: &BackendBundle,
    collection: &AgedPhotoCollection,
    config: &TrainingConfig,
    protocol: &EvalProtocol,
    aggregate: &str,
) -> AblationTable {
    let rows = ladder()
        .into_iter()
        .map(|(name, flags)| {
            run_row(bundle, collection, config, protocol, aggregate, name, flags, None)
                .unwrap_or_else(|e| failed(name, flags, None, &e))
        })
        .collect();
    AblationTable {
        aggregate: aggregate.to_string(),
        config_hash: config.hash(),
        seed: config.seed,
        rows,
    }
}

/// Global baseline plus the full method trained on stratified subsets of
/// each size. Sizes larger than the train split are marked unavailable.
pub fn run_dataset_sizes(
    bundle: &BackendBundle,
    collection: &AgedPhotoCollection,
    config: &TrainingConfig,
    protocol: &EvalProtocol,
    aggregate: &str,
    sizes: &[usize],
) -> AblationTable {
    let mut rows = vec![run_row(
        bundle,
        collection,
        config,
        protocol,
        aggregate,
        "SAM",
        AblationFlags::all_off(),
        None,
    )
    .unwrap_or_else(|e| failed("SAM", AblationFlags::all_off(), None, &e))];
    let flags = AblationFlags::all_on();
    for &n in sizes {
        let name = format!("N={n}");
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ n as u64);
        let row = match subsample_collection(collection, n, &mut rng) {
            Ok(subset) => run_row(bundle, &subset, config, protocol, aggregate, &name, flags, Some(n))
                .unwrap_or_else(|e| failed(&name, flags, Some(n), &e)),
            Err(DataError::SubsampleTooLarge { requested, available }) => AblationRow {
                name,
                flags,
                train_size: Some(n),
                status: RowStatus::Unavailable,
                iterations: 0,
                age_mae: None,
                id_sim: None,
                note: Some(format!("{requested} requested, {available} train photos available")),
            },
            Err(e) => failed(&name, flags, Some(n), &e.into()),
        };
        rows.push(row);
    }
    AblationTable {
        aggregate: aggregate.to_string(),
        config_hash: config.hash(),
        seed: config.seed,
        rows,
    }
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map(|v| format!("{v:.digits$}")).unwrap_or_else(|| "-".into())
}

fn status_str(s: &RowStatus) -> &'static str {
    match s {
        RowStatus::Trained => "trained",
        RowStatus::GlobalOnly => "global_only",
        RowStatus::Unavailable => "unavailable",
        RowStatus::Failed => "failed",
    }
}

impl AblationTable {
    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,adapter,extra,persage,wnorm,train_size,status,iterations,age_mae,id_sim\n");
        for r in &self.rows {
            let f = &r.flags;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.name,
                f.use_adapter as u8,
                f.use_extrapolation_reg as u8,
                f.use_personalized_aging_loss as u8,
                f.use_adaptive_wnorm as u8,
                r.train_size.map(|n| n.to_string()).unwrap_or_default(),
                status_str(&r.status),
                r.iterations,
                r.age_mae.map(|v| v.to_string()).unwrap_or_default(),
                r.id_sim.map(|v| v.to_string()).unwrap_or_default(),
            );
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let tick = |b: bool| if b { "x" } else { "-" };
        let mut out = String::from(
            "| Model | Adapter | Extrapolation reg | Personalized aging | Adaptive W-norm | Age MAE | ID sim | Status |\n\
             |---|---|---|---|---|---|---|---|\n",
        );
        for r in &self.rows {
            let f = &r.flags;
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} | {} | {} | {} |",
                r.name,
                tick(f.use_adapter),
                tick(f.use_extrapolation_reg),
                tick(f.use_personalized_aging_loss),
                tick(f.use_adaptive_wnorm),
                fmt_opt(r.age_mae, 2),
                fmt_opt(r.id_sim, 4),
                status_str(&r.status),
            );
        }
        let _ = writeln!(
            out,
            "\nMetrics: `{}` aggregate. Config hash `{}`, seed {}.",
            self.aggregate, self.config_hash, self.seed
        );
        out
    }

    /// Writes `<stem>.csv`, `<stem>.md` and `<stem>.json`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))?;
        for (ext, text) in [("csv", self.to_csv()), ("md", self.to_markdown()), ("json", json)] {
            let p = dir.join(format!("{stem}.{ext}"));
            fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}
