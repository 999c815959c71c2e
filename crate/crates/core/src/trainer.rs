//! The personalization loop.
//!
//! Each step draws exactly four uniforms from the run's ChaCha8 stream (input
//! photo, target age, extrapolation coin, extrapolation age) whether or not
//! they are used, so the stream position after `n` steps does not depend on
//! which branches fired and a resumed run replays the same draws.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adapter::{AdapterNetwork, AdapterParams};
use crate::backends::BackendBundle;
use crate::checkpoint::{self, CheckpointError};
use crate::config::TrainingConfig;
use crate::data::AgedPhotoCollection;
use crate::error::{Error, Result};
use crate::latent::{AgeYears, IdentityEmbedding};
use crate::losses::{LossReport, LossTerm};
use crate::objective::{embed_collection, evaluate_step, StepContext, StepSample};
use crate::optim::Adam;

pub const LOSSES_CSV: &str = "losses.csv";
pub const SAMPLES_CSV: &str = "samples.csv";
const LOSSES_HEADER: &str = "iteration,term,raw_value,weight,contribution";
const SAMPLES_HEADER: &str = "iteration,input_index,input_age,target_age,extrapolation_age";

/// One logged step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub iteration: u64,
    pub sample: StepSample,
    pub report: LossReport,
}

/// Everything needed to continue a run exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState {
    /// Completed steps.
    pub iteration: u64,
    pub net: AdapterNetwork,
    pub optimizer: Adam,
    pub rng: ChaCha8Rng,
    pub log: Vec<StepLog>,
}

pub struct Trainer {
    bundle: BackendBundle,
    collection: AgedPhotoCollection,
    config: TrainingConfig,
    embeddings: Vec<IdentityEmbedding>,
}

impl Trainer {
    pub fn new(bundle: BackendBundle, collection: AgedPhotoCollection, config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        let embeddings = embed_collection(&bundle, &collection)?;
        Ok(Self {
            bundle,
            collection,
            config,
            embeddings,
        })
    }

    pub fn bundle(&self) -> &BackendBundle {
        &self.bundle
    }

    pub fn collection(&self) -> &AgedPhotoCollection {
        &self.collection
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    pub fn context(&self) -> StepContext<'_> {
        StepContext {
            bundle: &self.bundle,
            collection: &self.collection,
            embeddings: &self.embeddings,
            weights: self.config.weights,
            flags: self.config.flags,
            reference_window: self.config.reference_window,
        }
    }

    pub fn init_state(&self) -> TrainingState {
        let c = &self.config;
        TrainingState {
            iteration: 0,
            net: AdapterNetwork::new(c.adapter, c.seed.wrapping_add(1)),
            optimizer: Adam::new(c.adam, &c.adapter),
            rng: ChaCha8Rng::seed_from_u64(c.seed),
            log: Vec::new(),
        }
    }

    pub fn draw_sample<R: Rng>(&self, rng: &mut R) -> StepSample {
        let u_index: f64 = rng.random();
        let u_target: f64 = rng.random();
        let u_coin: f64 = rng.random();
        let u_extra: f64 = rng.random();
        let train = self.collection.train_indices();
        let k = ((u_index * train.len() as f64) as usize).min(train.len() - 1);
        let input_index = train[k];
        let extrapolation_age = if u_coin < self.config.p_extrapolate {
            self.collection.extrapolation_age_from_unit(u_extra).ok()
        } else {
            None
        };
        StepSample {
            input_index,
            input_age: self.collection.records()[input_index].age_years,
            target_age: self.collection.target_age_from_unit(u_target),
            extrapolation_age,
        }
    }

    /// One iteration. On error the state is left untouched.
    pub fn train_step(&self, state: &mut TrainingState) -> Result<LossReport> {
        let mut rng = state.rng.clone();
        let sample = self.draw_sample(&mut rng);
        let ctx = self.context();
        let report = if self.config.flags.use_adapter {
            let mut grads = AdapterParams::zeros(state.net.shape());
            let out = evaluate_step(&ctx, Some(&state.net), &sample, Some(&mut grads))?;
            if !out.report.total.is_finite() || !grads.is_finite() {
                return Err(Error::Shape("non-finite loss or adapter gradient".into()));
            }
            state.optimizer.update(state.net.params_mut(), &grads);
            out.report
        } else {
            evaluate_step(&ctx, None, &sample, None)?.report
        };
        state.rng = rng;
        state.iteration += 1;
        state.log.push(StepLog {
            iteration: state.iteration,
            sample,
            report: report.clone(),
        });
        Ok(report)
    }

    /// Trains to `config.iterations` without writing anything.
    pub fn train_in_memory(&self) -> Result<TrainingState> {
        let mut state = self.init_state();
        while state.iteration < self.config.iterations {
            self.train_step(&mut state)?;
        }
        Ok(state)
    }

    /// Runs from a fresh state to `config.iterations`.
    pub fn train(&self, out_dir: &Path) -> Result<PathBuf> {
        let mut state = self.init_state();
        self.train_from(&mut state, out_dir)
    }

    /// Continues `state` to `config.iterations`, writing the loss logs and a
    /// checkpoint every `checkpoint_every` steps and at the end. Returns the
    /// final checkpoint directory.
    pub fn train_from(&self, state: &mut TrainingState, out_dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let total = self.config.iterations;
        let mut last = None;
        while state.iteration < total {
            self.train_step(state)?;
            let it = state.iteration;
            if it % self.config.checkpoint_every == 0 || it == total {
                last = Some(self.save(state, out_dir)?);
            }
        }
        match last {
            Some(p) => Ok(p),
            None => self.save(state, out_dir),
        }
    }

    /// Writes `ckpt_<iter>/` and refreshes the run-level CSV logs.
    pub fn save(&self, state: &TrainingState, out_dir: &Path) -> Result<PathBuf> {
        let dir = out_dir.join(format!("ckpt_{}", state.iteration));
        checkpoint::save_checkpoint(&dir, state, &self.config, &self.collection, &self.bundle)?;
        write_logs(out_dir, &state.log)?;
        Ok(dir)
    }

    /// Loads a checkpoint written by a run with the same configuration.
    pub fn resume(&self, ckpt_dir: &Path) -> Result<TrainingState> {
        let (state, meta) = checkpoint::load_checkpoint(ckpt_dir)?;
        if meta.config_hash != self.config.hash() {
            return Err(CheckpointError::Incompatible(format!(
                "checkpoint config hash {} differs from the current config {}",
                meta.config_hash,
                self.config.hash()
            ))
            .into());
        }
        Ok(state)
    }
}

fn write_logs(dir: &Path, log: &[StepLog]) -> Result<()> {
    for (name, text) in [(LOSSES_CSV, losses_csv(log)), (SAMPLES_CSV, samples_csv(log))] {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Long-format loss log. Skipped terms have `skipped` as raw value; each
/// iteration ends with a `total` row.
pub fn losses_csv(log: &[StepLog]) -> String {
    let mut out = String::from(LOSSES_HEADER);
    out.push('\n');
    for step in log {
        for t in &step.report.terms {
            let raw = t.raw.map_or_else(|| "skipped".to_string(), |v| v.to_string());
            let _ = writeln!(out, "{},{},{},{},{}", step.iteration, t.name, raw, t.weight, t.contribution);
        }
        let total = step.report.total;
        let _ = writeln!(out, "{},total,{total},1,{total}", step.iteration);
    }
    out
}

pub fn samples_csv(log: &[StepLog]) -> String {
    let mut out = String::from(SAMPLES_HEADER);
    out.push('\n');
    for step in log {
        let s = &step.sample;
        let extra = s.extrapolation_age.map(|a| a.years().to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            step.iteration,
            s.input_index,
            s.input_age.years(),
            s.target_age.years(),
            extra
        );
    }
    out
}

fn parse_err(what: &str, line: usize, detail: impl std::fmt::Display) -> CheckpointError {
    CheckpointError::Log(format!("{what} line {line}: {detail}"))
}

fn parse_f64(s: &str, what: &str, line: usize) -> std::result::Result<f64, CheckpointError> {
    s.parse::<f64>().map_err(|e| parse_err(what, line, e))
}

fn parse_age(s: &str, what: &str, line: usize) -> std::result::Result<AgeYears, CheckpointError> {
    AgeYears::new(parse_f64(s, what, line)?).map_err(|e| parse_err(what, line, e))
}

/// Inverse of [`losses_csv`] and [`samples_csv`].
pub fn parse_logs(losses: &str, samples: &str) -> std::result::Result<Vec<StepLog>, CheckpointError> {
    let mut log: Vec<StepLog> = Vec::new();
    for (i, line) in samples.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(parse_err(SAMPLES_CSV, i + 1, "expected 5 fields"));
        }
        let iteration = f[0].parse::<u64>().map_err(|e| parse_err(SAMPLES_CSV, i + 1, e))?;
        let sample = StepSample {
            input_index: f[1].parse().map_err(|e| parse_err(SAMPLES_CSV, i + 1, e))?,
            input_age: parse_age(f[2], SAMPLES_CSV, i + 1)?,
            target_age: parse_age(f[3], SAMPLES_CSV, i + 1)?,
            extrapolation_age: if f[4].is_empty() {
                None
            } else {
                Some(parse_age(f[4], SAMPLES_CSV, i + 1)?)
            },
        };
        log.push(StepLog {
            iteration,
            sample,
            report: LossReport {
                terms: Vec::new(),
                total: 0.0,
            },
        });
    }
    let mut cursor = 0usize;
    for (i, line) in losses.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(parse_err(LOSSES_CSV, i + 1, "expected 5 fields"));
        }
        let iteration = f[0].parse::<u64>().map_err(|e| parse_err(LOSSES_CSV, i + 1, e))?;
        let step = log
            .get_mut(cursor)
            .filter(|s| s.iteration == iteration)
            .ok_or_else(|| parse_err(LOSSES_CSV, i + 1, "iteration missing from samples log"))?;
        if f[1] == "total" {
            step.report.total = parse_f64(f[2], LOSSES_CSV, i + 1)?;
            cursor += 1;
            continue;
        }
        let raw = if f[2] == "skipped" {
            None
        } else {
            Some(parse_f64(f[2], LOSSES_CSV, i + 1)?)
        };
        step.report.terms.push(LossTerm {
            name: f[1].to_string(),
            raw,
            weight: parse_f64(f[3], LOSSES_CSV, i + 1)?,
            contribution: parse_f64(f[4], LOSSES_CSV, i + 1)?,
        });
    }
    if cursor != log.len() {
        return Err(CheckpointError::Log("loss log is shorter than the samples log".into()));
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::AdapterShape;
    use crate::config::AblationFlags;
    use crate::synth::{synthetic_collection, SyntheticSpec, ToyPerson};

    fn trainer(iterations: u64, flags: AblationFlags) -> Trainer {
        let bundle = BackendBundle::toy(1);
        let collection = synthetic_collection(&bundle, &ToyPerson::new(3), &SyntheticSpec::default()).unwrap();
        let config = TrainingConfig {
            iterations,
            checkpoint_every: 5,
            adapter: AdapterShape::reduced(16),
            flags,
            seed: 9,
            ..Default::default()
        };
        Trainer::new(bundle, collection, config).unwrap()
    }

    #[test]
    fn sampled_ages_respect_ranges() {
        let t = trainer(1, AblationFlags::all_on());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut fired = 0;
        for _ in 0..2000 {
            let s = t.draw_sample(&mut rng);
            assert!((30.0..=70.0).contains(&s.target_age.years()));
            if let Some(a) = s.extrapolation_age {
                fired += 1;
                assert!(a.years() < 30.0 || a.years() > 70.0);
            }
            assert_eq!(t.collection().records()[s.input_index].split, crate::Split::Train);
        }
        assert!((fired as f64 / 2000.0 - 0.5).abs() < 0.05);
    }

    #[test]
    fn frozen_run_keeps_parameters_and_global_loss() {
        let t = trainer(3, AblationFlags::all_off());
        let mut state = t.init_state();
        let before = state.net.clone();
        for _ in 0..3 {
            let mut rng = state.rng.clone();
            let sample = t.draw_sample(&mut rng);
            let expected = crate::objective::global_step_loss(&t.context(), &sample).unwrap();
            let got = t.train_step(&mut state).unwrap();
            assert_eq!(got, expected);
        }
        assert_eq!(state.net, before);
        assert_eq!(state.iteration, 3);
    }

    #[test]
    fn one_iteration_writes_one_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let t = trainer(1, AblationFlags::all_on());
        let ckpt = t.train(dir.path()).unwrap();
        assert_eq!(ckpt, dir.path().join("ckpt_1"));
        let ckpts: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().starts_with("ckpt_"))
            .collect();
        assert_eq!(ckpts.len(), 1);
        let csv = fs::read_to_string(dir.path().join(LOSSES_CSV)).unwrap();
        let iterations: std::collections::HashSet<&str> =
            csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(iterations.len(), 1);
        assert!(csv.lines().any(|l| l.starts_with("1,total,")));
    }

    #[test]
    fn logs_round_trip_through_csv() {
        let t = trainer(4, AblationFlags::all_on());
        let mut state = t.init_state();
        for _ in 0..4 {
            t.train_step(&mut state).unwrap();
        }
        let parsed = parse_logs(&losses_csv(&state.log), &samples_csv(&state.log)).unwrap();
        assert_eq!(parsed, state.log);
        assert!(parse_logs("h\n1,total,x,1,0\n", "h\n1,0,30,40,\n").is_err());
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let full = trainer(10, AblationFlags::all_on());
        full.train(a.path()).unwrap();

        let short = trainer(10, AblationFlags::all_on());
        let mut state = short.init_state();
        for _ in 0..5 {
            short.train_step(&mut state).unwrap();
        }
        short.save(&state, b.path()).unwrap();
        let mut resumed = short.resume(&b.path().join("ckpt_5")).unwrap();
        assert_eq!(resumed, state);
        short.train_from(&mut resumed, b.path()).unwrap();
        for name in [LOSSES_CSV, SAMPLES_CSV] {
            assert_eq!(
                fs::read(a.path().join(name)).unwrap(),
                fs::read(b.path().join(name)).unwrap(),
                "{name}"
            );
        }
    }

    #[test]
    fn failed_step_leaves_state_unchanged() {
        let t = trainer(2, AblationFlags::all_on());
        let mut state = t.init_state();
        // Break the adapter so the forward pass produces a non-finite offset.
        state.net.params_mut().style_b2.fill(f64::NAN);
        let before = state.clone();
        assert!(t.train_step(&mut state).is_err());
        assert_eq!(state.iteration, before.iteration);
        assert_eq!(state.rng, before.rng);
        assert_eq!(state.log.len(), 0);
    }
}
