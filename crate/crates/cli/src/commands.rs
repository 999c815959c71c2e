use std::fmt;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context};
use log::{info, warn};

use faceage_core::ablation::{run_dataset_sizes, run_ladder};
use faceage_core::adapter::personalized_reage;
use faceage_core::checkpoint::{load_adapter, load_config};
use faceage_core::data::{ingest_and_align, load_manifest};
use faceage_core::eval::run_protocol;
use faceage_core::losses::build_reference_set;
use faceage_core::plots::emit_comparison;
use faceage_core::synth::{write_synthetic_dataset, SyntheticSpec, ToyPerson};
use faceage_core::video::{run_video_job, VideoJob};
use faceage_core::{
    AdapterNetwork, AgeYears, AgedPhotoCollection, BackendBundle, Error, EstimatorMode, EvalProtocol, ImageTensor,
    Split, Task, Trainer, TrainingConfig,
};

use crate::{AblateArgs, AblateMode, Cli, Command, DatasetCommand, EvalArgs, ReageArgs, TrainArgs, VideoArgs};

/// Exit code 2 for usage and validation problems, 1 for everything else.
#[derive(Debug)]
pub enum CliError {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(e) | CliError::Runtime(e) => {
                if f.alternate() {
                    write!(f, "{e:#}")
                } else {
                    write!(f, "{e}")
                }
            }
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Data(_) | Error::Config(_) => CliError::Usage(e.into()),
            other => CliError::Runtime(other.into()),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(anyhow!(msg.into()))
}

fn core<T>(r: Result<T, impl Into<Error>>) -> CliResult<T> {
    r.map_err(|e| CliError::from(e.into()))
}

fn target_age(years: f64) -> CliResult<AgeYears> {
    AgeYears::new(years).map_err(|_| usage(format!("age {years} is outside [0, 100]")))
}

/// Config file, else the checkpoint's config, else defaults; then flag overrides.
fn resolve_config(cli: &Cli, ckpt: Option<&Path>) -> CliResult<TrainingConfig> {
    let mut config = match (&cli.global.config, ckpt) {
        (Some(path), _) => core(TrainingConfig::load(path))?,
        (None, Some(dir)) => core(load_config(dir))?,
        (None, None) => TrainingConfig::default(),
    };
    if let Some(b) = cli.global.backend {
        config.backend = b;
    }
    if let Some(s) = cli.global.seed {
        config.seed = s;
    }
    core(config.validate())?;
    Ok(config)
}

fn bundle(config: &TrainingConfig) -> CliResult<BackendBundle> {
    core(config.load_bundle())
}

fn adapter(ckpt: Option<&Path>, no_adapter: bool) -> CliResult<Option<AdapterNetwork>> {
    match ckpt {
        Some(dir) if !no_adapter => {
            let (net, meta) = core(load_adapter(dir))?;
            info!("loaded adapter from {} (iteration {})", dir.display(), meta.iteration);
            Ok(Some(net))
        }
        _ => Ok(None),
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Train(a) => train(cli, a),
        Command::Reage(a) => reage(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::Video(a) => video(cli, a),
        Command::Dataset(d) => dataset(cli, d),
        Command::Ablate(a) => ablate(cli, a),
    }
}

fn train(cli: &Cli, a: &TrainArgs) -> CliResult<()> {
    let mut config = resolve_config(cli, None)?;
    if let Some(n) = a.iterations {
        config.iterations = n;
    }
    if let Some(list) = &a.ablate {
        core(config.flags.ablate(list))?;
    }
    core(config.validate())?;
    let collection = core(load_manifest(&a.manifest))?;
    let bundle = bundle(&config)?;
    let trainer = core(Trainer::new(bundle, collection, config))?;
    let last = match &a.resume {
        Some(dir) => {
            let mut state = core(trainer.resume(dir))?;
            info!("resuming at iteration {}", state.iteration);
            core(trainer.train_from(&mut state, &a.out))?
        }
        None => core(trainer.train(&a.out))?,
    };
    println!("{}", last.display());
    Ok(())
}

fn reage(cli: &Cli, a: &ReageArgs) -> CliResult<()> {
    let age = target_age(a.age)?;
    let config = resolve_config(cli, a.ckpt.as_deref())?;
    let bundle = bundle(&config)?;
    let net = adapter(a.ckpt.as_deref(), a.no_adapter)?;
    let raw = core(ImageTensor::load(&a.image))?;
    let face = core(bundle.align_face(&raw))?.face;
    let (out, _) = core(personalized_reage(&bundle, net.as_ref(), &face, age))?;
    core(out.save_png(&a.out))?;
    let estimate = core(bundle.estimate_age(&out, EstimatorMode::Eval))?;
    println!("estimated age {:.1}", estimate.years());
    Ok(())
}

fn eval(cli: &Cli, a: &EvalArgs) -> CliResult<()> {
    let config = resolve_config(cli, a.ckpt.as_deref())?;
    let bundle = bundle(&config)?;
    let net = adapter(a.ckpt.as_deref(), a.no_adapter)?;
    let collection = core(load_manifest(&a.manifest))?;
    for task in a.task.tasks() {
        let dir = a.out.join(task_name(task));
        let protocol = EvalProtocol::for_task(task);
        let mut report = core(run_protocol(&bundle, net.as_ref(), &collection, &protocol))?;
        report.config_hash = Some(config.hash());
        report.seed = Some(config.seed);
        core(report.write(&dir))?;
        if !report.undefined_ages.is_empty() {
            warn!("{}: ID_sim undefined at ages {:?}", task_name(task), report.undefined_ages);
        }
        if net.is_some() {
            let mut baseline = core(run_protocol(&bundle, None, &collection, &protocol))?;
            baseline.config_hash = report.config_hash.clone();
            baseline.seed = report.seed;
            core(baseline.write(&dir.join("global")))?;
            core(emit_comparison(&[("global", &baseline), ("personalized", &report)], &dir.join("plots")))?;
        } else {
            core(emit_comparison(&[("global", &report)], &dir.join("plots")))?;
        }
        for agg in &report.aggregates {
            println!(
                "{} {}: Age_MAE {} ID_sim {}",
                task_name(task),
                agg.name,
                fmt_metric(agg.age_mae),
                fmt_metric(agg.id_sim)
            );
        }
    }
    Ok(())
}

fn task_name(t: Task) -> &'static str {
    match t {
        Task::Regression => "regression",
        Task::Progression => "progression",
    }
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into())
}

fn video(cli: &Cli, a: &VideoArgs) -> CliResult<()> {
    let age = target_age(a.age)?;
    let config = resolve_config(cli, a.ckpt.as_deref())?;
    let bundle = bundle(&config)?;
    let net = adapter(a.ckpt.as_deref(), false)?;
    let job = VideoJob {
        frames_dir: a.frames.clone(),
        keyframe: a.keyframe,
        target_age: age,
        checkpoint: a.ckpt.clone(),
        out_dir: a.out.clone(),
    };
    let summary = run_video_job(&bundle, net.as_ref(), &job).map_err(|e| match e {
        Error::Video(_) => CliError::Usage(e.into()),
        other => CliError::from(other),
    })?;
    println!(
        "{} frames written, {} passed through",
        summary.frame_count, summary.warning_count
    );
    Ok(())
}

/// Grid ages of both protocols with no reference photo within the widest window.
fn uncovered_grid_ages(collection: &AgedPhotoCollection) -> Vec<f64> {
    let mut ages: Vec<f64> = [Task::Regression, Task::Progression]
        .into_iter()
        .flat_map(|t| EvalProtocol::for_task(t).target_ages)
        .collect();
    ages.sort_by(f64::total_cmp);
    ages.dedup();
    ages.into_iter()
        .filter(|&a| {
            let age = AgeYears::new(a).expect("grid age");
            build_reference_set(collection, age, 3, Split::Reference).is_empty()
        })
        .collect()
}

fn dataset(cli: &Cli, d: &DatasetCommand) -> CliResult<()> {
    match d {
        DatasetCommand::Validate { manifest } => {
            let c = core(load_manifest(manifest))?;
            println!("{} records, train ages {}..{}", c.len(), c.age_min().years(), c.age_max().years());
            for split in Split::ALL {
                let hist = c.decade_histogram(split);
                let cells: Vec<String> = hist.iter().map(|(d, n)| format!("{d}s:{n}")).collect();
                println!("{split}: {} [{}]", c.indices(split).len(), cells.join(" "));
            }
            let gaps = uncovered_grid_ages(&c);
            if !gaps.is_empty() {
                warn!("no reference photo within 10 years of grid ages {gaps:?}");
                println!("uncovered grid ages: {gaps:?}");
            }
            Ok(())
        }
        DatasetCommand::Ingest { raw, manifest } => {
            let config = resolve_config(cli, None)?;
            let bundle = bundle(&config)?;
            let report = core(ingest_and_align(raw, manifest, &bundle))?;
            for (file, reason) in &report.skipped {
                warn!("skipped {file}: {reason}");
            }
            println!(
                "{} aligned, {} skipped, manifest {}",
                report.written.len(),
                report.warning_count(),
                manifest.display()
            );
            Ok(())
        }
        DatasetCommand::Synth {
            out,
            person,
            train_count,
            min_age,
            max_age,
        } => {
            let config = resolve_config(cli, None)?;
            let bundle = bundle(&config)?;
            let (lo, hi) = (target_age(*min_age)?, target_age(*max_age)?);
            if lo.years() > hi.years() {
                return Err(usage("--min-age exceeds --max-age"));
            }
            let spec = match train_count {
                Some(0) => return Err(usage("--train-count must be positive")),
                Some(n) => SyntheticSpec::evenly_spaced(*n, lo.years(), hi.years()),
                None => SyntheticSpec::default(),
            };
            let path = core(write_synthetic_dataset(&bundle, &ToyPerson::new(*person), &spec, out))?;
            println!("{}", path.display());
            Ok(())
        }
    }
}

fn ablate(cli: &Cli, a: &AblateArgs) -> CliResult<()> {
    let mut config = resolve_config(cli, None)?;
    if let Some(n) = a.iterations {
        config.iterations = n;
    }
    core(config.validate())?;
    let bundle = bundle(&config)?;
    let collection = core(load_manifest(&a.manifest))?;
    let protocol = EvalProtocol::regression();
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    if matches!(a.mode, AblateMode::Ladder | AblateMode::Both) {
        let table = run_ladder(&bundle, &collection, &config, &protocol, &a.aggregate);
        core(table.write(&a.out, "ladder"))?;
        print!("{}", table.to_markdown());
    }
    if matches!(a.mode, AblateMode::Sizes | AblateMode::Both) {
        let table = run_dataset_sizes(&bundle, &collection, &config, &protocol, &a.aggregate, &a.sizes);
        core(table.write(&a.out, "dataset_sizes"))?;
        print!("{}", table.to_markdown());
    }
    Ok(())
}
