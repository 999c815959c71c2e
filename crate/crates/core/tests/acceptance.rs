//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use faceage_core::ablation::{run_ladder, RowStatus};
use faceage_core::adapter::{personalized_reage, AdapterShape, PARAM_NAMES};
use faceage_core::checkpoint::load_adapter;
use faceage_core::eval::{id_sim, run_protocol};
use faceage_core::losses::{adaptive_reg_weight, personalized_aging_loss};
use faceage_core::objective::{embed_collection, evaluate_step, StepContext, StepSample};
use faceage_core::synth::{synthetic_collection, video_fixture, SyntheticSpec, ToyPerson};
use faceage_core::trainer::{LOSSES_CSV, SAMPLES_CSV};
use faceage_core::video::{reage_video, FrameStatus};
use faceage_core::{
    AblationFlags, AdapterNetwork, AdapterParams, AgeYears, AgedPhotoCollection, BackendBundle, EvalProtocol, ImageTensor,
    LossWeights, Split, Trainer, TrainingConfig, TrainingState,
};

type Check = Result<String, String>;

fn age(v: f64) -> AgeYears {
    AgeYears::new(v).unwrap()
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn toy_run_config(iterations: u64) -> TrainingConfig {
    TrainingConfig {
        iterations,
        ..TrainingConfig::default()
    }
}

fn toy_collection(bundle: &BackendBundle) -> AgedPhotoCollection {
    synthetic_collection(bundle, &ToyPerson::new(0), &SyntheticSpec::default()).unwrap()
}

fn random_face(bundle: &BackendBundle, rng: &mut ChaCha8Rng) -> ImageTensor {
    let person = ToyPerson::new(rng.random_range(0..1000));
    person
        .photo(bundle, age(rng.random_range(0.0..=100.0)), rng.random())
        .unwrap()
}

fn identity_at_init() -> Check {
    let bundle = BackendBundle::toy(0);
    let net = AdapterNetwork::new(AdapterShape::default(), 7);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ages = [0.0, 25.0, 50.0, 75.0, 100.0];
    for i in 0..20 {
        let x = random_face(&bundle, &mut rng);
        for &a in &ages {
            let (p, _) = personalized_reage(&bundle, Some(&net), &x, age(a)).map_err(err)?;
            let (g, _) = personalized_reage(&bundle, None, &x, age(a)).map_err(err)?;
            let same = p.as_slice().iter().zip(g.as_slice()).all(|(u, v)| u.to_bits() == v.to_bits());
            ensure(same, format!("input {i}, age {a}: outputs differ"))?;
        }
    }
    Ok("100 cases bitwise equal".into())
}

fn schedule_exactness() -> Check {
    let at = |d: f64| adaptive_reg_weight(age(d));
    ensure(at(0.0) == 0.0, format!("w(0) = {}", at(0.0)))?;
    ensure(at(50.0) == 1.0, format!("w(50) = {}", at(50.0)))?;
    ensure(at(100.0) == 2.0, format!("w(100) = {}", at(100.0)))?;
    for d in 0..100 {
        let (a, b) = (at(d as f64), at(d as f64 + 1.0));
        ensure(b >= a, format!("w({}) = {b} < w({d}) = {a}", d + 1))?;
    }
    Ok("0/1/2 exact, monotone on 0..100".into())
}

fn loss_range_and_superset() -> Check {
    let bundle = BackendBundle::toy(0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for case in 0..100 {
        let y = random_face(&bundle, &mut rng);
        let n = rng.random_range(1..=6);
        let mut refs: Vec<ImageTensor> = (0..n).map(|_| random_face(&bundle, &mut rng)).collect();
        let before = personalized_aging_loss(&bundle, &y, &refs).map_err(err)?;
        let sim_before = id_sim(&bundle, &y, &refs).map_err(err)?;
        ensure((0.0..=2.0).contains(&before), format!("case {case}: loss {before}"))?;
        refs.push(random_face(&bundle, &mut rng));
        let after = personalized_aging_loss(&bundle, &y, &refs).map_err(err)?;
        let sim_after = id_sim(&bundle, &y, &refs).map_err(err)?;
        ensure((0.0..=2.0).contains(&after), format!("case {case}: loss {after}"))?;
        ensure(after <= before, format!("case {case}: loss grew {before} -> {after}"))?;
        ensure(sim_after >= sim_before, format!("case {case}: id_sim fell {sim_before} -> {sim_after}"))?;
        lo = lo.min(before.min(after));
        hi = hi.max(before.max(after));
    }
    Ok(format!("100 cases, loss range [{lo:.4}, {hi:.4}]"))
}

fn gradient_check() -> Check {
    let bundle = BackendBundle::toy(5);
    let collection = toy_collection(&bundle);
    let embeddings = embed_collection(&bundle, &collection).map_err(err)?;
    let ctx = StepContext {
        bundle: &bundle,
        collection: &collection,
        embeddings: &embeddings,
        weights: LossWeights::default(),
        flags: AblationFlags::all_on(),
        reference_window: 3,
    };
    let train = collection.train_indices();
    let mut worst = 0.0f64;
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut net = AdapterNetwork::new(AdapterShape::reduced(16), seed);
        net.perturb_output_layers(seed + 50, 0.5);
        let i = train[rng.random_range(0..train.len())];
        let sample = StepSample {
            input_index: i,
            input_age: collection.records()[i].age_years,
            target_age: age(rng.random_range(30.0..70.0)),
            extrapolation_age: Some(age(if seed % 2 == 0 { 12.0 } else { 88.0 })),
        };
        let loss = |n: &AdapterNetwork| evaluate_step(&ctx, Some(n), &sample, None).map(|o| o.report.total);
        let mut grads = AdapterParams::zeros(net.shape());
        evaluate_step(&ctx, Some(&net), &sample, Some(&mut grads)).map_err(err)?;
        let analytic = grads.tensors();
        for (t, (name, g)) in analytic.iter().enumerate() {
            let (mut num, mut ana) = (Vec::new(), Vec::new());
            for _ in 0..6 {
                let idx = rng.random_range(0..g.len());
                let mut plus = net.clone();
                plus.params_mut().tensors_mut()[t].1[idx] += 1e-5;
                let mut minus = net.clone();
                minus.params_mut().tensors_mut()[t].1[idx] -= 1e-5;
                num.push((loss(&plus).map_err(err)? - loss(&minus).map_err(err)?) / 2e-5);
                ana.push(g[idx]);
            }
            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let diff: Vec<f64> = num.iter().zip(&ana).map(|(a, b)| a - b).collect();
            let scale = norm(&num).max(norm(&ana));
            ensure(scale > 0.0, format!("seed {seed} {name}: zero gradient sample"))?;
            let rel = norm(&diff) / scale;
            ensure(rel < 1e-4, format!("seed {seed} {name}: rel error {rel:.3e}"))?;
            worst = worst.max(rel);
        }
    }
    Ok(format!("{} groups x 3 seeds, worst rel error {worst:.2e}", PARAM_NAMES.len()))
}

struct ToyRun {
    bundle: BackendBundle,
    collection: AgedPhotoCollection,
    init: TrainingState,
    trained: TrainingState,
    elapsed: Duration,
}

fn toy_run() -> Result<ToyRun, String> {
    let bundle = BackendBundle::toy(0);
    let collection = toy_collection(&bundle);
    let trainer = Trainer::new(bundle.clone(), collection.clone(), toy_run_config(500)).map_err(err)?;
    let start = Instant::now();
    let init = trainer.init_state();
    let trained = trainer.train_in_memory().map_err(err)?;
    Ok(ToyRun {
        bundle,
        collection,
        init,
        trained,
        elapsed: start.elapsed(),
    })
}

fn training_smoke(run: &ToyRun) -> Check {
    let totals: Vec<f64> = run.trained.log.iter().map(|s| s.report.total).collect();
    ensure(totals.len() == 500, format!("{} steps logged", totals.len()))?;
    let first = totals[..50].iter().sum::<f64>() / 50.0;
    let last = totals[450..].iter().sum::<f64>() / 50.0;
    ensure(last < first, format!("loss did not fall: {first:.4} -> {last:.4}"))?;
    let mut parts = vec![format!("loss {first:.4} -> {last:.4}")];
    for protocol in [EvalProtocol::regression(), EvalProtocol::progression()] {
        let sim = |net: &AdapterNetwork| -> Result<f64, String> {
            let report = run_protocol(&run.bundle, Some(net), &run.collection, &protocol).map_err(err)?;
            report
                .aggregate("in_range")
                .and_then(|a| a.id_sim)
                .ok_or_else(|| "in-range ID_sim undefined".to_string())
        };
        let (zero, trained) = (sim(&run.init.net)?, sim(&run.trained.net)?);
        let name = format!("{:?}", protocol.task).to_lowercase();
        ensure(
            trained >= zero,
            format!("{name} in-range ID_sim {zero:.4} -> {trained:.4}"),
        )?;
        parts.push(format!("{name} in-range ID_sim {zero:.4} -> {trained:.4}"));
    }
    Ok(parts.join(", "))
}

fn extrapolation_anchoring(run: &ToyRun) -> Check {
    let inputs = run.collection.indices(Split::Test);
    ensure(!inputs.is_empty(), "no test photos")?;
    let (lo, hi) = (run.collection.age_min().years(), run.collection.age_max().years());
    let distance_at = |a: f64| -> Result<f64, String> {
        let mut total = 0.0;
        for &i in &inputs {
            let x = run.collection.image(i);
            let (p, _) = personalized_reage(&run.bundle, Some(&run.trained.net), x, age(a)).map_err(err)?;
            let (g, _) = personalized_reage(&run.bundle, None, x, age(a)).map_err(err)?;
            total += run.bundle.perceptual_distance(&p, &g).map_err(err)?;
        }
        Ok(total / inputs.len() as f64)
    };
    let in_range: Vec<f64> = (0..=10)
        .map(|k| 10.0 * k as f64)
        .filter(|a| (lo..=hi).contains(a))
        .collect();
    let mut base = 0.0;
    for &a in &in_range {
        base += distance_at(a)?;
    }
    base /= in_range.len() as f64;
    ensure(base > 0.0, "trained adapter left in-range outputs unchanged")?;
    let mut parts = vec![format!("in-range {base:.5}")];
    let mut failed = Vec::new();
    for a in [10.0, 20.0, 90.0] {
        let d = distance_at(a)?;
        parts.push(format!("{a}y {d:.5}"));
        if d > 2.0 * base {
            failed.push(format!("{a}y {d:.5} > {:.5}", 2.0 * base));
        }
    }
    if failed.is_empty() {
        Ok(parts.join(", "))
    } else {
        Err(format!("{} ({})", failed.join("; "), parts.join(", ")))
    }
}

fn brute_max_cosine(e: &[f64], refs: &[Vec<f64>]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut best = f64::NEG_INFINITY;
    for r in refs {
        let dot: f64 = e.iter().zip(r).map(|(a, b)| a * b).sum();
        best = best.max(dot / (norm(e) * norm(r)));
    }
    best
}

fn oracle_equivalence() -> Check {
    let bundle = BackendBundle::toy(0);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let y = random_face(&bundle, &mut rng);
        let n = rng.random_range(1..=8);
        let refs: Vec<ImageTensor> = (0..n).map(|_| random_face(&bundle, &mut rng)).collect();
        let e = bundle.embed_identity(&y).map_err(err)?.vector().to_vec();
        let re: Vec<Vec<f64>> = refs
            .iter()
            .map(|r| bundle.embed_identity(r).map(|v| v.vector().to_vec()))
            .collect::<Result<_, _>>()
            .map_err(err)?;
        let oracle = brute_max_cosine(&e, &re);
        let loss = personalized_aging_loss(&bundle, &y, &refs).map_err(err)?;
        let sim = id_sim(&bundle, &y, &refs).map_err(err)?;
        let dl = (loss - (1.0 - oracle)).abs();
        let ds = (sim - oracle).abs();
        ensure(dl <= 1e-9, format!("case {case}: loss off by {dl:.3e}"))?;
        ensure(ds <= 1e-9, format!("case {case}: id_sim off by {ds:.3e}"))?;
        worst = worst.max(dl).max(ds);
    }
    Ok(format!("50 cases, worst deviation {worst:.2e}"))
}

fn determinism_and_checkpointing() -> Check {
    let bundle = BackendBundle::toy(0);
    let collection = toy_collection(&bundle);
    let config = TrainingConfig {
        iterations: 200,
        checkpoint_every: 100,
        adapter: AdapterShape::reduced(4),
        ..TrainingConfig::default()
    };
    let trainer = Trainer::new(bundle.clone(), collection, config).map_err(err)?;
    let dir = tempfile::tempdir().map_err(err)?;
    let (full, resumed) = (dir.path().join("full"), dir.path().join("resumed"));
    let last = trainer.train(&full).map_err(err)?;
    let mut state = trainer.resume(&full.join("ckpt_100")).map_err(err)?;
    ensure(state.iteration == 100, format!("resumed at {}", state.iteration))?;
    trainer.train_from(&mut state, &resumed).map_err(err)?;
    for name in [LOSSES_CSV, SAMPLES_CSV] {
        let a = fs::read(full.join(name)).map_err(err)?;
        let b = fs::read(resumed.join(name)).map_err(err)?;
        ensure(a == b, format!("{name} differs after resume"))?;
    }
    let (loaded, _) = load_adapter(&last).map_err(err)?;
    ensure(loaded == state.net, "reloaded adapter parameters differ")?;
    let x = trainer.collection().image(0);
    for a in [10.0, 45.0, 90.0] {
        let code = bundle.encode(x, age(a)).map_err(err)?;
        let before = state.net.forward(&code, age(a)).map_err(err)?;
        let after = loaded.forward(&code, age(a)).map_err(err)?;
        let same = before
            .styles()
            .iter()
            .zip(after.styles())
            .all(|(u, v)| u.to_bits() == v.to_bits());
        ensure(same, format!("forward at age {a} differs after reload"))?;
    }
    Ok("losses/samples CSV byte-identical, reload forward bitwise".into())
}

fn eval_arithmetic() -> Check {
    let reg: Vec<f64> = (0..=7).map(|k| 10.0 * k as f64).collect();
    let prog: Vec<f64> = (4..=10).map(|k| 10.0 * k as f64).collect();
    ensure(EvalProtocol::regression().target_ages == reg, "regression grid")?;
    ensure(EvalProtocol::progression().target_ages == prog, "progression grid")?;
    let bundle = BackendBundle::toy(0);
    let collection = toy_collection(&bundle);
    let mut net = AdapterNetwork::new(AdapterShape::reduced(16), 1);
    net.perturb_output_layers(2, 0.3);
    let mut checked = 0;
    for protocol in [EvalProtocol::regression(), EvalProtocol::progression()] {
        let report = run_protocol(&bundle, Some(&net), &collection, &protocol).map_err(err)?;
        let ranges: Vec<(String, f64, f64)> = std::iter::once(("overall".to_string(), f64::MIN, f64::MAX))
            .chain(protocol.sub_ranges.iter().map(|r| (r.name.clone(), r.lo, r.hi)))
            .chain(std::iter::once((
                "in_range".to_string(),
                collection.age_min().years(),
                collection.age_max().years(),
            )))
            .collect();
        for (name, lo, hi) in ranges {
            let agg = report.aggregate(&name).ok_or_else(|| format!("missing aggregate {name}"))?;
            let within: Vec<_> = report
                .per_age
                .iter()
                .filter(|m| m.target_age >= lo && m.target_age <= hi)
                .collect();
            let mae = within.iter().map(|m| m.age_mae).sum::<f64>() / within.len() as f64;
            let ids: Vec<f64> = within.iter().filter_map(|m| m.id_sim).collect();
            let id = ids.iter().sum::<f64>() / ids.len() as f64;
            ensure((agg.age_mae.unwrap() - mae).abs() <= 1e-9, format!("{name} Age_MAE"))?;
            ensure((agg.id_sim.unwrap() - id).abs() <= 1e-9, format!("{name} ID_sim"))?;
            checked += 1;
        }
    }
    Ok(format!("grids exact, {checked} aggregates match"))
}

fn video_pipeline() -> Check {
    let bundle = BackendBundle::toy(0);
    let frames = video_fixture(&bundle, &ToyPerson::new(3), age(35.0), 5, Some(3)).map_err(err)?;
    let net = AdapterNetwork::new(AdapterShape::reduced(16), 0);
    let out = reage_video(&bundle, Some(&net), &frames, 0, age(65.0)).map_err(err)?;
    ensure(out.frames.len() == 5 && out.summary.frame_count == 5, "frame count changed")?;
    for (i, r) in out.summary.frames.iter().enumerate() {
        ensure(r.index == i, format!("report {i} has index {}", r.index))?;
    }
    // Each output frame is nearest its own input.
    for (i, o) in out.frames.iter().enumerate() {
        let d: Vec<f64> = frames
            .iter()
            .map(|f| f.as_slice().iter().zip(o.as_slice()).map(|(a, b)| (a - b).powi(2)).sum())
            .collect();
        let nearest = (0..d.len()).min_by(|&a, &b| d[a].total_cmp(&d[b])).unwrap();
        ensure(nearest == i, format!("output {i} is nearest input {nearest}"))?;
    }
    ensure(out.summary.warning_count == 1, format!("{} warnings", out.summary.warning_count))?;
    ensure(out.summary.frames[3].status == FrameStatus::NoFace, "blank frame was not flagged")?;
    ensure(out.frames[3] == frames[3], "blank frame was modified")?;
    let mut swapped = 0;
    for r in out.summary.frames.iter().filter(|r| r.status == FrameStatus::Swapped) {
        let (b, a) = (r.cosine_before.unwrap(), r.cosine_after.unwrap());
        ensure(a > b, format!("frame {}: cosine to keyframe {b:.4} -> {a:.4}", r.index))?;
        swapped += 1;
    }
    ensure(swapped == 4, format!("{swapped} frames swapped"))?;
    Ok("5 frames in order, 4 swapped toward the keyframe identity, 1 warning".into())
}

fn ablation_ladder() -> Check {
    let bundle = BackendBundle::toy(0);
    let collection = toy_collection(&bundle);
    let table = run_ladder(
        &bundle,
        &collection,
        &toy_run_config(500),
        &EvalProtocol::regression(),
        "overall",
    );
    ensure(table.rows.len() == 6, format!("{} rows", table.rows.len()))?;
    for r in &table.rows {
        ensure(
            !matches!(r.status, RowStatus::Failed | RowStatus::Unavailable),
            format!("row {} is {:?}: {:?}", r.name, r.status, r.note),
        )?;
    }
    let ours = table.row("Ours").and_then(|r| r.id_sim).ok_or("full-method ID_sim missing")?;
    let sam = table.row("SAM").and_then(|r| r.id_sim).ok_or("SAM ID_sim missing")?;
    ensure(ours >= sam, format!("full method {ours:.4} < SAM {sam:.4}"))?;
    Ok(format!("6 rows, full method {ours:.4} >= SAM {sam:.4}"))
}

fn report(failures: &mut usize, id: &str, title: &str, limit: Duration, start: Instant, result: Check) {
    let elapsed = start.elapsed();
    let result = result.and_then(|msg| {
        if elapsed <= limit {
            Ok(msg)
        } else {
            Err(format!("{msg}; took {elapsed:.1?}, limit {limit:?}"))
        }
    });
    match result {
        Ok(msg) => println!("PASS {id} {title}: {msg} [{elapsed:.1?}]"),
        Err(msg) => {
            *failures += 1;
            println!("FAIL {id} {title}: {msg} [{elapsed:.1?}]");
        }
    }
}

fn main() -> ExitCode {
    let mut failures = 0;
    let secs = Duration::from_secs;
    type Case = (&'static str, &'static str, u64, fn() -> Check);
    let early: [Case; 4] = [
        ("1", "identity at init", 10, identity_at_init),
        ("2", "schedule exactness", 1, schedule_exactness),
        ("3", "loss range and superset", 30, loss_range_and_superset),
        ("4", "gradient correctness", 120, gradient_check),
    ];
    for (id, title, limit, f) in early {
        let t = Instant::now();
        report(&mut failures, id, title, secs(limit), t, f());
    }

    let t = Instant::now();
    match toy_run() {
        Ok(run) => {
            let train_time = run.elapsed;
            let smoke = training_smoke(&run);
            report(&mut failures, "5", "training smoke", secs(300), t, smoke);
            let t6 = Instant::now();
            let anchoring = extrapolation_anchoring(&run);
            report(&mut failures, "6", "extrapolation anchoring", secs(60), t6, anchoring);
            log_train_time(train_time);
        }
        Err(e) => {
            report(&mut failures, "5", "training smoke", secs(300), t, Err(e.clone()));
            report(&mut failures, "6", "extrapolation anchoring", secs(60), t, Err(e));
        }
    }

    let late: [Case; 5] = [
        ("7", "oracle equivalence", 10, oracle_equivalence),
        ("8", "determinism and checkpointing", 120, determinism_and_checkpointing),
        ("9", "eval-protocol arithmetic", 1, eval_arithmetic),
        ("10", "video pipeline", 30, video_pipeline),
        ("11", "ablation ladder", 900, ablation_ladder),
    ];
    for (id, title, limit, f) in late {
        let t = Instant::now();
        report(&mut failures, id, title, secs(limit), t, f());
    }

    if failures == 0 {
        println!("acceptance: all criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failures} criteria failed");
        ExitCode::FAILURE
    }
}

fn log_train_time(d: Duration) {
    println!("     toy run trained in {d:.1?}");
}
