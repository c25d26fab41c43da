use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use seminj::checkpoint::Checkpoint;
use seminj::config::RunConfig;
use seminj::outdir::{create_run_dir, sha256_hex};
use seminj::provenance::ProvenanceRecord;
use seminj::tables::{
    write_rows, DatasetRow, LossRow, PointRow, SweepRow, TrajectoryRow, DATASET_COLUMNS, LOSS_COLUMNS, POINT_COLUMNS,
    SWEEP_COLUMNS, TRAJECTORY_COLUMNS,
};
use seminj_core::checks::{run_checks, CheckId};
use seminj_core::inject::{
    blend_velocity, pipeline_seeds, run_pipeline, tpw_velocity, Denoiser, ModelKind, PipelineConfig, SamplerConfig,
    ToyFlowModel, FLOW_HORIZON,
};
use seminj_core::metrics::{run_experiment, Condition, ExperimentReport, ProtocolConfig};
use seminj_core::net::{toy_datasets, train, ConditionVector};
use seminj_core::noise::{erase_seeds, sample_gaussian};
use seminj_core::sampler::heun_integrate;
use seminj_core::toyflow::{default_seed_banks, ShapeKind};
use seminj_core::NoiseTensor;

use crate::{ChecksFailed, Cli, Command, EraseArgs, ModelArgs, PipelineArgs, SampleArgs, SweepArgs, TrainArgs, VerifyArgs};

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.out_dir = dir.display().to_string();
    }
    match cli.command {
        Command::Train(a) => cmd_train(cfg, a),
        Command::Sample(a) => cmd_sample(cfg, a),
        Command::Erase(a) => cmd_erase(cfg, a),
        Command::Inject(a) => cmd_pipeline(cfg, a, false),
        Command::Pipeline(a) => cmd_pipeline(cfg, a, true),
        Command::Verify(a) => cmd_verify(cfg, a),
        Command::Sweep(a) => cmd_sweep(cfg, a),
    }
}

/// Validated config plus its fresh run directory, keyed by command, config and extra inputs.
fn prepare(cfg: &RunConfig, command: &str, extra: &[u8]) -> Result<PathBuf> {
    cfg.validate()?;
    let toml = cfg.to_toml();
    let mut key = format!("{command}\n{toml}").into_bytes();
    key.extend_from_slice(extra);
    let dir = create_run_dir(Path::new(&cfg.out_dir), command, &key)
        .with_context(|| format!("creating run directory under {}", cfg.out_dir))?;
    std::fs::write(dir.join("config.toml"), toml)?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn done(dir: &Path) {
    println!("{}", dir.display());
}

#[derive(Serialize)]
struct TrainSummary {
    epochs: usize,
    initial_mse: f64,
    final_mse: f64,
    memorized: bool,
    overfit_threshold: f64,
    checkpoint_sha256: String,
}

fn cmd_train(mut cfg: RunConfig, a: TrainArgs) -> Result<()> {
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.train.learning_rate = lr;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(w) = a.width {
        cfg.net.width = w;
    }
    if let Some(c) = a.convention {
        cfg.sampling.convention = c;
    }
    let dir = prepare(&cfg, "train", &[])?;
    let banks = default_seed_banks();
    let shapes = ShapeKind::ALL.iter().map(|&k| cfg.shape(k)).collect::<Result<Vec<_>, _>>()?;
    let sets = toy_datasets(&shapes, &banks, cfg.toy.n_pairs, cfg.toy.grid_size)?;
    let ds_dir = dir.join("datasets");
    std::fs::create_dir(&ds_dir)?;
    let labels = shapes.iter().flat_map(|s| {
        let name = s.kind().name();
        banks.get(name).unwrap_or_default().iter().map(move |seed| format!("{name}_{seed}.csv"))
    });
    for (set, file) in sets.iter().zip(labels) {
        write_rows(&ds_dir.join(file), &DATASET_COLUMNS, &DatasetRow::expand(&set.pairs))?;
    }
    let train_cfg = cfg.train()?;
    let outcome = train(&sets, cfg.net()?, &train_cfg)?;
    let loss: Vec<LossRow> = outcome.log.iter().map(|&(epoch, loss)| LossRow { epoch, loss }).collect();
    write_rows(&dir.join("loss.csv"), &LOSS_COLUMNS, &loss)?;
    let ck = Checkpoint {
        params: outcome.params,
        convention: cfg.convention()?,
        epochs: train_cfg.epochs,
        initial_mse: outcome.initial_mse,
        final_mse: outcome.final_mse,
        datasets: banks.iter().map(|(k, s)| (k.to_string(), s.to_vec())).collect(),
        config: cfg.to_toml(),
    };
    let text = ck.to_text();
    std::fs::write(dir.join("checkpoint.txt"), &text)?;
    write_json(
        &dir.join("summary.json"),
        &TrainSummary {
            epochs: train_cfg.epochs,
            initial_mse: outcome.initial_mse,
            final_mse: outcome.final_mse,
            memorized: outcome.memorized,
            overfit_threshold: train_cfg.overfit_threshold,
            checkpoint_sha256: sha256_hex(text.as_bytes()),
        },
    )?;
    if !outcome.memorized {
        eprintln!(
            "warning: final MSE {:.3e} is above the memorization threshold {:.0e}",
            outcome.final_mse, train_cfg.overfit_threshold
        );
    }
    done(&dir);
    Ok(())
}

struct Loaded {
    ck: Checkpoint,
    sha: String,
}

fn load_checkpoint(path: &Path) -> Result<Loaded> {
    let bytes = std::fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    let text = std::str::from_utf8(&bytes).context("checkpoint is not UTF-8")?;
    let ck = Checkpoint::parse(text)?;
    Ok(Loaded { ck, sha: sha256_hex(&bytes) })
}

fn warn_untrained(ck: &Checkpoint, threshold: f64) {
    if ck.final_mse > threshold {
        eprintln!(
            "warning: checkpoint final MSE {:.3e} is above the memorization threshold {:.0e}; results may not reflect a memorized model",
            ck.final_mse, threshold
        );
    }
}

fn apply_model_args(cfg: &mut RunConfig, m: &ModelArgs) {
    if let Some(c) = &m.condition {
        cfg.pipeline.shape = c.clone();
    }
    if let Some(s) = m.slot {
        cfg.pipeline.slot = s;
    }
    if let Some(h) = m.heun_steps {
        cfg.sampling.heun_steps = h;
    }
}

fn condition(cfg: &RunConfig) -> Result<ConditionVector> {
    let spec = cfg.shape(ShapeKind::parse(&cfg.pipeline.shape)?)?;
    Ok(ConditionVector::new(&spec, cfg.pipeline.slot))
}

fn cmd_sample(mut cfg: RunConfig, a: SampleArgs) -> Result<()> {
    apply_model_args(&mut cfg, &a.model);
    if let Some(n) = a.n_points {
        cfg.pipeline.n_points = n;
    }
    let Loaded { ck, sha } = load_checkpoint(&a.model.checkpoint)?;
    let dir = prepare(&cfg, "sample", sha.as_bytes())?;
    warn_untrained(&ck, cfg.train.overfit_threshold);
    let cond = condition(&cfg)?;
    let model = ToyFlowModel { params: &ck.params };
    let shape = vec![cfg.pipeline.n_points, 2];
    let z0 = sample_gaussian(cfg.seed, &shape)?;
    let sign = ck.convention.sign();
    let field = |z: &[f64], s: f64, out: &mut [f64]| {
        let latent = NoiseTensor::new(z.to_vec(), shape.clone())?;
        let v = model.predict(&latent, FLOW_HORIZON * (1.0 - s), &cond)?;
        for (o, vi) in out.iter_mut().zip(v.data()) {
            *o = sign * vi;
        }
        Ok(())
    };
    let traj = heun_integrate(field, z0.data(), 0.0, 1.0, cfg.sampling.heun_steps)?;
    let rows: Vec<TrajectoryRow> = traj
        .times
        .iter()
        .zip(&traj.states)
        .flat_map(|(&t, st)| st.chunks_exact(2).enumerate().map(move |(point, p)| TrajectoryRow { t, point, x: p[0], y: p[1] }))
        .collect();
    write_rows(&dir.join("trajectory.csv"), &TRAJECTORY_COLUMNS, &rows)?;
    write_rows(&dir.join("latent.csv"), &POINT_COLUMNS, &PointRow::from_flat(z0.data()))?;
    write_rows(&dir.join("sample.csv"), &POINT_COLUMNS, &PointRow::from_flat(traj.final_state()))?;
    let mut prov = ProvenanceRecord {
        command: "sample".into(),
        master_seed: cfg.seed,
        seeds: vec![cfg.seed],
        timesteps: vec![],
        weights: vec![],
        delta: 0.0,
        model_kind: ModelKind::VelocityFlow.as_str().into(),
        shape: None,
        slot: None,
        n_points: cfg.pipeline.n_points,
        checkpoint_sha256: None,
        convention: None,
        heun_steps: None,
        config: cfg.to_toml(),
    };
    stamp(&mut prov, &cfg, &ck, sha);
    prov.write(&dir.join("provenance.json"))?;
    done(&dir);
    Ok(())
}

fn stamp(prov: &mut ProvenanceRecord, cfg: &RunConfig, ck: &Checkpoint, sha: String) {
    prov.shape = Some(cfg.pipeline.shape.clone());
    prov.slot = Some(cfg.pipeline.slot);
    prov.checkpoint_sha256 = Some(sha);
    prov.convention = Some(ck.convention.as_str().into());
    prov.heun_steps = Some(cfg.sampling.heun_steps);
}

fn apply_erase_args(cfg: &mut RunConfig, e: &EraseArgs) -> Result<Vec<u64>> {
    if let Some(n) = e.n_erase {
        cfg.pipeline.n_erase = n;
    }
    if let Some(n) = e.n_points {
        cfg.pipeline.n_points = n;
    }
    if e.seeds.is_empty() {
        return Ok(pipeline_seeds(cfg.seed, cfg.pipeline.n_erase));
    }
    if e.n_erase.is_some_and(|n| n != e.seeds.len()) {
        bail!(seminj_core::Error::InvalidParameter(format!(
            "--n-erase {} disagrees with {} explicit seeds",
            cfg.pipeline.n_erase,
            e.seeds.len()
        )));
    }
    cfg.pipeline.n_erase = e.seeds.len();
    Ok(e.seeds.clone())
}

fn cmd_erase(mut cfg: RunConfig, a: EraseArgs) -> Result<()> {
    let seeds = apply_erase_args(&mut cfg, &a)?;
    let dir = prepare(&cfg, "erase", format!("{seeds:?}").as_bytes())?;
    let z = erase_seeds(&seeds, &[cfg.pipeline.n_points, 2])?;
    write_rows(&dir.join("latent.csv"), &POINT_COLUMNS, &PointRow::from_flat(z.data()))?;
    let prov = ProvenanceRecord {
        command: "erase".into(),
        master_seed: cfg.seed,
        seeds,
        timesteps: vec![],
        weights: vec![],
        delta: 0.0,
        model_kind: ModelKind::VelocityFlow.as_str().into(),
        shape: None,
        slot: None,
        n_points: cfg.pipeline.n_points,
        checkpoint_sha256: None,
        convention: None,
        heun_steps: None,
        config: cfg.to_toml(),
    };
    prov.write(&dir.join("provenance.json"))?;
    done(&dir);
    Ok(())
}

fn cmd_pipeline(mut cfg: RunConfig, a: PipelineArgs, sample: bool) -> Result<()> {
    apply_model_args(&mut cfg, &a.model);
    let seeds = apply_erase_args(&mut cfg, &a.erase)?;
    if let Some(k) = a.k_steps {
        cfg.pipeline.k_steps = k;
    }
    if let Some(d) = a.delta {
        cfg.pipeline.delta = d;
    }
    if let Some(c) = a.center {
        cfg.pipeline.center = c;
    }
    let command = if sample { "pipeline" } else { "inject" };
    let Loaded { ck, sha } = load_checkpoint(&a.model.checkpoint)?;
    let dir = prepare(&cfg, command, format!("{sha}{seeds:?}").as_bytes())?;
    warn_untrained(&ck, cfg.train.overfit_threshold);
    let cond = condition(&cfg)?;
    let model = ToyFlowModel { params: &ck.params };
    let pcfg = PipelineConfig {
        n_erase: cfg.pipeline.n_erase,
        weight_schedule: cfg.weight_schedule(cfg.pipeline.k_steps, cfg.pipeline.center)?,
        delta: cfg.pipeline.delta,
        model_kind: ModelKind::VelocityFlow,
        latent_shape: vec![cfg.pipeline.n_points, 2],
    };
    let (initial, adjusted, sample_out, provenance) = if sample {
        let sampler = SamplerConfig::Heun { steps: cfg.sampling.heun_steps, convention: ck.convention };
        let out = run_pipeline(&model, &cond, &pcfg, &seeds, &sampler)?;
        (out.initial, out.adjusted, Some(out.sample), out.provenance)
    } else {
        pcfg.validate()?;
        let initial = erase_seeds(&seeds, &pcfg.latent_shape)?;
        let adjusted = if pcfg.delta == 0.0 {
            initial.clone()
        } else {
            let v = tpw_velocity(&model, &initial, &cond, &pcfg.weight_schedule)?;
            blend_velocity(&initial, &v, pcfg.delta)?
        };
        let provenance = seminj_core::inject::Provenance {
            seeds: seeds.clone(),
            timesteps: pcfg.weight_schedule.timesteps().to_vec(),
            weights: pcfg.weight_schedule.weights().to_vec(),
            delta: pcfg.delta,
            model_kind: pcfg.model_kind,
        };
        (initial, adjusted, None, provenance)
    };
    write_rows(&dir.join("initial.csv"), &POINT_COLUMNS, &PointRow::from_flat(initial.data()))?;
    write_rows(&dir.join("adjusted.csv"), &POINT_COLUMNS, &PointRow::from_flat(adjusted.data()))?;
    if let Some(s) = &sample_out {
        write_rows(&dir.join("sample.csv"), &POINT_COLUMNS, &PointRow::from_flat(s.data()))?;
    }
    let mut prov = ProvenanceRecord::from_pipeline(command, cfg.seed, &provenance, cfg.pipeline.n_points, cfg.to_toml());
    stamp(&mut prov, &cfg, &ck, sha);
    prov.write(&dir.join("provenance.json"))?;
    done(&dir);
    Ok(())
}

#[derive(Serialize)]
struct CheckJson {
    name: &'static str,
    passed: bool,
    summary: String,
    values: serde_json::Map<String, serde_json::Value>,
}

#[derive(Serialize)]
struct VerifyJson {
    seed: u64,
    passed: bool,
    checks: Vec<CheckJson>,
}

fn cmd_verify(cfg: RunConfig, a: VerifyArgs) -> Result<()> {
    let ids = if a.check.is_empty() {
        CheckId::ALL.to_vec()
    } else {
        a.check.iter().map(|c| CheckId::parse(c)).collect::<Result<Vec<_>, _>>()?
    };
    let dir = prepare(&cfg, "verify", format!("{ids:?}").as_bytes())?;
    let results = run_checks(&ids, cfg.seed)?;
    let report = VerifyJson {
        seed: cfg.seed,
        passed: results.iter().all(|r| r.passed),
        checks: results
            .iter()
            .map(|r| CheckJson {
                name: r.id.name(),
                passed: r.passed,
                summary: r.summary.clone(),
                values: r.values.iter().map(|(k, v)| (k.clone(), serde_json::json!(v))).collect(),
            })
            .collect(),
    };
    write_json(&dir.join("verify.json"), &report)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        let width = results.iter().map(|r| r.id.name().len()).max().unwrap_or(0);
        for r in &results {
            println!("{:<width$}  {}  {}", r.id.name(), if r.passed { "PASS" } else { "FAIL" }, r.summary);
        }
        done(&dir);
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(ChecksFailed { failed, total: results.len() }.into());
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    shape: ShapeKind,
    n_erase: usize,
    delta: f64,
    center: f64,
}

#[derive(Serialize)]
struct ConditionSummary {
    condition: &'static str,
    median: f64,
    iqr: f64,
}

#[derive(Serialize)]
struct CellSummary {
    shape: &'static str,
    n_erase: usize,
    delta: f64,
    center: f64,
    conditions: Vec<ConditionSummary>,
    matched_below_mismatched: bool,
    erased_below_mismatched: bool,
    injected_below_mismatched: bool,
    gap_exceeds_matched_iqr: bool,
    untrained_warning: bool,
}

fn cell_protocol(cfg: &RunConfig, base: &ProtocolConfig, cell: &Cell) -> Result<ProtocolConfig> {
    Ok(ProtocolConfig {
        n_erase: cell.n_erase,
        delta: cell.delta,
        weight_schedule: cfg.weight_schedule(cfg.protocol.k_steps, cell.center)?,
        ..base.clone()
    })
}

fn cmd_sweep(mut cfg: RunConfig, a: SweepArgs) -> Result<()> {
    if let Some(r) = a.repeats {
        cfg.protocol.repeats = r;
    }
    if !a.n_erase.is_empty() {
        cfg.sweep.n_erase = a.n_erase.clone();
    }
    if !a.delta.is_empty() {
        cfg.sweep.delta = a.delta.clone();
    }
    if !a.center.is_empty() {
        cfg.sweep.center = a.center.clone();
    }
    let shapes = if a.shape.is_empty() {
        ShapeKind::ALL.to_vec()
    } else {
        a.shape.iter().map(|s| ShapeKind::parse(s)).collect::<Result<Vec<_>, _>>()?
    };
    let Loaded { ck, sha } = load_checkpoint(&a.checkpoint)?;
    let dir = prepare(&cfg, "sweep", format!("{sha}{shapes:?}").as_bytes())?;
    warn_untrained(&ck, cfg.train.overfit_threshold);
    let or_default = |v: &[f64], d: f64| if v.is_empty() { vec![d] } else { v.to_vec() };
    let n_grid = if cfg.sweep.n_erase.is_empty() { vec![cfg.protocol.n_erase] } else { cfg.sweep.n_erase.clone() };
    let d_grid = or_default(&cfg.sweep.delta, cfg.protocol.delta);
    let c_grid = or_default(&cfg.sweep.center, cfg.protocol.center);
    let mut cells = Vec::new();
    for &shape in &shapes {
        for &n_erase in &n_grid {
            for &delta in &d_grid {
                for &center in &c_grid {
                    cells.push(Cell { shape, n_erase, delta, center });
                }
            }
        }
    }
    let base = cfg.protocol()?;
    let banks = default_seed_banks();
    let jobs = a.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())).max(1);
    let eval = |cell: &Cell| -> Result<ExperimentReport> {
        let p = cell_protocol(&cfg, &base, cell)?;
        Ok(run_experiment(&ck.params, &banks, &cfg.shape(cell.shape)?, &p, Some(ck.final_mse))?)
    };
    let reports = run_pool(&cells, jobs, eval)?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (cell, rep) in cells.iter().zip(&reports) {
        for stats in &rep.conditions {
            for (repeat, (&chamfer, &fit)) in stats.chamfer.iter().zip(&stats.fit).enumerate() {
                rows.push(SweepRow {
                    shape: cell.shape.name().into(),
                    n_erase: cell.n_erase,
                    delta: cell.delta,
                    center: cell.center,
                    condition: stats.condition.name().into(),
                    repeat,
                    chamfer,
                    fit,
                });
            }
        }
        let o = rep.orderings();
        summary.push(CellSummary {
            shape: cell.shape.name(),
            n_erase: cell.n_erase,
            delta: cell.delta,
            center: cell.center,
            conditions: Condition::ALL
                .iter()
                .map(|&c| ConditionSummary { condition: c.name(), median: rep.stats(c).median, iqr: rep.stats(c).iqr })
                .collect(),
            matched_below_mismatched: o.matched_below_mismatched,
            erased_below_mismatched: o.erased_below_mismatched,
            injected_below_mismatched: o.injected_below_mismatched,
            gap_exceeds_matched_iqr: o.gap_exceeds_matched_iqr,
            untrained_warning: rep.untrained_warning,
        });
    }
    write_rows(&dir.join("sweep.csv"), &SWEEP_COLUMNS, &rows)?;
    write_json(&dir.join("summary.json"), &summary)?;
    done(&dir);
    Ok(())
}

/// Evaluates `f` on every item with up to `jobs` threads; results keep input order.
fn run_pool<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<Result<R>>> = (0..items.len()).map(|_| None).collect();
    let done = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|s| {
        for _ in 0..jobs.min(items.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                done.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    slots.into_iter().map(|r| r.expect("every cell evaluated")).collect()
}
