use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use seminj::checkpoint::Checkpoint;
use seminj::provenance::ProvenanceRecord;
use seminj::tables::{
    read_rows, DatasetRow, LossRow, PointRow, SweepRow, TrajectoryRow, DATASET_COLUMNS, LOSS_COLUMNS, POINT_COLUMNS,
    SWEEP_COLUMNS, TRAJECTORY_COLUMNS,
};
use seminj::RunConfig;
use seminj_core::metrics::{chamfer, plan_repeat, run_experiment, Condition, ProtocolConfig};
use seminj_core::toyflow::{default_seed_banks, reference_curve, ShapeKind};

fn seminj(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seminj"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(out: &Path, args: &[&str]) -> PathBuf {
    let o = seminj(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    PathBuf::from(stdout.lines().last().expect("run directory printed"))
}

const SMALL: [&str; 5] = ["train", "--epochs", "3", "--width", "8"];

fn small_checkpoint(out: &Path) -> PathBuf {
    run_ok(out, &SMALL).join("checkpoint.txt")
}

fn points(path: &Path) -> Vec<[f64; 2]> {
    read_rows::<PointRow>(path, &POINT_COLUMNS).unwrap().iter().map(|r| [r.x, r.y]).collect()
}

#[test]
fn train_writes_checkpoint_log_and_datasets() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = run_ok(tmp.path(), &["train", "--epochs", "1", "--width", "8"]);
    let log: Vec<LossRow> = read_rows(&dir.join("loss.csv"), &LOSS_COLUMNS).unwrap();
    assert_eq!(log.len(), 1);
    assert_eq!(log[0].epoch, 1);
    let ck = Checkpoint::load(&dir.join("checkpoint.txt")).unwrap();
    assert_eq!(ck.epochs, 1);
    assert_eq!(ck.params.config().width, 8);
    assert_eq!(ck.datasets.len(), 3);
    assert_eq!(RunConfig::parse(&ck.config).unwrap().train.epochs, 1);
    let rows: Vec<DatasetRow> = read_rows(&dir.join("datasets").join("circle_101.csv"), &DATASET_COLUMNS).unwrap();
    assert_eq!(rows.len(), 24 * 14);
    assert_eq!(std::fs::read_dir(dir.join("datasets")).unwrap().count(), 18);
}

#[test]
fn same_seed_gives_identical_checkpoint_bytes_in_separate_dirs() {
    let tmp = tempfile::tempdir().unwrap();
    let a = run_ok(tmp.path(), &SMALL);
    let b = run_ok(tmp.path(), &SMALL);
    assert_ne!(a, b, "runs never share a directory");
    assert_eq!(std::fs::read(a.join("checkpoint.txt")).unwrap(), std::fs::read(b.join("checkpoint.txt")).unwrap());
    let mut other = SMALL.to_vec();
    other.extend(["--seed", "9"]);
    let c = run_ok(tmp.path(), &other);
    assert_ne!(std::fs::read(a.join("checkpoint.txt")).unwrap(), std::fs::read(c.join("checkpoint.txt")).unwrap());
}

#[test]
fn pipeline_without_erasure_or_injection_is_standard_sampling() {
    let tmp = tempfile::tempdir().unwrap();
    let ck = small_checkpoint(tmp.path());
    let ck = ck.to_str().unwrap();
    let common = ["--checkpoint", ck, "--condition", "ellipse", "--slot", "2", "--seed", "11"];
    let sample = run_ok(tmp.path(), &[&["sample"][..], &common].concat());
    let pipe = run_ok(tmp.path(), &[&["pipeline", "--n-erase", "1", "--delta", "0"][..], &common].concat());
    assert_eq!(std::fs::read(sample.join("sample.csv")).unwrap(), std::fs::read(pipe.join("sample.csv")).unwrap());
    assert_eq!(std::fs::read(sample.join("latent.csv")).unwrap(), std::fs::read(pipe.join("initial.csv")).unwrap());

    let traj: Vec<TrajectoryRow> = read_rows(&sample.join("trajectory.csv"), &TRAJECTORY_COLUMNS).unwrap();
    assert_eq!(traj.len(), 16 * 24);
    let last: Vec<[f64; 2]> = traj[15 * 24..].iter().map(|r| [r.x, r.y]).collect();
    assert_eq!(last, points(&sample.join("sample.csv")));

    let prov = ProvenanceRecord::read(&pipe.join("provenance.json")).unwrap();
    assert_eq!(prov.seeds, vec![11]);
    assert_eq!(prov.delta, 0.0);
    let sha = seminj::outdir::sha256_hex(&std::fs::read(ck).unwrap());
    assert_eq!(prov.checkpoint_sha256.as_deref(), Some(sha.as_str()));
}

#[test]
fn pipeline_records_provenance_and_inject_matches_its_adjusted_latent() {
    let tmp = tempfile::tempdir().unwrap();
    let ck = small_checkpoint(tmp.path());
    let ck = ck.to_str().unwrap();
    let args = ["--checkpoint", ck, "--n-erase", "3", "--k-steps", "4", "--delta", "0.3", "--center", "800"];
    let pipe = run_ok(tmp.path(), &[&["pipeline"][..], &args].concat());
    let inj = run_ok(tmp.path(), &[&["inject"][..], &args].concat());
    for f in ["initial.csv", "adjusted.csv"] {
        assert_eq!(std::fs::read(pipe.join(f)).unwrap(), std::fs::read(inj.join(f)).unwrap(), "{f}");
    }
    assert!(!inj.join("sample.csv").exists());
    let prov = ProvenanceRecord::read(&pipe.join("provenance.json")).unwrap();
    assert_eq!(prov.seeds.len(), 3);
    assert_eq!(prov.timesteps.len(), 4);
    assert_eq!(prov.weights.len(), 4);
    assert_eq!(prov.delta, 0.3);
    assert_ne!(points(&pipe.join("initial.csv")), points(&pipe.join("adjusted.csv")));
}

#[test]
fn erased_pipeline_reproduces_the_protocol_score() {
    let tmp = tempfile::tempdir().unwrap();
    let ck_path = small_checkpoint(tmp.path());
    let ck = Checkpoint::load(&ck_path).unwrap();
    let banks = default_seed_banks();
    let shape = ShapeKind::Spiral.default_spec();
    let target = banks.get("spiral").unwrap();
    let others: Vec<u64> = banks.iter().filter(|(k, _)| *k != "spiral").flat_map(|(_, s)| s.to_vec()).collect();
    let r = 3;
    let plan = plan_repeat(target, &others, r, 10).unwrap();
    let seeds: Vec<String> = plan.erase_seeds.iter().map(u64::to_string).collect();
    let slot = plan.mismatched_slot.to_string();
    let dir = run_ok(
        tmp.path(),
        &["pipeline", "--checkpoint", ck_path.to_str().unwrap(), "--condition", "spiral", "--slot", &slot, "--seeds", &seeds.join(",")],
    );
    let reference = reference_curve(&shape, 512).unwrap();
    let via_cli = chamfer(&points(&dir.join("sample.csv")), &reference.points).unwrap();
    let cfg = ProtocolConfig { repeats: r + 1, ..ProtocolConfig::default() };
    let report = run_experiment(&ck.params, &banks, &shape, &cfg, Some(ck.final_mse)).unwrap();
    assert_eq!(via_cli, report.stats(Condition::Erased).chamfer[r]);
}

#[test]
fn erase_with_explicit_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let one = run_ok(tmp.path(), &["erase", "--seeds", "5", "--n-points", "7"]);
    let z = seminj_core::noise::sample_gaussian(5, &[7, 2]).unwrap();
    let flat: Vec<f64> = points(&one.join("latent.csv")).concat();
    assert_eq!(flat, z.data());
    let o = seminj(tmp.path(), &["erase", "--seeds", "1,2", "--n-erase", "3"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_filters_and_reports_json() {
    let tmp = tempfile::tempdir().unwrap();
    let o = seminj(tmp.path(), &["verify", "--check", "snr", "--json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let checks = v["checks"].as_array().unwrap();
    assert_eq!(checks.len(), 1);
    assert_eq!(checks[0]["name"], "snr");
    assert_eq!(checks[0]["passed"], true);
    assert_eq!(v["passed"], true);
}

#[test]
fn sweep_cell_equals_run_experiment() {
    let tmp = tempfile::tempdir().unwrap();
    let ck_path = small_checkpoint(tmp.path());
    let dir = run_ok(
        tmp.path(),
        &[
            "sweep", "--checkpoint", ck_path.to_str().unwrap(), "--shape", "ellipse", "--n-erase", "4", "--delta", "0.2",
            "--center", "1000", "--repeats", "3",
        ],
    );
    let header = std::fs::read_to_string(dir.join("sweep.csv")).unwrap();
    assert_eq!(header.lines().next().unwrap(), "shape,n_erase,delta,center,condition,repeat,chamfer,fit");
    let rows: Vec<SweepRow> = read_rows(&dir.join("sweep.csv"), &SWEEP_COLUMNS).unwrap();
    assert_eq!(rows.len(), 4 * 3);
    let ck = Checkpoint::load(&ck_path).unwrap();
    let cfg = ProtocolConfig { repeats: 3, n_erase: 4, delta: 0.2, ..ProtocolConfig::default() };
    let report = run_experiment(&ck.params, &default_seed_banks(), &ShapeKind::Ellipse.default_spec(), &cfg, Some(ck.final_mse)).unwrap();
    for row in &rows {
        let stats = report.stats(Condition::parse(&row.condition).unwrap());
        assert_eq!(row.chamfer, stats.chamfer[row.repeat]);
        assert_eq!(row.fit, stats.fit[row.repeat]);
        assert_eq!((row.shape.as_str(), row.n_erase, row.delta, row.center), ("ellipse", 4, 0.2, 1000.0));
    }
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary[0]["untrained_warning"], true);
}

#[test]
fn sweep_grid_is_long_format() {
    let tmp = tempfile::tempdir().unwrap();
    let ck_path = small_checkpoint(tmp.path());
    let dir = run_ok(
        tmp.path(),
        &["sweep", "--checkpoint", ck_path.to_str().unwrap(), "--n-erase", "1,2", "--delta", "0,0.1", "--repeats", "2", "--jobs", "3"],
    );
    let rows: Vec<SweepRow> = read_rows(&dir.join("sweep.csv"), &SWEEP_COLUMNS).unwrap();
    assert_eq!(rows.len(), 3 * 2 * 2 * 4 * 2);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(seminj(tmp.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(seminj(tmp.path(), &["verify", "--check", "nope"]).status.code(), Some(2));
    assert_eq!(seminj(tmp.path(), &["train", "--epochs", "0"]).status.code(), Some(2));
    assert_eq!(seminj(tmp.path(), &["train", "--epochs", "2", "--width", "8", "--lr", "1e300"]).status.code(), Some(3));
    let bad = tmp.path().join("bad.txt");
    std::fs::write(&bad, "seminj-checkpoint 1\nnet rff_features 8\n").unwrap();
    let o = seminj(tmp.path(), &["sample", "--checkpoint", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("byte"));
}

#[test]
fn config_file_values_yield_to_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, "seed = 4\n[net]\nwidth = 8\n[train]\nepochs = 2\n").unwrap();
    let dir = run_ok(tmp.path(), &["--config", cfg.to_str().unwrap(), "train", "--epochs", "1"]);
    let used = RunConfig::load(&dir.join("config.toml")).unwrap();
    assert_eq!((used.seed, used.net.width, used.train.epochs), (4, 8, 1));
    std::fs::write(&cfg, "[train]\nepochz = 2\n").unwrap();
    assert_eq!(seminj(tmp.path(), &["--config", cfg.to_str().unwrap(), "train"]).status.code(), Some(2));
}
