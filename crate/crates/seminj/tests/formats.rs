use proptest::prelude::*;

use seminj::checkpoint::{Checkpoint, CheckpointError};
use seminj::provenance::ProvenanceRecord;
use seminj::tables::{read_rows, write_rows, PointRow, ReportRow, POINT_COLUMNS, REPORT_COLUMNS};
use seminj_core::net::{forward, ConditionVector, ModelParams, NetConfig};
use seminj_core::sampler::VelocityConvention;
use seminj_core::toyflow::ShapeKind;

fn checkpoint(width: usize, blocks: usize, seed: u64) -> Checkpoint {
    let net = NetConfig { rff_features: 6, width, blocks, embed_dim: 2, ..NetConfig::default() };
    Checkpoint {
        params: ModelParams::init(net, seed).unwrap(),
        convention: VelocityConvention::Subtract,
        epochs: 0,
        initial_mse: 1.0 / 3.0,
        final_mse: 5e-324,
        datasets: vec![("circle".into(), vec![1, 2, 3]), ("spiral".into(), vec![u64::MAX])],
        config: "seed = 1\n# a comment with \"quotes\"\n".into(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn checkpoint_file_round_trip(width in 1usize..6, blocks in 1usize..4, seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.txt");
        let ck = checkpoint(width, blocks, seed);
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        prop_assert_eq!(&back, &ck);
        let cond = ConditionVector::new(&ShapeKind::Spiral.default_spec(), 4);
        let (a, b) = (forward(&ck.params, [0.3, -1.1], 0.4, &cond).unwrap(), forward(&back.params, [0.3, -1.1], 0.4, &cond).unwrap());
        prop_assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
        let again = dir.path().join("ck2.txt");
        back.save(&again).unwrap();
        prop_assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }

    #[test]
    fn any_truncation_is_a_format_error(cut in 0usize..2000) {
        let text = checkpoint(3, 2, 7).to_text();
        let cut = cut.min(text.len() - 1);
        let is_format = matches!(Checkpoint::parse(&text[..cut]), Err(CheckpointError::Format { .. }));
        prop_assert!(is_format);
    }

    #[test]
    fn point_csv_round_trip(data in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 0..40)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let even = &data[..data.len() / 2 * 2];
        let rows = PointRow::from_flat(even);
        write_rows(&path, &POINT_COLUMNS, &rows).unwrap();
        let back: Vec<PointRow> = read_rows(&path, &POINT_COLUMNS).unwrap();
        prop_assert_eq!(back, rows);
    }
}

#[test]
fn report_csv_rejects_wrong_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    let rows = vec![ReportRow { shape: "circle".into(), condition: "matched".into(), repeat: 0, chamfer: 0.25, fit: 0.75 }];
    write_rows(&path, &REPORT_COLUMNS, &rows).unwrap();
    assert_eq!(read_rows::<ReportRow>(&path, &REPORT_COLUMNS).unwrap(), rows);
    assert!(read_rows::<ReportRow>(&path, &POINT_COLUMNS).is_err());
}

#[test]
fn provenance_json_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("provenance.json");
    let rec = ProvenanceRecord {
        command: "pipeline".into(),
        master_seed: 3,
        seeds: vec![3, 99],
        timesteps: vec![1000.0, 500.0],
        weights: vec![0.75, 0.25],
        delta: 0.1,
        model_kind: "velocity-flow".into(),
        shape: Some("circle".into()),
        slot: Some(1),
        n_points: 24,
        checkpoint_sha256: Some("00".repeat(32)),
        convention: Some("add".into()),
        heun_steps: Some(15),
        config: "seed = 3\n".into(),
    };
    rec.write(&path).unwrap();
    assert_eq!(ProvenanceRecord::read(&path).unwrap(), rec);
}
