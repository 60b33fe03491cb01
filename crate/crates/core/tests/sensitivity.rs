use flexq_core::format::{write_file, FlxqObject};
use flexq_core::sensitivity::fixtures::{glu_fixture, GluFixtureOptions};
use flexq_core::sensitivity::{assign_policy, layer_error, load_dump_dir, rank_layers, rank_layers_on, write_dump_dir};
use flexq_core::{quantize, BitPolicy, Error, FloatTensor, LayerKind};
use proptest::prelude::*;

#[test]
fn dump_directory_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let dumps = glu_fixture(7, &GluFixtureOptions::default()).unwrap();
    write_dump_dir(dir.path(), &dumps).unwrap();
    assert_eq!(load_dump_dir(dir.path()).unwrap(), dumps);
}

#[test]
fn non_float_tensor_in_manifest_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let dumps = glu_fixture(7, &GluFixtureOptions::default()).unwrap();
    let entries = write_dump_dir(dir.path(), &dumps[..1]).unwrap();
    let q = quantize(dumps[0].weight(), 6, 128).unwrap();
    write_file(dir.path().join(&entries[0].weight_file), &FlxqObject::Quant(q)).unwrap();
    assert!(matches!(load_dump_dir(dir.path()), Err(Error::InvalidInput(_))));
}

#[test]
fn sequential_and_parallel_reports_match() {
    let dumps = glu_fixture(8, &GluFixtureOptions::default()).unwrap();
    assert_eq!(rank_layers_on(&dumps, 6, 6, 128, 1).unwrap(), rank_layers(&dumps, 6, 6, 128).unwrap());
}

#[test]
fn budget_one_reproduces_default_policy() {
    let dumps = glu_fixture(9, &GluFixtureOptions::default()).unwrap();
    let report = rank_layers(&dumps, 6, 6, 128).unwrap();
    let policy = assign_policy(&report, 8, 1).unwrap();
    let default = BitPolicy::flexq_default();
    for d in &dumps {
        assert_eq!(
            policy.for_layer(&d.layer_name, d.layer_kind).unwrap(),
            default.for_layer(&d.layer_name, d.layer_kind).unwrap()
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn outlier_channel_never_raises_sqnr(seed in 0u64..10_000, channel in 0usize..256, c in 10.0f32..100.0) {
        let dumps = glu_fixture(seed, &GluFixtureOptions::default()).unwrap();
        let d = dumps.iter().find(|d| d.layer_kind == LayerKind::GateProj).unwrap();
        let base = layer_error(d, 6, 6, 128).unwrap().sqnr_db;
        let x = d.activations();
        let spiked = FloatTensor::from_fn(x.rows(), x.cols(), |r, k| x.get(r, k) * if k == channel { c } else { 1.0 });
        let spiked = flexq_core::sensitivity::LayerDump::new("s", d.layer_kind, d.weight().clone(), spiked).unwrap();
        prop_assert!(layer_error(&spiked, 6, 6, 128).unwrap().sqnr_db <= base);
    }

    #[test]
    fn more_activation_bits_never_hurt(seed in 0u64..10_000) {
        for d in glu_fixture(seed, &GluFixtureOptions::default()).unwrap() {
            let a6 = layer_error(&d, 6, 6, 128).unwrap().sqnr_db;
            let a8 = layer_error(&d, 6, 8, 128).unwrap().sqnr_db;
            prop_assert!(a8 >= a6, "{}: {a8} < {a6}", d.layer_name);
        }
    }

    #[test]
    fn ranking_is_a_permutation(seed in 0u64..10_000) {
        let dumps = glu_fixture(seed, &GluFixtureOptions::default()).unwrap();
        let report = rank_layers(&dumps, 6, 6, 128).unwrap();
        let mut names = report.ranking.clone();
        names.sort();
        let mut expect: Vec<_> = dumps.iter().map(|d| d.layer_name.clone()).collect();
        expect.sort();
        prop_assert_eq!(names, expect);
        prop_assert!(report.layers.iter().all(|l| l.sqnr_db.is_finite()));
    }
}
