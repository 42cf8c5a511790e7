use std::collections::BTreeSet;

use clairvoyance::features::FeatureRow;
use clairvoyance::ingest::{parse_dataset, DatasetKind};
use clairvoyance::pipeline::{
    featurize_synthetic, split_dataset, train_demand, train_emission, two_task_forecast, PipelineConfig, RowKinds,
    Split, SplitFractions,
};
use clairvoyance::synthcity::CityModel;

fn small_city() -> CityModel {
    CityModel { routes: 4, stations_per_route: 8, taxis: 40, days: 8, background_pois: 40, ..CityModel::default() }
}

fn quick_config() -> PipelineConfig {
    let mut cfg = PipelineConfig { hidden: vec![12; 4], pnn_hidden: 8, ..PipelineConfig::default() };
    cfg.demand.epochs = 4;
    cfg.demand.pretrain_epochs = 2;
    cfg.emission.epochs = 4;
    cfg
}

fn rows() -> (Vec<FeatureRow>, Vec<FeatureRow>) {
    featurize_synthetic(&small_city(), 0.5, RowKinds { route: true, grid: true }).unwrap()
}

#[test]
fn generated_files_parse_without_rejections() {
    let dir = tempfile::tempdir().unwrap();
    let summary = small_city().generate_to_dir(dir.path()).unwrap();
    assert!(summary.taxi_rows > 0 && summary.ic_rows > 0);
    for kind in [DatasetKind::Taxi, DatasetKind::Bus, DatasetKind::Ic, DatasetKind::Poi, DatasetKind::Weather] {
        let file = std::fs::File::open(dir.path().join(kind.file_name())).unwrap();
        let parsed = parse_dataset(kind, file).unwrap();
        assert_eq!(parsed.report().rejected_count(), 0, "{}", kind.file_name());
        assert!(parsed.report().total_rows > 0);
    }
}

#[test]
fn splits_are_disjoint_complete_and_ordered_in_time() {
    let (route_rows, _) = rows();
    let n = route_rows.len();
    let ds = split_dataset(route_rows, SplitFractions::default()).unwrap();
    let mut seen = BTreeSet::new();
    for s in [Split::Train, Split::Val, Split::Test] {
        for i in ds.indices(s) {
            assert!(seen.insert(i), "row {i} in two splits");
        }
    }
    assert_eq!(seen.len(), n);
    let (train, val, test) = (ds.days(Split::Train), ds.days(Split::Val), ds.days(Split::Test));
    assert_eq!((train.len(), val.len(), test.len()), (6, 1, 1));
    assert!(train.last() < val.first() && val.last() < test.first());
}

#[test]
fn scaling_ignores_test_rows_and_training_is_reproducible() {
    let (route_rows, grid_rows) = rows();
    let cfg = quick_config();
    let ds = split_dataset(route_rows, cfg.fractions).unwrap();
    let (model, _) = train_demand(&ds, &cfg).unwrap();
    let (again, _) = train_demand(&ds, &cfg).unwrap();
    assert_eq!(model.to_bytes(), again.to_bytes());

    let mut tampered = ds.clone();
    for i in tampered.indices(Split::Test) {
        tampered.rows[i].values.iter_mut().for_each(|v| *v = *v * 50.0 + 1e4);
    }
    let (other, _) = train_demand(&tampered, &cfg).unwrap();
    assert_eq!(model.to_bytes(), other.to_bytes());

    let gds = split_dataset(grid_rows, cfg.fractions).unwrap();
    let (e1, _) = train_emission(&gds, &cfg).unwrap();
    let (e2, _) = train_emission(&gds, &cfg).unwrap();
    assert_eq!(e1.to_bytes(), e2.to_bytes());
}

#[test]
fn forecast_probabilities_are_distributions_and_repeatable() {
    let (route_rows, grid_rows) = rows();
    let cfg = quick_config();
    let window = route_rows.last().unwrap().window;
    let dr = split_dataset(route_rows.clone(), cfg.fractions).unwrap();
    let dg = split_dataset(grid_rows.clone(), cfg.fractions).unwrap();
    let (a, _, _) = two_task_forecast(&dr, &dg, &cfg, &route_rows, &grid_rows, window).unwrap();
    let (b, _, _) = two_task_forecast(&dr, &dg, &cfg, &route_rows, &grid_rows, window).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.window, window);
    assert_eq!(a.routes.len(), small_city().routes);
    for f in a.routes.values() {
        assert!(f.probs.iter().all(|p| *p >= 0.0));
        assert!((f.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    assert!(!a.cells.is_empty());
}
