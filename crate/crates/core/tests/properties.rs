mod common;

use std::collections::BTreeMap;

use clairvoyance::emission::{grid_emission_labels, top_down, EmissionCoefficients, MileageTable};
use clairvoyance::features::{pearson_cc, route_features, traffic_volume, BinEdges, CategorySet, FeatureInputs, ROUTE_FEATURE_DIM};
use clairvoyance::geo::{grids_crossed, partition_city, AffectingRegion, BusRoute, GeoPoint, REGIONS_PER_ROUTE};
use clairvoyance::ingest::{
    extract_all_trips, extract_trips, parse_csv, write_csv, TaxiRecord, TimeWindow, TrackPoint, Trajectory, WeatherRecord,
};
use clairvoyance::neural::{argmax, softmax_rows, DenoisingAutoencoder};
use clairvoyance::recommend::{rank_routes, recommend_topk};
use common::{random_trajectories, LatLonBox, AREA};
use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn point() -> impl Strategy<Value = GeoPoint> {
    (21.9..22.2f64, 112.9..113.2f64).prop_map(|(lat, lon)| GeoPoint { lat, lon })
}

fn taxi_record() -> impl Strategy<Value = TaxiRecord> {
    (0u8..4, 1_430_000_000i64..1_430_090_000, point(), 0.0..120.0f64, 0.0..360.0f64, any::<bool>()).prop_map(
        |(id, t, loc, speed_kmh, direction_deg, occupied)| TaxiRecord {
            taxi_id: format!("T{id}"),
            t,
            loc,
            speed_kmh,
            direction_deg,
            occupied,
        },
    )
}

fn reparse(records: &[TaxiRecord]) -> Vec<TaxiRecord> {
    let mut buf = Vec::new();
    write_csv(records, &mut buf).unwrap();
    parse_csv::<TaxiRecord, _>(buf.as_slice()).unwrap().records
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn every_box_point_lies_in_exactly_one_cell(
        lat_span in 0.01..0.5f64,
        lon_span in 0.01..0.5f64,
        cell_km in 0.5..8.0f64,
        u in 0.0..=1.0f64,
        v in 0.0..=1.0f64,
    ) {
        let sw = GeoPoint { lat: 22.0, lon: 113.0 };
        let ne = GeoPoint { lat: 22.0 + lat_span, lon: 113.0 + lon_span };
        let grid = partition_city(sw, ne, cell_km).unwrap();
        let p = GeoPoint { lat: sw.lat + u * lat_span, lon: sw.lon + v * lon_span };
        let cell = grid.locate_cell(&p);
        prop_assert!(cell.is_some());
        prop_assert_eq!(cell, grid.locate_cell(&p));
        let (x, y) = grid.project(&p);
        let holders = grid
            .cells()
            .filter(|&c| {
                let (x0, y0, x1, y1) = grid.cell_rect_km(c);
                let right = x < x1 || (c.col + 1 == grid.cols && x <= x1);
                let top = y < y1 || (c.row + 1 == grid.rows && y <= y1);
                x >= x0 && y >= y0 && right && top
            })
            .collect::<Vec<_>>();
        prop_assert_eq!(holders, vec![cell.unwrap()]);
    }

    #[test]
    fn region_membership_is_symmetric_about_the_center(c in point(), dlat in -0.01..0.01f64, dlon in -0.01..0.01f64, side in 0.1..2.0f64) {
        let region = AffectingRegion::new(c, side).unwrap();
        let a = GeoPoint { lat: c.lat + dlat, lon: c.lon + dlon };
        let b = GeoPoint { lat: c.lat - dlat, lon: c.lon - dlon };
        prop_assert_eq!(region.contains(&a), region.contains(&b));
    }

    #[test]
    fn crossed_cells_include_station_cells(stations in prop::collection::vec(point(), 2..10), cell_km in 0.5..5.0f64) {
        let grid = partition_city(GeoPoint { lat: 22.0, lon: 113.0 }, GeoPoint { lat: 22.1, lon: 113.1 }, cell_km).unwrap();
        let route = BusRoute { route_id: "r".into(), stations: stations.clone(), regions: Vec::new() };
        let crossed = grids_crossed(&route, &grid);
        for s in &stations {
            if let Some(c) = grid.locate_cell(s) {
                prop_assert!(crossed.contains(&c));
            }
        }
    }

    #[test]
    fn sampled_regions_sit_on_stations(stations in prop::collection::vec(point(), 2..40), seed in any::<u64>()) {
        let route = BusRoute::with_seeded_regions("R1", stations.clone(), 0.5, REGIONS_PER_ROUTE, seed).unwrap();
        prop_assert_eq!(route.regions.len(), stations.len().min(REGIONS_PER_ROUTE));
        for r in &route.regions {
            prop_assert!(stations.contains(&r.center));
        }
        let again = BusRoute::with_seeded_regions("R1", stations, 0.5, REGIONS_PER_ROUTE, seed).unwrap();
        prop_assert_eq!(route, again);
    }

    #[test]
    fn taxi_ingestion_is_idempotent(records in prop::collection::vec(taxi_record(), 0..60)) {
        let once = reparse(&records);
        prop_assert_eq!(reparse(&once), once.clone());
        for run in once.chunk_by(|a, b| a.taxi_id == b.taxi_id) {
            prop_assert!(run.windows(2).all(|w| w[0].t < w[1].t));
        }
    }

    #[test]
    fn trips_are_ordered_and_disjoint(records in prop::collection::vec(taxi_record(), 0..80)) {
        let records = reparse(&records);
        let mut total = 0;
        for run in records.chunk_by(|a, b| a.taxi_id == b.taxi_id) {
            let trips = extract_trips(run);
            total += trips.len();
            prop_assert!(trips.iter().all(|t| t.origin_t < t.dest_t));
            prop_assert!(trips.windows(2).all(|w| w[0].dest_t < w[1].origin_t));
        }
        prop_assert_eq!(extract_all_trips(&records).len(), total);
    }

    #[test]
    fn adding_an_inside_point_never_lowers_volume(seed in any::<u64>(), at in point(), t in 0i64..4000, who in 0usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trajs = random_trajectories(&mut rng);
        let w = TimeWindow::new(500, 3000);
        let before = traffic_volume(&trajs, &AREA, w);
        let p = TrackPoint { loc: at, t, speed_kmh: 20.0 };
        if who < trajs.len() {
            trajs[who].points.push(p);
        } else {
            trajs.push(Trajectory { vehicle_id: format!("new{who}"), points: vec![p] });
        }
        prop_assert!(traffic_volume(&trajs, &AREA, w) >= before);
    }

    #[test]
    fn pearson_is_bounded_and_affine_invariant(
        xy in prop::collection::vec((-100.0..100.0f64, -100.0..100.0f64), 3..40),
        a in 0.01..100.0f64,
        b in -1000.0..1000.0f64,
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
        if let Ok(r) = pearson_cc(&x, &y) {
            prop_assert!(r.abs() <= 1.0);
            let xt: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let yt: Vec<f64> = y.iter().map(|v| a * v - b).collect();
            prop_assert!((pearson_cc(&xt, &y).unwrap() - r).abs() < 1e-9);
            prop_assert!((pearson_cc(&x, &yt).unwrap() - r).abs() < 1e-9);
        }
    }

    #[test]
    fn bins_are_monotone(a in 0u64..2000, b in 0u64..2000) {
        let edges = BinEdges::default();
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(edges.class_of(lo) <= edges.class_of(hi));
        prop_assert!(edges.class_of(hi) < edges.class_count());
    }

    #[test]
    fn top_down_doubles_with_each_factor(
        kg in 0.5..4.0f64, l in 0.01..0.5f64, n in 0.0..1000.0f64, km in 0.0..500.0f64, which in 0usize..4,
    ) {
        let run = |kg: f64, l: f64, n: f64, km: f64| {
            let mut c = EmissionCoefficients::default();
            c.insert("bus", "diesel", kg, l).unwrap();
            let mut m = MileageTable::default();
            m.insert("bus", "diesel", n, km);
            top_down(&c, &m).unwrap()
        };
        let base = run(kg, l, n, km);
        let doubled = match which {
            0 => run(2.0 * kg, l, n, km),
            1 => run(kg, 2.0 * l, n, km),
            2 => run(kg, l, 2.0 * n, km),
            _ => run(kg, l, n, 2.0 * km),
        };
        prop_assert_eq!(doubled, 2.0 * base);
    }

    #[test]
    fn emission_labels_are_non_negative(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trajs = random_trajectories(&mut rng);
        let grid = partition_city(GeoPoint { lat: 22.0, lon: 113.0 }, GeoPoint { lat: 22.1, lon: 113.1 }, 2.0).unwrap();
        let labels = grid_emission_labels(&trajs, &grid, TimeWindow::new(0, 5000), &EmissionCoefficients::defaults()).unwrap();
        prop_assert_eq!(labels.len(), grid.cell_count());
        prop_assert!(labels.values().all(|&v| v >= 0.0));
    }

    #[test]
    fn softmax_rows_are_distributions(logits in prop::collection::vec(-300.0..300.0f64, 8), shift in -500.0..500.0f64) {
        let mut p = Array2::from_shape_vec((1, 8), logits.clone()).unwrap();
        softmax_rows(&mut p);
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        prop_assert!((p.sum() - 1.0).abs() <= 1e-12);
        let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
        let mut q = Array2::from_shape_vec((1, 8), shifted).unwrap();
        softmax_rows(&mut q);
        prop_assert_eq!(argmax(p.as_slice().unwrap()), argmax(q.as_slice().unwrap()));
    }

    #[test]
    fn topk_is_a_prefix_of_the_ranking(values in prop::collection::vec((0.0..50.0f64, 0.0..50.0f64), 1..20), k in 1usize..25) {
        let mu: BTreeMap<String, f64> = values.iter().enumerate().map(|(i, v)| (format!("R{i:02}"), v.0)).collect();
        let theta: BTreeMap<String, f64> = values.iter().enumerate().map(|(i, v)| (format!("R{i:02}"), v.1)).collect();
        let full = rank_routes(&mu, &theta).unwrap().routes;
        let top = recommend_topk(&mu, &theta, k).unwrap().routes;
        let longer = recommend_topk(&mu, &theta, k + 1).unwrap().routes;
        prop_assert_eq!(&top[..], &full[..top.len()]);
        prop_assert_eq!(&top[..], &longer[..top.len()]);
        let floor = top.iter().map(|r| r.score).fold(f64::INFINITY, f64::min);
        prop_assert!(full[top.len()..].iter().all(|r| r.score <= floor));
        for r in &full {
            prop_assert!((0.0..=1.0).contains(&r.mu_norm) && (0.0..=1.0).contains(&r.theta_norm));
            prop_assert!((0.0..=2.0).contains(&r.score));
        }
    }
}

#[test]
fn route_features_are_pure_and_fixed_width() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let trajs = random_trajectories(&mut rng);
    let stations: Vec<GeoPoint> = (0..20).map(|_| common::random_point(&mut rng)).collect();
    let route = BusRoute::with_seeded_regions("R7", stations, 0.5, REGIONS_PER_ROUTE, 1).unwrap();
    let weather = WeatherRecord {
        date: chrono::NaiveDate::from_ymd_opt(2015, 7, 1).unwrap(),
        temp_high_c: 31.0,
        temp_low_c: 25.0,
        condition: 3,
    };
    let categories = CategorySet::reference();
    let inputs = FeatureInputs {
        trajectories: &trajs,
        trips: &[],
        pois: &[],
        weather: &weather,
        categories: &categories,
        window: TimeWindow::new(0, 4000),
    };
    let a = route_features(&route, &inputs).unwrap();
    let b = route_features(&route, &inputs).unwrap();
    assert_eq!(a.len(), ROUTE_FEATURE_DIM);
    assert_eq!(ROUTE_FEATURE_DIM, 217);
    assert!(a.iter().all(|v| v.is_finite()));
    assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn decoder_reads_the_encoder_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut dae = DenoisingAutoencoder::new(6, 4, 0.2, &mut rng);
    let x = Array2::from_shape_fn((20, 6), |(i, j)| ((i * 7 + j * 3) % 10) as f64 / 10.0);
    let trace = dae.train(x.view(), 15, 0.5, 4, &mut rng).unwrap();
    assert!(trace.iter().all(|v| v.is_finite()));
    assert!(trace.last().unwrap() <= trace.first().unwrap());

    let h = dae.encode(x.view());
    let mut expect = h.dot(&dae.encoder.weights) + &dae.decoder_bias;
    expect.mapv_inplace(clairvoyance::neural::sigmoid);
    assert_eq!(dae.decode(h.view()), expect);

    dae.encoder.weights[[1, 2]] += 0.25;
    let moved = dae.decode(h.view());
    assert_ne!(moved, expect);
}

#[test]
fn small_scope_sanity() {
    let s = LatLonBox { lat0: 22.0, lon0: 113.0, lat1: 22.0, lon1: 113.0 };
    let trajs = vec![Trajectory {
        vehicle_id: "a".into(),
        points: vec![TrackPoint { loc: GeoPoint { lat: 22.0, lon: 113.0 }, t: 5, speed_kmh: 1.0 }],
    }];
    assert_eq!(traffic_volume(&trajs, &s, TimeWindow::new(0, 10)), 1);
    assert_eq!(traffic_volume(&trajs, &s, TimeWindow::new(0, 5)), 0);
}
