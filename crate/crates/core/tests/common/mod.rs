#![allow(dead_code)]

use std::path::{Path, PathBuf};

use clairvoyance::features::Scope;
use clairvoyance::geo::GeoPoint;
use clairvoyance::ingest::{TrackPoint, Trajectory, TripOD};
use rand::Rng;

/// Small city that runs the whole pipeline in a few seconds.
pub const SMALL_CONFIG: &str = "\
# small test city
data_dir = data
work_dir = work
seed = 11
bbox = 22.10, 113.30, 22.19, 113.39
routes = 4
stations_per_route = 8
taxis = 40
days = 8
background_pois = 40
epochs = 4
pretrain_epochs = 2
emission_epochs = 4
hidden = 12, 12, 12, 12
pnn_hidden = 8
k = 3
";

pub fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("clairvoyance.conf");
    std::fs::write(&path, body).unwrap();
    path
}

pub fn run_cli(args: &[&str]) -> i32 {
    let mut argv = vec!["clairvoyance".to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    clairvoyance::cli::main_with_args(argv)
}

/// Runs every stage in order and returns the first non-zero exit code.
pub fn run_all(config: &Path) -> i32 {
    let c = config.to_str().unwrap();
    for stage in ["generate", "featurize", "label-emission", "train", "predict", "recommend"] {
        let code = run_cli(&["--config", c, stage]);
        if code != 0 {
            return code;
        }
    }
    0
}

/// Closed lat/lon rectangle, used as a test scope.
#[derive(Debug, Clone, Copy)]
pub struct LatLonBox {
    pub lat0: f64,
    pub lon0: f64,
    pub lat1: f64,
    pub lon1: f64,
}

impl Scope for LatLonBox {
    fn contains(&self, p: &GeoPoint) -> bool {
        p.lat >= self.lat0 && p.lat <= self.lat1 && p.lon >= self.lon0 && p.lon <= self.lon1
    }
}

pub const AREA: LatLonBox = LatLonBox { lat0: 22.0, lon0: 113.0, lat1: 22.1, lon1: 113.1 };

pub fn random_point<R: Rng>(rng: &mut R) -> GeoPoint {
    GeoPoint { lat: rng.random_range(21.98..22.12), lon: rng.random_range(112.98..113.12) }
}

pub fn random_scope<R: Rng>(rng: &mut R) -> LatLonBox {
    let (a, b): (f64, f64) = (rng.random_range(22.0..22.1), rng.random_range(22.0..22.1));
    let (c, d): (f64, f64) = (rng.random_range(113.0..113.1), rng.random_range(113.0..113.1));
    LatLonBox { lat0: a.min(b), lat1: a.max(b), lon0: c.min(d), lon1: c.max(d) }
}

/// Random trajectories with increasing timestamps in `[0, 4000)`.
/// Vehicle ids repeat so that one vehicle can own several trajectories.
pub fn random_trajectories<R: Rng>(rng: &mut R) -> Vec<Trajectory> {
    let n = rng.random_range(1..8);
    (0..n)
        .map(|_| {
            let len = rng.random_range(0..25);
            let mut t = rng.random_range(0..400);
            let mut loc = random_point(rng);
            let points = (0..len)
                .map(|_| {
                    t += rng.random_range(1..200);
                    if rng.random_bool(0.7) {
                        loc = GeoPoint { lat: loc.lat + rng.random_range(-0.01..0.01), lon: loc.lon + rng.random_range(-0.01..0.01) };
                    } else {
                        loc = random_point(rng);
                    }
                    TrackPoint { loc, t, speed_kmh: rng.random_range(0.0..80.0) }
                })
                .collect();
            Trajectory { vehicle_id: format!("v{}", rng.random_range(0..4)), points }
        })
        .collect()
}

pub fn random_trips<R: Rng>(rng: &mut R) -> Vec<TripOD> {
    let n = rng.random_range(0..40);
    (0..n)
        .map(|_| {
            let origin_t = rng.random_range(0..4000);
            TripOD {
                origin: random_point(rng),
                origin_t,
                dest: random_point(rng),
                dest_t: origin_t + rng.random_range(0..1500),
            }
        })
        .collect()
}
