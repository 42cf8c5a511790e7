//! Seeded synthetic city producing the five source datasets plus a ground
//! truth sidecar.
//!
//! Bus routes wander through the inner part of the bounding box. Stations
//! carry clusters of POIs whose commute and leisure categories drive a
//! Poisson boarding process shaped by hour of day and weather. Taxis shuttle
//! between stations, picking up and dropping off passengers, and report GPS
//! fixes at a fixed interval. Every day is generated from its own derived
//! seed, so days can be produced in parallel without changing the output.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Poisson};
use rayon::prelude::*;
use thiserror::Error;

use crate::emission::EmissionCoefficients;
use crate::geo::{haversine_km, partition_city, CellId, GeoPoint, GridIndex};
use crate::ingest::{
    format_timestamp, BusRecord, CsvRecord, DatasetKind, IcCardRecord, PoiRecord, TaxiRecord, TimeWindow, Timestamp,
    WeatherRecord, POI_CATEGORIES,
};

/// Categories whose POIs generate commuting trips.
pub const COMMUTE_CATEGORIES: [u8; 3] = [7, 4, 2];
/// Categories whose POIs generate leisure trips.
pub const LEISURE_CATEGORIES: [u8; 5] = [3, 12, 10, 5, 1];
/// Categories present at stations but unrelated to demand.
pub const NOISE_CATEGORIES: [u8; 4] = [6, 8, 9, 11];

pub const TRUTH_FILE: &str = "truth.csv";
pub const COEFFICIENTS_FILE: &str = "coefficients.csv";

const COMMUTE_PROFILE: [f64; 24] = [
    0.05, 0.03, 0.02, 0.02, 0.05, 0.15, 0.45, 0.85, 1.00, 0.70, 0.45, 0.40, 0.35, 0.40, 0.40, 0.45, 0.60, 0.85, 0.90, 0.60,
    0.35, 0.20, 0.12, 0.08,
];
const LEISURE_PROFILE: [f64; 24] = [
    0.10, 0.05, 0.03, 0.02, 0.02, 0.03, 0.05, 0.10, 0.15, 0.30, 0.50, 0.65, 0.70, 0.65, 0.60, 0.60, 0.55, 0.50, 0.50, 0.70,
    0.90, 1.00, 0.80, 0.40,
];
/// Fraction of the taxi fleet on the road.
const TAXI_ACTIVE: [f64; 24] = [
    0.15, 0.10, 0.10, 0.10, 0.10, 0.20, 0.40, 0.65, 0.75, 0.70, 0.60, 0.55, 0.50, 0.55, 0.60, 0.60, 0.70, 0.90, 1.00, 0.75,
    0.45, 0.35, 0.30, 0.20,
];
/// Mean taxi cruising speed, km/h.
const TAXI_SPEED: [f64; 24] = [
    45.0, 45.0, 45.0, 45.0, 45.0, 42.0, 35.0, 26.0, 23.0, 25.0, 28.0, 30.0, 31.0, 30.0, 29.0, 27.0, 22.0, 16.0, 13.0, 19.0,
    30.0, 36.0, 40.0, 42.0,
];

/// (condition, probability, commute multiplier, leisure multiplier)
const WEATHER: [(u8, f64, f64, f64); 8] = [
    (1, 0.35, 1.00, 1.00),
    (2, 0.25, 1.00, 0.95),
    (19, 0.05, 1.00, 0.97),
    (17, 0.05, 1.00, 0.97),
    (3, 0.08, 1.05, 0.70),
    (5, 0.10, 1.10, 0.60),
    (6, 0.07, 1.15, 0.45),
    (7, 0.05, 1.20, 0.30),
];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid city model: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Parameters of the synthetic city.
#[derive(Debug, Clone, PartialEq)]
pub struct CityModel {
    pub seed: u64,
    pub sw: GeoPoint,
    pub ne: GeoPoint,
    pub cell_km: f64,
    pub routes: usize,
    pub stations_per_route: usize,
    pub taxis: usize,
    pub days: usize,
    pub start_date: NaiveDate,
    /// Start hour (UTC) of each daily window.
    pub window_hours: Vec<u32>,
    /// Window length.
    pub horizon_hours: u32,
    pub gps_interval_s: i64,
    pub background_pois: usize,
    /// Boardings per POI per hour at full profile strength.
    pub demand_scale: f64,
    /// Boardings per station per hour independent of POIs.
    pub base_rate: f64,
}

impl Default for CityModel {
    fn default() -> Self {
        CityModel {
            seed: 7,
            sw: GeoPoint { lat: 22.05, lon: 113.25 },
            ne: GeoPoint { lat: 22.409, lon: 113.638 },
            cell_km: 5.0,
            routes: 20,
            stations_per_route: 20,
            taxis: 200,
            days: 106,
            start_date: NaiveDate::from_ymd_opt(2015, 7, 1).expect("valid date"),
            window_hours: vec![8, 12, 18, 21],
            horizon_hours: 1,
            gps_interval_s: 30,
            background_pois: 300,
            demand_scale: 6.0,
            base_rate: 0.5,
        }
    }
}

/// A generated route with its per-station demand weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthRoute {
    pub route_id: String,
    pub bus_id: String,
    pub stop_ids: Vec<String>,
    pub stations: Vec<GeoPoint>,
    /// Commute-category POIs placed at each station.
    pub commute: Vec<f64>,
    /// Leisure-category POIs placed at each station.
    pub leisure: Vec<f64>,
}

/// Day-independent part of the city.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticCity {
    pub grid: GridIndex,
    pub routes: Vec<SynthRoute>,
    pub pois: Vec<PoiRecord>,
    inner: (f64, f64, f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TruthKind {
    /// Boardings of a route in the window.
    Route,
    /// Taxi kilometres credited to a cell in the window.
    Cell,
}

impl TruthKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TruthKind::Route => "route",
            TruthKind::Cell => "cell",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthRow {
    pub kind: TruthKind,
    pub id: String,
    pub window: TimeWindow,
    pub value: f64,
}

/// Everything generated for one day.
#[derive(Debug, Clone, PartialEq)]
pub struct DayData {
    pub day: usize,
    pub weather: WeatherRecord,
    pub windows: Vec<TimeWindow>,
    /// Sorted by (taxi, time).
    pub taxi: Vec<TaxiRecord>,
    /// Sorted by (bus, time).
    pub bus: Vec<BusRecord>,
    /// Sorted by time.
    pub ic: Vec<IcCardRecord>,
    pub truth: Vec<TruthRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GenerateSummary {
    pub taxi_rows: usize,
    pub bus_rows: usize,
    pub ic_rows: usize,
    pub poi_rows: usize,
    pub weather_rows: usize,
    pub truth_rows: usize,
}

fn mix(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn round_to(x: f64, decimals: i32) -> f64 {
    let f = 10f64.powi(decimals);
    (x * f).round() / f
}

fn poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).map(|d| d.sample(rng) as u64).unwrap_or(0)
}

impl CityModel {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        if self.routes == 0 {
            return bad("at least one route is required");
        }
        if self.stations_per_route < 2 {
            return bad("routes need at least two stations");
        }
        if self.days == 0 {
            return bad("at least one day is required");
        }
        if self.window_hours.is_empty() || self.window_hours.iter().any(|&h| h > 23) {
            return bad("window hours must be non-empty and within 0..=23");
        }
        if self.horizon_hours == 0 || self.horizon_hours > 24 {
            return bad("horizon must be 1..=24 hours");
        }
        let mut hours = self.window_hours.clone();
        hours.sort_unstable();
        if hours.windows(2).any(|w| w[1] - w[0] < self.horizon_hours) || hours[hours.len() - 1] + self.horizon_hours > 24 {
            return bad("daily windows must not overlap or cross midnight");
        }
        if self.gps_interval_s <= 0 || self.gps_interval_s > 3600 {
            return bad("GPS interval must be 1..=3600 s");
        }
        if !(self.demand_scale >= 0.0 && self.base_rate >= 0.0) {
            return bad("demand rates must be non-negative");
        }
        partition_city(self.sw, self.ne, self.cell_km).map_err(|e| SynthError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn grid(&self) -> Result<GridIndex, SynthError> {
        partition_city(self.sw, self.ne, self.cell_km).map_err(|e| SynthError::Config(e.to_string()))
    }

    pub fn date(&self, day: usize) -> NaiveDate {
        self.start_date + Duration::days(day as i64)
    }

    pub fn windows(&self, day: usize) -> Vec<TimeWindow> {
        let midnight = self.date(day).and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp();
        let mut hours = self.window_hours.clone();
        hours.sort_unstable();
        hours
            .into_iter()
            .map(|h| {
                let start = midnight + h as i64 * 3600;
                TimeWindow::new(start, start + self.horizon_hours as i64 * 3600)
            })
            .collect()
    }

    /// Routes, stations and POIs.
    pub fn build_static(&self) -> Result<StaticCity, SynthError> {
        self.validate()?;
        let grid = self.grid()?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, 0));
        let (w, h) = {
            let (x, y) = grid.project(&self.ne);
            (x, y)
        };
        let margin = 0.1 * w.min(h);
        let inner = (margin, margin, w - margin, h - margin);
        let to_point = |x: f64, y: f64| {
            let p = grid.unproject(x, y);
            GeoPoint { lat: round_to(p.lat, 6), lon: round_to(p.lon, 6) }
        };
        let mut pois = Vec::new();
        let push_poi = |pois: &mut Vec<PoiRecord>, category: u8, loc: GeoPoint| {
            let n = pois.len() + 1;
            pois.push(PoiRecord { poi_id: format!("P{n:06}"), name: format!("poi-{n}"), category, loc });
        };
        let turn = Normal::new(0.0, 0.35).expect("valid normal");

        let mut routes = Vec::with_capacity(self.routes);
        for r in 0..self.routes {
            let route_id = format!("R{:02}", r + 1);
            let commute_intensity = rng.random_range(0.15..1.0);
            let leisure_intensity = rng.random_range(0.15..1.0);
            let mut x = rng.random_range(inner.0..inner.2);
            let mut y = rng.random_range(inner.1..inner.3);
            let mut heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let mut stations = Vec::with_capacity(self.stations_per_route);
            let mut commute = Vec::with_capacity(self.stations_per_route);
            let mut leisure = Vec::with_capacity(self.stations_per_route);
            for s in 0..self.stations_per_route {
                if s > 0 {
                    let step = rng.random_range(0.6..1.0);
                    heading += turn.sample(&mut rng);
                    let (mut nx, mut ny) = (x + step * heading.sin(), y + step * heading.cos());
                    if nx < inner.0 || nx > inner.2 {
                        heading = -heading;
                        nx = x + step * heading.sin();
                    }
                    if ny < inner.1 || ny > inner.3 {
                        heading = std::f64::consts::PI - heading;
                        ny = y + step * heading.cos();
                    }
                    x = nx.clamp(inner.0, inner.2);
                    y = ny.clamp(inner.1, inner.3);
                }
                let station = to_point(x, y);
                stations.push(station);
                let size = rng.random_range(0.5..1.5);
                let mut counts = [0.0f64; 2];
                for (slot, cats, per_cat) in [
                    (0usize, &COMMUTE_CATEGORIES[..], 2.0 * commute_intensity),
                    (1, &LEISURE_CATEGORIES[..], 1.2 * leisure_intensity),
                ] {
                    for &c in cats {
                        for _ in 0..poisson(per_cat * size, &mut rng) {
                            let p = to_point(x + rng.random_range(-0.2..0.2), y + rng.random_range(-0.2..0.2));
                            push_poi(&mut pois, c, p);
                            counts[slot] += 1.0;
                        }
                    }
                }
                for &c in &NOISE_CATEGORIES {
                    for _ in 0..poisson(1.0, &mut rng) {
                        let p = to_point(x + rng.random_range(-0.2..0.2), y + rng.random_range(-0.2..0.2));
                        push_poi(&mut pois, c, p);
                    }
                }
                commute.push(counts[0]);
                leisure.push(counts[1]);
            }
            routes.push(SynthRoute {
                stop_ids: (1..=self.stations_per_route).map(|s| format!("{route_id}S{s:02}")).collect(),
                bus_id: format!("B{:02}", r + 1),
                route_id,
                stations,
                commute,
                leisure,
            });
        }
        for _ in 0..self.background_pois {
            let c = rng.random_range(1..=POI_CATEGORIES);
            let p = to_point(rng.random_range(inner.0..inner.2), rng.random_range(inner.1..inner.3));
            push_poi(&mut pois, c, p);
        }
        Ok(StaticCity { grid, routes, pois, inner })
    }

    fn weather<R: Rng + ?Sized>(&self, day: usize, rng: &mut R) -> (WeatherRecord, f64, f64) {
        let probs: Vec<f64> = WEATHER.iter().map(|w| w.1).collect();
        let pick = WeightedIndex::new(&probs).expect("valid weights").sample(rng);
        let (condition, _, m_commute, m_leisure) = WEATHER[pick];
        let rainy = m_leisure < 0.9;
        let noise = Normal::new(0.0, 1.8).expect("valid normal");
        let mut high = 33.0 - 0.055 * day as f64 + noise.sample(rng);
        if rainy {
            high -= 2.5;
        }
        let low = (high - 6.0 + rng.random_range(-1.0..1.0)).min(high - 1.0);
        let record = WeatherRecord {
            date: self.date(day),
            temp_high_c: round_to(high, 1),
            temp_low_c: round_to(low, 1),
            condition,
        };
        (record, m_commute, m_leisure)
    }

    /// Expected boardings of a route in a window.
    pub fn route_rate(&self, route: &SynthRoute, hour: u32, weather: &WeatherRecord) -> f64 {
        let (_, _, m_c, m_l) = WEATHER.iter().copied().find(|w| w.0 == weather.condition).unwrap_or((0, 0.0, 1.0, 1.0));
        let temp = (1.0 + 0.015 * (30.0 - weather.temp_high_c)).max(0.5);
        let h = hour as usize % 24;
        let per_hour: f64 = route
            .commute
            .iter()
            .zip(&route.leisure)
            .map(|(c, l)| {
                self.base_rate + self.demand_scale * temp * (c * COMMUTE_PROFILE[h] * m_c + l * LEISURE_PROFILE[h] * m_l)
            })
            .sum();
        per_hour * self.horizon_hours as f64
    }

    /// Generates one day; a pure function of the model, the static city and `day`.
    pub fn generate_day(&self, city: &StaticCity, day: usize) -> DayData {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, 1 + day as u64));
        let (weather, _, _) = self.weather(day, &mut rng);
        let windows = self.windows(day);
        let mut hours: Vec<u32> = self.window_hours.clone();
        hours.sort_unstable();

        let mut taxi = Vec::new();
        let mut bus = Vec::new();
        let mut ic = Vec::new();
        let mut truth = Vec::new();
        for (window, &hour) in windows.iter().zip(&hours) {
            let h = hour as usize % 24;
            // Boardings.
            for route in &city.routes {
                let n = poisson(self.route_rate(route, hour, &weather), &mut rng);
                for _ in 0..n {
                    ic.push(IcCardRecord {
                        route_id: route.route_id.clone(),
                        bus_id: route.bus_id.clone(),
                        t: rng.random_range(window.start..window.end),
                        card_id: format!("C{:06}", rng.random_range(0..100_000u32)),
                    });
                }
                truth.push(TruthRow { kind: TruthKind::Route, id: route.route_id.clone(), window: *window, value: n as f64 });
                bus.extend(self.bus_run(route, *window));
            }
            // Taxis.
            let weights: Vec<f64> = city
                .routes
                .iter()
                .flat_map(|r| r.commute.iter().zip(&r.leisure).map(|(c, l)| 0.5 + c * COMMUTE_PROFILE[h] + l * LEISURE_PROFILE[h]))
                .collect();
            let stations: Vec<GeoPoint> = city.routes.iter().flat_map(|r| r.stations.iter().copied()).collect();
            let picker = WeightedIndex::new(&weights).expect("positive weights");
            let mut window_taxi = Vec::new();
            for i in 0..self.taxis {
                if rng.random::<f64>() < TAXI_ACTIVE[h] {
                    let id = format!("T{:04}", i + 1);
                    window_taxi.extend(self.taxi_run(city, &stations, &picker, &id, *window, TAXI_SPEED[h], &mut rng));
                }
            }
            truth.extend(cell_truth(&city.grid, &window_taxi, *window));
            taxi.extend(window_taxi);
        }
        taxi.sort_by(TaxiRecord::canonical_cmp);
        bus.sort_by(BusRecord::canonical_cmp);
        ic.sort_by(IcCardRecord::canonical_cmp);
        DayData { day, weather, windows, taxi, bus, ic, truth }
    }

    fn bus_run(&self, route: &SynthRoute, window: TimeWindow) -> Vec<BusRecord> {
        let n = route.stations.len() as i64;
        let gap = ((window.duration_s() - 60) / n).max(2);
        let mut out = Vec::with_capacity(2 * route.stations.len());
        for (j, (stop, loc)) in route.stop_ids.iter().zip(&route.stations).enumerate() {
            let arrive = window.start + j as i64 * gap;
            let last = if j == 0 { "none".to_string() } else { route.stop_ids[j - 1].clone() };
            let next_km = route.stations.get(j + 1).map_or(0.0, |b| haversine_km(loc, b));
            let record = |t: Timestamp, speed: f64| BusRecord {
                bus_id: route.bus_id.clone(),
                t,
                loc: *loc,
                speed_kmh: speed,
                last_position: last.clone(),
                current_stop: stop.clone(),
                route_name: route.route_id.clone(),
            };
            out.push(record(arrive, 0.0));
            out.push(record(arrive + gap.clamp(1, 20), round_to(next_km / (gap as f64 / 3600.0), 2)));
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn taxi_run<R: Rng + ?Sized>(
        &self,
        city: &StaticCity,
        stations: &[GeoPoint],
        picker: &WeightedIndex<f64>,
        taxi_id: &str,
        window: TimeWindow,
        mean_speed: f64,
        rng: &mut R,
    ) -> Vec<TaxiRecord> {
        let grid = &city.grid;
        let inner = city.inner;
        let waypoint = |rng: &mut R| -> (f64, f64) {
            if rng.random::<f64>() < 0.2 {
                (rng.random_range(inner.0..inner.2), rng.random_range(inner.1..inner.3))
            } else {
                let (x, y) = grid.project(&stations[picker.sample(rng)]);
                (x + rng.random_range(-0.15..0.15), y + rng.random_range(-0.15..0.15))
            }
        };
        let dt = self.gps_interval_s;
        let ticks = (window.duration_s() + dt - 1) / dt;
        let step_km = mean_speed * rng.random_range(0.95..1.05) * dt as f64 / 3600.0;
        let (mut x, mut y) = waypoint(rng);
        let mut target = waypoint(rng);
        let mut to_pickup = true;
        let mut occupied = false;
        let mut release = false;
        let mut dwell = 0u32;
        let mut direction = 0.0;
        let mut out = Vec::with_capacity(ticks as usize);
        for k in 0..ticks {
            let mut moved = 0.0;
            if k > 0 {
                if release {
                    occupied = false;
                    release = false;
                }
                if dwell > 0 {
                    dwell -= 1;
                } else {
                    let (dx, dy) = (target.0 - x, target.1 - y);
                    let d = dx.hypot(dy);
                    let m = step_km.min(d);
                    if d > 0.0 {
                        x += dx / d * m;
                        y += dy / d * m;
                        direction = dx.atan2(dy).to_degrees().rem_euclid(360.0);
                    }
                    moved = m;
                    if m >= d {
                        if to_pickup {
                            occupied = true;
                        } else {
                            release = true;
                        }
                        to_pickup = !to_pickup;
                        dwell = 1;
                        target = waypoint(rng);
                    }
                }
            }
            let last = k + 1 == ticks;
            let p = grid.unproject(x, y);
            let mut dir = round_to(direction, 1);
            if dir >= 360.0 {
                dir = 0.0;
            }
            out.push(TaxiRecord {
                taxi_id: taxi_id.to_string(),
                t: window.start + k * dt,
                loc: GeoPoint { lat: round_to(p.lat, 6), lon: round_to(p.lon, 6) },
                speed_kmh: round_to(moved / (dt as f64 / 3600.0), 2),
                direction_deg: dir,
                occupied: occupied && !last,
            });
        }
        out
    }

    /// Writes the five datasets, `truth.csv` and `coefficients.csv` into `dir`.
    pub fn generate_to_dir(&self, dir: &Path) -> Result<GenerateSummary, SynthError> {
        let city = self.build_static()?;
        std::fs::create_dir_all(dir)?;
        let mut summary = GenerateSummary::default();
        let open = |name: &str| -> Result<csv::Writer<BufWriter<File>>, SynthError> {
            Ok(csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(BufWriter::new(File::create(dir.join(name))?)))
        };
        let mut taxi_w = open(DatasetKind::Taxi.file_name())?;
        let mut bus_w = open(DatasetKind::Bus.file_name())?;
        let mut ic_w = open(DatasetKind::Ic.file_name())?;
        let mut weather_w = open(DatasetKind::Weather.file_name())?;
        let mut truth_w = open(TRUTH_FILE)?;
        taxi_w.write_record(TaxiRecord::HEADER)?;
        bus_w.write_record(BusRecord::HEADER)?;
        ic_w.write_record(IcCardRecord::HEADER)?;
        weather_w.write_record(WeatherRecord::HEADER)?;
        truth_w.write_record(["kind", "id", "window_start", "window_end", "true_value"])?;

        let mut poi_w = open(DatasetKind::Poi.file_name())?;
        poi_w.write_record(PoiRecord::HEADER)?;
        for p in &city.pois {
            poi_w.write_record(p.to_fields())?;
        }
        poi_w.flush()?;
        summary.poi_rows = city.pois.len();

        const CHUNK: usize = 8;
        for chunk_start in (0..self.days).step_by(CHUNK) {
            let days: Vec<DayData> = (chunk_start..(chunk_start + CHUNK).min(self.days))
                .into_par_iter()
                .map(|d| self.generate_day(&city, d))
                .collect();
            for d in days {
                for r in &d.taxi {
                    taxi_w.write_record(r.to_fields())?;
                }
                for r in &d.bus {
                    bus_w.write_record(r.to_fields())?;
                }
                for r in &d.ic {
                    ic_w.write_record(r.to_fields())?;
                }
                weather_w.write_record(d.weather.to_fields())?;
                for t in &d.truth {
                    truth_w.write_record([
                        t.kind.as_str().to_string(),
                        t.id.clone(),
                        format_timestamp(t.window.start),
                        format_timestamp(t.window.end),
                        t.value.to_string(),
                    ])?;
                }
                summary.taxi_rows += d.taxi.len();
                summary.bus_rows += d.bus.len();
                summary.ic_rows += d.ic.len();
                summary.weather_rows += 1;
                summary.truth_rows += d.truth.len();
            }
        }
        for w in [&mut taxi_w, &mut bus_w, &mut ic_w, &mut weather_w, &mut truth_w] {
            w.flush()?;
        }
        let mut coeffs = BufWriter::new(File::create(dir.join(COEFFICIENTS_FILE))?);
        EmissionCoefficients::defaults()
            .write_csv(&mut coeffs)
            .map_err(|e| SynthError::Config(e.to_string()))?;
        coeffs.flush()?;
        Ok(summary)
    }
}

/// Kilometres per cell from consecutive in-window fixes of each taxi,
/// credited to the cell holding the segment midpoint. Every cell is listed.
fn cell_truth(grid: &GridIndex, records: &[TaxiRecord], window: TimeWindow) -> Vec<TruthRow> {
    let mut km = vec![0.0; grid.cell_count()];
    for pair in records.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.taxi_id != b.taxi_id || !window.contains(a.t) || !window.contains(b.t) {
            continue;
        }
        if let Some(c) = grid.locate_cell(&a.loc.midpoint(&b.loc)) {
            km[(c.row * grid.cols + c.col) as usize] += haversine_km(&a.loc, &b.loc);
        }
    }
    grid.cells()
        .map(|c: CellId| TruthRow {
            kind: TruthKind::Cell,
            id: c.to_string(),
            window,
            value: km[(c.row * grid.cols + c.col) as usize],
        })
        .collect()
}

/// Parses a `truth.csv` sidecar.
pub fn read_truth<R: std::io::Read>(input: R) -> Result<Vec<TruthRow>, SynthError> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let bad = || SynthError::Config(format!("malformed truth row {:?}", rec));
        let kind = match &rec[0] {
            "route" => TruthKind::Route,
            "cell" => TruthKind::Cell,
            _ => return Err(bad()),
        };
        let start = crate::ingest::parse_timestamp(&rec[2]).map_err(|_| bad())?;
        let end = crate::ingest::parse_timestamp(&rec[3]).map_err(|_| bad())?;
        out.push(TruthRow {
            kind,
            id: rec[1].to_string(),
            window: TimeWindow::new(start, end),
            value: rec[4].parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::extract_trips;

    fn small() -> CityModel {
        CityModel {
            sw: GeoPoint { lat: 22.2, lon: 113.4 },
            ne: GeoPoint { lat: 22.29, lon: 113.497 },
            routes: 3,
            stations_per_route: 6,
            taxis: 10,
            days: 2,
            background_pois: 10,
            ..Default::default()
        }
    }

    #[test]
    fn rejects_infeasible_models() {
        assert!(CityModel { routes: 0, ..small() }.validate().is_err());
        assert!(CityModel { window_hours: vec![8, 8], ..small() }.validate().is_err());
        assert!(CityModel { window_hours: vec![23], horizon_hours: 2, ..small() }.validate().is_err());
    }

    #[test]
    fn default_grid_is_eight_by_eight() {
        let g = CityModel::default().grid().unwrap();
        assert_eq!((g.rows, g.cols), (8, 8));
    }

    #[test]
    fn days_are_deterministic_and_independent() {
        let m = small();
        let city = m.build_static().unwrap();
        assert_eq!(city, m.build_static().unwrap());
        let d1 = m.generate_day(&city, 1);
        assert_eq!(d1, m.generate_day(&city, 1));
        assert_ne!(d1.ic, m.generate_day(&city, 0).ic);
    }

    #[test]
    fn taxis_start_and_end_each_window_empty() {
        let m = small();
        let city = m.build_static().unwrap();
        let day = m.generate_day(&city, 0);
        assert!(!day.taxi.is_empty());
        for run in day.taxi.chunk_by(|a, b| a.taxi_id == b.taxi_id) {
            for w in &day.windows {
                let inside: Vec<&TaxiRecord> = run.iter().filter(|r| w.contains(r.t)).collect();
                if let (Some(first), Some(last)) = (inside.first(), inside.last()) {
                    assert!(!first.occupied && !last.occupied);
                }
            }
            for trip in extract_trips(run) {
                assert!(day.windows.iter().any(|w| w.contains(trip.origin_t) && w.contains(trip.dest_t)));
            }
        }
    }

    #[test]
    fn truth_counts_match_boardings() {
        let m = small();
        let city = m.build_static().unwrap();
        let day = m.generate_day(&city, 0);
        for t in day.truth.iter().filter(|t| t.kind == TruthKind::Route) {
            let n = day.ic.iter().filter(|r| r.route_id == t.id && t.window.contains(r.t)).count();
            assert_eq!(n as f64, t.value);
        }
    }
}
