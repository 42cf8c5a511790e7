//! Per-window feature assembly, day-blocked dataset splits, training of the
//! two predictors and batch forecasting over every route and grid cell.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use chrono::NaiveDate;
use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::emission::{grid_emission_labels, EmissionCoefficients, EmissionError};
use crate::features::{
    demand_label, grid_features, route_features, BinEdges, CategorySet, FeatureError, FeatureInputs, FeatureRow,
    ScopeKind,
};
use crate::geo::{BusRoute, CellId, GeoError, GridIndex, KM_PER_DEG, REGIONS_PER_ROUTE};
use crate::ingest::{
    extract_all_trips, format_timestamp, parse_timestamp, trajectories, BusRecord, IcCardRecord, PoiRecord, TaxiRecord,
    TimeWindow, Trajectory, TripOD, WeatherRecord,
};
use crate::neural::checkpoint::{Network, TrainedModel};
use crate::neural::{
    to_matrix, FineTuneReport, NeuralError, Pnn3, RegressionReport, Sdae, Standardizer, TrainConfig, DEFAULT_PNN_HIDDEN,
    SDAE4_HIDDEN,
};
use crate::synthcity::{CityModel, StaticCity, SynthError};
use crate::recommend::{recommend_topk, route_tce, DemandScalar, Recommendation, RecommendError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Emission(#[from] EmissionError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Recommend(#[from] RecommendError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("split: {0}")]
    Split(String),
    #[error("inference: {0}")]
    Inference(String),
    #[error("forecast file: {0}")]
    File(String),
}

/// Points of each trajectory inside the window (trajectories left empty are dropped).
pub fn slice_window(trajectories: &[Trajectory], window: TimeWindow) -> Vec<Trajectory> {
    trajectories
        .iter()
        .filter_map(|tr| {
            let lo = tr.points.partition_point(|p| p.t < window.start);
            let hi = tr.points.partition_point(|p| p.t < window.end);
            (hi > lo).then(|| Trajectory { vehicle_id: tr.vehicle_id.clone(), points: tr.points[lo..hi].to_vec() })
        })
        .collect()
}

/// Latitude/longitude box.
#[derive(Debug, Clone, Copy, PartialEq)]
struct LatLonBox {
    min_lat: f64,
    max_lat: f64,
    min_lon: f64,
    max_lon: f64,
}

impl LatLonBox {
    fn contains(&self, lat: f64, lon: f64) -> bool {
        lat >= self.min_lat && lat <= self.max_lat && lon >= self.min_lon && lon <= self.max_lon
    }

    /// Box enclosing every region of the route, with slack.
    fn around(route: &BusRoute) -> Option<Self> {
        let mut b: Option<LatLonBox> = None;
        for r in route.regions.iter().take(REGIONS_PER_ROUTE) {
            let half = 0.5 * r.side_km * 1.1 + 1e-3;
            let dlat = half / KM_PER_DEG;
            let dlon = half / (KM_PER_DEG * r.center.lat.to_radians().cos().max(1e-6));
            let nb = LatLonBox {
                min_lat: r.center.lat - dlat,
                max_lat: r.center.lat + dlat,
                min_lon: r.center.lon - dlon,
                max_lon: r.center.lon + dlon,
            };
            b = Some(match b {
                None => nb,
                Some(o) => LatLonBox {
                    min_lat: o.min_lat.min(nb.min_lat),
                    max_lat: o.max_lat.max(nb.max_lat),
                    min_lon: o.min_lon.min(nb.min_lon),
                    max_lon: o.max_lon.max(nb.max_lon),
                },
            });
        }
        b
    }
}

/// Splits trajectories into maximal runs of consecutive points inside the
/// box. Points outside the box lie outside every region it encloses, so
/// volume, passing speed and dwell statistics over those regions are unchanged.
fn clip(trajectories: &[Trajectory], b: &LatLonBox) -> Vec<Trajectory> {
    let mut out = Vec::new();
    for tr in trajectories {
        for run in tr.points.split(|p| !b.contains(p.loc.lat, p.loc.lon)) {
            if !run.is_empty() {
                out.push(Trajectory { vehicle_id: tr.vehicle_id.clone(), points: run.to_vec() });
            }
        }
    }
    out
}

/// Everything observed during one window.
#[derive(Debug, Clone)]
pub struct WindowData<'a> {
    pub window: TimeWindow,
    /// In-window points only.
    pub trajectories: Vec<Trajectory>,
    /// Trips with both ends in the window.
    pub trips: Vec<TripOD>,
    /// In-window boardings.
    pub ic: &'a [IcCardRecord],
    pub weather: &'a WeatherRecord,
}

impl<'a> WindowData<'a> {
    /// `ic` must be in time order (the canonical order of parsed and generated files).
    pub fn new(
        window: TimeWindow,
        trajectories: &[Trajectory],
        trips: &[TripOD],
        ic: &'a [IcCardRecord],
        weather: &'a WeatherRecord,
    ) -> Self {
        WindowData {
            window,
            trajectories: slice_window(trajectories, window),
            trips: trips.iter().filter(|t| window.contains(t.origin_t) && window.contains(t.dest_t)).copied().collect(),
            ic: &ic[ic.partition_point(|r| r.t < window.start)..ic.partition_point(|r| r.t < window.end)],
            weather,
        }
    }
}

/// Static study area: the grid, routes, POIs and labeling parameters.
#[derive(Debug, Clone)]
pub struct Featurizer {
    pub grid: GridIndex,
    pub routes: Vec<BusRoute>,
    pub pois: Vec<PoiRecord>,
    pub categories: CategorySet,
    pub edges: BinEdges,
    pub coeffs: EmissionCoefficients,
    boxes: Vec<Option<LatLonBox>>,
    route_pois: Vec<Vec<PoiRecord>>,
}

impl Featurizer {
    pub fn new(
        grid: GridIndex,
        routes: Vec<BusRoute>,
        pois: Vec<PoiRecord>,
        categories: CategorySet,
        edges: BinEdges,
        coeffs: EmissionCoefficients,
    ) -> Self {
        let boxes: Vec<Option<LatLonBox>> = routes.iter().map(LatLonBox::around).collect();
        let route_pois = boxes
            .iter()
            .map(|b| match b {
                Some(b) => pois.iter().filter(|p| b.contains(p.loc.lat, p.loc.lon)).cloned().collect(),
                None => Vec::new(),
            })
            .collect();
        Featurizer { grid, routes, pois, categories, edges, coeffs, boxes, route_pois }
    }

    /// One row per route: the route feature vector and its demand class.
    pub fn route_rows(&self, data: &WindowData<'_>) -> Result<Vec<FeatureRow>, PipelineError> {
        self.routes
            .iter()
            .zip(&self.boxes)
            .zip(&self.route_pois)
            .map(|((route, b), pois)| {
                let clipped = b.as_ref().map(|b| clip(&data.trajectories, b)).unwrap_or_default();
                let inputs = FeatureInputs {
                    trajectories: &clipped,
                    trips: &data.trips,
                    pois,
                    weather: data.weather,
                    categories: &self.categories,
                    window: data.window,
                };
                let label = demand_label(data.ic, &route.route_id, data.window, &self.edges);
                Ok(FeatureRow {
                    scope_kind: ScopeKind::Route,
                    scope_id: route.route_id.clone(),
                    window: data.window,
                    values: route_features(route, &inputs)?,
                    label: label.class as f64,
                })
            })
            .collect()
    }

    /// One row per grid cell: the cell feature vector and its emission label.
    pub fn grid_rows(&self, data: &WindowData<'_>) -> Result<Vec<FeatureRow>, PipelineError> {
        let labels = grid_emission_labels(&data.trajectories, &self.grid, data.window, &self.coeffs)?;
        let inputs = FeatureInputs {
            trajectories: &data.trajectories,
            trips: &data.trips,
            pois: &self.pois,
            weather: data.weather,
            categories: &self.categories,
            window: data.window,
        };
        self.grid
            .cells()
            .map(|cell| {
                Ok(FeatureRow {
                    scope_kind: ScopeKind::Grid,
                    scope_id: cell.to_string(),
                    window: data.window,
                    values: grid_features(&self.grid, cell, &inputs)?,
                    label: labels[&cell],
                })
            })
            .collect()
    }
}

/// Windows starting at each of `hours` (UTC) on `date`, `horizon_hours` long.
pub fn daily_windows(date: NaiveDate, hours: &[u32], horizon_hours: u32) -> Vec<TimeWindow> {
    let midnight = date.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp();
    let mut hours = hours.to_vec();
    hours.sort_unstable();
    hours.dedup();
    hours
        .into_iter()
        .map(|h| {
            let start = midnight + h as i64 * 3600;
            TimeWindow::new(start, start + horizon_hours as i64 * 3600)
        })
        .collect()
}

/// Which row kinds to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowKinds {
    pub route: bool,
    pub grid: bool,
}

/// Route and grid rows for the daily windows of every weather date.
/// `taxi` must be in canonical (taxi, time) order and `ic` in time order.
pub fn featurize_records(
    f: &Featurizer,
    taxi: &[TaxiRecord],
    ic: &[IcCardRecord],
    weather: &[WeatherRecord],
    hours: &[u32],
    horizon_hours: u32,
    kinds: RowKinds,
) -> Result<(Vec<FeatureRow>, Vec<FeatureRow>), PipelineError> {
    let trajs = trajectories(taxi);
    let trips = extract_all_trips(taxi);
    let (mut routes, mut grid) = (Vec::new(), Vec::new());
    for w in weather {
        for window in daily_windows(w.date, hours, horizon_hours) {
            let data = WindowData::new(window, &trajs, &trips, ic, w);
            if kinds.route {
                routes.extend(f.route_rows(&data)?);
            }
            if kinds.grid {
                grid.extend(f.grid_rows(&data)?);
            }
        }
    }
    Ok((routes, grid))
}

/// Routes of a synthetic city with regions sampled under `seed`.
pub fn synthetic_routes(city: &StaticCity, region_side_km: f64, seed: u64) -> Result<Vec<BusRoute>, PipelineError> {
    city.routes
        .iter()
        .map(|r| Ok(BusRoute::with_seeded_regions(r.route_id.clone(), r.stations.clone(), region_side_km, REGIONS_PER_ROUTE, seed)?))
        .collect()
}

/// Generates the model's city day by day in memory and featurizes it with
/// the reference categories, default bins and default coefficients. Rows
/// equal those built from the files the model writes.
pub fn featurize_synthetic(
    model: &CityModel,
    region_side_km: f64,
    kinds: RowKinds,
) -> Result<(Vec<FeatureRow>, Vec<FeatureRow>), PipelineError> {
    let city = model.build_static()?;
    let f = Featurizer::new(
        city.grid.clone(),
        synthetic_routes(&city, region_side_km, model.seed)?,
        city.pois.clone(),
        CategorySet::reference(),
        BinEdges::default(),
        EmissionCoefficients::defaults(),
    );
    let (mut routes, mut grid) = (Vec::new(), Vec::new());
    for d in 0..model.days {
        let day = model.generate_day(&city, d);
        let (r, g) = featurize_records(&f, &day.taxi, &day.ic, std::slice::from_ref(&day.weather), &model.window_hours, model.horizon_hours, kinds)?;
        routes.extend(r);
        grid.extend(g);
    }
    Ok((routes, grid))
}

/// Rebuilds routes from bus reports: stops in order of first appearance.
pub fn routes_from_bus(bus: &[BusRecord], region_side_km: f64, seed: u64) -> Result<Vec<BusRoute>, PipelineError> {
    let mut by_route: BTreeMap<&str, Vec<&BusRecord>> = BTreeMap::new();
    for r in bus {
        by_route.entry(r.route_name.as_str()).or_default().push(r);
    }
    by_route
        .into_iter()
        .map(|(name, mut recs)| {
            recs.sort_by_key(|r| r.t);
            let mut seen = BTreeSet::new();
            let stations = recs.iter().filter(|r| seen.insert(r.current_stop.as_str())).map(|r| r.loc).collect();
            Ok(BusRoute::with_seeded_regions(name, stations, region_side_km, REGIONS_PER_ROUTE, seed)?)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Day-count fractions for train, validation and test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    /// 82 : 10 : 14 days.
    fn default() -> Self {
        SplitFractions { train: 82.0 / 106.0, val: 10.0 / 106.0, test: 14.0 / 106.0 }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let f = [self.train, self.val, self.test];
        if f.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 || self.train == 0.0 {
            return Err(PipelineError::Split(format!("fractions {f:?} must be non-negative, sum to 1 and train on something")));
        }
        Ok(())
    }

    /// Day counts for `days` days.
    pub fn day_counts(&self, days: usize) -> Result<(usize, usize, usize), PipelineError> {
        self.validate()?;
        let n = days as f64;
        let train = (self.train * n).round() as usize;
        let val = ((self.val * n).round() as usize).min(days - train.min(days));
        let test = days - train.min(days) - val;
        let counts = (train.min(days), val, test);
        for (frac, count, name) in [(self.train, counts.0, "train"), (self.val, counts.1, "validation"), (self.test, counts.2, "test")] {
            if frac > 0.0 && count == 0 {
                return Err(PipelineError::Split(format!("{days} day(s) leave the {name} split empty")));
            }
        }
        Ok(counts)
    }
}

/// Feature rows tagged with a time-blocked split.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub kind: ScopeKind,
    pub rows: Vec<FeatureRow>,
    pub splits: Vec<Split>,
}

/// Earliest days train, then validation, then test.
pub fn split_dataset(rows: Vec<FeatureRow>, fractions: SplitFractions) -> Result<LabeledDataset, PipelineError> {
    let kind = rows.first().map(|r| r.scope_kind).ok_or_else(|| PipelineError::Split("no samples".into()))?;
    if rows.iter().any(|r| r.scope_kind != kind) {
        return Err(PipelineError::Split("mixed route and grid rows".into()));
    }
    let days: Vec<NaiveDate> = rows.iter().map(|r| r.window.day()).collect::<BTreeSet<_>>().into_iter().collect();
    let (train, val, _) = fractions.day_counts(days.len())?;
    let tag: BTreeMap<NaiveDate, Split> = days
        .iter()
        .enumerate()
        .map(|(i, d)| (*d, if i < train { Split::Train } else if i < train + val { Split::Val } else { Split::Test }))
        .collect();
    let splits = rows.iter().map(|r| tag[&r.window.day()]).collect();
    Ok(LabeledDataset { kind, rows, splits })
}

impl LabeledDataset {
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.rows.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn days(&self, split: Split) -> BTreeSet<NaiveDate> {
        self.indices(split).into_iter().map(|i| self.rows[i].window.day()).collect()
    }

    /// Raw features and labels of one split.
    pub fn part(&self, split: Split) -> Result<(Array2<f64>, Vec<f64>), PipelineError> {
        let idx = self.indices(split);
        let width = self.rows.first().map_or(0, |r| r.values.len());
        let x = if idx.is_empty() {
            Array2::zeros((0, width))
        } else {
            to_matrix(&idx.iter().map(|&i| self.rows[i].values.clone()).collect::<Vec<_>>())?
        };
        Ok((x, idx.iter().map(|&i| self.rows[i].label).collect()))
    }
}

/// Input transform fitted on the training split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputScaling {
    /// Per-dimension z-score.
    #[default]
    ZScore,
    /// Per-dimension range onto [0, 1].
    MinMax,
}

impl InputScaling {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "zscore" => Some(InputScaling::ZScore),
            "minmax" => Some(InputScaling::MinMax),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            InputScaling::ZScore => "zscore",
            InputScaling::MinMax => "minmax",
        }
    }

    pub fn fit(&self, x: ndarray::ArrayView2<'_, f64>) -> Standardizer {
        match self {
            InputScaling::ZScore => Standardizer::fit(x),
            InputScaling::MinMax => Standardizer::fit_minmax(x),
        }
    }
}

/// Settings of both trainings.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub demand: TrainConfig,
    pub emission: TrainConfig,
    /// Hidden widths of the demand classifier; empty gives a plain softmax classifier.
    pub hidden: Vec<usize>,
    pub pretrain: bool,
    pub pnn_hidden: usize,
    pub classes: usize,
    pub fractions: SplitFractions,
    pub demand_scaling: InputScaling,
    pub emission_scaling: InputScaling,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            demand: TrainConfig::default(),
            emission: TrainConfig { learning_rate: 0.01, ..TrainConfig::default() },
            hidden: SDAE4_HIDDEN.to_vec(),
            pretrain: true,
            pnn_hidden: DEFAULT_PNN_HIDDEN,
            classes: BinEdges::default().class_count(),
            fractions: SplitFractions::default(),
            demand_scaling: InputScaling::MinMax,
            emission_scaling: InputScaling::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemandReport {
    pub pretrain: Vec<Vec<f64>>,
    pub fine_tune: FineTuneReport,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmissionReport {
    pub training: RegressionReport,
    pub test_rmse: Option<f64>,
}

fn class_labels(y: &[f64], classes: usize) -> Result<Vec<usize>, PipelineError> {
    y.iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 && (v as usize) < classes {
                Ok(v as usize)
            } else {
                Err(PipelineError::Neural(NeuralError::Label { label: v.max(0.0) as usize, classes }))
            }
        })
        .collect()
}

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

/// Builds the demand classifier with the initialization drawn from `cfg.demand.seed`.
pub fn initial_demand_network(width: usize, cfg: &PipelineConfig) -> Sdae {
    Sdae::new(width, &cfg.hidden, cfg.classes, cfg.demand.corruption, &mut seeded(cfg.demand.seed, 0))
}

/// Trains the demand classifier from `net` (pretraining first when enabled).
/// Standardization statistics come from the training split only.
pub fn train_demand_from(mut net: Sdae, ds: &LabeledDataset, cfg: &PipelineConfig) -> Result<(TrainedModel, DemandReport), PipelineError> {
    let (x, y) = ds.part(Split::Train)?;
    if x.nrows() == 0 {
        return Err(PipelineError::Split("empty training split".into()));
    }
    let scaler = cfg.demand_scaling.fit(x.view());
    let x = scaler.apply(x.view())?;
    let y = class_labels(&y, cfg.classes)?;
    let (vx, vy) = ds.part(Split::Val)?;
    let vx = scaler.apply(vx.view())?;
    let vy = class_labels(&vy, cfg.classes)?;

    let pretrain = if cfg.pretrain && !net.layers.is_empty() {
        net.pretrain(x.view(), &cfg.demand, &mut seeded(cfg.demand.seed, 1))?
    } else {
        Vec::new()
    };
    let fine_tune = net.fine_tune(x.view(), &y, Some((vx.view(), &vy)), &cfg.demand, &mut seeded(cfg.demand.seed, 2))?;

    let (tx, ty) = ds.part(Split::Test)?;
    let test_accuracy = if tx.nrows() > 0 {
        Some(net.accuracy(scaler.apply(tx.view())?.view(), &class_labels(&ty, cfg.classes)?)?)
    } else {
        None
    };
    Ok((TrainedModel { scaler, net: Network::Classifier(net) }, DemandReport { pretrain, fine_tune, test_accuracy }))
}

pub fn train_demand(ds: &LabeledDataset, cfg: &PipelineConfig) -> Result<(TrainedModel, DemandReport), PipelineError> {
    let width = ds.rows.first().map_or(0, |r| r.values.len());
    train_demand_from(initial_demand_network(width, cfg), ds, cfg)
}

pub fn train_emission(ds: &LabeledDataset, cfg: &PipelineConfig) -> Result<(TrainedModel, EmissionReport), PipelineError> {
    let (x, y) = ds.part(Split::Train)?;
    if x.nrows() == 0 {
        return Err(PipelineError::Split("empty training split".into()));
    }
    let scaler = cfg.emission_scaling.fit(x.view());
    let x = scaler.apply(x.view())?;
    let (vx, vy) = ds.part(Split::Val)?;
    let vx = scaler.apply(vx.view())?;
    let mut net = Pnn3::new(x.ncols(), cfg.pnn_hidden, &mut seeded(cfg.emission.seed, 10));
    let training = net.train(x.view(), &y, Some((vx.view(), &vy)), &cfg.emission, &mut seeded(cfg.emission.seed, 11))?;
    let (tx, ty) = ds.part(Split::Test)?;
    let test_rmse = if tx.nrows() > 0 {
        let p = net.predict(scaler.apply(tx.view())?.view())?;
        Some((p.iter().zip(&ty).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / ty.len() as f64).sqrt())
    } else {
        None
    };
    Ok((TrainedModel { scaler, net: Network::Regressor(net) }, EmissionReport { training, test_rmse }))
}

/// Both trainings, run concurrently.
#[allow(clippy::type_complexity)]
pub fn train_both(
    demand: &LabeledDataset,
    emission: &LabeledDataset,
    cfg: &PipelineConfig,
) -> Result<((TrainedModel, DemandReport), (TrainedModel, EmissionReport)), PipelineError> {
    let (d, e) = rayon::join(|| train_demand(demand, cfg), || train_emission(emission, cfg));
    Ok((d?, e?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteForecast {
    pub class: usize,
    pub probs: Vec<f64>,
}

/// Demand class per route and emission per cell for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastBundle {
    pub window: TimeWindow,
    pub routes: BTreeMap<String, RouteForecast>,
    pub cells: BTreeMap<CellId, f64>,
}

fn rows_for(rows: &[FeatureRow], kind: ScopeKind, window: TimeWindow) -> Result<Vec<&FeatureRow>, PipelineError> {
    let picked: Vec<&FeatureRow> = rows.iter().filter(|r| r.scope_kind == kind && r.window == window).collect();
    if picked.is_empty() {
        return Err(PipelineError::Inference(format!("no {} rows for the window starting {}", kind.as_str(), format_timestamp(window.start))));
    }
    let ids: BTreeSet<&str> = picked.iter().map(|r| r.scope_id.as_str()).collect();
    if ids.len() != picked.len() {
        return Err(PipelineError::Inference(format!("duplicate {} ids in one window", kind.as_str())));
    }
    Ok(picked)
}

/// Predicts every route and cell with rows for `window`.
pub fn forecast(
    demand: &TrainedModel,
    emission: &TrainedModel,
    route_rows: &[FeatureRow],
    grid_rows: &[FeatureRow],
    window: TimeWindow,
) -> Result<ForecastBundle, PipelineError> {
    let r = rows_for(route_rows, ScopeKind::Route, window)?;
    let g = rows_for(grid_rows, ScopeKind::Grid, window)?;
    let rx = to_matrix(&r.iter().map(|row| row.values.clone()).collect::<Vec<_>>())?;
    let (probs, classes) = demand.predict_class(rx.view())?;
    let routes = r
        .iter()
        .zip(classes)
        .zip(probs.axis_iter(Axis(0)))
        .map(|((row, class), p)| (row.scope_id.clone(), RouteForecast { class, probs: p.to_vec() }))
        .collect();
    let gx = to_matrix(&g.iter().map(|row| row.values.clone()).collect::<Vec<_>>())?;
    let kg = emission.predict_value(gx.view())?;
    let cells = g
        .iter()
        .zip(kg)
        .map(|(row, v)| {
            let cell: CellId = row.scope_id.parse().map_err(|_| PipelineError::Inference(format!("bad cell id {}", row.scope_id)))?;
            Ok((cell, v))
        })
        .collect::<Result<_, PipelineError>>()?;
    Ok(ForecastBundle { window, routes, cells })
}

/// Trains both predictors and forecasts `window`.
pub fn two_task_forecast(
    d_sdae: &LabeledDataset,
    d_pnn: &LabeledDataset,
    cfg: &PipelineConfig,
    route_rows: &[FeatureRow],
    grid_rows: &[FeatureRow],
    window: TimeWindow,
) -> Result<(ForecastBundle, DemandReport, EmissionReport), PipelineError> {
    let ((dm, dr), (em, er)) = train_both(d_sdae, d_pnn, cfg)?;
    Ok((forecast(&dm, &em, route_rows, grid_rows, window)?, dr, er))
}

/// Route scores from a forecast: `μ` from the demand class, `ϑ` summed over crossed cells.
pub fn recommend_from_forecast(
    bundle: &ForecastBundle,
    routes: &[BusRoute],
    grid: &GridIndex,
    edges: &BinEdges,
    scalar: DemandScalar,
    k: usize,
) -> Result<Recommendation, PipelineError> {
    let mut mu = BTreeMap::new();
    let mut theta = BTreeMap::new();
    for route in routes {
        let f = bundle
            .routes
            .get(&route.route_id)
            .ok_or_else(|| PipelineError::Inference(format!("no demand forecast for route {}", route.route_id)))?;
        mu.insert(route.route_id.clone(), scalar.value(f.class, &f.probs, edges));
        theta.insert(route.route_id.clone(), route_tce(route, &bundle.cells, grid)?);
    }
    Ok(recommend_topk(&mu, &theta, k)?)
}

pub fn write_forecast<W: Write>(bundle: &ForecastBundle, out: W) -> Result<(), PipelineError> {
    let classes = bundle.routes.values().map(|f| f.probs.len()).max().unwrap_or(0);
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let err = |e: csv::Error| PipelineError::File(e.to_string());
    let mut header: Vec<String> = ["kind", "id", "window_start", "window_end", "value"].iter().map(|s| s.to_string()).collect();
    header.extend((0..classes).map(|c| format!("prob_{c}")));
    w.write_record(&header).map_err(err)?;
    let (ws, we) = (format_timestamp(bundle.window.start), format_timestamp(bundle.window.end));
    for (id, f) in &bundle.routes {
        let mut rec = vec!["route".to_string(), id.clone(), ws.clone(), we.clone(), f.class.to_string()];
        rec.extend((0..classes).map(|c| f.probs.get(c).map_or(String::new(), |p| p.to_string())));
        w.write_record(&rec).map_err(err)?;
    }
    for (cell, kg) in &bundle.cells {
        let mut rec = vec!["grid".to_string(), cell.to_string(), ws.clone(), we.clone(), kg.to_string()];
        rec.extend((0..classes).map(|_| String::new()));
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| PipelineError::File(e.to_string()))
}

pub fn read_forecast<R: Read>(input: R) -> Result<ForecastBundle, PipelineError> {
    let mut r = csv::Reader::from_reader(input);
    let err = |m: String| PipelineError::File(m);
    let header = r.headers().map_err(|e| err(e.to_string()))?.clone();
    if header.len() < 5 || &header[0] != "kind" || &header[4] != "value" {
        return Err(err("unexpected forecast header".into()));
    }
    let mut window = None;
    let mut routes = BTreeMap::new();
    let mut cells = BTreeMap::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        let bad = |what: &str| err(format!("line {}: {what}", rec.position().map_or(0, |p| p.line())));
        let w = TimeWindow::new(
            parse_timestamp(&rec[2]).map_err(|_| bad("window_start"))?,
            parse_timestamp(&rec[3]).map_err(|_| bad("window_end"))?,
        );
        if *window.get_or_insert(w) != w {
            return Err(bad("forecast mixes windows"));
        }
        match &rec[0] {
            "route" => {
                let class = rec[4].parse().map_err(|_| bad("class"))?;
                let probs = (5..rec.len()).map(|i| rec[i].parse::<f64>().map_err(|_| bad("probability"))).collect::<Result<_, _>>()?;
                routes.insert(rec[1].to_string(), RouteForecast { class, probs });
            }
            "grid" => {
                let cell: CellId = rec[1].parse().map_err(|_| bad("cell id"))?;
                cells.insert(cell, rec[4].parse().map_err(|_| bad("value"))?);
            }
            _ => return Err(bad("kind")),
        }
    }
    let window = window.ok_or_else(|| err("empty forecast".into()))?;
    Ok(ForecastBundle { window, routes, cells })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(day: u32, id: &str) -> FeatureRow {
        let start = NaiveDate::from_ymd_opt(2015, 7, day).unwrap().and_hms_opt(8, 0, 0).unwrap().and_utc().timestamp();
        FeatureRow {
            scope_kind: ScopeKind::Route,
            scope_id: id.into(),
            window: TimeWindow::new(start, start + 3600),
            values: vec![day as f64],
            label: 0.0,
        }
    }

    #[test]
    fn reference_ratio_on_106_days() {
        assert_eq!(SplitFractions::default().day_counts(106).unwrap(), (82, 10, 14));
        assert!(SplitFractions::default().day_counts(2).is_err());
        let all = SplitFractions { train: 1.0, val: 0.0, test: 0.0 };
        assert_eq!(all.day_counts(5).unwrap(), (5, 0, 0));
        assert!(SplitFractions { train: 0.5, val: 0.1, test: 0.1 }.day_counts(10).is_err());
    }

    #[test]
    fn split_is_time_blocked() {
        let rows: Vec<FeatureRow> = (1..=20).flat_map(|d| [row(d, "a"), row(d, "b")]).collect();
        let ds = split_dataset(rows, SplitFractions { train: 0.6, val: 0.2, test: 0.2 }).unwrap();
        let train = ds.days(Split::Train);
        let val = ds.days(Split::Val);
        let test = ds.days(Split::Test);
        assert_eq!((train.len(), val.len(), test.len()), (12, 4, 4));
        assert!(train.iter().max() < val.iter().min());
        assert!(val.iter().max() < test.iter().min());
    }

    #[test]
    fn forecast_file_round_trip() {
        let mut routes = BTreeMap::new();
        routes.insert("R01".to_string(), RouteForecast { class: 2, probs: vec![0.25, 0.25, 0.5] });
        let mut cells = BTreeMap::new();
        cells.insert(CellId::new(0, 1), 3.5);
        let b = ForecastBundle { window: TimeWindow::new(0, 3600), routes, cells };
        let mut buf = Vec::new();
        write_forecast(&b, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("kind,id,window_start,window_end,value,prob_0,prob_1,prob_2\n"));
        assert!(text.contains("grid,0_1,1970-01-01T00:00:00Z,1970-01-01T01:00:00Z,3.5,,,\n"));
        assert_eq!(read_forecast(buf.as_slice()).unwrap(), b);
    }
}
