//! Mobility, geographic and meteorological features per affecting region,
//! route and grid cell, plus the demand label and POI category selection.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use thiserror::Error;

use crate::geo::{haversine_km, AffectingRegion, BusRoute, CellId, GeoPoint, GridIndex, REGIONS_PER_ROUTE};
use crate::ingest::{
    format_timestamp, parse_timestamp, IcCardRecord, PoiRecord, TimeWindow, Trajectory, TripOD, WeatherRecord,
    POI_CATEGORIES, WEATHER_CATEGORIES,
};

/// Number of POI categories kept as features.
pub const SELECTED_CATEGORIES: usize = 8;

/// The reference category set, in rank order.
pub const REFERENCE_CATEGORIES: [u8; SELECTED_CATEGORIES] = [7, 4, 2, 3, 12, 10, 5, 1];

/// N, E, D, f_in, f_out and eight POI counts.
pub const REGION_BLOCK_DIM: usize = 5 + SELECTED_CATEGORIES;

/// f_h, f_o and the one-hot weather condition.
pub const METEO_DIM: usize = 2 + WEATHER_CATEGORIES as usize;

pub const ROUTE_FEATURE_DIM: usize = REGIONS_PER_ROUTE * REGION_BLOCK_DIM + METEO_DIM;

pub const GRID_FEATURE_DIM: usize = REGION_BLOCK_DIM + METEO_DIM;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("undefined statistic: {0}")]
    UndefinedStat(&'static str),
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(&'static str),
    #[error("invalid category: {0}")]
    InvalidCategory(String),
    #[error("category selection failed: {0}")]
    Selection(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("bin edges must start at 0 and increase: {0:?}")]
    BinEdges(Vec<u64>),
    #[error("features file: {0}")]
    File(String),
}

/// Anything that can decide whether a location lies inside it.
pub trait Scope {
    fn contains(&self, p: &GeoPoint) -> bool;
}

impl Scope for AffectingRegion {
    fn contains(&self, p: &GeoPoint) -> bool {
        AffectingRegion::contains(self, p)
    }
}

/// One grid cell viewed as a feature scope.
#[derive(Debug, Clone, Copy)]
pub struct CellScope<'a> {
    pub grid: &'a GridIndex,
    pub cell: CellId,
}

impl Scope for CellScope<'_> {
    fn contains(&self, p: &GeoPoint) -> bool {
        self.grid.locate_cell(p) == Some(self.cell)
    }
}

/// Number of distinct vehicles observed at least once inside the scope
/// during the window. Repeated passes count once.
pub fn traffic_volume<S: Scope + ?Sized>(trajectories: &[Trajectory], scope: &S, window: TimeWindow) -> u32 {
    trajectories
        .iter()
        .filter(|tr| tr.points.iter().any(|p| window.contains(p.t) && scope.contains(&p.loc)))
        .map(|tr| tr.vehicle_id.as_str())
        .collect::<BTreeSet<_>>()
        .len() as u32
}

/// Mean passing speed and its time-weighted deviation, km/h.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedStats {
    pub mean_kmh: f64,
    pub std_kmh: f64,
}

/// Average passing speed and speed deviation over the maximal in-scope,
/// in-window point sequences of every trajectory.
///
/// The mean is total sequence length over total elapsed time. Each point
/// except the last of its sequence weighs its recorded speed by the time to
/// the next point.
pub fn passing_speed_stats<S: Scope + ?Sized>(
    trajectories: &[Trajectory],
    scope: &S,
    window: TimeWindow,
) -> Result<SpeedStats, FeatureError> {
    let mut length_km = 0.0;
    let mut elapsed_s = 0.0;
    // (recorded speed, seconds to next point)
    let mut weighted: Vec<(f64, f64)> = Vec::new();
    for tr in trajectories {
        let inside = |i: usize| {
            let p = &tr.points[i];
            window.contains(p.t) && scope.contains(&p.loc)
        };
        let mut i = 0;
        while i < tr.points.len() {
            if !inside(i) {
                i += 1;
                continue;
            }
            while i + 1 < tr.points.len() && inside(i + 1) {
                let (a, b) = (&tr.points[i], &tr.points[i + 1]);
                let dt = (b.t - a.t).abs() as f64;
                length_km += haversine_km(&a.loc, &b.loc);
                elapsed_s += dt;
                weighted.push((a.speed_kmh, dt));
                i += 1;
            }
            i += 1;
        }
    }
    if elapsed_s == 0.0 {
        return Err(FeatureError::UndefinedStat("no in-scope dwell time"));
    }
    let mean_kmh = length_km / (elapsed_s / 3600.0);
    let var = weighted.iter().map(|(v, dt)| (mean_kmh - v).powi(2) * dt).sum::<f64>() / elapsed_s;
    Ok(SpeedStats { mean_kmh, std_kmh: var.sqrt() })
}

/// Entering and leaving passenger flows: trips with exactly one endpoint in
/// the scope and both timestamps in the window.
pub fn flow_in_out<S: Scope + ?Sized>(trips: &[TripOD], scope: &S, window: TimeWindow) -> (u32, u32) {
    let mut flow_in = 0;
    let mut flow_out = 0;
    for trip in trips {
        if !(window.contains(trip.origin_t) && window.contains(trip.dest_t)) {
            continue;
        }
        match (scope.contains(&trip.origin), scope.contains(&trip.dest)) {
            (false, true) => flow_in += 1,
            (true, false) => flow_out += 1,
            _ => {}
        }
    }
    (flow_in, flow_out)
}

/// Ordered set of eight distinct POI categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CategorySet([u8; SELECTED_CATEGORIES]);

impl CategorySet {
    pub fn new(categories: [u8; SELECTED_CATEGORIES]) -> Result<Self, FeatureError> {
        let distinct: BTreeSet<u8> = categories.iter().copied().collect();
        if distinct.len() != SELECTED_CATEGORIES || categories.iter().any(|c| !(1..=POI_CATEGORIES).contains(c)) {
            return Err(FeatureError::InvalidCategory(format!("{categories:?}")));
        }
        Ok(CategorySet(categories))
    }

    pub fn reference() -> Self {
        CategorySet(REFERENCE_CATEGORIES)
    }

    pub fn as_array(&self) -> &[u8; SELECTED_CATEGORIES] {
        &self.0
    }
}

impl Default for CategorySet {
    fn default() -> Self {
        Self::reference()
    }
}

/// θ(C_i, scope) for each category of `categories`, in the set's order.
pub fn poi_counts<S: Scope + ?Sized>(
    pois: &[PoiRecord],
    scope: &S,
    categories: &CategorySet,
) -> [u32; SELECTED_CATEGORIES] {
    let mut counts = [0u32; SELECTED_CATEGORIES];
    for poi in pois {
        if let Some(slot) = categories.0.iter().position(|&c| c == poi.category) {
            if scope.contains(&poi.loc) {
                counts[slot] += 1;
            }
        }
    }
    counts
}

/// Pearson correlation with population moments.
pub fn pearson_cc(x: &[f64], y: &[f64]) -> Result<f64, FeatureError> {
    if x.len() != y.len() {
        return Err(FeatureError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(FeatureError::UndefinedCorrelation("fewer than two observations"));
    }
    let constant = |v: &[f64]| v.iter().all(|&e| e == v[0]);
    if constant(x) || constant(y) {
        return Err(FeatureError::UndefinedCorrelation("zero variance"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Per-category correlation with regional demand, for all twelve categories.
/// `None` marks an undefined correlation.
pub fn category_correlations(
    pois: &[PoiRecord],
    regions: &[AffectingRegion],
    demand: &[f64],
) -> Result<Vec<(u8, Option<f64>)>, FeatureError> {
    if regions.len() != demand.len() {
        return Err(FeatureError::LengthMismatch(regions.len(), demand.len()));
    }
    let mut counts = vec![vec![0.0; regions.len()]; POI_CATEGORIES as usize];
    for poi in pois {
        let row = &mut counts[poi.category as usize - 1];
        for (slot, region) in row.iter_mut().zip(regions) {
            if region.contains(&poi.loc) {
                *slot += 1.0;
            }
        }
    }
    Ok((1..=POI_CATEGORIES)
        .zip(&counts)
        .map(|(c, theta)| (c, pearson_cc(theta, demand).ok()))
        .collect())
}

/// The eight categories whose regional counts correlate most strongly (in
/// absolute value) with demand, strongest first. Undefined correlations rank
/// last; ties keep the lower category number first.
pub fn select_top_categories(
    pois: &[PoiRecord],
    regions: &[AffectingRegion],
    demand: &[f64],
) -> Result<CategorySet, FeatureError> {
    if regions.len() < 2 {
        return Err(FeatureError::Selection("need at least two regions".into()));
    }
    if demand.iter().all(|&d| d == demand[0]) {
        return Err(FeatureError::Selection("demand is constant across regions".into()));
    }
    let mut ranked = category_correlations(pois, regions, demand)?;
    if ranked.iter().all(|(_, r)| r.is_none()) {
        return Err(FeatureError::Selection("every category correlation is undefined".into()));
    }
    ranked.sort_by(|(ca, ra), (cb, rb)| match (ra, rb) {
        (Some(a), Some(b)) => b.abs().total_cmp(&a.abs()).then(ca.cmp(cb)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => ca.cmp(cb),
    });
    let mut out = [0u8; SELECTED_CATEGORIES];
    for (slot, (c, _)) in out.iter_mut().zip(ranked) {
        *slot = c;
    }
    CategorySet::new(out)
}

/// `[f_h, f_o, one-hot(f_w)]`.
pub fn meteo_block(w: &WeatherRecord) -> Result<[f64; METEO_DIM], FeatureError> {
    if !(1..=WEATHER_CATEGORIES).contains(&w.condition) {
        return Err(FeatureError::InvalidCategory(format!("weather condition {}", w.condition)));
    }
    let mut out = [0.0; METEO_DIM];
    out[0] = w.temp_high_c;
    out[1] = w.temp_low_c;
    out[1 + w.condition as usize] = 1.0;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RegionFeatures {
    pub volume: u32,
    pub mean_speed_kmh: f64,
    pub speed_std_kmh: f64,
    pub flow_in: u32,
    pub flow_out: u32,
    pub poi_counts: [u32; SELECTED_CATEGORIES],
}

impl RegionFeatures {
    pub fn to_block(&self) -> [f64; REGION_BLOCK_DIM] {
        let mut out = [0.0; REGION_BLOCK_DIM];
        out[0] = self.volume as f64;
        out[1] = self.mean_speed_kmh;
        out[2] = self.speed_std_kmh;
        out[3] = self.flow_in as f64;
        out[4] = self.flow_out as f64;
        for (o, c) in out[5..].iter_mut().zip(self.poi_counts) {
            *o = c as f64;
        }
        out
    }
}

/// Everything a feature extraction reads for one time window.
#[derive(Debug, Clone, Copy)]
pub struct FeatureInputs<'a> {
    pub trajectories: &'a [Trajectory],
    pub trips: &'a [TripOD],
    pub pois: &'a [PoiRecord],
    pub weather: &'a WeatherRecord,
    pub categories: &'a CategorySet,
    pub window: TimeWindow,
}

/// Features of one scope. A scope without in-window dwell time gets zero
/// speed statistics.
pub fn scope_features<S: Scope + ?Sized>(scope: &S, inputs: &FeatureInputs<'_>) -> RegionFeatures {
    let stats = passing_speed_stats(inputs.trajectories, scope, inputs.window)
        .unwrap_or(SpeedStats { mean_kmh: 0.0, std_kmh: 0.0 });
    let (flow_in, flow_out) = flow_in_out(inputs.trips, scope, inputs.window);
    RegionFeatures {
        volume: traffic_volume(inputs.trajectories, scope, inputs.window),
        mean_speed_kmh: stats.mean_kmh,
        speed_std_kmh: stats.std_kmh,
        flow_in,
        flow_out,
        poi_counts: poi_counts(inputs.pois, scope, inputs.categories),
    }
}

/// 217-wide route vector: fifteen region blocks in route order, then the
/// meteorological block. Routes with fewer regions leave trailing blocks zero.
pub fn route_features(route: &BusRoute, inputs: &FeatureInputs<'_>) -> Result<Vec<f64>, FeatureError> {
    let mut out = Vec::with_capacity(ROUTE_FEATURE_DIM);
    for region in route.regions.iter().take(REGIONS_PER_ROUTE) {
        out.extend(scope_features(region, inputs).to_block());
    }
    out.resize(REGIONS_PER_ROUTE * REGION_BLOCK_DIM, 0.0);
    out.extend(meteo_block(inputs.weather)?);
    debug_assert_eq!(out.len(), ROUTE_FEATURE_DIM);
    Ok(out)
}

/// 35-wide cell vector: the region block computed over the cell, then meteo.
pub fn grid_features(grid: &GridIndex, cell: CellId, inputs: &FeatureInputs<'_>) -> Result<Vec<f64>, FeatureError> {
    let mut out = Vec::with_capacity(GRID_FEATURE_DIM);
    out.extend(scope_features(&CellScope { grid, cell }, inputs).to_block());
    out.extend(meteo_block(inputs.weather)?);
    Ok(out)
}

/// Lower edges of the demand classes; the last class is open-ended.
#[derive(Debug, Clone, PartialEq)]
pub struct BinEdges(Vec<u64>);

impl BinEdges {
    pub fn new(edges: Vec<u64>) -> Result<Self, FeatureError> {
        if edges.is_empty() || edges[0] != 0 || edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(FeatureError::BinEdges(edges));
        }
        Ok(BinEdges(edges))
    }

    pub fn edges(&self) -> &[u64] {
        &self.0
    }

    pub fn class_count(&self) -> usize {
        self.0.len()
    }

    pub fn class_of(&self, count: u64) -> usize {
        self.0.partition_point(|&e| e <= count) - 1
    }

    /// Representative trip count of a class: the bin midpoint, and for the
    /// open top bin its lower edge plus half the previous bin's width.
    pub fn representative(&self, class: usize) -> f64 {
        let e = &self.0;
        if class + 1 < e.len() {
            0.5 * (e[class] + e[class + 1]) as f64
        } else if class == 0 {
            e[0] as f64
        } else {
            e[class] as f64 + 0.5 * (e[class] - e[class - 1]) as f64
        }
    }
}

impl Default for BinEdges {
    fn default() -> Self {
        BinEdges(vec![0, 60, 120, 180, 240, 360, 480, 720])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DemandLabel {
    pub trips: u64,
    pub class: usize,
}

/// Bus trips of a route in the window: its IC card boardings.
pub fn demand_label(ic: &[IcCardRecord], route_id: &str, window: TimeWindow, edges: &BinEdges) -> DemandLabel {
    let trips = ic.iter().filter(|r| r.route_id == route_id && window.contains(r.t)).count() as u64;
    DemandLabel { trips, class: edges.class_of(trips) }
}

/// Trips that end inside a region during the window, used as the regional
/// demand signal for category selection.
pub fn regional_demand(trips: &[TripOD], region: &AffectingRegion, window: TimeWindow) -> f64 {
    trips
        .iter()
        .filter(|t| window.contains(t.origin_t) && window.contains(t.dest_t) && region.contains(&t.dest))
        .count() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScopeKind {
    Route,
    Grid,
}

impl ScopeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScopeKind::Route => "route",
            ScopeKind::Grid => "grid",
        }
    }
}

/// One row of a features file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub scope_kind: ScopeKind,
    pub scope_id: String,
    pub window: TimeWindow,
    pub values: Vec<f64>,
    /// Demand class for routes, emission kg for grid cells.
    pub label: f64,
}

pub fn write_feature_rows<W: Write>(rows: &[FeatureRow], out: W) -> Result<(), FeatureError> {
    let dim = rows.first().map(|r| r.values.len()).unwrap_or(0);
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let mut header = vec!["scope_kind".to_string(), "scope_id".into(), "window_start".into(), "window_end".into()];
    header.extend((0..dim).map(|i| format!("f_{i}")));
    header.push("label".into());
    let io = |e: csv::Error| FeatureError::File(e.to_string());
    w.write_record(&header).map_err(io)?;
    for row in rows {
        if row.values.len() != dim {
            return Err(FeatureError::LengthMismatch(dim, row.values.len()));
        }
        let mut rec = vec![
            row.scope_kind.as_str().to_string(),
            row.scope_id.clone(),
            format_timestamp(row.window.start),
            format_timestamp(row.window.end),
        ];
        rec.extend(row.values.iter().map(|v| v.to_string()));
        rec.push(row.label.to_string());
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| FeatureError::File(e.to_string()))
}

pub fn read_feature_rows<R: Read>(input: R) -> Result<Vec<FeatureRow>, FeatureError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = r.headers().map_err(|e| FeatureError::File(e.to_string()))?.clone();
    if header.len() < 5 || &header[0] != "scope_kind" || &header[header.len() - 1] != "label" {
        return Err(FeatureError::File("unexpected header".into()));
    }
    let dim = header.len() - 5;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| FeatureError::File(e.to_string()))?;
        let bad = |what: &str| FeatureError::File(format!("line {}: {what}", rec.position().map_or(0, |p| p.line())));
        let scope_kind = match &rec[0] {
            "route" => ScopeKind::Route,
            "grid" => ScopeKind::Grid,
            _ => return Err(bad("scope_kind")),
        };
        let start = parse_timestamp(&rec[2]).map_err(|_| bad("window_start"))?;
        let end = parse_timestamp(&rec[3]).map_err(|_| bad("window_end"))?;
        let values = (0..dim)
            .map(|i| rec[4 + i].parse::<f64>().map_err(|_| bad("feature value")))
            .collect::<Result<Vec<_>, _>>()?;
        let label = rec[4 + dim].parse::<f64>().map_err(|_| bad("label"))?;
        rows.push(FeatureRow {
            scope_kind,
            scope_id: rec[1].to_string(),
            window: TimeWindow::new(start, end),
            values,
            label,
        });
    }
    Ok(rows)
}
