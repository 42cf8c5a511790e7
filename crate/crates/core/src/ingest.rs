//! Dataset parsing and passenger-trip derivation.
//!
//! Every dataset is a comma-separated file with a mandatory header. Rows that
//! fail validation are rejected and reported with their line number; they are
//! never repaired. Timestamps are normalized to UTC seconds.

use std::cmp::Ordering;
use std::io::{Read, Write};

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use thiserror::Error;

use crate::geo::GeoPoint;

/// Seconds since the Unix epoch, UTC.
pub type Timestamp = i64;

/// Number of weather condition categories.
pub const WEATHER_CATEGORIES: u8 = 20;

/// Number of POI categories.
pub const POI_CATEGORIES: u8 = 12;

/// Fraction of rejected rows above which a file is treated as corrupt.
pub const MAX_REJECT_FRACTION: f64 = 0.5;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("format error: {0}")]
    Format(String),
    #[error("corrupt input: {rejected} of {total} rows rejected")]
    CorruptInput { rejected: usize, total: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Half-open time interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeWindow {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl TimeWindow {
    pub fn new(start: Timestamp, end: Timestamp) -> Self {
        debug_assert!(start <= end);
        TimeWindow { start, end }
    }

    pub fn contains(&self, t: Timestamp) -> bool {
        self.start <= t && t < self.end
    }

    pub fn duration_s(&self) -> i64 {
        self.end - self.start
    }

    /// Calendar day (UTC) the window starts on.
    pub fn day(&self) -> NaiveDate {
        DateTime::from_timestamp(self.start, 0)
            .map(|d| d.date_naive())
            .unwrap_or_default()
    }
}

pub fn parse_timestamp(s: &str) -> Result<Timestamp, String> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(dt.and_utc().timestamp());
        }
    }
    Err(format!("bad timestamp `{s}`"))
}

pub fn format_timestamp(t: Timestamp) -> String {
    match DateTime::from_timestamp(t, 0) {
        Some(dt) => dt.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
        None => t.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaxiRecord {
    pub taxi_id: String,
    pub t: Timestamp,
    pub loc: GeoPoint,
    pub speed_kmh: f64,
    pub direction_deg: f64,
    pub occupied: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BusRecord {
    pub bus_id: String,
    pub t: Timestamp,
    pub loc: GeoPoint,
    pub speed_kmh: f64,
    pub last_position: String,
    pub current_stop: String,
    pub route_name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcCardRecord {
    pub route_id: String,
    pub bus_id: String,
    pub t: Timestamp,
    pub card_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoiRecord {
    pub poi_id: String,
    pub name: String,
    pub category: u8,
    pub loc: GeoPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeatherRecord {
    pub date: NaiveDate,
    pub temp_high_c: f64,
    pub temp_low_c: f64,
    pub condition: u8,
}

/// Origin and destination of one passenger trip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripOD {
    pub origin: GeoPoint,
    pub origin_t: Timestamp,
    pub dest: GeoPoint,
    pub dest_t: Timestamp,
}

/// A time-ordered sample of a vehicle's position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub loc: GeoPoint,
    pub t: Timestamp,
    pub speed_kmh: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub vehicle_id: String,
    pub points: Vec<TrackPoint>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    /// 1-based line number in the file, header is line 1.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RejectionReport {
    pub total_rows: usize,
    pub rejected: Vec<Rejection>,
}

impl RejectionReport {
    pub fn rejected_count(&self) -> usize {
        self.rejected.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    pub report: RejectionReport,
}

/// A dataset row type with a fixed CSV schema.
pub trait CsvRecord: Sized {
    const HEADER: &'static [&'static str];

    fn from_fields(fields: &csv::StringRecord) -> Result<Self, String>;

    fn to_fields(&self) -> Vec<String>;

    /// Canonical file order. The default keeps input order.
    fn canonical_cmp(a: &Self, b: &Self) -> Ordering {
        let _ = (a, b);
        Ordering::Equal
    }

    /// True when `b` repeats the uniqueness key of `a` (adjacent in canonical order).
    fn duplicates(a: &Self, b: &Self) -> bool {
        let _ = (a, b);
        false
    }
}

fn field<'a>(f: &'a csv::StringRecord, i: usize, name: &str) -> Result<&'a str, String> {
    f.get(i).ok_or_else(|| format!("missing field `{name}`"))
}

fn real(f: &csv::StringRecord, i: usize, name: &str) -> Result<f64, String> {
    let s = field(f, i, name)?;
    let v: f64 = s.trim().parse().map_err(|_| format!("`{name}`: not a number `{s}`"))?;
    if !v.is_finite() {
        return Err(format!("`{name}`: not finite"));
    }
    Ok(v)
}

fn ident(f: &csv::StringRecord, i: usize, name: &str) -> Result<String, String> {
    let s = field(f, i, name)?;
    if s.is_empty() {
        return Err(format!("`{name}`: empty"));
    }
    Ok(s.to_string())
}

fn location(f: &csv::StringRecord, lat: usize, lon: usize) -> Result<GeoPoint, String> {
    GeoPoint::new(real(f, lat, "lat")?, real(f, lon, "lon")?).map_err(|e| e.to_string())
}

fn speed(f: &csv::StringRecord, i: usize) -> Result<f64, String> {
    let v = real(f, i, "speed_kmh")?;
    if v < 0.0 {
        return Err(format!("negative speed {v}"));
    }
    Ok(v)
}

impl CsvRecord for TaxiRecord {
    const HEADER: &'static [&'static str] =
        &["taxi_id", "timestamp", "lat", "lon", "speed_kmh", "direction_deg", "occupied"];

    fn from_fields(f: &csv::StringRecord) -> Result<Self, String> {
        let direction_deg = real(f, 5, "direction_deg")?;
        if !(0.0..360.0).contains(&direction_deg) {
            return Err(format!("direction {direction_deg} outside [0, 360)"));
        }
        let occupied = match field(f, 6, "occupied")?.trim() {
            "0" => false,
            "1" => true,
            other => return Err(format!("occupied must be 0 or 1, got `{other}`")),
        };
        Ok(TaxiRecord {
            taxi_id: ident(f, 0, "taxi_id")?,
            t: parse_timestamp(field(f, 1, "timestamp")?)?,
            loc: location(f, 2, 3)?,
            speed_kmh: speed(f, 4)?,
            direction_deg,
            occupied,
        })
    }

    fn to_fields(&self) -> Vec<String> {
        vec![
            self.taxi_id.clone(),
            format_timestamp(self.t),
            self.loc.lat.to_string(),
            self.loc.lon.to_string(),
            self.speed_kmh.to_string(),
            self.direction_deg.to_string(),
            if self.occupied { "1" } else { "0" }.to_string(),
        ]
    }

    fn canonical_cmp(a: &Self, b: &Self) -> Ordering {
        a.taxi_id.cmp(&b.taxi_id).then(a.t.cmp(&b.t))
    }

    fn duplicates(a: &Self, b: &Self) -> bool {
        a.taxi_id == b.taxi_id && a.t == b.t
    }
}

impl CsvRecord for BusRecord {
    const HEADER: &'static [&'static str] = &[
        "bus_id",
        "timestamp",
        "lat",
        "lon",
        "speed_kmh",
        "last_position",
        "current_stop",
        "route_name",
    ];

    fn from_fields(f: &csv::StringRecord) -> Result<Self, String> {
        Ok(BusRecord {
            bus_id: ident(f, 0, "bus_id")?,
            t: parse_timestamp(field(f, 1, "timestamp")?)?,
            loc: location(f, 2, 3)?,
            speed_kmh: speed(f, 4)?,
            last_position: field(f, 5, "last_position")?.to_string(),
            current_stop: ident(f, 6, "current_stop")?,
            route_name: ident(f, 7, "route_name")?,
        })
    }

    fn to_fields(&self) -> Vec<String> {
        vec![
            self.bus_id.clone(),
            format_timestamp(self.t),
            self.loc.lat.to_string(),
            self.loc.lon.to_string(),
            self.speed_kmh.to_string(),
            self.last_position.clone(),
            self.current_stop.clone(),
            self.route_name.clone(),
        ]
    }

    fn canonical_cmp(a: &Self, b: &Self) -> Ordering {
        a.bus_id.cmp(&b.bus_id).then(a.t.cmp(&b.t))
    }
}

impl CsvRecord for IcCardRecord {
    const HEADER: &'static [&'static str] = &["route_id", "bus_id", "timestamp", "card_id"];

    fn from_fields(f: &csv::StringRecord) -> Result<Self, String> {
        Ok(IcCardRecord {
            route_id: ident(f, 0, "route_id")?,
            bus_id: ident(f, 1, "bus_id")?,
            t: parse_timestamp(field(f, 2, "timestamp")?)?,
            card_id: ident(f, 3, "card_id")?,
        })
    }

    fn to_fields(&self) -> Vec<String> {
        vec![
            self.route_id.clone(),
            self.bus_id.clone(),
            format_timestamp(self.t),
            self.card_id.clone(),
        ]
    }

    fn canonical_cmp(a: &Self, b: &Self) -> Ordering {
        a.t.cmp(&b.t)
    }
}

impl CsvRecord for PoiRecord {
    const HEADER: &'static [&'static str] = &["poi_id", "name", "category", "lat", "lon"];

    fn from_fields(f: &csv::StringRecord) -> Result<Self, String> {
        let raw = field(f, 2, "category")?;
        let category: u8 = raw.trim().parse().map_err(|_| format!("bad category `{raw}`"))?;
        if !(1..=POI_CATEGORIES).contains(&category) {
            return Err(format!("category {category} outside 1..={POI_CATEGORIES}"));
        }
        Ok(PoiRecord {
            poi_id: ident(f, 0, "poi_id")?,
            name: field(f, 1, "name")?.to_string(),
            category,
            loc: location(f, 3, 4)?,
        })
    }

    fn to_fields(&self) -> Vec<String> {
        vec![
            self.poi_id.clone(),
            self.name.clone(),
            self.category.to_string(),
            self.loc.lat.to_string(),
            self.loc.lon.to_string(),
        ]
    }
}

impl CsvRecord for WeatherRecord {
    const HEADER: &'static [&'static str] = &["date", "temp_high_c", "temp_low_c", "condition"];

    fn from_fields(f: &csv::StringRecord) -> Result<Self, String> {
        let raw_date = field(f, 0, "date")?;
        let date = NaiveDate::parse_from_str(raw_date.trim(), "%Y-%m-%d")
            .map_err(|_| format!("bad date `{raw_date}`"))?;
        let temp_high_c = real(f, 1, "temp_high_c")?;
        let temp_low_c = real(f, 2, "temp_low_c")?;
        if temp_low_c > temp_high_c {
            return Err(format!("low {temp_low_c} above high {temp_high_c}"));
        }
        let raw = field(f, 3, "condition")?;
        let condition: u8 = raw.trim().parse().map_err(|_| format!("bad condition `{raw}`"))?;
        if !(1..=WEATHER_CATEGORIES).contains(&condition) {
            return Err(format!("condition {condition} outside 1..={WEATHER_CATEGORIES}"));
        }
        Ok(WeatherRecord { date, temp_high_c, temp_low_c, condition })
    }

    fn to_fields(&self) -> Vec<String> {
        vec![
            self.date.format("%Y-%m-%d").to_string(),
            self.temp_high_c.to_string(),
            self.temp_low_c.to_string(),
            self.condition.to_string(),
        ]
    }

    fn canonical_cmp(a: &Self, b: &Self) -> Ordering {
        a.date.cmp(&b.date)
    }

    fn duplicates(a: &Self, b: &Self) -> bool {
        a.date == b.date
    }
}

/// Parses one dataset file. Fails on a wrong header or when more than half
/// of the rows are rejected.
pub fn parse_csv<T: CsvRecord, R: Read>(input: R) -> Result<Parsed<T>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(input);
    let header = reader
        .headers()
        .map_err(|e| IngestError::Format(format!("unreadable header: {e}")))?
        .clone();
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != T::HEADER {
        return Err(IngestError::Format(format!(
            "expected header `{}`, found `{}`",
            T::HEADER.join(","),
            got.join(",")
        )));
    }

    let mut rows: Vec<(u64, T)> = Vec::new();
    let mut report = RejectionReport::default();
    let mut record = csv::StringRecord::new();
    loop {
        let line = reader.position().line();
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {
                report.total_rows += 1;
                let line = record.position().map(|p| p.line()).unwrap_or(line);
                if record.len() != T::HEADER.len() {
                    report.rejected.push(Rejection {
                        line,
                        reason: format!("expected {} fields, found {}", T::HEADER.len(), record.len()),
                    });
                    continue;
                }
                match T::from_fields(&record) {
                    Ok(r) => rows.push((line, r)),
                    Err(reason) => report.rejected.push(Rejection { line, reason }),
                }
            }
            Err(e) => {
                report.total_rows += 1;
                report.rejected.push(Rejection { line: line + 1, reason: e.to_string() });
            }
        }
    }

    rows.sort_by(|a, b| T::canonical_cmp(&a.1, &b.1));
    let mut records: Vec<T> = Vec::with_capacity(rows.len());
    for (line, r) in rows {
        match records.last() {
            Some(prev) if T::duplicates(prev, &r) => {
                report.rejected.push(Rejection { line, reason: "duplicate key".into() })
            }
            _ => records.push(r),
        }
    }
    report.rejected.sort_by_key(|r| r.line);

    if report.total_rows > 0
        && report.rejected.len() as f64 > MAX_REJECT_FRACTION * report.total_rows as f64
    {
        return Err(IngestError::CorruptInput {
            rejected: report.rejected.len(),
            total: report.total_rows,
        });
    }
    Ok(Parsed { records, report })
}

pub fn write_csv<T: CsvRecord, W: Write>(records: &[T], out: W) -> Result<(), IngestError> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    writer.write_record(T::HEADER)?;
    for r in records {
        writer.write_record(r.to_fields())?;
    }
    writer.flush()?;
    Ok(())
}

/// Which of the five source datasets a file holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Taxi,
    Bus,
    Ic,
    Poi,
    Weather,
}

impl DatasetKind {
    pub fn file_name(&self) -> &'static str {
        match self {
            DatasetKind::Taxi => "taxi.csv",
            DatasetKind::Bus => "bus.csv",
            DatasetKind::Ic => "ic.csv",
            DatasetKind::Poi => "poi.csv",
            DatasetKind::Weather => "weather.csv",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Taxi(Parsed<TaxiRecord>),
    Bus(Parsed<BusRecord>),
    Ic(Parsed<IcCardRecord>),
    Poi(Parsed<PoiRecord>),
    Weather(Parsed<WeatherRecord>),
}

impl Dataset {
    pub fn report(&self) -> &RejectionReport {
        match self {
            Dataset::Taxi(p) => &p.report,
            Dataset::Bus(p) => &p.report,
            Dataset::Ic(p) => &p.report,
            Dataset::Poi(p) => &p.report,
            Dataset::Weather(p) => &p.report,
        }
    }
}

pub fn parse_dataset<R: Read>(kind: DatasetKind, input: R) -> Result<Dataset, IngestError> {
    Ok(match kind {
        DatasetKind::Taxi => Dataset::Taxi(parse_csv(input)?),
        DatasetKind::Bus => Dataset::Bus(parse_csv(input)?),
        DatasetKind::Ic => Dataset::Ic(parse_csv(input)?),
        DatasetKind::Poi => Dataset::Poi(parse_csv(input)?),
        DatasetKind::Weather => Dataset::Weather(parse_csv(input)?),
    })
}

/// Turns each maximal run of occupied records into one trip. Runs of a
/// single record carry no displacement and are dropped.
pub fn extract_trips(records: &[TaxiRecord]) -> Vec<TripOD> {
    let mut trips = Vec::new();
    let mut i = 0;
    while i < records.len() {
        if !records[i].occupied {
            i += 1;
            continue;
        }
        let start = i;
        while i + 1 < records.len() && records[i + 1].occupied {
            i += 1;
        }
        if i > start {
            let (o, d) = (&records[start], &records[i]);
            trips.push(TripOD { origin: o.loc, origin_t: o.t, dest: d.loc, dest_t: d.t });
        }
        i += 1;
    }
    trips
}

/// Trips of every taxi; `records` must be in canonical (taxi, time) order.
pub fn extract_all_trips(records: &[TaxiRecord]) -> Vec<TripOD> {
    records
        .chunk_by(|a, b| a.taxi_id == b.taxi_id)
        .flat_map(extract_trips)
        .collect()
}

/// Groups canonical-order taxi records into per-vehicle trajectories.
pub fn trajectories(records: &[TaxiRecord]) -> Vec<Trajectory> {
    records
        .chunk_by(|a, b| a.taxi_id == b.taxi_id)
        .map(|run| Trajectory {
            vehicle_id: run[0].taxi_id.clone(),
            points: run
                .iter()
                .map(|r| TrackPoint { loc: r.loc, t: r.t, speed_kmh: r.speed_kmh })
                .collect(),
        })
        .collect()
}
