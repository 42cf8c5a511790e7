//! Spatial primitives: the uniform city grid, station affecting regions and
//! route-to-grid mapping.
//!
//! Distances inside the city use an equirectangular local projection: one
//! degree of latitude is [`KM_PER_DEG`] kilometres and one degree of
//! longitude is the same scaled by the cosine of a reference latitude.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

/// Mean earth radius (IUGG), kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Kilometres per degree along a great circle.
pub const KM_PER_DEG: f64 = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;

/// Default side of an affecting region around a bus station.
pub const DEFAULT_REGION_SIDE_KM: f64 = 0.5;

/// Default grid cell size.
pub const DEFAULT_CELL_SIZE_KM: f64 = 5.0;

/// Number of affecting regions sampled per route.
pub const REGIONS_PER_ROUTE: usize = 15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("invalid coordinate: lat {lat}, lon {lon}")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid route {route_id}: {reason}")]
    InvalidRoute { route_id: String, reason: String },
    #[error("malformed cell id `{0}`")]
    BadCellId(String),
}

/// WGS-84 position in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !(lat.is_finite() && lon.is_finite())
            || !(-90.0..=90.0).contains(&lat)
            || !(-180.0..=180.0).contains(&lon)
        {
            return Err(GeoError::InvalidCoordinate { lat, lon });
        }
        Ok(GeoPoint { lat, lon })
    }

    /// Point displaced by (`east_km`, `north_km`) using the local projection
    /// at this point's latitude.
    pub fn offset_km(&self, east_km: f64, north_km: f64) -> GeoPoint {
        GeoPoint {
            lat: self.lat + north_km / KM_PER_DEG,
            lon: self.lon + east_km / (KM_PER_DEG * self.lat.to_radians().cos()),
        }
    }

    pub fn midpoint(&self, other: &GeoPoint) -> GeoPoint {
        GeoPoint {
            lat: 0.5 * (self.lat + other.lat),
            lon: 0.5 * (self.lon + other.lon),
        }
    }
}

/// Great-circle distance in kilometres.
pub fn haversine_km(a: &GeoPoint, b: &GeoPoint) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Row/column address of a grid cell. Row 0 is the southern-most row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellId {
    pub row: u32,
    pub col: u32,
}

impl CellId {
    pub fn new(row: u32, col: u32) -> Self {
        CellId { row, col }
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.row, self.col)
    }
}

impl FromStr for CellId {
    type Err = GeoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || GeoError::BadCellId(s.to_string());
        let (r, c) = s.split_once('_').ok_or_else(bad)?;
        Ok(CellId {
            row: r.parse().map_err(|_| bad())?,
            col: c.parse().map_err(|_| bad())?,
        })
    }
}

/// Uniform partition of a bounding box into square cells.
///
/// Cells are half-open (closed on their south and west sides); the outermost
/// north and east edges of the covered area are closed. The last row and
/// column may overhang the bounding box so that every cell keeps the same size.
#[derive(Debug, Clone, PartialEq)]
pub struct GridIndex {
    pub origin: GeoPoint,
    pub cell_size_km: f64,
    pub rows: u32,
    pub cols: u32,
    ref_lat: f64,
}

/// Box extents within this tolerance of a whole number of cells do not
/// produce an extra overhanging row or column.
const CEIL_TOLERANCE: f64 = 1e-9;

pub fn partition_city(sw: GeoPoint, ne: GeoPoint, cell_size_km: f64) -> Result<GridIndex, GeoError> {
    if !(cell_size_km.is_finite() && cell_size_km > 0.0) {
        return Err(GeoError::InvalidGeometry(format!("cell size {cell_size_km} km")));
    }
    if !(ne.lat > sw.lat && ne.lon > sw.lon) {
        return Err(GeoError::InvalidGeometry(format!(
            "degenerate bounding box ({}, {}) .. ({}, {})",
            sw.lat, sw.lon, ne.lat, ne.lon
        )));
    }
    let ref_lat = 0.5 * (sw.lat + ne.lat);
    let height_km = (ne.lat - sw.lat) * KM_PER_DEG;
    let width_km = (ne.lon - sw.lon) * KM_PER_DEG * ref_lat.to_radians().cos();
    let count = |extent: f64| ((extent / cell_size_km) - CEIL_TOLERANCE).ceil().max(1.0) as u32;
    Ok(GridIndex {
        origin: sw,
        cell_size_km,
        rows: count(height_km),
        cols: count(width_km),
        ref_lat,
    })
}

impl GridIndex {
    /// Latitude whose cosine scales longitude differences.
    pub fn reference_latitude(&self) -> f64 {
        self.ref_lat
    }

    /// Kilometre offsets (east, north) of `p` from the grid origin.
    pub fn project(&self, p: &GeoPoint) -> (f64, f64) {
        let x = (p.lon - self.origin.lon) * KM_PER_DEG * self.ref_lat.to_radians().cos();
        let y = (p.lat - self.origin.lat) * KM_PER_DEG;
        (x, y)
    }

    pub fn unproject(&self, x_km: f64, y_km: f64) -> GeoPoint {
        GeoPoint {
            lat: self.origin.lat + y_km / KM_PER_DEG,
            lon: self.origin.lon + x_km / (KM_PER_DEG * self.ref_lat.to_radians().cos()),
        }
    }

    pub fn width_km(&self) -> f64 {
        self.cols as f64 * self.cell_size_km
    }

    pub fn height_km(&self) -> f64 {
        self.rows as f64 * self.cell_size_km
    }

    pub fn cell_count(&self) -> usize {
        self.rows as usize * self.cols as usize
    }

    /// All cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = CellId> + '_ {
        (0..self.rows).flat_map(move |r| (0..self.cols).map(move |c| CellId::new(r, c)))
    }

    pub fn contains_cell(&self, cell: CellId) -> bool {
        cell.row < self.rows && cell.col < self.cols
    }

    /// Cell rectangle in projected kilometres: (x0, y0, x1, y1).
    pub fn cell_rect_km(&self, cell: CellId) -> (f64, f64, f64, f64) {
        let s = self.cell_size_km;
        let (x0, y0) = (cell.col as f64 * s, cell.row as f64 * s);
        (x0, y0, x0 + s, y0 + s)
    }

    pub fn cell_center(&self, cell: CellId) -> GeoPoint {
        let (x0, y0, x1, y1) = self.cell_rect_km(cell);
        self.unproject(0.5 * (x0 + x1), 0.5 * (y0 + y1))
    }

    pub fn locate_cell(&self, p: &GeoPoint) -> Option<CellId> {
        let (x, y) = self.project(p);
        self.locate_km(x, y)
    }

    pub(crate) fn locate_km(&self, x: f64, y: f64) -> Option<CellId> {
        if !(x >= 0.0 && y >= 0.0 && x <= self.width_km() && y <= self.height_km()) {
            return None;
        }
        let col = ((x / self.cell_size_km).floor() as u32).min(self.cols - 1);
        let row = ((y / self.cell_size_km).floor() as u32).min(self.rows - 1);
        Some(CellId { row, col })
    }

    /// Cells traversed by the straight segment `a`→`b` in the projected plane.
    pub fn segment_cells(&self, a: &GeoPoint, b: &GeoPoint) -> BTreeSet<CellId> {
        let (ax, ay) = self.project(a);
        let (bx, by) = self.project(b);
        let mut cuts = vec![0.0, 1.0];
        let s = self.cell_size_km;
        for (from, to, lines) in [(ax, bx, self.cols), (ay, by, self.rows)] {
            if from == to {
                continue;
            }
            let (lo, hi) = if from < to { (from, to) } else { (to, from) };
            let k_lo = (lo / s).ceil().max(0.0) as i64;
            let k_hi = ((hi / s).floor()).min(lines as f64) as i64;
            for k in k_lo..=k_hi {
                let t = (k as f64 * s - from) / (to - from);
                if t > 0.0 && t < 1.0 {
                    cuts.push(t);
                }
            }
        }
        cuts.sort_by(f64::total_cmp);
        let mut out = BTreeSet::new();
        for p in [(ax, ay), (bx, by)] {
            if let Some(c) = self.locate_km(p.0, p.1) {
                out.insert(c);
            }
        }
        for w in cuts.windows(2) {
            if w[1] > w[0] {
                let t = 0.5 * (w[0] + w[1]);
                if let Some(c) = self.locate_km(ax + t * (bx - ax), ay + t * (by - ay)) {
                    out.insert(c);
                }
            }
        }
        out
    }
}

/// Axis-aligned square around a bus station.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffectingRegion {
    pub center: GeoPoint,
    pub side_km: f64,
}

impl AffectingRegion {
    pub fn new(center: GeoPoint, side_km: f64) -> Result<Self, GeoError> {
        if !(side_km.is_finite() && side_km > 0.0) {
            return Err(GeoError::InvalidGeometry(format!("region side {side_km} km")));
        }
        Ok(AffectingRegion { center, side_km })
    }

    /// Boundary counts as inside.
    pub fn contains(&self, p: &GeoPoint) -> bool {
        let half = 0.5 * self.side_km;
        let dx = (p.lon - self.center.lon) * KM_PER_DEG * self.center.lat.to_radians().cos();
        let dy = (p.lat - self.center.lat) * KM_PER_DEG;
        dx.abs() <= half && dy.abs() <= half
    }
}

pub fn region_contains(region: &AffectingRegion, p: &GeoPoint) -> bool {
    region.contains(p)
}

/// A bus route: ordered stations plus the affecting regions features are
/// computed over, kept in route order.
#[derive(Debug, Clone, PartialEq)]
pub struct BusRoute {
    pub route_id: String,
    pub stations: Vec<GeoPoint>,
    pub regions: Vec<AffectingRegion>,
}

impl BusRoute {
    /// Builds a route whose regions are `count` stations sampled uniformly
    /// without replacement (all stations when the route is shorter).
    pub fn with_sampled_regions<R: Rng + ?Sized>(
        route_id: impl Into<String>,
        stations: Vec<GeoPoint>,
        side_km: f64,
        count: usize,
        rng: &mut R,
    ) -> Result<Self, GeoError> {
        let route_id = route_id.into();
        if stations.len() < 2 {
            return Err(GeoError::InvalidRoute {
                route_id,
                reason: format!("{} station(s), need at least 2", stations.len()),
            });
        }
        let mut picked: Vec<usize> = if stations.len() > count {
            rand::seq::index::sample(rng, stations.len(), count).into_vec()
        } else {
            (0..stations.len()).collect()
        };
        picked.sort_unstable();
        let regions = picked
            .into_iter()
            .map(|i| AffectingRegion::new(stations[i], side_km))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(BusRoute { route_id, stations, regions })
    }

    /// Seeded variant: the sampling stream depends on `seed` and the route id only.
    pub fn with_seeded_regions(
        route_id: impl Into<String>,
        stations: Vec<GeoPoint>,
        side_km: f64,
        count: usize,
        seed: u64,
    ) -> Result<Self, GeoError> {
        use rand::SeedableRng;
        let route_id = route_id.into();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ fnv1a(route_id.as_bytes()));
        Self::with_sampled_regions(route_id, stations, side_km, count, &mut rng)
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Cells containing a station or traversed by a segment between consecutive stations.
pub fn grids_crossed(route: &BusRoute, index: &GridIndex) -> BTreeSet<CellId> {
    let mut out: BTreeSet<CellId> = route.stations.iter().filter_map(|s| index.locate_cell(s)).collect();
    for pair in route.stations.windows(2) {
        out.extend(index.segment_cells(&pair[0], &pair[1]));
    }
    out
}
