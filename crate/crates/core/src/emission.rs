//! Top-down transportation carbon accounting.
//!
//! Emission is `K · n · l · e` summed over (vehicle type, fuel type) pairs,
//! where `K` is kg CO2 per litre, `e` litres per km, `n` the vehicle count and
//! `l` the mileage per vehicle.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use thiserror::Error;

use crate::geo::{haversine_km, CellId, GridIndex};
use crate::ingest::{TimeWindow, Trajectory};

/// kg CO2 per litre of gasoline.
pub const GASOLINE_KG_PER_L: f64 = 2.73;

/// Fuel economy of a gasoline bus, litres per km.
pub const BUS_GASOLINE_L_PER_KM: f64 = 0.38;

/// Default taxi fuel economy, litres per km.
pub const TAXI_GASOLINE_L_PER_KM: f64 = 0.08;

/// Peak reduction per km an electric bus travels through an area.
pub const PEAK_REDUCTION_KG_PER_KM: f64 = 0.90;

pub const TAXI_VEHICLE_TYPE: &str = "taxi";
pub const BUS_VEHICLE_TYPE: &str = "bus";
pub const GASOLINE_FUEL_TYPE: &str = "gasoline";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmissionError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("no coefficients for vehicle `{0}` fuel `{1}`")]
    MissingCoefficients(String, String),
    #[error("coefficients file: {0}")]
    File(String),
}

/// (vehicle type, fuel type)
pub type FleetKey = (String, String);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficient {
    pub kg_per_l: f64,
    pub l_per_km: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmissionCoefficients {
    entries: BTreeMap<FleetKey, Coefficient>,
}

impl EmissionCoefficients {
    pub fn insert(&mut self, vehicle: &str, fuel: &str, kg_per_l: f64, l_per_km: f64) -> Result<(), EmissionError> {
        if !(kg_per_l.is_finite() && l_per_km.is_finite()) || kg_per_l < 0.0 || l_per_km < 0.0 {
            return Err(EmissionError::InvalidInput(format!(
                "coefficients for {vehicle}/{fuel} must be finite and non-negative"
            )));
        }
        self.entries
            .insert((vehicle.to_string(), fuel.to_string()), Coefficient { kg_per_l, l_per_km });
        Ok(())
    }

    pub fn get(&self, vehicle: &str, fuel: &str) -> Option<Coefficient> {
        self.entries.get(&(vehicle.to_string(), fuel.to_string())).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&FleetKey, &Coefficient)> {
        self.entries.iter()
    }

    /// Gasoline taxis and buses with the default figures.
    pub fn defaults() -> Self {
        let mut c = Self::default();
        c.insert(TAXI_VEHICLE_TYPE, GASOLINE_FUEL_TYPE, GASOLINE_KG_PER_L, TAXI_GASOLINE_L_PER_KM)
            .expect("valid constants");
        c.insert(BUS_VEHICLE_TYPE, GASOLINE_FUEL_TYPE, GASOLINE_KG_PER_L, BUS_GASOLINE_L_PER_KM)
            .expect("valid constants");
        c
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, EmissionError> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let file_err = |e: csv::Error| EmissionError::File(e.to_string());
        let header = r.headers().map_err(file_err)?.clone();
        if header.iter().collect::<Vec<_>>() != ["vehicle_type", "fuel_type", "k_kg_per_l", "e_l_per_km"] {
            return Err(EmissionError::File(format!("unexpected header `{}`", header.iter().collect::<Vec<_>>().join(","))));
        }
        let mut out = Self::default();
        for rec in r.records() {
            let rec = rec.map_err(file_err)?;
            let num = |i: usize| {
                rec[i]
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| EmissionError::File(format!("bad number `{}`", &rec[i])))
            };
            out.insert(&rec[0], &rec[1], num(2)?, num(3)?)?;
        }
        Ok(out)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), EmissionError> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        let file_err = |e: csv::Error| EmissionError::File(e.to_string());
        w.write_record(["vehicle_type", "fuel_type", "k_kg_per_l", "e_l_per_km"]).map_err(file_err)?;
        for ((v, f), c) in &self.entries {
            w.write_record([v.clone(), f.clone(), c.kg_per_l.to_string(), c.l_per_km.to_string()])
                .map_err(file_err)?;
        }
        w.flush().map_err(|e| EmissionError::File(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Mileage {
    pub vehicles: f64,
    pub km_per_vehicle: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MileageTable {
    entries: BTreeMap<FleetKey, Mileage>,
}

impl MileageTable {
    pub fn insert(&mut self, vehicle: &str, fuel: &str, vehicles: f64, km_per_vehicle: f64) {
        self.entries
            .insert((vehicle.to_string(), fuel.to_string()), Mileage { vehicles, km_per_vehicle });
    }

    /// Row whose vehicle-km product equals `total_km`.
    pub fn insert_total(&mut self, vehicle: &str, fuel: &str, vehicles: usize, total_km: f64) {
        let per = if vehicles == 0 { 0.0 } else { total_km / vehicles as f64 };
        self.insert(vehicle, fuel, vehicles as f64, per);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&FleetKey, &Mileage)> {
        self.entries.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Total emission in kg CO2.
pub fn top_down(coeffs: &EmissionCoefficients, mileage: &MileageTable) -> Result<f64, EmissionError> {
    let mut total = 0.0;
    for ((vehicle, fuel), m) in mileage.iter() {
        if !(m.vehicles >= 0.0 && m.km_per_vehicle >= 0.0) {
            return Err(EmissionError::InvalidInput(format!("negative mileage entry for {vehicle}/{fuel}")));
        }
        let c = coeffs
            .get(vehicle, fuel)
            .ok_or_else(|| EmissionError::MissingCoefficients(vehicle.clone(), fuel.clone()))?;
        total += c.kg_per_l * m.vehicles * m.km_per_vehicle * c.l_per_km;
    }
    Ok(total)
}

/// In-window mileage per cell. Each segment between consecutive in-window
/// points is credited to the cell containing its midpoint.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CellMileage {
    pub total_km: f64,
    pub vehicles: BTreeSet<String>,
}

pub fn cell_mileage(
    trajectories: &[Trajectory],
    grid: &GridIndex,
    window: TimeWindow,
) -> BTreeMap<CellId, CellMileage> {
    let mut out: BTreeMap<CellId, CellMileage> = BTreeMap::new();
    for tr in trajectories {
        for pair in tr.points.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if !(window.contains(a.t) && window.contains(b.t)) {
                continue;
            }
            let km = haversine_km(&a.loc, &b.loc);
            if km <= 0.0 {
                continue;
            }
            if let Some(cell) = grid.locate_cell(&a.loc.midpoint(&b.loc)) {
                let entry = out.entry(cell).or_default();
                entry.total_km += km;
                if !entry.vehicles.contains(&tr.vehicle_id) {
                    entry.vehicles.insert(tr.vehicle_id.clone());
                }
            }
        }
    }
    out
}

/// Taxi emission of one cell in the window, kg CO2.
pub fn grid_emission_label(
    trajectories: &[Trajectory],
    grid: &GridIndex,
    cell: CellId,
    window: TimeWindow,
    coeffs: &EmissionCoefficients,
) -> Result<f64, EmissionError> {
    let m = cell_mileage(trajectories, grid, window).remove(&cell).unwrap_or_default();
    label_from_mileage(&m, coeffs)
}

/// Emission labels for every cell of the grid (cells without traffic get 0).
pub fn grid_emission_labels(
    trajectories: &[Trajectory],
    grid: &GridIndex,
    window: TimeWindow,
    coeffs: &EmissionCoefficients,
) -> Result<BTreeMap<CellId, f64>, EmissionError> {
    let mileage = cell_mileage(trajectories, grid, window);
    grid.cells()
        .map(|cell| {
            let m = mileage.get(&cell).cloned().unwrap_or_default();
            Ok((cell, label_from_mileage(&m, coeffs)?))
        })
        .collect()
}

fn label_from_mileage(m: &CellMileage, coeffs: &EmissionCoefficients) -> Result<f64, EmissionError> {
    let mut table = MileageTable::default();
    table.insert_total(TAXI_VEHICLE_TYPE, GASOLINE_FUEL_TYPE, m.vehicles.len(), m.total_km);
    top_down(coeffs, &table)
}

/// Whole-city taxi mileage table: distinct vehicles and total in-window km
/// over segments whose midpoint lies on the grid.
pub fn city_mileage_table(trajectories: &[Trajectory], grid: &GridIndex, window: TimeWindow) -> MileageTable {
    let per_cell = cell_mileage(trajectories, grid, window);
    let total: f64 = per_cell.values().map(|m| m.total_km).sum();
    let vehicles: BTreeSet<&String> = per_cell.values().flat_map(|m| m.vehicles.iter()).collect();
    let mut table = MileageTable::default();
    table.insert_total(TAXI_VEHICLE_TYPE, GASOLINE_FUEL_TYPE, vehicles.len(), total);
    table
}

/// Emission peak cut when an electric bus replaces `km` of traffic.
pub fn peak_reduction(km: f64) -> Result<f64, EmissionError> {
    if km.is_nan() || km < 0.0 {
        return Err(EmissionError::InvalidInput(format!("mileage {km} km")));
    }
    Ok(PEAK_REDUCTION_KG_PER_KM * km)
}
