//! Route-level emission totals, min-max normalization and greedy top-k
//! route selection.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::Write;

use thiserror::Error;

use crate::features::BinEdges;
use crate::geo::{grids_crossed, BusRoute, CellId, GridIndex};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecommendError {
    #[error("route {route_id} crosses cell {cell} with no emission prediction")]
    Coverage { route_id: String, cell: CellId },
    #[error("empty route universe")]
    Empty,
    #[error("route universes differ: {0}")]
    Universe(String),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("non-finite value for route {0}")]
    NonFinite(String),
    #[error("write failed: {0}")]
    File(String),
}

/// Total predicted emission over the cells a route crosses.
pub fn route_tce(route: &BusRoute, nu: &BTreeMap<CellId, f64>, grid: &GridIndex) -> Result<f64, RecommendError> {
    grids_crossed(route, grid).into_iter().try_fold(0.0, |acc, cell| match nu.get(&cell) {
        Some(v) => Ok(acc + v),
        None => Err(RecommendError::Coverage { route_id: route.route_id.clone(), cell }),
    })
}

/// Min-max scaling to [0, 1]. When every value is equal the range is
/// degenerate: all values map to 0 and the returned flag is set.
pub fn minmax_normalize(values: &[f64]) -> (Vec<f64>, bool) {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() || max <= min {
        return (vec![0.0; values.len()], true);
    }
    let range = max - min;
    (values.iter().map(|v| (v - min) / range).collect(), false)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteScore {
    pub route_id: String,
    pub mu: f64,
    pub theta: f64,
    pub mu_norm: f64,
    pub theta_norm: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recommendation {
    pub routes: Vec<RouteScore>,
    pub mu_degenerate: bool,
    pub theta_degenerate: bool,
}

/// Full ranking by `μ′ + ϑ′` descending, ties by route id ascending.
pub fn rank_routes(mu: &BTreeMap<String, f64>, theta: &BTreeMap<String, f64>) -> Result<Recommendation, RecommendError> {
    if mu.is_empty() {
        return Err(RecommendError::Empty);
    }
    if mu.len() != theta.len() || mu.keys().any(|k| !theta.contains_key(k)) {
        let missing: Vec<&String> = mu.keys().filter(|k| !theta.contains_key(*k)).chain(theta.keys().filter(|k| !mu.contains_key(*k))).collect();
        return Err(RecommendError::Universe(format!("{missing:?}")));
    }
    if let Some((id, _)) = mu.iter().chain(theta.iter()).find(|(_, v)| !v.is_finite()) {
        return Err(RecommendError::NonFinite(id.clone()));
    }
    let ids: Vec<&String> = mu.keys().collect();
    let mu_raw: Vec<f64> = mu.values().copied().collect();
    let theta_raw: Vec<f64> = ids.iter().map(|id| theta[*id]).collect();
    let (mu_n, mu_degenerate) = minmax_normalize(&mu_raw);
    let (theta_n, theta_degenerate) = minmax_normalize(&theta_raw);
    let mut routes: Vec<RouteScore> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| RouteScore {
            route_id: (*id).clone(),
            mu: mu_raw[i],
            theta: theta_raw[i],
            mu_norm: mu_n[i],
            theta_norm: theta_n[i],
            score: mu_n[i] + theta_n[i],
        })
        .collect();
    routes.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal).then_with(|| a.route_id.cmp(&b.route_id)));
    Ok(Recommendation { routes, mu_degenerate, theta_degenerate })
}

/// The first `min(k, |R|)` routes of [`rank_routes`].
pub fn recommend_topk(mu: &BTreeMap<String, f64>, theta: &BTreeMap<String, f64>, k: usize) -> Result<Recommendation, RecommendError> {
    if k == 0 {
        return Err(RecommendError::ZeroK);
    }
    let mut rec = rank_routes(mu, theta)?;
    rec.routes.truncate(k);
    Ok(rec)
}

/// How a predicted demand class becomes the scalar `μ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DemandScalar {
    /// Representative trip count of the argmax class.
    #[default]
    Midpoint,
    /// Expectation of the representative counts under the class probabilities.
    Expected,
}

impl DemandScalar {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "midpoint" => Some(DemandScalar::Midpoint),
            "expected" => Some(DemandScalar::Expected),
            _ => None,
        }
    }

    pub fn value(&self, class: usize, probs: &[f64], edges: &BinEdges) -> f64 {
        match self {
            DemandScalar::Midpoint => edges.representative(class),
            DemandScalar::Expected => probs.iter().enumerate().map(|(c, p)| p * edges.representative(c)).sum(),
        }
    }
}

pub const RECOMMENDATION_HEADER: [&str; 7] = ["rank", "route_id", "mu", "theta", "mu_norm", "theta_norm", "score"];

pub fn write_recommendation<W: Write>(routes: &[RouteScore], out: W) -> Result<(), RecommendError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let io = |e: csv::Error| RecommendError::File(e.to_string());
    w.write_record(RECOMMENDATION_HEADER).map_err(io)?;
    for (i, r) in routes.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            r.route_id.clone(),
            r.mu.to_string(),
            r.theta.to_string(),
            r.mu_norm.to_string(),
            r.theta_norm.to_string(),
            r.score.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| RecommendError::File(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{partition_city, AffectingRegion, GeoPoint};

    fn map(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(minmax_normalize(&[2.0, 4.0, 6.0]), (vec![0.0, 0.5, 1.0], false));
        assert_eq!(minmax_normalize(&[3.0, 3.0]), (vec![0.0, 0.0], true));
    }

    #[test]
    fn topk_orders_and_breaks_ties() {
        let mu = map(&[("b", 1.0), ("a", 1.0), ("c", 0.0)]);
        let theta = map(&[("b", 5.0), ("a", 5.0), ("c", 9.0)]);
        let rec = recommend_topk(&mu, &theta, 10).unwrap();
        let ids: Vec<&str> = rec.routes.iter().map(|r| r.route_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(recommend_topk(&mu, &theta, 1).unwrap().routes[0].route_id, "a");
        assert!(recommend_topk(&mu, &theta, 0).is_err());
        assert!(recommend_topk(&BTreeMap::new(), &BTreeMap::new(), 1).is_err());
        assert!(recommend_topk(&mu, &map(&[("a", 1.0)]), 1).is_err());
    }

    #[test]
    fn tce_sums_crossed_cells() {
        let grid = partition_city(GeoPoint::new(22.0, 113.0).unwrap(), GeoPoint::new(22.1, 113.1).unwrap(), 5.0).unwrap();
        let a = grid.cell_center(CellId::new(0, 0));
        let b = a.offset_km(0.5, 0.0);
        let route = BusRoute {
            route_id: "r".into(),
            stations: vec![a, b],
            regions: vec![AffectingRegion::new(a, 0.5).unwrap()],
        };
        let mut nu: BTreeMap<CellId, f64> = grid.cells().map(|c| (c, 1.0)).collect();
        nu.insert(CellId::new(0, 0), 5.0);
        assert_eq!(route_tce(&route, &nu, &grid).unwrap(), 5.0);
        nu.remove(&CellId::new(0, 0));
        assert!(matches!(route_tce(&route, &nu, &grid), Err(RecommendError::Coverage { .. })));
    }

    #[test]
    fn demand_scalars() {
        let edges = BinEdges::default();
        assert_eq!(DemandScalar::Midpoint.value(0, &[], &edges), 30.0);
        assert_eq!(DemandScalar::Midpoint.value(7, &[], &edges), 840.0);
        let mut p = vec![0.0; 8];
        p[1] = 0.5;
        p[2] = 0.5;
        assert_eq!(DemandScalar::Expected.value(1, &p, &edges), 120.0);
    }
}
