//! Inverse-distance-weighted interpolation from grid nodes to a point.

use crate::error::{Error, Result};

pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdwConfig {
    /// Weight exponent `p` in `w = d^(−p)`.
    pub power: f64,
    /// Number of nearest non-missing nodes that contribute.
    pub neighbors: usize,
    /// Below this distance (meters) the target snaps to the node value.
    pub epsilon_m: f64,
}

impl Default for IdwConfig {
    fn default() -> Self {
        IdwConfig { power: 2.0, neighbors: 4, epsilon_m: 1e-6 }
    }
}

impl IdwConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.power > 0.0 && self.power.is_finite()) {
            return Err(Error::Config(format!("IDW power must be > 0, got {}", self.power)));
        }
        if self.neighbors == 0 {
            return Err(Error::Config("IDW neighbor count must be ≥ 1".into()));
        }
        if !(self.epsilon_m >= 0.0) {
            return Err(Error::Config("IDW epsilon must be ≥ 0".into()));
        }
        Ok(())
    }
}

/// Haversine distance on a sphere of radius [`EARTH_RADIUS_KM`].
pub fn great_circle_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridNode {
    pub lat: f64,
    pub lon: f64,
    pub value: Option<f64>,
}

/// Weighted mean over already-selected `(distance_km, value)` neighbors.
///
/// A neighbor closer than the epsilon returns its value exactly. The result
/// is clamped to the neighbors' value range, which the exact weighted mean
/// never leaves.
pub fn idw_weighted(neighbors: &[(f64, f64)], cfg: &IdwConfig) -> Result<f64> {
    if neighbors.is_empty() {
        return Err(Error::Interpolation("no contributing nodes".into()));
    }
    if let Some(&(_, v)) = neighbors.iter().find(|(d, _)| d * 1000.0 < cfg.epsilon_m) {
        return Ok(v);
    }
    let mut num = 0.0;
    let mut den = 0.0;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &(d, v) in neighbors {
        let w = d.powf(-cfg.power);
        num += w * v;
        den += w;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    Ok((num / den).clamp(lo, hi))
}

/// Interpolates `field` at (`lat`, `lon`) from the `k` nearest non-missing nodes.
pub fn idw_interpolate(field: &[GridNode], lat: f64, lon: f64, cfg: &IdwConfig) -> Result<f64> {
    let mut cands: Vec<(f64, usize, f64)> = field
        .iter()
        .enumerate()
        .filter_map(|(i, n)| n.value.map(|v| (great_circle_km(lat, lon, n.lat, n.lon), i, v)))
        .collect();
    if cands.len() < cfg.neighbors {
        return Err(Error::Interpolation(format!("{} non-missing nodes, need {}", cands.len(), cfg.neighbors)));
    }
    cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let picked: Vec<(f64, f64)> = cands[..cfg.neighbors].iter().map(|&(d, _, v)| (d, v)).collect();
    idw_weighted(&picked, cfg)
}

/// Nodes of a fixed grid pre-sorted by distance from one target point, so
/// repeated interpolation over many fields skips the distance work.
#[derive(Debug, Clone)]
pub struct Stencil {
    order: Vec<(usize, f64)>,
}

impl Stencil {
    pub fn new(node_coords: &[(f64, f64)], lat: f64, lon: f64) -> Self {
        let mut order: Vec<(usize, f64)> = node_coords
            .iter()
            .enumerate()
            .map(|(i, &(nlat, nlon))| (i, great_circle_km(lat, lon, nlat, nlon)))
            .collect();
        order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        Stencil { order }
    }

    /// Same result as [`idw_interpolate`] over the node values in `values`
    /// (NaN = missing).
    pub fn interpolate(&self, values: &[f32], cfg: &IdwConfig) -> Result<f64> {
        let mut picked: Vec<(f64, f64)> = Vec::with_capacity(cfg.neighbors);
        for &(i, d) in &self.order {
            let v = values[i];
            if !v.is_nan() {
                picked.push((d, f64::from(v)));
                if picked.len() == cfg.neighbors {
                    return idw_weighted(&picked, cfg);
                }
            }
        }
        Err(Error::Interpolation(format!("{} non-missing nodes, need {}", picked.len(), cfg.neighbors)))
    }
}
