//! Gridded NWP forecasts in long CSV form (`grid.csv`).
//!
//! Header: `launch_utc,lead_hour,lat,lon,variable,value`. An empty value or
//! `NaN` marks a missing node.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use crate::catalog::VariableCatalog;
use crate::dataset::{missing, MAX_LEAD_HOURS};
use crate::error::{Error, Result};
use crate::time::UtcTime;

pub const GRID_HEADER: [&str; 6] = ["launch_utc", "lead_hour", "lat", "lon", "variable", "value"];

/// Rectilinear node layout; node `i * lons.len() + j` sits at `(lats[i], lons[j])`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridGeometry {
    pub lats: Vec<f64>,
    pub lons: Vec<f64>,
}

impl GridGeometry {
    pub fn new(mut lats: Vec<f64>, mut lons: Vec<f64>) -> Result<Self> {
        if lats.is_empty() || lons.is_empty() {
            return Err(Error::Input("grid needs at least one latitude and longitude".into()));
        }
        if lats.iter().chain(&lons).any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite grid coordinate".into()));
        }
        lats.sort_by(f64::total_cmp);
        lons.sort_by(f64::total_cmp);
        lats.dedup();
        lons.dedup();
        Ok(GridGeometry { lats, lons })
    }

    pub fn n_nodes(&self) -> usize {
        self.lats.len() * self.lons.len()
    }

    pub fn node_coords(&self) -> Vec<(f64, f64)> {
        self.lats.iter().flat_map(|&la| self.lons.iter().map(move |&lo| (la, lo))).collect()
    }

    pub fn node_index(&self, lat: f64, lon: f64) -> Option<usize> {
        let i = self.lats.iter().position(|&v| v == lat)?;
        let j = self.lons.iter().position(|&v| v == lon)?;
        Some(i * self.lons.len() + j)
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        let (la0, la1) = (self.lats[0], *self.lats.last().unwrap());
        let (lo0, lo1) = (self.lons[0], *self.lons.last().unwrap());
        (la0..=la1).contains(&lat) && (lo0..=lo1).contains(&lon)
    }
}

pub type FieldKey = (UtcTime, u16, String);

/// Forecast fields keyed by (launch, lead hour, variable); each field holds
/// one f32 per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastGridSet {
    geometry: GridGeometry,
    fields: BTreeMap<FieldKey, Vec<f32>>,
}

fn check_launch(t: UtcTime) -> Result<()> {
    if t.seconds().rem_euclid(3600) != 0 || !(t.hour() == 0 || t.hour() == 12) {
        return Err(Error::Input(format!("launch {t} is not at 00:00 or 12:00 UTC")));
    }
    Ok(())
}

fn check_lead(lead: u16) -> Result<()> {
    if lead == 0 || lead > MAX_LEAD_HOURS {
        return Err(Error::Input(format!("lead hour {lead} outside 1..={MAX_LEAD_HOURS}")));
    }
    Ok(())
}

impl ForecastGridSet {
    pub fn new(geometry: GridGeometry) -> Self {
        ForecastGridSet { geometry, fields: BTreeMap::new() }
    }

    pub fn insert_field(&mut self, launch: UtcTime, lead: u16, variable: &str, values: Vec<f32>) -> Result<()> {
        check_launch(launch)?;
        check_lead(lead)?;
        if values.len() != self.geometry.n_nodes() {
            return Err(Error::Input(format!(
                "field has {} values for {} nodes",
                values.len(),
                self.geometry.n_nodes()
            )));
        }
        if values.iter().any(|v| v.is_infinite()) {
            return Err(Error::Input("non-finite grid value".into()));
        }
        let key = (launch, lead, variable.to_string());
        if self.fields.insert(key, values).is_some() {
            return Err(Error::DuplicateKey { line: 0, key: format!("{launch},{lead},{variable}") });
        }
        Ok(())
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn field(&self, launch: UtcTime, lead: u16, variable: &str) -> Option<&[f32]> {
        self.fields.get(&(launch, lead, variable.to_string())).map(Vec::as_slice)
    }

    pub fn fields(&self) -> impl Iterator<Item = (&FieldKey, &[f32])> {
        self.fields.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn launches(&self) -> Vec<UtcTime> {
        let set: BTreeSet<UtcTime> = self.fields.keys().map(|k| k.0).collect();
        set.into_iter().collect()
    }

    pub fn variables(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.fields.keys().map(|k| &k.2).collect();
        set.into_iter().cloned().collect()
    }

    pub fn max_lead(&self) -> u16 {
        self.fields.keys().map(|k| k.1).max().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }
}

struct GridRow {
    line: u64,
    launch: UtcTime,
    lead: u16,
    lat: f64,
    lon: f64,
    variable: String,
    value: f32,
}

/// Parses long-form grid CSV. Every variable must be a raw channel of `catalog`.
pub fn parse_grid<R: Read>(reader: R, catalog: &VariableCatalog) -> Result<ForecastGridSet> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != GRID_HEADER {
        return Err(Error::parse(1, format!("expected header {}", GRID_HEADER.join(","))));
    }
    let raw: BTreeSet<&str> = catalog.channels().iter().filter(|c| c.is_raw()).map(|c| c.name.as_str()).collect();
    let mut rows = Vec::new();
    let mut lats = BTreeSet::new();
    let mut lons = BTreeSet::new();
    let mut rec = csv::StringRecord::new();
    while rdr.read_record(&mut rec)? {
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != GRID_HEADER.len() {
            return Err(Error::parse(line, format!("expected {} fields, got {}", GRID_HEADER.len(), rec.len())));
        }
        let launch = UtcTime::parse(&rec[0]).map_err(|e| Error::parse(line, e.to_string()))?;
        check_launch(launch).map_err(|e| Error::parse(line, e.to_string()))?;
        let lead: u16 = rec[1].parse().map_err(|_| Error::parse(line, format!("bad lead_hour {:?}", &rec[1])))?;
        check_lead(lead).map_err(|e| Error::parse(line, e.to_string()))?;
        let coord = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(line, format!("bad {what} {s:?}")))
        };
        let lat = coord(&rec[2], "lat")?;
        let lon = coord(&rec[3], "lon")?;
        let variable = &rec[4];
        if !raw.contains(variable) {
            return Err(Error::parse(line, format!("variable {variable:?} is not a raw catalog channel")));
        }
        let value = match &rec[5] {
            "" | "NaN" | "nan" => missing(),
            s => s
                .parse::<f32>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(line, format!("bad value {s:?}")))?,
        };
        lats.insert(lat.to_bits());
        lons.insert(lon.to_bits());
        rows.push(GridRow { line, launch, lead, lat, lon, variable: variable.to_string(), value });
    }
    let geometry = GridGeometry::new(
        lats.into_iter().map(f64::from_bits).collect(),
        lons.into_iter().map(f64::from_bits).collect(),
    )?;
    let n_nodes = geometry.n_nodes();
    let lat_ix: HashMap<u64, usize> = geometry.lats.iter().enumerate().map(|(i, v)| (v.to_bits(), i)).collect();
    let lon_ix: HashMap<u64, usize> = geometry.lons.iter().enumerate().map(|(i, v)| (v.to_bits(), i)).collect();
    let mut fields: BTreeMap<FieldKey, (Vec<f32>, Vec<bool>)> = BTreeMap::new();
    for r in rows {
        let node = lat_ix[&r.lat.to_bits()] * geometry.lons.len() + lon_ix[&r.lon.to_bits()];
        let key = (r.launch, r.lead, r.variable);
        if let Some((_, seen)) = fields.get(&key) {
            if seen[node] {
                return Err(Error::DuplicateKey {
                    line: r.line,
                    key: format!("{},{},{},{},{}", key.0, key.1, r.lat, r.lon, key.2),
                });
            }
        }
        let entry = fields.entry(key).or_insert_with(|| (vec![missing(); n_nodes], vec![false; n_nodes]));
        entry.1[node] = true;
        entry.0[node] = r.value;
    }
    Ok(ForecastGridSet { geometry, fields: fields.into_iter().map(|(k, (v, _))| (k, v)).collect() })
}

pub fn write_grid<W: Write>(grids: &ForecastGridSet, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(GRID_HEADER)?;
    let coords = grids.geometry.node_coords();
    for ((launch, lead, var), values) in &grids.fields {
        let launch = launch.to_string();
        let lead = lead.to_string();
        for (&(lat, lon), v) in coords.iter().zip(values) {
            let value = if v.is_nan() { String::new() } else { v.to_string() };
            w.write_record([launch.as_str(), lead.as_str(), &lat.to_string(), &lon.to_string(), var, &value])?;
        }
    }
    w.flush()?;
    Ok(())
}
