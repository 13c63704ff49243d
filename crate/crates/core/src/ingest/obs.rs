//! Station observation table (`observations.csv`).
//!
//! Header: `station_id,lat,lon,time_utc,visibility_km,present_weather`.
//! Empty visibility or present-weather fields mean missing.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use log::warn;

use crate::dataset::Station;
use crate::error::{Error, Result};
use crate::time::UtcTime;

pub const OBS_HEADER: [&str; 6] = ["station_id", "lat", "lon", "time_utc", "visibility_km", "present_weather"];

/// Observation clock in hours.
pub const OBS_CADENCE_HOURS: i64 = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub visibility_km: Option<f64>,
    pub present_weather: Option<u16>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObservationTable {
    stations: BTreeMap<String, Station>,
    rows: BTreeMap<(String, UtcTime), Observation>,
    warnings: Vec<String>,
}

impl ObservationTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts one record, enforcing (station, time) uniqueness and consistent
    /// station coordinates. Off-cadence times are kept but flagged; assembly
    /// only matches observations on the 3-hourly clock.
    pub fn insert(&mut self, station: Station, time: UtcTime, obs: Observation) -> Result<()> {
        if let Some(v) = obs.visibility_km {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Input(format!("visibility must be finite and ≥ 0, got {v}")));
            }
        }
        match self.stations.get(&station.id) {
            Some(s) if s.lat != station.lat || s.lon != station.lon => {
                return Err(Error::Input(format!(
                    "station {} reported at ({}, {}) and ({}, {})",
                    station.id, s.lat, s.lon, station.lat, station.lon
                )));
            }
            Some(_) => {}
            None => {
                if !station.in_study_area() {
                    self.warn(format!(
                        "station {} at ({}, {}) lies outside the 26.5–33.5°N, 117–126°E study area",
                        station.id, station.lat, station.lon
                    ));
                }
                self.stations.insert(station.id.clone(), station.clone());
            }
        }
        let key = (station.id.clone(), time);
        if self.rows.contains_key(&key) {
            return Err(Error::DuplicateKey { line: 0, key: format!("{},{}", station.id, time) });
        }
        if !time.on_cadence(OBS_CADENCE_HOURS) {
            self.warn(format!("station {} observation at {time} is off the 3-hourly clock", station.id));
        }
        self.rows.insert(key, obs);
        Ok(())
    }

    fn warn(&mut self, msg: String) {
        warn!("{msg}");
        self.warnings.push(msg);
    }

    pub fn stations(&self) -> impl Iterator<Item = &Station> {
        self.stations.values()
    }

    pub fn get(&self, station_id: &str, time: UtcTime) -> Option<&Observation> {
        // BTreeMap<(String, _)> cannot be probed with &str without allocating.
        self.rows.get(&(station_id.to_string(), time))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = (&Station, UtcTime, &Observation)> {
        self.rows.iter().map(|((id, t), o)| (&self.stations[id], *t, o))
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn time_range(&self) -> Option<(UtcTime, UtcTime)> {
        let mut it = self.rows.keys().map(|(_, t)| *t);
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), t| (lo.min(t), hi.max(t))))
    }
}

fn field(rec: &csv::StringRecord, i: usize, line: u64) -> Result<&str> {
    rec.get(i).ok_or_else(|| Error::parse(line, format!("missing column {}", OBS_HEADER[i])))
}

fn parse_f64(s: &str, what: &str, line: u64) -> Result<f64> {
    let v: f64 = s.trim().parse().map_err(|_| Error::parse(line, format!("{what}: not a number: {s:?}")))?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("{what}: non-finite value {s:?}")));
    }
    Ok(v)
}

pub fn parse_observations<R: Read>(reader: R) -> Result<ObservationTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != OBS_HEADER {
        return Err(Error::parse(1, format!("expected header {}", OBS_HEADER.join(","))));
    }
    let mut table = ObservationTable::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != OBS_HEADER.len() {
            return Err(Error::parse(line, format!("expected {} fields, got {}", OBS_HEADER.len(), rec.len())));
        }
        let id = field(&rec, 0, line)?.to_string();
        if id.is_empty() {
            return Err(Error::parse(line, "empty station_id"));
        }
        let lat = parse_f64(field(&rec, 1, line)?, "lat", line)?;
        let lon = parse_f64(field(&rec, 2, line)?, "lon", line)?;
        let time = UtcTime::parse(field(&rec, 3, line)?).map_err(|e| Error::parse(line, e.to_string()))?;
        let vis = match field(&rec, 4, line)? {
            "" => None,
            s => {
                let v = parse_f64(s, "visibility_km", line)?;
                if v < 0.0 {
                    return Err(Error::parse(line, format!("negative visibility {v}")));
                }
                Some(v)
            }
        };
        let weather = match field(&rec, 5, line)? {
            "" => None,
            s => Some(s.parse::<u16>().map_err(|_| Error::parse(line, format!("present_weather: bad code {s:?}")))?),
        };
        let obs = Observation { visibility_km: vis, present_weather: weather };
        table.insert(Station::new(id, lat, lon), time, obs).map_err(|e| match e {
            Error::DuplicateKey { key, .. } => Error::DuplicateKey { line, key },
            other => Error::parse(line, other.to_string()),
        })?;
    }
    Ok(table)
}

pub fn write_observations<W: Write>(table: &ObservationTable, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(OBS_HEADER)?;
    for (st, t, o) in table.rows() {
        w.write_record([
            st.id.clone(),
            st.lat.to_string(),
            st.lon.to_string(),
            t.to_string(),
            o.visibility_km.map(|v| v.to_string()).unwrap_or_default(),
            o.present_weather.map(|c| c.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
