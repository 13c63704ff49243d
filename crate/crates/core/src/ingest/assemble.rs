//! Builds the sample × variable × lead tensor from parsed observations and
//! forecast grids.

use log::warn;
use rayon::prelude::*;

use super::grid::{ForecastGridSet, GridGeometry};
use super::idw::{IdwConfig, Stencil};
use super::obs::{ObservationTable, OBS_CADENCE_HOURS};
use crate::catalog::{derive_channel, VariableCatalog};
use crate::dataset::{from_opt, is_fog_weather_code, missing, opt, Dataset, SampleMeta, Station, PRIOR_OBS_OFFSETS};
use crate::error::{Error, Result};
use crate::time::UtcTime;

pub const DEFAULT_LEAD_HOURS: u16 = 60;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssembleConfig {
    pub idw: IdwConfig,
    pub lead_hours: u16,
}

impl Default for AssembleConfig {
    fn default() -> Self {
        AssembleConfig { idw: IdwConfig::default(), lead_hours: DEFAULT_LEAD_HOURS }
    }
}

#[derive(Debug, Clone)]
pub struct Assembled {
    pub dataset: Dataset,
    pub warnings: Vec<String>,
}

/// Read access to forecast fields, one f32 per grid node.
pub trait FieldSource: Sync {
    fn geometry(&self) -> &GridGeometry;
    fn launches(&self) -> Vec<UtcTime>;
    fn max_lead(&self) -> u16;
    fn has_variable(&self, name: &str) -> bool;
    fn field(&self, launch: UtcTime, lead: u16, variable: &str) -> Option<&[f32]>;
}

impl FieldSource for ForecastGridSet {
    fn geometry(&self) -> &GridGeometry {
        ForecastGridSet::geometry(self)
    }

    fn launches(&self) -> Vec<UtcTime> {
        ForecastGridSet::launches(self)
    }

    fn max_lead(&self) -> u16 {
        ForecastGridSet::max_lead(self)
    }

    fn has_variable(&self, name: &str) -> bool {
        self.variables().iter().any(|v| v == name)
    }

    fn field(&self, launch: UtcTime, lead: u16, variable: &str) -> Option<&[f32]> {
        ForecastGridSet::field(self, launch, lead, variable)
    }
}

/// Raw values at one station for one (launch, lead), interpolated with IDW
/// and rounded to f32, followed by derived channels computed from those
/// rounded values.
pub(crate) fn station_channels(
    catalog: &VariableCatalog,
    raw_fields: &[Option<&[f32]>],
    stencil: &Stencil,
    idw: &IdwConfig,
    out: &mut [f32],
    interp_failures: &mut usize,
) {
    let mut raw_iter = raw_fields.iter();
    for (m, ch) in catalog.channels().iter().enumerate() {
        if ch.is_raw() {
            let field = raw_iter.next().expect("one field slot per raw channel");
            out[m] = match field {
                Some(values) => match stencil.interpolate(values, idw) {
                    Ok(v) => v as f32,
                    Err(_) => {
                        *interp_failures += 1;
                        missing()
                    }
                },
                None => missing(),
            };
        }
    }
    for d in catalog.derivations() {
        let args: Vec<Option<f64>> = d.inputs.iter().map(|&i| opt(out[i]).map(f64::from)).collect();
        out[d.index] = from_opt(derive_channel(d.formula, &args).map(|v| v as f32));
    }
}

pub fn assemble_dataset<G: FieldSource>(
    obs: &ObservationTable,
    grids: &G,
    catalog: &VariableCatalog,
    cfg: &AssembleConfig,
) -> Result<Assembled> {
    cfg.idw.validate()?;
    let t = cfg.lead_hours;
    if grids.max_lead() > t {
        return Err(Error::Config(format!("grid carries lead hour {} beyond the {t}-hour horizon", grids.max_lead())));
    }
    let raw_names: Vec<&str> = catalog.channels().iter().filter(|c| c.is_raw()).map(|c| c.name.as_str()).collect();
    for name in &raw_names {
        if !grids.has_variable(name) {
            return Err(Error::Config(format!("catalog channel {name} has no fields in the grid")));
        }
    }

    let mut warnings = Vec::new();
    let geometry = grids.geometry();
    let mut stations: Vec<Station> = Vec::new();
    for st in obs.stations() {
        if geometry.contains(st.lat, st.lon) {
            stations.push(st.clone());
        } else {
            let msg = format!("station {} at ({}, {}) lies outside the grid; dropped", st.id, st.lat, st.lon);
            warn!("{msg}");
            warnings.push(msg);
        }
    }
    let coords = geometry.node_coords();
    let stencils: Vec<Stencil> = stations.iter().map(|s| Stencil::new(&coords, s.lat, s.lon)).collect();
    let launches = grids.launches();

    let m = catalog.len();
    let tu = usize::from(t);
    let jobs: Vec<(usize, UtcTime)> = (0..stations.len()).flat_map(|s| launches.iter().map(move |&l| (s, l))).collect();

    let blocks: Vec<(Vec<f32>, Vec<f32>, SampleMeta, usize)> = jobs
        .par_iter()
        .map(|&(si, launch)| {
            let st = &stations[si];
            let mut x = vec![missing(); m * tu];
            let mut y = vec![missing(); tu];
            let mut failures = 0usize;
            let mut mask = 0u64;
            let mut cell = vec![missing(); m];
            for lead in 1..=t {
                let fields: Vec<Option<&[f32]>> = raw_names.iter().map(|v| grids.field(launch, lead, v)).collect();
                station_channels(catalog, &fields, &stencils[si], &cfg.idw, &mut cell, &mut failures);
                let li = usize::from(lead) - 1;
                for (mi, &v) in cell.iter().enumerate() {
                    x[mi * tu + li] = v;
                }
                let valid = launch.add_hours(i64::from(lead));
                if valid.on_cadence(OBS_CADENCE_HOURS) {
                    if let Some(o) = obs.get(&st.id, valid) {
                        if let Some(v) = o.visibility_km {
                            y[li] = v as f32;
                        }
                        if o.present_weather.is_some_and(is_fog_weather_code) {
                            mask |= 1 << li;
                        }
                    }
                }
            }
            let mut prior = [missing(); 3];
            for (slot, off) in prior.iter_mut().zip(PRIOR_OBS_OFFSETS) {
                let when = launch.add_hours(off);
                if when.on_cadence(OBS_CADENCE_HOURS) {
                    if let Some(v) = obs.get(&st.id, when).and_then(|o| o.visibility_km) {
                        *slot = v as f32;
                    }
                }
            }
            let meta = SampleMeta { station: st.clone(), launch, prior_visibility: prior, fog_code_mask: mask };
            (x, y, meta, failures)
        })
        .collect();

    let n = blocks.len();
    let mut x = Vec::with_capacity(n * m * tu);
    let mut y = Vec::with_capacity(n * tu);
    let mut meta = Vec::with_capacity(n);
    let mut failures = 0;
    for (bx, by, bm, f) in blocks {
        x.extend_from_slice(&bx);
        y.extend_from_slice(&by);
        meta.push(bm);
        failures += f;
    }
    if failures > 0 {
        let msg = format!("{failures} station interpolations had too few non-missing nodes; set missing");
        warn!("{msg}");
        warnings.push(msg);
    }
    if !y.iter().any(|v| !v.is_nan()) {
        return Err(Error::EmptyDataset("no observation matches any forecast valid time".into()));
    }
    let dataset = Dataset::new(catalog.clone(), t, meta, x, y)?;
    Ok(Assembled { dataset, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::grid::GridGeometry;
    use crate::ingest::obs::Observation;

    fn catalog() -> VariableCatalog {
        VariableCatalog::parse(
            "U_GRD_GDS3_HTGL\nV_GRD_GDS3_HTGL\nWIND_SPEED_10M = wind_speed(U_GRD_GDS3_HTGL, V_GRD_GDS3_HTGL)\n",
        )
        .unwrap()
    }

    fn grids(launches: &[UtcTime]) -> ForecastGridSet {
        let geom = GridGeometry::new(vec![30.0, 31.0], vec![121.0, 122.0]).unwrap();
        let mut g = ForecastGridSet::new(geom);
        for &l in launches {
            for lead in 1..=60u16 {
                g.insert_field(l, lead, "U_GRD_GDS3_HTGL", vec![3.0; 4]).unwrap();
                g.insert_field(l, lead, "V_GRD_GDS3_HTGL", vec![4.0; 4]).unwrap();
            }
        }
        g
    }

    fn obs_at(table: &mut ObservationTable, id: &str, t: UtcTime, vis: f64) {
        let st = Station::new(id, if id == "A" { 30.4 } else { 30.7 }, 121.5);
        table.insert(st, t, Observation { visibility_km: Some(vis), present_weather: None }).unwrap();
    }

    #[test]
    fn shape_and_cadence() {
        let l0 = UtcTime::from_ymd_h(2018, 3, 29, 0).unwrap();
        let launches = [l0, l0.add_hours(12), l0.add_hours(24)];
        let g = grids(&launches);
        let mut obs = ObservationTable::new();
        obs_at(&mut obs, "A", l0.add_hours(3), 0.5);
        obs_at(&mut obs, "B", l0.add_hours(6), 4.0);
        obs_at(&mut obs, "A", l0.add_hours(-6), 2.0);
        // off the 3-hourly clock: kept in the table, never matched
        obs_at(&mut obs, "A", l0.add_hours(5), 0.2);
        let out = assemble_dataset(&obs, &g, &catalog(), &AssembleConfig::default()).unwrap();
        let ds = out.dataset;
        assert_eq!(ds.n_samples(), 6);
        assert_eq!(ds.x_values().len(), 6 * 3 * 60);
        // sample 0 = station A, first launch
        assert_eq!(ds.y(0, 3), Some(0.5));
        assert_eq!(ds.y(0, 5), None);
        assert_eq!(ds.meta()[0].prior_visibility[2], 2.0);
        assert_eq!(ds.x(0, 2, 1), Some(5.0));
        // sample 1 = station A, launch +12h: lead 3 is valid at l0+15h
        assert_eq!(ds.y(1, 3), None);
        assert_eq!(ds.y(3, 6), Some(4.0));
    }

    #[test]
    fn no_overlap_is_empty_dataset() {
        let l0 = UtcTime::from_ymd_h(2018, 3, 29, 0).unwrap();
        let g = grids(&[l0]);
        let mut obs = ObservationTable::new();
        obs_at(&mut obs, "A", l0.add_hours(24 * 30), 0.5);
        assert!(matches!(
            assemble_dataset(&obs, &g, &catalog(), &AssembleConfig::default()),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn stations_outside_grid_are_dropped() {
        let l0 = UtcTime::from_ymd_h(2018, 3, 29, 0).unwrap();
        let g = grids(&[l0]);
        let mut obs = ObservationTable::new();
        obs_at(&mut obs, "A", l0.add_hours(3), 0.5);
        obs.insert(
            Station::new("FAR", 33.0, 125.0),
            l0.add_hours(3),
            Observation { visibility_km: Some(3.0), present_weather: None },
        )
        .unwrap();
        let out = assemble_dataset(&obs, &g, &catalog(), &AssembleConfig::default()).unwrap();
        assert_eq!(out.dataset.n_samples(), 1);
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn pure_function_of_inputs() {
        let l0 = UtcTime::from_ymd_h(2018, 3, 29, 12).unwrap();
        let g = grids(&[l0, l0.add_hours(12)]);
        let mut obs = ObservationTable::new();
        obs_at(&mut obs, "A", l0.add_hours(3), 0.5);
        obs_at(&mut obs, "B", l0.add_hours(9), 1.5);
        let a = assemble_dataset(&obs, &g, &catalog(), &AssembleConfig::default()).unwrap();
        let b = assemble_dataset(&obs, &g, &catalog(), &AssembleConfig::default()).unwrap();
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        crate::container::write_dataset(&a.dataset, &mut ba).unwrap();
        crate::container::write_dataset(&b.dataset, &mut bb).unwrap();
        assert_eq!(ba, bb);
    }
}
