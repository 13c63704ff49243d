//! Seeded synthetic observations and forecast grids with a planted fog rule.
//!
//! Each variable has a launch-independent hourly truth series per grid node:
//! a diurnal and a weekly sinusoid plus a region-wide and a node-local AR(1)
//! term. Forecasts are truth plus Gaussian noise scaled by `noise`. At each
//! 3-hourly observation time a station is foggy when its interpolated rh at
//! `t − lag` reaches `rh_threshold` and its wind speed at `t` is below
//! `wind_threshold`. Those station values go through the same IDW and f32
//! rounding as ingestion, so with `noise = 0` the dataset reproduces the rule
//! exactly.
//!
//! Station `s` sits at the centre of its own 2×2 block of nodes, so no two
//! stations share interpolation nodes. The pressure field is drawn iid per
//! forecast value and carries no signal.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::catalog::{
    derive_channel, Channel, Formula, VariableCatalog, AIR_SEA_DIFF, DPT_2M, RH_2M, TMP_2M, TMP_SFC, U_10M, V_10M,
    WIND_SPEED,
};
use crate::dataset::{Dataset, Station, MAX_LEAD_HOURS};
use crate::error::{Error, Result};
use crate::ingest::assemble::{assemble_dataset, AssembleConfig, FieldSource};
use crate::ingest::grid::{ForecastGridSet, GridGeometry, GRID_HEADER};
use crate::ingest::idw::{IdwConfig, Stencil};
use crate::ingest::obs::{write_observations, Observation, ObservationTable, OBS_CADENCE_HOURS};
use crate::time::UtcTime;
use crate::tlca::parse_months;

pub const LOW_CLOUD: &str = "L_CDC_GDS3_MCY";
pub const NOISE_VARIABLE: &str = "PRMSL_GDS3_MSL";

/// Variables the generator can emit, in catalog order.
pub const SUPPORTED_VARIABLES: [&str; 8] = [DPT_2M, LOW_CLOUD, NOISE_VARIABLE, RH_2M, TMP_2M, TMP_SFC, U_10M, V_10M];

pub const FOG_WEATHER_CODE: u16 = 45;
pub const CLEAR_WEATHER_CODE: u16 = 0;
pub const TRUTH_FORMAT: &str = "seafog-synth-truth";
pub const TRUTH_VERSION: u32 = 1;
const MAX_PLANTED_LAG: u16 = 5;
const AR_PHI: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub stations: usize,
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    /// First launch day, `YYYY-MM-DD`.
    pub start: String,
    /// Last launch day, inclusive.
    pub end: String,
    /// Launch months, e.g. `3-7`.
    pub months: String,
    pub lead_hours: u16,
    pub variables: Vec<String>,
    pub rh_threshold: f64,
    pub wind_threshold: f64,
    pub lag: u16,
    /// Forecast error as a multiple of each variable's spread.
    pub noise: f64,
    /// Target frequency of the rule, reached by shifting rh; 0 leaves rh unshifted.
    pub fog_frequency: f64,
    /// Fog labels flipped with this probability; clear labels flipped at the
    /// rate that keeps the expected fog frequency unchanged.
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            stations: 2,
            lat_min: 29.0,
            lat_max: 31.0,
            lon_min: 121.0,
            lon_max: 124.0,
            start: "2017-03-01".into(),
            end: "2018-07-31".into(),
            months: "3-7".into(),
            lead_hours: 60,
            variables: SUPPORTED_VARIABLES.iter().map(|s| s.to_string()).collect(),
            rh_threshold: 90.0,
            wind_threshold: 5.0,
            lag: 3,
            noise: 0.1,
            fog_frequency: 0.05,
            label_noise: 0.0,
            seed: 0,
        }
    }
}

fn parse_day(s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
        .map_err(|_| Error::Config(format!("bad date {s:?}; expected YYYY-MM-DD")))
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.stations == 0 {
            return bad("need at least one station".into());
        }
        if !(self.lat_min < self.lat_max && self.lon_min < self.lon_max) {
            return bad("bounding box must have lat_min < lat_max and lon_min < lon_max".into());
        }
        if self.lag > MAX_PLANTED_LAG {
            return bad(format!("planted lag {} exceeds {MAX_PLANTED_LAG}", self.lag));
        }
        if self.lead_hours < 3 || self.lead_hours > MAX_LEAD_HOURS {
            return bad(format!("lead_hours must be in 3..={MAX_LEAD_HOURS}"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise must be ≥ 0, got {}", self.noise));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return bad(format!("label_noise must be in [0, 0.5), got {}", self.label_noise));
        }
        if !(0.0..1.0).contains(&self.fog_frequency) {
            return bad(format!("fog_frequency must be in [0, 1), got {}", self.fog_frequency));
        }
        if !(self.rh_threshold.is_finite() && self.wind_threshold.is_finite()) {
            return bad("rule thresholds must be finite".into());
        }
        let mut seen = BTreeSet::new();
        for v in &self.variables {
            if !SUPPORTED_VARIABLES.contains(&v.as_str()) {
                return bad(format!("unsupported variable {v:?}; choose from {}", SUPPORTED_VARIABLES.join(", ")));
            }
            if !seen.insert(v.as_str()) {
                return bad(format!("variable {v} listed twice"));
            }
        }
        for need in [RH_2M, U_10M, V_10M] {
            if !seen.contains(need) {
                return bad(format!("variables must include {need}"));
            }
        }
        if seen.contains(DPT_2M) && !seen.contains(TMP_2M) {
            return bad(format!("{DPT_2M} requires {TMP_2M}"));
        }
        parse_months(&self.months)?;
        if parse_day(&self.start)? > parse_day(&self.end)? {
            return bad("start date is after end date".into());
        }
        if self.launches()?.is_empty() {
            return bad("no launch days fall in the configured months".into());
        }
        Ok(())
    }

    /// 00 and 12 UTC launches on every day of the range within `months`.
    pub fn launches(&self) -> Result<Vec<UtcTime>> {
        let months = parse_months(&self.months)?;
        let (mut day, end) = (parse_day(&self.start)?, parse_day(&self.end)?);
        let mut out = Vec::new();
        while day <= end {
            if months.contains(&day.month()) {
                for h in [0, 12] {
                    out.push(UtcTime::from_ymd_h(day.year(), day.month(), day.day(), h)?);
                }
            }
            day = day.succ_opt().ok_or_else(|| Error::Config("date out of range".into()))?;
        }
        Ok(out)
    }

    fn has(&self, name: &str) -> bool {
        self.variables.iter().any(|v| v == name)
    }

    /// Raw channels in catalog order, then wind speed and, when both
    /// temperatures are present, the air–sea difference.
    pub fn catalog(&self) -> VariableCatalog {
        let mut channels: Vec<Channel> =
            SUPPORTED_VARIABLES.iter().filter(|v| self.has(v)).map(|v| Channel::raw(v)).collect();
        channels.push(Channel::derived(WIND_SPEED, Formula::WindSpeed, &[U_10M, V_10M]));
        if self.has(TMP_2M) && self.has(TMP_SFC) {
            channels.push(Channel::derived(AIR_SEA_DIFF, Formula::AirSeaTempDiff, &[TMP_2M, TMP_SFC]));
        }
        VariableCatalog::new(channels).expect("synthetic catalog is valid")
    }

    pub fn geometry(&self) -> GridGeometry {
        let cols = 2 * self.stations;
        let step = (self.lon_max - self.lon_min) / (cols - 1) as f64;
        let lons = (0..cols).map(|j| self.lon_min + step * j as f64).collect();
        GridGeometry::new(vec![self.lat_min, self.lat_max], lons).expect("finite bounding box")
    }

    pub fn station_list(&self) -> Vec<Station> {
        let g = self.geometry();
        let lat = 0.5 * (self.lat_min + self.lat_max);
        (0..self.stations)
            .map(|s| Station::new(format!("S{:02}", s + 1), lat, 0.5 * (g.lons[2 * s] + g.lons[2 * s + 1])))
            .collect()
    }
}

/// Truth-series shape for one variable.
#[derive(Debug, Clone, Copy)]
struct Shape {
    mean: f64,
    diurnal: f64,
    weekly: f64,
    shared_sd: f64,
    node_sd: f64,
    bounds: Option<(f64, f64)>,
}

fn shape(name: &str) -> Shape {
    let s =
        |mean, diurnal, weekly, shared_sd, node_sd, bounds| Shape { mean, diurnal, weekly, shared_sd, node_sd, bounds };
    match name {
        RH_2M => s(80.0, 6.0, 4.0, 9.0, 2.0, Some((5.0, 100.0))),
        U_10M => s(0.0, 1.0, 1.5, 3.0, 0.6, None),
        V_10M => s(1.0, 1.0, 1.0, 3.0, 0.6, None),
        TMP_2M => s(290.0, 3.0, 2.0, 2.0, 0.5, None),
        TMP_SFC => s(289.0, 0.5, 1.0, 1.0, 0.3, None),
        LOW_CLOUD => s(40.0, 5.0, 10.0, 20.0, 5.0, Some((0.0, 100.0))),
        // spread only; dew point follows temperature and rh, pressure is iid
        DPT_2M => s(0.0, 0.0, 0.0, 2.0, 0.0, None),
        NOISE_VARIABLE => s(101_300.0, 0.0, 0.0, 300.0, 0.0, None),
        _ => unreachable!("validated variable"),
    }
}

fn clamp_to(v: f64, bounds: Option<(f64, f64)>) -> f64 {
    bounds.map_or(v, |(lo, hi)| v.clamp(lo, hi))
}

fn ar1(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut x: f64 = rng.sample(StandardNormal);
    let innov = (1.0 - AR_PHI * AR_PHI).sqrt();
    for _ in 0..n {
        out.push(x);
        let e: f64 = rng.sample(StandardNormal);
        x = AR_PHI * x + innov * e;
    }
    out
}

/// Magnus dew point (K) from temperature (K) and rh (%).
fn dew_point_k(t_k: f64, rh: f64) -> f64 {
    let (b, c) = (17.62, 243.12);
    let tc = t_k - 273.15;
    let g = (rh / 100.0).ln() + b * tc / (c + tc);
    c * g / (b - g) + 273.15
}

/// Forecast values stored as `[variable][launch][lead − 1][node]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthGrid {
    geometry: GridGeometry,
    launches: Vec<UtcTime>,
    variables: Vec<String>,
    lead_hours: u16,
    values: Vec<f32>,
}

impl SynthGrid {
    fn offset(&self, v: usize, li: usize, lead: u16) -> usize {
        let n = self.geometry.n_nodes();
        ((v * self.launches.len() + li) * usize::from(self.lead_hours) + usize::from(lead) - 1) * n
    }

    pub fn to_grid_set(&self) -> Result<ForecastGridSet> {
        let mut g = ForecastGridSet::new(self.geometry.clone());
        for (v, name) in self.variables.iter().enumerate() {
            for (li, &launch) in self.launches.iter().enumerate() {
                for lead in 1..=self.lead_hours {
                    let o = self.offset(v, li, lead);
                    g.insert_field(launch, lead, name, self.values[o..o + self.geometry.n_nodes()].to_vec())?;
                }
            }
        }
        Ok(g)
    }

    /// Same long-form CSV as [`crate::ingest::write_grid`].
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(GRID_HEADER)?;
        let coords: Vec<(String, String)> =
            self.geometry.node_coords().iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
        let mut by_name: Vec<(usize, &String)> = self.variables.iter().enumerate().collect();
        by_name.sort_by_key(|(_, n)| n.as_str());
        for (li, launch) in self.launches.iter().enumerate() {
            let launch = launch.to_string();
            for lead in 1..=self.lead_hours {
                let lead_s = lead.to_string();
                for &(v, name) in &by_name {
                    let o = self.offset(v, li, lead);
                    for ((lat, lon), x) in coords.iter().zip(&self.values[o..o + coords.len()]) {
                        w.write_record([launch.as_str(), &lead_s, lat, lon, name, &x.to_string()])?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

impl FieldSource for SynthGrid {
    fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    fn launches(&self) -> Vec<UtcTime> {
        self.launches.clone()
    }

    fn max_lead(&self) -> u16 {
        self.lead_hours
    }

    fn has_variable(&self, name: &str) -> bool {
        self.variables.iter().any(|v| v == name)
    }

    fn field(&self, launch: UtcTime, lead: u16, variable: &str) -> Option<&[f32]> {
        if lead == 0 || lead > self.lead_hours {
            return None;
        }
        let v = self.variables.iter().position(|n| n == variable)?;
        let li = self.launches.binary_search(&launch).ok()?;
        let o = self.offset(v, li, lead);
        Some(&self.values[o..o + self.geometry.n_nodes()])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthRow {
    pub station_id: String,
    pub time_utc: String,
    /// Station rh at `t − lag`.
    pub rh_lagged: f32,
    /// Station wind speed at `t`.
    pub wind: f32,
    pub rule_fog: bool,
    pub flipped: bool,
    pub label: u8,
    pub visibility_km: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthManifest {
    pub format: String,
    pub version: u32,
    pub config: SynthConfig,
    pub planted_lag: u16,
    pub rh_shift: f64,
    pub rule_fog_frequency: f64,
    pub label_fog_frequency: f64,
    pub flipped: usize,
    pub rows: Vec<TruthRow>,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub catalog: VariableCatalog,
    pub observations: ObservationTable,
    pub grid: SynthGrid,
    pub truth: TruthManifest,
}

impl SynthOutput {
    /// Assembles the dataset in memory, as ingestion of the written files would.
    pub fn dataset(&self) -> Result<Dataset> {
        let cfg = AssembleConfig { lead_hours: self.truth.config.lead_hours, ..AssembleConfig::default() };
        Ok(assemble_dataset(&self.observations, &self.grid, &self.catalog, &cfg)?.dataset)
    }

    /// Writes `observations.csv`, `grid.csv`, `catalog.txt` and `truth.json`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let create = |name: &str| -> Result<BufWriter<File>> { Ok(BufWriter::new(File::create(dir.join(name))?)) };
        write_observations(&self.observations, create("observations.csv")?)?;
        self.grid.write_csv(create("grid.csv")?)?;
        create("catalog.txt")?.write_all(self.catalog.to_text().as_bytes())?;
        let mut w = create("truth.json")?;
        serde_json::to_writer_pretty(&mut w, &self.truth).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }
}

/// Hourly truth at every node for the non-rh variables, and rh before its
/// shift and clamp.
struct Latent {
    t0: UtcTime,
    n_nodes: usize,
    /// `[variable][hour][node]`, absent for derived or iid variables.
    series: Vec<Option<Vec<f64>>>,
}

impl Latent {
    fn at(&self, v: usize, t: UtcTime, node: usize) -> f64 {
        let h = usize::try_from(t.hours_since(self.t0)).expect("time inside the generated span");
        self.series[v].as_ref().expect("generated variable")[h * self.n_nodes + node]
    }
}

fn hour_phase(t: UtcTime, period_h: f64, phase: f64) -> f64 {
    (2.0 * std::f64::consts::PI * (t.seconds() as f64 / 3600.0) / period_h + phase).sin()
}

fn generate_latent(cfg: &SynthConfig, rng: &mut ChaCha8Rng, t0: UtcTime, n_hours: usize, n_nodes: usize) -> Latent {
    let mut series = Vec::with_capacity(cfg.variables.len());
    for name in SUPPORTED_VARIABLES.iter().filter(|v| cfg.has(v)) {
        if matches!(*name, DPT_2M | NOISE_VARIABLE) {
            series.push(None);
            continue;
        }
        let s = shape(name);
        let (p1, p2): (f64, f64) =
            (rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.0..std::f64::consts::TAU));
        let shared = ar1(rng, n_hours);
        let local: Vec<Vec<f64>> = (0..n_nodes).map(|_| ar1(rng, n_hours)).collect();
        let mut out = Vec::with_capacity(n_hours * n_nodes);
        for h in 0..n_hours {
            let t = t0.add_hours(h as i64);
            let base = s.mean
                + s.diurnal * hour_phase(t, 24.0, p1)
                + s.weekly * hour_phase(t, 168.0, p2)
                + s.shared_sd * shared[h];
            for node in local.iter() {
                out.push(base + s.node_sd * node[h]);
            }
        }
        series.push(Some(out));
    }
    Latent { t0, n_nodes, series }
}

struct RuleInputs<'a> {
    cfg: &'a SynthConfig,
    latent: &'a Latent,
    stencils: Vec<Stencil>,
    idw: IdwConfig,
    rh: usize,
    u: usize,
    v: usize,
}

impl RuleInputs<'_> {
    fn station_value(&self, s: usize, f: impl Fn(usize) -> f64) -> f32 {
        let vals: Vec<f32> = (0..self.latent.n_nodes).map(|n| f(n) as f32).collect();
        self.stencils[s].interpolate(&vals, &self.idw).expect("complete synthetic field") as f32
    }

    fn rh(&self, s: usize, t: UtcTime, shift: f64) -> f32 {
        let bounds = shape(RH_2M).bounds;
        self.station_value(s, |n| clamp_to(self.latent.at(self.rh, t, n) + shift, bounds))
    }

    fn wind(&self, s: usize, t: UtcTime) -> f32 {
        let u = self.station_value(s, |n| self.latent.at(self.u, t, n));
        let v = self.station_value(s, |n| self.latent.at(self.v, t, n));
        derive_channel(Formula::WindSpeed, &[Some(f64::from(u)), Some(f64::from(v))]).expect("both inputs present")
            as f32
    }

    fn fog(&self, rh_lagged: f32, wind: f32) -> bool {
        f64::from(rh_lagged) >= self.cfg.rh_threshold && f64::from(wind) < self.cfg.wind_threshold
    }
}

/// Rule frequency over the observation rows for a given rh shift.
fn rule_frequency(inputs: &RuleInputs, rows: &[(usize, UtcTime)], winds: &[f32], shift: f64) -> f64 {
    let lag = i64::from(inputs.cfg.lag);
    let hits =
        rows.iter().zip(winds).filter(|((s, t), &w)| inputs.fog(inputs.rh(*s, t.add_hours(-lag), shift), w)).count();
    hits as f64 / rows.len() as f64
}

fn calibrate_shift(inputs: &RuleInputs, rows: &[(usize, UtcTime)], winds: &[f32], target: f64) -> Result<f64> {
    let (mut lo, mut hi) = (-150.0, 150.0);
    let (f_lo, f_hi) = (rule_frequency(inputs, rows, winds, lo), rule_frequency(inputs, rows, winds, hi));
    if !(target > f_lo && target <= f_hi) {
        return Err(Error::Config(format!(
            "fog frequency {target} is not achievable under the rule; achievable range is ({f_lo:.6}, {f_hi:.6}]"
        )));
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if rule_frequency(inputs, rows, winds, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (a, b) = (rule_frequency(inputs, rows, winds, lo), rule_frequency(inputs, rows, winds, hi));
    Ok(if (a - target).abs() < (b - target).abs() { lo } else { hi })
}

fn visibility(label: u8, rh_lagged: f32, wind: f32, factor: f64) -> f64 {
    let deficit = 100.0 - f64::from(rh_lagged);
    let v = if label == 1 {
        ((0.2 + 0.05 * deficit).min(1.0) * factor).clamp(0.05, 1.0)
    } else {
        ((1.2 + 0.25 * deficit + 0.3 * f64::from(wind)) * factor).max(1.001)
    };
    (v * 1000.0).round() / 1000.0
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let launches = cfg.launches()?;
    let geometry = cfg.geometry();
    let n_nodes = geometry.n_nodes();
    let stations = cfg.station_list();
    let first = launches[0];
    let last = *launches.last().unwrap();
    let t0 = first.add_hours(-6 - i64::from(cfg.lag));
    let n_hours = usize::try_from(last.add_hours(i64::from(cfg.lead_hours)).hours_since(t0)).unwrap() + 1;

    let raw: Vec<&str> = SUPPORTED_VARIABLES.iter().copied().filter(|v| cfg.has(v)).collect();
    let idx = |name: &str| raw.iter().position(|v| *v == name);
    let latent = generate_latent(cfg, &mut rng, t0, n_hours, n_nodes);

    // observation rows: every 3-hourly time any launch window touches
    let mut times = BTreeSet::new();
    for &l in &launches {
        let mut k = -6;
        while k <= i64::from(cfg.lead_hours) {
            times.insert(l.add_hours(k));
            k += OBS_CADENCE_HOURS;
        }
    }
    let rows: Vec<(usize, UtcTime)> = (0..stations.len()).flat_map(|s| times.iter().map(move |&t| (s, t))).collect();

    let coords = geometry.node_coords();
    let inputs = RuleInputs {
        cfg,
        latent: &latent,
        stencils: stations.iter().map(|s| Stencil::new(&coords, s.lat, s.lon)).collect(),
        idw: IdwConfig::default(),
        rh: idx(RH_2M).unwrap(),
        u: idx(U_10M).unwrap(),
        v: idx(V_10M).unwrap(),
    };
    let winds: Vec<f32> = rows.iter().map(|&(s, t)| inputs.wind(s, t)).collect();
    let shift = if cfg.fog_frequency > 0.0 { calibrate_shift(&inputs, &rows, &winds, cfg.fog_frequency)? } else { 0.0 };
    let rule_freq = rule_frequency(&inputs, &rows, &winds, shift);

    // node truth for one variable at one hour, after the rh shift
    let truth = |v: usize, t: UtcTime, node: usize| -> f64 {
        match raw[v] {
            RH_2M => clamp_to(latent.at(v, t, node) + shift, shape(RH_2M).bounds),
            DPT_2M => {
                let rh = clamp_to(latent.at(inputs.rh, t, node) + shift, shape(RH_2M).bounds);
                dew_point_k(latent.at(idx(TMP_2M).unwrap(), t, node), rh)
            }
            name => clamp_to(latent.at(v, t, node), shape(name).bounds),
        }
    };

    let lead_n = usize::from(cfg.lead_hours);
    let mut values = Vec::with_capacity(raw.len() * launches.len() * lead_n * n_nodes);
    for (v, name) in raw.iter().enumerate() {
        let s = shape(name);
        for &launch in &launches {
            for lead in 1..=cfg.lead_hours {
                let t = launch.add_hours(i64::from(lead));
                for node in 0..n_nodes {
                    let x = if *name == NOISE_VARIABLE {
                        let z: f64 = rng.sample(StandardNormal);
                        s.mean + s.shared_sd * z
                    } else if cfg.noise > 0.0 {
                        let z: f64 = rng.sample(StandardNormal);
                        clamp_to(truth(v, t, node) + cfg.noise * s.shared_sd * z, s.bounds)
                    } else {
                        truth(v, t, node)
                    };
                    values.push(x as f32);
                }
            }
        }
    }
    let grid = SynthGrid {
        geometry,
        launches: launches.clone(),
        variables: raw.iter().map(|s| s.to_string()).collect(),
        lead_hours: cfg.lead_hours,
        values,
    };

    let clear_flip = if rule_freq < 1.0 { cfg.label_noise * rule_freq / (1.0 - rule_freq) } else { 0.0 };
    let lag = i64::from(cfg.lag);
    let mut observations = ObservationTable::new();
    let mut truth_rows = Vec::with_capacity(rows.len());
    let (mut flipped, mut fog_labels) = (0, 0);
    for (&(s, t), &wind) in rows.iter().zip(&winds) {
        let rh_lagged = inputs.rh(s, t.add_hours(-lag), shift);
        let rule_fog = inputs.fog(rh_lagged, wind);
        let flip = cfg.label_noise > 0.0 && rng.gen::<f64>() < if rule_fog { cfg.label_noise } else { clear_flip };
        let label = u8::from(rule_fog != flip);
        let factor = if cfg.noise > 0.0 { (0.1 * cfg.noise * rng.sample::<f64, _>(StandardNormal)).exp() } else { 1.0 };
        let vis = visibility(label, rh_lagged, wind, factor);
        flipped += usize::from(flip);
        fog_labels += usize::from(label);
        let code = if label == 1 { FOG_WEATHER_CODE } else { CLEAR_WEATHER_CODE };
        observations.insert(
            stations[s].clone(),
            t,
            Observation { visibility_km: Some(vis), present_weather: Some(code) },
        )?;
        truth_rows.push(TruthRow {
            station_id: stations[s].id.clone(),
            time_utc: t.to_string(),
            rh_lagged,
            wind,
            rule_fog,
            flipped: flip,
            label,
            visibility_km: vis,
        });
    }

    let truth = TruthManifest {
        format: TRUTH_FORMAT.into(),
        version: TRUTH_VERSION,
        config: cfg.clone(),
        planted_lag: cfg.lag,
        rh_shift: shift,
        rule_fog_frequency: rule_freq,
        label_fog_frequency: fog_labels as f64 / rows.len() as f64,
        flipped,
        rows: truth_rows,
    };
    Ok(SynthOutput { catalog: cfg.catalog(), observations, grid, truth })
}
