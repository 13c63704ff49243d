//! Per-(sample, lead) feature rows with binary fog labels.
//!
//! Column groups, in emission order: predictor lags (`{var}_lag{j}`),
//! `lat`/`lon`, `hour`/`day`/`month`, observed visibility at launch
//! (`vis_obs_0h`, `vis_obs_m3h`, `vis_obs_m6h`) and `lead_hour`.

use std::collections::{BTreeSet, HashSet};
use std::io::Write;

use log::warn;

use crate::catalog::VariableCatalog;
use crate::dataset::{missing, Dataset, LabelRule};
use crate::error::{Error, Result};
use crate::time::UtcTime;
use crate::tlca::{Predictor, PredictorSet};

pub const PRIOR_VIS_COLUMNS: [&str; 3] = ["vis_obs_0h", "vis_obs_m3h", "vis_obs_m6h"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CalendarSource {
    #[default]
    ValidTime,
    LaunchTime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpec {
    pub predictors: PredictorSet,
    pub include_location: bool,
    pub include_calendar: bool,
    pub include_recent_visibility: bool,
    pub include_lead_time: bool,
    pub calendar_source: CalendarSource,
    pub label_rule: LabelRule,
}

impl FeatureSpec {
    pub fn new(predictors: PredictorSet) -> Self {
        FeatureSpec {
            predictors,
            include_location: true,
            include_calendar: true,
            include_recent_visibility: true,
            include_lead_time: true,
            calendar_source: CalendarSource::ValidTime,
            label_rule: LabelRule::default(),
        }
    }

    /// Predictors actually used: the configured set, or every catalog
    /// variable at lag 0 when the set is empty.
    pub fn effective_predictors(&self, catalog: &VariableCatalog) -> PredictorSet {
        if self.predictors.is_empty() {
            all_lag0(catalog)
        } else {
            self.predictors.clone()
        }
    }

    pub fn manifest(&self, catalog: &VariableCatalog) -> Vec<String> {
        let mut names: Vec<String> = self
            .effective_predictors(catalog)
            .predictors
            .iter()
            .map(|p| format!("{}_lag{}", p.variable, p.lag))
            .collect();
        if self.include_location {
            names.extend(["lat", "lon"].map(String::from));
        }
        if self.include_calendar {
            names.extend(["hour", "day", "month"].map(String::from));
        }
        if self.include_recent_visibility {
            names.extend(PRIOR_VIS_COLUMNS.map(String::from));
        }
        if self.include_lead_time {
            names.push("lead_hour".into());
        }
        names
    }
}

pub fn all_lag0(catalog: &VariableCatalog) -> PredictorSet {
    all_lagged(catalog, 0)
}

/// Every catalog variable at every lag `0..=max_lag`.
pub fn all_lagged(catalog: &VariableCatalog, max_lag: u16) -> PredictorSet {
    PredictorSet {
        predictors: catalog
            .names()
            .flat_map(|v| (0..=max_lag).map(move |lag| Predictor { variable: v.to_string(), lag }))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowProvenance {
    pub station_id: String,
    pub launch: UtcTime,
    pub lead: u16,
}

impl RowProvenance {
    pub fn valid_time(&self) -> UtcTime {
        self.launch.add_hours(i64::from(self.lead))
    }
}

/// Row-major f32 feature values with labels, weights and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    manifest: Vec<String>,
    values: Vec<f32>,
    labels: Vec<u8>,
    weights: Vec<f32>,
    provenance: Vec<RowProvenance>,
}

impl FeatureMatrix {
    pub fn new(
        manifest: Vec<String>,
        values: Vec<f32>,
        labels: Vec<u8>,
        weights: Vec<f32>,
        provenance: Vec<RowProvenance>,
    ) -> Result<Self> {
        let rows = labels.len();
        let cols = manifest.len();
        if cols == 0 {
            return Err(Error::Input("feature manifest is empty".into()));
        }
        let mut seen = HashSet::new();
        if let Some(d) = manifest.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::Input(format!("duplicate feature name {d}")));
        }
        if values.len() != rows * cols {
            return Err(Error::Input(format!("{} values for {rows}×{cols} matrix", values.len())));
        }
        if weights.len() != rows || provenance.len() != rows {
            return Err(Error::Input("weights and provenance must have one entry per row".into()));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::Input(format!("label {l} is not 0 or 1")));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::Input(format!("weight {w} must be finite and ≥ 0")));
        }
        if let Some(v) = values.iter().find(|v| v.is_infinite()) {
            return Err(Error::Input(format!("non-finite feature value {v}")));
        }
        let values = values.into_iter().map(|v| if v.is_nan() { missing() } else { v }).collect();
        Ok(FeatureMatrix { manifest, values, labels, weights, provenance })
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_cols(&self) -> usize {
        self.manifest.len()
    }

    pub fn manifest(&self) -> &[String] {
        &self.manifest
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn provenance(&self) -> &[RowProvenance] {
        &self.provenance
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let c = self.n_cols();
        &self.values[i * c..(i + 1) * c]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.manifest.iter().position(|n| n == name)
    }

    pub fn n_positive(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn fog_fraction(&self) -> f64 {
        if self.labels.is_empty() {
            0.0
        } else {
            self.n_positive() as f64 / self.n_rows() as f64
        }
    }

    /// Same rows with new per-row weights.
    pub fn with_weights(&self, weights: Vec<f32>) -> Result<FeatureMatrix> {
        if weights.len() != self.n_rows() {
            return Err(Error::Input(format!("{} weights for {} rows", weights.len(), self.n_rows())));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::Input(format!("weight {w} must be finite and ≥ 0")));
        }
        Ok(FeatureMatrix { weights, ..self.clone() })
    }

    /// New matrix holding `rows` in the given order (repeats allowed).
    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let c = self.n_cols();
        let mut values = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            values.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            manifest: self.manifest.clone(),
            values,
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            weights: rows.iter().map(|&i| self.weights[i]).collect(),
            provenance: rows.iter().map(|&i| self.provenance[i].clone()).collect(),
        }
    }

    /// `station_id,launch_utc,lead_hour,label,weight,<manifest…>`, missing as empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["station_id", "launch_utc", "lead_hour", "label", "weight"];
        header.extend(self.manifest.iter().map(String::as_str));
        w.write_record(&header)?;
        for i in 0..self.n_rows() {
            let p = &self.provenance[i];
            let mut rec = vec![
                p.station_id.clone(),
                p.launch.to_string(),
                p.lead.to_string(),
                self.labels[i].to_string(),
                self.weights[i].to_string(),
            ];
            rec.extend(self.row(i).iter().map(|v| if v.is_nan() { String::new() } else { v.to_string() }));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn build_features(dataset: &Dataset, spec: &FeatureSpec) -> Result<FeatureMatrix> {
    let catalog = dataset.catalog();
    if spec.predictors.is_empty() {
        warn!("empty predictor set; using every catalog variable at lag 0");
    }
    let predictors = spec.effective_predictors(catalog);
    let mut resolved = Vec::with_capacity(predictors.len());
    for p in &predictors.predictors {
        let m = catalog
            .index_of(&p.variable)
            .ok_or_else(|| Error::Config(format!("predictor {} is not in the dataset catalog", p.variable)))?;
        if p.lag >= dataset.lead_hours() {
            return Err(Error::Config(format!("predictor lag {} exceeds the lead horizon", p.lag)));
        }
        resolved.push((m, p.lag));
    }
    let manifest = spec.manifest(catalog);
    let cols = manifest.len();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut provenance = Vec::new();
    for (n, meta) in dataset.meta().iter().enumerate() {
        for lead in 1..=dataset.lead_hours() {
            let Some(vis) = dataset.y(n, lead) else { continue };
            labels.push(spec.label_rule.label(f64::from(vis), meta.fog_code(lead))?);
            let start = values.len();
            for &(m, lag) in &resolved {
                values.push(if lead > lag { dataset.x(n, m, lead - lag).unwrap_or_else(missing) } else { missing() });
            }
            if spec.include_location {
                values.push(meta.station.lat as f32);
                values.push(meta.station.lon as f32);
            }
            if spec.include_calendar {
                let t = match spec.calendar_source {
                    CalendarSource::ValidTime => meta.valid_time(lead),
                    CalendarSource::LaunchTime => meta.launch,
                };
                values.extend([t.hour() as f32, t.day() as f32, t.month() as f32]);
            }
            if spec.include_recent_visibility {
                values.extend_from_slice(&meta.prior_visibility);
            }
            if spec.include_lead_time {
                values.push(f32::from(lead));
            }
            debug_assert_eq!(values.len() - start, cols);
            provenance.push(RowProvenance { station_id: meta.station.id.clone(), launch: meta.launch, lead });
        }
    }
    let weights = vec![1.0; labels.len()];
    FeatureMatrix::new(manifest, values, labels, weights, provenance)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: FeatureMatrix,
    pub val: FeatureMatrix,
    pub test: FeatureMatrix,
    /// Rows whose launch year is in none of the three sets.
    pub unassigned: usize,
}

/// Partitions rows by the year of their launch time.
pub fn chronological_split(
    matrix: &FeatureMatrix,
    train_years: &BTreeSet<i32>,
    val_years: &BTreeSet<i32>,
    test_years: &BTreeSet<i32>,
) -> Result<Splits> {
    let overlap = train_years
        .intersection(val_years)
        .chain(train_years.intersection(test_years))
        .chain(val_years.intersection(test_years))
        .next();
    if let Some(y) = overlap {
        return Err(Error::Config(format!("year {y} appears in more than one split")));
    }
    let (mut tr, mut va, mut te, mut none) = (Vec::new(), Vec::new(), Vec::new(), 0);
    for (i, p) in matrix.provenance().iter().enumerate() {
        let y = p.launch.year();
        if train_years.contains(&y) {
            tr.push(i);
        } else if val_years.contains(&y) {
            va.push(i);
        } else if test_years.contains(&y) {
            te.push(i);
        } else {
            none += 1;
        }
    }
    Ok(Splits {
        train: matrix.select_rows(&tr),
        val: matrix.select_rows(&va),
        test: matrix.select_rows(&te),
        unassigned: none,
    })
}

/// Parses year lists such as `2014-2017` or `2018,2020`. Empty input is the empty set.
pub fn parse_years(s: &str) -> Result<BTreeSet<i32>> {
    let mut out = BTreeSet::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let bad = || Error::Config(format!("bad year list {s:?}"));
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (i32, i32) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => {
                out.insert(part.parse().map_err(|_| bad())?);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{SampleMeta, Station, MISSING};

    fn dataset() -> Dataset {
        let cat = VariableCatalog::parse("R_H_GDS3_HTGL\nTMP_GDS3_HTGL\n").unwrap();
        let t = 6u16;
        let meta = vec![
            SampleMeta {
                station: Station::new("S1", 31.0, 122.0),
                launch: UtcTime::parse("2018-03-29T12:00:00Z").unwrap(),
                prior_visibility: [0.5, MISSING, 3.0],
                fog_code_mask: 0,
            },
            SampleMeta {
                station: Station::new("S1", 31.0, 122.0),
                launch: UtcTime::parse("2017-12-31T12:00:00Z").unwrap(),
                prior_visibility: [MISSING; 3],
                fog_code_mask: 0,
            },
        ];
        let x: Vec<f32> = (0..2 * 2 * 6).map(|i| i as f32).collect();
        let mut y = vec![MISSING; 12];
        y[1] = 0.8; // sample 0, lead 2
        y[5] = 1.0; // sample 0, lead 6
        y[8] = 4.0; // sample 1, lead 3
        Dataset::new(cat, t, meta, x, y).unwrap()
    }

    fn spec(preds: &[(&str, u16)]) -> FeatureSpec {
        FeatureSpec::new(PredictorSet {
            predictors: preds.iter().map(|&(v, lag)| Predictor { variable: v.into(), lag }).collect(),
        })
    }

    #[test]
    fn column_count() {
        let cat = VariableCatalog::standard();
        let names: Vec<String> = cat.names().take(10).map(String::from).collect();
        let set = PredictorSet {
            predictors: names
                .iter()
                .flat_map(|v| (0..6).map(move |lag| Predictor { variable: v.clone(), lag }))
                .collect(),
        };
        assert_eq!(FeatureSpec::new(set).manifest(&cat).len(), 69);
    }

    #[test]
    fn rows_follow_the_rules() {
        let ds = dataset();
        let fm = build_features(&ds, &spec(&[("R_H_GDS3_HTGL", 0), ("TMP_GDS3_HTGL", 5)])).unwrap();
        assert_eq!(fm.n_rows(), 3);
        assert_eq!(fm.labels(), &[1, 1, 0]);
        assert_eq!(
            fm.manifest(),
            [
                "R_H_GDS3_HTGL_lag0",
                "TMP_GDS3_HTGL_lag5",
                "lat",
                "lon",
                "hour",
                "day",
                "month",
                "vis_obs_0h",
                "vis_obs_m3h",
                "vis_obs_m6h",
                "lead_hour"
            ]
        );
        let r0 = fm.row(0);
        assert_eq!(r0[0], 1.0); // x[0][0][lead 2]
        assert!(r0[1].is_nan()); // lead 2, lag 5
                                 // 2018-03-29T12Z + 2 h
        assert_eq!(&r0[4..7], &[14.0, 29.0, 3.0]);
        assert_eq!(r0[7], 0.5);
        assert!(r0[8].is_nan());
        assert_eq!(r0[10], 2.0);
        let r1 = fm.row(1);
        assert_eq!(r1[1], 6.0); // variable 1 at lead 1 = index 6
        assert_eq!(fm.provenance()[2].valid_time(), UtcTime::parse("2017-12-31T15:00:00Z").unwrap());
    }

    #[test]
    fn calendar_of_valid_time() {
        let cat = VariableCatalog::parse("R_H_GDS3_HTGL\n").unwrap();
        let meta = vec![SampleMeta {
            station: Station::new("S1", 31.0, 122.0),
            launch: UtcTime::parse("2018-03-29T12:00:00Z").unwrap(),
            prior_visibility: [MISSING; 3],
            fog_code_mask: 0,
        }];
        let mut y = vec![MISSING; 14];
        y[13] = 2.0;
        let ds = Dataset::new(cat, 14, meta, vec![1.0; 14], y).unwrap();
        let fm = build_features(&ds, &spec(&[("R_H_GDS3_HTGL", 0)])).unwrap();
        let h = fm.column_index("hour").unwrap();
        assert_eq!(&fm.row(0)[h..h + 3], &[2.0, 30.0, 3.0]);
    }

    #[test]
    fn unknown_predictor_is_config_error() {
        assert!(matches!(build_features(&dataset(), &spec(&[("PRES_GDS3_SFC", 0)])), Err(Error::Config(_))));
    }

    #[test]
    fn empty_predictors_fall_back_to_lag0() {
        let fm = build_features(&dataset(), &spec(&[])).unwrap();
        assert_eq!(&fm.manifest()[..2], ["R_H_GDS3_HTGL_lag0", "TMP_GDS3_HTGL_lag0"]);
    }

    #[test]
    fn split_by_launch_year() {
        let fm = build_features(&dataset(), &spec(&[("R_H_GDS3_HTGL", 0)])).unwrap();
        let s = chronological_split(
            &fm,
            &parse_years("2014-2017").unwrap(),
            &parse_years("2018").unwrap(),
            &BTreeSet::new(),
        )
        .unwrap();
        // the 2017-12-31T12Z run stays in train even though it is valid in 2018
        assert_eq!(s.train.n_rows(), 1);
        assert_eq!(s.val.n_rows(), 2);
        assert_eq!(s.test.n_rows(), 0);
        assert!(chronological_split(
            &fm,
            &parse_years("2017-2018").unwrap(),
            &parse_years("2018").unwrap(),
            &BTreeSet::new()
        )
        .is_err());
    }

    #[test]
    fn container_round_trip() {
        let fm = build_features(&dataset(), &spec(&[("TMP_GDS3_HTGL", 1)])).unwrap();
        let mut buf = Vec::new();
        crate::container::write_features(&fm, &mut buf).unwrap();
        let back = crate::container::read_features(buf.as_slice()).unwrap();
        assert_eq!(back.manifest(), fm.manifest());
        assert_eq!(
            back.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            fm.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(back.provenance(), fm.provenance());
    }
}
