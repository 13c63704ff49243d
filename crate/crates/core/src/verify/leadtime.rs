//! Per-lead score curves, pooled aggregates and the pairing/report CSVs.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use super::scores::{ets, far, fmt_score, hss, pod, scores, ConfusionMatrix, FarDefinition, ScoreSet};
use crate::error::{Error, Result};
use crate::time::UtcTime;

pub const PAIRING_HEADER: [&str; 5] = ["station_id", "launch_utc", "lead_hour", "forecast_label", "observed_label"];
pub const REPORT_HEADER: [&str; 10] =
    ["lead_hour", "a", "b", "c", "d", "pod", "far_paper", "far_conventional", "ets", "hss"];
pub const HORIZONS: [u16; 2] = [24, 60];

/// One forecast at one station, launch and lead.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub station_id: String,
    pub launch: UtcTime,
    pub lead: u16,
    pub forecast: u8,
    pub observed: Option<u8>,
    /// Fog probability, when the forecast came from a model.
    pub probability: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregate {
    /// Sum the confusion counts over leads, then score.
    #[default]
    Pooled,
    /// Mean of the defined per-lead scores.
    Averaged,
}

impl fmt::Display for Aggregate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregate::Pooled => "pooled",
            Aggregate::Averaged => "averaged",
        })
    }
}

impl FromStr for Aggregate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled" => Ok(Aggregate::Pooled),
            "averaged" => Ok(Aggregate::Averaged),
            _ => Err(Error::Config(format!("unknown aggregate {s:?}; expected pooled or averaged"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonSummary {
    pub horizon: u16,
    pub counts: ConfusionMatrix,
    pub pod: Option<f64>,
    pub far_paper: Option<f64>,
    pub far_conventional: Option<f64>,
    pub ets: Option<f64>,
    pub hss: Option<f64>,
}

impl HorizonSummary {
    pub fn scores(&self, def: FarDefinition) -> ScoreSet {
        let far = match def {
            FarDefinition::Paper => self.far_paper,
            FarDefinition::Conventional => self.far_conventional,
        };
        ScoreSet { pod: self.pod, far, ets: self.ets, hss: self.hss }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeadTimeReport {
    pub stride: u16,
    pub aggregate: Aggregate,
    /// Every stride multiple up to the longest lead seen, empty buckets included.
    pub per_lead: Vec<(u16, ConfusionMatrix)>,
    pub horizons: Vec<HorizonSummary>,
    pub skipped_off_stride: usize,
    pub skipped_missing_obs: usize,
}

fn summarize(horizon: u16, per_lead: &[(u16, ConfusionMatrix)], aggregate: Aggregate) -> HorizonSummary {
    let within: Vec<&ConfusionMatrix> = per_lead.iter().filter(|(l, _)| *l <= horizon).map(|(_, c)| c).collect();
    let mut counts = ConfusionMatrix::default();
    for c in &within {
        counts.merge(c);
    }
    match aggregate {
        Aggregate::Pooled => HorizonSummary {
            horizon,
            counts,
            pod: pod(&counts),
            far_paper: far(&counts, FarDefinition::Paper),
            far_conventional: far(&counts, FarDefinition::Conventional),
            ets: ets(&counts),
            hss: hss(&counts),
        },
        Aggregate::Averaged => {
            let mean = |f: &dyn Fn(&ConfusionMatrix) -> Option<f64>| {
                let v: Vec<f64> = within.iter().filter_map(|c| f(c)).collect();
                (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
            };
            HorizonSummary {
                horizon,
                counts,
                pod: mean(&pod),
                far_paper: mean(&|c| far(c, FarDefinition::Paper)),
                far_conventional: mean(&|c| far(c, FarDefinition::Conventional)),
                ets: mean(&ets),
                hss: mean(&hss),
            }
        }
    }
}

pub fn score_by_leadtime(pairs: &[Pair], stride: u16, aggregate: Aggregate) -> Result<LeadTimeReport> {
    if stride == 0 {
        return Err(Error::Config("lead stride must be positive".into()));
    }
    let mut buckets: BTreeMap<u16, ConfusionMatrix> = BTreeMap::new();
    let (mut off, mut missing) = (0, 0);
    for p in pairs {
        if p.lead == 0 || p.lead % stride != 0 {
            off += 1;
            continue;
        }
        match p.observed {
            Some(o) => buckets.entry(p.lead).or_default().add(p.forecast, o),
            None => missing += 1,
        }
    }
    if off > 0 {
        log::warn!("{off} pairs off the {stride}-hour lead stride were skipped");
    }
    let max_lead = buckets.keys().next_back().copied().unwrap_or(0).max(*HORIZONS.last().unwrap());
    let per_lead: Vec<(u16, ConfusionMatrix)> = (1..=max_lead / stride)
        .map(|k| k * stride)
        .map(|l| (l, buckets.get(&l).copied().unwrap_or_default()))
        .collect();
    let horizons = HORIZONS.iter().map(|&h| summarize(h, &per_lead, aggregate)).collect();
    Ok(LeadTimeReport { stride, aggregate, per_lead, horizons, skipped_off_stride: off, skipped_missing_obs: missing })
}

fn report_row(label: &str, cm: &ConfusionMatrix, s: &[Option<f64>]) -> Vec<String> {
    let mut row = vec![label.to_string(), cm.a.to_string(), cm.b.to_string(), cm.c.to_string(), cm.d.to_string()];
    row.extend(s.iter().map(|v| fmt_score(*v)));
    row
}

pub fn write_report<W: Write>(report: &LeadTimeReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(REPORT_HEADER)?;
    for (lead, cm) in &report.per_lead {
        let s = [pod(cm), far(cm, FarDefinition::Paper), far(cm, FarDefinition::Conventional), ets(cm), hss(cm)];
        w.write_record(report_row(&lead.to_string(), cm, &s))?;
    }
    let prefix = match report.aggregate {
        Aggregate::Pooled => "pooled",
        Aggregate::Averaged => "mean",
    };
    for h in &report.horizons {
        let s = [h.pod, h.far_paper, h.far_conventional, h.ets, h.hss];
        w.write_record(report_row(&format!("{prefix}_{}", h.horizon), &h.counts, &s))?;
    }
    w.flush()?;
    Ok(())
}

/// Per-lead and aggregate rows with a single FAR column under `def`:
/// `lead_hour,a,b,c,d,pod,far,ets,hss`.
pub fn write_scores<W: Write>(report: &LeadTimeReport, def: FarDefinition, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["lead_hour", "a", "b", "c", "d", "pod", "far", "ets", "hss"])?;
    for (lead, cm) in &report.per_lead {
        let s = scores(cm, def);
        w.write_record(report_row(&lead.to_string(), cm, &[s.pod, s.far, s.ets, s.hss]))?;
    }
    let prefix = match report.aggregate {
        Aggregate::Pooled => "pooled",
        Aggregate::Averaged => "mean",
    };
    for h in &report.horizons {
        let s = h.scores(def);
        w.write_record(report_row(&format!("{prefix}_{}", h.horizon), &h.counts, &[s.pod, s.far, s.ets, s.hss]))?;
    }
    w.flush()?;
    Ok(())
}

/// Fixed-width POD/FAR/ETS/HSS by horizon table.
pub fn summary_table(report: &LeadTimeReport, def: FarDefinition) -> String {
    let mut out = String::from("metric");
    for h in &report.horizons {
        out.push_str(&format!("  {:>9}", format!("{}h", h.horizon)));
    }
    out.push('\n');
    type Metric = fn(&ScoreSet) -> Option<f64>;
    let rows: [(&str, Metric); 4] = [("POD", |s| s.pod), ("FAR", |s| s.far), ("ETS", |s| s.ets), ("HSS", |s| s.hss)];
    for (name, get) in rows {
        out.push_str(&format!("{name:<6}"));
        for h in &report.horizons {
            out.push_str(&format!("  {:>9}", fmt_score(get(&h.scores(def)))));
        }
        out.push('\n');
    }
    out
}

fn label_field(s: &str, line: u64, what: &str) -> Result<Option<u8>> {
    match s.trim() {
        "" | "NA" => Ok(None),
        "0" => Ok(Some(0)),
        "1" => Ok(Some(1)),
        v => Err(Error::parse(line, format!("{what} must be 0, 1 or empty, got {v:?}"))),
    }
}

/// Reads a pairing CSV. Extra columns are allowed; a `probability` column is kept.
pub fn read_pairs<R: Read>(reader: R) -> Result<Vec<Pair>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = r.headers()?.clone();
    if header.len() < PAIRING_HEADER.len() || header.iter().zip(PAIRING_HEADER).any(|(a, b)| a.trim() != b) {
        return Err(Error::parse(1, format!("pairing header must start with {}", PAIRING_HEADER.join(","))));
    }
    let prob_col = header.iter().position(|h| h.trim() == "probability");
    let mut pairs = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i as u64 + 2;
        let launch = UtcTime::parse(rec[1].trim()).map_err(|e| Error::parse(line, e.to_string()))?;
        let lead: u16 =
            rec[2].trim().parse().map_err(|_| Error::parse(line, format!("bad lead_hour {:?}", &rec[2])))?;
        let forecast = label_field(&rec[3], line, "forecast_label")?
            .ok_or_else(|| Error::parse(line, "forecast_label is required"))?;
        let observed = label_field(&rec[4], line, "observed_label")?;
        let probability = match prob_col.and_then(|c| rec.get(c)).map(str::trim) {
            None | Some("") | Some("NA") => None,
            Some(v) => Some(v.parse().map_err(|_| Error::parse(line, format!("bad probability {v:?}")))?),
        };
        pairs.push(Pair { station_id: rec[0].trim().to_string(), launch, lead, forecast, observed, probability });
    }
    Ok(pairs)
}

pub fn write_pairs<W: Write>(pairs: &[Pair], writer: W) -> Result<()> {
    let with_prob = pairs.iter().any(|p| p.probability.is_some());
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = PAIRING_HEADER.to_vec();
    if with_prob {
        header.push("probability");
    }
    w.write_record(&header)?;
    for p in pairs {
        let mut row = vec![
            p.station_id.clone(),
            p.launch.to_string(),
            p.lead.to_string(),
            p.forecast.to_string(),
            p.observed.map_or_else(String::new, |o| o.to_string()),
        ];
        if with_prob {
            row.push(p.probability.map_or_else(String::new, |v| v.to_string()));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalScore {
    pub report: LeadTimeReport,
    /// Forecast keys with no observation entry.
    pub unmatched_forecasts: usize,
    /// Observation keys with no forecast entry.
    pub unmatched_observations: usize,
}

type PairKey = (String, UtcTime, u16);

/// Joins forecast labels from one pairing set with observed labels from
/// another on `(station_id, launch_utc, lead_hour)`, then scores by lead.
pub fn score_external(
    forecasts: &[Pair],
    observations: &[Pair],
    stride: u16,
    aggregate: Aggregate,
) -> Result<ExternalScore> {
    let mut obs: HashMap<PairKey, Option<u8>> = HashMap::with_capacity(observations.len());
    for o in observations {
        let key = (o.station_id.clone(), o.launch, o.lead);
        if obs.insert(key, o.observed).is_some() {
            return Err(Error::Input(format!("duplicate observation key {} {} +{}h", o.station_id, o.launch, o.lead)));
        }
    }
    let mut joined = Vec::with_capacity(forecasts.len());
    let mut unmatched_forecasts = 0;
    let mut matched = 0;
    for f in forecasts {
        match obs.get(&(f.station_id.clone(), f.launch, f.lead)) {
            Some(o) => {
                matched += 1;
                joined.push(Pair { observed: *o, ..f.clone() });
            }
            None => unmatched_forecasts += 1,
        }
    }
    let unmatched_observations = observations.len().saturating_sub(matched);
    if unmatched_forecasts + unmatched_observations > 0 {
        log::warn!("{unmatched_forecasts} forecast keys and {unmatched_observations} observation keys unmatched");
    }
    if joined.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no forecast keys match the observations ({unmatched_forecasts} unmatched)"
        )));
    }
    Ok(ExternalScore {
        report: score_by_leadtime(&joined, stride, aggregate)?,
        unmatched_forecasts,
        unmatched_observations,
    })
}
