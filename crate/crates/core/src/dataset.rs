//! The sample × variable × lead-hour forecast tensor with matched visibility
//! observations, plus the fog label definition.

use std::collections::HashSet;

use crate::catalog::VariableCatalog;
use crate::error::{Error, Result};
use crate::time::UtcTime;

/// In-memory and on-disk missing marker (canonical quiet NaN). Use
/// [`Dataset::x`] / [`Dataset::y`], which surface it as `None`.
pub const MISSING: f32 = f32::NAN;
pub const MISSING_BITS: u32 = 0x7FC0_0000;

/// Visibility at or below this many km is fog.
pub const FOG_THRESHOLD_KM: f64 = 1.0;

/// Longest station identifier the fixed-width container records accept.
pub const STATION_ID_BYTES: usize = 16;

/// Largest lead horizon; the per-sample fog-code mask is a u64.
pub const MAX_LEAD_HOURS: u16 = 64;

/// Observation offsets (hours relative to launch) carried with each sample.
pub const PRIOR_OBS_OFFSETS: [i64; 3] = [0, -3, -6];

pub fn missing() -> f32 {
    f32::from_bits(MISSING_BITS)
}

pub fn opt(v: f32) -> Option<f32> {
    if v.is_nan() {
        None
    } else {
        Some(v)
    }
}

pub fn from_opt(v: Option<f32>) -> f32 {
    v.unwrap_or_else(missing)
}

/// 1 when `vis ≤ threshold` (inclusive), else 0.
pub fn label_from_visibility(vis: f64, threshold: f64) -> Result<u8> {
    if !vis.is_finite() || vis < 0.0 {
        return Err(Error::Input(format!("visibility must be finite and ≥ 0, got {vis}")));
    }
    Ok(u8::from(vis <= threshold))
}

/// WMO present-weather codes 40–49 report fog at the time of observation.
pub fn is_fog_weather_code(code: u16) -> bool {
    (40..=49).contains(&code)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelMode {
    #[default]
    Visibility,
    /// Fog additionally requires a fog present-weather code.
    VisibilityAndWeather,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelRule {
    pub threshold_km: f64,
    pub mode: LabelMode,
}

impl Default for LabelRule {
    fn default() -> Self {
        LabelRule { threshold_km: FOG_THRESHOLD_KM, mode: LabelMode::Visibility }
    }
}

impl LabelRule {
    pub fn label(&self, vis: f64, fog_code: bool) -> Result<u8> {
        let by_vis = label_from_visibility(vis, self.threshold_km)?;
        Ok(match self.mode {
            LabelMode::Visibility => by_vis,
            LabelMode::VisibilityAndWeather => by_vis & u8::from(fog_code),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Station {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
}

impl Station {
    pub fn new(id: impl Into<String>, lat: f64, lon: f64) -> Self {
        Station { id: id.into(), lat, lon }
    }

    /// Inside 26.5–33.5°N, 117–126°E. Outside is allowed but worth a warning.
    pub fn in_study_area(&self) -> bool {
        (26.5..=33.5).contains(&self.lat) && (117.0..=126.0).contains(&self.lon)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleMeta {
    pub station: Station,
    pub launch: UtcTime,
    /// Observed visibility (km) at launch, launch−3 h and launch−6 h.
    pub prior_visibility: [f32; 3],
    /// Bit `lead − 1` is set when the observation at that valid time carried
    /// a fog present-weather code.
    pub fog_code_mask: u64,
}

impl SampleMeta {
    pub fn valid_time(&self, lead: u16) -> UtcTime {
        self.launch.add_hours(i64::from(lead))
    }

    pub fn fog_code(&self, lead: u16) -> bool {
        lead >= 1 && (self.fog_code_mask >> (lead - 1)) & 1 == 1
    }
}

/// `x` is laid out `[sample][variable][lead − 1]`, `y` is `[sample][lead − 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    catalog: VariableCatalog,
    lead_hours: u16,
    meta: Vec<SampleMeta>,
    x: Vec<f32>,
    y: Vec<f32>,
}

impl Dataset {
    pub fn new(
        catalog: VariableCatalog,
        lead_hours: u16,
        meta: Vec<SampleMeta>,
        x: Vec<f32>,
        y: Vec<f32>,
    ) -> Result<Self> {
        if lead_hours == 0 || lead_hours > MAX_LEAD_HOURS {
            return Err(Error::Config(format!("lead horizon must be in 1..={MAX_LEAD_HOURS}, got {lead_hours}")));
        }
        let n = meta.len();
        let m = catalog.len();
        let t = usize::from(lead_hours);
        if x.len() != n * m * t {
            return Err(Error::Input(format!("X holds {} values, expected {n}×{m}×{t}", x.len())));
        }
        if y.len() != n * t {
            return Err(Error::Input(format!("Y holds {} values, expected {n}×{t}", y.len())));
        }
        if let Some(v) = x.iter().find(|v| v.is_infinite()) {
            return Err(Error::Input(format!("non-finite forecast value {v}")));
        }
        if let Some(v) = y.iter().find(|v| v.is_infinite() || **v < 0.0) {
            return Err(Error::Input(format!("invalid observed visibility {v}")));
        }
        let mut seen = HashSet::with_capacity(n);
        for s in &meta {
            if s.station.id.is_empty() || s.station.id.len() > STATION_ID_BYTES {
                return Err(Error::Input(format!(
                    "station id {:?} must be 1..={STATION_ID_BYTES} bytes",
                    s.station.id
                )));
            }
            if !seen.insert((s.station.id.as_str(), s.launch)) {
                return Err(Error::Input(format!("duplicate sample for station {} launch {}", s.station.id, s.launch)));
            }
        }
        // Canonicalize NaN payloads so serialization is bit-stable.
        let canon = |v: f32| if v.is_nan() { missing() } else { v };
        let mut meta = meta;
        for s in &mut meta {
            for p in &mut s.prior_visibility {
                *p = canon(*p);
            }
        }
        Ok(Dataset {
            catalog,
            lead_hours,
            meta,
            x: x.into_iter().map(canon).collect(),
            y: y.into_iter().map(canon).collect(),
        })
    }

    pub fn catalog(&self) -> &VariableCatalog {
        &self.catalog
    }

    pub fn lead_hours(&self) -> u16 {
        self.lead_hours
    }

    pub fn n_samples(&self) -> usize {
        self.meta.len()
    }

    pub fn n_variables(&self) -> usize {
        self.catalog.len()
    }

    pub fn meta(&self) -> &[SampleMeta] {
        &self.meta
    }

    pub fn x_values(&self) -> &[f32] {
        &self.x
    }

    pub fn y_values(&self) -> &[f32] {
        &self.y
    }

    fn t(&self) -> usize {
        usize::from(self.lead_hours)
    }

    /// Forecast value of `variable` at `lead` (1-based) for sample `n`.
    pub fn x(&self, n: usize, variable: usize, lead: u16) -> Option<f32> {
        if lead == 0 || lead > self.lead_hours {
            return None;
        }
        let t = self.t();
        opt(self.x[(n * self.n_variables() + variable) * t + usize::from(lead) - 1])
    }

    /// Observed visibility (km) at `lead` for sample `n`.
    pub fn y(&self, n: usize, lead: u16) -> Option<f32> {
        if lead == 0 || lead > self.lead_hours {
            return None;
        }
        opt(self.y[n * self.t() + usize::from(lead) - 1])
    }

    pub fn label(&self, n: usize, lead: u16, rule: &LabelRule) -> Result<Option<u8>> {
        match self.y(n, lead) {
            None => Ok(None),
            Some(v) => rule.label(f64::from(v), self.meta[n].fog_code(lead)).map(Some),
        }
    }

    /// A new dataset holding the given samples, in the given order.
    pub fn select(&self, samples: &[usize]) -> Dataset {
        let (m, t) = (self.n_variables(), self.t());
        let mut x = Vec::with_capacity(samples.len() * m * t);
        let mut y = Vec::with_capacity(samples.len() * t);
        for &n in samples {
            x.extend_from_slice(&self.x[n * m * t..(n + 1) * m * t]);
            y.extend_from_slice(&self.y[n * t..(n + 1) * t]);
        }
        Dataset {
            catalog: self.catalog.clone(),
            lead_hours: self.lead_hours,
            meta: samples.iter().map(|&n| self.meta[n].clone()).collect(),
            x,
            y,
        }
    }

    /// Number of (sample, lead) cells with an observation.
    pub fn n_labeled(&self) -> usize {
        self.y.iter().filter(|v| !v.is_nan()).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{Channel, VariableCatalog};
    use proptest::prelude::*;

    #[test]
    fn label_examples() {
        assert_eq!(label_from_visibility(0.5, 1.0).unwrap(), 1);
        assert_eq!(label_from_visibility(1.0, 1.0).unwrap(), 1);
        assert_eq!(label_from_visibility(1.001, 1.0).unwrap(), 0);
        assert!(label_from_visibility(-0.1, 1.0).is_err());
        assert!(label_from_visibility(f64::NAN, 1.0).is_err());
        assert!(label_from_visibility(f64::INFINITY, 1.0).is_err());
    }

    #[test]
    fn weather_conjunction() {
        let rule = LabelRule { mode: LabelMode::VisibilityAndWeather, ..LabelRule::default() };
        assert_eq!(rule.label(0.4, true).unwrap(), 1);
        assert_eq!(rule.label(0.4, false).unwrap(), 0);
        assert_eq!(rule.label(3.0, true).unwrap(), 0);
    }

    fn tiny(meta: Vec<SampleMeta>) -> Result<Dataset> {
        let cat = VariableCatalog::new(vec![Channel::raw("R_H_GDS3_HTGL")]).unwrap();
        let n = meta.len();
        Dataset::new(cat, 2, meta, vec![1.0; n * 2], vec![MISSING; n * 2])
    }

    #[test]
    fn rejects_duplicate_samples() {
        let s = SampleMeta {
            station: Station::new("S1", 31.0, 122.0),
            launch: UtcTime(0),
            prior_visibility: [MISSING; 3],
            fog_code_mask: 0,
        };
        assert!(tiny(vec![s.clone()]).is_ok());
        assert!(tiny(vec![s.clone(), s]).is_err());
    }

    proptest! {
        #[test]
        fn label_is_monotone(a in 0.0f64..50.0, b in 0.0f64..50.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(label_from_visibility(lo, 1.0).unwrap() >= label_from_visibility(hi, 1.0).unwrap());
        }
    }
}
