//! Confusion matrices and categorical skill scores.
//!
//! ETS and HSS are evaluated as ratios of exact integers, so a zero
//! denominator is detected exactly and reported as undefined.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    /// Hits.
    pub a: u64,
    /// False alarms.
    pub b: u64,
    /// Misses.
    pub c: u64,
    /// Correct rejections.
    pub d: u64,
}

impl ConfusionMatrix {
    pub fn new(a: u64, b: u64, c: u64, d: u64) -> Self {
        ConfusionMatrix { a, b, c, d }
    }

    pub fn n(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }

    pub fn add(&mut self, forecast: u8, observed: u8) {
        match (forecast, observed) {
            (1, 1) => self.a += 1,
            (1, _) => self.b += 1,
            (_, 1) => self.c += 1,
            _ => self.d += 1,
        }
    }

    pub fn merge(&mut self, o: &ConfusionMatrix) {
        self.a += o.a;
        self.b += o.b;
        self.c += o.c;
        self.d += o.d;
    }
}

/// Counts forecast/observation pairs, skipping missing observations.
pub fn confusion(forecast: &[u8], observed: &[Option<u8>]) -> Result<ConfusionMatrix> {
    if forecast.len() != observed.len() {
        return Err(Error::Input(format!("{} forecasts vs {} observations", forecast.len(), observed.len())));
    }
    let mut cm = ConfusionMatrix::default();
    for (&f, o) in forecast.iter().zip(observed) {
        if f > 1 || o.is_some_and(|o| o > 1) {
            return Err(Error::Input("labels must be 0 or 1".into()));
        }
        if let Some(o) = o {
            cm.add(f, *o);
        }
    }
    if cm.n() == 0 {
        return Err(Error::EmptyDataset("no pairs with an observation".into()));
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FarDefinition {
    /// `b / (a + d)`
    #[default]
    Paper,
    /// `b / (a + b)`
    Conventional,
}

impl fmt::Display for FarDefinition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FarDefinition::Paper => "paper",
            FarDefinition::Conventional => "conventional",
        })
    }
}

impl FromStr for FarDefinition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(FarDefinition::Paper),
            "conventional" => Ok(FarDefinition::Conventional),
            _ => Err(Error::Config(format!("unknown FAR definition {s:?}; expected paper or conventional"))),
        }
    }
}

/// `None` marks an undefined score.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ScoreSet {
    pub pod: Option<f64>,
    pub far: Option<f64>,
    pub ets: Option<f64>,
    pub hss: Option<f64>,
}

fn ratio(num: i128, den: i128) -> Option<f64> {
    (den != 0).then(|| num as f64 / den as f64)
}

pub fn pod(cm: &ConfusionMatrix) -> Option<f64> {
    ratio(cm.a.into(), (cm.a + cm.c).into())
}

pub fn far(cm: &ConfusionMatrix, def: FarDefinition) -> Option<f64> {
    match def {
        FarDefinition::Paper => ratio(cm.b.into(), (cm.a + cm.d).into()),
        FarDefinition::Conventional => ratio(cm.b.into(), (cm.a + cm.b).into()),
    }
}

/// `(a − a_r)/(a + b + c − a_r)` with `a_r = (a+b)(a+c)/n`, scaled by `n`.
pub fn ets(cm: &ConfusionMatrix) -> Option<f64> {
    let (a, b, c) = (i128::from(cm.a), i128::from(cm.b), i128::from(cm.c));
    let n = i128::from(cm.n());
    if n == 0 {
        return None;
    }
    let chance = (a + b) * (a + c);
    ratio(a * n - chance, (a + b + c) * n - chance)
}

/// `(PCF − E)/(1 − E)` with `PCF = (a+d)/n`, scaled by `n²`.
pub fn hss(cm: &ConfusionMatrix) -> Option<f64> {
    let (a, b, c, d) = (i128::from(cm.a), i128::from(cm.b), i128::from(cm.c), i128::from(cm.d));
    let n = i128::from(cm.n());
    if n == 0 {
        return None;
    }
    let s = (a + b) * (a + c) + (c + d) * (b + d);
    ratio((a + d) * n - s, n * n - s)
}

pub fn scores(cm: &ConfusionMatrix, def: FarDefinition) -> ScoreSet {
    ScoreSet { pod: pod(cm), far: far(cm, def), ets: ets(cm), hss: hss(cm) }
}

/// Renders a score, `NA` when undefined.
pub fn fmt_score(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |v| format!("{v:.6}"))
}
