//! Time-lagged correlation analysis.
//!
//! Each observed visibility at lead `L` is paired with every catalog variable
//! at leads `L, L−1, …, L−τ` of the same forecast run. A cell is one
//! (variable, lag) pair; lags are stored as hours back and written to files
//! as non-positive offsets (`0, -1, …, -τ`).

use std::collections::BTreeSet;
use std::io::{Read, Write};

use log::warn;
use rayon::prelude::*;
use statrs::function::beta::beta_reg;

use crate::dataset::{Dataset, LabelRule};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TargetMode {
    /// Observed visibility in km.
    #[default]
    Visibility,
    /// Binary fog label (1 = fog).
    Label,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TlcaConfig {
    pub max_lag: u16,
    pub alpha: f64,
    pub months: BTreeSet<u32>,
    pub target: TargetMode,
    pub label_rule: LabelRule,
    /// Keep only the strongest this-many variables.
    pub max_variables: Option<usize>,
}

impl Default for TlcaConfig {
    fn default() -> Self {
        TlcaConfig {
            max_lag: 5,
            alpha: 0.05,
            months: (3..=7).collect(),
            target: TargetMode::Visibility,
            label_rule: LabelRule::default(),
            max_variables: None,
        }
    }
}

impl TlcaConfig {
    pub fn validate(&self, lead_hours: u16) -> Result<()> {
        if self.max_lag >= lead_hours {
            return Err(Error::Config(format!("max lag {} must be below the {lead_hours}-hour horizon", self.max_lag)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must be in (0,1), got {}", self.alpha)));
        }
        if self.months.is_empty() || self.months.iter().any(|m| !(1..=12).contains(m)) {
            return Err(Error::Config("month filter must be a non-empty subset of 1..=12".into()));
        }
        Ok(())
    }
}

/// Parses month lists such as `3-7` or `1,2,12`.
pub fn parse_months(s: &str) -> Result<BTreeSet<u32>> {
    let mut out = BTreeSet::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let bad = || Error::Config(format!("bad month list {s:?}"));
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u32, u32) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
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
    if out.is_empty() || out.iter().any(|m| !(1..=12).contains(m)) {
        return Err(Error::Config(format!("bad month list {s:?}")));
    }
    Ok(out)
}

/// Sample Pearson correlation, two-pass.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Input(format!("length mismatch {} vs {}", x.len(), y.len())));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!("{n} pairs, need at least 3")));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant input".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Significance {
    pub p_value: f64,
    pub significant: bool,
    /// `|r| = 1`: the statistic is infinite and `p = 0` by convention.
    pub exact: bool,
}

/// Two-sided Student-t test of `r` against zero with `n − 2` degrees of
/// freedom. The tail probability is `I_{df/(df+t²)}(df/2, 1/2)`.
pub fn significance(r: f64, n: usize, alpha: f64) -> Result<Significance> {
    if n < 3 {
        return Err(Error::InsufficientData(format!("{n} pairs, need at least 3")));
    }
    if !(-1.0..=1.0).contains(&r) {
        return Err(Error::Numeric(format!("correlation {r} outside [-1, 1]")));
    }
    if r.abs() == 1.0 {
        return Ok(Significance { p_value: 0.0, significant: true, exact: true });
    }
    let df = (n - 2) as f64;
    let r2 = r * r;
    // df/(df+t²) with t² = r²·df/(1−r²) simplifies to 1−r².
    let x = 1.0 - r2;
    let p = if r2 == 0.0 { 1.0 } else { beta_reg(df / 2.0, 0.5, x).clamp(0.0, 1.0) };
    Ok(Significance { p_value: p, significant: p < alpha, exact: false })
}

/// Student-t statistic for `r` with `n − 2` degrees of freedom.
pub fn t_statistic(r: f64, n: usize) -> f64 {
    r * ((n as f64 - 2.0) / (1.0 - r * r)).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationCell {
    pub variable: String,
    /// Catalog position of `variable`.
    pub variable_index: usize,
    /// Hours back from the valid time.
    pub lag: u16,
    pub n: usize,
    /// `None` when fewer than three pairs exist or either side is constant.
    pub r: Option<f64>,
    pub p_value: Option<f64>,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaggedCorrelationTable {
    pub max_lag: u16,
    pub alpha: f64,
    /// Cells in catalog order, then lag ascending.
    pub cells: Vec<CorrelationCell>,
}

impl LaggedCorrelationTable {
    pub fn cell(&self, variable: &str, lag: u16) -> Option<&CorrelationCell> {
        self.cells.iter().find(|c| c.variable == variable && c.lag == lag)
    }

    /// Lag with the largest defined `|r|` for `variable` (first lag on ties).
    pub fn argmax_lag(&self, variable: &str) -> Option<u16> {
        let mut best: Option<(f64, u16)> = None;
        for c in self.cells.iter().filter(|c| c.variable == variable) {
            if let Some(r) = c.r {
                if best.is_none_or(|(b, _)| r.abs() > b) {
                    best = Some((r.abs(), c.lag));
                }
            }
        }
        best.map(|(_, l)| l)
    }
}

pub fn lagged_correlations(dataset: &Dataset, cfg: &TlcaConfig) -> Result<LaggedCorrelationTable> {
    cfg.validate(dataset.lead_hours())?;
    // (sample, lead, target) for every labeled valid time inside the month filter.
    let mut targets: Vec<(usize, u16, f64)> = Vec::new();
    for (n, meta) in dataset.meta().iter().enumerate() {
        for lead in 1..=dataset.lead_hours() {
            let Some(vis) = dataset.y(n, lead) else { continue };
            if !cfg.months.contains(&meta.valid_time(lead).month()) {
                continue;
            }
            let y = match cfg.target {
                TargetMode::Visibility => f64::from(vis),
                TargetMode::Label => f64::from(cfg.label_rule.label(f64::from(vis), meta.fog_code(lead))?),
            };
            targets.push((n, lead, y));
        }
    }
    if targets.is_empty() {
        return Err(Error::InsufficientData("no labeled valid times fall inside the month filter".into()));
    }
    let catalog = dataset.catalog();
    let jobs: Vec<(usize, u16)> = (0..catalog.len()).flat_map(|m| (0..=cfg.max_lag).map(move |j| (m, j))).collect();
    let cells = jobs
        .par_iter()
        .map(|&(m, lag)| {
            let mut xs = Vec::with_capacity(targets.len());
            let mut ys = Vec::with_capacity(targets.len());
            for &(n, lead, y) in &targets {
                if lead <= lag {
                    continue;
                }
                if let Some(x) = dataset.x(n, m, lead - lag) {
                    xs.push(f64::from(x));
                    ys.push(y);
                }
            }
            let r = pearson(&xs, &ys).ok();
            let sig = r.map(|r| significance(r, xs.len(), cfg.alpha)).transpose()?;
            Ok(CorrelationCell {
                variable: catalog.channels()[m].name.clone(),
                variable_index: m,
                lag,
                n: xs.len(),
                r,
                p_value: sig.map(|s| s.p_value),
                significant: sig.is_some_and(|s| s.significant),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LaggedCorrelationTable { max_lag: cfg.max_lag, alpha: cfg.alpha, cells })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Predictor {
    pub variable: String,
    pub lag: u16,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictorSet {
    pub predictors: Vec<Predictor>,
}

impl PredictorSet {
    pub fn len(&self) -> usize {
        self.predictors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictors.is_empty()
    }

    /// Distinct variables in first-appearance order.
    pub fn variables(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        self.predictors.iter().filter(|p| seen.insert(p.variable.as_str())).map(|p| p.variable.as_str()).collect()
    }
}

/// Keeps every significant cell. Variables are ranked by their largest
/// significant `|r|`, ties by catalog position; within a variable, lags
/// ascend.
pub fn select_predictors(table: &LaggedCorrelationTable, cfg: &TlcaConfig) -> PredictorSet {
    let sig: Vec<&CorrelationCell> = table.cells.iter().filter(|c| c.significant).collect();
    let mut strength: Vec<(usize, f64)> = Vec::new();
    for c in &sig {
        let a = c.r.map_or(0.0, f64::abs);
        match strength.iter_mut().find(|(m, _)| *m == c.variable_index) {
            Some((_, s)) => *s = s.max(a),
            None => strength.push((c.variable_index, a)),
        }
    }
    strength.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    if let Some(cap) = cfg.max_variables {
        strength.truncate(cap);
    }
    let mut predictors = Vec::new();
    for (m, _) in &strength {
        let mut lags: Vec<&&CorrelationCell> = sig.iter().filter(|c| c.variable_index == *m).collect();
        lags.sort_by_key(|c| c.lag);
        predictors.extend(lags.iter().map(|c| Predictor { variable: c.variable.clone(), lag: c.lag }));
    }
    if predictors.is_empty() {
        warn!("no (variable, lag) cell passed the significance test");
    }
    PredictorSet { predictors }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

fn offset(lag: u16) -> String {
    if lag == 0 {
        "0".into()
    } else {
        format!("-{lag}")
    }
}

fn parse_offset(s: &str, line: u64) -> Result<u16> {
    let v: i64 = s.trim().parse().map_err(|_| Error::parse(line, format!("bad lag {s:?}")))?;
    if v > 0 || v < -i64::from(u16::MAX) {
        return Err(Error::parse(line, format!("lag must be a non-positive offset, got {v}")));
    }
    Ok((-v) as u16)
}

pub fn write_table<W: Write>(table: &LaggedCorrelationTable, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["variable", "lag", "r", "n", "p_value", "significant"])?;
    for c in &table.cells {
        w.write_record([
            c.variable.clone(),
            offset(c.lag),
            fmt_opt(c.r),
            c.n.to_string(),
            fmt_opt(c.p_value),
            c.significant.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_predictors<W: Write>(set: &PredictorSet, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["variable", "lag"])?;
    for p in &set.predictors {
        w.write_record([p.variable.clone(), offset(p.lag)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictors<R: Read>(reader: R) -> Result<PredictorSet> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    if rdr.headers()?.iter().collect::<Vec<_>>() != ["variable", "lag"] {
        return Err(Error::parse(1, "expected header variable,lag"));
    }
    let mut predictors = Vec::new();
    let mut seen = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 2 || rec[0].is_empty() {
            return Err(Error::parse(line, "expected variable,lag"));
        }
        let p = Predictor { variable: rec[0].to_string(), lag: parse_offset(&rec[1], line)? };
        if !seen.insert(p.clone()) {
            return Err(Error::DuplicateKey { line, key: format!("{},{}", p.variable, offset(p.lag)) });
        }
        predictors.push(p);
    }
    Ok(PredictorSet { predictors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pearson_examples() {
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap(), 1.0);
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[6.0, 4.0, 2.0]).unwrap(), -1.0);
        // cov sum 4, variance sums 5 and 5
        let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.8).abs() < 1e-15);
        assert!(matches!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::UndefinedCorrelation(_))));
        assert!(matches!(pearson(&[1.0, 2.0], &[1.0, 2.0]), Err(Error::InsufficientData(_))));
    }

    /// Two-sided p-value by Simpson integration of the Student-t density.
    fn t_tail_oracle(t: f64, df: f64) -> f64 {
        let ln_c = statrs::function::gamma::ln_gamma((df + 1.0) / 2.0)
            - statrs::function::gamma::ln_gamma(df / 2.0)
            - 0.5 * (df * std::f64::consts::PI).ln();
        let pdf = |x: f64| (ln_c - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp();
        let steps = 200_000;
        let h = t.abs() / steps as f64;
        let mut s = pdf(0.0) + pdf(t.abs());
        for i in 1..steps {
            s += pdf(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        1.0 - 2.0 * s * h / 3.0
    }

    #[test]
    fn significance_examples() {
        let s = significance(0.8, 4, 0.05).unwrap();
        assert!((t_statistic(0.8, 4) - 1.8856).abs() < 1e-4);
        // df = 2 has the closed form p = 1 − |r|.
        assert!((s.p_value - 0.2).abs() < 1e-12, "{}", s.p_value);
        assert!(!s.significant);
        let s0 = significance(0.0, 50, 0.05).unwrap();
        assert_eq!(s0.p_value, 1.0);
        assert!(!s0.significant);
        let big = significance(0.1, 10_000, 0.05).unwrap();
        assert!(big.significant && big.p_value < 1e-15);
        let e = significance(-1.0, 10, 0.05).unwrap();
        assert!(e.exact && e.p_value == 0.0);
    }

    #[test]
    fn significance_matches_quadrature() {
        for &(r, n) in &[(0.3, 12usize), (0.55, 7), (-0.2, 40), (0.05, 300)] {
            let p = significance(r, n, 0.05).unwrap().p_value;
            let o = t_tail_oracle(t_statistic(r, n), (n - 2) as f64);
            assert!((p - o).abs() < 1e-8, "r={r} n={n}: {p} vs {o}");
        }
    }

    #[test]
    fn months() {
        assert_eq!(parse_months("3-7").unwrap(), (3..=7).collect());
        assert_eq!(parse_months("12,1").unwrap(), [1, 12].into_iter().collect());
        assert!(parse_months("0-3").is_err());
        assert!(parse_months("7-3").is_err());
    }

    fn table(cells: &[(&str, usize, u16, f64, bool)]) -> LaggedCorrelationTable {
        LaggedCorrelationTable {
            max_lag: 5,
            alpha: 0.05,
            cells: cells
                .iter()
                .map(|&(v, m, lag, r, significant)| CorrelationCell {
                    variable: v.into(),
                    variable_index: m,
                    lag,
                    n: 100,
                    r: Some(r),
                    p_value: Some(if significant { 0.01 } else { 0.5 }),
                    significant,
                })
                .collect(),
        }
    }

    #[test]
    fn selection_order_and_cap() {
        let t = table(&[
            ("A", 0, 0, 0.2, true),
            ("A", 0, 1, 0.1, false),
            ("B", 1, 0, -0.5, true),
            ("B", 1, 3, 0.4, true),
            ("C", 2, 2, 0.2, true),
        ]);
        let set = select_predictors(&t, &TlcaConfig::default());
        let got: Vec<(&str, u16)> = set.predictors.iter().map(|p| (p.variable.as_str(), p.lag)).collect();
        assert_eq!(got, [("B", 0), ("B", 3), ("A", 0), ("C", 2)]);
        let capped = select_predictors(&t, &TlcaConfig { max_variables: Some(1), ..TlcaConfig::default() });
        assert_eq!(capped.len(), 2);
        let one = table(&[("A", 0, 0, 0.2, false), ("B", 1, 4, 0.3, true)]);
        assert_eq!(select_predictors(&one, &TlcaConfig::default()).len(), 1);
    }

    #[test]
    fn predictor_file_round_trip() {
        let set = PredictorSet {
            predictors: vec![
                Predictor { variable: "R_H_GDS3_HTGL".into(), lag: 3 },
                Predictor { variable: "R_H_GDS3_HTGL".into(), lag: 0 },
            ],
        };
        let mut buf = Vec::new();
        write_predictors(&set, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "variable,lag\nR_H_GDS3_HTGL,-3\nR_H_GDS3_HTGL,0\n");
        assert_eq!(read_predictors(buf.as_slice()).unwrap(), set);
        assert!(read_predictors("variable,lag\nX,2\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn pearson_symmetric_and_affine(
            xs in proptest::collection::vec(-1e3f64..1e3, 3..50),
            seed in 0u64..1000,
            a in 0.01f64..100.0, b in -100.0f64..100.0,
        ) {
            let ys: Vec<f64> = xs.iter().enumerate()
                .map(|(i, x)| x * 0.3 + ((i as u64 * 2654435761 + seed) % 97) as f64)
                .collect();
            if let (Ok(r1), Ok(r2)) = (pearson(&xs, &ys), pearson(&ys, &xs)) {
                prop_assert!((r1 - r2).abs() <= 1e-15);
                let xs2: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
                let r3 = pearson(&xs2, &ys).unwrap();
                prop_assert!((r1 - r3).abs() <= 1e-12);
            }
        }

        #[test]
        fn significance_monotone(r1 in 0.0f64..0.999, r2 in 0.0f64..0.999, n in 3usize..5000) {
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            let plo = significance(lo, n, 0.05).unwrap().p_value;
            let phi = significance(-hi, n, 0.05).unwrap().p_value;
            prop_assert!(phi <= plo);
        }
    }
}
