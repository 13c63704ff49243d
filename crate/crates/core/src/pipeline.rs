//! End-to-end runs: predictor selection, features, training, scoring, and
//! the ablation grid over predictors, objectives and learning strategies.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::str::FromStr;

use crate::catalog::{DPT_2M, RH_2M, TMP_2M};
use crate::dataset::{Dataset, LabelRule, FOG_THRESHOLD_KM};
use crate::ensemble::{self, classify, EnsembleConfig, EnsembleModel, Strategy, ENSEMBLE_FORMAT};
use crate::error::{Error, Result};
use crate::featurize::{all_lag0, all_lagged, build_features, chronological_split, FeatureMatrix, FeatureSpec};
use crate::gbdt::{self, load_model, BoostedModel, GbdtConfig, MODEL_FORMAT};
use crate::objectives::Objective;
use crate::tlca::{lagged_correlations, select_predictors, LaggedCorrelationTable, PredictorSet, TlcaConfig};
use crate::verify::{
    fmt_score, fsl_visibility, score_by_leadtime, Aggregate, FarDefinition, HorizonSummary, LeadTimeReport, Pair,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PredictorSource {
    #[default]
    Tlca,
    /// Every catalog variable at lag 0.
    AllLag0,
    /// Every catalog variable at lags 0 through the TLCA maximum lag.
    AllLagged,
}

impl fmt::Display for PredictorSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PredictorSource::Tlca => "tlca",
            PredictorSource::AllLag0 => "all_lag0",
            PredictorSource::AllLagged => "all_lagged",
        })
    }
}

impl FromStr for PredictorSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tlca" => Ok(PredictorSource::Tlca),
            "all_lag0" => Ok(PredictorSource::AllLag0),
            "all_lagged" => Ok(PredictorSource::AllLagged),
            _ => Err(Error::Config(format!("unknown predictor source {s:?}; expected tlca, all_lag0 or all_lagged"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub tlca: TlcaConfig,
    pub predictors: PredictorSource,
    pub train_years: BTreeSet<i32>,
    pub val_years: BTreeSet<i32>,
    pub test_years: BTreeSet<i32>,
    pub objective: Objective,
    pub gbdt: GbdtConfig,
    /// One member with no resampling trains a single model on the full set.
    pub ensemble: EnsembleConfig,
    pub stride: u16,
    pub aggregate: Aggregate,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            tlca: TlcaConfig::default(),
            predictors: PredictorSource::Tlca,
            train_years: BTreeSet::new(),
            val_years: BTreeSet::new(),
            test_years: BTreeSet::new(),
            objective: "focal:0.2:4".parse().expect("valid objective"),
            gbdt: GbdtConfig::default(),
            ensemble: EnsembleConfig::default(),
            stride: 3,
            aggregate: Aggregate::Pooled,
        }
    }
}

/// A trained model of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Single(BoostedModel),
    Ensemble(EnsembleModel),
}

impl Model {
    pub fn manifest(&self) -> &[String] {
        match self {
            Model::Single(m) => &m.manifest,
            Model::Ensemble(e) => e.manifest(),
        }
    }

    pub fn predict_matrix(&self, m: &FeatureMatrix) -> Result<Vec<f64>> {
        match self {
            Model::Single(s) => s.predict_matrix(m),
            Model::Ensemble(e) => e.predict_matrix(m),
        }
    }

    /// The ensemble's stored threshold, or `fallback` for a single model.
    pub fn threshold(&self, fallback: f64) -> f64 {
        match self {
            Model::Single(_) => fallback,
            Model::Ensemble(e) => e.config.threshold,
        }
    }

    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        match self {
            Model::Single(m) => gbdt::save_model(m, w),
            Model::Ensemble(e) => e.save(w),
        }
    }

    /// Loads either file kind, told apart by the first word.
    pub fn load<R: Read>(source: R) -> Result<Model> {
        let mut r = BufReader::new(source);
        let kind = {
            let buf = r.fill_buf()?;
            let end = buf.iter().position(|&b| b == b' ' || b == b'\n').unwrap_or(buf.len());
            String::from_utf8_lossy(&buf[..end]).into_owned()
        };
        match kind.as_str() {
            MODEL_FORMAT => Ok(Model::Single(load_model(r)?)),
            ENSEMBLE_FORMAT => Ok(Model::Ensemble(EnsembleModel::load(r)?)),
            _ => Err(Error::Format(format!("unrecognised model file (starts with {kind:?})"))),
        }
    }
}

/// Predictor set for `source`. TLCA sees only the training-year samples.
pub fn choose_predictors(
    dataset: &Dataset,
    cfg: &RunConfig,
    source: PredictorSource,
) -> Result<(Option<LaggedCorrelationTable>, PredictorSet)> {
    match source {
        PredictorSource::AllLag0 => Ok((None, all_lag0(dataset.catalog()))),
        PredictorSource::AllLagged => Ok((None, all_lagged(dataset.catalog(), cfg.tlca.max_lag))),
        PredictorSource::Tlca => {
            let train: Vec<usize> = (0..dataset.n_samples())
                .filter(|&n| cfg.train_years.contains(&dataset.meta()[n].launch.year()))
                .collect();
            let table = lagged_correlations(&dataset.select(&train), &cfg.tlca)?;
            let set = select_predictors(&table, &cfg.tlca);
            Ok((Some(table), set))
        }
    }
}

/// Scores each row at `threshold`; the row label becomes the observation.
pub fn predict_pairs(model: &Model, matrix: &FeatureMatrix, threshold: f64) -> Result<Vec<Pair>> {
    let probs = model.predict_matrix(matrix)?;
    Ok(matrix
        .provenance()
        .iter()
        .zip(matrix.labels())
        .zip(probs)
        .map(|((p, &label), prob)| Pair {
            station_id: p.station_id.clone(),
            launch: p.launch,
            lead: p.lead,
            forecast: classify(prob, threshold),
            observed: Some(label),
            probability: Some(prob),
        })
        .collect())
}

pub fn train_model(train: &FeatureMatrix, val: Option<&FeatureMatrix>, cfg: &RunConfig) -> Result<EnsembleModel> {
    let val = val.filter(|v| v.n_rows() > 0);
    ensemble::fit(train, val, &cfg.objective, &cfg.gbdt, &cfg.ensemble)
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub table: Option<LaggedCorrelationTable>,
    pub predictors: PredictorSet,
    pub model: EnsembleModel,
    pub test_pairs: Vec<Pair>,
    pub report: LeadTimeReport,
}

pub fn run_with_predictors(dataset: &Dataset, cfg: &RunConfig, predictors: PredictorSet) -> Result<RunOutcome> {
    let spec = FeatureSpec { label_rule: cfg.tlca.label_rule, ..FeatureSpec::new(predictors.clone()) };
    let matrix = build_features(dataset, &spec)?;
    let splits = chronological_split(&matrix, &cfg.train_years, &cfg.val_years, &cfg.test_years)?;
    if splits.train.n_rows() == 0 || splits.test.n_rows() == 0 {
        return Err(Error::EmptyDataset("training or test years select no rows".into()));
    }
    let model = train_model(&splits.train, Some(&splits.val), cfg)?;
    let test_pairs = predict_pairs(&Model::Ensemble(model.clone()), &splits.test, cfg.ensemble.threshold)?;
    let report = score_by_leadtime(&test_pairs, cfg.stride, cfg.aggregate)?;
    Ok(RunOutcome { table: None, predictors, model, test_pairs, report })
}

/// Predictor selection, features, chronological split, training and
/// held-out scoring.
pub fn run(dataset: &Dataset, cfg: &RunConfig) -> Result<RunOutcome> {
    let (table, predictors) = choose_predictors(dataset, cfg, cfg.predictors)?;
    let mut out = run_with_predictors(dataset, cfg, predictors)?;
    out.table = table;
    Ok(out)
}

/// Analytic visibility forecasts for every labeled cell. Cells missing
/// temperature, dew point or rh are skipped.
pub fn fsl_baseline(dataset: &Dataset, rule: &LabelRule, cap_km: f64) -> Result<(Vec<Pair>, usize)> {
    let cat = dataset.catalog();
    let idx = |name: &str| {
        cat.index_of(name).ok_or_else(|| Error::Config(format!("the FSL baseline needs {name} in the catalog")))
    };
    let (t, td, rh) = (idx(TMP_2M)?, idx(DPT_2M)?, idx(RH_2M)?);
    let mut pairs = Vec::new();
    let mut skipped = 0;
    for (n, meta) in dataset.meta().iter().enumerate() {
        for lead in 1..=dataset.lead_hours() {
            let Some(observed) = dataset.label(n, lead, rule)? else { continue };
            let (Some(tv), Some(tdv), Some(rhv)) =
                (dataset.x(n, t, lead), dataset.x(n, td, lead), dataset.x(n, rh, lead))
            else {
                skipped += 1;
                continue;
            };
            let vis = fsl_visibility(f64::from(tv), f64::from(tdv), f64::from(rhv), cap_km)?;
            pairs.push(Pair {
                station_id: meta.station.id.clone(),
                launch: meta.launch,
                lead,
                forecast: u8::from(vis <= FOG_THRESHOLD_KM),
                observed: Some(observed),
                probability: None,
            });
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} cells lacked temperature, dew point or rh and were skipped");
    }
    Ok((pairs, skipped))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub group: String,
    pub label: String,
    pub predictors: PredictorSource,
    pub objective: Objective,
    pub members: usize,
    pub strategy: Strategy,
}

/// The three comparison blocks: predictor sets under cross-entropy, losses
/// on TLCA predictors, then learning strategies under focal (0.2, 4).
pub fn standard_plan() -> Vec<AblationRow> {
    let ce = Objective::CrossEntropy;
    let focal = |s: &str| -> Objective { s.parse().expect("valid objective") };
    let row = |group: &str, label: &str, predictors, objective: &Objective, members, strategy| AblationRow {
        group: group.into(),
        label: label.into(),
        predictors,
        objective: *objective,
        members,
        strategy,
    };
    use PredictorSource::*;
    use Strategy::*;
    let f4 = focal("focal:0.2:4");
    vec![
        row("Predictor", "All variables without time-lagged", AllLag0, &ce, 1, None),
        row("Predictor", "All variables with time-lagged", AllLagged, &ce, 1, None),
        row("Predictor", "Variables from TLCA", Tlca, &ce, 1, None),
        row("Loss function", "Cross-Entropy", Tlca, &ce, 1, None),
        row("Loss function", "Focal Loss (0.2, 2)", Tlca, &focal("focal:0.2:2"), 1, None),
        row("Loss function", "Focal Loss (0.2, 4)", Tlca, &f4, 1, None),
        row("Learning strategy", "Without Easy-ensemble", Tlca, &f4, 1, None),
        row("Learning strategy", "Easy-ensemble & under-sample", Tlca, &f4, 10, Undersample),
        row("Learning strategy", "Easy-ensemble & over-sample", Tlca, &f4, 10, Oversample),
        row("Learning strategy", "Under-sample", Tlca, &f4, 1, Undersample),
        row("Learning strategy", "Over-sample", Tlca, &f4, 1, Oversample),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationResult {
    pub row: AblationRow,
    /// Scores pooled over the longest horizon.
    pub summary: HorizonSummary,
}

/// Runs every row on the same dataset and splits. TLCA runs once.
pub fn run_ablation(dataset: &Dataset, base: &RunConfig, plan: &[AblationRow]) -> Result<Vec<AblationResult>> {
    let mut tlca: Option<PredictorSet> = None;
    let mut out = Vec::with_capacity(plan.len());
    for row in plan {
        let predictors = match (row.predictors, &tlca) {
            (PredictorSource::Tlca, Some(p)) => p.clone(),
            (source, _) => {
                let (_, p) = choose_predictors(dataset, base, source)?;
                if source == PredictorSource::Tlca {
                    tlca = Some(p.clone());
                }
                p
            }
        };
        let cfg = RunConfig {
            objective: row.objective,
            ensemble: EnsembleConfig { members: row.members, strategy: row.strategy, ..base.ensemble },
            ..base.clone()
        };
        log::info!("ablation row {:?}", row.label);
        let run = run_with_predictors(dataset, &cfg, predictors)?;
        let summary = run.report.horizons.last().cloned().expect("report has horizons");
        out.push(AblationResult { row: row.clone(), summary });
    }
    Ok(out)
}

/// CSV comparison table: `group,row,pod,far,ets,hss`.
pub fn write_ablation<W: Write>(results: &[AblationResult], far: FarDefinition, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["group", "row", "pod", "far", "ets", "hss"])?;
    for r in results {
        let s = r.summary.scores(far);
        w.write_record([
            r.row.group.as_str(),
            r.row.label.as_str(),
            &fmt_score(s.pod),
            &fmt_score(s.far),
            &fmt_score(s.ets),
            &fmt_score(s.hss),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_labels() {
        let plan = standard_plan();
        assert_eq!(plan.len(), 11);
        assert!(plan.iter().any(|r| r.label == "Focal Loss (0.2, 2)"));
        assert!(plan.iter().any(|r| r.label == "Easy-ensemble & under-sample" && r.members == 10));
    }

    #[test]
    fn predictor_source_strings() {
        for s in ["tlca", "all_lag0", "all_lagged"] {
            assert_eq!(s.parse::<PredictorSource>().unwrap().to_string(), s);
        }
        assert!("all".parse::<PredictorSource>().is_err());
    }

    #[test]
    fn model_sniffing() {
        assert!(Model::load("nonsense 1\n".as_bytes()).is_err());
        let text = "seafog-gbdt 1\nobjective ce\nbase 0\nseed 0\nconfig rounds=1\nfeatures 1\nfeature x\nbins 0\ntrees 0\nend\n";
        assert!(matches!(Model::load(text.as_bytes()).unwrap(), Model::Single(_)));
    }
}
