//! Subcommand implementations.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use seafog::catalog::VariableCatalog;
use seafog::container::{read_dataset, read_features, write_dataset, write_features};
use seafog::dataset::{Dataset, LabelMode, LabelRule};
use seafog::ensemble::{EnsembleConfig, Strategy};
use seafog::featurize::{build_features, chronological_split, parse_years, CalendarSource, FeatureMatrix, FeatureSpec};
use seafog::gbdt::GbdtConfig;
use seafog::ingest::{assemble_dataset, parse_grid, parse_observations, AssembleConfig, IdwConfig};
use seafog::objectives::Objective;
use seafog::pipeline::{
    fsl_baseline, predict_pairs, run_ablation, standard_plan, train_model, AblationRow, Model, PredictorSource,
    RunConfig,
};
use seafog::synth::{generate, SynthConfig};
use seafog::tlca::{
    lagged_correlations, parse_months, read_predictors, select_predictors, write_predictors, write_table, TargetMode,
    TlcaConfig,
};
use seafog::verify::{
    read_pairs, score_by_leadtime, score_external, summary_table, write_pairs, write_report, write_scores, Aggregate,
    FarDefinition, LeadTimeReport,
};
use seafog::{Error, Result};

use crate::io_error;
use crate::output::Staged;
use crate::settings::{self, echo, load_file, settings, Layered};

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| io_error(path, e))
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(open(path)?)
}

fn load_features(path: &Path) -> Result<FeatureMatrix> {
    read_features(open(path)?)
}

fn to_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn label_rule(threshold_km: f64, mode: &str) -> Result<LabelRule> {
    let mode = match mode {
        "visibility" => LabelMode::Visibility,
        "visibility_and_weather" => LabelMode::VisibilityAndWeather,
        _ => {
            return Err(Error::Config(format!(
                "unknown label mode {mode:?}; expected visibility or visibility_and_weather"
            )))
        }
    };
    if !(threshold_km > 0.0 && threshold_km.is_finite()) {
        return Err(Error::Config(format!("label threshold must be > 0, got {threshold_km}")));
    }
    Ok(LabelRule { threshold_km, mode })
}

fn years(s: Option<&str>) -> Result<BTreeSet<i32>> {
    s.map_or_else(|| Ok(BTreeSet::new()), parse_years)
}

fn print_summary(report: &LeadTimeReport, far: FarDefinition) {
    print!("{}", summary_table(report, far));
}

settings!(IngestArgs => Ingest {
    /// Station observation CSV.
    req obs: PathBuf,
    /// Gridded forecast CSV.
    req grid: PathBuf,
    /// Variable catalog file; the standard catalog when unset.
    opt catalog: PathBuf,
    /// Output dataset container.
    req out: PathBuf,
    def lead_hours: u16 = seafog::ingest::assemble::DEFAULT_LEAD_HOURS,
    def idw_power: f64 = 2.0,
    def idw_neighbors: usize = 4usize,
    def idw_epsilon_m: f64 = 1e-6,
});

pub fn ingest(args: &IngestArgs, config: Option<&Path>) -> Result<()> {
    let s = args.resolve_file(&load_file(config, "ingest")?)?;
    let catalog = match &s.catalog {
        Some(p) => VariableCatalog::parse(&std::fs::read_to_string(p).map_err(|e| io_error(p, e))?)?,
        None => VariableCatalog::standard(),
    };
    let obs = parse_observations(open(&s.obs)?)?;
    let grids = parse_grid(open(&s.grid)?, &catalog)?;
    let cfg = AssembleConfig {
        idw: IdwConfig { power: s.idw_power, neighbors: s.idw_neighbors, epsilon_m: s.idw_epsilon_m },
        lead_hours: s.lead_hours,
    };
    let assembled = assemble_dataset(&obs, &grids, &catalog, &cfg)?;
    for w in obs.warnings().iter().chain(&assembled.warnings) {
        log::warn!("{w}");
    }
    let bytes = to_bytes(|b| write_dataset(&assembled.dataset, b))?;
    read_dataset(bytes.as_slice())?;
    let mut out = Staged::new();
    out.add_with_echo(&s.out, &bytes, &echo("ingest", &s)?)?;
    out.commit()?;
    log::info!("{} samples, {} labeled cells", assembled.dataset.n_samples(), assembled.dataset.n_labeled());
    Ok(())
}

settings!(TlcaArgs => Tlca {
    /// Input dataset container.
    req dataset: PathBuf,
    /// Output predictor list (CSV `variable,lag`).
    req out: PathBuf,
    /// Optional full correlation table (CSV).
    opt table: PathBuf,
    def max_lag: u16 = 5u16,
    def alpha: f64 = 0.05,
    /// Launch months analysed, e.g. `3-7`.
    def months: String = "3-7",
    /// Correlation target: `visibility` or `label`.
    def target: String = "visibility",
    /// Restrict the analysis to these launch years, e.g. `2014-2017`.
    opt years: String,
    /// Keep only the strongest this-many variables.
    opt max_variables: usize,
    def label_threshold: f64 = 1.0,
    def label_mode: String = "visibility",
});

pub fn tlca(args: &TlcaArgs, config: Option<&Path>) -> Result<()> {
    let s = args.resolve_file(&load_file(config, "tlca")?)?;
    let cfg = TlcaConfig {
        max_lag: s.max_lag,
        alpha: s.alpha,
        months: parse_months(&s.months)?,
        target: match s.target.as_str() {
            "visibility" => TargetMode::Visibility,
            "label" => TargetMode::Label,
            t => return Err(Error::Config(format!("unknown target {t:?}; expected visibility or label"))),
        },
        label_rule: label_rule(s.label_threshold, &s.label_mode)?,
        max_variables: s.max_variables,
    };
    let mut dataset = load_dataset(&s.dataset)?;
    if let Some(y) = &s.years {
        let keep = parse_years(y)?;
        let samples: Vec<usize> =
            (0..dataset.n_samples()).filter(|&n| keep.contains(&dataset.meta()[n].launch.year())).collect();
        dataset = dataset.select(&samples);
    }
    let table = lagged_correlations(&dataset, &cfg)?;
    let set = select_predictors(&table, &cfg);
    let text = echo("tlca", &s)?;
    let mut out = Staged::new();
    out.add_with_echo(&s.out, &to_bytes(|b| write_predictors(&set, b))?, &text)?;
    if let Some(t) = &s.table {
        out.add_with_echo(t, &to_bytes(|b| write_table(&table, b))?, &text)?;
    }
    out.commit()?;
    log::info!("{} predictors selected", set.len());
    Ok(())
}

settings!(FeaturizeArgs => Featurize {
    /// Input dataset container.
    req dataset: PathBuf,
    /// Predictor list; every catalog variable at lag 0 when unset.
    opt predictors: PathBuf,
    /// Output feature container.
    req out: PathBuf,
    /// Also write the matrix as CSV here.
    opt csv: PathBuf,
    def location: bool = true,
    def calendar: bool = true,
    def recent_visibility: bool = true,
    def lead_time: bool = true,
    /// Calendar features from `valid` or `launch` time.
    def calendar_source: String = "valid",
    def label_threshold: f64 = 1.0,
    def label_mode: String = "visibility",
});

pub fn featurize(args: &FeaturizeArgs, config: Option<&Path>) -> Result<()> {
    let s = args.resolve_file(&load_file(config, "featurize")?)?;
    let predictors = match &s.predictors {
        Some(p) => read_predictors(open(p)?)?,
        None => Default::default(),
    };
    let spec = FeatureSpec {
        include_location: s.location,
        include_calendar: s.calendar,
        include_recent_visibility: s.recent_visibility,
        include_lead_time: s.lead_time,
        calendar_source: match s.calendar_source.as_str() {
            "valid" => CalendarSource::ValidTime,
            "launch" => CalendarSource::LaunchTime,
            c => return Err(Error::Config(format!("unknown calendar source {c:?}; expected valid or launch"))),
        },
        label_rule: label_rule(s.label_threshold, &s.label_mode)?,
        ..FeatureSpec::new(predictors)
    };
    let matrix = build_features(&load_dataset(&s.dataset)?, &spec)?;
    let bytes = to_bytes(|b| write_features(&matrix, b))?;
    read_features(bytes.as_slice())?;
    let text = echo("featurize", &s)?;
    let mut out = Staged::new();
    out.add_with_echo(&s.out, &bytes, &text)?;
    if let Some(c) = &s.csv {
        out.add_with_echo(c, &to_bytes(|b| matrix.write_csv(b))?, &text)?;
    }
    out.commit()?;
    log::info!("{} rows x {} columns, fog fraction {:.4}", matrix.n_rows(), matrix.n_cols(), matrix.fog_fraction());
    Ok(())
}

settings!(TrainArgs => Train {
    /// Input feature container.
    req features: PathBuf,
    /// Output model file.
    req out: PathBuf,
    /// Training launch years; every year not used for validation or test when unset.
    opt train_years: String,
    /// Validation launch years for early stopping.
    opt val_years: String,
    /// Launch years held out from training.
    opt test_years: String,
    /// `ce` or `focal:<alpha>:<gamma>[:printed]`.
    def objective: String = "focal:0.2:4",
    /// Ensemble members.
    def ensemble: usize = 10usize,
    /// `none`, `undersample` or `oversample`.
    def strategy: String = "undersample",
    /// Fog fraction of each resampled member subset.
    def ratio: f64 = 0.1,
    def threshold: f64 = 0.5,
    def seed: u64 = 0u64,
    def rounds: usize = 200usize,
    def learning_rate: f64 = 0.05,
    def max_leaves: usize = 31usize,
    def max_bins: usize = 255usize,
    def min_samples_leaf: u32 = 20u32,
    def min_hessian_leaf: f64 = 1e-3,
    def lambda: f64 = 1.0,
    /// Early-stopping patience in rounds; 0 disables early stopping.
    def patience: usize = 20usize,
    def row_subsample: f64 = 1.0,
});

fn gbdt_config(rounds: usize, learning_rate: f64, max_leaves: usize, patience: usize, seed: u64) -> GbdtConfig {
    GbdtConfig {
        rounds,
        learning_rate,
        max_leaves,
        patience: (patience > 0).then_some(patience),
        seed,
        ..GbdtConfig::default()
    }
}

pub fn train(args: &TrainArgs, config: Option<&Path>) -> Result<()> {
    let s = args.resolve_file(&load_file(config, "train")?)?;
    let matrix = load_features(&s.features)?;
    let val_years = years(s.val_years.as_deref())?;
    let test_years = years(s.test_years.as_deref())?;
    let train_years = match &s.train_years {
        Some(y) => parse_years(y)?,
        None => matrix
            .provenance()
            .iter()
            .map(|p| p.launch.year())
            .filter(|y| !val_years.contains(y) && !test_years.contains(y))
            .collect(),
    };
    let splits = chronological_split(&matrix, &train_years, &val_years, &test_years)?;
    if splits.train.n_rows() == 0 {
        return Err(Error::EmptyDataset("the training years select no rows".into()));
    }
    let cfg = RunConfig {
        objective: s.objective.parse::<Objective>()?,
        gbdt: GbdtConfig {
            max_bins: s.max_bins,
            min_samples_leaf: s.min_samples_leaf,
            min_hessian_leaf: s.min_hessian_leaf,
            lambda: s.lambda,
            row_subsample: s.row_subsample,
            ..gbdt_config(s.rounds, s.learning_rate, s.max_leaves, s.patience, s.seed)
        },
        ensemble: EnsembleConfig {
            members: s.ensemble,
            strategy: s.strategy.parse::<Strategy>()?,
            ratio: s.ratio,
            threshold: s.threshold,
            seed: s.seed,
        },
        ..RunConfig::default()
    };
    let model = Model::Ensemble(train_model(&splits.train, Some(&splits.val), &cfg)?);
    let bytes = to_bytes(|b| model.save(b))?;
    if Model::load(bytes.as_slice())? != model {
        return Err(Error::Format("saved model does not reload identically".into()));
    }
    let mut out = Staged::new();
    out.add_with_echo(&s.out, &bytes, &echo("train", &s)?)?;
    out.commit()
}

settings!(PredictArgs => Predict {
    /// Model or ensemble file.
    req model: PathBuf,
    /// Input feature container.
    req features: PathBuf,
    /// Output pairing CSV with probabilities.
    req out: PathBuf,
    /// Decision threshold; the ensemble's stored threshold (or 0.5) when unset.
    opt threshold: f64,
    /// Score only rows with these launch years.
    opt years: String,
});

pub fn predict(args: &PredictArgs, config: Option<&Path>) -> Result<()> {
    let s = args.resolve_file(&load_file(config, "predict")?)?;
    let model = Model::load(open(&s.model)?)?;
    let mut matrix = load_features(&s.features)?;
    if let Some(y) = &s.years {
        let keep = parse_years(y)?;
        let rows: Vec<usize> =
            (0..matrix.n_rows()).filter(|&i| keep.contains(&matrix.provenance()[i].launch.year())).collect();
        matrix = matrix.select_rows(&rows);
    }
    let threshold = s.threshold.unwrap_or_else(|| model.threshold(0.5));
    let pairs = predict_pairs(&model, &matrix, threshold)?;
    let mut out = Staged::new();
    out.add_with_echo(&s.out, &to_bytes(|b| write_pairs(&pairs, b))?, &echo("predict", &s)?)?;
    out.commit()
}

settings!(EvaluateArgs => Evaluate {
    /// Forecast pairing CSV.
    req pred: PathBuf,
    /// Observation pairing CSV joined on station, launch and lead; the forecast file's own observed labels when unset.
    opt obs: PathBuf,
    /// Output score CSV with one FAR column under `--far`.
    req out: PathBuf,
    /// Also write the report with both FAR definitions here.
    opt report: PathBuf,
    /// `paper` (b/(a+d)) or `conventional` (b/(a+b)).
    def far: String = "paper",
    def stride: u16 = 3u16,
    /// `pooled` or `averaged` horizon aggregates.
    def aggregate: String = "pooled",
});

pub fn evaluate(args: &EvaluateArgs, config: Option<&Path>) -> Result<()> {
    let s = args.resolve_file(&load_file(config, "evaluate")?)?;
    let far: FarDefinition = s.far.parse()?;
    let aggregate: Aggregate = s.aggregate.parse()?;
    let forecasts = read_pairs(open(&s.pred)?)?;
    let report = match &s.obs {
        Some(p) => {
            let ext = score_external(&forecasts, &read_pairs(open(p)?)?, s.stride, aggregate)?;
            if ext.unmatched_forecasts + ext.unmatched_observations > 0 {
                eprintln!(
                    "unmatched keys: {} forecast, {} observation",
                    ext.unmatched_forecasts, ext.unmatched_observations
                );
            }
            ext.report
        }
        None => score_by_leadtime(&forecasts, s.stride, aggregate)?,
    };
    let text = echo("evaluate", &s)?;
    let mut out = Staged::new();
    out.add_with_echo(&s.out, &to_bytes(|b| write_scores(&report, far, b))?, &text)?;
    if let Some(r) = &s.report {
        out.add_with_echo(r, &to_bytes(|b| write_report(&report, b))?, &text)?;
    }
    out.commit()?;
    print_summary(&report, far);
    Ok(())
}

settings!(BaselineFslArgs => BaselineFsl {
    /// Input dataset container.
    req dataset: PathBuf,
    /// Output pairing CSV.
    req out: PathBuf,
    /// Visibility cap in km.
    def cap_km: f64 = seafog::verify::DEFAULT_CAP_KM,
    def label_threshold: f64 = 1.0,
    def label_mode: String = "visibility",
    /// FAR definition of the printed summary.
    def far: String = "paper",
    def stride: u16 = 3u16,
});

pub fn baseline_fsl(args: &BaselineFslArgs, config: Option<&Path>) -> Result<()> {
    let s = args.resolve_file(&load_file(config, "baseline")?)?;
    let far: FarDefinition = s.far.parse()?;
    let rule = label_rule(s.label_threshold, &s.label_mode)?;
    let (pairs, _) = fsl_baseline(&load_dataset(&s.dataset)?, &rule, s.cap_km)?;
    let report = score_by_leadtime(&pairs, s.stride, Aggregate::Pooled)?;
    let mut out = Staged::new();
    out.add_with_echo(&s.out, &to_bytes(|b| write_pairs(&pairs, b))?, &echo("baseline fsl", &s)?)?;
    out.commit()?;
    print_summary(&report, far);
    Ok(())
}

/// Flags for `synth`. Every other generator setting comes from the config file.
#[derive(Debug, Clone, Default, clap::Args, Serialize)]
pub struct SynthArgs {
    /// Directory receiving observations.csv, grid.csv, catalog.txt and truth.json.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stations: Option<usize>,
    /// First launch day, `YYYY-MM-DD`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<String>,
    /// Last launch day, `YYYY-MM-DD`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub end: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fog_frequency: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_noise: Option<f64>,
}

pub fn synth(args: &SynthArgs, config: Option<&Path>) -> Result<()> {
    let mut known: Vec<String> = toml::Table::try_from(SynthConfig::default())
        .map_err(|e| Error::Config(e.to_string()))?
        .keys()
        .cloned()
        .collect();
    known.push("out_dir".into());
    let known: Vec<&str> = known.iter().map(String::as_str).collect();
    let mut table = load_file(config, "synth")?.for_fields(&known);
    table.extend(toml::Table::try_from(args).map_err(|e| Error::Config(e.to_string()))?);
    let out_dir: PathBuf = match table.remove("out_dir") {
        Some(toml::Value::String(s)) => s.into(),
        Some(_) => return Err(Error::Config("out_dir must be a string".into())),
        None => return Err(Error::Config("missing field `out_dir`".into())),
    };
    let cfg: SynthConfig =
        toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
    let generated = generate(&cfg)?;
    let parent = match out_dir.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&parent).map_err(|e| io_error(&parent, e))?;
    let tmp = tempfile::tempdir_in(&parent).map_err(|e| io_error(&parent, e))?;
    generated.write_to_dir(tmp.path())?;
    let mut out = Staged::new();
    for name in ["observations.csv", "grid.csv", "catalog.txt", "truth.json"] {
        let src = tmp.path().join(name);
        out.add(&out_dir.join(name), &std::fs::read(&src).map_err(|e| io_error(&src, e))?)?;
    }
    out.add(&out_dir.join("run.toml"), echo("synth", &cfg)?.as_bytes())?;
    out.commit()?;
    log::info!(
        "{} observations, rule fog frequency {:.4}",
        generated.observations.len(),
        generated.truth.rule_fog_frequency
    );
    Ok(())
}

settings!(AblateFlags => AblateSettings {
    /// Input dataset container.
    req dataset: PathBuf,
    /// Output comparison table (CSV `group,row,pod,far,ets,hss`).
    req out: PathBuf,
    req train_years: String,
    opt val_years: String,
    req test_years: String,
    def seed: u64 = 0u64,
    def far: String = "paper",
    def stride: u16 = 3u16,
    def aggregate: String = "pooled",
    def ratio: f64 = 0.1,
    def threshold: f64 = 0.5,
    def rounds: usize = 200usize,
    def learning_rate: f64 = 0.05,
    def max_leaves: usize = 31usize,
    def patience: usize = 20usize,
    def max_lag: u16 = 5u16,
    def alpha: f64 = 0.05,
    def months: String = "3-7",
});

#[derive(Debug, Clone, clap::Args)]
pub struct AblateArgs {
    /// Plan file: the settings below plus optional `[[rows]]` tables; the standard grid when it has none.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[command(flatten)]
    pub settings: AblateFlags,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RowSpec {
    group: String,
    label: String,
    #[serde(default = "default_source")]
    predictors: String,
    objective: String,
    #[serde(default = "one")]
    members: usize,
    #[serde(default = "no_strategy")]
    strategy: String,
}

fn default_source() -> String {
    "tlca".into()
}

fn one() -> usize {
    1
}

fn no_strategy() -> String {
    "none".into()
}

impl RowSpec {
    fn from_row(r: &AblationRow) -> Self {
        RowSpec {
            group: r.group.clone(),
            label: r.label.clone(),
            predictors: r.predictors.to_string(),
            objective: r.objective.to_string(),
            members: r.members,
            strategy: r.strategy.to_string(),
        }
    }

    fn to_row(&self) -> Result<AblationRow> {
        Ok(AblationRow {
            group: self.group.clone(),
            label: self.label.clone(),
            predictors: self.predictors.parse::<PredictorSource>()?,
            objective: self.objective.parse()?,
            members: self.members,
            strategy: self.strategy.parse()?,
        })
    }
}

#[derive(Serialize)]
struct AblateEcho<'a> {
    #[serde(flatten)]
    settings: &'a AblateSettings,
    rows: Vec<RowSpec>,
}

pub fn ablate(args: &AblateArgs, config: Option<&Path>) -> Result<()> {
    let mut file = load_file(config, "ablate")?.for_fields(AblateFlags::FIELDS);
    let mut plan = load_file(args.plan.as_deref(), "ablate")?.all();
    let rows = match plan.remove("rows") {
        Some(v) => {
            Some(v.try_into::<Vec<RowSpec>>().map_err(|e| Error::Config(format!("plan rows: {}", e.message())))?)
        }
        None => None,
    };
    file.extend(plan);
    let s = args.settings.resolve(&file)?;
    let rows: Vec<AblationRow> = match rows {
        Some(specs) => specs.iter().map(RowSpec::to_row).collect::<Result<_>>()?,
        None => standard_plan(),
    };
    if rows.is_empty() {
        return Err(Error::Config("the plan has no rows".into()));
    }
    let far: FarDefinition = s.far.parse()?;
    let base = RunConfig {
        tlca: TlcaConfig {
            max_lag: s.max_lag,
            alpha: s.alpha,
            months: parse_months(&s.months)?,
            ..TlcaConfig::default()
        },
        train_years: parse_years(&s.train_years)?,
        val_years: years(s.val_years.as_deref())?,
        test_years: parse_years(&s.test_years)?,
        gbdt: gbdt_config(s.rounds, s.learning_rate, s.max_leaves, s.patience, s.seed),
        ensemble: EnsembleConfig { ratio: s.ratio, threshold: s.threshold, seed: s.seed, ..EnsembleConfig::default() },
        stride: s.stride,
        aggregate: s.aggregate.parse()?,
        ..RunConfig::default()
    };
    let results = run_ablation(&load_dataset(&s.dataset)?, &base, &rows)?;
    let bytes = to_bytes(|b| seafog::pipeline::write_ablation(&results, far, b))?;
    let echo_doc = AblateEcho { settings: &s, rows: rows.iter().map(RowSpec::from_row).collect() };
    let mut out = Staged::new();
    out.add_with_echo(&s.out, &bytes, &settings::echo("ablate", &echo_doc)?)?;
    out.commit()?;
    print!("{}", String::from_utf8_lossy(&bytes));
    Ok(())
}
