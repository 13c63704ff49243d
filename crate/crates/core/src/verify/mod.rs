//! Categorical verification of fog forecasts.

mod fsl;
mod leadtime;
mod scores;

pub use fsl::{fsl_visibility, DEFAULT_CAP_KM};
pub use leadtime::{
    read_pairs, score_by_leadtime, score_external, summary_table, write_pairs, write_report, write_scores, Aggregate,
    ExternalScore, HorizonSummary, LeadTimeReport, Pair, HORIZONS, PAIRING_HEADER, REPORT_HEADER,
};
pub use scores::{confusion, ets, far, fmt_score, hss, pod, scores, ConfusionMatrix, FarDefinition, ScoreSet};
