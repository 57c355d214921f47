//! Evaluation metrics, skill scores, hydrologic signatures and the
//! two-group attribution analysis.

mod aggregate;
mod attribution;
mod io;
mod metrics;
mod signatures;

use thiserror::Error;

pub use aggregate::{aggregate, basin_medians, improvement_ratios, median, MetricSummary, Ratio, Summary};
pub use attribution::{
    attribution, basin_skills, AttributionReport, BasinAttribution, CorrelationTable, GroupAnalysis,
    MIN_GROUP_FOR_CORRELATION,
};
pub use io::{
    evaluate, load_observations, pair_with_observations, read_metrics, read_signatures, record_signatures, write_json, write_metrics,
    write_signatures, write_skill_scores, ObservedSeries, PairedSeries,
};
pub use metrics::{
    flow_duration, high_segment_len, improvements, low_segment, metric_suite, paired, pearson, percentage_difference,
    skill_score, FhvImprovement, Improvements, MetricReport, Metrics, FLV_FLOOR,
};
pub use signatures::{quantile, signatures, SignatureSet, MIN_SIGNATURE_DAYS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("observed ({obs}) and simulated ({sim}) series differ in length")]
    LengthMismatch { obs: usize, sim: usize },
    #[error("need at least 2 paired finite days, found {0}")]
    TooFewPairs(usize),
    #[error("degenerate statistic: {0}")]
    Degenerate(String),
    #[error("reference score is 1, skill score is undefined")]
    PerfectReference,
    #[error("model report is for basin {model} but reference is for {reference}")]
    BasinMismatch { model: String, reference: String },
    #[error("need at least {needed} observed days, found {found}")]
    TooFewDays { needed: usize, found: usize },
    #[error("empty {0}")]
    Empty(String),
    #[error("basin {basin} is missing from the {table}")]
    MissingBasin { basin: String, table: String },
    #[error("basin {basin}: {detail}")]
    DateMisalignment { basin: String, detail: String },
    #[error("basin {basin}, member {member}: {source}")]
    InBasin {
        basin: String,
        member: u64,
        #[source]
        source: Box<EvalError>,
    },
    #[error("{path}: {detail}")]
    Io { path: String, detail: String },
}
