//! Segmentation metrics and run reports.

pub mod metrics;
pub mod report;

pub use metrics::{confusion, evaluate_model, head_predictions, miou, roc_auc, ConfusionMatrix, Evaluation, HeadScore};
pub use report::{
    emit_report, load_report, results_csv, DiscSummary, EvaluationReport, FrameCounts, SelectionRecord, StageEval,
    StageTiming,
};
