//! Run reports and their file layout.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::Evaluation;
use crate::adaptation::{PipelineConfig, TaskSpec};
use crate::error::{Error, Result};
use crate::sampling::{write_selections_csv, SelectionResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageEval {
    pub stage: String,
    pub eval: Evaluation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    /// `source`, `target` or `apl`.
    pub role: String,
    #[serde(flatten)]
    pub selection: SelectionResult,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameCounts {
    pub source: usize,
    pub source_selected: usize,
    pub target_train: usize,
    /// Unlabelled target frames the pipeline could use.
    pub target_available: usize,
    pub target_oracle: usize,
    pub target_pseudo: usize,
    pub target_test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscSummary {
    pub name: String,
    pub iterations: usize,
    pub final_loss: f64,
    pub final_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub task: TaskSpec,
    pub config: PipelineConfig,
    pub counts: FrameCounts,
    /// Target-test evaluation after each stage, in pipeline order.
    pub stages: Vec<StageEval>,
    pub selections: Vec<SelectionRecord>,
    pub oracle_ids: Vec<u64>,
    pub pseudo_warnings: Vec<u64>,
    pub discriminators: Vec<DiscSummary>,
    /// Written to `timings.json`, never to the report itself.
    #[serde(skip)]
    pub timings: Vec<StageTiming>,
}

impl EvaluationReport {
    pub fn stage(&self, name: &str) -> Option<&Evaluation> {
        self.stages.iter().find(|s| s.stage == name).map(|s| &s.eval)
    }

    pub fn final_eval(&self) -> Option<&Evaluation> {
        self.stages.last().map(|s| &s.eval)
    }

    pub fn selection(&self, role: &str) -> Option<&SelectionResult> {
        self.selections.iter().find(|s| s.role == role).map(|s| &s.selection)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// One row per head of the final evaluation.
pub fn results_csv(eval: &Evaluation) -> String {
    let c = eval.fused.per_class.len();
    let mut out = String::from("head,miou");
    for i in 0..c {
        out.push_str(&format!(",iou_{i}"));
    }
    out.push('\n');
    for (name, head) in [("2d", &eval.two_d), ("3d", &eval.three_d), ("fused", &eval.fused)] {
        out.push_str(&format!("{name},{}", head.miou));
        for v in &head.per_class {
            match v {
                Some(x) => out.push_str(&format!(",{x}")),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

/// Writes `report.json`, `results.csv`, `selections.csv` and `timings.json`.
pub fn emit_report(report: &EvaluationReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let eval = report
        .final_eval()
        .ok_or_else(|| Error::State("report holds no evaluation".into()))?;
    let paths = ["report.json", "results.csv", "selections.csv", "timings.json"].map(|n| dir.join(n));
    write(&paths[0], report.to_json().as_bytes())?;
    write(&paths[1], results_csv(eval).as_bytes())?;
    let sels: Vec<&SelectionResult> = report.selections.iter().map(|s| &s.selection).collect();
    write_selections_csv(&sels, &paths[2])?;
    write(&paths[3], serde_json::to_string_pretty(&report.timings).expect("timings serialise").as_bytes())?;
    Ok(paths.to_vec())
}

pub fn load_report(path: &Path) -> Result<EvaluationReport> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::HeadScore;
    use crate::sampling::ScoringStrategy;

    fn sample_report() -> EvaluationReport {
        let head = |m| HeadScore { miou: m, per_class: vec![Some(m), None] };
        let eval = Evaluation { two_d: head(0.5), three_d: head(0.25), fused: head(0.75), frames: 2, points: 10 };
        let sel = SelectionResult { ids: vec![4, 1], scores: vec![0.9, 0.7], budget: 2, strategy: ScoringStrategy::CrossModal };
        EvaluationReport {
            version: 1,
            config_hash: "abc".into(),
            seed: 3,
            task: TaskSpec::default(),
            config: PipelineConfig::default(),
            counts: FrameCounts::default(),
            stages: vec![StageEval { stage: "source_only".into(), eval }],
            selections: vec![SelectionRecord { role: "source".into(), selection: sel }],
            oracle_ids: vec![],
            pseudo_warnings: vec![],
            discriminators: vec![],
            timings: vec![StageTiming { stage: "train_source".into(), seconds: 1.5 }],
        }
    }

    #[test]
    fn csv_has_one_row_per_head() {
        let r = sample_report();
        let csv = results_csv(r.final_eval().unwrap());
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "head,miou,iou_0,iou_1");
        assert_eq!(lines[3], "fused,0.75,0.75,");
    }

    #[test]
    fn emitted_report_round_trips_without_timings() {
        let r = sample_report();
        let dir = tempfile::tempdir().unwrap();
        let paths = emit_report(&r, dir.path()).unwrap();
        assert_eq!(paths.len(), 4);
        let back = load_report(&paths[0]).unwrap();
        assert_eq!(back.config_hash, "abc");
        assert!(back.timings.is_empty());
        assert_eq!(EvaluationReport { timings: r.timings.clone(), ..back }, r);
        assert!(!fs::read_to_string(&paths[0]).unwrap().contains("seconds"));
        assert!(fs::read_to_string(&paths[3]).unwrap().contains("train_source"));
        let sels = fs::read_to_string(&paths[2]).unwrap();
        assert_eq!(sels.lines().nth(1).unwrap(), "4,0.9,1,cross_modal,2");
    }

    #[test]
    fn report_without_evaluation_is_rejected() {
        let r = EvaluationReport { stages: vec![], ..sample_report() };
        assert!(matches!(emit_report(&r, tempfile::tempdir().unwrap().path()), Err(Error::State(_))));
    }
}
