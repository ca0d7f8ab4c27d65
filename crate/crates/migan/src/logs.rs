//! Training logs as JSON lines and evaluation reports as JSON plus a
//! markdown table.

use std::fmt::Write as _;
use std::path::Path;

use migan_core::eval::EvalReport;
use migan_core::trainer::{EpochRecord, StepRecord, TrainLog};
use serde::{Deserialize, Serialize};

use crate::archive::write_file;
use crate::dataset::{read_json, write_json};
use crate::error::{Error, Result};

/// One line of a training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogLine {
    Step(StepRecord),
    Epoch(EpochRecord),
    Selected { step: Option<u64>, epoch: Option<usize> },
}

/// Steps in order, each epoch record after the steps it closes, then the
/// selection line.
pub fn train_log_lines(log: &TrainLog) -> Vec<LogLine> {
    let mut lines = Vec::with_capacity(log.steps.len() + log.epochs.len() + 1);
    let mut steps = log.steps.iter().peekable();
    for e in &log.epochs {
        while let Some(s) = steps.next_if(|s| s.step <= e.step) {
            lines.push(LogLine::Step(s.clone()));
        }
        lines.push(LogLine::Epoch(e.clone()));
    }
    lines.extend(steps.cloned().map(LogLine::Step));
    lines.push(LogLine::Selected { step: log.selected_step, epoch: log.selected_epoch });
    lines
}

pub fn train_log_jsonl(log: &TrainLog) -> String {
    let mut out = String::new();
    for line in train_log_lines(log) {
        writeln!(out, "{}", serde_json::to_string(&line).expect("log line serializes")).unwrap();
    }
    out
}

pub fn write_train_log(path: &Path, log: &TrainLog) -> Result<()> {
    write_file(path, train_log_jsonl(log).as_bytes())
}

pub fn read_train_log(path: &Path) -> Result<TrainLog> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut log = TrainLog::default();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        match serde_json::from_str(line).map_err(|source| Error::Json { path: path.to_path_buf(), source })? {
            LogLine::Step(s) => log.steps.push(s),
            LogLine::Epoch(e) => log.epochs.push(e),
            LogLine::Selected { step, epoch } => {
                log.selected_step = step;
                log.selected_epoch = epoch;
            }
        }
    }
    Ok(log)
}

/// `report.json` and `report.md` under `out`.
pub fn write_report(out: &Path, label: &str, report: &EvalReport) -> Result<()> {
    write_json(&out.join("report.json"), report)?;
    let mut md = EvalReport::table(&[(label, report)]);
    md.push_str("\n| Image | Dice | AUC ROC | AUC PR | Otsu threshold |\n|---|---|---|---|---|\n");
    for m in &report.per_image {
        writeln!(md, "| {} | {:.4} | {:.4} | {:.4} | {:.4} |", m.id, m.dice, m.auc_roc, m.auc_pr, m.otsu_threshold).unwrap();
    }
    write_file(&out.join("report.md"), md.as_bytes())
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    read_json(path)
}
