//! Per-mode, per-atomic-task success accounting and the two report formats:
//! a human table and a lossless machine document.

use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::orchestrator::{RunMode, RunOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDigest {
    pub trial: u32,
    pub seed: u64,
    pub success: Vec<bool>,
    pub excluded: Option<String>,
    pub fault_count: usize,
    pub trace_len: usize,
    pub transition_steps: usize,
}

impl TrialDigest {
    pub fn from_outcome(trial: u32, outcome: &RunOutcome) -> TrialDigest {
        TrialDigest {
            trial,
            seed: outcome.seed,
            success: outcome.success.clone(),
            excluded: outcome.excluded.clone(),
            fault_count: outcome.faults.len(),
            trace_len: outcome.trace.entries.len(),
            transition_steps: outcome.transitions.iter().map(|t| t.steps_emitted).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub mode: RunMode,
    /// Trials whose end states were judged; excluded trials are not here.
    pub counted_trials: u32,
    pub excluded_trials: u32,
    /// Successes per atomic task over the counted trials.
    pub task_successes: Vec<u32>,
    pub trials: Vec<TrialDigest>,
}

impl ModeReport {
    pub fn all_task_successes(&self) -> u32 {
        self.trials
            .iter()
            .filter(|t| t.excluded.is_none() && t.success.iter().all(|s| *s))
            .count() as u32
    }

    /// Unweighted mean per-atomic-task success rate over counted trials.
    pub fn unweighted_mean_rate(&self) -> f64 {
        if self.counted_trials == 0 || self.task_successes.is_empty() {
            return 0.0;
        }
        let sum: f64 = self
            .task_successes
            .iter()
            .map(|s| *s as f64 / self.counted_trials as f64)
            .sum();
        sum / self.task_successes.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub scenario: String,
    pub sequence: String,
    pub prompts: Vec<String>,
    pub trials: u32,
    pub seed_base: u64,
    pub perturbation: f64,
    pub modes: Vec<ModeReport>,
}

impl BenchReport {
    pub fn mode(&self, mode: RunMode) -> Option<&ModeReport> {
        self.modes.iter().find(|m| m.mode == mode)
    }
}

fn percent(successes: u32, denominator: u32) -> String {
    if denominator == 0 {
        return "-".to_string();
    }
    let p = (200 * successes + denominator) / (2 * denominator);
    format!("{p}%")
}

pub fn format_cell(successes: u32, denominator: u32) -> String {
    format!("{successes}/{denominator} ({})", percent(successes, denominator))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Table,
    Machine,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "machine" => Ok(ReportFormat::Machine),
            other => Err(format!("unknown format `{other}` (expected table or machine)")),
        }
    }
}

/// Render a report. The table prints one row per mode with one
/// `s/n (p%)` column per atomic task; the machine format is a lossless
/// JSON document.
pub fn render_report(report: &BenchReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Machine => {
            serde_json::to_string_pretty(report).expect("report serializes")
        }
        ReportFormat::Table => render_table(report),
    }
}

pub fn parse_machine_report(text: &str) -> Result<BenchReport, BenchError> {
    serde_json::from_str(text).map_err(|e| BenchError::Config(format!("bad report: {e}")))
}

fn render_table(report: &BenchReport) -> String {
    let mut columns = vec!["mode".to_string()];
    for (k, _) in report.prompts.iter().enumerate() {
        columns.push(format!("task {}", k + 1));
    }
    columns.push("excluded".to_string());

    let mut rows: Vec<Vec<String>> = vec![columns];
    for mode in &report.modes {
        let mut row = vec![mode.mode.to_string()];
        for s in &mode.task_successes {
            row.push(format_cell(*s, mode.counted_trials));
        }
        row.push(mode.excluded_trials.to_string());
        rows.push(row);
    }

    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    out.push_str(&format!(
        "benchmark: {} / {}  ({} trials, seed base {})\n",
        report.scenario, report.sequence, report.trials, report.seed_base
    ));
    for (k, prompt) in report.prompts.iter().enumerate() {
        out.push_str(&format!("  task {}: {}\n", k + 1, prompt));
    }
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> =
            row.iter().zip(&widths).map(|(cell, w)| format!("{cell:<w$}")).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let dashes: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            out.push_str(&dashes.join("  "));
            out.push('\n');
        }
    }
    if let (Some(base), Some(sci)) = (self_mode(report, RunMode::Baseline), self_mode(report, RunMode::Sci)) {
        let delta = sci.unweighted_mean_rate() - base.unweighted_mean_rate();
        out.push_str(&format!(
            "mean per-task success: baseline {:.1}%, sci {:.1}% ({:+.1} points)\n",
            100.0 * base.unweighted_mean_rate(),
            100.0 * sci.unweighted_mean_rate(),
            100.0 * delta
        ));
    }
    out
}

fn self_mode(report: &BenchReport, mode: RunMode) -> Option<&ModeReport> {
    report.mode(mode)
}
