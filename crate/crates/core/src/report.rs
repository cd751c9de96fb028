//! Experiment reports: a text table and a versioned JSON document.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::checker::{CostReport, Verdict};
use crate::error::{Error, Result};
use crate::scenario::{ReportFormat, RunResult};
use crate::variants::Protocol;

pub const REPORT_SCHEMA: &str = "ratreg-report/1";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckSummary {
    pub checked_runs: u64,
    pub passed_runs: u64,
    pub termination_violations: u64,
    pub validity_violations: u64,
    pub false_positives: u64,
    pub unattributed_detections: u64,
    pub lemma_violations: u64,
    pub missed_detections: u64,
    pub crash_detections: u64,
}

impl CheckSummary {
    fn add(&mut self, v: &Verdict) {
        self.checked_runs += 1;
        self.passed_runs += u64::from(v.passed());
        self.termination_violations += v.termination.len() as u64;
        self.validity_violations += v.validity.violations.len() as u64;
        self.false_positives += v.detection.false_positives.len() as u64;
        self.unattributed_detections += v.detection.unattributed.len() as u64;
        self.lemma_violations += v.lemmas.len() as u64;
        self.missed_detections += v.detection.completeness.missed.len() as u64;
        self.crash_detections += v.detection.crash_detections;
    }
}

/// One protocol's aggregate over a batch of runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolRow {
    pub protocol: Protocol,
    pub runs: u64,
    pub runs_with_detection: u64,
    /// Mean messages per run over runs without any detection.
    pub messages_without_detection: Option<f64>,
    /// Mean messages per run over runs with at least one detection.
    pub messages_with_detection: Option<f64>,
    pub fingerprint_ops_per_run: f64,
    pub cost: CostReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checks: Option<CheckSummary>,
}

impl ProtocolRow {
    pub fn from_runs(protocol: Protocol, results: &[RunResult]) -> Self {
        let mut cost = CostReport::default();
        let (mut with, mut without) = (Vec::new(), Vec::new());
        let mut checks: Option<CheckSummary> = None;
        for r in results {
            let c = crate::checker::cost_report(&r.trace);
            if c.detections > 0 { &mut with } else { &mut without }.push(c.messages_total as f64);
            cost.merge(&c);
            if let Some(v) = &r.verdict {
                checks.get_or_insert_with(CheckSummary::default).add(v);
            }
        }
        let mean = |xs: &[f64]| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
        let runs = results.len() as u64;
        Self {
            protocol,
            runs,
            runs_with_detection: with.len() as u64,
            messages_without_detection: mean(&without),
            messages_with_detection: mean(&with),
            fingerprint_ops_per_run: if runs == 0 { 0.0 } else { cost.fingerprint_ops as f64 / runs as f64 },
            cost,
            checks,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub scenario: String,
    pub seed: u64,
    pub rows: Vec<ProtocolRow>,
}

impl Report {
    pub fn new(scenario: &str, seed: u64, rows: Vec<ProtocolRow>) -> Self {
        Self { schema: REPORT_SCHEMA.into(), scenario: scenario.into(), seed, rows }
    }

    pub fn passed(&self) -> bool {
        self.rows
            .iter()
            .all(|r| r.checks.as_ref().is_none_or(|c| c.passed_runs == c.checked_runs))
    }

    pub fn to_machine(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }

    pub fn from_machine(text: &str) -> Result<Self> {
        let r: Report = serde_json::from_str(text).map_err(|e| Error::Scenario(format!("bad report: {e}")))?;
        if r.schema != REPORT_SCHEMA {
            return Err(Error::Scenario(format!("unsupported report schema {:?}", r.schema)));
        }
        Ok(r)
    }

    pub fn to_table(&self) -> String {
        let fmt_mean = |m: Option<f64>| m.map_or_else(|| "-".to_string(), |x| format!("{x:.1}"));
        let mut out = String::new();
        let _ = writeln!(out, "scenario {} (seed {})", self.scenario, self.seed);
        let _ = writeln!(
            out,
            "{:<8} {:>6} {:>16} {:>16} {:>12} {:>10} {:>7} {:>9}",
            "protocol", "runs", "msgs no-detect", "msgs detect", "fp ops/run", "detected", "aborts", "checks"
        );
        for r in &self.rows {
            let checks = r
                .checks
                .as_ref()
                .map_or_else(|| "off".to_string(), |c| format!("{}/{}", c.passed_runs, c.checked_runs));
            let _ = writeln!(
                out,
                "{:<8} {:>6} {:>16} {:>16} {:>12.2} {:>10} {:>7} {:>9}",
                r.protocol.to_string(),
                r.runs,
                fmt_mean(r.messages_without_detection),
                fmt_mean(r.messages_with_detection),
                r.fingerprint_ops_per_run,
                r.cost.detections,
                r.cost.aborts,
                checks
            );
        }
        for r in &self.rows {
            let Some(c) = &r.checks else { continue };
            if c.passed_runs != c.checked_runs || c.missed_detections > 0 {
                let _ = writeln!(
                    out,
                    "{}: termination {} validity {} false-positive {} unattributed {} lemma {} missed {}",
                    r.protocol,
                    c.termination_violations,
                    c.validity_violations,
                    c.false_positives,
                    c.unattributed_detections,
                    c.lemma_violations,
                    c.missed_detections
                );
            }
        }
        out
    }

    pub fn emit(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Table => self.to_table(),
            ReportFormat::Machine => self.to_machine(),
        }
    }
}

pub const VERDICT_SCHEMA: &str = "ratreg-verdict/1";

/// Standalone verdict for one trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictDocument {
    pub schema: String,
    pub passed: bool,
    pub termination: bool,
    pub validity: bool,
    pub soundness: bool,
    pub lemmas: bool,
    pub verdict: Verdict,
}

impl VerdictDocument {
    pub fn new(verdict: Verdict) -> Self {
        Self {
            schema: VERDICT_SCHEMA.into(),
            passed: verdict.passed(),
            termination: verdict.termination_ok(),
            validity: verdict.validity_ok(),
            soundness: verdict.soundness_ok(),
            lemmas: verdict.lemmas_ok(),
            verdict,
        }
    }

    pub fn to_table(&self) -> String {
        let mark = |ok: bool| if ok { "pass" } else { "FAIL" };
        let v = &self.verdict;
        let mut out = String::new();
        let _ = writeln!(out, "termination  {}  ({} violations)", mark(self.termination), v.termination.len());
        let _ = writeln!(
            out,
            "validity     {}  ({} reads, {} aborts, {} violations)",
            mark(self.validity),
            v.validity.reads_checked,
            v.validity.aborts.len(),
            v.validity.violations.len()
        );
        let _ = writeln!(
            out,
            "soundness    {}  ({} detections, {} false positives, {} unattributed)",
            mark(self.soundness),
            v.detection.events,
            v.detection.false_positives.len(),
            v.detection.unattributed.len()
        );
        let _ = writeln!(out, "lemmas       {}  ({} violations)", mark(self.lemmas), v.lemmas.len());
        let _ = writeln!(out, "missed       {}", v.detection.completeness.missed.len());
        let _ = writeln!(
            out,
            "messages     {}  (fingerprint ops {}, detection runs {})",
            v.cost.messages_total, v.cost.fingerprint_ops, v.cost.detection_runs
        );
        out
    }
}
