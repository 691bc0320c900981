//! Audit reports: structured pass/fail evidence for the executable checks.

use serde::Serialize;

/// Outcome of an audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditStatus {
    Pass,
    Fail,
    NotApplicable,
}

/// One verified condition inside an audit, with the observed quantity, the
/// bound it was compared against and a witness description on failure.
#[derive(Debug, Clone, Serialize)]
pub struct CheckItem {
    pub label: String,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observed: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<String>,
}

/// A named audit with its checks. Failures are data, not errors.
#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub name: String,
    pub status: AuditStatus,
    pub checks: Vec<CheckItem>,
    pub notes: Vec<String>,
}

impl AuditReport {
    pub fn new(name: impl Into<String>) -> Self {
        AuditReport {
            name: name.into(),
            status: AuditStatus::Pass,
            checks: Vec::new(),
            notes: Vec::new(),
        }
    }

    /// An audit that does not apply to the given inputs, with justification.
    pub fn not_applicable(name: impl Into<String>, reason: impl Into<String>) -> Self {
        AuditReport {
            name: name.into(),
            status: AuditStatus::NotApplicable,
            checks: Vec::new(),
            notes: vec![reason.into()],
        }
    }

    pub fn push_check(&mut self, check: CheckItem) {
        if !check.passed {
            self.status = AuditStatus::Fail;
        }
        self.checks.push(check);
    }

    pub fn check_bound(
        &mut self,
        label: impl Into<String>,
        observed: f64,
        bound: f64,
        witness: Option<String>,
    ) {
        let passed = observed <= bound;
        self.push_check(CheckItem {
            label: label.into(),
            passed,
            observed: Some(observed),
            bound: Some(bound),
            witness: if passed { None } else { witness },
        });
    }

    pub fn check_flag(&mut self, label: impl Into<String>, passed: bool, witness: Option<String>) {
        self.push_check(CheckItem {
            label: label.into(),
            passed,
            observed: None,
            bound: None,
            witness: if passed { None } else { witness },
        });
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }

    pub fn passed(&self) -> bool {
        self.status != AuditStatus::Fail
    }

    /// First failing check, if any.
    pub fn first_failure(&self) -> Option<&CheckItem> {
        self.checks.iter().find(|c| !c.passed)
    }

    /// Find a check by label.
    pub fn check(&self, label: &str) -> Option<&CheckItem> {
        self.checks.iter().find(|c| c.label == label)
    }

    /// One-line summary, used by the CLI report body.
    pub fn summary_line(&self) -> String {
        let status = match self.status {
            AuditStatus::Pass => "pass",
            AuditStatus::Fail => "FAIL",
            AuditStatus::NotApplicable => "n/a",
        };
        match self.first_failure() {
            Some(c) => format!("{}: {} ({})", self.name, status, c.label),
            None => format!("{}: {}", self.name, status),
        }
    }
}
