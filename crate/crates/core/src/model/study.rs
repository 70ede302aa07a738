use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use super::{is_identifier, Probability};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    RandomizedTrial,
    Cohort,
    CaseControl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Blinding {
    Double,
    Single,
    None,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineBalance {
    Similar,
    Dissimilar,
    Unreported,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ascertainment {
    Complete,
    Partial,
    Unreported,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Baseline,
    Treated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyArm {
    pub name: String,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assigned_n: Option<u64>,
    #[serde(default)]
    pub withdrawn: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reported_events: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reported_rate: Option<Probability>,
    /// Set when `reported_events` was reconstructed from `reported_rate`.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub reconstructed: bool,
}

impl StudyArm {
    pub fn counts(name: &str, role: Role, assigned_n: u64, withdrawn: u64, events: u64) -> Self {
        Self {
            name: name.to_string(),
            role,
            assigned_n: Some(assigned_n),
            withdrawn,
            reported_events: Some(events),
            reported_rate: None,
            reconstructed: false,
        }
    }

    /// Assigned count; validated studies always carry it.
    pub fn n(&self) -> u64 {
        self.assigned_n.unwrap_or(0)
    }

    /// Event count; validated studies always carry it.
    pub fn events(&self) -> u64 {
        self.reported_events.unwrap_or(0)
    }
}

/// A structured description of one published study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyReport {
    pub id: String,
    pub design: Design,
    pub blinding: Blinding,
    pub arms: Vec<StudyArm>,
    #[serde(default)]
    pub selection_tags: BTreeSet<String>,
    pub baseline_balance: BaselineBalance,
    pub mortality_ascertainment: Ascertainment,
    #[serde(default)]
    pub notes: String,
}

impl StudyReport {
    pub fn baseline(&self) -> Option<&StudyArm> {
        self.arms.iter().find(|a| a.role == Role::Baseline)
    }

    pub fn arm(&self, name: &str) -> Option<&StudyArm> {
        self.arms.iter().find(|a| a.name == name)
    }

    pub fn has_withdrawals(&self) -> bool {
        self.arms
            .iter()
            .any(|a| a.role == Role::Treated && a.withdrawn > 0)
    }
}

/// One violated invariant, located by a field path such as
/// `arms[0].reported_events`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FieldError {
    pub field_path: String,
    pub message: String,
}

impl FieldError {
    fn new(field_path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field_path: field_path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field_path, self.message)
    }
}

/// A study that passed [`validate_study`]: every arm has counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedStudy(StudyReport);

impl ValidatedStudy {
    pub fn into_inner(self) -> StudyReport {
        self.0
    }
}

impl Deref for ValidatedStudy {
    type Target = StudyReport;
    fn deref(&self) -> &StudyReport {
        &self.0
    }
}

/// Checks every study invariant and fills in event counts for rate-only
/// arms. Returns all violations, not just the first.
pub fn validate_study(report: &StudyReport) -> Result<ValidatedStudy, Vec<FieldError>> {
    let mut errors = Vec::new();
    let mut out = report.clone();

    if !is_identifier(&report.id) {
        errors.push(FieldError::new("id", "must be a non-empty identifier"));
    }
    if report.arms.is_empty() {
        errors.push(FieldError::new("arms", "at least one arm is required"));
    }
    let baselines = report.arms.iter().filter(|a| a.role == Role::Baseline).count();
    if !report.arms.is_empty() && baselines != 1 {
        errors.push(FieldError::new(
            "arms",
            format!("exactly one arm must have role=baseline (found {baselines})"),
        ));
    }
    if !report.arms.is_empty() && !report.arms.iter().any(|a| a.role == Role::Treated) {
        errors.push(FieldError::new("arms", "at least one arm must have role=treated"));
    }
    for tag in &report.selection_tags {
        if !is_identifier(tag) {
            errors.push(FieldError::new(
                "selection_tags",
                format!("`{tag}` is not an identifier"),
            ));
        }
    }

    let mut seen = HashSet::new();
    let mut conversions = Vec::new();
    for (i, arm) in report.arms.iter().enumerate() {
        let path = |field: &str| format!("arms[{i}].{field}");
        if !is_identifier(&arm.name) {
            errors.push(FieldError::new(path("name"), "must be a non-empty identifier"));
        } else if !seen.insert(arm.name.as_str()) {
            errors.push(FieldError::new(path("name"), format!("duplicate arm name `{}`", arm.name)));
        }
        let Some(n) = arm.assigned_n else {
            errors.push(FieldError::new(path("assigned_n"), "assigned_n is required"));
            continue;
        };
        if arm.withdrawn > n {
            errors.push(FieldError::new(path("withdrawn"), "withdrawn exceeds assigned_n"));
        }
        match (arm.reported_events, arm.reported_rate) {
            (Some(events), _) => {
                if events > n {
                    errors.push(FieldError::new(path("reported_events"), "events exceed assigned_n"));
                }
            }
            (None, Some(rate)) => {
                let exact = rate.value() * n as f64;
                let events = exact.round() as u64;
                let target = &mut out.arms[i];
                target.reported_events = Some(events);
                target.reconstructed = true;
                conversions.push(format!(
                    "arms[{i}] ({}): reported_events reconstructed from reported_rate {} x {} = {:.4} -> {}",
                    arm.name,
                    rate.value(),
                    n,
                    exact,
                    events
                ));
            }
            (None, None) => errors.push(FieldError::new(
                path("reported_events"),
                "one of reported_events or reported_rate is required",
            )),
        }
    }

    if !errors.is_empty() {
        return Err(errors);
    }
    for line in conversions {
        if !out.notes.is_empty() {
            out.notes.push('\n');
        }
        out.notes.push_str(&line);
    }
    Ok(ValidatedStudy(out))
}
