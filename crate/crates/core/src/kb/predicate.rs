use serde::{Deserialize, Serialize};

use crate::model::{Ascertainment, BaselineBalance, Blinding, Design, Role, StudyReport};

/// Enumerated study fields a predicate or recipe may read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Design,
    Blinding,
    BaselineBalance,
    MortalityAscertainment,
}

impl Field {
    /// Every value the field can take, as written in study files.
    pub fn values(self) -> &'static [&'static str] {
        match self {
            Field::Design => &["randomized_trial", "cohort", "case_control"],
            Field::Blinding => &["double", "single", "none", "unknown"],
            Field::BaselineBalance => &["similar", "dissimilar", "unreported"],
            Field::MortalityAscertainment => &["complete", "partial", "unreported"],
        }
    }

    pub fn read(self, report: &StudyReport) -> &'static str {
        match self {
            Field::Design => match report.design {
                Design::RandomizedTrial => "randomized_trial",
                Design::Cohort => "cohort",
                Design::CaseControl => "case_control",
            },
            Field::Blinding => match report.blinding {
                Blinding::Double => "double",
                Blinding::Single => "single",
                Blinding::None => "none",
                Blinding::Unknown => "unknown",
            },
            Field::BaselineBalance => match report.baseline_balance {
                BaselineBalance::Similar => "similar",
                BaselineBalance::Dissimilar => "dissimilar",
                BaselineBalance::Unreported => "unreported",
            },
            Field::MortalityAscertainment => match report.mortality_ascertainment {
                Ascertainment::Complete => "complete",
                Ascertainment::Partial => "partial",
                Ascertainment::Unreported => "unreported",
            },
        }
    }
}

/// A restricted boolean expression over a study's descriptors.
///
/// Tag tests may only appear in positive position, so adding evidence tags
/// can never deactivate an entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    Always,
    /// Some treated arm reports withdrawals.
    Withdrawals,
    Tag(String),
    Is {
        field: Field,
        #[serde(rename = "in")]
        values: Vec<String>,
    },
    All(Vec<Predicate>),
    Any(Vec<Predicate>),
    Not(Box<Predicate>),
}

impl Predicate {
    pub fn holds(&self, report: &StudyReport) -> bool {
        match self {
            Predicate::Always => true,
            Predicate::Withdrawals => report
                .arms
                .iter()
                .any(|a| a.role == Role::Treated && a.withdrawn > 0),
            Predicate::Tag(t) => report.selection_tags.contains(t),
            Predicate::Is { field, values } => {
                let v = field.read(report);
                values.iter().any(|x| x == v)
            }
            Predicate::All(ps) => ps.iter().all(|p| p.holds(report)),
            Predicate::Any(ps) => ps.iter().any(|p| p.holds(report)),
            Predicate::Not(p) => !p.holds(report),
        }
    }

    pub(crate) fn check(&self) -> Result<(), String> {
        self.check_polarity(true)
    }

    fn check_polarity(&self, positive: bool) -> Result<(), String> {
        match self {
            Predicate::Always | Predicate::Withdrawals => Ok(()),
            Predicate::Tag(t) if !positive => Err(format!("tag `{t}` may not appear under `not`")),
            Predicate::Tag(_) => Ok(()),
            Predicate::Is { field, values } => {
                if values.is_empty() {
                    return Err(format!("`is` on {field:?} lists no values"));
                }
                match values.iter().find(|v| !field.values().contains(&v.as_str())) {
                    Some(bad) => Err(format!("`{bad}` is not a value of {field:?}")),
                    None => Ok(()),
                }
            }
            Predicate::All(ps) | Predicate::Any(ps) => ps.iter().try_for_each(|p| p.check_polarity(positive)),
            Predicate::Not(p) => p.check_polarity(!positive),
        }
    }
}
