//! Expected utility over treatment actions, recommendation, prior-reversal
//! search and model-averaged sensitivity sweeps.

mod flip;

pub use flip::{flip_boundary, FlipResult, PriorFamily, SCAN_POINTS};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inference::{
    patient_posterior, posterior, theta_axis_name, InferenceError, JointPosterior, PatientPosterior,
    PATIENT_AXIS,
};
use crate::model::{PipelineModel, Role, StudyReport};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecisionError {
    #[error("a decision problem needs at least two actions")]
    TooFewActions,
    #[error("duplicate action `{0}`")]
    DuplicateAction(String),
    #[error("action `{action}` is bound to unknown arm `{arm}`")]
    UnknownArm { action: String, arm: String },
    #[error("{0} must be finite")]
    NotFinite(&'static str),
    #[error("tie_epsilon must be >= 0")]
    NegativeEpsilon,
    #[error("no posterior for arm `{0}`")]
    MissingPosterior(String),
    #[error("no flip in interval [{lo}, {hi}]: `{action}` is recommended at both ends")]
    NoFlip { lo: f64, hi: f64, action: String },
    #[error("non-monotone flip pattern: the recommendation changes near {crossings:?}")]
    NonMonotone { crossings: Vec<f64> },
    #[error("invalid search interval: {0}")]
    BadInterval(String),
    #[error("invalid prior family: {0}")]
    BadFamily(String),
    #[error("invalid ensemble: {0}")]
    BadEnsemble(String),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Action {
    pub name: String,
    /// The arm whose patient parameter governs the outcome under this action.
    pub arm: String,
    #[serde(default)]
    pub utility_offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeUtilities {
    pub u_event: f64,
    pub u_no_event: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionProblem {
    pub actions: Vec<Action>,
    pub outcome_utilities: OutcomeUtilities,
    #[serde(default)]
    pub tie_epsilon: f64,
}

impl DecisionProblem {
    /// `treat` (first treated arm) against `no_treat` (baseline), with
    /// survival utility and no offsets.
    pub fn default_for(model: &PipelineModel) -> Self {
        let baseline = &model.arms()[model.baseline_index()].name;
        let treated = model
            .arms()
            .iter()
            .find(|a| a.role == Role::Treated)
            .map_or(baseline, |a| &a.name);
        Self {
            actions: vec![
                Action {
                    name: "treat".into(),
                    arm: treated.clone(),
                    utility_offset: 0.0,
                },
                Action {
                    name: "no_treat".into(),
                    arm: baseline.clone(),
                    utility_offset: 0.0,
                },
            ],
            outcome_utilities: OutcomeUtilities {
                u_event: 0.0,
                u_no_event: 1.0,
            },
            tie_epsilon: 0.0,
        }
    }

    /// Checks the problem against the study's arms; returns warnings.
    pub fn validate<'a>(&self, arms: impl IntoIterator<Item = &'a str> + Clone) -> Result<Vec<String>, DecisionError> {
        if self.actions.len() < 2 {
            return Err(DecisionError::TooFewActions);
        }
        let mut seen = std::collections::BTreeSet::new();
        for a in &self.actions {
            if !seen.insert(a.name.as_str()) {
                return Err(DecisionError::DuplicateAction(a.name.clone()));
            }
            if !arms.clone().into_iter().any(|n| n == a.arm) {
                return Err(DecisionError::UnknownArm {
                    action: a.name.clone(),
                    arm: a.arm.clone(),
                });
            }
            if !a.utility_offset.is_finite() {
                return Err(DecisionError::NotFinite("utility_offset"));
            }
        }
        let u = self.outcome_utilities;
        if !u.u_event.is_finite() || !u.u_no_event.is_finite() {
            return Err(DecisionError::NotFinite("outcome utilities"));
        }
        if !(self.tie_epsilon >= 0.0) {
            return Err(DecisionError::NegativeEpsilon);
        }
        let mut warnings = Vec::new();
        if u.u_no_event < u.u_event {
            warnings.push(format!(
                "u_no_event ({}) is below u_event ({}): the event is treated as desirable",
                u.u_no_event, u.u_event
            ));
        }
        Ok(warnings)
    }

    /// Expected utility at a given event probability.
    #[inline]
    pub fn utility_at(&self, action: &Action, event_probability: f64) -> f64 {
        let u = self.outcome_utilities;
        u.u_event * event_probability + u.u_no_event * (1.0 - event_probability) + action.utility_offset
    }
}

/// `u_event * E[theta_pt] + u_no_event * (1 - E[theta_pt]) + offset` for the
/// action's bound arm.
pub fn expected_utility(
    action: &Action,
    posteriors: &BTreeMap<String, PatientPosterior>,
    problem: &DecisionProblem,
) -> Result<f64, DecisionError> {
    let pt = posteriors
        .get(&action.arm)
        .ok_or_else(|| DecisionError::MissingPosterior(action.arm.clone()))?;
    let mean = pt.grid.mean(PATIENT_AXIS).map_err(InferenceError::from)?;
    Ok(problem.utility_at(action, mean))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Recommendation {
    pub action: String,
    /// Expected utility per action, in problem order.
    pub table: Vec<(String, f64)>,
}

/// Argmax of expected utility. Actions within `tie_epsilon` of the best are
/// tied; ties go to the smallest `|utility_offset|`, then to the
/// lexicographically first name.
pub fn choose(problem: &DecisionProblem, eu: &[f64]) -> usize {
    let best = eu.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut pick: Option<usize> = None;
    for (i, a) in problem.actions.iter().enumerate() {
        if eu[i] < best - problem.tie_epsilon {
            continue;
        }
        pick = match pick {
            None => Some(i),
            Some(j) => {
                let b = &problem.actions[j];
                let key = (a.utility_offset.abs(), a.name.as_str());
                let cur = (b.utility_offset.abs(), b.name.as_str());
                if key.0 < cur.0 || (key.0 == cur.0 && key.1 < cur.1) {
                    Some(i)
                } else {
                    Some(j)
                }
            }
        };
    }
    pick.expect("at least one action attains the maximum")
}

pub fn recommend(
    problem: &DecisionProblem,
    posteriors: &BTreeMap<String, PatientPosterior>,
) -> Result<Recommendation, DecisionError> {
    let eu = problem
        .actions
        .iter()
        .map(|a| expected_utility(a, posteriors, problem))
        .collect::<Result<Vec<_>, _>>()?;
    let i = choose(problem, &eu);
    Ok(Recommendation {
        action: problem.actions[i].name.clone(),
        table: problem.actions.iter().map(|a| a.name.clone()).zip(eu).collect(),
    })
}

/// Per-arm patient posteriors from a joint posterior, using the model's
/// relevance discount.
pub fn patient_posteriors(
    model: &PipelineModel,
    jp: &JointPosterior,
) -> Result<BTreeMap<String, PatientPosterior>, DecisionError> {
    let mut out = BTreeMap::new();
    for arm in model.arms() {
        let name = theta_axis_name(&arm.name);
        let marginal = jp.grid.marginal(&[name.as_str()]).map_err(InferenceError::from)?;
        out.insert(arm.name.clone(), patient_posterior(&marginal, model.patient_relevance_kappa())?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleMember {
    pub label: String,
    pub model: PipelineModel,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEnsemble")]
pub struct ModelEnsemble {
    pub members: Vec<EnsembleMember>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEnsemble {
    members: Vec<EnsembleMember>,
}

impl TryFrom<RawEnsemble> for ModelEnsemble {
    type Error = DecisionError;
    fn try_from(raw: RawEnsemble) -> Result<Self, DecisionError> {
        ModelEnsemble::new(raw.members)
    }
}

impl ModelEnsemble {
    pub fn new(members: Vec<EnsembleMember>) -> Result<Self, DecisionError> {
        if members.is_empty() {
            return Err(DecisionError::BadEnsemble("no members".into()));
        }
        if let Some(m) = members.iter().find(|m| !(m.weight >= 0.0) || !m.weight.is_finite()) {
            return Err(DecisionError::BadEnsemble(format!("member `{}` has weight {}", m.label, m.weight)));
        }
        let total: f64 = members.iter().map(|m| m.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(DecisionError::BadEnsemble(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { members })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub label: String,
    pub weight: f64,
    pub expected_utility: Vec<(String, f64)>,
    pub recommended: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub averaged_eu: Vec<(String, f64)>,
    pub recommended: String,
    /// Whether every member recommends the same action.
    pub stable: bool,
}

/// Evaluates the decision under every ensemble member and averages the
/// expected utilities by member weight.
pub fn model_sweep(
    ensemble: &ModelEnsemble,
    report: &StudyReport,
    problem: &DecisionProblem,
    resolution: usize,
) -> Result<SweepTable, DecisionError> {
    let mut rows = Vec::with_capacity(ensemble.members.len());
    for m in &ensemble.members {
        problem.validate(m.model.arms().iter().map(|a| a.name.as_str()))?;
        let jp = posterior(&m.model, report, resolution)?;
        let rec = recommend(problem, &patient_posteriors(&m.model, &jp)?)?;
        rows.push(SweepRow {
            label: m.label.clone(),
            weight: m.weight,
            expected_utility: rec.table,
            recommended: rec.action,
        });
    }
    let averaged: Vec<f64> = (0..problem.actions.len())
        .map(|i| rows.iter().map(|r| r.weight * r.expected_utility[i].1).sum())
        .collect();
    let pick = choose(problem, &averaged);
    let stable = rows.iter().all(|r| r.recommended == rows[0].recommended);
    Ok(SweepTable {
        averaged_eu: problem.actions.iter().map(|a| a.name.clone()).zip(averaged).collect(),
        recommended: problem.actions[pick].name.clone(),
        stable,
        rows,
    })
}
