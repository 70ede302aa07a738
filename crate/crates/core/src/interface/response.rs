use std::collections::BTreeMap;

use serde::Serialize;

use crate::decision::Recommendation;
use crate::grid::ParamGrid;
use crate::inference::InferenceError;
use crate::kb::BiasEntry;
use crate::model::{ParamPrior, Stage, StageTransform, TransformKind};

use super::EngineError;

/// Grids in responses are rebinned to this many cells unless full grids
/// are requested.
pub const PLOT_POINTS: usize = 101;

/// A one-dimensional marginal: mass per cell plus its exact moments.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSummary {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa_used: Option<f64>,
}

impl GridSummary {
    /// Moments come from the full grid; only the returned cells are rebinned.
    pub fn from_grid(grid: &ParamGrid, max_points: usize) -> Result<Self, EngineError> {
        let name = grid.axes()[0].name.clone();
        let (mean, var) = grid.moments(&name).map_err(InferenceError::from)?;
        let shown = grid.rebinned(max_points).map_err(InferenceError::from)?;
        Ok(Self {
            points: shown.axes()[0].points.clone(),
            weights: shown.weights().to_vec(),
            mean,
            sd: var.max(0.0).sqrt(),
            kappa_used: None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorOrigin {
    Default,
    Override,
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActiveBias {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub display_name: Option<String>,
    pub stage: Stage,
    /// `None` for evidence modifiers.
    pub transform_kind: Option<TransformKind>,
    pub priors: BTreeMap<String, ParamPrior>,
    pub origin: PriorOrigin,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub overridden: Vec<String>,
}

impl ActiveBias {
    pub(crate) fn new(entry: &BiasEntry, priors: BTreeMap<String, ParamPrior>, overridden: Vec<String>) -> Self {
        Self {
            id: entry.id.clone(),
            display_name: Some(entry.display_name.clone()),
            stage: entry.stage,
            transform_kind: entry.transform_kind,
            priors,
            origin: if overridden.is_empty() {
                PriorOrigin::Default
            } else {
                PriorOrigin::Override
            },
            overridden,
        }
    }

    pub(crate) fn explicit(t: &StageTransform) -> Self {
        Self {
            id: t.id.clone(),
            display_name: None,
            stage: t.stage,
            transform_kind: Some(t.kind),
            priors: t.priors.clone(),
            origin: PriorOrigin::Explicit,
            overridden: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PruneResponse {
    pub study_id: String,
    pub kb_version: String,
    pub active_biases: Vec<ActiveBias>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionSummary {
    pub expected_utility: BTreeMap<String, f64>,
    pub recommended: String,
}

impl DecisionSummary {
    pub(crate) fn new(rec: Recommendation) -> Self {
        Self {
            expected_utility: rec.table.into_iter().collect(),
            recommended: rec.action,
        }
    }
}

/// Grid-convergence check: the same analysis at roughly half resolution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub resolution: usize,
    pub half_resolution: usize,
    pub bias_axis_points: usize,
    pub cells: usize,
    /// Largest absolute change of any posterior mean between resolutions.
    pub convergence_delta: f64,
    pub mean_shift_by_axis: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisResponse {
    pub study_id: String,
    pub active_biases: Vec<ActiveBias>,
    pub population_marginals: BTreeMap<String, GridSummary>,
    pub bias_marginals: BTreeMap<String, GridSummary>,
    pub patient_marginals: BTreeMap<String, GridSummary>,
    pub informativeness_nats: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decision: Option<DecisionSummary>,
    pub log_evidence: f64,
    pub warnings: Vec<String>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetaResponse {
    pub study_ids: Vec<String>,
    pub active_biases: BTreeMap<String, Vec<ActiveBias>>,
    pub population_marginals: BTreeMap<String, GridSummary>,
    pub informativeness_nats: BTreeMap<String, f64>,
    pub log_evidence: f64,
    pub resolution: usize,
    pub warnings: Vec<String>,
}
