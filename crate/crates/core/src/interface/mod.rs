//! File formats, request/response documents and the single engine entry
//! point shared by the command line and the HTTP service.
//!
//! Every document is JSON. Study files hold a [`StudyReport`]; knowledge
//! base files hold a [`BiasKB`]; analysis, meta, flip and sweep requests
//! are described in [`requests`]. Responses are emitted canonically (sorted
//! keys, floats with 12 significant digits) so identical requests give
//! byte-identical output.

pub mod canonical;
mod examples;
mod requests;
mod response;

pub use canonical::{format_g12, to_canonical, FloatStyle};
pub use examples::{bundled_examples, write_examples, BundledFile};
pub use requests::{
    parse_set, AnalysisRequest, FlipRequest, MetaRequest, PriorSpec, StudyInput, SweepRequest,
    DEFAULT_RESOLUTION,
};
pub use response::{ActiveBias, AnalysisResponse, Diagnostics, GridSummary, MetaResponse, PruneResponse};

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::decision::{self, DecisionError, DecisionProblem};
use crate::inference::{self, theta_axis_name, InferenceError, LikelihoodSurface};
use crate::kb::{self, BiasKB, BiasPrior, KbError};
use crate::model::{validate_study, FieldError, ModelError, ParamPrior, PipelineModel, StudyReport, ValidatedStudy};

pub const KB_PATH_ENV: &str = "BIASLOOM_KB_PATH";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    ValidationError,
    MalformedInput,
    DataImpossible,
    NoFlip,
    NonMonotone,
    Internal,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::ValidationError => "validation_error",
            ErrorCode::MalformedInput => "malformed_input",
            ErrorCode::DataImpossible => "data_impossible",
            ErrorCode::NoFlip => "no_flip",
            ErrorCode::NonMonotone => "non_monotone",
            ErrorCode::Internal => "internal",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCode::ValidationError => 2,
            ErrorCode::DataImpossible => 3,
            ErrorCode::NoFlip | ErrorCode::NonMonotone => 4,
            ErrorCode::MalformedInput => 65,
            ErrorCode::Internal => 70,
        }
    }

    pub fn http_status(self) -> u16 {
        match self {
            ErrorCode::ValidationError | ErrorCode::MalformedInput => 400,
            ErrorCode::DataImpossible | ErrorCode::NoFlip | ErrorCode::NonMonotone => 422,
            ErrorCode::Internal => 500,
        }
    }
}

/// A structured failure: what went wrong and, when known, where.
#[derive(Debug, Clone, PartialEq, Error, Serialize)]
#[error("{message}")]
pub struct EngineError {
    pub code: ErrorCode,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field_path: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<FieldError>,
}

impl EngineError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            field_path: None,
            errors: Vec::new(),
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::ValidationError, message)
    }

    pub fn at(mut self, path: impl Into<String>) -> Self {
        self.field_path = Some(path.into());
        self
    }

    fn fields(errors: Vec<FieldError>) -> Self {
        let first = errors[0].clone();
        Self {
            code: ErrorCode::ValidationError,
            message: if errors.len() == 1 {
                first.message.clone()
            } else {
                format!("{} (and {} more)", first.message, errors.len() - 1)
            },
            field_path: Some(first.field_path),
            errors,
        }
    }

    /// The error as a canonical JSON document.
    pub fn to_document(&self) -> String {
        to_canonical(self, FloatStyle::Significant12).expect("error documents serialize")
    }
}

impl From<InferenceError> for EngineError {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::DataImpossible => EngineError::new(ErrorCode::DataImpossible, e.to_string()),
            InferenceError::Resolution(_) => EngineError::validation(e.to_string()).at("resolution"),
            other => EngineError::validation(other.to_string()),
        }
    }
}

impl From<ModelError> for EngineError {
    fn from(e: ModelError) -> Self {
        EngineError::validation(e.to_string())
    }
}

impl From<KbError> for EngineError {
    fn from(e: KbError) -> Self {
        match e {
            KbError::Parse(_) => EngineError::new(ErrorCode::MalformedInput, e.to_string()),
            other => EngineError::validation(other.to_string()),
        }
    }
}

impl From<DecisionError> for EngineError {
    fn from(e: DecisionError) -> Self {
        match e {
            DecisionError::Inference(inner) => inner.into(),
            DecisionError::NoFlip { .. } => EngineError::new(ErrorCode::NoFlip, e.to_string()),
            DecisionError::NonMonotone { .. } => EngineError::new(ErrorCode::NonMonotone, e.to_string()),
            DecisionError::BadInterval(_) => EngineError::validation(e.to_string()).at("lo"),
            DecisionError::BadFamily(_) => EngineError::validation(e.to_string()).at("family"),
            other => EngineError::validation(other.to_string()).at("decision"),
        }
    }
}

/// Parses a JSON document, separating syntax errors (malformed input) from
/// schema errors (validation, with the offending field path).
pub fn parse_document<T: DeserializeOwned>(text: &str) -> Result<T, EngineError> {
    let value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| EngineError::new(ErrorCode::MalformedInput, format!("malformed JSON: {e}")))?;
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let err = EngineError::validation(e.into_inner().to_string());
        if path == "." {
            err
        } else {
            err.at(path)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operation {
    Validate,
    Prune,
    Analyze,
    Meta,
    Flip,
    Sweep,
}

impl FromStr for Operation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "validate" => Operation::Validate,
            "prune" => Operation::Prune,
            "analyze" => Operation::Analyze,
            "meta" => Operation::Meta,
            "flip" => Operation::Flip,
            "sweep" => Operation::Sweep,
            other => return Err(format!("unknown operation `{other}`")),
        })
    }
}

/// Stateless compute engine over an immutable knowledge base.
#[derive(Debug, Clone)]
pub struct Engine {
    kb: BiasKB,
}

impl Default for Engine {
    fn default() -> Self {
        Self::new(BiasKB::builtin().clone())
    }
}

/// A modelled study: validated report plus assembled pipeline and the
/// priors each active bias received.
struct Modelled {
    study: ValidatedStudy,
    model: PipelineModel,
    active: Vec<ActiveBias>,
}

impl Engine {
    pub fn new(kb: BiasKB) -> Self {
        Self { kb }
    }

    /// The shipped knowledge base, or the file named by `BIASLOOM_KB_PATH`.
    pub fn from_env() -> Result<Self, EngineError> {
        match std::env::var_os(KB_PATH_ENV) {
            None => Ok(Self::default()),
            Some(path) => {
                let text = std::fs::read_to_string(&path).map_err(|e| {
                    EngineError::new(
                        ErrorCode::MalformedInput,
                        format!("cannot read knowledge base {}: {e}", path.to_string_lossy()),
                    )
                })?;
                Ok(Self::new(BiasKB::from_json(&text)?))
            }
        }
    }

    pub fn kb(&self) -> &BiasKB {
        &self.kb
    }

    pub fn kb_document(&self) -> String {
        to_canonical(&self.kb, FloatStyle::Significant12).expect("knowledge base serializes")
    }

    /// Runs one operation on a JSON request body and returns the canonical
    /// response document.
    pub fn run(&self, op: Operation, body: &str) -> Result<String, EngineError> {
        match op {
            Operation::Validate => {
                let study = self.validate(&parse_document(body)?)?;
                Ok(to_canonical(&*study, FloatStyle::Exact).expect("studies serialize"))
            }
            Operation::Prune => emit(&self.prune(&parse_document(body)?)?),
            Operation::Analyze => emit(&self.analyze(&parse_document(body)?)?),
            Operation::Meta => emit(&self.meta(&parse_document(body)?)?),
            Operation::Flip => emit(&self.flip(&parse_document(body)?)?),
            Operation::Sweep => emit(&self.sweep(&parse_document(body)?)?),
        }
    }

    pub fn validate(&self, study: &StudyReport) -> Result<ValidatedStudy, EngineError> {
        validate_study(study).map_err(EngineError::fields)
    }

    pub fn prune(&self, study: &StudyReport) -> Result<PruneResponse, EngineError> {
        let study = self.validate(study)?;
        let entries = kb::prune(&self.kb, &study);
        let priors = kb::default_priors(&entries, &study)?;
        Ok(PruneResponse {
            study_id: study.id.clone(),
            kb_version: self.kb.version.clone(),
            active_biases: entries
                .iter()
                .zip(priors)
                .map(|(e, p)| ActiveBias::new(e, p.params, Vec::new()))
                .collect(),
        })
    }

    fn model_study(
        &self,
        study: &StudyReport,
        overrides: &BTreeMap<String, PriorSpec>,
        explicit: Option<&PipelineModel>,
        kappa: Option<f64>,
    ) -> Result<Modelled, EngineError> {
        let study = self.validate(study)?;
        let (mut model, active) = match explicit {
            Some(m) => {
                let mut arms: Vec<&str> = m.arms().iter().map(|a| a.name.as_str()).collect();
                let mut want: Vec<&str> = study.arms.iter().map(|a| a.name.as_str()).collect();
                arms.sort_unstable();
                want.sort_unstable();
                if arms != want {
                    return Err(EngineError::validation("model arms must match the study's arms").at("model"));
                }
                let mut model = m.clone();
                let mut active = Vec::new();
                for t in m.stage_transforms() {
                    active.push(ActiveBias::explicit(t));
                }
                for (key, spec) in overrides {
                    let Some(arm) = key.strip_prefix("theta_pop.") else {
                        return Err(EngineError::validation("with an explicit model only theta_pop overrides apply")
                            .at(format!("kb_overrides.{key}")));
                    };
                    model = population_override(model, arm, spec.clone(), key)?;
                }
                (model, active)
            }
            None => self.assemble(&study, overrides)?,
        };
        if kappa.is_some() {
            model = model.with_kappa(kappa).map_err(|e| EngineError::from(e).at("kappa"))?;
        }
        Ok(Modelled { study, model, active })
    }

    fn assemble(
        &self,
        study: &ValidatedStudy,
        overrides: &BTreeMap<String, PriorSpec>,
    ) -> Result<(PipelineModel, Vec<ActiveBias>), EngineError> {
        let entries = kb::prune(&self.kb, study);
        let mut priors = kb::default_priors(&entries, study)?;
        let mut overridden: Vec<Vec<String>> = vec![Vec::new(); priors.len()];
        let mut population = Vec::new();
        for (key, spec) in overrides {
            if let Some(arm) = key.strip_prefix("theta_pop.") {
                population.push((arm, spec, key));
                continue;
            }
            let path = || format!("kb_overrides.{key}");
            let (bias, param) = match key.split_once('.') {
                Some((b, p)) => (b, Some(p)),
                None => (key.as_str(), None),
            };
            let Some(i) = priors.iter().position(|p| p.bias_id == bias) else {
                return Err(EngineError::validation(format!("`{bias}` is not an active bias for this study")).at(path()));
            };
            let target = resolve_param(&priors[i], param).map_err(|m| EngineError::validation(m).at(path()))?;
            priors[i].params.insert(target.clone(), spec.clone().into_prior());
            overridden[i].push(target);
        }
        let mut model = kb::assemble_pipeline(study, &entries, &priors)?;
        for (arm, spec, key) in population {
            model = population_override(model, arm, spec.clone(), key)?;
        }
        // Report the priors the pipeline actually uses (protocol pins included).
        let used: BTreeMap<&str, &BTreeMap<String, ParamPrior>> =
            model.stage_transforms().iter().map(|t| (t.id.as_str(), &t.priors)).collect();
        let active = entries
            .iter()
            .zip(priors)
            .zip(overridden)
            .map(|((e, p), o)| {
                let params = used.get(e.id.as_str()).map_or(p.params, |u| (*u).clone());
                ActiveBias::new(e, params, o)
            })
            .collect();
        Ok((model, active))
    }

    pub fn analyze(&self, req: &AnalysisRequest) -> Result<AnalysisResponse, EngineError> {
        let Modelled { study, model, active } =
            self.model_study(&req.study, &req.kb_overrides, req.model.as_ref(), req.kappa)?;
        let resolution = req.resolution.unwrap_or(DEFAULT_RESOLUTION);
        let mut warnings = reconstruction_warnings(&study);
        if let Some(problem) = &req.decision {
            warnings.extend(problem.validate(model.arms().iter().map(|a| a.name.as_str()))?);
        }

        let surface = LikelihoodSurface::compute(&model, &study, resolution)?;
        let layout = surface.layout.clone();
        let jp = surface.posterior()?;
        drop(surface);
        if layout.bias_points > 0 && layout.bias_points < resolution {
            warnings.push(format!(
                "bias axes use {} points to stay within the grid cell budget",
                layout.bias_points
            ));
        }

        let max_points = if req.full_grids { usize::MAX } else { response::PLOT_POINTS };
        let mut population = BTreeMap::new();
        let mut patient = BTreeMap::new();
        let mut informativeness = BTreeMap::new();
        let patients = decision::patient_posteriors(&model, &jp)?;
        for (j, arm) in model.arms().iter().enumerate() {
            let name = theta_axis_name(&arm.name);
            let post = jp.grid.marginal(&[name.as_str()]).map_err(InferenceError::from)?;
            let prior = crate::grid::ParamGrid::new(vec![layout.axes[j].clone()], layout.masses[j].clone())
                .map_err(InferenceError::from)?;
            informativeness.insert(arm.name.clone(), inference::informativeness(&prior, &post)?);
            population.insert(arm.name.clone(), GridSummary::from_grid(&post, max_points)?);
            let pt = &patients[&arm.name];
            if let Some(w) = &pt.warning {
                warnings.push(w.clone());
            }
            let mut s = GridSummary::from_grid(&pt.grid, max_points)?;
            s.kappa_used = pt.kappa_used;
            patient.insert(arm.name.clone(), s);
        }
        let mut bias = BTreeMap::new();
        for axis in &layout.axes[layout.n_theta..] {
            let m = jp.grid.marginal(&[axis.name.as_str()]).map_err(InferenceError::from)?;
            bias.insert(axis.name.clone(), GridSummary::from_grid(&m, max_points)?);
        }

        let decision = match &req.decision {
            Some(problem) => Some(response::DecisionSummary::new(decision::recommend(problem, &patients)?)),
            None => None,
        };
        let diagnostics = self.diagnostics(&model, &study, resolution, &jp, &layout)?;
        Ok(AnalysisResponse {
            study_id: study.id.clone(),
            active_biases: active,
            population_marginals: population,
            bias_marginals: bias,
            patient_marginals: patient,
            informativeness_nats: informativeness,
            decision,
            log_evidence: jp.log_evidence,
            warnings,
            diagnostics,
        })
    }

    /// Reruns the analysis at half resolution and reports how far each
    /// posterior mean moved.
    fn diagnostics(
        &self,
        model: &PipelineModel,
        study: &StudyReport,
        resolution: usize,
        jp: &inference::JointPosterior,
        layout: &inference::GridLayout,
    ) -> Result<Diagnostics, EngineError> {
        let half = (resolution.div_ceil(2)).max(inference::MIN_RESOLUTION);
        let mut deltas = BTreeMap::new();
        if half < resolution {
            let coarse = inference::posterior(model, study, half)?;
            for axis in jp.grid.axes() {
                let a = jp.grid.mean(&axis.name).map_err(InferenceError::from)?;
                let b = coarse.grid.mean(&axis.name).map_err(InferenceError::from)?;
                deltas.insert(axis.name.clone(), (a - b).abs());
            }
        }
        Ok(Diagnostics {
            resolution,
            half_resolution: half,
            bias_axis_points: layout.bias_points,
            cells: layout.cells(),
            convergence_delta: deltas.values().copied().fold(0.0, f64::max),
            mean_shift_by_axis: deltas,
        })
    }

    pub fn meta(&self, req: &MetaRequest) -> Result<MetaResponse, EngineError> {
        if req.studies.is_empty() {
            return Err(EngineError::validation("at least one study is required").at("studies"));
        }
        let resolution = req.resolution.unwrap_or(DEFAULT_RESOLUTION);
        let mut modelled = Vec::with_capacity(req.studies.len());
        let mut warnings = Vec::new();
        for (i, s) in req.studies.iter().enumerate() {
            let m = self
                .model_study(&s.study, &s.kb_overrides, s.model.as_ref(), None)
                .map_err(|e| prefix_path(e, &format!("studies[{i}]")))?;
            warnings.extend(reconstruction_warnings(&m.study));
            modelled.push(m);
        }
        let pairs: Vec<(&PipelineModel, &StudyReport)> =
            modelled.iter().map(|m| (&m.model, &*m.study)).collect();
        let jp = inference::meta_update(&pairs, resolution)?;
        let max_points = if req.full_grids { usize::MAX } else { response::PLOT_POINTS };
        let first = &modelled[0].model;
        let prior = inference::build_joint_grid(&PipelineModel::identity(first.arms().to_vec())?, resolution)?;
        let mut population = BTreeMap::new();
        let mut informativeness = BTreeMap::new();
        for arm in first.arms() {
            let name = theta_axis_name(&arm.name);
            let post = jp.grid.marginal(&[name.as_str()]).map_err(InferenceError::from)?;
            let pr = prior.marginal(&[name.as_str()]).map_err(InferenceError::from)?;
            informativeness.insert(arm.name.clone(), inference::informativeness(&pr, &post)?);
            population.insert(arm.name.clone(), GridSummary::from_grid(&post, max_points)?);
        }
        Ok(MetaResponse {
            study_ids: modelled.iter().map(|m| m.study.id.clone()).collect(),
            active_biases: modelled.iter().map(|m| (m.study.id.clone(), m.active.clone())).collect(),
            population_marginals: population,
            informativeness_nats: informativeness,
            log_evidence: jp.log_evidence,
            resolution,
            warnings,
        })
    }

    pub fn flip(&self, req: &FlipRequest) -> Result<decision::FlipResult, EngineError> {
        let Modelled { study, model, .. } =
            self.model_study(&req.study, &req.kb_overrides, req.model.as_ref(), req.kappa)?;
        let problem = req.decision.clone().unwrap_or_else(|| DecisionProblem::default_for(&model));
        let resolution = req.resolution.unwrap_or(DEFAULT_RESOLUTION);
        Ok(decision::flip_boundary(&problem, &model, &study, &req.family, (req.lo, req.hi), resolution)?)
    }

    pub fn sweep(&self, req: &SweepRequest) -> Result<decision::SweepTable, EngineError> {
        let study = self.validate(&req.study)?;
        let first = &req.ensemble.members[0].model;
        let problem = req.decision.clone().unwrap_or_else(|| DecisionProblem::default_for(first));
        let resolution = req.resolution.unwrap_or(DEFAULT_RESOLUTION);
        Ok(decision::model_sweep(&req.ensemble, &study, &problem, resolution)?)
    }
}

fn emit<T: Serialize>(value: &T) -> Result<String, EngineError> {
    to_canonical(value, FloatStyle::Significant12).map_err(|e| EngineError::new(ErrorCode::Internal, e.to_string()))
}

fn prefix_path(mut e: EngineError, prefix: &str) -> EngineError {
    e.field_path = Some(match e.field_path.take() {
        Some(p) => format!("{prefix}.{p}"),
        None => prefix.to_string(),
    });
    for f in &mut e.errors {
        f.field_path = format!("{prefix}.{}", f.field_path);
    }
    e
}

fn reconstruction_warnings(study: &StudyReport) -> Vec<String> {
    study
        .arms
        .iter()
        .enumerate()
        .filter(|(_, a)| a.reconstructed)
        .map(|(i, a)| {
            format!(
                "arms[{i}] ({}): reported_events reconstructed from reported_rate as {}",
                a.name,
                a.events()
            )
        })
        .collect()
}

/// Which parameter of a bias an override addresses.
fn resolve_param(prior: &BiasPrior, param: Option<&str>) -> Result<String, String> {
    match param {
        Some(p) if prior.params.contains_key(p) => Ok(p.to_string()),
        Some(p) => Err(format!(
            "`{}` has no parameter `{p}` (parameters: {:?})",
            prior.bias_id,
            prior.params.keys().collect::<Vec<_>>()
        )),
        None => {
            let independent: Vec<&String> = prior
                .params
                .iter()
                .filter(|(_, v)| !matches!(v, ParamPrior::SameAs(_)))
                .map(|(k, _)| k)
                .collect();
            match independent.as_slice() {
                [only] => Ok((*only).clone()),
                _ => Err(format!(
                    "`{}` has several parameters; address one as `{}.<param>`",
                    prior.bias_id, prior.bias_id
                )),
            }
        }
    }
}

fn population_override(model: PipelineModel, arm: &str, spec: PriorSpec, key: &str) -> Result<PipelineModel, EngineError> {
    let path = format!("kb_overrides.{key}");
    let ParamPrior::Beta(shape) = spec.into_prior() else {
        return Err(EngineError::validation("population priors must be beta(a,b)").at(path));
    };
    model
        .with_population_prior(arm, shape)
        .map_err(|e| EngineError::from(e).at(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example(name: &str) -> String {
        bundled_examples()
            .into_iter()
            .find(|f| f.name == name)
            .unwrap_or_else(|| panic!("no bundled {name}"))
            .contents
            .to_string()
    }

    #[test]
    fn code_names_match_their_serialized_form() {
        use ErrorCode::*;
        for c in [ValidationError, MalformedInput, DataImpossible, NoFlip, NonMonotone, Internal] {
            assert_eq!(serde_json::to_value(c).unwrap(), c.as_str());
        }
    }

    #[test]
    fn validate_round_trips_bundled_studies() {
        let engine = Engine::default();
        for f in bundled_examples().into_iter().filter(|f| f.name.ends_with(".study.json")) {
            let once = engine.run(Operation::Validate, f.contents).unwrap();
            let twice = engine.run(Operation::Validate, &once).unwrap();
            assert_eq!(once, twice, "{}", f.name);
        }
    }

    #[test]
    fn events_above_n_are_a_validation_error_with_path() {
        let engine = Engine::default();
        let body = example("metoprolol.request.json").replacen("\"reported_events\": 84", "\"reported_events\": 900", 1);
        let err = engine.run(Operation::Analyze, &body).unwrap_err();
        assert_eq!(err.code, ErrorCode::ValidationError);
        assert_eq!(err.field_path.as_deref(), Some("arms[0].reported_events"));
        assert_eq!(err.code.http_status(), 400);
        assert_eq!(err.code.exit_code(), 2);
    }

    #[test]
    fn malformed_and_schema_errors_are_distinguished() {
        let engine = Engine::default();
        let err = engine.run(Operation::Validate, "{not json").unwrap_err();
        assert_eq!(err.code, ErrorCode::MalformedInput);
        assert_eq!(err.code.exit_code(), 65);
        let body = example("coin.study.json").replace("\"single\"", "\"triple\"");
        let err = engine.run(Operation::Validate, &body).unwrap_err();
        assert_eq!(err.code, ErrorCode::ValidationError);
        assert_eq!(err.field_path.as_deref(), Some("blinding"));
    }

    #[test]
    fn analysis_output_is_deterministic() {
        let engine = Engine::default();
        let mut req: AnalysisRequest = parse_document(&example("metoprolol.request.json")).unwrap();
        req.resolution = Some(61);
        let body = serde_json::to_string(&req).unwrap();
        let a = engine.run(Operation::Analyze, &body).unwrap();
        let b = engine.run(Operation::Analyze, &body).unwrap();
        assert_eq!(a, b);
        let v: serde_json::Value = serde_json::from_str(&a).unwrap();
        assert_eq!(v["decision"]["recommended"], "treat");
        assert!(v["population_marginals"]["placebo"]["points"].as_array().unwrap().len() <= 101);
    }

    #[test]
    fn overrides_must_reference_active_biases() {
        let engine = Engine::default();
        let mut req = AnalysisRequest::for_study(parse_document(&example("metoprolol.study.json")).unwrap());
        req.resolution = Some(41);
        req.kb_overrides.insert("referral_bias".into(), PriorSpec::Point(0.1));
        let err = engine.analyze(&req).unwrap_err();
        assert_eq!(err.field_path.as_deref(), Some("kb_overrides.referral_bias"));

        req.kb_overrides.clear();
        req.kb_overrides.insert("withdrawal_bias".into(), PriorSpec::Point(0.2));
        req.kb_overrides.insert("theta_pop.placebo".into(), PriorSpec::Prior(ParamPrior::Beta(crate::model::BetaShape::new(2.0, 8.0).unwrap())));
        let res = engine.analyze(&req).unwrap();
        let w = res.active_biases.iter().find(|b| b.id == "withdrawal_bias").unwrap();
        assert_eq!(w.priors["phi"], ParamPrior::Point(0.2));
        assert_eq!(w.overridden, ["phi"]);
        assert!(res.bias_marginals.is_empty());
    }

    #[test]
    fn zero_credibility_washes_out_the_report() {
        let engine = Engine::default();
        let mut req = AnalysisRequest::for_study(parse_document(&example("metoprolol.study.json")).unwrap());
        req.resolution = Some(41);
        req.kb_overrides.insert("reporting_credibility".into(), PriorSpec::Point(0.0));
        let res = engine.analyze(&req).unwrap();
        for v in res.informativeness_nats.values() {
            assert!(*v <= 1e-9);
        }
    }

    #[test]
    fn meta_flip_and_sweep_run_on_bundles() {
        let engine = Engine::default();
        let a: StudyReport = parse_document(&example("trial_a.study.json")).unwrap();
        let b: StudyReport = parse_document(&example("trial_b.study.json")).unwrap();
        let req = MetaRequest {
            studies: vec![a, b]
                .into_iter()
                .map(|study| StudyInput {
                    study,
                    kb_overrides: BTreeMap::new(),
                    model: None,
                })
                .collect(),
            resolution: Some(41),
            full_grids: false,
        };
        let res = engine.meta(&req).unwrap();
        assert_eq!(res.study_ids, ["trial_a", "trial_b"]);

        let flip: FlipRequest = parse_document(&example("metoprolol.flip.json")).unwrap();
        let r = engine.flip(&flip).unwrap();
        assert!(r.boundary > flip.lo && r.boundary < flip.hi);

        let mut sweep: SweepRequest = parse_document(&example("metoprolol.sweep.json")).unwrap();
        sweep.resolution = Some(41);
        let t = engine.sweep(&sweep).unwrap();
        assert_eq!(t.rows.len(), 3);
    }

    #[test]
    fn no_flip_maps_to_exit_four() {
        let engine = Engine::default();
        let mut flip: FlipRequest = parse_document(&example("metoprolol.flip.json")).unwrap();
        flip.lo = 0.3;
        flip.hi = 0.4;
        let err = engine.flip(&flip).unwrap_err();
        assert_eq!(err.code, ErrorCode::NoFlip);
        assert_eq!(err.code.exit_code(), 4);
        assert!(err.message.contains("no flip in interval"));
    }
}
