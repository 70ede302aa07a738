use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::transform::{logodds_shift, misclassification, swap_mix_rate, withdrawal_mix};
use super::{is_identifier, BetaShape, ModelError, ParamDomain, ParamPrior, Probability, Role, TransformKind};

/// Where a bias acts along the chain population -> sample -> effective
/// sample -> observed -> reported. Declaration order is pipeline order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Selection,
    Protocol,
    Implementation,
    Measurement,
    Reporting,
}

impl Stage {
    pub fn allows(self, kind: TransformKind) -> bool {
        use TransformKind::*;
        match self {
            Stage::Selection => kind == LogoddsShift,
            Stage::Protocol => matches!(kind, LogoddsShift | SwapMix),
            Stage::Implementation => matches!(kind, WithdrawalMix | SwapMix | LogoddsShift),
            Stage::Measurement => kind == Misclassification,
            Stage::Reporting => kind == CredibilityMixture,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Selection => "selection",
            Stage::Protocol => "protocol",
            Stage::Implementation => "implementation",
            Stage::Measurement => "measurement",
            Stage::Reporting => "reporting",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetArm {
    All,
    /// Every arm with role `treated`.
    Treated,
    Arm(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmPrior {
    pub name: String,
    pub role: Role,
    pub prior: BetaShape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageTransform {
    /// Parameter names are qualified as `<id>.<param>`.
    pub id: String,
    pub stage: Stage,
    pub kind: TransformKind,
    pub target: TargetArm,
    /// Keyed by the kind's short parameter names.
    pub priors: BTreeMap<String, ParamPrior>,
}

impl StageTransform {
    pub fn param_name(&self, short: &str) -> String {
        format!("{}.{}", self.id, short)
    }
}

/// One parameter of a pipeline, in pipeline order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSlot {
    pub name: String,
    pub domain: ParamDomain,
    pub prior: ParamPrior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPipeline", into = "RawPipeline")]
pub struct PipelineModel {
    arms: Vec<ArmPrior>,
    stage_transforms: Vec<StageTransform>,
    patient_relevance_kappa: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPipeline {
    population_priors: Vec<ArmPrior>,
    #[serde(default)]
    stage_transforms: Vec<StageTransform>,
    #[serde(default = "binomial")]
    probabilistic_model: String,
    /// Absent means infinity: the patient shares the population parameter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    patient_relevance_kappa: Option<f64>,
}

fn binomial() -> String {
    "binomial".to_string()
}

impl TryFrom<RawPipeline> for PipelineModel {
    type Error = ModelError;
    fn try_from(raw: RawPipeline) -> Result<Self, ModelError> {
        if raw.probabilistic_model != "binomial" {
            return Err(ModelError::InvalidPipeline(format!(
                "unsupported probabilistic model `{}`",
                raw.probabilistic_model
            )));
        }
        PipelineModel::new(raw.population_priors, raw.stage_transforms, raw.patient_relevance_kappa)
    }
}

impl From<PipelineModel> for RawPipeline {
    fn from(m: PipelineModel) -> Self {
        RawPipeline {
            population_priors: m.arms,
            stage_transforms: m.stage_transforms,
            probabilistic_model: binomial(),
            patient_relevance_kappa: m.patient_relevance_kappa,
        }
    }
}

fn invalid(msg: impl Into<String>) -> ModelError {
    ModelError::InvalidPipeline(msg.into())
}

impl PipelineModel {
    pub fn new(
        arms: Vec<ArmPrior>,
        stage_transforms: Vec<StageTransform>,
        patient_relevance_kappa: Option<f64>,
    ) -> Result<Self, ModelError> {
        let model = Self {
            arms,
            stage_transforms,
            patient_relevance_kappa,
        };
        model.check()?;
        Ok(model)
    }

    /// A pipeline without bias transforms.
    pub fn identity(arms: Vec<ArmPrior>) -> Result<Self, ModelError> {
        Self::new(arms, Vec::new(), None)
    }

    pub fn arms(&self) -> &[ArmPrior] {
        &self.arms
    }

    pub fn stage_transforms(&self) -> &[StageTransform] {
        &self.stage_transforms
    }

    pub fn patient_relevance_kappa(&self) -> Option<f64> {
        self.patient_relevance_kappa
    }

    pub fn with_kappa(mut self, kappa: Option<f64>) -> Result<Self, ModelError> {
        self.patient_relevance_kappa = kappa;
        self.check()?;
        Ok(self)
    }

    /// Replaces one arm's population prior.
    pub fn with_population_prior(mut self, arm: &str, prior: BetaShape) -> Result<Self, ModelError> {
        let slot = self
            .arms
            .iter_mut()
            .find(|a| a.name == arm)
            .ok_or_else(|| invalid(format!("unknown arm `{arm}`")))?;
        slot.prior = prior;
        Ok(self)
    }

    pub fn arm_index(&self, name: &str) -> Option<usize> {
        self.arms.iter().position(|a| a.name == name)
    }

    pub fn baseline_index(&self) -> usize {
        self.arms
            .iter()
            .position(|a| a.role == Role::Baseline)
            .expect("validated pipeline has a baseline arm")
    }

    /// Every parameter, in pipeline order then signature order.
    pub fn parameters(&self) -> Vec<ParamSlot> {
        self.stage_transforms
            .iter()
            .flat_map(|t| {
                t.kind.signature().iter().map(move |short| ParamSlot {
                    name: t.param_name(short),
                    domain: t.kind.domain(short),
                    prior: t.priors[*short].clone(),
                })
            })
            .collect()
    }

    /// Parameters that carry their own value (not tied to another).
    pub fn independent_parameters(&self) -> Vec<ParamSlot> {
        self.parameters()
            .into_iter()
            .filter(|p| !matches!(p.prior, ParamPrior::SameAs(_)))
            .collect()
    }

    pub fn free_parameters(&self) -> Vec<ParamSlot> {
        self.parameters().into_iter().filter(|p| p.prior.is_free()).collect()
    }

    /// Point values of every point-valued parameter.
    pub fn point_values(&self) -> BTreeMap<String, f64> {
        self.parameters()
            .into_iter()
            .filter_map(|p| match p.prior {
                ParamPrior::Point(v) => Some((p.name, v)),
                _ => None,
            })
            .collect()
    }

    fn target_arms(&self, target: &TargetArm) -> Result<Vec<usize>, ModelError> {
        match target {
            TargetArm::All => Ok((0..self.arms.len()).collect()),
            TargetArm::Treated => Ok(self
                .arms
                .iter()
                .enumerate()
                .filter(|(_, a)| a.role == Role::Treated)
                .map(|(i, _)| i)
                .collect()),
            TargetArm::Arm(name) => self
                .arm_index(name)
                .map(|i| vec![i])
                .ok_or_else(|| invalid(format!("target arm `{name}` does not exist"))),
        }
    }

    /// Arms a withdrawal mixture changes: targeted arms other than baseline.
    fn withdrawal_arms(&self, target: &TargetArm) -> Result<Vec<usize>, ModelError> {
        let b = self.baseline_index();
        Ok(self.target_arms(target)?.into_iter().filter(|&i| i != b).collect())
    }

    /// `(arm, partner, flipped)` triples for a swap; `flipped` arms use
    /// `(phi_2, phi_1)` as their own/partner fractions.
    fn swap_pairs(&self, target: &TargetArm) -> Result<Vec<(usize, usize, bool)>, ModelError> {
        let b = self.baseline_index();
        let treated: Vec<usize> = (0..self.arms.len()).filter(|&i| i != b).collect();
        match target {
            TargetArm::All => {
                if self.arms.len() != 2 {
                    return Err(invalid("swap_mix on all arms requires exactly two arms"));
                }
                Ok(vec![(0, 1, false), (1, 0, true)])
            }
            TargetArm::Treated => Ok(treated.iter().map(|&t| (t, b, false)).collect()),
            TargetArm::Arm(_) => {
                let arm = self.target_arms(target)?[0];
                if arm == b {
                    if treated.len() != 1 {
                        return Err(invalid("swap_mix on the baseline arm requires exactly one treated arm"));
                    }
                    Ok(vec![(b, treated[0], false)])
                } else {
                    Ok(vec![(arm, b, false)])
                }
            }
        }
    }

    fn check(&self) -> Result<(), ModelError> {
        if self.arms.is_empty() {
            return Err(invalid("at least one arm is required"));
        }
        let mut names = BTreeSet::new();
        for arm in &self.arms {
            if !is_identifier(&arm.name) || !names.insert(arm.name.as_str()) {
                return Err(invalid(format!("arm names must be unique identifiers (`{}`)", arm.name)));
            }
        }
        if self.arms.iter().filter(|a| a.role == Role::Baseline).count() != 1 {
            return Err(invalid("exactly one arm must have role=baseline"));
        }
        if let Some(k) = self.patient_relevance_kappa {
            if !(k > 0.0) {
                return Err(invalid(format!("patient_relevance_kappa must be > 0 (got {k})")));
            }
        }

        let mut ids = BTreeSet::new();
        let mut prev_stage = Stage::Selection;
        for t in &self.stage_transforms {
            if !is_identifier(&t.id) || !ids.insert(t.id.as_str()) {
                return Err(invalid(format!("transform ids must be unique identifiers (`{}`)", t.id)));
            }
            if t.stage < prev_stage {
                return Err(invalid(format!(
                    "transform `{}` at stage {} follows stage {}; stages must run selection, protocol, implementation, measurement, reporting",
                    t.id,
                    t.stage.as_str(),
                    prev_stage.as_str()
                )));
            }
            prev_stage = t.stage;
            if !t.stage.allows(t.kind) {
                return Err(invalid(format!(
                    "transform `{}`: {} is not valid at stage {}",
                    t.id,
                    t.kind.as_str(),
                    t.stage.as_str()
                )));
            }
            let sig = t.kind.signature();
            for key in t.priors.keys() {
                if !sig.contains(&key.as_str()) {
                    return Err(ModelError::UnexpectedParameter(t.param_name(key)));
                }
            }
            for short in sig {
                if !t.priors.contains_key(*short) {
                    return Err(ModelError::MissingParameter(t.param_name(short)));
                }
            }
            self.target_arms(&t.target)?;
        }

        let params = self.parameters();
        let by_name: BTreeMap<&str, &ParamSlot> = params.iter().map(|p| (p.name.as_str(), p)).collect();
        for p in &params {
            check_prior(p, &by_name)?;
        }

        // Structural slots: one transform of each structural kind per arm.
        let mut occupied: BTreeSet<(TransformKind, usize)> = BTreeSet::new();
        for t in &self.stage_transforms {
            let arms = match t.kind {
                TransformKind::LogoddsShift => continue,
                TransformKind::WithdrawalMix => {
                    let arms = self.withdrawal_arms(&t.target)?;
                    if arms.is_empty() {
                        return Err(invalid(format!("withdrawal `{}` targets no treated arm", t.id)));
                    }
                    arms
                }
                TransformKind::SwapMix => {
                    let pairs = self.swap_pairs(&t.target)?;
                    for &(_, _, flipped) in &pairs {
                        let (own, partner) = if flipped { ("phi_2", "phi_1") } else { ("phi_1", "phi_2") };
                        check_swap_support(t, own, partner, &by_name)?;
                    }
                    pairs.into_iter().map(|(a, _, _)| a).collect()
                }
                _ => self.target_arms(&t.target)?,
            };
            for a in arms {
                if !occupied.insert((t.kind, a)) {
                    return Err(invalid(format!(
                        "conflicting {} transforms on arm `{}`",
                        t.kind.as_str(),
                        self.arms[a].name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Compiles the pipeline against a parameter resolver.
    pub fn compile(
        &self,
        mut resolve: impl FnMut(&ParamSlot) -> Result<ValueSource, ModelError>,
    ) -> Result<CompiledPipeline, ModelError> {
        let params = self.parameters();
        let mut sources: BTreeMap<String, ValueSource> = BTreeMap::new();
        for p in params.iter().filter(|p| !matches!(p.prior, ParamPrior::SameAs(_))) {
            sources.insert(p.name.clone(), resolve(p)?);
        }
        for p in &params {
            if let ParamPrior::SameAs(target) = &p.prior {
                sources.insert(p.name.clone(), sources[target]);
            }
        }
        let src = |t: &StageTransform, short: &str| sources[&t.param_name(short)];

        let baseline = self.baseline_index();
        let mut ops = Vec::with_capacity(self.stage_transforms.len());
        for t in &self.stage_transforms {
            let op = match t.kind {
                TransformKind::WithdrawalMix => Op::Withdrawal {
                    phi: src(t, "phi"),
                    arms: self.withdrawal_arms(&t.target)?,
                    baseline,
                },
                TransformKind::SwapMix => Op::Swap {
                    phi_1: src(t, "phi_1"),
                    phi_2: src(t, "phi_2"),
                    pairs: self.swap_pairs(&t.target)?,
                },
                TransformKind::LogoddsShift => Op::Shift {
                    delta: src(t, "delta"),
                    arms: self.target_arms(&t.target)?,
                },
                TransformKind::Misclassification => Op::Misclassify {
                    sens: src(t, "sens"),
                    spec: src(t, "spec"),
                    arms: self.target_arms(&t.target)?,
                },
                TransformKind::CredibilityMixture => Op::Credibility {
                    c: src(t, "c"),
                    arms: self.target_arms(&t.target)?,
                },
            };
            ops.push(op);
        }
        Ok(CompiledPipeline {
            n_arms: self.arms.len(),
            ops,
        })
    }
}

fn prior_range(p: &ParamSlot, by_name: &BTreeMap<&str, &ParamSlot>) -> (f64, f64) {
    match &p.prior {
        ParamPrior::Point(v) => (*v, *v),
        ParamPrior::SameAs(t) => prior_range(by_name[t.as_str()], by_name),
        _ => p.domain.bounds(),
    }
}

fn root_of(p: &ParamSlot) -> &str {
    match &p.prior {
        ParamPrior::SameAs(t) => t.as_str(),
        _ => p.name.as_str(),
    }
}

fn check_swap_support(
    t: &StageTransform,
    own: &str,
    partner: &str,
    by_name: &BTreeMap<&str, &ParamSlot>,
) -> Result<(), ModelError> {
    let own = by_name[t.param_name(own).as_str()];
    let partner = by_name[t.param_name(partner).as_str()];
    if root_of(own) == root_of(partner) {
        return Ok(());
    }
    let (own_lo, _) = prior_range(own, by_name);
    let (_, partner_hi) = prior_range(partner, by_name);
    let worst = (1.0 - own_lo) + partner_hi;
    if worst > 1.0 + 1e-12 {
        return Err(ModelError::IncoherentSwap(worst));
    }
    Ok(())
}

fn check_prior(p: &ParamSlot, by_name: &BTreeMap<&str, &ParamSlot>) -> Result<(), ModelError> {
    match (&p.prior, p.domain) {
        (ParamPrior::Point(v), d) => d.check(&p.name, *v),
        (ParamPrior::Beta(_), ParamDomain::Probability) => Ok(()),
        (ParamPrior::Normal { mean, sd }, ParamDomain::LogOdds) => {
            if mean.is_finite() && *sd > 0.0 && sd.is_finite() {
                ParamDomain::LogOdds.check(&p.name, *mean)
            } else {
                Err(ModelError::InvalidNormal { mean: *mean, sd: *sd })
            }
        }
        (ParamPrior::SameAs(target), d) => match by_name.get(target.as_str()) {
            None => Err(invalid(format!("`{}` is tied to unknown parameter `{target}`", p.name))),
            Some(t) if matches!(t.prior, ParamPrior::SameAs(_)) => {
                Err(invalid(format!("`{}` is tied to `{target}`, which is itself tied", p.name)))
            }
            Some(t) if t.domain != d => Err(invalid(format!(
                "`{}` is tied to `{target}` of a different domain",
                p.name
            ))),
            Some(_) => Ok(()),
        },
        (ParamPrior::Beta(_), ParamDomain::LogOdds) => Err(invalid(format!(
            "`{}` is a log-odds parameter; use a normal or point prior",
            p.name
        ))),
        (ParamPrior::Normal { .. }, ParamDomain::Probability) => Err(invalid(format!(
            "`{}` is a probability; use a beta or point prior",
            p.name
        ))),
    }
}

/// Where a compiled step reads a parameter value from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ValueSource {
    Const(f64),
    /// Index into the caller-supplied value slice.
    Slot(usize),
}

impl ValueSource {
    #[inline]
    fn get(self, values: &[f64]) -> f64 {
        match self {
            ValueSource::Const(v) => v,
            ValueSource::Slot(i) => values[i],
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Withdrawal {
        phi: ValueSource,
        arms: Vec<usize>,
        baseline: usize,
    },
    Swap {
        phi_1: ValueSource,
        phi_2: ValueSource,
        pairs: Vec<(usize, usize, bool)>,
    },
    Shift {
        delta: ValueSource,
        arms: Vec<usize>,
    },
    Misclassify {
        sens: ValueSource,
        spec: ValueSource,
        arms: Vec<usize>,
    },
    Credibility {
        c: ValueSource,
        arms: Vec<usize>,
    },
}

/// A pipeline with parameter lookups resolved, for tight evaluation loops.
#[derive(Debug, Clone)]
pub struct CompiledPipeline {
    n_arms: usize,
    ops: Vec<Op>,
}

impl CompiledPipeline {
    pub fn n_arms(&self) -> usize {
        self.n_arms
    }

    /// Maps per-arm population parameters to per-arm observation
    /// probabilities `p_obs` and credibilities `cred`. `scratch` must hold
    /// at least `n_arms` values.
    #[inline]
    pub fn eval(&self, theta: &[f64], values: &[f64], p_obs: &mut [f64], cred: &mut [f64], scratch: &mut [f64]) {
        let n = self.n_arms;
        p_obs[..n].copy_from_slice(&theta[..n]);
        cred[..n].fill(1.0);
        for op in &self.ops {
            match op {
                Op::Withdrawal { phi, arms, baseline } => {
                    let phi = phi.get(values);
                    let b = p_obs[*baseline];
                    for &a in arms {
                        p_obs[a] = withdrawal_mix(p_obs[a], b, phi);
                    }
                }
                Op::Swap { phi_1, phi_2, pairs } => {
                    let (f1, f2) = (phi_1.get(values), phi_2.get(values));
                    scratch[..n].copy_from_slice(&p_obs[..n]);
                    for &(a, partner, flipped) in pairs {
                        let (own, other) = if flipped { (f2, f1) } else { (f1, f2) };
                        p_obs[a] = swap_mix_rate(scratch[a], scratch[partner], own, other).clamp(0.0, 1.0);
                    }
                }
                Op::Shift { delta, arms } => {
                    let d = delta.get(values);
                    for &a in arms {
                        p_obs[a] = logodds_shift(p_obs[a], d);
                    }
                }
                Op::Misclassify { sens, spec, arms } => {
                    let (se, sp) = (sens.get(values), spec.get(values));
                    for &a in arms {
                        p_obs[a] = misclassification(p_obs[a], se, sp);
                    }
                }
                Op::Credibility { c, arms } => {
                    let c = c.get(values);
                    for &a in arms {
                        cred[a] = c;
                    }
                }
            }
        }
    }
}

/// Applies the model's transforms, in pipeline order, to per-arm population
/// parameters. `bias_values` must name every independent parameter.
pub fn compose_pipeline(
    theta_pop: &BTreeMap<String, Probability>,
    model: &PipelineModel,
    bias_values: &BTreeMap<String, f64>,
) -> Result<BTreeMap<String, Probability>, ModelError> {
    for name in theta_pop.keys() {
        if model.arm_index(name).is_none() {
            return Err(ModelError::UnexpectedParameter(name.clone()));
        }
    }
    let theta: Vec<f64> = model
        .arms
        .iter()
        .map(|a| {
            theta_pop
                .get(&a.name)
                .map(|p| p.value())
                .ok_or_else(|| ModelError::MissingParameter(a.name.clone()))
        })
        .collect::<Result<_, _>>()?;

    let independent = model.independent_parameters();
    let known: BTreeSet<&str> = independent.iter().map(|p| p.name.as_str()).collect();
    if let Some(extra) = bias_values.keys().find(|k| !known.contains(k.as_str())) {
        return Err(ModelError::UnexpectedParameter(extra.clone()));
    }
    let mut values = Vec::with_capacity(independent.len());
    for p in &independent {
        let v = *bias_values
            .get(&p.name)
            .ok_or_else(|| ModelError::MissingParameter(p.name.clone()))?;
        p.domain.check(&p.name, v)?;
        values.push(v);
    }
    let index: BTreeMap<&str, usize> = independent
        .iter()
        .enumerate()
        .map(|(i, p)| (p.name.as_str(), i))
        .collect();
    let compiled = model.compile(|p| Ok(ValueSource::Slot(index[p.name.as_str()])))?;

    let n = theta.len();
    let (mut p_obs, mut cred, mut scratch) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    compiled.eval(&theta, &values, &mut p_obs, &mut cred, &mut scratch);
    model
        .arms
        .iter()
        .zip(p_obs)
        .map(|(a, p)| Ok((a.name.clone(), Probability::new(p)?)))
        .collect()
}
