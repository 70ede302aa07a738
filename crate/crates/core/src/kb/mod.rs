//! The bias knowledge base: named biases, where they act, when they apply to
//! a study, and how their default priors are read off the study report.
//!
//! Applicability predicates and prior recipes are data. The shipped table
//! lives in `data/kb.json` and can be replaced wholesale at load time.

mod predicate;
mod recipe;

pub use predicate::{Field, Predicate};
pub use recipe::Recipe;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    is_identifier, ArmPrior, BetaShape, Design, ModelError, ParamPrior, PipelineModel, Stage,
    StageTransform, StudyReport, TargetArm, TransformKind,
};

const BUILTIN_JSON: &str = include_str!("../../data/kb.json");

/// Study report fields an evidence hook may name.
pub const EVIDENCE_FIELDS: &[&str] = &[
    "id",
    "design",
    "blinding",
    "arms",
    "arms[].name",
    "arms[].role",
    "arms[].assigned_n",
    "arms[].withdrawn",
    "arms[].reported_events",
    "arms[].reported_rate",
    "selection_tags",
    "baseline_balance",
    "mortality_ascertainment",
    "notes",
];

/// Entries the shipped KB must contain.
pub const REQUIRED_ENTRIES: &[&str] = &[
    "referral_bias",
    "diagnostic_purity_bias",
    "diagnostic_access_bias",
    "previous_opinion_bias",
    "diagnostic_suspicion_bias",
    "withdrawal_bias",
    "contamination_swap",
    "unblinding",
    "outcome_measurement_error",
    "reporting_credibility",
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KbError {
    #[error("knowledge base is not valid JSON: {0}")]
    Parse(String),
    #[error("entry `{entry}`: {message}")]
    InvalidEntry { entry: String, message: String },
    #[error("no prior supplied for active bias `{0}`")]
    MissingPrior(String),
    #[error("prior supplied for `{0}`, which is not an active bias")]
    UnexpectedPrior(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Selection,
    Misassignment,
    WithdrawalContamination,
    ClassificationError,
    Measurement,
    Reporting,
}

impl Category {
    fn fits(self, stage: Stage) -> bool {
        use Stage::*;
        match self {
            Category::Selection => stage == Selection,
            Category::Misassignment => matches!(stage, Protocol | Implementation),
            Category::WithdrawalContamination => matches!(stage, Protocol | Implementation),
            Category::ClassificationError => matches!(stage, Protocol | Implementation),
            Category::Measurement => stage == Measurement,
            Category::Reporting => stage == Reporting,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Sackett,
    Feinstein,
    Lehmann,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasEntry {
    pub id: String,
    pub display_name: String,
    pub category: Category,
    pub stage: Stage,
    /// `None` marks an evidence modifier that adjusts other entries' priors
    /// instead of adding a transform.
    pub transform_kind: Option<TransformKind>,
    pub target: TargetArm,
    pub applicability: Predicate,
    pub default_prior_recipe: Recipe,
    #[serde(default)]
    pub evidence_hooks: Vec<String>,
    pub source: Source,
    #[serde(default)]
    pub notes: String,
}

impl BiasEntry {
    pub fn applies_to(&self, report: &StudyReport) -> bool {
        self.applicability.holds(report)
    }

    fn check(&self) -> Result<(), String> {
        if !is_identifier(&self.id) {
            return Err("id must be an identifier".into());
        }
        if !self.category.fits(self.stage) {
            return Err(format!("category {:?} cannot act at stage {}", self.category, self.stage.as_str()));
        }
        if let Some(kind) = self.transform_kind {
            if !self.stage.allows(kind) {
                return Err(format!("{} is not valid at stage {}", kind.as_str(), self.stage.as_str()));
            }
        }
        if let Some(hook) = self.evidence_hooks.iter().find(|h| !EVIDENCE_FIELDS.contains(&h.as_str())) {
            return Err(format!("evidence hook `{hook}` is not a study report field"));
        }
        self.applicability.check()?;
        self.default_prior_recipe.check(self.transform_kind)
    }
}

/// One bias's prior: full parameter names are `<bias_id>.<param>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasPrior {
    pub bias_id: String,
    pub params: BTreeMap<String, ParamPrior>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawKb")]
pub struct BiasKB {
    pub version: String,
    pub entries: Vec<BiasEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawKb {
    version: String,
    entries: Vec<BiasEntry>,
}

impl TryFrom<RawKb> for BiasKB {
    type Error = KbError;
    fn try_from(raw: RawKb) -> Result<Self, KbError> {
        BiasKB::new(raw.version, raw.entries)
    }
}

impl BiasKB {
    pub fn new(version: String, entries: Vec<BiasEntry>) -> Result<Self, KbError> {
        let mut ids = BTreeSet::new();
        for e in &entries {
            let invalid = |message: String| KbError::InvalidEntry {
                entry: e.id.clone(),
                message,
            };
            if !ids.insert(e.id.as_str()) {
                return Err(invalid("duplicate id".into()));
            }
            e.check().map_err(invalid)?;
        }
        for e in &entries {
            if let Recipe::InflationFactor { applies_to, .. } = &e.default_prior_recipe {
                if let Some(missing) = applies_to.iter().find(|t| !ids.contains(t.as_str())) {
                    return Err(KbError::InvalidEntry {
                        entry: e.id.clone(),
                        message: format!("modifies unknown entry `{missing}`"),
                    });
                }
            }
        }
        Ok(Self { version, entries })
    }

    pub fn from_json(text: &str) -> Result<Self, KbError> {
        serde_json::from_str(text).map_err(|e| KbError::Parse(e.to_string()))
    }

    /// The shipped knowledge base document, as bundled.
    pub fn builtin_json() -> &'static str {
        BUILTIN_JSON
    }

    /// The knowledge base shipped with the crate.
    pub fn builtin() -> &'static BiasKB {
        static KB: OnceLock<BiasKB> = OnceLock::new();
        KB.get_or_init(|| BiasKB::from_json(BUILTIN_JSON).expect("shipped knowledge base is valid"))
    }

    pub fn entry(&self, id: &str) -> Option<&BiasEntry> {
        self.entries.iter().find(|e| e.id == id)
    }
}

/// Entries whose applicability predicate holds, ordered by stage then id.
pub fn prune(kb: &BiasKB, report: &StudyReport) -> Vec<BiasEntry> {
    let mut active: Vec<BiasEntry> = kb.entries.iter().filter(|e| e.applies_to(report)).cloned().collect();
    active.sort_by(|a, b| (a.stage, &a.id).cmp(&(b.stage, &b.id)));
    active
}

/// Reads each active bias's prior off the report. Active evidence modifiers
/// widen the Beta priors of the entries they name.
pub fn default_priors(active: &[BiasEntry], report: &StudyReport) -> Result<Vec<BiasPrior>, KbError> {
    let mut inflation: BTreeMap<&str, f64> = BTreeMap::new();
    for e in active {
        if let Recipe::InflationFactor { applies_to, .. } = &e.default_prior_recipe {
            let f = e.default_prior_recipe.inflation(report);
            for target in applies_to {
                *inflation.entry(target.as_str()).or_insert(1.0) *= f;
            }
        }
    }
    active
        .iter()
        .map(|e| {
            let mut params = e.default_prior_recipe.priors(e, report)?;
            if let Some(&f) = inflation.get(e.id.as_str()) {
                for p in params.values_mut() {
                    *p = p.widened(f)?;
                }
            }
            Ok(BiasPrior {
                bias_id: e.id.clone(),
                params,
            })
        })
        .collect()
}

/// Builds the pipeline for a study from its active biases and their priors.
/// Population priors start uniform on every arm.
pub fn assemble_pipeline(
    report: &StudyReport,
    active: &[BiasEntry],
    priors: &[BiasPrior],
) -> Result<PipelineModel, KbError> {
    let mut by_id: BTreeMap<&str, &BiasPrior> = BTreeMap::new();
    for p in priors {
        if !active.iter().any(|e| e.id == p.bias_id) || by_id.insert(p.bias_id.as_str(), p).is_some() {
            return Err(KbError::UnexpectedPrior(p.bias_id.clone()));
        }
    }
    let mut ordered: Vec<&BiasEntry> = active.iter().collect();
    ordered.sort_by(|a, b| (a.stage, &a.id).cmp(&(b.stage, &b.id)));

    let mut transforms = Vec::new();
    for e in ordered {
        let prior = by_id.get(e.id.as_str()).ok_or_else(|| KbError::MissingPrior(e.id.clone()))?;
        let Some(kind) = e.transform_kind else { continue };
        let mut params = prior.params.clone();
        if report.design == Design::RandomizedTrial
            && e.stage == Stage::Protocol
            && kind == TransformKind::LogoddsShift
        {
            params.insert("delta".into(), ParamPrior::Point(0.0));
        }
        transforms.push(StageTransform {
            id: e.id.clone(),
            stage: e.stage,
            kind,
            target: e.target.clone(),
            priors: params,
        });
    }
    let arms = report
        .arms
        .iter()
        .map(|a| ArmPrior {
            name: a.name.clone(),
            role: a.role,
            prior: BetaShape::UNIFORM,
        })
        .collect();
    Ok(PipelineModel::new(arms, transforms, None)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        Ascertainment, BaselineBalance, Blinding, ParamSlot, Role, StudyArm,
    };
    use proptest::prelude::*;

    pub(crate) fn metoprolol() -> StudyReport {
        StudyReport {
            id: "metoprolol".into(),
            design: Design::RandomizedTrial,
            blinding: Blinding::Double,
            arms: vec![
                StudyArm::counts("placebo", Role::Baseline, 698, 133, 62),
                StudyArm::counts("metoprolol", Role::Treated, 698, 133, 40),
            ],
            selection_tags: ["ethnic_restriction".to_string()].into(),
            baseline_balance: BaselineBalance::Similar,
            mortality_ascertainment: Ascertainment::Complete,
            notes: String::new(),
        }
    }

    fn ids(entries: &[BiasEntry]) -> Vec<&str> {
        entries.iter().map(|e| e.id.as_str()).collect()
    }

    #[test]
    fn builtin_kb_has_required_entries() {
        let kb = BiasKB::builtin();
        assert!(kb.entries.len() >= 10);
        for id in REQUIRED_ENTRIES {
            assert!(kb.entry(id).is_some(), "missing {id}");
        }
    }

    #[test]
    fn double_blind_trial_prunes_to_walkthrough_set() {
        let active = prune(BiasKB::builtin(), &metoprolol());
        assert_eq!(
            ids(&active),
            [
                "ethnic_selection_shift",
                "unblinding",
                "withdrawal_bias",
                "outcome_measurement_error",
                "reporting_credibility"
            ]
        );
        assert!(active.iter().all(|e| e.id != "allocation_confounding"));
    }

    #[test]
    fn case_control_without_blinding_has_classification_entries() {
        let mut r = metoprolol();
        r.design = Design::CaseControl;
        r.blinding = Blinding::None;
        let active = prune(BiasKB::builtin(), &r);
        let got = ids(&active);
        assert!(got.contains(&"previous_opinion_bias"));
        assert!(got.contains(&"diagnostic_suspicion_bias"));
    }

    #[test]
    fn no_tags_means_no_selection_entries() {
        let mut r = metoprolol();
        r.selection_tags.clear();
        let active = prune(BiasKB::builtin(), &r);
        assert!(active.iter().all(|e| e.category != Category::Selection));
    }

    #[test]
    fn default_prior_examples() {
        let r = metoprolol();
        let active = prune(BiasKB::builtin(), &r);
        let priors = default_priors(&active, &r).unwrap();
        let get = |id: &str| priors.iter().find(|p| p.bias_id == id).unwrap();
        assert_eq!(
            get("withdrawal_bias").params["phi"],
            ParamPrior::Beta(BetaShape::new(134.0, 566.0).unwrap())
        );
        assert_eq!(get("reporting_credibility").params["c"], ParamPrior::Point(0.99));
        let m = &get("outcome_measurement_error").params;
        assert_eq!(m["sens"], ParamPrior::Point(1.0));
        assert_eq!(m["spec"], ParamPrior::Point(1.0));
        assert_eq!(get("unblinding").params["inflation_factor"], ParamPrior::Point(1.0));
    }

    #[test]
    fn unblinding_halves_withdrawal_ess_when_not_double_blind() {
        let mut r = metoprolol();
        r.blinding = Blinding::Single;
        r.mortality_ascertainment = Ascertainment::Partial;
        let active = prune(BiasKB::builtin(), &r);
        let priors = default_priors(&active, &r).unwrap();
        let get = |id: &str| priors.iter().find(|p| p.bias_id == id).unwrap();
        let ParamPrior::Beta(b) = get("withdrawal_bias").params["phi"] else { panic!() };
        assert!((b.ess() - 350.0).abs() < 1e-9);
        assert!((b.mean() - 134.0 / 700.0).abs() < 1e-12);
        let ParamPrior::Beta(s) = get("outcome_measurement_error").params["sens"] else { panic!() };
        assert!((s.ess() - 25.0).abs() < 1e-9);
    }

    #[test]
    fn metoprolol_pipeline_shape() {
        let r = metoprolol();
        let active = prune(BiasKB::builtin(), &r);
        let priors = default_priors(&active, &r).unwrap();
        let model = assemble_pipeline(&r, &active, &priors).unwrap();
        let kinds: Vec<_> = model.stage_transforms().iter().map(|t| (t.kind, t.target.clone())).collect();
        assert_eq!(
            kinds,
            [
                (TransformKind::LogoddsShift, TargetArm::All),
                (TransformKind::WithdrawalMix, TargetArm::Treated),
                (TransformKind::Misclassification, TargetArm::All),
                (TransformKind::CredibilityMixture, TargetArm::All),
            ]
        );
        let free: Vec<String> = model.free_parameters().into_iter().map(|p: ParamSlot| p.name).collect();
        assert_eq!(free, ["withdrawal_bias.phi"]);
        assert_eq!(model.point_values()["reporting_credibility.c"], 0.99);
    }

    #[test]
    fn empty_active_list_is_identity() {
        let model = assemble_pipeline(&metoprolol(), &[], &[]).unwrap();
        assert!(model.stage_transforms().is_empty());
        assert_eq!(model.arms().len(), 2);
    }

    #[test]
    fn two_withdrawals_on_one_arm_conflict() {
        let r = metoprolol();
        let w = BiasKB::builtin().entry("withdrawal_bias").unwrap().clone();
        let mut w2 = w.clone();
        w2.id = "withdrawal_again".into();
        let active = vec![w, w2];
        let priors = default_priors(&active, &r).unwrap();
        let err = assemble_pipeline(&r, &active, &priors).unwrap_err();
        assert!(err.to_string().contains("conflicting withdrawal_mix"), "{err}");
    }

    #[test]
    fn priors_must_cover_active_biases_exactly() {
        let r = metoprolol();
        let active = prune(BiasKB::builtin(), &r);
        let mut priors = default_priors(&active, &r).unwrap();
        let last = priors.pop().unwrap();
        assert_eq!(
            assemble_pipeline(&r, &active, &priors),
            Err(KbError::MissingPrior(last.bias_id.clone()))
        );
        priors.push(last);
        priors.push(BiasPrior {
            bias_id: "referral_bias".into(),
            params: BTreeMap::new(),
        });
        assert_eq!(
            assemble_pipeline(&r, &active, &priors),
            Err(KbError::UnexpectedPrior("referral_bias".into()))
        );
    }

    #[test]
    fn randomized_trials_pin_protocol_shifts() {
        let mut entry = BiasKB::builtin().entry("allocation_confounding").unwrap().clone();
        entry.applicability = Predicate::Always;
        let r = metoprolol();
        let active = vec![entry];
        let priors = default_priors(&active, &r).unwrap();
        assert!(priors[0].params["delta"].is_free());
        let model = assemble_pipeline(&r, &active, &priors).unwrap();
        assert_eq!(model.stage_transforms()[0].priors["delta"], ParamPrior::Point(0.0));
    }

    #[test]
    fn invalid_entries_are_rejected() {
        let base = BiasKB::builtin().entry("withdrawal_bias").unwrap().clone();
        let reject = |e: BiasEntry| BiasKB::new("t".into(), vec![e]).unwrap_err();

        let mut e = base.clone();
        e.stage = Stage::Measurement;
        assert!(matches!(reject(e), KbError::InvalidEntry { .. }));

        let mut e = base.clone();
        e.evidence_hooks.push("arms[].weight".into());
        assert!(reject(e).to_string().contains("evidence hook"));

        let mut e = base.clone();
        e.applicability = Predicate::Not(Box::new(Predicate::Tag("referral".into())));
        assert!(reject(e).to_string().contains("tag"));

        let mut e = base.clone();
        e.default_prior_recipe = Recipe::SwapSymmetric { alpha: 2.0, beta: 8.0 };
        assert!(reject(e).to_string().contains("recipe"));

        let dup = BiasKB::new("t".into(), vec![base.clone(), base]).unwrap_err();
        assert!(dup.to_string().contains("duplicate"));
    }

    #[test]
    fn kb_json_round_trip() {
        let kb = BiasKB::builtin();
        let text = serde_json::to_string(kb).unwrap();
        assert_eq!(&BiasKB::from_json(&text).unwrap(), kb);
    }

    fn tag() -> impl Strategy<Value = String> {
        prop_oneof![
            Just("referral".to_string()),
            Just("diagnostic_purity".to_string()),
            Just("diagnostic_access".to_string()),
            Just("ethnic_restriction".to_string()),
            Just("assignment_uncertain".to_string()),
            "[a-z]{1,6}",
        ]
    }

    prop_compose! {
        fn any_report()(
            design in prop_oneof![Just(Design::RandomizedTrial), Just(Design::Cohort), Just(Design::CaseControl)],
            blinding in prop_oneof![Just(Blinding::Double), Just(Blinding::Single), Just(Blinding::None), Just(Blinding::Unknown)],
            balance in prop_oneof![Just(BaselineBalance::Similar), Just(BaselineBalance::Dissimilar), Just(BaselineBalance::Unreported)],
            asc in prop_oneof![Just(Ascertainment::Complete), Just(Ascertainment::Partial), Just(Ascertainment::Unreported)],
            tags in proptest::collection::btree_set(tag(), 0..4),
            n in proptest::collection::vec(0u64..3000, 2),
            frac in proptest::collection::vec((0.0..=1.0f64, 0.0..=1.0f64), 2),
        ) -> StudyReport {
            let arm = |i: usize, name: &str, role| {
                let w = (frac[i].0 * n[i] as f64) as u64;
                let x = (frac[i].1 * n[i] as f64) as u64;
                StudyArm::counts(name, role, n[i], w, x)
            };
            StudyReport {
                id: "r".into(),
                design,
                blinding,
                arms: vec![arm(0, "control", Role::Baseline), arm(1, "active", Role::Treated)],
                selection_tags: tags,
                baseline_balance: balance,
                mortality_ascertainment: asc,
                notes: String::new(),
            }
        }
    }

    proptest! {
        #[test]
        fn prune_is_monotone_in_tags(r in any_report(), extra in tag()) {
            let kb = BiasKB::builtin();
            let before = prune(kb, &r);
            let mut more = r.clone();
            more.selection_tags.insert(extra);
            let after = prune(kb, &more);
            for e in &before {
                prop_assert!(after.iter().any(|a| a.id == e.id));
            }
        }

        #[test]
        fn prune_is_deterministic(r in any_report()) {
            let kb = BiasKB::builtin();
            prop_assert_eq!(prune(kb, &r), prune(kb, &r));
        }

        #[test]
        fn every_recipe_yields_a_valid_pipeline(r in any_report()) {
            let kb = BiasKB::builtin();
            let active = prune(kb, &r);
            let priors = default_priors(&active, &r).unwrap();
            prop_assert_eq!(priors.len(), active.len());
            let model = assemble_pipeline(&r, &active, &priors).unwrap();
            if r.design == Design::RandomizedTrial {
                for t in model.stage_transforms() {
                    if t.stage == Stage::Protocol && t.kind == TransformKind::LogoddsShift {
                        prop_assert_eq!(&t.priors["delta"], &ParamPrior::Point(0.0));
                    }
                }
            }
        }

        #[test]
        fn every_entry_recipe_is_valid_alone(r in any_report()) {
            // Ignore applicability: recipes must be total over valid reports.
            let kb = BiasKB::builtin();
            for e in &kb.entries {
                let priors = default_priors(std::slice::from_ref(e), &r).unwrap();
                if e.transform_kind.is_some() && !(e.transform_kind == Some(TransformKind::SwapMix) && r.arms.len() != 2) {
                    assemble_pipeline(&r, std::slice::from_ref(e), &priors).unwrap();
                }
            }
        }
    }
}
