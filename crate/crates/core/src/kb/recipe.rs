use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{BiasEntry, Field, KbError};
use crate::model::{
    Ascertainment, BetaShape, Blinding, ParamDomain, ParamPrior, Role, StudyReport, TargetArm,
    TransformKind,
};

/// A named rule producing a bias's default prior from the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "recipe", rename_all = "snake_case", deny_unknown_fields)]
pub enum Recipe {
    /// `Beta(w + 1, n - w + 1)` from the withdrawal counts of the targeted
    /// treated arms, pooled.
    WithdrawalCounts,
    /// Fixed values for every parameter.
    Point { values: BTreeMap<String, f64> },
    /// `Normal(mean, sd)` over a log-odds shift, with `sd` looked up by the
    /// value of `sd_by` (falling back to `"default"`). A zero sd is a point.
    NormalShift {
        mean: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sd_by: Option<Field>,
        sd: BTreeMap<String, f64>,
    },
    /// `phi_1 ~ Beta(alpha, beta)` with `phi_2` tied to `phi_1`.
    SwapSymmetric { alpha: f64, beta: f64 },
    /// Priors per mortality ascertainment level.
    AscertainmentTable {
        table: BTreeMap<Ascertainment, BTreeMap<String, ParamPrior>>,
    },
    /// Evidence modifier: divides the effective sample size of the named
    /// entries' Beta priors by `factor` unless blinding is `unless_blinding`.
    InflationFactor {
        factor: f64,
        unless_blinding: Blinding,
        applies_to: Vec<String>,
    },
}

const ASCERTAINMENT: [Ascertainment; 3] = [
    Ascertainment::Complete,
    Ascertainment::Partial,
    Ascertainment::Unreported,
];

fn check_params(kind: TransformKind, params: &BTreeMap<String, ParamPrior>) -> Result<(), String> {
    let sig = kind.signature();
    if params.len() != sig.len() || !sig.iter().all(|s| params.contains_key(*s)) {
        return Err(format!("recipe must give exactly the parameters {sig:?}"));
    }
    for (name, prior) in params {
        let domain = kind.domain(name);
        match (prior, domain) {
            (ParamPrior::Point(v), d) => d.check(name, *v).map_err(|e| e.to_string())?,
            (ParamPrior::Beta(_), ParamDomain::Probability) => {}
            (ParamPrior::Normal { mean, sd }, ParamDomain::LogOdds) if *sd > 0.0 => {
                domain.check(name, *mean).map_err(|e| e.to_string())?
            }
            _ => return Err(format!("recipe prior for `{name}` does not fit its domain")),
        }
    }
    Ok(())
}

impl Recipe {
    pub(crate) fn check(&self, kind: Option<TransformKind>) -> Result<(), String> {
        let mismatch = || {
            let k = kind.map_or("no transform", TransformKind::as_str);
            Err(format!("recipe does not fit {k}"))
        };
        match (self, kind) {
            (Recipe::WithdrawalCounts, Some(TransformKind::WithdrawalMix)) => Ok(()),
            (Recipe::Point { values }, Some(k)) => {
                check_params(k, &values.iter().map(|(n, v)| (n.clone(), ParamPrior::Point(*v))).collect())
            }
            (Recipe::NormalShift { mean, sd_by, sd }, Some(TransformKind::LogoddsShift)) => {
                if !(mean.abs() <= crate::model::DELTA_BOUND) {
                    return Err(format!("shift mean {mean} is outside the delta bounds"));
                }
                if sd.values().any(|s| !(*s >= 0.0) || !s.is_finite()) {
                    return Err("shift sd must be finite and non-negative".into());
                }
                match sd_by {
                    None if sd.contains_key("default") => Ok(()),
                    None => Err("shift recipe without sd_by needs a `default` sd".into()),
                    Some(field) => {
                        for key in sd.keys().filter(|k| k.as_str() != "default") {
                            if !field.values().contains(&key.as_str()) {
                                return Err(format!("`{key}` is not a value of {field:?}"));
                            }
                        }
                        match field.values().iter().find(|v| !sd.contains_key(**v) && !sd.contains_key("default")) {
                            Some(v) => Err(format!("shift recipe has no sd for {field:?} = {v}")),
                            None => Ok(()),
                        }
                    }
                }
            }
            (Recipe::SwapSymmetric { alpha, beta }, Some(TransformKind::SwapMix)) => {
                BetaShape::new(*alpha, *beta).map(|_| ()).map_err(|e| e.to_string())
            }
            (Recipe::AscertainmentTable { table }, Some(k)) => {
                for level in ASCERTAINMENT {
                    let params = table.get(&level).ok_or_else(|| format!("recipe table lacks level {level:?}"))?;
                    check_params(k, params)?;
                }
                Ok(())
            }
            (Recipe::InflationFactor { factor, .. }, None) => {
                if *factor >= 1.0 && factor.is_finite() {
                    Ok(())
                } else {
                    Err(format!("inflation factor must be >= 1 (got {factor})"))
                }
            }
            _ => mismatch(),
        }
    }

    /// Effective inflation for a modifier recipe; 1 for every other recipe.
    pub(crate) fn inflation(&self, report: &StudyReport) -> f64 {
        match self {
            Recipe::InflationFactor {
                factor, unless_blinding, ..
            } if report.blinding != *unless_blinding => *factor,
            _ => 1.0,
        }
    }

    pub(crate) fn priors(
        &self,
        entry: &BiasEntry,
        report: &StudyReport,
    ) -> Result<BTreeMap<String, ParamPrior>, KbError> {
        let invalid = |message: String| KbError::InvalidEntry {
            entry: entry.id.clone(),
            message,
        };
        let one = |name: &str, p: ParamPrior| BTreeMap::from([(name.to_string(), p)]);
        Ok(match self {
            Recipe::WithdrawalCounts => {
                let (mut w, mut n) = (0u64, 0u64);
                for arm in &report.arms {
                    let targeted = match &entry.target {
                        TargetArm::All | TargetArm::Treated => arm.role == Role::Treated,
                        TargetArm::Arm(name) => &arm.name == name,
                    };
                    if targeted {
                        w += arm.withdrawn;
                        n += arm.n();
                    }
                }
                let shape = BetaShape::new(w as f64 + 1.0, (n - w) as f64 + 1.0)?;
                one("phi", ParamPrior::Beta(shape))
            }
            Recipe::Point { values } => values.iter().map(|(k, v)| (k.clone(), ParamPrior::Point(*v))).collect(),
            Recipe::NormalShift { mean, sd_by, sd } => {
                let key = sd_by.map_or("default", |f| f.read(report));
                let s = *sd
                    .get(key)
                    .or_else(|| sd.get("default"))
                    .ok_or_else(|| invalid(format!("no sd for `{key}`")))?;
                let prior = if s > 0.0 {
                    ParamPrior::Normal { mean: *mean, sd: s }
                } else {
                    ParamPrior::Point(*mean)
                };
                one("delta", prior)
            }
            Recipe::SwapSymmetric { alpha, beta } => BTreeMap::from([
                ("phi_1".to_string(), ParamPrior::Beta(BetaShape::new(*alpha, *beta)?)),
                ("phi_2".to_string(), ParamPrior::SameAs(format!("{}.phi_1", entry.id))),
            ]),
            Recipe::AscertainmentTable { table } => table
                .get(&report.mortality_ascertainment)
                .cloned()
                .ok_or_else(|| invalid("no table row for the report's ascertainment".into()))?,
            Recipe::InflationFactor { .. } => one("inflation_factor", ParamPrior::Point(self.inflation(report))),
        })
    }
}
