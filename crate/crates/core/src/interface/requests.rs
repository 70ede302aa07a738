use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::decision::{DecisionProblem, ModelEnsemble, PriorFamily};
use crate::model::{BetaShape, ParamPrior, PipelineModel, StudyReport};

pub const DEFAULT_RESOLUTION: usize = 201;

/// A replacement prior: a bare number is a point value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PriorSpec {
    Point(f64),
    Prior(ParamPrior),
}

impl PriorSpec {
    pub fn into_prior(self) -> ParamPrior {
        match self {
            PriorSpec::Point(v) => ParamPrior::Point(v),
            PriorSpec::Prior(p) => p,
        }
    }
}

/// One study with how to model it: either an explicit pipeline, or the
/// knowledge base's defaults with optional overrides.
///
/// Override keys are `<bias_id>` (for a bias with one independent
/// parameter), `<bias_id>.<param>`, or `theta_pop.<arm>` (a Beta
/// population prior).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyInput {
    pub study: StudyReport,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub kb_overrides: BTreeMap<String, PriorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PipelineModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisRequest {
    pub study: StudyReport,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub kb_overrides: BTreeMap<String, PriorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PipelineModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<DecisionProblem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<usize>,
    /// Return grids at full resolution instead of at most 101 cells.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub full_grids: bool,
}

impl AnalysisRequest {
    pub fn for_study(study: StudyReport) -> Self {
        Self {
            study,
            kb_overrides: BTreeMap::new(),
            model: None,
            kappa: None,
            decision: None,
            resolution: None,
            full_grids: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaRequest {
    pub studies: Vec<StudyInput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<usize>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub full_grids: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlipRequest {
    pub study: StudyReport,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub kb_overrides: BTreeMap<String, PriorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PipelineModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<DecisionProblem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<usize>,
    pub family: PriorFamily,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRequest {
    pub study: StudyReport,
    pub ensemble: ModelEnsemble,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<DecisionProblem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<usize>,
}

/// Parses a `--set` argument: `key=value` where value is a number,
/// `beta(a,b)`, `normal(mean,sd)` or `point(x)`.
pub fn parse_set(arg: &str) -> Result<(String, PriorSpec), String> {
    let (key, value) = arg
        .split_once('=')
        .ok_or_else(|| format!("`{arg}`: expected key=value"))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(format!("`{arg}`: empty key"));
    }
    let value = value.trim();
    let number = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| format!("`{arg}`: `{}` is not a number", s.trim()))
    };
    if let Ok(v) = value.parse::<f64>() {
        return Ok((key.to_string(), PriorSpec::Point(v)));
    }
    let (name, rest) = value
        .split_once('(')
        .ok_or_else(|| format!("`{arg}`: expected a number, beta(a,b), normal(m,s) or point(x)"))?;
    let inner = rest
        .strip_suffix(')')
        .ok_or_else(|| format!("`{arg}`: missing closing parenthesis"))?;
    let args: Vec<&str> = inner.split(',').collect();
    let prior = match (name.trim(), args.as_slice()) {
        ("beta", [a, b]) => {
            ParamPrior::Beta(BetaShape::new(number(a)?, number(b)?).map_err(|e| format!("`{arg}`: {e}"))?)
        }
        ("normal", [m, s]) => ParamPrior::Normal {
            mean: number(m)?,
            sd: number(s)?,
        },
        ("point", [x]) => ParamPrior::Point(number(x)?),
        _ => return Err(format!("`{arg}`: expected beta(a,b), normal(m,s) or point(x)")),
    };
    Ok((key.to_string(), PriorSpec::Prior(prior)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_syntax() {
        assert_eq!(parse_set("reporting_credibility=0.8").unwrap(), ("reporting_credibility".into(), PriorSpec::Point(0.8)));
        assert_eq!(
            parse_set("withdrawal_bias.phi=beta(2, 8)").unwrap().1.into_prior(),
            ParamPrior::Beta(BetaShape::new(2.0, 8.0).unwrap())
        );
        assert_eq!(
            parse_set("x=normal(0,0.3)").unwrap().1.into_prior(),
            ParamPrior::Normal { mean: 0.0, sd: 0.3 }
        );
        assert!(parse_set("novalue").is_err());
        assert!(parse_set("x=beta(1)").is_err());
        assert!(parse_set("x=beta(0,1)").is_err());
        assert!(parse_set("x=gamma(1,2)").is_err());
    }

    #[test]
    fn override_values_accept_numbers_and_priors() {
        let m: BTreeMap<String, PriorSpec> =
            serde_json::from_str(r#"{"a": 0.5, "b": {"beta": {"alpha": 2, "beta": 3}}}"#).unwrap();
        assert_eq!(m["a"], PriorSpec::Point(0.5));
        assert!(matches!(m["b"], PriorSpec::Prior(ParamPrior::Beta(_))));
    }
}
