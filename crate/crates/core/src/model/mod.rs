//! Domain types for studies, parameters and the deterministic bias-transform
//! pipeline that maps population event probabilities to the probability that
//! governs the reported data.

mod likelihood;
mod pipeline;
mod study;
mod transform;

pub use likelihood::{binomial_log_pmf, likelihood, log_likelihood, ArmData};
pub use pipeline::{
    compose_pipeline, ArmPrior, CompiledPipeline, ParamSlot, PipelineModel, Stage, StageTransform,
    TargetArm, ValueSource,
};
pub use study::{
    validate_study, Ascertainment, BaselineBalance, Blinding, Design, FieldError, Role, StudyArm,
    StudyReport, ValidatedStudy,
};
pub use transform::{
    apply_logodds_shift, apply_misclassification, apply_swap_mix, apply_withdrawal_mix,
    swap_mix_rate, BiasTransform, ParamDomain, TransformKind, DELTA_BOUND,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{name} = {value} is outside [{lo}, {hi}]")]
    OutOfRange {
        name: String,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("beta shape requires alpha > 0 and beta > 0 (got alpha={alpha}, beta={beta})")]
    InvalidBeta { alpha: f64, beta: f64 },
    #[error("normal prior requires a finite mean and sd > 0 (got mean={mean}, sd={sd})")]
    InvalidNormal { mean: f64, sd: f64 },
    #[error("logit undefined at theta = {0}")]
    LogitUndefined(f64),
    #[error("incoherent swap model: (1 - phi_1) + phi_2 = {0} exceeds 1")]
    IncoherentSwap(f64),
    #[error("missing parameter `{0}`")]
    MissingParameter(String),
    #[error("unexpected parameter `{0}`")]
    UnexpectedParameter(String),
    #[error("invalid pipeline: {0}")]
    InvalidPipeline(String),
}

/// An event probability in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Probability(f64);

impl Probability {
    pub fn new(value: f64) -> Result<Self, ModelError> {
        if (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(ModelError::OutOfRange {
                name: "probability".into(),
                value,
                lo: 0.0,
                hi: 1.0,
            })
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Probability {
    type Error = ModelError;
    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Probability::new(value)
    }
}

impl From<Probability> for f64 {
    fn from(p: Probability) -> f64 {
        p.0
    }
}

/// Beta distribution shape on the unit interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBeta")]
pub struct BetaShape {
    alpha: f64,
    beta: f64,
}

#[derive(Deserialize)]
struct RawBeta {
    alpha: f64,
    beta: f64,
}

impl TryFrom<RawBeta> for BetaShape {
    type Error = ModelError;
    fn try_from(raw: RawBeta) -> Result<Self, Self::Error> {
        BetaShape::new(raw.alpha, raw.beta)
    }
}

impl BetaShape {
    pub const UNIFORM: BetaShape = BetaShape {
        alpha: 1.0,
        beta: 1.0,
    };

    pub fn new(alpha: f64, beta: f64) -> Result<Self, ModelError> {
        if alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite() {
            Ok(Self { alpha, beta })
        } else {
            Err(ModelError::InvalidBeta { alpha, beta })
        }
    }

    /// Beta with the given mean and effective sample size `alpha + beta`.
    pub fn from_mean_ess(mean: f64, ess: f64) -> Result<Self, ModelError> {
        Self::new(mean * ess, (1.0 - mean) * ess)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    pub fn variance(&self) -> f64 {
        let s = self.alpha + self.beta;
        self.alpha * self.beta / (s * s * (s + 1.0))
    }

    pub fn ess(&self) -> f64 {
        self.alpha + self.beta
    }

    pub fn cdf(&self, x: f64) -> f64 {
        crate::numeric::beta_cdf(self.alpha, self.beta, x)
    }

    /// Same mean, effective sample size divided by `factor`.
    pub fn widened(&self, factor: f64) -> Result<Self, ModelError> {
        Self::from_mean_ess(self.mean(), self.ess() / factor)
    }
}

/// Prior belief over one bias parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamPrior {
    Beta(BetaShape),
    Point(f64),
    Normal { mean: f64, sd: f64 },
    /// The parameter takes the value of another (fully qualified) parameter.
    SameAs(String),
}

impl ParamPrior {
    pub fn is_free(&self) -> bool {
        matches!(self, ParamPrior::Beta(_) | ParamPrior::Normal { .. })
    }

    /// Widens a Beta prior by dividing its effective sample size; other
    /// shapes are returned unchanged.
    pub fn widened(&self, factor: f64) -> Result<ParamPrior, ModelError> {
        match self {
            ParamPrior::Beta(b) if factor != 1.0 => Ok(ParamPrior::Beta(b.widened(factor)?)),
            other => Ok(other.clone()),
        }
    }
}

pub(crate) fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}
