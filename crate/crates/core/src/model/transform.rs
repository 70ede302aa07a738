use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ModelError, Probability};
use crate::numeric::{logistic, logit};

/// Log-odds shifts are bounded to `[-DELTA_BOUND, DELTA_BOUND]`.
pub const DELTA_BOUND: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    WithdrawalMix,
    SwapMix,
    LogoddsShift,
    Misclassification,
    CredibilityMixture,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamDomain {
    Probability,
    LogOdds,
}

impl ParamDomain {
    pub fn bounds(self) -> (f64, f64) {
        match self {
            ParamDomain::Probability => (0.0, 1.0),
            ParamDomain::LogOdds => (-DELTA_BOUND, DELTA_BOUND),
        }
    }

    pub fn check(self, name: &str, value: f64) -> Result<(), ModelError> {
        let (lo, hi) = self.bounds();
        if value.is_finite() && (lo..=hi).contains(&value) {
            Ok(())
        } else {
            Err(ModelError::OutOfRange {
                name: name.to_string(),
                value,
                lo,
                hi,
            })
        }
    }
}

impl TransformKind {
    /// Parameter names in canonical order.
    pub fn signature(self) -> &'static [&'static str] {
        match self {
            TransformKind::WithdrawalMix => &["phi"],
            TransformKind::SwapMix => &["phi_1", "phi_2"],
            TransformKind::LogoddsShift => &["delta"],
            TransformKind::Misclassification => &["sens", "spec"],
            TransformKind::CredibilityMixture => &["c"],
        }
    }

    pub fn domain(self, param: &str) -> ParamDomain {
        match (self, param) {
            (TransformKind::LogoddsShift, "delta") => ParamDomain::LogOdds,
            _ => ParamDomain::Probability,
        }
    }

    /// Parameter values at which the transform leaves its input unchanged.
    pub fn identity_values(self) -> &'static [f64] {
        match self {
            TransformKind::WithdrawalMix => &[0.0],
            TransformKind::SwapMix => &[0.0, 0.0],
            TransformKind::LogoddsShift => &[0.0],
            TransformKind::Misclassification => &[1.0, 1.0],
            TransformKind::CredibilityMixture => &[1.0],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TransformKind::WithdrawalMix => "withdrawal_mix",
            TransformKind::SwapMix => "swap_mix",
            TransformKind::LogoddsShift => "logodds_shift",
            TransformKind::Misclassification => "misclassification",
            TransformKind::CredibilityMixture => "credibility_mixture",
        }
    }
}

/// A fully parameterized bias transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BiasTransform {
    WithdrawalMix { phi: Probability },
    SwapMix { phi_1: Probability, phi_2: Probability },
    LogoddsShift { delta: f64 },
    Misclassification { sens: Probability, spec: Probability },
    CredibilityMixture { c: Probability },
}

impl BiasTransform {
    /// Builds a transform from named parameters, which must match the kind's
    /// signature exactly.
    pub fn from_params(kind: TransformKind, params: &BTreeMap<String, f64>) -> Result<Self, ModelError> {
        for name in params.keys() {
            if !kind.signature().contains(&name.as_str()) {
                return Err(ModelError::UnexpectedParameter(name.clone()));
            }
        }
        let get = |name: &str| -> Result<f64, ModelError> {
            let v = *params
                .get(name)
                .ok_or_else(|| ModelError::MissingParameter(name.to_string()))?;
            kind.domain(name).check(name, v)?;
            Ok(v)
        };
        let prob = |name: &str| get(name).and_then(Probability::new);
        Ok(match kind {
            TransformKind::WithdrawalMix => BiasTransform::WithdrawalMix { phi: prob("phi")? },
            TransformKind::SwapMix => {
                let phi_1 = prob("phi_1")?;
                let phi_2 = prob("phi_2")?;
                check_swap_coherence(phi_1.value(), phi_2.value())?;
                BiasTransform::SwapMix { phi_1, phi_2 }
            }
            TransformKind::LogoddsShift => BiasTransform::LogoddsShift { delta: get("delta")? },
            TransformKind::Misclassification => BiasTransform::Misclassification {
                sens: prob("sens")?,
                spec: prob("spec")?,
            },
            TransformKind::CredibilityMixture => BiasTransform::CredibilityMixture { c: prob("c")? },
        })
    }

    pub fn identity(kind: TransformKind) -> Self {
        let params = kind
            .signature()
            .iter()
            .zip(kind.identity_values())
            .map(|(n, v)| (n.to_string(), *v))
            .collect();
        Self::from_params(kind, &params).expect("identity parameters are valid")
    }

    pub fn kind(&self) -> TransformKind {
        match self {
            BiasTransform::WithdrawalMix { .. } => TransformKind::WithdrawalMix,
            BiasTransform::SwapMix { .. } => TransformKind::SwapMix,
            BiasTransform::LogoddsShift { .. } => TransformKind::LogoddsShift,
            BiasTransform::Misclassification { .. } => TransformKind::Misclassification,
            BiasTransform::CredibilityMixture { .. } => TransformKind::CredibilityMixture,
        }
    }

    /// Applies the transform to `theta`, with `other` the partner arm's
    /// parameter for the two-arm mixtures. Credibility does not alter the
    /// event probability.
    pub fn apply(&self, theta: Probability, other: Probability) -> Result<Probability, ModelError> {
        match *self {
            BiasTransform::WithdrawalMix { phi } => Ok(apply_withdrawal_mix(theta, other, phi)),
            BiasTransform::SwapMix { phi_1, phi_2 } => apply_swap_mix(theta, other, phi_1, phi_2),
            BiasTransform::LogoddsShift { delta } => {
                if delta == 0.0 {
                    Ok(theta)
                } else {
                    apply_logodds_shift(theta, delta)
                }
            }
            BiasTransform::Misclassification { sens, spec } => Ok(apply_misclassification(theta, sens, spec)),
            BiasTransform::CredibilityMixture { .. } => Ok(theta),
        }
    }
}

/// Effective treated-arm parameter when a fraction `phi` of the arm
/// effectively received the baseline exposure.
pub fn apply_withdrawal_mix(theta_t: Probability, theta_b: Probability, phi: Probability) -> Probability {
    Probability(withdrawal_mix(theta_t.0, theta_b.0, phi.0))
}

#[inline]
pub(crate) fn withdrawal_mix(theta_t: f64, theta_b: f64, phi: f64) -> f64 {
    let v = (1.0 - phi) * theta_t + phi * theta_b;
    // Rounding can push the convex combination a hair outside its hull.
    v.clamp(theta_t.min(theta_b), theta_t.max(theta_b))
}

/// Expected heads per nominal toss recorded under list 1 when a fraction
/// `phi_1` of coin 1's tosses is credited to list 2 and a fraction `phi_2`
/// of coin 2's tosses is credited to list 1. Unchecked: exceeds 1 for
/// incoherent `(phi_1, phi_2)` pairs.
#[inline]
pub fn swap_mix_rate(theta_1: f64, theta_2: f64, phi_1: f64, phi_2: f64) -> f64 {
    theta_1 * (1.0 - phi_1) + theta_2 * phi_2
}

fn check_swap_coherence(phi_1: f64, phi_2: f64) -> Result<(), ModelError> {
    let max_value = (1.0 - phi_1) + phi_2;
    if max_value > 1.0 + 1e-12 {
        Err(ModelError::IncoherentSwap(max_value))
    } else {
        Ok(())
    }
}

/// The swap-mixture effective parameter. Rejects `(phi_1, phi_2)` pairs
/// for which some `(theta_1, theta_2)` would leave `[0, 1]`.
pub fn apply_swap_mix(
    theta_1: Probability,
    theta_2: Probability,
    phi_1: Probability,
    phi_2: Probability,
) -> Result<Probability, ModelError> {
    check_swap_coherence(phi_1.0, phi_2.0)?;
    Ok(Probability(
        swap_mix_rate(theta_1.0, theta_2.0, phi_1.0, phi_2.0).clamp(0.0, 1.0),
    ))
}

/// `logistic(logit(theta) + delta)`; `theta` must lie strictly inside (0, 1).
pub fn apply_logodds_shift(theta: Probability, delta: f64) -> Result<Probability, ModelError> {
    if theta.0 <= 0.0 || theta.0 >= 1.0 {
        return Err(ModelError::LogitUndefined(theta.0));
    }
    if !delta.is_finite() {
        return Err(ModelError::OutOfRange {
            name: "delta".into(),
            value: delta,
            lo: f64::MIN,
            hi: f64::MAX,
        });
    }
    Ok(Probability(logodds_shift(theta.0, delta)))
}

#[inline]
pub(crate) fn logodds_shift(theta: f64, delta: f64) -> f64 {
    if delta == 0.0 {
        theta
    } else {
        logistic(logit(theta) + delta)
    }
}

/// Probability that an event is recorded given the true event probability.
pub fn apply_misclassification(theta_eff: Probability, sens: Probability, spec: Probability) -> Probability {
    Probability(misclassification(theta_eff.0, sens.0, spec.0))
}

#[inline]
pub(crate) fn misclassification(theta: f64, sens: f64, spec: f64) -> f64 {
    if sens == 1.0 && spec == 1.0 {
        return theta;
    }
    let fp = 1.0 - spec;
    let v = sens * theta + fp * (1.0 - theta);
    v.clamp(sens.min(fp), sens.max(fp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(v: f64) -> Probability {
        Probability::new(v).unwrap()
    }

    #[test]
    fn withdrawal_examples() {
        let v = apply_withdrawal_mix(p(0.08), p(0.12), p(0.191)).value();
        assert!((v - 0.08764).abs() < 1e-12);
        assert_eq!(apply_withdrawal_mix(p(0.08), p(0.12), p(0.0)).value(), 0.08);
        assert_eq!(apply_withdrawal_mix(p(0.08), p(0.12), p(1.0)).value(), 0.12);
    }

    #[test]
    fn swap_examples() {
        let v = apply_swap_mix(p(0.5), p(0.7), p(0.2), p(0.1)).unwrap().value();
        assert!((v - 0.47).abs() < 1e-12);
        assert_eq!(apply_swap_mix(p(0.5), p(0.7), p(0.0), p(0.0)).unwrap().value(), 0.5);
        for &t in &[0.0, 0.3, 1.0] {
            for &f in &[0.0, 0.25, 1.0] {
                let v = apply_swap_mix(p(t), p(t), p(f), p(f)).unwrap().value();
                assert!((v - t).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn swap_rejects_incoherent_pairs() {
        let err = apply_swap_mix(p(0.6), p(0.3), p(0.1), p(0.2)).unwrap_err();
        assert!(matches!(err, ModelError::IncoherentSwap(_)));
        let params = [("phi_1".to_string(), 0.1), ("phi_2".to_string(), 0.2)].into();
        assert!(BiasTransform::from_params(TransformKind::SwapMix, &params).is_err());
    }

    #[test]
    fn logodds_examples() {
        assert_eq!(apply_logodds_shift(p(0.5), 0.0).unwrap().value(), 0.5);
        let v = apply_logodds_shift(p(0.5), 3f64.ln()).unwrap().value();
        assert!((v - 0.75).abs() < 1e-15);
        assert!(matches!(
            apply_logodds_shift(p(0.0), 1.0),
            Err(ModelError::LogitUndefined(_))
        ));
        assert!(apply_logodds_shift(p(1.0), 1.0).is_err());
    }

    #[test]
    fn misclassification_examples() {
        let v = apply_misclassification(p(0.1), p(0.9), p(0.95)).value();
        assert!((v - 0.135).abs() < 1e-15);
        assert_eq!(apply_misclassification(p(0.37), p(1.0), p(1.0)).value(), 0.37);
        for &t in &[0.0, 0.2, 0.9, 1.0] {
            assert_eq!(apply_misclassification(p(t), p(0.5), p(0.5)).value(), 0.5);
        }
    }

    #[test]
    fn signature_is_enforced() {
        let params = [("phi".to_string(), 0.1), ("extra".to_string(), 0.0)].into();
        assert_eq!(
            BiasTransform::from_params(TransformKind::WithdrawalMix, &params),
            Err(ModelError::UnexpectedParameter("extra".into()))
        );
        let params = BTreeMap::new();
        assert_eq!(
            BiasTransform::from_params(TransformKind::Misclassification, &params),
            Err(ModelError::MissingParameter("sens".into()))
        );
        let params = [("delta".to_string(), 6.0)].into();
        assert!(BiasTransform::from_params(TransformKind::LogoddsShift, &params).is_err());
    }

    const KINDS: [TransformKind; 5] = [
        TransformKind::WithdrawalMix,
        TransformKind::SwapMix,
        TransformKind::LogoddsShift,
        TransformKind::Misclassification,
        TransformKind::CredibilityMixture,
    ];

    #[test]
    fn identity_is_an_exact_fixed_point() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for kind in KINDS {
            let t = BiasTransform::identity(kind);
            for _ in 0..1000 {
                let theta = p(rng.gen_range(1e-9..1.0 - 1e-9));
                let other = p(rng.gen::<f64>());
                assert_eq!(t.apply(theta, other).unwrap(), theta, "{kind:?}");
            }
        }
    }

    proptest! {
        #[test]
        fn withdrawal_stays_in_hull(a in 0.0..=1.0f64, b in 0.0..=1.0f64, phi in 0.0..=1.0f64) {
            let v = apply_withdrawal_mix(p(a), p(b), p(phi)).value();
            prop_assert!(v >= a.min(b) && v <= a.max(b));
        }

        #[test]
        fn logodds_shift_inverts(theta in 1e-6..(1.0 - 1e-6f64), d in -5.0..5.0f64) {
            let there = apply_logodds_shift(p(theta), d).unwrap();
            prop_assume!(there.value() > 0.0 && there.value() < 1.0);
            let back = apply_logodds_shift(there, -d).unwrap().value();
            prop_assert!((back - theta).abs() < 1e-9);
        }

        #[test]
        fn logodds_shift_is_increasing(a in 1e-6..0.5f64, gap in 1e-6..0.49f64, d in -5.0..5.0f64) {
            let lo = apply_logodds_shift(p(a), d).unwrap().value();
            let hi = apply_logodds_shift(p(a + gap), d).unwrap().value();
            prop_assert!(hi >= lo);
        }

        #[test]
        fn misclassification_stays_in_band(t in 0.0..=1.0f64, se in 0.0..=1.0f64, sp in 0.0..=1.0f64) {
            let v = apply_misclassification(p(t), p(se), p(sp)).value();
            prop_assert!(v >= se.min(1.0 - sp) - 1e-15 && v <= se.max(1.0 - sp) + 1e-15);
        }
    }
}
