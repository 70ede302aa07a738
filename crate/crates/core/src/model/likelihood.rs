use statrs::function::factorial::ln_binomial;

use super::{Probability, StudyArm};
use crate::numeric::{log_add_exp, LOG_FLOOR};

/// Counts of one arm with its log binomial coefficient precomputed.
#[derive(Debug, Clone, Copy)]
pub struct ArmData {
    pub n: u64,
    pub events: u64,
    ln_choose: f64,
    ln_flat: f64,
}

impl ArmData {
    pub fn new(n: u64, events: u64) -> Self {
        debug_assert!(events <= n);
        Self {
            n,
            events,
            ln_choose: ln_binomial(n, events),
            ln_flat: -((n + 1) as f64).ln(),
        }
    }

    pub fn from_arm(arm: &StudyArm) -> Self {
        Self::new(arm.n(), arm.events())
    }

    #[inline]
    pub fn binomial_log_pmf(&self, p: f64) -> f64 {
        let x = self.events as f64;
        let rest = (self.n - self.events) as f64;
        let mut ll = self.ln_choose;
        if self.events > 0 {
            if p <= 0.0 {
                return f64::NEG_INFINITY;
            }
            ll += x * p.ln();
        }
        if self.n > self.events {
            if p >= 1.0 {
                return f64::NEG_INFINITY;
            }
            ll += rest * (-p).ln_1p();
        }
        ll
    }

    /// Credibility-mixed log-likelihood, floored at `ln(1e-300)` unless the
    /// data are strictly impossible.
    #[inline]
    pub fn log_likelihood(&self, p_obs: f64, c: f64) -> f64 {
        let ll = if c >= 1.0 {
            self.binomial_log_pmf(p_obs)
        } else if c <= 0.0 {
            self.ln_flat
        } else {
            log_add_exp(c.ln() + self.binomial_log_pmf(p_obs), (-c).ln_1p() + self.ln_flat)
        };
        if ll.is_finite() && ll < LOG_FLOOR {
            LOG_FLOOR
        } else {
            ll
        }
    }
}

pub fn binomial_log_pmf(events: u64, n: u64, p: f64) -> f64 {
    ArmData::new(n, events).binomial_log_pmf(p)
}

/// Natural-log likelihood of a validated arm's reported events.
pub fn log_likelihood(arm: &StudyArm, p_obs: Probability, c: Probability) -> f64 {
    debug_assert!(arm.reported_events.is_some(), "arm counts must be validated first");
    ArmData::from_arm(arm).log_likelihood(p_obs.value(), c.value())
}

/// `c * Binomial(x | n, p_obs) + (1 - c) / (n + 1)`.
pub fn likelihood(arm: &StudyArm, p_obs: Probability, c: Probability) -> f64 {
    log_likelihood(arm, p_obs, c).exp()
}
