//! Joint-grid Bayesian updating, nuisance marginalization, the patient-level
//! refit, multi-study pooling and informativeness scoring.

mod surface;

pub use surface::{
    theta_axis_name, GridLayout, LikelihoodSurface, CELL_BUDGET, MAX_AXES, MAX_RESOLUTION,
    MIN_BIAS_POINTS, MIN_RESOLUTION,
};

use thiserror::Error;

use crate::grid::{GridError, ParamGrid};
use crate::model::{BetaShape, ModelError, PipelineModel, StudyReport};
use crate::numeric::CompensatedSum;

pub const PATIENT_AXIS: &str = "theta_pt";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InferenceError {
    #[error("resolution {0} is outside [{MIN_RESOLUTION}, {MAX_RESOLUTION}]")]
    Resolution(usize),
    #[error(
        "{count} grid axes exceed the limit of {MAX_AXES}; fix some of {free:?} at point values"
    )]
    TooManyAxes { count: usize, free: Vec<String> },
    #[error(
        "a {axes}-axis grid at resolution {resolution} exceeds the cell budget; lower the resolution or fix parameters at point values"
    )]
    CellBudget { resolution: usize, axes: usize },
    #[error("data impossible under model")]
    DataImpossible,
    #[error("arms do not match: {0}")]
    ArmMismatch(String),
    #[error("events ({events}) exceed n ({n})")]
    Counts { events: u64, n: u64 },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Posterior over population and bias parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPosterior {
    pub grid: ParamGrid,
    /// Log marginal likelihood of the report under the model.
    pub log_evidence: f64,
}

/// Prior grid of a model: product of per-axis prior masses.
pub fn build_joint_grid(model: &PipelineModel, resolution: usize) -> Result<ParamGrid, InferenceError> {
    GridLayout::new(model, resolution)?.prior_grid()
}

pub fn posterior(model: &PipelineModel, report: &StudyReport, resolution: usize) -> Result<JointPosterior, InferenceError> {
    LikelihoodSurface::compute(model, report, resolution)?.posterior()
}

pub fn marginalize(jp: &JointPosterior, keep: &[&str]) -> Result<ParamGrid, InferenceError> {
    Ok(jp.grid.marginal(keep)?)
}

/// Closed-form beta-binomial update; a test oracle for the grid engine.
pub fn conjugate_oracle(prior: BetaShape, events: u64, n: u64) -> Result<BetaShape, InferenceError> {
    if events > n {
        return Err(InferenceError::Counts { events, n });
    }
    Ok(BetaShape::new(
        prior.alpha() + events as f64,
        prior.beta() + (n - events) as f64,
    )?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientPosterior {
    /// One axis named `theta_pt`.
    pub grid: ParamGrid,
    /// Effective sample size of the refit; `None` when the population
    /// marginal is passed through unchanged.
    pub kappa_used: Option<f64>,
    pub warning: Option<String>,
}

/// Derives the patient-level distribution from a population marginal: a
/// moment-matched Beta whose effective sample size is clamped to `kappa`,
/// keeping the mean. `None` means an infinite `kappa`.
pub fn patient_posterior(pop_marginal: &ParamGrid, kappa: Option<f64>) -> Result<PatientPosterior, InferenceError> {
    if pop_marginal.axes().len() != 1 {
        return Err(GridError::AxisMismatch.into());
    }
    let name = pop_marginal.axes()[0].name.clone();
    let (mean, var) = pop_marginal.moments(&name)?;
    let identity = |warning| PatientPosterior {
        grid: pop_marginal.clone().renamed(PATIENT_AXIS),
        kappa_used: None,
        warning,
    };
    if var <= 1e-15 * mean.max(1e-300) {
        // Every cell but one is (numerically) empty: keep the point mass.
        let axis = pop_marginal.axes()[0].clone();
        let peak = pop_marginal
            .weights()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let mut w = vec![0.0; axis.len()];
        w[peak] = 1.0;
        return Ok(PatientPosterior {
            grid: ParamGrid::new(vec![axis], w)?.renamed(PATIENT_AXIS),
            kappa_used: None,
            warning: Some(format!("population marginal `{name}` is degenerate; patient posterior is a point mass")),
        });
    }
    let Some(kappa) = kappa else {
        return Ok(identity(None));
    };
    let ess = mean * (1.0 - mean) / var - 1.0;
    if kappa >= ess {
        return Ok(identity(None));
    }
    let shape = BetaShape::from_mean_ess(mean, kappa)?;
    let mut axis = pop_marginal.axes()[0].clone();
    axis.name = PATIENT_AXIS.to_string();
    let masses = axis.cell_masses(|x| shape.cdf(x));
    let mut grid = ParamGrid::new(vec![axis], masses)?;
    grid.normalize()?;
    Ok(PatientPosterior {
        grid,
        kappa_used: Some(kappa),
        warning: None,
    })
}

/// Pools several studies on their shared population parameters. Each
/// study's bias parameters are integrated out against its own priors; the
/// population prior is taken from the first model. The result has only the
/// population axes.
pub fn meta_update(
    studies: &[(&PipelineModel, &StudyReport)],
    resolution: usize,
) -> Result<JointPosterior, InferenceError> {
    let Some(((first, _), _)) = studies.split_first() else {
        return Err(InferenceError::ArmMismatch("no studies to pool".into()));
    };
    for (m, _) in studies {
        if m.arms() != first.arms() {
            return Err(InferenceError::ArmMismatch(
                "every pooled model must share arm names, roles and population priors".into(),
            ));
        }
    }
    let mut total_ll: Option<Vec<f64>> = None;
    let mut theta_layout = None;
    for (model, report) in studies {
        let s = LikelihoodSurface::compute(model, report, resolution)?;
        let ll = s.population_log_lik();
        total_ll = Some(match total_ll {
            None => ll,
            Some(mut acc) => {
                for (a, b) in acc.iter_mut().zip(&ll) {
                    *a += b;
                }
                acc
            }
        });
        if theta_layout.is_none() {
            let mut layout = s.layout;
            layout.axes.truncate(layout.n_theta);
            layout.masses.truncate(layout.n_theta);
            theta_layout = Some(layout);
        }
    }
    let layout = LikelihoodSurface {
        layout: theta_layout.expect("at least one study"),
        log_lik: total_ll.expect("at least one study"),
    };
    layout.posterior()
}

/// `KL(post || prior)` in nats over cells where the posterior has mass.
pub fn informativeness(prior: &ParamGrid, post: &ParamGrid) -> Result<f64, InferenceError> {
    if !prior.same_support(post) {
        return Err(GridError::AxisMismatch.into());
    }
    let (tp, tq) = (post.total(), prior.total());
    let mut acc = CompensatedSum::new();
    for (&p, &q) in post.weights().iter().zip(prior.weights()) {
        if p > 0.0 {
            let (p, q) = (p / tp, q / tq);
            if q <= 0.0 {
                return Ok(f64::INFINITY);
            }
            acc.add(p * (p / q).ln());
        }
    }
    Ok(acc.value().max(0.0))
}
