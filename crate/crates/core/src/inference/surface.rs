use rayon::prelude::*;

use super::InferenceError;
use crate::grid::{Axis, ParamGrid};
use crate::model::{ArmData, ParamPrior, ParamSlot, PipelineModel, StudyReport, ValueSource, DELTA_BOUND};
use crate::numeric::{beta_cdf, invert_cdf, normal_cdf, CompensatedSum};

/// Upper bound on joint grid cells (weights plus log-likelihoods stay ~270 MB).
pub const CELL_BUDGET: usize = 1 << 24;
/// Fewest points a bias axis may be given before the budget guard refuses.
pub const MIN_BIAS_POINTS: usize = 9;
pub const MAX_AXES: usize = 4;
pub const MIN_RESOLUTION: usize = 21;
pub const MAX_RESOLUTION: usize = 2001;

/// Tail mass left out of a bias axis at each end.
const TAIL: f64 = 1e-10;
const NORMAL_SPAN_SD: f64 = 8.0;
const CHUNK: usize = 1 << 14;

pub fn theta_axis_name(arm: &str) -> String {
    format!("theta_pop.{arm}")
}

/// Axes and per-axis prior masses of a model's joint grid. Population axes
/// come first, in arm order, then one axis per free bias parameter.
#[derive(Debug, Clone)]
pub struct GridLayout {
    pub axes: Vec<Axis>,
    pub masses: Vec<Vec<f64>>,
    pub n_theta: usize,
    pub bias_points: usize,
}

impl GridLayout {
    pub fn new(model: &PipelineModel, resolution: usize) -> Result<Self, InferenceError> {
        if !(MIN_RESOLUTION..=MAX_RESOLUTION).contains(&resolution) {
            return Err(InferenceError::Resolution(resolution));
        }
        let free = model.free_parameters();
        let n_theta = model.arms().len();
        let total = n_theta + free.len();
        if total > MAX_AXES {
            return Err(InferenceError::TooManyAxes {
                count: total,
                free: free.iter().map(|p| p.name.clone()).collect(),
            });
        }
        let theta_cells = resolution.pow(n_theta as u32);
        let mut bias_points = if free.is_empty() { 0 } else { resolution };
        if !free.is_empty() {
            while bias_points >= MIN_BIAS_POINTS
                && theta_cells.saturating_mul(bias_points.pow(free.len() as u32)) > CELL_BUDGET
            {
                bias_points -= 1;
            }
        }
        if theta_cells > CELL_BUDGET || (!free.is_empty() && bias_points < MIN_BIAS_POINTS) {
            return Err(InferenceError::CellBudget {
                resolution,
                axes: total,
            });
        }

        let mut axes = Vec::with_capacity(total);
        let mut masses = Vec::with_capacity(total);
        for arm in model.arms() {
            let axis = Axis::uniform(theta_axis_name(&arm.name), 0.0, 1.0, resolution);
            let prior = arm.prior;
            masses.push(axis.cell_masses(|x| prior.cdf(x)));
            axes.push(axis);
        }
        for p in &free {
            let (axis, m) = bias_axis(p, bias_points);
            axes.push(axis);
            masses.push(m);
        }
        Ok(Self {
            axes,
            masses,
            n_theta,
            bias_points,
        })
    }

    pub fn cells(&self) -> usize {
        self.axes.iter().map(Axis::len).product()
    }

    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.axes.len()];
        for i in (0..self.axes.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.axes[i + 1].len();
        }
        s
    }

    /// Cells in one population cell's trailing block of bias cells.
    pub fn bias_block(&self) -> usize {
        self.axes[self.n_theta..].iter().map(Axis::len).product()
    }

    pub fn prior_grid(&self) -> Result<ParamGrid, InferenceError> {
        Ok(ParamGrid::product(self.axes.clone(), &self.masses)?)
    }

    /// Prior weight of every cell, row-major.
    pub fn prior_weights(&self) -> Vec<f64> {
        let mut weights = vec![1.0];
        for m in &self.masses {
            let mut next = Vec::with_capacity(weights.len() * m.len());
            for &w in &weights {
                next.extend(m.iter().map(|&x| w * x));
            }
            weights = next;
        }
        weights
    }
}

/// Midpoint axis over the prior's effective support, with CDF-difference
/// masses renormalized over the axis.
fn bias_axis(p: &ParamSlot, points: usize) -> (Axis, Vec<f64>) {
    match &p.prior {
        ParamPrior::Beta(b) => {
            let cdf = |x: f64| beta_cdf(b.alpha(), b.beta(), x);
            let mut lo = invert_cdf(cdf, TAIL, 0.0, 1.0);
            let mut hi = invert_cdf(cdf, 1.0 - TAIL, 0.0, 1.0);
            if lo < 1e-6 {
                lo = 0.0;
            }
            if hi > 1.0 - 1e-6 {
                hi = 1.0;
            }
            let axis = Axis::uniform(p.name.clone(), lo, hi, points);
            let m = axis.cell_masses(cdf);
            (axis, m)
        }
        ParamPrior::Normal { mean, sd } => {
            let lo = (mean - NORMAL_SPAN_SD * sd).max(-DELTA_BOUND);
            let hi = (mean + NORMAL_SPAN_SD * sd).min(DELTA_BOUND);
            let axis = Axis::uniform(p.name.clone(), lo, hi, points);
            let m = axis.cell_masses(|x| normal_cdf(*mean, *sd, x));
            (axis, m)
        }
        _ => unreachable!("only free parameters get axes"),
    }
}

fn log_sum_exp_weighted(log_values: &[f64], weights: &[f64]) -> f64 {
    let max = log_values
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut acc = CompensatedSum::new();
    for (&l, &w) in log_values.iter().zip(weights) {
        if w > 0.0 {
            acc.add(w * (l - max).exp());
        }
    }
    max + acc.value().ln()
}

/// Log-likelihood of a report at every cell of a model's joint grid.
#[derive(Debug, Clone)]
pub struct LikelihoodSurface {
    pub layout: GridLayout,
    pub log_lik: Vec<f64>,
}

impl LikelihoodSurface {
    pub fn compute(model: &PipelineModel, report: &StudyReport, resolution: usize) -> Result<Self, InferenceError> {
        let layout = GridLayout::new(model, resolution)?;
        let data = arm_data(model, report)?;

        let free = model.free_parameters();
        let compiled = model.compile(|p| {
            Ok(match &p.prior {
                ParamPrior::Point(v) => ValueSource::Const(*v),
                _ => ValueSource::Slot(free.iter().position(|f| f.name == p.name).expect("free parameter")),
            })
        })?;

        let n_theta = layout.n_theta;
        let strides = layout.strides();
        let points: Vec<&[f64]> = layout.axes.iter().map(|a| a.points.as_slice()).collect();
        let mut log_lik = vec![0.0; layout.cells()];
        log_lik.par_chunks_mut(CHUNK).enumerate().for_each(|(chunk, out)| {
            let mut theta = vec![0.0; n_theta];
            let mut values = vec![0.0; points.len() - n_theta];
            let (mut p_obs, mut cred, mut scratch) = (vec![0.0; n_theta], vec![0.0; n_theta], vec![0.0; n_theta]);
            for (offset, slot) in out.iter_mut().enumerate() {
                let cell = chunk * CHUNK + offset;
                for (a, pts) in points.iter().enumerate() {
                    let v = pts[(cell / strides[a]) % pts.len()];
                    if a < n_theta {
                        theta[a] = v;
                    } else {
                        values[a - n_theta] = v;
                    }
                }
                compiled.eval(&theta, &values, &mut p_obs, &mut cred, &mut scratch);
                let mut ll = 0.0;
                for (i, d) in data.iter().enumerate() {
                    ll += d.log_likelihood(p_obs[i], cred[i]);
                }
                *slot = ll;
            }
        });
        Ok(Self { layout, log_lik })
    }

    fn max_log_lik(&self) -> f64 {
        self.log_lik.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Bayes by pointwise reweighting of the prior grid.
    pub fn posterior(&self) -> Result<super::JointPosterior, InferenceError> {
        let max = self.max_log_lik();
        if max == f64::NEG_INFINITY {
            return Err(InferenceError::DataImpossible);
        }
        let mut weights = self.layout.prior_weights();
        weights
            .par_iter_mut()
            .zip(self.log_lik.par_iter())
            .for_each(|(w, &ll)| *w *= (ll - max).exp());
        let mut acc = CompensatedSum::new();
        for &w in &weights {
            acc.add(w);
        }
        let total = acc.value();
        if !(total > 0.0) {
            return Err(InferenceError::DataImpossible);
        }
        let mut grid = ParamGrid::new(self.layout.axes.clone(), weights)?;
        grid.normalize()?;
        Ok(super::JointPosterior {
            grid,
            log_evidence: max + total.ln(),
        })
    }

    /// Log-likelihood over population cells with bias parameters integrated
    /// out against their priors.
    pub fn population_log_lik(&self) -> Vec<f64> {
        let block = self.layout.bias_block();
        let bias_prior: Vec<f64> = {
            let mut w = vec![1.0];
            for m in &self.layout.masses[self.layout.n_theta..] {
                let mut next = Vec::with_capacity(w.len() * m.len());
                for &x in &w {
                    next.extend(m.iter().map(|&y| x * y));
                }
                w = next;
            }
            w
        };
        self.log_lik
            .par_chunks(block)
            .map(|ll| log_sum_exp_weighted(ll, &bias_prior))
            .collect()
    }
}

/// Per-arm counts in model arm order.
fn arm_data(model: &PipelineModel, report: &StudyReport) -> Result<Vec<ArmData>, InferenceError> {
    if report.arms.len() != model.arms().len() {
        return Err(InferenceError::ArmMismatch(format!(
            "model has {} arms, report has {}",
            model.arms().len(),
            report.arms.len()
        )));
    }
    model
        .arms()
        .iter()
        .map(|a| {
            let arm = report
                .arm(&a.name)
                .ok_or_else(|| InferenceError::ArmMismatch(format!("report has no arm `{}`", a.name)))?;
            Ok(ArmData::from_arm(arm))
        })
        .collect()
}
