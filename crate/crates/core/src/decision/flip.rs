use serde::{Deserialize, Serialize};

use super::{choose, DecisionError, DecisionProblem};
use crate::grid::ParamGrid;
use crate::inference::{patient_posterior, InferenceError, LikelihoodSurface, PATIENT_AXIS};
use crate::model::{BetaShape, PipelineModel, Role, StudyReport};
use crate::numeric::CompensatedSum;

/// Points in the dense pre-scan, endpoints included.
pub const SCAN_POINTS: usize = 1000;
/// Bisection stops once the bracket is this narrow.
pub const BRACKET_WIDTH: f64 = 1e-4;

/// A one-parameter family of population priors on one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorFamily {
    /// `Beta(m * ess, (1 - m) * ess)` indexed by its mean `m`. The arm
    /// defaults to the first treated arm.
    Mean {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        arm: Option<String>,
        ess: f64,
    },
}

impl PriorFamily {
    fn arm(&self, model: &PipelineModel) -> Result<usize, DecisionError> {
        let PriorFamily::Mean { arm, ess } = self;
        if !(*ess > 0.0) || !ess.is_finite() {
            return Err(DecisionError::BadFamily(format!("ess must be > 0 (got {ess})")));
        }
        match arm {
            Some(name) => model
                .arm_index(name)
                .ok_or_else(|| DecisionError::BadFamily(format!("unknown arm `{name}`"))),
            None => model
                .arms()
                .iter()
                .position(|a| a.role == Role::Treated)
                .ok_or_else(|| DecisionError::BadFamily("model has no treated arm".into())),
        }
    }

    fn shape(&self, m: f64) -> Result<BetaShape, DecisionError> {
        let PriorFamily::Mean { ess, .. } = self;
        BetaShape::from_mean_ess(m, *ess).map_err(|e| DecisionError::BadFamily(e.to_string()))
    }

    fn check_interval(&self, lo: f64, hi: f64) -> Result<(), DecisionError> {
        if !(lo < hi) || !(lo > 0.0) || !(hi < 1.0) {
            return Err(DecisionError::BadInterval(format!(
                "need 0 < lo < hi < 1 for a mean family (got [{lo}, {hi}])"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlipResult {
    /// Midpoint of the final bisection bracket.
    pub boundary: f64,
    pub bracket: (f64, f64),
    pub arm: String,
    pub action_below: String,
    pub action_above: String,
    pub scan_step: f64,
    /// Neighbouring scan points between which the recommendation changes.
    pub scan_bracket: (f64, f64),
}

/// Recomputes per-arm posteriors when one arm's population prior changes,
/// without revisiting the joint grid.
struct Reweighter {
    arm: usize,
    grids: Vec<ParamGrid>,
    /// Likelihood-and-other-priors mass per cell of the family arm.
    own: Vec<f64>,
    /// For every other arm `j`: mass on (family cell, `j` cell), row-major.
    cross: Vec<Option<Vec<f64>>>,
    kappa: Option<f64>,
}

impl Reweighter {
    fn new(surface: &LikelihoodSurface, arm: usize, kappa: Option<f64>) -> Result<Self, DecisionError> {
        let layout = &surface.layout;
        let max = surface.log_lik.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(InferenceError::DataImpossible.into());
        }
        let n_theta = layout.n_theta;
        let strides = layout.strides();
        let lens: Vec<usize> = layout.axes.iter().map(|a| a.len()).collect();
        let rk = lens[arm];
        let mut own = vec![CompensatedSum::new(); rk];
        let mut cross: Vec<Option<Vec<CompensatedSum>>> = (0..n_theta)
            .map(|j| (j != arm).then(|| vec![CompensatedSum::new(); rk * lens[j]]))
            .collect();
        let mut idx = vec![0usize; lens.len()];
        for (cell, &ll) in surface.log_lik.iter().enumerate() {
            for (a, i) in idx.iter_mut().enumerate() {
                *i = (cell / strides[a]) % lens[a];
            }
            let mut w = (ll - max).exp();
            if w == 0.0 {
                continue;
            }
            for (a, &i) in idx.iter().enumerate() {
                if a != arm {
                    w *= layout.masses[a][i];
                }
            }
            let ik = idx[arm];
            own[ik].add(w);
            for (j, c) in cross.iter_mut().enumerate() {
                if let Some(c) = c {
                    c[ik * lens[j] + idx[j]].add(w);
                }
            }
        }
        let grids = (0..n_theta)
            .map(|j| ParamGrid::new(vec![layout.axes[j].clone()], vec![1.0 / lens[j] as f64; lens[j]]))
            .collect::<Result<_, _>>()
            .map_err(InferenceError::from)?;
        Ok(Self {
            arm,
            grids,
            own: own.iter().map(CompensatedSum::value).collect(),
            cross: cross
                .into_iter()
                .map(|c| c.map(|v| v.iter().map(CompensatedSum::value).collect()))
                .collect(),
            kappa,
        })
    }

    /// Posterior-mean patient event probability per arm under prior masses
    /// `q` on the family arm.
    fn patient_means(&self, q: &[f64]) -> Result<Vec<f64>, DecisionError> {
        let mut means = Vec::with_capacity(self.grids.len());
        for (j, base) in self.grids.iter().enumerate() {
            let rj = base.len();
            let weights: Vec<f64> = if j == self.arm {
                q.iter().zip(&self.own).map(|(a, b)| a * b).collect()
            } else {
                let t = self.cross[j].as_ref().expect("cross table for other arms");
                let mut out = vec![CompensatedSum::new(); rj];
                for (i, &qi) in q.iter().enumerate() {
                    if qi == 0.0 {
                        continue;
                    }
                    for (l, acc) in out.iter_mut().enumerate() {
                        acc.add(qi * t[i * rj + l]);
                    }
                }
                out.iter().map(CompensatedSum::value).collect()
            };
            let mut g = ParamGrid::new(base.axes().to_vec(), weights).map_err(InferenceError::from)?;
            g.normalize().map_err(|_| InferenceError::DataImpossible)?;
            let pt = patient_posterior(&g, self.kappa)?;
            means.push(pt.grid.mean(PATIENT_AXIS).map_err(InferenceError::from)?);
        }
        Ok(means)
    }
}

/// Finds the prior, within a one-parameter family, at which the recommended
/// action changes. A dense scan guards against slices with several
/// crossings; bisection then narrows the single crossing.
pub fn flip_boundary(
    problem: &DecisionProblem,
    model: &PipelineModel,
    report: &StudyReport,
    family: &PriorFamily,
    interval: (f64, f64),
    resolution: usize,
) -> Result<FlipResult, DecisionError> {
    let (lo, hi) = interval;
    family.check_interval(lo, hi)?;
    let arm = family.arm(model)?;
    problem.validate(model.arms().iter().map(|a| a.name.as_str()))?;
    let bound: Vec<usize> = problem
        .actions
        .iter()
        .map(|a| model.arm_index(&a.arm).expect("validated above"))
        .collect();

    let surface = LikelihoodSurface::compute(model, report, resolution)?;
    let axis = surface.layout.axes[arm].clone();
    let rw = Reweighter::new(&surface, arm, model.patient_relevance_kappa())?;
    drop(surface);

    let decide = |m: f64| -> Result<usize, DecisionError> {
        let shape = family.shape(m)?;
        let q = axis.cell_masses(|x| shape.cdf(x));
        let means = rw.patient_means(&q)?;
        let eu: Vec<f64> = problem
            .actions
            .iter()
            .zip(&bound)
            .map(|(a, &j)| problem.utility_at(a, means[j]))
            .collect();
        Ok(choose(problem, &eu))
    };

    let step = (hi - lo) / (SCAN_POINTS - 1) as f64;
    let xs: Vec<f64> = (0..SCAN_POINTS).map(|i| if i + 1 == SCAN_POINTS { hi } else { lo + i as f64 * step }).collect();
    let picks = xs.iter().map(|&x| decide(x)).collect::<Result<Vec<_>, _>>()?;
    let crossings: Vec<usize> = (0..SCAN_POINTS - 1).filter(|&i| picks[i] != picks[i + 1]).collect();
    let midpoint = |i: usize| 0.5 * (xs[i] + xs[i + 1]);
    if crossings.len() > 1 {
        return Err(DecisionError::NonMonotone {
            crossings: crossings.iter().map(|&i| midpoint(i)).collect(),
        });
    }
    let Some(&c) = crossings.first() else {
        return Err(DecisionError::NoFlip {
            lo,
            hi,
            action: problem.actions[picks[0]].name.clone(),
        });
    };

    let below = picks[0];
    let (mut a, mut b) = (lo, hi);
    while b - a > BRACKET_WIDTH {
        let mid = 0.5 * (a + b);
        if decide(mid)? == below {
            a = mid;
        } else {
            b = mid;
        }
    }
    let boundary = 0.5 * (a + b);
    if boundary < xs[c] - step || boundary > xs[c + 1] + step {
        return Err(DecisionError::NonMonotone {
            crossings: vec![midpoint(c), boundary],
        });
    }
    Ok(FlipResult {
        boundary,
        bracket: (a, b),
        arm: model.arms()[arm].name.clone(),
        action_below: problem.actions[below].name.clone(),
        action_above: problem.actions[picks[SCAN_POINTS - 1]].name.clone(),
        scan_step: step,
        scan_bracket: (xs[c], xs[c + 1]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decision::{patient_posteriors, recommend, Action, OutcomeUtilities};
    use crate::inference::posterior;
    use crate::model::{
        ArmPrior, Ascertainment, BaselineBalance, Blinding, Design, ParamPrior, Stage, StageTransform,
        StudyArm, TargetArm, TransformKind,
    };
    use std::collections::BTreeMap;

    fn arms(control: BetaShape) -> Vec<ArmPrior> {
        vec![
            ArmPrior {
                name: "control".into(),
                role: Role::Baseline,
                prior: control,
            },
            ArmPrior {
                name: "treated".into(),
                role: Role::Treated,
                prior: BetaShape::UNIFORM,
            },
        ]
    }

    fn report(n: u64, xc: u64, xt: u64) -> StudyReport {
        StudyReport {
            id: "f".into(),
            design: Design::RandomizedTrial,
            blinding: Blinding::Double,
            arms: vec![
                StudyArm::counts("control", Role::Baseline, n, 0, xc),
                StudyArm::counts("treated", Role::Treated, n, 0, xt),
            ],
            selection_tags: Default::default(),
            baseline_balance: BaselineBalance::Similar,
            mortality_ascertainment: Ascertainment::Complete,
            notes: String::new(),
        }
    }

    fn problem() -> DecisionProblem {
        DecisionProblem {
            actions: vec![
                Action {
                    name: "treat".into(),
                    arm: "treated".into(),
                    utility_offset: -0.01,
                },
                Action {
                    name: "no_treat".into(),
                    arm: "control".into(),
                    utility_offset: 0.0,
                },
            ],
            outcome_utilities: OutcomeUtilities {
                u_event: 0.0,
                u_no_event: 1.0,
            },
            tie_epsilon: 0.0,
        }
    }

    #[test]
    fn degenerate_data_flips_at_control_risk_minus_offset() {
        let control = BetaShape::from_mean_ess(0.12, 2000.0).unwrap();
        let model = PipelineModel::identity(arms(control)).unwrap();
        let family = PriorFamily::Mean { arm: None, ess: 2000.0 };
        let r = flip_boundary(&problem(), &model, &report(0, 0, 0), &family, (0.01, 0.5), 401).unwrap();
        assert!((r.boundary - 0.11).abs() < 1e-4, "{}", r.boundary);
        assert!(r.bracket.1 - r.bracket.0 <= BRACKET_WIDTH);
        assert_eq!(r.action_below, "treat");
        assert_eq!(r.action_above, "no_treat");
        assert!(r.boundary >= r.scan_bracket.0 - r.scan_step && r.boundary <= r.scan_bracket.1 + r.scan_step);
    }

    #[test]
    fn agreeing_endpoints_are_no_flip() {
        let control = BetaShape::from_mean_ess(0.12, 2000.0).unwrap();
        let model = PipelineModel::identity(arms(control)).unwrap();
        let family = PriorFamily::Mean { arm: None, ess: 2000.0 };
        let err = flip_boundary(&problem(), &model, &report(0, 0, 0), &family, (0.2, 0.5), 101).unwrap_err();
        assert!(matches!(err, DecisionError::NoFlip { .. }));
        assert!(err.to_string().contains("no flip in interval"));
    }

    #[test]
    fn bracket_ends_recommend_different_actions_under_full_posterior() {
        let model = PipelineModel::new(
            arms(BetaShape::UNIFORM),
            vec![StageTransform {
                id: "w".into(),
                stage: Stage::Implementation,
                kind: TransformKind::WithdrawalMix,
                target: TargetArm::Treated,
                priors: BTreeMap::from([("phi".to_string(), ParamPrior::Beta(BetaShape::new(20.0, 80.0).unwrap()))]),
            }],
            None,
        )
        .unwrap();
        let rep = report(200, 30, 20);
        let family = PriorFamily::Mean { arm: None, ess: 300.0 };
        let p = problem();
        let r = flip_boundary(&p, &model, &rep, &family, (0.01, 0.6), 61).unwrap();
        let action_at = |m: f64| {
            let shape = family.shape(m).unwrap();
            let m2 = model.clone().with_population_prior("treated", shape).unwrap();
            let jp = posterior(&m2, &rep, 61).unwrap();
            recommend(&p, &patient_posteriors(&m2, &jp).unwrap()).unwrap().action
        };
        assert_ne!(action_at(r.bracket.0), action_at(r.bracket.1));
    }

    #[test]
    fn reweighting_matches_full_posterior() {
        let model = PipelineModel::new(
            arms(BetaShape::new(3.0, 17.0).unwrap()),
            vec![StageTransform {
                id: "w".into(),
                stage: Stage::Implementation,
                kind: TransformKind::WithdrawalMix,
                target: TargetArm::Treated,
                priors: BTreeMap::from([("phi".to_string(), ParamPrior::Beta(BetaShape::new(5.0, 15.0).unwrap()))]),
            }],
            Some(50.0),
        )
        .unwrap();
        let rep = report(80, 12, 7);
        let surface = LikelihoodSurface::compute(&model, &rep, 41).unwrap();
        let rw = Reweighter::new(&surface, 1, model.patient_relevance_kappa()).unwrap();
        let shape = BetaShape::from_mean_ess(0.3, 40.0).unwrap();
        let q = surface.layout.axes[1].cell_masses(|x| shape.cdf(x));
        let fast = rw.patient_means(&q).unwrap();

        let m2 = model.clone().with_population_prior("treated", shape).unwrap();
        let jp = posterior(&m2, &rep, 41).unwrap();
        let full = patient_posteriors(&m2, &jp).unwrap();
        for (i, name) in ["control", "treated"].iter().enumerate() {
            let slow = full[*name].grid.mean(PATIENT_AXIS).unwrap();
            assert!((fast[i] - slow).abs() < 1e-12, "{name}: {} vs {slow}", fast[i]);
        }
    }

    #[test]
    fn bad_inputs() {
        let model = PipelineModel::identity(arms(BetaShape::UNIFORM)).unwrap();
        let family = PriorFamily::Mean { arm: None, ess: 10.0 };
        let rep = report(0, 0, 0);
        assert!(matches!(
            flip_boundary(&problem(), &model, &rep, &family, (0.5, 0.2), 51),
            Err(DecisionError::BadInterval(_))
        ));
        let ghost = PriorFamily::Mean {
            arm: Some("ghost".into()),
            ess: 10.0,
        };
        assert!(matches!(
            flip_boundary(&problem(), &model, &rep, &ghost, (0.1, 0.2), 51),
            Err(DecisionError::BadFamily(_))
        ));
    }
}
