use std::fmt;
use std::str::FromStr;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::detect::{Chi2Config, DetectorBank};
use crate::filter::{EpochOutput, FilterConfig, FilterState};
use crate::motion::{IdmParams, MotionModel, TrajectoryDataset};
use crate::{Error, Result};

use super::roc::{roc_auc, RocResult};

/// The three detector/model combinations compared on every cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// χ² gate on a constant-velocity filter that ignores the leader.
    Chi2NoIdm,
    Chi2Idm,
    OcsvmIdm,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Chi2NoIdm, Scenario::Chi2Idm, Scenario::OcsvmIdm];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Chi2NoIdm => "chi2_no_idm",
            Scenario::Chi2Idm => "chi2_idm",
            Scenario::OcsvmIdm => "ocsvm_idm",
        }
    }

    pub fn uses_idm(self) -> bool {
        self != Scenario::Chi2NoIdm
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown scenario '{s}' (expected chi2_no_idm, chi2_idm or ocsvm_idm)")))
    }
}

/// Filter and detector settings shared by every scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub idm: IdmParams,
    pub filter: FilterConfig,
    /// Gate used for the recovery verdicts of the χ² scenarios.
    pub chi2: Chi2Config,
    /// Leading epochs of the clean training run left out of the OCSVM
    /// training set while the noise estimates settle.
    pub burn_in: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { idm: IdmParams::default(), filter: FilterConfig::default(), chi2: Chi2Config::default(), burn_in: 30 }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.idm.validate()?;
        self.filter.validate()?;
        self.chi2.validate()
    }

    pub fn model(&self, idm: bool) -> MotionModel {
        if idm {
            MotionModel::Idm(self.idm)
        } else {
            MotionModel::ConstantVelocity
        }
    }
}

pub enum Detector<'a> {
    Chi2(Chi2Config),
    Bank(&'a DetectorBank),
    /// Accept every measurement.
    Off,
}

/// Per-epoch output of one pipeline pass. Epoch 0 seeds the filter and is
/// not scored.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub epochs: Vec<EpochOutput>,
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl ScenarioRun {
    pub fn verdicts(&self) -> impl Iterator<Item = bool> + '_ {
        self.epochs.iter().map(|e| e.verdict)
    }

    /// `None` when the label stream has a single class.
    pub fn roc(&self) -> Result<Option<RocResult>> {
        match roc_auc(&self.scores, &self.labels) {
            Ok(r) => Ok(Some(r)),
            Err(Error::SingleClass) => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn auc(&self) -> Result<Option<f64>> {
        Ok(self.roc()?.map(|r| r.auc))
    }
}

/// Filters `ds` with `model` and scores every epoch with `detector`.
/// χ² epochs score `νᵀS⁻¹ν`; bank epochs score the negated decision value
/// of the selected model.
pub fn run_pipeline(
    ds: &TrajectoryDataset,
    model: MotionModel,
    delay: f64,
    filter: &FilterConfig,
    detector: &Detector<'_>,
) -> Result<ScenarioRun> {
    ds.validate()?;
    if ds.len() < 2 {
        return Err(Error::invalid("dataset needs at least two epochs"));
    }
    let mut fs = FilterState::new(model, filter.clone(), ds.dt, delay, ds.follower_meas[0], ds.leader_meas[0])?;
    let mut scorer = match detector {
        Detector::Bank(b) => Some(b.scorer()),
        _ => None,
    };
    let n = ds.len() - 1;
    let mut epochs = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    for k in 1..ds.len() {
        let mut score = 0.0;
        let out = fs.step(ds.follower_meas[k], ds.leader_meas[k], |rec| {
            Ok(match detector {
                Detector::Chi2(gate) => {
                    score = rec.chi2();
                    gate.is_anomalous(score)
                }
                Detector::Bank(_) => {
                    let d = scorer.as_mut().expect("bank scorer").push(&rec.normalized);
                    rec.windowed_average = d.average;
                    score = -d.score;
                    d.anomalous
                }
                Detector::Off => {
                    score = rec.chi2();
                    false
                }
            })
        })?;
        epochs.push(out);
        scores.push(score);
    }
    let labels = (1..ds.len()).map(|k| ds.is_anomalous(k)).collect();
    Ok(ScenarioRun { epochs, scores, labels })
}

pub fn run_scenario(
    scenario: Scenario,
    ds: &TrajectoryDataset,
    delay: f64,
    cfg: &PipelineConfig,
    bank: Option<&DetectorBank>,
) -> Result<ScenarioRun> {
    let detector = match scenario {
        Scenario::OcsvmIdm => Detector::Bank(bank.ok_or_else(|| Error::Detector("scenario ocsvm_idm needs a trained detector bank".into()))?),
        _ => Detector::Chi2(cfg.chi2),
    };
    run_pipeline(ds, cfg.model(scenario.uses_idm()), delay, &cfg.filter, &detector)
}

/// Normalized innovations of the IDM filter over clean data, after the
/// burn-in, for training the detector bank.
pub fn training_innovations(clean: &TrajectoryDataset, delay: f64, cfg: &PipelineConfig) -> Result<Vec<Vector2<f64>>> {
    let run = run_pipeline(clean, cfg.model(true), delay, &cfg.filter, &Detector::Off)?;
    let pts: Vec<Vector2<f64>> = run.epochs.iter().skip(cfg.burn_in).map(|e| e.innovation.normalized).collect();
    if pts.len() < 2 {
        return Err(Error::invalid(format!("burn-in of {} epochs leaves no training data", cfg.burn_in)));
    }
    Ok(pts)
}
