use serde::{Deserialize, Serialize};

use super::generate::{simulate_study1, simulate_study2, SimConfig1, SimConfig2, SimTruth};
use super::metrics::{metric_ari, metric_ca, metric_rand, warp_imse};
use crate::basis::uniform_grid;
use crate::classify::{predict_panel, ClassifierModel};
use crate::config::RunConfig;
use crate::curves::{CurvePanel, TimeMap};
use crate::error::{JcrcError, Result};
use crate::pipeline::fit_all;
use crate::registration::{RegistrationFit, Warp};

/// Points used for the warp error integral.
const WARP_GRID: usize = 1001;

/// Test-set scores of one second-study dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Study2Outcome {
    pub seed: u64,
    pub ca: f64,
    pub ri: f64,
    pub ari: f64,
    /// Accuracy of the logistic fit on the scalar covariate alone.
    pub ca_scalar_only: f64,
    pub k_x: usize,
    pub k_e: usize,
}

/// Estimates from one first-study dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Study1Outcome {
    pub seed: u64,
    /// Intercept on the scale of uncentred curves.
    pub b0: f64,
    pub b1: f64,
    /// `beta_a` on the truth's coefficient grid.
    pub beta: [Vec<f64>; 2],
    pub warp_imse: f64,
}

fn split(data_panel: &CurvePanel, truth: &SimTruth) -> Result<(CurvePanel, CurvePanel)> {
    Ok((
        data_panel.select_ids(&truth.train_ids())?,
        data_panel.select_ids(&truth.test_ids())?,
    ))
}

/// Mean over subjects of `∫ (ĝ_i - g_i)²`, matching subjects by id.
pub fn fitted_warp_imse(fit: &RegistrationFit, truth: &SimTruth) -> Result<f64> {
    let mut est: Vec<Warp> = Vec::new();
    let mut tru: Vec<Warp> = Vec::new();
    for (i, id) in fit.warps.subject_ids.iter().enumerate() {
        let j = truth
            .index_of(id)
            .ok_or_else(|| JcrcError::Validation(format!("subject {id} is not in the truth file")))?;
        est.push(fit.warps.subject_warp(i)?);
        tru.push(truth.warp(j)?);
    }
    warp_imse(&est, &tru, &uniform_grid(WARP_GRID))
}

/// Simulates, fits on the training half, predicts the test half.
pub fn run_study2_replicate(sim: &SimConfig2, cfg: &RunConfig) -> Result<Study2Outcome> {
    let data = simulate_study2(sim)?;
    let (train, test) = split(&data.panel, &data.truth)?;
    let fit = fit_all(&train, cfg, TimeMap::default(), false)?;
    let preds = predict_panel(&fit.registration, &fit.classifier, &test, cfg.predict_max_iter)?;
    let truth = test.require_labels()?;
    let labels: Vec<u8> = preds.iter().map(|p| p.label).collect();
    Ok(Study2Outcome {
        seed: sim.seed,
        ca: metric_ca(&truth, &labels)?,
        ri: metric_rand(&truth, &labels)?,
        ari: metric_ari(&truth, &labels)?,
        ca_scalar_only: scalar_only_accuracy(&fit.classifier, &test, &truth)?,
        k_x: fit.report.k_x,
        k_e: fit.report.k_e,
    })
}

fn scalar_only_accuracy(model: &ClassifierModel, test: &CurvePanel, truth: &[u8]) -> Result<f64> {
    let pred: Vec<u8> = test
        .scalars
        .iter()
        .map(|s| model.scalar_predictor(&s.v).map(|eta| (eta >= 0.0) as u8))
        .collect::<Result<_>>()?;
    metric_ca(truth, &pred)
}

/// Simulates and fits the full panel; the registration groups are the
/// observed labels.
pub fn run_study1_replicate(sim: &SimConfig1, cfg: &RunConfig) -> Result<Study1Outcome> {
    let data = simulate_study1(sim)?;
    let fit = fit_all(&data.panel, cfg, TimeMap::default(), false)?;
    let m = &fit.classifier;
    let grid = &data.truth.beta_grid;
    Ok(Study1Outcome {
        seed: sim.seed,
        b0: m.intercept_uncentred(),
        b1: m.b1[0],
        beta: [
            grid.iter().map(|&t| m.beta(0, t)).collect(),
            grid.iter().map(|&t| m.beta(1, t)).collect(),
        ],
        warp_imse: fitted_warp_imse(&fit.registration, &data.truth)?,
    })
}
