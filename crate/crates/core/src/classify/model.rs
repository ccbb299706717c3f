use log::{info, warn};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fpca::{CoordinateFpca, FpcaModel};
use super::glmm::{fit_glmm, fit_scalar_logit, logistic, unit_deviance, GlmmDesign, GlmmOptions};
use crate::basis::{cross_gram, quad_weights, TruncatedPowerBasis};
use crate::config::RunConfig;
use crate::curves::CurvePanel;
use crate::error::{JcrcError, Result};
use crate::registration::{align_curves, AlignedPanel, RegistrationFit};

/// `J_a[l, s] = ∫ phi_al varphi_s` on the FPCA grid.
pub fn compute_j(fpca: &CoordinateFpca, grid: &[f64], basis: &TruncatedPowerBasis) -> Result<DMatrix<f64>> {
    cross_gram(&fpca.eigenfunctions, &basis.design(grid)?, grid)
}

/// Fitted second-level model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub format_version: u32,
    pub k_x: usize,
    pub k_e: usize,
    pub b0: f64,
    pub b1: Vec<f64>,
    /// Truncated-power coefficients of `beta_1` and `beta_2`.
    pub e: [Vec<f64>; 2],
    pub basis: TruncatedPowerBasis,
    pub sigma_e: f64,
    pub sigma_e_estimated: bool,
    /// False when the `sigma_e` fixed point hit its pass limit.
    pub sigma_e_converged: bool,
    #[serde(with = "crate::serde_mat::vec")]
    pub j: Vec<DMatrix<f64>>,
    pub fpca: FpcaModel,
    /// `[b0, b1...]` of the logistic fit without functional terms.
    pub scalar_only: Vec<f64>,
    pub deviance: f64,
    pub penalized_deviance: f64,
    pub config: RunConfig,
}

impl ClassifierModel {
    pub fn p(&self) -> usize {
        self.b1.len()
    }

    /// `b0 + vᵀ b1 + sum_a p_aᵀ J_a e_a`.
    pub fn linear_predictor(&self, scores: &[Vec<f64>; 2], v: &[f64]) -> Result<f64> {
        if v.len() != self.p() {
            return Err(JcrcError::Validation(format!(
                "classifier expects {} scalar covariates, got {}",
                self.p(),
                v.len()
            )));
        }
        let mut eta = self.b0 + v.iter().zip(&self.b1).map(|(a, b)| a * b).sum::<f64>();
        for a in 0..2 {
            if scores[a].len() != self.k_x {
                return Err(JcrcError::Validation(format!(
                    "expected {} scores, got {}",
                    self.k_x,
                    scores[a].len()
                )));
            }
            let je = &self.j[a] * nalgebra::DVector::from_column_slice(&self.e[a]);
            eta += scores[a].iter().zip(je.iter()).map(|(p, q)| p * q).sum::<f64>();
        }
        Ok(eta)
    }

    /// Scalar-only linear predictor.
    pub fn scalar_predictor(&self, v: &[f64]) -> Result<f64> {
        if v.len() != self.p() {
            return Err(JcrcError::Validation(format!(
                "classifier expects {} scalar covariates, got {}",
                self.p(),
                v.len()
            )));
        }
        Ok(self.scalar_only[0] + v.iter().zip(&self.scalar_only[1..]).map(|(a, b)| a * b).sum::<f64>())
    }

    /// `beta_a(t)`.
    pub fn beta(&self, a: usize, t: f64) -> f64 {
        self.basis.eval_combination(t, &self.e[a])
    }

    /// `beta_a` on the FPCA grid.
    pub fn beta_on_grid(&self, a: usize) -> Vec<f64> {
        self.fpca.grid.iter().map(|&t| self.beta(a, t)).collect()
    }

    /// Intercept on the scale of uncentred curves: `b0 - sum_a ∫ mean_a beta_a`.
    pub fn intercept_uncentred(&self) -> f64 {
        let w = quad_weights(&self.fpca.grid);
        let mut b = self.b0;
        for a in 0..2 {
            let beta = self.beta_on_grid(a);
            b -= (0..w.len()).map(|j| w[j] * self.fpca.coords[a].mean[j] * beta[j]).sum::<f64>();
        }
        b
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: ClassifierModel = serde_json::from_str(s)?;
        if m.format_version != crate::FORMAT_VERSION {
            return Err(JcrcError::Validation(format!(
                "classifier file has format version {}, expected {}",
                m.format_version,
                crate::FORMAT_VERSION
            )));
        }
        if m.j.len() != 2 || m.e.iter().any(|e| e.len() != m.k_e) || m.scalar_only.len() != m.p() + 1 {
            return Err(JcrcError::Validation("classifier file has inconsistent dimensions".into()));
        }
        Ok(m)
    }
}

/// `1 / (1 + exp(-eta))`.
pub fn classify_prob(model: &ClassifierModel, scores: &[Vec<f64>; 2], v: &[f64]) -> Result<f64> {
    Ok(logistic(model.linear_predictor(scores, v)?))
}

/// `[1, v]` rows.
pub(crate) fn scalar_design(panel: &CurvePanel, rows: &[usize]) -> DMatrix<f64> {
    let p = panel.p();
    DMatrix::from_fn(rows.len(), p + 1, |r, j| if j == 0 { 1.0 } else { panel.scalars[rows[r]].v[j - 1] })
}

/// Everything needed to fit the classifier on a subset of an aligned panel.
pub(crate) struct TrainingData<'a> {
    pub panel: &'a CurvePanel,
    pub aligned: &'a AlignedPanel,
    pub labels: Vec<u8>,
    /// Pooled observation times for knot placement.
    pub times: Vec<f64>,
}

impl<'a> TrainingData<'a> {
    pub fn new(panel: &'a CurvePanel, aligned: &'a AlignedPanel) -> Result<Self> {
        if aligned.len() != panel.len() {
            return Err(JcrcError::Validation("aligned panel does not match the curve panel".into()));
        }
        Ok(TrainingData {
            labels: panel.require_labels()?,
            times: panel.pooled_times(),
            panel,
            aligned,
        })
    }

    fn subset_aligned(&self, rows: &[usize]) -> AlignedPanel {
        AlignedPanel {
            grid: self.aligned.grid.clone(),
            subject_ids: rows.iter().map(|&i| self.aligned.subject_ids[i].clone()).collect(),
            curves: rows.iter().map(|&i| self.aligned.curves[i].clone()).collect(),
        }
    }

    /// FPCA with `k_x` components on `rows`.
    pub fn fpca(&self, rows: &[usize], k_x: usize, window: usize) -> Result<FpcaModel> {
        FpcaModel::fit(&self.subset_aligned(rows), k_x, window)
    }

    pub fn scores(&self, fpca: &FpcaModel, rows: &[usize]) -> Result<Vec<[Vec<f64>; 2]>> {
        rows.par_iter().map(|&i| fpca.scores(&self.aligned.curves[i])).collect()
    }

    /// Fits the GLMM on `rows` given an FPCA already truncated to `k_x`.
    pub fn fit(&self, rows: &[usize], fpca: FpcaModel, k_e: usize, cfg: &RunConfig) -> Result<ClassifierModel> {
        let opts = &glmm_options(cfg);
        let basis = TruncatedPowerBasis::from_quantiles(&self.times, k_e)?;
        let j = [
            compute_j(&fpca.coords[0], &fpca.grid, &basis)?,
            compute_j(&fpca.coords[1], &fpca.grid, &basis)?,
        ];
        let scores = self.scores(&fpca, rows)?;
        let functional: Vec<DMatrix<f64>> = (0..2)
            .map(|a| {
                let p = DMatrix::from_fn(rows.len(), fpca.k_x, |r, l| scores[r][a][l]);
                p * &j[a]
            })
            .collect();
        let y: Vec<u8> = rows.iter().map(|&i| self.labels[i]).collect();
        let scalar = scalar_design(self.panel, rows);
        let g = fit_glmm(&GlmmDesign { scalar: scalar.clone(), functional }, &y, opts)?;
        let scalar_only = fit_scalar_logit(&scalar, &y)?;
        let q = scalar.ncols();
        Ok(ClassifierModel {
            format_version: crate::FORMAT_VERSION,
            k_x: fpca.k_x,
            k_e,
            b0: g.beta[0],
            b1: g.beta[1..q].to_vec(),
            e: [g.beta[q..q + k_e].to_vec(), g.beta[q + k_e..q + 2 * k_e].to_vec()],
            basis,
            sigma_e: g.sigma_e,
            sigma_e_estimated: opts.sigma_e.is_none(),
            sigma_e_converged: g.sigma_converged,
            j: j.to_vec(),
            fpca,
            scalar_only,
            deviance: g.deviance,
            penalized_deviance: g.penalized_deviance,
            config: cfg.clone(),
        })
    }

    /// Deviance of `model` on `rows`, curves aligned with their training warps.
    pub fn deviance(&self, model: &ClassifierModel, rows: &[usize]) -> Result<f64> {
        let scores = self.scores(&model.fpca, rows)?;
        let mut dev = 0.0;
        for (r, &i) in rows.iter().enumerate() {
            let eta = model.linear_predictor(&scores[r], &self.panel.scalars[i].v)?;
            dev += unit_deviance(self.labels[i], eta);
        }
        Ok(dev)
    }
}

pub(crate) fn glmm_options(cfg: &RunConfig) -> GlmmOptions {
    GlmmOptions {
        sigma_e: cfg.sigma_e,
        sigma_tol: cfg.sigma_e_tol,
        max_passes: cfg.sigma_e_max_passes,
        ..Default::default()
    }
}

/// Aligns the training panel with its fitted warps, runs FPCA on each
/// coordinate, and fits the penalized logistic model with `k_x` scores and a
/// `k_e`-term coefficient basis.
pub fn fit_classifier(
    reg: &RegistrationFit,
    panel: &CurvePanel,
    k_x: usize,
    k_e: usize,
    cfg: &RunConfig,
) -> Result<ClassifierModel> {
    if k_x < k_e {
        return Err(JcrcError::Validation(format!("k_x ({k_x}) must be >= k_e ({k_e})")));
    }
    let aligned = align_curves(panel, reg)?;
    fit_classifier_aligned(panel, &aligned, k_x, k_e, cfg)
}

/// [`fit_classifier`] on curves that are already aligned.
pub fn fit_classifier_aligned(
    panel: &CurvePanel,
    aligned: &AlignedPanel,
    k_x: usize,
    k_e: usize,
    cfg: &RunConfig,
) -> Result<ClassifierModel> {
    let data = TrainingData::new(panel, aligned)?;
    let rows: Vec<usize> = (0..panel.len()).collect();
    let fpca = data.fpca(&rows, k_x, cfg.smoothing_window)?;
    let model = data.fit(&rows, fpca, k_e, cfg)?;
    info!(
        "classifier: K_x = {k_x}, K_e = {k_e}, sigma_e = {:.4e}, deviance = {:.4}",
        model.sigma_e, model.deviance
    );
    if !model.sigma_e_converged {
        warn!("sigma_e fixed point stopped at its pass limit (sigma_e = {:.3e})", model.sigma_e);
    }
    Ok(model)
}

/// In-sample class-1 probabilities of the training subjects, each aligned
/// with its own fitted warp.
pub fn training_probabilities(model: &ClassifierModel, panel: &CurvePanel, aligned: &AlignedPanel) -> Result<Vec<f64>> {
    aligned
        .curves
        .par_iter()
        .zip(&panel.scalars)
        .map(|(c, s)| classify_prob(model, &model.fpca.scores(c)?, &s.v))
        .collect()
}
