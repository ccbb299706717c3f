use log::debug;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{JcrcError, Result};

/// Ridge on unpenalized non-intercept coefficients. Keeps separable or
/// all-zero directions finite without visibly moving regular fits.
const FIXED_RIDGE: f64 = 1e-8;
const SIGMA2_MIN: f64 = 1e-12;
const SIGMA2_MAX: f64 = 1e12;

pub(crate) fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `-2 log-likelihood` of one Bernoulli outcome at linear predictor `eta`.
pub(crate) fn unit_deviance(y: u8, eta: f64) -> f64 {
    // log(1 + e^eta) - y * eta, computed stably
    let softplus = if eta > 0.0 { eta + (-eta).exp().ln_1p() } else { eta.exp().ln_1p() };
    2.0 * (softplus - y as f64 * eta)
}

/// Columns of the second-level design.
#[derive(Debug, Clone)]
pub struct GlmmDesign {
    /// `[1, v]`, `N × (p + 1)`.
    pub scalar: DMatrix<f64>,
    /// `P_a J_a`, `N × K_e` each. Columns from the third on carry the
    /// random effects.
    pub functional: Vec<DMatrix<f64>>,
}

impl GlmmDesign {
    fn full(&self) -> Result<(DMatrix<f64>, Vec<bool>)> {
        let n = self.scalar.nrows();
        if self.functional.iter().any(|f| f.nrows() != n) {
            return Err(JcrcError::Validation("design blocks have different row counts".into()));
        }
        let cols = self.scalar.ncols() + self.functional.iter().map(|f| f.ncols()).sum::<usize>();
        let mut x = DMatrix::zeros(n, cols);
        let mut pen = vec![false; cols];
        x.columns_mut(0, self.scalar.ncols()).copy_from(&self.scalar);
        let mut at = self.scalar.ncols();
        for f in &self.functional {
            x.columns_mut(at, f.ncols()).copy_from(f);
            for l in 2..f.ncols() {
                pen[at + l] = true;
            }
            at += f.ncols();
        }
        Ok((x, pen))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GlmmOptions {
    /// Fixed random-effect SD; estimated when `None`.
    pub sigma_e: Option<f64>,
    pub sigma_tol: f64,
    pub max_passes: usize,
    pub max_irls: usize,
}

impl Default for GlmmOptions {
    fn default() -> Self {
        GlmmOptions {
            sigma_e: None,
            sigma_tol: 1e-5,
            max_passes: 50,
            max_irls: 200,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlmmFit {
    /// Coefficients in design-column order.
    pub beta: Vec<f64>,
    pub sigma_e: f64,
    /// `-2 log L`.
    pub deviance: f64,
    /// Deviance plus `|e_pen|² / sigma_e²`.
    pub penalized_deviance: f64,
    /// Effective degrees of freedom of the penalized block.
    pub edf_penalized: f64,
    /// Number of `sigma_e` updates.
    pub passes: usize,
    pub sigma_converged: bool,
    /// Penalized deviance after each IRLS step of the last pass.
    pub irls_trace: Vec<f64>,
}

struct Irls {
    beta: DVector<f64>,
    pdev: f64,
    dev: f64,
    trace: Vec<f64>,
    edf: f64,
}

fn penalized_deviance(x: &DMatrix<f64>, y: &[u8], beta: &DVector<f64>, d: &[f64]) -> (f64, f64) {
    let eta = x * beta;
    let dev: f64 = eta.iter().zip(y).map(|(&e, &yi)| unit_deviance(yi, e)).sum();
    let pen: f64 = beta.iter().zip(d).map(|(b, di)| di * b * b).sum();
    (dev + pen, dev)
}

fn information(x: &DMatrix<f64>, beta: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let eta = x * beta;
    let mut wx = x.clone();
    let mut p = DVector::zeros(x.nrows());
    for i in 0..x.nrows() {
        p[i] = logistic(eta[i]);
        wx.row_mut(i).scale_mut((p[i] * (1.0 - p[i])).max(1e-12));
    }
    (x.transpose() * wx, p)
}

/// Newton–Raphson with step halving on `deviance + βᵀ diag(d) β`. Each
/// step solves `(XᵀWX + D) δ = Xᵀ(y - p) - Dβ`.
fn irls(x: &DMatrix<f64>, y: &[u8], d: &[f64], pen: &[bool], start: &DVector<f64>, max_iter: usize) -> Result<Irls> {
    let q = x.ncols();
    let yv = DVector::from_iterator(y.len(), y.iter().map(|&v| v as f64));
    let mut beta = start.clone();
    let (mut pdev, mut dev) = penalized_deviance(x, y, &beta, d);
    let mut trace = vec![pdev];
    for _ in 0..max_iter {
        let (mut hess, p) = information(x, &beta);
        let mut score = x.transpose() * (&yv - p);
        for j in 0..q {
            hess[(j, j)] += d[j];
            score[j] -= d[j] * beta[j];
        }
        let chol = hess.cholesky().ok_or_else(|| {
            JcrcError::Numerical("classifier information matrix is not positive definite".into())
        })?;
        let step = chol.solve(&score);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand = &beta + &step * t;
            let (p2, d2) = penalized_deviance(x, y, &cand, d);
            if p2.is_finite() && p2 <= pdev {
                accepted = Some((cand, p2, d2));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, p2, d2)) = accepted else {
            let grad = score.amax();
            if grad < 1e-6 * (1.0 + pdev.abs()) {
                break;
            }
            return Err(JcrcError::Numerical(format!(
                "penalized deviance failed to decrease (gradient {grad:.3e})"
            )));
        };
        let rel = (pdev - p2) / pdev.abs().max(1e-10);
        let moved = step.amax() * t;
        beta = cand;
        pdev = p2;
        dev = d2;
        trace.push(pdev);
        if rel < 1e-14 || moved < 1e-12 {
            break;
        }
    }
    // edf of the penalized block: diagonal of (XᵀWX + D)⁻¹ XᵀWX
    let (xtwx, _) = information(x, &beta);
    let mut hess = xtwx.clone();
    for j in 0..q {
        hess[(j, j)] += d[j];
    }
    let chol = hess
        .cholesky()
        .ok_or_else(|| JcrcError::Numerical("classifier information matrix is not positive definite".into()))?;
    let hat = chol.solve(&xtwx);
    let edf = (0..q).filter(|&j| pen[j]).map(|j| hat[(j, j)]).sum();
    Ok(Irls {
        beta,
        pdev,
        dev,
        trace,
        edf,
    })
}

fn penalty_diag(pen: &[bool], sigma2: f64) -> Vec<f64> {
    pen.iter()
        .enumerate()
        .map(|(j, &p)| if p { 1.0 / sigma2 } else if j == 0 { 0.0 } else { FIXED_RIDGE })
        .collect()
}

/// Penalized logistic regression. The random-effect columns (third and
/// later of each functional block) get ridge weight `1/sigma_e²`; column 0
/// is the unpenalized intercept. Unless `sigma_e` is fixed it is updated
/// between IRLS fits by `sigma_e² = |e_pen|² / edf`.
pub fn fit_glmm(design: &GlmmDesign, y: &[u8], opts: &GlmmOptions) -> Result<GlmmFit> {
    let (x, pen) = design.full()?;
    if y.len() != x.nrows() {
        return Err(JcrcError::Validation(format!("{} labels for {} rows", y.len(), x.nrows())));
    }
    if !y.contains(&0) || !y.contains(&1) {
        return Err(JcrcError::Validation("both classes must be present to fit the classifier".into()));
    }
    if y.iter().any(|&v| v > 1) {
        return Err(JcrcError::Validation("labels must be 0 or 1".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(JcrcError::Validation("design contains non-finite values".into()));
    }
    let any_pen = pen.iter().any(|&p| p);
    let mut sigma2 = opts.sigma_e.map(|s| s * s).unwrap_or(1.0).clamp(SIGMA2_MIN, SIGMA2_MAX);
    let mut beta = DVector::zeros(x.ncols());
    let mut passes = 0;
    let mut sigma_converged = opts.sigma_e.is_some() || !any_pen;
    let mut fit = irls(&x, y, &penalty_diag(&pen, sigma2), &pen, &beta, opts.max_irls)?;
    beta.copy_from(&fit.beta);
    if !sigma_converged {
        while passes < opts.max_passes {
            passes += 1;
            let e2: f64 = pen.iter().zip(beta.iter()).filter(|(p, _)| **p).map(|(_, b)| b * b).sum();
            let next = if fit.edf > 1e-10 { (e2 / fit.edf).clamp(SIGMA2_MIN, SIGMA2_MAX) } else { SIGMA2_MIN };
            let rel = (next.sqrt() - sigma2.sqrt()).abs() / sigma2.sqrt();
            sigma2 = next;
            fit = irls(&x, y, &penalty_diag(&pen, sigma2), &pen, &beta, opts.max_irls)?;
            beta.copy_from(&fit.beta);
            if rel < opts.sigma_tol || sigma2 <= SIGMA2_MIN || sigma2 >= SIGMA2_MAX {
                sigma_converged = true;
                break;
            }
        }
        if !sigma_converged {
            debug!("sigma_e fixed point stopped after {passes} passes without converging");
        }
    }
    Ok(GlmmFit {
        beta: fit.beta.iter().copied().collect(),
        sigma_e: sigma2.sqrt(),
        deviance: fit.dev,
        penalized_deviance: fit.pdev,
        edf_penalized: fit.edf,
        passes,
        sigma_converged,
        irls_trace: fit.trace,
    })
}

/// Plain logistic regression on `[1, v]`, used to start prediction.
pub fn fit_scalar_logit(scalar: &DMatrix<f64>, y: &[u8]) -> Result<Vec<f64>> {
    let design = GlmmDesign {
        scalar: scalar.clone(),
        functional: vec![],
    };
    Ok(fit_glmm(&design, y, &GlmmOptions::default())?.beta)
}
