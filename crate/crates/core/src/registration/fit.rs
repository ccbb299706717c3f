use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use super::linearized::{build_linearization, fit_variance};
use super::means::{center_deviations, estimate_c_with, estimate_d_raw_with, residual_quad, subject_designs, CovBlocks, MeanWeights};
use super::nonlinear::{fit_warps, WarpContext, WarpPrior};
use super::warp::{interior, WarpState};
use crate::basis::BSplineBasis;
use crate::config::RunConfig;
use crate::curves::{CurvePanel, TimeMap};
use crate::error::{JcrcError, Result};
use crate::gp::{MaternParams, SIGMA2_FLOOR};
use crate::optim::BfgsOptions;

/// Noise SD and the two Matérn triples (amplitudes in units of `sigma²`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceParams {
    pub sigma: f64,
    pub rho_s: MaternParams,
    pub rho_h: MaternParams,
}

/// Fitted first-level model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegistrationFit {
    pub format_version: u32,
    pub basis: BSplineBasis,
    pub warps: WarpState,
    pub means: MeanWeights,
    pub vars: VarianceParams,
    pub ridge_lambda: f64,
    /// Penalized objective after the initial step and after each outer iteration.
    pub trace: Vec<f64>,
    pub outer_iterations: usize,
    pub converged: bool,
    /// Subjects whose last warp optimization stopped at the evaluation limit.
    pub warp_flags: Vec<String>,
    /// Map applied to raw observation times before fitting.
    pub time_map: TimeMap,
    pub config: RunConfig,
}

impl RegistrationFit {
    /// Group-`k` mean of coordinate `a` at aligned time `t`.
    pub fn mean_curve(&self, a: usize, k: u8, t: f64) -> Result<f64> {
        self.basis.eval_combination(t, &self.means.coefs(a, k))
    }

    pub fn warp_prior(&self) -> Result<WarpPrior> {
        WarpPrior::matern(&self.warps.anchors, &self.vars.rho_h)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let fit: RegistrationFit = serde_json::from_str(s)?;
        if fit.format_version != crate::FORMAT_VERSION {
            return Err(JcrcError::Validation(format!(
                "registration file has format version {}, expected {}",
                fit.format_version,
                crate::FORMAT_VERSION
            )));
        }
        Ok(fit)
    }
}

/// Profiled penalized criterion of the nonlinear model
///
/// `M ln(Q/M) + M + sum_a sum_i ln det(I + S_i) + 2 N ln det H`
///
/// with `Q = sum_a sum_i ‖r_ai‖²_{I+S_i} + 2 sum_i ‖w_ki‖²_H + λ sum ‖d_ak‖²`
/// and `M = 2 sum_i n_i + 2 N m`. This is minus twice the log-likelihood at
/// the optimal noise variance `Q/M`, up to a constant.
pub fn penalized_objective(
    panel: &CurvePanel,
    basis: &BSplineBasis,
    warps: &WarpState,
    means: &MeanWeights,
    blocks: &CovBlocks,
    prior: &WarpPrior,
    lambda: f64,
) -> Result<(f64, f64)> {
    let designs = subject_designs(panel, warps, blocks, basis)?;
    let resid = residual_quad(panel, &warps.groups, &designs, blocks, means);
    let pen: f64 = warps.w_random.iter().map(|w| prior.penalty(interior(w))).sum();
    let q = resid + 2.0 * pen + lambda * means.d_norm2();
    let n = panel.len();
    let m = warps.n_interior();
    let big_m = (2 * panel.curves.iter().map(|c| c.grid.len()).sum::<usize>() + 2 * n * m) as f64;
    let logdet: f64 = 2.0 * (0..n).map(|i| blocks.logdet(i)).sum::<f64>() + 2.0 * n as f64 * prior.logdet();
    let s2 = (q / big_m).max(SIGMA2_FLOOR);
    Ok((big_m * s2.ln() + big_m + logdet, s2))
}

struct State {
    warps: WarpState,
    means: MeanWeights,
    vars: VarianceParams,
    blocks: CovBlocks,
    prior: WarpPrior,
    phi: f64,
    s2: f64,
}

fn means_step(panel: &CurvePanel, basis: &BSplineBasis, st: &State, lambda: f64) -> Result<MeanWeights> {
    let designs = subject_designs(panel, &st.warps, &st.blocks, basis)?;
    let c = estimate_c_with(panel, &designs)?;
    let d = estimate_d_raw_with(panel, &st.warps.groups, &designs, &c, lambda)?;
    let mut m = MeanWeights { c, d };
    center_deviations(&mut m);
    Ok(m)
}

fn variance_step(panel: &CurvePanel, basis: &BSplineBasis, st: &mut State, cfg: &RunConfig) -> Result<bool> {
    let lin = build_linearization(panel, &st.means, &st.warps, basis, cfg.jacobian_fd_step)?;
    let vf = match fit_variance(panel, &lin, &st.warps.anchors, &st.vars, cfg.variance_max_evals) {
        Ok(v) => v,
        Err(e) if e.is_numerical() => {
            warn!("variance step skipped: {e}");
            return Ok(false);
        }
        Err(e) => return Err(e),
    };
    let (blocks, prior) = match (
        CovBlocks::matern(panel, &vf.vars.rho_s),
        WarpPrior::matern(&st.warps.anchors, &vf.vars.rho_h),
    ) {
        (Ok(b), Ok(p)) => (b, p),
        _ => return Ok(false),
    };
    let (phi, s2) = penalized_objective(panel, basis, &st.warps, &st.means, &blocks, &prior, cfg.ridge_lambda)?;
    debug!(
        "variance step: loglik {:.4} -> {:.4}, objective {:.6} -> {:.6}",
        vf.loglik_start, vf.loglik, st.phi, phi
    );
    if phi <= st.phi {
        st.vars = vf.vars;
        st.blocks = blocks;
        st.prior = prior;
        st.phi = phi;
        st.s2 = s2;
        Ok(true)
    } else {
        Ok(false)
    }
}

/// Fits the registration model by alternating (i) the mean weights, (ii) the
/// fixed and random warps and (iii) the variance parameters of the
/// linearized model. A step is kept only if it does not increase
/// [`penalized_objective`], so the trace never goes up. Stops when the
/// relative change per iteration falls below `outer_tol` or after
/// `max_outer` iterations.
pub fn fit_registration(panel: &CurvePanel, cfg: &RunConfig) -> Result<RegistrationFit> {
    fit_registration_mapped(panel, cfg, TimeMap::default())
}

/// As [`fit_registration`], recording the time map that produced the panel.
pub fn fit_registration_mapped(panel: &CurvePanel, cfg: &RunConfig, time_map: TimeMap) -> Result<RegistrationFit> {
    cfg.validate()?;
    let groups = panel.require_labels()?;
    let basis = BSplineBasis::uniform(cfg.bspline_order, cfg.n_mean_knots)?;
    let ids: Vec<String> = panel.ids().iter().map(|s| s.to_string()).collect();
    let warps = WarpState::zeros(&cfg.anchors, ids, groups);
    let blocks = CovBlocks::matern(panel, &cfg.rho_s)?;
    let prior = WarpPrior::matern(&cfg.anchors, &cfg.rho_h)?;
    let lambda = cfg.ridge_lambda;
    let mut st = State {
        warps,
        means: MeanWeights::zeros(basis.dim()),
        vars: VarianceParams {
            sigma: 1.0,
            rho_s: cfg.rho_s,
            rho_h: cfg.rho_h,
        },
        blocks,
        prior,
        phi: f64::INFINITY,
        s2: 1.0,
    };
    st.means = means_step(panel, &basis, &st, lambda)?;
    let (phi, s2) = penalized_objective(panel, &basis, &st.warps, &st.means, &st.blocks, &st.prior, lambda)?;
    st.phi = phi;
    st.s2 = s2;
    if cfg.estimate_variance {
        variance_step(panel, &basis, &mut st, cfg)?;
    }
    let mut trace = vec![st.phi];
    info!("registration start: objective {:.6}", st.phi);

    let bfgs = BfgsOptions {
        fd_step: cfg.warp_fd_step,
        max_evals: cfg.warp_max_evals,
        ..Default::default()
    };
    let mut converged = false;
    let mut iterations = 0;
    let mut flags = vec![false; panel.len()];
    for it in 1..=cfg.max_outer {
        iterations = it;
        let prev = st.phi;

        let means = means_step(panel, &basis, &st, lambda)?;
        let (phi, s2) = penalized_objective(panel, &basis, &st.warps, &means, &st.blocks, &st.prior, lambda)?;
        if phi <= st.phi {
            st.means = means;
            st.phi = phi;
            st.s2 = s2;
        }

        let ctx = WarpContext {
            panel,
            basis: &basis,
            blocks: &st.blocks,
            prior: &st.prior,
            means: &st.means,
        };
        let wf = fit_warps(&ctx, &st.warps, &bfgs)?;
        let (phi, s2) = penalized_objective(panel, &basis, &wf.warps, &st.means, &st.blocks, &st.prior, lambda)?;
        if phi <= st.phi {
            st.warps = wf.warps;
            st.phi = phi;
            st.s2 = s2;
            flags = wf.hit_max_evals;
        }

        if cfg.estimate_variance {
            variance_step(panel, &basis, &mut st, cfg)?;
        }
        trace.push(st.phi);
        let rel = (prev - st.phi).abs() / st.phi.abs().max(1.0);
        debug!("outer iteration {it}: objective {:.6} (relative change {rel:.2e})", st.phi);
        if rel < cfg.outer_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!("registration stopped after {iterations} outer iterations without meeting the tolerance");
    }
    let warp_flags: Vec<String> = flags
        .iter()
        .zip(&st.warps.subject_ids)
        .filter(|(f, _)| **f)
        .map(|(_, id)| id.clone())
        .collect();
    if !warp_flags.is_empty() {
        warn!("{} warp optimizations hit the evaluation limit", warp_flags.len());
    }
    st.vars.sigma = st.s2.sqrt();
    Ok(RegistrationFit {
        format_version: crate::FORMAT_VERSION,
        basis,
        warps: st.warps,
        means: st.means,
        vars: st.vars,
        ridge_lambda: lambda,
        trace,
        outer_iterations: iterations,
        converged,
        warp_flags,
        time_map,
        config: cfg.clone(),
    })
}
