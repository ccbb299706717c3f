use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::means::{CovBlocks, MeanWeights};
use super::warp::{embed, interior, Warp, WarpState};
use crate::basis::BSplineBasis;
use crate::curves::CurvePanel;
use crate::error::{JcrcError, Result};
use crate::gp::{matern_cov, CovSpec, KernelKind, MaternParams, SpdFactor};
use crate::optim::{bfgs_fd, BfgsOptions};

/// Warp covariance `H` on the interior anchors.
#[derive(Debug, Clone)]
pub struct WarpPrior {
    hinv: DMatrix<f64>,
    lower: DMatrix<f64>,
    logdet: f64,
}

impl WarpPrior {
    pub fn matern(anchors: &[f64], rho_h: &MaternParams) -> Result<Self> {
        let inner = &anchors[1..anchors.len() - 1];
        let spec = CovSpec {
            kind: KernelKind::Matern,
            params: *rho_h,
        };
        Self::from_matrix(&matern_cov(&spec, inner, inner)?)
    }

    pub fn from_matrix(h: &DMatrix<f64>) -> Result<Self> {
        let f = SpdFactor::new(h)?;
        let m = h.nrows();
        let hinv = f.solve(&DMatrix::identity(m, m));
        Ok(WarpPrior {
            hinv: (&hinv + hinv.transpose()) * 0.5,
            lower: f.lower(),
            logdet: f.log_det(),
        })
    }

    pub fn dim(&self) -> usize {
        self.hinv.nrows()
    }

    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    /// Cholesky factor `L` with `H = L Lᵀ`.
    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    /// `wᵀ H⁻¹ w` for interior offsets `w`.
    pub fn penalty(&self, w: &[f64]) -> f64 {
        let v = DVector::from_column_slice(w);
        (&self.hinv * &v).dot(&v)
    }
}

/// Everything held fixed while the warps move.
pub struct WarpContext<'a> {
    pub panel: &'a CurvePanel,
    pub basis: &'a BSplineBasis,
    pub blocks: &'a CovBlocks,
    pub prior: &'a WarpPrior,
    pub means: &'a MeanWeights,
}

/// Result of one warp step.
#[derive(Debug, Clone)]
pub struct WarpFit {
    pub warps: WarpState,
    /// Subjects whose optimizer stopped at the evaluation limit.
    pub hit_max_evals: Vec<bool>,
    pub objective_before: f64,
    pub objective_after: f64,
}

impl WarpContext<'_> {
    /// `sum_a r_aᵀ A_i⁻¹ r_a` for subject `i` under full anchor offsets
    /// `offsets` and the means of group `group`; infinite when the warp is
    /// not increasing.
    pub(crate) fn subject_quad(&self, i: usize, group: u8, offsets: &[f64], anchors: &[f64]) -> f64 {
        let Some(w) = Warp::from_offsets(anchors, offsets) else {
            return f64::INFINITY;
        };
        let c1 = self.means.coefs(0, group);
        let c2 = self.means.coefs(1, group);
        subject_quad_with(self.basis, &w, &self.panel.curves[i], [&c1, &c2], self.blocks.ainv(i))
    }

    /// Warp part of the penalized criterion:
    /// `sum_i sum_a ‖x_ai - Psi_i(c_a + d_ak)‖²_{I+S} + 2 sum_i ‖w_ki‖²_H`.
    pub fn objective(&self, warps: &WarpState) -> f64 {
        let terms: Vec<f64> = (0..warps.len())
            .into_par_iter()
            .map(|i| {
                let g = warps.groups[i];
                self.subject_quad(i, g, &warps.offsets(g, i), &warps.anchors)
                    + 2.0 * self.prior.penalty(interior(&warps.w_random[i]))
            })
            .collect();
        terms.iter().sum()
    }
}

pub(crate) fn subject_quad_with(
    basis: &BSplineBasis,
    warp: &Warp,
    curve: &crate::curves::SubjectCurve,
    coefs: [&[f64]; 2],
    ainv: &DMatrix<f64>,
) -> f64 {
    let t = curve.times();
    let n = t.len();
    let mut r = DMatrix::zeros(n, 2);
    let mut row = vec![0.0; basis.dim()];
    for j in 0..n {
        if basis.eval_row(warp.eval(t[j]), &mut row).is_err() {
            return f64::INFINITY;
        }
        for a in 0..2 {
            let fit: f64 = row.iter().zip(coefs[a]).map(|(p, c)| p * c).sum();
            r[(j, a)] = curve.coord(a)[j] - fit;
        }
    }
    let ar = ainv * &r;
    ar.iter().zip(r.iter()).map(|(x, y)| x * y).sum()
}

/// Minimizes the warp criterion over the group offsets `w_k` (all subjects
/// of a group together) and then over each subject's `w_ki`, by BFGS with
/// finite-difference gradients. Non-increasing warps are infeasible. The
/// within-group mean of the subject offsets is moved into `w_k` at the end.
pub fn fit_warps(ctx: &WarpContext<'_>, init: &WarpState, opts: &BfgsOptions) -> Result<WarpFit> {
    if init.len() != ctx.panel.len() {
        return Err(JcrcError::Validation(format!(
            "warp state has {} subjects, panel has {}",
            init.len(),
            ctx.panel.len()
        )));
    }
    let objective_before = ctx.objective(init);
    let mut warps = init.clone();
    let anchors = warps.anchors.clone();
    let n = warps.len();
    let mut hit = vec![false; n];
    let m = warps.n_interior();
    if m == 0 {
        return Ok(WarpFit {
            warps,
            hit_max_evals: hit,
            objective_before,
            objective_after: objective_before,
        });
    }

    for k in 0..2u8 {
        let members: Vec<usize> = (0..n).filter(|&i| warps.groups[i] == k).collect();
        if members.is_empty() {
            continue;
        }
        let ws = &warps;
        let f = |v: &[f64]| -> f64 {
            let fixed = embed(v);
            let terms: Vec<f64> = members
                .par_iter()
                .map(|&i| {
                    let off: Vec<f64> = fixed.iter().zip(&ws.w_random[i]).map(|(a, b)| a + b).collect();
                    ctx.subject_quad(i, k, &off, &anchors)
                })
                .collect();
            terms.iter().sum()
        };
        let res = bfgs_fd(f, interior(&warps.w_fixed[k as usize]), opts);
        warps.w_fixed[k as usize] = embed(&res.x);
    }

    let results: Vec<(Vec<f64>, bool)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let k = warps.groups[i];
            let fixed = &warps.w_fixed[k as usize];
            let f = |v: &[f64]| -> f64 {
                let off: Vec<f64> = fixed.iter().zip(embed(v)).map(|(a, b)| a + b).collect();
                ctx.subject_quad(i, k, &off, &anchors) + 2.0 * ctx.prior.penalty(v)
            };
            let res = bfgs_fd(f, interior(&warps.w_random[i]), opts);
            let capped = !res.converged && res.evals >= opts.max_evals;
            (embed(&res.x), capped)
        })
        .collect();
    for (i, (w, capped)) in results.into_iter().enumerate() {
        warps.w_random[i] = w;
        hit[i] = capped;
    }
    warps.center();
    for i in 0..n {
        warps.subject_warp(i)?;
    }
    let objective_after = ctx.objective(&warps);
    Ok(WarpFit {
        warps,
        hit_max_evals: hit,
        objective_before,
        objective_after,
    })
}
