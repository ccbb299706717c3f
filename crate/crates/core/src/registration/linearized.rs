use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::fit::VarianceParams;
use super::means::{CovBlocks, MeanWeights};
use super::nonlinear::WarpPrior;
use super::warp::{interior, Warp, WarpState};
use crate::basis::BSplineBasis;
use crate::curves::CurvePanel;
use crate::error::{JcrcError, Result};
use crate::gp::{profile_loglik_parts, MaternParams, SpdFactor};
use crate::optim::{nelder_mead, NelderMeadOptions};

/// First-order expansion of the mean curves around the current warps:
/// `x_ai ≈ G_ai + B_ai (w_ki - w0_i)`.
#[derive(Debug, Clone)]
pub struct Linearization {
    /// `fitted[a][i]`: `tau_ak(g_ki(t_i))`.
    pub fitted: Vec<Vec<DVector<f64>>>,
    /// `jacobian[a][i]`: `n_i x m` block, derivative of the fitted mean with
    /// respect to the interior random offsets.
    pub jacobian: Vec<Vec<DMatrix<f64>>>,
    /// Current interior random offsets.
    pub w0: Vec<DVector<f64>>,
    /// `resid[a][i] = x_ai - G_ai + B_ai w0_i`, distributed as
    /// `N(0, sigma² (I + S_i + B_ai H B_aiᵀ))` under the linear model.
    pub resid: Vec<Vec<DVector<f64>>>,
}

impl Linearization {
    /// The stacked block-diagonal Jacobian of coordinate `a`.
    pub fn dense_jacobian(&self, a: usize) -> DMatrix<f64> {
        let rows: usize = self.jacobian[a].iter().map(|b| b.nrows()).sum();
        let cols: usize = self.jacobian[a].iter().map(|b| b.ncols()).sum();
        let mut out = DMatrix::zeros(rows, cols);
        let (mut r, mut c) = (0, 0);
        for b in &self.jacobian[a] {
            out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
            r += b.nrows();
            c += b.ncols();
        }
        out
    }
}

/// Result of the variance step.
#[derive(Debug, Clone)]
pub struct VarianceFit {
    pub vars: VarianceParams,
    pub loglik_start: f64,
    pub loglik: f64,
    pub evals: usize,
}

/// Builds `G_a`, `B_a` and `w0`. The anchor sensitivity of `g` uses central
/// differences of step `fd_step`; the derivative of the mean curve is exact.
pub fn build_linearization(
    panel: &CurvePanel,
    means: &MeanWeights,
    warps: &WarpState,
    basis: &BSplineBasis,
    fd_step: f64,
) -> Result<Linearization> {
    let m = warps.n_interior();
    let anchors = &warps.anchors;
    let per: Vec<Result<[(DVector<f64>, DMatrix<f64>, DVector<f64>); 2]>> = (0..panel.len())
        .into_par_iter()
        .map(|i| {
            let k = warps.groups[i];
            let curve = &panel.curves[i];
            let t = curve.times();
            let n = t.len();
            let off = warps.offsets(k, i);
            let w = warps.warp(k, i)?;
            let g = w.eval_many(t);
            // dg[j, l]
            let mut dg = DMatrix::zeros(n, m);
            for l in 0..m {
                let mut up = off.clone();
                let mut dn = off.clone();
                up[l + 1] += fd_step;
                dn[l + 1] -= fd_step;
                let wu = Warp::from_offsets(anchors, &up);
                let wd = Warp::from_offsets(anchors, &dn);
                for j in 0..n {
                    dg[(j, l)] = match (&wu, &wd) {
                        (Some(u), Some(d)) => (u.eval(t[j]) - d.eval(t[j])) / (2.0 * fd_step),
                        (Some(u), None) => (u.eval(t[j]) - g[j]) / fd_step,
                        (None, Some(d)) => (g[j] - d.eval(t[j])) / fd_step,
                        (None, None) => {
                            return Err(JcrcError::Numerical(format!(
                                "warp of subject {} has no feasible neighbourhood",
                                curve.subject_id
                            )))
                        }
                    };
                }
            }
            let w0 = DVector::from_column_slice(interior(&warps.w_random[i]));
            let mut out: Vec<(DVector<f64>, DMatrix<f64>, DVector<f64>)> = Vec::with_capacity(2);
            for a in 0..2 {
                let coefs = means.coefs(a, k);
                let mut fitted = DVector::zeros(n);
                let mut jac = DMatrix::zeros(n, m);
                for j in 0..n {
                    fitted[j] = basis.eval_combination(g[j], &coefs)?;
                    let slope = basis.deriv_combination(g[j], &coefs)?;
                    for l in 0..m {
                        jac[(j, l)] = slope * dg[(j, l)];
                    }
                }
                let resid = DVector::from_column_slice(curve.coord(a)) - &fitted + &jac * &w0;
                out.push((fitted, jac, resid));
            }
            let b = out.pop().unwrap();
            let a = out.pop().unwrap();
            Ok([a, b])
        })
        .collect();
    let mut lin = Linearization {
        fitted: vec![Vec::new(), Vec::new()],
        jacobian: vec![Vec::new(), Vec::new()],
        w0: Vec::new(),
        resid: vec![Vec::new(), Vec::new()],
    };
    for (i, r) in per.into_iter().enumerate() {
        let pair = r?;
        lin.w0.push(DVector::from_column_slice(interior(&warps.w_random[i])));
        for (a, (f, j, e)) in pair.into_iter().enumerate() {
            lin.fitted[a].push(f);
            lin.jacobian[a].push(j);
            lin.resid[a].push(e);
        }
    }
    Ok(lin)
}

/// Profiled log-likelihood of the linearized model, summed over both
/// coordinates: `resid_ai ~ N(0, sigma² (I + S_i + B_ai H B_aiᵀ))`.
/// `None` drops the corresponding covariance block. Returns `(loglik, sigma²)`.
pub fn linearized_loglik(
    panel: &CurvePanel,
    lin: &Linearization,
    anchors: &[f64],
    rho_s: Option<&MaternParams>,
    rho_h: Option<&MaternParams>,
) -> Result<(f64, f64)> {
    let blocks = match rho_s {
        Some(p) => CovBlocks::matern(panel, p)?,
        None => CovBlocks::identity(panel),
    };
    let m = anchors.len().saturating_sub(2);
    let lh = match rho_h {
        Some(p) if m > 0 => Some(WarpPrior::matern(anchors, p)?.lower().clone()),
        _ => None,
    };
    let mut quad = 0.0;
    let mut logdet = 0.0;
    let mut dim = 0usize;
    for (u, subjects) in blocks.groups() {
        if subjects.is_empty() {
            continue;
        }
        let ainv = blocks.unique_ainv(u);
        let n = ainv.nrows();
        let width = m + 1;
        // columns: for each subject and coordinate, [B_ai | r_ai]
        let mut stack = DMatrix::zeros(n, subjects.len() * 2 * width);
        for (s, &i) in subjects.iter().enumerate() {
            for a in 0..2 {
                let col = (s * 2 + a) * width;
                stack.view_mut((0, col), (n, m)).copy_from(&lin.jacobian[a][i]);
                stack.column_mut(col + m).copy_from(&lin.resid[a][i]);
            }
        }
        let weighted = ainv * &stack;
        for s in 0..subjects.len() {
            for a in 0..2 {
                let col = (s * 2 + a) * width;
                let b = stack.columns(col, m);
                let ab = weighted.columns(col, m);
                let r = stack.column(col + m);
                let ar = weighted.column(col + m);
                let q0 = r.dot(&ar);
                logdet += blocks.unique_logdet(u);
                dim += n;
                match &lh {
                    Some(l) => {
                        let p = b.transpose() * ab;
                        let z = l.transpose() * (b.transpose() * ar);
                        let mut mm = l.transpose() * p * l;
                        for d in 0..m {
                            mm[(d, d)] += 1.0;
                        }
                        let f = SpdFactor::new(&mm)?;
                        quad += q0 - f.mahalanobis(&z);
                        logdet += f.log_det();
                    }
                    None => quad += q0,
                }
            }
        }
    }
    if dim == 0 {
        return Err(JcrcError::Validation("no observations".into()));
    }
    Ok(profile_loglik_parts(quad.max(0.0), logdet, dim))
}

const AMP_BOUNDS: (f64, f64) = (1e-8, 1e8);
const RANGE_BOUNDS: (f64, f64) = (1e-3, 1e2);

fn in_bounds(v: f64, (lo, hi): (f64, f64)) -> bool {
    v >= lo && v <= hi
}

/// Maximizes [`linearized_loglik`] over the amplitudes and ranges of `S` and
/// `H` by Nelder–Mead in log space; smoothness stays at its starting value.
pub fn fit_variance(
    panel: &CurvePanel,
    lin: &Linearization,
    anchors: &[f64],
    start: &VarianceParams,
    max_evals: usize,
) -> Result<VarianceFit> {
    let unpack = |x: &[f64]| -> Option<(MaternParams, MaternParams)> {
        let e: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        if !(in_bounds(e[0], AMP_BOUNDS)
            && in_bounds(e[1], RANGE_BOUNDS)
            && in_bounds(e[2], AMP_BOUNDS)
            && in_bounds(e[3], RANGE_BOUNDS))
        {
            return None;
        }
        Some((
            MaternParams {
                amplitude: e[0],
                range: e[1],
                smoothness: start.rho_s.smoothness,
            },
            MaternParams {
                amplitude: e[2],
                range: e[3],
                smoothness: start.rho_h.smoothness,
            },
        ))
    };
    let objective = |x: &[f64]| -> f64 {
        match unpack(x) {
            Some((s, h)) => match linearized_loglik(panel, lin, anchors, Some(&s), Some(&h)) {
                Ok((ll, _)) if ll.is_finite() => -ll,
                _ => f64::INFINITY,
            },
            None => f64::INFINITY,
        }
    };
    let x0 = [
        start.rho_s.amplitude.ln(),
        start.rho_s.range.ln(),
        start.rho_h.amplitude.ln(),
        start.rho_h.range.ln(),
    ];
    let (ll0, _) = linearized_loglik(panel, lin, anchors, Some(&start.rho_s), Some(&start.rho_h))?;
    let res = nelder_mead(
        objective,
        &x0,
        &NelderMeadOptions {
            max_evals,
            ..Default::default()
        },
    );
    if !res.f.is_finite() {
        return Err(JcrcError::Numerical(
            "variance likelihood is not finite anywhere on the search simplex".into(),
        ));
    }
    let (rho_s, rho_h) = unpack(&res.x).expect("best point is feasible");
    let (ll, s2) = linearized_loglik(panel, lin, anchors, Some(&rho_s), Some(&rho_h))?;
    Ok(VarianceFit {
        vars: VarianceParams {
            sigma: s2.sqrt(),
            rho_s,
            rho_h,
        },
        loglik_start: ll0,
        loglik: ll,
        evals: res.evals,
    })
}
