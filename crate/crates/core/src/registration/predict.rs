use nalgebra::DMatrix;

use super::fit::RegistrationFit;
use super::means::inverse_of;
use super::nonlinear::{subject_quad_with, WarpPrior};
use super::warp::{embed, Warp};
use crate::curves::SubjectCurve;
use crate::error::{JcrcError, Result};
use crate::gp::{matern_cov, CovSpec, KernelKind};
use crate::optim::{bfgs_fd, BfgsOptions};

/// Warp of a subject outside the training panel.
#[derive(Debug, Clone)]
pub struct SubjectWarpFit {
    /// Full anchor offsets of the random part, zero at both ends.
    pub w_random: Vec<f64>,
    pub warp: Warp,
    /// `sum_a ‖x_a - tau_ak(g)‖²_{I+S} + 2 ‖w‖²_H` at the returned warp.
    pub objective: f64,
    /// The optimizer failed and the identity random warp was used instead.
    pub degraded: bool,
}

/// A new curve with its weight matrix `(I + S)⁻¹` cached, ready to be warped
/// towards either group.
pub struct NewSubject<'a> {
    fit: &'a RegistrationFit,
    prior: WarpPrior,
    curve: &'a SubjectCurve,
    ainv: DMatrix<f64>,
    opts: BfgsOptions,
}

impl<'a> NewSubject<'a> {
    pub fn new(fit: &'a RegistrationFit, curve: &'a SubjectCurve) -> Result<Self> {
        let t = curve.times();
        let spec = CovSpec {
            kind: KernelKind::Matern,
            params: fit.vars.rho_s,
        };
        let mut a = matern_cov(&spec, t, t)?;
        for j in 0..t.len() {
            a[(j, j)] += 1.0;
        }
        let (ainv, _) = inverse_of(&a)?;
        Ok(NewSubject {
            fit,
            prior: fit.warp_prior()?,
            curve,
            ainv,
            opts: BfgsOptions {
                fd_step: fit.config.warp_fd_step,
                max_evals: fit.config.warp_max_evals,
                ..Default::default()
            },
        })
    }

    fn objective(&self, group: u8, w_random: &[f64]) -> f64 {
        let fixed = &self.fit.warps.w_fixed[group as usize];
        let off: Vec<f64> = fixed.iter().zip(w_random).map(|(a, b)| a + b).collect();
        let Some(warp) = Warp::from_offsets(&self.fit.warps.anchors, &off) else {
            return f64::INFINITY;
        };
        let c1 = self.fit.means.coefs(0, group);
        let c2 = self.fit.means.coefs(1, group);
        let inner = &w_random[1..w_random.len() - 1];
        subject_quad_with(&self.fit.basis, &warp, self.curve, [&c1, &c2], &self.ainv)
            + 2.0 * self.prior.penalty(inner)
    }

    /// Minimizes the criterion over the random offsets under group `group`'s
    /// fixed warp and means, starting from the identity random warp.
    pub fn fit_warp(&self, group: u8) -> Result<SubjectWarpFit> {
        if group > 1 {
            return Err(JcrcError::Validation(format!("group must be 0 or 1, got {group}")));
        }
        let anchors = &self.fit.warps.anchors;
        let zero = vec![0.0; anchors.len()];
        let m = anchors.len() - 2;
        let (w_random, degraded) = if m == 0 {
            (zero.clone(), false)
        } else {
            let res = bfgs_fd(|v| self.objective(group, &embed(v)), &vec![0.0; m], &self.opts);
            if res.f.is_finite() && res.x.iter().all(|v| v.is_finite()) {
                (embed(&res.x), false)
            } else {
                (zero.clone(), true)
            }
        };
        let fixed = &self.fit.warps.w_fixed[group as usize];
        let total: Vec<f64> = fixed.iter().zip(&w_random).map(|(a, b)| a + b).collect();
        let (w_random, warp, degraded) = match Warp::from_offsets(anchors, &total) {
            Some(w) => (w_random, w, degraded),
            None => {
                let w = Warp::from_offsets(anchors, fixed)
                    .ok_or_else(|| JcrcError::NonMonotoneWarp { subject: self.curve.subject_id.clone() })?;
                (zero, w, true)
            }
        };
        let objective = self.objective(group, &w_random);
        Ok(SubjectWarpFit {
            w_random,
            warp,
            objective,
            degraded,
        })
    }
}
