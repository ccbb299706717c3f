use nalgebra::DMatrix;

use super::warp::WarpState;
use crate::basis::BSplineBasis;
use crate::curves::CurvePanel;
use crate::error::{JcrcError, Result};

/// `Psi_ki`: the mean-curve basis evaluated at `g_ki(t_ij)` for every subject,
/// each under its own group's warp.
pub fn warp_design(panel: &CurvePanel, warps: &WarpState, basis: &BSplineBasis) -> Result<Vec<DMatrix<f64>>> {
    if warps.len() != panel.len() {
        return Err(JcrcError::Validation(format!(
            "warp state has {} subjects, panel has {}",
            warps.len(),
            panel.len()
        )));
    }
    panel
        .curves
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let g = warps.subject_warp(i)?.eval_many(c.times());
            basis.design(&g)
        })
        .collect()
}
