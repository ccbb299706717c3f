use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fit::RegistrationFit;
use super::warp::Warp;
use crate::basis::uniform_grid;
use crate::curves::{create, CurvePanel, SubjectCurve};
use crate::error::{JcrcError, Result};

/// Curves resampled as `x(g⁻¹(u))` on a common uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedPanel {
    pub grid: Vec<f64>,
    pub subject_ids: Vec<String>,
    /// `curves[i][a]`: coordinate `a` of subject `i` on `grid`.
    pub curves: Vec<[Vec<f64>; 2]>,
}

impl AlignedPanel {
    pub fn len(&self) -> usize {
        self.subject_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subject_ids.is_empty()
    }

    /// All subjects' coordinate `a`, one row per subject.
    pub fn coordinate(&self, a: usize) -> Vec<&[f64]> {
        self.curves.iter().map(|c| c[a].as_slice()).collect()
    }
}

/// Piecewise-linear interpolation of `(t, x)` at `s`, constant beyond the ends.
pub(crate) fn interp_linear(t: &[f64], x: &[f64], s: f64) -> f64 {
    let n = t.len();
    if s <= t[0] {
        return x[0];
    }
    if s >= t[n - 1] {
        return x[n - 1];
    }
    let j = t.partition_point(|&v| v <= s).clamp(1, n - 1);
    let (t0, t1) = (t[j - 1], t[j]);
    let h = (s - t0) / (t1 - t0);
    x[j - 1] + h * (x[j] - x[j - 1])
}

/// Aligns one curve under `warp` onto `grid`.
pub fn align_subject(curve: &SubjectCurve, warp: &Warp, grid: &[f64]) -> [Vec<f64>; 2] {
    let src: Vec<f64> = grid.iter().map(|&u| warp.inverse(u)).collect();
    let t = curve.times();
    let one = |a: usize| src.iter().map(|&s| interp_linear(t, curve.coord(a), s)).collect();
    [one(0), one(1)]
}

/// Aligns every subject with its own fitted warp `g_ki` on a uniform grid of
/// `fit.config.align_grid_size` points.
pub fn align_curves(panel: &CurvePanel, fit: &RegistrationFit) -> Result<AlignedPanel> {
    let grid = uniform_grid(fit.config.align_grid_size);
    let curves: Vec<Result<[Vec<f64>; 2]>> = panel
        .curves
        .par_iter()
        .map(|c| {
            let i = fit.warps.index_of(&c.subject_id).ok_or_else(|| {
                JcrcError::Validation(format!("subject {} is not part of the registration fit", c.subject_id))
            })?;
            Ok(align_subject(c, &fit.warps.subject_warp(i)?, &grid))
        })
        .collect();
    Ok(AlignedPanel {
        subject_ids: panel.ids().iter().map(|s| s.to_string()).collect(),
        curves: curves.into_iter().collect::<Result<_>>()?,
        grid,
    })
}

/// Long format: `subject_id,u,x1,x2`, one row per subject and grid point.
pub fn write_aligned(path: &Path, aligned: &AlignedPanel) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| JcrcError::io(path, e);
    writeln!(w, "subject_id,u,x1,x2").map_err(io)?;
    for (id, c) in aligned.subject_ids.iter().zip(&aligned.curves) {
        for (j, u) in aligned.grid.iter().enumerate() {
            writeln!(w, "{id},{u},{},{}", c[0][j], c[1][j]).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}
