use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::basis::quad_weights;
use crate::error::{JcrcError, Result};
use crate::registration::AlignedPanel;

/// Eigen-decomposition of one coordinate's smoothed covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateFpca {
    /// Sample mean removed before the decomposition.
    pub mean: Vec<f64>,
    /// Non-increasing.
    pub eigenvalues: Vec<f64>,
    /// Column `l` is `phi_l` sampled on the grid, quadrature-orthonormal.
    #[serde(with = "crate::serde_mat")]
    pub eigenfunctions: DMatrix<f64>,
}

impl CoordinateFpca {
    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    /// The leading `k` components.
    pub fn truncate(&self, k: usize) -> Result<Self> {
        if k > self.k() {
            return Err(JcrcError::Validation(format!("cannot keep {k} of {} components", self.k())));
        }
        Ok(CoordinateFpca {
            mean: self.mean.clone(),
            eigenvalues: self.eigenvalues[..k].to_vec(),
            eigenfunctions: self.eigenfunctions.columns(0, k).into_owned(),
        })
    }
}

/// Both coordinates on a shared grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpcaModel {
    pub grid: Vec<f64>,
    pub k_x: usize,
    pub coords: [CoordinateFpca; 2],
}

impl FpcaModel {
    /// Sample means, smoothed covariances and their leading `k_x`
    /// eigenfunctions for both coordinates of `aligned`.
    pub fn fit(aligned: &AlignedPanel, k_x: usize, window: usize) -> Result<Self> {
        let grid = aligned.grid.clone();
        let one = |a: usize| -> Result<CoordinateFpca> {
            let rows = aligned.coordinate(a);
            let cov = smooth_covariance(&rows, window)?;
            let mut c = fpca_decompose(&cov, &grid, k_x)?;
            c.mean = column_mean(&rows);
            Ok(c)
        };
        Ok(FpcaModel {
            k_x,
            coords: [one(0)?, one(1)?],
            grid,
        })
    }

    pub fn truncate(&self, k_x: usize) -> Result<Self> {
        Ok(FpcaModel {
            grid: self.grid.clone(),
            k_x,
            coords: [self.coords[0].truncate(k_x)?, self.coords[1].truncate(k_x)?],
        })
    }

    /// Scores of an aligned curve (both coordinates).
    pub fn scores(&self, curve: &[Vec<f64>; 2]) -> Result<[Vec<f64>; 2]> {
        Ok([
            project_scores(&curve[0], &self.coords[0], &self.grid)?,
            project_scores(&curve[1], &self.coords[1], &self.grid)?,
        ])
    }
}

fn column_mean(rows: &[&[f64]]) -> Vec<f64> {
    let n = rows.len() as f64;
    let g = rows[0].len();
    (0..g).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect()
}

/// Empirical covariance (divisor `N`) of curves sampled on a common grid,
/// smoothed by a centred moving average of width `window` along each
/// diagonal. Near the edges the window shrinks symmetrically.
pub fn smooth_covariance(rows: &[&[f64]], window: usize) -> Result<DMatrix<f64>> {
    if rows.len() < 2 {
        return Err(JcrcError::Validation(format!(
            "covariance needs at least 2 curves, got {}",
            rows.len()
        )));
    }
    if window == 0 || window % 2 == 0 {
        return Err(JcrcError::Validation(format!("smoothing window must be odd, got {window}")));
    }
    let g = rows[0].len();
    if rows.iter().any(|r| r.len() != g) {
        return Err(JcrcError::Validation("curves are not on a common grid".into()));
    }
    let mean = column_mean(rows);
    let centred = DMatrix::from_fn(rows.len(), g, |i, j| rows[i][j] - mean[j]);
    let raw = (centred.transpose() * &centred) / rows.len() as f64;

    let half = (window / 2) as isize;
    let gi = g as isize;
    let mut out = DMatrix::zeros(g, g);
    for s in 0..gi {
        for t in 0..gi {
            let h = half.min(s.min(t)).min((gi - 1 - s).min(gi - 1 - t));
            let mut acc = 0.0;
            for d in -h..=h {
                acc += raw[((s + d) as usize, (t + d) as usize)];
            }
            out[(s as usize, t as usize)] = acc / (2 * h + 1) as f64;
        }
    }
    Ok((&out + out.transpose()) * 0.5)
}

/// Leading `k_x` eigenpairs of the covariance operator with kernel `cov`,
/// discretized with trapezoidal weights on `grid`. Eigenfunctions are
/// quadrature-orthonormal and signed so that their integral is
/// non-negative. The returned mean is zero.
pub fn fpca_decompose(cov: &DMatrix<f64>, grid: &[f64], k_x: usize) -> Result<CoordinateFpca> {
    let g = grid.len();
    if cov.nrows() != g || cov.ncols() != g {
        return Err(JcrcError::Validation(format!(
            "covariance is {}x{}, grid has {g} points",
            cov.nrows(),
            cov.ncols()
        )));
    }
    if k_x > g {
        return Err(JcrcError::Validation(format!("K_x = {k_x} exceeds grid size {g}")));
    }
    let w = quad_weights(grid);
    let sw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let mut m = DMatrix::from_fn(g, g, |i, j| sw[i] * cov[(i, j)] * sw[j]);
    m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..g).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut phi = DMatrix::zeros(g, k_x);
    let mut lambda = Vec::with_capacity(k_x);
    for (l, &idx) in order.iter().take(k_x).enumerate() {
        let u = eig.eigenvectors.column(idx);
        let mut f: Vec<f64> = (0..g).map(|j| u[j] / sw[j]).collect();
        let norm = f.iter().zip(&w).map(|(v, wj)| wj * v * v).sum::<f64>().sqrt();
        f.iter_mut().for_each(|v| *v /= norm);
        let integral: f64 = f.iter().zip(&w).map(|(v, wj)| wj * v).sum();
        let flip = if integral.abs() > 1e-12 {
            integral < 0.0
        } else {
            // integral vanishes: make the largest-magnitude value positive
            let peak = f.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            peak < 0.0
        };
        if flip {
            f.iter_mut().for_each(|v| *v = -*v);
        }
        phi.set_column(l, &nalgebra::DVector::from_vec(f));
        lambda.push(eig.eigenvalues[idx].max(0.0));
    }
    Ok(CoordinateFpca {
        mean: vec![0.0; g],
        eigenvalues: lambda,
        eigenfunctions: phi,
    })
}

/// `p_l = ∫ (x - mean) phi_l` by trapezoidal quadrature.
pub fn project_scores(curve: &[f64], fpca: &CoordinateFpca, grid: &[f64]) -> Result<Vec<f64>> {
    let g = grid.len();
    if curve.len() != g || fpca.mean.len() != g || fpca.eigenfunctions.nrows() != g {
        return Err(JcrcError::Validation(format!(
            "curve has {} points, FPCA grid has {}",
            curve.len(),
            fpca.eigenfunctions.nrows()
        )));
    }
    let w = quad_weights(grid);
    let c: Vec<f64> = (0..g).map(|j| w[j] * (curve[j] - fpca.mean[j])).collect();
    Ok((0..fpca.k())
        .map(|l| fpca.eigenfunctions.column(l).iter().zip(&c).map(|(p, v)| p * v).sum())
        .collect())
}
