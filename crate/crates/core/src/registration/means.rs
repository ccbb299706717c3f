use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::warp::WarpState;
use crate::basis::BSplineBasis;
use crate::curves::CurvePanel;
use crate::error::{JcrcError, Result};
use crate::gp::{matern_cov, CovSpec, MaternParams, SpdFactor};

/// Spline weights of the mean curves: `tau_ak = Psi (c[a] + d[a][k])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanWeights {
    /// `c[a]`, shared profile of coordinate `a`.
    pub c: Vec<Vec<f64>>,
    /// `d[a][k]`, deviation of group `k` in coordinate `a`.
    pub d: Vec<Vec<Vec<f64>>>,
}

impl MeanWeights {
    pub fn zeros(q: usize) -> Self {
        MeanWeights {
            c: vec![vec![0.0; q]; 2],
            d: vec![vec![vec![0.0; q]; 2]; 2],
        }
    }

    /// `c[a] + d[a][k]`.
    pub fn coefs(&self, a: usize, k: u8) -> Vec<f64> {
        self.c[a].iter().zip(&self.d[a][k as usize]).map(|(c, d)| c + d).collect()
    }

    pub fn d_norm2(&self) -> f64 {
        self.d.iter().flatten().flatten().map(|v| v * v).sum()
    }
}

/// Per-subject inverse weight matrices `(I + S_i)⁻¹`, shared between
/// subjects observed on the same grid.
#[derive(Debug, Clone)]
pub struct CovBlocks {
    index: Vec<usize>,
    ainv: Vec<DMatrix<f64>>,
    logdet: Vec<f64>,
}

fn grid_key(t: &[f64]) -> Vec<u64> {
    t.iter().map(|v| v.to_bits()).collect()
}

pub(crate) fn inverse_of(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let f = SpdFactor::new(a)?;
    let n = a.nrows();
    let inv = f.solve(&DMatrix::identity(n, n));
    Ok(((&inv + inv.transpose()) * 0.5, f.log_det()))
}

impl CovBlocks {
    /// `A_i = I + S_i` with `S_i` the Matérn covariance on subject `i`'s grid.
    pub fn matern(panel: &CurvePanel, rho_s: &MaternParams) -> Result<Self> {
        let spec = CovSpec {
            kind: crate::gp::KernelKind::Matern,
            params: *rho_s,
        };
        Self::build(panel.curves.iter().map(|c| c.times()), |t| {
            let mut a = matern_cov(&spec, t, t)?;
            for i in 0..t.len() {
                a[(i, i)] += 1.0;
            }
            Ok(a)
        })
    }

    /// `S = 0`: ordinary least squares weights.
    pub fn identity(panel: &CurvePanel) -> Self {
        Self::build(panel.curves.iter().map(|c| c.times()), |t| {
            Ok(DMatrix::identity(t.len(), t.len()))
        })
        .expect("identity is SPD")
    }

    fn build<'a>(
        grids: impl Iterator<Item = &'a [f64]>,
        make: impl Fn(&[f64]) -> Result<DMatrix<f64>>,
    ) -> Result<Self> {
        let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut out = CovBlocks {
            index: Vec::new(),
            ainv: Vec::new(),
            logdet: Vec::new(),
        };
        for t in grids {
            let key = grid_key(t);
            let id = match seen.get(&key) {
                Some(&id) => id,
                None => {
                    let (inv, ld) = inverse_of(&make(t)?)?;
                    out.ainv.push(inv);
                    out.logdet.push(ld);
                    seen.insert(key, out.ainv.len() - 1);
                    out.ainv.len() - 1
                }
            };
            out.index.push(id);
        }
        Ok(out)
    }

    /// Arbitrary SPD weight matrices `A_i`, one per subject.
    pub fn from_matrices(blocks: &[DMatrix<f64>]) -> Result<Self> {
        let mut out = CovBlocks {
            index: Vec::new(),
            ainv: Vec::new(),
            logdet: Vec::new(),
        };
        for (i, b) in blocks.iter().enumerate() {
            let (inv, ld) = inverse_of(b)?;
            out.ainv.push(inv);
            out.logdet.push(ld);
            out.index.push(i);
        }
        Ok(out)
    }

    pub fn ainv(&self, i: usize) -> &DMatrix<f64> {
        &self.ainv[self.index[i]]
    }

    pub fn logdet(&self, i: usize) -> f64 {
        self.logdet[self.index[i]]
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Distinct matrices with the subjects using each.
    pub(crate) fn groups(&self) -> Vec<(usize, Vec<usize>)> {
        let mut g: Vec<(usize, Vec<usize>)> = (0..self.ainv.len()).map(|u| (u, Vec::new())).collect();
        for (i, &u) in self.index.iter().enumerate() {
            g[u].1.push(i);
        }
        g
    }

    pub(crate) fn unique_ainv(&self, u: usize) -> &DMatrix<f64> {
        &self.ainv[u]
    }

    pub(crate) fn unique_logdet(&self, u: usize) -> f64 {
        self.logdet[u]
    }
}

/// Warped design `Psi_i` with its weighted copy `A_i⁻¹ Psi_i`.
pub(crate) struct SubjectDesign {
    pub psi: DMatrix<f64>,
    pub apsi: DMatrix<f64>,
}

pub(crate) fn subject_designs(
    panel: &CurvePanel,
    warps: &WarpState,
    blocks: &CovBlocks,
    basis: &BSplineBasis,
) -> Result<Vec<SubjectDesign>> {
    let psis = super::design::warp_design(panel, warps, basis)?;
    Ok(psis
        .into_iter()
        .enumerate()
        .map(|(i, psi)| {
            let apsi = blocks.ainv(i) * &psi;
            SubjectDesign { psi, apsi }
        })
        .collect())
}

fn solve_normal(m: &DMatrix<f64>, rhs: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(max > 0.0) || min <= 1e-12 * max {
        return Err(JcrcError::Numerical(format!(
            "{what}: design is rank deficient (eigenvalue ratio {:.1e}); use fewer mean-curve knots",
            min / max
        )));
    }
    Ok(SpdFactor::new(m)?.solve(rhs))
}

fn coord_vec(panel: &CurvePanel, i: usize, a: usize) -> DVector<f64> {
    DVector::from_column_slice(panel.curves[i].coord(a))
}

pub(crate) fn estimate_c_with(panel: &CurvePanel, designs: &[SubjectDesign]) -> Result<Vec<Vec<f64>>> {
    let q = designs[0].psi.ncols();
    let mut nmat = DMatrix::zeros(q, q);
    let mut rhs = DMatrix::zeros(q, 2);
    for (i, d) in designs.iter().enumerate() {
        nmat += d.psi.transpose() * &d.apsi;
        for a in 0..2 {
            let b = d.apsi.transpose() * coord_vec(panel, i, a);
            for l in 0..q {
                rhs[(l, a)] += b[l];
            }
        }
    }
    let sol = solve_normal(&((&nmat + nmat.transpose()) * 0.5), &rhs, "shared mean")?;
    Ok((0..2).map(|a| sol.column(a).iter().copied().collect()).collect())
}

pub(crate) fn estimate_d_raw_with(
    panel: &CurvePanel,
    groups: &[u8],
    designs: &[SubjectDesign],
    c: &[Vec<f64>],
    lambda: f64,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let q = designs[0].psi.ncols();
    let mut d = vec![vec![vec![0.0; q]; 2]; 2];
    for k in 0..2u8 {
        let mut nmat = DMatrix::identity(q, q) * lambda;
        let mut rhs = DMatrix::zeros(q, 2);
        let mut any = false;
        for (i, des) in designs.iter().enumerate().filter(|(i, _)| groups[*i] == k) {
            any = true;
            nmat += des.psi.transpose() * &des.apsi;
            for a in 0..2 {
                let resid = coord_vec(panel, i, a) - &des.psi * DVector::from_column_slice(&c[a]);
                let b = des.apsi.transpose() * resid;
                for l in 0..q {
                    rhs[(l, a)] += b[l];
                }
            }
        }
        if !any {
            continue;
        }
        let sol = solve_normal(&((&nmat + nmat.transpose()) * 0.5), &rhs, "group deviation")?;
        for a in 0..2 {
            d[a][k as usize] = sol.column(a).iter().copied().collect();
        }
    }
    Ok(d)
}

/// Shifts the across-group mean of `d` into `c` so that `sum_k d[a][k] = 0`.
pub fn center_deviations(means: &mut MeanWeights) {
    for a in 0..2 {
        let q = means.c[a].len();
        for l in 0..q {
            let m = 0.5 * (means.d[a][0][l] + means.d[a][1][l]);
            means.c[a][l] += m;
            means.d[a][0][l] -= m;
            means.d[a][1][l] -= m;
        }
    }
}

/// Generalized least squares for the shared weights `c_a`, both coordinates.
pub fn estimate_c(
    panel: &CurvePanel,
    warps: &WarpState,
    blocks: &CovBlocks,
    basis: &BSplineBasis,
) -> Result<Vec<Vec<f64>>> {
    estimate_c_with(panel, &subject_designs(panel, warps, blocks, basis)?)
}

/// Ridge GLS for the group deviations on the residuals `x - Psi c`, before
/// centering.
pub fn estimate_d_raw(
    panel: &CurvePanel,
    warps: &WarpState,
    blocks: &CovBlocks,
    basis: &BSplineBasis,
    c: &[Vec<f64>],
    lambda: f64,
) -> Result<Vec<Vec<Vec<f64>>>> {
    if !(lambda >= 0.0) {
        return Err(JcrcError::Validation(format!("ridge penalty must be >= 0, got {lambda}")));
    }
    let designs = subject_designs(panel, warps, blocks, basis)?;
    estimate_d_raw_with(panel, &warps.groups, &designs, c, lambda)
}

/// Ridge GLS for the group deviations followed by centering across groups;
/// the centering shift moves into `c`.
pub fn estimate_d(
    panel: &CurvePanel,
    warps: &WarpState,
    blocks: &CovBlocks,
    basis: &BSplineBasis,
    c: &[Vec<f64>],
    lambda: f64,
) -> Result<MeanWeights> {
    let d = estimate_d_raw(panel, warps, blocks, basis, c, lambda)?;
    let mut m = MeanWeights { c: c.to_vec(), d };
    center_deviations(&mut m);
    Ok(m)
}

/// `sum_a sum_i r_aiᵀ A_i⁻¹ r_ai` for the current means.
pub(crate) fn residual_quad(
    panel: &CurvePanel,
    groups: &[u8],
    designs: &[SubjectDesign],
    blocks: &CovBlocks,
    means: &MeanWeights,
) -> f64 {
    let coefs: Vec<Vec<DVector<f64>>> = (0..2)
        .map(|a| (0..2u8).map(|k| DVector::from_vec(means.coefs(a, k))).collect())
        .collect();
    let mut total = 0.0;
    for (i, des) in designs.iter().enumerate() {
        for a in 0..2 {
            let r = coord_vec(panel, i, a) - &des.psi * &coefs[a][groups[i] as usize];
            total += (blocks.ainv(i) * &r).dot(&r);
        }
    }
    total
}
