//! Matérn covariances and symmetric positive-definite linear algebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{JcrcError, Result};

/// Matérn kernel parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternParams {
    /// Marginal variance.
    pub amplitude: f64,
    /// Length scale.
    pub range: f64,
    /// Smoothness ν.
    pub smoothness: f64,
}

impl MaternParams {
    pub fn new(amplitude: f64, range: f64, smoothness: f64) -> Result<Self> {
        let p = MaternParams {
            amplitude,
            range,
            smoothness,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.amplitude) && ok(self.range) && ok(self.smoothness) {
            Ok(())
        } else {
            Err(JcrcError::Validation(format!(
                "Matérn parameters must be finite and positive, got {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Matern,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovSpec {
    pub kind: KernelKind,
    pub params: MaternParams,
}

impl CovSpec {
    pub fn matern(amplitude: f64, range: f64, smoothness: f64) -> Result<Self> {
        Ok(CovSpec {
            kind: KernelKind::Matern,
            params: MaternParams::new(amplitude, range, smoothness)?,
        })
    }
}

/// Matérn correlation at distance `d`:
/// `2^(1-ν)/Γ(ν) · z^ν K_ν(z)` with `z = sqrt(2ν) d / range`.
pub fn matern_corr(d: f64, range: f64, nu: f64) -> f64 {
    let z = (2.0 * nu).sqrt() * d.abs() / range;
    if z == 0.0 {
        return 1.0;
    }
    if z > 500.0 {
        return 0.0;
    }
    if nu == 0.5 {
        (-z).exp()
    } else if nu == 1.5 {
        (1.0 + z) * (-z).exp()
    } else if nu == 2.5 {
        (1.0 + z + z * z / 3.0) * (-z).exp()
    } else {
        matern_corr_bessel(z, nu)
    }
}

fn matern_corr_bessel(z: f64, nu: f64) -> f64 {
    let (_, k) = puruspe::Inu_Knu(nu, z);
    let log_c = (1.0 - nu) * std::f64::consts::LN_2 - puruspe::ln_gamma(nu) + nu * z.ln();
    let v = log_c.exp() * k;
    if v.is_finite() {
        v.clamp(0.0, 1.0)
    } else {
        0.0
    }
}

fn is_uniform(g: &[f64]) -> bool {
    if g.len() < 3 {
        return true;
    }
    let h = g[1] - g[0];
    g.windows(2)
        .all(|w| ((w[1] - w[0]) - h).abs() <= 1e-12 * h.abs().max(1.0))
}

/// Cross-covariance matrix `K(s_i, t_j)`.
pub fn matern_cov(spec: &CovSpec, s_grid: &[f64], t_grid: &[f64]) -> Result<DMatrix<f64>> {
    spec.params.validate()?;
    let MaternParams {
        amplitude,
        range,
        smoothness,
    } = spec.params;
    let (ns, nt) = (s_grid.len(), t_grid.len());
    if s_grid == t_grid && is_uniform(s_grid) && ns > 1 {
        // Toeplitz: one kernel evaluation per lag
        let h = s_grid[1] - s_grid[0];
        let lag: Vec<f64> = (0..ns)
            .map(|k| amplitude * matern_corr(k as f64 * h, range, smoothness))
            .collect();
        return Ok(DMatrix::from_fn(ns, nt, |i, j| lag[i.abs_diff(j)]));
    }
    Ok(DMatrix::from_fn(ns, nt, |i, j| {
        amplitude * matern_corr(s_grid[i] - t_grid[j], range, smoothness)
    }))
}

/// Jitter levels tried in turn, relative to the mean diagonal.
const JITTER: [f64; 4] = [0.0, 1e-10, 1e-8, 1e-6];

/// Cholesky factor of an SPD matrix, with the jitter that was needed.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
    jitter: f64,
}

impl SpdFactor {
    pub fn new(b: &DMatrix<f64>) -> Result<Self> {
        let n = b.nrows();
        if n != b.ncols() {
            return Err(JcrcError::Numerical(format!(
                "cannot factor a non-square {}x{} matrix",
                n,
                b.ncols()
            )));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(JcrcError::Numerical("non-finite entry in SPD matrix".into()));
        }
        let scale = if n == 0 {
            1.0
        } else {
            (b.diagonal().iter().map(|v| v.abs()).sum::<f64>() / n as f64).max(f64::MIN_POSITIVE)
        };
        for &j in &JITTER {
            let mut m = b.clone();
            let jitter = j * scale;
            if jitter > 0.0 {
                for i in 0..n {
                    m[(i, i)] += jitter;
                }
            }
            if let Some(chol) = Cholesky::new(m) {
                let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
                if log_det.is_finite() || n == 0 {
                    return Ok(SpdFactor {
                        chol,
                        log_det,
                        jitter,
                    });
                }
            }
        }
        Err(JcrcError::Numerical(format!(
            "{n}x{n} matrix is not positive definite even with jitter {:e}",
            JITTER[JITTER.len() - 1] * scale
        )))
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Diagonal jitter that was added before factoring.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Lower-triangular factor `L` with `B = L Lᵀ`.
    pub fn lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(rhs)
    }

    pub fn solve_vec(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }

    /// `L⁻¹ rhs`, so that `‖L⁻¹a‖² = aᵀB⁻¹a`.
    pub fn whiten(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol
            .l_dirty()
            .solve_lower_triangular(rhs)
            .expect("Cholesky factor has a positive diagonal")
    }

    pub fn whiten_vec(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol
            .l_dirty()
            .solve_lower_triangular(rhs)
            .expect("Cholesky factor has a positive diagonal")
    }

    /// `aᵀ B⁻¹ a`.
    pub fn mahalanobis(&self, a: &DVector<f64>) -> f64 {
        self.whiten_vec(a).norm_squared()
    }
}

/// `Aᵀ B⁻¹ A` through a Cholesky factor of `B`.
pub fn mahalanobis_norm(a: &[f64], b: &DMatrix<f64>) -> Result<f64> {
    if a.len() != b.nrows() {
        return Err(JcrcError::Validation(format!(
            "vector of length {} against a {}x{} matrix",
            a.len(),
            b.nrows(),
            b.ncols()
        )));
    }
    Ok(SpdFactor::new(b)?.mahalanobis(&DVector::from_column_slice(a)))
}

/// `B⁻¹ rhs` for SPD `B`.
pub fn chol_solve(b: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if rhs.nrows() != b.nrows() {
        return Err(JcrcError::Validation(format!(
            "right-hand side has {} rows, matrix is {}x{}",
            rhs.nrows(),
            b.nrows(),
            b.ncols()
        )));
    }
    Ok(SpdFactor::new(b)?.solve(rhs))
}

/// Lower bound on the profiled noise variance.
pub const SIGMA2_FLOOR: f64 = 1e-12;

/// Profiled Gaussian log-likelihood from its sufficient parts:
/// quadratic form `q = rᵀV⁻¹r`, `log det V` and the dimension `n`.
pub fn profile_loglik_parts(q: f64, log_det: f64, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let s2 = (q / nf).max(SIGMA2_FLOOR);
    (-0.5 * (log_det + nf * s2.ln() + nf), s2)
}

/// Gaussian log-likelihood of `resid ~ N(0, σ² V)` with σ² profiled out,
/// up to an additive constant. Returns `(loglik, σ̂²)`.
pub fn gauss_profile_loglik(resid: &[f64], v: &DMatrix<f64>) -> Result<(f64, f64)> {
    if resid.is_empty() {
        return Err(JcrcError::Validation("empty residual vector".into()));
    }
    if resid.len() != v.nrows() {
        return Err(JcrcError::Validation(format!(
            "residual of length {} against a {}x{} covariance",
            resid.len(),
            v.nrows(),
            v.ncols()
        )));
    }
    let f = SpdFactor::new(v)?;
    let q = f.mahalanobis(&DVector::from_column_slice(resid));
    Ok(profile_loglik_parts(q, f.log_det(), resid.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    /// Gauss–Jordan inverse with partial pivoting; shares no code with the
    /// Cholesky path.
    fn gauss_jordan_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
        let n = m.nrows();
        let mut a = m.clone();
        let mut inv = DMatrix::identity(n, n);
        for c in 0..n {
            let p = (c..n)
                .max_by(|&i, &j| a[(i, c)].abs().total_cmp(&a[(j, c)].abs()))
                .unwrap();
            a.swap_rows(c, p);
            inv.swap_rows(c, p);
            let d = a[(c, c)];
            for j in 0..n {
                a[(c, j)] /= d;
                inv[(c, j)] /= d;
            }
            for r in 0..n {
                if r != c {
                    let f = a[(r, c)];
                    for j in 0..n {
                        a[(r, j)] -= f * a[(c, j)];
                        inv[(r, j)] -= f * inv[(c, j)];
                    }
                }
            }
        }
        inv
    }

    #[test]
    fn matern_diagonal_is_amplitude() {
        let spec = CovSpec::matern(3.5, 0.3, 3.0).unwrap();
        let g = [0.0, 0.2, 0.7];
        let m = matern_cov(&spec, &g, &g).unwrap();
        for i in 0..3 {
            assert_eq!(m[(i, i)], 3.5);
        }
    }

    #[test]
    fn matern_exponential_case() {
        let spec = CovSpec::matern(1.0, 1.0, 0.5).unwrap();
        let m = matern_cov(&spec, &[0.0], &[1.0]).unwrap();
        assert_abs_diff_eq!(m[(0, 0)], (-1.0f64).exp(), epsilon = 1e-9);
        assert_abs_diff_eq!(m[(0, 0)], 0.367879, epsilon = 1e-6);
    }

    #[test]
    fn bessel_path_matches_closed_forms() {
        for &nu in &[0.5, 1.5, 2.5] {
            for &d in &[0.01, 0.1, 0.3, 0.8, 2.0] {
                let closed = matern_corr(d, 0.4, nu);
                let z = (2.0 * nu as f64).sqrt() * d / 0.4;
                let bessel = matern_corr_bessel(z, nu);
                assert_abs_diff_eq!(closed, bessel, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn matern_is_continuous_at_zero_for_nu3() {
        assert_abs_diff_eq!(matern_corr(1e-6, 0.3, 3.0), 1.0, epsilon = 1e-8);
        let a = matern_corr(0.1, 0.3, 3.0);
        let b = matern_corr(0.2, 0.3, 3.0);
        assert!(1.0 > a && a > b && b > 0.0);
    }

    #[test]
    fn matern_rejects_bad_params() {
        assert!(CovSpec::matern(0.0, 1.0, 1.0).is_err());
        let bad = CovSpec {
            kind: KernelKind::Matern,
            params: MaternParams {
                amplitude: 1.0,
                range: -1.0,
                smoothness: 1.0,
            },
        };
        assert!(matern_cov(&bad, &[0.0], &[0.0]).is_err());
    }

    #[test]
    fn matern_psd_on_grid() {
        let spec = CovSpec::matern(100.0, 0.3, 3.0).unwrap();
        let g: Vec<f64> = (0..10).map(|i| i as f64 / 9.0).collect();
        let m = matern_cov(&spec, &g, &g).unwrap();
        let eig = nalgebra::SymmetricEigen::new(m);
        assert!(eig.eigenvalues.min() >= -1e-10);
    }

    #[test]
    fn toeplitz_path_matches_direct() {
        let spec = CovSpec::matern(2.0, 0.25, 3.0).unwrap();
        let g: Vec<f64> = (0..30).map(|i| i as f64 / 29.0).collect();
        let fast = matern_cov(&spec, &g, &g).unwrap();
        let direct = DMatrix::from_fn(30, 30, |i, j| 2.0 * matern_corr(g[i] - g[j], 0.25, 3.0));
        assert!((fast - direct).abs().max() < 1e-12);
    }

    #[test]
    fn mahalanobis_examples() {
        let id = DMatrix::identity(2, 2);
        assert_eq!(mahalanobis_norm(&[0.0, 0.0], &id).unwrap(), 0.0);
        assert_abs_diff_eq!(mahalanobis_norm(&[3.0, 4.0], &id).unwrap(), 25.0, epsilon = 1e-12);
        let b = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]));
        assert_abs_diff_eq!(mahalanobis_norm(&[1.0, 1.0], &b).unwrap(), 0.75, epsilon = 1e-12);
        assert!(mahalanobis_norm(&[1.0], &b).is_err());
    }

    #[test]
    fn chol_solve_identity_and_oracle() {
        let rhs = DMatrix::from_fn(5, 2, |i, j| (i * 3 + j) as f64 - 4.0);
        let out = chol_solve(&DMatrix::identity(5, 5), &rhs).unwrap();
        assert_eq!(out, rhs);
        for seed in 0..10 {
            let b = random_spd(5, seed);
            let x = chol_solve(&b, &rhs).unwrap();
            let oracle = gauss_jordan_inverse(&b) * &rhs;
            assert!((&x - oracle).abs().max() < 1e-9);
            let resid = (&b * &x - &rhs).abs().max();
            assert!(resid < 1e-8 * rhs.abs().max());
        }
    }

    #[test]
    fn log_det_matches_eigenvalues() {
        for seed in 0..10 {
            let b = random_spd(6, 100 + seed);
            let f = SpdFactor::new(&b).unwrap();
            let eig = nalgebra::SymmetricEigen::new(b);
            let oracle: f64 = eig.eigenvalues.iter().map(|v| v.ln()).sum();
            assert_abs_diff_eq!(f.log_det(), oracle, epsilon = 1e-8);
        }
    }

    #[test]
    fn jitter_rescues_singular_matrix() {
        // rank one
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let b = &v * v.transpose();
        let f = SpdFactor::new(&b).unwrap();
        assert!(f.jitter() > 0.0);
        let not_spd = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(SpdFactor::new(&not_spd).unwrap_err().is_numerical());
    }

    #[test]
    fn profile_loglik_cases() {
        let id = DMatrix::identity(4, 4);
        let (ll, s2) = gauss_profile_loglik(&[0.0; 4], &id).unwrap();
        assert_eq!(s2, SIGMA2_FLOOR);
        assert!(ll.is_finite());
        let r = [1.0, -2.0, 0.5, 3.0];
        let (_, s2) = gauss_profile_loglik(&r, &id).unwrap();
        assert_abs_diff_eq!(s2, r.iter().map(|v| v * v).sum::<f64>() / 4.0, epsilon = 1e-14);
    }

    #[test]
    fn profile_dominates_sigma_grid() {
        let v = random_spd(8, 7);
        let r: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).sin()).collect();
        let (ll_hat, s2_hat) = gauss_profile_loglik(&r, &v).unwrap();
        // full Gaussian log-likelihood at a given σ², via the eigen oracle
        let inv = gauss_jordan_inverse(&v);
        let rv = DVector::from_column_slice(&r);
        let q = (rv.transpose() * &inv * &rv)[(0, 0)];
        let logdet: f64 = nalgebra::SymmetricEigen::new(v.clone())
            .eigenvalues
            .iter()
            .map(|e| e.ln())
            .sum();
        let full = |s2: f64| -0.5 * (logdet + 8.0 * s2.ln() + q / s2);
        assert_abs_diff_eq!(full(s2_hat), ll_hat, epsilon = 1e-9);
        for k in 0..20 {
            let s2 = s2_hat * (0.1 + 0.2 * k as f64);
            assert!(full(s2) <= ll_hat + 1e-12);
        }
    }

    proptest! {
        #[test]
        fn matern_transpose_symmetry(s in proptest::collection::vec(0.0f64..1.0, 1..12),
                                     t in proptest::collection::vec(0.0f64..1.0, 1..12),
                                     nu in 0.3f64..4.0) {
            let spec = CovSpec::matern(1.7, 0.3, nu).unwrap();
            let a = matern_cov(&spec, &s, &t).unwrap();
            let b = matern_cov(&spec, &t, &s).unwrap();
            prop_assert_eq!(a, b.transpose());
        }

        #[test]
        fn mahalanobis_scales_inversely(seed in 0u64..500, c in 0.01f64..100.0) {
            let b = random_spd(4, seed);
            let a = [0.3, -1.0, 2.0, 0.1];
            let m1 = mahalanobis_norm(&a, &b).unwrap();
            let m2 = mahalanobis_norm(&a, &(b * c)).unwrap();
            prop_assert!((m2 - m1 / c).abs() <= 1e-10 * (m1 / c).abs().max(1e-300));
        }

        #[test]
        fn solve_after_multiply_is_identity(seed in 0u64..500) {
            let b = random_spd(6, seed);
            let x = DMatrix::from_fn(6, 3, |i, j| ((i + 2 * j) as f64).cos());
            let back = chol_solve(&b, &(&b * &x)).unwrap();
            prop_assert!((back - x).abs().max() < 1e-8);
        }
    }
}
