//! Run configuration shared by the library entry points and the CLI.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{JcrcError, Result};
use crate::gp::MaternParams;

/// Every tunable of a fit. Missing JSON fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// B-spline order for the mean curves (4 = cubic).
    pub bspline_order: usize,
    /// Number of equally spaced interior knots of the mean-curve basis.
    pub n_mean_knots: usize,
    /// Warp anchor abscissae; first must be 0 and last 1.
    pub anchors: Vec<f64>,
    /// Ridge penalty on the group deviations `d_ak`.
    pub ridge_lambda: f64,
    /// Number of eigenfunctions. Set together with `k_e` to skip cross-validation.
    pub k_x: Option<usize>,
    /// Size of the truncated power basis for the coefficient functions.
    pub k_e: Option<usize>,
    /// Candidate `(k_x, k_e)` pairs used when `k_x`/`k_e` are unset.
    pub cv_pairs: Vec<(usize, usize)>,
    pub cv_folds: usize,
    pub max_outer: usize,
    /// Relative change of the registration objective that ends the outer loop.
    pub outer_tol: f64,
    /// Objective evaluations allowed per warp sub-problem.
    pub warp_max_evals: usize,
    /// Finite-difference step for warp gradients.
    pub warp_fd_step: f64,
    /// Finite-difference step for the anchor sensitivities of the linearization.
    pub jacobian_fd_step: f64,
    /// Starting subject covariance (in units of the noise variance).
    pub rho_s: MaternParams,
    /// Starting warp covariance (in units of the noise variance).
    pub rho_h: MaternParams,
    /// Re-estimate `rho_s`/`rho_h` amplitudes and ranges; smoothness stays fixed.
    pub estimate_variance: bool,
    /// Evaluations allowed in the variance search.
    pub variance_max_evals: usize,
    /// Points of the common alignment grid.
    pub align_grid_size: usize,
    /// Moving-window width for covariance smoothing (odd).
    pub smoothing_window: usize,
    /// Fixed random-effect SD for the classifier; estimated when unset.
    pub sigma_e: Option<f64>,
    /// Relative tolerance of the `sigma_e` fixed point.
    pub sigma_e_tol: f64,
    pub sigma_e_max_passes: usize,
    pub predict_max_iter: usize,
    pub seed: u64,
    /// Worker threads; `None` uses all cores. Results do not depend on it,
    /// so it is left out of written artifacts.
    #[serde(skip_serializing)]
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            bspline_order: 4,
            n_mean_knots: 8,
            anchors: vec![0.0, 0.33, 0.67, 1.0],
            ridge_lambda: 1.0,
            k_x: None,
            k_e: None,
            cv_pairs: [12, 18, 24]
                .iter()
                .flat_map(|&kx| [8, 10, 12].map(move |ke| (kx, ke)))
                .collect(),
            cv_folds: 5,
            max_outer: 20,
            outer_tol: 1e-4,
            warp_max_evals: 500,
            warp_fd_step: 1e-5,
            jacobian_fd_step: 1e-6,
            rho_s: MaternParams {
                amplitude: 100.0,
                range: 0.3,
                smoothness: 3.0,
            },
            rho_h: MaternParams {
                amplitude: 1.0,
                range: 0.3,
                smoothness: 3.0,
            },
            estimate_variance: true,
            variance_max_evals: 200,
            align_grid_size: 101,
            smoothing_window: 11,
            sigma_e: None,
            sigma_e_tol: 1e-5,
            sigma_e_max_passes: 50,
            predict_max_iter: 10,
            seed: 0,
            threads: None,
        }
    }
}

impl RunConfig {
    /// Fixed tuning: `k_x` eigenfunctions and a `k_e`-term coefficient basis.
    pub fn with_k(mut self, k_x: usize, k_e: usize) -> Self {
        self.k_x = Some(k_x);
        self.k_e = Some(k_e);
        self
    }

    pub fn n_w(&self) -> usize {
        self.anchors.len()
    }

    /// The `(k_x, k_e)` pairs the classifier will consider.
    pub fn k_candidates(&self) -> Vec<(usize, usize)> {
        match (self.k_x, self.k_e) {
            (Some(kx), Some(ke)) => vec![(kx, ke)],
            _ => self.cv_pairs.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(JcrcError::Validation(m));
        if !(1..=10).contains(&self.bspline_order) {
            return bad(format!("bspline_order must be in 1..=10, got {}", self.bspline_order));
        }
        let a = &self.anchors;
        if a.len() < 2 || a[0] != 0.0 || a[a.len() - 1] != 1.0 || a.windows(2).any(|w| w[1] <= w[0]) {
            return bad(format!(
                "anchors must be strictly increasing from 0 to 1, got {a:?}"
            ));
        }
        if !(self.ridge_lambda >= 0.0 && self.ridge_lambda.is_finite()) {
            return bad(format!("ridge_lambda must be >= 0, got {}", self.ridge_lambda));
        }
        match (self.k_x, self.k_e) {
            (Some(_), None) | (None, Some(_)) => {
                return bad("k_x and k_e must be given together".into());
            }
            _ => {}
        }
        let pairs = self.k_candidates();
        if pairs.is_empty() {
            return bad("no (k_x, k_e) candidates".into());
        }
        for &(kx, ke) in &pairs {
            if ke < 2 {
                return bad(format!("k_e must be >= 2, got {ke}"));
            }
            if kx < ke {
                return bad(format!("k_x ({kx}) must be >= k_e ({ke})"));
            }
            if kx > self.align_grid_size {
                return bad(format!(
                    "k_x ({kx}) exceeds the alignment grid size {}",
                    self.align_grid_size
                ));
            }
        }
        if self.k_x.is_none() && self.cv_folds < 2 {
            return bad(format!("cv_folds must be >= 2, got {}", self.cv_folds));
        }
        if self.max_outer == 0 {
            return bad("max_outer must be >= 1".into());
        }
        for (name, v) in [
            ("outer_tol", self.outer_tol),
            ("warp_fd_step", self.warp_fd_step),
            ("jacobian_fd_step", self.jacobian_fd_step),
            ("sigma_e_tol", self.sigma_e_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        self.rho_s.validate()?;
        self.rho_h.validate()?;
        if self.align_grid_size < 4 {
            return bad("align_grid_size must be >= 4".into());
        }
        if self.smoothing_window == 0 || self.smoothing_window % 2 == 0 {
            return bad(format!(
                "smoothing_window must be odd, got {}",
                self.smoothing_window
            ));
        }
        if let Some(s) = self.sigma_e {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("sigma_e must be positive, got {s}"));
            }
        }
        if self.threads == Some(0) {
            return bad("threads must be >= 1".into());
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| JcrcError::io(path, e))?;
        Self::from_json_str(&s)
    }
}
