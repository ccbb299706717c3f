//! First-level model: mean curves, time warps and variance parameters,
//! fitted by alternating conditional steps, and curve alignment.
//!
//! Observed coordinates follow `x_aki(t) = tau_ak(g_ki(t)) + sigma (r_aki(t) + eps)`
//! with `tau_ak = Psi (c_a + d_ak)`, warps `g_ki(t) = t + w_k(t) + w_ki(t)`
//! and `w_ki ~ N(0, sigma² H)`. Covariances are stored in units of `sigma²`.

mod align;
mod design;
pub(crate) mod fit;
mod linearized;
mod means;
mod nonlinear;
mod predict;
mod warp;

pub use align::{align_curves, align_subject, write_aligned, AlignedPanel};
pub use design::warp_design;
pub use fit::{fit_registration, fit_registration_mapped, penalized_objective, RegistrationFit, VarianceParams};
pub use linearized::{build_linearization, fit_variance, linearized_loglik, Linearization, VarianceFit};
pub use means::{center_deviations, estimate_c, estimate_d, estimate_d_raw, CovBlocks, MeanWeights};
pub use predict::{NewSubject, SubjectWarpFit};
pub use nonlinear::{fit_warps, WarpContext, WarpFit, WarpPrior};
pub use warp::{eval_warp, invert_warp, Warp, WarpState};
