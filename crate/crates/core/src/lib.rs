//! Joint curve registration and classification (JCRC) for two-dimensional
//! functional data.
//!
//! The first level aligns sampled curves with a warped nonlinear mixed-effects
//! model; the second level classifies the aligned curves together with scalar
//! covariates through a penalized functional logistic regression.
//!
//! | module | contents |
//! |---|---|
//! | [`curves`] | CSV ingestion, validation and the [`CurvePanel`](curves::CurvePanel) data model |
//! | [`basis`] | B-splines, truncated power splines, Hyman monotone interpolation, quadrature |
//! | [`gp`] | Matérn covariances and SPD linear algebra |
//! | [`registration`] | the alternating first-level fit and curve alignment |
//! | [`classify`] | FPCA, the penalized GLMM and iterative prediction |
//! | [`simeval`] | simulation generators and evaluation metrics |
//! | [`pipeline`] | end-to-end fit/predict glue used by the CLI |

pub mod basis;
pub mod classify;
pub mod config;
pub mod curves;
pub mod error;
pub mod gp;
pub mod optim;
pub mod pipeline;
pub mod registration;
pub mod serde_mat;
pub mod simeval;

pub use config::RunConfig;
pub use error::{JcrcError, Result};

/// Version tag written into every JSON artifact.
pub const FORMAT_VERSION: u32 = 1;
