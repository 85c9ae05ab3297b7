//! Proximal operators and block coordinate-descent solvers for group and
//! block lasso problems, with KKT certification, paths and cross-validation.

mod bcd;
mod path;
mod prox;

pub use bcd::{fit, fit_traced, kkt_residual, penalized_objective, BlockOrder, SolverConfig};
pub use path::{cv_select_lambda, fit_path, lambda_max, CvResult, LambdaPath, PathSpec};
pub use prox::{project_dual_ball, project_l1_ball, prox_group_l2, prox_group_lalpha};
