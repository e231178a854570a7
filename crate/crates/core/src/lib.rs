//! Treed distributed lag nonlinear models.
//!
//! An ensemble of dichotomous trees partitions the (exposure, time) plane;
//! each terminal node carries a constant effect, optionally smoothed in the
//! exposure direction with a Gaussian kernel. The sampler integrates out
//! covariate coefficients and leaf effects for structure moves, and draws
//! every variance component by Gibbs sampling under half-Cauchy priors.

pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod model;
pub mod posterior;
pub mod sampler;
pub mod simulation;
pub mod stats;
pub mod tree;
pub mod weights;

pub use error::{Error, Result};
pub use model::{
    validate, Dataset, Hyperparameters, McmcSettings, MoveProbs, SplitGrid, Uncertainty,
    UncertaintyMode, Violation,
};
pub use posterior::{
    center_tree, critical_windows, cumulative_effect, evaluate_surface, SurfaceDraws,
    SurfaceSummary,
};
pub use sampler::{run_chain, ChainOutput, ModelState, Sampler};
pub use tree::{derive_region, Rect, Rule, Tree, TreeNode};
pub use weights::{PrefixTable, WeightMode};
