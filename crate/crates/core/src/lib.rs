//! Multi-task AUC preference learning.
//!
//! Each user's linear scorer is `W_i = θ + G_i + P_i`: a consensus vector
//! shared by everyone, a group factor whose tail singular values are
//! penalized (so users and features co-cluster), and a personalized factor
//! with column-sparse `ℓ₁,₂` penalty. The pairwise squared AUC surrogate is
//! evaluated in linear time through the Laplacian of each user's bipartite
//! positive/negative graph, and the objective is minimized by a proximal
//! gradient method with closed-form proximal steps and a growing step
//! parameter.
//!
//! ```no_run
//! use aucmtl::{dataio, metrics, solver, Hyperparams};
//!
//! let train = dataio::read_dataset("train.csv")?;
//! let hp = Hyperparams { kappa: 5, ..Default::default() };
//! let (model, report) = solver::fit(&train, &hp, None)?;
//! println!("objective {} after {} iterations", report.final_objective(), report.iterations.len());
//! let auc = metrics::auc_macro(&train, &model);
//! # Ok::<(), aucmtl::Error>(())
//! ```

pub mod aucgraph;
pub mod bench;
pub mod dataio;
pub mod domain;
pub mod error;
pub mod metrics;
pub mod proxops;
pub mod simgen;
pub mod solver;

pub use domain::{
    validate_dataset, validate_users, Dataset, FitReport, Hyperparams, IterRecord, ModelParams,
    StopReason, UserTask, ValidationIssue,
};
pub use error::{Error, Result};
