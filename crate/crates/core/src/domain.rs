//! Shared domain types: per-user tasks, the decomposed model, hyperparameters
//! and the fit trace.

use std::collections::{HashMap, HashSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One user's annotations: an `n × d` feature matrix with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct UserTask {
    id: String,
    features: DMatrix<f64>,
    labels: Vec<i8>,
    n_pos: usize,
    n_neg: usize,
}

impl UserTask {
    /// Builds a task. Labels must be `-1` or `+1` and there must be one label
    /// per feature row. Single-class users are allowed here; training rejects
    /// them later.
    pub fn new(id: impl Into<String>, features: DMatrix<f64>, labels: Vec<i8>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::InvalidDataset("user id must be non-empty".into()));
        }
        if features.nrows() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "user `{id}`: {} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l != 1 && l != -1) {
            return Err(Error::InvalidDataset(format!(
                "user `{id}`: label {bad} outside {{-1, 1}}"
            )));
        }
        let n_pos = labels.iter().filter(|&&l| l == 1).count();
        let n_neg = labels.len() - n_pos;
        Ok(Self {
            id,
            features,
            labels,
            n_pos,
            n_neg,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }

    pub fn n_pos(&self) -> usize {
        self.n_pos
    }

    pub fn n_neg(&self) -> usize {
        self.n_neg
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn has_both_classes(&self) -> bool {
        self.n_pos >= 1 && self.n_neg >= 1
    }

    /// `(y + 1) / 2`, the 0/1 regression target.
    pub fn ytilde(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.labels.len(),
            self.labels.iter().map(|&l| if l == 1 { 1.0 } else { 0.0 }),
        )
    }

    pub(crate) fn require_both_classes(&self) -> Result<()> {
        if self.has_both_classes() {
            Ok(())
        } else {
            Err(Error::SingleClassUser {
                user: self.id.clone(),
                n_pos: self.n_pos,
                n_neg: self.n_neg,
            })
        }
    }
}

/// An ordered collection of users sharing one feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    users: Vec<UserTask>,
    dim: usize,
}

impl Dataset {
    /// Builds a dataset, enforcing the structural invariants (non-empty,
    /// shared dimension, unique ids). Class balance is checked separately by
    /// [`validate_dataset`] because evaluation data may contain
    /// single-class users.
    pub fn new(users: Vec<UserTask>) -> Result<Self> {
        if let Some(issue) = structural_issues(&users).into_iter().next() {
            return Err(issue.into_error());
        }
        let dim = users[0].dim();
        Ok(Self { users, dim })
    }

    pub fn users(&self) -> &[UserTask] {
        &self.users
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_samples(&self) -> usize {
        self.users.iter().map(UserTask::n_samples).sum()
    }

    pub fn user_ids(&self) -> Vec<String> {
        self.users.iter().map(|u| u.id.clone()).collect()
    }

    pub fn user(&self, id: &str) -> Option<&UserTask> {
        self.users.iter().find(|u| u.id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IssueKind {
    Empty,
    DimensionMismatch,
    DuplicateId,
    EmptyId,
    SingleClass,
}

/// A single finding from [`validate_dataset`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationIssue {
    pub severity: Severity,
    pub kind: IssueKind,
    pub user: Option<String>,
    pub message: String,
}

impl ValidationIssue {
    fn error(kind: IssueKind, user: Option<&str>, message: String) -> Self {
        Self {
            severity: Severity::Error,
            kind,
            user: user.map(str::to_owned),
            message,
        }
    }

    pub fn into_error(self) -> Error {
        match self.kind {
            IssueKind::DimensionMismatch => Error::DimensionMismatch(self.message),
            _ => Error::InvalidDataset(self.message),
        }
    }
}

impl std::fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let level = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{level}: {}", self.message)
    }
}

fn structural_issues(users: &[UserTask]) -> Vec<ValidationIssue> {
    let mut issues = Vec::new();
    let Some(first) = users.first() else {
        issues.push(ValidationIssue::error(
            IssueKind::Empty,
            None,
            "dataset contains no users".into(),
        ));
        return issues;
    };
    let dim = first.dim();
    if dim == 0 {
        issues.push(ValidationIssue::error(
            IssueKind::DimensionMismatch,
            Some(first.id()),
            format!("user `{}` has zero features", first.id()),
        ));
    }
    let mut seen = HashSet::new();
    for u in users {
        if u.id.is_empty() {
            issues.push(ValidationIssue::error(
                IssueKind::EmptyId,
                None,
                "empty user id".into(),
            ));
        }
        if !seen.insert(u.id.as_str()) {
            issues.push(ValidationIssue::error(
                IssueKind::DuplicateId,
                Some(&u.id),
                format!("duplicate user id `{}`", u.id),
            ));
        }
        if u.dim() != dim {
            issues.push(ValidationIssue::error(
                IssueKind::DimensionMismatch,
                Some(&u.id),
                format!(
                    "user `{}` has {} features but `{}` has {dim}",
                    u.id,
                    u.dim(),
                    first.id
                ),
            ));
        }
    }
    issues
}

/// Checks every invariant required for training. An empty result means the
/// users can be fitted.
pub fn validate_users(users: &[UserTask]) -> Vec<ValidationIssue> {
    let mut issues = structural_issues(users);
    for u in users {
        if !u.has_both_classes() {
            issues.push(ValidationIssue::error(
                IssueKind::SingleClass,
                Some(&u.id),
                format!(
                    "user `{}` has {} positive and {} negative labels; both classes are required for training",
                    u.id, u.n_pos, u.n_neg
                ),
            ));
        }
    }
    issues
}

pub fn validate_dataset(ds: &Dataset) -> Vec<ValidationIssue> {
    validate_users(&ds.users)
}

/// The decomposed model: consensus `theta`, group factor `g` and
/// personalized factor `p`, with one column of `g`/`p` per user.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub theta: DVector<f64>,
    pub g: DMatrix<f64>,
    pub p: DMatrix<f64>,
    user_order: Vec<String>,
}

impl ModelParams {
    pub fn new(
        theta: DVector<f64>,
        g: DMatrix<f64>,
        p: DMatrix<f64>,
        user_order: Vec<String>,
    ) -> Result<Self> {
        let d = theta.len();
        let u = user_order.len();
        if g.shape() != (d, u) || p.shape() != (d, u) {
            return Err(Error::ShapeMismatch(format!(
                "theta has length {d} and {u} users, but g is {:?} and p is {:?}",
                g.shape(),
                p.shape()
            )));
        }
        let unique: HashSet<&String> = user_order.iter().collect();
        if unique.len() != u {
            return Err(Error::ShapeMismatch("user_order contains duplicates".into()));
        }
        Ok(Self {
            theta,
            g,
            p,
            user_order,
        })
    }

    pub fn zeros(dim: usize, user_order: Vec<String>) -> Self {
        let u = user_order.len();
        Self {
            theta: DVector::zeros(dim),
            g: DMatrix::zeros(dim, u),
            p: DMatrix::zeros(dim, u),
            user_order,
        }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn n_users(&self) -> usize {
        self.user_order.len()
    }

    pub fn user_order(&self) -> &[String] {
        &self.user_order
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.user_order.iter().position(|u| u == id)
    }

    pub fn index_map(&self) -> HashMap<&str, usize> {
        self.user_order
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect()
    }

    /// `theta + G[:, i] + P[:, i]`.
    pub fn user_weights(&self, i: usize) -> Result<DVector<f64>> {
        if i >= self.n_users() {
            return Err(Error::IndexOutOfRange {
                index: i,
                n_users: self.n_users(),
            });
        }
        Ok(&self.theta + self.g.column(i) + self.p.column(i))
    }

    /// All user weights stacked as a `d × U` matrix.
    pub fn weights_matrix(&self) -> DMatrix<f64> {
        let mut w = &self.g + &self.p;
        for mut col in w.column_iter_mut() {
            col += &self.theta;
        }
        w
    }

    /// Squared distance per block: `(|dθ|², |dG|²_F, |dP|²_F)`.
    pub fn squared_deltas(&self, other: &ModelParams) -> (f64, f64, f64) {
        (
            (&self.theta - &other.theta).norm_squared(),
            (&self.g - &other.g).norm_squared(),
            (&self.p - &other.p).norm_squared(),
        )
    }

    pub(crate) fn check_matches(&self, ds: &Dataset) -> Result<()> {
        if self.dim() != ds.dim() {
            return Err(Error::DimensionMismatch(format!(
                "model has dimension {} but dataset has {}",
                self.dim(),
                ds.dim()
            )));
        }
        if self.n_users() != ds.n_users()
            || self
                .user_order
                .iter()
                .zip(ds.users())
                .any(|(id, u)| id != u.id())
        {
            return Err(Error::ShapeMismatch(
                "model user order does not match dataset users".into(),
            ));
        }
        Ok(())
    }
}

/// Regularization weights, group count and line-search settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub kappa: usize,
    pub rho0: f64,
    pub alpha: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            lambda1: 1e-2,
            lambda2: 1e-2,
            lambda3: 1e-2,
            kappa: 1,
            rho0: 1.0,
            alpha: 2.0,
            max_iters: 500,
            tol: 1e-6,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidHyperparams(msg));
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be a finite non-negative number, got {v}"));
            }
        }
        if self.kappa == 0 {
            return bad("kappa must be at least 1".into());
        }
        if !(self.rho0.is_finite() && self.rho0 > 0.0) {
            return bad(format!("rho0 must be positive, got {}", self.rho0));
        }
        if !(self.alpha.is_finite() && self.alpha > 1.0) {
            return bad(format!("alpha must be greater than 1, got {}", self.alpha));
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1".into());
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        Ok(())
    }

    /// Returns a copy with `kappa` clamped to `min(dim, n_users)`, plus
    /// whether clamping happened.
    pub fn clamped(&self, dim: usize, n_users: usize) -> (Self, bool) {
        let cap = dim.min(n_users).max(1);
        if self.kappa > cap {
            (Self { kappa: cap, ..*self }, true)
        } else {
            (*self, false)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Tolerance,
    MaxIters,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::Tolerance => "tolerance",
            StopReason::MaxIters => "max_iters",
        })
    }
}

/// One accepted proximal step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub objective: f64,
    pub loss: f64,
    pub reg1: f64,
    pub reg2: f64,
    pub reg3: f64,
    pub rho: f64,
    pub d_theta: f64,
    pub d_g: f64,
    pub d_p: f64,
}

impl IterRecord {
    pub fn total_delta(&self) -> f64 {
        self.d_theta + self.d_g + self.d_p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Objective at the starting point, before any step.
    pub initial_objective: f64,
    pub iterations: Vec<IterRecord>,
    pub converged: bool,
    pub stop_reason: StopReason,
}

impl FitReport {
    pub fn final_objective(&self) -> f64 {
        self.iterations
            .last()
            .map_or(self.initial_objective, |r| r.objective)
    }

    pub fn final_rho(&self) -> Option<f64> {
        self.iterations.last().map(|r| r.rho)
    }
}
