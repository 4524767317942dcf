//! Proximal gradient solver with a growing step parameter `ρ`.
//!
//! Every iteration linearizes the loss at the previous iterate, takes the
//! three closed-form proximal steps at the current `ρ`, and multiplies `ρ` by
//! `alpha` until the quadratic upper model
//!
//! ```text
//! L(W) < L(W_ref) + Σ_A ⟨∇_A L(W_ref), DA⟩ + (ρ/2)‖DA‖²
//! ```
//!
//! holds strictly. Because each proximal step is a global minimizer of its
//! subproblem, the objective then decreases strictly whenever the iterate
//! moves. `ρ` is never decreased.

use log::{debug, warn};
use nalgebra::DMatrix;

use crate::aucgraph::{self, LossGrad, UserLossCache};
use crate::domain::{
    validate_dataset, Dataset, FitReport, Hyperparams, IterRecord, ModelParams, Severity, StopReason,
};
use crate::error::{Error, Result};
use crate::proxops;

/// Upper bound on `ρ` growths inside one line search. Reaching it means the
/// gradient does not match the loss.
pub const MAX_GROWTHS: usize = 60;

/// The objective split into its parts. Regularizer values are already
/// multiplied by their λ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub loss: f64,
    pub reg1: f64,
    pub reg2: f64,
    pub reg3: f64,
}

impl Objective {
    pub fn total(&self) -> f64 {
        self.loss + self.reg1 + self.reg2 + self.reg3
    }
}

pub fn regularizers(m: &ModelParams, hp: &Hyperparams) -> Result<(f64, f64, f64)> {
    let kappa = hp.kappa.min(m.dim().min(m.n_users()).max(1));
    Ok((
        hp.lambda1 * proxops::reg_value_ridge(&m.theta),
        hp.lambda2 * proxops::reg_value_truncated_sv(&m.g, kappa)?,
        hp.lambda3 * proxops::reg_value_group_columns(&m.p),
    ))
}

pub fn objective(
    ds: &Dataset,
    caches: &[UserLossCache],
    m: &ModelParams,
    hp: &Hyperparams,
) -> Result<Objective> {
    let loss = aucgraph::total_loss(ds, caches, m)?;
    let (reg1, reg2, reg3) = regularizers(m, hp)?;
    Ok(Objective {
        loss,
        reg1,
        reg2,
        reg3,
    })
}

/// Proximal update from a precomputed gradient at `m`.
pub fn prox_from_gradient(
    m: &ModelParams,
    grad: &LossGrad,
    hp: &Hyperparams,
    rho: f64,
) -> Result<ModelParams> {
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::InvalidArgument(format!("rho must be positive, got {rho}")));
    }
    let step = 1.0 / rho;
    let theta_t = &m.theta - &grad.grad_theta * step;
    let g_t = &m.g - &grad.grad_g * step;
    let p_t = &m.p - &grad.grad_p * step;
    let kappa = hp.kappa.min(m.dim().min(m.n_users()).max(1));
    ModelParams::new(
        proxops::prox_ridge(&theta_t, hp.lambda1 / rho)?,
        proxops::prox_truncated_sv(&g_t, kappa, hp.lambda2 / rho)?,
        proxops::prox_group_columns(&p_t, hp.lambda3 / rho)?,
        m.user_order().to_vec(),
    )
}

/// One proximal gradient step at a fixed `rho`.
pub fn proximal_step(
    ds: &Dataset,
    caches: &[UserLossCache],
    m: &ModelParams,
    hp: &Hyperparams,
    rho: f64,
) -> Result<ModelParams> {
    let grad = aucgraph::gradient_fast(ds, caches, m)?;
    prox_from_gradient(m, &grad, hp, rho)
}

fn frobenius_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// `RHS − LHS` of the upper-model test, given the gradient at `m_ref`.
/// Positive means the bound holds.
pub fn surrogate_gap(
    ds: &Dataset,
    caches: &[UserLossCache],
    m_ref: &ModelParams,
    grad_ref: &LossGrad,
    m_new: &ModelParams,
    rho: f64,
) -> Result<f64> {
    let d_theta = &m_new.theta - &m_ref.theta;
    let d_g = &m_new.g - &m_ref.g;
    let d_p = &m_new.p - &m_ref.p;
    let linear = grad_ref.grad_theta.dot(&d_theta)
        + frobenius_dot(&grad_ref.grad_g, &d_g)
        + frobenius_dot(&grad_ref.grad_p, &d_p);
    let quadratic = 0.5 * rho * (d_theta.norm_squared() + d_g.norm_squared() + d_p.norm_squared());
    let change = aucgraph::loss_change(ds, caches, m_ref, m_new)?;
    Ok(linear + quadratic - change)
}

/// Whether `L(m_new) < L(m_ref) + Ψ_ρ(Dθ) + Ψ_ρ(DG) + Ψ_ρ(DP)`.
pub fn surrogate_bound_holds(
    ds: &Dataset,
    caches: &[UserLossCache],
    m_ref: &ModelParams,
    m_new: &ModelParams,
    rho: f64,
) -> Result<bool> {
    let grad = aucgraph::gradient_fast(ds, caches, m_ref)?;
    Ok(surrogate_gap(ds, caches, m_ref, &grad, m_new, rho)? > 0.0)
}

#[derive(Debug, Clone)]
pub struct LineSearchResult {
    pub rho: f64,
    pub params: ModelParams,
    /// Number of times `rho` was multiplied by `alpha`.
    pub growths: usize,
}

enum Search {
    Accepted(LineSearchResult),
    Stationary,
}

fn search(
    ds: &Dataset,
    caches: &[UserLossCache],
    m_ref: &ModelParams,
    grad: &LossGrad,
    hp: &Hyperparams,
    rho_in: f64,
    stop_when_stationary: bool,
) -> Result<Search> {
    let mut rho = rho_in;
    for growths in 0..=MAX_GROWTHS {
        let cand = prox_from_gradient(m_ref, grad, hp, rho)?;
        if stop_when_stationary && cand == *m_ref {
            return Ok(Search::Stationary);
        }
        if surrogate_gap(ds, caches, m_ref, grad, &cand, rho)? > 0.0 {
            return Ok(Search::Accepted(LineSearchResult {
                rho,
                params: cand,
                growths,
            }));
        }
        rho *= hp.alpha;
    }
    Err(Error::LineSearchFailed {
        attempts: MAX_GROWTHS,
        rho,
    })
}

/// Grows `rho` from `rho_in` until the proximal candidate satisfies the
/// upper-model test. A stationary reference never passes (the test is an
/// equality there) and ends in [`Error::LineSearchFailed`].
pub fn line_search(
    ds: &Dataset,
    caches: &[UserLossCache],
    m_ref: &ModelParams,
    hp: &Hyperparams,
    rho_in: f64,
) -> Result<LineSearchResult> {
    if hp.alpha.is_nan() || hp.alpha <= 1.0 {
        return Err(Error::InvalidHyperparams(format!(
            "alpha must be greater than 1, got {}",
            hp.alpha
        )));
    }
    let grad = aucgraph::gradient_fast(ds, caches, m_ref)?;
    match search(ds, caches, m_ref, &grad, hp, rho_in, false)? {
        Search::Accepted(r) => Ok(r),
        Search::Stationary => unreachable!("stationarity is only reported on request"),
    }
}

/// Fits from zeros (or `init`).
pub fn fit(
    ds: &Dataset,
    hp: &Hyperparams,
    init: Option<&ModelParams>,
) -> Result<(ModelParams, FitReport)> {
    fit_with_trace(ds, hp, init, |_, _| {})
}

/// Like [`fit`], calling `sink` with every accepted iteration and the
/// iterate it produced.
pub fn fit_with_trace<F>(
    ds: &Dataset,
    hp: &Hyperparams,
    init: Option<&ModelParams>,
    mut sink: F,
) -> Result<(ModelParams, FitReport)>
where
    F: FnMut(&IterRecord, &ModelParams),
{
    hp.validate()?;
    if let Some(issue) = validate_dataset(ds)
        .into_iter()
        .find(|i| i.severity == Severity::Error)
    {
        return Err(match (issue.kind, &issue.user) {
            (crate::domain::IssueKind::SingleClass, Some(user)) => {
                let u = ds.user(user).expect("flagged user exists");
                Error::SingleClassUser {
                    user: user.clone(),
                    n_pos: u.n_pos(),
                    n_neg: u.n_neg(),
                }
            }
            _ => issue.into_error(),
        });
    }
    let (hp, clamped) = hp.clamped(ds.dim(), ds.n_users());
    if clamped {
        warn!(
            "kappa clamped to min(d, U) = {} (d = {}, U = {})",
            hp.kappa,
            ds.dim(),
            ds.n_users()
        );
    }
    let caches = aucgraph::build_caches(ds)?;
    let mut m = match init {
        Some(m0) => {
            m0.check_matches(ds)?;
            m0.clone()
        }
        None => ModelParams::zeros(ds.dim(), ds.user_ids()),
    };
    let mut obj = objective(ds, &caches, &m, &hp)?;
    let mut report = FitReport {
        initial_objective: obj.total(),
        iterations: Vec::new(),
        converged: false,
        stop_reason: StopReason::MaxIters,
    };
    let mut rho = hp.rho0;

    for iter in 1..=hp.max_iters {
        let grad = aucgraph::gradient_fast(ds, &caches, &m)?;
        let accepted = match search(ds, &caches, &m, &grad, &hp, rho, true)? {
            Search::Accepted(r) => r,
            Search::Stationary => {
                debug!("iteration {iter}: proximal step leaves the iterate unchanged");
                report.converged = true;
                report.stop_reason = StopReason::Tolerance;
                break;
            }
        };
        let next = objective(ds, &caches, &accepted.params, &hp)?;
        let (before, after) = (obj.total(), next.total());
        if after > before {
            // The step decreases the objective in exact arithmetic; a rise
            // here is rounding noise at the floor of attainable progress.
            debug!("iteration {iter}: objective change below rounding ({before} -> {after})");
            report.converged = true;
            report.stop_reason = StopReason::Tolerance;
            break;
        }
        let (d_theta, d_g, d_p) = accepted.params.squared_deltas(&m);
        let record = IterRecord {
            iter,
            objective: after,
            loss: next.loss,
            reg1: next.reg1,
            reg2: next.reg2,
            reg3: next.reg3,
            rho: accepted.rho,
            d_theta,
            d_g,
            d_p,
        };
        sink(&record, &accepted.params);
        report.iterations.push(record);
        m = accepted.params;
        rho = accepted.rho;
        obj = next;
        if before - after <= hp.tol * before.max(1.0) {
            report.converged = true;
            report.stop_reason = StopReason::Tolerance;
            break;
        }
    }
    Ok((m, report))
}

/// Lipschitz constant of the loss gradient:
/// `3U·√(2U+1)·maxᵢ nᵢ‖Xᵢ‖₂² / (n₊ᵢ n₋ᵢ)`.
pub fn lipschitz_bound(ds: &Dataset) -> Result<f64> {
    let u = ds.n_users() as f64;
    let mut worst: f64 = 0.0;
    for user in ds.users() {
        let spectral = aucgraph::laplacian_spectral_norm(user)?;
        let gram = user.features().tr_mul(user.features());
        let sigma_sq = gram
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(0.0, f64::max);
        worst = worst.max(spectral * sigma_sq);
    }
    Ok(3.0 * u * (2.0 * u + 1.0).sqrt() * worst)
}

/// Monotonicity check and running minima of the squared parameter changes.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceSummary {
    pub iterations: usize,
    pub running_min_theta: Vec<f64>,
    pub running_min_g: Vec<f64>,
    pub running_min_p: Vec<f64>,
    pub running_min_total: Vec<f64>,
    /// `T · min_{k<T} (|Δθ|² + |ΔG|² + |ΔP|²)`: the smallest constant `C_T`
    /// for which the running minimum stays below `C_T / T`.
    pub rate_constants: Vec<f64>,
}

fn running_min(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut best = f64::INFINITY;
    values
        .map(|v| {
            best = best.min(v);
            best
        })
        .collect()
}

pub fn convergence_diagnostics(report: &FitReport) -> Result<ConvergenceSummary> {
    let mut prev = report.initial_objective;
    for r in &report.iterations {
        if r.objective > prev {
            return Err(Error::NonMonotone {
                iter: r.iter,
                before: prev,
                after: r.objective,
            });
        }
        prev = r.objective;
    }
    let it = &report.iterations;
    let summary = ConvergenceSummary {
        iterations: it.len(),
        running_min_theta: running_min(it.iter().map(|r| r.d_theta)),
        running_min_g: running_min(it.iter().map(|r| r.d_g)),
        running_min_p: running_min(it.iter().map(|r| r.d_p)),
        running_min_total: running_min(it.iter().map(IterRecord::total_delta)),
        rate_constants: running_min(it.iter().map(IterRecord::total_delta))
            .into_iter()
            .enumerate()
            .map(|(k, v)| (k + 1) as f64 * v)
            .collect(),
    };
    if let Some(first) = it.first() {
        debug_assert!(summary.running_min_total.iter().all(|&v| v <= first.total_delta()));
    }
    Ok(summary)
}
