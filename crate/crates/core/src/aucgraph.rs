//! Pairwise AUC surrogate loss and its gradient.
//!
//! For one user, the squared surrogate averaged over all positive/negative
//! pairs equals a quadratic form in the Laplacian `L` of the complete
//! bipartite "AUC graph" (edge weight `1 / (n₊ n₋)`):
//!
//! ```text
//! ℓ = ½ (ỹ − Xw)ᵀ L (ỹ − Xw) = ½ · mean_{p,q} (1 − (f_p − f_q))²
//! ```
//!
//! `L` is never materialized. With `d_k = 1/n₊` on positives and `1/n₋` on
//! negatives,
//!
//! ```text
//! aᵀ L b = Σ_k d_k a_k b_k − mean₊(a)·mean₋(b) − mean₋(a)·mean₊(b)
//! ```
//!
//! so every loss, gradient and bilinear evaluation costs `O(n·d)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::domain::{Dataset, ModelParams, UserTask};
use crate::error::{Error, Result};

/// Per-user quantities that depend only on the data, built once per dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct UserLossCache {
    /// `Xᵀỹ / n₊`
    pub mean_pos_x: DVector<f64>,
    /// `Xᵀ(1 − ỹ) / n₋`
    pub mean_neg_x: DVector<f64>,
    /// Diagonal of `L`: `1/n₊` for positives, `1/n₋` for negatives.
    pub diag_weights: DVector<f64>,
    pub ytilde: DVector<f64>,
    n_pos: usize,
    n_neg: usize,
}

impl UserLossCache {
    pub fn n_pos(&self) -> usize {
        self.n_pos
    }

    pub fn n_neg(&self) -> usize {
        self.n_neg
    }

    fn len(&self) -> usize {
        self.ytilde.len()
    }

    /// Class means of `v`: `(mean over positives, mean over negatives)`.
    pub fn class_means(&self, v: &DVector<f64>) -> (f64, f64) {
        let (mut sp, mut sn) = (0.0, 0.0);
        for (&vk, &yk) in v.iter().zip(self.ytilde.iter()) {
            if yk == 1.0 {
                sp += vk;
            } else {
                sn += vk;
            }
        }
        (sp / self.n_pos as f64, sn / self.n_neg as f64)
    }

    /// `L v` in `O(n)`.
    pub fn apply_laplacian(&self, v: &DVector<f64>) -> DVector<f64> {
        let (mp, mn) = self.class_means(v);
        let (inv_pos, inv_neg) = (1.0 / self.n_pos as f64, 1.0 / self.n_neg as f64);
        DVector::from_iterator(
            v.len(),
            v.iter().zip(self.ytilde.iter()).map(|(&vk, &yk)| {
                if yk == 1.0 {
                    (vk - mn) * inv_pos
                } else {
                    (vk - mp) * inv_neg
                }
            }),
        )
    }

    /// `aᵀ L b` in `O(n)`.
    pub fn bilinear(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        let (ap, an) = self.class_means(a);
        let (bp, bn) = self.class_means(b);
        let diag: f64 = self
            .diag_weights
            .iter()
            .zip(a.iter().zip(b.iter()))
            .map(|(&dk, (&ak, &bk))| dk * ak * bk)
            .sum();
        diag - ap * bn - an * bp
    }
}

/// Loss and gradients with respect to every block of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad_theta: DVector<f64>,
    pub grad_g: DMatrix<f64>,
    pub grad_p: DMatrix<f64>,
}

impl LossGrad {
    pub fn zeros(dim: usize, n_users: usize) -> Self {
        Self {
            loss: 0.0,
            grad_theta: DVector::zeros(dim),
            grad_g: DMatrix::zeros(dim, n_users),
            grad_p: DMatrix::zeros(dim, n_users),
        }
    }
}

pub fn build_cache(u: &UserTask) -> Result<UserLossCache> {
    u.require_both_classes()?;
    let (n_pos, n_neg) = (u.n_pos(), u.n_neg());
    let ytilde = u.ytilde();
    let x = u.features();
    let mut mean_pos_x = DVector::zeros(u.dim());
    let mut mean_neg_x = DVector::zeros(u.dim());
    for (row, &yk) in x.row_iter().zip(ytilde.iter()) {
        if yk == 1.0 {
            mean_pos_x += row.transpose();
        } else {
            mean_neg_x += row.transpose();
        }
    }
    mean_pos_x /= n_pos as f64;
    mean_neg_x /= n_neg as f64;
    let diag_weights = ytilde.map(|yk| if yk == 1.0 { 1.0 / n_pos as f64 } else { 1.0 / n_neg as f64 });
    Ok(UserLossCache {
        mean_pos_x,
        mean_neg_x,
        diag_weights,
        ytilde,
        n_pos,
        n_neg,
    })
}

/// Caches for every user, in dataset order.
pub fn build_caches(ds: &Dataset) -> Result<Vec<UserLossCache>> {
    ds.users().iter().map(build_cache).collect()
}

fn check_user_inputs(u: &UserTask, cache: &UserLossCache, w: &DVector<f64>) -> Result<()> {
    if w.len() != u.dim() {
        return Err(Error::DimensionMismatch(format!(
            "weight vector has length {} but user `{}` has {} features",
            w.len(),
            u.id(),
            u.dim()
        )));
    }
    if cache.len() != u.n_samples() || cache.mean_pos_x.len() != u.dim() {
        return Err(Error::DimensionMismatch(format!(
            "cache does not belong to user `{}`",
            u.id()
        )));
    }
    Ok(())
}

/// Residual `τ = ỹ − Xw`.
fn residual(u: &UserTask, cache: &UserLossCache, w: &DVector<f64>) -> DVector<f64> {
    let mut tau = cache.ytilde.clone();
    tau.gemv(-1.0, u.features(), w, 1.0);
    tau
}

/// `½ τᵀLτ` with the class means of `τ` read off the cached class means of
/// `X`.
fn half_quadratic(cache: &UserLossCache, tau: &DVector<f64>, w: &DVector<f64>) -> f64 {
    let mean_pos_tau = 1.0 - cache.mean_pos_x.dot(w);
    let mean_neg_tau = -cache.mean_neg_x.dot(w);
    let diag: f64 = cache
        .diag_weights
        .iter()
        .zip(tau.iter())
        .map(|(&dk, &tk)| dk * tk * tk)
        .sum();
    0.5 * (diag - 2.0 * mean_pos_tau * mean_neg_tau)
}

pub fn loss_user_fast(u: &UserTask, cache: &UserLossCache, w: &DVector<f64>) -> Result<f64> {
    check_user_inputs(u, cache, w)?;
    let tau = residual(u, cache, w);
    Ok(half_quadratic(cache, &tau, w))
}

/// Per-user loss and `Δ = −Xᵀ L τ = XᵀLXw − XᵀLỹ`.
pub fn loss_grad_user(
    u: &UserTask,
    cache: &UserLossCache,
    w: &DVector<f64>,
) -> Result<(f64, DVector<f64>)> {
    check_user_inputs(u, cache, w)?;
    let tau = residual(u, cache, w);
    let loss = half_quadratic(cache, &tau, w);
    let mean_pos_tau = 1.0 - cache.mean_pos_x.dot(w);
    let mean_neg_tau = -cache.mean_neg_x.dot(w);
    // Xᵀ L τ = Xᵀ(d ⊙ τ) − mean₋(τ)·mean₊(X) − mean₊(τ)·mean₋(X)
    let weighted = cache.diag_weights.component_mul(&tau);
    let mut delta = u.features().tr_mul(&weighted);
    delta.axpy(-mean_neg_tau, &cache.mean_pos_x, 1.0);
    delta.axpy(-mean_pos_tau, &cache.mean_neg_x, 1.0);
    delta.neg_mut();
    Ok((loss, delta))
}

/// Reference evaluation by explicit double loop over all positive/negative
/// pairs: `½ · mean (1 − (f_p − f_q))²`.
pub fn loss_user_naive(u: &UserTask, w: &DVector<f64>) -> Result<f64> {
    u.require_both_classes()?;
    if w.len() != u.dim() {
        return Err(Error::DimensionMismatch(format!(
            "weight vector has length {} but user `{}` has {} features",
            w.len(),
            u.id(),
            u.dim()
        )));
    }
    let scores = u.features() * w;
    Ok(naive_pairwise_loss(&scores, u.labels()))
}

/// `½ · mean over pairs of (1 − (s_p − s_q))²` straight from scores.
pub fn naive_pairwise_loss(scores: &DVector<f64>, labels: &[i8]) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for (p, &lp) in labels.iter().enumerate() {
        if lp != 1 {
            continue;
        }
        for (q, &lq) in labels.iter().enumerate() {
            if lq == 1 {
                continue;
            }
            let r = 1.0 - (scores[p] - scores[q]);
            total += r * r;
            pairs += 1;
        }
    }
    0.5 * total / pairs as f64
}

/// Pairwise-loop loss and gradient, `O(n₊ n₋ d)`. Used as the slow baseline
/// in benchmarks.
pub fn loss_grad_user_naive(u: &UserTask, w: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
    let loss = loss_user_naive(u, w)?;
    let x = u.features();
    let scores = x * w;
    let labels = u.labels();
    let d = u.dim();
    let mut grad = DVector::zeros(d);
    for (p, &lp) in labels.iter().enumerate() {
        if lp != 1 {
            continue;
        }
        for (q, &lq) in labels.iter().enumerate() {
            if lq == 1 {
                continue;
            }
            let r = 1.0 - (scores[p] - scores[q]);
            for k in 0..d {
                grad[k] -= r * (x[(p, k)] - x[(q, k)]);
            }
        }
    }
    grad /= (u.n_pos() * u.n_neg()) as f64;
    Ok((loss, grad))
}

fn check_dataset_inputs(ds: &Dataset, caches: &[UserLossCache], m: &ModelParams) -> Result<()> {
    m.check_matches(ds)?;
    if caches.len() != ds.n_users() {
        return Err(Error::DimensionMismatch(format!(
            "{} caches for {} users",
            caches.len(),
            ds.n_users()
        )));
    }
    Ok(())
}

/// Total loss and the gradient with respect to `theta`, `G` and `P`.
///
/// Users are processed in parallel; the reduction runs in user order so the
/// result is bitwise identical for any thread count.
pub fn gradient_fast(ds: &Dataset, caches: &[UserLossCache], m: &ModelParams) -> Result<LossGrad> {
    check_dataset_inputs(ds, caches, m)?;
    let per_user: Vec<(f64, DVector<f64>)> = ds
        .users()
        .par_iter()
        .zip(caches.par_iter())
        .enumerate()
        .map(|(i, (u, c))| loss_grad_user(u, c, &m.user_weights(i)?))
        .collect::<Result<_>>()?;

    let mut out = LossGrad::zeros(ds.dim(), ds.n_users());
    for (i, (loss, delta)) in per_user.into_iter().enumerate() {
        out.loss += loss;
        out.grad_theta += &delta;
        out.grad_g.set_column(i, &delta);
    }
    out.grad_p.copy_from(&out.grad_g);
    Ok(out)
}

pub fn total_loss(ds: &Dataset, caches: &[UserLossCache], m: &ModelParams) -> Result<f64> {
    check_dataset_inputs(ds, caches, m)?;
    let per_user: Vec<f64> = ds
        .users()
        .par_iter()
        .zip(caches.par_iter())
        .enumerate()
        .map(|(i, (u, c))| loss_user_fast(u, c, &m.user_weights(i)?))
        .collect::<Result<_>>()?;
    Ok(per_user.into_iter().sum())
}

/// `L(to) − L(from)` without subtracting two large totals.
///
/// Per user this is `½ (τ₁ − τ₀)ᵀ L (τ₁ + τ₀)` with `τ₁ − τ₀ = −X(w₁ − w₀)`.
pub fn loss_change(
    ds: &Dataset,
    caches: &[UserLossCache],
    from: &ModelParams,
    to: &ModelParams,
) -> Result<f64> {
    check_dataset_inputs(ds, caches, from)?;
    check_dataset_inputs(ds, caches, to)?;
    let per_user: Vec<f64> = ds
        .users()
        .par_iter()
        .zip(caches.par_iter())
        .enumerate()
        .map(|(i, (u, c))| -> Result<f64> {
            let w0 = from.user_weights(i)?;
            let w1 = to.user_weights(i)?;
            let x = u.features();
            let diff = x * (&w1 - &w0);
            let mut sum = &c.ytilde * 2.0;
            sum.gemv(-1.0, x, &(&w1 + &w0), 1.0);
            Ok(-0.5 * c.bilinear(&diff, &sum))
        })
        .collect::<Result<_>>()?;
    Ok(per_user.into_iter().sum())
}

/// Spectral norm of the user's AUC-graph Laplacian, `n / (n₊ n₋)`.
pub fn laplacian_spectral_norm(u: &UserTask) -> Result<f64> {
    u.require_both_classes()?;
    Ok(u.n_samples() as f64 / (u.n_pos() * u.n_neg()) as f64)
}
