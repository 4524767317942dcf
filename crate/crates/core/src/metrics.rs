//! AUC with ties counted one half, per user and macro-averaged.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::aucgraph;
use crate::domain::{Dataset, ModelParams, UserTask};
use crate::error::{Error, Result};

/// Users with at most this many instances use the exact pairwise count;
/// larger users use the rank statistic.
pub const PAIRWISE_MAX_N: usize = 256;

/// Exact pairwise AUC. `None` when either class is absent.
pub fn auc_pairwise(scores: &[f64], labels: &[i8]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "one score per label");
    // Twice the number of correctly ordered pairs, ties counting one.
    let mut twice_correct: u64 = 0;
    let (mut n_pos, mut n_neg) = (0u64, 0u64);
    for (&sp, &lp) in scores.iter().zip(labels) {
        if lp != 1 {
            n_neg += 1;
            continue;
        }
        n_pos += 1;
        for (&sq, &lq) in scores.iter().zip(labels) {
            if lq == 1 {
                continue;
            }
            if sp > sq {
                twice_correct += 2;
            } else if sp == sq {
                twice_correct += 1;
            }
        }
    }
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    Some(twice_correct as f64 / (2 * n_pos * n_neg) as f64)
}

/// Rank-sum (Mann–Whitney) AUC with mid-ranks for ties, `O(n log n)`.
pub fn auc_rank(scores: &[f64], labels: &[i8]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "one score per label");
    let n = scores.len();
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of positives; mid-ranks of tie groups are
    // half-integers, so doubling keeps everything integral.
    let mut twice_rank_sum: u64 = 0;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // 1-based ranks start+1 ..= end; twice their mean is start + end + 1.
        let twice_mid = (start + end + 1) as u64;
        let pos_in_group = order[start..end].iter().filter(|&&i| labels[i] == 1).count() as u64;
        twice_rank_sum += twice_mid * pos_in_group;
        start = end;
    }
    let (np, nn) = (n_pos as u64, n_neg as u64);
    let twice_u = twice_rank_sum - np * (np + 1);
    Some(twice_u as f64 / (2 * np * nn) as f64)
}

/// AUC of `scores` against `labels`, `None` for single-class input.
pub fn auc_user(scores: &[f64], labels: &[i8]) -> Option<f64> {
    if scores.len() <= PAIRWISE_MAX_N {
        auc_pairwise(scores, labels)
    } else {
        auc_rank(scores, labels)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserAuc {
    pub user_id: String,
    pub n_pos: usize,
    pub n_neg: usize,
    pub auc: Option<f64>,
    /// Scored with the consensus weights only because the model has no
    /// column for this user.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroAuc {
    pub per_user: Vec<UserAuc>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// Users whose AUC is undefined (one class only).
    pub missing: Vec<String>,
    /// Users not present in the model.
    pub unknown_users: Vec<String>,
}

/// Weights used to score a user: the user's column if the model knows the
/// id, otherwise `theta` alone.
pub fn scoring_weights(m: &ModelParams, user_id: &str) -> (DVector<f64>, bool) {
    match m.user_index(user_id) {
        Some(i) => (m.user_weights(i).expect("index from user_order"), false),
        None => (m.theta.clone(), true),
    }
}

pub fn user_scores(u: &UserTask, w: &DVector<f64>) -> DVector<f64> {
    u.features() * w
}

/// Per-user AUC and the unweighted mean and population standard deviation
/// over users with a defined AUC.
pub fn auc_macro(ds: &Dataset, m: &ModelParams) -> MacroAuc {
    let mut per_user = Vec::with_capacity(ds.n_users());
    for u in ds.users() {
        let (w, fallback) = scoring_weights(m, u.id());
        let scores = user_scores(u, &w);
        per_user.push(UserAuc {
            user_id: u.id().to_owned(),
            n_pos: u.n_pos(),
            n_neg: u.n_neg(),
            auc: auc_user(scores.as_slice(), u.labels()),
            fallback,
        });
    }
    summarize(per_user)
}

pub fn summarize(per_user: Vec<UserAuc>) -> MacroAuc {
    let defined: Vec<f64> = per_user.iter().filter_map(|r| r.auc).collect();
    let (mean, std) = if defined.is_empty() {
        (None, None)
    } else {
        let n = defined.len() as f64;
        let mean = defined.iter().sum::<f64>() / n;
        let var = defined.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        (Some(mean), Some(var.sqrt()))
    };
    MacroAuc {
        missing: per_user
            .iter()
            .filter(|r| r.auc.is_none())
            .map(|r| r.user_id.clone())
            .collect(),
        unknown_users: per_user
            .iter()
            .filter(|r| r.fallback)
            .map(|r| r.user_id.clone())
            .collect(),
        per_user,
        mean,
        std,
    }
}

/// Per-user surrogate loss `½ · mean over pairs (1 − (s_p − s_q))²`, scored
/// like [`auc_macro`]. `None` for single-class users.
pub fn surrogate_losses(ds: &Dataset, m: &ModelParams) -> Result<Vec<Option<f64>>> {
    if ds.dim() != m.dim() {
        return Err(Error::DimensionMismatch(format!(
            "data has {} features but the model has {}",
            ds.dim(),
            m.dim()
        )));
    }
    ds.users()
        .iter()
        .map(|u| {
            if !u.has_both_classes() {
                return Ok(None);
            }
            let (w, _) = scoring_weights(m, u.id());
            let cache = aucgraph::build_cache(u)?;
            aucgraph::loss_user_fast(u, &cache, &w).map(Some)
        })
        .collect()
}
