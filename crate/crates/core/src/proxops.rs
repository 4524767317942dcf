//! Closed-form proximal operators for the three regularizers.
//!
//! Each operator solves `argmin_x ½‖x − t‖² + c·R(x)` where `c` is the
//! regularization weight divided by the current step parameter `ρ`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const SVD_EPS: f64 = 1e-15;
const SVD_MAX_ITERS: usize = 10_000;

/// Thin SVD `A = U Σ Vᵀ` with singular values sorted non-increasing.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub u_left: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub v_right: DMatrix<f64>,
}

impl SvdFactors {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.reconstruct_with(&self.sigma)
    }

    fn reconstruct_with(&self, sigma: &DVector<f64>) -> DMatrix<f64> {
        let mut us = self.u_left.clone();
        for (mut col, &s) in us.column_iter_mut().zip(sigma.iter()) {
            col *= s;
        }
        us * self.v_right.transpose()
    }
}

pub fn thin_svd(a: &DMatrix<f64>) -> Result<SvdFactors> {
    let svd = a
        .clone()
        .try_svd(true, true, SVD_EPS, SVD_MAX_ITERS)
        .ok_or(Error::SvdFailed)?;
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::SvdFailed),
    };
    let m = svd.singular_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sigma = DVector::from_iterator(m, order.iter().map(|&i| svd.singular_values[i]));
    let u_left = DMatrix::from_columns(&order.iter().map(|&i| u.column(i)).collect::<Vec<_>>());
    let v_right = DMatrix::from_columns(
        &order
            .iter()
            .map(|&i| v_t.row(i).transpose())
            .collect::<Vec<_>>(),
    );
    Ok(SvdFactors {
        u_left,
        sigma,
        v_right,
    })
}

/// Singular values, non-increasing.
pub fn singular_values(a: &DMatrix<f64>) -> Result<DVector<f64>> {
    let svd = a
        .clone()
        .try_svd(false, false, SVD_EPS, SVD_MAX_ITERS)
        .ok_or(Error::SvdFailed)?;
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(DVector::from_vec(s))
}

fn check_weight(c: f64) -> Result<()> {
    if c.is_finite() && c >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "shrinkage weight must be finite and non-negative, got {c}"
        )))
    }
}

/// Prox of `c‖θ‖²`: `t / (1 + 2c)`.
pub fn prox_ridge(t: &DVector<f64>, c: f64) -> Result<DVector<f64>> {
    check_weight(c)?;
    Ok(t / (1.0 + 2.0 * c))
}

/// Prox of `c‖P‖₁,₂`: each column is shrunk toward zero by `c` in
/// Euclidean norm, and killed when its norm is at most `c`.
pub fn prox_group_columns(p: &DMatrix<f64>, c: f64) -> Result<DMatrix<f64>> {
    check_weight(c)?;
    let mut out = p.clone();
    for mut col in out.column_iter_mut() {
        let norm = col.norm();
        let scale = if norm > c { 1.0 - c / norm } else { 0.0 };
        col *= scale;
    }
    Ok(out)
}

/// Prox of `c·Σ_{i>κ} σᵢ²(G)`: the top `κ` singular values are kept and the
/// tail is scaled by `1 / (1 + 2c)`. Since the tail only shrinks, the
/// output singular values stay in the input order.
///
/// When `κ ≥ min(d, U)` there is no tail and the input is returned as is.
pub fn prox_truncated_sv(g: &DMatrix<f64>, kappa: usize, c: f64) -> Result<DMatrix<f64>> {
    check_weight(c)?;
    if kappa == 0 {
        return Err(Error::InvalidArgument("kappa must be at least 1".into()));
    }
    if kappa >= g.nrows().min(g.ncols()) || c == 0.0 {
        return Ok(g.clone());
    }
    let f = thin_svd(g)?;
    let shrink = 1.0 / (1.0 + 2.0 * c);
    let sigma = DVector::from_iterator(
        f.sigma.len(),
        f.sigma
            .iter()
            .enumerate()
            .map(|(i, &s)| if i < kappa { s } else { s * shrink }),
    );
    Ok(f.reconstruct_with(&sigma))
}

/// `Σ_{i>κ} σᵢ²(G)`.
pub fn reg_value_truncated_sv(g: &DMatrix<f64>, kappa: usize) -> Result<f64> {
    if kappa >= g.nrows().min(g.ncols()) {
        return Ok(0.0);
    }
    let s = singular_values(g)?;
    Ok(s.iter().skip(kappa).map(|v| v * v).sum())
}

/// `‖θ‖²`.
pub fn reg_value_ridge(theta: &DVector<f64>) -> f64 {
    theta.norm_squared()
}

/// `‖P‖₁,₂`, the sum of column norms.
pub fn reg_value_group_columns(p: &DMatrix<f64>) -> f64 {
    p.column_iter().map(|c| c.norm()).sum()
}
