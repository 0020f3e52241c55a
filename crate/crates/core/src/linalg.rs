//! Dense linear algebra helpers: one-sided Jacobi SVD, spectral norm and
//! ridge least squares.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Thin singular value decomposition `a = u · diag(sigma) · vᵀ`.
///
/// Columns are ordered by decreasing singular value. `u` is `m × r`,
/// `v` is `n × r` with `r = min(m, n)`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Array2<f64>,
    pub sigma: Array1<f64>,
    pub v: Array2<f64>,
}

const MAX_SWEEPS: usize = 80;

/// Hestenes one-sided Jacobi on a tall matrix (`rows >= cols`).
fn jacobi_tall(a: ArrayView2<f64>) -> Svd {
    let (m, n) = a.dim();
    let mut w = a.to_owned();
    let mut v = Array2::<f64>::eye(n);

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..m {
                    let (ap, aq) = (w[[i, p]], w[[i, q]]);
                    alpha += ap * ap;
                    beta += aq * aq;
                    gamma += ap * aq;
                }
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let (ap, aq) = (w[[i, p]], w[[i, q]]);
                    w[[i, p]] = c * ap - s * aq;
                    w[[i, q]] = s * ap + c * aq;
                }
                for i in 0..n {
                    let (vp, vq) = (v[[i, p]], v[[i, q]]);
                    v[[i, p]] = c * vp - s * vq;
                    v[[i, q]] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = (0..n).map(|j| w.column(j).dot(&w.column(j)).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

    let mut u = Array2::zeros((m, n));
    let mut vs = Array2::zeros((n, n));
    let mut sigma = Array1::zeros(n);
    for (k, &j) in order.iter().enumerate() {
        sigma[k] = norms[j];
        if norms[j] > 0.0 {
            u.column_mut(k).assign(&(&w.column(j) / norms[j]));
        }
        vs.column_mut(k).assign(&v.column(j));
    }
    Svd { u, sigma, v: vs }
}

/// Thin SVD of an arbitrary dense matrix.
pub fn svd(a: ArrayView2<f64>) -> Svd {
    let (m, n) = a.dim();
    if m >= n {
        jacobi_tall(a)
    } else {
        let t = jacobi_tall(a.t());
        Svd {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        }
    }
}

impl Svd {
    /// `u_k · diag(sigma_k) · v_kᵀ`.
    pub fn reconstruct(&self, k: usize) -> Array2<f64> {
        let us = &self.u.slice(s![.., ..k]) * &self.sigma.slice(s![..k]);
        us.dot(&self.v.slice(s![.., ..k]).t())
    }
}

/// Operator 2-norm (largest singular value).
pub fn spectral_norm(a: ArrayView2<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    svd(a).sigma[0]
}

/// Projects rows of `features` onto the top `target_dim` singular directions,
/// returning `U_k Σ_k`.
///
/// Each kept left singular vector is sign-fixed so that its largest-magnitude
/// entry is positive.
pub fn svd_project(features: ArrayView2<f64>, target_dim: usize) -> Result<Array2<f64>> {
    let (m, n) = features.dim();
    if target_dim == 0 || target_dim > m.min(n) {
        return Err(Error::Dimension(format!(
            "svd target dimension {target_dim} must lie in 1..={}",
            m.min(n)
        )));
    }
    let dec = svd(features);
    let mut out = Array2::zeros((m, target_dim));
    for k in 0..target_dim {
        let col = dec.u.column(k);
        let pivot = col
            .iter()
            .copied()
            .fold(0.0_f64, |best, x| if x.abs() > best.abs() { x } else { best });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        out.column_mut(k).assign(&(&col * (sign * dec.sigma[k])));
    }
    Ok(out)
}

/// Least-squares fit `x · b ≈ y` with ridge `ridge`, returning `b` and the
/// mean (over rows) squared residual norm.
pub fn ridge_least_squares(
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    ridge: f64,
) -> Result<(Array2<f64>, f64)> {
    if x.nrows() != y.nrows() || x.nrows() == 0 {
        return Err(Error::Dimension(format!(
            "least squares needs matching non-empty row counts, got {} and {}",
            x.nrows(),
            y.nrows()
        )));
    }
    let mut gram = x.t().dot(&x);
    for i in 0..gram.nrows() {
        gram[[i, i]] += ridge;
    }
    let rhs = x.t().dot(&y);
    let b = solve_spd(gram, rhs)?;
    let resid = &x.dot(&b) - &y;
    let risk = resid.mapv(|r| r * r).sum() / x.nrows() as f64;
    Ok((b, risk))
}

/// Solves `a · x = b` for symmetric positive definite `a` by Cholesky.
fn solve_spd(a: Array2<f64>, b: Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > 0.0) {
            return Err(Error::numeric(
                "cholesky",
                format!("matrix not positive definite at pivot {j}"),
            ));
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / d;
        }
    }
    let mut x = b;
    for c in 0..x.ncols() {
        for i in 0..n {
            let mut s = x[[i, c]];
            for k in 0..i {
                s -= l[[i, k]] * x[[k, c]];
            }
            x[[i, c]] = s / l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut s = x[[i, c]];
            for k in (i + 1)..n {
                s -= l[[k, i]] * x[[k, c]];
            }
            x[[i, c]] = s / l[[i, i]];
        }
    }
    Ok(x)
}

/// Appends a column of ones.
pub fn with_intercept(x: ArrayView2<f64>) -> Array2<f64> {
    let ones = Array2::ones((x.nrows(), 1));
    ndarray::concatenate(Axis(1), &[x, ones.view()]).expect("row counts match")
}

/// Euclidean norm of a row or vector.
pub fn norm(v: ndarray::ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identity_reconstructs() {
        let a = Array2::<f64>::eye(3);
        let d = svd(a.view());
        let r = d.reconstruct(3);
        assert!((&r - &a).mapv(f64::abs).sum() < 1e-12);
    }

    #[test]
    fn wide_matrix_svd() {
        let a = array![[1.0, 2.0, 3.0, 4.0], [0.5, -1.0, 2.0, 0.0]];
        let d = svd(a.view());
        assert_eq!(d.u.dim(), (2, 2));
        assert_eq!(d.v.dim(), (4, 2));
        let r = d.reconstruct(2);
        assert!((&r - &a).mapv(f64::abs).sum() < 1e-12);
    }

    #[test]
    fn spectral_norm_of_diag() {
        assert!((spectral_norm(array![[3.0, 0.0], [0.0, 1.0]].view()) - 3.0).abs() < 1e-14);
        assert!((spectral_norm(Array2::<f64>::eye(4).view()) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn svd_project_rejects_large_target() {
        let a = Array2::<f64>::eye(3);
        assert!(matches!(svd_project(a.view(), 4), Err(Error::Dimension(_))));
        assert!(matches!(svd_project(a.view(), 0), Err(Error::Dimension(_))));
    }

    #[test]
    fn svd_project_sign_convention() {
        let a = array![[-3.0, 0.0], [0.0, 1.0], [-1.0, 0.0]];
        let p = svd_project(a.view(), 1).unwrap();
        let pivot = p
            .column(0)
            .iter()
            .copied()
            .fold(0.0_f64, |b, x| if x.abs() > b.abs() { x } else { b });
        assert!(pivot > 0.0);
    }

    #[test]
    fn ridge_recovers_exact_linear_map() {
        let x = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [2.0, -1.0]];
        let b_true = array![[2.0], [-3.0]];
        let y = x.dot(&b_true);
        let (b, risk) = ridge_least_squares(x.view(), y.view(), 1e-12).unwrap();
        assert!((&b - &b_true).mapv(f64::abs).sum() < 1e-9);
        assert!(risk < 1e-18);
    }
}
