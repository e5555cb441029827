//! Exact spectral ground truth via one-sided Jacobi SVD.
//!
//! Nothing here is recorded on a tape. Tests and reports compare the
//! differentiable estimates against these values.

use crate::densemat::{DenseMatrix, GaussianSampler};
use crate::error::{Error, Result};
use crate::relaxation::RelaxationSpec;

pub const MAX_SWEEPS: usize = 60;
/// Singular values at or below `TRUNCATION · σ₁` are treated as zero.
pub const TRUNCATION: f64 = 1e-10;
/// Convergence bound on off-diagonal Gram entries, relative to `‖S‖_F²`.
pub const OFF_DIAGONAL_TOL: f64 = 1e-12;

/// Compact SVD `S = U diag(σ) Vᵀ`, truncated at `threshold`.
#[derive(Clone, Debug)]
pub struct SvdResult {
    u: Option<DenseMatrix>,
    sigma: Vec<f64>,
    v: Option<DenseMatrix>,
    all_sigma: Vec<f64>,
    threshold: f64,
    shape: (usize, usize),
    sweeps: usize,
}

impl SvdResult {
    /// Left singular vectors, `m×r`; `None` when the rank is zero.
    pub fn u(&self) -> Option<&DenseMatrix> {
        self.u.as_ref()
    }

    /// Retained singular values, strictly positive and descending.
    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn v(&self) -> Option<&DenseMatrix> {
        self.v.as_ref()
    }

    /// All `min(m, n)` singular values before truncation.
    pub fn all_sigma(&self) -> &[f64] {
        &self.all_sigma
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    /// `U diag(f(σ)) Vᵀ` over the retained triplets.
    pub fn compose(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        let (m, n) = self.shape;
        match (&self.u, &self.v) {
            (Some(u), Some(v)) => scaled_outer(u, &self.sigma, v, f),
            _ => DenseMatrix::zeros(m, n),
        }
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        self.compose(|s| s)
    }
}

/// `A diag(f(σ)) Bᵀ`.
fn scaled_outer(
    a: &DenseMatrix,
    sigma: &[f64],
    b: &DenseMatrix,
    f: impl Fn(f64) -> f64,
) -> DenseMatrix {
    let weights: Vec<f64> = sigma.iter().map(|&s| f(s)).collect();
    let scaled = DenseMatrix::from_fn(a.rows(), a.cols(), |i, j| a[(i, j)] * weights[j]);
    scaled.matmul_nt(b).expect("factor shapes agree")
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let (p, q) = (*a, *b);
        *a = c * p - s * q;
        *b = s * p + c * q;
    }
}

fn columns_to_matrix(rows: usize, cols: &[Vec<f64>]) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols.len(), |i, j| cols[j][i])
}

/// One-sided (Hestenes) Jacobi SVD.
pub fn jacobi_svd(s: &DenseMatrix) -> Result<SvdResult> {
    if !s.is_finite() {
        return Err(Error::NonFinite {
            what: "jacobi_svd input".into(),
            location: first_non_finite(s),
        });
    }
    // Work on the tall orientation so the column count is min(m, n).
    let transposed = s.rows() < s.cols();
    let work = if transposed { s.transpose() } else { s.clone() };
    let (m, n) = work.shape();

    let mut w: Vec<Vec<f64>> = (0..n).map(|j| work.col(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    let fro2 = s.frobenius_sq();
    let abs_tol = OFF_DIAGONAL_TOL * fro2;
    let rel_tol = m as f64 * f64::EPSILON;
    let negligible = 1e-30 * fro2;

    let mut sweeps = 0;
    let mut converged = fro2 == 0.0 || n == 1;
    let mut residual = 0.0f64;
    while !converged && sweeps < MAX_SWEEPS {
        sweeps += 1;
        let mut rotated = false;
        residual = 0.0;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                residual = residual.max(gamma.abs());
                if gamma.abs() <= rel_tol * (alpha * beta).sqrt() || gamma.abs() <= negligible {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = c * t;
                let (head, tail) = w.split_at_mut(q);
                rotate(&mut head[p], &mut tail[0], c, sn);
                let (head, tail) = v.split_at_mut(q);
                rotate(&mut head[p], &mut tail[0], c, sn);
            }
        }
        converged = !rotated;
    }
    if !converged && residual >= abs_tol {
        return Err(Error::NoConvergence {
            sweeps,
            residual: residual / fro2,
        });
    }

    let norms: Vec<f64> = w.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));

    let all_sigma: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let sigma_max = all_sigma.first().copied().unwrap_or(0.0);
    let threshold = TRUNCATION * sigma_max;
    let kept: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&j| norms[j] > threshold && norms[j] > 0.0)
        .collect();

    let sigma: Vec<f64> = kept.iter().map(|&j| norms[j]).collect();
    let (u, vv) = if kept.is_empty() {
        (None, None)
    } else {
        let u_cols: Vec<Vec<f64>> = kept
            .iter()
            .map(|&j| w[j].iter().map(|x| x / norms[j]).collect())
            .collect();
        let v_cols: Vec<Vec<f64>> = kept.iter().map(|&j| v[j].clone()).collect();
        (
            Some(columns_to_matrix(m, &u_cols)),
            Some(columns_to_matrix(n, &v_cols)),
        )
    };
    let (u, vv) = if transposed { (vv, u) } else { (u, vv) };

    Ok(SvdResult {
        u,
        sigma,
        v: vv,
        all_sigma,
        threshold,
        shape: s.shape(),
        sweeps,
    })
}

fn first_non_finite(s: &DenseMatrix) -> String {
    let idx = s
        .as_slice()
        .iter()
        .position(|x| !x.is_finite())
        .unwrap_or(0);
    format!("({}, {})", idx / s.cols(), idx % s.cols())
}

/// `Σ σᵢᵖ` over the retained singular values.
pub fn exact_schatten(s: &DenseMatrix, p: u32) -> Result<f64> {
    Ok(jacobi_svd(s)?
        .sigma()
        .iter()
        .map(|x| x.powi(p as i32))
        .sum())
}

/// Number of singular values strictly above `tol`.
pub fn exact_rank(s: &DenseMatrix, tol: f64) -> Result<usize> {
    Ok(jacobi_svd(s)?
        .all_sigma()
        .iter()
        .filter(|&&x| x > tol)
        .count())
}

/// Moore–Penrose pseudo-inverse `V Σ⁻¹ Uᵀ`.
pub fn exact_pinv(s: &DenseMatrix) -> Result<DenseMatrix> {
    let svd = jacobi_svd(s)?;
    Ok(match (svd.u(), svd.v()) {
        (Some(u), Some(v)) => scaled_outer(v, svd.sigma(), u, |x| 1.0 / x),
        _ => DenseMatrix::zeros(s.cols(), s.rows()),
    })
}

/// Orthogonal projector onto the column space of `s`.
pub fn exact_projector(s: &DenseMatrix) -> Result<DenseMatrix> {
    let svd = jacobi_svd(s)?;
    Ok(match svd.u() {
        Some(u) => u.matmul_nt(u)?,
        None => DenseMatrix::zeros(s.rows(), s.rows()),
    })
}

/// `U Σ^e Uᵀ` for symmetric PSD `a`.
pub fn exact_psd_power(a: &DenseMatrix, exponent: f64) -> Result<DenseMatrix> {
    if !a.is_square() {
        return Err(Error::Shape {
            op: "exact_psd_power",
            lhs: a.shape(),
            rhs: a.shape(),
        });
    }
    let asym = a.asymmetry();
    if asym > 1e-8 {
        return Err(Error::contract(format!(
            "exact_psd_power needs a symmetric input, relative asymmetry {asym:e}"
        )));
    }
    let svd = jacobi_svd(a)?;
    Ok(match svd.u() {
        Some(u) => scaled_outer(u, svd.sigma(), u, |x| x.powf(exponent)),
        None => DenseMatrix::zeros(a.rows(), a.cols()),
    })
}

pub fn exact_psd_root(a: &DenseMatrix) -> Result<DenseMatrix> {
    exact_psd_power(a, 0.5)
}

/// `Σ h(σᵢ)` over the retained singular values.
pub fn exact_hsum(s: &DenseMatrix, h: &RelaxationSpec) -> Result<f64> {
    Ok(jacobi_svd(s)?.sigma().iter().map(|&x| h.eval(x)).sum())
}

/// Householder reflector `I − 2vvᵀ/‖v‖²`.
pub fn householder(v: &[f64]) -> DenseMatrix {
    let norm2 = dot(v, v);
    let n = v.len();
    DenseMatrix::from_fn(n, n, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        delta - 2.0 * v[i] * v[j] / norm2
    })
}

/// Orthonormal `dim×dim` matrix from Gram–Schmidt on a seeded Gaussian matrix.
pub fn seeded_orthogonal(dim: usize, seed: u64, stream: u64) -> DenseMatrix {
    let g = GaussianSampler::new(seed, stream).gaussian_matrix(dim, dim);
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(dim);
    for j in 0..dim {
        let mut c = g.col(j);
        // two passes keep the columns orthogonal to working precision
        for _ in 0..2 {
            for prev in &q {
                let r = dot(prev, &c);
                c.iter_mut().zip(prev).for_each(|(x, p)| *x -= r * p);
            }
        }
        let norm = dot(&c, &c).sqrt();
        c.iter_mut().for_each(|x| *x /= norm);
        q.push(c);
    }
    columns_to_matrix(dim, &q)
}

/// Seeded `rows×cols` matrix `Q₁ diag(σ) Q₂ᵀ` with the given singular values.
pub fn with_singular_values(rows: usize, cols: usize, sigma: &[f64], seed: u64) -> DenseMatrix {
    assert!(
        sigma.len() <= rows.min(cols),
        "more singular values than min(rows, cols)"
    );
    let q1 = seeded_orthogonal(rows, seed, 0);
    let q2 = seeded_orthogonal(cols, seed, 1);
    let r = sigma.len();
    if r == 0 {
        return DenseMatrix::zeros(rows, cols);
    }
    let left = DenseMatrix::from_fn(rows, r, |i, j| q1[(i, j)]);
    let right = DenseMatrix::from_fn(cols, r, |i, j| q2[(i, j)]);
    scaled_outer(&left, sigma, &right, |x| x)
}
