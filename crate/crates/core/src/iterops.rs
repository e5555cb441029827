//! Differentiable iterative kernels: Ben-Israel pseudo-inverse, coupled
//! Newton–Schulz square root, and the projection built on them.
//!
//! Every kernel is unrolled onto the caller's [`Tape`], so gradients flow
//! through all iterations.

use crate::autodiff::{Tape, Var};
use crate::densemat::DenseMatrix;
use crate::error::{Error, Result};

/// Symmetry tolerance for [`approx_root`] inputs, relative to `‖A‖_F`.
pub const SYMMETRY_TOL: f64 = 1e-8;
pub const DEFAULT_JITTER: f64 = 1e-8;

/// Initial scale `α` of the pseudo-inverse iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AlphaPolicy {
    /// `α = 1/‖S‖_F²`, which is below `2/σ₁²` for every nonzero `S`.
    Auto,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterConfig {
    /// Pseudo-inverse iterations.
    pub k1: usize,
    /// Newton–Schulz iterations.
    pub k2: usize,
    pub alpha: AlphaPolicy,
    /// Optional `ε·I` shift applied to square-root inputs.
    pub jitter: Option<f64>,
}

impl Default for IterConfig {
    fn default() -> Self {
        Self {
            k1: 10,
            k2: 30,
            alpha: AlphaPolicy::Auto,
            jitter: None,
        }
    }
}

impl IterConfig {
    pub fn with_iters(k1: usize, k2: usize) -> Self {
        Self {
            k1,
            k2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k1 == 0 || self.k2 == 0 {
            return Err(Error::contract(format!(
                "iteration counts must be at least 1 (k1 = {}, k2 = {})",
                self.k1, self.k2
            )));
        }
        if let AlphaPolicy::Fixed(a) = self.alpha {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::contract(format!(
                    "fixed alpha must be positive, got {a}"
                )));
            }
        }
        if let Some(eps) = self.jitter {
            if !(eps >= 0.0 && eps.is_finite()) {
                return Err(Error::contract(format!(
                    "jitter must be non-negative, got {eps}"
                )));
            }
        }
        Ok(())
    }
}

/// `k1` steps of `X ← 2X − X S X` from `X₀ = α Sᵀ`.
///
/// The zero matrix maps to zero regardless of the policy.
pub fn approx_pseudo_inverse(tape: &mut Tape, s: Var, cfg: &IterConfig) -> Result<Var> {
    cfg.validate()?;
    if tape.value(s).as_slice().iter().all(|x| x.is_nan()) {
        return Err(Error::contract("pseudo-inverse input is entirely NaN"));
    }
    let (m, n) = tape.value(s).shape();
    let st = tape.transpose(s);
    let mut x = match cfg.alpha {
        AlphaPolicy::Fixed(a) => tape.scale(st, a),
        AlphaPolicy::Auto => {
            let fro_sq = tape.frobenius_sq(s);
            if tape.scalar(fro_sq) == 0.0 {
                st
            } else {
                // α stays on the tape so the derivative sees its dependence on S
                let alpha = tape.pow_scalar(fro_sq, -1.0)?;
                tape.mul_scalar(st, alpha)?
            }
        }
    };
    for _ in 0..cfg.k1 {
        // associate through the smaller of the two inner Gram shapes
        let xsx = if m <= n {
            let sx = tape.matmul(s, x)?;
            tape.matmul(x, sx)?
        } else {
            let xs = tape.matmul(x, s)?;
            tape.matmul(xs, x)?
        };
        let doubled = tape.scale(x, 2.0);
        x = tape.sub(doubled, xsx)?;
    }
    Ok(x)
}

/// `S · (X · G)` for an already computed approximate pseudo-inverse `X`.
pub fn project_with(tape: &mut Tape, s: Var, pinv: Var, g: Var) -> Result<Var> {
    let xg = tape.matmul(pinv, g)?;
    tape.matmul(s, xg)
}

/// Approximate orthogonal projection of `g` (m×1) onto the column space of `s`.
pub fn approx_project(tape: &mut Tape, s: Var, g: &DenseMatrix, cfg: &IterConfig) -> Result<Var> {
    if g.cols() != 1 {
        return Err(Error::Shape {
            op: "approx_project",
            lhs: tape.value(s).shape(),
            rhs: g.shape(),
        });
    }
    approx_project_batch(tape, s, g, cfg)
}

/// Column-wise projection of an m×N probe block.
pub fn approx_project_batch(
    tape: &mut Tape,
    s: Var,
    g: &DenseMatrix,
    cfg: &IterConfig,
) -> Result<Var> {
    if g.rows() != tape.value(s).rows() {
        return Err(Error::Shape {
            op: "approx_project",
            lhs: tape.value(s).shape(),
            rhs: g.shape(),
        });
    }
    let pinv = approx_pseudo_inverse(tape, s, cfg)?;
    let g = tape.constant(g.clone());
    project_with(tape, s, pinv, g)
}

/// Principal square root of a symmetric PSD matrix by coupled Newton–Schulz.
pub fn approx_root(tape: &mut Tape, a: Var, cfg: &IterConfig) -> Result<Var> {
    cfg.validate()?;
    let value = tape.value(a);
    if !value.is_square() {
        return Err(Error::Shape {
            op: "approx_root",
            lhs: value.shape(),
            rhs: value.shape(),
        });
    }
    let asym = value.asymmetry();
    if asym > SYMMETRY_TOL {
        return Err(Error::contract(format!(
            "square-root input is not symmetric (relative asymmetry {asym:e})"
        )));
    }
    let m = value.rows();

    let at = tape.transpose(a);
    let sum = tape.add(a, at)?;
    let mut sym = tape.scale(sum, 0.5);
    if let Some(eps) = cfg.jitter {
        sym = tape.add_identity(sym, eps)?;
    }
    let fro_sq = tape.frobenius_sq(sym);
    if tape.scalar(fro_sq) == 0.0 {
        return Ok(sym);
    }
    let inv_norm = tape.pow_scalar(fro_sq, -0.5)?;
    let mut y = tape.mul_scalar(sym, inv_norm)?;
    let mut z = tape.constant(DenseMatrix::identity(m));
    for k in 0..cfg.k2 {
        let zy = tape.matmul(z, y)?;
        let neg = tape.scale(zy, -1.0);
        let t = tape.add_identity(neg, 3.0)?;
        let yt = tape.matmul(y, t)?;
        y = tape.scale(yt, 0.5);
        if k + 1 < cfg.k2 {
            let tz = tape.matmul(t, z)?;
            z = tape.scale(tz, 0.5);
        }
    }
    let sqrt_norm = tape.pow_scalar(fro_sq, 0.25)?;
    tape.mul_scalar(y, sqrt_norm)
}

/// `(S Sᵀ)^{p/2}` as the `p`-th power of the approximate root of `S Sᵀ`.
pub fn approx_half_power(tape: &mut Tape, s: Var, p: u32, cfg: &IterConfig) -> Result<Var> {
    let m = tape.value(s).rows();
    if p == 0 {
        return Ok(tape.constant(DenseMatrix::identity(m)));
    }
    let root = gram_root(tape, s, cfg)?;
    let mut power = root;
    for _ in 1..p {
        power = tape.matmul(power, root)?;
    }
    Ok(power)
}

/// Approximate `(S Sᵀ)^{1/2}`.
pub fn gram_root(tape: &mut Tape, s: Var, cfg: &IterConfig) -> Result<Var> {
    let st = tape.transpose(s);
    let gram = tape.matmul(s, st)?;
    approx_root(tape, gram, cfg)
}
