//! Generalized low-rank penalties `R(S) = Σ h(σᵢ)` through polynomial
//! expansions of `h`.
//!
//! A truncated expansion `h(x) ≈ Σ_p w_p xᵖ` turns `R` into a weighted sum of
//! Schatten power sums, each of which the estimator handles directly. The
//! weights come either from the Maclaurin series of `h` or from its
//! projection onto Laguerre polynomials (orthogonal under `e^{-x}` on
//! `(0, ∞)`), with the projection integrals evaluated by Gauss–Laguerre
//! quadrature.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::estimator::{weighted_power_sum, EstimateReport, EstimatorConfig};

pub const DEFAULT_TAYLOR_TERMS: usize = 10;
pub const DEFAULT_LAGUERRE_DEGREE: usize = 10;
pub const DEFAULT_QUADRATURE_NODES: usize = 64;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
/// `p ↦ h⁽ᵖ⁾(0)`.
pub type DerivativeFn = Arc<dyn Fn(usize) -> f64 + Send + Sync>;

#[derive(Clone, Debug, PartialEq)]
pub enum RelaxationKind {
    Nuclear,
    Laplace { gamma: f64 },
    Custom { name: String },
}

/// The penalty `h` applied to each singular value.
#[derive(Clone)]
pub struct RelaxationSpec {
    kind: RelaxationKind,
    eval: ScalarFn,
    derivatives: Option<DerivativeFn>,
}

impl fmt::Debug for RelaxationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RelaxationSpec")
            .field("kind", &self.kind)
            .field("has_derivatives", &self.derivatives.is_some())
            .finish()
    }
}

impl RelaxationSpec {
    /// `h(x) = x`.
    pub fn nuclear() -> Self {
        Self {
            kind: RelaxationKind::Nuclear,
            eval: Arc::new(|x| x),
            derivatives: Some(Arc::new(|p| if p == 1 { 1.0 } else { 0.0 })),
        }
    }

    /// `h(x) = 1 − exp(−x/γ)`.
    pub fn laplace(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::contract(format!(
                "laplace gamma must be positive, got {gamma}"
            )));
        }
        Ok(Self {
            kind: RelaxationKind::Laplace { gamma },
            eval: Arc::new(move |x| -(-x / gamma).exp_m1()),
            // h⁽ᵖ⁾(0) = −(−1/γ)ᵖ for p ≥ 1
            derivatives: Some(Arc::new(move |p| {
                if p == 0 {
                    0.0
                } else {
                    -(-1.0 / gamma).powi(p as i32)
                }
            })),
        })
    }

    pub fn custom(
        name: impl Into<String>,
        eval: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivatives: Option<DerivativeFn>,
    ) -> Self {
        Self {
            kind: RelaxationKind::Custom { name: name.into() },
            eval: Arc::new(eval),
            derivatives,
        }
    }

    pub fn kind(&self) -> &RelaxationKind {
        &self.kind
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.eval)(x)
    }

    pub fn derivative_at_zero(&self, p: usize) -> Option<f64> {
        self.derivatives.as_ref().map(|d| d(p))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExpansionMode {
    Taylor,
    Laguerre,
}

/// Power-basis weights `w_p` of a truncated expansion, with the pieces they
/// were assembled from.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpansionCoefficients {
    mode: ExpansionMode,
    /// `t_p` (taylor) or `c_k` (laguerre).
    series: Vec<f64>,
    /// `a_{k,p}`; empty in taylor mode.
    basis: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl ExpansionCoefficients {
    pub fn taylor(h: &RelaxationSpec, terms: usize) -> Result<Self> {
        let t = taylor_coeffs(h, terms)?;
        Ok(Self {
            mode: ExpansionMode::Taylor,
            weights: t.clone(),
            series: t,
            basis: Vec::new(),
        })
    }

    pub fn laguerre(h: &RelaxationSpec, degree: usize, nodes: usize) -> Result<Self> {
        let c = laguerre_projection_coeffs(h, degree, nodes)?;
        Ok(Self::from_laguerre(c))
    }

    /// Power-basis weights from given Laguerre coefficients `c_0..c_K`.
    pub fn from_laguerre(c: Vec<f64>) -> Self {
        let basis = laguerre_poly_coeffs(c.len().saturating_sub(1));
        let mut weights = vec![0.0; c.len()];
        for (k, row) in basis.iter().enumerate().take(c.len()) {
            for (p, a) in row.iter().enumerate() {
                weights[p] += c[k] * a;
            }
        }
        Self {
            mode: ExpansionMode::Laguerre,
            series: c,
            basis,
            weights,
        }
    }

    /// Maclaurin coefficients used directly as weights.
    pub fn from_taylor(t: Vec<f64>) -> Self {
        Self {
            mode: ExpansionMode::Taylor,
            weights: t.clone(),
            series: t,
            basis: Vec::new(),
        }
    }

    pub fn mode(&self) -> ExpansionMode {
        self.mode
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `t_p` in taylor mode, `c_k` in laguerre mode.
    pub fn series(&self) -> &[f64] {
        &self.series
    }

    pub fn laguerre_basis(&self) -> &[Vec<f64>] {
        &self.basis
    }

    pub fn degree(&self) -> usize {
        self.weights.len().saturating_sub(1)
    }

    /// `Σ w_p xᵖ` by Horner's rule.
    pub fn eval_polynomial(&self, x: f64) -> f64 {
        self.weights.iter().rev().fold(0.0, |acc, w| acc * x + w)
    }

    /// `(p, w_p)` pairs for the estimator.
    pub fn terms(&self) -> Vec<(u32, f64)> {
        self.weights
            .iter()
            .enumerate()
            .map(|(p, &w)| (p as u32, w))
            .collect()
    }

    /// Per-term contributions as `(k, p, value)` rows.
    ///
    /// Laguerre rows carry `c_k · a_{k,p}`; taylor rows carry `t_p` at
    /// `k = p`. Summing the values over `k` gives `w_p`.
    pub fn rows(&self) -> Vec<CoefficientRow> {
        match self.mode {
            ExpansionMode::Taylor => self
                .series
                .iter()
                .enumerate()
                .map(|(p, &value)| CoefficientRow { k: p, p, value })
                .collect(),
            ExpansionMode::Laguerre => self
                .basis
                .iter()
                .enumerate()
                .flat_map(|(k, row)| {
                    let ck = self.series[k];
                    row.iter().enumerate().map(move |(p, a)| CoefficientRow {
                        k,
                        p,
                        value: ck * a,
                    })
                })
                .collect(),
        }
    }

    /// Rebuilds coefficients from [`rows`](Self::rows) output.
    ///
    /// Rows with `k == p` only are read as a taylor expansion. Otherwise the
    /// `p = 0` row of each `k` gives `c_k` (since `L_k(0) = 1`).
    pub fn from_rows(rows: &[CoefficientRow]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::parse("coefficients", "no coefficient rows"));
        }
        if let Some(r) = rows.iter().find(|r| !r.value.is_finite()) {
            return Err(Error::parse(
                "coefficients",
                format!("non-finite value at k = {}, p = {}", r.k, r.p),
            ));
        }
        if let Some(r) = rows.iter().find(|r| r.p > r.k) {
            return Err(Error::parse(
                "coefficients",
                format!("power {} exceeds degree {} in row", r.p, r.k),
            ));
        }
        let degree = rows.iter().map(|r| r.k).max().unwrap_or(0);
        if rows.iter().all(|r| r.k == r.p) {
            let mut t = vec![0.0; degree + 1];
            for r in rows {
                t[r.p] = r.value;
            }
            return Ok(Self::from_taylor(t));
        }
        let mut c = vec![0.0; degree + 1];
        for r in rows.iter().filter(|r| r.p == 0) {
            c[r.k] = r.value;
        }
        Ok(Self::from_laguerre(c))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut writer = csv::Writer::from_path(path).map_err(csv_err)?;
        for row in self.rows() {
            writer.serialize(row).map_err(csv_err)?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
        let rows = reader
            .deserialize()
            .collect::<std::result::Result<Vec<CoefficientRow>, _>>()
            .map_err(csv_err)?;
        Self::from_rows(&rows)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub k: usize,
    pub p: usize,
    pub value: f64,
}

/// Power-basis coefficients of `L_0..L_kmax`; row `k` has `k + 1` entries.
pub fn laguerre_poly_coeffs(k_max: usize) -> Vec<Vec<f64>> {
    let mut table: Vec<Vec<f64>> = vec![vec![1.0]];
    if k_max >= 1 {
        table.push(vec![1.0, -1.0]);
    }
    for k in 1..k_max {
        let (prev, cur) = (&table[k - 1], &table[k]);
        let kf = k as f64;
        let next: Vec<f64> = (0..=k + 1)
            .map(|p| {
                let from_cur = cur.get(p).copied().unwrap_or(0.0) * (2.0 * kf + 1.0);
                let shifted = if p > 0 {
                    cur.get(p - 1).copied().unwrap_or(0.0)
                } else {
                    0.0
                };
                let from_prev = prev.get(p).copied().unwrap_or(0.0) * kf;
                (from_cur - shifted - from_prev) / (kf + 1.0)
            })
            .collect();
        table.push(next);
    }
    table
}

/// `L_0(x)..L_k_max(x)` by the three-term recurrence.
pub fn laguerre_values(k_max: usize, x: f64) -> Vec<f64> {
    let mut values = Vec::with_capacity(k_max + 1);
    values.push(1.0);
    if k_max >= 1 {
        values.push(1.0 - x);
    }
    for k in 1..k_max {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 - x) * values[k] - kf * values[k - 1]) / (kf + 1.0);
        values.push(next);
    }
    values
}

/// Nodes and weights of the `n`-point Gauss–Laguerre rule for `e^{-x}`.
///
/// Roots of `L_n` are found by Newton's method from the usual asymptotic
/// initial guesses, each seeded from the previous roots; the weight of node
/// `x` is `-1 / (n · L_n'(x) · L_{n-1}(x))`.
pub fn gauss_laguerre(n: usize) -> (Vec<f64>, Vec<f64>) {
    const MAX_NEWTON: usize = 100;
    let nf = n as f64;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let mut z = 0.0f64;
    for i in 0..n {
        z = match i {
            0 => 3.0 / (1.0 + 2.4 * nf),
            1 => z + 15.0 / (1.0 + 2.5 * nf),
            _ => {
                let ai = (i - 1) as f64;
                z + (1.0 + 2.55 * ai) / (1.9 * ai) * (z - nodes[i - 2])
            }
        };
        let (mut p1, mut p2, mut dp) = (0.0, 0.0, 1.0);
        for _ in 0..MAX_NEWTON {
            p1 = 1.0;
            p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf - 1.0 - z) * p2 - (jf - 1.0) * p3) / jf;
            }
            dp = (nf * p1 - nf * p2) / z;
            let previous = z;
            z = previous - p1 / dp;
            if (z - previous).abs() <= 4.0 * f64::EPSILON * z.abs().max(1.0) {
                break;
            }
        }
        let _ = p1;
        nodes[i] = z;
        weights[i] = -1.0 / (dp * nf * p2);
    }
    (nodes, weights)
}

/// `c_k = ∫₀^∞ L_k(x) e^{-x} h(x) dx` for `k = 0..=degree`.
pub fn laguerre_projection_coeffs(
    h: &RelaxationSpec,
    degree: usize,
    nodes: usize,
) -> Result<Vec<f64>> {
    if nodes < degree + 10 {
        return Err(Error::contract(format!(
            "quadrature needs at least degree + 10 = {} nodes, got {nodes}",
            degree + 10
        )));
    }
    let (x, w) = gauss_laguerre(nodes);
    let mut c = vec![0.0; degree + 1];
    for (i, (&xi, &wi)) in x.iter().zip(&w).enumerate() {
        let hx = h.eval(xi);
        if !hx.is_finite() {
            return Err(Error::NonFinite {
                what: "relaxation h".into(),
                location: format!("quadrature node {i} (x = {xi})"),
            });
        }
        for (ck, lk) in c.iter_mut().zip(laguerre_values(degree, xi)) {
            *ck += wi * lk * hx;
        }
    }
    Ok(c)
}

/// `t_p = h⁽ᵖ⁾(0) / p!` for `p = 0..=terms`.
pub fn taylor_coeffs(h: &RelaxationSpec, terms: usize) -> Result<Vec<f64>> {
    if h.derivatives.is_none() {
        return Err(Error::contract(
            "taylor expansion needs the derivatives of h at zero",
        ));
    }
    let mut factorial = 1.0;
    let mut out = Vec::with_capacity(terms + 1);
    for p in 0..=terms {
        if p > 0 {
            factorial *= p as f64;
        }
        let d = h.derivative_at_zero(p).expect("checked above");
        out.push(d / factorial);
    }
    Ok(out)
}

/// Monte-Carlo estimate of `Σ_p w_p ‖S‖_p^p`, i.e. of `Σ h(σᵢ)` under the
/// truncated expansion.
///
/// One probe set is shared across powers unless `cfg.independent_powers`.
pub fn generalized_lrr(
    tape: &mut Tape,
    s: Var,
    coeffs: &ExpansionCoefficients,
    cfg: &EstimatorConfig,
) -> Result<(Var, EstimateReport)> {
    weighted_power_sum(tape, s, &coeffs.terms(), cfg)
}
