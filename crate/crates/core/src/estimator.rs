//! Stochastic spectral-sum estimators built from Gaussian probes.
//!
//! With `P ≈ S S†` from the pseudo-inverse iteration and `R ≈ (S Sᵀ)^{1/2}`
//! from Newton–Schulz, each probe `g` contributes `⟨P g, Rᵖ g⟩`, whose
//! expectation is `Σ σᵢᵖ`. For `p = 0` this is the rank.
//!
//! Probe `i` of a call is drawn from stream `stream_offset + i` of
//! `seed`, so the same configuration always sees the same probes.

use crate::autodiff::{Tape, Var};
use crate::densemat::{derive_stream_seed, probe_matrix, DenseMatrix};
use crate::error::{Error, Result};
use crate::iterops::{approx_pseudo_inverse, gram_root, project_with, IterConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimatorConfig {
    /// Number of Gaussian probes `N`.
    pub samples: usize,
    pub iter: IterConfig,
    pub seed: u64,
    /// Schatten exponent.
    pub p: u32,
    /// Stream index of the first probe.
    pub stream_offset: u64,
    /// Draw a fresh probe set for every power in a multi-power estimate
    /// instead of sharing one set.
    pub independent_powers: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            samples: 100,
            iter: IterConfig::default(),
            seed: 0,
            p: 1,
            stream_offset: 0,
            independent_powers: false,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::contract("estimator needs at least one sample"));
        }
        self.iter.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimateReport {
    pub estimate: f64,
    pub per_sample: Vec<f64>,
    /// Unbiased (N−1) sample variance; zero when N = 1.
    pub sample_variance: f64,
    pub config: EstimatorConfig,
}

impl EstimateReport {
    fn from_tape(tape: &Tape, per_sample: Var, estimate: Var, config: &EstimatorConfig) -> Self {
        let values = tape.value(per_sample).as_slice().to_vec();
        Self {
            estimate: tape.scalar(estimate),
            sample_variance: unbiased_variance(&values),
            per_sample: values,
            config: *config,
        }
    }

    /// Standard error of the mean, `sqrt(variance / N)`.
    pub fn standard_error(&self) -> f64 {
        (self.sample_variance / self.per_sample.len() as f64).sqrt()
    }
}

pub fn unbiased_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Monte-Carlo estimate of `Σ σᵢ(S)ᵖ` with `p = cfg.p`.
pub fn schatten_p_estimate(
    tape: &mut Tape,
    s: Var,
    cfg: &EstimatorConfig,
) -> Result<(Var, EstimateReport)> {
    weighted_power_sum(tape, s, &[(cfg.p, 1.0)], cfg)
}

/// Monte-Carlo estimate of `rank(S)` as the mean of `‖P g‖²`.
pub fn rank_estimate(
    tape: &mut Tape,
    s: Var,
    cfg: &EstimatorConfig,
) -> Result<(Var, EstimateReport)> {
    cfg.validate()?;
    let probes = probes_for(tape, s, cfg, 0);
    let g = tape.constant(probes);
    let pinv = approx_pseudo_inverse(tape, s, &cfg.iter)?;
    let pg = project_with(tape, s, pinv, g)?;
    let per_sample = tape.column_dots(pg, pg)?;
    let estimate = tape.mean(per_sample);
    Ok((
        estimate,
        EstimateReport::from_tape(tape, per_sample, estimate, cfg),
    ))
}

/// Schatten estimate with `p = 1`.
pub fn nuclear_estimate(
    tape: &mut Tape,
    s: Var,
    cfg: &EstimatorConfig,
) -> Result<(Var, EstimateReport)> {
    let cfg = EstimatorConfig { p: 1, ..*cfg };
    schatten_p_estimate(tape, s, &cfg)
}

fn probes_for(tape: &Tape, s: Var, cfg: &EstimatorConfig, term: usize) -> DenseMatrix {
    let dim = tape.value(s).rows();
    let seed = if cfg.independent_powers && term > 0 {
        derive_stream_seed(cfg.seed, u64::MAX - term as u64)
    } else {
        cfg.seed
    };
    probe_matrix(seed, cfg.stream_offset, dim, cfg.samples)
}

/// `Σ_p w_p · Σ σᵢᵖ` for the given `(p, w_p)` terms, estimated jointly.
///
/// The pseudo-inverse and the root of `S Sᵀ` are computed once; `Rᵖ G` is
/// built by repeated application of `R` to the probe block. Zero weights are
/// skipped, so a single unit-weight term reproduces the plain estimator
/// exactly.
pub(crate) fn weighted_power_sum(
    tape: &mut Tape,
    s: Var,
    terms: &[(u32, f64)],
    cfg: &EstimatorConfig,
) -> Result<(Var, EstimateReport)> {
    cfg.validate()?;
    if let Some(&(p, w)) = terms.iter().find(|(_, w)| !w.is_finite()) {
        return Err(Error::NonFinite {
            what: "expansion weight".into(),
            location: format!("p = {p} (value {w})"),
        });
    }
    let active: Vec<(u32, f64)> = terms.iter().copied().filter(|&(_, w)| w != 0.0).collect();
    let pinv = approx_pseudo_inverse(tape, s, &cfg.iter)?;
    let needs_root = active.iter().any(|&(p, _)| p > 0);
    let root = if needs_root {
        Some(gram_root(tape, s, &cfg.iter)?)
    } else {
        None
    };

    let mut total: Option<Var> = None;
    let mut shared: Option<(Var, Var)> = None;
    for (term, &(p, w)) in active.iter().enumerate() {
        let (g, pg) = match shared {
            Some(pair) if !cfg.independent_powers => pair,
            _ => {
                let g = tape.constant(probes_for(tape, s, cfg, term));
                let pg = project_with(tape, s, pinv, g)?;
                shared = Some((g, pg));
                (g, pg)
            }
        };
        let mut rg = g;
        for _ in 0..p {
            rg = tape.matmul(root.expect("root computed for p > 0"), rg)?;
        }
        let dots = tape.column_dots(pg, rg)?;
        let contribution = if w == 1.0 { dots } else { tape.scale(dots, w) };
        total = Some(match total {
            None => contribution,
            Some(acc) => tape.add(acc, contribution)?,
        });
    }
    let per_sample = match total {
        Some(v) => v,
        None => tape.constant(DenseMatrix::zeros(1, cfg.samples)),
    };
    let estimate = tape.mean(per_sample);
    Ok((
        estimate,
        EstimateReport::from_tape(tape, per_sample, estimate, cfg),
    ))
}
