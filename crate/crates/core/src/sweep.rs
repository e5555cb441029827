//! Parameter sweeps over iteration counts, sample sizes and λ.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::densemat::DenseMatrix;
use crate::error::{Error, Result};
use crate::estimator::{nuclear_estimate, EstimatorConfig};
use crate::oracle;
use crate::solvers::{solve_completion, CompletionProblem, OptimizerConfig, Regularizer};
use crate::synthetic;

/// Side length, rank and noise level of the sensitivity-study problem.
pub const STUDY_SIZE: usize = 30;
pub const STUDY_RANK: usize = 30;
pub const STUDY_NOISE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    K1,
    K2,
    Samples,
    Lambda,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "k1" => Ok(SweepAxis::K1),
            "k2" => Ok(SweepAxis::K2),
            "samples" => Ok(SweepAxis::Samples),
            "lambda" => Ok(SweepAxis::Lambda),
            other => Err(Error::parse(
                "sweep axis",
                format!("unknown axis `{other}` (expected k1, k2, samples or lambda)"),
            )),
        }
    }
}

/// One nuclear-norm estimate in an estimator sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub trial: usize,
    pub estimate: f64,
    pub oracle: f64,
    /// `|estimate − oracle| / oracle`.
    pub rel_error: f64,
    pub elapsed: f64,
}

/// Final losses of one solve in a λ sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaRow {
    pub lambda: f64,
    pub final_l1: f64,
    /// Unweighted regularizer `R(X)`.
    pub final_l2: f64,
    pub final_total: f64,
}

/// `S = A·B + σE` from the sensitivity study, with i.i.d. standard normal factors.
pub fn study_matrix(seed: u64) -> DenseMatrix {
    synthetic::noisy_low_rank(STUDY_SIZE, STUDY_SIZE, STUDY_RANK, STUDY_NOISE, seed)
}

fn as_count(axis: SweepAxis, v: f64) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(Error::contract(format!(
            "{axis:?} values must be positive integers, got {v}"
        )))
    }
}

/// Nuclear-norm estimates of `s` for every swept value and trial.
///
/// Trial `t` reads probe streams from `t · N`, so each trial sees the same
/// probes at every value of a `k1` or `k2` sweep.
pub fn estimator_sweep(
    s: &DenseMatrix,
    axis: SweepAxis,
    values: &[f64],
    trials: usize,
    base: &EstimatorConfig,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::contract("sweep needs at least one value"));
    }
    if axis == SweepAxis::Lambda {
        return Err(Error::contract("lambda sweeps run through lambda_sweep"));
    }
    let truth = oracle::exact_schatten(s, 1)?;
    let mut rows = Vec::with_capacity(values.len() * trials);
    for &value in values {
        let count = as_count(axis, value)?;
        let mut cfg = *base;
        match axis {
            SweepAxis::K1 => cfg.iter.k1 = count,
            SweepAxis::K2 => cfg.iter.k2 = count,
            SweepAxis::Samples => cfg.samples = count,
            SweepAxis::Lambda => unreachable!(),
        }
        for trial in 0..trials {
            let cfg = EstimatorConfig {
                stream_offset: base.stream_offset + (trial * cfg.samples) as u64,
                ..cfg
            };
            let start = Instant::now();
            let mut tape = Tape::new();
            let v = tape.constant(s.clone());
            let (_, report) = nuclear_estimate(&mut tape, v, &cfg)?;
            rows.push(SweepRow {
                value,
                trial,
                estimate: report.estimate,
                oracle: truth,
                rel_error: (report.estimate - truth).abs() / truth,
                elapsed: start.elapsed().as_secs_f64(),
            });
        }
    }
    Ok(rows)
}

/// Denoising `min ‖S − X‖_F² + λ‖X‖_*` on `s` for every λ.
pub fn lambda_sweep(
    s: &DenseMatrix,
    lambdas: &[f64],
    opt: &OptimizerConfig,
) -> Result<Vec<LambdaRow>> {
    if lambdas.is_empty() {
        return Err(Error::contract("sweep needs at least one value"));
    }
    let full = DenseMatrix::filled(s.rows(), s.cols(), 1.0);
    lambdas
        .iter()
        .map(|&lambda| {
            let prob =
                CompletionProblem::new(s.clone(), full.clone(), lambda, Regularizer::Nuclear)?;
            let report = solve_completion(&prob, opt)?;
            let last = report.last().expect("at least one record");
            Ok(LambdaRow {
                lambda,
                final_l1: last.data_loss,
                final_l2: last.reg_loss,
                final_total: last.total,
            })
        })
        .collect()
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut writer = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        writer.serialize(row).map_err(csv_err)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(csv_err)
}

/// Mean of `rel_error` per swept value, in first-seen order.
pub fn mean_rel_error(rows: &[SweepRow]) -> Vec<(f64, f64)> {
    group(rows, |vals| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Sample standard deviation of `rel_error` per swept value.
pub fn std_rel_error(rows: &[SweepRow]) -> Vec<(f64, f64)> {
    group(rows, |vals| {
        crate::estimator::unbiased_variance(vals).sqrt()
    })
}

fn group(rows: &[SweepRow], f: impl Fn(&[f64]) -> f64) -> Vec<(f64, f64)> {
    let mut keys: Vec<f64> = Vec::new();
    for r in rows {
        if !keys.contains(&r.value) {
            keys.push(r.value);
        }
    }
    keys.into_iter()
        .map(|k| {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.value == k)
                .map(|r| r.rel_error)
                .collect();
            (k, f(&vals))
        })
        .collect()
}
