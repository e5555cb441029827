//! First-order solvers for masked matrix completion and low-rank plus sparse
//! separation, with a stochastic low-rank regularizer.
//!
//! Every iteration records the loss on a fresh tape, differentiates it, and
//! takes one optimizer step. The regularizer draws a new probe block per
//! iteration (streams `t·N .. t·N + N − 1` at iteration `t`) unless probes
//! are frozen.

use std::f64::consts::PI;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::densemat::DenseMatrix;
use crate::error::{Error, Result};
use crate::estimator::{nuclear_estimate, EstimatorConfig};
use crate::iterops::IterConfig;
use crate::relaxation::{generalized_lrr, ExpansionCoefficients};

pub const DEFAULT_HUBER_DELTA: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub enum Regularizer {
    Nuclear,
    Expansion(ExpansionCoefficients),
}

impl Regularizer {
    /// Stochastic `R(X)`, evaluated on whichever of `X`, `Xᵀ` has fewer rows.
    /// Both have the same singular values.
    fn record(&self, tape: &mut Tape, x: Var, cfg: &EstimatorConfig) -> Result<Var> {
        let (rows, cols) = tape.value(x).shape();
        let x = if rows > cols { tape.transpose(x) } else { x };
        let (value, _) = match self {
            Regularizer::Nuclear => nuclear_estimate(tape, x, cfg)?,
            Regularizer::Expansion(c) => generalized_lrr(tape, x, c, cfg)?,
        };
        Ok(value)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompletionProblem {
    pub observed: DenseMatrix,
    /// 1 marks an observed entry.
    pub mask: DenseMatrix,
    pub lambda: f64,
    pub regularizer: Regularizer,
}

impl CompletionProblem {
    pub fn new(
        observed: DenseMatrix,
        mask: DenseMatrix,
        lambda: f64,
        regularizer: Regularizer,
    ) -> Result<Self> {
        if observed.shape() != mask.shape() {
            return Err(Error::Shape {
                op: "completion mask",
                lhs: observed.shape(),
                rhs: mask.shape(),
            });
        }
        if let Some(bad) = mask.as_slice().iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::contract(format!(
                "mask entries must be 0 or 1, found {bad}"
            )));
        }
        check_lambda(lambda)?;
        if mask.sum() == 0.0 && lambda == 0.0 {
            return Err(Error::contract("nothing observed and no regularization"));
        }
        if !observed.is_finite() {
            return Err(Error::NonFinite {
                what: "observed matrix".into(),
                location: "input".into(),
            });
        }
        Ok(Self {
            observed,
            mask,
            lambda,
            regularizer,
        })
    }

    /// `0.1 · ‖P_Ω[S]‖_F² / m`, a scale-aware starting value.
    pub fn default_lambda(observed: &DenseMatrix, mask: &DenseMatrix) -> Result<f64> {
        Ok(0.1 * observed.hadamard(mask)?.frobenius_sq() / observed.rows() as f64)
    }

    /// Observed entries, with every unobserved entry set to the observed mean.
    pub fn initial_guess(&self) -> DenseMatrix {
        let count = self.mask.sum();
        let mean = if count > 0.0 {
            self.observed
                .hadamard(&self.mask)
                .expect("shapes checked")
                .sum()
                / count
        } else {
            0.0
        };
        self.observed
            .zip_with(
                "initial_guess",
                &self.mask,
                |s, m| if m == 1.0 { s } else { mean },
            )
            .expect("shapes checked")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeparationProblem {
    /// Pixels × frames; each column is one vectorized frame.
    pub frames: DenseMatrix,
    pub lambda: f64,
    pub delta: f64,
    pub regularizer: Regularizer,
}

impl SeparationProblem {
    pub fn new(
        frames: DenseMatrix,
        lambda: f64,
        delta: f64,
        regularizer: Regularizer,
    ) -> Result<Self> {
        if frames.cols() < 2 {
            return Err(Error::contract(format!(
                "separation needs at least two frames, got {}",
                frames.cols()
            )));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::contract(format!(
                "huber delta must be positive, got {delta}"
            )));
        }
        check_lambda(lambda)?;
        Ok(Self {
            frames,
            lambda,
            delta,
            regularizer,
        })
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::contract(format!(
            "lambda must be finite and non-negative, got {lambda}"
        )))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Algorithm {
    PlainGradient,
    /// Bias-corrected running moments.
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl Algorithm {
    pub fn adam() -> Self {
        Algorithm::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepSchedule {
    Constant,
    /// `η_t = η · (1 + cos(π t / T)) / 2` over `T = max_iters` steps.
    Cosine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeMode {
    /// New probe streams every iteration.
    Fresh,
    /// The same probe block at every iteration.
    Frozen,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    pub step_size: f64,
    pub schedule: StepSchedule,
    pub max_iters: usize,
    pub estimator: EstimatorConfig,
    /// Record every `record_every`-th iterate (the last one always).
    pub record_every: usize,
    pub probes: ProbeMode,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::adam(),
            step_size: 1e-2,
            schedule: StepSchedule::Constant,
            max_iters: 500,
            estimator: EstimatorConfig {
                iter: IterConfig::with_iters(25, 30),
                ..EstimatorConfig::default()
            },
            record_every: 1,
            probes: ProbeMode::Fresh,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::contract(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::contract("max_iters must be at least 1"));
        }
        if self.record_every == 0 {
            return Err(Error::contract("record_every must be at least 1"));
        }
        self.estimator.validate()
    }

    fn step_at(&self, t: usize) -> f64 {
        match self.schedule {
            StepSchedule::Constant => self.step_size,
            StepSchedule::Cosine => {
                let phase = t as f64 / self.max_iters as f64;
                self.step_size * 0.5 * (1.0 + (PI * phase).cos())
            }
        }
    }

    fn estimator_at(&self, t: usize) -> EstimatorConfig {
        let shift = match self.probes {
            ProbeMode::Fresh => (t as u64) * self.estimator.samples as u64,
            ProbeMode::Frozen => 0,
        };
        EstimatorConfig {
            stream_offset: self.estimator.stream_offset + shift,
            ..self.estimator
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterateRecord {
    pub iteration: usize,
    pub data_loss: f64,
    pub reg_loss: f64,
    /// `data_loss + λ·reg_loss`.
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub records: Vec<IterateRecord>,
    pub solution: DenseMatrix,
    pub lambda: f64,
    pub elapsed_seconds: f64,
    pub config: OptimizerConfig,
}

impl SolveReport {
    pub fn first(&self) -> Option<&IterateRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&IterateRecord> {
        self.records.last()
    }

    pub fn at(&self, iteration: usize) -> Option<&IterateRecord> {
        self.records.iter().find(|r| r.iteration == iteration)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeparationOutcome {
    pub report: SolveReport,
    /// `V′ − X`.
    pub foreground: DenseMatrix,
}

enum Optimizer {
    Plain,
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
        m: DenseMatrix,
        v: DenseMatrix,
        t: i32,
    },
}

impl Optimizer {
    fn new(algorithm: Algorithm, rows: usize, cols: usize) -> Self {
        match algorithm {
            Algorithm::PlainGradient => Optimizer::Plain,
            Algorithm::Adam { beta1, beta2, eps } => Optimizer::Adam {
                beta1,
                beta2,
                eps,
                m: DenseMatrix::zeros(rows, cols),
                v: DenseMatrix::zeros(rows, cols),
                t: 0,
            },
        }
    }

    fn step(&mut self, x: &mut DenseMatrix, grad: &DenseMatrix, lr: f64) -> Result<()> {
        match self {
            Optimizer::Plain => x.add_scaled_in_place(-lr, grad),
            Optimizer::Adam {
                beta1,
                beta2,
                eps,
                m,
                v,
                t,
            } => {
                *t += 1;
                let c1 = 1.0 - beta1.powi(*t);
                let c2 = 1.0 - beta2.powi(*t);
                let xs = x.as_mut_slice();
                let ms = m.as_mut_slice();
                let vs = v.as_mut_slice();
                for (i, &g) in grad.as_slice().iter().enumerate() {
                    ms[i] = *beta1 * ms[i] + (1.0 - *beta1) * g;
                    vs[i] = *beta2 * vs[i] + (1.0 - *beta2) * g * g;
                    let m_hat = ms[i] / c1;
                    let v_hat = vs[i] / c2;
                    xs[i] -= lr * m_hat / (v_hat.sqrt() + *eps);
                }
                Ok(())
            }
        }
    }
}

/// Shared descent loop. `data` records the data term for the current iterate.
fn descend(
    x0: DenseMatrix,
    lambda: f64,
    regularizer: &Regularizer,
    opt: &OptimizerConfig,
    data: impl Fn(&mut Tape, Var) -> Result<Var>,
) -> Result<SolveReport> {
    opt.validate()?;
    let start = Instant::now();
    let (rows, cols) = x0.shape();
    let mut x = x0;
    let mut optimizer = Optimizer::new(opt.algorithm, rows, cols);
    let mut records = Vec::new();
    let report = |records: Vec<IterateRecord>, solution: DenseMatrix| SolveReport {
        records,
        solution,
        lambda,
        elapsed_seconds: start.elapsed().as_secs_f64(),
        config: *opt,
    };

    for t in 0..=opt.max_iters {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let data_loss = data(&mut tape, xv)?;
        let reg_loss = if lambda > 0.0 {
            regularizer.record(&mut tape, xv, &opt.estimator_at(t))?
        } else {
            tape.constant(DenseMatrix::scalar(0.0))
        };
        let weighted = tape.scale(reg_loss, lambda);
        let total = tape.add(data_loss, weighted)?;

        let record = IterateRecord {
            iteration: t,
            data_loss: tape.scalar(data_loss),
            reg_loss: tape.scalar(reg_loss),
            total: tape.scalar(total),
        };
        if !record.total.is_finite() {
            records.push(record);
            return Err(Error::Diverged {
                iteration: t,
                loss: record.total,
                partial: Box::new(report(records, x)),
            });
        }
        if t % opt.record_every == 0 || t == opt.max_iters {
            records.push(record);
        }
        if t == opt.max_iters {
            break;
        }
        tape.backward(total)?;
        optimizer.step(&mut x, &tape.grad(xv), opt.step_at(t))?;
    }
    Ok(report(records, x))
}

/// Minimizes `‖P_Ω[X − S]‖_F² + λ R(X)`.
pub fn solve_completion(prob: &CompletionProblem, opt: &OptimizerConfig) -> Result<SolveReport> {
    let observed = prob.observed.clone();
    let mask = prob.mask.clone();
    descend(
        prob.initial_guess(),
        prob.lambda,
        &prob.regularizer,
        opt,
        |tape, x| {
            let s = tape.constant(observed.clone());
            let m = tape.constant(mask.clone());
            let diff = tape.sub(x, s)?;
            let masked = tape.hadamard(diff, m)?;
            Ok(tape.frobenius_sq(masked))
        },
    )
}

/// Minimizes `Σ ψ_δ(V′ − X) + λ R(X)` from `X₀ = V′`.
pub fn solve_separation(
    prob: &SeparationProblem,
    opt: &OptimizerConfig,
) -> Result<SeparationOutcome> {
    let frames = prob.frames.clone();
    let delta = prob.delta;
    let report = descend(
        prob.frames.clone(),
        prob.lambda,
        &prob.regularizer,
        opt,
        |tape, x| {
            let v = tape.constant(frames.clone());
            let residual = tape.sub(v, x)?;
            let smooth = tape.pseudo_huber(residual, delta)?;
            Ok(tape.sum_all(smooth))
        },
    )?;
    let foreground = prob.frames.sub(&report.solution)?;
    Ok(SeparationOutcome { report, foreground })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    fn quick(max_iters: usize) -> OptimizerConfig {
        OptimizerConfig {
            max_iters,
            step_size: 0.05,
            estimator: EstimatorConfig {
                samples: 20,
                seed: 3,
                iter: IterConfig::with_iters(15, 15),
                ..EstimatorConfig::default()
            },
            ..OptimizerConfig::default()
        }
    }

    #[test]
    fn fully_observed_without_regularizer_is_a_fixed_point() {
        let s = synthetic::low_rank_product(6, 5, 2, 1);
        let prob = CompletionProblem::new(
            s.clone(),
            DenseMatrix::filled(6, 5, 1.0),
            0.0,
            Regularizer::Nuclear,
        )
        .unwrap();
        let report = solve_completion(&prob, &quick(1)).unwrap();
        assert_eq!(report.records[0].data_loss, 0.0);
        assert_eq!(report.solution, s);
    }

    #[test]
    fn initial_guess_fills_with_observed_mean() {
        let s = DenseMatrix::from_rows(&[[1.0, 5.0], [3.0, 9.0]]);
        let mask = DenseMatrix::from_rows(&[[1.0, 0.0], [1.0, 0.0]]);
        let prob = CompletionProblem::new(s, mask, 1.0, Regularizer::Nuclear).unwrap();
        assert_eq!(
            prob.initial_guess(),
            DenseMatrix::from_rows(&[[1.0, 2.0], [3.0, 2.0]])
        );
    }

    #[test]
    fn empty_mask_decreases_regularizer() {
        let s = synthetic::low_rank_product(8, 8, 3, 2);
        let prob =
            CompletionProblem::new(s, DenseMatrix::zeros(8, 8), 1.0, Regularizer::Nuclear).unwrap();
        let opt = OptimizerConfig {
            probes: ProbeMode::Frozen,
            algorithm: Algorithm::PlainGradient,
            step_size: 0.01,
            ..quick(30)
        };
        let report = solve_completion(&prob, &opt).unwrap();
        for pair in report.records.windows(2) {
            assert!(pair[1].reg_loss <= pair[0].reg_loss, "{pair:?}");
        }
    }

    #[test]
    fn totals_are_decomposed() {
        let s = synthetic::low_rank_product(6, 6, 2, 4);
        let mask = synthetic::bernoulli_mask(6, 6, 0.6, 4);
        let prob = CompletionProblem::new(s, mask, 0.3, Regularizer::Nuclear).unwrap();
        let report = solve_completion(
            &prob,
            &OptimizerConfig {
                record_every: 3,
                ..quick(10)
            },
        )
        .unwrap();
        let iters: Vec<usize> = report.records.iter().map(|r| r.iteration).collect();
        assert_eq!(iters, vec![0, 3, 6, 9, 10]);
        for r in &report.records {
            assert_eq!(r.total, r.data_loss + 0.3 * r.reg_loss);
        }
    }

    #[test]
    fn solves_are_reproducible() {
        let s = synthetic::low_rank_product(7, 5, 2, 5);
        let mask = synthetic::bernoulli_mask(7, 5, 0.5, 5);
        let prob = CompletionProblem::new(s, mask, 0.5, Regularizer::Nuclear).unwrap();
        let a = solve_completion(&prob, &quick(15)).unwrap();
        let b = solve_completion(&prob, &quick(15)).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.solution, b.solution);
    }

    #[test]
    fn divergence_carries_partial_report() {
        let s = synthetic::low_rank_product(5, 5, 2, 6);
        let mask = synthetic::bernoulli_mask(5, 5, 0.5, 6);
        let prob = CompletionProblem::new(s, mask, 1.0, Regularizer::Nuclear).unwrap();
        // the regularizer kicks X off the data; afterwards every step scales
        // the observed residual by 1 − 2·100
        let opt = OptimizerConfig {
            algorithm: Algorithm::PlainGradient,
            step_size: 100.0,
            ..quick(400)
        };
        match solve_completion(&prob, &opt) {
            Err(Error::Diverged {
                iteration, partial, ..
            }) => {
                assert!(iteration > 0);
                assert_eq!(partial.records.last().unwrap().iteration, iteration);
                assert!(!partial.records.last().unwrap().total.is_finite());
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn rejects_invalid_problems() {
        let s = DenseMatrix::zeros(3, 3);
        assert!(CompletionProblem::new(
            s.clone(),
            DenseMatrix::zeros(3, 2),
            1.0,
            Regularizer::Nuclear
        )
        .is_err());
        assert!(CompletionProblem::new(
            s.clone(),
            DenseMatrix::filled(3, 3, 0.5),
            1.0,
            Regularizer::Nuclear
        )
        .is_err());
        assert!(CompletionProblem::new(
            s.clone(),
            DenseMatrix::zeros(3, 3),
            0.0,
            Regularizer::Nuclear
        )
        .is_err());
        assert!(
            SeparationProblem::new(DenseMatrix::zeros(4, 1), 1.0, 1e-3, Regularizer::Nuclear)
                .is_err()
        );
        assert!(SeparationProblem::new(s, 1.0, 0.0, Regularizer::Nuclear).is_err());
    }

    #[test]
    fn cosine_schedule_decays_to_zero() {
        let opt = OptimizerConfig {
            schedule: StepSchedule::Cosine,
            step_size: 0.2,
            max_iters: 10,
            ..OptimizerConfig::default()
        };
        assert_eq!(opt.step_at(0), 0.2);
        assert!((opt.step_at(5) - 0.1).abs() < 1e-15);
        assert!(opt.step_at(10).abs() < 1e-15);
    }

    #[test]
    fn pseudo_huber_residual_gradient() {
        let frames = DenseMatrix::from_rows(&[[1.0, 1.0], [2.0, 2.0]]);
        let prob = SeparationProblem::new(frames.clone(), 0.0, 1.0, Regularizer::Nuclear).unwrap();
        let out = solve_separation(&prob, &quick(1)).unwrap();
        assert_eq!(out.report.records[0].data_loss, 0.0);
        assert_eq!(out.foreground, DenseMatrix::zeros(2, 2));
    }
}
