use std::path::Path;
use std::time::Instant;

use difflrr::estimator::{nuclear_estimate, rank_estimate, schatten_p_estimate};
use difflrr::iterops::IterConfig;
use difflrr::relaxation::generalized_lrr;
use difflrr::solvers::{self, Algorithm, ProbeMode, StepSchedule};
use difflrr::sweep::{self, SweepAxis};
use difflrr::{
    io, oracle, CompletionProblem, Error, EstimatorConfig, ExpansionCoefficients, OptimizerConfig,
    Regularizer, RelaxationSpec, Result, SeparationProblem, SolveReport, Tape,
};

use crate::{
    CompleteArgs, ConvergenceArgs, EstimateArgs, Mode, OptimArgs, ProbeArgs, Relax, RelaxArgs,
    Schedule, SeparateArgs, Stat,
};

/// Solver runs use more pseudo-inverse steps than one-off estimates.
const SOLVER_K1: usize = 25;

fn estimator_config(probes: &ProbeArgs, default_k1: usize) -> EstimatorConfig {
    let defaults = IterConfig::default();
    EstimatorConfig {
        samples: probes.samples,
        seed: probes.seed,
        iter: IterConfig::with_iters(
            probes.k1.unwrap_or(default_k1),
            probes.k2.unwrap_or(defaults.k2),
        ),
        ..EstimatorConfig::default()
    }
}

/// The relaxation `h` and its expansion, or `None` for the plain nuclear norm.
fn relaxation(args: &RelaxArgs) -> Result<Option<(RelaxationSpec, ExpansionCoefficients)>> {
    match args.relax {
        None | Some(Relax::Nuclear) => Ok(None),
        Some(Relax::Laplace) => {
            let h = RelaxationSpec::laplace(args.gamma)?;
            let coeffs = match args.mode {
                Mode::Taylor => ExpansionCoefficients::taylor(&h, args.trunc)?,
                Mode::Laguerre => ExpansionCoefficients::laguerre(
                    &h,
                    args.trunc,
                    difflrr::relaxation::DEFAULT_QUADRATURE_NODES.max(args.trunc + 10),
                )?,
            };
            Ok(Some((h, coeffs)))
        }
    }
}

fn regularizer(args: &RelaxArgs) -> Result<Regularizer> {
    Ok(match relaxation(args)? {
        None => Regularizer::Nuclear,
        Some((_, coeffs)) => Regularizer::Expansion(coeffs),
    })
}

fn optimizer(optim: &OptimArgs, probes: &ProbeArgs) -> OptimizerConfig {
    OptimizerConfig {
        algorithm: Algorithm::adam(),
        step_size: optim.step,
        schedule: match optim.schedule {
            Schedule::Constant => StepSchedule::Constant,
            Schedule::Cosine => StepSchedule::Cosine,
        },
        max_iters: optim.iters,
        estimator: estimator_config(probes, SOLVER_K1),
        record_every: optim.record_every,
        probes: ProbeMode::Fresh,
    }
}

fn input_error(source: &Path, message: impl Into<String>) -> Error {
    Error::parse(source.display().to_string(), message)
}

pub fn estimate(args: &EstimateArgs) -> Result<()> {
    let s = io::read_matrix_csv(&args.input)?;
    let relax = relaxation(&args.relax)?;
    if relax.is_some() && args.stat != Stat::Nuclear {
        return Err(Error::parse(
            "--relax",
            "a relaxation replaces the nuclear norm; use it with --stat nuclear",
        ));
    }
    let cfg = EstimatorConfig {
        p: args.p,
        ..estimator_config(&args.probes, IterConfig::default().k1)
    };

    let start = Instant::now();
    let mut tape = Tape::new();
    let v = tape.constant(s.clone());
    let (_, report) = match (&relax, args.stat) {
        (Some((_, coeffs)), _) => generalized_lrr(&mut tape, v, coeffs, &cfg)?,
        (None, Stat::Rank) => rank_estimate(&mut tape, v, &cfg)?,
        (None, Stat::Nuclear) => nuclear_estimate(&mut tape, v, &cfg)?,
        (None, Stat::Schatten) => schatten_p_estimate(&mut tape, v, &cfg)?,
    };
    let elapsed = start.elapsed().as_secs_f64();

    println!("estimate: {}", report.estimate);
    println!("sample variance: {}", report.sample_variance);
    println!("standard error: {}", report.standard_error());
    println!("elapsed: {elapsed:.6} s");
    if args.oracle {
        let truth = match (&relax, args.stat) {
            (Some((h, _)), _) => oracle::exact_hsum(&s, h)?,
            (None, Stat::Rank) => oracle::exact_rank(&s, oracle::TRUNCATION)? as f64,
            (None, Stat::Nuclear) => oracle::exact_schatten(&s, 1)?,
            (None, Stat::Schatten) => oracle::exact_schatten(&s, args.p)?,
        };
        println!("oracle: {truth}");
        if truth != 0.0 {
            println!(
                "relative error: {}",
                (report.estimate - truth).abs() / truth.abs()
            );
        }
    }
    Ok(())
}

/// Writes the report (if requested) also when the solver diverged, then
/// passes the outcome through.
fn with_report<T>(
    outcome: Result<T>,
    path: Option<&Path>,
    report_of: impl Fn(&T) -> &SolveReport,
) -> Result<T> {
    let Some(path) = path else { return outcome };
    match &outcome {
        Ok(value) => io::write_report_csv(path, &report_of(value).records)?,
        Err(Error::Diverged { partial, .. }) => {
            io::write_report_csv(path, &partial.records)?;
            eprintln!("partial report written to {}", path.display());
        }
        Err(_) => {}
    }
    outcome
}

fn print_losses(report: &SolveReport) {
    if let (Some(first), Some(last)) = (report.first(), report.last()) {
        println!(
            "iterations: {}  total loss {:.6} -> {:.6} (data {:.6}, regularizer {:.6})",
            last.iteration, first.total, last.total, last.data_loss, last.reg_loss
        );
    }
    println!("lambda: {}", report.lambda);
    println!("elapsed: {:.3} s", report.elapsed_seconds);
}

pub fn complete(args: &CompleteArgs) -> Result<()> {
    let image = io::read_pgm(&args.image)?;
    let mask = match (&args.mask, args.drop_frac) {
        (Some(path), _) => io::read_mask_csv(path, image.shape())?,
        (None, Some(frac)) => {
            if !(0.0..=1.0).contains(&frac) {
                return Err(Error::parse(
                    "--drop-frac",
                    format!("must lie in [0, 1], got {frac}"),
                ));
            }
            io::generated_mask(image.shape(), frac, args.mask_seed)?
        }
        (None, None) => unreachable!("clap requires --mask or --drop-frac"),
    };
    let truth = args.truth.as_deref().map(io::read_pgm).transpose()?;
    let observed = image.hadamard(&mask)?;
    let lambda = match args.optim.lambda {
        Some(l) => l,
        None => CompletionProblem::default_lambda(&observed, &mask)?,
    };
    let prob = CompletionProblem::new(observed, mask.clone(), lambda, regularizer(&args.relax)?)?;
    let opt = optimizer(&args.optim, &args.probes);

    let report = with_report(
        solvers::solve_completion(&prob, &opt),
        args.report.as_deref(),
        |r| r,
    )?;
    io::write_pgm(&args.out, &report.solution)?;

    println!(
        "observed: {} of {} pixels",
        mask.sum(),
        mask.as_slice().len()
    );
    print_losses(&report);
    println!("wrote {}", args.out.display());
    if let Some(truth) = truth {
        let saved = report.solution.map(|x| f64::from(io::quantize(x)) / 255.0);
        println!("psnr: {:.3} dB", io::psnr(&saved, &truth)?);
    }
    Ok(())
}

fn file_names(paths: &[std::path::PathBuf]) -> Vec<String> {
    paths
        .iter()
        .map(|p| {
            p.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default()
        })
        .collect()
}

pub fn separate(args: &SeparateArgs) -> Result<()> {
    let (frames, shape, paths) = io::read_frames(&args.frames)?;
    if frames.cols() < 2 {
        return Err(input_error(
            &args.frames,
            "separation needs at least two frames",
        ));
    }
    // usual robust-PCA balance between the nuclear and L1 terms
    let lambda = args
        .optim
        .lambda
        .unwrap_or_else(|| (frames.rows().max(frames.cols()) as f64).sqrt());
    let prob = SeparationProblem::new(frames, lambda, args.delta, regularizer(&args.relax)?)?;
    let opt = optimizer(&args.optim, &args.probes);

    let outcome = with_report(
        solvers::solve_separation(&prob, &opt),
        args.report.as_deref(),
        |o| &o.report,
    )?;
    let names = file_names(&paths);
    io::write_frames(&args.out_bg, &outcome.report.solution, shape, &names)?;
    io::write_frames(
        &args.out_fg,
        &outcome.foreground.map(|x| 0.5 + x),
        shape,
        &names,
    )?;

    println!("frames: {} of {}x{}", names.len(), shape.0, shape.1);
    print_losses(&outcome.report);
    println!(
        "wrote {} and {}",
        args.out_bg.display(),
        args.out_fg.display()
    );
    Ok(())
}

pub fn convergence(args: &ConvergenceArgs) -> Result<()> {
    if args.values.is_empty() {
        return Err(Error::parse("--values", "expected at least one value"));
    }
    if args.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::parse("--values", "values must be finite"));
    }
    let s = match &args.input {
        Some(path) => io::read_matrix_csv(path)?,
        None => sweep::study_matrix(args.probes.seed),
    };

    if args.sweep == SweepAxis::Lambda {
        let opt = OptimizerConfig {
            step_size: args.step,
            schedule: StepSchedule::Cosine,
            max_iters: args.iters,
            record_every: args.iters.max(1),
            estimator: estimator_config(&args.probes, SOLVER_K1),
            ..OptimizerConfig::default()
        };
        let rows = sweep::lambda_sweep(&s, &args.values, &opt)?;
        sweep::write_rows(&args.out, &rows)?;
        for r in &rows {
            println!(
                "lambda {}: data {:.6}  regularizer {:.6}  total {:.6}",
                r.lambda, r.final_l1, r.final_l2, r.final_total
            );
        }
    } else {
        let base = estimator_config(&args.probes, IterConfig::default().k1);
        let rows = sweep::estimator_sweep(&s, args.sweep, &args.values, args.trials, &base)?;
        sweep::write_rows(&args.out, &rows)?;
        let stds = sweep::std_rel_error(&rows);
        for ((value, mean), (_, std)) in sweep::mean_rel_error(&rows).into_iter().zip(stds) {
            println!(
                "{:?} = {value}: mean rel error {mean:.6}, std {std:.6}",
                args.sweep
            );
        }
    }
    println!("wrote {}", args.out.display());
    Ok(())
}
