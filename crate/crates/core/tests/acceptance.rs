//! End-to-end acceptance suite: one line per criterion, non-zero exit if any
//! criterion fails. Run with `cargo test -p difflrr-core --test acceptance`.

use std::process::ExitCode;
use std::time::Instant;

use difflrr::densemat::{DenseMatrix, GaussianSampler};
use difflrr::estimator::{schatten_p_estimate, EstimateReport, EstimatorConfig};
use difflrr::iterops::{approx_pseudo_inverse, approx_root, IterConfig};
use difflrr::oracle;
use difflrr::relaxation::{generalized_lrr, ExpansionCoefficients, RelaxationSpec};
use difflrr::solvers::{
    solve_completion, solve_separation, CompletionProblem, OptimizerConfig, Regularizer,
    SeparationProblem, StepSchedule, DEFAULT_HUBER_DELTA,
};
use difflrr::sweep::{self, SweepAxis, SweepRow};
use difflrr::synthetic;
use difflrr::Tape;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn rel(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm()
}

fn estimate(
    s: &DenseMatrix,
    cfg: &EstimatorConfig,
    f: fn(
        &mut Tape,
        difflrr::Var,
        &EstimatorConfig,
    ) -> difflrr::Result<(difflrr::Var, EstimateReport)>,
) -> EstimateReport {
    let mut tape = Tape::new();
    let v = tape.constant(s.clone());
    f(&mut tape, v, cfg).unwrap().1
}

fn estimator(samples: usize, p: u32, k1: usize, k2: usize, seed: u64) -> EstimatorConfig {
    EstimatorConfig {
        samples,
        p,
        seed,
        iter: IterConfig::with_iters(k1, k2),
        ..EstimatorConfig::default()
    }
}

/// Seeded 10×10 matrix shared by the statistical criteria.
fn statistics_fixture() -> DenseMatrix {
    GaussianSampler::new(2718, 0)
        .gaussian_matrix(10, 10)
        .scale(0.5)
}

fn sigma_power_sum(s: &DenseMatrix, p: u32) -> f64 {
    oracle::jacobi_svd(s)
        .unwrap()
        .sigma()
        .iter()
        .map(|x| x.powi(p as i32))
        .sum()
}

fn kernel_convergence() -> Verdict {
    let ks = [1usize, 2, 5, 10, 30];
    let mut worst = 0.0f64;
    let mut monotone = true;
    for seed in 0..20u64 {
        let mut g = GaussianSampler::new(seed, 99);
        let sigma: Vec<f64> = (0..30).map(|_| 1.0 + 9.0 * g.next_uniform()).collect();
        let s = oracle::with_singular_values(30, 30, &sigma, seed);
        let exact = oracle::exact_pinv(&s).unwrap();
        let errs: Vec<f64> = ks
            .iter()
            .map(|&k1| {
                let mut tape = Tape::new();
                let v = tape.constant(s.clone());
                let x =
                    approx_pseudo_inverse(&mut tape, v, &IterConfig::with_iters(k1, 1)).unwrap();
                rel(tape.value(x), &exact)
            })
            .collect();
        monotone &= errs.windows(2).all(|w| w[1] <= w[0]);
        worst = worst.max(errs[errs.len() - 1]);
    }
    verdict(
        worst <= 1e-6 && monotone,
        format!("max rel error at k1=30 {worst:.2e}, non-increasing in k1: {monotone}"),
    )
}

fn newton_schulz_decay() -> Verdict {
    const C_MAX: f64 = 10.0;
    let mut worst_at_12 = 0.0f64;
    let mut worst_c = 0.0f64;
    let mut quadratic = true;
    for seed in 0..20u64 {
        let g = GaussianSampler::new(seed, 7).gaussian_matrix(20, 20);
        let a = g
            .matmul_tn(&g)
            .unwrap()
            .scale(1.0 / 20.0)
            .add_identity(1.0)
            .unwrap();
        let exact = oracle::exact_psd_root(&a).unwrap();
        let errs: Vec<f64> = (1..=16)
            .map(|k2| {
                let mut tape = Tape::new();
                let v = tape.constant(a.clone());
                let r = approx_root(&mut tape, v, &IterConfig::with_iters(1, k2)).unwrap();
                rel(tape.value(r), &exact)
            })
            .collect();
        worst_at_12 = worst_at_12.max(errs[11]);
        // quadratic phase: from the first error below 0.1 until the floor
        for w in errs.windows(2) {
            if w[0] <= 0.1 && w[1] > 1e-12 {
                let c = w[1] / (w[0] * w[0]);
                worst_c = worst_c.max(c);
                quadratic &= c <= C_MAX;
            }
        }
    }
    verdict(
        worst_at_12 <= 1e-6 && quadratic,
        format!(
            "max rel error at k2=12 {worst_at_12:.2e}, fitted C = {worst_c:.3} (bound {C_MAX})"
        ),
    )
}

fn unbiasedness() -> Verdict {
    let s = statistics_fixture();
    let (m, n) = (200usize, 100usize);
    let mut ok = true;
    let mut parts = Vec::new();
    for p in [1u32, 2, 3] {
        let truth = sigma_power_sum(&s, p);
        let spread = sigma_power_sum(&s, 2 * p);
        let grand: f64 = (0..m)
            .map(|run| {
                let cfg = EstimatorConfig {
                    stream_offset: (run * n) as u64,
                    ..estimator(n, p, 50, 50, 31)
                };
                estimate(&s, &cfg, schatten_p_estimate).estimate
            })
            .sum::<f64>()
            / m as f64;
        let tol = 4.0 * (2.0 * spread / (m * n) as f64).sqrt();
        let dev = (grand - truth).abs();
        ok &= dev <= tol;
        parts.push(format!(
            "p={p}: |{grand:.4} - {truth:.4}| = {dev:.4} <= {tol:.4}"
        ));
    }
    verdict(ok, parts.join("; "))
}

fn variance_law() -> Verdict {
    let s = statistics_fixture();
    let mut ok = true;
    let mut parts = Vec::new();
    for p in [1u32, 2] {
        let predicted = 2.0 * sigma_power_sum(&s, 2 * p);
        let r = estimate(&s, &estimator(10_000, p, 50, 50, 5), schatten_p_estimate);
        let ratio = r.sample_variance / predicted;
        ok &= (0.5..=1.5).contains(&ratio);
        parts.push(format!("p={p}: variance ratio {ratio:.3}"));
    }
    verdict(ok, parts.join("; "))
}

fn chebyshev_envelope() -> Verdict {
    let s = statistics_fixture();
    let (n, trials, eps) = (1000usize, 1000usize, 0.1);
    let mut ok = true;
    let mut parts = Vec::new();
    for p in [1u32, 2] {
        let truth = sigma_power_sum(&s, p);
        let bound = 2.0 * sigma_power_sum(&s, 2 * p) / (n as f64 * (truth * eps).powi(2)) + 0.05;
        let exceed = (0..trials)
            .filter(|&t| {
                let cfg = EstimatorConfig {
                    stream_offset: (t * n) as u64,
                    ..estimator(n, p, 50, 50, 77)
                };
                let e = estimate(&s, &cfg, schatten_p_estimate).estimate;
                (e - truth).abs() / truth > eps
            })
            .count();
        let rate = exceed as f64 / trials as f64;
        ok &= rate <= bound;
        parts.push(format!("p={p}: exceedance {rate:.3} <= bound {bound:.3}"));
    }
    verdict(ok, parts.join("; "))
}

fn expansion_fidelity() -> Verdict {
    let h = RelaxationSpec::laplace(1.0).unwrap();
    let lag = ExpansionCoefficients::laguerre(&h, 10, 64).unwrap();
    let lag_err = [0.1, 0.5, 1.0, 2.0]
        .iter()
        .map(|&x| (lag.eval_polynomial(x) - h.eval(x)).abs())
        .fold(0.0, f64::max);
    let tay = ExpansionCoefficients::taylor(&h, 10).unwrap();
    let tay_err = (0..=2000)
        .map(|i| {
            let x = i as f64 * 1e-3;
            (tay.eval_polynomial(x) - h.eval(x)).abs()
        })
        .fold(0.0, f64::max);
    verdict(
        lag_err <= 0.02 && tay_err <= 1e-4,
        format!(
            "laguerre K=10 max error {lag_err:.2e}, taylor T=10 max error on [0,2] {tay_err:.2e}"
        ),
    )
}

fn generalized_end_to_end() -> Verdict {
    let h = RelaxationSpec::laplace(1.0).unwrap();
    let s = DenseMatrix::diag(&[0.5, 1.0]);
    let truth = oracle::exact_hsum(&s, &h).unwrap();
    let coeffs = ExpansionCoefficients::laguerre(&h, 10, 64).unwrap();
    let mut tape = Tape::new();
    let v = tape.constant(s);
    let (_, r) =
        generalized_lrr(&mut tape, v, &coeffs, &estimator(20_000, 1, 50, 50, 2024)).unwrap();
    let dev = (r.estimate - truth).abs();
    verdict(
        dev <= 0.05,
        format!(
            "estimate {:.4} vs oracle {truth:.4} (|diff| {dev:.4}, std err {:.4})",
            r.estimate,
            r.standard_error()
        ),
    )
}

fn gradient_correctness() -> Verdict {
    let s = GaussianSampler::new(404, 0).gaussian_matrix(3, 3);
    let mut worst = 0.0f64;
    for p in [1u32, 2] {
        let cfg = estimator(100, p, 10, 30, 8);
        let mut tape = Tape::new();
        let v = tape.leaf(s.clone());
        let (est, _) = schatten_p_estimate(&mut tape, v, &cfg).unwrap();
        tape.backward(est).unwrap();
        let grad = tape.grad(v);
        let h = 1e-5;
        let fd = DenseMatrix::from_fn(3, 3, |i, j| {
            let mut plus = s.clone();
            let mut minus = s.clone();
            plus[(i, j)] += h;
            minus[(i, j)] -= h;
            let f = |m: &DenseMatrix| estimate(m, &cfg, schatten_p_estimate).estimate;
            (f(&plus) - f(&minus)) / (2.0 * h)
        });
        worst = worst.max(grad.sub(&fd).unwrap().max_abs() / fd.max_abs());
    }
    verdict(
        worst <= 1e-4,
        format!("max relative error {worst:.2e} over p = 1, 2"),
    )
}

/// Proximal-gradient nuclear-norm completion with exact SVDs, used to show
/// the instance is recoverable by the convex program itself.
fn svt_completion(
    observed: &DenseMatrix,
    mask: &DenseMatrix,
    mu: f64,
    iters: usize,
) -> DenseMatrix {
    let mut x = observed.clone();
    let mut y = x.clone();
    let mut t = 1.0f64;
    for _ in 0..iters {
        let residual = y.sub(observed).unwrap().hadamard(mask).unwrap();
        let z = y.sub(&residual).unwrap();
        let next = oracle::jacobi_svd(&z)
            .unwrap()
            .compose(|s| (s - mu / 2.0).max(0.0));
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        y = next
            .add(&next.sub(&x).unwrap().scale((t - 1.0) / t_next))
            .unwrap();
        x = next;
        t = t_next;
    }
    x
}

fn completion_recovery() -> Verdict {
    const LAMBDA: f64 = 0.5;
    let truth = synthetic::low_rank_product(50, 50, 5, 0);
    let mask = synthetic::bernoulli_mask(50, 50, 0.5, 0);
    let observed = truth.hadamard(&mask).unwrap();

    let convex = svt_completion(&observed, &mask, 0.01, 400);
    let convex_err = rel(&convex, &truth);

    let prob = CompletionProblem::new(observed, mask, LAMBDA, Regularizer::Nuclear).unwrap();
    let opt = OptimizerConfig {
        step_size: 0.03,
        schedule: StepSchedule::Cosine,
        max_iters: 2000,
        record_every: 100,
        estimator: estimator(100, 1, 25, 30, 7),
        ..OptimizerConfig::default()
    };
    let report = solve_completion(&prob, &opt).unwrap();
    let err = rel(&report.solution, &truth);
    let (first, last) = (report.at(0).unwrap().total, report.at(2000).unwrap().total);
    verdict(
        err <= 0.05 && last < first,
        format!(
            "relative error {err:.4} (exact SVT oracle {convex_err:.4}), total loss {first:.2} -> {last:.2}"
        ),
    )
}

fn f1_score(foreground: &DenseMatrix, spikes: &DenseMatrix) -> f64 {
    let (mut tp, mut fp, mut fnn) = (0.0, 0.0, 0.0);
    for (o, s) in foreground.as_slice().iter().zip(spikes.as_slice()) {
        match (o.abs() > 1.0, *s != 0.0) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fnn += 1.0,
            _ => {}
        }
    }
    2.0 * tp / (2.0 * tp + fp + fnn)
}

fn separation_recovery() -> Verdict {
    let background = synthetic::low_rank_product(100, 20, 2, 11);
    let spikes = synthetic::sparse_spikes(100, 20, 0.05, 10.0, 11);
    let frames = background.add(&spikes).unwrap();
    let prob =
        SeparationProblem::new(frames, 10.0, DEFAULT_HUBER_DELTA, Regularizer::Nuclear).unwrap();
    let opt = OptimizerConfig {
        step_size: 0.03,
        schedule: StepSchedule::Cosine,
        max_iters: 1500,
        record_every: 100,
        estimator: estimator(100, 1, 25, 30, 7),
        ..OptimizerConfig::default()
    };
    let out = solve_separation(&prob, &opt).unwrap();
    let f1 = f1_score(&out.foreground, &spikes);
    let err = rel(&out.report.solution, &background);
    let (first, last) = (
        out.report.first().unwrap().total,
        out.report.last().unwrap().total,
    );
    verdict(
        f1 >= 0.8 && err <= 0.1 && last < first,
        format!("spike F1 {f1:.3}, background relative error {err:.4}, total loss {first:.1} -> {last:.1}"),
    )
}

fn lambda_tradeoff() -> Verdict {
    let s = sweep::study_matrix(0);
    let opt = OptimizerConfig {
        step_size: 0.05,
        schedule: StepSchedule::Cosine,
        max_iters: 1000,
        record_every: 100,
        estimator: estimator(100, 1, 25, 30, 3),
        ..OptimizerConfig::default()
    };
    let rows = sweep::lambda_sweep(&s, &[0.1, 1.0, 10.0], &opt).unwrap();
    let slack = 0.05;
    let ok = rows.windows(2).all(|w| {
        w[1].final_l1 >= w[0].final_l1 * (1.0 - slack)
            && w[1].final_l2 <= w[0].final_l2 * (1.0 + slack)
    });
    let parts: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "lambda {}: l1 {:.3} l2 {:.2}",
                r.lambda, r.final_l1, r.final_l2
            )
        })
        .collect();
    verdict(ok, parts.join("; "))
}

fn sensitivity() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let s = sweep::study_matrix(0);

    let k1_path = dir.path().join("k1.csv");
    let base = estimator(100, 1, 10, 30, 12);
    let rows =
        sweep::estimator_sweep(&s, SweepAxis::K1, &[1.0, 2.0, 5.0, 10.0, 30.0], 50, &base).unwrap();
    sweep::write_rows(&k1_path, &rows).unwrap();
    let rows: Vec<SweepRow> = sweep::read_rows(&k1_path).unwrap();
    let means = sweep::mean_rel_error(&rows);
    let at = |k: f64| means.iter().find(|(v, _)| *v == k).unwrap().1;
    let k1_ok = at(10.0) <= 2.0 * at(30.0);

    let n_path = dir.path().join("samples.csv");
    let base = estimator(100, 1, 30, 30, 13);
    let rows = sweep::estimator_sweep(&s, SweepAxis::Samples, &[100.0, 400.0, 1600.0], 200, &base)
        .unwrap();
    sweep::write_rows(&n_path, &rows).unwrap();
    let rows: Vec<SweepRow> = sweep::read_rows(&n_path).unwrap();
    let stds = sweep::std_rel_error(&rows);
    let ratios: Vec<f64> = stds.windows(2).map(|w| w[0].1 / w[1].1).collect();
    let n_ok = ratios.iter().all(|r| (2.0 * 0.7..=2.0 * 1.3).contains(r));

    verdict(
        k1_ok && n_ok,
        format!(
            "mean rel error k1=10 {:.4} vs k1=30 {:.4}; std ratios per 4x samples {:?}",
            at(10.0),
            at(30.0),
            ratios.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>()
        ),
    )
}

fn main() -> ExitCode {
    type Criterion = (u32, &'static str, f64, fn() -> Verdict);
    let criteria: [Criterion; 12] = [
        (1, "kernel convergence", 5.0, kernel_convergence),
        (2, "newton-schulz quadratic decay", 5.0, newton_schulz_decay),
        (3, "estimator unbiasedness", 30.0, unbiasedness),
        (4, "variance law", 20.0, variance_law),
        (5, "chebyshev envelope", 60.0, chebyshev_envelope),
        (6, "expansion fidelity", 1.0, expansion_fidelity),
        (
            7,
            "generalized lrr end-to-end",
            10.0,
            generalized_end_to_end,
        ),
        (8, "gradient correctness", 5.0, gradient_correctness),
        (9, "matrix completion recovery", 60.0, completion_recovery),
        (10, "fore-background separation", 60.0, separation_recovery),
        (11, "lambda tradeoff monotonicity", 60.0, lambda_tradeoff),
        (12, "sensitivity reproduction", 60.0, sensitivity),
    ];
    let only: Option<u32> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .and_then(|v| v.parse().ok());
    let mut failures = 0;
    for (id, name, budget, run) in criteria {
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let start = Instant::now();
        let v = run();
        let elapsed = start.elapsed().as_secs_f64();
        let passed = v.passed && elapsed <= budget;
        if !passed {
            failures += 1;
        }
        println!(
            "[{}] {id:>2}. {name}: {} ({elapsed:.1} s, budget {budget} s)",
            if passed { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    if failures == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failures} criteria failed");
        ExitCode::FAILURE
    }
}
