//! Acceptance gate: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the report is always printed. The soft large-scale
//! magnitude check only runs with `--ignored` / `--include-ignored` or `TOPOPT_SOFT=1`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topopt_core::design::{qm_local, qm_value};
use topopt_core::estimator::{edge_jump, estimate, estimate_field};
use topopt_core::experiments::{fine_evaluation, run_single};
use topopt_core::fem::{assemble, compliance, solve, FemSpace, LinearSolver, SolverKind, SolverOptions};
use topopt_core::grid::EdgeTag;
use topopt_core::io::RunConfig;
use topopt_core::sensitivity::{
    combined_gradient, compliance_gradient, estimator_sensitivity, finite_difference, max_relative_error, StepRule,
};
use topopt_core::{BoundarySpec, DesignField, Side};

type Check = (bool, String);

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let soft = args.iter().any(|a| a == "--ignored" || a == "--include-ignored")
        || std::env::var("TOPOPT_SOFT").is_ok_and(|v| v == "1");

    let mut hard_failures = 0;
    let mut report = |id: &str, name: &str, soft: bool, f: &dyn Fn() -> Check| {
        let t = Instant::now();
        let (pass, detail) = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(r) => r,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        let verdict = match (pass, soft) {
            (true, _) => "PASS",
            (false, false) => "FAIL",
            (false, true) => "FAIL (soft)",
        };
        println!("criterion {id:>2} {verdict:<11} {name}: {detail} [{:.1}s]", t.elapsed().as_secs_f64());
        if !pass && !soft {
            hard_failures += 1;
        }
    };

    report("1", "Galerkin identity", false, &galerkin_identity);
    report("2", "nested Galerkin identity and monotone compliance", false, &nested_identity);
    report("3", "gradients against finite differences", false, &gradient_checks);
    report("4", "estimator closed forms", false, &estimator_closed_forms);
    report("5", "QM closed forms", false, &qm_closed_forms);
    let t = Instant::now();
    let runs = paired_runs();
    println!("(paired N = 64 optimizations at C = 0 and C = 1: {:.1}s)", t.elapsed().as_secs_f64());
    report("6", "checkerboard regime at C = 0", false, &|| checkerboard_regime(&runs));
    report("7", "correction regime at C = 1", false, &|| correction_regime(&runs));
    report("8", "false-minima ordering", false, &|| false_minima(&runs));
    if soft {
        report("9", "N = 128, p = 3, C = 0.8 magnitudes", true, &soft_magnitudes);
    } else {
        println!("criterion  9 SKIPPED     N = 128, p = 3, C = 0.8 magnitudes: soft, run with --ignored");
    }
    report("10", "estimator decay on a uniform design", false, &estimator_decay);

    if hard_failures > 0 {
        println!("{hard_failures} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn galerkin_identity() -> Check {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    let direct = SolverOptions {
        kind: SolverKind::Direct,
        ..Default::default()
    };
    for (seed, n) in [8usize, 16].iter().enumerate().flat_map(|(i, &n)| (0..4).map(move |s| (s + 10 * i as u64, n))) {
        let d = random_design(n, seed);
        for order in [1, 2] {
            for ratio in [1, 2] {
                for p in [1.0, 3.0, 4.0] {
                    let sol = solve_design(&d, p, &space(n * ratio, order, &half_left()), &direct);
                    worst = worst.max(galerkin_defect(&sol));
                    count += 1;
                }
            }
        }
    }
    // iterative paths on the fine verification grid
    let d = random_design(64, 99);
    let fine = space(512, 1, &BoundarySpec::default());
    for kind in [SolverKind::Multigrid, SolverKind::Auto] {
        let opts = SolverOptions {
            kind,
            ..Default::default()
        };
        let sol = solve_design(&d, 3.0, &fine, &opts);
        worst = worst.max(galerkin_defect(&sol));
        count += 1;
    }
    (worst <= 1e-9, format!("max defect {worst:.2e} over {count} solves"))
}

fn nested_identity() -> Check {
    let b = half_left();
    let spaces: Vec<FemSpace> = [16, 32, 64].iter().map(|&n| space(n, 1, &b)).collect();
    let mut worst: f64 = 0.0;
    let mut monotone = true;
    for seed in 0..10 {
        let d = random_design(16, 1000 + seed);
        let sols: Vec<_> = spaces.iter().map(|s| solve(&assemble(&d, 4.0, s, F).unwrap()).unwrap()).collect();
        let phis: Vec<f64> = sols.iter().map(compliance).collect();
        monotone &= phis[0] <= phis[1] && phis[1] <= phis[2];
        let (coarse, fine) = (&sols[0], &sols[1]);
        let iu = spaces[1].interpolate_from(&spaces[0], &coarse.u).unwrap();
        let e: Vec<f64> = fine.u.iter().zip(&iu).map(|(a, b)| a - b).collect();
        let rhs = spaces[1].bilinear(&fine.coefficients, &e, &e);
        let lhs = phis[1] - phis[0];
        worst = worst.max((lhs - rhs).abs() / lhs.abs());
    }
    (
        worst <= 1e-8 && monotone,
        format!("max relative identity defect {worst:.2e} over 10 designs, monotone {monotone}"),
    )
}

fn interior_design(n: usize, seed: u64) -> DesignField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vals = (0..n * n).map(|_| rng.random_range(0.15..0.85)).collect();
    DesignField::new(n, vals, GAMMA, 0.5).unwrap()
}

fn gradient_checks() -> Check {
    let s = space(4, 1, &half_left());
    let p = 4.0;
    let phi = |d: &DesignField| Ok(compliance(&solve(&assemble(d, p, &s, F)?)?));
    let est = |d: &DesignField| Ok(estimate(d, p, &solve(&assemble(d, p, &s, F)?)?, F)?.total);
    let (mut ec, mut ee, mut eb, mut mutation) = (0.0f64, 0.0f64, 0.0f64, f64::INFINITY);
    for seed in 0..3 {
        let d = interior_design(4, seed);
        let system = assemble(&d, p, &s, F).unwrap();
        let solver = LinearSolver::new(&system.matrix, &SolverOptions::default()).unwrap();
        let sol = solve(&system).unwrap();
        let step = StepRule::default();

        let fd_c = finite_difference(phi, &d, step).unwrap();
        ec = ec.max(max_relative_error(&compliance_gradient(&d, p, &sol).unwrap(), &fd_c, 1e-12));

        let sens = estimator_sensitivity(&d, p, &sol, F, &solver, &system.matrix).unwrap();
        let fd_e = finite_difference(est, &d, step).unwrap();
        ee = ee.max(max_relative_error(&sens.total, &fd_e, 1e-12));
        mutation = mutation.min(max_relative_error(&sens.explicit, &fd_e, 1e-12));

        let fd_b = finite_difference(|x| Ok(phi(x)? + est(x)?), &d, step).unwrap();
        eb = eb.max(max_relative_error(&combined_gradient(&d, p, &sol, F, 1.0).unwrap(), &fd_b, 1e-12));
    }
    (
        ec < 1e-4 && ee < 1e-3 && eb < 1e-3 && mutation > 1e-2,
        format!("compliance {ec:.1e}, estimator {ee:.1e}, combined {eb:.1e}, adjoint dropped {mutation:.1e}"),
    )
}

fn estimator_closed_forms() -> Check {
    let one = space(1, 1, &BoundarySpec::single(Side::Left, 0.5, 1.0));
    let single = estimate_field(&one, &[1.0], &[0.0; 4], 1e-2).unwrap().total;
    let ok_single = (single - 1e-4).abs() <= 1e-16;

    let two = space(2, 1, &BoundarySpec::single(Side::Bottom, 0.5, 1.0));
    let u: Vec<f64> = (0..two.ndof()).map(|d| two.dof_coords(d)[0]).collect();
    let coef = [1.0, GAMMA, 1.0, GAMMA];
    let g = two.grid();
    let edge = (0..g.edges().len())
        .find(|&i| g.edges()[i].tag == EdgeTag::Interior && g.edges()[i].is_vertical())
        .unwrap();
    let jumps = edge_jump(&two, &coef, &u, edge).unwrap();
    let h = g.h();
    let mean_sq = jumps.iter().map(|j| j * j).sum::<f64>() / jumps.len() as f64;
    let term = h / (1.0 + GAMMA) * mean_sq * h;
    let expected = (1.0 - GAMMA).powi(2) * h * h / (1.0 + GAMMA);
    let ok_jump = (term - expected).abs() <= 1e-14 && (term - 0.24925).abs() < 1e-5;

    let d = random_design(8, 5);
    let s = space(8, 1, &half_left());
    let zero = estimate(&d, 4.0, &solve(&assemble(&d, 4.0, &s, 0.0).unwrap()).unwrap(), 0.0).unwrap().total;

    (
        ok_single && ok_jump && zero == 0.0,
        format!("interior {single:.6e}, jump {term:.6} (expected {expected:.6}), f = 0 gives {zero}"),
    )
}

fn qm_closed_forms() -> Check {
    let uniform = qm_value(&DesignField::uniform(16, 0.4, GAMMA, 0.4).unwrap()).unwrap();
    let n = 12;
    let ramp = (0..n * n).map(|e| GAMMA + (e % n + e / n) as f64 * 0.04).collect();
    let ramp = qm_value(&DesignField::new(n, ramp, GAMMA, 1.0).unwrap()).unwrap();
    let cb = qm_value(&checkerboard(64)).unwrap();
    let expected = 63.0 * 63.0 * 16.0 * (1.0 - GAMMA).powi(4);
    let rel = (cb - expected).abs() / expected;

    let levels = [GAMMA, 0.25, 0.5, 0.75, 1.0];
    let mut props = true;
    for &a in &levels {
        for &b in &levels {
            for &c in &levels {
                for &d in &levels {
                    let q = qm_local(a, b, c, d);
                    let lam: f64 = 2.5;
                    let scaled = qm_local(lam * a, lam * b, lam * c, lam * d);
                    props &= q >= 0.0
                        && (q - qm_local(d, c, b, a)).abs() <= 1e-14 * (1.0 + q)
                        && (scaled - lam.powi(4) * q).abs() <= 1e-12 * (1.0 + scaled);
                }
            }
        }
    }
    (
        uniform == 0.0 && ramp == 0.0 && rel <= 1e-9 && props,
        format!("uniform {uniform}, monotone {ramp}, checkerboard {cb:.4} (rel error {rel:.1e}), 625 local cases ok {props}"),
    )
}

struct RunOutcome {
    qm: f64,
    phi_coarse: f64,
    phi_fine: f64,
    iterations: usize,
}

struct PairedRuns {
    uncorrected: Result<RunOutcome, String>,
    corrected: Result<RunOutcome, String>,
}

fn desk_run(c: f64) -> Result<RunOutcome, String> {
    let mut cfg = RunConfig::default();
    cfg.optimizer.c = c;
    let res = run_single(&cfg, None).map_err(|e| e.to_string())?;
    let fine = fine_evaluation(&res.design, &cfg).map_err(|e| e.to_string())?;
    let last = res.last();
    Ok(RunOutcome {
        qm: last.qm,
        phi_coarse: last.phi_h,
        phi_fine: fine.phi_h,
        iterations: last.iter,
    })
}

fn paired_runs() -> PairedRuns {
    std::thread::scope(|s| {
        let a = s.spawn(|| desk_run(0.0));
        let b = s.spawn(|| desk_run(1.0));
        PairedRuns {
            uncorrected: a.join().unwrap_or_else(|_| Err("panicked".into())),
            corrected: b.join().unwrap_or_else(|_| Err("panicked".into())),
        }
    })
}

fn checkerboard_regime(runs: &PairedRuns) -> Check {
    match &runs.uncorrected {
        Err(e) => (false, format!("run failed: {e}")),
        Ok(r) => {
            let ratio = r.phi_fine / r.phi_coarse;
            (
                r.qm > 1.0 && ratio >= 1.10,
                format!("QM {:.4e}, phi_512/phi_64 {ratio:.4e} after {} iterations", r.qm, r.iterations),
            )
        }
    }
}

fn correction_regime(runs: &PairedRuns) -> Check {
    match &runs.corrected {
        Err(e) => (false, format!("run failed: {e}")),
        Ok(r) => {
            let ratio = r.phi_fine / r.phi_coarse;
            (
                r.qm < 1e-2 && ratio <= 1.05,
                format!("QM {:.4e}, phi_512/phi_64 {ratio:.4} after {} iterations", r.qm, r.iterations),
            )
        }
    }
}

fn false_minima(runs: &PairedRuns) -> Check {
    match (&runs.uncorrected, &runs.corrected) {
        (Ok(a), Ok(b)) => (
            b.phi_fine <= 0.98 * a.phi_fine,
            format!("phi_512 with C = 1: {:.4e}, with C = 0: {:.4e}", b.phi_fine, a.phi_fine),
        ),
        _ => (false, "a paired run failed".into()),
    }
}

fn soft_magnitudes() -> Check {
    let mut cfg = RunConfig::default();
    cfg.problem.n = 128;
    cfg.problem.p = 3.0;
    cfg.optimizer.c = 0.8;
    let res = run_single(&cfg, None).unwrap();
    let fine = fine_evaluation(&res.design, &cfg).unwrap();
    let target = 3.62e-5;
    let within = (fine.phi_h - target).abs() <= 0.2 * target;
    (
        within && fine.e_apost < 1e-6,
        format!(
            "phi_512 {:.4e} (target {target:.2e} +-20%), e_apost_512 {:.3e} (< 1e-6), {} iterations",
            fine.phi_h,
            fine.e_apost,
            res.last().iter
        ),
    )
}

fn estimator_decay() -> Check {
    let d = DesignField::uniform(16, 0.4, GAMMA, 0.4).unwrap();
    let b = half_left();
    let e: Vec<f64> = [16, 32, 64]
        .iter()
        .map(|&n| {
            let s = space(n, 1, &b);
            estimate(&d, 4.0, &solve(&assemble(&d, 4.0, &s, F).unwrap()).unwrap(), F).unwrap().total
        })
        .collect();
    let rates: Vec<f64> = e.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    (
        e[0] > e[1] && e[1] > e[2],
        format!("E_apost {:.4e}, {:.4e}, {:.4e}; observed orders {:.2}, {:.2}", e[0], e[1], e[2], rates[0], rates[1]),
    )
}
