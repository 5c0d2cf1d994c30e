//! Studies built on the optimizer: fixed-design grid refinement, sweeps over the estimator
//! weight `C`, and model-grid refinement.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::design::{qm_value, DesignField};
use crate::error::{Error, Result};
use crate::fem::{FemSpace, SolverOptions};
use crate::grid::{build_grid, BoundarySpec};
use crate::io::{write_design, write_json, HistoryWriter, RunConfig};
use crate::optimizer::{evaluate, optimize_from, OptimizationResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementRow {
    pub n: usize,
    pub phi_h: f64,
    /// `Φ_h / Φ_h` on the coarsest grid.
    pub ratio: f64,
    pub e_apost: f64,
    pub cg_iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementReport {
    pub model_n: usize,
    pub qm: f64,
    pub rows: Vec<RefinementRow>,
}

impl RefinementReport {
    /// Compliance never drops under refinement beyond solver noise.
    pub fn is_monotone(&self, tol: f64) -> bool {
        self.rows.iter().all(|r| r.ratio >= 1.0 - tol)
            && self.rows.windows(2).all(|w| w[1].phi_h >= w[0].phi_h * (1.0 - tol))
    }

    pub fn row(&self, n: usize) -> Option<&RefinementRow> {
        self.rows.iter().find(|r| r.n == n)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_rows(path, &self.rows)
    }
}

/// Solution parameters shared by study evaluations.
#[derive(Debug, Clone)]
pub struct EvalSettings {
    pub p: f64,
    pub f: f64,
    pub boundary: BoundarySpec,
    pub solver: SolverOptions,
}

impl EvalSettings {
    pub fn from_config(cfg: &RunConfig) -> Self {
        EvalSettings {
            p: cfg.problem.p,
            f: cfg.problem.f,
            boundary: cfg.boundary(),
            solver: cfg.optimizer.solver,
        }
    }
}

/// Solves the fixed `design` with Q1 on each grid of a nested family starting at the model grid.
pub fn run_refinement_study(design: &DesignField, grids: &[usize], settings: &EvalSettings) -> Result<RefinementReport> {
    let Some(&first) = grids.first() else {
        return Err(Error::GridMismatch("empty grid family".into()));
    };
    if first != design.n() {
        return Err(Error::GridMismatch(format!(
            "coarsest grid n = {first} must equal the model grid N = {}",
            design.n()
        )));
    }
    if let Some(w) = grids.windows(2).find(|w| w[1] <= w[0] || w[1] % w[0] != 0) {
        return Err(Error::GridMismatch(format!("grid {} is not nested in {}", w[0], w[1])));
    }
    settings.boundary.check_snaps(first)?;
    let mut rows: Vec<RefinementRow> = Vec::with_capacity(grids.len());
    for &n in grids {
        let space = FemSpace::new(Arc::new(build_grid(n, &settings.boundary)?), 1)?;
        let ev = evaluate(design, settings.p, &space, settings.f, &settings.solver)?;
        let base = rows.first().map_or(ev.phi_h, |r| r.phi_h);
        rows.push(RefinementRow {
            n,
            phi_h: ev.phi_h,
            ratio: ev.phi_h / base,
            e_apost: ev.e_apost,
            cg_iters: ev.iterations,
        });
        log::info!("refinement n = {n}: phi {:.6e}", ev.phi_h);
    }
    Ok(RefinementReport {
        model_n: design.n(),
        qm: qm_value(design).unwrap_or(0.0),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub c: f64,
    pub phi_coarse: f64,
    pub phi_fine: f64,
    pub e_coarse: f64,
    pub e_fine: f64,
    pub qm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Where the final design was written, if persisted.
    pub design_file: Option<PathBuf>,
    /// Set when the run failed; the numeric fields are then NaN.
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub fine_n: usize,
    pub rows: Vec<SweepRow>,
    /// Final designs in row order, `None` for failed runs.
    #[serde(skip)]
    pub designs: Vec<Option<DesignField>>,
}

impl SweepReport {
    pub fn row(&self, c: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.c == c)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_rows(path, &self.rows)
    }
}

/// Options for batches of optimization runs.
#[derive(Debug, Clone, Default)]
pub struct BatchOptions {
    /// Per-run artifacts are written below this directory when set.
    pub out_dir: Option<PathBuf>,
    /// Run the batch on one thread per run.
    pub parallel: bool,
}

fn failed_row(c: f64, e: &Error) -> SweepRow {
    SweepRow {
        c,
        phi_coarse: f64::NAN,
        phi_fine: f64::NAN,
        e_coarse: f64::NAN,
        e_fine: f64::NAN,
        qm: f64::NAN,
        iterations: 0,
        converged: false,
        design_file: None,
        error: Some(e.to_string()),
    }
}

/// Optimizes `cfg` and writes history, design and summary under `dir` when given.
pub fn run_single(cfg: &RunConfig, dir: Option<&Path>) -> Result<OptimizationResult> {
    let problem = cfg.problem();
    let opt = cfg.optimizer_config();
    let start = DesignField::uniform(problem.model_n, opt.volume, problem.gamma, opt.volume)?;
    let Some(dir) = dir else {
        return optimize_from(&problem, &opt, start, |_, _| {});
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut history = HistoryWriter::create(&dir.join("history.csv"))?;
    let mut sink_error = None;
    let snapshot = cfg.output.snapshot_every;
    let result = optimize_from(&problem, &opt, start, |rec, design| {
        if sink_error.is_some() {
            return;
        }
        let mut step = || -> Result<()> {
            history.push(rec)?;
            if snapshot > 0 && rec.iter % snapshot == 0 {
                let img = crate::io::design_image(design, cfg.output.image_scale);
                img.write_pgm(&dir.join(format!("iter_{:04}.pgm", rec.iter)), cfg.output.binary_pgm)?;
            }
            Ok(())
        };
        if let Err(e) = step() {
            sink_error = Some(e);
        }
    })?;
    if let Some(e) = sink_error {
        return Err(e);
    }
    write_design(&result.design, &dir.join("design.txt"))?;
    crate::io::design_image(&result.design, cfg.output.image_scale)
        .write_pgm(&dir.join("design.pgm"), cfg.output.binary_pgm)?;
    Ok(result)
}

/// Evaluates a design on the configured fine verification grid.
pub fn fine_evaluation(design: &DesignField, cfg: &RunConfig) -> Result<crate::io::FineEvaluation> {
    let n = cfg.output.fine_n;
    let space = FemSpace::new(Arc::new(build_grid(n, &cfg.boundary())?), 1)?;
    let ev = evaluate(design, cfg.problem.p, &space, cfg.problem.f, &cfg.optimizer.solver)?;
    Ok(crate::io::FineEvaluation {
        n,
        phi_h: ev.phi_h,
        e_apost: ev.e_apost,
    })
}

fn sweep_one(c: f64, base: &RunConfig, out_dir: Option<&Path>) -> (SweepRow, Option<DesignField>) {
    let mut cfg = base.clone();
    cfg.optimizer.c = c;
    let dir = out_dir.map(|d| d.join(format!("c_{c}")));
    let run = || -> Result<(SweepRow, DesignField)> {
        let res = run_single(&cfg, dir.as_deref())?;
        let fine = fine_evaluation(&res.design, &cfg)?;
        let last = res.last();
        if let Some(d) = &dir {
            write_json(&crate::io::RunSummary::new(&cfg, last, res.converged, Some(fine)), &d.join("summary.json"))?;
        }
        Ok((
            SweepRow {
                c,
                phi_coarse: last.phi_h,
                phi_fine: fine.phi_h,
                e_coarse: last.e_apost,
                e_fine: fine.e_apost,
                qm: last.qm,
                iterations: last.iter,
                converged: res.converged,
                design_file: dir.as_ref().map(|d| d.join("design.txt")),
                error: None,
            },
            res.design,
        ))
    };
    match run() {
        Ok((row, design)) => (row, Some(design)),
        Err(e) => {
            log::error!("sweep run C = {c} failed: {e}");
            (failed_row(c, &e), None)
        }
    }
}

fn run_batch<I: Copy + Send + Sync, T: Send>(items: &[I], parallel: bool, job: impl Fn(I) -> T + Sync) -> Vec<T> {
    if parallel {
        std::thread::scope(|s| {
            let job = &job;
            let handles: Vec<_> = items.iter().map(|&c| s.spawn(move || job(c))).collect();
            handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
        })
    } else {
        items.iter().map(|&c| job(c)).collect()
    }
}

/// One optimization per `C`, each evaluated on the fine grid. Failed runs are recorded and the
/// sweep continues.
pub fn run_c_sweep(values: &[f64], base: &RunConfig, opts: &BatchOptions) -> Result<SweepReport> {
    if let Some(c) = values.iter().find(|c| !(**c >= 0.0 && c.is_finite())) {
        return Err(Error::config("optimizer.c", format!("sweep value {c} must be non-negative")));
    }
    base.validate()?;
    let out = opts.out_dir.as_deref();
    let results = run_batch(values, opts.parallel, |c| sweep_one(c, base, out));
    let (rows, designs) = results.into_iter().unzip();
    Ok(SweepReport {
        fine_n: base.output.fine_n,
        rows,
        designs,
    })
}

/// Re-evaluates a sweep row from its persisted design and returns the largest relative deviation
/// of the fine and coarse compliances.
pub fn replay_sweep_row(row: &SweepRow, base: &RunConfig) -> Result<f64> {
    let path = row
        .design_file
        .as_ref()
        .ok_or_else(|| Error::config("output.directory", "sweep row has no persisted design"))?;
    let design = crate::io::read_design(path)?;
    let mut cfg = base.clone();
    cfg.optimizer.c = row.c;
    let fine = fine_evaluation(&design, &cfg)?;
    let coarse_space = cfg.problem().space(cfg.discretization.order)?;
    let coarse = evaluate(&design, cfg.problem.p, &coarse_space, cfg.problem.f, &cfg.optimizer.solver)?;
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(f64::MIN_POSITIVE);
    Ok(rel(fine.phi_h, row.phi_fine).max(rel(coarse.phi_h, row.phi_coarse)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRefinementRow {
    pub model_n: usize,
    pub phi_h: f64,
    pub e_apost: f64,
    pub qm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub error: Option<String>,
}

/// One optimization per model grid size at fixed `c`.
pub fn run_model_refinement(sizes: &[usize], c: f64, base: &RunConfig, opts: &BatchOptions) -> Result<Vec<ModelRefinementRow>> {
    if let Some(n) = sizes.iter().find(|n| **n == 0 || **n % 32 != 0) {
        return Err(Error::config("problem.n", format!("model size {n} is not a multiple of 32")));
    }
    let out = opts.out_dir.as_deref();
    let rows = run_batch(sizes, opts.parallel, |n| {
        let mut cfg = base.clone();
        cfg.problem.n = n;
        cfg.optimizer.c = c;
        if !cfg.output.fine_n.is_multiple_of(n) {
            cfg.output.fine_n = n;
        }
        let dir = out.map(|d| d.join(format!("n_{n}")));
        let res = cfg.validate().and_then(|_| run_single(&cfg, dir.as_deref()));
        match res {
            Ok(r) => {
                let last = r.last();
                ModelRefinementRow {
                    model_n: n,
                    phi_h: last.phi_h,
                    e_apost: last.e_apost,
                    qm: last.qm,
                    iterations: last.iter,
                    converged: r.converged,
                    error: None,
                }
            }
            Err(e) => {
                log::error!("model refinement N = {n} failed: {e}");
                ModelRefinementRow {
                    model_n: n,
                    phi_h: f64::NAN,
                    e_apost: f64::NAN,
                    qm: f64::NAN,
                    iterations: 0,
                    converged: false,
                    error: Some(e.to_string()),
                }
            }
        }
    });
    Ok(rows)
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| crate::io::csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| crate::io::csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Side;

    fn settings() -> EvalSettings {
        EvalSettings {
            p: 4.0,
            f: 1e-2,
            boundary: BoundarySpec::single(Side::Left, 0.5, 0.5),
            solver: SolverOptions::default(),
        }
    }

    #[test]
    fn uniform_design_refines_monotonically() {
        let d = DesignField::uniform(8, 0.4, 1e-3, 0.4).unwrap();
        let rep = run_refinement_study(&d, &[8, 16, 32, 64], &settings()).unwrap();
        assert!(rep.is_monotone(1e-6));
        assert_eq!(rep.qm, 0.0);
        assert_eq!(rep.rows[0].ratio, 1.0);
        assert!(rep.rows.iter().all(|r| r.ratio >= 1.0));
    }

    #[test]
    fn non_nested_family_is_rejected() {
        let d = DesignField::uniform(8, 0.4, 1e-3, 0.4).unwrap();
        for grids in [&[8, 12][..], &[16, 32], &[8, 16, 8], &[]] {
            assert!(matches!(run_refinement_study(&d, grids, &settings()), Err(Error::GridMismatch(_))));
        }
    }

    #[test]
    fn sweep_records_failures_and_continues() {
        let mut cfg = RunConfig::default();
        cfg.problem.n = 8;
        cfg.problem.sinks = settings().boundary.sinks;
        cfg.optimizer.max_iters = 2;
        cfg.optimizer.c = 0.0;
        cfg.output.fine_n = 16;
        // Q2 has no estimator gradient, so only the C = 0 run can succeed
        cfg.discretization.order = 2;
        let rep = run_c_sweep(&[1.0, 0.0], &cfg, &BatchOptions::default()).unwrap();
        assert_eq!(rep.rows.len(), 2);
        assert!(rep.rows[0].error.is_some() && rep.rows[0].phi_fine.is_nan());
        assert!(rep.designs[0].is_none());
        assert!(rep.rows[1].error.is_none());
        assert!(rep.rows[1].phi_fine > 0.0);
        assert!(rep.designs[1].is_some());
    }

    #[test]
    fn model_sizes_must_be_multiples_of_32() {
        assert!(run_model_refinement(&[48], 1.0, &RunConfig::default(), &BatchOptions::default()).is_err());
    }
}
