//! TOML run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::SolverOptions;
use crate::grid::{BoundarySpec, SinkSegment};
use crate::optimizer::{OptimizerConfig, Problem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemSection {
    /// Design cells per side.
    pub n: usize,
    pub sinks: Vec<SinkSegment>,
    pub f: f64,
    pub gamma: f64,
    pub volume: f64,
    pub p: f64,
}

impl Default for ProblemSection {
    fn default() -> Self {
        ProblemSection {
            n: 64,
            sinks: BoundarySpec::default().sinks,
            f: 1e-2,
            gamma: 1e-3,
            volume: 0.4,
            p: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscretizationSection {
    pub order: usize,
    /// Computational elements per design cell per side.
    pub ratio: usize,
}

impl Default for DiscretizationSection {
    fn default() -> Self {
        DiscretizationSection { order: 1, ratio: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub c: f64,
    pub move_limit: f64,
    pub change_tol: f64,
    pub max_iters: usize,
    pub filter_radius: f64,
    pub solver: SolverOptions,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let d = OptimizerConfig::default();
        OptimizerSection {
            c: d.c,
            move_limit: d.move_limit,
            change_tol: d.change_tol,
            max_iters: d.max_iters,
            filter_radius: d.filter_radius,
            solver: d.solver,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub directory: PathBuf,
    /// Write a design snapshot every this many iterations, 0 disables snapshots.
    pub snapshot_every: usize,
    /// Pixels per design cell side in PGM output.
    pub image_scale: usize,
    /// Binary (P5) rather than plain (P2) PGM.
    pub binary_pgm: bool,
    /// Computational grid size used for fine-grid verification.
    pub fine_n: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            directory: PathBuf::from("runs/latest"),
            snapshot_every: 0,
            image_scale: 1,
            binary_pgm: true,
            fine_n: 512,
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub problem: ProblemSection,
    pub discretization: DiscretizationSection,
    pub optimizer: OptimizerSection,
    pub output: OutputSection,
}

impl RunConfig {
    /// Parses and validates a TOML document; missing keys take their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Parse {
            what: "configuration".into(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.problem;
        if p.n == 0 {
            return Err(Error::config("problem.n", "must be positive"));
        }
        if !(p.gamma > 0.0 && p.gamma < 1.0) {
            return Err(Error::config("problem.gamma", format!("{} is outside (0, 1)", p.gamma)));
        }
        if !(p.volume > 0.0 && p.volume <= 1.0) {
            return Err(Error::config("problem.volume", format!("{} is outside (0, 1]", p.volume)));
        }
        if p.volume < p.gamma {
            return Err(Error::config("problem.volume", "must be at least gamma"));
        }
        if !(p.p >= 1.0 && p.p.is_finite()) {
            return Err(Error::config("problem.p", format!("{} is below 1", p.p)));
        }
        if !p.f.is_finite() {
            return Err(Error::config("problem.f", "must be finite"));
        }
        self.boundary()
            .validate()
            .map_err(|e| Error::config("problem.sinks", e.to_string()))?;
        self.boundary()
            .check_snaps(p.n)
            .map_err(|e| Error::config("problem.sinks", e.to_string()))?;
        if self.discretization.ratio == 0 {
            return Err(Error::config("discretization.ratio", "must be positive"));
        }
        if self.output.image_scale == 0 {
            return Err(Error::config("output.image_scale", "must be positive"));
        }
        if !self.output.fine_n.is_multiple_of(p.n) {
            return Err(Error::config("output.fine_n", format!("must be a multiple of problem.n = {}", p.n)));
        }
        // the optimizer reports its own field names; map them back to where they live here
        self.optimizer_config().validate().map_err(|e| match e {
            Error::Config { key, message } => {
                let key = match key.as_str() {
                    "optimizer.order" => "discretization.order".to_string(),
                    "optimizer.volume" => "problem.volume".to_string(),
                    "optimizer.p" => "problem.p".to_string(),
                    _ => key,
                };
                Error::Config { key, message }
            }
            other => other,
        })
    }

    pub fn boundary(&self) -> BoundarySpec {
        BoundarySpec {
            sinks: self.problem.sinks.clone(),
        }
    }

    pub fn problem(&self) -> Problem {
        Problem {
            model_n: self.problem.n,
            ratio: self.discretization.ratio,
            boundary: self.boundary(),
            f: self.problem.f,
            gamma: self.problem.gamma,
        }
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            c: self.optimizer.c,
            p: self.problem.p,
            volume: self.problem.volume,
            max_iters: self.optimizer.max_iters,
            move_limit: self.optimizer.move_limit,
            change_tol: self.optimizer.change_tol,
            filter_radius: self.optimizer.filter_radius,
            order: self.discretization.order,
            solver: self.optimizer.solver,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Side;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.problem.f, 1e-2);
        assert_eq!(cfg.problem.gamma, 1e-3);
        assert_eq!(cfg.problem.volume, 0.4);
        assert_eq!(cfg.problem.p, 4.0);
        assert_eq!(cfg.optimizer.c, 1.0);
        assert_eq!(cfg.discretization.order, 1);
        assert_eq!(cfg.discretization.ratio, 1);
    }

    #[test]
    fn range_errors_name_the_key() {
        let err = RunConfig::parse("[problem]\np = 0.5\n").unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "problem.p"), "{err}");
        let err = RunConfig::parse("[problem]\ngamma = 1.5\n").unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "problem.gamma"));
        let err = RunConfig::parse("[discretization]\norder = 3\n").unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "discretization.order"));
    }

    #[test]
    fn unknown_keys_and_type_errors_are_rejected() {
        let err = RunConfig::parse("[problem]\nheat = 1\n").unwrap_err();
        assert!(err.to_string().contains("heat"), "{err}");
        let err = RunConfig::parse("[problem]\nn = \"big\"\n").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn sinks_are_configurable() {
        let cfg = RunConfig::parse(
            "[problem]\nn = 8\nsinks = [{ side = \"top\", center = 0.25, length = 0.5 }]\n",
        )
        .unwrap();
        assert_eq!(cfg.problem.sinks[0].side, Side::Top);
        let err = RunConfig::parse("[problem]\nn = 8\nsinks = [{ side = \"top\", center = 0.5, length = 0.3 }]\n")
            .unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "problem.sinks"));
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.optimizer.c = 0.3;
        cfg.problem.n = 32;
        cfg.output.snapshot_every = 5;
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }
}
