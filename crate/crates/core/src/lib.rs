//! Density-based topology optimization of 2D heat conduction on structured grids.
//!
//! The objective is the discrete thermal compliance corrected by a residual a posteriori
//! error estimator, `Φ_h^C(k) = Φ_h(k) + C E_apost(k; u_h(k))`. The correction term penalizes
//! designs whose small discrete compliance is an artifact of a large finite element error,
//! the mechanism behind checkerboard patterns.

pub mod design;
pub mod error;
pub mod estimator;
pub mod experiments;
pub mod fem;
pub mod grid;
pub mod io;
pub mod optimizer;
pub mod sensitivity;

pub use design::DesignField;
pub use error::{Error, Result};
pub use grid::{build_grid, BoundarySpec, ModelGrid, Side, StructuredGrid};
