//! Mixed and hybridizable discontinuous Galerkin discretizations of planar
//! linear elasticity on uniform triangulations of the unit square.

pub mod assembly;
pub mod convergence_lab;
pub mod dg_calculus;
pub mod elasticity_model;
pub mod error;
pub mod fe_spaces;
pub mod hybrid_solver;
pub mod mesh;
