//! Implicit dynamics for structures built from elastic rods, triangulated
//! shells, and combinations of the two.
//!
//! Rods follow the discrete-elastic-rods formulation: nodal positions plus a
//! scalar twist angle per edge, with reference frames maintained by parallel
//! transport. Shell bending comes in two flavors, a hinge (dihedral-angle)
//! model and a mid-edge-normal model that adds one scalar DOF per shell edge.
//! Everything is assembled into one DOF vector and advanced with backward
//! Euler (default), implicit midpoint, or forward Euler; statics share the
//! same Newton machinery. Self-contact and friction use a smoothed penalty
//! on edge-pair minimum distance. Environment forces cover gravity/buoyancy,
//! a floor with friction, viscous damping, resistive-force theory, quadratic
//! aerodynamic drag, and a fixed spherical obstacle.
//!
//! The crate is organized around an [`integrate::Simulation`]: build one from
//! a geometry file and a config file (see [`scenario`]), or assemble the
//! pieces by hand starting from [`topology::build_topology`].

pub mod actuation;
pub mod contact;
pub mod energy;
pub mod forces;
pub mod integrate;
pub mod math;
pub mod scenario;
pub mod state;
pub mod topology;
pub mod verify;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("linear solve failed ({0})")]
    Singular(String),
    #[error("step {step}: Newton did not converge ({iterations} iterations, residual {residual:.3e})")]
    NonConvergence {
        step: usize,
        iterations: usize,
        residual: f64,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
