//! Periodic solver and audit harness for the quasi-stationary compressible
//! Stokes system with anisotropic viscosity,
//!
//! ```text
//! ∂_t ρ + div(ρ ω_δ∗u) = εΔρ − ηρ^{2γ} − ηρ³
//! −div τ(D(u)) + ∇(ω_δ∗ρ^γ) = ∇f,      τ_ij = A_ijkl D(u)_kl
//! ```
//!
//! on the torus `[0, 2π)^d`, `d ∈ {1, 2, 3}`.

pub mod coupled;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod stokes;
pub mod transport;
pub mod viscosity;

pub use coupled::{CoupledSolver, Forcing, Slab, Trajectory};
pub use diagnostics::{DefectParams, DiagnosticsRow};
pub use error::{Error, Result};
pub use experiment::{parse_config, Audit, RunConfig};
pub use grid::{GridSpec, MollifierKernel, ScalarField, TensorField, VectorField};
pub use stokes::{KrylovSettings, StokesOperator};
pub use transport::{MassLedger, SolverParams};
pub use viscosity::{CoercivityReport, ViscosityTensor};
