//! Numerical core for the logarithmic Laplacian on bounded open sets in
//! one and two dimensions: pointwise evaluation, Galerkin assembly of the
//! Dirichlet form by two independent routes, dense eigenpairs, Poisson and
//! semilinear solvers, and quantitative audits of the qualitative theory
//! (maximum principles, Hopf rates, moving-plane symmetry, parallel-surface
//! rigidity).

pub mod assembly;
pub mod geometry;
pub mod kernel;
pub mod quad;
pub mod qualcheck;
pub mod solve;
pub mod spectral;

pub use assembly::{assemble_alt, assemble_def, pair_integral, Cutoff, FormMatrices, Route};
pub use geometry::{build_grid, critical_value, reflect, Domain, Grid, Point, Primitive, ReflectionFrame};
pub use kernel::{
    apply_to_field, apply_to_fn, constants, ell, frac_power_apply, h_omega, kernel_eval,
    symbol_oracle_apply, KernelConstants, PeriodicField, QuadratureSpec,
};
pub use qualcheck::{AuditEntry, Verdict};
pub use solve::{solve_poisson, solve_semilinear, solve_torsion, Nonlinearity, SolveOutcome};
pub use spectral::{eigs, lambda1, lambda1_lower_bound, EigenPair};

/// One value per grid cell, zero outside the domain by convention.
pub type DiscreteField = nalgebra::DVector<f64>;
