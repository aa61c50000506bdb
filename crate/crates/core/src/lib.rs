//! Adaptive biasing force laboratory: model problems, a quadrature oracle for
//! the free energy, an interacting-particle sampler, finite-volume
//! Fokker-Planck solvers and entropy diagnostics.

// `!(x > 0.0)` is used on purpose: NaN must fail these checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bias;
pub mod diagnostics;
pub mod error;
pub mod fields;
pub mod grid;
pub mod oracle;
pub mod particles;
pub mod pde;
pub mod rng;

pub use bias::{BiasLookup, BiasProfile};
pub use diagnostics::{DecayFit, DiagnosticsRecord, EntropyDecomposition};
pub use error::{AbfError, Result};
pub use fields::{
    convergence_constants, Confinement, ConvergenceConstants, CoordinateField, EvalGrid, ModelProblem, Point,
    PotentialField, ReactionCoordinate, TestPotential, XDomain, YDomain,
};
pub use grid::{Axis, Density1d, DensityField, Grid2d};
pub use oracle::{EquilibriumDensities, FreeEnergyProfile, YQuadrature};
pub use particles::{AbfSampler, InitDistribution, NoiseMode, ParticleEnsemble, SamplerConfig, Scheme};
pub use pde::{Fp2dSolver, Fp2dVariant, Marginal1dSolver, MarginalKind};
