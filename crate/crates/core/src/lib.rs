//! Numerical laboratory for classical harmonic-oscillator lattices: Hamiltonian and
//! variational dynamics, bound constants and envelopes, observables and Poisson
//! brackets, and the experiments comparing measured propagation with the
//! Lieb-Robinson bound.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod bounds;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod lattice;
pub mod model;
pub mod observables;
pub mod potential;
pub mod runner;
pub mod sampler;

pub use bounds::{BoundConstants, LightConeBound, LrRhs};
pub use config::ExperimentConfig;
pub use dynamics::{BlockKind, FlowOptions, Integrator, JacobianBlocks, Trajectory};
pub use error::{LabError, Result};
pub use experiments::{ConvergenceReport, EnvelopeReport, LrReport, PictureReport, Verdict};
pub use lattice::{DecayFunction, Lattice, SiteId, SiteSet};
pub use model::{AssumptionReport, LatticeModel, PhaseState};
pub use observables::Observable;
pub use potential::{PairPotential, PotentialShape};
pub use sampler::SamplerSpec;
