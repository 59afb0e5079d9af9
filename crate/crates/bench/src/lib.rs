//! Shared fixtures for the criterion benchmarks.

use lrlab_core::config::{ExperimentConfig, LatticeSpec};
use lrlab_core::{LatticeModel, PhaseState, SiteSet};

/// The chain-8 preset parameters on a chain of `n` sites.
pub fn chain_model(n: usize) -> LatticeModel {
    let mut cfg = ExperimentConfig::preset("chain-8").expect("preset exists");
    cfg.lattice = LatticeSpec::Chain { size: n };
    cfg.build_model().expect("preset builds")
}

/// A deterministic non-trivial state on `region`.
pub fn wavy_state(region: &SiteSet, dim: usize) -> PhaseState {
    let n = region.len() * dim;
    let q = (0..n).map(|i| 0.3 * (0.7 * i as f64).sin()).collect();
    let p = (0..n).map(|i| 0.2 * (1.3 * i as f64).cos()).collect();
    PhaseState::from_parts(region.clone(), dim, p, q).expect("sizes match")
}
