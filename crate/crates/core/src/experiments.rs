//! The verification runs: Jacobian envelopes, the Lieb-Robinson inequality,
//! nested-volume convergence of the dynamics and the interaction-picture identity.
//! Sampled suprema are lower bounds on the true suprema over phase space, so a
//! passing inequality check is evidence, not proof.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{compute_c0, jacobian_envelope, light_cone_bound, lr_rhs, mu_family, BoundConstants};
use crate::dynamics::{flow_at_times, harmonic_flow, variational_at_times, BlockKind, FlowOptions};
use crate::error::{LabError, Result};
use crate::lattice::{dist_sets, interaction_weight, SiteId, SiteSet};
use crate::model::LatticeModel;
use crate::observables::{bracket_from_jacobian, evolved_bracket_at_times, state_from_point, Observable};
use crate::sampler::{ball_points, sup_profile, SamplerSpec};

pub const LOWER_BOUND_NOTE: &str =
    "measured suprema are taken over a finite ball of sampled states and are lower bounds; a pass is necessary, not sufficient";

/// Relative threshold defining the light-cone onset.
pub const ONSET_THRESHOLD: f64 = 1e-6;

/// Slack on the explicit convergence bound.
pub const CONVERGENCE_SLACK: f64 = 10.0;

/// Allowed interaction-picture reconstruction discrepancy.
pub const PICTURE_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn passed(self) -> bool {
        self == Verdict::Pass
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(if self.passed() { "pass" } else { "fail" })
    }
}

/// `n` equally spaced times on `[−T, T]`, mirrored exactly around 0.
pub fn symmetric_grid(t_max: f64, n: usize) -> Result<Vec<f64>> {
    if !(t_max >= 0.0) || !t_max.is_finite() {
        return Err(LabError::domain("time horizon must be finite and nonnegative"));
    }
    match n {
        0 => Err(LabError::domain("time grid needs at least one point")),
        1 => Ok(vec![0.0]),
        _ => {
            let m = (n - 1) as f64;
            Ok((0..n).map(|i| t_max * (2.0 * i as f64 - m) / m).collect())
        }
    }
}

/// `n` equally spaced times on `[0, T]`.
pub fn forward_grid(t_max: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(LabError::domain("time grid needs at least two points"));
    }
    if !(t_max >= 0.0) || !t_max.is_finite() {
        return Err(LabError::domain("time horizon must be finite and nonnegative"));
    }
    Ok((0..n).map(|i| t_max * i as f64 / (n - 1) as f64).collect())
}

/// Spectral norm of a small block.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.len() == 1 {
        return m[(0, 0)].abs();
    }
    m.clone().svd(false, false).singular_values.max()
}

fn phase_dim(region: &SiteSet, d: usize) -> usize {
    2 * region.len() * d
}

// ---------------------------------------------------------------------------
// envelopes

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeCell {
    pub t: f64,
    /// Row site `k` of `∂(·)_k/∂(·)_j`.
    pub k: SiteId,
    /// Column site `j`.
    pub j: SiteId,
    pub kind: BlockKind,
    pub measured: f64,
    pub envelope: f64,
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeSummary {
    pub kind: BlockKind,
    pub worst_margin: f64,
    pub worst_t: f64,
    pub worst_pair: (SiteId, SiteId),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub constants: BoundConstants,
    pub sampler: SamplerSpec,
    pub times: Vec<f64>,
    pub pairs: Vec<(SiteId, SiteId)>,
    pub cells: Vec<EnvelopeCell>,
    pub worst: Vec<EnvelopeSummary>,
    pub violations: usize,
    pub failures: usize,
    pub verdict: Verdict,
    pub note: String,
}

/// All ordered off-diagonal pairs of the region.
pub fn off_diagonal_pairs(region: &SiteSet) -> Vec<(SiteId, SiteId)> {
    region.iter().flat_map(|k| region.iter().filter(move |&j| j != k).map(move |j| (k, j))).collect()
}

/// Compares sampled maxima of `‖K_kj(t)‖_op` with the closed-form envelopes for
/// every pair `(k, j)`, time and block family. Failed samples are counted and skipped.
pub fn run_envelope_check(
    model: &LatticeModel,
    region: &SiteSet,
    pairs: &[(SiteId, SiteId)],
    times: &[f64],
    sampler: &SamplerSpec,
    flow: &FlowOptions,
) -> Result<EnvelopeReport> {
    if pairs.is_empty() {
        return Err(LabError::domain("no pairs to check"));
    }
    for &(k, j) in pairs {
        if k == j {
            return Err(LabError::domain(format!("envelope pairs must be off-diagonal, got ({k}, {j})")));
        }
        if !region.contains(k) || !region.contains(j) {
            return Err(LabError::domain(format!("pair ({k}, {j}) is not inside the region")));
        }
    }
    let bc = compute_c0(model, region)?;
    let d = model.dim();
    let seeds: SiteSet = pairs.iter().map(|p| p.1).collect();
    let points = ball_points(phase_dim(region, d), sampler)?;
    let ncell = times.len() * pairs.len() * 4;
    let samples: Vec<Option<Vec<f64>>> = points
        .par_iter()
        .map(|x| {
            let s0 = state_from_point(region, d, x);
            let (_, blocks) = variational_at_times(model, region, &s0, &seeds, times, flow).ok()?;
            let mut out = Vec::with_capacity(ncell);
            for n in 0..times.len() {
                for &(k, j) in pairs {
                    for kind in BlockKind::ALL {
                        out.push(op_norm(&blocks.block(n, kind, k, j)?));
                    }
                }
            }
            Some(out)
        })
        .collect();
    let failures = samples.iter().filter(|s| s.is_none()).count();
    if failures == samples.len() {
        return Err(LabError::Integration { time: f64::NAN, reason: "every sampled run failed".into() });
    }
    let mut measured = vec![0.0f64; ncell];
    for s in samples.iter().flatten() {
        for (m, v) in measured.iter_mut().zip(s) {
            *m = m.max(*v);
        }
    }
    let mut cells = Vec::with_capacity(ncell);
    let mut idx = 0;
    for &t in times {
        for &(k, j) in pairs {
            let f_value = model.decay().eval(model.lattice().distance(k, j));
            for kind in BlockKind::ALL {
                let envelope = jacobian_envelope(&bc, f_value, t, kind);
                let m = measured[idx];
                cells.push(EnvelopeCell { t, k, j, kind, measured: m, envelope, margin: envelope - m });
                idx += 1;
            }
        }
    }
    let worst = BlockKind::ALL
        .iter()
        .map(|&kind| {
            let c = cells.iter().filter(|c| c.kind == kind).fold(None::<&EnvelopeCell>, |b, c| match b {
                Some(b) if b.margin <= c.margin => Some(b),
                _ => Some(c),
            });
            let c = c.expect("at least one cell per kind");
            EnvelopeSummary { kind, worst_margin: c.margin, worst_t: c.t, worst_pair: (c.k, c.j) }
        })
        .collect();
    let violations = cells.iter().filter(|c| !(c.margin >= 0.0)).count();
    Ok(EnvelopeReport {
        constants: bc,
        sampler: sampler.clone(),
        times: times.to_vec(),
        pairs: pairs.to_vec(),
        cells,
        worst,
        violations,
        failures,
        verdict: Verdict::from_bool(violations == 0),
        note: LOWER_BOUND_NOTE.to_string(),
    })
}

// ---------------------------------------------------------------------------
// Lieb-Robinson inequality

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrOptions {
    pub sampler: SamplerSpec,
    pub flow: FlowOptions,
    pub mu_grid: Vec<f64>,
    /// Multiplies the measured left-hand side; 1 except to exercise the failure path.
    pub lhs_scale: f64,
}

impl Default for LrOptions {
    fn default() -> Self {
        LrOptions { sampler: SamplerSpec::default(), flow: FlowOptions::default(), mu_grid: crate::bounds::default_mu_grid(), lhs_scale: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrRow {
    pub t: f64,
    pub lhs_measured: f64,
    /// Best quasi-random sample before refinement.
    pub lhs_sample: f64,
    pub rhs_sinh: f64,
    pub rhs_exp: f64,
    pub rhs_corollary_best_mu: f64,
    pub best_mu: f64,
    pub velocity: f64,
    /// `rhs_sinh − lhs_measured`
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrReport {
    pub x: SiteSet,
    pub y: SiteSet,
    pub dist: f64,
    /// `D(X, Y)`
    pub weight: f64,
    pub f_c1: f64,
    pub g_c1: f64,
    pub constants: BoundConstants,
    pub mu_grid: Vec<f64>,
    pub sampler: SamplerSpec,
    pub lhs_scale: f64,
    pub rows: Vec<LrRow>,
    pub worst_margin: f64,
    /// Smallest `|t|` with LHS above `ONSET_THRESHOLD` times its grid maximum.
    pub onset_time: Option<f64>,
    pub failures: usize,
    pub verdict: Verdict,
    pub note: String,
}

/// First `|t|` (in increasing order) at which `lhs` exceeds `threshold · max lhs`.
pub fn onset_time(times: &[f64], lhs: &[f64], threshold: f64) -> Option<f64> {
    let max = lhs.iter().copied().fold(0.0, f64::max);
    if !(max > 0.0) {
        return None;
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].abs().total_cmp(&times[b].abs()));
    order.into_iter().find(|&i| lhs[i] > threshold * max).map(|i| times[i].abs())
}

/// Samples `sup |{α_t(f), g}|` on the grid and compares it with the sinh, exponential
/// and best-`μ` light-cone right-hand sides.
pub fn run_lr_experiment(model: &LatticeModel, region: &SiteSet, f: &Observable, g: &Observable, times: &[f64], opts: &LrOptions) -> Result<LrReport> {
    let (x, y) = (f.support(), g.support());
    if !x.is_disjoint(y) {
        return Err(LabError::domain(format!(
            "supports X = {x} and Y = {y} overlap; the inequality needs disjoint, separated supports"
        )));
    }
    if !x.is_subset(region) || !y.is_subset(region) {
        return Err(LabError::domain("observable supports must lie inside the region"));
    }
    if times.is_empty() {
        return Err(LabError::domain("time grid is empty"));
    }
    let lat = model.lattice();
    let dist = dist_sets(lat, x, y)?;
    if !(dist > 0.0) {
        return Err(LabError::domain("supports must be spatially separated (dist > 0)"));
    }
    let weight = interaction_weight(lat, model.decay(), x, y)?;
    let bc = compute_c0(model, region)?;
    let family = mu_family(&bc, model, region, &opts.mu_grid)?;
    let (f_c1, g_c1) = (f.c1_norm(), g.c1_norm());
    let d = model.dim();

    let all = |p: &[f64]| {
        let s0 = state_from_point(region, d, p);
        evolved_bracket_at_times(model, region, f, g, times, &s0, &opts.flow)
    };
    let one = |p: &[f64], n: usize| {
        let s0 = state_from_point(region, d, p);
        let (states, blocks) = variational_at_times(model, region, &s0, y, &times[n..=n], &opts.flow)?;
        bracket_from_jacobian(f, g, &s0, &states[0], &blocks, 0)
    };
    let sup = sup_profile(phase_dim(region, d), &opts.sampler, times.len(), all, one)?;

    let mut rows = Vec::with_capacity(times.len());
    for (&t, est) in times.iter().zip(&sup) {
        let rhs = lr_rhs(&bc, f_c1, g_c1, weight, t);
        let cone = light_cone_bound(&family, f_c1, g_c1, x.len(), y.len(), dist, t)?;
        let lhs = est.value * opts.lhs_scale;
        rows.push(LrRow {
            t,
            lhs_measured: lhs,
            lhs_sample: est.sample_value * opts.lhs_scale,
            rhs_sinh: rhs.sinh_form,
            rhs_exp: rhs.exp_form,
            rhs_corollary_best_mu: cone.value,
            best_mu: cone.best_mu,
            velocity: cone.velocity,
            margin: rhs.sinh_form - lhs,
        });
    }
    let worst_margin = rows.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min);
    let lhs: Vec<f64> = rows.iter().map(|r| r.lhs_measured).collect();
    Ok(LrReport {
        x: x.clone(),
        y: y.clone(),
        dist,
        weight,
        f_c1,
        g_c1,
        constants: bc,
        mu_grid: opts.mu_grid.clone(),
        sampler: opts.sampler.clone(),
        lhs_scale: opts.lhs_scale,
        onset_time: onset_time(times, &lhs, ONSET_THRESHOLD),
        worst_margin,
        failures: sup.first().map_or(0, |e| e.failures),
        verdict: Verdict::from_bool(rows.iter().all(|r| r.margin >= 0.0)),
        rows,
        note: LOWER_BOUND_NOTE.to_string(),
    })
}

// ---------------------------------------------------------------------------
// nested-volume convergence

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStep {
    pub inner_len: usize,
    pub outer_len: usize,
    /// Sampled `sup_s |α_t^{outer}(f)(s) − α_t^{inner}(f)(s)|` per grid time.
    pub per_time: Vec<f64>,
    /// Maximum over the grid.
    pub sup_diff: f64,
    /// `Σ_{ℓ∈X} Σ_{x ∈ outer∖inner} F(d(ℓ, x))`
    pub tail_proxy: f64,
    /// `prefactor · tail_proxy · slack`
    pub bound: f64,
    pub below_bound: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub volumes: Vec<SiteSet>,
    pub times: Vec<f64>,
    pub constants: BoundConstants,
    /// `max{sup √(m ν), 1/inf √(m ν)}` over the largest volume.
    pub c_harm: f64,
    pub f_c1: f64,
    /// `8 d C_harm² ‖f‖_{C¹} ‖Ψ‖ C_V (C_F + ‖F‖) cosh(√C₀ T)`
    pub prefactor: f64,
    pub slack: f64,
    pub steps: Vec<ConvergenceStep>,
    /// Each step's difference is below the previous one, or zero.
    pub decreasing: bool,
    pub verdict: Verdict,
    pub note: String,
}

/// `max{sup_k √(m_k ν_k), 1 / inf_k √(m_k ν_k)}`.
pub fn harmonic_constant(model: &LatticeModel, region: &SiteSet) -> f64 {
    let w: Vec<f64> = region.iter().map(|k| (model.mass(k) * model.force_constant(k)).sqrt()).collect();
    let sup = w.iter().copied().fold(0.0, f64::max);
    let inf = w.iter().copied().fold(f64::INFINITY, f64::min);
    sup.max(1.0 / inf)
}

/// `8 d C_harm² ‖f‖_{C¹} ‖Ψ‖ C_V (C_F + ‖F‖) cosh(√C₀ T)`.
pub fn convergence_prefactor(bc: &BoundConstants, c_harm: f64, f_c1: f64, t_max: f64) -> f64 {
    8.0 * bc.dim as f64 * c_harm * c_harm * f_c1 * bc.psi_norm * bc.c_v * (bc.c_f + bc.f_norm) * (bc.sqrt_c0() * t_max.abs()).cosh()
}

/// `Σ_{ℓ∈X} Σ_{x∈A} F(d(ℓ, x))` over the annulus `A`.
pub fn tail_proxy(model: &LatticeModel, x: &SiteSet, annulus: &SiteSet) -> f64 {
    let lat = model.lattice();
    x.iter().map(|l| annulus.iter().map(|a| model.decay().eval(lat.distance(l, a))).sum::<f64>()).sum()
}

/// Compares `α_t(f)` on consecutive nested volumes over states on the inner volume,
/// extended by zero, against the explicit tail bound.
pub fn run_convergence_experiment(
    model: &LatticeModel,
    volumes: &[SiteSet],
    f: &Observable,
    times: &[f64],
    sampler: &SamplerSpec,
    flow: &FlowOptions,
) -> Result<ConvergenceReport> {
    if volumes.len() < 2 {
        return Err(LabError::domain("need at least two nested volumes"));
    }
    if !f.support().is_subset(&volumes[0]) {
        return Err(LabError::domain(format!("support {} of f is not inside the smallest volume", f.support())));
    }
    for w in volumes.windows(2) {
        if !(w[0].is_subset(&w[1]) && w[0].len() < w[1].len()) {
            return Err(LabError::domain("volumes must be strictly nested"));
        }
    }
    if times.is_empty() {
        return Err(LabError::domain("time grid is empty"));
    }
    let largest = volumes.last().unwrap();
    model.lattice().check_sites(largest)?;
    let bc = compute_c0(model, largest)?;
    let c_harm = harmonic_constant(model, largest);
    let f_c1 = f.c1_norm();
    let t_max = times.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    let prefactor = convergence_prefactor(&bc, c_harm, f_c1, t_max);
    let d = model.dim();

    let mut steps = Vec::with_capacity(volumes.len() - 1);
    for w in volumes.windows(2) {
        let (inner, outer) = (&w[0], &w[1]);
        let diffs = |p: &[f64], ts: &[f64]| -> Result<Vec<f64>> {
            let s = state_from_point(inner, d, p);
            let a = flow_at_times(model, outer, &s, ts, flow)?;
            let b = flow_at_times(model, inner, &s, ts, flow)?;
            Ok(a.iter().zip(&b).map(|(sa, sb)| (f.value(sa) - f.value(sb)).abs()).collect())
        };
        let sup = sup_profile(phase_dim(inner, d), sampler, times.len(), |p| diffs(p, times), |p, n| Ok(diffs(p, &times[n..=n])?[0]))?;
        let per_time: Vec<f64> = sup.iter().map(|e| e.value).collect();
        let sup_diff = per_time.iter().copied().fold(0.0, f64::max);
        let proxy = tail_proxy(model, f.support(), &outer.difference(inner));
        let bound = prefactor * proxy * CONVERGENCE_SLACK;
        steps.push(ConvergenceStep {
            inner_len: inner.len(),
            outer_len: outer.len(),
            per_time,
            sup_diff,
            tail_proxy: proxy,
            bound,
            below_bound: sup_diff <= bound,
        });
    }
    let decreasing = steps.windows(2).all(|w| w[1].sup_diff < w[0].sup_diff || w[1].sup_diff == 0.0);
    let verdict = Verdict::from_bool(decreasing && steps.iter().all(|s| s.below_bound));
    Ok(ConvergenceReport {
        volumes: volumes.to_vec(),
        times: times.to_vec(),
        constants: bc,
        c_harm,
        f_c1,
        prefactor,
        slack: CONVERGENCE_SLACK,
        steps,
        decreasing,
        verdict,
        note: LOWER_BOUND_NOTE.to_string(),
    })
}

/// Nested volumes: balls of the given radii around `center`.
pub fn nested_balls(model: &LatticeModel, center: &SiteSet, radii: &[f64]) -> Result<Vec<SiteSet>> {
    model.lattice().check_sites(center)?;
    Ok(radii.iter().map(|&r| model.lattice().ball(center, r)).collect())
}

// ---------------------------------------------------------------------------
// interaction picture

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PictureReport {
    pub times: Vec<f64>,
    /// Sampled `sup |α_t(f) − γ_t(f ∘ Φ_t^{0,X})|` per grid time.
    pub discrepancy: Vec<f64>,
    /// Sampled `sup |γ_t(f) − f|` per grid time; zero up to integration error
    /// for interaction-free models.
    pub picture_drift: Vec<f64>,
    pub max_discrepancy: f64,
    pub tolerance: f64,
    pub sampler: SamplerSpec,
    pub verdict: Verdict,
}

/// Checks `α_t(f) = γ_t(f ∘ Φ_t^{0,X})` with `γ_t(h) = h ∘ Φ_{−t}^{0,Λ} ∘ Φ_t`.
pub fn run_interaction_picture_check(
    model: &LatticeModel,
    region: &SiteSet,
    f: &Observable,
    times: &[f64],
    sampler: &SamplerSpec,
    flow: &FlowOptions,
) -> Result<PictureReport> {
    let x = f.support();
    if !x.is_subset(region) {
        return Err(LabError::domain(format!("support {x} of f is not inside the region")));
    }
    if times.is_empty() {
        return Err(LabError::domain("time grid is empty"));
    }
    let d = model.dim();
    // per time: (reconstruction discrepancy, picture drift)
    let cells = |p: &[f64], ts: &[f64]| -> Result<Vec<(f64, f64)>> {
        let s = state_from_point(region, d, p);
        let states = flow_at_times(model, region, &s, ts, flow)?;
        Ok(ts
            .iter()
            .zip(&states)
            .map(|(&t, st)| {
                let direct = f.value(st);
                let pulled = harmonic_flow(model, region, st, -t);
                let rebuilt = f.value(&harmonic_flow(model, x, &pulled, t));
                let whole = f.value(&harmonic_flow(model, region, &pulled, t));
                let disc = (direct - rebuilt).abs().max((direct - whole).abs());
                (disc, (f.value(&pulled) - f.value(&s)).abs())
            })
            .collect())
    };
    let dim = phase_dim(region, d);
    let disc = sup_profile(
        dim,
        sampler,
        times.len(),
        |p| Ok(cells(p, times)?.into_iter().map(|c| c.0).collect()),
        |p, n| Ok(cells(p, &times[n..=n])?[0].0),
    )?;
    let drift = sup_profile(
        dim,
        sampler,
        times.len(),
        |p| Ok(cells(p, times)?.into_iter().map(|c| c.1).collect()),
        |p, n| Ok(cells(p, &times[n..=n])?[0].1),
    )?;
    let discrepancy: Vec<f64> = disc.iter().map(|e| e.value).collect();
    let max_discrepancy = discrepancy.iter().copied().fold(0.0, f64::max);
    Ok(PictureReport {
        times: times.to_vec(),
        picture_drift: drift.iter().map(|e| e.value).collect(),
        discrepancy,
        max_discrepancy,
        tolerance: PICTURE_TOLERANCE,
        sampler: sampler.clone(),
        verdict: Verdict::from_bool(max_discrepancy <= PICTURE_TOLERANCE),
    })
}
