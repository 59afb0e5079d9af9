//! Fixed-step integration of Hamilton's equations on a finite region, the
//! co-integrated variational (tangent) system giving the Jacobian blocks
//! `X = ∂q/∂q₀`, `Y = ∂p/∂q₀`, `Z = ∂q/∂p₀`, `W = ∂p/∂p₀`, and the exact flow of
//! the uncoupled harmonic oscillators.
//!
//! The tangent is advanced with the same scheme as the state, so the stored
//! blocks are the exact derivative of the discrete flow map.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::lattice::{SiteId, SiteSet};
use crate::model::{LatticeModel, PhaseState};
use crate::potential::PairPotential;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    #[default]
    Rk4,
    /// Velocity Verlet.
    Leapfrog,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowOptions {
    pub integrator: Integrator,
    /// Maximal step; each interval is split into `ceil(|Δt|/step)` equal steps.
    pub step: f64,
    /// Relative energy drift allowed before the run is rejected; `None` disables the check.
    pub energy_tol: Option<f64>,
    /// Keep every `record_every`-th node in trajectories (the final node is always kept).
    pub record_every: usize,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions { integrator: Integrator::Rk4, step: 1e-3, energy_tol: Some(1e-4), record_every: 1 }
    }
}

impl FlowOptions {
    pub fn with_step(step: f64) -> Self {
        FlowOptions { step, ..Default::default() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(LabError::domain(format!("integration step must be positive, got {}", self.step)));
        }
        if self.record_every == 0 {
            return Err(LabError::domain("record_every must be at least 1"));
        }
        Ok(())
    }
}

/// The model restricted to a region, compiled to flat arrays. State vectors are
/// laid out as `[q; p]`, each site-major in the sorted order of the region.
#[derive(Clone, Debug)]
pub struct LocalSystem<'a> {
    sites: SiteSet,
    dim: usize,
    inv_mass: Vec<f64>,
    nu: Vec<f64>,
    pairs: Vec<(usize, usize, &'a PairPotential)>,
}

impl<'a> LocalSystem<'a> {
    pub fn new(model: &'a LatticeModel, region: &SiteSet) -> Result<Self> {
        model.lattice().check_sites(region)?;
        if region.is_empty() {
            return Err(LabError::domain("cannot integrate on an empty region"));
        }
        let pairs = model
            .pairs()
            .filter(|((k, l), v)| k != l && !v.is_zero() && region.contains(*k) && region.contains(*l))
            .map(|((k, l), v)| (region.position(k).unwrap(), region.position(l).unwrap(), v))
            .collect();
        Ok(LocalSystem {
            sites: region.clone(),
            dim: model.dim(),
            inv_mass: region.iter().map(|k| 1.0 / model.mass(k)).collect(),
            nu: region.iter().map(|k| model.force_constant(k)).collect(),
            pairs,
        })
    }

    pub fn sites(&self) -> &SiteSet {
        &self.sites
    }

    /// Number of position coordinates, `|Λ|·d`.
    pub fn nd(&self) -> usize {
        self.sites.len() * self.dim
    }

    pub fn pack(&self, s: &PhaseState) -> Vec<f64> {
        let local = s.on_sites(&self.sites);
        let mut y = local.q_flat().to_vec();
        y.extend_from_slice(local.p_flat());
        y
    }

    pub fn unpack(&self, y: &[f64]) -> PhaseState {
        let nd = self.nd();
        PhaseState::from_parts(self.sites.clone(), self.dim, y[nd..].to_vec(), y[..nd].to_vec())
            .unwrap_or_else(|_| {
                // Non-finite entries are reported by the integrator before states escape.
                let mut s = PhaseState::zeros(self.sites.clone(), self.dim);
                s.q_flat_mut().copy_from_slice(&y[..nd]);
                s.p_flat_mut().copy_from_slice(&y[nd..]);
                s
            })
    }

    pub fn energy(&self, y: &[f64]) -> f64 {
        let (d, nd) = (self.dim, self.nd());
        let (q, p) = y.split_at(nd);
        let mut e = 0.0;
        for i in 0..self.sites.len() {
            for c in 0..d {
                let (qi, pi) = (q[i * d + c], p[i * d + c]);
                e += 0.5 * pi * pi * self.inv_mass[i] + 0.5 * self.nu[i] * qi * qi;
            }
        }
        let mut x = vec![0.0; d];
        for &(k, l, v) in &self.pairs {
            for c in 0..d {
                x[c] = q[k * d + c] - q[l * d + c];
            }
            e += v.value(&x);
        }
        e
    }

    /// `∂U/∂q` into `out`.
    fn potential_gradient(&self, q: &[f64], out: &mut [f64], x: &mut [f64], g: &mut [f64]) {
        let d = self.dim;
        for i in 0..self.sites.len() {
            for c in 0..d {
                out[i * d + c] = self.nu[i] * q[i * d + c];
            }
        }
        for &(k, l, v) in &self.pairs {
            for c in 0..d {
                x[c] = q[k * d + c] - q[l * d + c];
            }
            v.gradient_into(x, g);
            for c in 0..d {
                out[k * d + c] += g[c];
                out[l * d + c] -= g[c];
            }
        }
    }

    /// Pair Hessians `Hess V_kl(q_k − q_l)` into `hbuf`, `d²` entries per pair.
    fn pair_hessians(&self, q: &[f64], hbuf: &mut [f64], x: &mut [f64]) {
        let d = self.dim;
        for (idx, &(k, l, v)) in self.pairs.iter().enumerate() {
            for c in 0..d {
                x[c] = q[k * d + c] - q[l * d + c];
            }
            v.hessian_into(x, &mut hbuf[idx * d * d..(idx + 1) * d * d]);
        }
    }

    /// `out = B(q) v` using precomputed pair Hessians.
    fn apply_hessian(&self, hbuf: &[f64], v: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for i in 0..self.sites.len() {
            for c in 0..d {
                out[i * d + c] = self.nu[i] * v[i * d + c];
            }
        }
        for (idx, &(k, l, _)) in self.pairs.iter().enumerate() {
            let h = &hbuf[idx * d * d..(idx + 1) * d * d];
            for a in 0..d {
                let mut acc = 0.0;
                for b in 0..d {
                    acc += h[a * d + b] * (v[k * d + b] - v[l * d + b]);
                }
                out[k * d + a] += acc;
                out[l * d + a] -= acc;
            }
        }
    }
}

struct Workspace {
    k: [Vec<f64>; 4],
    stage: Vec<f64>,
    hbuf: Vec<f64>,
    x: Vec<f64>,
    g: Vec<f64>,
    scratch: Vec<f64>,
}

impl Workspace {
    fn new(sys: &LocalSystem, len: usize) -> Self {
        let d = sys.dim;
        Workspace {
            k: std::array::from_fn(|_| vec![0.0; len]),
            stage: vec![0.0; len],
            hbuf: vec![0.0; sys.pairs.len() * d * d],
            x: vec![0.0; d],
            g: vec![0.0; d],
            scratch: vec![0.0; sys.nd()],
        }
    }
}

/// Right-hand side of the state plus `ncols` tangent columns, `z = [y; T_0; …]`.
fn augmented_rhs(sys: &LocalSystem, z: &[f64], ncols: usize, out: &mut [f64], ws_h: &mut [f64], x: &mut [f64], g: &mut [f64], scratch: &mut [f64]) {
    let nd = sys.nd();
    let d = sys.dim;
    let n2 = 2 * nd;
    {
        let (q, p) = z[..n2].split_at(nd);
        let (dq, dp) = out[..n2].split_at_mut(nd);
        for i in 0..sys.sites.len() {
            for c in 0..d {
                dq[i * d + c] = p[i * d + c] * sys.inv_mass[i];
            }
        }
        sys.potential_gradient(q, dp, x, g);
        for v in dp.iter_mut() {
            *v = -*v;
        }
    }
    if ncols == 0 {
        return;
    }
    sys.pair_hessians(&z[..nd], ws_h, x);
    for col in 0..ncols {
        let base = n2 + col * n2;
        let (tq, tp) = z[base..base + n2].split_at(nd);
        let (dq, dp) = out[base..base + n2].split_at_mut(nd);
        for i in 0..sys.sites.len() {
            for c in 0..d {
                dq[i * d + c] = tp[i * d + c] * sys.inv_mass[i];
            }
        }
        sys.apply_hessian(ws_h, tq, scratch);
        for (o, s) in dp.iter_mut().zip(scratch.iter()) {
            *o = -s;
        }
    }
}

fn rk4_step(sys: &LocalSystem, z: &mut [f64], ncols: usize, h: f64, ws: &mut Workspace) {
    let Workspace { k, stage, hbuf, x, g, scratch } = ws;
    let [k1, k2, k3, k4] = k;
    augmented_rhs(sys, z, ncols, k1, hbuf, x, g, scratch);
    for i in 0..z.len() {
        stage[i] = z[i] + 0.5 * h * k1[i];
    }
    augmented_rhs(sys, stage, ncols, k2, hbuf, x, g, scratch);
    for i in 0..z.len() {
        stage[i] = z[i] + 0.5 * h * k2[i];
    }
    augmented_rhs(sys, stage, ncols, k3, hbuf, x, g, scratch);
    for i in 0..z.len() {
        stage[i] = z[i] + h * k3[i];
    }
    augmented_rhs(sys, stage, ncols, k4, hbuf, x, g, scratch);
    for i in 0..z.len() {
        z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Velocity Verlet on the state and its exact linearization on the tangent.
fn leapfrog_step(sys: &LocalSystem, z: &mut [f64], ncols: usize, h: f64, ws: &mut Workspace) {
    let nd = sys.nd();
    let d = sys.dim;
    let n2 = 2 * nd;
    let Workspace { k, hbuf, x, g, scratch, .. } = ws;
    let grad = &mut k[0];

    if ncols > 0 {
        sys.pair_hessians(&z[..nd], hbuf, x);
        for col in 0..ncols {
            let base = n2 + col * n2;
            let (tq, tp) = z[base..base + n2].split_at_mut(nd);
            sys.apply_hessian(hbuf, tq, scratch);
            for i in 0..nd {
                tp[i] -= 0.5 * h * scratch[i];
            }
        }
    }
    sys.potential_gradient(&z[..nd], &mut grad[..nd], x, g);
    {
        let (q, p) = z[..n2].split_at_mut(nd);
        for i in 0..nd {
            p[i] -= 0.5 * h * grad[i];
        }
        for s in 0..sys.sites.len() {
            for c in 0..d {
                q[s * d + c] += h * sys.inv_mass[s] * p[s * d + c];
            }
        }
    }
    for col in 0..ncols {
        let base = n2 + col * n2;
        let (tq, tp) = z[base..base + n2].split_at_mut(nd);
        for s in 0..sys.sites.len() {
            for c in 0..d {
                tq[s * d + c] += h * sys.inv_mass[s] * tp[s * d + c];
            }
        }
    }
    sys.potential_gradient(&z[..nd], &mut grad[..nd], x, g);
    {
        let p = &mut z[nd..n2];
        for i in 0..nd {
            p[i] -= 0.5 * h * grad[i];
        }
    }
    if ncols > 0 {
        sys.pair_hessians(&z[..nd], hbuf, x);
        for col in 0..ncols {
            let base = n2 + col * n2;
            let (tq, tp) = z[base..base + n2].split_at_mut(nd);
            sys.apply_hessian(hbuf, tq, scratch);
            for i in 0..nd {
                tp[i] -= 0.5 * h * scratch[i];
            }
        }
    }
}

/// Advances `z` (state plus `ncols` tangent columns) through the monotone time
/// sequence `checkpoints`, all on the same side of `t0`, calling `visit` at every
/// recorded node. Each interval is split into `ceil(|Δt|/step)` equal steps, so
/// every checkpoint is hit exactly.
fn evolve<F>(sys: &LocalSystem, z: &mut [f64], ncols: usize, t0: f64, checkpoints: &[f64], opts: &FlowOptions, record_all: bool, mut visit: F) -> Result<()>
where
    F: FnMut(f64, &[f64], bool),
{
    opts.validate()?;
    let n2 = 2 * sys.nd();
    let e0 = sys.energy(&z[..n2]);
    let mut ws = Workspace::new(sys, z.len());
    let mut t = t0;
    let mut counter = 0usize;
    for &target in checkpoints {
        let span = target - t;
        let steps = (span.abs() / opts.step).ceil() as usize;
        let h = if steps == 0 { 0.0 } else { span / steps as f64 };
        for i in 0..steps {
            match opts.integrator {
                Integrator::Rk4 => rk4_step(sys, z, ncols, h, &mut ws),
                Integrator::Leapfrog => leapfrog_step(sys, z, ncols, h, &mut ws),
            }
            t = if i + 1 == steps { target } else { t + h };
            counter += 1;
            if z.iter().any(|v| !v.is_finite()) {
                return Err(LabError::Integration { time: t, reason: "state became non-finite".into() });
            }
            if let Some(tol) = opts.energy_tol {
                let e = sys.energy(&z[..n2]);
                let drift = (e - e0).abs() / e0.abs().max(1.0);
                if drift > tol {
                    return Err(LabError::Integration {
                        time: t,
                        reason: format!("relative energy drift {drift:.3e} exceeds tolerance {tol:.3e}"),
                    });
                }
            }
            let last = i + 1 == steps;
            if record_all && !last && counter.is_multiple_of(opts.record_every) {
                visit(t, z, false);
            }
        }
        t = target;
        visit(t, z, true);
    }
    Ok(())
}

/// Target times paired with their index in the caller's list.
type Run = Vec<(usize, f64)>;

/// Splits a list of times into a forward run over the nonnegative ones and a
/// backward run over the negative ones, remembering where each result goes.
fn split_times(times: &[f64]) -> Result<(Run, Run)> {
    if times.iter().any(|t| !t.is_finite()) {
        return Err(LabError::domain("times must be finite"));
    }
    let mut fwd: Vec<(usize, f64)> = times.iter().copied().enumerate().filter(|(_, t)| *t >= 0.0).collect();
    let mut bwd: Vec<(usize, f64)> = times.iter().copied().enumerate().filter(|(_, t)| *t < 0.0).collect();
    fwd.sort_by(|a, b| a.1.total_cmp(&b.1));
    bwd.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok((fwd, bwd))
}

/// Sampled solution of Hamilton's equations.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub integrator: Integrator,
    pub times: Vec<f64>,
    pub states: Vec<PhaseState>,
    pub energies: Vec<f64>,
}

impl Trajectory {
    pub fn final_state(&self) -> &PhaseState {
        self.states.last().expect("trajectories hold at least the initial node")
    }

    /// `max_n |E(t_n) − E(t_0)| / max(1, |E(t_0)|)`.
    pub fn max_relative_energy_drift(&self) -> f64 {
        let e0 = self.energies[0];
        self.energies.iter().map(|e| (e - e0).abs() / e0.abs().max(1.0)).fold(0.0, f64::max)
    }

    /// CSV rows `t,site,component,value` with components `q0, q1, …, p0, p1, …`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,site,component,value")?;
        for (t, s) in self.times.iter().zip(&self.states) {
            for k in s.sites().iter() {
                for (c, v) in s.q(k).unwrap().iter().enumerate() {
                    writeln!(w, "{t},{k},q{c},{v}")?;
                }
                for (c, v) in s.p(k).unwrap().iter().enumerate() {
                    writeln!(w, "{t},{k},p{c},{v}")?;
                }
            }
        }
        Ok(())
    }
}

/// Integrates from `s0` to time `horizon` (negative runs backward), keeping every
/// node. The final node lies exactly at `horizon`.
pub fn integrate_flow(model: &LatticeModel, region: &SiteSet, s0: &PhaseState, horizon: f64, opts: &FlowOptions) -> Result<Trajectory> {
    let sys = LocalSystem::new(model, region)?;
    let mut z = sys.pack(s0);
    let mut traj = Trajectory {
        integrator: opts.integrator,
        times: vec![0.0],
        states: vec![sys.unpack(&z)],
        energies: vec![sys.energy(&z)],
    };
    if horizon != 0.0 {
        evolve(&sys, &mut z, 0, 0.0, &[horizon], opts, true, |t, z, _| {
            traj.times.push(t);
            traj.states.push(sys.unpack(z));
            traj.energies.push(sys.energy(z));
        })?;
    }
    Ok(traj)
}

/// States `Φ_t(s0)` at each requested time, integrating forward through the
/// nonnegative times and backward through the negative ones.
pub fn flow_at_times(model: &LatticeModel, region: &SiteSet, s0: &PhaseState, times: &[f64], opts: &FlowOptions) -> Result<Vec<PhaseState>> {
    let sys = LocalSystem::new(model, region)?;
    let (fwd, bwd) = split_times(times)?;
    let mut out = vec![None; times.len()];
    for run in [fwd, bwd] {
        let mut z = sys.pack(s0);
        let targets: Vec<f64> = run.iter().map(|x| x.1).collect();
        let mut slot = 0;
        evolve(&sys, &mut z, 0, 0.0, &targets, opts, false, |_, z, _| {
            out[run[slot].0] = Some(sys.unpack(z));
            slot += 1;
        })?;
    }
    Ok(out.into_iter().map(Option::unwrap).collect())
}

/// The Jacobian of the flow map, one `2|Λ|d × 2|J|d` matrix per recorded time.
/// Rows are `(q; p)` over the region, columns `(q₀; p₀)` over the seeds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JacobianBlocks {
    sites: SiteSet,
    seeds: SiteSet,
    dim: usize,
    pub times: Vec<f64>,
    /// Column-major tangent matrices.
    data: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockKind {
    /// `∂q_k(t)/∂q_j`
    X,
    /// `∂p_k(t)/∂q_j`
    Y,
    /// `∂q_k(t)/∂p_j`
    Z,
    /// `∂p_k(t)/∂p_j`
    W,
}

impl BlockKind {
    pub const ALL: [BlockKind; 4] = [BlockKind::X, BlockKind::Y, BlockKind::Z, BlockKind::W];

    pub fn name(self) -> &'static str {
        match self {
            BlockKind::X => "X",
            BlockKind::Y => "Y",
            BlockKind::Z => "Z",
            BlockKind::W => "W",
        }
    }
}

impl JacobianBlocks {
    pub fn sites(&self) -> &SiteSet {
        &self.sites
    }

    pub fn seeds(&self) -> &SiteSet {
        &self.seeds
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn rows(&self) -> usize {
        2 * self.sites.len() * self.dim
    }

    /// Entry `∂(row)/∂(col)` of the tangent at time index `n`.
    fn entry(&self, n: usize, row: usize, col: usize) -> f64 {
        self.data[n][col * self.rows() + row]
    }

    /// The `d×d` block of `kind` for `(k, j)` at time index `n`; `None` if `k ∉ Λ`
    /// or `j ∉ J`.
    pub fn block(&self, n: usize, kind: BlockKind, k: SiteId, j: SiteId) -> Option<DMatrix<f64>> {
        let (ik, ij) = (self.sites.position(k)?, self.seeds.position(j)?);
        let (d, nd, nj) = (self.dim, self.sites.len() * self.dim, self.seeds.len() * self.dim);
        let (row0, col0) = match kind {
            BlockKind::X => (ik * d, ij * d),
            BlockKind::Y => (nd + ik * d, ij * d),
            BlockKind::Z => (ik * d, nj + ij * d),
            BlockKind::W => (nd + ik * d, nj + ij * d),
        };
        Some(DMatrix::from_fn(d, d, |a, b| self.entry(n, row0 + a, col0 + b)))
    }

    /// The whole tangent matrix at time index `n`.
    pub fn matrix(&self, n: usize) -> DMatrix<f64> {
        let cols = 2 * self.seeds.len() * self.dim;
        DMatrix::from_column_slice(self.rows(), cols, &self.data[n])
    }

    /// The full Jacobian `[[X, Z], [Y, W]]` at time index `n`; needs `J = Λ`.
    pub fn full_matrix(&self, n: usize) -> Result<DMatrix<f64>> {
        if self.seeds != self.sites {
            return Err(LabError::Unsupported(
                "the full Jacobian needs every site of the region as a seed".into(),
            ));
        }
        Ok(self.matrix(n))
    }

    /// CSV rows `t,site,component,value`; the component `X:j3:a0:b1` is entry
    /// `(0, 1)` of `X_{site,3}`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,site,component,value")?;
        for (n, t) in self.times.iter().enumerate() {
            for k in self.sites.iter() {
                for j in self.seeds.iter() {
                    for kind in BlockKind::ALL {
                        let b = self.block(n, kind, k, j).unwrap();
                        for a in 0..self.dim {
                            for c in 0..self.dim {
                                writeln!(w, "{t},{k},{}:j{j}:a{a}:b{c},{}", kind.name(), b[(a, c)])?;
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn identity_tangent(sys: &LocalSystem, seeds: &SiteSet) -> Vec<f64> {
    let (d, nd) = (sys.dim, sys.nd());
    let n2 = 2 * nd;
    let nj = seeds.len() * d;
    let mut t = vec![0.0; 2 * nj * n2];
    for (jpos, j) in seeds.iter().enumerate() {
        let i = sys.sites.position(j).unwrap();
        for c in 0..d {
            let qcol = jpos * d + c;
            let pcol = nj + jpos * d + c;
            t[qcol * n2 + i * d + c] = 1.0;
            t[pcol * n2 + nd + i * d + c] = 1.0;
        }
    }
    t
}

fn tangent_setup<'a>(model: &'a LatticeModel, region: &SiteSet, seeds: &SiteSet) -> Result<LocalSystem<'a>> {
    if !seeds.is_subset(region) {
        return Err(LabError::domain(format!("seed set {seeds} is not contained in the region {region}")));
    }
    if seeds.is_empty() {
        return Err(LabError::domain("seed set must be nonempty"));
    }
    LocalSystem::new(model, region)
}

/// Co-integrates the flow and the Jacobian columns seeded at `J`, recording every
/// node through `horizon`.
pub fn integrate_variational(
    model: &LatticeModel,
    region: &SiteSet,
    s0: &PhaseState,
    seeds: &SiteSet,
    horizon: f64,
    opts: &FlowOptions,
) -> Result<(Trajectory, JacobianBlocks)> {
    let sys = tangent_setup(model, region, seeds)?;
    let ncols = 2 * seeds.len() * sys.dim;
    let n2 = 2 * sys.nd();
    let mut z = sys.pack(s0);
    z.extend(identity_tangent(&sys, seeds));
    let mut traj = Trajectory {
        integrator: opts.integrator,
        times: vec![0.0],
        states: vec![sys.unpack(&z[..n2])],
        energies: vec![sys.energy(&z[..n2])],
    };
    let mut blocks = JacobianBlocks {
        sites: region.clone(),
        seeds: seeds.clone(),
        dim: sys.dim,
        times: vec![0.0],
        data: vec![z[n2..].to_vec()],
    };
    if horizon != 0.0 {
        evolve(&sys, &mut z, ncols, 0.0, &[horizon], opts, true, |t, z, _| {
            traj.times.push(t);
            traj.states.push(sys.unpack(&z[..n2]));
            traj.energies.push(sys.energy(&z[..n2]));
            blocks.times.push(t);
            blocks.data.push(z[n2..].to_vec());
        })?;
    }
    Ok((traj, blocks))
}

/// States and Jacobian blocks at each requested time only.
pub fn variational_at_times(
    model: &LatticeModel,
    region: &SiteSet,
    s0: &PhaseState,
    seeds: &SiteSet,
    times: &[f64],
    opts: &FlowOptions,
) -> Result<(Vec<PhaseState>, JacobianBlocks)> {
    let sys = tangent_setup(model, region, seeds)?;
    let ncols = 2 * seeds.len() * sys.dim;
    let n2 = 2 * sys.nd();
    let (fwd, bwd) = split_times(times)?;
    let mut states = vec![None; times.len()];
    let mut data = vec![Vec::new(); times.len()];
    for run in [fwd, bwd] {
        let mut z = sys.pack(s0);
        z.extend(identity_tangent(&sys, seeds));
        let targets: Vec<f64> = run.iter().map(|x| x.1).collect();
        let mut slot = 0;
        evolve(&sys, &mut z, ncols, 0.0, &targets, opts, false, |_, z, _| {
            let idx = run[slot].0;
            states[idx] = Some(sys.unpack(&z[..n2]));
            data[idx] = z[n2..].to_vec();
            slot += 1;
        })?;
    }
    let blocks = JacobianBlocks { sites: region.clone(), seeds: seeds.clone(), dim: sys.dim, times: times.to_vec(), data };
    Ok((states.into_iter().map(Option::unwrap).collect(), blocks))
}

/// Exact flow of the uncoupled oscillators `H⁰ = Σ ‖p_k‖²/2m_k + ν_k‖q_k‖²/2` on `Λ`.
pub fn harmonic_flow(model: &LatticeModel, region: &SiteSet, s0: &PhaseState, t: f64) -> PhaseState {
    let d = model.dim();
    let mut out = s0.on_sites(region);
    for (i, k) in region.iter().enumerate() {
        let (m, nu) = (model.mass(k), model.force_constant(k));
        let omega = (nu / m).sqrt();
        let (sin, cos) = (omega * t).sin_cos();
        for c in 0..d {
            let idx = i * d + c;
            let (p0, q0) = (out.p_flat()[idx], out.q_flat()[idx]);
            out.q_flat_mut()[idx] = cos * q0 + sin * p0 / (m * omega);
            out.p_flat_mut()[idx] = -m * omega * sin * q0 + cos * p0;
        }
    }
    out
}

/// `‖MᵀΩM − Ω‖_max` for the full Jacobian `M` at time index `n`, with
/// `Ω = [[0, I], [−I, 0]]` in `(q, p)` order.
pub fn symplectic_defect(blocks: &JacobianBlocks, n: usize) -> Result<f64> {
    let m = blocks.full_matrix(n)?;
    let half = m.nrows() / 2;
    let mut omega = DMatrix::zeros(2 * half, 2 * half);
    for i in 0..half {
        omega[(i, half + i)] = 1.0;
        omega[(half + i, i)] = -1.0;
    }
    Ok((m.transpose() * &omega * &m - omega).amax())
}

/// Determinant of the full Jacobian at time index `n` (1 by Liouville's theorem).
pub fn jacobian_determinant(blocks: &JacobianBlocks, n: usize) -> Result<f64> {
    Ok(blocks.full_matrix(n)?.determinant())
}
