//! The lattice Hamiltonian: masses, on-site force constants and pair potentials,
//! with energy, force field, Hessian blocks and the standing-assumption checks.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::lattice::{DecayFunction, Lattice, SiteId, SiteSet};
use crate::potential::{DerivativeCertificate, PairPotential, PotentialShape};

/// Default order up to which pair-potential derivative bounds are certified.
pub const DEFAULT_CERT_ORDER: usize = 4;

/// Unordered site pair, stored as `(min, max)`.
pub type PairKey = (SiteId, SiteId);

fn pair_key(k: SiteId, l: SiteId) -> PairKey {
    (k.min(l), k.max(l))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LatticeModel {
    lattice: Lattice,
    decay: DecayFunction,
    dim: usize,
    masses: Vec<f64>,
    force_constants: Vec<f64>,
    pairs: BTreeMap<PairKey, PairPotential>,
    /// `None` for potentials that cannot be certified (non-smooth shapes).
    certificates: BTreeMap<PairKey, Option<DerivativeCertificate>>,
    r_cut: f64,
    cert_order: usize,
    /// `neighbors[k]` lists every `l ≠ k` coupled to `k`.
    neighbors: Vec<Vec<SiteId>>,
}

/// Builds a [`LatticeModel`] coupling every pair within `r_cut` through
/// `c_kl = a · F(d(k, l))` times a unit-amplitude pair potential.
#[derive(Clone, Debug)]
pub struct ModelBuilder {
    lattice: Lattice,
    decay: DecayFunction,
    dim: usize,
    masses: Vec<f64>,
    force_constants: Vec<f64>,
    shape: PotentialShape,
    amplitude: f64,
    support_radius: f64,
    r_cut: f64,
    cert_order: usize,
}

impl ModelBuilder {
    pub fn masses(mut self, masses: Vec<f64>) -> Self {
        self.masses = masses;
        self
    }

    pub fn force_constants(mut self, nu: Vec<f64>) -> Self {
        self.force_constants = nu;
        self
    }

    /// Pair-potential family, global strength `a` and support radius `R`.
    pub fn potential(mut self, shape: PotentialShape, amplitude: f64, support_radius: f64) -> Self {
        self.shape = shape;
        self.amplitude = amplitude;
        self.support_radius = support_radius;
        self
    }

    pub fn r_cut(mut self, r_cut: f64) -> Self {
        self.r_cut = r_cut;
        self
    }

    pub fn cert_order(mut self, order: usize) -> Self {
        self.cert_order = order;
        self
    }

    pub fn build(self) -> Result<LatticeModel> {
        let n = self.lattice.len();
        if self.dim == 0 {
            return Err(LabError::domain("particle dimension d must be positive"));
        }
        if self.masses.len() != n || self.force_constants.len() != n {
            return Err(LabError::domain(format!(
                "expected {n} masses and force constants, got {} and {}",
                self.masses.len(),
                self.force_constants.len()
            )));
        }
        if self.masses.iter().chain(&self.force_constants).any(|v| !v.is_finite()) {
            return Err(LabError::domain("masses and force constants must be finite"));
        }
        if !(self.r_cut >= 0.0) {
            return Err(LabError::domain("r_cut must be nonnegative"));
        }
        let mut model = LatticeModel {
            neighbors: vec![Vec::new(); n],
            lattice: self.lattice,
            decay: self.decay,
            dim: self.dim,
            masses: self.masses,
            force_constants: self.force_constants,
            pairs: BTreeMap::new(),
            certificates: BTreeMap::new(),
            r_cut: self.r_cut,
            cert_order: self.cert_order,
        };
        if self.shape == PotentialShape::Zero || self.amplitude == 0.0 {
            return Ok(model);
        }
        let unit = PairPotential::new(self.shape, 1.0, self.support_radius, self.dim)?;
        let unit_cert = match unit.certify(self.cert_order) {
            Ok(c) => Some(c),
            Err(LabError::Unsupported(_)) => None,
            Err(e) => return Err(e),
        };
        for k in 0..n {
            for l in k + 1..n {
                let dist = model.lattice.distance(k, l);
                if dist > self.r_cut {
                    continue;
                }
                let c = self.amplitude * model.decay.eval(dist);
                let cert = unit_cert.as_ref().map(|u| u.scaled(c));
                model.insert_with_certificate(k, l, unit.scaled(c), cert);
            }
        }
        Ok(model)
    }
}

impl LatticeModel {
    pub fn builder(lattice: Lattice, decay: DecayFunction, dim: usize) -> ModelBuilder {
        let n = lattice.len();
        ModelBuilder {
            lattice,
            decay,
            dim,
            masses: vec![1.0; n],
            force_constants: vec![1.0; n],
            shape: PotentialShape::Zero,
            amplitude: 0.0,
            support_radius: 1.0,
            r_cut: 0.0,
            cert_order: DEFAULT_CERT_ORDER,
        }
    }

    /// Adds or replaces the potential on `{k, l}`, certifying it on the spot.
    /// `k == l` is accepted so that invalid models can be represented and reported.
    pub fn insert_pair(&mut self, k: SiteId, l: SiteId, v: PairPotential) -> Result<()> {
        if !self.lattice.contains(k) || !self.lattice.contains(l) {
            return Err(LabError::domain(format!("pair ({k}, {l}) is outside the lattice")));
        }
        if v.dim != self.dim {
            return Err(LabError::domain("potential dimension differs from the model's"));
        }
        let cert = match v.certify(self.cert_order) {
            Ok(c) => Some(c),
            Err(LabError::Unsupported(_)) => None,
            Err(e) => return Err(e),
        };
        self.insert_with_certificate(k, l, v, cert);
        Ok(())
    }

    fn insert_with_certificate(&mut self, k: SiteId, l: SiteId, v: PairPotential, cert: Option<DerivativeCertificate>) {
        let key = pair_key(k, l);
        if self.pairs.insert(key, v).is_none() && k != l {
            self.neighbors[k].push(l);
            self.neighbors[l].push(k);
            self.neighbors[k].sort_unstable();
            self.neighbors[l].sort_unstable();
        }
        self.certificates.insert(key, cert);
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn decay(&self) -> &DecayFunction {
        &self.decay
    }

    /// Particle dimension `d`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mass(&self, k: SiteId) -> f64 {
        self.masses[k]
    }

    pub fn force_constant(&self, k: SiteId) -> f64 {
        self.force_constants[k]
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn force_constants(&self) -> &[f64] {
        &self.force_constants
    }

    pub fn r_cut(&self) -> f64 {
        self.r_cut
    }

    pub fn cert_order(&self) -> usize {
        self.cert_order
    }

    pub fn potential(&self, k: SiteId, l: SiteId) -> Option<&PairPotential> {
        self.pairs.get(&pair_key(k, l))
    }

    pub fn certificate(&self, k: SiteId, l: SiteId) -> Option<&DerivativeCertificate> {
        self.certificates.get(&pair_key(k, l)).and_then(Option::as_ref)
    }

    pub fn pairs(&self) -> impl Iterator<Item = (PairKey, &PairPotential)> {
        self.pairs.iter().map(|(k, v)| (*k, v))
    }

    pub fn neighbors(&self, k: SiteId) -> &[SiteId] {
        &self.neighbors[k]
    }

    pub fn is_interaction_free(&self) -> bool {
        self.pairs.values().all(PairPotential::is_zero)
    }

    /// Stored pairs with both ends in `region`, self pairs included.
    pub fn pairs_within<'a>(&'a self, region: &'a SiteSet) -> impl Iterator<Item = (PairKey, &'a PairPotential)> + 'a {
        self.pairs
            .iter()
            .filter(move |((k, l), _)| region.contains(*k) && region.contains(*l))
            .map(|(k, v)| (*k, v))
    }

    fn check_region(&self, region: &SiteSet) -> Result<()> {
        self.lattice.check_sites(region)
    }

    fn check_state(&self, s: &PhaseState) -> Result<()> {
        if s.dim != self.dim {
            return Err(LabError::domain(format!(
                "state has dimension {}, model has {}",
                s.dim, self.dim
            )));
        }
        self.lattice.check_sites(&s.sites)
    }
}

/// A point `(p, q)` of `Ω_Λ`. Blocks are stored per site in the sorted order of
/// `sites`; sites outside `sites` read as zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    sites: SiteSet,
    dim: usize,
    p: Vec<f64>,
    q: Vec<f64>,
}

impl PhaseState {
    pub fn zeros(sites: SiteSet, dim: usize) -> Self {
        let n = sites.len() * dim;
        PhaseState { sites, dim, p: vec![0.0; n], q: vec![0.0; n] }
    }

    /// `p` and `q` are flattened site-major in the sorted order of `sites`.
    pub fn from_parts(sites: SiteSet, dim: usize, p: Vec<f64>, q: Vec<f64>) -> Result<Self> {
        let n = sites.len() * dim;
        if p.len() != n || q.len() != n {
            return Err(LabError::domain(format!(
                "state on {} sites in dimension {dim} needs {n} entries per part",
                sites.len()
            )));
        }
        if p.iter().chain(&q).any(|v| !v.is_finite()) {
            return Err(LabError::domain("state entries must be finite"));
        }
        Ok(PhaseState { sites, dim, p, q })
    }

    pub fn sites(&self) -> &SiteSet {
        &self.sites
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn p_flat(&self) -> &[f64] {
        &self.p
    }

    pub fn q_flat(&self) -> &[f64] {
        &self.q
    }

    pub fn p_flat_mut(&mut self) -> &mut [f64] {
        &mut self.p
    }

    pub fn q_flat_mut(&mut self) -> &mut [f64] {
        &mut self.q
    }

    fn block(&self, site: SiteId) -> Option<std::ops::Range<usize>> {
        self.sites.position(site).map(|i| i * self.dim..(i + 1) * self.dim)
    }

    pub fn p(&self, site: SiteId) -> Option<&[f64]> {
        self.block(site).map(|r| &self.p[r])
    }

    pub fn q(&self, site: SiteId) -> Option<&[f64]> {
        self.block(site).map(|r| &self.q[r])
    }

    pub fn p_mut(&mut self, site: SiteId) -> Option<&mut [f64]> {
        self.block(site).map(move |r| &mut self.p[r])
    }

    pub fn q_mut(&mut self, site: SiteId) -> Option<&mut [f64]> {
        self.block(site).map(move |r| &mut self.q[r])
    }

    /// Copies `p_k`, `q_k` into the given buffers, or zeros if `site` is absent.
    pub fn read_site(&self, site: SiteId, p: &mut [f64], q: &mut [f64]) {
        match self.block(site) {
            Some(r) => {
                p.copy_from_slice(&self.p[r.clone()]);
                q.copy_from_slice(&self.q[r]);
            }
            None => {
                p.fill(0.0);
                q.fill(0.0);
            }
        }
    }

    /// The state on `sites`, reading absent sites as zero and dropping the rest.
    pub fn on_sites(&self, sites: &SiteSet) -> PhaseState {
        let mut out = PhaseState::zeros(sites.clone(), self.dim);
        for (i, s) in sites.iter().enumerate() {
            let r = i * self.dim..(i + 1) * self.dim;
            let (pb, qb) = (&mut out.p[r.clone()], &mut out.q[r]);
            self.read_site(s, pb, qb);
        }
        out
    }

    pub fn scaled(&self, a: f64) -> PhaseState {
        PhaseState {
            sites: self.sites.clone(),
            dim: self.dim,
            p: self.p.iter().map(|v| a * v).collect(),
            q: self.q.iter().map(|v| a * v).collect(),
        }
    }

    /// Max-norm distance to `other`, both read on the union of their sites.
    pub fn max_abs_diff(&self, other: &PhaseState) -> f64 {
        let all = self.sites.union(&other.sites);
        let (a, b) = (self.on_sites(&all), other.on_sites(&all));
        a.p.iter()
            .zip(&b.p)
            .chain(a.q.iter().zip(&b.q))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    /// Euclidean norm of the full `(p, q)` vector.
    pub fn norm(&self) -> f64 {
        self.p.iter().chain(&self.q).map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl fmt::Display for PhaseState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PhaseState on {} (d = {}): p = {:?}, q = {:?}", self.sites, self.dim, self.p, self.q)
    }
}

fn diff(a: &[f64], b: &[f64], out: &mut [f64]) {
    for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
        *o = x - y;
    }
}

/// `H_Λ(s) = Σ_k (‖p_k‖²/2m_k + ν_k‖q_k‖²/2) + ½ Σ_{k,l∈Λ} V_kl(q_k − q_l)`.
pub fn hamiltonian(model: &LatticeModel, region: &SiteSet, s: &PhaseState) -> Result<f64> {
    model.check_region(region)?;
    model.check_state(s)?;
    let d = model.dim;
    let (mut p, mut q) = (vec![0.0; d], vec![0.0; d]);
    let mut energy = 0.0;
    for k in region.iter() {
        s.read_site(k, &mut p, &mut q);
        let p2: f64 = p.iter().map(|v| v * v).sum();
        let q2: f64 = q.iter().map(|v| v * v).sum();
        energy += p2 / (2.0 * model.mass(k)) + model.force_constant(k) * q2 / 2.0;
    }
    let (mut pk, mut qk, mut pl, mut ql, mut x) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    for ((k, l), v) in model.pairs_within(region) {
        s.read_site(k, &mut pk, &mut qk);
        s.read_site(l, &mut pl, &mut ql);
        diff(&qk, &ql, &mut x);
        // V_kl and V_lk contribute equally to the symmetric double sum.
        energy += if k == l { 0.5 } else { 1.0 } * v.value(&x);
    }
    Ok(energy)
}

/// Hamilton's equations on `Λ`: returns a state whose `p` part is `dp/dt` and `q`
/// part is `dq/dt`.
pub fn force_field(model: &LatticeModel, region: &SiteSet, s: &PhaseState) -> Result<PhaseState> {
    model.check_region(region)?;
    model.check_state(s)?;
    let d = model.dim;
    let local = s.on_sites(region);
    let mut out = PhaseState::zeros(region.clone(), d);
    for (i, k) in region.iter().enumerate() {
        let (m, nu) = (model.mass(k), model.force_constant(k));
        for c in 0..d {
            out.q[i * d + c] = local.p[i * d + c] / m;
            out.p[i * d + c] = -nu * local.q[i * d + c];
        }
    }
    let (mut x, mut g) = (vec![0.0; d], vec![0.0; d]);
    for ((k, l), v) in model.pairs_within(region) {
        if k == l {
            continue;
        }
        let (ik, il) = (region.position(k).unwrap(), region.position(l).unwrap());
        diff(&local.q[ik * d..(ik + 1) * d], &local.q[il * d..(il + 1) * d], &mut x);
        v.gradient_into(&x, &mut g);
        for c in 0..d {
            out.p[ik * d + c] -= g[c];
            out.p[il * d + c] += g[c];
        }
    }
    Ok(out)
}

/// Hessian of the potential energy in `q`, as `d×d` blocks keyed by `(k, j)`.
/// Only diagonal blocks and blocks of coupled pairs are present.
pub fn hessian_blocks(model: &LatticeModel, region: &SiteSet, s: &PhaseState) -> Result<BTreeMap<(SiteId, SiteId), DMatrix<f64>>> {
    model.check_region(region)?;
    model.check_state(s)?;
    let d = model.dim;
    let local = s.on_sites(region);
    let mut blocks = BTreeMap::new();
    for k in region.iter() {
        blocks.insert((k, k), DMatrix::identity(d, d) * model.force_constant(k));
    }
    let mut x = vec![0.0; d];
    for ((k, l), v) in model.pairs_within(region) {
        if k == l {
            continue;
        }
        let (ik, il) = (region.position(k).unwrap(), region.position(l).unwrap());
        diff(&local.q[ik * d..(ik + 1) * d], &local.q[il * d..(il + 1) * d], &mut x);
        let h = v.hessian(&x);
        *blocks.get_mut(&(k, k)).unwrap() += &h;
        *blocks.get_mut(&(l, l)).unwrap() += &h;
        blocks.insert((k, l), -h.clone());
        blocks.insert((l, k), -h);
    }
    Ok(blocks)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Outcome of checking the model's standing assumptions on a region, with the
/// constants that witness them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
    pub inv_mass_inf: f64,
    pub inv_mass_sup: f64,
    pub nu_inf: f64,
    pub nu_sup: f64,
    /// Shared derivative-bound rate, certified through order 2.
    pub c_v: f64,
    /// Shared derivative-bound rate through the highest certified order.
    pub c_v_all_orders: f64,
    pub certified_order: usize,
    /// `‖Ψ‖ = max C_kl / F(d(k, l))` over coupled pairs in the region.
    pub psi_norm: f64,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<String> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect()
    }

    pub fn check(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for AssumptionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "  [{}] {:<32} {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail)?;
        }
        write!(
            f,
            "  1/m in [{:.6e}, {:.6e}], nu in [{:.6e}, {:.6e}], C_V = {:.6e}, |Psi| = {:.6e}",
            self.inv_mass_inf, self.inv_mass_sup, self.nu_inf, self.nu_sup, self.c_v, self.psi_norm
        )
    }
}

pub fn validate_assumptions(model: &LatticeModel, region: &SiteSet) -> AssumptionReport {
    let mut checks = Vec::new();
    let mut push = |name: &str, passed: bool, detail: String| {
        checks.push(AssumptionCheck { name: name.to_string(), passed, detail });
    };

    let in_lattice = model.lattice.check_sites(region).is_ok() && !region.is_empty();
    push(
        "region",
        in_lattice,
        if in_lattice {
            format!("{} sites", region.len())
        } else {
            "region must be a nonempty subset of the lattice".to_string()
        },
    );
    let sites: Vec<SiteId> = region.iter().filter(|&k| model.lattice.contains(k)).collect();

    let pairs: Vec<(PairKey, &PairPotential)> = model.pairs_within(region).collect();
    let self_pairs: Vec<SiteId> = pairs.iter().filter(|((k, l), v)| k == l && !v.is_zero()).map(|((k, _), _)| *k).collect();
    let odd = pairs.iter().filter(|(_, v)| !v.is_even()).count();
    push(
        "pair-symmetry",
        self_pairs.is_empty() && odd == 0,
        if !self_pairs.is_empty() {
            format!("self-interaction V_kk present at sites {self_pairs:?}")
        } else if odd > 0 {
            format!("{odd} pair potentials are not even")
        } else {
            format!("{} pairs, all even, no self-interaction", pairs.len())
        },
    );

    let rough: Vec<PairKey> = pairs.iter().filter(|(_, v)| !v.shape.is_smooth() && !v.is_zero()).map(|(k, _)| *k).collect();
    push(
        "smooth-compact-support",
        rough.is_empty(),
        if rough.is_empty() {
            "all pair potentials are smooth with compact support".to_string()
        } else {
            format!("non-smooth potentials on pairs {rough:?}")
        },
    );

    let mut c_v = 0.0f64;
    let mut c_v_all = 0.0f64;
    let mut psi = 0.0f64;
    let mut uncertified = Vec::new();
    for ((k, l), v) in &pairs {
        if v.is_zero() {
            continue;
        }
        match model.certificate(*k, *l) {
            Some(cert) if cert.c_kl.is_finite() && cert.c_v.is_finite() => {
                c_v = c_v.max(cert.c_v_order2);
                c_v_all = c_v_all.max(cert.c_v);
                let f = model.decay.eval(model.lattice.distance(*k, *l));
                psi = psi.max(cert.c_kl / f);
            }
            _ => uncertified.push((*k, *l)),
        }
    }
    push(
        "derivative-bounds",
        uncertified.is_empty(),
        if uncertified.is_empty() {
            format!(
                "C_V = {c_v:.6e} (orders <= 2), {c_v_all:.6e} (orders <= {})",
                model.cert_order
            )
        } else {
            format!("no derivative-bound certificate for pairs {uncertified:?}")
        },
    );

    let masses: Vec<f64> = sites.iter().map(|&k| model.mass(k)).collect();
    let nus: Vec<f64> = sites.iter().map(|&k| model.force_constant(k)).collect();
    let inv: Vec<f64> = masses.iter().map(|m| 1.0 / m).collect();
    let fold_min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let fold_max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (inv_inf, inv_sup, nu_inf, nu_sup) = (fold_min(&inv), fold_max(&inv), fold_min(&nus), fold_max(&nus));
    let bad_mass: Vec<SiteId> = sites.iter().zip(&masses).filter(|(_, m)| !(**m > 0.0 && m.is_finite())).map(|(k, _)| *k).collect();
    let bad_nu: Vec<SiteId> = sites.iter().zip(&nus).filter(|(_, n)| !(**n > 0.0 && n.is_finite())).map(|(k, _)| *k).collect();
    push(
        "mass-force-bounds",
        bad_mass.is_empty() && bad_nu.is_empty() && !sites.is_empty(),
        if !bad_mass.is_empty() {
            format!("masses must be positive and finite; offending sites {bad_mass:?}")
        } else if !bad_nu.is_empty() {
            format!("force constants must be positive and finite; offending sites {bad_nu:?}")
        } else {
            format!("1/m in [{inv_inf:.6e}, {inv_sup:.6e}], nu in [{nu_inf:.6e}, {nu_sup:.6e}]")
        },
    );

    push(
        "interaction-decay-compatibility",
        psi.is_finite(),
        format!("|Psi| = max C_kl / F(d(k,l)) = {psi:.6e}"),
    );

    AssumptionReport {
        checks,
        inv_mass_inf: inv_inf,
        inv_mass_sup: inv_sup,
        nu_inf,
        nu_sup,
        c_v,
        c_v_all_orders: c_v_all,
        certified_order: model.cert_order,
        psi_norm: psi,
    }
}
