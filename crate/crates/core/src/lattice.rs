//! Site geometry: lattices with a metric, decay functions on distances, and the
//! geometry-derived constants (`‖F‖`, the convolution constant, `D(X, Y)`).
//!
//! Every supremum over the (conceptually infinite) lattice is evaluated exactly
//! on the finite site set passed in. Callers that want to know how far a value is
//! from its infinite-volume limit compare two nested truncations.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub type SiteId = usize;

/// A sorted set of site identifiers.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SiteSet(Vec<SiteId>);

impl SiteSet {
    pub fn new(sites: impl IntoIterator<Item = SiteId>) -> Self {
        let mut v: Vec<SiteId> = sites.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        SiteSet(v)
    }

    pub fn single(site: SiteId) -> Self {
        SiteSet(vec![site])
    }

    pub fn range(range: std::ops::Range<SiteId>) -> Self {
        SiteSet(range.collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[SiteId] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = SiteId> + '_ {
        self.0.iter().copied()
    }

    pub fn contains(&self, site: SiteId) -> bool {
        self.0.binary_search(&site).is_ok()
    }

    /// Position of `site` in the sorted member list.
    pub fn position(&self, site: SiteId) -> Option<usize> {
        self.0.binary_search(&site).ok()
    }

    pub fn is_subset(&self, other: &SiteSet) -> bool {
        self.iter().all(|s| other.contains(s))
    }

    pub fn is_disjoint(&self, other: &SiteSet) -> bool {
        self.iter().all(|s| !other.contains(s))
    }

    pub fn union(&self, other: &SiteSet) -> SiteSet {
        SiteSet::new(self.iter().chain(other.iter()))
    }

    pub fn difference(&self, other: &SiteSet) -> SiteSet {
        SiteSet(self.iter().filter(|s| !other.contains(*s)).collect())
    }

    fn require_nonempty(&self, what: &str) -> Result<()> {
        if self.is_empty() {
            Err(LabError::domain(format!("{what} must be a nonempty site set")))
        } else {
            Ok(())
        }
    }
}

impl fmt::Display for SiteSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, s) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{s}")?;
        }
        write!(f, "}}")
    }
}

impl FromIterator<SiteId> for SiteSet {
    fn from_iter<I: IntoIterator<Item = SiteId>>(iter: I) -> Self {
        SiteSet::new(iter)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatticeKind {
    Chain,
    Grid,
    Coordinates,
}

/// A finite set of sites embedded in `ℝ^ℓ` with the induced Euclidean metric.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Lattice {
    kind: LatticeKind,
    embedding_dim: usize,
    coords: Vec<Vec<f64>>,
}

impl Lattice {
    /// Sites `0..n` at integer positions on a line.
    pub fn chain(n: usize) -> Self {
        Lattice {
            kind: LatticeKind::Chain,
            embedding_dim: 1,
            coords: (0..n).map(|i| vec![i as f64]).collect(),
        }
    }

    /// An `nx × ny` square grid; site `i * ny + j` sits at `(i, j)`.
    pub fn grid(nx: usize, ny: usize) -> Self {
        let coords = (0..nx)
            .flat_map(|i| (0..ny).map(move |j| vec![i as f64, j as f64]))
            .collect();
        Lattice {
            kind: LatticeKind::Grid,
            embedding_dim: 2,
            coords,
        }
    }

    pub fn from_coords(coords: Vec<Vec<f64>>) -> Result<Self> {
        let dim = coords
            .first()
            .map(Vec::len)
            .ok_or_else(|| LabError::domain("coordinate lattice needs at least one site"))?;
        if dim == 0 {
            return Err(LabError::domain("coordinates must have positive dimension"));
        }
        if coords.iter().any(|c| c.len() != dim) {
            return Err(LabError::domain("all coordinates must share one dimension"));
        }
        if coords.iter().flatten().any(|x| !x.is_finite()) {
            return Err(LabError::domain("coordinates must be finite"));
        }
        Ok(Lattice {
            kind: LatticeKind::Coordinates,
            embedding_dim: dim,
            coords,
        })
    }

    /// Uniform random points in `[0, extent]^dim`, resampled until every pair is at
    /// least `min_separation` apart. Deterministic in `seed`.
    pub fn random_coords(
        count: usize,
        dim: usize,
        extent: f64,
        min_separation: f64,
        seed: u64,
    ) -> Result<Self> {
        if count == 0 || dim == 0 || !(extent > 0.0) {
            return Err(LabError::domain(
                "random lattice needs count > 0, dim > 0 and extent > 0",
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut coords: Vec<Vec<f64>> = Vec::with_capacity(count);
        let mut attempts = 0usize;
        while coords.len() < count {
            attempts += 1;
            if attempts > 1000 * count {
                return Err(LabError::domain(format!(
                    "could not place {count} points with separation {min_separation} in extent {extent}"
                )));
            }
            let p: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() * extent).collect();
            if coords.iter().all(|c| euclid(c, &p) >= min_separation) {
                coords.push(p);
            }
        }
        let mut lat = Lattice::from_coords(coords)?;
        lat.kind = LatticeKind::Coordinates;
        Ok(lat)
    }

    pub fn kind(&self) -> LatticeKind {
        self.kind
    }

    /// Dimension `ℓ` of the embedding space.
    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn sites(&self) -> SiteSet {
        SiteSet::range(0..self.len())
    }

    pub fn coords(&self, site: SiteId) -> &[f64] {
        &self.coords[site]
    }

    pub fn contains(&self, site: SiteId) -> bool {
        site < self.len()
    }

    pub fn check_sites(&self, set: &SiteSet) -> Result<()> {
        match set.iter().find(|&s| !self.contains(s)) {
            Some(s) => Err(LabError::domain(format!(
                "site {s} is not part of the lattice (size {})",
                self.len()
            ))),
            None => Ok(()),
        }
    }

    pub fn distance(&self, x: SiteId, y: SiteId) -> f64 {
        euclid(&self.coords[x], &self.coords[y])
    }

    /// All sites within distance `radius` of some site of `center`.
    pub fn ball(&self, center: &SiteSet, radius: f64) -> SiteSet {
        (0..self.len())
            .filter(|&x| center.iter().any(|c| self.distance(x, c) <= radius + 1e-12))
            .collect()
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecayFamily {
    PowerLaw,
    ExponentialPowerLaw,
    Tabulated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum DecayProfile {
    /// `(1 + r)^(-exponent)`
    PowerLaw { exponent: f64 },
    /// Piecewise-linear interpolation, held constant past the last node.
    Tabulated { radii: Vec<f64>, values: Vec<f64> },
}

/// A normalized non-increasing weight `F: [0, ∞) → (0, 1]`, optionally multiplied
/// by `e^{-rate·r}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFunction {
    profile: DecayProfile,
    rate: f64,
}

impl DecayFunction {
    pub fn power_law(exponent: f64) -> Result<Self> {
        Self::exponential_power_law(exponent, 0.0)
    }

    /// `e^{-rate·r} (1 + r)^(-exponent)`.
    pub fn exponential_power_law(exponent: f64, rate: f64) -> Result<Self> {
        if !(exponent >= 0.0) || !exponent.is_finite() {
            return Err(LabError::domain("decay exponent must be finite and >= 0"));
        }
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(LabError::domain("decay rate must be finite and >= 0"));
        }
        Ok(DecayFunction {
            profile: DecayProfile::PowerLaw { exponent },
            rate,
        })
    }

    /// The default weight for an `ℓ`-dimensional embedding: `(1 + r)^{-(ℓ+1)}`,
    /// times `e^{-μ r}` when `mu > 0`.
    pub fn default_for_dim(embedding_dim: usize, mu: f64) -> Result<Self> {
        Self::exponential_power_law(embedding_dim as f64 + 1.0, mu)
    }

    /// Tabulated profile through `(radii[i], values[i])`. Radii must start at 0 and
    /// increase; values must start at 1, stay positive, and never increase.
    pub fn tabulated(radii: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if radii.is_empty() || radii.len() != values.len() {
            return Err(LabError::domain(
                "tabulated decay needs matching nonempty radii and values",
            ));
        }
        if radii[0] != 0.0 || values[0] != 1.0 {
            return Err(LabError::domain("tabulated decay must satisfy F(0) = 1"));
        }
        if radii.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(LabError::domain("tabulated radii must be strictly increasing"));
        }
        if values.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) {
            return Err(LabError::domain("tabulated values must lie in (0, 1]"));
        }
        if values.windows(2).any(|w| w[1] > w[0]) {
            return Err(LabError::domain("tabulated values must be non-increasing"));
        }
        Ok(DecayFunction {
            profile: DecayProfile::Tabulated { radii, values },
            rate: 0.0,
        })
    }

    pub fn family(&self) -> DecayFamily {
        match self.profile {
            DecayProfile::Tabulated { .. } => DecayFamily::Tabulated,
            DecayProfile::PowerLaw { .. } if self.rate > 0.0 => DecayFamily::ExponentialPowerLaw,
            DecayProfile::PowerLaw { .. } => DecayFamily::PowerLaw,
        }
    }

    /// Exponential rate `μ` currently applied on top of the base profile.
    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn exponent(&self) -> Option<f64> {
        match self.profile {
            DecayProfile::PowerLaw { exponent } => Some(exponent),
            DecayProfile::Tabulated { .. } => None,
        }
    }

    pub fn eval(&self, r: f64) -> f64 {
        debug_assert!(r >= 0.0);
        let base = match &self.profile {
            DecayProfile::PowerLaw { exponent } => (1.0 + r).powf(-exponent),
            DecayProfile::Tabulated { radii, values } => interpolate(radii, values, r),
        };
        if self.rate == 0.0 {
            base
        } else {
            (-self.rate * r).exp() * base
        }
    }

    /// `F_μ(r) = e^{-μ r} F(r)`.
    pub fn weighted(&self, mu: f64) -> Result<Self> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(LabError::domain(format!(
                "weight rate must be positive and finite, got {mu}"
            )));
        }
        Ok(DecayFunction {
            profile: self.profile.clone(),
            rate: self.rate + mu,
        })
    }
}

fn interpolate(radii: &[f64], values: &[f64], r: f64) -> f64 {
    let last = radii.len() - 1;
    if r >= radii[last] {
        return values[last];
    }
    // first node strictly greater than r
    let hi = radii.partition_point(|&x| x <= r);
    let lo = hi - 1;
    let w = (r - radii[lo]) / (radii[hi] - radii[lo]);
    values[lo] + w * (values[hi] - values[lo])
}

/// `F_μ = e^{-μ r} F`; see [`DecayFunction::weighted`].
pub fn weight_decay(decay: &DecayFunction, mu: f64) -> Result<DecayFunction> {
    decay.weighted(mu)
}

/// `max_{y∈Λ} Σ_{x∈Λ} F(d(x, y))`: the truncation value of `‖F‖`.
pub fn norm_f(lat: &Lattice, decay: &DecayFunction, region: &SiteSet) -> Result<f64> {
    region.require_nonempty("Λ")?;
    lat.check_sites(region)?;
    Ok(region
        .iter()
        .map(|y| region.iter().map(|x| decay.eval(lat.distance(x, y))).sum::<f64>())
        .fold(0.0, f64::max))
}

/// The tightest convolution constant valid on `Λ`:
/// `max_{x,y∈Λ} Σ_{z∈Λ} F(d(x,z)) F(d(z,y)) / F(d(x,y))`.
pub fn convolution_constant(lat: &Lattice, decay: &DecayFunction, region: &SiteSet) -> Result<f64> {
    region.require_nonempty("Λ")?;
    lat.check_sites(region)?;
    let sites = region.as_slice();
    let n = sites.len();
    let mut table = vec![0.0; n * n];
    for (a, &x) in sites.iter().enumerate() {
        for (b, &y) in sites.iter().enumerate() {
            table[a * n + b] = decay.eval(lat.distance(x, y));
        }
    }
    let mut best = 0.0f64;
    for a in 0..n {
        for b in a..n {
            let conv: f64 = (0..n).map(|c| table[a * n + c] * table[c * n + b]).sum();
            best = best.max(conv / table[a * n + b]);
        }
    }
    Ok(best)
}

/// `D(X, Y) = Σ_{x∈X} Σ_{y∈Y} F(d(x, y))`.
pub fn interaction_weight(lat: &Lattice, decay: &DecayFunction, x: &SiteSet, y: &SiteSet) -> Result<f64> {
    x.require_nonempty("X")?;
    y.require_nonempty("Y")?;
    lat.check_sites(x)?;
    lat.check_sites(y)?;
    Ok(x
        .iter()
        .map(|a| y.iter().map(|b| decay.eval(lat.distance(a, b))).sum::<f64>())
        .sum())
}

/// `min_{x∈X, y∈Y} d(x, y)`.
pub fn dist_sets(lat: &Lattice, x: &SiteSet, y: &SiteSet) -> Result<f64> {
    x.require_nonempty("X")?;
    y.require_nonempty("Y")?;
    lat.check_sites(x)?;
    lat.check_sites(y)?;
    Ok(x
        .iter()
        .flat_map(|a| y.iter().map(move |b| (a, b)))
        .map(|(a, b)| lat.distance(a, b))
        .fold(f64::INFINITY, f64::min))
}
