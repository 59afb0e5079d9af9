//! Experiment definitions in TOML: lattice, decay, model, observables, dynamics,
//! sampler, experiment selection and output. Parsing checks the schema; validation
//! then collects every semantic violation with the key path that caused it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bounds::default_mu_grid;
use crate::dynamics::{FlowOptions, Integrator};
use crate::error::{LabError, Result};
use crate::experiments::{forward_grid, symmetric_grid};
use crate::lattice::{DecayFunction, Lattice, SiteId, SiteSet};
use crate::model::LatticeModel;
use crate::observables::{Observable, ResolventPart, Variable};
use crate::potential::{PotentialShape, MAX_CERTIFIED_ORDER};
use crate::sampler::SamplerSpec;

pub const SCHEMA_VERSION: u32 = 1;

pub const PRESET_NAMES: [&str; 4] = ["harmonic-1site", "chain-8", "grid-5x5", "amorphous-32"];

const PRESETS: [(&str, &str); 4] = [
    ("harmonic-1site", include_str!("../presets/harmonic-1site.toml")),
    ("chain-8", include_str!("../presets/chain-8.toml")),
    ("grid-5x5", include_str!("../presets/grid-5x5.toml")),
    ("amorphous-32", include_str!("../presets/amorphous-32.toml")),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub lattice: LatticeSpec,
    #[serde(default)]
    pub decay: DecaySpec,
    pub model: ModelSpec,
    #[serde(default)]
    pub observables: ObservablesSpec,
    #[serde(default)]
    pub dynamics: DynamicsSpec,
    #[serde(default)]
    pub sampler: SamplerSpec,
    #[serde(default)]
    pub experiments: ExperimentsSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LatticeSpec {
    Chain { size: usize },
    Grid { nx: usize, ny: usize },
    /// Uniform random points in `[0, extent]^dim` with a minimum separation.
    Random { count: usize, dim: usize, extent: f64, min_separation: f64, seed: u64 },
}

impl LatticeSpec {
    fn site_count(&self) -> usize {
        match self {
            LatticeSpec::Chain { size } => *size,
            LatticeSpec::Grid { nx, ny } => nx * ny,
            LatticeSpec::Random { count, .. } => *count,
        }
    }

    fn embedding_dim(&self) -> usize {
        match self {
            LatticeSpec::Chain { .. } => 1,
            LatticeSpec::Grid { .. } => 2,
            LatticeSpec::Random { dim, .. } => *dim,
        }
    }

    pub fn build(&self) -> Result<Lattice> {
        match self {
            LatticeSpec::Chain { size } => Ok(Lattice::chain(*size)),
            LatticeSpec::Grid { nx, ny } => Ok(Lattice::grid(*nx, *ny)),
            LatticeSpec::Random { count, dim, extent, min_separation, seed } => Lattice::random_coords(*count, *dim, *extent, *min_separation, *seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DecaySpec {
    /// `e^{−rate·r}(1 + r)^{−exponent}`; the exponent defaults to `ℓ + 1`.
    PowerLaw {
        #[serde(default)]
        exponent: Option<f64>,
        #[serde(default)]
        rate: f64,
    },
    Tabulated { radii: Vec<f64>, values: Vec<f64> },
}

impl Default for DecaySpec {
    fn default() -> Self {
        DecaySpec::PowerLaw { exponent: None, rate: 0.0 }
    }
}

impl DecaySpec {
    pub fn build(&self, embedding_dim: usize) -> Result<DecayFunction> {
        match self {
            DecaySpec::PowerLaw { exponent, rate } => {
                DecayFunction::exponential_power_law(exponent.unwrap_or(embedding_dim as f64 + 1.0), *rate)
            }
            DecaySpec::Tabulated { radii, values } => DecayFunction::tabulated(radii.clone(), values.clone()),
        }
    }
}

/// How a per-site quantity (mass or force constant) is assigned.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SiteLaw {
    Uniform { value: f64 },
    /// `values[k mod len]`
    Periodic { values: Vec<f64> },
    /// One value per site.
    List { values: Vec<f64> },
    /// Independent uniform draws in `[min, max]`.
    Random { min: f64, max: f64, seed: u64 },
}

impl Default for SiteLaw {
    fn default() -> Self {
        SiteLaw::Uniform { value: 1.0 }
    }
}

impl SiteLaw {
    pub fn values(&self, n: usize) -> Vec<f64> {
        use rand::{Rng, SeedableRng};
        match self {
            SiteLaw::Uniform { value } => vec![*value; n],
            SiteLaw::Periodic { values } => (0..n).map(|k| values[k % values.len()]).collect(),
            SiteLaw::List { values } => values.clone(),
            SiteLaw::Random { min, max, seed } => {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(*seed);
                (0..n).map(|_| min + (max - min) * rng.gen::<f64>()).collect()
            }
        }
    }

    /// `(index, value)` of every entry that is not finite and positive, or a
    /// description of a malformed law.
    fn violations(&self, n: usize, path: &str, what: &str, out: &mut Vec<String>) {
        let bad = |v: f64| !(v.is_finite() && v > 0.0);
        match self {
            SiteLaw::Uniform { value } if bad(*value) => out.push(format!("{path}.value: {what} must be positive, got {value}")),
            SiteLaw::Periodic { values } | SiteLaw::List { values } => {
                if values.is_empty() {
                    out.push(format!("{path}.values: must not be empty"));
                }
                if matches!(self, SiteLaw::List { .. }) && values.len() != n {
                    out.push(format!("{path}.values: expected {n} entries (one per site), got {}", values.len()));
                }
                for (i, v) in values.iter().enumerate() {
                    if bad(*v) {
                        out.push(format!("{path}.values[{i}]: {what} must be positive, got {v}"));
                    }
                }
            }
            SiteLaw::Random { min, max, .. } => {
                if bad(*min) {
                    out.push(format!("{path}.min: {what} must be positive, got {min}"));
                }
                if !(max >= min) || !max.is_finite() {
                    out.push(format!("{path}.max: must be finite and at least min, got {max}"));
                }
            }
            _ => {}
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    pub family: String,
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default = "one")]
    pub support_radius: f64,
    /// Nodes of a tabulated profile.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radii: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
}

fn one() -> f64 {
    1.0
}

impl PotentialSpec {
    fn shape(&self) -> std::result::Result<PotentialShape, String> {
        match self.family.as_str() {
            "bump" => Ok(PotentialShape::Bump),
            "cosine-window" => Ok(PotentialShape::CosineWindow),
            "zero" => Ok(PotentialShape::Zero),
            "tabulated" => match (&self.radii, &self.values) {
                (Some(r), Some(v)) => Ok(PotentialShape::Tabulated { radii: r.clone(), values: v.clone() }),
                _ => Err("tabulated potentials need radii and values".into()),
            },
            other => Err(format!("unknown potential family {other:?} (expected bump, cosine-window, zero or tabulated)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// Particle dimension `d`.
    #[serde(default = "one_usize")]
    pub dim: usize,
    #[serde(default)]
    pub masses: SiteLaw,
    #[serde(default)]
    pub force_constants: SiteLaw,
    pub potential: PotentialSpec,
    pub r_cut: f64,
    #[serde(default = "default_cert_order")]
    pub cert_order: usize,
}

fn one_usize() -> usize {
    1
}

fn default_cert_order() -> usize {
    crate::model::DEFAULT_CERT_ORDER
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ObservableSpec {
    GaussianLevee {
        sites: Vec<SiteId>,
        sigma: f64,
        /// Defaults to the origin.
        #[serde(default)]
        center_p: Option<Vec<f64>>,
        #[serde(default)]
        center_q: Option<Vec<f64>>,
    },
    Resolvent { sites: Vec<SiteId>, dir_p: Vec<f64>, dir_q: Vec<f64>, lambda: f64, part: ResolventPart },
    CoordinateWindow { site: SiteId, variable: Variable, component: usize, sigma: f64 },
}

impl ObservableSpec {
    pub fn sites(&self) -> SiteSet {
        match self {
            ObservableSpec::GaussianLevee { sites, .. } | ObservableSpec::Resolvent { sites, .. } => SiteSet::new(sites.iter().copied()),
            ObservableSpec::CoordinateWindow { site, .. } => SiteSet::single(*site),
        }
    }

    pub fn build(&self, dim: usize) -> Result<Observable> {
        match self {
            ObservableSpec::GaussianLevee { sigma, center_p, center_q, .. } => {
                let sites = self.sites();
                let n = sites.len() * dim;
                let cp = center_p.clone().unwrap_or_else(|| vec![0.0; n]);
                let cq = center_q.clone().unwrap_or_else(|| vec![0.0; n]);
                Observable::gaussian_levee(sites, dim, cp, cq, *sigma)
            }
            ObservableSpec::Resolvent { dir_p, dir_q, lambda, part, .. } => {
                Observable::resolvent(self.sites(), dim, dir_p.clone(), dir_q.clone(), *lambda, *part)
            }
            ObservableSpec::CoordinateWindow { site, variable, component, sigma } => {
                Observable::coordinate_window(*site, dim, *variable, *component, *sigma)
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservablesSpec {
    #[serde(default)]
    pub f: Option<ObservableSpec>,
    #[serde(default)]
    pub g: Option<ObservableSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSpec {
    #[serde(default)]
    pub integrator: Integrator,
    #[serde(default = "default_step")]
    pub step: f64,
    /// Horizon `T` of the symmetric grid on `[−T, T]`.
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    /// Relative energy drift tolerated by the integrator; `0` disables the check.
    #[serde(default = "default_energy_tol")]
    pub energy_tol: f64,
}

fn default_step() -> f64 {
    1e-3
}
fn default_horizon() -> f64 {
    2.0
}
fn default_grid_points() -> usize {
    21
}
fn default_energy_tol() -> f64 {
    1e-4
}

impl Default for DynamicsSpec {
    fn default() -> Self {
        DynamicsSpec {
            integrator: Integrator::Rk4,
            step: default_step(),
            horizon: default_horizon(),
            grid_points: default_grid_points(),
            energy_tol: default_energy_tol(),
        }
    }
}

impl DynamicsSpec {
    pub fn flow_options(&self) -> FlowOptions {
        FlowOptions {
            integrator: self.integrator,
            step: self.step,
            energy_tol: (self.energy_tol > 0.0).then_some(self.energy_tol),
            record_every: 1,
        }
    }

    pub fn grid(&self) -> Result<Vec<f64>> {
        symmetric_grid(self.horizon, self.grid_points)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Lr,
    Envelope,
    Converge,
    Picture,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentsSpec {
    /// Experiments run by `lrlab run`; their observable requirements are validated.
    #[serde(default = "default_run")]
    pub run: Vec<ExperimentKind>,
    /// Sites of the finite volume; all lattice sites when absent.
    #[serde(default)]
    pub region: Option<Vec<SiteId>>,
    #[serde(default)]
    pub mu_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub envelope: EnvelopeSpec,
    #[serde(default)]
    pub converge: ConvergeSpec,
}

fn default_run() -> Vec<ExperimentKind> {
    Vec::new()
}

impl Default for ExperimentsSpec {
    fn default() -> Self {
        ExperimentsSpec { run: default_run(), region: None, mu_grid: None, envelope: EnvelopeSpec::default(), converge: ConvergeSpec::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeSpec {
    /// Horizon of the forward grid `[0, T]`.
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_envelope_points")]
    pub grid_points: usize,
    /// Overrides `sampler.count` for this experiment.
    #[serde(default)]
    pub count: Option<usize>,
}

fn default_envelope_points() -> usize {
    11
}

impl Default for EnvelopeSpec {
    fn default() -> Self {
        EnvelopeSpec { horizon: default_horizon(), grid_points: default_envelope_points(), count: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergeSpec {
    /// Radii of the nested balls around the support of `f`.
    #[serde(default = "default_radii")]
    pub radii: Vec<f64>,
    #[serde(default = "one")]
    pub horizon: f64,
    #[serde(default = "default_converge_points")]
    pub grid_points: usize,
    #[serde(default)]
    pub count: Option<usize>,
}

fn default_radii() -> Vec<f64> {
    vec![1.0, 2.0, 3.0]
}
fn default_converge_points() -> usize {
    5
}

impl Default for ConvergeSpec {
    fn default() -> Self {
        ConvergeSpec { radii: default_radii(), horizon: 1.0, grid_points: default_converge_points(), count: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_out")]
    pub dir: String,
}

fn default_out() -> String {
    "lrlab-out".into()
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec { dir: default_out() }
    }
}

impl ExperimentConfig {
    /// Parses and validates TOML text.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| LabError::Config(vec![format!("schema: {}", e.message())]).with_span(text, e.span()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Config(vec![format!("{}: cannot read configuration: {e}", path.display())]))?;
        Self::from_toml_str(&text)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let text = PRESETS
            .iter()
            .find(|p| p.0 == name)
            .map(|p| p.1)
            .ok_or_else(|| LabError::Config(vec![format!("unknown preset {name:?}; available: {}", PRESET_NAMES.join(", "))]))?;
        Self::from_toml_str(text)
    }

    pub fn preset_text(name: &str) -> Option<&'static str> {
        PRESETS.iter().find(|p| p.0 == name).map(|p| p.1)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configurations serialize")
    }

    /// Every violation of the schema's semantic rules.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            out.push(format!("schema_version: unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version));
        }
        let n = self.lattice.site_count();
        match &self.lattice {
            LatticeSpec::Chain { size } if *size == 0 => out.push("lattice.size: must be positive".into()),
            LatticeSpec::Grid { nx, ny } if *nx == 0 || *ny == 0 => out.push("lattice.nx/ny: must be positive".into()),
            LatticeSpec::Random { count, dim, extent, min_separation, .. } => {
                if *count == 0 {
                    out.push("lattice.count: must be positive".into());
                }
                if *dim == 0 {
                    out.push("lattice.dim: must be positive".into());
                }
                if !(*extent > 0.0) {
                    out.push(format!("lattice.extent: must be positive, got {extent}"));
                }
                if !(*min_separation >= 0.0) {
                    out.push(format!("lattice.min_separation: must be nonnegative, got {min_separation}"));
                }
            }
            _ => {}
        }
        if let Err(e) = self.decay.build(self.lattice.embedding_dim()) {
            out.push(format!("decay: {e}"));
        }
        let m = &self.model;
        if m.dim == 0 {
            out.push("model.dim: particle dimension must be positive".into());
        }
        m.masses.violations(n, "model.masses", "mass", &mut out);
        m.force_constants.violations(n, "model.force_constants", "force constant", &mut out);
        match m.potential.shape() {
            Err(e) => out.push(format!("model.potential.family: {e}")),
            Ok(PotentialShape::Zero) => {}
            Ok(_) => {
                if !(m.potential.amplitude.is_finite() && m.potential.amplitude >= 0.0) {
                    out.push(format!("model.potential.amplitude: must be finite and nonnegative, got {}", m.potential.amplitude));
                }
                if !(m.potential.support_radius > 0.0 && m.potential.support_radius.is_finite()) {
                    out.push(format!("model.potential.support_radius: must be positive, got {}", m.potential.support_radius));
                }
            }
        }
        if !(m.r_cut >= 0.0 && m.r_cut.is_finite()) {
            out.push(format!("model.r_cut: must be finite and nonnegative, got {}", m.r_cut));
        }
        if !(2..=MAX_CERTIFIED_ORDER).contains(&m.cert_order) {
            out.push(format!("model.cert_order: must lie in 2..={MAX_CERTIFIED_ORDER}, got {}", m.cert_order));
        }

        let in_lattice = |path: &str, sites: &SiteSet, out: &mut Vec<String>| {
            for s in sites.iter().filter(|&s| s >= n) {
                out.push(format!("{path}: site {s} does not exist (lattice has {n} sites)"));
            }
        };
        let region: SiteSet = match &self.experiments.region {
            Some(r) => {
                let set = SiteSet::new(r.iter().copied());
                if set.is_empty() {
                    out.push("experiments.region: must not be empty".into());
                }
                in_lattice("experiments.region", &set, &mut out);
                set
            }
            None => SiteSet::range(0..n),
        };
        for (name, spec) in [("f", &self.observables.f), ("g", &self.observables.g)] {
            let Some(spec) = spec else { continue };
            let path = format!("observables.{name}");
            let sites = spec.sites();
            if sites.is_empty() {
                out.push(format!("{path}.sites: must not be empty"));
            }
            in_lattice(&format!("{path}.sites"), &sites, &mut out);
            if !sites.is_subset(&region) {
                out.push(format!("{path}.sites: support {sites} is not inside the region"));
            }
            if m.dim > 0 {
                if let Err(e) = spec.build(m.dim) {
                    out.push(format!("{path}: {e}"));
                }
            }
        }

        let d = &self.dynamics;
        if !(d.step > 0.0 && d.step.is_finite()) {
            out.push(format!("dynamics.step: must be positive, got {}", d.step));
        }
        if !(d.horizon >= 0.0 && d.horizon.is_finite()) {
            out.push(format!("dynamics.horizon: must be finite and nonnegative, got {}", d.horizon));
        }
        if d.grid_points == 0 {
            out.push("dynamics.grid_points: must be positive".into());
        }
        if !(d.energy_tol >= 0.0) {
            out.push(format!("dynamics.energy_tol: must be nonnegative, got {}", d.energy_tol));
        }
        if let Err(e) = self.sampler.validate() {
            out.push(format!("sampler: {e}"));
        }

        let run = &self.experiments.run;
        let needs_f = run.iter().any(|k| matches!(k, ExperimentKind::Lr | ExperimentKind::Converge | ExperimentKind::Picture));
        if needs_f && self.observables.f.is_none() {
            out.push("observables.f: required by the selected experiments".into());
        }
        if run.contains(&ExperimentKind::Lr) {
            match (&self.observables.f, &self.observables.g) {
                (_, None) => out.push("observables.g: required by the lr experiment".into()),
                (Some(f), Some(g)) if !f.sites().is_disjoint(&g.sites()) => out.push(format!(
                    "observables.g.sites: supports X = {} and Y = {} overlap; the Lieb-Robinson experiment requires disjoint supports",
                    f.sites(),
                    g.sites()
                )),
                _ => {}
            }
        }
        if let Some(mus) = &self.experiments.mu_grid {
            if mus.is_empty() {
                out.push("experiments.mu_grid: must not be empty".into());
            }
            for (i, mu) in mus.iter().enumerate() {
                if !(*mu > 0.0 && mu.is_finite()) {
                    out.push(format!("experiments.mu_grid[{i}]: must be positive, got {mu}"));
                }
            }
        }
        let e = &self.experiments.envelope;
        if e.grid_points < 2 {
            out.push("experiments.envelope.grid_points: must be at least 2".into());
        }
        if !(e.horizon >= 0.0 && e.horizon.is_finite()) {
            out.push(format!("experiments.envelope.horizon: must be finite and nonnegative, got {}", e.horizon));
        }
        if e.count == Some(0) {
            out.push("experiments.envelope.count: must be positive".into());
        }
        let c = &self.experiments.converge;
        if c.radii.len() < 2 {
            out.push("experiments.converge.radii: need at least two radii".into());
        }
        if c.radii.windows(2).any(|w| !(w[1] > w[0])) || c.radii.iter().any(|r| !(*r >= 0.0)) {
            out.push("experiments.converge.radii: must be nonnegative and strictly increasing".into());
        }
        if !(c.horizon >= 0.0 && c.horizon.is_finite()) {
            out.push(format!("experiments.converge.horizon: must be finite and nonnegative, got {}", c.horizon));
        }
        if c.grid_points == 0 {
            out.push("experiments.converge.grid_points: must be positive".into());
        }
        if c.count == Some(0) {
            out.push("experiments.converge.count: must be positive".into());
        }
        if self.output.dir.is_empty() {
            out.push("output.dir: must not be empty".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(LabError::Config(v))
        }
    }

    pub fn build_lattice(&self) -> Result<Lattice> {
        self.lattice.build()
    }

    pub fn build_model(&self) -> Result<LatticeModel> {
        let lattice = self.build_lattice()?;
        let n = lattice.len();
        let decay = self.decay.build(lattice.embedding_dim())?;
        let m = &self.model;
        let shape = m.potential.shape().map_err(|e| LabError::Config(vec![format!("model.potential.family: {e}")]))?;
        LatticeModel::builder(lattice, decay, m.dim)
            .masses(m.masses.values(n))
            .force_constants(m.force_constants.values(n))
            .potential(shape, m.potential.amplitude, m.potential.support_radius)
            .r_cut(m.r_cut)
            .cert_order(m.cert_order)
            .build()
    }

    pub fn region(&self) -> SiteSet {
        match &self.experiments.region {
            Some(r) => SiteSet::new(r.iter().copied()),
            None => SiteSet::range(0..self.lattice.site_count()),
        }
    }

    pub fn observable_f(&self) -> Result<Observable> {
        self.observables.f.as_ref().ok_or_else(|| LabError::Config(vec!["observables.f: missing".into()]))?.build(self.model.dim)
    }

    pub fn observable_g(&self) -> Result<Observable> {
        self.observables.g.as_ref().ok_or_else(|| LabError::Config(vec!["observables.g: missing".into()]))?.build(self.model.dim)
    }

    pub fn mu_grid(&self) -> Vec<f64> {
        self.experiments.mu_grid.clone().unwrap_or_else(default_mu_grid)
    }

    pub fn lr_times(&self) -> Result<Vec<f64>> {
        self.dynamics.grid()
    }

    pub fn envelope_times(&self) -> Result<Vec<f64>> {
        forward_grid(self.experiments.envelope.horizon, self.experiments.envelope.grid_points)
    }

    pub fn converge_times(&self) -> Result<Vec<f64>> {
        symmetric_grid(self.experiments.converge.horizon, self.experiments.converge.grid_points)
    }

    pub fn envelope_sampler(&self) -> SamplerSpec {
        SamplerSpec { count: self.experiments.envelope.count.unwrap_or(self.sampler.count), ..self.sampler.clone() }
    }

    pub fn converge_sampler(&self) -> SamplerSpec {
        SamplerSpec { count: self.experiments.converge.count.unwrap_or(self.sampler.count), ..self.sampler.clone() }
    }
}

impl LabError {
    /// Appends the line and column of a schema error to its message.
    fn with_span(self, text: &str, span: Option<std::ops::Range<usize>>) -> Self {
        match (self, span) {
            (LabError::Config(mut v), Some(span)) => {
                let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
                if let Some(last) = v.last_mut() {
                    last.push_str(&format!(" (line {line})"));
                }
                LabError::Config(v)
            }
            (e, _) => e,
        }
    }
}
