//! Config-driven execution: builds the model, runs an experiment inside a worker
//! pool of a given size and writes deterministic JSON reports and CSV curves.
//! Wall-clock data goes to a separate `metadata.json` so reports stay byte-identical
//! across runs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bounds::{compute_c0, lr_rhs, BoundConstants};
use crate::config::ExperimentConfig;
use crate::error::{LabError, Result};
use crate::experiments::{
    nested_balls, off_diagonal_pairs, run_convergence_experiment, run_envelope_check, run_interaction_picture_check, run_lr_experiment,
    ConvergenceReport, EnvelopeReport, LrOptions, LrReport, PictureReport, Verdict,
};
use crate::lattice::{dist_sets, interaction_weight};
use crate::model::{validate_assumptions, AssumptionReport};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Runs `work` on a dedicated pool of `workers` threads (`None`: available parallelism).
pub fn with_workers<T: Send>(workers: Option<usize>, work: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        if n == 0 {
            return Err(LabError::domain("worker count must be positive"));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| LabError::domain(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(work))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub assumptions: AssumptionReport,
    /// Present when every assumption holds.
    pub constants: Option<BoundConstants>,
}

pub fn run_validate(cfg: &ExperimentConfig) -> Result<ValidationSummary> {
    let model = cfg.build_model()?;
    let region = cfg.region();
    let assumptions = validate_assumptions(&model, &region);
    let constants = if assumptions.passed() { Some(compute_c0(&model, &region)?) } else { None };
    Ok(ValidationSummary { assumptions, constants })
}

pub fn run_lr(cfg: &ExperimentConfig, lhs_scale: f64) -> Result<LrReport> {
    let model = cfg.build_model()?;
    let opts = LrOptions { sampler: cfg.sampler.clone(), flow: cfg.dynamics.flow_options(), mu_grid: cfg.mu_grid(), lhs_scale };
    run_lr_experiment(&model, &cfg.region(), &cfg.observable_f()?, &cfg.observable_g()?, &cfg.lr_times()?, &opts)
}

pub fn run_envelope(cfg: &ExperimentConfig) -> Result<EnvelopeReport> {
    let model = cfg.build_model()?;
    let region = cfg.region();
    run_envelope_check(&model, &region, &off_diagonal_pairs(&region), &cfg.envelope_times()?, &cfg.envelope_sampler(), &cfg.dynamics.flow_options())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergeOutcome {
    /// `None` when the lattice does not hold two distinct nested volumes.
    pub convergence: Option<ConvergenceReport>,
    pub picture: PictureReport,
}

impl ConvergeOutcome {
    pub fn verdict(&self) -> Verdict {
        let conv = self.convergence.as_ref().is_none_or(|c| c.verdict.passed());
        Verdict::from_bool(conv && self.picture.verdict.passed())
    }
}

/// Nested-volume convergence around the support of `f`; balls that coincide on a
/// small lattice are merged.
pub fn run_convergence(cfg: &ExperimentConfig) -> Result<Option<ConvergenceReport>> {
    let model = cfg.build_model()?;
    let f = cfg.observable_f()?;
    let mut volumes = nested_balls(&model, f.support(), &cfg.experiments.converge.radii)?;
    volumes.dedup();
    if volumes.len() < 2 {
        return Ok(None);
    }
    run_convergence_experiment(&model, &volumes, &f, &cfg.converge_times()?, &cfg.converge_sampler(), &cfg.dynamics.flow_options()).map(Some)
}

/// The interaction-picture identity on the configured region.
pub fn run_picture(cfg: &ExperimentConfig) -> Result<PictureReport> {
    let model = cfg.build_model()?;
    let f = cfg.observable_f()?;
    run_interaction_picture_check(&model, &cfg.region(), &f, &cfg.converge_times()?, &cfg.converge_sampler(), &cfg.dynamics.flow_options())
}

pub fn run_converge(cfg: &ExperimentConfig) -> Result<ConvergeOutcome> {
    Ok(ConvergeOutcome { convergence: run_convergence(cfg)?, picture: run_picture(cfg)? })
}

/// Everything needed to re-evaluate the right-hand side of the inequality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantsDump {
    pub schema_version: u32,
    pub constants: BoundConstants,
    pub f_c1: Option<f64>,
    pub g_c1: Option<f64>,
    /// `D(X, Y)`
    pub weight: Option<f64>,
    pub dist: Option<f64>,
    pub times: Vec<f64>,
}

pub fn dump_constants(cfg: &ExperimentConfig) -> Result<ConstantsDump> {
    let model = cfg.build_model()?;
    let constants = compute_c0(&model, &cfg.region())?;
    let (f, g) = (cfg.observables.f.as_ref().map(|_| cfg.observable_f()).transpose()?, cfg.observables.g.as_ref().map(|_| cfg.observable_g()).transpose()?);
    let (weight, dist) = match (&f, &g) {
        (Some(f), Some(g)) => (
            Some(interaction_weight(model.lattice(), model.decay(), f.support(), g.support())?),
            Some(dist_sets(model.lattice(), f.support(), g.support())?),
        ),
        _ => (None, None),
    };
    Ok(ConstantsDump {
        schema_version: REPORT_SCHEMA_VERSION,
        constants,
        f_c1: f.as_ref().map(|f| f.c1_norm()),
        g_c1: g.as_ref().map(|g| g.c1_norm()),
        weight,
        dist,
        times: cfg.lr_times()?,
    })
}

impl ConstantsDump {
    /// Sinh-form right-hand side on the dumped grid.
    pub fn rhs_sinh(&self) -> Option<Vec<f64>> {
        let (f, g, w) = (self.f_c1?, self.g_c1?, self.weight?);
        Some(self.times.iter().map(|&t| lr_rhs(&self.constants, f, g, w, t).sinh_form).collect())
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema_version: u32,
    kind: &'a str,
    config: &'a ExperimentConfig,
    report: &'a T,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

/// Writes `{kind}_report.json` with the schema version and the full configuration.
pub fn write_report<T: Serialize>(dir: &Path, kind: &str, cfg: &ExperimentConfig, report: &T) -> Result<PathBuf> {
    create_dir(dir)?;
    let path = dir.join(format!("{kind}_report.json"));
    let mut text = serde_json::to_string_pretty(&Envelope { schema_version: REPORT_SCHEMA_VERSION, kind, config: cfg, report })?;
    text.push('\n');
    write_file(&path, text.as_bytes())?;
    Ok(path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

/// `t,lhs_measured,rhs_sinh,rhs_exp,rhs_corollary_best_mu`
pub fn write_lr_csv(path: &Path, rep: &LrReport) -> Result<()> {
    let mut out = String::from("t,lhs_measured,rhs_sinh,rhs_exp,rhs_corollary_best_mu\n");
    for r in &rep.rows {
        out.push_str(&format!("{},{},{},{},{}\n", r.t, r.lhs_measured, r.rhs_sinh, r.rhs_exp, r.rhs_corollary_best_mu));
    }
    write_file(path, out.as_bytes())
}

/// `t,k,j,block,measured,envelope,margin`
pub fn write_envelope_csv(path: &Path, rep: &EnvelopeReport) -> Result<()> {
    let mut out = String::from("t,k,j,block,measured,envelope,margin\n");
    for c in &rep.cells {
        out.push_str(&format!("{},{},{},{},{},{},{}\n", c.t, c.k, c.j, c.kind.name(), c.measured, c.envelope, c.margin));
    }
    write_file(path, out.as_bytes())
}

/// `inner_len,outer_len,t,sup_diff,bound`, one row per volume pair and time.
pub fn write_convergence_csv(path: &Path, rep: &ConvergenceReport) -> Result<()> {
    let mut out = String::from("inner_len,outer_len,t,sup_diff,bound\n");
    for s in &rep.steps {
        for (t, d) in rep.times.iter().zip(&s.per_time) {
            out.push_str(&format!("{},{},{},{},{}\n", s.inner_len, s.outer_len, t, d, s.bound));
        }
    }
    write_file(path, out.as_bytes())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunMetadata {
    pub command: String,
    pub version: String,
    /// Seconds since the Unix epoch at completion.
    pub finished_unix: u64,
    pub elapsed_seconds: f64,
    pub workers: Option<usize>,
}

pub fn write_metadata(dir: &Path, command: &str, elapsed_seconds: f64, workers: Option<usize>) -> Result<()> {
    let finished_unix = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let meta = RunMetadata { command: command.to_string(), version: env!("CARGO_PKG_VERSION").to_string(), finished_unix, elapsed_seconds, workers };
    write_json(&dir.join("metadata.json"), &meta)
}
