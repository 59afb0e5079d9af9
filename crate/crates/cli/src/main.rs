//! `lrlab`: runs lattice dynamics experiments from a TOML configuration.
//!
//! Exit status: 0 when every verdict passes, 1 when a verdict fails, 2 on errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use lrlab_core::config::{ExperimentConfig, ExperimentKind, PRESET_NAMES};
use lrlab_core::runner::{self, ConvergeOutcome, ValidationSummary};
use lrlab_core::{BoundConstants, ConvergenceReport, EnvelopeReport, LrReport, PictureReport, Verdict};

#[derive(Debug, Parser)]
#[command(name = "lrlab", version, about = "Lieb-Robinson experiments on classical oscillator lattices")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true, env = "LRLAB_CONFIG", conflicts_with = "preset")]
    config: Option<PathBuf>,

    /// Built-in configuration; `chain-8` when neither this nor --config is given.
    #[arg(long, global = true, env = "LRLAB_PRESET", value_parser = clap::builder::PossibleValuesParser::new(PRESET_NAMES))]
    preset: Option<String>,

    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true, env = "LRLAB_OUT")]
    out: Option<PathBuf>,

    /// Sampler seed; overrides `sampler.seed`.
    #[arg(long, global = true, env = "LRLAB_SEED")]
    seed: Option<u64>,

    /// Worker threads (default: available parallelism).
    #[arg(long, global = true, env = "LRLAB_WORKERS")]
    workers: Option<usize>,

    /// Print the effective configuration before running.
    #[arg(long, global = true, env = "LRLAB_DUMP")]
    dump: bool,

    /// Multiplies the measured left-hand side of the lr experiment (exercises the failure path).
    #[arg(long, global = true, hide = true, env = "LRLAB_INJECT_LHS_SCALE", default_value_t = 1.0)]
    inject_lhs_scale: f64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the configuration and the model assumptions; print C0.
    Validate,
    /// Lieb-Robinson inequality on the configured time grid.
    Lr,
    /// Nested-volume convergence and the interaction-picture identity.
    Converge,
    /// Jacobian blocks against their closed-form envelopes.
    Envelope,
    /// Write the bound constants and observable norms as JSON.
    DumpConstants,
    /// Every experiment listed in `experiments.run`.
    Run,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Lr => "lr",
            Command::Converge => "converge",
            Command::Envelope => "envelope",
            Command::DumpConstants => "dump-constants",
            Command::Run => "run",
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(path), _) => ExperimentConfig::from_path(path)?,
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => ExperimentConfig::preset("chain-8")?,
    };
    if let Some(seed) = cli.seed {
        cfg.sampler.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.to_string_lossy().into_owned();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn verdict_code(v: Verdict) -> u8 {
    if v.passed() {
        0
    } else {
        1
    }
}

fn print_constants(bc: &BoundConstants) {
    println!("constants");
    println!("  C0            {:.6e}", bc.c0);
    println!("  sqrt(C0)      {:.6e}", bc.sqrt_c0());
    println!("  |1/m|_inf     {:.6e}", bc.inv_mass_sup);
    println!("  |nu|_inf      {:.6e}", bc.nu_sup);
    println!("  C_V           {:.6e}", bc.c_v);
    println!("  |Psi|         {:.6e}", bc.psi_norm);
    println!("  |F|           {:.6e}", bc.f_norm);
    println!("  C_F           {:.6e}", bc.c_f);
}

fn validate(cfg: &ExperimentConfig) -> Result<u8> {
    let ValidationSummary { assumptions, constants } = runner::run_validate(cfg)?;
    println!("{assumptions}");
    match constants {
        Some(bc) => {
            print_constants(&bc);
            Ok(0)
        }
        None => {
            eprintln!("model assumptions are not satisfied");
            Ok(1)
        }
    }
}

fn lr(cfg: &ExperimentConfig, out: &Path, lhs_scale: f64) -> Result<u8> {
    let rep: LrReport = runner::run_lr(cfg, lhs_scale)?;
    runner::write_report(out, "lr", cfg, &rep)?;
    runner::write_lr_csv(&out.join("lr_curves.csv"), &rep)?;
    print_constants(&rep.constants);
    println!("lr  X = {}  Y = {}  dist = {}  D(X,Y) = {:.6e}", rep.x, rep.y, rep.dist, rep.weight);
    println!("  {:>8}  {:>12}  {:>12}  {:>12}  {:>12}", "t", "lhs", "rhs_sinh", "rhs_cone", "margin");
    for r in &rep.rows {
        println!("  {:>8.3}  {:>12.4e}  {:>12.4e}  {:>12.4e}  {:>12.4e}", r.t, r.lhs_measured, r.rhs_sinh, r.rhs_corollary_best_mu, r.margin);
    }
    match rep.onset_time {
        Some(t) => println!("  onset |t| = {t}"),
        None => println!("  onset: none (LHS vanishes on the grid)"),
    }
    println!("  worst margin {:.4e}  verdict {}", rep.worst_margin, rep.verdict);
    println!("  note: {}", rep.note);
    Ok(verdict_code(rep.verdict))
}

fn envelope(cfg: &ExperimentConfig, out: &Path) -> Result<u8> {
    let rep: EnvelopeReport = runner::run_envelope(cfg)?;
    runner::write_report(out, "envelope", cfg, &rep)?;
    runner::write_envelope_csv(&out.join("envelope_curves.csv"), &rep)?;
    print_constants(&rep.constants);
    println!("envelope  {} pairs x {} times  samples {}  failed {}", rep.pairs.len(), rep.times.len(), rep.sampler.count, rep.failures);
    for w in &rep.worst {
        println!("  {}  worst margin {:.4e} at t = {} pair {:?}", w.kind.name(), w.worst_margin, w.worst_t, w.worst_pair);
    }
    println!("  violations {}  verdict {}", rep.violations, rep.verdict);
    Ok(verdict_code(rep.verdict))
}

fn print_convergence(c: &ConvergenceReport) {
    print_constants(&c.constants);
    println!("converge  C_harm = {:.4e}  prefactor = {:.4e}  slack = {}", c.c_harm, c.prefactor, c.slack);
    for s in &c.steps {
        println!("  |L| {:>4} -> {:>4}  sup diff {:.4e}  bound {:.4e}", s.inner_len, s.outer_len, s.sup_diff, s.bound);
    }
    println!("  decreasing {}  verdict {}", c.decreasing, c.verdict);
}

fn print_picture(p: &PictureReport) {
    println!("interaction picture  max discrepancy {:.4e}  tolerance {:e}  verdict {}", p.max_discrepancy, p.tolerance, p.verdict);
}

fn converge(cfg: &ExperimentConfig, out: &Path) -> Result<u8> {
    let outcome: ConvergeOutcome = runner::run_converge(cfg)?;
    runner::write_report(out, "converge", cfg, &outcome)?;
    match &outcome.convergence {
        Some(c) => {
            runner::write_convergence_csv(&out.join("converge_curves.csv"), c)?;
            print_convergence(c);
        }
        None => println!("converge  skipped: the lattice holds fewer than two distinct nested volumes"),
    }
    print_picture(&outcome.picture);
    Ok(verdict_code(outcome.verdict()))
}

fn picture(cfg: &ExperimentConfig, out: &Path) -> Result<u8> {
    let rep = runner::run_picture(cfg)?;
    runner::write_report(out, "picture", cfg, &rep)?;
    print_picture(&rep);
    Ok(verdict_code(rep.verdict))
}

fn dump_constants(cfg: &ExperimentConfig, out: &Path) -> Result<u8> {
    let dump = runner::dump_constants(cfg)?;
    let path = out.join("constants.json");
    runner::write_json(&path, &dump)?;
    println!("{}", serde_json::to_string_pretty(&dump)?);
    eprintln!("wrote {}", path.display());
    Ok(0)
}

fn run_selected(cfg: &ExperimentConfig, out: &Path, lhs_scale: f64) -> Result<u8> {
    if cfg.experiments.run.is_empty() {
        anyhow::bail!("experiments.run is empty");
    }
    let mut code = 0;
    for kind in &cfg.experiments.run {
        code = code.max(match kind {
            ExperimentKind::Lr => lr(cfg, out, lhs_scale)?,
            ExperimentKind::Envelope => envelope(cfg, out)?,
            ExperimentKind::Converge => converge(cfg, out)?,
            ExperimentKind::Picture => picture(cfg, out)?,
        });
    }
    Ok(code)
}

fn execute(cli: &Cli) -> Result<u8> {
    let cfg = load_config(cli)?;
    if cli.dump {
        print!("{}", cfg.to_toml_string());
    }
    let out = PathBuf::from(&cfg.output.dir);
    let start = Instant::now();
    let command = &cli.command;
    let scale = cli.inject_lhs_scale;
    let code = runner::with_workers(cli.workers, || -> Result<u8> {
        match command {
            Command::Validate => validate(&cfg),
            Command::Lr => lr(&cfg, &out, scale),
            Command::Converge => converge(&cfg, &out),
            Command::Envelope => envelope(&cfg, &out),
            Command::DumpConstants => dump_constants(&cfg, &out),
            Command::Run => run_selected(&cfg, &out, scale),
        }
    })??;
    if !matches!(command, Command::Validate) {
        runner::write_metadata(&out, command.name(), start.elapsed().as_secs_f64(), cli.workers)
            .with_context(|| format!("writing metadata to {}", out.display()))?;
    }
    Ok(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
