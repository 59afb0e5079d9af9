//! The nine acceptance criteria, each run at its stated tolerance. Prints one
//! PASS/FAIL line per criterion and exits nonzero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use lrlab_core::bounds::{compute_c0, dyson_partial_sums, jacobian_envelope};
use lrlab_core::config::{ExperimentConfig, LatticeSpec};
use lrlab_core::dynamics::{
    flow_at_times, integrate_flow, jacobian_determinant, symplectic_defect, variational_at_times, BlockKind, FlowOptions,
};
use lrlab_core::experiments::{
    forward_grid, nested_balls, off_diagonal_pairs, run_convergence_experiment, run_envelope_check, run_interaction_picture_check,
    run_lr_experiment, symmetric_grid, LrOptions, LrReport, ONSET_THRESHOLD,
};
use lrlab_core::lattice::{convolution_constant, interaction_weight, norm_f, DecayFunction, Lattice, SiteSet};
use lrlab_core::model::{LatticeModel, PhaseState};
use lrlab_core::observables::Observable;
use lrlab_core::sampler::SamplerSpec;
use rand::{Rng, SeedableRng};

type Outcome = Result<String, String>;

fn chain8() -> ExperimentConfig {
    ExperimentConfig::preset("chain-8").expect("preset parses")
}

fn model_of(cfg: &ExperimentConfig) -> LatticeModel {
    cfg.build_model().expect("model builds")
}

fn random_state(sites: &SiteSet, dim: usize, scale: f64, seed: u64) -> PhaseState {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = sites.len() * dim;
    let p = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
    let q = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
    PhaseState::from_parts(sites.clone(), dim, p, q).unwrap()
}

fn levee(site: usize) -> Observable {
    Observable::centered_levee(SiteSet::single(site), 1, 1.0).unwrap()
}

fn within(elapsed: Duration, limit_s: u64) -> Result<(), String> {
    if elapsed.as_secs_f64() <= limit_s as f64 {
        Ok(())
    } else {
        Err(format!("took {:.1} s, limit {limit_s} s", elapsed.as_secs_f64()))
    }
}

/// Variational blocks against central differences of the flow, column by column.
fn jacobian_oracle() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    pool.install(|| {
        let start = Instant::now();
        let cfg = chain8();
        let model = model_of(&cfg);
        let region = model.lattice().sites();
        let opts = cfg.dynamics.flow_options();
        let times = [0.5, 1.0, 2.0];
        let eps = 1e-6;
        let mut worst = 0.0f64;
        for seed in 0..3 {
            let s0 = random_state(&region, 1, 1.5, seed);
            let (_, blocks) = variational_at_times(&model, &region, &s0, &region, &times, &opts).map_err(|e| e.to_string())?;
            let nd = region.len();
            for col in 0..2 * nd {
                let shifted = |sign: f64| {
                    let mut s = s0.clone();
                    if col < nd {
                        s.q_flat_mut()[col] += sign * eps;
                    } else {
                        s.p_flat_mut()[col - nd] += sign * eps;
                    }
                    flow_at_times(&model, &region, &s, &times, &opts).unwrap()
                };
                let (plus, minus) = (shifted(1.0), shifted(-1.0));
                for n in 0..times.len() {
                    let m = blocks.matrix(n);
                    let fd: Vec<f64> = plus[n]
                        .q_flat()
                        .iter()
                        .chain(plus[n].p_flat())
                        .zip(minus[n].q_flat().iter().chain(minus[n].p_flat()))
                        .map(|(a, b)| (a - b) / (2.0 * eps))
                        .collect();
                    let scale = fd.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                    let err = fd.iter().enumerate().fold(0.0f64, |a, (r, v)| a.max((m[(r, col)] - v).abs()));
                    worst = worst.max(err / scale);
                }
            }
        }
        within(start.elapsed(), 60)?;
        if worst <= 1e-4 {
            Ok(format!("worst column-relative error {worst:.2e} in {:.1} s", start.elapsed().as_secs_f64()))
        } else {
            Err(format!("worst column-relative error {worst:.2e} > 1e-4"))
        }
    })
}

fn envelope_domination() -> Outcome {
    let start = Instant::now();
    let cfg = chain8();
    let model = model_of(&cfg);
    let region = model.lattice().sites();
    let sampler = SamplerSpec { count: 512, ..cfg.sampler.clone() };
    let times = forward_grid(2.0, 11).unwrap();
    let rep = run_envelope_check(&model, &region, &off_diagonal_pairs(&region), &times, &sampler, &cfg.dynamics.flow_options())
        .map_err(|e| e.to_string())?;
    within(start.elapsed(), 300)?;
    let worst: Vec<String> = rep.worst.iter().map(|w| format!("{}:{:.3e}", w.kind.name(), w.worst_margin)).collect();
    if rep.violations == 0 && rep.failures == 0 {
        Ok(format!("0 violations over {} cells, worst margins {}", rep.cells.len(), worst.join(" ")))
    } else {
        Err(format!("{} violations, {} failed samples", rep.violations, rep.failures))
    }
}

fn lr_report(y: usize) -> Result<LrReport, String> {
    let cfg = chain8();
    let model = model_of(&cfg);
    let region = model.lattice().sites();
    let opts = LrOptions { sampler: cfg.sampler.clone(), flow: cfg.dynamics.flow_options(), mu_grid: cfg.mu_grid(), lhs_scale: 1.0 };
    let times = symmetric_grid(2.0, 21).unwrap();
    run_lr_experiment(&model, &region, &levee(1), &levee(y), &times, &opts).map_err(|e| e.to_string())
}

fn lr_inequality() -> Outcome {
    let start = Instant::now();
    let rep = lr_report(5)?;
    within(start.elapsed(), 600)?;
    let at_zero = rep.rows.iter().find(|r| r.t == 0.0).ok_or("grid lacks t = 0")?.lhs_measured;
    if at_zero > 1e-12 {
        return Err(format!("LHS(0) = {at_zero:e}"));
    }
    if rep.rows.len() != 21 || !rep.verdict.passed() {
        return Err(format!("verdict {}, worst margin {:e}", rep.verdict, rep.worst_margin));
    }
    let peak = rep.rows.iter().map(|r| r.lhs_measured).fold(0.0, f64::max);
    Ok(format!("21/21 times, max LHS {peak:.3e}, worst margin {:.3e}, {:.1} s", rep.worst_margin, start.elapsed().as_secs_f64()))
}

fn onset_monotonicity() -> Outcome {
    let mut onsets = Vec::new();
    for y in [3, 5, 7] {
        let rep = lr_report(y)?;
        onsets.push((rep.dist, rep.onset_time.ok_or(format!("LHS vanishes for Y = {{{y}}}"))?));
    }
    let text = onsets.iter().map(|(d, t)| format!("dist {d}: {t:.2}")).collect::<Vec<_>>().join(", ");
    if onsets.windows(2).all(|w| w[1].1 >= w[0].1) {
        Ok(format!("onsets (threshold {ONSET_THRESHOLD:e}) {text}"))
    } else {
        Err(format!("onsets not monotone: {text}"))
    }
}

fn finite_volume_convergence() -> Outcome {
    let mut cfg = chain8();
    cfg.lattice = LatticeSpec::Chain { size: 33 };
    let model = model_of(&cfg);
    let center = SiteSet::single(16);
    let vols = nested_balls(&model, &center, &[2.0, 4.0, 8.0, 16.0]).map_err(|e| e.to_string())?;
    let times = symmetric_grid(1.0, 5).unwrap();
    let opts = cfg.dynamics.flow_options();
    let rep = run_convergence_experiment(&model, &vols, &levee(16), &times, &cfg.sampler, &opts).map_err(|e| e.to_string())?;
    let diffs: Vec<f64> = rep.steps.iter().map(|s| s.sup_diff).collect();
    let strictly = diffs.windows(2).all(|w| w[1] < w[0]);
    let below = rep.steps.iter().all(|s| s.sup_diff <= s.bound);

    let mut free_cfg = cfg.clone();
    free_cfg.model.potential.family = "zero".into();
    let free = model_of(&free_cfg);
    let control = run_convergence_experiment(&free, &vols, &levee(16), &times, &cfg.sampler, &opts).map_err(|e| e.to_string())?;
    let control_max = control.steps.iter().map(|s| s.sup_diff).fold(0.0, f64::max);

    let text = rep.steps.iter().map(|s| format!("{:.3e}<={:.3e}", s.sup_diff, s.bound)).collect::<Vec<_>>().join(", ");
    if strictly && below && control_max <= 1e-12 {
        Ok(format!("differences {text}; control {control_max:e}"))
    } else {
        Err(format!("strictly decreasing {strictly}, below bound {below}, control {control_max:e}: {text}"))
    }
}

fn interaction_picture() -> Outcome {
    let cfg = chain8();
    let model = model_of(&cfg);
    let region = model.lattice().sites();
    let sampler = SamplerSpec { count: 128, ..cfg.sampler.clone() };
    let rep = run_interaction_picture_check(&model, &region, &levee(1), &[0.5, 1.0], &sampler, &cfg.dynamics.flow_options())
        .map_err(|e| e.to_string())?;
    if rep.max_discrepancy <= 1e-6 {
        Ok(format!("max discrepancy {:.3e}", rep.max_discrepancy))
    } else {
        Err(format!("max discrepancy {:.3e} > 1e-6", rep.max_discrepancy))
    }
}

fn dyson_consistency() -> Outcome {
    let cfg = chain8();
    let model = model_of(&cfg);
    let bc = compute_c0(&model, &model.lattice().sites()).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for i in 0..=100 {
        let x = 5.0 * i as f64 / 100.0;
        for sign in [1.0, -1.0] {
            let t = sign * x / bc.sqrt_c0();
            for kind in BlockKind::ALL {
                let s40 = *dyson_partial_sums(&bc, 1.0, t, 40, kind).map_err(|e| e.to_string())?.last().unwrap();
                let closed = jacobian_envelope(&bc, 1.0, t, kind);
                let err = (s40 - closed).abs();
                if err > 1e-12 * closed {
                    return Err(format!("{} at sqrt(C0)|t| = {x}: |S40 - closed| = {err:e}, closed = {closed:e}", kind.name()));
                }
                if closed > 0.0 {
                    worst = worst.max(err / closed);
                }
            }
        }
    }
    Ok(format!("worst relative gap {worst:.2e} (C0 = {:.4})", bc.c0))
}

fn structural_numerics() -> Outcome {
    let cfg = chain8();
    let model = model_of(&cfg);
    let region = model.lattice().sites();
    let s0 = random_state(&region, 1, 1.5, 42);
    let opts = FlowOptions { energy_tol: None, record_every: 10, ..FlowOptions::with_step(1e-3) };
    let traj = integrate_flow(&model, &region, &s0, 10.0, &opts).map_err(|e| e.to_string())?;
    let drift = traj.max_relative_energy_drift();
    let (_, blocks) = variational_at_times(&model, &region, &s0, &region, &[2.0], &opts).map_err(|e| e.to_string())?;
    let defect = symplectic_defect(&blocks, 0).map_err(|e| e.to_string())?;
    let det = jacobian_determinant(&blocks, 0).map_err(|e| e.to_string())?;
    let text = format!("energy drift {drift:.2e}, symplectic defect {defect:.2e}, |det - 1| {:.2e}", (det - 1.0).abs());
    if drift <= 1e-6 && defect <= 1e-6 && (det - 1.0).abs() <= 1e-6 {
        Ok(text)
    } else {
        Err(text)
    }
}

fn geometry_constants() -> Outcome {
    let half = DecayFunction::exponential_power_law(0.0, std::f64::consts::LN_2).unwrap();
    let e = |v: lrlab_core::Result<f64>| v.map_err(|e| e.to_string());
    let chain5 = Lattice::chain(5);
    let checks = [
        ("norm_F chain {0..4}", e(norm_f(&chain5, &half, &chain5.sites()))?, 2.5),
        ("norm_F single site", e(norm_f(&chain5, &half, &SiteSet::single(0)))?, 1.0),
        ("norm_F chain {0,1}", e(norm_f(&chain5, &half, &SiteSet::range(0..2)))?, 1.5),
        ("C_F chain {0,1,2}", e(convolution_constant(&chain5, &half, &SiteSet::range(0..3)))?, 3.0),
        ("D({0},{3})", e(interaction_weight(&chain5, &half, &SiteSet::single(0), &SiteSet::single(3)))?, 0.125),
        ("D({0,1},{2,3})", e(interaction_weight(&chain5, &half, &SiteSet::range(0..2), &SiteSet::range(2..4)))?, 1.125),
    ];
    for (name, got, want) in checks {
        if (got - want).abs() > 1e-14 {
            return Err(format!("{name}: {got} != {want}"));
        }
    }
    let inv_sq = DecayFunction::power_law(2.0).unwrap();
    let c = |n: usize| convolution_constant(&Lattice::chain(n), &inv_sq, &SiteSet::range(0..n)).map_err(|e| e.to_string());
    let (c8, c16) = (c(8)?, c(16)?);
    let drift = (c16 - c8).abs() / c8;
    let text = format!("hand checks ok; C_F(8) = {c8:.4}, C_F(16) = {c16:.4}, drift {:.1}%", 100.0 * drift);
    if drift <= 0.05 {
        Ok(text)
    } else {
        Err(format!("{text} exceeds 5%"))
    }
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("1 Jacobian-oracle equivalence", jacobian_oracle),
        ("2 envelope domination", envelope_domination),
        ("3 Lieb-Robinson inequality", lr_inequality),
        ("4 light-cone onset monotonicity", onset_monotonicity),
        ("5 finite-volume convergence", finite_volume_convergence),
        ("6 interaction-picture identity", interaction_picture),
        ("7 Dyson series consistency", dyson_consistency),
        ("8 structural numerics", structural_numerics),
        ("9 geometry constants", geometry_constants),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {name}: PASS ({detail}) [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {name}: FAIL ({detail}) [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
