//! Sup-norm estimation over a ball: a randomly shifted Kronecker sequence mapped
//! into the ball, evaluated in parallel, then polished by Nelder-Mead.
//!
//! The estimate is a maximum over finitely many points and therefore a lower
//! bound on the true supremum.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{LabError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSpec {
    /// Number of quasi-random points.
    pub count: usize,
    /// Euclidean radius of the sampled ball, centered at the origin.
    pub radius: f64,
    pub seed: u64,
    /// Objective evaluations spent on Nelder-Mead refinement of the best point.
    pub refine_evals: usize,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        SamplerSpec { count: 256, radius: 5.0, seed: 0, refine_evals: 200 }
    }
}

impl SamplerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(LabError::domain("sampler count must be positive"));
        }
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(LabError::domain("sampler radius must be positive and finite"));
        }
        Ok(())
    }
}

/// Unique positive root of `x^{n+1} = x + 1`.
fn generalized_golden_ratio(n: usize) -> f64 {
    let mut x = 1.5f64;
    for _ in 0..60 {
        x = (1.0 + x).powf(1.0 / (n as f64 + 1.0));
    }
    x
}

/// The first `count` points of a Cranley-Patterson shifted Kronecker sequence in
/// the unit cube `[0, 1)^dim`. Longer sequences extend shorter ones.
pub fn kronecker_points(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let phi = generalized_golden_ratio(dim);
    let alpha: Vec<f64> = (1..=dim).map(|i| phi.powi(-(i as i32)).fract()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
    (0..count)
        .map(|k| {
            let kf = (k + 1) as f64;
            alpha.iter().zip(&shift).map(|(a, s)| (s + kf * a).fract()).collect()
        })
        .collect()
}

/// Maps cube points to the ball of the given radius in `ℝ^dim`: the first `dim`
/// coordinates become a Gaussian direction, the last a radius `R·u^{1/dim}`.
pub fn ball_points(dim: usize, spec: &SamplerSpec) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    if dim == 0 {
        return Err(LabError::domain("cannot sample a zero-dimensional ball"));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let cube = kronecker_points(dim + 1, spec.count, spec.seed);
    Ok(cube
        .into_iter()
        .map(|u| {
            let mut x: Vec<f64> = u[..dim].iter().map(|&v| normal.inverse_cdf(v.clamp(1e-12, 1.0 - 1e-12))).collect();
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let r = spec.radius * u[dim].powf(1.0 / dim as f64);
            if norm > 0.0 {
                x.iter_mut().for_each(|v| *v *= r / norm);
            }
            x
        })
        .collect())
}

fn project_to_ball(x: &mut [f64], radius: f64) {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > radius {
        x.iter_mut().for_each(|v| *v *= radius / n);
    }
}

/// Index and value of the largest entry; ties go to the lowest index. `None`
/// entries are skipped.
pub fn argmax_first(values: &[Option<f64>]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.iter().enumerate() {
        if let Some(v) = *v {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
    }
    best
}

/// Maximizes `objective` over the ball with Nelder-Mead, starting from `start` with
/// simplex edges `0.1·radius`; points leaving the ball are projected back. Returns
/// the best point and value found (never worse than `start`).
pub fn refine_max<F>(start: &[f64], start_value: f64, radius: f64, max_evals: usize, objective: F) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> Option<f64>,
{
    let n = start.len();
    if max_evals == 0 || n == 0 {
        return (start.to_vec(), start_value);
    }
    let counter = std::cell::Cell::new(0usize);
    let evals = || counter.get();
    // Minimize the negated objective; failed evaluations count as +∞.
    let f = |x: &[f64]| -> f64 {
        counter.set(counter.get() + 1);
        objective(x).map_or(f64::INFINITY, |v| -v)
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(start.to_vec(), -start_value)];
    for i in 0..n {
        if evals() >= max_evals {
            break;
        }
        let mut x = start.to_vec();
        x[i] += 0.1 * radius;
        project_to_ball(&mut x, radius);
        let v = f(&x);
        simplex.push((x, v));
    }
    if simplex.len() < n + 1 {
        let best = simplex.into_iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        return (best.0, -best.1);
    }
    while evals() < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let worst = simplex[n].clone();
        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|s| s.0[j]).sum::<f64>() / n as f64).collect();
        let along = |c: f64| {
            let mut x: Vec<f64> = centroid.iter().zip(&worst.0).map(|(m, w)| m + c * (m - w)).collect();
            project_to_ball(&mut x, radius);
            x
        };
        let xr = along(1.0);
        let fr = f(&xr);
        if fr < simplex[0].1 {
            if evals() >= max_evals {
                simplex[n] = (xr, fr);
                break;
            }
            let xe = along(2.0);
            let fe = f(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            if evals() >= max_evals {
                break;
            }
            let (xc, fc) = if fr < worst.1 {
                let x = along(0.5);
                let v = f(&x);
                (x, v)
            } else {
                let x = along(-0.5);
                let v = f(&x);
                (x, v)
            };
            if fc < worst.1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                // shrink toward the best vertex
                let best = simplex[0].0.clone();
                for s in simplex.iter_mut().skip(1) {
                    if evals() >= max_evals {
                        break;
                    }
                    let x: Vec<f64> = best.iter().zip(&s.0).map(|(b, v)| b + 0.5 * (v - b)).collect();
                    let v = f(&x);
                    *s = (x, v);
                }
            }
        }
    }
    let best = simplex.into_iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    if -best.1 >= start_value {
        (best.0, -best.1)
    } else {
        (start.to_vec(), start_value)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupEstimate {
    /// Largest `|quantity|` found, a lower bound on the supremum.
    pub value: f64,
    pub argmax: Vec<f64>,
    /// Largest value among the quasi-random samples, before refinement.
    pub sample_value: f64,
    pub failures: usize,
}

/// Estimates `sup |quantity|` over the ball of `spec.radius` in `ℝ^dim`.
pub fn sup_norm_estimate<F>(dim: usize, spec: &SamplerSpec, quantity: F) -> Result<SupEstimate>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let points = ball_points(dim, spec)?;
    let values: Vec<Option<f64>> = points.par_iter().map(|x| quantity(x).ok().map(f64::abs)).collect();
    let failures = values.iter().filter(|v| v.is_none()).count();
    let (idx, best) = argmax_first(&values)
        .ok_or_else(|| LabError::Integration { time: f64::NAN, reason: "every sampled evaluation failed".into() })?;
    let (argmax, value) = refine_max(&points[idx], best, spec.radius, spec.refine_evals, |x| quantity(x).ok().map(f64::abs));
    Ok(SupEstimate { value, argmax, sample_value: best, failures })
}

/// Per-time sup estimates for a quantity evaluated on a whole time grid at once.
/// `all` returns one value per grid time; `one` evaluates grid time `n` alone and
/// drives the refinement of that time's best sample. Refinements run in parallel
/// over times and are reduced in grid order.
pub fn sup_profile<A, O>(dim: usize, spec: &SamplerSpec, ntimes: usize, all: A, one: O) -> Result<Vec<SupEstimate>>
where
    A: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
    O: Fn(&[f64], usize) -> Result<f64> + Sync,
{
    let points = ball_points(dim, spec)?;
    let rows: Vec<Option<Vec<f64>>> = points.par_iter().map(|x| all(x).ok().filter(|v| v.len() == ntimes)).collect();
    let failures = rows.iter().filter(|r| r.is_none()).count();
    (0..ntimes)
        .into_par_iter()
        .map(|n| {
            let column: Vec<Option<f64>> = rows.iter().map(|r| r.as_ref().map(|v| v[n].abs())).collect();
            let (idx, best) = argmax_first(&column)
                .ok_or_else(|| LabError::Integration { time: f64::NAN, reason: "every sampled evaluation failed".into() })?;
            let (argmax, value) = if best > 0.0 {
                refine_max(&points[idx], best, spec.radius, spec.refine_evals, |x| one(x, n).ok().map(f64::abs))
            } else {
                (points[idx].clone(), best)
            };
            Ok(SupEstimate { value, argmax, sample_value: best, failures })
        })
        .collect()
}
