//! Local observables with analytic gradients and certified `C¹` norms, the
//! canonical Poisson bracket, and the bracket `{α_t(f), g}` of an evolved
//! observable computed from the Jacobian blocks.

use serde::{Deserialize, Serialize};

use crate::dynamics::{variational_at_times, FlowOptions, JacobianBlocks};
use crate::error::{LabError, Result};
use crate::lattice::SiteSet;
use crate::model::{LatticeModel, PhaseState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResolventPart {
    Real,
    Imag,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variable {
    P,
    Q,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ObservableKind {
    /// Real or imaginary part of `1/(iλ − u)` with `u = a·p + b·q` over the support.
    Resolvent { dir_p: Vec<f64>, dir_q: Vec<f64>, lambda: f64, part: ResolventPart },
    /// `exp(−‖(p, q) − center‖² / 2σ²)` over the support.
    GaussianLevee { center_p: Vec<f64>, center_q: Vec<f64>, sigma: f64 },
    /// `u·exp(−u²/2σ²)` of a single coordinate `u`.
    CoordinateWindow { variable: Variable, component: usize, sigma: f64 },
}

/// A function of the coordinates on `support` only. Vectors over the support are
/// flattened site-major in sorted site order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observable {
    support: SiteSet,
    dim: usize,
    kind: ObservableKind,
    /// Certified `‖f‖_∞`.
    sup_norm: f64,
    /// Certified `sup ‖∇f‖₂`.
    grad_sup: f64,
}

/// Gradient of an observable, restricted to its support.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub sites: SiteSet,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl Gradient {
    pub fn norm(&self) -> f64 {
        self.p.iter().chain(&self.q).map(|v| v * v).sum::<f64>().sqrt()
    }

    fn scaled(&self, a: f64) -> Gradient {
        Gradient { sites: self.sites.clone(), p: self.p.iter().map(|v| a * v).collect(), q: self.q.iter().map(|v| a * v).collect() }
    }
}

fn check_support(support: &SiteSet, dim: usize) -> Result<()> {
    if support.is_empty() {
        return Err(LabError::domain("observable support must be nonempty"));
    }
    if dim == 0 {
        return Err(LabError::domain("dimension must be positive"));
    }
    Ok(())
}

impl Observable {
    pub fn resolvent(support: SiteSet, dim: usize, dir_p: Vec<f64>, dir_q: Vec<f64>, lambda: f64, part: ResolventPart) -> Result<Self> {
        check_support(&support, dim)?;
        if lambda == 0.0 || !lambda.is_finite() {
            return Err(LabError::domain("resolvent parameter lambda must be nonzero and finite"));
        }
        let n = support.len() * dim;
        if dir_p.len() != n || dir_q.len() != n {
            return Err(LabError::domain(format!("resolvent direction needs {n} entries per part")));
        }
        let norm = dir_p.iter().chain(&dir_q).map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(LabError::domain("resolvent direction must be nonzero and finite"));
        }
        let l = lambda.abs();
        let (sup_norm, slope) = match part {
            ResolventPart::Real => (1.0 / (2.0 * l), 1.0 / (l * l)),
            ResolventPart::Imag => (1.0 / l, 3.0 * 3f64.sqrt() / (8.0 * l * l)),
        };
        Ok(Observable { support, dim, kind: ObservableKind::Resolvent { dir_p, dir_q, lambda, part }, sup_norm, grad_sup: slope * norm })
    }

    pub fn gaussian_levee(support: SiteSet, dim: usize, center_p: Vec<f64>, center_q: Vec<f64>, sigma: f64) -> Result<Self> {
        check_support(&support, dim)?;
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(LabError::domain("levee width must be positive and finite"));
        }
        let n = support.len() * dim;
        if center_p.len() != n || center_q.len() != n {
            return Err(LabError::domain(format!("levee center needs {n} entries per part")));
        }
        Ok(Observable {
            support,
            dim,
            kind: ObservableKind::GaussianLevee { center_p, center_q, sigma },
            sup_norm: 1.0,
            grad_sup: (-0.5f64).exp() / sigma,
        })
    }

    /// Levee centered at the origin.
    pub fn centered_levee(support: SiteSet, dim: usize, sigma: f64) -> Result<Self> {
        let n = support.len() * dim;
        Self::gaussian_levee(support, dim, vec![0.0; n], vec![0.0; n], sigma)
    }

    pub fn coordinate_window(site: usize, dim: usize, variable: Variable, component: usize, sigma: f64) -> Result<Self> {
        if component >= dim {
            return Err(LabError::domain(format!("component {component} out of range for dimension {dim}")));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(LabError::domain("window width must be positive and finite"));
        }
        Ok(Observable {
            support: SiteSet::single(site),
            dim,
            kind: ObservableKind::CoordinateWindow { variable, component, sigma },
            sup_norm: sigma * (-0.5f64).exp(),
            grad_sup: 1.0,
        })
    }

    pub fn support(&self) -> &SiteSet {
        &self.support
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &ObservableKind {
        &self.kind
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    pub fn grad_sup(&self) -> f64 {
        self.grad_sup
    }

    /// `‖f‖_{C¹} = ‖f‖_∞ + sup ‖∇f‖₂`.
    pub fn c1_norm(&self) -> f64 {
        self.sup_norm + self.grad_sup
    }

    fn local(&self, s: &PhaseState) -> PhaseState {
        s.on_sites(&self.support)
    }

    pub fn value(&self, s: &PhaseState) -> f64 {
        let loc = self.local(s);
        match &self.kind {
            ObservableKind::Resolvent { dir_p, dir_q, lambda, part } => {
                let u = dot(dir_p, loc.p_flat()) + dot(dir_q, loc.q_flat());
                let den = u * u + lambda * lambda;
                match part {
                    ResolventPart::Real => -u / den,
                    ResolventPart::Imag => -lambda / den,
                }
            }
            ObservableKind::GaussianLevee { center_p, center_q, sigma } => {
                let r2 = dist2(loc.p_flat(), center_p) + dist2(loc.q_flat(), center_q);
                (-r2 / (2.0 * sigma * sigma)).exp()
            }
            ObservableKind::CoordinateWindow { variable, component, sigma } => {
                let u = window_coordinate(&loc, *variable, *component);
                u * (-u * u / (2.0 * sigma * sigma)).exp()
            }
        }
    }

    pub fn gradient(&self, s: &PhaseState) -> Gradient {
        let loc = self.local(s);
        let n = self.support.len() * self.dim;
        let mut grad = Gradient { sites: self.support.clone(), p: vec![0.0; n], q: vec![0.0; n] };
        match &self.kind {
            ObservableKind::Resolvent { dir_p, dir_q, lambda, part } => {
                let u = dot(dir_p, loc.p_flat()) + dot(dir_q, loc.q_flat());
                let den = u * u + lambda * lambda;
                let slope = match part {
                    ResolventPart::Real => (u * u - lambda * lambda) / (den * den),
                    ResolventPart::Imag => 2.0 * lambda * u / (den * den),
                };
                grad.p = dir_p.iter().map(|a| slope * a).collect();
                grad.q = dir_q.iter().map(|b| slope * b).collect();
            }
            ObservableKind::GaussianLevee { center_p, center_q, sigma } => {
                let s2 = sigma * sigma;
                let f = self.value(s);
                grad.p = loc.p_flat().iter().zip(center_p).map(|(x, c)| -(x - c) / s2 * f).collect();
                grad.q = loc.q_flat().iter().zip(center_q).map(|(x, c)| -(x - c) / s2 * f).collect();
            }
            ObservableKind::CoordinateWindow { variable, component, sigma } => {
                let u = window_coordinate(&loc, *variable, *component);
                let s2 = sigma * sigma;
                let slope = (1.0 - u * u / s2) * (-u * u / (2.0 * s2)).exp();
                match variable {
                    Variable::P => grad.p[*component] = slope,
                    Variable::Q => grad.q[*component] = slope,
                }
            }
        }
        grad
    }
}

fn window_coordinate(loc: &PhaseState, variable: Variable, component: usize) -> f64 {
    match variable {
        Variable::P => loc.p_flat()[component],
        Variable::Q => loc.q_flat()[component],
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `{F, G} = Σ ∂F/∂q · ∂G/∂p − ∂F/∂p · ∂G/∂q` for gradients on possibly
/// different supports.
pub fn bracket_of_gradients(df: &Gradient, dg: &Gradient, dim: usize) -> f64 {
    let mut acc = 0.0;
    for (i, site) in df.sites.iter().enumerate() {
        if let Some(j) = dg.sites.position(site) {
            for c in 0..dim {
                let (a, b) = (i * dim + c, j * dim + c);
                acc += df.q[a] * dg.p[b] - df.p[a] * dg.q[b];
            }
        }
    }
    acc
}

/// The canonical Poisson bracket `{f, g}(s)`.
pub fn poisson_bracket_static(f: &Observable, g: &Observable, s: &PhaseState) -> f64 {
    bracket_of_gradients(&f.gradient(s), &g.gradient(s), f.dim)
}

/// `{f, g}` of the product `f·g` with `h`, via the gradient of the product.
pub fn product_gradient(f: &Observable, g: &Observable, s: &PhaseState) -> Gradient {
    let sites = f.support.union(&g.support);
    let all = s.on_sites(&sites);
    let (fv, gv) = (f.value(s), g.value(s));
    let spread = |grad: &Gradient| {
        let mut out = Gradient { sites: sites.clone(), p: vec![0.0; all.p_flat().len()], q: vec![0.0; all.q_flat().len()] };
        for (i, site) in grad.sites.iter().enumerate() {
            let j = sites.position(site).unwrap();
            for c in 0..f.dim {
                out.p[j * f.dim + c] = grad.p[i * f.dim + c];
                out.q[j * f.dim + c] = grad.q[i * f.dim + c];
            }
        }
        out
    };
    let (a, b) = (spread(&f.gradient(s).scaled(gv)), spread(&g.gradient(s).scaled(fv)));
    Gradient { sites, p: a.p.iter().zip(&b.p).map(|(x, y)| x + y).collect(), q: a.q.iter().zip(&b.q).map(|(x, y)| x + y).collect() }
}

/// `{α_t(f), g}(s₀)` from the state `Φ_t(s₀)` and the Jacobian columns seeded at
/// the support of `g`:
/// `Σ_{j∈Y, k∈X} ∇_q f·X_kj·∂g/∂p_j + ∇_p f·Y_kj·∂g/∂p_j − ∇_q f·Z_kj·∂g/∂q_j − ∇_p f·W_kj·∂g/∂q_j`.
pub fn bracket_from_jacobian(f: &Observable, g: &Observable, s0: &PhaseState, state_t: &PhaseState, blocks: &JacobianBlocks, n: usize) -> Result<f64> {
    let d = f.dim;
    let (sites, seeds) = (blocks.sites(), blocks.seeds());
    if !g.support.is_subset(seeds) {
        return Err(LabError::domain("Jacobian seeds must cover the support of g"));
    }
    if !f.support.is_subset(sites) {
        return Err(LabError::domain("the region must contain the support of f"));
    }
    let df = f.gradient(state_t);
    let dg = g.gradient(s0);
    let m = blocks.matrix(n);
    let nd = sites.len() * d;
    let nj = seeds.len() * d;
    let mut acc = 0.0;
    for (jy, j) in g.support.iter().enumerate() {
        let col_j = seeds.position(j).unwrap();
        for c in 0..d {
            let (gp, gq) = (dg.p[jy * d + c], dg.q[jy * d + c]);
            let (qcol, pcol) = (col_j * d + c, nj + col_j * d + c);
            // ∂(f∘Φ_t)/∂q₀ and ∂(f∘Φ_t)/∂p₀ for this column
            let (mut dq0, mut dp0) = (0.0, 0.0);
            for (kx, k) in f.support.iter().enumerate() {
                let row_k = sites.position(k).unwrap();
                for a in 0..d {
                    let (fq, fp) = (df.q[kx * d + a], df.p[kx * d + a]);
                    let (rq, rp) = (row_k * d + a, nd + row_k * d + a);
                    dq0 += fq * m[(rq, qcol)] + fp * m[(rp, qcol)];
                    dp0 += fq * m[(rq, pcol)] + fp * m[(rp, pcol)];
                }
            }
            acc += dq0 * gp - dp0 * gq;
        }
    }
    Ok(acc)
}

/// `{α_t(f), g}(s₀)` at each requested time, using one forward and one backward
/// variational run with seeds on the support of `g`.
pub fn evolved_bracket_at_times(
    model: &LatticeModel,
    region: &SiteSet,
    f: &Observable,
    g: &Observable,
    times: &[f64],
    s0: &PhaseState,
    opts: &FlowOptions,
) -> Result<Vec<f64>> {
    if !f.support.is_subset(region) || !g.support.is_subset(region) {
        return Err(LabError::domain("observable supports must lie inside the region"));
    }
    let s0 = s0.on_sites(region);
    let (states, blocks) = variational_at_times(model, region, &s0, &g.support, times, opts)?;
    (0..times.len()).map(|n| bracket_from_jacobian(f, g, &s0, &states[n], &blocks, n)).collect()
}

pub fn evolved_bracket(model: &LatticeModel, region: &SiteSet, f: &Observable, g: &Observable, t: f64, s0: &PhaseState, opts: &FlowOptions) -> Result<f64> {
    Ok(evolved_bracket_at_times(model, region, f, g, &[t], s0, opts)?[0])
}

/// Interprets a flat point `[q; p]` as a state on `sites`.
pub fn state_from_point(sites: &SiteSet, dim: usize, x: &[f64]) -> PhaseState {
    let nd = sites.len() * dim;
    debug_assert_eq!(x.len(), 2 * nd);
    let mut s = PhaseState::zeros(sites.clone(), dim);
    s.q_flat_mut().copy_from_slice(&x[..nd]);
    s.p_flat_mut().copy_from_slice(&x[nd..]);
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::flow_at_times;
    use crate::lattice::{DecayFunction, Lattice};
    use crate::potential::PotentialShape;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random_state(sites: SiteSet, dim: usize, seed: u64, scale: f64) -> PhaseState {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = sites.len() * dim;
        let p = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
        let q = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
        PhaseState::from_parts(sites, dim, p, q).unwrap()
    }

    fn zoo(dim: usize) -> Vec<Observable> {
        vec![
            Observable::resolvent(SiteSet::new([0, 2]), dim, vec![0.3; 2 * dim], vec![-0.5; 2 * dim], 0.7, ResolventPart::Real).unwrap(),
            Observable::resolvent(SiteSet::single(1), dim, vec![1.0; dim], vec![0.4; dim], -1.3, ResolventPart::Imag).unwrap(),
            Observable::gaussian_levee(SiteSet::new([1, 2]), dim, vec![0.1; 2 * dim], vec![-0.2; 2 * dim], 0.8).unwrap(),
            Observable::centered_levee(SiteSet::single(3), dim, 1.1).unwrap(),
            Observable::coordinate_window(2, dim, Variable::Q, dim - 1, 0.9).unwrap(),
            Observable::coordinate_window(0, dim, Variable::P, 0, 1.4).unwrap(),
        ]
    }

    fn fd_gradient(f: &Observable, s: &PhaseState, h: f64) -> Gradient {
        let n = f.support().len() * f.dim();
        let mut g = Gradient { sites: f.support().clone(), p: vec![0.0; n], q: vec![0.0; n] };
        for (i, site) in f.support().iter().enumerate() {
            for c in 0..f.dim() {
                for which in [Variable::P, Variable::Q] {
                    let bump = |sign: f64| {
                        let mut t = s.clone();
                        match which {
                            Variable::P => t.p_mut(site).unwrap()[c] += sign * h,
                            Variable::Q => t.q_mut(site).unwrap()[c] += sign * h,
                        }
                        f.value(&t)
                    };
                    let v = (bump(1.0) - bump(-1.0)) / (2.0 * h);
                    match which {
                        Variable::P => g.p[i * f.dim() + c] = v,
                        Variable::Q => g.q[i * f.dim() + c] = v,
                    }
                }
            }
        }
        g
    }

    #[test]
    fn resolvent_examples() {
        let x = SiteSet::single(0);
        let im = Observable::resolvent(x.clone(), 1, vec![1.0], vec![1.0], 2.0, ResolventPart::Imag).unwrap();
        let re = Observable::resolvent(x.clone(), 1, vec![1.0], vec![1.0], 2.0, ResolventPart::Real).unwrap();
        let s = PhaseState::from_parts(x.clone(), 1, vec![0.5], vec![-0.5]).unwrap();
        assert_eq!(im.value(&s), -0.5);
        assert_eq!(re.value(&s), 0.0);
        assert!(Observable::resolvent(x, 1, vec![1.0], vec![0.0], 0.0, ResolventPart::Real).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let sites = SiteSet::range(0..4);
        for dim in [1, 2] {
            for seed in 0..50 {
                let s = random_state(sites.clone(), dim, seed, 1.5);
                for f in zoo(dim) {
                    let exact = f.gradient(&s);
                    let fd = fd_gradient(&f, &s, 1e-6);
                    for (a, b) in exact.p.iter().chain(&exact.q).zip(fd.p.iter().chain(&fd.q)) {
                        assert!((a - b).abs() <= 1e-6 * a.abs().max(1e-2), "{:?}: {a} vs {b}", f.kind());
                    }
                }
            }
        }
    }

    #[test]
    fn levee_examples() {
        let f = Observable::centered_levee(SiteSet::single(2), 1, 1.0).unwrap();
        assert_eq!(f.value(&PhaseState::zeros(SiteSet::range(0..4), 1)), 1.0);
        assert!((f.grad_sup() - 0.6065306597126334).abs() < 1e-16);
        // max of r·e^{−r²/2} by a fine scan
        let scan = (0..200001).map(|i| i as f64 * 1e-5 * 3.0).map(|r| r * (-r * r / 2.0).exp()).fold(0.0, f64::max);
        assert!((scan - f.grad_sup()).abs() < 1e-9);
        let mut s = random_state(SiteSet::range(0..4), 1, 3, 1.0);
        let before = f.value(&s);
        s.q_mut(0).unwrap()[0] += 0.7;
        s.p_mut(3).unwrap()[0] -= 0.2;
        assert_eq!(f.value(&s), before);
        assert!(Observable::centered_levee(SiteSet::single(0), 1, 0.0).is_err());
    }

    #[test]
    fn certified_norms_dominate_samples() {
        let sites = SiteSet::range(0..4);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for dim in [1, 2] {
            let fs = zoo(dim);
            for _ in 0..10_000 {
                let scale = rng.gen_range(0.05..4.0);
                let s = random_state(sites.clone(), dim, rng.gen(), scale);
                for f in &fs {
                    let sampled = f.value(&s).abs() + f.gradient(&s).norm();
                    assert!(sampled <= f.c1_norm() * (1.0 + 1e-12));
                    assert!(f.value(&s).abs() <= f.sup_norm() * (1.0 + 1e-12));
                    assert!(f.gradient(&s).norm() <= f.grad_sup() * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn static_bracket_examples() {
        let sites = SiteSet::range(0..4);
        let s = random_state(sites.clone(), 1, 1, 1.0);
        for f in zoo(1) {
            assert_eq!(poisson_bracket_static(&f, &f, &s), 0.0);
        }
        let a = Observable::centered_levee(SiteSet::single(0), 1, 1.0).unwrap();
        let b = Observable::centered_levee(SiteSet::single(3), 1, 1.0).unwrap();
        assert_eq!(poisson_bracket_static(&a, &b, &s), 0.0);
        // {φ(p), φ(q)} = −φ'(p) φ'(q) with φ(u) = u e^{−u²/2σ²}
        let f = Observable::coordinate_window(0, 1, Variable::P, 0, 1.0).unwrap();
        let g = Observable::coordinate_window(0, 1, Variable::Q, 0, 1.0).unwrap();
        let one = PhaseState::from_parts(SiteSet::single(0), 1, vec![0.4], vec![-1.2]).unwrap();
        let dphi = |u: f64| (1.0 - u * u) * (-u * u / 2.0).exp();
        assert!((poisson_bracket_static(&f, &g, &one) + dphi(0.4) * dphi(-1.2)).abs() < 1e-15);
    }

    #[test]
    fn leibniz_rule() {
        let sites = SiteSet::range(0..4);
        let fs = zoo(1);
        for seed in 0..100 {
            let s = random_state(sites.clone(), 1, seed, 1.2);
            for (f, g, h) in [(&fs[0], &fs[2], &fs[4]), (&fs[1], &fs[3], &fs[0]), (&fs[5], &fs[4], &fs[2])] {
                let lhs = bracket_of_gradients(&product_gradient(f, g, &s), &h.gradient(&s), 1);
                let rhs = f.value(&s) * poisson_bracket_static(g, h, &s) + poisson_bracket_static(f, h, &s) * g.value(&s);
                assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1e-3));
            }
        }
    }

    fn chain(n: usize) -> LatticeModel {
        LatticeModel::builder(Lattice::chain(n), DecayFunction::power_law(2.0).unwrap(), 1)
            .potential(PotentialShape::Bump, 1.0, 1.5)
            .r_cut(2.0)
            .build()
            .unwrap()
    }

    #[test]
    fn evolved_bracket_at_time_zero() {
        let model = chain(5);
        let all = model.lattice().sites();
        let opts = FlowOptions::default();
        let s = random_state(all.clone(), 1, 4, 1.0);
        let f = Observable::centered_levee(SiteSet::single(1), 1, 1.0).unwrap();
        let g = Observable::centered_levee(SiteSet::single(3), 1, 1.0).unwrap();
        assert_eq!(evolved_bracket(&model, &all, &f, &g, 0.0, &s, &opts).unwrap(), 0.0);
        assert_eq!(evolved_bracket(&model, &all, &f, &f, 0.0, &s, &opts).unwrap(), 0.0);
        let fs = zoo(1);
        for (a, b) in [(&fs[0], &fs[2]), (&fs[4], &fs[5]), (&fs[1], &fs[2])] {
            let evolved = evolved_bracket(&model, &all, a, b, 0.0, &s, &opts).unwrap();
            let fixed = poisson_bracket_static(a, b, &s);
            assert!((evolved - fixed).abs() <= 1e-10);
        }
    }

    #[test]
    fn evolved_bracket_matches_a_finite_difference_oracle() {
        let model = chain(5);
        let all = model.lattice().sites();
        let opts = FlowOptions::default();
        let f = Observable::gaussian_levee(SiteSet::single(1), 1, vec![0.2], vec![-0.1], 0.9).unwrap();
        let g = Observable::resolvent(SiteSet::new([2, 3]), 1, vec![0.5, -0.3], vec![1.0, 0.2], 0.8, ResolventPart::Real).unwrap();
        for seed in 0..5 {
            let s0 = random_state(all.clone(), 1, seed, 0.9);
            let times = [0.7, -1.1, 1.8];
            let brackets = evolved_bracket_at_times(&model, &all, &f, &g, &times, &s0, &opts).unwrap();
            let dg = g.gradient(&s0);
            let eps = 1e-5;
            let shifted = |sign: f64| {
                let mut s = s0.clone();
                for (i, site) in g.support().iter().enumerate() {
                    s.q_mut(site).unwrap()[0] += sign * eps * dg.p[i];
                    s.p_mut(site).unwrap()[0] -= sign * eps * dg.q[i];
                }
                flow_at_times(&model, &all, &s, &times, &opts).unwrap()
            };
            let (plus, minus) = (shifted(1.0), shifted(-1.0));
            for n in 0..times.len() {
                let fd = (f.value(&plus[n]) - f.value(&minus[n])) / (2.0 * eps);
                assert!((brackets[n] - fd).abs() <= 1e-3 * fd.abs().max(1e-4), "t = {}: {} vs {fd}", times[n], brackets[n]);
            }
        }
    }

    #[test]
    fn evolved_bracket_ignores_coordinates_outside_the_region() {
        let model = chain(7);
        let region = SiteSet::range(0..5);
        let f = Observable::centered_levee(SiteSet::single(1), 1, 1.0).unwrap();
        let g = Observable::centered_levee(SiteSet::single(3), 1, 1.0).unwrap();
        let s = random_state(model.lattice().sites(), 1, 6, 1.0);
        let mut moved = s.clone();
        moved.q_mut(6).unwrap()[0] += 0.8;
        moved.p_mut(5).unwrap()[0] -= 0.4;
        let opts = FlowOptions::default();
        let a = evolved_bracket(&model, &region, &f, &g, 1.0, &s, &opts).unwrap();
        let b = evolved_bracket(&model, &region, &f, &g, 1.0, &moved, &opts).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn bracket_is_bilinear_and_antisymmetric(seed in 0u64..10_000, a in -2.0f64..2.0) {
            let sites = SiteSet::range(0..4);
            let s = random_state(sites, 2, seed, 1.5);
            let fs = zoo(2);
            for f in &fs {
                for g in &fs {
                    let fg = poisson_bracket_static(f, g, &s);
                    prop_assert!((fg + poisson_bracket_static(g, f, &s)).abs() <= 1e-15);
                    let scaled = bracket_of_gradients(&f.gradient(&s).scaled(a), &g.gradient(&s), 2);
                    prop_assert!((scaled - a * fg).abs() <= 1e-13 * fg.abs().max(1.0));
                }
            }
            let (f, g, h) = (&fs[0], &fs[2], &fs[4]);
            let (df, dg, dh) = (f.gradient(&s), g.gradient(&s), h.gradient(&s));
            let sum = bracket_of_gradients(&df, &dh, 2) + bracket_of_gradients(&dg, &dh, 2);
            let sites = df.sites.union(&dg.sites);
            let spread = |grad: &Gradient| {
                let mut out = Gradient { sites: sites.clone(), p: vec![0.0; sites.len() * 2], q: vec![0.0; sites.len() * 2] };
                for (i, site) in grad.sites.iter().enumerate() {
                    let j = sites.position(site).unwrap();
                    for c in 0..2 {
                        out.p[j * 2 + c] += grad.p[i * 2 + c];
                        out.q[j * 2 + c] += grad.q[i * 2 + c];
                    }
                }
                out
            };
            let (a_, b_) = (spread(&df), spread(&dg));
            let total = Gradient { sites: sites.clone(), p: a_.p.iter().zip(&b_.p).map(|(x, y)| x + y).collect(), q: a_.q.iter().zip(&b_.q).map(|(x, y)| x + y).collect() };
            prop_assert!((bracket_of_gradients(&total, &dh, 2) - sum).abs() <= 1e-14);
        }
    }
}
