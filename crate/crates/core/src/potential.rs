//! Radial pair potentials `V(x) = c·g(‖x‖²/R²)` with compact support `‖x‖ < R`,
//! closed-form gradients and Hessians, and grid certification of the geometric
//! derivative bounds `‖∂^β V‖_∞ ≤ C_kl · C_V^{|β|}`.

use std::collections::HashMap;
use std::ops::{Add, Mul};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Highest derivative order the certifier accepts.
pub const MAX_CERTIFIED_ORDER: usize = 6;

/// Terms kept in the power series of `cos(π√s)`; the tail is below `π^60/60!`.
const COS_SERIES_TERMS: usize = 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum PotentialShape {
    /// `g(s) = exp(−1/(1−s))`
    Bump,
    /// `g(s) = ½(1 + cos(π√s)) · exp(1 − 1/(1−s))`, a cos² window made C^∞ at the edge.
    CosineWindow,
    Zero,
    /// Piecewise-linear radial profile through `(radii[i], values[i])`, zero past the
    /// last node. Continuous but not smooth.
    Tabulated { radii: Vec<f64>, values: Vec<f64> },
}

impl PotentialShape {
    pub fn name(&self) -> &'static str {
        match self {
            PotentialShape::Bump => "bump",
            PotentialShape::CosineWindow => "cosine-window",
            PotentialShape::Zero => "zero",
            PotentialShape::Tabulated { .. } => "tabulated",
        }
    }

    pub fn is_smooth(&self) -> bool {
        !matches!(self, PotentialShape::Tabulated { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairPotential {
    pub shape: PotentialShape,
    pub amplitude: f64,
    pub support_radius: f64,
    pub dim: usize,
}

impl PairPotential {
    pub fn new(shape: PotentialShape, amplitude: f64, support_radius: f64, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(LabError::domain("potential dimension must be positive"));
        }
        if !amplitude.is_finite() {
            return Err(LabError::domain("potential amplitude must be finite"));
        }
        if !(support_radius > 0.0) || !support_radius.is_finite() {
            return Err(LabError::domain("support radius must be positive and finite"));
        }
        if let PotentialShape::Tabulated { radii, values } = &shape {
            if radii.len() < 2 || radii.len() != values.len() {
                return Err(LabError::domain("tabulated potential needs at least two matching nodes"));
            }
            if radii[0] != 0.0 || radii.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(LabError::domain("tabulated radii must start at 0 and increase"));
            }
            if *radii.last().unwrap() > support_radius || *values.last().unwrap() != 0.0 {
                return Err(LabError::domain(
                    "tabulated potential must reach 0 at or before the support radius",
                ));
            }
        }
        Ok(PairPotential { shape, amplitude, support_radius, dim })
    }

    pub fn bump(amplitude: f64, support_radius: f64, dim: usize) -> Result<Self> {
        Self::new(PotentialShape::Bump, amplitude, support_radius, dim)
    }

    pub fn cosine_window(amplitude: f64, support_radius: f64, dim: usize) -> Result<Self> {
        Self::new(PotentialShape::CosineWindow, amplitude, support_radius, dim)
    }

    pub fn zero(dim: usize) -> Self {
        PairPotential { shape: PotentialShape::Zero, amplitude: 0.0, support_radius: 1.0, dim }
    }

    pub fn is_zero(&self) -> bool {
        self.shape == PotentialShape::Zero || self.amplitude == 0.0
    }

    /// Every built-in shape is radial, hence `V(x) = V(−x)`.
    pub fn is_even(&self) -> bool {
        true
    }

    pub fn scaled(&self, factor: f64) -> Self {
        PairPotential { amplitude: self.amplitude * factor, ..self.clone() }
    }

    fn scaled_radius2(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        x.iter().map(|v| v * v).sum::<f64>() / (self.support_radius * self.support_radius)
    }

    /// `c·(g, g', g'')` at `s = ‖x‖²/R²`; zero outside the support.
    fn radial(&self, s: f64) -> [f64; 3] {
        if self.is_zero() || s >= 1.0 {
            return [0.0; 3];
        }
        let c = self.amplitude;
        match &self.shape {
            PotentialShape::Zero => [0.0; 3],
            PotentialShape::Bump => {
                let u = 1.0 / (1.0 - s);
                let g = (-u).exp();
                let u2 = u * u;
                [c * g, -c * u2 * g, c * g * (u2 * u2 - 2.0 * u2 * u)]
            }
            PotentialShape::CosineWindow => {
                let j = cosine_window_jet::<3>(s);
                [c * j.0[0], c * j.0[1], 2.0 * c * j.0[2]]
            }
            PotentialShape::Tabulated { .. } => unreachable!("tabulated profiles are not functions of s"),
        }
    }

    /// Tabulated value and slope in `r = ‖x‖`.
    fn tabulated(&self, r: f64) -> (f64, f64) {
        let PotentialShape::Tabulated { radii, values } = &self.shape else {
            unreachable!()
        };
        if r >= *radii.last().unwrap() {
            return (0.0, 0.0);
        }
        let hi = radii.partition_point(|&x| x <= r);
        let lo = hi - 1;
        let slope = (values[hi] - values[lo]) / (radii[hi] - radii[lo]);
        let v = values[lo] + slope * (r - radii[lo]);
        (self.amplitude * v, self.amplitude * slope)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        if let PotentialShape::Tabulated { .. } = self.shape {
            return self.tabulated(norm(x)).0;
        }
        self.radial(self.scaled_radius2(x))[0]
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        self.gradient_into(x, &mut g);
        g
    }

    pub fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let mut h = vec![0.0; self.dim * self.dim];
        self.hessian_into(x, &mut h);
        DMatrix::from_row_slice(self.dim, self.dim, &h)
    }

    /// Writes `∇V(x)` into `out`.
    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        if let PotentialShape::Tabulated { .. } = self.shape {
            let r = norm(x);
            let (_, dv) = self.tabulated(r);
            for (o, xi) in out.iter_mut().zip(x) {
                *o = if r > 0.0 { dv * xi / r } else { 0.0 };
            }
            return;
        }
        let r2 = self.support_radius * self.support_radius;
        let [_, g1, _] = self.radial(self.scaled_radius2(x));
        let k = 2.0 * g1 / r2;
        for (o, xi) in out.iter_mut().zip(x) {
            *o = k * xi;
        }
    }

    /// Writes the row-major `d×d` Hessian of `V` at `x` into `out`.
    pub fn hessian_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        if let PotentialShape::Tabulated { .. } = self.shape {
            // Piecewise linear in r: only the tangential curvature survives.
            let r = norm(x);
            let (_, dv) = self.tabulated(r);
            for i in 0..d {
                for j in 0..d {
                    out[i * d + j] = if r > 0.0 {
                        let delta = if i == j { 1.0 } else { 0.0 };
                        dv / r * (delta - (x[i] * x[j]) / (r * r))
                    } else {
                        0.0
                    };
                }
            }
            return;
        }
        let r2 = self.support_radius * self.support_radius;
        let [_, g1, g2] = self.radial(self.scaled_radius2(x));
        let a = 4.0 * g2 / (r2 * r2);
        let b = 2.0 * g1 / r2;
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = a * (x[i] * x[j]) + if i == j { b } else { 0.0 };
            }
        }
    }

    /// Grid certificate of the derivative bounds up to `max_order`.
    pub fn certify(&self, max_order: usize) -> Result<DerivativeCertificate> {
        certify_derivative_bounds(self, max_order)
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Truncated Taylor series `Σ a_k (s − s₀)^k`, stored as `[a_0, …, a_{N−1}]`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Jet<const N: usize>([f64; N]);

impl<const N: usize> Jet<N> {
    fn constant(c: f64) -> Self {
        let mut a = [0.0; N];
        a[0] = c;
        Jet(a)
    }

    fn variable(s0: f64) -> Self {
        let mut a = [0.0; N];
        a[0] = s0;
        if N > 1 {
            a[1] = 1.0;
        }
        Jet(a)
    }

    fn scale(self, k: f64) -> Self {
        Jet(self.0.map(|v| v * k))
    }

    fn recip(self) -> Self {
        let a = self.0;
        let mut b = [0.0; N];
        b[0] = 1.0 / a[0];
        for k in 1..N {
            let s: f64 = (1..=k).map(|j| a[j] * b[k - j]).sum();
            b[k] = -s * b[0];
        }
        Jet(b)
    }

    fn exp(self) -> Self {
        let a = self.0;
        let mut b = [0.0; N];
        b[0] = a[0].exp();
        for k in 1..N {
            let s: f64 = (1..=k).map(|j| j as f64 * a[j] * b[k - j]).sum();
            b[k] = s / k as f64;
        }
        Jet(b)
    }
}

impl<const N: usize> Add for Jet<N> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let mut a = self.0;
        for (x, y) in a.iter_mut().zip(o.0) {
            *x += y;
        }
        Jet(a)
    }
}

impl<const N: usize> Mul for Jet<N> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut c = [0.0; N];
        for i in 0..N {
            if self.0[i] == 0.0 {
                continue;
            }
            for j in 0..N - i {
                c[i + j] += self.0[i] * o.0[j];
            }
        }
        Jet(c)
    }
}

fn bump_jet<const N: usize>(s0: f64) -> Jet<N> {
    let one_minus = Jet::constant(1.0) + Jet::variable(s0).scale(-1.0);
    one_minus.recip().scale(-1.0).exp()
}

fn cosine_window_jet<const N: usize>(s0: f64) -> Jet<N> {
    let s = Jet::<N>::variable(s0);
    // cos(π√s) = Σ (−1)^n π^{2n} s^n / (2n)!
    let pi2 = std::f64::consts::PI * std::f64::consts::PI;
    let mut coeffs = [0.0; COS_SERIES_TERMS];
    coeffs[0] = 1.0;
    for n in 1..COS_SERIES_TERMS {
        coeffs[n] = -coeffs[n - 1] * pi2 / ((2 * n - 1) * (2 * n)) as f64;
    }
    let mut cos = Jet::constant(coeffs[COS_SERIES_TERMS - 1]);
    for &c in coeffs[..COS_SERIES_TERMS - 1].iter().rev() {
        cos = cos * s + Jet::constant(c);
    }
    let window = (cos + Jet::constant(1.0)).scale(0.5);
    let one_minus = Jet::constant(1.0) + s.scale(-1.0);
    let edge = (Jet::constant(1.0) + one_minus.recip().scale(-1.0)).exp();
    window * edge
}

fn profile_jet<const N: usize>(shape: &PotentialShape, s0: f64) -> Jet<N> {
    match shape {
        PotentialShape::Bump => bump_jet(s0),
        PotentialShape::CosineWindow => cosine_window_jet(s0),
        PotentialShape::Zero | PotentialShape::Tabulated { .. } => Jet::constant(0.0),
    }
}

/// Result of certifying `‖∂^β V‖_∞ ≤ C_kl · C_V^{|β|}` on a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivativeCertificate {
    pub c_kl: f64,
    /// Smallest `C_V` consistent with every order up to `max_order`.
    pub c_v: f64,
    /// Smallest `C_V` consistent with orders 1 and 2 only; this is the value used
    /// in every downstream formula.
    pub c_v_order2: f64,
    pub max_order: usize,
    /// `sup_by_order[n]` is the grid sup of `|∂^β V|` over `|β| = n`.
    pub sup_by_order: Vec<f64>,
    pub grid_points_per_axis: usize,
    /// The grid covers `[0, R]^d`; reflection symmetry extends it to `[−R, R]^d`.
    pub grid_extent: f64,
}

impl DerivativeCertificate {
    pub fn zero(max_order: usize) -> Self {
        DerivativeCertificate {
            c_kl: 0.0,
            c_v: 0.0,
            c_v_order2: 0.0,
            max_order,
            sup_by_order: vec![0.0; max_order + 1],
            grid_points_per_axis: 0,
            grid_extent: 0.0,
        }
    }

    /// The same certificate for the potential multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let f = factor.abs();
        DerivativeCertificate {
            c_kl: self.c_kl * f,
            sup_by_order: self.sup_by_order.iter().map(|v| v * f).collect(),
            ..self.clone()
        }
    }
}

fn grid_points_per_axis(dim: usize) -> usize {
    match dim {
        1 => 4001,
        2 => 201,
        3 => 51,
        _ => 11,
    }
}

/// Monomials in `d` variables of total degree at most `k`, with the index maps
/// needed to multiply by `δ_j` and `δ_j²`.
struct MonomialTable {
    degree: Vec<usize>,
    factorial: Vec<f64>,
    times_linear: Vec<Vec<Option<usize>>>,
    times_square: Vec<Vec<Option<usize>>>,
}

impl MonomialTable {
    fn new(d: usize, k: usize) -> Self {
        let mut exps: Vec<Vec<usize>> = vec![vec![0; d]];
        let mut frontier = exps.clone();
        for _ in 0..k {
            let mut next = Vec::new();
            for e in &frontier {
                // Only raise variables at or after the last nonzero one, so every
                // monomial is produced exactly once.
                let start = e.iter().rposition(|&v| v > 0).unwrap_or(0);
                for j in start..d {
                    let mut f = e.clone();
                    f[j] += 1;
                    next.push(f);
                }
            }
            exps.extend(next.iter().cloned());
            frontier = next;
        }
        let index: HashMap<Vec<usize>, usize> =
            exps.iter().enumerate().map(|(i, e)| (e.clone(), i)).collect();
        let shifted = |e: &Vec<usize>, j: usize, by: usize| {
            let mut f = e.clone();
            f[j] += by;
            index.get(&f).copied()
        };
        MonomialTable {
            degree: exps.iter().map(|e| e.iter().sum()).collect(),
            factorial: exps
                .iter()
                .map(|e| e.iter().map(|&n| (1..=n).product::<usize>() as f64).product())
                .collect(),
            times_linear: exps.iter().map(|e| (0..d).map(|j| shifted(e, j, 1)).collect()).collect(),
            times_square: exps.iter().map(|e| (0..d).map(|j| shifted(e, j, 2)).collect()).collect(),
        }
    }

    fn len(&self) -> usize {
        self.degree.len()
    }
}

/// Certifies `‖∂^β V‖_∞ ≤ C_kl · C_V^{|β|}` for `|β| ≤ max_order` on a dense grid.
///
/// At each grid point `x₀` the Taylor coefficients of `V(x₀ + δ)` are obtained by
/// composing the profile's Taylor series in `s` with the polynomial
/// `s(x₀ + δ) − s(x₀) = (2x₀·δ + ‖δ‖²)/R²`; then `∂^β V(x₀) = β!·coef_β`.
/// `C_kl` is the sup of `|V|` and `C_V = max_n (M_n / M_0)^{1/n}`.
pub fn certify_derivative_bounds(v: &PairPotential, max_order: usize) -> Result<DerivativeCertificate> {
    if !(2..=MAX_CERTIFIED_ORDER).contains(&max_order) {
        return Err(LabError::domain(format!(
            "certification order must lie in 2..={MAX_CERTIFIED_ORDER}, got {max_order}"
        )));
    }
    if !v.shape.is_smooth() {
        return Err(LabError::Unsupported(format!(
            "derivative bounds of the non-smooth {} potential cannot be certified",
            v.shape.name()
        )));
    }
    if v.is_zero() {
        return Ok(DerivativeCertificate::zero(max_order));
    }

    let d = v.dim;
    let r = v.support_radius;
    let r2 = r * r;
    let points = grid_points_per_axis(d);
    let table = MonomialTable::new(d, max_order);
    let mut sup = vec![0.0f64; max_order + 1];
    let mut acc = vec![0.0; table.len()];
    let mut power = vec![0.0; table.len()];
    let mut next = vec![0.0; table.len()];
    let mut idx = vec![0usize; d];
    let step = r / (points - 1) as f64;

    loop {
        let x0: Vec<f64> = idx.iter().map(|&i| i as f64 * step).collect();
        let s0 = x0.iter().map(|x| x * x).sum::<f64>() / r2;
        if s0 < 1.0 {
            let g: Jet<{ MAX_CERTIFIED_ORDER + 1 }> = profile_jet(&v.shape, s0);
            acc.fill(0.0);
            power.fill(0.0);
            acc[0] = g.0[0];
            power[0] = 1.0;
            for k in 1..=max_order {
                next.fill(0.0);
                for (m, &p) in power.iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    for j in 0..d {
                        if let Some(t) = table.times_linear[m][j] {
                            next[t] += p * 2.0 * x0[j] / r2;
                        }
                        if let Some(t) = table.times_square[m][j] {
                            next[t] += p / r2;
                        }
                    }
                }
                std::mem::swap(&mut power, &mut next);
                for (a, p) in acc.iter_mut().zip(&power) {
                    *a += g.0[k] * p;
                }
            }
            for m in 0..table.len() {
                let n = table.degree[m];
                let deriv = (table.factorial[m] * acc[m] * v.amplitude).abs();
                if deriv > sup[n] {
                    sup[n] = deriv;
                }
            }
        }
        // odometer over the grid
        let mut axis = 0;
        while axis < d {
            idx[axis] += 1;
            if idx[axis] < points {
                break;
            }
            idx[axis] = 0;
            axis += 1;
        }
        if axis == d {
            break;
        }
    }

    let c_kl = sup[0];
    let ratio = |n: usize| (sup[n] / c_kl).powf(1.0 / n as f64);
    let c_v = (1..=max_order).map(ratio).fold(0.0, f64::max);
    let c_v_order2 = (1..=2).map(ratio).fold(0.0, f64::max);
    Ok(DerivativeCertificate {
        c_kl,
        c_v,
        c_v_order2,
        max_order,
        sup_by_order: sup,
        grid_points_per_axis: points,
        grid_extent: r,
    })
}
