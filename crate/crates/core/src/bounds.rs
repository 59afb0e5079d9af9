//! Constants and envelopes on the bound side: `C₀`, its `μ`-weighted variant
//! `C_μ`, the Dyson partial sums and their cosh/sinh limits, the Lieb-Robinson
//! right-hand side and the light-cone bound optimized over `μ`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dynamics::BlockKind;
use crate::error::{LabError, Result};
use crate::lattice::{convolution_constant, norm_f, SiteSet};
use crate::model::{validate_assumptions, LatticeModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    /// `‖m⁻¹‖_∞` on the region.
    pub inv_mass_sup: f64,
    /// `‖ν‖_∞` on the region.
    pub nu_sup: f64,
    pub dim: usize,
    pub c_v: f64,
    /// `‖Ψ‖`, or `‖Ψ‖_μ` when `mu` is set.
    pub psi_norm: f64,
    /// `‖F‖`, or `‖F_μ‖` when `mu` is set.
    pub f_norm: f64,
    /// `‖F‖` of the unweighted decay function.
    pub base_f_norm: f64,
    pub c_f: f64,
    /// `C₀`, or `C_μ` when `mu` is set.
    pub c0: f64,
    pub mu: Option<f64>,
    /// How each ingredient was obtained.
    pub provenance: BTreeMap<String, String>,
}

/// `‖m⁻¹‖_∞ · max{‖ν‖_∞ + d C_V² ‖Ψ‖ ‖F‖, d C_V² ‖Ψ‖ C_F, 1}`.
pub fn c0_formula(inv_mass_sup: f64, nu_sup: f64, dim: usize, c_v: f64, psi_norm: f64, f_norm: f64, c_f: f64) -> f64 {
    let coupling = dim as f64 * c_v * c_v * psi_norm;
    inv_mass_sup * (nu_sup + coupling * f_norm).max(coupling * c_f).max(1.0)
}

impl BoundConstants {
    /// Assembles constants from explicit ingredients, e.g. from a constants dump.
    pub fn from_ingredients(inv_mass_sup: f64, nu_sup: f64, dim: usize, c_v: f64, psi_norm: f64, f_norm: f64, c_f: f64) -> Result<Self> {
        let all = [inv_mass_sup, nu_sup, c_v, psi_norm, f_norm, c_f];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(LabError::domain("bound ingredients must be finite and nonnegative"));
        }
        let mut provenance = BTreeMap::new();
        provenance.insert("all".to_string(), "supplied explicitly".to_string());
        Ok(BoundConstants {
            inv_mass_sup,
            nu_sup,
            dim,
            c_v,
            psi_norm,
            f_norm,
            base_f_norm: f_norm,
            c_f,
            c0: c0_formula(inv_mass_sup, nu_sup, dim, c_v, psi_norm, f_norm, c_f),
            mu: None,
            provenance,
        })
    }

    pub fn sqrt_c0(&self) -> f64 {
        self.c0.sqrt()
    }

    /// Recomputes `C₀` from the stored ingredients.
    pub fn recompute(&self) -> f64 {
        c0_formula(self.inv_mass_sup, self.nu_sup, self.dim, self.c_v, self.psi_norm, self.f_norm, self.c_f)
    }
}

/// Computes `C₀` and all its ingredients on `Λ`. Refuses with the assumption report
/// if any standing assumption fails.
pub fn compute_c0(model: &LatticeModel, region: &SiteSet) -> Result<BoundConstants> {
    let report = validate_assumptions(model, region);
    if !report.passed() {
        return Err(LabError::Assumptions(Box::new(report)));
    }
    let lat = model.lattice();
    let f_norm = norm_f(lat, model.decay(), region)?;
    let c_f = convolution_constant(lat, model.decay(), region)?;
    let mut provenance = BTreeMap::new();
    provenance.insert("inv_mass_sup".into(), format!("max of 1/m_k over {} sites", region.len()));
    provenance.insert("nu_sup".into(), format!("max of nu_k over {} sites", region.len()));
    provenance.insert(
        "c_v".into(),
        format!("grid certificate, orders <= 2 (certified through order {})", report.certified_order),
    );
    provenance.insert("psi_norm".into(), "max of C_kl / F(d(k,l)) over coupled pairs in the region".into());
    provenance.insert("f_norm".into(), "max_y sum_x F(d(x,y)) on the region".into());
    provenance.insert("c_f".into(), "max over pairs of the convolution ratio on the region".into());
    let c0 = c0_formula(report.inv_mass_sup, report.nu_sup, model.dim(), report.c_v, report.psi_norm, f_norm, c_f);
    Ok(BoundConstants {
        inv_mass_sup: report.inv_mass_sup,
        nu_sup: report.nu_sup,
        dim: model.dim(),
        c_v: report.c_v,
        psi_norm: report.psi_norm,
        f_norm,
        base_f_norm: f_norm,
        c_f,
        c0,
        mu: None,
        provenance,
    })
}

/// `C_μ`: `‖Ψ‖` and `‖F‖` recomputed against `F_μ = e^{−μr}F`, `C_F` kept.
pub fn with_mu(bc: &BoundConstants, model: &LatticeModel, region: &SiteSet, mu: f64) -> Result<BoundConstants> {
    let weighted = model.decay().weighted(mu)?;
    let lat = model.lattice();
    let mut psi: f64 = 0.0;
    for ((k, l), v) in model.pairs_within(region) {
        if v.is_zero() || k == l {
            continue;
        }
        let cert = model.certificate(k, l).ok_or_else(|| {
            LabError::Unsupported(format!("pair ({k}, {l}) has no derivative-bound certificate"))
        })?;
        psi = psi.max(cert.c_kl / weighted.eval(lat.distance(k, l)));
    }
    let f_norm = norm_f(lat, &weighted, region)?;
    let mut out = bc.clone();
    out.psi_norm = psi;
    out.f_norm = f_norm;
    out.mu = Some(mu);
    out.c0 = out.recompute();
    out.provenance.insert("psi_norm".into(), format!("max of C_kl / F_mu(d(k,l)) with mu = {mu}"));
    out.provenance.insert("f_norm".into(), format!("max_y sum_x F_mu(d(x,y)) with mu = {mu}"));
    out.provenance.insert("c_f".into(), "unchanged from the unweighted decay".into());
    Ok(out)
}

/// Partial sums `S_1, …, S_N` of the per-order bounds for one block family, each
/// multiplied by `f_value`:
///
/// * `X`, `W`: `(C₀t²)^n / (2n)!`, summing to `cosh(√C₀|t|) − 1`;
/// * `Y`: `C₀^n |t|^{2n−1} / (2n−1)!`, summing to `√C₀ sinh(√C₀|t|)`;
/// * `Z`: `C₀^{n−1} |t|^{2n−1} / (2n−1)!`, summing to `sinh(√C₀|t|)/√C₀`.
pub fn dyson_partial_sums(bc: &BoundConstants, f_value: f64, t: f64, n: usize, kind: BlockKind) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(LabError::domain("need at least one Dyson order"));
    }
    if !(f_value > 0.0 && f_value <= 1.0) {
        return Err(LabError::domain(format!("decay value must lie in (0, 1], got {f_value}")));
    }
    let c0 = bc.c0;
    let a = t.abs();
    let ratio = c0 * a * a;
    let (mut term, shift) = match kind {
        BlockKind::X | BlockKind::W => (ratio / 2.0, 1usize),
        BlockKind::Y => (c0 * a, 0),
        BlockKind::Z => (a, 0),
    };
    let mut sums = Vec::with_capacity(n);
    let mut acc = 0.0;
    for order in 1..=n {
        acc += term;
        sums.push(acc * f_value);
        // term_{n+1} / term_n = C₀t² / ((2n + shift)(2n + 1 + shift))
        let m = (2 * order + shift) as f64;
        term *= ratio / (m * (m + 1.0));
    }
    Ok(sums)
}

/// Closed-form envelope of `‖K_kj(t)‖` for `k ≠ j` and block family `K`.
pub fn jacobian_envelope(bc: &BoundConstants, f_value: f64, t: f64, kind: BlockKind) -> f64 {
    let s = bc.sqrt_c0();
    let x = s * t.abs();
    f_value
        * match kind {
            // cosh x − 1 = 2 sinh²(x/2), without cancellation at small x
            BlockKind::X | BlockKind::W => 2.0 * (x / 2.0).sinh().powi(2),
            BlockKind::Y => s * x.sinh(),
            BlockKind::Z => x.sinh() / s,
        }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrRhs {
    /// `4‖f‖_{C¹}‖g‖_{C¹}√C₀ sinh(√C₀|t|) D(X, Y)`
    pub sinh_form: f64,
    /// `4‖f‖_{C¹}‖g‖_{C¹}√C₀ (e^{√C₀|t|} − 1) D(X, Y)`
    pub exp_form: f64,
}

pub fn lr_rhs(bc: &BoundConstants, f_c1: f64, g_c1: f64, d_xy: f64, t: f64) -> LrRhs {
    debug_assert!(f_c1 >= 0.0 && g_c1 >= 0.0 && d_xy >= 0.0);
    let s = bc.sqrt_c0();
    let x = s * t.abs();
    let pre = 4.0 * f_c1 * g_c1 * s * d_xy;
    let out = LrRhs { sinh_form: pre * x.sinh(), exp_form: pre * x.exp_m1() };
    assert!(out.sinh_form <= out.exp_form, "sinh form must not exceed the exponential form");
    out
}

/// `pref · e^{−μ(dist − √C_μ|t|/μ)}`.
pub fn exponential_cone_bound(prefactor: f64, mu: f64, dist: f64, c_mu: f64, t: f64) -> f64 {
    prefactor * (-mu * (dist - c_mu.sqrt() * t.abs() / mu)).exp()
}

/// 16 log-spaced values in `[1e−2, 10]`.
pub fn default_mu_grid() -> Vec<f64> {
    let (lo, hi, n) = (1e-2f64.ln(), 10f64.ln(), 16);
    (0..n).map(|i| (lo + (hi - lo) * i as f64 / (n - 1) as f64).exp()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MuPoint {
    pub mu: f64,
    pub c_mu: f64,
    pub prefactor: f64,
    pub value: f64,
    /// `√C_μ / μ`
    pub velocity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LightConeBound {
    pub best_mu: f64,
    pub value: f64,
    pub velocity: f64,
    pub per_mu: Vec<MuPoint>,
}

/// Evaluates the light-cone bound for each `C_μ` in `family` and returns the
/// smallest. The prefactor is `2‖f‖_{C¹}‖g‖_{C¹}√C_μ · min{|X|, |Y|} · ‖F‖`.
pub fn light_cone_bound(family: &[BoundConstants], f_c1: f64, g_c1: f64, x_len: usize, y_len: usize, dist: f64, t: f64) -> Result<LightConeBound> {
    if family.is_empty() {
        return Err(LabError::domain("the mu grid is empty"));
    }
    if !(dist > 0.0) {
        return Err(LabError::domain("supports must be separated (dist > 0)"));
    }
    let mut per_mu = Vec::with_capacity(family.len());
    for bc in family {
        let mu = bc.mu.ok_or_else(|| LabError::domain("light-cone constants need a weight rate mu"))?;
        let prefactor = 2.0 * f_c1 * g_c1 * bc.sqrt_c0() * x_len.min(y_len) as f64 * bc.base_f_norm;
        per_mu.push(MuPoint {
            mu,
            c_mu: bc.c0,
            prefactor,
            value: exponential_cone_bound(prefactor, mu, dist, bc.c0, t),
            velocity: bc.sqrt_c0() / mu,
        });
    }
    // first minimum wins, so ties resolve deterministically
    let best = per_mu.iter().fold(&per_mu[0], |b, p| if p.value < b.value { p } else { b });
    Ok(LightConeBound { best_mu: best.mu, value: best.value, velocity: best.velocity, per_mu: per_mu.clone() })
}

/// `C_μ` for every `μ` of the grid.
pub fn mu_family(bc: &BoundConstants, model: &LatticeModel, region: &SiteSet, grid: &[f64]) -> Result<Vec<BoundConstants>> {
    grid.iter().map(|&mu| with_mu(bc, model, region, mu)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{DecayFunction, Lattice};
    use crate::potential::{PairPotential, PotentialShape};
    use proptest::prelude::*;

    fn unit(c0: f64) -> BoundConstants {
        // inv_mass = 1, nu = c0, no coupling, so C₀ = max(c0, 1)
        BoundConstants::from_ingredients(1.0, c0, 1, 0.0, 0.0, 1.0, 1.0).unwrap()
    }

    fn free_model(masses: Vec<f64>) -> LatticeModel {
        let n = masses.len();
        LatticeModel::builder(Lattice::chain(n), DecayFunction::power_law(2.0).unwrap(), 1).masses(masses).build().unwrap()
    }

    fn chain(n: usize, r_cut: f64) -> LatticeModel {
        LatticeModel::builder(Lattice::chain(n), DecayFunction::power_law(2.0).unwrap(), 1)
            .potential(PotentialShape::Bump, 0.5, 1.5)
            .r_cut(r_cut)
            .build()
            .unwrap()
    }

    #[test]
    fn interaction_free_c0() {
        let m = free_model(vec![1.0; 4]);
        assert_eq!(compute_c0(&m, &m.lattice().sites()).unwrap().c0, 1.0);
        let m = free_model(vec![1.0, 2.0, 1.0, 2.0]);
        let bc = compute_c0(&m, &m.lattice().sites()).unwrap();
        assert_eq!(bc.c0, 1.0);
        for mu in [1e-3, 0.5, 4.0] {
            assert_eq!(with_mu(&bc, &m, &m.lattice().sites(), mu).unwrap().c0, 1.0);
        }
    }

    #[test]
    fn coupled_chain_c0_matches_a_straight_recomputation() {
        let m = chain(8, 2.0);
        let all = m.lattice().sites();
        let bc = compute_c0(&m, &all).unwrap();
        assert!(bc.c0 >= bc.inv_mass_sup);
        // Re-derive every ingredient independently.
        let unit = PairPotential::bump(1.0, 1.5, 1).unwrap().certify(4).unwrap();
        let psi = 0.5 * unit.c_kl;
        let f = |r: f64| (1.0 + r).powi(-2);
        let f_norm = (0..8).map(|y: i32| (0..8).map(|x: i32| f((x - y).abs() as f64)).sum::<f64>()).fold(0.0, f64::max);
        let mut c_f = 0.0f64;
        for x in 0..8i32 {
            for y in 0..8i32 {
                let s: f64 = (0..8i32).map(|z| f((x - z).abs() as f64) * f((z - y).abs() as f64)).sum();
                c_f = c_f.max(s / f((x - y).abs() as f64));
            }
        }
        let cv = unit.c_v_order2;
        let coupling = cv * cv * psi;
        let expected = (1.0 + coupling * f_norm).max(coupling * c_f).max(1.0);
        assert!((bc.psi_norm - psi).abs() < 1e-15);
        assert!((bc.f_norm - f_norm).abs() < 1e-13);
        assert!((bc.c_f - c_f).abs() < 1e-12);
        assert!((bc.c0 - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn compute_c0_refuses_invalid_models() {
        let m = LatticeModel::builder(Lattice::chain(2), DecayFunction::power_law(2.0).unwrap(), 1)
            .force_constants(vec![1.0, -1.0])
            .build()
            .unwrap();
        assert!(matches!(compute_c0(&m, &m.lattice().sites()), Err(LabError::Assumptions(_))));
    }

    #[test]
    fn with_mu_limits_and_single_distance_class() {
        let m = chain(6, 1.0);
        let all = m.lattice().sites();
        let bc = compute_c0(&m, &all).unwrap();
        let tiny = with_mu(&bc, &m, &all, 1e-9).unwrap();
        assert!((tiny.c0 - bc.c0).abs() <= 1e-6 * bc.c0);
        let one = with_mu(&bc, &m, &all, 1.0).unwrap();
        assert!((one.psi_norm - bc.psi_norm * 1f64.exp()).abs() < 1e-12 * one.psi_norm);
        assert_eq!(one.c_f, bc.c_f);
        assert!(with_mu(&bc, &m, &all, 0.0).is_err());
    }

    #[test]
    fn c_mu_grows_with_mu_when_coupling_dominates() {
        let m = LatticeModel::builder(Lattice::chain(6), DecayFunction::power_law(2.0).unwrap(), 1)
            .potential(PotentialShape::Bump, 4.0, 1.5)
            .r_cut(2.0)
            .build()
            .unwrap();
        let all = m.lattice().sites();
        let bc = compute_c0(&m, &all).unwrap();
        let fam = mu_family(&bc, &m, &all, &default_mu_grid()).unwrap();
        for w in fam.windows(2) {
            assert!(w[1].psi_norm >= w[0].psi_norm);
            let coupling = w[0].dim as f64 * w[0].c_v.powi(2) * w[0].psi_norm;
            if coupling * w[0].c_f > w[0].nu_sup + coupling * w[0].f_norm {
                assert!(w[1].c0 >= w[0].c0);
            }
        }
    }

    #[test]
    fn dyson_sums_reach_their_closed_forms() {
        let bc = unit(1.0);
        let x = dyson_partial_sums(&bc, 1.0, 1.0, 60, BlockKind::X).unwrap();
        assert!((x.last().unwrap() - 0.5430806348152437).abs() < 1e-15);
        let y = dyson_partial_sums(&bc, 1.0, 1.0, 60, BlockKind::Y).unwrap();
        assert!((y.last().unwrap() - 1.1752011936438014).abs() < 1e-15);
        let z = dyson_partial_sums(&bc, 1.0, -1.0, 60, BlockKind::Z).unwrap();
        assert!((z.last().unwrap() - 1.1752011936438014).abs() < 1e-15);
        assert!(dyson_partial_sums(&bc, 1.0, 0.0, 5, BlockKind::W).unwrap().iter().all(|v| *v == 0.0));
        assert!(dyson_partial_sums(&bc, 1.5, 1.0, 5, BlockKind::X).is_err());
        assert!(dyson_partial_sums(&bc, 1.0, 1.0, 0, BlockKind::X).is_err());
    }

    #[test]
    fn envelope_examples() {
        let bc = unit(1.0);
        for kind in BlockKind::ALL {
            assert_eq!(jacobian_envelope(&bc, 1.0, 0.0, kind), 0.0);
        }
        assert!((jacobian_envelope(&bc, 0.5, 1.0, BlockKind::X) - 0.2715403174076219).abs() < 1e-15);
        let bc4 = unit(4.0);
        assert!((jacobian_envelope(&bc4, 1.0, 0.5, BlockKind::Y) - 2.0 * 1f64.sinh()).abs() < 1e-15);
        assert!((jacobian_envelope(&bc4, 1.0, 0.5, BlockKind::Z) - 1f64.sinh() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn lr_rhs_examples() {
        let bc = unit(1.0);
        assert_eq!(lr_rhs(&bc, 1.0, 1.0, 0.125, 0.0).sinh_form, 0.0);
        let r = lr_rhs(&bc, 1.0, 1.0, 0.125, 1.0);
        assert!((r.sinh_form - 0.5876005968219007).abs() < 1e-15);
        assert!(r.sinh_form <= r.exp_form);
        assert_eq!(lr_rhs(&bc, 2.0, 1.0, 0.125, 1.0).sinh_form, 2.0 * r.sinh_form);
    }

    #[test]
    fn light_cone_examples() {
        assert!((exponential_cone_bound(1.0, 1.0, 3.0, 1.0, 1.0) - (-2f64).exp()).abs() < 1e-16);
        let m = free_model(vec![1.0; 8]);
        let all = m.lattice().sites();
        let bc = compute_c0(&m, &all).unwrap();
        let fam = mu_family(&bc, &m, &all, &default_mu_grid()).unwrap();
        for t in [0.0, 0.5] {
            let b = light_cone_bound(&fam, 1.0, 1.0, 1, 1, 4.0, t).unwrap();
            assert_eq!(b.best_mu, *default_mu_grid().last().unwrap());
            assert!(b.per_mu.windows(2).all(|w| w[1].value <= w[0].value));
        }
        assert!(light_cone_bound(&[], 1.0, 1.0, 1, 1, 4.0, 0.0).is_err());
        assert!(light_cone_bound(&fam, 1.0, 1.0, 1, 1, 0.0, 0.0).is_err());
    }

    #[test]
    fn default_grid_shape() {
        let g = default_mu_grid();
        assert_eq!(g.len(), 16);
        assert!((g[0] - 1e-2).abs() < 1e-16 && (g[15] - 10.0).abs() < 1e-13);
    }

    proptest! {
        #[test]
        fn partial_sums_increase_to_the_envelope(c0 in 1.0f64..30.0, frac in 0.0f64..1.0, f in 0.01f64..1.0, neg in any::<bool>()) {
            let bc = unit(c0);
            let t = frac * 5.0 / c0.sqrt() * if neg { -1.0 } else { 1.0 };
            for kind in BlockKind::ALL {
                let sums = dyson_partial_sums(&bc, f, t, 40, kind).unwrap();
                let env = jacobian_envelope(&bc, f, t, kind);
                prop_assert!(sums.windows(2).all(|w| w[1] >= w[0]));
                prop_assert!(sums.iter().all(|s| *s <= env * (1.0 + 1e-13)));
                prop_assert!((sums[39] - env).abs() <= 1e-12 * env);
                prop_assert_eq!(env, jacobian_envelope(&bc, f, -t, kind));
            }
        }

        #[test]
        fn lr_rhs_is_monotone(t1 in 0.0f64..3.0, dt in 0.0f64..1.0, f in 0.1f64..3.0, d in 0.0f64..2.0) {
            let bc = unit(2.0);
            let a = lr_rhs(&bc, f, 1.0, d, t1).sinh_form;
            prop_assert!(lr_rhs(&bc, f, 1.0, d, -(t1 + dt)).sinh_form >= a);
            prop_assert!(lr_rhs(&bc, f * 1.5, 1.0, d, t1).sinh_form >= a);
            prop_assert!(lr_rhs(&bc, f, 1.0, d + 0.1, t1).sinh_form >= a);
        }
    }
}
