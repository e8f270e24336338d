//! Potential kernel of the chain H by characteristic-function quadrature,
//! the constant 𝔄 = E_0[a(D_1)] and the asymptotic return predictions.

use std::f64::consts::PI;

use nalgebra::Matrix2;
use serde::Serialize;

use crate::chains::{green_sums, ChainKernel, DpOptions};
use crate::error::{RapError, Result};
use crate::extrapolate::{richardson, Extrapolation};
use crate::lattice::{euclid, sup_norm, Dim, Site, Stencil, ORIGIN};
use crate::quadrature::{integrate_pieces, QuadOptions, QuadResult};

/// Covariance of one H step: σ_H² in d=1, the 2×2 matrix Q in d=2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadForm {
    pub dim: Dim,
    pub q: [[f64; 2]; 2],
}

impl QuadForm {
    pub fn sigma_h2(&self) -> f64 {
        self.q[0][0]
    }

    /// det Q in d=2, σ_H² in d=1.
    pub fn det(&self) -> f64 {
        match self.dim {
            Dim::One => self.q[0][0],
            Dim::Two => self.q[0][0] * self.q[1][1] - self.q[0][1] * self.q[1][0],
        }
    }

    pub fn eval(&self, e: [f64; 2]) -> f64 {
        self.q[0][0] * e[0] * e[0] + 2.0 * self.q[0][1] * e[0] * e[1] + self.q[1][1] * e[1] * e[1]
    }

    pub fn matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.q[0][0], self.q[0][1], self.q[1][0], self.q[1][1])
    }
}

/// `Q_ab = Σ_k q_H(k) k_a k_b`.
pub fn quad_form(dim: Dim, q_h: &Stencil) -> Result<QuadForm> {
    let m = q_h.second_moment();
    let form = QuadForm { dim, q: m };
    let scale = m[0][0].abs() + m[1][1].abs();
    let ok = match dim {
        Dim::One => m[0][0] > 0.0,
        Dim::Two => {
            let eig = form.matrix().symmetric_eigenvalues();
            eig.min() > 1e-12 * scale
        }
    };
    if !ok {
        return Err(RapError::Degenerate(format!(
            "step covariance of H is singular ({m:?}); the walk does not spread along every axis"
        )));
    }
    Ok(form)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PotentialSettings {
    /// Radius of the excluded ball around θ = 0, divided by max(1, |x|_∞).
    pub r0: f64,
    /// Largest accepted quadrature error estimate for a(x).
    pub abs_tol: f64,
}

impl Default for PotentialSettings {
    fn default() -> Self {
        PotentialSettings { r0: 1e-3, abs_tol: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct PotentialContext {
    dim: Dim,
    /// One representative per ± pair, with doubled mass.
    half: Vec<([f64; 2], f64)>,
    form: QuadForm,
    settings: PotentialSettings,
}

impl PotentialContext {
    pub fn new(kernel: &ChainKernel, settings: PotentialSettings) -> Result<PotentialContext> {
        let form = quad_form(kernel.dim(), kernel.q_h())?;
        let half = kernel
            .q_h()
            .entries()
            .iter()
            .filter(|(k, _)| *k > ORIGIN)
            .map(|&(k, p)| ([k[0] as f64, k[1] as f64], 2.0 * p))
            .collect();
        Ok(PotentialContext {
            dim: kernel.dim(),
            half,
            form,
            settings,
        })
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn form(&self) -> QuadForm {
        self.form
    }

    pub fn settings(&self) -> PotentialSettings {
        self.settings
    }

    /// 1 − φ(θ) written as a sum of non-negative terms.
    pub fn one_minus_phi(&self, t: [f64; 2]) -> f64 {
        self.half
            .iter()
            .map(|(k, w)| {
                let s = (0.5 * (t[0] * k[0] + t[1] * k[1])).sin();
                2.0 * w * s * s
            })
            .sum()
    }

    /// φ(θ) = |Σ_j ū(j) e^{iθ·j}|².
    pub fn phi(&self, t: [f64; 2]) -> f64 {
        1.0 - self.one_minus_phi(t)
    }

    /// Smallest observed `(1 − φ(θ))/|θ|²` on a uniform grid of the torus.
    pub fn aperiodicity_constant(&self, points_per_axis: usize) -> f64 {
        let m = points_per_axis.max(2);
        let coord = |i: usize| -PI + 2.0 * PI * (i as f64 + 0.5) / m as f64;
        let ys: Vec<f64> = match self.dim {
            Dim::One => vec![0.0],
            Dim::Two => (0..m).map(coord).collect(),
        };
        let mut best = f64::INFINITY;
        for i in 0..m {
            for &y in &ys {
                let t = [coord(i), y];
                let r2 = t[0] * t[0] + t[1] * t[1];
                best = best.min(self.one_minus_phi(t) / r2);
            }
        }
        best
    }

    /// a(x) with the default ball radius.
    pub fn potential_kernel(&self, x: Site) -> Result<f64> {
        let r0 = self.settings.r0 / (sup_norm(x).max(1) as f64);
        let r = self.potential_kernel_with_radius(x, r0)?;
        if r.error > self.settings.abs_tol {
            return Err(RapError::Quadrature {
                estimate: r.error,
                target: self.settings.abs_tol,
            });
        }
        Ok(r.value)
    }

    /// a(x) = (2π)^{-d} ∫ (1 − cos θ·x)/(1 − φ(θ)) dθ, excluding the ball
    /// |θ| < r0 and adding its second-order contribution analytically.
    pub fn potential_kernel_with_radius(&self, x: Site, r0: f64) -> Result<QuadResult> {
        if x == ORIGIN {
            return Ok(QuadResult {
                value: 0.0,
                error: 0.0,
                evals: 0,
            });
        }
        let xf = [x[0] as f64, x[1] as f64];
        let inner_opts = QuadOptions {
            abs_tol: 1e-13,
            rel_tol: 1e-12,
            max_panels: 20_000,
        };
        match self.dim {
            Dim::One => {
                let f = |t: f64| {
                    let s = (0.5 * t * xf[0]).sin();
                    2.0 * s * s / self.one_minus_phi([t, 0.0])
                };
                let pieces = (x[0].unsigned_abs() as usize).clamp(1, 512);
                let breaks: Vec<f64> = (0..=pieces)
                    .map(|i| r0 + (PI - r0) * i as f64 / pieces as f64)
                    .collect();
                let r = integrate_pieces(f, &breaks, &inner_opts)?;
                let ball = r0 * xf[0] * xf[0] / self.form.sigma_h2();
                Ok(QuadResult {
                    value: (r.value + ball) / PI,
                    error: r.error / PI,
                    evals: r.evals,
                })
            }
            Dim::Two => {
                let mut inner_err = 0.0;
                let mut evals = 0;
                let mut ray = |psi: f64| -> f64 {
                    let e = [psi.cos(), psi.sin()];
                    let ex = e[0] * xf[0] + e[1] * xf[1];
                    let rmax = PI / e[0].abs().max(e[1].abs());
                    let g = |r: f64| {
                        let s = (0.5 * r * ex).sin();
                        2.0 * s * s * r / self.one_minus_phi([r * e[0], r * e[1]])
                    };
                    let pieces = ((rmax * ex.abs() / PI).ceil() as usize).clamp(1, 512);
                    let breaks: Vec<f64> = (0..=pieces)
                        .map(|i| r0 + (rmax - r0) * i as f64 / pieces as f64)
                        .collect();
                    let ball = 0.5 * r0 * r0 * ex * ex / self.form.eval(e);
                    match integrate_pieces(g, &breaks, &inner_opts) {
                        Ok(r) => {
                            inner_err += r.error;
                            evals += r.evals;
                            r.value + ball
                        }
                        Err(_) => f64::NAN,
                    }
                };
                let outer_opts = QuadOptions {
                    abs_tol: 1e-11,
                    rel_tol: 1e-11,
                    max_panels: 2000,
                };
                // θ ↦ −θ symmetry folds ψ onto [0, π]; corners of the square sit at odd multiples of π/4
                let breaks: Vec<f64> = (0..=4).map(|i| i as f64 * PI / 4.0).collect();
                let r = integrate_pieces(&mut ray, &breaks, &outer_opts)?;
                if !r.value.is_finite() {
                    return Err(RapError::Quadrature {
                        estimate: f64::INFINITY,
                        target: self.settings.abs_tol,
                    });
                }
                let norm = 2.0 / (4.0 * PI * PI);
                // inner errors are a sum over every outer node, a loose overestimate
                let inner_share = inner_err / evals.max(1) as f64 * PI;
                Ok(QuadResult {
                    value: r.value * norm,
                    error: (r.error + inner_share) * norm,
                    evals: r.evals + evals,
                })
            }
        }
    }

    /// 𝔄 = Σ_k q_D(k) a(k).
    pub fn frak_a(&self, q_d: &Stencil) -> Result<f64> {
        let mut cache: Vec<(Site, f64)> = Vec::new();
        let mut total = 0.0;
        for &(k, p) in q_d.entries() {
            if k == ORIGIN || p == 0.0 {
                continue;
            }
            // a is even, so k and −k share one evaluation
            let rep = k.max([-k[0], -k[1]]);
            let a = match cache.iter().find(|(s, _)| *s == rep) {
                Some(&(_, a)) => a,
                None => {
                    let a = self.potential_kernel(rep)?;
                    cache.push((rep, a));
                    a
                }
            };
            total += p * a;
        }
        if total <= 1e-12 {
            return Err(RapError::Degenerate(format!(
                "E_0[a(D_1)] = {total:e}: the shared-vector step never leaves the origin"
            )));
        }
        Ok(total)
    }

    /// Leading-order return asymptotics: P_0(D_n=0) in d=1, Σ_{k≤n} P_0(D_k=0) in d=2.
    pub fn lemma4_prediction(&self, frak_a: f64, n: usize) -> f64 {
        let n = n as f64;
        match self.dim {
            Dim::One => 1.0 / (frak_a * (2.0 * PI).sqrt() * self.form.sigma_h2().sqrt() * n.sqrt()),
            Dim::Two => n.ln() / (frak_a * 2.0 * PI * self.form.det().sqrt()),
        }
    }

    /// (2πn)^{d/2} P_0(H_n=0) √det Q, given `p_n` = P_0(H_n = 0).
    pub fn local_clt_ratio(&self, n: usize, p_n: f64) -> f64 {
        let scale = 2.0 * PI * n as f64;
        let pref = match self.dim {
            Dim::One => scale.sqrt(),
            Dim::Two => scale,
        };
        pref * p_n * self.form.det().sqrt()
    }
}

/// 2 log|x| / log(A|x|²), the d=2 large-|x| approximation of P_x(τ > A|x|²).
pub fn d2_tau_tail_asymptotic(x: Site, a: f64) -> Result<f64> {
    if x == ORIGIN {
        return Err(RapError::invalid("x", "must be nonzero"));
    }
    if !(a >= 1.0) {
        return Err(RapError::invalid("A", format!("must be >= 1, got {a}")));
    }
    let r = euclid(x);
    if a == 1.0 {
        if r == 1.0 {
            return Err(RapError::invalid("x", "|x| = 1 with A = 1 gives 0/0"));
        }
        return Ok(1.0);
    }
    Ok(2.0 * r.ln() / (a * r * r).ln())
}

/// Partial sums Σ_{k≤n}[P_0(H_k=0) − P_x(H_k=0)] at doubling horizons and
/// their extrapolated limit, for comparison with the quadrature a(x).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartialSumKernel {
    pub site: Site,
    pub horizons: Vec<usize>,
    pub partial: Vec<f64>,
    pub limit: Extrapolation,
}

/// Doubling horizons and tail exponents used for the partial-sum limit.
pub fn partial_sum_schedule(dim: Dim) -> (Vec<usize>, Vec<f64>) {
    match dim {
        Dim::One => ((10..=14).map(|j| 1usize << j).collect(), vec![0.5, 1.5, 2.5, 3.5]),
        Dim::Two => ((7..=11).map(|j| 1usize << j).collect(), vec![1.0, 2.0, 3.0, 4.0]),
    }
}

pub fn potential_partial_sums(kernel: &ChainKernel, sites: &[Site], opts: &DpOptions) -> Result<Vec<PartialSumKernel>> {
    let (horizons, exps) = partial_sum_schedule(kernel.dim());
    let mut all = vec![ORIGIN];
    all.extend_from_slice(sites);
    let g = green_sums(&kernel.homogeneous(), &all, &horizons, opts)?;
    Ok(sites
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let partial: Vec<f64> = g.values.iter().map(|v| v[0] - v[i + 1]).collect();
            let limit = richardson(&partial, &exps);
            PartialSumKernel {
                site: s,
                horizons: horizons.clone(),
                partial,
                limit,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::WeightLaw;

    fn ctx(dim: Dim) -> (ChainKernel, PotentialContext) {
        let k = ChainKernel::from_moments(dim, &WeightLaw::uniform_dirichlet(dim).moments());
        let c = PotentialContext::new(&k, PotentialSettings::default()).unwrap();
        (k, c)
    }

    #[test]
    fn quad_forms_of_reference_laws() {
        let (_, c1) = ctx(Dim::One);
        assert!((c1.form().sigma_h2() - 4.0 / 3.0).abs() < 1e-15);
        let (_, c2) = ctx(Dim::Two);
        let q = c2.form().q;
        assert!((q[0][0] - 0.8).abs() < 1e-15 && (q[1][1] - 0.8).abs() < 1e-15 && q[0][1].abs() < 1e-15);
        assert!((c2.form().det() - 0.64).abs() < 1e-15);
    }

    #[test]
    fn singular_form_is_rejected() {
        let q = Stencil::from_entries(vec![([-1, 0], 0.25), ([0, 0], 0.5), ([1, 0], 0.25)]);
        assert!(matches!(quad_form(Dim::Two, &q), Err(RapError::Degenerate(_))));
    }

    #[test]
    fn phi_bounds() {
        let (_, c) = ctx(Dim::Two);
        assert_eq!(c.phi([0.0, 0.0]), 1.0);
        for t in [[0.3, -2.0], [PI, PI], [1e-4, 0.0]] {
            let p = c.phi(t);
            assert!((0.0..1.0).contains(&p));
        }
        assert!(c.aperiodicity_constant(64) > 0.0);
    }

    #[test]
    fn reference_kernel_values_d1() {
        let (k, c) = ctx(Dim::One);
        assert_eq!(c.potential_kernel(ORIGIN).unwrap(), 0.0);
        let a1 = c.potential_kernel([1, 0]).unwrap();
        let a2 = c.potential_kernel([2, 0]).unwrap();
        assert!((a1 - c.potential_kernel([-1, 0]).unwrap()).abs() < 1e-12);
        assert!((a1 - 1.299_038_105_676_658).abs() < 1e-8, "{a1}");
        assert!((a2 - 1.901_923_788_646_684).abs() < 1e-8, "{a2}");
        let fa = c.frak_a(k.q_d()).unwrap();
        assert!((fa - 0.75).abs() < 1e-8, "{fa}");
    }

    #[test]
    fn point_mass_defect_is_degenerate() {
        let (_, c) = ctx(Dim::One);
        let q = Stencil::from_entries(vec![([0, 0], 1.0)]);
        assert!(matches!(c.frak_a(&q), Err(RapError::Degenerate(_))));
    }

    #[test]
    fn ball_radius_insensitive() {
        let (_, c) = ctx(Dim::Two);
        for x in [[1, 0], [1, 1], [2, -1]] {
            let a = c.potential_kernel_with_radius(x, 1e-3).unwrap().value;
            let b = c.potential_kernel_with_radius(x, 5e-4).unwrap().value;
            assert!((a - b).abs() < 1e-7, "{x:?}: {a} {b}");
        }
    }

    #[test]
    fn tau_asymptotic_edges() {
        assert_eq!(d2_tau_tail_asymptotic([3, 4], 1.0).unwrap(), 1.0);
        assert!(d2_tau_tail_asymptotic([3, 4], 1e300).unwrap() < 0.02);
        assert!(d2_tau_tail_asymptotic(ORIGIN, 2.0).is_err());
    }

    #[test]
    fn return_prediction_trends() {
        let (_, c1) = ctx(Dim::One);
        assert!(c1.lemma4_prediction(0.75, 100) > c1.lemma4_prediction(0.75, 200));
        let (_, c2) = ctx(Dim::Two);
        assert!(c2.lemma4_prediction(0.8, 100) < c2.lemma4_prediction(0.8, 200));
    }
}
