//! Limiting constants: Brownian passage-time tail, h(A), c(1), c(2), c′ and
//! the limiting covariance matrices of the finite-dimensional distributions.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;
use libm::erf;

use crate::error::{RapError, Result};
use crate::lattice::{sup_norm, Dim, Site, ORIGIN};
use crate::model::RapModel;
use crate::potential::PotentialContext;
use crate::quadrature::{integrate, QuadOptions};

/// P(T_a > t) for the first passage time of standard Brownian motion to level a.
pub fn passage_tail(a: f64, t: f64) -> Result<f64> {
    if !(a > 0.0) || !(t > 0.0) {
        return Err(RapError::invalid("passage_tail", format!("need a > 0 and t > 0, got a={a}, t={t}")));
    }
    // 1 − 2(1 − Φ(a/√t)) = erf(a/√(2t))
    Ok(erf(a / (2.0 * t).sqrt()))
}

/// ∫₀¹ √A P(T_{1/σ_H} > Ay)/√(1−y) dy.
pub fn h_integral(sigma_h: f64, a: f64) -> Result<f64> {
    if !(a >= 1.0) {
        return Err(RapError::invalid("A", format!("must be >= 1, got {a}")));
    }
    if !(sigma_h > 0.0) {
        return Err(RapError::invalid("sigma_H", "must be positive"));
    }
    let level = 1.0 / sigma_h;
    let sa = a.sqrt();
    let tail = |s: f64| if s <= 0.0 { 1.0 } else { erf(level / (2.0 * s).sqrt()) };
    let opts = QuadOptions {
        abs_tol: 1e-11,
        rel_tol: 1e-13,
        max_panels: 4000,
    };
    let top = std::f64::consts::FRAC_1_SQRT_2;
    // y = v² on [0, ½]
    let lo = integrate(|v| 2.0 * v * sa * tail(a * v * v) / (1.0 - v * v).sqrt(), 0.0, top, &opts)?;
    // y = 1 − u² on [½, 1]
    let hi = integrate(|u| 2.0 * sa * tail(a * (1.0 - u * u)), 0.0, top, &opts)?;
    let err = lo.error + hi.error;
    if err > 1e-8 {
        return Err(RapError::Quadrature { estimate: err, target: 1e-8 });
    }
    Ok(lo.value + hi.value)
}

/// c′ = 2σ²/(𝔄√(2π)σ_H).
pub fn c_prime(sigma2: f64, frak_a: f64, sigma_h2: f64) -> Result<f64> {
    check_inputs(sigma2, frak_a, sigma_h2, "sigma_H^2")?;
    Ok(2.0 * sigma2 / (frak_a * (2.0 * PI).sqrt() * sigma_h2.sqrt()))
}

/// h(A) = c′ ∫₀¹ √A P(T_{1/σ_H} > Ay)/√(1−y) dy.
pub fn h_of_a(sigma2: f64, frak_a: f64, sigma_h2: f64, a: f64) -> Result<f64> {
    let cp = c_prime(sigma2, frak_a, sigma_h2)?;
    if cp == 0.0 {
        return Ok(0.0);
    }
    Ok(cp * h_integral(sigma_h2.sqrt(), a)?)
}

/// c(1) = 2σ²/(𝔄σ_H²).
pub fn c1(sigma2: f64, frak_a: f64, sigma_h2: f64) -> Result<f64> {
    check_inputs(sigma2, frak_a, sigma_h2, "sigma_H^2")?;
    Ok(2.0 * sigma2 / (frak_a * sigma_h2))
}

/// c(2) = 2σ²/(𝔄π√det Q).
pub fn c2(sigma2: f64, frak_a: f64, det_q: f64) -> Result<f64> {
    check_inputs(sigma2, frak_a, det_q, "det Q")?;
    Ok(2.0 * sigma2 / (frak_a * PI * det_q.sqrt()))
}

fn check_inputs(sigma2: f64, frak_a: f64, form: f64, form_name: &str) -> Result<()> {
    if !(sigma2 >= 0.0) {
        return Err(RapError::invalid("sigma^2", format!("must be >= 0, got {sigma2}")));
    }
    if !(frak_a > 0.0) {
        return Err(RapError::invalid("frak_A", format!("must be > 0, got {frak_a}")));
    }
    if !(form > 0.0) {
        return Err(RapError::invalid(form_name, format!("must be > 0, got {form}")));
    }
    Ok(())
}

/// Everything the scaling limits need, for one model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LimitConstants {
    pub dim: Dim,
    pub sigma2: f64,
    pub mu: f64,
    pub frak_a: f64,
    /// σ_H² in d=1, det Q in d=2.
    pub form_det: f64,
    /// c(1) or c(2).
    pub c: f64,
    /// Only defined in d=1.
    pub c_prime: Option<f64>,
}

impl LimitConstants {
    pub fn compute(model: &RapModel, ctx: &PotentialContext) -> Result<LimitConstants> {
        let frak_a = ctx.frak_a(model.kernel.q_d())?;
        let form = ctx.form();
        let sigma2 = model.sigma2();
        let (c, c_prime) = match model.dim() {
            Dim::One => (
                c1(sigma2, frak_a, form.sigma_h2())?,
                Some(c_prime(sigma2, frak_a, form.sigma_h2())?),
            ),
            Dim::Two => (c2(sigma2, frak_a, form.det())?, None),
        };
        Ok(LimitConstants {
            dim: model.dim(),
            sigma2,
            mu: model.drift.mu,
            frak_a,
            form_det: form.det(),
            c,
            c_prime,
        })
    }

    /// h(A); d=1 only.
    pub fn h(&self, a: f64) -> Result<f64> {
        if self.dim != Dim::One {
            return Err(RapError::invalid("dimension", "h(A) is defined in d=1"));
        }
        h_of_a(self.sigma2, self.frak_a, self.form_det, a)
    }
}

/// M_jl = min(t_j, t_l).
pub fn limiting_cov_d1(times: &[f64]) -> Result<DMatrix<f64>> {
    if times.is_empty() {
        return Err(RapError::invalid("times", "need at least one time"));
    }
    if times.iter().any(|t| !(*t > 0.0)) || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(RapError::invalid("times", "must be positive and strictly increasing"));
    }
    let k = times.len();
    Ok(DMatrix::from_fn(k, k, |j, l| times[j].min(times[l])))
}

/// C_jj = |z_j|_∞, C_jl = ½ min(|z_j|_∞, |z_l|_∞).
pub fn limiting_cov_d2(points: &[Site]) -> Result<DMatrix<f64>> {
    if points.is_empty() {
        return Err(RapError::invalid("points", "need at least one point"));
    }
    if let Some(i) = points.iter().position(|&z| z == ORIGIN) {
        return Err(RapError::invalid("points", format!("point {i} is the zero vector")));
    }
    let k = points.len();
    let m: Vec<f64> = points.iter().map(|&z| sup_norm(z) as f64).collect();
    Ok(DMatrix::from_fn(k, k, |j, l| if j == l { m[j] } else { 0.5 * m[j].min(m[l]) }))
}

/// Eigenvalues of a symmetric matrix, ascending, with a PSD verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsdReport {
    pub eigenvalues: Vec<f64>,
    pub psd: bool,
}

pub fn psd_report(m: &DMatrix<f64>) -> PsdReport {
    let mut eigenvalues: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(f64::total_cmp);
    let scale = eigenvalues.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    let psd = eigenvalues.first().is_none_or(|&v| v >= -1e-12 * scale.max(1.0));
    PsdReport { eigenvalues, psd }
}
