//! Exact finite-size second moments of the W-series from the D-chain DP.
//!
//! Term i of every series uses P(D_{i−1} = 0 | ·), so a series of N terms
//! needs return probabilities for k = 0..N−1.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::chains::{green_sums, DpOptions};
use crate::constants::{limiting_cov_d1, limiting_cov_d2, LimitConstants};
use crate::error::{RapError, Result};
use crate::extrapolate::{richardson, Extrapolation};
use crate::lattice::{euclid, sub, Dim, Site, ORIGIN};
use crate::model::RapModel;
use crate::potential::PotentialContext;

fn check_site(model: &RapModel, x: Site, name: &str) -> Result<()> {
    if x == ORIGIN {
        return Err(RapError::invalid(name, "must be nonzero"));
    }
    if !model.dim().contains(x) {
        return Err(RapError::invalid(name, format!("{x:?} is not a site of Z^{}", model.dim().as_usize())));
    }
    Ok(())
}

/// E(Σ_{i=1}^{N}(W_i^x − W_i^0)·λ)² for each site, sharing one DP.
pub fn truncated_second_moments(model: &RapModel, sites: &[Site], n_terms: usize, opts: &DpOptions) -> Result<Vec<f64>> {
    if n_terms == 0 {
        return Err(RapError::invalid("N", "must be >= 1"));
    }
    for &x in sites {
        check_site(model, x, "x")?;
    }
    let mut all = vec![ORIGIN];
    all.extend_from_slice(sites);
    let g = green_sums(&model.kernel, &all, &[n_terms - 1], opts)?;
    let v = &g.values[0];
    Ok((1..all.len()).map(|i| 2.0 * model.sigma2() * (v[0] - v[i])).collect())
}

pub fn truncated_second_moment(model: &RapModel, x: Site, n_terms: usize, opts: &DpOptions) -> Result<f64> {
    Ok(truncated_second_moments(model, &[x], n_terms, opts)?[0])
}

/// E[Σ_i(W_i^x − W_i^0)·λ · Σ_i(W_i^y − W_i^0)·λ] over N terms.
pub fn cross_second_moment(model: &RapModel, x: Site, y: Site, n_terms: usize, opts: &DpOptions) -> Result<f64> {
    if x == y {
        return Err(RapError::invalid("y", "must differ from x (use the truncated second moment)"));
    }
    let m = truncated_moment_matrix(model, &[x, y], n_terms, opts)?;
    Ok(m[(0, 1)])
}

// P_z(D_k = 0) is even in z
fn canonical(z: Site) -> Site {
    z.max([-z[0], -z[1]])
}

/// Matrix of truncated second moments (diagonal) and cross moments.
pub fn truncated_moment_matrix(model: &RapModel, sites: &[Site], n_terms: usize, opts: &DpOptions) -> Result<DMatrix<f64>> {
    if n_terms == 0 {
        return Err(RapError::invalid("N", "must be >= 1"));
    }
    for &x in sites {
        check_site(model, x, "x")?;
    }
    let mut needed = vec![ORIGIN];
    let mut push = |s: Site| {
        if !needed.contains(&s) {
            needed.push(s);
        }
    };
    for (j, &x) in sites.iter().enumerate() {
        push(x);
        for &y in &sites[j + 1..] {
            push(canonical(sub(x, y)));
        }
    }
    let g = green_sums(&model.kernel, &needed, &[n_terms - 1], opts)?;
    let at = |s: Site| g.at(0, s).expect("requested site");
    let s2 = model.sigma2();
    let k = sites.len();
    Ok(DMatrix::from_fn(k, k, |j, l| {
        let (x, y) = (sites[j], sites[l]);
        if j == l {
            2.0 * s2 * (at(ORIGIN) - at(x))
        } else {
            s2 * (at(canonical(sub(x, y))) - at(x) - at(y) + at(ORIGIN))
        }
    }))
}

/// Limit N → ∞ of the truncated second moment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TotalMoment {
    pub value: f64,
    /// Truncated moment at the largest horizon.
    pub partial: f64,
    /// value − partial.
    pub tail: f64,
    pub tail_error: f64,
    pub n_used: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TotalOptions {
    /// Largest horizon; rounded down to a power of two.
    pub n_max: usize,
    /// Accepted extrapolation error.
    pub tol: f64,
    pub dp: DpOptions,
}

impl TotalOptions {
    /// Horizon of order 64|x|² (at least 2^14 in d=1, 2^11 in d=2), capped at `cap`.
    pub fn for_site(dim: Dim, x: Site, cap: usize) -> TotalOptions {
        let r2 = (euclid(x) * euclid(x)).ceil() as usize;
        let floor = match dim {
            Dim::One => 1 << 14,
            Dim::Two => 1 << 11,
        };
        TotalOptions {
            n_max: (64 * r2).next_power_of_two().max(floor).min(cap.max(16)),
            tol: 1e-6,
            dp: DpOptions::default(),
        }
    }
}

/// 2σ² Σ_{i≥0}[P_0(D_i=0) − P_x(D_i=0)] from partial sums at doubling
/// horizons, extrapolated in the tail powers of the D-chain.
pub fn total_second_moment(model: &RapModel, x: Site, opts: &TotalOptions) -> Result<TotalMoment> {
    check_site(model, x, "x")?;
    let s2 = model.sigma2();
    if s2 == 0.0 {
        return Ok(TotalMoment {
            value: 0.0,
            partial: 0.0,
            tail: 0.0,
            tail_error: 0.0,
            n_used: 0,
            converged: true,
        });
    }
    let top = if opts.n_max.is_power_of_two() {
        opts.n_max
    } else {
        opts.n_max.next_power_of_two() / 2
    };
    if top < 16 {
        return Err(RapError::invalid("n_max", "must be >= 16"));
    }
    let horizons: Vec<usize> = (0..5).rev().map(|j| top >> j).collect();
    let g = green_sums(&model.kernel, &[ORIGIN, x], &horizons, &opts.dp)?;
    let partial: Vec<f64> = g.values.iter().map(|v| 2.0 * s2 * (v[0] - v[1])).collect();
    // d=1 tail: powers of n^{-1/2}; d=2: (a + b log n)/n then 1/n²
    let exps: &[f64] = match model.dim() {
        Dim::One => &[0.5, 1.0, 1.5, 2.0],
        Dim::Two => &[1.0, 1.0, 2.0, 2.0],
    };
    let Extrapolation { value, error, last_partial } = richardson(&partial, exps);
    Ok(TotalMoment {
        value,
        partial: last_partial,
        tail: value - last_partial,
        tail_error: error,
        n_used: top,
        converged: error <= opts.tol,
    })
}

/// 2σ² a(x)/𝔄: the generating-function limit of the same series.
pub fn total_second_moment_potential(model: &RapModel, ctx: &PotentialContext, frak_a: f64, x: Site) -> Result<f64> {
    check_site(model, x, "x")?;
    Ok(2.0 * model.sigma2() * ctx.potential_kernel(x)? / frak_a)
}

/// One row of a normalized scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanRow {
    pub x: Site,
    pub n_terms: usize,
    pub raw: f64,
    /// raw / P_x, with P_x = |x| (d=1) or log|x| (d=2).
    pub normalized: f64,
    pub predicted: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanReport {
    pub a: f64,
    pub rows: Vec<ScanRow>,
}

pub fn scale_of(dim: Dim, x: Site) -> f64 {
    match dim {
        Dim::One => x[0].unsigned_abs() as f64,
        Dim::Two => euclid(x).ln(),
    }
}

/// truncated_second_moment(x, A·x²)/|x| next to h(A), for each x.
pub fn prop1_scan_d1(model: &RapModel, consts: &LimitConstants, a: f64, xs: &[i64], opts: &DpOptions) -> Result<ScanReport> {
    if model.dim() != Dim::One {
        return Err(RapError::invalid("dimension", "this scan is defined in d=1"));
    }
    let h = consts.h(a)?;
    let mut rows = Vec::with_capacity(xs.len());
    for &x in xs {
        let site = [x, 0];
        let n = (a * (x * x) as f64).floor() as usize;
        let raw = truncated_second_moment(model, site, n.max(1), opts)?;
        let normalized = raw / x.unsigned_abs() as f64;
        rows.push(ScanRow {
            x: site,
            n_terms: n,
            raw,
            normalized,
            predicted: h,
            ratio: normalized / h,
        });
    }
    Ok(ScanReport { a, rows })
}

/// Second-moment matrix of several sites, normalized, with its limit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovScan {
    pub sites: Vec<Site>,
    pub n_terms: usize,
    /// Divisor applied to the raw matrix (c·n in d=1, c·log n in d=2).
    pub normalizer: f64,
    #[serde(serialize_with = "as_rows")]
    pub raw: DMatrix<f64>,
    #[serde(serialize_with = "as_rows")]
    pub normalized: DMatrix<f64>,
    #[serde(serialize_with = "as_rows")]
    pub limit: DMatrix<f64>,
}

/// Serializes a matrix as a list of rows.
pub fn as_rows<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for r in m.row_iter() {
        seq.serialize_element(&r.iter().copied().collect::<Vec<f64>>())?;
    }
    seq.end()
}

/// Sites ⌊n t_j⌋, A·n² terms, divided by c·n; limit is the min-matrix.
pub fn corollary1_cov_scan_d1(model: &RapModel, consts: &LimitConstants, a: f64, n: usize, times: &[f64], opts: &DpOptions) -> Result<CovScan> {
    if model.dim() != Dim::One {
        return Err(RapError::invalid("dimension", "use the d=2 scan"));
    }
    if !(a >= 1.0) {
        return Err(RapError::invalid("A", "must be >= 1"));
    }
    let limit = limiting_cov_d1(times)?;
    let sites: Vec<Site> = times.iter().map(|t| [(n as f64 * t).floor() as i64, 0]).collect();
    if let Some(j) = sites.iter().position(|s| *s == ORIGIN) {
        return Err(RapError::invalid("times", format!("floor(n*t_{j}) is 0; increase n")));
    }
    if sites.windows(2).any(|w| w[0] == w[1]) {
        return Err(RapError::invalid("times", "two times map to the same site; increase n"));
    }
    let n_terms = (a * (n * n) as f64).floor() as usize;
    let raw = truncated_moment_matrix(model, &sites, n_terms, opts)?;
    let normalizer = consts.c * n as f64;
    Ok(CovScan {
        normalized: &raw / normalizer,
        sites,
        n_terms,
        normalizer,
        raw,
        limit,
    })
}

/// x̃_n(z) = (⌊n^{|z(1)|}⌋, ⌊n^{|z(2)|}⌋).
pub fn scaled_site_d2(n: usize, z: Site) -> Site {
    let p = |e: i64| (n as f64).powi(e.unsigned_abs() as i32).floor() as i64;
    [p(z[0]), p(z[1])]
}

/// Sites x̃_n(z_j) with M = max|x̃_n(z_j)|² terms, divided by c·log n.
pub fn corollary1_cov_scan_d2(model: &RapModel, consts: &LimitConstants, points: &[Site], n: usize, opts: &DpOptions) -> Result<CovScan> {
    if model.dim() != Dim::Two {
        return Err(RapError::invalid("dimension", "use the d=1 scan"));
    }
    if n < 2 {
        return Err(RapError::invalid("n", "must be >= 2 (log n normalizer)"));
    }
    let limit = limiting_cov_d2(points)?;
    let sites: Vec<Site> = points.iter().map(|&z| scaled_site_d2(n, z)).collect();
    for j in 0..sites.len() {
        if sites[..j].contains(&sites[j]) {
            return Err(RapError::invalid("points", format!("points {j} and an earlier one map to the same site")));
        }
    }
    let n_terms = sites
        .iter()
        .map(|&s| (s[0] * s[0] + s[1] * s[1]) as usize)
        .max()
        .unwrap_or(1);
    // the DP plane for n_terms steps spans about (4·K·n_terms)² cells before pruning
    let side = 4 * model.law.neighborhood().range() as usize * n_terms + 1;
    if side.saturating_mul(side) > opts.budget_cells.saturating_mul(16) {
        let mut feasible = Vec::new();
        for m in 2..=n {
            let ok = points.iter().all(|&z| {
                let s = scaled_site_d2(m, z);
                let t = (s[0] * s[0] + s[1] * s[1]) as usize;
                let side = 4 * t + 1;
                side * side <= opts.budget_cells.saturating_mul(16)
            });
            if ok {
                feasible.push(m);
            }
        }
        return Err(RapError::Budget {
            what: "d=2 covariance scan".into(),
            requested: side * side,
            limit: opts.budget_cells,
            feasible: format!("n in {feasible:?} for these points"),
        });
    }
    let raw = truncated_moment_matrix(model, &sites, n_terms, opts)?;
    let normalizer = consts.c * (n as f64).ln();
    Ok(CovScan {
        normalized: &raw / normalizer,
        sites,
        n_terms,
        normalizer,
        raw,
        limit,
    })
}
