//! Exact dynamic programming for the homogeneous chain H and the difference
//! chain D, which moves like H away from the origin and with the shared-vector
//! law q_D from the origin.
//!
//! Two independent routes are provided: forward evolution of a distribution
//! from one start site ([`LatticeDistribution`]) and backward evolution of
//! the return-probability field `l ↦ P_l(D_k = 0)` for all starts at once
//! ([`ReturnField`]).

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{RapError, Result};
use crate::lattice::{Dim, Grid, Site, Stencil, ORIGIN};
use crate::weights::WeightMoments;

/// Transition structure of D: `q_h` at every site except the origin, `q_d` there.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainKernel {
    dim: Dim,
    q_h: Stencil,
    q_d: Stencil,
}

impl ChainKernel {
    pub fn new(dim: Dim, q_h: Stencil, q_d: Stencil) -> Result<ChainKernel> {
        for (name, q) in [("q_h", &q_h), ("q_d", &q_d)] {
            if (q.total() - 1.0).abs() > 1e-12 {
                return Err(RapError::invalid(name, format!("sums to {}", q.total())));
            }
            if q.entries().iter().any(|&(k, p)| p < 0.0 || !dim.contains(k)) {
                return Err(RapError::invalid(name, "negative mass or wrong dimension"));
            }
            for &(k, p) in q.entries() {
                if (q.get([-k[0], -k[1]]) - p).abs() > 1e-14 {
                    return Err(RapError::invalid(name, format!("not symmetric at {k:?}")));
                }
            }
        }
        Ok(ChainKernel { dim, q_h, q_d })
    }

    pub fn from_moments(dim: Dim, m: &WeightMoments) -> ChainKernel {
        ChainKernel {
            dim,
            q_h: m.h_step_law(),
            q_d: m.d_origin_step_law(),
        }
    }

    /// The chain H: same kernel everywhere.
    pub fn homogeneous(&self) -> ChainKernel {
        ChainKernel {
            dim: self.dim,
            q_h: self.q_h.clone(),
            q_d: self.q_h.clone(),
        }
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn q_h(&self) -> &Stencil {
        &self.q_h
    }

    pub fn q_d(&self) -> &Stencil {
        &self.q_d
    }

    /// Sup-norm range of one step (2K).
    pub fn range(&self) -> i64 {
        self.q_h.sup_range().max(self.q_d.sup_range())
    }
}

/// Numerical settings shared by all DP routines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DpOptions {
    /// Boundary rows/columns with total absolute mass below this are dropped.
    pub prune: f64,
    /// Largest number of grid cells a single DP plane may hold.
    pub budget_cells: usize,
}

impl Default for DpOptions {
    fn default() -> Self {
        DpOptions {
            prune: 1e-30,
            budget_cells: 50_000_000,
        }
    }
}

fn check_budget(cells: usize, opts: &DpOptions, what: &str, step: usize) -> Result<()> {
    if cells > opts.budget_cells {
        return Err(RapError::Budget {
            what: what.to_string(),
            requested: cells,
            limit: opts.budget_cells,
            feasible: format!("n_max <= {}", step.saturating_sub(1)),
        });
    }
    Ok(())
}

/// Forward law of D (or of H, for a homogeneous kernel) from a start site.
#[derive(Debug, Clone)]
pub struct LatticeDistribution {
    grid: Grid,
    absorbed: f64,
    dropped: f64,
    step: usize,
    absorbing: bool,
}

impl LatticeDistribution {
    pub fn new(start: Site) -> LatticeDistribution {
        LatticeDistribution {
            grid: Grid::point(start, 1.0),
            absorbed: 0.0,
            dropped: 0.0,
            step: 0,
            absorbing: false,
        }
    }

    /// Killed on arrival at the origin. `start` must differ from the origin.
    pub fn absorbing(start: Site) -> Result<LatticeDistribution> {
        if start == ORIGIN {
            return Err(RapError::invalid("start", "absorbing chain must start away from the origin"));
        }
        Ok(LatticeDistribution {
            absorbing: true,
            ..LatticeDistribution::new(start)
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// Probability mass still on the lattice (not absorbed, not pruned).
    pub fn free_mass(&self) -> f64 {
        self.grid.sum()
    }

    pub fn absorbed(&self) -> f64 {
        self.absorbed
    }

    pub fn dropped(&self) -> f64 {
        self.dropped
    }

    pub fn at_origin(&self) -> f64 {
        self.grid.get(ORIGIN)
    }

    pub fn advance(&mut self, kernel: &ChainKernel, opts: &DpOptions) -> Result<()> {
        let m0 = self.grid.get(ORIGIN);
        if m0 != 0.0 {
            self.grid.set(ORIGIN, 0.0)?;
        }
        let mut next = self.grid.spread(&kernel.q_h);
        check_budget(next.rect().cells(), opts, "chain distribution", self.step + 1)?;
        if m0 != 0.0 {
            for &(k, p) in kernel.q_d.entries() {
                next.add_at(k, m0 * p)?;
            }
        }
        if self.absorbing {
            let hit = next.get(ORIGIN);
            if hit != 0.0 {
                next.set(ORIGIN, 0.0)?;
                self.absorbed += hit;
            }
        }
        self.dropped += next.trim(opts.prune, None);
        self.grid = next;
        self.step += 1;
        Ok(())
    }
}

/// `P_0(H_k = 0)` for `k = 0..=n_max` by direct stencil DP.
pub fn h_return_probs(kernel: &ChainKernel, n_max: usize, opts: &DpOptions) -> Result<Vec<f64>> {
    d_return_probs(&kernel.homogeneous(), ORIGIN, n_max, opts)
}

/// `P_start(D_k = 0)` for `k = 0..=n_max`.
pub fn d_return_probs(
    kernel: &ChainKernel,
    start: Site,
    n_max: usize,
    opts: &DpOptions,
) -> Result<Vec<f64>> {
    let mut dist = LatticeDistribution::new(start);
    let mut out = Vec::with_capacity(n_max + 1);
    out.push(dist.at_origin());
    for _ in 0..n_max {
        dist.advance(kernel, opts)?;
        out.push(dist.at_origin());
    }
    Ok(out)
}

/// `P_start(τ > k)` for `k = 0..=n_max`, τ the first visit of D to the origin.
pub fn tau_tail(kernel: &ChainKernel, start: Site, n_max: usize, opts: &DpOptions) -> Result<Vec<f64>> {
    let mut dist = LatticeDistribution::absorbing(start)?;
    let mut out = Vec::with_capacity(n_max + 1);
    out.push(1.0);
    for _ in 0..n_max {
        dist.advance(kernel, opts)?;
        out.push(1.0 - dist.absorbed());
    }
    Ok(out)
}

/// `Σ_{k=0}^{n} [P_0(D_k=0) − P_x(D_k=0)]`.
pub fn green_diff_sum(kernel: &ChainKernel, x: Site, n: usize, opts: &DpOptions) -> Result<f64> {
    if x == ORIGIN {
        return Err(RapError::invalid("x", "must be nonzero"));
    }
    let p0 = d_return_probs(kernel, ORIGIN, n, opts)?;
    let px = d_return_probs(kernel, x, n, opts)?;
    Ok(p0.iter().zip(&px).map(|(a, b)| a - b).sum())
}

/// One row of the renewal-identity check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RenewalRow {
    pub n: usize,
    /// Σ_{k≤n} [P_0(D_k=0) − P_x(D_k=0)] from the two return-probability DPs.
    pub green_diff: f64,
    /// Σ_{k≤n} P_0(D_{n−k}=0) P_x(τ>k) from the return DP and the absorbing DP.
    pub renewal: f64,
    pub residual: f64,
}

/// Both sides of the renewal identity for every `n ≤ n_max`.
pub fn renewal_check(kernel: &ChainKernel, x: Site, n_max: usize, opts: &DpOptions) -> Result<Vec<RenewalRow>> {
    if x == ORIGIN {
        return Err(RapError::invalid("x", "must be nonzero"));
    }
    let p0 = d_return_probs(kernel, ORIGIN, n_max, opts)?;
    let px = d_return_probs(kernel, x, n_max, opts)?;
    let tail = tau_tail(kernel, x, n_max, opts)?;
    let mut rows = Vec::with_capacity(n_max + 1);
    let mut lhs = 0.0;
    for n in 0..=n_max {
        lhs += p0[n] - px[n];
        let rhs: f64 = (0..=n).map(|k| p0[n - k] * tail[k]).sum();
        rows.push(RenewalRow {
            n,
            green_diff: lhs,
            renewal: rhs,
            residual: lhs - rhs,
        });
    }
    Ok(rows)
}

/// The field `l ↦ P_l(D_k = 0)`, advanced one step at a time.
#[derive(Debug, Clone)]
pub struct ReturnField {
    kernel: ChainKernel,
    grid: Grid,
    step: usize,
}

impl ReturnField {
    pub fn new(kernel: &ChainKernel) -> ReturnField {
        ReturnField {
            kernel: kernel.clone(),
            grid: Grid::point(ORIGIN, 1.0),
            step: 0,
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// `P_site(D_k = 0)` at the current step k.
    pub fn value(&self, site: Site) -> f64 {
        self.grid.get(site)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn advance(&mut self, opts: &DpOptions) -> Result<()> {
        let at_origin: f64 = self
            .kernel
            .q_d
            .entries()
            .iter()
            .map(|&(k, p)| p * self.grid.get(k))
            .sum();
        // q_h is symmetric, so the backward update is the same convolution.
        let mut next = self.grid.spread(&self.kernel.q_h);
        check_budget(next.rect().cells(), opts, "return field", self.step + 1)?;
        next.set(ORIGIN, at_origin)?;
        next.trim(opts.prune, Some(ORIGIN));
        self.grid = next;
        self.step += 1;
        Ok(())
    }
}

/// Cumulative sums `Σ_{k=0}^{n} P_s(D_k=0)` for several sites at several horizons.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GreenSums {
    pub sites: Vec<Site>,
    /// Sorted horizons n (inclusive upper index of the sum).
    pub horizons: Vec<usize>,
    /// `values[h][s]` = Σ_{k=0}^{horizons[h]} P_{sites[s]}(D_k = 0).
    pub values: Vec<Vec<f64>>,
}

impl GreenSums {
    pub fn at(&self, horizon_idx: usize, site: Site) -> Option<f64> {
        let s = self.sites.iter().position(|&t| t == site)?;
        Some(self.values.get(horizon_idx)?[s])
    }
}

pub fn green_sums(
    kernel: &ChainKernel,
    sites: &[Site],
    horizons: &[usize],
    opts: &DpOptions,
) -> Result<GreenSums> {
    let mut horizons = horizons.to_vec();
    horizons.sort_unstable();
    horizons.dedup();
    let mut field = ReturnField::new(kernel);
    let mut acc: Vec<f64> = sites.iter().map(|&s| field.value(s)).collect();
    let mut values = Vec::with_capacity(horizons.len());
    let mut next = 0;
    while next < horizons.len() && horizons[next] == 0 {
        values.push(acc.clone());
        next += 1;
    }
    let last = horizons.last().copied().unwrap_or(0);
    for k in 1..=last {
        field.advance(opts)?;
        for (a, &s) in acc.iter_mut().zip(sites) {
            *a += field.value(s);
        }
        while next < horizons.len() && horizons[next] == k {
            values.push(acc.clone());
            next += 1;
        }
    }
    Ok(GreenSums {
        sites: sites.to_vec(),
        horizons,
        values,
    })
}

/// Partial sums `S(n) = Σ_{i=0}^{n} [P_l(D_i=0) − P_{l'}(D_i=0)]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LosaScan {
    pub l: Site,
    pub l_prime: Site,
    pub values: Vec<f64>,
    pub max_abs: f64,
}

impl LosaScan {
    /// `max |S(n)|` over `n` in `[lo, hi]`.
    pub fn max_abs_in(&self, lo: usize, hi: usize) -> f64 {
        self.values[lo..=hi.min(self.values.len() - 1)]
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

pub fn losa_scan(kernel: &ChainKernel, l: Site, l_prime: Site, n_max: usize, opts: &DpOptions) -> Result<LosaScan> {
    Ok(losa_scan_pairs(kernel, &[(l, l_prime)], n_max, opts)?.remove(0))
}

/// Several scans sharing one backward DP.
pub fn losa_scan_pairs(
    kernel: &ChainKernel,
    pairs: &[(Site, Site)],
    n_max: usize,
    opts: &DpOptions,
) -> Result<Vec<LosaScan>> {
    let mut field = ReturnField::new(kernel);
    let mut running: Vec<f64> = vec![0.0; pairs.len()];
    let mut values: Vec<Vec<f64>> = vec![Vec::with_capacity(n_max + 1); pairs.len()];
    for k in 0..=n_max {
        if k > 0 {
            field.advance(opts)?;
        }
        for (i, &(l, lp)) in pairs.iter().enumerate() {
            running[i] += field.value(l) - field.value(lp);
            values[i].push(running[i]);
        }
    }
    Ok(pairs
        .iter()
        .zip(values)
        .map(|(&(l, lp), v)| {
            let max_abs = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            LosaScan {
                l,
                l_prime: lp,
                values: v,
                max_abs,
            }
        })
        .collect())
}

/// `P_0(H_k = 0)` for `k = 0..=n_max` from convolution powers in Fourier space.
///
/// The transform length per axis is the smallest power of two holding the
/// support of `H_{n_max}`, so the periodic sum has no aliasing.
pub fn h_return_probs_fft(kernel: &ChainKernel, n_max: usize, opts: &DpOptions) -> Result<Vec<f64>> {
    let width = 2 * kernel.range() as usize * n_max + 1;
    let m = width.next_power_of_two();
    let cells = match kernel.dim {
        Dim::One => m,
        Dim::Two => m * m,
    };
    check_budget(cells, opts, "fft plane", n_max)?;
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(m);
    let wrap = |k: i64| k.rem_euclid(m as i64) as usize;
    let symbol: Vec<f64> = match kernel.dim {
        Dim::One => {
            let mut buf = vec![Complex::new(0.0, 0.0); m];
            for &(k, p) in kernel.q_h.entries() {
                buf[wrap(k[0])].re += p;
            }
            fft.process(&mut buf);
            buf.iter().map(|c| c.re).collect()
        }
        Dim::Two => {
            let mut buf = vec![Complex::new(0.0, 0.0); m * m];
            for &(k, p) in kernel.q_h.entries() {
                buf[wrap(k[1]) * m + wrap(k[0])].re += p;
            }
            for row in buf.chunks_mut(m) {
                fft.process(row);
            }
            let mut col = vec![Complex::new(0.0, 0.0); m];
            for x in 0..m {
                for y in 0..m {
                    col[y] = buf[y * m + x];
                }
                fft.process(&mut col);
                for y in 0..m {
                    buf[y * m + x] = col[y];
                }
            }
            buf.iter().map(|c| c.re).collect()
        }
    };
    let mut power = vec![1.0; symbol.len()];
    let norm = 1.0 / symbol.len() as f64;
    let mut out = Vec::with_capacity(n_max + 1);
    out.push(1.0);
    for _ in 0..n_max {
        let mut s = 0.0;
        for (p, q) in power.iter_mut().zip(&symbol) {
            *p *= q;
            s += *p;
        }
        out.push(s * norm);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::WeightLaw;

    fn ref1() -> ChainKernel {
        ChainKernel::from_moments(Dim::One, &WeightLaw::uniform_dirichlet(Dim::One).moments())
    }

    #[test]
    fn h_returns_small_n() {
        let p = h_return_probs(&ref1(), 2, &DpOptions::default()).unwrap();
        assert_eq!(p[0], 1.0);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!((p[2] - 19.0 / 81.0).abs() < 1e-15);
    }

    #[test]
    fn d_return_first_step_uses_defect_row() {
        let p = d_return_probs(&ref1(), ORIGIN, 1, &DpOptions::default()).unwrap();
        assert!((p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn far_start_never_returns() {
        let p = d_return_probs(&ref1(), [41, 0], 10, &DpOptions::default()).unwrap();
        assert!(p.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tau_tail_first_step() {
        let t = tau_tail(&ref1(), [1, 0], 3, &DpOptions::default()).unwrap();
        assert_eq!(t[0], 1.0);
        assert!((t[1] - 7.0 / 9.0).abs() < 1e-15);
        assert!(t.windows(2).all(|w| w[1] <= w[0]));
        assert!(tau_tail(&ref1(), ORIGIN, 3, &DpOptions::default()).is_err());
    }

    #[test]
    fn green_diff_at_zero_horizon() {
        assert_eq!(green_diff_sum(&ref1(), [3, 0], 0, &DpOptions::default()).unwrap(), 1.0);
    }

    #[test]
    fn backward_field_matches_forward_dp() {
        let k = ref1();
        let opts = DpOptions::default();
        let mut field = ReturnField::new(&k);
        let starts = [[0, 0], [1, 0], [-2, 0], [5, 0]];
        let forward: Vec<Vec<f64>> = starts
            .iter()
            .map(|&s| d_return_probs(&k, s, 60, &opts).unwrap())
            .collect();
        for n in 0..=60 {
            if n > 0 {
                field.advance(&opts).unwrap();
            }
            for (s, f) in starts.iter().zip(&forward) {
                assert!((field.value(*s) - f[n]).abs() < 1e-14, "n={n} s={s:?}");
            }
        }
    }

    #[test]
    fn losa_is_antisymmetric_and_zero_on_diagonal() {
        let k = ref1();
        let opts = DpOptions::default();
        let a = losa_scan(&k, [1, 0], [2, 0], 200, &opts).unwrap();
        let b = losa_scan(&k, [2, 0], [1, 0], 200, &opts).unwrap();
        let z = losa_scan(&k, [1, 0], [1, 0], 200, &opts).unwrap();
        assert!(a.values.iter().zip(&b.values).all(|(x, y)| x == &-y));
        assert!(z.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn budget_error_reports_feasible_horizon() {
        let opts = DpOptions {
            prune: 0.0,
            budget_cells: 41,
        };
        match d_return_probs(&ref1(), ORIGIN, 100, &opts) {
            Err(RapError::Budget { feasible, .. }) => assert_eq!(feasible, "n_max <= 10"),
            other => panic!("expected budget error, got {other:?}"),
        }
    }
}
