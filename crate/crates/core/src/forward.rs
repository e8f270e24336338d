//! Forward simulation of the surface from an inclined plane.

use crate::error::{RapError, Result};
use crate::lattice::{Dim, Rect, Site, ORIGIN};
use crate::rng::StreamKey;
use crate::weights::{Neighborhood, SlopeVector, WeightSampler};

/// Heights on a rectangular window of sites.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightField {
    rect: Rect,
    heights: Vec<f64>,
    step: usize,
}

impl HeightField {
    /// X_0(x) = x·λ on `rect`.
    pub fn init_plane(rect: Rect, slope: &SlopeVector) -> Result<HeightField> {
        if rect.cells() == 0 {
            return Err(RapError::invalid("window", "must contain at least one site"));
        }
        let heights = (0..rect.cells()).map(|i| slope.dot(rect.site(i))).collect();
        Ok(HeightField { rect, heights, step: 0 })
    }

    pub fn rect(&self) -> Rect {
        self.rect
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    pub fn get(&self, s: Site) -> Option<f64> {
        self.rect.index(s).map(|i| self.heights[i])
    }

    /// One synchronous update: every site whose whole neighborhood lies in
    /// the window gets a fresh weight vector and averages its neighbors.
    pub fn evolve_step(&self, nbhd: &Neighborhood, sampler: &WeightSampler, key: &StreamKey) -> Result<HeightField> {
        let k = nbhd.range();
        let ky = match nbhd.dim() {
            Dim::One => 0,
            Dim::Two => k,
        };
        let r = self.rect;
        if r.nx as i64 <= 2 * k || r.ny as i64 <= 2 * ky {
            return Err(RapError::invalid(
                "window",
                format!(
                    "exhausted after {} steps ({}x{} sites, range {k}); widen the initial window",
                    self.step, r.nx, r.ny
                ),
            ));
        }
        let out = Rect {
            x0: r.x0 + k,
            y0: r.y0 + ky,
            nx: r.nx - 2 * k as usize,
            ny: r.ny - 2 * ky as usize,
        };
        let deltas: Vec<isize> = nbhd
            .offsets()
            .iter()
            .map(|j| j[1] as isize * r.nx as isize + j[0] as isize)
            .collect();
        let step = (self.step + 1) as u64;
        let mut w = vec![0.0; deltas.len()];
        let mut heights = Vec::with_capacity(out.cells());
        for row in 0..out.ny {
            let y = out.y0 + row as i64;
            let base_row = (y - r.y0) as usize * r.nx;
            for col in 0..out.nx {
                let x = out.x0 + col as i64;
                let mut rng = key.site_rng(step, [x, y]);
                sampler.sample_into(&mut rng, &mut w);
                let centre = (base_row + (x - r.x0) as usize) as isize;
                let h: f64 = deltas
                    .iter()
                    .zip(&w)
                    .map(|(&d, &wi)| wi * self.heights[(centre + d) as usize])
                    .sum();
                heights.push(h);
            }
        }
        Ok(HeightField {
            rect: out,
            heights,
            step: self.step + 1,
        })
    }
}

/// Window whose n-fold shrinkage is exactly the hull of {0, x}.
pub fn fluctuation_window(dim: Dim, range: i64, x: Site, n: usize) -> Rect {
    let hull = Rect::from_corners(
        [x[0].min(0), x[1].min(0)],
        [x[0].max(0), x[1].max(0)],
    );
    let grow = range * n as i64;
    match dim {
        Dim::One => hull.inflate(grow, 0),
        Dim::Two => hull.inflate(grow, grow),
    }
}

/// One sample of X_n(x) − X_n(0) − x·λ, with no boundary approximation.
pub fn fluctuation_sample(
    nbhd: &Neighborhood,
    sampler: &WeightSampler,
    slope: &SlopeVector,
    x: Site,
    n: usize,
    key: &StreamKey,
    budget_cells: usize,
) -> Result<f64> {
    if x == ORIGIN {
        return Err(RapError::invalid("x", "must be nonzero"));
    }
    if n == 0 {
        return Err(RapError::invalid("n", "must be >= 1"));
    }
    let rect = fluctuation_window(nbhd.dim(), nbhd.range(), x, n);
    if rect.cells() > budget_cells {
        let feasible = max_feasible_n(nbhd.dim(), nbhd.range(), x, budget_cells);
        return Err(RapError::Budget {
            what: "forward window".into(),
            requested: rect.cells(),
            limit: budget_cells,
            feasible: format!("n <= {feasible}"),
        });
    }
    let mut field = HeightField::init_plane(rect, slope)?;
    for _ in 0..n {
        field = field.evolve_step(nbhd, sampler, key)?;
    }
    let hx = field.get(x).ok_or_else(|| RapError::Internal("x left the window".into()))?;
    let h0 = field.get(ORIGIN).ok_or_else(|| RapError::Internal("origin left the window".into()))?;
    Ok(hx - h0 - slope.dot(x))
}

fn max_feasible_n(dim: Dim, range: i64, x: Site, budget: usize) -> usize {
    let (mut lo, mut hi) = (0usize, 1usize << 40);
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if fluctuation_window(dim, range, x, mid).cells() <= budget {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    lo
}
