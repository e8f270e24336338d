//! Lattice sites, finite stencils and dense rectangular grids over Z^1 / Z^2.
//!
//! One-dimensional objects are stored as two-dimensional ones with a single
//! row (`y == 0`), so every routine below serves both dimensions.

use serde::{Deserialize, Serialize};

use crate::error::{RapError, Result};

/// A lattice site. In one dimension the second coordinate is always 0.
pub type Site = [i64; 2];

pub const ORIGIN: Site = [0, 0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dim {
    One,
    Two,
}

impl Dim {
    pub fn from_usize(d: usize) -> Result<Dim> {
        match d {
            1 => Ok(Dim::One),
            2 => Ok(Dim::Two),
            _ => Err(RapError::invalid("dimension", format!("{d} is not 1 or 2"))),
        }
    }

    pub fn as_usize(self) -> usize {
        match self {
            Dim::One => 1,
            Dim::Two => 2,
        }
    }

    /// Builds a site from a coordinate slice of the right length.
    pub fn site(self, coords: &[i64]) -> Result<Site> {
        match (self, coords) {
            (Dim::One, [x]) => Ok([*x, 0]),
            (Dim::Two, [x, y]) => Ok([*x, *y]),
            _ => Err(RapError::invalid(
                "site",
                format!("{coords:?} does not have {} coordinate(s)", self.as_usize()),
            )),
        }
    }

    pub fn contains(self, s: Site) -> bool {
        self == Dim::Two || s[1] == 0
    }
}

pub fn sup_norm(s: Site) -> i64 {
    s[0].abs().max(s[1].abs())
}

/// Euclidean norm |x|.
pub fn euclid(s: Site) -> f64 {
    ((s[0] * s[0] + s[1] * s[1]) as f64).sqrt()
}

pub fn sub(a: Site, b: Site) -> Site {
    [a[0] - b[0], a[1] - b[1]]
}

pub fn add(a: Site, b: Site) -> Site {
    [a[0] + b[0], a[1] + b[1]]
}

/// A finitely supported signed-or-probability weight on offsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stencil {
    entries: Vec<(Site, f64)>,
}

impl Stencil {
    /// Collects entries, merging duplicates and dropping exact zeros. Entries
    /// are kept in lexicographic site order.
    pub fn from_entries(entries: impl IntoIterator<Item = (Site, f64)>) -> Stencil {
        let mut v: Vec<(Site, f64)> = entries.into_iter().collect();
        v.sort_by_key(|e| e.0);
        let mut merged: Vec<(Site, f64)> = Vec::with_capacity(v.len());
        for (s, p) in v {
            match merged.last_mut() {
                Some((last, q)) if *last == s => *q += p,
                _ => merged.push((s, p)),
            }
        }
        merged.retain(|&(_, p)| p != 0.0);
        Stencil { entries: merged }
    }

    pub fn entries(&self) -> &[(Site, f64)] {
        &self.entries
    }

    pub fn get(&self, s: Site) -> f64 {
        self.entries
            .binary_search_by(|e| e.0.cmp(&s))
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    /// Per-axis range `(rx, ry)` of the support.
    pub fn range(&self) -> (i64, i64) {
        self.entries.iter().fold((0, 0), |(rx, ry), (s, _)| {
            (rx.max(s[0].abs()), ry.max(s[1].abs()))
        })
    }

    pub fn sup_range(&self) -> i64 {
        let (rx, ry) = self.range();
        rx.max(ry)
    }

    /// First moment Σ p(k) k.
    pub fn mean(&self) -> [f64; 2] {
        self.entries.iter().fold([0.0, 0.0], |m, (s, p)| {
            [m[0] + p * s[0] as f64, m[1] + p * s[1] as f64]
        })
    }

    /// Second-moment matrix Σ p(k) k_a k_b.
    pub fn second_moment(&self) -> [[f64; 2]; 2] {
        let mut q = [[0.0; 2]; 2];
        for (s, p) in &self.entries {
            let v = [s[0] as f64, s[1] as f64];
            for a in 0..2 {
                for b in 0..2 {
                    q[a][b] += p * v[a] * v[b];
                }
            }
        }
        q
    }
}

/// A rectangle of sites `[x0, x0+nx) × [y0, y0+ny)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x0: i64,
    pub y0: i64,
    pub nx: usize,
    pub ny: usize,
}

impl Rect {
    pub fn from_corners(lo: Site, hi: Site) -> Rect {
        Rect {
            x0: lo[0],
            y0: lo[1],
            nx: (hi[0] - lo[0] + 1).max(0) as usize,
            ny: (hi[1] - lo[1] + 1).max(0) as usize,
        }
    }

    pub fn cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn lo(&self) -> Site {
        [self.x0, self.y0]
    }

    pub fn hi(&self) -> Site {
        [self.x0 + self.nx as i64 - 1, self.y0 + self.ny as i64 - 1]
    }

    pub fn contains(&self, s: Site) -> bool {
        s[0] >= self.x0
            && s[1] >= self.y0
            && s[0] < self.x0 + self.nx as i64
            && s[1] < self.y0 + self.ny as i64
    }

    pub fn index(&self, s: Site) -> Option<usize> {
        if self.contains(s) {
            Some((s[1] - self.y0) as usize * self.nx + (s[0] - self.x0) as usize)
        } else {
            None
        }
    }

    pub fn site(&self, idx: usize) -> Site {
        [
            self.x0 + (idx % self.nx) as i64,
            self.y0 + (idx / self.nx) as i64,
        ]
    }

    pub fn union(&self, other: &Rect) -> Rect {
        let lo = [self.x0.min(other.x0), self.y0.min(other.y0)];
        let (a, b) = (self.hi(), other.hi());
        Rect::from_corners(lo, [a[0].max(b[0]), a[1].max(b[1])])
    }

    pub fn inflate(&self, rx: i64, ry: i64) -> Rect {
        let (lo, hi) = (self.lo(), self.hi());
        Rect::from_corners([lo[0] - rx, lo[1] - ry], [hi[0] + rx, hi[1] + ry])
    }
}

/// Dense real-valued field over a rectangle; zero outside.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    rect: Rect,
    data: Vec<f64>,
}

impl Grid {
    pub fn zeros(rect: Rect) -> Grid {
        Grid {
            rect,
            data: vec![0.0; rect.cells()],
        }
    }

    pub fn point(s: Site, value: f64) -> Grid {
        Grid {
            rect: Rect::from_corners(s, s),
            data: vec![value],
        }
    }

    pub fn from_parts(rect: Rect, data: Vec<f64>) -> Result<Grid> {
        if data.len() != rect.cells() {
            return Err(RapError::Internal(format!(
                "grid data length {} does not match {} cells",
                data.len(),
                rect.cells()
            )));
        }
        Ok(Grid { rect, data })
    }

    pub fn rect(&self) -> Rect {
        self.rect
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, s: Site) -> f64 {
        self.rect.index(s).map(|i| self.data[i]).unwrap_or(0.0)
    }

    /// Sets a value, growing nothing: the site must be inside the rectangle.
    pub fn set(&mut self, s: Site, v: f64) -> Result<()> {
        match self.rect.index(s) {
            Some(i) => {
                self.data[i] = v;
                Ok(())
            }
            None => Err(RapError::Internal(format!("site {s:?} outside grid"))),
        }
    }

    pub fn add_at(&mut self, s: Site, v: f64) -> Result<()> {
        match self.rect.index(s) {
            Some(i) => {
                self.data[i] += v;
                Ok(())
            }
            None => Err(RapError::Internal(format!("site {s:?} outside grid"))),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn scale(&mut self, f: f64) {
        self.data.iter_mut().for_each(|v| *v *= f);
    }

    pub fn iter(&self) -> impl Iterator<Item = (Site, f64)> + '_ {
        self.data
            .iter()
            .enumerate()
            .map(move |(i, &v)| (self.rect.site(i), v))
    }

    /// Σ_s self(s)·other(s) over the overlap of the two rectangles.
    pub fn dot(&self, other: &Grid) -> f64 {
        let (a, b) = (self.rect, other.rect);
        let x_lo = a.x0.max(b.x0);
        let x_hi = (a.x0 + a.nx as i64).min(b.x0 + b.nx as i64);
        let y_lo = a.y0.max(b.y0);
        let y_hi = (a.y0 + a.ny as i64).min(b.y0 + b.ny as i64);
        if x_lo >= x_hi || y_lo >= y_hi {
            return 0.0;
        }
        let len = (x_hi - x_lo) as usize;
        let mut acc = 0.0;
        for y in y_lo..y_hi {
            let ia = a.index([x_lo, y]).unwrap_or(0);
            let ib = b.index([x_lo, y]).unwrap_or(0);
            acc += self.data[ia..ia + len]
                .iter()
                .zip(&other.data[ib..ib + len])
                .map(|(p, q)| p * q)
                .sum::<f64>();
        }
        acc
    }

    /// Convolution with a stencil: out(s + k) += self(s)·w(k).
    /// The output rectangle is the input inflated by the stencil range.
    pub fn spread(&self, stencil: &Stencil) -> Grid {
        let (rx, ry) = stencil.range();
        let out_rect = self.rect.inflate(rx, ry);
        let mut out = vec![0.0; out_rect.cells()];
        let (nx, ny, onx) = (self.rect.nx, self.rect.ny, out_rect.nx);
        for &(k, w) in stencil.entries() {
            let dx = (k[0] + rx) as usize;
            let dy = (k[1] + ry) as usize;
            for row in 0..ny {
                let src = &self.data[row * nx..(row + 1) * nx];
                let start = (row + dy) * onx + dx;
                let dst = &mut out[start..start + nx];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
        Grid {
            rect: out_rect,
            data: out,
        }
    }

    /// Removes boundary rows/columns whose absolute mass is below `eps`,
    /// never shrinking past `keep` (when given). Returns the removed signed mass.
    pub fn trim(&mut self, eps: f64, keep: Option<Site>) -> f64 {
        if eps <= 0.0 || self.data.is_empty() {
            return 0.0;
        }
        let r = self.rect;
        let (mut xl, mut xh, mut yl, mut yh) = (0usize, r.nx, 0usize, r.ny);
        let (kx, ky) = match keep {
            Some(s) if r.contains(s) => ((s[0] - r.x0) as usize, (s[1] - r.y0) as usize),
            _ => (usize::MAX, usize::MAX),
        };
        let col_abs = |x: usize, yl: usize, yh: usize, d: &[f64]| -> f64 {
            (yl..yh).map(|y| d[y * r.nx + x].abs()).sum()
        };
        let row_abs =
            |y: usize, xl: usize, xh: usize, d: &[f64]| -> f64 { d[y * r.nx + xl..y * r.nx + xh].iter().map(|v| v.abs()).sum() };
        let mut removed = 0.0;
        loop {
            let mut changed = false;
            if xh - xl > 1 && xl != kx && col_abs(xl, yl, yh, &self.data) < eps {
                removed += (yl..yh).map(|y| self.data[y * r.nx + xl]).sum::<f64>();
                xl += 1;
                changed = true;
            }
            if xh - xl > 1 && xh - 1 != kx && col_abs(xh - 1, yl, yh, &self.data) < eps {
                removed += (yl..yh).map(|y| self.data[y * r.nx + xh - 1]).sum::<f64>();
                xh -= 1;
                changed = true;
            }
            if yh - yl > 1 && yl != ky && row_abs(yl, xl, xh, &self.data) < eps {
                removed += self.data[yl * r.nx + xl..yl * r.nx + xh].iter().sum::<f64>();
                yl += 1;
                changed = true;
            }
            if yh - yl > 1 && yh - 1 != ky && row_abs(yh - 1, xl, xh, &self.data) < eps {
                removed += self.data[(yh - 1) * r.nx + xl..(yh - 1) * r.nx + xh]
                    .iter()
                    .sum::<f64>();
                yh -= 1;
                changed = true;
            }
            if !changed {
                break;
            }
        }
        if (xl, xh, yl, yh) != (0, r.nx, 0, r.ny) {
            let new_rect = Rect {
                x0: r.x0 + xl as i64,
                y0: r.y0 + yl as i64,
                nx: xh - xl,
                ny: yh - yl,
            };
            let mut data = Vec::with_capacity(new_rect.cells());
            for y in yl..yh {
                data.extend_from_slice(&self.data[y * r.nx + xl..y * r.nx + xh]);
            }
            self.rect = new_rect;
            self.data = data;
        }
        removed
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stencil_merges_and_sorts() {
        let s = Stencil::from_entries(vec![([1, 0], 0.25), ([-1, 0], 0.5), ([1, 0], 0.25)]);
        assert_eq!(s.entries(), &[([-1, 0], 0.5), ([1, 0], 0.5)]);
        assert_eq!(s.get([1, 0]), 0.5);
        assert_eq!(s.get([0, 0]), 0.0);
        assert_eq!(s.range(), (1, 0));
    }

    #[test]
    fn spread_of_point_mass_is_the_stencil() {
        let g = Grid::point([3, -2], 1.0);
        let st = Stencil::from_entries(vec![([-1, 0], 0.2), ([0, 1], 0.3), ([1, -1], 0.5)]);
        let out = g.spread(&st);
        assert_eq!(out.get([2, -2]), 0.2);
        assert_eq!(out.get([3, -1]), 0.3);
        assert_eq!(out.get([4, -3]), 0.5);
        assert!((out.sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn trim_keeps_requested_site() {
        let r = Rect::from_corners([-3, 0], [3, 0]);
        let mut g = Grid::from_parts(r, vec![1e-40, 1e-35, 0.2, 0.6, 0.2, 0.0, 0.0]).unwrap();
        let removed = g.trim(1e-30, Some([0, 0]));
        assert_eq!(g.rect().x0, -1);
        assert_eq!(g.rect().nx, 3);
        assert!(removed < 1e-30);
        let mut h = Grid::from_parts(r, vec![0.0, 0.0, 0.0, 1e-40, 0.0, 0.0, 0.5]).unwrap();
        h.trim(1e-30, Some([0, 0]));
        assert!(h.rect().contains([0, 0]));
        assert!(h.rect().contains([3, 0]));
    }

    #[test]
    fn dot_over_partial_overlap() {
        let a = Grid::from_parts(Rect::from_corners([0, 0], [2, 0]), vec![1.0, 2.0, 3.0]).unwrap();
        let b = Grid::from_parts(Rect::from_corners([1, 0], [4, 0]), vec![1.0, 1.0, 5.0, 5.0]).unwrap();
        assert_eq!(a.dot(&b), 5.0);
        assert_eq!(b.dot(&a), 5.0);
    }
}
