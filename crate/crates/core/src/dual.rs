//! Backward dual: quenched walker distributions pushed through sampled
//! environment layers, and the W-increment series built from them.

use serde::Serialize;

use crate::error::{RapError, Result};
use crate::lattice::{Grid, Rect, Site, ORIGIN};
use crate::rng::StreamKey;
use crate::weights::{Neighborhood, SlopeVector, WeightSampler};

/// Mass drift beyond this before renormalizing counts as an anomaly.
const MASS_TOLERANCE: f64 = 1e-12;

/// Law of a walker given the layers seen so far.
#[derive(Debug, Clone, PartialEq)]
pub struct QuenchedDistribution {
    grid: Grid,
}

impl QuenchedDistribution {
    pub fn point(s: Site) -> QuenchedDistribution {
        QuenchedDistribution { grid: Grid::point(s, 1.0) }
    }

    pub fn from_grid(grid: Grid) -> QuenchedDistribution {
        QuenchedDistribution { grid }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn support(&self) -> Rect {
        self.grid.rect()
    }

    pub fn mass(&self) -> f64 {
        self.grid.sum()
    }

    pub fn mean_position(&self) -> [f64; 2] {
        self.grid.iter().fold([0.0, 0.0], |m, (s, p)| {
            [m[0] + p * s[0] as f64, m[1] + p * s[1] as f64]
        })
    }
}

/// One weight vector per site of a rectangle, for a single time step.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentLayer {
    step: u64,
    rect: Rect,
    offsets: Vec<Site>,
    weights: Vec<f64>,
}

impl EnvironmentLayer {
    /// Draws the weights of every site in `rect` from its own keyed stream.
    pub fn sample(nbhd: &Neighborhood, sampler: &WeightSampler, key: &StreamKey, step: u64, rect: Rect) -> EnvironmentLayer {
        let len = nbhd.len();
        let mut weights = vec![0.0; rect.cells() * len];
        for (i, slot) in weights.chunks_mut(len).enumerate() {
            let mut rng = key.site_rng(step, rect.site(i));
            sampler.sample_into(&mut rng, slot);
        }
        EnvironmentLayer {
            step,
            rect,
            offsets: nbhd.offsets().to_vec(),
            weights,
        }
    }

    /// Same vector at every site.
    pub fn uniform(nbhd: &Neighborhood, step: u64, rect: Rect, atom: &[f64]) -> Result<EnvironmentLayer> {
        if atom.len() != nbhd.len() {
            return Err(RapError::invalid("atom", "length differs from the neighborhood"));
        }
        let weights = atom.iter().copied().cycle().take(rect.cells() * atom.len()).collect();
        Ok(EnvironmentLayer {
            step,
            rect,
            offsets: nbhd.offsets().to_vec(),
            weights,
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn rect(&self) -> Rect {
        self.rect
    }

    pub fn weights_at(&self, s: Site) -> Option<&[f64]> {
        let len = self.offsets.len();
        self.rect.index(s).map(|i| &self.weights[i * len..(i + 1) * len])
    }

    /// θ(l)·λ, the mean displacement of the realized vector at `l` along λ.
    pub fn drift_at(&self, s: Site, slope: &SlopeVector) -> Option<f64> {
        self.weights_at(s)
            .map(|w| w.iter().zip(&self.offsets).map(|(wi, j)| wi * slope.dot(*j)).sum())
    }
}

/// ρ'(j) = Σ_l ρ(l) u(l, j).
pub fn evolve_distribution(rho: &QuenchedDistribution, layer: &EnvironmentLayer) -> Result<QuenchedDistribution> {
    let r = rho.support();
    let lr = layer.rect;
    if !(lr.contains(r.lo()) && lr.contains(r.hi())) {
        return Err(RapError::Internal(format!(
            "layer {:?} does not cover support {:?}",
            lr, r
        )));
    }
    let (mut kx, mut ky) = (0, 0);
    for j in &layer.offsets {
        kx = kx.max(j[0].abs());
        ky = ky.max(j[1].abs());
    }
    let out_rect = r.inflate(kx, ky);
    let mut out = vec![0.0; out_rect.cells()];
    let len = layer.offsets.len();
    let deltas: Vec<isize> = layer
        .offsets
        .iter()
        .map(|j| (j[1] + ky) as isize * out_rect.nx as isize + (j[0] + kx) as isize)
        .collect();
    let src = rho.grid.data();
    for row in 0..r.ny {
        let y = r.y0 + row as i64;
        let lrow = layer.rect.index([r.x0, y]).expect("covered");
        for col in 0..r.nx {
            let p = src[row * r.nx + col];
            if p == 0.0 {
                continue;
            }
            let w = &layer.weights[(lrow + col) * len..(lrow + col + 1) * len];
            // the out cell for (col,row) shifted by offset j sits at base + delta(j)
            let base = (row * out_rect.nx + col) as isize;
            for (d, wi) in deltas.iter().zip(w) {
                out[(base + d) as usize] += p * wi;
            }
        }
    }
    Ok(QuenchedDistribution {
        grid: Grid::from_parts(out_rect, out)?,
    })
}

/// (W^x − W^0)·λ = Σ_l [ρ_x(l) − ρ_0(l)] θ(l)·λ.
pub fn w_increment(rho_x: &QuenchedDistribution, rho_0: &QuenchedDistribution, layer: &EnvironmentLayer, slope: &SlopeVector) -> Result<f64> {
    Ok(drift_sum(rho_x, layer, slope)? - drift_sum(rho_0, layer, slope)?)
}

fn drift_sum(rho: &QuenchedDistribution, layer: &EnvironmentLayer, slope: &SlopeVector) -> Result<f64> {
    let mut acc = 0.0;
    for (s, p) in rho.grid.iter() {
        if p != 0.0 {
            let d = layer
                .drift_at(s, slope)
                .ok_or_else(|| RapError::Internal(format!("layer misses site {s:?}")))?;
            acc += p * d;
        }
    }
    Ok(acc)
}

/// Σ_l ρ_a(l) ρ_b(l): two conditionally independent walkers meet.
pub fn quenched_coincidence(a: &QuenchedDistribution, b: &QuenchedDistribution) -> f64 {
    a.grid.dot(&b.grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesOptions {
    /// Boundary rows/columns of ρ below this mass are dropped.
    pub prune: f64,
    /// Largest layer a single step may sample.
    pub budget_cells: usize,
    /// Record coincidence probabilities at each step.
    pub trace: bool,
}

impl Default for SeriesOptions {
    fn default() -> Self {
        SeriesOptions {
            prune: 1e-18,
            budget_cells: 20_000_000,
            trace: false,
        }
    }
}

/// Coincidences before step i: (ρ_x·ρ_0, ρ_0·ρ_0) at i−1 layers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoincidencePoint {
    pub x_vs_0: f64,
    pub zero_vs_0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesState {
    /// Σ_{i≤N} (W_i^{x_j} − W_i^0)·λ, one entry per requested site.
    pub values: Vec<f64>,
    /// Present when tracing; one point per step for the first site.
    pub trace: Option<Vec<CoincidencePoint>>,
    /// Steps whose mass drifted beyond tolerance before renormalizing.
    pub anomalies: usize,
}

impl SeriesState {
    pub fn value(&self) -> f64 {
        self.values[0]
    }
}

/// Dual series for one site against the origin.
pub fn series_sample(
    nbhd: &Neighborhood,
    sampler: &WeightSampler,
    slope: &SlopeVector,
    x: Site,
    n: usize,
    key: &StreamKey,
    opts: &SeriesOptions,
) -> Result<SeriesState> {
    series_sample_sites(nbhd, sampler, slope, &[x], n, key, opts)
}

/// Dual series for several sites at once, all walkers sharing the layers.
pub fn series_sample_sites(
    nbhd: &Neighborhood,
    sampler: &WeightSampler,
    slope: &SlopeVector,
    sites: &[Site],
    n: usize,
    key: &StreamKey,
    opts: &SeriesOptions,
) -> Result<SeriesState> {
    if sites.is_empty() {
        return Err(RapError::invalid("x", "need at least one site"));
    }
    if sites.contains(&ORIGIN) {
        return Err(RapError::invalid("x", "must be nonzero"));
    }
    if n == 0 {
        return Err(RapError::invalid("N", "must be >= 1"));
    }
    // walker 0 starts at the origin, walker j+1 at sites[j]
    let mut rhos: Vec<QuenchedDistribution> = std::iter::once(ORIGIN)
        .chain(sites.iter().copied())
        .map(QuenchedDistribution::point)
        .collect();
    let mut values = vec![0.0; sites.len()];
    let mut trace = opts.trace.then(|| Vec::with_capacity(n));
    let mut anomalies = 0;
    let mut drifts = vec![0.0; rhos.len()];
    for i in 1..=n {
        if let Some(t) = trace.as_mut() {
            t.push(CoincidencePoint {
                x_vs_0: quenched_coincidence(&rhos[1], &rhos[0]),
                zero_vs_0: quenched_coincidence(&rhos[0], &rhos[0]),
            });
        }
        let rect = rhos
            .iter()
            .skip(1)
            .fold(rhos[0].support(), |r, rho| r.union(&rho.support()));
        if rect.cells() > opts.budget_cells {
            return Err(RapError::Budget {
                what: "environment layer".into(),
                requested: rect.cells(),
                limit: opts.budget_cells,
                feasible: format!("N <= {}", i - 1),
            });
        }
        let layer = EnvironmentLayer::sample(nbhd, sampler, key, i as u64, rect);
        for (d, rho) in drifts.iter_mut().zip(&rhos) {
            *d = drift_sum(rho, &layer, slope)?;
        }
        for (v, d) in values.iter_mut().zip(&drifts[1..]) {
            *v += d - drifts[0];
        }
        for rho in rhos.iter_mut() {
            let mut next = evolve_distribution(rho, &layer)?;
            next.grid.trim(opts.prune, None);
            let m = next.mass();
            if (m - 1.0).abs() > MASS_TOLERANCE {
                anomalies += 1;
            }
            next.grid.scale(1.0 / m);
            *rho = next;
        }
    }
    Ok(SeriesState {
        values,
        trace,
        anomalies,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Dim;
    use crate::rng::Domain;
    use crate::weights::WeightLaw;

    fn ref1() -> (Neighborhood, WeightSampler) {
        let law = WeightLaw::uniform_dirichlet(Dim::One);
        (law.neighborhood().clone(), law.sampler())
    }

    #[test]
    fn point_mass_moves_by_the_site_vector() {
        let (nb, s) = ref1();
        let key = StreamKey::new(5, Domain::Test, 0);
        let layer = EnvironmentLayer::sample(&nb, &s, &key, 1, Rect::from_corners([-3, 0], [3, 0]));
        let rho = evolve_distribution(&QuenchedDistribution::point([2, 0]), &layer).unwrap();
        let w = layer.weights_at([2, 0]).unwrap();
        assert_eq!(rho.grid().get([1, 0]), w[0]);
        assert_eq!(rho.grid().get([2, 0]), w[1]);
        assert_eq!(rho.grid().get([3, 0]), w[2]);
        assert!((rho.mass() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn identity_layer_changes_nothing() {
        let nb = Neighborhood::nearest(Dim::Two);
        let rect = Rect::from_corners([-2, -2], [2, 2]);
        let id = nb.position(ORIGIN).unwrap();
        let mut atom = vec![0.0; nb.len()];
        atom[id] = 1.0;
        let layer = EnvironmentLayer::uniform(&nb, 1, rect, &atom).unwrap();
        let rho = QuenchedDistribution::point([1, -1]);
        let next = evolve_distribution(&rho, &layer).unwrap();
        assert_eq!(next.grid().get([1, -1]), 1.0);
        assert_eq!(next.mass(), 1.0);
        let slope = SlopeVector([1.0, 2.0]);
        let other = QuenchedDistribution::point([0, 0]);
        assert_eq!(w_increment(&rho, &other, &layer, &slope).unwrap(), 0.0);
        assert_eq!(w_increment(&rho, &rho, &layer, &slope).unwrap(), 0.0);
    }

    #[test]
    fn uncovered_support_is_an_internal_error() {
        let (nb, s) = ref1();
        let key = StreamKey::new(5, Domain::Test, 0);
        let layer = EnvironmentLayer::sample(&nb, &s, &key, 1, Rect::from_corners([0, 0], [1, 0]));
        assert!(matches!(
            evolve_distribution(&QuenchedDistribution::point([4, 0]), &layer),
            Err(RapError::Internal(_))
        ));
    }

    #[test]
    fn coincidence_edges() {
        let a = QuenchedDistribution::point([3, 0]);
        assert_eq!(quenched_coincidence(&a, &a), 1.0);
        assert_eq!(quenched_coincidence(&a, &QuenchedDistribution::point([0, 0])), 0.0);
    }

    #[test]
    fn series_telescopes_to_mean_displacement() {
        // without pruning the series equals the difference of mean positions minus x·λ
        let (nb, s) = ref1();
        let slope = SlopeVector([1.0, 0.0]);
        let key = StreamKey::new(9, Domain::Test, 4);
        let opts = SeriesOptions {
            prune: 0.0,
            ..SeriesOptions::default()
        };
        let x = [5, 0];
        let n = 40;
        let st = series_sample(&nb, &s, &slope, x, n, &key, &opts).unwrap();
        let mut r0 = QuenchedDistribution::point(ORIGIN);
        let mut rx = QuenchedDistribution::point(x);
        for i in 1..=n as u64 {
            let rect = r0.support().union(&rx.support());
            let layer = EnvironmentLayer::sample(&nb, &s, &key, i, rect);
            r0 = evolve_distribution(&r0, &layer).unwrap();
            rx = evolve_distribution(&rx, &layer).unwrap();
        }
        let direct = rx.mean_position()[0] - r0.mean_position()[0] - 5.0;
        assert!((st.value() - direct).abs() < 1e-12, "{} vs {direct}", st.value());
        assert_eq!(st.anomalies, 0);
    }

    #[test]
    fn trace_starts_with_point_masses() {
        let (nb, s) = ref1();
        let key = StreamKey::new(1, Domain::Test, 0);
        let opts = SeriesOptions {
            trace: true,
            ..SeriesOptions::default()
        };
        let st = series_sample(&nb, &s, &SlopeVector([1.0, 0.0]), [1, 0], 5, &key, &opts).unwrap();
        let t = st.trace.unwrap();
        assert_eq!(t.len(), 5);
        assert_eq!(t[0].x_vs_0, 0.0);
        assert_eq!(t[0].zero_vs_0, 1.0);
    }

    #[test]
    fn degenerate_law_gives_zero_series() {
        let nb = Neighborhood::nearest(Dim::One);
        let law = WeightLaw::deterministic(nb.clone(), vec![0.25, 0.5, 0.25]).unwrap();
        let key = StreamKey::new(1, Domain::Test, 0);
        let st = series_sample(&nb, &law.sampler(), &SlopeVector([1.0, 0.0]), [3, 0], 50, &key, &SeriesOptions::default()).unwrap();
        assert!(st.value().abs() < 1e-13);
    }
}
