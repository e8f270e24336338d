//! Random average weight laws and the moment-level quantities derived from them.

use rand::Rng;
use rand_distr::{Distribution, Gamma, weighted::WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::error::{RapError, Result};
use crate::lattice::{sup_norm, Dim, Site, Stencil};

/// Finite set of offsets carrying the weight vector of one site.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    dim: Dim,
    offsets: Vec<Site>,
    range: i64,
}

impl Neighborhood {
    pub fn new(dim: Dim, mut offsets: Vec<Site>) -> Result<Neighborhood> {
        if let Some(bad) = offsets.iter().find(|s| !dim.contains(**s)) {
            return Err(RapError::invalid(
                "offsets",
                format!("{bad:?} is not a {}-dimensional offset", dim.as_usize()),
            ));
        }
        offsets.sort();
        if offsets.windows(2).any(|w| w[0] == w[1]) {
            return Err(RapError::invalid("offsets", "duplicate offset"));
        }
        for unit in unit_ball(dim) {
            if offsets.binary_search(&unit).is_err() {
                return Err(RapError::invalid(
                    "offsets",
                    format!("must contain every offset with |j| <= 1; missing {unit:?}"),
                ));
            }
        }
        let range = offsets.iter().map(|s| sup_norm(*s)).max().unwrap_or(0);
        Ok(Neighborhood {
            dim,
            offsets,
            range,
        })
    }

    /// `{-1,0,1}` in d=1, the five-point cross in d=2.
    pub fn nearest(dim: Dim) -> Neighborhood {
        Neighborhood::new(dim, unit_ball(dim)).expect("unit ball is a valid neighborhood")
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    /// Offsets in canonical (lexicographic) order.
    pub fn offsets(&self) -> &[Site] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Sup-norm range K.
    pub fn range(&self) -> i64 {
        self.range
    }

    pub fn position(&self, s: Site) -> Option<usize> {
        self.offsets.binary_search(&s).ok()
    }
}

fn unit_ball(dim: Dim) -> Vec<Site> {
    match dim {
        Dim::One => vec![[-1, 0], [0, 0], [1, 0]],
        Dim::Two => vec![[-1, 0], [0, -1], [0, 0], [0, 1], [1, 0]],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightFamily {
    Dirichlet { alpha: Vec<f64> },
    Mixture { atoms: Vec<Vec<f64>>, probs: Vec<f64> },
}

/// Law of the i.i.d. random probability vectors `u(i, i + ·)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightLaw {
    nbhd: Neighborhood,
    family: WeightFamily,
}

const SUM_TOL: f64 = 1e-12;

impl WeightLaw {
    pub fn dirichlet(nbhd: Neighborhood, alpha: Vec<f64>) -> Result<WeightLaw> {
        if alpha.len() != nbhd.len() {
            return Err(RapError::invalid(
                "alpha",
                format!("{} parameters for {} offsets", alpha.len(), nbhd.len()),
            ));
        }
        if let Some((i, a)) = alpha
            .iter()
            .enumerate()
            .find(|(_, a)| !(a.is_finite() && **a > 0.0))
        {
            return Err(RapError::invalid(
                "alpha",
                format!("parameter {a} for offset {:?} must be positive", nbhd.offsets()[i]),
            ));
        }
        let law = WeightLaw {
            nbhd,
            family: WeightFamily::Dirichlet { alpha },
        };
        law.check_mean_condition()?;
        Ok(law)
    }

    pub fn mixture(nbhd: Neighborhood, atoms: Vec<Vec<f64>>, probs: Vec<f64>) -> Result<WeightLaw> {
        if atoms.is_empty() || atoms.len() != probs.len() {
            return Err(RapError::invalid(
                "atoms",
                format!("{} atoms with {} probabilities", atoms.len(), probs.len()),
            ));
        }
        let mut normalized = Vec::with_capacity(atoms.len());
        for (m, v) in atoms.into_iter().enumerate() {
            if v.len() != nbhd.len() {
                return Err(RapError::invalid(
                    "atoms",
                    format!("atom {m} has {} entries for {} offsets", v.len(), nbhd.len()),
                ));
            }
            if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(RapError::invalid("atoms", format!("atom {m} has a negative entry")));
            }
            let s: f64 = v.iter().sum();
            if (s - 1.0).abs() > SUM_TOL {
                return Err(RapError::invalid("atoms", format!("atom {m} sums to {s}")));
            }
            normalized.push(v.iter().map(|x| x / s).collect());
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(RapError::invalid("probs", "negative atom probability"));
        }
        let ps: f64 = probs.iter().sum();
        if (ps - 1.0).abs() > SUM_TOL {
            return Err(RapError::invalid("probs", format!("probabilities sum to {ps}")));
        }
        let law = WeightLaw {
            nbhd,
            family: WeightFamily::Mixture {
                atoms: normalized,
                probs: probs.iter().map(|p| p / ps).collect(),
            },
        };
        law.check_mean_condition()?;
        Ok(law)
    }

    /// Dirichlet(1, …, 1) on the nearest-neighbor set.
    pub fn uniform_dirichlet(dim: Dim) -> WeightLaw {
        let nbhd = Neighborhood::nearest(dim);
        let alpha = vec![1.0; nbhd.len()];
        WeightLaw::dirichlet(nbhd, alpha).expect("uniform Dirichlet is valid")
    }

    /// A deterministic weight vector (single-atom mixture).
    pub fn deterministic(nbhd: Neighborhood, atom: Vec<f64>) -> Result<WeightLaw> {
        WeightLaw::mixture(nbhd, vec![atom], vec![1.0])
    }

    pub fn neighborhood(&self) -> &Neighborhood {
        &self.nbhd
    }

    pub fn family(&self) -> &WeightFamily {
        &self.family
    }

    pub fn dim(&self) -> Dim {
        self.nbhd.dim
    }

    fn check_mean_condition(&self) -> Result<()> {
        let m = self.moments();
        for unit in unit_ball(self.nbhd.dim) {
            let i = self.nbhd.position(unit).expect("unit ball checked at construction");
            if m.mean[i] <= 0.0 {
                return Err(RapError::invalid(
                    "law",
                    format!("mean weight at offset {unit:?} is {}, must be > 0", m.mean[i]),
                ));
            }
        }
        Ok(())
    }

    /// Closed-form means ū(j) and pair moments m(j,k).
    pub fn moments(&self) -> WeightMoments {
        let n = self.nbhd.len();
        let mut mean = vec![0.0; n];
        let mut pair = vec![0.0; n * n];
        match &self.family {
            WeightFamily::Dirichlet { alpha } => {
                let s: f64 = alpha.iter().sum();
                for j in 0..n {
                    mean[j] = alpha[j] / s;
                    for k in 0..n {
                        let num = if j == k {
                            alpha[j] * (alpha[j] + 1.0)
                        } else {
                            alpha[j] * alpha[k]
                        };
                        pair[j * n + k] = num / (s * (s + 1.0));
                    }
                }
            }
            WeightFamily::Mixture { atoms, probs } => {
                for (v, p) in atoms.iter().zip(probs) {
                    for j in 0..n {
                        mean[j] += p * v[j];
                        for k in 0..n {
                            pair[j * n + k] += p * v[j] * v[k];
                        }
                    }
                }
            }
        }
        WeightMoments {
            offsets: self.nbhd.offsets.clone(),
            mean,
            pair,
        }
    }

    pub fn sampler(&self) -> WeightSampler {
        match &self.family {
            WeightFamily::Dirichlet { alpha } => WeightSampler::Dirichlet(
                alpha
                    .iter()
                    .map(|a| Gamma::new(*a, 1.0).expect("validated shape"))
                    .collect(),
            ),
            WeightFamily::Mixture { atoms, probs } => WeightSampler::Mixture {
                pick: WeightedIndex::new(probs).expect("validated probabilities"),
                atoms: atoms.clone(),
            },
        }
    }

    pub fn to_spec(&self) -> LawSpec {
        let offsets = self
            .nbhd
            .offsets
            .iter()
            .map(|s| match self.nbhd.dim {
                Dim::One => vec![s[0]],
                Dim::Two => vec![s[0], s[1]],
            })
            .collect();
        let (family, alpha, atoms, probs) = match &self.family {
            WeightFamily::Dirichlet { alpha } => ("dirichlet", Some(alpha.clone()), None, None),
            WeightFamily::Mixture { atoms, probs } => {
                ("mixture", None, Some(atoms.clone()), Some(probs.clone()))
            }
        };
        LawSpec {
            dimension: self.nbhd.dim.as_usize(),
            family: family.to_string(),
            offsets,
            alpha,
            atoms,
            probs,
        }
    }
}

/// Serializable description of a law, as written in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawSpec {
    pub dimension: usize,
    /// `"dirichlet"` or `"mixture"`.
    pub family: String,
    pub offsets: Vec<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atoms: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<f64>>,
}

impl LawSpec {
    pub fn build(&self) -> Result<WeightLaw> {
        let dim = Dim::from_usize(self.dimension)?;
        let offsets = self
            .offsets
            .iter()
            .map(|c| dim.site(c))
            .collect::<Result<Vec<_>>>()?;
        // Parameters are listed in the same order as `offsets`; reorder to canonical order.
        let mut order: Vec<usize> = (0..offsets.len()).collect();
        order.sort_by_key(|&i| offsets[i]);
        let nbhd = Neighborhood::new(dim, offsets)?;
        let permute = |v: &Vec<f64>| order.iter().map(|&i| v.get(i).copied().unwrap_or(f64::NAN)).collect::<Vec<_>>();
        match self.family.as_str() {
            "dirichlet" => {
                let alpha = self
                    .alpha
                    .as_ref()
                    .ok_or_else(|| RapError::invalid("alpha", "required for family dirichlet"))?;
                if alpha.len() != nbhd.len() {
                    return Err(RapError::invalid(
                        "alpha",
                        format!("{} parameters for {} offsets", alpha.len(), nbhd.len()),
                    ));
                }
                WeightLaw::dirichlet(nbhd, permute(alpha))
            }
            "mixture" => {
                let atoms = self
                    .atoms
                    .as_ref()
                    .ok_or_else(|| RapError::invalid("atoms", "required for family mixture"))?;
                let probs = self
                    .probs
                    .clone()
                    .ok_or_else(|| RapError::invalid("probs", "required for family mixture"))?;
                if let Some(bad) = atoms.iter().position(|a| a.len() != nbhd.len()) {
                    return Err(RapError::invalid(
                        "atoms",
                        format!("atom {bad} has {} entries for {} offsets", atoms[bad].len(), nbhd.len()),
                    ));
                }
                WeightLaw::mixture(nbhd, atoms.iter().map(permute).collect(), probs)
            }
            other => Err(RapError::invalid(
                "family",
                format!("unknown family `{other}` (expected dirichlet or mixture)"),
            )),
        }
    }
}

/// Exact samplers for the supported families.
#[derive(Debug, Clone)]
pub enum WeightSampler {
    Dirichlet(Vec<Gamma<f64>>),
    Mixture {
        pick: WeightedIndex<f64>,
        atoms: Vec<Vec<f64>>,
    },
}

impl WeightSampler {
    /// Always returns `atom`. Bypasses law validation, so it can express
    /// environments (such as the identity) that no admissible law produces.
    pub fn constant(atom: Vec<f64>) -> WeightSampler {
        WeightSampler::Mixture {
            pick: WeightedIndex::new([1.0]).expect("single positive weight"),
            atoms: vec![atom],
        }
    }

    /// Writes one probability vector (canonical offset order) into `out`.
    #[inline]
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            WeightSampler::Dirichlet(gammas) => {
                let mut s = 0.0;
                for (o, g) in out.iter_mut().zip(gammas) {
                    *o = g.sample(rng);
                    s += *o;
                }
                if s > 0.0 {
                    let inv = 1.0 / s;
                    out.iter_mut().for_each(|o| *o *= inv);
                } else {
                    // all variates underflowed (tiny shapes)
                    let n = out.len();
                    out.iter_mut().for_each(|o| *o = 1.0 / n as f64);
                }
            }
            WeightSampler::Mixture { pick, atoms } => {
                out.copy_from_slice(&atoms[pick.sample(rng)]);
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, len: usize) -> Vec<f64> {
        let mut v = vec![0.0; len];
        self.sample_into(rng, &mut v);
        v
    }
}

/// ū(j) and m(j,k) for one law, indexed in canonical offset order.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMoments {
    offsets: Vec<Site>,
    mean: Vec<f64>,
    pair: Vec<f64>,
}

impl WeightMoments {
    pub fn offsets(&self) -> &[Site] {
        &self.offsets
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn mean_at(&self, j: Site) -> f64 {
        self.index(j).map(|i| self.mean[i]).unwrap_or(0.0)
    }

    pub fn pair_at(&self, j: Site, k: Site) -> f64 {
        match (self.index(j), self.index(k)) {
            (Some(a), Some(b)) => self.pair[a * self.offsets.len() + b],
            _ => 0.0,
        }
    }

    fn index(&self, j: Site) -> Option<usize> {
        self.offsets.binary_search(&j).ok()
    }

    /// One-step law of H: q_H(k) = Σ_j ū(j) ū(j+k).
    pub fn h_step_law(&self) -> Stencil {
        let n = self.offsets.len();
        Stencil::from_entries((0..n).flat_map(|a| {
            (0..n).map(move |b| {
                let k = [self.offsets[b][0] - self.offsets[a][0], self.offsets[b][1] - self.offsets[a][1]];
                (k, self.mean[a] * self.mean[b])
            })
        }))
    }

    /// Law of one step of D from the origin: q_D(k) = Σ_j m(j, j+k).
    pub fn d_origin_step_law(&self) -> Stencil {
        let n = self.offsets.len();
        Stencil::from_entries((0..n).flat_map(|a| {
            (0..n).map(move |b| {
                let k = [self.offsets[b][0] - self.offsets[a][0], self.offsets[b][1] - self.offsets[a][1]];
                (k, self.pair[a * n + b])
            })
        }))
    }

    /// μ, σ² and the mean drift vector for slope `lambda`.
    pub fn drift_stats(&self, lambda: &SlopeVector) -> DriftStats {
        let proj: Vec<f64> = self.offsets.iter().map(|j| lambda.dot(*j)).collect();
        let mu: f64 = proj.iter().zip(&self.mean).map(|(p, m)| p * m).sum();
        let n = proj.len();
        let mut sigma2 = 0.0;
        for a in 0..n {
            for b in 0..n {
                sigma2 += (proj[a] - mu) * (proj[b] - mu) * self.pair[a * n + b];
            }
        }
        let drift_mean = self.offsets.iter().zip(&self.mean).fold([0.0, 0.0], |d, (j, m)| {
            [d[0] + m * j[0] as f64, d[1] + m * j[1] as f64]
        });
        let scale = proj.iter().fold(0.0f64, |s, p| s.max(p * p));
        DriftStats {
            mu,
            sigma2: sigma2.max(0.0),
            drift_mean,
            scale,
        }
    }
}

/// Moments of the drift θ_1(0)·λ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftStats {
    pub mu: f64,
    pub sigma2: f64,
    pub drift_mean: [f64; 2],
    #[serde(skip)]
    scale: f64,
}

impl DriftStats {
    /// Refuses laws with (numerically) zero drift variance.
    pub fn require_nondegenerate(&self) -> Result<()> {
        if self.sigma2 <= 1e-14 * self.scale.max(f64::MIN_POSITIVE) {
            Err(RapError::Degenerate(format!(
                "drift variance sigma^2 = {:e} vanishes; fluctuations are identically zero",
                self.sigma2
            )))
        } else {
            Ok(())
        }
    }
}

/// Slope λ of the initial plane X_0(x) = x·λ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeVector(pub [f64; 2]);

impl SlopeVector {
    pub fn new(dim: Dim, coords: &[f64]) -> Result<SlopeVector> {
        let v = match (dim, coords) {
            (Dim::One, [a]) => [*a, 0.0],
            (Dim::Two, [a, b]) => [*a, *b],
            _ => {
                return Err(RapError::invalid(
                    "slope",
                    format!("expected {} component(s), got {}", dim.as_usize(), coords.len()),
                ))
            }
        };
        if v.iter().any(|c| !c.is_finite()) {
            return Err(RapError::invalid("slope", "entries must be finite"));
        }
        if v == [0.0, 0.0] {
            return Err(RapError::invalid("slope", "at least one entry must be nonzero"));
        }
        Ok(SlopeVector(v))
    }

    /// x·λ.
    #[inline]
    pub fn dot(&self, x: Site) -> f64 {
        x[0] as f64 * self.0[0] + x[1] as f64 * self.0[1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Domain, StreamKey};

    fn ref1() -> WeightLaw {
        WeightLaw::uniform_dirichlet(Dim::One)
    }

    #[test]
    fn ref1_moments() {
        let m = ref1().moments();
        for i in 0..3 {
            assert!((m.mean()[i] - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((m.pair_at([1, 0], [1, 0]) - 1.0 / 6.0).abs() < 1e-15);
        assert!((m.pair_at([1, 0], [-1, 0]) - 1.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn single_atom_pair_is_outer_product() {
        let v = vec![0.2, 0.5, 0.3];
        let law = WeightLaw::deterministic(Neighborhood::nearest(Dim::One), v.clone()).unwrap();
        let m = law.moments();
        let offs = m.offsets().to_vec();
        for (a, j) in offs.iter().enumerate() {
            for (b, k) in offs.iter().enumerate() {
                assert!((m.pair_at(*j, *k) - v[a] * v[b]).abs() < 1e-16);
            }
        }
        assert_eq!(m.h_step_law(), m.d_origin_step_law());
    }

    #[test]
    fn ref1_drift() {
        let s = ref1().moments().drift_stats(&SlopeVector([1.0, 0.0]));
        assert!(s.mu.abs() < 1e-16);
        assert!((s.sigma2 - 1.0 / 6.0).abs() < 1e-15);
        s.require_nondegenerate().unwrap();
    }

    #[test]
    fn deterministic_law_is_degenerate() {
        let law = WeightLaw::deterministic(Neighborhood::nearest(Dim::One), vec![0.2, 0.5, 0.3]).unwrap();
        let s = law.moments().drift_stats(&SlopeVector([1.0, 0.0]));
        assert!(s.sigma2 < 1e-15);
        assert!(matches!(s.require_nondegenerate(), Err(RapError::Degenerate(_))));
    }

    #[test]
    fn ref1_step_laws() {
        let m = ref1().moments();
        let qh = m.h_step_law();
        let qd = m.d_origin_step_law();
        let close = |a: f64, b: f64| (a - b).abs() < 1e-15;
        assert!(close(qh.get([0, 0]), 1.0 / 3.0));
        assert!(close(qh.get([1, 0]), 2.0 / 9.0));
        assert!(close(qh.get([-2, 0]), 1.0 / 9.0));
        assert!(close(qd.get([0, 0]), 0.5));
        assert!(close(qd.get([-1, 0]), 1.0 / 6.0));
        assert!(close(qd.get([2, 0]), 1.0 / 12.0));
        assert!(close(qh.total(), 1.0) && close(qd.total(), 1.0));
    }

    #[test]
    fn ref2_origin_masses() {
        let m = WeightLaw::uniform_dirichlet(Dim::Two).moments();
        assert!((m.h_step_law().get([0, 0]) - 0.2).abs() < 1e-15);
        assert!((m.d_origin_step_law().get([0, 0]) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn mean_condition_names_offset() {
        let nb = Neighborhood::nearest(Dim::One);
        let err = WeightLaw::deterministic(nb, vec![0.0, 0.5, 0.5]).unwrap_err();
        match err {
            RapError::Invalid { message, .. } => assert!(message.contains("[-1, 0]"), "{message}"),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn neighborhood_requires_unit_ball() {
        assert!(Neighborhood::new(Dim::Two, vec![[0, 0], [1, 0], [-1, 0]]).is_err());
        assert!(Neighborhood::new(Dim::One, vec![[0, 0], [1, 0], [-1, 0], [2, 0]]).is_ok());
        assert!(Neighborhood::new(Dim::One, vec![[0, 0], [1, 0], [-1, 0], [1, 0]]).is_err());
    }

    #[test]
    fn spec_roundtrip_reorders_parameters() {
        let spec = LawSpec {
            dimension: 1,
            family: "dirichlet".into(),
            offsets: vec![vec![1], vec![0], vec![-1]],
            alpha: Some(vec![3.0, 2.0, 1.0]),
            atoms: None,
            probs: None,
        };
        let law = spec.build().unwrap();
        let m = law.moments();
        assert!((m.mean_at([1, 0]) - 0.5).abs() < 1e-15);
        assert_eq!(law.to_spec().build().unwrap(), law);
    }

    #[test]
    fn sampled_vectors_are_probability_vectors() {
        let law = WeightLaw::dirichlet(Neighborhood::nearest(Dim::Two), vec![0.3, 1.0, 2.5, 0.7, 0.1]).unwrap();
        let sampler = law.sampler();
        let key = StreamKey::new(3, Domain::Test, 0);
        for i in 0..2000 {
            let v = sampler.sample(&mut key.site_rng(i, [0, 0]), 5);
            assert!(v.iter().all(|x| *x >= 0.0));
            assert!((v.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}
