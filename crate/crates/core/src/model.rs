use crate::chains::ChainKernel;
use crate::error::Result;
use crate::lattice::Dim;
use crate::weights::{DriftStats, SlopeVector, WeightLaw, WeightMoments};

/// A weight law together with a slope and everything derived from them.
#[derive(Debug, Clone)]
pub struct RapModel {
    pub law: WeightLaw,
    pub slope: SlopeVector,
    pub moments: WeightMoments,
    pub drift: DriftStats,
    pub kernel: ChainKernel,
}

impl RapModel {
    pub fn new(law: WeightLaw, slope: SlopeVector) -> RapModel {
        let moments = law.moments();
        let drift = moments.drift_stats(&slope);
        let kernel = ChainKernel::from_moments(law.dim(), &moments);
        RapModel {
            law,
            slope,
            moments,
            drift,
            kernel,
        }
    }

    /// Uniform Dirichlet on the nearest neighbors with slope (1) or (1, 0).
    pub fn reference(dim: Dim) -> RapModel {
        let slope = match dim {
            Dim::One => SlopeVector([1.0, 0.0]),
            Dim::Two => SlopeVector([1.0, 0.0]),
        };
        RapModel::new(WeightLaw::uniform_dirichlet(dim), slope)
    }

    pub fn dim(&self) -> Dim {
        self.law.dim()
    }

    pub fn sigma2(&self) -> f64 {
        self.drift.sigma2
    }

    pub fn require_nondegenerate(&self) -> Result<()> {
        self.drift.require_nondegenerate()
    }
}
