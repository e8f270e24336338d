//! Config file layout and merging with command-line flags.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use clap::Args;
use rap_core::lattice::Dim;
use rap_core::model::RapModel;
use rap_core::weights::LawSpec;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// One lattice site written as `3` or `3,-2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Coords(pub Vec<i64>);

impl FromStr for Coords {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|t| t.trim().parse::<i64>().map_err(|e| format!("bad coordinate `{t}`: {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(Coords)
    }
}

impl fmt::Display for Coords {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|c| c.to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}

/// Several sites separated by `;`, e.g. `8;16;32` or `1,0;0,1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SiteList(pub Vec<Vec<i64>>);

impl FromStr for SiteList {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        s.split(';')
            .filter(|t| !t.trim().is_empty())
            .map(|t| Coords::from_str(t).map(|c| c.0))
            .collect::<Result<Vec<_>, _>>()
            .map(SiteList)
    }
}

/// Comma-separated reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Reals(pub Vec<f64>);

impl FromStr for Reals {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|e| format!("bad number `{t}`: {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(Reals)
    }
}

macro_rules! merge_fields {
    ($ty:ident { $($f:ident),* $(,)? }) => {
        impl $ty {
            /// Flags win over the file.
            pub fn merged(self, file: Option<&$ty>) -> $ty {
                match file {
                    None => self,
                    Some(file) => $ty { $($f: self.$f.or_else(|| file.$f.clone()),)* },
                }
            }
        }
    };
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunTable {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicas: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// Significance level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_cells: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsArgs {
    /// Sites at which a(x) is tabulated.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sites: Option<SiteList>,
    /// Truncation ratios A for the h(A) table (d=1).
    #[arg(long = "a-values")]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_values: Option<Reals>,
}
merge_fields!(ConstantsArgs { sites, a_values });

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GreenArgs {
    #[arg(long, allow_hyphen_values = true)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Coords>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nmax: Option<usize>,
}
merge_fields!(GreenArgs { x, nmax });

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LosaArgs {
    #[arg(long, allow_hyphen_values = true)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<Coords>,
    #[arg(long, allow_hyphen_values = true)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lp: Option<Coords>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nmax: Option<usize>,
}
merge_fields!(LosaArgs { l, lp, nmax });

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceScanArgs {
    /// Sites, `;`-separated.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xs: Option<SiteList>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
}
merge_fields!(VarianceScanArgs { xs, a });

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovScanArgs {
    /// Times t_j (d=1).
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Reals>,
    /// Exponent vectors z_j (d=2), `;`-separated.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<SiteList>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Truncation ratio (d=1).
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
}
merge_fields!(CovScanArgs { times, points, n, a });

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardArgs {
    #[arg(long, allow_hyphen_values = true)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Coords>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
}
merge_fields!(ForwardArgs { x, n });

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CltArgs {
    #[arg(long, allow_hyphen_values = true)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Coords>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
}
merge_fields!(CltArgs { x, a });

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FddArgs {
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Reals>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probes: Option<usize>,
}
merge_fields!(FddArgs { times, n, a, probes });

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossMomentArgs {
    #[arg(long, allow_hyphen_values = true)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sites: Option<SiteList>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
}
merge_fields!(CrossMomentArgs { sites, n });

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition3Args {
    #[arg(long, allow_hyphen_values = true)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xs: Option<SiteList>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
}
merge_fields!(Condition3Args { xs, a });

/// The whole config file. Every table is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub law: Option<LawSpec>,
    #[serde(default)]
    pub run: RunTable,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants: Option<ConstantsArgs>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub green: Option<GreenArgs>,
    #[serde(default, rename = "losa-scan", skip_serializing_if = "Option::is_none")]
    pub losa_scan: Option<LosaArgs>,
    #[serde(default, rename = "variance-scan", skip_serializing_if = "Option::is_none")]
    pub variance_scan: Option<VarianceScanArgs>,
    #[serde(default, rename = "cov-scan", skip_serializing_if = "Option::is_none")]
    pub cov_scan: Option<CovScanArgs>,
    #[serde(default, rename = "forward-sim", skip_serializing_if = "Option::is_none")]
    pub forward_sim: Option<ForwardArgs>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clt: Option<CltArgs>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fdd: Option<FddArgs>,
    #[serde(default, rename = "cross-moments", skip_serializing_if = "Option::is_none")]
    pub cross_moments: Option<CrossMomentArgs>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition3: Option<Condition3Args>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("invalid `config`: cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Validation(format!("invalid `config` {}: {e}", path.display())))
    }

    /// Law and slope, falling back to the uniform nearest-neighbor law in `dim`.
    pub fn resolve_model(&mut self, dim: usize) -> Result<RapModel, CliError> {
        if self.law.is_none() {
            let d = Dim::from_usize(dim)?;
            self.law = Some(RapModel::reference(d).law.to_spec());
        }
        let law = self.law.as_ref().expect("set above");
        if self.slope.is_none() {
            self.slope = Some(match law.dimension {
                2 => vec![1.0, 0.0],
                _ => vec![1.0],
            });
        }
        let built = law.build()?;
        let slope = rap_core::weights::SlopeVector::new(built.dim(), self.slope.as_ref().expect("set above"))?;
        Ok(RapModel::new(built, slope))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sites_and_coords() {
        assert_eq!("8;16; 32".parse::<SiteList>().unwrap().0, vec![vec![8], vec![16], vec![32]]);
        assert_eq!("1,0;0,-1".parse::<SiteList>().unwrap().0, vec![vec![1, 0], vec![0, -1]]);
        assert_eq!("-3".parse::<Coords>().unwrap().0, vec![-3]);
        assert!("a".parse::<Coords>().is_err());
    }

    #[test]
    fn flags_win_over_file() {
        let file = GreenArgs {
            x: Some(Coords(vec![4])),
            nmax: Some(10),
        };
        let flags = GreenArgs {
            x: None,
            nmax: Some(20),
        };
        let m = flags.merged(Some(&file));
        assert_eq!(m.x, Some(Coords(vec![4])));
        assert_eq!(m.nmax, Some(20));
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = toml::from_str::<FileConfig>("[run]\nseed = 1\nsede = 2\n").unwrap_err();
        assert!(err.to_string().contains("sede"));
        assert!(toml::from_str::<FileConfig>("[clt]\nx = [8]\nb = 1.0\n").is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let mut cfg = FileConfig::default();
        cfg.resolve_model(2).unwrap();
        cfg.run.seed = Some(5);
        cfg.clt = Some(CltArgs {
            x: Some(Coords(vec![3, 1])),
            a: Some(2.0),
        });
        let text = toml::to_string(&cfg).unwrap();
        let back: FileConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
