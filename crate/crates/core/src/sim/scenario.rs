use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::sim::rng::{stream, Tag};
use crate::valuation::MarketModel;

/// Distribution used for raw draws (compensations, directions).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RawDist {
    #[default]
    Normal,
    Uniform,
}

impl RawDist {
    /// A symmetric draw: `N(0, 1)` or `U[-1, 1]`.
    pub fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            RawDist::Normal => StandardNormal.sample(rng),
            RawDist::Uniform => rng.random_range(-1.0..=1.0),
        }
    }
}

impl fmt::Display for RawDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RawDist::Normal => "normal",
            RawDist::Uniform => "uniform",
        })
    }
}

impl FromStr for RawDist {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "normal" => Ok(RawDist::Normal),
            "uniform" => Ok(RawDist::Uniform),
            other => Err(format!("unknown distribution `{other}` (normal | uniform)")),
        }
    }
}

/// How feature vectors are produced.
///
/// Text form: `aggregated:<dist>:<raw_dim>`, `random_unit:<dist>`,
/// `csv:<path>`, `adversarial_axes`.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureGenSpec {
    /// `raw_dim` nonnegative pseudo-compensations are drawn, sorted, split
    /// into `dim` contiguous groups of near-equal size and summed per group.
    AggregatedCompensations { raw_dim: usize, raw_dist: RawDist },
    /// A direction drawn coordinate-wise from the distribution.
    RandomUnit { dist: RawDist },
    /// Rows of a CSV file with header `f1,...,fn[,reserve]`, cycled.
    CsvStream { path: PathBuf },
    /// `e₁` for the first half of the run, `e₂` afterwards.
    AdversarialAxes,
}

impl fmt::Display for FeatureGenSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureGenSpec::AggregatedCompensations { raw_dim, raw_dist } => {
                write!(f, "aggregated:{raw_dist}:{raw_dim}")
            }
            FeatureGenSpec::RandomUnit { dist } => write!(f, "random_unit:{dist}"),
            FeatureGenSpec::CsvStream { path } => write!(f, "csv:{}", path.display()),
            FeatureGenSpec::AdversarialAxes => f.write_str("adversarial_axes"),
        }
    }
}

impl FromStr for FeatureGenSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (head, rest) = s.split_once(':').unwrap_or((s, ""));
        match head {
            "aggregated" => {
                let (dist, raw_dim) = rest
                    .split_once(':')
                    .ok_or("expected aggregated:<dist>:<raw_dim>")?;
                let raw_dim = raw_dim
                    .parse::<usize>()
                    .map_err(|e| format!("bad raw_dim `{raw_dim}`: {e}"))?;
                Ok(FeatureGenSpec::AggregatedCompensations {
                    raw_dim,
                    raw_dist: dist.parse()?,
                })
            }
            "random_unit" => Ok(FeatureGenSpec::RandomUnit {
                dist: if rest.is_empty() { RawDist::Normal } else { rest.parse()? },
            }),
            "csv" if !rest.is_empty() => Ok(FeatureGenSpec::CsvStream { path: rest.into() }),
            "adversarial_axes" if rest.is_empty() => Ok(FeatureGenSpec::AdversarialAxes),
            _ => Err(format!(
                "unknown feature generator `{s}` (aggregated:<dist>:<raw_dim> | random_unit:<dist> | csv:<path> | adversarial_axes)"
            )),
        }
    }
}

/// How reserve prices are set.
///
/// Text form: `none`, `sum`, `ratio:<rho>`, `midpoint_first_half`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReservePolicy {
    None,
    /// Sum of the feature coordinates, clamped at zero.
    SumOfFeatures,
    /// `g(ρ·g⁻¹(v))` with `v` the noiseless value. Peeks at the true model,
    /// so it is for evaluation only.
    ValueRatio { rho: f64 },
    /// The mechanism's current midpoint during the first half, zero after.
    MidpointFirstHalf,
}

impl ReservePolicy {
    pub fn uses_value_oracle(&self) -> bool {
        matches!(self, ReservePolicy::ValueRatio { .. })
    }
}

impl fmt::Display for ReservePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReservePolicy::None => f.write_str("none"),
            ReservePolicy::SumOfFeatures => f.write_str("sum"),
            ReservePolicy::ValueRatio { rho } => write!(f, "ratio:{rho}"),
            ReservePolicy::MidpointFirstHalf => f.write_str("midpoint_first_half"),
        }
    }
}

impl FromStr for ReservePolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(ReservePolicy::None),
            "sum" => Ok(ReservePolicy::SumOfFeatures),
            "midpoint_first_half" => Ok(ReservePolicy::MidpointFirstHalf),
            _ => {
                let rho = s
                    .strip_prefix("ratio:")
                    .ok_or_else(|| {
                        format!("unknown reserve policy `{s}` (none | sum | ratio:<rho> | midpoint_first_half)")
                    })?
                    .parse::<f64>()
                    .map_err(|e| format!("bad ratio in `{s}`: {e}"))?;
                if !(rho > 0.0 && rho < 1.0) {
                    return Err(format!("ratio must lie in (0, 1), got {rho}"));
                }
                Ok(ReservePolicy::ValueRatio { rho })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub dim: usize,
    pub rounds: u64,
    pub feature_gen: FeatureGenSpec,
    pub reserve_policy: ReservePolicy,
    pub model: MarketModel,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("scenario.dim", "must be at least 1"));
        }
        if self.rounds == 0 {
            return Err(Error::config("scenario.rounds", "must be at least 1"));
        }
        if self.model.theta_star.len() != self.dim {
            return Err(Error::config(
                "scenario.dim",
                format!("true weight vector has dimension {}", self.model.theta_star.len()),
            ));
        }
        self.model.noise.validate()?;
        match self.feature_gen {
            FeatureGenSpec::AggregatedCompensations { raw_dim, .. } if raw_dim < self.dim => {
                Err(Error::config(
                    "scenario.feature_gen",
                    format!("raw_dim {raw_dim} is smaller than dim {}", self.dim),
                ))
            }
            FeatureGenSpec::AdversarialAxes if self.dim < 2 => Err(Error::config(
                "scenario.feature_gen",
                "adversarial axes need at least two dimensions",
            )),
            _ => Ok(()),
        }
    }
}

/// Draws a direction coordinate-wise from `dist`, folds it into the
/// nonnegative orthant and rescales it to norm `norm`.
pub fn sample_theta_star(n: usize, norm: f64, dist: RawDist, seed: u64) -> DVector<f64> {
    let mut rng = stream(seed, Tag::Theta, 0);
    loop {
        let raw = DVector::from_fn(n, |_, _| dist.draw(&mut rng).abs());
        let len = raw.norm();
        if len > 1e-12 {
            return raw * (norm / len);
        }
    }
}
