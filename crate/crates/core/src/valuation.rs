//! The market side: value models `v = g(φ(x)ᵀθ* + δ_t)`, subGaussian
//! noise, buyer responses and regret accounting.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Outer link `g` of the value model. All variants are strictly increasing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LinkFunction {
    #[default]
    Identity,
    /// `g(z) = e^z`: log-linear and log-log models.
    NaturalExp,
    /// `g(z) = 1 / (1 + e^{-z})`.
    LogisticSigmoid,
}

impl LinkFunction {
    pub fn forward(self, z: f64) -> f64 {
        match self {
            LinkFunction::Identity => z,
            LinkFunction::NaturalExp => z.exp(),
            LinkFunction::LogisticSigmoid => {
                if z >= 0.0 {
                    1.0 / (1.0 + (-z).exp())
                } else {
                    let e = z.exp();
                    e / (1.0 + e)
                }
            }
        }
    }

    /// `g⁻¹(y)`. Endpoints of the range map to `±∞` (a zero reserve under
    /// the exponential link imposes no constraint); values outside it are
    /// a [`Error::Domain`].
    pub fn inverse(self, y: f64) -> Result<f64> {
        match self {
            LinkFunction::Identity => Ok(y),
            LinkFunction::NaturalExp if y >= 0.0 => Ok(y.ln()),
            LinkFunction::LogisticSigmoid if (0.0..=1.0).contains(&y) => Ok(y.ln() - (-y).ln_1p()),
            _ => Err(Error::Domain(format!("{y} is outside the range of the {self} link"))),
        }
    }

    /// Lipschitz constant of `g` on `[lo, hi]`.
    pub fn lipschitz_on(self, lo: f64, hi: f64) -> f64 {
        match self {
            LinkFunction::Identity => 1.0,
            LinkFunction::NaturalExp => hi.exp(),
            LinkFunction::LogisticSigmoid => {
                let nearest = if lo > 0.0 {
                    lo
                } else if hi < 0.0 {
                    hi
                } else {
                    0.0
                };
                let s = self.forward(nearest);
                s * (1.0 - s)
            }
        }
    }
}

impl fmt::Display for LinkFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LinkFunction::Identity => "identity",
            LinkFunction::NaturalExp => "exp",
            LinkFunction::LogisticSigmoid => "logistic",
        })
    }
}

impl FromStr for LinkFunction {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "identity" => Ok(LinkFunction::Identity),
            "exp" | "natural_exp" => Ok(LinkFunction::NaturalExp),
            "logistic" | "sigmoid" => Ok(LinkFunction::LogisticSigmoid),
            other => Err(format!("unknown link `{other}` (identity | exp | logistic)")),
        }
    }
}

/// Inner feature map `φ`. Both variants preserve dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureMap {
    #[default]
    Identity,
    /// Natural log of each coordinate; coordinates must be positive.
    ElementwiseLog,
}

impl FeatureMap {
    pub fn apply(self, x: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            FeatureMap::Identity => Ok(x.clone()),
            FeatureMap::ElementwiseLog => {
                if let Some(bad) = x.iter().find(|&&xi| !(xi > 0.0)) {
                    return Err(Error::Domain(format!(
                        "elementwise log needs positive coordinates, got {bad}"
                    )));
                }
                Ok(x.map(f64::ln))
            }
        }
    }
}

impl fmt::Display for FeatureMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureMap::Identity => "identity",
            FeatureMap::ElementwiseLog => "log",
        })
    }
}

impl FromStr for FeatureMap {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "identity" => Ok(FeatureMap::Identity),
            "log" | "elementwise_log" => Ok(FeatureMap::ElementwiseLog),
            other => Err(format!("unknown feature map `{other}` (identity | log)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseFamily {
    #[default]
    None,
    /// `N(0, σ²)`.
    Normal,
    /// `U[-σ, σ]`.
    Uniform,
}

/// A σ-subGaussian noise law: `Pr(|δ_t| > z) ≤ C exp(-z² / 2σ²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub family: NoiseFamily,
    pub sigma: f64,
    pub c: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self::none()
    }
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            family: NoiseFamily::None,
            sigma: 0.0,
            c: 2.0,
        }
    }

    pub fn normal(sigma: f64) -> Self {
        Self {
            family: NoiseFamily::Normal,
            sigma,
            c: 2.0,
        }
    }

    pub fn uniform(sigma: f64) -> Self {
        Self {
            family: NoiseFamily::Uniform,
            sigma,
            c: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::config("scenario.noise_sigma", "must be nonnegative"));
        }
        if !(self.c >= 1.0) {
            return Err(Error::config("scenario.noise_C", "must be at least 1"));
        }
        if self.family == NoiseFamily::None && self.sigma != 0.0 {
            return Err(Error::config("scenario.noise_sigma", "must be 0 without a noise family"));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.sigma == 0.0 {
            return 0.0;
        }
        match self.family {
            NoiseFamily::None => 0.0,
            NoiseFamily::Normal => Normal::new(0.0, self.sigma)
                .expect("sigma validated")
                .sample(rng),
            NoiseFamily::Uniform => rng.random_range(-self.sigma..=self.sigma),
        }
    }

    /// Right-hand side of the subGaussian tail inequality at `z`.
    pub fn tail_bound(&self, z: f64) -> f64 {
        if self.sigma == 0.0 {
            return 0.0;
        }
        self.c * (-z * z / (2.0 * self.sigma * self.sigma)).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarketModel {
    pub theta_star: DVector<f64>,
    pub link: LinkFunction,
    pub feature_map: FeatureMap,
    pub noise: NoiseSpec,
}

impl MarketModel {
    pub fn linear(theta_star: DVector<f64>) -> Self {
        Self {
            theta_star,
            link: LinkFunction::Identity,
            feature_map: FeatureMap::Identity,
            noise: NoiseSpec::none(),
        }
    }

    /// Noiseless pre-link value `φ(x)ᵀθ*`.
    pub fn linear_value(&self, x: &DVector<f64>) -> Result<f64> {
        let phi = self.feature_map.apply(x)?;
        if phi.len() != self.theta_star.len() {
            return Err(Error::DimensionMismatch {
                expected: self.theta_star.len(),
                found: phi.len(),
            });
        }
        Ok(phi.dot(&self.theta_star))
    }

    /// `g(φ(x)ᵀθ* + noise_draw)`. The draw is supplied by the caller so that
    /// this stays deterministic.
    pub fn market_value(&self, x: &DVector<f64>, noise_draw: f64) -> Result<f64> {
        Ok(self.link.forward(self.linear_value(x)? + noise_draw))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Feedback {
    pub accepted: bool,
}

/// The buyer accepts whenever the price does not exceed the value; ties sell.
pub fn buyer_response(value: f64, price: f64) -> Feedback {
    Feedback {
        accepted: price <= value,
    }
}

/// `δ = sqrt(2 ln C)·σ·ln T`, the buffer that covers every round's noise
/// with probability at least `1 - 1/T`. The bound needs `T ≥ 8`.
pub fn uncertainty_buffer(sigma: f64, c: f64, rounds: u64) -> Result<f64> {
    if rounds < 8 {
        return Err(Error::Domain(format!(
            "uncertainty buffer needs T >= 8, got {rounds}"
        )));
    }
    if !(c >= 1.0) {
        return Err(Error::Domain(format!("tail constant C must be >= 1, got {c}")));
    }
    if !(sigma >= 0.0) {
        return Err(Error::Domain(format!("sigma must be >= 0, got {sigma}")));
    }
    Ok((2.0 * c.ln()).sqrt() * sigma * (rounds as f64).ln())
}

/// Regret of one round against an adversary who knows `v`: zero when the
/// reserve exceeds the value, the whole value when nothing sold, `v - p`
/// on a sale.
pub fn single_round_regret(value: f64, reserve: f64, posted: Option<f64>, accepted: bool) -> f64 {
    if reserve > value {
        return 0.0;
    }
    match posted {
        Some(p) if accepted => value - p,
        _ => value,
    }
}
