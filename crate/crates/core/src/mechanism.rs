//! The posted-price mechanism as a state machine.
//!
//! Each round the broker calls [`MechanismState::decide`] with the query
//! features and reserve, posts the resulting price, and folds the buyer's
//! answer back in with [`MechanismState::observe`]. With `delta = 0` the
//! mechanism follows the noiseless rules; with `delta > 0` every price is
//! shifted by the buffer before it is used as a cut, so that bounded noise
//! can never exclude the true weight vector.
//!
//! All decisions and cuts happen in the pre-link (linear) space. Only the
//! posted price goes through the link function.

use log::{debug, warn};
use nalgebra::DVector;

use crate::ellipsoid::{CutSide, Ellipsoid, SupportBounds, DEGENERACY_MARGIN, DIRECTION_FLOOR};
use crate::error::{Error, Result};
use crate::valuation::{Feedback, LinkFunction};

/// Slack on the feature-norm check.
const NORM_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct MechanismConfig {
    pub dim: usize,
    /// Radius of the initial knowledge ball.
    pub radius: f64,
    /// Upper bound on the norm of every feature vector the mechanism sees.
    pub feature_bound: f64,
    /// Exploration threshold. `None` falls back to [`default_epsilon`].
    pub epsilon: Option<f64>,
    /// Uncertainty buffer.
    pub delta: f64,
    pub use_reserve: bool,
    /// Let conservative prices cut the knowledge set too. Only meant for
    /// demonstrating the adversarial worst case.
    pub allow_conservative_cuts: bool,
    pub link: LinkFunction,
    /// Planned number of rounds, used for the default threshold.
    pub total_rounds_hint: u64,
}

impl MechanismConfig {
    pub fn new(dim: usize, radius: f64, total_rounds_hint: u64) -> Self {
        Self {
            dim,
            radius,
            feature_bound: 1.0,
            epsilon: None,
            delta: 0.0,
            use_reserve: true,
            allow_conservative_cuts: false,
            link: LinkFunction::Identity,
            total_rounds_hint,
        }
    }

    pub fn effective_epsilon(&self) -> f64 {
        self.epsilon
            .unwrap_or_else(|| default_epsilon(self.dim, self.total_rounds_hint, self.delta))
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("mechanism.dim", "must be at least 1"));
        }
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(Error::config("mechanism.R", "must be positive and finite"));
        }
        if !(self.feature_bound > 0.0) || !self.feature_bound.is_finite() {
            return Err(Error::config("mechanism.S", "must be positive and finite"));
        }
        if !(self.delta >= 0.0) || !self.delta.is_finite() {
            return Err(Error::config("mechanism.delta", "must be nonnegative and finite"));
        }
        match self.epsilon {
            Some(eps) if !(eps > 0.0) || !eps.is_finite() => {
                return Err(Error::config("mechanism.epsilon", "must be positive and finite"));
            }
            None if self.total_rounds_hint < 2 => {
                return Err(Error::config(
                    "scenario.rounds",
                    "the default epsilon needs at least 2 rounds",
                ));
            }
            _ => {}
        }
        let eps = self.effective_epsilon();
        let floor = 4.0 * self.dim as f64 * self.delta;
        if self.delta > 0.0 && eps < floor {
            warn!("epsilon {eps} is below 4*n*delta = {floor}; the exploratory budget is not guaranteed");
        }
        Ok(())
    }
}

/// Maximum number of exploratory rounds, `20n²·ln(20RS²(n+1)/ε)`.
///
/// For `n = 1` the knowledge set is an interval that is bisected, so the
/// count is `⌈log₂(2RS/ε)⌉` instead (midpoint prices, no buffer).
pub fn exploratory_round_bound(n: usize, radius: f64, feature_bound: f64, epsilon: f64) -> Result<f64> {
    for (name, value) in [("R", radius), ("S", feature_bound), ("epsilon", epsilon)] {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::Domain(format!("{name} must be positive, got {value}")));
        }
    }
    match n {
        0 => Err(Error::Domain("n must be positive".into())),
        1 => Ok((2.0 * radius * feature_bound / epsilon).log2().ceil().max(0.0)),
        _ => {
            let nf = n as f64;
            let ratio = 20.0 * radius * feature_bound * feature_bound * (nf + 1.0) / epsilon;
            Ok(20.0 * nf * nf * ratio.ln())
        }
    }
}

/// Default exploration threshold: `log₂(T)/T` in one dimension, otherwise
/// `max(n²/T, 4nδ)`.
pub fn default_epsilon(n: usize, rounds: u64, delta: f64) -> f64 {
    let t = rounds.max(2) as f64;
    if n <= 1 {
        t.log2() / t
    } else {
        let nf = n as f64;
        (nf * nf / t).max(4.0 * nf * delta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalKnowledge {
    pub lower: f64,
    pub upper: f64,
}

impl IntervalKnowledge {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower <= upper) {
            return Err(Error::Domain(format!("interval [{lower}, {upper}] is empty")));
        }
        Ok(Self { lower, upper })
    }

    pub fn contains(&self, theta: f64) -> bool {
        self.lower <= theta && theta <= self.upper
    }

    fn support_bounds(&self, x: f64) -> Result<SupportBounds> {
        if !(x * x > DIRECTION_FLOOR) {
            return Err(Error::DegenerateDirection { quadratic: x * x });
        }
        let (a, b) = (x * self.lower, x * self.upper);
        let (lower, upper) = if x > 0.0 { (a, b) } else { (b, a) };
        Ok(SupportBounds {
            lower,
            upper,
            halfwidth: 0.5 * (upper - lower),
        })
    }

    /// Keeps the part of the interval where `xθ ≤ price` (below) or
    /// `xθ ≥ price` (above), clamped so the interval never empties.
    fn cut(&self, x: f64, price: f64, side: CutSide) -> Self {
        let boundary = price / x;
        let keep_low = (side == CutSide::RetainBelow) == (x > 0.0);
        let (mut lower, mut upper) = (self.lower, self.upper);
        if keep_low {
            upper = boundary.clamp(lower, upper);
        } else {
            lower = boundary.clamp(lower, upper);
        }
        Self { lower, upper }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Knowledge {
    Ellipsoid(Ellipsoid),
    Interval(IntervalKnowledge),
}

impl Knowledge {
    fn dim(&self) -> usize {
        match self {
            Knowledge::Ellipsoid(e) => e.dim(),
            Knowledge::Interval(_) => 1,
        }
    }

    pub fn support_bounds(&self, x: &DVector<f64>) -> Result<SupportBounds> {
        match self {
            Knowledge::Ellipsoid(e) => e.support_bounds(x),
            Knowledge::Interval(iv) => iv.support_bounds(x[0]),
        }
    }

    /// Whether `theta` lies in the knowledge set (with the ellipsoid's
    /// containment slack).
    pub fn contains(&self, theta: &DVector<f64>) -> Result<bool> {
        match self {
            Knowledge::Ellipsoid(e) => e.contains(theta),
            Knowledge::Interval(iv) => {
                if theta.len() != 1 {
                    return Err(Error::DimensionMismatch {
                        expected: 1,
                        found: theta.len(),
                    });
                }
                Ok(iv.contains(theta[0]))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecisionKind {
    Skip,
    Exploratory,
    Conservative,
}

impl DecisionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DecisionKind::Skip => "skip",
            DecisionKind::Exploratory => "exploratory",
            DecisionKind::Conservative => "conservative",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceDecision {
    pub kind: DecisionKind,
    /// Price shown to the buyer, `link(linear_price)`; `None` on a skip.
    pub posted_price: Option<f64>,
    /// The price in pre-link space.
    pub linear_price: Option<f64>,
    /// Support bounds of the knowledge set along the query at decision time.
    pub bounds: SupportBounds,
    /// 1-based round this decision belongs to.
    pub round: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MechanismState {
    config: MechanismConfig,
    epsilon: f64,
    knowledge: Knowledge,
    round: u64,
    exploratory_count: u64,
    reserve_rejections: u64,
    guard_skips: u64,
}

impl MechanismState {
    /// Starts from the ball of radius `R` (or the interval `[-R, R]` when
    /// `n = 1`).
    pub fn new(config: MechanismConfig) -> Result<Self> {
        config.validate()?;
        let knowledge = if config.dim == 1 {
            Knowledge::Interval(IntervalKnowledge::new(-config.radius, config.radius)?)
        } else {
            Knowledge::Ellipsoid(Ellipsoid::ball(config.dim, config.radius)?)
        };
        Self::with_knowledge(config, knowledge)
    }

    /// Starts from an explicit knowledge set.
    pub fn with_knowledge(config: MechanismConfig, knowledge: Knowledge) -> Result<Self> {
        config.validate()?;
        if knowledge.dim() != config.dim {
            return Err(Error::config(
                "mechanism.dim",
                format!("knowledge set has dimension {}", knowledge.dim()),
            ));
        }
        Ok(Self {
            epsilon: config.effective_epsilon(),
            config,
            knowledge,
            round: 0,
            exploratory_count: 0,
            reserve_rejections: 0,
            guard_skips: 0,
        })
    }

    pub fn config(&self) -> &MechanismConfig {
        &self.config
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn knowledge(&self) -> &Knowledge {
        &self.knowledge
    }

    /// Rounds observed so far.
    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn exploratory_count(&self) -> u64 {
        self.exploratory_count
    }

    /// Exploratory rounds where the reserve sat above the midpoint, was
    /// posted and was rejected. Such a round carries no regret and, when
    /// its cut is refused, teaches nothing; the exploration budget holds
    /// for the exploratory count without them.
    pub fn reserve_rejections(&self) -> u64 {
        self.reserve_rejections
    }

    /// Rounds where a cut was computed but refused by the position guard or
    /// the numeric floor.
    pub fn guard_skips(&self) -> u64 {
        self.guard_skips
    }

    fn check_features(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.config.dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.dim,
                found: x.len(),
            });
        }
        let norm = x.norm();
        if !(norm <= self.config.feature_bound + NORM_SLACK) {
            return Err(Error::FeatureNorm {
                norm,
                bound: self.config.feature_bound,
            });
        }
        Ok(())
    }

    /// Reserve in pre-link space; `-∞` when the reserve is ignored.
    fn linear_reserve(&self, reserve: f64) -> Result<f64> {
        if !self.config.use_reserve {
            return Ok(f64::NEG_INFINITY);
        }
        if !(reserve >= 0.0) {
            return Err(Error::Domain(format!("reserve must be nonnegative, got {reserve}")));
        }
        // a reserve beyond the link's range can never be met
        Ok(self.config.link.inverse(reserve).unwrap_or(f64::INFINITY))
    }

    /// Chooses the price for query `x` with reserve `reserve`. Does not
    /// modify the state.
    pub fn decide(&self, x: &DVector<f64>, reserve: f64) -> Result<PriceDecision> {
        self.check_features(x)?;
        let q = self.linear_reserve(reserve)?;
        let bounds = self.knowledge.support_bounds(x)?;
        let delta = self.config.delta;
        let round = self.round + 1;

        if q >= bounds.upper + delta {
            return Ok(PriceDecision {
                kind: DecisionKind::Skip,
                posted_price: None,
                linear_price: None,
                bounds,
                round,
            });
        }
        let (kind, linear) = if bounds.width() > self.epsilon {
            (DecisionKind::Exploratory, q.max(bounds.midpoint()))
        } else {
            (DecisionKind::Conservative, q.max(bounds.lower - delta))
        };
        Ok(PriceDecision {
            kind,
            posted_price: Some(self.config.link.forward(linear)),
            linear_price: Some(linear),
            bounds,
            round,
        })
    }

    /// Folds the buyer's answer to `decision` into the knowledge set.
    pub fn observe(
        mut self,
        x: &DVector<f64>,
        reserve: f64,
        decision: &PriceDecision,
        feedback: Feedback,
    ) -> Result<Self> {
        if decision.round != self.round + 1 {
            return Err(Error::Protocol(format!(
                "decision is for round {} but the state expects round {}",
                decision.round,
                self.round + 1
            )));
        }
        if x.len() != self.config.dim {
            return Err(Error::Protocol(format!(
                "feature vector has dimension {}, state has {}",
                x.len(),
                self.config.dim
            )));
        }
        if self.config.use_reserve && !(reserve >= 0.0) {
            return Err(Error::Protocol(format!("reserve {reserve} is not a valid reserve")));
        }

        self.round += 1;
        let cuts = match decision.kind {
            DecisionKind::Skip => false,
            DecisionKind::Exploratory => {
                self.exploratory_count += 1;
                let reserve_bound = decision.linear_price.is_some_and(|p| p > decision.bounds.midpoint());
                if reserve_bound && !feedback.accepted {
                    self.reserve_rejections += 1;
                }
                true
            }
            DecisionKind::Conservative => self.config.allow_conservative_cuts,
        };
        let Some(price) = decision.linear_price.filter(|_| cuts) else {
            return Ok(self);
        };

        let delta = self.config.delta;
        let (side, effective) = if feedback.accepted {
            (CutSide::RetainAbove, price - delta)
        } else {
            (CutSide::RetainBelow, price + delta)
        };

        self.knowledge = match &self.knowledge {
            Knowledge::Interval(iv) => Knowledge::Interval(iv.cut(x[0], effective, side)),
            Knowledge::Ellipsoid(e) => match self.cut_ellipsoid(e, x, effective, side)? {
                Some(next) => Knowledge::Ellipsoid(next),
                None => {
                    self.guard_skips += 1;
                    return Ok(self);
                }
            },
        };
        Ok(self)
    }

    /// Applies the guarded cut, or returns `None` when the guard refuses it.
    fn cut_ellipsoid(
        &self,
        e: &Ellipsoid,
        x: &DVector<f64>,
        effective: f64,
        side: CutSide,
    ) -> Result<Option<Ellipsoid>> {
        let n = e.dim() as f64;
        let width = e.quadratic_form(x)?.sqrt();
        let alpha = (x.dot(e.center()) - effective) / width;
        let signed = match side {
            CutSide::RetainBelow => alpha,
            CutSide::RetainAbove => -alpha,
        };
        // The noiseless rejection cut is only taken when it is at least as
        // deep as a central cut; acceptance cuts and every buffered cut may
        // be anywhere in the valid range.
        let hi = if self.config.delta == 0.0 && side == CutSide::RetainBelow {
            0.0
        } else {
            1.0
        };
        let lo = -1.0 / n;
        if !(signed >= lo && signed <= hi) {
            debug!(
                "round {}: cut position {alpha:.6} outside the guard [{lo}, {hi}], knowledge kept",
                self.round
            );
            return Ok(None);
        }
        if signed >= 1.0 - DEGENERACY_MARGIN {
            debug!("round {}: cut position {alpha:.6} would collapse the ellipsoid", self.round);
            return Ok(None);
        }
        let next = e.cut(x, alpha, side)?;
        if !(next.quadratic_form(x)? > DIRECTION_FLOOR) {
            debug!("round {}: cut would flatten the ellipsoid along the query", self.round);
            return Ok(None);
        }
        Ok(Some(next))
    }
}
