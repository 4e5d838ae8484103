//! Contextual posted pricing with ellipsoidal knowledge sets.
//!
//! The crate has two halves. The mechanism side ([`ellipsoid`],
//! [`mechanism`]) maintains a set of weight vectors consistent with past
//! buyer answers and picks a price for each new query. The market side
//! ([`valuation`], [`sim`]) generates queries, values and noise and keeps
//! the regret books. [`config`] and [`report`] wire both into the
//! `price-sim` command-line tool.

pub mod config;
pub mod ellipsoid;
pub mod error;
pub mod mechanism;
pub mod report;
pub mod sim;
pub mod valuation;

pub use ellipsoid::{CutSide, Ellipsoid, SupportBounds};
pub use error::{Error, Result};
pub use mechanism::{
    default_epsilon, exploratory_round_bound, DecisionKind, IntervalKnowledge, Knowledge,
    MechanismConfig, MechanismState, PriceDecision,
};
pub use valuation::{
    buyer_response, single_round_regret, uncertainty_buffer, FeatureMap, Feedback, LinkFunction,
    MarketModel, NoiseFamily, NoiseSpec,
};
