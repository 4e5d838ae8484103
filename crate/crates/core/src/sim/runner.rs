use std::fmt;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mechanism::{DecisionKind, MechanismConfig, MechanismState};
use crate::sim::features::QueryGenerator;
use crate::sim::rng::{stream, Tag};
use crate::sim::scenario::{FeatureGenSpec, ReservePolicy, Scenario};
use crate::valuation::{buyer_response, single_round_regret, MarketModel};

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: u64,
    pub kind: DecisionKind,
    pub posted: Option<f64>,
    pub reserve: f64,
    pub value: f64,
    pub accepted: bool,
    pub regret: f64,
    /// Width of the value interval along the query at decision time.
    pub knowledge_width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub rounds: u64,
    pub cumulative_regret: f64,
    pub cumulative_value: f64,
    pub regret_ratio: f64,
    pub exploratory_rounds: u64,
    /// Exploratory rounds that posted a binding reserve and were rejected.
    pub reserve_rejections: u64,
    pub skip_rounds: u64,
    /// Cuts refused by the position guard or the numeric floor.
    pub guard_skips: u64,
    /// Share of posted prices that sold.
    pub acceptance_rate: f64,
    pub mean_value: f64,
    pub mean_reserve: f64,
    /// Mean over rounds that posted a price.
    pub mean_posted: f64,
    pub std_posted: f64,
    pub mean_regret: f64,
    /// Mean time spent in the mechanism per round.
    pub wall_time_per_round: Duration,
}

impl RunSummary {
    /// Aggregates of a run. The mechanism counters start at zero; the
    /// runner fills them in from the final state.
    pub fn from_records(records: &[RoundRecord], elapsed: Duration) -> Self {
        let rounds = records.len() as u64;
        let n = records.len().max(1) as f64;
        let cumulative_regret: f64 = records.iter().map(|r| r.regret).sum();
        let cumulative_value: f64 = records.iter().map(|r| r.value).sum();
        let posted: Vec<f64> = records.iter().filter_map(|r| r.posted).collect();
        let sold = records.iter().filter(|r| r.accepted).count();
        let mean_posted = mean(&posted);
        let std_posted = if posted.len() > 1 {
            (posted.iter().map(|p| (p - mean_posted).powi(2)).sum::<f64>() / (posted.len() - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            rounds,
            cumulative_regret,
            cumulative_value,
            regret_ratio: regret_ratio(cumulative_regret, cumulative_value),
            exploratory_rounds: 0,
            reserve_rejections: 0,
            skip_rounds: records.iter().filter(|r| r.kind == DecisionKind::Skip).count() as u64,
            guard_skips: 0,
            acceptance_rate: if posted.is_empty() { 0.0 } else { sold as f64 / posted.len() as f64 },
            mean_value: cumulative_value / n,
            mean_reserve: records.iter().map(|r| r.reserve).sum::<f64>() / n,
            mean_posted,
            std_posted,
            mean_regret: cumulative_regret / n,
            wall_time_per_round: elapsed.checked_div(rounds.max(1) as u32).unwrap_or_default(),
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// `regret / value`, or 0 when no value has accrued.
pub fn regret_ratio(cumulative_regret: f64, cumulative_value: f64) -> f64 {
    if cumulative_value > 0.0 {
        cumulative_regret / cumulative_value
    } else {
        0.0
    }
}

/// A failed run, with every round completed before the failure.
#[derive(Debug, Clone, PartialEq)]
pub struct RunError {
    pub error: Error,
    pub partial: Vec<RoundRecord>,
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (after {} rounds)", self.error, self.partial.len())
    }
}

impl std::error::Error for RunError {}

impl From<RunError> for Error {
    fn from(e: RunError) -> Self {
        e.error
    }
}

impl From<Error> for RunError {
    fn from(error: Error) -> Self {
        RunError { error, partial: Vec::new() }
    }
}

pub type RunOutput = (Vec<RoundRecord>, RunSummary);

fn check_pairing(scenario: &Scenario, config: &MechanismConfig) -> Result<()> {
    scenario.validate()?;
    if scenario.dim != config.dim {
        return Err(Error::config(
            "mechanism.dim",
            format!("mechanism has dimension {}, scenario has {}", config.dim, scenario.dim),
        ));
    }
    if scenario.model.link != config.link {
        return Err(Error::config(
            "scenario.link",
            format!("market uses the {} link, mechanism uses {}", scenario.model.link, config.link),
        ));
    }
    Ok(())
}

fn noise_draw(scenario: &Scenario, round: u64) -> f64 {
    scenario.model.noise.sample(&mut stream(scenario.seed, Tag::Noise, round))
}

/// Runs the mechanism over the scenario.
pub fn run_scenario(scenario: &Scenario, config: &MechanismConfig) -> std::result::Result<RunOutput, RunError> {
    run_scenario_with(scenario, config, |_, _| {})
}

/// As [`run_scenario`], calling `inspect` with the state after every round.
pub fn run_scenario_with<F>(
    scenario: &Scenario,
    config: &MechanismConfig,
    mut inspect: F,
) -> std::result::Result<RunOutput, RunError>
where
    F: FnMut(&MechanismState, &RoundRecord),
{
    check_pairing(scenario, config)?;
    let generator = QueryGenerator::new(scenario)?;
    let mut state = MechanismState::new(config.clone())?;
    let model = &scenario.model;
    let mut records = Vec::with_capacity(scenario.rounds as usize);
    let mut elapsed = Duration::ZERO;

    for round in 1..=scenario.rounds {
        let step = || -> Result<(MechanismState, RoundRecord, Duration)> {
            let query = generator.generate(round, Some(&state))?;
            let phi = model.feature_map.apply(&query.features)?;
            let value = model.link.forward(model.linear_value(&query.features)? + noise_draw(scenario, round));

            let start = Instant::now();
            let decision = state.decide(&phi, query.reserve)?;
            let mut spent = start.elapsed();

            let feedback = match decision.posted_price {
                Some(p) => buyer_response(value, p),
                None => crate::valuation::Feedback { accepted: false },
            };
            let regret = match decision.kind {
                DecisionKind::Skip => 0.0,
                _ => {
                    // a mechanism that ignores the reserve is charged as if none existed
                    let reserve = if config.use_reserve { query.reserve } else { 0.0 };
                    single_round_regret(value, reserve, decision.posted_price, feedback.accepted)
                }
            };

            let start = Instant::now();
            let next = state.clone().observe(&phi, query.reserve, &decision, feedback)?;
            spent += start.elapsed();

            let record = RoundRecord {
                round,
                kind: decision.kind,
                posted: decision.posted_price,
                reserve: query.reserve,
                value,
                accepted: feedback.accepted,
                regret,
                knowledge_width: decision.bounds.width().max(0.0),
            };
            Ok((next, record, spent))
        };
        match step() {
            Ok((next, record, spent)) => {
                state = next;
                elapsed += spent;
                inspect(&state, &record);
                records.push(record);
            }
            Err(error) => {
                return Err(RunError { error, partial: records });
            }
        }
    }
    let summary = RunSummary {
        exploratory_rounds: state.exploratory_count(),
        reserve_rejections: state.reserve_rejections(),
        guard_skips: state.guard_skips(),
        ..RunSummary::from_records(&records, elapsed)
    };
    Ok((records, summary))
}

/// Posts the reserve price every round without learning anything.
pub fn run_risk_averse_baseline(scenario: &Scenario) -> Result<RunSummary> {
    risk_averse_baseline_trace(scenario).map(|(_, summary)| summary)
}

/// As [`run_risk_averse_baseline`], also returning the per-round records.
pub fn risk_averse_baseline_trace(scenario: &Scenario) -> Result<RunOutput> {
    match scenario.reserve_policy {
        ReservePolicy::None => {
            return Err(Error::config("scenario.reserve_policy", "the baseline needs a reserve price"))
        }
        ReservePolicy::MidpointFirstHalf => {
            return Err(Error::config(
                "scenario.reserve_policy",
                "the baseline cannot use a mechanism-dependent reserve",
            ))
        }
        _ => {}
    }
    let generator = QueryGenerator::new(scenario)?;
    let model = &scenario.model;
    let mut records = Vec::with_capacity(scenario.rounds as usize);
    for round in 1..=scenario.rounds {
        let query = generator.generate(round, None)?;
        let value = model.link.forward(model.linear_value(&query.features)? + noise_draw(scenario, round));
        let accepted = buyer_response(value, query.reserve).accepted;
        records.push(RoundRecord {
            round,
            kind: DecisionKind::Conservative,
            posted: Some(query.reserve),
            reserve: query.reserve,
            value,
            accepted,
            regret: single_round_regret(value, query.reserve, Some(query.reserve), accepted),
            knowledge_width: 0.0,
        });
    }
    let summary = RunSummary::from_records(&records, Duration::ZERO);
    Ok((records, summary))
}

/// The four mechanism versions plus the reserve-posting baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// No reserve, no buffer.
    Pure,
    /// No reserve, buffer `delta`.
    Uncertainty,
    /// Reserve, no buffer.
    Reserve,
    /// Reserve and buffer `delta`.
    ReserveUncertainty,
    Baseline,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Pure,
        Variant::Uncertainty,
        Variant::Reserve,
        Variant::ReserveUncertainty,
        Variant::Baseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Pure => "pure",
            Variant::Uncertainty => "uncertainty",
            Variant::Reserve => "reserve",
            Variant::ReserveUncertainty => "reserve_uncertainty",
            Variant::Baseline => "baseline",
        }
    }

    /// The variant matching a mechanism configuration.
    pub fn of(config: &MechanismConfig) -> Self {
        match (config.use_reserve, config.delta > 0.0) {
            (false, false) => Variant::Pure,
            (false, true) => Variant::Uncertainty,
            (true, false) => Variant::Reserve,
            (true, true) => Variant::ReserveUncertainty,
        }
    }

    /// Mechanism configuration of this variant, derived from `base` with
    /// buffer `delta`; `None` for the baseline.
    pub fn configure(self, base: &MechanismConfig, delta: f64) -> Option<MechanismConfig> {
        let (use_reserve, delta) = match self {
            Variant::Pure => (false, 0.0),
            Variant::Uncertainty => (false, delta),
            Variant::Reserve => (true, 0.0),
            Variant::ReserveUncertainty => (true, delta),
            Variant::Baseline => return None,
        };
        Some(MechanismConfig {
            use_reserve,
            delta,
            ..base.clone()
        })
    }

    /// Runs this variant on `scenario`.
    pub fn run(self, scenario: &Scenario, base: &MechanismConfig, delta: f64) -> Result<RunOutput> {
        match self.configure(base, delta) {
            Some(config) => Ok(run_scenario(scenario, &config)?),
            None => risk_averse_baseline_trace(scenario),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub variant: Variant,
    pub rounds: u64,
    pub summary: RunSummary,
}

/// Runs every `(variant, T)` pair on the same seed, in parallel.
pub fn variant_sweep(
    scenario: &Scenario,
    base: &MechanismConfig,
    delta: f64,
    variants: &[Variant],
    rounds_grid: &[u64],
) -> Result<Vec<SweepCell>> {
    let cells: Vec<(Variant, u64)> = variants
        .iter()
        .flat_map(|&v| rounds_grid.iter().map(move |&t| (v, t)))
        .collect();
    cells
        .into_par_iter()
        .map(|(variant, rounds)| {
            let scenario = Scenario { rounds, ..scenario.clone() };
            let base = MechanismConfig {
                total_rounds_hint: rounds,
                ..base.clone()
            };
            let (_, summary) = variant.run(&scenario, &base, delta)?;
            Ok(SweepCell { variant, rounds, summary })
        })
        .collect()
}

/// The worst-case construction for cutting on conservative prices: `R = 1`,
/// unit features along the first axis with midpoint reserves for the first
/// half, then along the second axis with no reserve.
pub fn adversarial_setup(dim: usize, rounds: u64, allow_conservative_cuts: bool) -> (Scenario, MechanismConfig) {
    let theta = DVector::from_element(dim, 0.9 / (dim as f64).sqrt());
    let scenario = Scenario {
        name: "adversary".into(),
        dim,
        rounds,
        feature_gen: FeatureGenSpec::AdversarialAxes,
        reserve_policy: ReservePolicy::MidpointFirstHalf,
        model: MarketModel::linear(theta),
        seed: 0,
    };
    let config = MechanismConfig {
        allow_conservative_cuts,
        ..MechanismConfig::new(dim, 1.0, rounds)
    };
    (scenario, config)
}

/// Cumulative regret after each of `checkpoints` (1-based round counts).
pub fn cumulative_regret_at(records: &[RoundRecord], checkpoints: &[u64]) -> Vec<f64> {
    checkpoints
        .iter()
        .map(|&t| records.iter().take(t as usize).map(|r| r.regret).sum())
        .collect()
}
