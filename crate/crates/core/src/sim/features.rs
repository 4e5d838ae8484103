use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::mechanism::MechanismState;
use crate::sim::rng::{stream, Tag};
use crate::sim::scenario::{FeatureGenSpec, RawDist, ReservePolicy, Scenario};
use crate::valuation::MarketModel;

/// One round's query: raw features (before the model's feature map) and
/// the reserve price.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub features: DVector<f64>,
    pub reserve: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct CsvRow {
    features: DVector<f64>,
    reserve: Option<f64>,
}

#[derive(Debug, Clone)]
enum Source {
    Aggregated { raw_dim: usize, raw_dist: RawDist },
    RandomUnit { dist: RawDist },
    Rows(Vec<CsvRow>),
    Axes,
}

/// Produces the query stream of a scenario. Round `t` draws from its own
/// seeded stream, so the stream does not depend on what the mechanism did,
/// except for the midpoint reserve policy which reads the mechanism state.
#[derive(Debug, Clone)]
pub struct QueryGenerator {
    source: Source,
    policy: ReservePolicy,
    model: MarketModel,
    dim: usize,
    rounds: u64,
    seed: u64,
}

impl QueryGenerator {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let source = match &scenario.feature_gen {
            FeatureGenSpec::AggregatedCompensations { raw_dim, raw_dist } => Source::Aggregated {
                raw_dim: *raw_dim,
                raw_dist: *raw_dist,
            },
            FeatureGenSpec::RandomUnit { dist } => Source::RandomUnit { dist: *dist },
            FeatureGenSpec::CsvStream { path } => Source::Rows(read_csv(path, scenario.dim)?),
            FeatureGenSpec::AdversarialAxes => Source::Axes,
        };
        Ok(Self {
            source,
            policy: scenario.reserve_policy,
            model: scenario.model.clone(),
            dim: scenario.dim,
            rounds: scenario.rounds,
            seed: scenario.seed,
        })
    }

    fn first_half(&self, round: u64) -> bool {
        round <= self.rounds / 2
    }

    /// Query for 1-based `round`. `mechanism` is only consulted by the
    /// midpoint policy.
    pub fn generate(&self, round: u64, mechanism: Option<&MechanismState>) -> Result<Query> {
        let mut rng = stream(self.seed, Tag::Features, round);
        let mut csv_reserve = None;
        let features = match &self.source {
            Source::Aggregated { raw_dim, raw_dist } => {
                let mut raw: Vec<f64> = (0..*raw_dim).map(|_| raw_dist.draw(&mut rng).abs()).collect();
                raw.sort_by(f64::total_cmp);
                let x = DVector::from_fn(self.dim, |i, _| {
                    let lo = i * raw_dim / self.dim;
                    let hi = (i + 1) * raw_dim / self.dim;
                    raw[lo..hi].iter().sum::<f64>()
                });
                normalized(x).ok_or_else(|| Error::NumericalFailure("all compensations were zero".into()))?
            }
            Source::RandomUnit { dist } => loop {
                let x = DVector::from_fn(self.dim, |_, _| dist.draw(&mut rng));
                if let Some(x) = normalized(x) {
                    break x;
                }
            },
            Source::Rows(rows) => {
                let row = &rows[((round - 1) % rows.len() as u64) as usize];
                csv_reserve = row.reserve;
                row.features.clone()
            }
            Source::Axes => {
                let mut x = DVector::zeros(self.dim);
                x[if self.first_half(round) { 0 } else { 1 }] = 1.0;
                x
            }
        };

        let reserve = match csv_reserve {
            Some(q) => q,
            None => self.reserve_for(&features, round, mechanism)?,
        };
        Ok(Query { features, reserve })
    }

    fn reserve_for(&self, x: &DVector<f64>, round: u64, mechanism: Option<&MechanismState>) -> Result<f64> {
        match self.policy {
            ReservePolicy::None => Ok(0.0),
            ReservePolicy::SumOfFeatures => Ok(x.sum().max(0.0)),
            ReservePolicy::ValueRatio { rho } => {
                Ok(self.model.link.forward(rho * self.model.linear_value(x)?))
            }
            ReservePolicy::MidpointFirstHalf => {
                if !self.first_half(round) {
                    return Ok(0.0);
                }
                let state = mechanism.ok_or_else(|| {
                    Error::config("scenario.reserve_policy", "the midpoint policy needs a mechanism")
                })?;
                let phi = self.model.feature_map.apply(x)?;
                let mid = state.knowledge().support_bounds(&phi)?.midpoint();
                Ok(self.model.link.forward(mid).max(0.0))
            }
        }
    }
}

fn normalized(x: DVector<f64>) -> Option<DVector<f64>> {
    let len = x.norm();
    (len > 1e-12 && len.is_finite()).then(|| x / len)
}

fn read_csv(path: &Path, dim: usize) -> Result<Vec<CsvRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Ingest { line: 1, message: e.to_string() })?
        .clone();
    let has_reserve = headers.iter().last() == Some("reserve");
    let feature_cols = headers.len() - usize::from(has_reserve);
    let expected: Vec<String> = (1..=feature_cols).map(|i| format!("f{i}")).collect();
    if !headers.iter().take(feature_cols).eq(expected.iter().map(String::as_str)) {
        return Err(Error::Ingest {
            line: 1,
            message: "header must be f1,...,fn with an optional trailing reserve".into(),
        });
    }
    if feature_cols != dim {
        return Err(Error::Ingest {
            line: 1,
            message: format!("file has {feature_cols} feature columns, scenario has {dim}"),
        });
    }

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Ingest {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let ingest = |message: String| Error::Ingest { line, message };
        let values = record
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| ingest(format!("`{s}`: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != headers.len() {
            return Err(ingest(format!("expected {} fields, found {}", headers.len(), values.len())));
        }
        let features = normalized(DVector::from_column_slice(&values[..feature_cols]))
            .ok_or_else(|| ingest("feature vector is zero".into()))?;
        let reserve = has_reserve.then(|| values[feature_cols]);
        if let Some(q) = reserve {
            if !(q >= 0.0) {
                return Err(ingest(format!("reserve {q} is negative")));
            }
        }
        rows.push(CsvRow { features, reserve });
    }
    if rows.is_empty() {
        return Err(Error::Ingest {
            line: 2,
            message: "no query rows".into(),
        });
    }
    Ok(rows)
}
