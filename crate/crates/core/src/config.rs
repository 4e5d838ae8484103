//! Experiment configuration files.
//!
//! A configuration is a TOML document with three tables:
//!
//! ```toml
//! [scenario]
//! name = "linear-20"
//! dim = 20
//! rounds = 10000
//! seed = 7
//! feature_gen = "aggregated:normal:200"   # or random_unit:<dist>, csv:<path>, adversarial_axes
//! reserve_policy = "sum"                  # or none, ratio:<rho>, midpoint_first_half
//! link = "identity"                       # or exp, logistic
//! feature_map = "identity"                # or log
//! theta_norm = 6.324555320336759
//! noise_sigma = 0.0
//! noise_C = 2.0
//!
//! [mechanism]
//! epsilon = 0.04
//! delta = 0.0
//! R = 8.94427190999916
//! S = 1.0
//! use_reserve = true
//! allow_conservative_cuts = false
//!
//! [output]
//! dir = "out"
//! trace = false
//! repeats = 1
//! ```
//!
//! Only `scenario.dim` and `scenario.rounds` are required. Unknown keys are
//! rejected so that a file fully determines its experiment.

use std::path::PathBuf;

use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::mechanism::{default_epsilon, MechanismConfig};
use crate::sim::{derived_seed, sample_theta_star, FeatureGenSpec, RawDist, ReservePolicy, Scenario};
use crate::valuation::{uncertainty_buffer, FeatureMap, LinkFunction, MarketModel, NoiseFamily, NoiseSpec};

const SCENARIO_KEYS: &[&str] = &[
    "name",
    "dim",
    "rounds",
    "seed",
    "feature_gen",
    "reserve_policy",
    "link",
    "feature_map",
    "theta_norm",
    "noise_sigma",
    "noise_C",
];
const MECHANISM_KEYS: &[&str] = &["dim", "epsilon", "delta", "R", "S", "use_reserve", "allow_conservative_cuts"];
const OUTPUT_KEYS: &[&str] = &["dir", "trace", "repeats"];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// The scenario of the first repeat.
    pub scenario: Scenario,
    /// Fully resolved; `epsilon` is always set.
    pub mechanism: MechanismConfig,
    pub theta_norm: f64,
    pub output_dir: PathBuf,
    pub emit_trace: bool,
    pub repeats: u32,
}

impl ExperimentConfig {
    fn theta_dist(&self) -> RawDist {
        theta_dist(&self.scenario.feature_gen)
    }

    /// Scenario of repeat `rep`: its own derived seed and its own draw of
    /// the true weights.
    pub fn scenario_for(&self, rep: u32) -> Scenario {
        let seed = derived_seed(self.scenario.seed, rep);
        let mut scenario = self.scenario.clone();
        scenario.seed = seed;
        scenario.model.theta_star = sample_theta_star(scenario.dim, self.theta_norm, self.theta_dist(), seed);
        scenario
    }
}

fn theta_dist(feature_gen: &FeatureGenSpec) -> RawDist {
    match feature_gen {
        FeatureGenSpec::AggregatedCompensations { raw_dist, .. } => *raw_dist,
        FeatureGenSpec::RandomUnit { dist } => *dist,
        _ => RawDist::Normal,
    }
}

struct Section<'a> {
    name: &'static str,
    table: Option<&'a Table>,
}

impl<'a> Section<'a> {
    fn key(&self, key: &str) -> String {
        format!("{}.{key}", self.name)
    }

    fn get(&self, key: &str) -> Option<&'a Value> {
        self.table.and_then(|t| t.get(key))
    }

    fn mismatch(&self, key: &str, expected: &str, found: &Value) -> Error {
        Error::config(self.key(key), format!("expected {expected}, found {}", found.type_str()))
    }

    fn string(&self, key: &str) -> Result<Option<String>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(v) => Err(self.mismatch(key, "a string", v)),
        }
    }

    fn float(&self, key: &str) -> Result<Option<f64>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Float(f)) => Ok(Some(*f)),
            Some(Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(v) => Err(self.mismatch(key, "a number", v)),
        }
    }

    fn unsigned(&self, key: &str) -> Result<Option<u64>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
            Some(Value::Integer(_)) => Err(Error::config(self.key(key), "must be nonnegative")),
            Some(v) => Err(self.mismatch(key, "an integer", v)),
        }
    }

    fn boolean(&self, key: &str) -> Result<Option<bool>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Boolean(b)) => Ok(Some(*b)),
            Some(v) => Err(self.mismatch(key, "a boolean", v)),
        }
    }

    fn parsed<T: std::str::FromStr<Err = String>>(&self, key: &str) -> Result<Option<T>> {
        self.string(key)?
            .map(|s| s.parse::<T>().map_err(|m| Error::config(self.key(key), m)))
            .transpose()
    }

    fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        if let Some(table) = self.table {
            if let Some(unknown) = table.keys().find(|k| !allowed.contains(&k.as_str())) {
                return Err(Error::config(self.key(unknown), "unknown key"));
            }
        }
        Ok(())
    }
}

fn positive(key: &str, value: f64) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(Error::config(key, format!("must be positive, got {value}")))
    }
}

/// Parses and validates a configuration, filling in defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let doc: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::config("<document>", e.message().to_string()))?;
    if let Some(unknown) = doc.keys().find(|k| !["scenario", "mechanism", "output"].contains(&k.as_str())) {
        return Err(Error::config(unknown.as_str(), "unknown key"));
    }
    let section = |name: &'static str| -> Result<Section<'_>> {
        match doc.get(name) {
            None => Ok(Section { name, table: None }),
            Some(Value::Table(t)) => Ok(Section { name, table: Some(t) }),
            Some(v) => Err(Error::config(name, format!("expected a table, found {}", v.type_str()))),
        }
    };
    let sc = section("scenario")?;
    let mc = section("mechanism")?;
    let oc = section("output")?;
    sc.check_keys(SCENARIO_KEYS)?;
    mc.check_keys(MECHANISM_KEYS)?;
    oc.check_keys(OUTPUT_KEYS)?;

    let dim = sc.unsigned("dim")?.ok_or_else(|| Error::config("scenario.dim", "missing required key"))? as usize;
    if dim == 0 {
        return Err(Error::config("scenario.dim", "must be at least 1"));
    }
    let rounds = sc.unsigned("rounds")?.ok_or_else(|| Error::config("scenario.rounds", "missing required key"))?;
    if rounds == 0 {
        return Err(Error::config("scenario.rounds", "must be at least 1"));
    }
    if let Some(mdim) = mc.unsigned("dim")? {
        if mdim as usize != dim {
            return Err(Error::config(
                "mechanism.dim",
                format!("mechanism dimension {mdim} does not match scenario dimension {dim}"),
            ));
        }
    }
    let seed = sc.unsigned("seed")?.unwrap_or(0);
    if seed > i64::MAX as u64 {
        return Err(Error::config("scenario.seed", "must fit in a signed 64-bit integer"));
    }
    let feature_gen = sc.parsed::<FeatureGenSpec>("feature_gen")?.unwrap_or(FeatureGenSpec::AggregatedCompensations {
        raw_dim: 10 * dim,
        raw_dist: RawDist::Normal,
    });
    let reserve_policy = sc.parsed::<ReservePolicy>("reserve_policy")?.unwrap_or(ReservePolicy::SumOfFeatures);
    let link = sc.parsed::<LinkFunction>("link")?.unwrap_or_default();
    let feature_map = sc.parsed::<FeatureMap>("feature_map")?.unwrap_or_default();
    let theta_norm = positive(
        "scenario.theta_norm",
        sc.float("theta_norm")?.unwrap_or((2.0 * dim as f64).sqrt()),
    )?;
    let sigma = sc.float("noise_sigma")?.unwrap_or(0.0);
    let noise = NoiseSpec {
        family: if sigma > 0.0 { NoiseFamily::Normal } else { NoiseFamily::None },
        sigma,
        c: sc.float("noise_C")?.unwrap_or(2.0),
    };
    noise.validate()?;

    let radius = positive("mechanism.R", mc.float("R")?.unwrap_or(2.0 * (dim as f64).sqrt()))?;
    if theta_norm > radius {
        return Err(Error::config(
            "scenario.theta_norm",
            format!("true weights of norm {theta_norm} lie outside the initial ball of radius {radius}"),
        ));
    }
    let delta = match mc.float("delta")? {
        Some(d) => d,
        None if sigma > 0.0 && rounds >= 8 => uncertainty_buffer(sigma, noise.c, rounds)?,
        None => 0.0,
    };
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::config("mechanism.delta", "must be nonnegative"));
    }
    let epsilon = match mc.float("epsilon")? {
        Some(e) => positive("mechanism.epsilon", e)?,
        None if rounds < 2 => {
            return Err(Error::config("mechanism.epsilon", "required when scenario.rounds < 2"));
        }
        None => default_epsilon(dim, rounds, delta),
    };
    let mechanism = MechanismConfig {
        dim,
        radius,
        feature_bound: positive("mechanism.S", mc.float("S")?.unwrap_or(1.0))?,
        epsilon: Some(epsilon),
        delta,
        use_reserve: mc.boolean("use_reserve")?.unwrap_or(reserve_policy != ReservePolicy::None),
        allow_conservative_cuts: mc.boolean("allow_conservative_cuts")?.unwrap_or(false),
        link,
        total_rounds_hint: rounds,
    };
    mechanism.validate()?;

    let repeats = oc.unsigned("repeats")?.unwrap_or(1);
    if repeats == 0 || repeats > u32::MAX as u64 {
        return Err(Error::config("output.repeats", "must be at least 1"));
    }

    let model = MarketModel {
        theta_star: sample_theta_star(dim, theta_norm, theta_dist(&feature_gen), seed),
        link,
        feature_map,
        noise,
    };
    let scenario = Scenario {
        name: sc.string("name")?.unwrap_or_else(|| "experiment".into()),
        dim,
        rounds,
        feature_gen,
        reserve_policy,
        model,
        seed,
    };
    scenario.validate()?;
    Ok(ExperimentConfig {
        scenario,
        mechanism,
        theta_norm,
        output_dir: oc.string("dir")?.unwrap_or_else(|| "out".into()).into(),
        emit_trace: oc.boolean("trace")?.unwrap_or(false),
        repeats: repeats as u32,
    })
}

/// Writes a configuration back out with every default made explicit.
pub fn to_toml(config: &ExperimentConfig) -> String {
    let s = &config.scenario;
    let m = &config.mechanism;
    let mut scenario = Table::new();
    scenario.insert("name".into(), s.name.clone().into());
    scenario.insert("dim".into(), (s.dim as i64).into());
    scenario.insert("rounds".into(), (s.rounds as i64).into());
    scenario.insert("seed".into(), (s.seed as i64).into());
    scenario.insert("feature_gen".into(), s.feature_gen.to_string().into());
    scenario.insert("reserve_policy".into(), s.reserve_policy.to_string().into());
    scenario.insert("link".into(), s.model.link.to_string().into());
    scenario.insert("feature_map".into(), s.model.feature_map.to_string().into());
    scenario.insert("theta_norm".into(), config.theta_norm.into());
    scenario.insert("noise_sigma".into(), s.model.noise.sigma.into());
    scenario.insert("noise_C".into(), s.model.noise.c.into());

    let mut mechanism = Table::new();
    mechanism.insert("epsilon".into(), m.effective_epsilon().into());
    mechanism.insert("delta".into(), m.delta.into());
    mechanism.insert("R".into(), m.radius.into());
    mechanism.insert("S".into(), m.feature_bound.into());
    mechanism.insert("use_reserve".into(), m.use_reserve.into());
    mechanism.insert("allow_conservative_cuts".into(), m.allow_conservative_cuts.into());

    let mut output = Table::new();
    output.insert("dir".into(), config.output_dir.display().to_string().into());
    output.insert("trace".into(), config.emit_trace.into());
    output.insert("repeats".into(), (config.repeats as i64).into());

    let mut doc = Table::new();
    doc.insert("scenario".into(), scenario.into());
    doc.insert("mechanism".into(), mechanism.into());
    doc.insert("output".into(), output.into());
    toml::to_string(&doc).expect("a table of plain values always serializes")
}
