//! Property checks shared by the property tests and the acceptance suite.
//!
//! Every check is a seeded loop returning `Err` with a description of the
//! first violation.

#![allow(dead_code)]

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use price_sim::sim::{
    run_scenario_with, sample_theta_star, FeatureGenSpec, QueryGenerator, RawDist, ReservePolicy,
    RoundRecord, RunSummary, Scenario, Variant,
};
use price_sim::{
    buyer_response, exploratory_round_bound, single_round_regret, CutSide, DecisionKind,
    Ellipsoid, Feedback, LinkFunction, MarketModel, MechanismConfig, MechanismState, NoiseSpec,
};

pub type Check = Result<(), String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_unit(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
        let len: f64 = v.norm();
        if len > 1e-9 {
            return v / len;
        }
    }
}

/// A random well-conditioned SPD ellipsoid with a random center.
pub fn random_ellipsoid(n: usize, rng: &mut ChaCha8Rng) -> Ellipsoid {
    let m = DMatrix::from_fn(n, n, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z / (n as f64).sqrt()
    });
    let mut shape = &m * m.transpose() + DMatrix::identity(n, n) * 0.2;
    shape *= rng.random_range(0.5..4.0);
    let shape = (&shape + shape.transpose()) * 0.5;
    let center = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    Ellipsoid::new(center, shape).expect("random SPD shape")
}

/// Uniform point of `e`, through the Cholesky map of the unit ball.
pub fn uniform_in(e: &Ellipsoid, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let n = e.dim();
    let l = Cholesky::new(e.shape().clone()).expect("SPD").l();
    let dir = random_unit(n, rng);
    let radius = rng.random::<f64>().powf(1.0 / n as f64);
    e.center() + l * (dir * radius)
}

/// Uniform point of `e` by rejection from its bounding box.
pub fn uniform_in_box(e: &Ellipsoid, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let n = e.dim();
    let half: Vec<f64> = (0..n).map(|i| e.shape()[(i, i)].sqrt()).collect();
    loop {
        let theta = DVector::from_fn(n, |i, _| e.center()[i] + rng.random_range(-half[i]..=half[i]));
        if e.mahalanobis_sq(&theta).expect("solve") <= 1.0 {
            return theta;
        }
    }
}

fn relative_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / a.amax().max(b.amax())
}

/// SPD preservation and symmetry after a single cut.
pub fn check_spd_preservation(n: usize, iterations: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    for i in 0..iterations {
        let e = random_ellipsoid(n, &mut rng);
        let x = random_unit(n, &mut rng);
        let alpha = rng.random_range(-1.0 / n as f64..0.99);
        let side = if rng.random_bool(0.5) { CutSide::RetainBelow } else { CutSide::RetainAbove };
        let signed = if side == CutSide::RetainBelow { alpha } else { -alpha };
        let next = e.cut(&x, signed, side).map_err(|err| format!("iteration {i}: {err}"))?;
        let gamma = next.smallest_eigenvalue().map_err(|err| err.to_string())?;
        if !(gamma > 0.0) {
            return Err(format!("iteration {i}: smallest eigenvalue {gamma} at alpha {alpha}"));
        }
        if next.symmetry_error() >= 1e-10 {
            return Err(format!("iteration {i}: symmetry error {}", next.symmetry_error()));
        }
    }
    Ok(())
}

/// Every sampled point of the retained cap lies in the updated ellipsoid.
/// Small dimensions sample by bounding-box rejection; larger ones through
/// the Cholesky map.
pub fn check_containment(n: usize, instances: usize, points: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    for i in 0..instances {
        let e = random_ellipsoid(n, &mut rng);
        let x = random_unit(n, &mut rng);
        let alpha = rng.random_range(-1.0 / n as f64..0.5);
        let side = if i % 2 == 0 { CutSide::RetainBelow } else { CutSide::RetainAbove };
        let signed = if side == CutSide::RetainBelow { alpha } else { -alpha };
        let next = e.cut(&x, signed, side).map_err(|err| err.to_string())?;
        let w = e.quadratic_form(&x).unwrap().sqrt();
        let plane = x.dot(e.center()) - signed * w;
        let mut kept = 0;
        let mut tries = 0usize;
        while kept < points {
            tries += 1;
            if tries > 2_000 * points {
                return Err(format!("instance {i}: retained cap too thin to sample"));
            }
            let theta = if n <= 5 { uniform_in_box(&e, &mut rng) } else { uniform_in(&e, &mut rng) };
            let s = x.dot(&theta);
            let retained = match side {
                CutSide::RetainBelow => s <= plane,
                CutSide::RetainAbove => s >= plane,
            };
            if !retained {
                continue;
            }
            kept += 1;
            if !next.contains(&theta).unwrap() {
                return Err(format!(
                    "instance {i}: retained point outside the new ellipsoid (alpha {alpha}, distance² {})",
                    next.mahalanobis_sq(&theta).unwrap()
                ));
            }
        }
    }
    Ok(())
}

/// Volume ratio of a cut at `alpha ∈ [-1/n, 0]` is at most
/// `exp(-(1 + nα)² / 5n)`.
pub fn check_volume_ratio(n: usize, iterations: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    let nf = n as f64;
    for i in 0..iterations {
        let e = random_ellipsoid(n, &mut rng);
        let x = random_unit(n, &mut rng);
        let alpha = if i == 0 { 0.0 } else { rng.random_range(-1.0 / nf..=0.0) };
        let next = e.cut(&x, alpha, CutSide::RetainBelow).map_err(|err| err.to_string())?;
        let log_ratio = next.log_volume().unwrap() - e.log_volume().unwrap();
        let bound = (-(1.0 + nf * alpha).powi(2) / (5.0 * nf)).exp() + 1e-9;
        if log_ratio > bound.ln() {
            return Err(format!("iteration {i}: ratio {} above {bound} at alpha {alpha}", log_ratio.exp()));
        }
    }
    Ok(())
}

/// Smallest eigenvalue shrinks by at most `n²(1-α)²/(n+1)²` for
/// `α ∈ [-1/2n, 0]`.
pub fn check_eigenvalue_drop(n: usize, iterations: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    let nf = n as f64;
    for i in 0..iterations {
        let e = random_ellipsoid(n, &mut rng);
        let x = random_unit(n, &mut rng);
        let alpha = rng.random_range(-0.5 / nf..=0.0);
        let side = if rng.random_bool(0.5) { CutSide::RetainBelow } else { CutSide::RetainAbove };
        let signed = if side == CutSide::RetainBelow { alpha } else { -alpha };
        let next = e.cut(&x, signed, side).map_err(|err| err.to_string())?;
        let before = e.smallest_eigenvalue().unwrap();
        let after = next.smallest_eigenvalue().unwrap();
        let factor = nf * nf * (1.0 - alpha).powi(2) / ((nf + 1.0) * (nf + 1.0));
        if after < factor * before - 1e-9 * before {
            return Err(format!("iteration {i}: {after} < {factor} x {before} at alpha {alpha}"));
        }
    }
    Ok(())
}

/// Support bounds enclose `xᵀθ` for points of the ellipsoid.
pub fn check_support(n: usize, instances: usize, points: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    for i in 0..instances {
        let e = random_ellipsoid(n, &mut rng);
        let x = random_unit(n, &mut rng);
        let b = e.support_bounds(&x).unwrap();
        let slack = 1e-9 * b.halfwidth.max(1.0);
        for _ in 0..points {
            let s = x.dot(&uniform_in(&e, &mut rng));
            if s < b.lower - slack || s > b.upper + slack {
                return Err(format!("instance {i}: {s} outside [{}, {}]", b.lower, b.upper));
            }
        }
        if ((b.upper - b.lower) - 2.0 * b.halfwidth).abs() > 1e-10 * b.halfwidth.max(1.0) {
            return Err(format!("instance {i}: width and halfwidth disagree"));
        }
    }
    Ok(())
}

/// Keeping the upper cap at `α` mirrors keeping the lower cap at `-α`
/// through the hyperplane `xᵀθ = xᵀc`.
pub fn check_branch_symmetry(n: usize, iterations: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    for i in 0..iterations {
        let e = random_ellipsoid(n, &mut rng);
        let x = random_unit(n, &mut rng);
        let alpha = rng.random_range(-0.99..=1.0 / n as f64);
        let above = e.cut(&x, alpha, CutSide::RetainAbove).map_err(|err| err.to_string())?;
        let below = e.cut(&x, -alpha, CutSide::RetainBelow).map_err(|err| err.to_string())?;
        let gap = relative_gap(above.shape(), below.shape());
        if gap > 1e-10 {
            return Err(format!("iteration {i}: shapes differ by {gap}"));
        }
        let mirror = (above.center() + below.center()) * 0.5 - e.center();
        let scale = e.center().amax().max(e.shape().amax().sqrt());
        if mirror.amax() > 1e-10 * scale {
            return Err(format!("iteration {i}: centers are not mirrored ({})", mirror.amax()));
        }
    }
    Ok(())
}

/// The four mechanism variants.
pub const MECHANISMS: [Variant; 4] = [Variant::Pure, Variant::Uncertainty, Variant::Reserve, Variant::ReserveUncertainty];

/// A linear market in the style of the query-pricing experiments: sorted
/// aggregated features, weights of norm `sqrt(2n)`, reserve the feature sum,
/// and bounded uniform noise of half-width `noise`.
pub fn linear_market(n: usize, rounds: u64, seed: u64, noise: f64) -> Scenario {
    let theta = sample_theta_star(n, (2.0 * n as f64).sqrt(), RawDist::Normal, seed);
    Scenario {
        name: format!("linear-{n}"),
        dim: n,
        rounds,
        feature_gen: FeatureGenSpec::AggregatedCompensations {
            raw_dim: 10 * n,
            raw_dist: RawDist::Normal,
        },
        reserve_policy: ReservePolicy::SumOfFeatures,
        model: MarketModel {
            noise: if noise > 0.0 { NoiseSpec::uniform(noise) } else { NoiseSpec::none() },
            ..MarketModel::linear(theta)
        },
        seed,
    }
}

/// Random unit features, which exercise many more directions.
pub fn spread_market(n: usize, rounds: u64, seed: u64, noise: f64) -> Scenario {
    Scenario {
        feature_gen: FeatureGenSpec::RandomUnit { dist: RawDist::Normal },
        ..linear_market(n, rounds, seed, noise)
    }
}

pub fn base_config(n: usize, rounds: u64) -> MechanismConfig {
    MechanismConfig::new(n, 2.0 * (n as f64).sqrt(), rounds)
}

/// Buffer and epsilon satisfying `ε ≥ 4nδ`.
pub fn buffered(n: usize, rounds: u64, delta: f64) -> (f64, MechanismConfig) {
    let eps = (n as f64 * n as f64 / rounds as f64).max(4.0 * n as f64 * delta);
    (delta, MechanismConfig { epsilon: Some(eps), ..base_config(n, rounds) })
}

/// The true weights stay inside the knowledge set after every round.
pub fn check_retention(n: usize, rounds: u64, seed: u64) -> Check {
    let delta = 0.01;
    for variant in MECHANISMS {
        for market in [linear_market(n, rounds, seed, 0.0), spread_market(n, rounds, seed, 0.0)] {
            let (delta, base) = buffered(n, rounds, delta);
            let config = variant.configure(&base, delta).unwrap();
            let scenario = Scenario {
                model: MarketModel {
                    noise: if config.delta > 0.0 { NoiseSpec::uniform(config.delta) } else { NoiseSpec::none() },
                    ..market.model.clone()
                },
                ..market
            };
            let theta = scenario.model.theta_star.clone();
            let mut lost = None;
            run_scenario_with(&scenario, &config, |state, record| {
                if lost.is_none() && !state.knowledge().contains(&theta).unwrap() {
                    lost = Some(record.round);
                }
            })
            .map_err(|e| e.to_string())?;
            if let Some(round) = lost {
                return Err(format!("{} (n = {n}, {}) lost the true weights in round {round}", variant.name(), scenario.feature_gen));
            }
        }
    }
    Ok(())
}

/// One round of a hand-driven session, with everything the properties need.
pub struct Step {
    pub state: MechanismState,
    pub decision: price_sim::PriceDecision,
    pub linear_value: f64,
    pub noise: f64,
    pub value: f64,
    pub reserve: f64,
    pub features: DVector<f64>,
    pub accepted: bool,
}

/// Drives a mechanism by hand over a scenario, calling `visit` before each
/// observe.
pub fn drive<F: FnMut(&Step) -> Check>(scenario: &Scenario, config: &MechanismConfig, noise_half_width: f64, seed: u64, mut visit: F) -> Check {
    let generator = QueryGenerator::new(scenario).map_err(|e| e.to_string())?;
    let mut state = MechanismState::new(config.clone()).map_err(|e| e.to_string())?;
    let mut rng = rng(seed);
    for round in 1..=scenario.rounds {
        let q = generator.generate(round, Some(&state)).map_err(|e| e.to_string())?;
        let linear_value = scenario.model.linear_value(&q.features).unwrap();
        let noise = if noise_half_width > 0.0 { rng.random_range(-noise_half_width..=noise_half_width) } else { 0.0 };
        let value = scenario.model.link.forward(linear_value + noise);
        let decision = state.decide(&q.features, q.reserve).map_err(|e| e.to_string())?;
        let accepted = decision.posted_price.is_some_and(|p| buyer_response(value, p).accepted);
        let step = Step {
            state,
            decision,
            linear_value,
            noise,
            value,
            reserve: q.reserve,
            features: q.features,
            accepted,
        };
        visit(&step)?;
        state = step
            .state
            .observe(&step.features, step.reserve, &step.decision, Feedback { accepted })
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

/// Which exploratory rounds count against the budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetCount {
    /// Every exploratory round.
    Literal,
    /// Exploratory rounds minus rejected binding reserves.
    Informative,
}

impl BudgetCount {
    pub fn of(self, exploratory: u64, reserve_rejections: u64) -> u64 {
        match self {
            BudgetCount::Literal => exploratory,
            BudgetCount::Informative => exploratory - reserve_rejections,
        }
    }
}

/// Exploratory rounds never exceed the budget (`ε ≥ 4nδ`), including on
/// the worst-case axis stream.
pub fn check_exploratory_budget(n: usize, rounds: u64, seed: u64, count: BudgetCount) -> Check {
    let mut runs: Vec<(Scenario, MechanismConfig)> = Vec::new();
    // the one-dimensional count is only bounded without a buffer
    let delta = if n == 1 { 0.0 } else { 0.002 };
    for variant in MECHANISMS {
        let (delta, base) = buffered(n, rounds, delta);
        let config = variant.configure(&base, delta).unwrap();
        let noise = config.delta;
        runs.push((linear_market(n, rounds, seed, noise), config.clone()));
        runs.push((spread_market(n, rounds, seed, noise), config));
    }
    if n >= 2 {
        let (scenario, config) = price_sim::sim::adversarial_setup(n, rounds, false);
        runs.push((scenario, config));
    }
    for (scenario, config) in runs {
        let bound = exploratory_round_bound(n, config.radius, config.feature_bound, config.effective_epsilon()).unwrap();
        let mut over = None;
        run_scenario_with(&scenario, &config, |state, _| {
            let used = count.of(state.exploratory_count(), state.reserve_rejections());
            if over.is_none() && used as f64 > bound {
                over = Some(used);
            }
        })
        .map_err(|e| e.to_string())?;
        if let Some(count) = over {
            return Err(format!("{}: {count} exploratory rounds above the bound {bound}", scenario.name));
        }
    }
    Ok(())
}

/// Without the reserve, every conservative price sells under bounded noise.
pub fn check_conservative_safety(n: usize, rounds: u64, seed: u64) -> Check {
    for delta in [0.0, 0.01] {
        let (delta, base) = buffered(n, rounds, delta);
        let config = MechanismConfig { use_reserve: false, delta, ..base };
        for scenario in [linear_market(n, rounds, seed, 0.0), spread_market(n, rounds, seed, 0.0)] {
            drive(&scenario, &config, delta, seed, |s| {
                if s.decision.kind == DecisionKind::Conservative && !s.accepted {
                    return Err(format!(
                        "round {}: conservative price {:?} rejected at value {}",
                        s.decision.round, s.decision.posted_price, s.value
                    ));
                }
                Ok(())
            })?;
        }
    }
    Ok(())
}

/// Skips happen only above `p̄ + δ`, and are never sellable under bounded
/// noise.
pub fn check_skip_soundness(n: usize, rounds: u64, seed: u64) -> Check {
    for delta in [0.0, 0.01] {
        let (delta, base) = buffered(n, rounds, delta);
        let config = MechanismConfig { delta, ..base };
        // reserves well above the typical value make skips common
        let mut scenario = spread_market(n, rounds, seed, 0.0);
        scenario.model.theta_star *= 0.5;
        let mut skips = 0;
        drive(&scenario, &config, delta, seed, |s| {
            if s.decision.kind != DecisionKind::Skip {
                return Ok(());
            }
            skips += 1;
            let q = s.reserve;
            if q < s.decision.bounds.upper + delta {
                return Err(format!("round {}: skipped with q {q} below the upper bound", s.decision.round));
            }
            if q < s.linear_value + s.noise {
                return Err(format!("round {}: skipped a sellable query", s.decision.round));
            }
            if single_round_regret(s.value, q, None, false) != 0.0 {
                return Err(format!("round {}: skip carries regret", s.decision.round));
            }
            Ok(())
        })?;
        // at n = 20 the knowledge set is still too wide to skip within 10³ rounds
        if skips == 0 && n <= 5 {
            return Err("no skip rounds were exercised".into());
        }
    }
    Ok(())
}

/// Exploratory prices dominate conservative ones and the reserve never
/// lowers a price.
pub fn check_price_ordering(n: usize, rounds: u64, seed: u64) -> Check {
    let (delta, base) = buffered(n, rounds, 0.01);
    let scenario = spread_market(n, rounds, seed, 0.0);
    let config = MechanismConfig { delta, ..base };
    drive(&scenario, &config, delta, seed, |s| {
        let x = &s.features;
        let with_eps = |eps: f64, use_reserve: bool| {
            let cfg = MechanismConfig { epsilon: Some(eps), use_reserve, ..s.state.config().clone() };
            MechanismState::with_knowledge(cfg, s.state.knowledge().clone())
                .and_then(|st| st.decide(x, s.reserve))
                .map_err(|e| e.to_string())
        };
        let explore = with_eps(1e-12, true)?;
        let conserve = with_eps(1e12, true)?;
        if let (Some(pe), Some(pc)) = (explore.linear_price, conserve.linear_price) {
            if pe < pc {
                return Err(format!("round {}: exploratory {pe} below conservative {pc}", s.decision.round));
            }
        }
        for eps in [1e-12, 1e12] {
            let pure = with_eps(eps, false)?;
            let reserved = with_eps(eps, true)?;
            if let (Some(pp), Some(pr)) = (pure.posted_price, reserved.posted_price) {
                if pr < pp {
                    return Err(format!("round {}: reserve lowered the price {pp} to {pr}", s.decision.round));
                }
            }
        }
        Ok(())
    })
}

/// Repeated decisions on the same input agree exactly.
pub fn check_determinism(n: usize, rounds: u64, seed: u64) -> Check {
    let (delta, base) = buffered(n, rounds, 0.01);
    let config = MechanismConfig { delta, ..base };
    drive(&spread_market(n, rounds, seed, 0.0), &config, delta, seed, |s| {
        let again = s.state.clone().decide(&s.features, s.reserve).map_err(|e| e.to_string())?;
        if again != s.decision {
            return Err(format!("round {}: decisions differ", s.decision.round));
        }
        Ok(())
    })
}

/// Empirical tail frequencies of normal noise stay under the tail bound.
pub fn check_noise_tail(draws: usize, seed: u64) -> Check {
    let sigma = 0.7;
    let noise = NoiseSpec::normal(sigma);
    let mut rng = rng(seed);
    let samples: Vec<f64> = (0..draws).map(|_| noise.sample(&mut rng)).collect();
    for k in [1.0, 2.0, 3.0] {
        let z = k * sigma;
        let freq = samples.iter().filter(|d| d.abs() > z).count() as f64 / draws as f64;
        let se = (freq * (1.0 - freq) / draws as f64).sqrt();
        let bound = noise.tail_bound(z);
        if freq > bound + 3.0 * se {
            return Err(format!("tail at {k} sigma: frequency {freq} above {bound}"));
        }
    }
    Ok(())
}

/// A reserve never raises single-round regret.
pub fn check_reserve_monotonicity(triples: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    for i in 0..triples {
        let v: f64 = rng.random_range(0.0..3.0);
        let q: f64 = if i % 7 == 0 { v } else { rng.random_range(0.0..3.0) };
        let p0: f64 = if i % 11 == 0 { v } else { rng.random_range(0.0..3.0) };
        let p = q.max(p0);
        let with = single_round_regret(v, q, Some(p), buyer_response(v, p).accepted);
        let without = single_round_regret(v, 0.0, Some(p0), buyer_response(v, p0).accepted);
        if with > without {
            return Err(format!("(v, q, p') = ({v}, {q}, {p0}): {with} > {without}"));
        }
    }
    Ok(())
}

/// Worst relative round-trip error `g⁻¹(g(z))` over a grid of `[lo, hi]`,
/// relative to `max(|z|, 1)`.
pub fn round_trip_error(link: LinkFunction, lo: f64, hi: f64, points: usize) -> (f64, f64) {
    let mut worst = (0.0, lo);
    for i in 0..=points {
        let z = lo + (hi - lo) * i as f64 / points as f64;
        let back = link.inverse(link.forward(z)).unwrap_or(f64::NAN);
        let err = (back - z).abs() / z.abs().max(1.0);
        if !(err <= worst.0) {
            worst = (if err.is_nan() { f64::INFINITY } else { err }, z);
        }
    }
    worst
}

pub fn check_round_trip(link: LinkFunction, lo: f64, hi: f64) -> Check {
    let (err, z) = round_trip_error(link, lo, hi, 60_000);
    if err > 1e-10 {
        return Err(format!("{link}: relative error {err:e} at z = {z}"));
    }
    Ok(())
}

/// `|g(a) - g(b)| ≤ L|a - b|` with `L` declared on the sampling domain.
pub fn check_lipschitz(link: LinkFunction, lo: f64, hi: f64, pairs: usize, seed: u64) -> Check {
    let l = link.lipschitz_on(lo, hi);
    let mut rng = rng(seed);
    for _ in 0..pairs {
        let a = rng.random_range(lo..=hi);
        let b = rng.random_range(lo..=hi);
        let lhs = (link.forward(a) - link.forward(b)).abs();
        if lhs > l * (a - b).abs() * (1.0 + 1e-12) + 1e-15 {
            return Err(format!("{link}: |g({a}) - g({b})| = {lhs} above L = {l}"));
        }
    }
    Ok(())
}

pub fn check_records(records: &[RoundRecord]) -> Check {
    for r in records {
        if !(r.regret >= 0.0 && r.regret <= r.value.max(0.0)) {
            return Err(format!("round {}: regret {} outside [0, {}]", r.round, r.regret, r.value));
        }
        if r.kind == DecisionKind::Skip && r.regret != 0.0 {
            return Err(format!("round {}: skip with regret {}", r.round, r.regret));
        }
        if !(r.knowledge_width >= 0.0) {
            return Err(format!("round {}: negative width", r.round));
        }
    }
    Ok(())
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-300)
}

/// Summaries of two runs agree on everything except timing.
pub fn same_summary(a: &RunSummary, b: &RunSummary) -> bool {
    a.rounds == b.rounds
        && a.exploratory_rounds == b.exploratory_rounds
        && a.reserve_rejections == b.reserve_rejections
        && a.skip_rounds == b.skip_rounds
        && a.guard_skips == b.guard_skips
        && [
            (a.cumulative_regret, b.cumulative_regret),
            (a.cumulative_value, b.cumulative_value),
            (a.regret_ratio, b.regret_ratio),
            (a.acceptance_rate, b.acceptance_rate),
            (a.mean_posted, b.mean_posted),
            (a.mean_reserve, b.mean_reserve),
        ]
        .iter()
        .all(|&(x, y)| close(x, y))
}

/// Regret accounting, skip accounting, budget, paired dominance in the
/// first round, and reproducibility across all variants.
pub fn check_market_accounting(n: usize, rounds: u64, seed: u64, count: BudgetCount) -> Check {
    // mixed-sign features would allow negative values
    for scenario in [linear_market(n, rounds, seed, 0.002), linear_market(n, rounds, seed + 1, 0.0)] {
        let (delta, base) = buffered(n, rounds, 0.002);
        let mut first_round = Vec::new();
        for variant in MECHANISMS {
            let (records, summary) = variant.run(&scenario, &base, delta).map_err(|e| e.to_string())?;
            check_records(&records).map_err(|e| format!("{}: {e}", variant.name()))?;
            let config = variant.configure(&base, delta).unwrap();
            let bound = exploratory_round_bound(n, config.radius, config.feature_bound, config.effective_epsilon()).unwrap();
            let used = count.of(summary.exploratory_rounds, summary.reserve_rejections);
            if used as f64 > bound {
                return Err(format!(
                    "{}: {used} exploratory rounds above the bound {bound:.1} ({} rejected reserves)",
                    variant.name(),
                    summary.reserve_rejections
                ));
            }
            let skip_regret: f64 = records.iter().filter(|r| r.kind == DecisionKind::Skip).map(|r| r.regret).sum();
            if skip_regret != 0.0 {
                return Err(format!("{}: skips carry regret", variant.name()));
            }
            if !(0.0..=1.0).contains(&summary.regret_ratio) {
                return Err(format!("{}: regret ratio {}", variant.name(), summary.regret_ratio));
            }
            let (_, again) = variant.run(&scenario, &base, delta).map_err(|e| e.to_string())?;
            if !same_summary(&summary, &again) {
                return Err(format!("{}: rerun with the same seed differs", variant.name()));
            }
            first_round.push((variant, records[0].regret));
        }
        let regret_of = |v: Variant| first_round.iter().find(|(w, _)| *w == v).unwrap().1;
        if regret_of(Variant::Reserve) > regret_of(Variant::Pure) + 1e-12
            || regret_of(Variant::ReserveUncertainty) > regret_of(Variant::Uncertainty) + 1e-12
        {
            return Err("reserve variant has larger first-round regret than its pure counterpart".into());
        }
    }
    Ok(())
}
