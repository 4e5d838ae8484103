//! CSV emission and the experiment driver behind `price-sim run`.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;

use crate::config::{to_toml, ExperimentConfig};
use crate::error::{Error, Result};
use crate::sim::{regret_ratio, ReservePolicy, RoundRecord, RunSummary, Variant};

pub const SUMMARY_COLUMNS: &[&str] = &[
    "variant",
    "repeat",
    "seed",
    "rounds",
    "cumulative_regret",
    "cumulative_value",
    "regret_ratio",
    "exploratory_rounds",
    "reserve_rejections",
    "skip_rounds",
    "guard_skips",
    "acceptance_rate",
    "mean_value",
    "mean_reserve",
    "mean_posted",
    "std_posted",
    "mean_regret",
    "wall_time_per_round_us",
];

pub const TRACE_COLUMNS: &[&str] = &[
    "round",
    "kind",
    "posted",
    "reserve",
    "value",
    "accepted",
    "regret",
    "knowledge_width",
];

fn to_text(writer: csv::Writer<Vec<u8>>) -> String {
    let bytes = writer.into_inner().expect("writing to memory cannot fail");
    String::from_utf8(bytes).expect("csv output is utf-8")
}

fn write_row<I, S>(w: &mut csv::Writer<Vec<u8>>, row: I)
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    w.write_record(row).expect("writing to memory cannot fail");
}

/// Cumulative regret, value and their ratio after each checkpoint round.
pub fn emit_regret_curve(records: &[RoundRecord], checkpoints: &[u64]) -> Result<String> {
    if records.is_empty() {
        return Err(Error::EmptyRun);
    }
    if checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Domain("checkpoints must be strictly ascending".into()));
    }
    if let Some(&last) = checkpoints.last() {
        if last as usize > records.len() || checkpoints[0] == 0 {
            return Err(Error::Domain(format!(
                "checkpoints must lie in 1..={}",
                records.len()
            )));
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    write_row(&mut w, ["t", "cum_regret", "cum_value", "regret_ratio"]);
    let (mut regret, mut value, mut seen) = (0.0, 0.0, 0usize);
    for &t in checkpoints {
        for r in &records[seen..t as usize] {
            regret += r.regret;
            value += r.value;
        }
        seen = t as usize;
        write_row(
            &mut w,
            [
                t.to_string(),
                regret.to_string(),
                value.to_string(),
                regret_ratio(regret, value).to_string(),
            ],
        );
    }
    Ok(to_text(w))
}

/// One CSV line per round.
pub fn trace_csv(records: &[RoundRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    write_row(&mut w, TRACE_COLUMNS);
    for r in records {
        write_row(
            &mut w,
            [
                r.round.to_string(),
                r.kind.as_str().to_string(),
                r.posted.map(|p| p.to_string()).unwrap_or_default(),
                r.reserve.to_string(),
                r.value.to_string(),
                r.accepted.to_string(),
                r.regret.to_string(),
                r.knowledge_width.to_string(),
            ],
        );
    }
    to_text(w)
}

/// A summary row of `summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub variant: Variant,
    pub repeat: u32,
    pub seed: u64,
    pub summary: RunSummary,
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    write_row(&mut w, SUMMARY_COLUMNS);
    for row in rows {
        let s = &row.summary;
        write_row(
            &mut w,
            [
                row.variant.name().to_string(),
                row.repeat.to_string(),
                row.seed.to_string(),
                s.rounds.to_string(),
                s.cumulative_regret.to_string(),
                s.cumulative_value.to_string(),
                s.regret_ratio.to_string(),
                s.exploratory_rounds.to_string(),
                s.reserve_rejections.to_string(),
                s.skip_rounds.to_string(),
                s.guard_skips.to_string(),
                s.acceptance_rate.to_string(),
                s.mean_value.to_string(),
                s.mean_reserve.to_string(),
                s.mean_posted.to_string(),
                s.std_posted.to_string(),
                s.mean_regret.to_string(),
                (s.wall_time_per_round.as_secs_f64() * 1e6).to_string(),
            ],
        );
    }
    to_text(w)
}

/// What [`run_experiment`] produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<SummaryRow>,
    pub files: Vec<PathBuf>,
}

/// Variants run by an experiment: the configured mechanism, plus the
/// reserve-posting baseline whenever the reserve does not depend on the
/// mechanism.
pub fn experiment_variants(config: &ExperimentConfig) -> Vec<Variant> {
    let mut variants = vec![Variant::of(&config.mechanism)];
    if matches!(
        config.scenario.reserve_policy,
        ReservePolicy::SumOfFeatures | ReservePolicy::ValueRatio { .. }
    ) {
        variants.push(Variant::Baseline);
    }
    variants
}

/// Runs every variant and repeat, then writes `summary.csv`, `meta.txt`
/// and, if asked, one `trace_<variant>_<rep>.csv` per run into the output
/// directory. On failure nothing written by this call is left behind.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let variants = experiment_variants(config);
    let jobs: Vec<(Variant, u32)> = variants
        .iter()
        .flat_map(|&v| (0..config.repeats).map(move |rep| (v, rep)))
        .collect();
    let results = jobs
        .into_par_iter()
        .map(|(variant, repeat)| {
            let scenario = config.scenario_for(repeat);
            let (records, summary) = variant.run(&scenario, &config.mechanism, config.mechanism.delta)?;
            info!(
                "{} repeat {repeat}: regret ratio {:.4}",
                variant.name(),
                summary.regret_ratio
            );
            let trace = config.emit_trace.then(|| trace_csv(&records));
            Ok((
                SummaryRow {
                    variant,
                    repeat,
                    seed: scenario.seed,
                    summary,
                },
                trace,
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut outputs: Vec<(PathBuf, String)> = Vec::new();
    let dir = &config.output_dir;
    let mut rows = Vec::with_capacity(results.len());
    for (row, trace) in results {
        if let Some(trace) = trace {
            outputs.push((dir.join(format!("trace_{}_{}.csv", row.variant.name(), row.repeat)), trace));
        }
        rows.push(row);
    }
    outputs.insert(0, (dir.join("summary.csv"), summary_csv(&rows)));
    outputs.push((dir.join("meta.txt"), meta_text(config, &rows)));

    let files = write_all(dir, &outputs)?;
    Ok(ExperimentReport { rows, files })
}

fn meta_text(config: &ExperimentConfig, rows: &[SummaryRow]) -> String {
    let mut seeds: Vec<(u32, u64)> = rows.iter().map(|r| (r.repeat, r.seed)).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let mut out = format!(
        "price-sim {}\nvalue_oracle_reserve = {}\nposted_mean_excludes_skips = true\nrepeat_seeds = {}\n\n",
        env!("CARGO_PKG_VERSION"),
        config.scenario.reserve_policy.uses_value_oracle(),
        seeds
            .iter()
            .map(|(rep, seed)| format!("{rep}:{seed}"))
            .collect::<Vec<_>>()
            .join(",")
    );
    out.push_str(&to_toml(config));
    out
}

fn write_all(dir: &Path, outputs: &[(PathBuf, String)]) -> Result<Vec<PathBuf>> {
    let io = |path: &Path, e: std::io::Error| Error::Io(format!("{}: {e}", path.display()));
    let created_dir = !dir.exists();
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let mut written = Vec::new();
    for (path, text) in outputs {
        if let Err(e) = fs::write(path, text) {
            for done in &written {
                let _ = fs::remove_file(done);
            }
            // the failed write may have left a truncated file
            let _ = fs::remove_file(path);
            if created_dir {
                let _ = fs::remove_dir(dir);
            }
            return Err(io(path, e));
        }
        written.push(path.clone());
    }
    Ok(written)
}
