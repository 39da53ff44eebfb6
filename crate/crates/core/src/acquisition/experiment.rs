use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::episode::{run_episode, ExperimentRecord, LoopConfig};
use super::metrics::{compute_metrics, MetricsRow};
use crate::depthnet::depth_from_log;
use crate::ensemble::DepthEnsemble;
use crate::error::{Error, Result};
use crate::grid::SparseDepthMap;
use crate::scenegen::StoredScene;
use crate::selection::Strategy;

pub const RESULTS_FORMAT_VERSION: u32 = 1;
pub const BASELINE_LABEL: &str = "No Sparse Ground-Truth";

pub const EPISODES_FILE: &str = "episodes.jsonl";
pub const RESULTS_FILE: &str = "results.json";
pub const CSV_FILE: &str = "table.csv";
pub const MARKDOWN_FILE: &str = "table.md";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub strategy: Strategy,
    pub label: String,
    /// Mean final-iteration metrics over completed episodes.
    pub metrics: Option<MetricsRow>,
    pub completed: usize,
    /// Median U_total across scenes, per iteration.
    pub median_u_total: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub scene_id: usize,
    pub strategy: Strategy,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResults {
    pub format_version: u32,
    pub seed: u64,
    pub scene_ids: Vec<usize>,
    pub baseline: MetricsRow,
    pub rows: Vec<StrategyRow>,
    pub failures: Vec<Failure>,
    /// Snapshot of the configuration that produced these results.
    pub config: serde_json::Value,
}

impl ExperimentResults {
    pub fn row(&self, strategy: Strategy) -> Option<&StrategyRow> {
        self.rows.iter().find(|r| r.strategy == strategy)
    }

    /// `(label, metrics)` in table order, baseline first.
    pub fn table(&self) -> Vec<(String, MetricsRow)> {
        let mut out = vec![(BASELINE_LABEL.to_string(), self.baseline)];
        out.extend(self.rows.iter().filter_map(|r| r.metrics.map(|m| (r.label.clone(), m))));
        out
    }

    pub fn all_completed(&self) -> bool {
        self.failures.is_empty() && self.rows.iter().all(|r| r.completed == self.scene_ids.len())
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Runs every strategy on every scene and aggregates final-iteration metrics
/// per strategy, plus the no-sparse baseline. Per-episode errors are recorded
/// as failures rather than aborting the run.
pub fn run_experiment(
    scenes: &[StoredScene],
    ensemble: &DepthEnsemble,
    strategies: &[Strategy],
    config: &LoopConfig,
    seed: u64,
    snapshot: serde_json::Value,
    mut progress: impl FnMut(&ExperimentRecord),
) -> Result<(ExperimentResults, Vec<ExperimentRecord>)> {
    if scenes.is_empty() {
        return Err(Error::Parameter("experiment needs at least one scene".into()));
    }
    config.validate()?;
    let mut baseline_rows = Vec::with_capacity(scenes.len());
    for s in scenes {
        let (h, w) = s.depth.dims();
        let a = ensemble.analyze(&s.rgb, &SparseDepthMap::empty(h, w), false)?;
        baseline_rows.push(compute_metrics(&depth_from_log(&a.mean)?, &s.depth)?);
    }

    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut rows = Vec::new();
    for &strategy in strategies {
        let mut finals = Vec::new();
        let mut per_iter: Vec<Vec<f64>> = Vec::new();
        for scene in scenes {
            match run_episode(scene, ensemble, strategy, config, seed) {
                Ok(rec) => {
                    if rec.completed() {
                        finals.push(rec.final_entry().metrics);
                        for e in &rec.iterations {
                            if per_iter.len() <= e.iteration {
                                per_iter.resize(e.iteration + 1, Vec::new());
                            }
                            per_iter[e.iteration].push(e.u_total);
                        }
                    } else {
                        failures.push(Failure {
                            scene_id: scene.id,
                            strategy,
                            error: rec.truncated.clone().unwrap_or_default(),
                        });
                    }
                    progress(&rec);
                    records.push(rec);
                }
                Err(e) => failures.push(Failure {
                    scene_id: scene.id,
                    strategy,
                    error: e.to_string(),
                }),
            }
        }
        rows.push(StrategyRow {
            strategy,
            label: strategy.label().to_string(),
            metrics: MetricsRow::mean(&finals),
            completed: finals.len(),
            median_u_total: per_iter.iter_mut().map(|v| median(v)).collect(),
        });
    }

    let results = ExperimentResults {
        format_version: RESULTS_FORMAT_VERSION,
        seed,
        scene_ids: scenes.iter().map(|s| s.id).collect(),
        baseline: MetricsRow::mean(&baseline_rows).expect("scenes is nonempty"),
        rows,
        failures,
        config: snapshot,
    };
    Ok((results, records))
}

/// CSV with a `Method` column followed by the eight metric columns.
pub fn table_csv(rows: &[(String, MetricsRow)]) -> String {
    let mut out = String::from("Method");
    for h in MetricsRow::HEADERS {
        out.push(',');
        out.push_str(h);
    }
    out.push('\n');
    for (label, m) in rows {
        out.push_str(label);
        for v in m.values() {
            let _ = write!(out, ",{v:.6}");
        }
        out.push('\n');
    }
    out
}

/// Markdown table, three decimals, best value per column in bold.
pub fn table_markdown(rows: &[(String, MetricsRow)]) -> String {
    let fmt = |v: f64| format!("{v:.3}");
    let mut best = [f64::NAN; 8];
    for (col, higher) in MetricsRow::HIGHER_IS_BETTER.iter().enumerate() {
        let vals = rows.iter().map(|(_, m)| m.values()[col]);
        best[col] = if *higher {
            vals.fold(f64::NEG_INFINITY, f64::max)
        } else {
            vals.fold(f64::INFINITY, f64::min)
        };
    }
    let mut out = String::from("| Method |");
    for h in MetricsRow::HEADERS {
        let _ = write!(out, " {h} |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|".repeat(8));
    out.push('\n');
    for (label, m) in rows {
        let _ = write!(out, "| {label} |");
        for (col, v) in m.values().iter().enumerate() {
            // Compare at display precision so visually tied cells are all marked.
            if fmt(*v) == fmt(best[col]) {
                let _ = write!(out, " **{}** |", fmt(*v));
            } else {
                let _ = write!(out, " {} |", fmt(*v));
            }
        }
        out.push('\n');
    }
    out
}

/// Writes `episodes.jsonl`, `results.json`, `table.csv` and `table.md`.
pub fn write_results(dir: &Path, results: &ExperimentResults, records: &[ExperimentRecord]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut jsonl = String::new();
    for r in records {
        jsonl.push_str(&serde_json::to_string(r)?);
        jsonl.push('\n');
    }
    fs::write(dir.join(EPISODES_FILE), jsonl)?;
    fs::write(dir.join(RESULTS_FILE), serde_json::to_string_pretty(results)? + "\n")?;
    let table = results.table();
    fs::write(dir.join(CSV_FILE), table_csv(&table))?;
    fs::write(dir.join(MARKDOWN_FILE), table_markdown(&table))?;
    Ok(())
}

pub fn read_results(dir: &Path) -> Result<ExperimentResults> {
    let path = dir.join(RESULTS_FILE);
    if !path.exists() {
        return Err(Error::Format(format!("no {RESULTS_FILE} in {}", dir.display())));
    }
    let r: ExperimentResults = serde_json::from_str(&fs::read_to_string(path)?)?;
    if r.format_version != RESULTS_FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported results format {}", r.format_version)));
    }
    Ok(r)
}

pub fn read_episodes(dir: &Path) -> Result<Vec<ExperimentRecord>> {
    let text = fs::read_to_string(dir.join(EPISODES_FILE))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
