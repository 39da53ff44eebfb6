//! The closed acquisition loop: select, probe, update, re-predict. Also the
//! probing oracle, the depth metrics and experiment tables.

mod episode;
mod experiment;
mod metrics;
mod oracle;

pub use episode::{episode_seed, run_episode, ExperimentRecord, IterationEntry, LoopConfig, Probe};
pub use experiment::{
    read_episodes, read_results, run_experiment, table_csv, table_markdown, write_results, ExperimentResults,
    Failure, StrategyRow, BASELINE_LABEL, CSV_FILE, EPISODES_FILE, MARKDOWN_FILE, RESULTS_FILE,
    RESULTS_FORMAT_VERSION,
};
pub use metrics::{compute_metrics, MetricsRow};
pub use oracle::{ProbeOracle, MIN_PROBE_DEPTH};
