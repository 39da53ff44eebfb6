//! One TOML file describing every stage: data generation, ensemble training
//! and the acquisition experiment.
//!
//! ```toml
//! seed = 0
//! out = "out"
//!
//! [dataset]
//! n_scenes = 300
//!
//! [train]
//! epochs = 50
//!
//! [ensemble]
//! k = 5
//!
//! [run]
//! strategies = ["random", "probemde"]
//! iterations = 5
//! points_per_iter = 5
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acquisition::LoopConfig;
use crate::depthnet::TrainConfig;
use crate::error::{Error, Result};
use crate::scenegen::DatasetConfig;
use crate::selection::{SelectionConfig, Strategy, SvgdConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub k: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self { k: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub strategies: Vec<Strategy>,
    /// Evaluate on at most this many test scenes (in id order).
    pub max_scenes: Option<usize>,
    pub iterations: usize,
    pub points_per_iter: usize,
    pub noise_std: f64,
    pub stop_below: Option<f64>,
    pub unit_cost: f64,
    pub record_trajectories: bool,
    pub svgd: SvgdConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let l = LoopConfig::default();
        Self {
            strategies: Strategy::ALL.to_vec(),
            max_scenes: None,
            iterations: l.iterations,
            points_per_iter: l.selection.points_per_iter,
            noise_std: l.noise_std,
            stop_below: l.stop_below,
            unit_cost: l.unit_cost,
            record_trajectories: l.record_trajectories,
            svgd: l.selection.svgd,
        }
    }
}

impl RunConfig {
    pub fn loop_config(&self) -> LoopConfig {
        LoopConfig {
            iterations: self.iterations,
            selection: SelectionConfig {
                points_per_iter: self.points_per_iter,
                svgd: self.svgd.clone(),
            },
            noise_std: self.noise_std,
            stop_below: self.stop_below,
            unit_cost: self.unit_cost,
            record_trajectories: self.record_trajectories,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seeds ensemble members and acquisition episodes.
    pub seed: u64,
    /// Root of `data/`, `checkpoints/`, `results/` and `reports/`.
    pub out: PathBuf,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub ensemble: EnsembleConfig,
    pub run: RunConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            dataset: DatasetConfig::default(),
            train: TrainConfig::default(),
            ensemble: EnsembleConfig::default(),
            run: RunConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parameter(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parameter(format!("cannot serialize config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.train.validate()?;
        if self.ensemble.k < 2 {
            return Err(Error::Parameter(format!("ensemble k must be at least 2, got {}", self.ensemble.k)));
        }
        if self.run.strategies.is_empty() {
            return Err(Error::Parameter("run.strategies is empty".into()));
        }
        if self.run.max_scenes == Some(0) {
            return Err(Error::Parameter("run.max_scenes must be positive".into()));
        }
        self.run.loop_config().validate()
    }

    /// Sets every stage's seed.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.dataset.seed = seed;
        self.train.seed = seed;
    }

    pub fn data_dir(&self) -> PathBuf {
        self.out.join("data")
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.out.join("checkpoints")
    }

    pub fn results_dir(&self) -> PathBuf {
        self.out.join("results")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.out.join("reports")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let c = ExperimentConfig::from_toml_str(
            "seed = 3\n[dataset]\nn_scenes = 12\n[run]\nstrategies = [\"random\", \"probemde\"]\n[run.svgd]\niterations = 10\n",
        )
        .unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.dataset.n_scenes, 12);
        assert_eq!(c.run.strategies, vec![Strategy::Random, Strategy::Probemde]);
        assert_eq!(c.run.svgd.iterations, 10);
        assert_eq!(c.run.svgd.step_size, 0.8);
        assert_eq!(c.ensemble.k, 5);
        assert_eq!(c.run.loop_config().selection.points_per_iter, 5);
    }

    #[test]
    fn bad_files_are_rejected() {
        assert!(ExperimentConfig::from_toml_str("sed = 1").is_err());
        assert!(ExperimentConfig::from_toml_str("[run]\nstrategies = [\"nope\"]").is_err());
        let mut c = ExperimentConfig::default();
        c.ensemble.k = 1;
        assert!(c.validate().is_err());
        c.ensemble.k = 2;
        c.dataset.n_scenes = 0;
        assert!(c.validate().is_err());
    }
}
