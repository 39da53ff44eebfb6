use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, MetricsRow};
use super::oracle::ProbeOracle;
use crate::depthnet::depth_from_log;
use crate::ensemble::{Analysis, DepthEnsemble};
use crate::error::{Error, Result};
use crate::grid::{Pixel, SparseDepthMap};
use crate::scenegen::StoredScene;
use crate::seed::{derive_seed, stream};
use crate::selection::{select, EnsembleSource, SelectionConfig, SelectionContext, Strategy};

/// Parameters of the acquisition loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConfig {
    pub iterations: usize,
    pub selection: SelectionConfig,
    /// Std of the probe noise, millimeters.
    pub noise_std: f64,
    /// Stop early once U_total falls to or below this value.
    pub stop_below: Option<f64>,
    /// Cost charged per probed point.
    pub unit_cost: f64,
    /// Keep SVGD particle trajectories in the episode records.
    pub record_trajectories: bool,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            iterations: 5,
            selection: SelectionConfig::default(),
            noise_std: 0.0,
            stop_below: None,
            unit_cost: 1.0,
            record_trajectories: false,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.selection.points_per_iter == 0 {
            return Err(Error::Parameter("points per iteration must be at least 1".into()));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::Parameter(format!("noise std must be nonnegative, got {}", self.noise_std)));
        }
        if !(self.unit_cost.is_finite() && self.unit_cost >= 0.0) {
            return Err(Error::Parameter("unit cost must be nonnegative".into()));
        }
        if let Some(e) = self.stop_below {
            if !(e.is_finite() && e >= 0.0) {
                return Err(Error::Parameter("stop threshold must be nonnegative".into()));
            }
        }
        self.selection.svgd.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub row: usize,
    pub col: usize,
    pub depth: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationEntry {
    pub iteration: usize,
    /// Points acquired in this iteration (empty for iteration 0).
    pub probes: Vec<Probe>,
    pub observed_count: usize,
    pub cost: f64,
    pub u_total: f64,
    pub metrics: MetricsRow,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<Vec<Vec<[f64; 2]>>>,
}

/// One scene under one strategy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub scene_id: usize,
    pub strategy: Strategy,
    pub seed: u64,
    pub iterations: Vec<IterationEntry>,
    /// Why the episode ended before its budget, if it did.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncated: Option<String>,
    #[serde(default)]
    pub stopped_early: bool,
    pub config: LoopConfig,
}

impl ExperimentRecord {
    pub fn final_entry(&self) -> &IterationEntry {
        self.iterations.last().expect("episodes always record iteration 0")
    }

    pub fn completed(&self) -> bool {
        self.truncated.is_none()
    }

    /// Sparse map after `iteration` (cumulative probes).
    pub fn sparse_at(&self, iteration: usize, height: usize, width: usize) -> Result<SparseDepthMap> {
        let mut s = SparseDepthMap::empty(height, width);
        for e in self.iterations.iter().take(iteration + 1) {
            for p in &e.probes {
                s.observe(Pixel::new(p.row, p.col), p.depth)?;
            }
        }
        Ok(s)
    }
}

/// Seed of the episode rng for `scene_id`; shared by all strategies so they
/// face the same randomness.
pub fn episode_seed(seed: u64, scene_id: usize) -> u64 {
    derive_seed(seed, stream::EPISODE, scene_id as u64)
}

fn evaluate(
    ensemble: &DepthEnsemble,
    scene: &StoredScene,
    sparse: &SparseDepthMap,
    gradient: bool,
) -> Result<(Analysis, MetricsRow)> {
    let analysis = ensemble.analyze(&scene.rgb, sparse, gradient)?;
    let pred = depth_from_log(&analysis.mean)?;
    let metrics = compute_metrics(&pred, &scene.depth)?;
    Ok((analysis, metrics))
}

/// Iteration 0 predicts without sparse input; each later iteration selects
/// `M` pixels, probes them, adds them to the sparse map and re-predicts with
/// the exponentiated ensemble-mean log-depth.
pub fn run_episode(
    scene: &StoredScene,
    ensemble: &DepthEnsemble,
    strategy: Strategy,
    config: &LoopConfig,
    seed: u64,
) -> Result<ExperimentRecord> {
    config.validate()?;
    if scene.rgb.dims() != (ensemble.resolution(), ensemble.resolution()) {
        return Err(Error::shape((ensemble.resolution(), ensemble.resolution()), scene.rgb.dims()));
    }
    let oracle = ProbeOracle::new(scene.depth.clone(), config.noise_std)?;
    let (h, w) = scene.depth.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(episode_seed(seed, scene.id));
    let mut sparse = SparseDepthMap::empty(h, w);
    let wants_grad = |i: usize| strategy.needs_gradient() && i < config.iterations;
    let (mut analysis, metrics) = evaluate(ensemble, scene, &sparse, wants_grad(0))?;
    let mut record = ExperimentRecord {
        scene_id: scene.id,
        strategy,
        seed,
        iterations: vec![IterationEntry {
            iteration: 0,
            probes: Vec::new(),
            observed_count: 0,
            cost: 0.0,
            u_total: analysis.total,
            metrics,
            trajectory: None,
        }],
        truncated: None,
        stopped_early: false,
        config: config.clone(),
    };

    for it in 1..=config.iterations {
        if config.stop_below.is_some_and(|e| analysis.total <= e) {
            record.stopped_early = true;
            break;
        }
        let mut trajectory = Vec::new();
        let picked = {
            let mut source = EnsembleSource::new(ensemble, &scene.rgb, &sparse).with_analysis(analysis);
            let mut ctx = SelectionContext {
                sparse: &sparse,
                source: &mut source,
                config: &config.selection,
                rng: &mut rng,
                trajectory: config.record_trajectories.then_some(&mut trajectory),
            };
            select(strategy, &mut ctx)
        };
        let picked = match picked {
            Ok(p) => p,
            Err(e @ Error::NoCandidates { .. }) => {
                record.truncated = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        };
        let mut probes = Vec::with_capacity(picked.len());
        for p in picked {
            let depth = oracle.probe(p, &mut rng)?;
            sparse.observe(p, depth)?;
            probes.push(Probe {
                row: p.row,
                col: p.col,
                depth,
            });
        }
        let (next, metrics) = evaluate(ensemble, scene, &sparse, wants_grad(it))?;
        analysis = next;
        record.iterations.push(IterationEntry {
            iteration: it,
            probes,
            observed_count: sparse.observed_count(),
            cost: sparse.observed_count() as f64 * config.unit_cost,
            u_total: analysis.total,
            metrics,
            trajectory: config.record_trajectories.then_some(trajectory).filter(|t| !t.is_empty()),
        });
    }
    Ok(record)
}
