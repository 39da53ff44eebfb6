//! Probe selection: target distributions, SVGD and the five strategies.

mod strategy;
mod svgd;
mod target;

pub use strategy::{
    select, select_random, select_top, EnsembleSource, FixedMaps, SelectionConfig, SelectionContext, Strategy,
    UncertaintySource,
};
pub use svgd::{median_bandwidth, svgd_run, svgd_select, svgd_step, ParticleSet, SvgdConfig, SvgdOutcome};
pub use target::{
    log_density_gradient, target_from_gradient, target_from_variance, ProbabilityMap, SmoothedLogDensity, FLOOR,
};
