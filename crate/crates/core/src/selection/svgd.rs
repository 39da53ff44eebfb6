//! Stein variational gradient descent over a probe target.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::target::{ProbabilityMap, SmoothedLogDensity};
use crate::error::{Error, Result};
use crate::grid::{Mask, Pixel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvgdConfig {
    pub iterations: usize,
    /// Step size in pixels.
    pub step_size: f64,
    /// Std of the Gaussian smoothing applied to the target, pixels.
    pub smoothing_sigma: f64,
    pub bandwidth_floor: f64,
}

impl Default for SvgdConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            step_size: 0.8,
            smoothing_sigma: 1.5,
            bandwidth_floor: 1e-6,
        }
    }
}

impl SvgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::Parameter(format!("svgd step size must be positive, got {}", self.step_size)));
        }
        if !(self.smoothing_sigma.is_finite() && self.smoothing_sigma >= 0.0) {
            return Err(Error::Parameter("svgd smoothing sigma must be nonnegative".into()));
        }
        if !(self.bandwidth_floor.is_finite() && self.bandwidth_floor > 0.0) {
            return Err(Error::Parameter("svgd bandwidth floor must be positive".into()));
        }
        Ok(())
    }
}

/// Continuous particle positions `[row, col]` inside the image rectangle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleSet {
    pub positions: Vec<[f64; 2]>,
    height: usize,
    width: usize,
}

impl ParticleSet {
    pub fn new(positions: Vec<[f64; 2]>, height: usize, width: usize) -> Self {
        let mut set = Self {
            positions,
            height,
            width,
        };
        set.clamp();
        set
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    fn clamp(&mut self) {
        let (hi_r, hi_c) = ((self.height - 1) as f64, (self.width - 1) as f64);
        for p in &mut self.positions {
            p[0] = p[0].clamp(0.0, hi_r);
            p[1] = p[1].clamp(0.0, hi_c);
        }
    }
}

/// Median-heuristic bandwidth `h = med² / ln(N + 1)`, floored.
pub fn median_bandwidth(positions: &[[f64; 2]], floor: f64) -> f64 {
    let mut d: Vec<f64> = Vec::with_capacity(positions.len() * positions.len().saturating_sub(1) / 2);
    for (i, a) in positions.iter().enumerate() {
        for b in &positions[i + 1..] {
            d.push((a[0] - b[0]).hypot(a[1] - b[1]));
        }
    }
    if d.is_empty() {
        return floor.max(1.0);
    }
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let med = if n % 2 == 1 { d[n / 2] } else { 0.5 * (d[n / 2 - 1] + d[n / 2]) };
    (med * med / ((positions.len() + 1) as f64).ln()).max(floor)
}

/// One simultaneous update `z_i ← z_i + η φ(z_i)` with
/// `φ(z_i) = (1/N) Σ_j [k(z_j, z_i) ∇ln p(z_j) + ∇_{z_j} k(z_j, z_i)]`,
/// RBF kernel `k(a, b) = exp(−‖a − b‖² / h)`, then clamping.
pub fn svgd_step(particles: &mut ParticleSet, density: &SmoothedLogDensity, cfg: &SvgdConfig) {
    let z = &particles.positions;
    let n = z.len();
    if n == 0 {
        return;
    }
    let h = median_bandwidth(z, cfg.bandwidth_floor);
    let grads: Vec<[f64; 2]> = z.iter().map(|p| density.gradient(*p)).collect();
    let mut next = z.clone();
    for (i, zi) in z.iter().enumerate() {
        let mut phi = [0.0; 2];
        for (zj, gj) in z.iter().zip(&grads) {
            let diff = [zj[0] - zi[0], zj[1] - zi[1]];
            let k = (-(diff[0] * diff[0] + diff[1] * diff[1]) / h).exp();
            for a in 0..2 {
                phi[a] += k * gj[a] - 2.0 * diff[a] / h * k;
            }
        }
        for a in 0..2 {
            next[i][a] += cfg.step_size * phi[a] / n as f64;
        }
    }
    particles.positions = next;
    particles.clamp();
}

/// Selected pixels plus, on request, every intermediate particle set.
#[derive(Clone, Debug, PartialEq)]
pub struct SvgdOutcome {
    pub pixels: Vec<Pixel>,
    pub trajectory: Option<Vec<Vec<[f64; 2]>>>,
}

/// `m` distinct unprobed pixels chosen by SVGD over `p`.
pub fn svgd_select(p: &ProbabilityMap, probed: &Mask, m: usize, cfg: &SvgdConfig, rng: &mut dyn RngCore) -> Result<Vec<Pixel>> {
    Ok(svgd_run(p, probed, m, cfg, rng, false)?.pixels)
}

pub fn svgd_run(
    p: &ProbabilityMap,
    probed: &Mask,
    m: usize,
    cfg: &SvgdConfig,
    rng: &mut dyn RngCore,
    record: bool,
) -> Result<SvgdOutcome> {
    cfg.validate()?;
    if m == 0 {
        return Err(Error::Parameter("svgd needs at least one particle".into()));
    }
    if p.dims() != probed.dims() {
        return Err(Error::shape(p.dims(), probed.dims()));
    }
    let available = probed.as_slice().iter().filter(|x| !**x).count();
    if available < m {
        return Err(Error::NoCandidates { needed: m, available });
    }
    let (h, w) = p.dims();
    let pick = WeightedIndex::new(p.values()).map_err(|e| Error::Parameter(format!("degenerate target: {e}")))?;
    let init = (0..m)
        .map(|_| {
            let i = pick.sample(rng);
            let jr = rng.random::<f64>() - 0.5;
            let jc = rng.random::<f64>() - 0.5;
            [(i / w) as f64 + jr, (i % w) as f64 + jc]
        })
        .collect();
    let mut particles = ParticleSet::new(init, h, w);
    let density = SmoothedLogDensity::new(p, cfg.smoothing_sigma);
    let mut trajectory = record.then(|| vec![particles.positions.clone()]);
    for _ in 0..cfg.iterations {
        svgd_step(&mut particles, &density, cfg);
        if let Some(t) = trajectory.as_mut() {
            t.push(particles.positions.clone());
        }
    }
    Ok(SvgdOutcome {
        pixels: discretize(&particles, p, probed),
        trajectory,
    })
}

/// Rounds each particle to a pixel; a particle whose pixel is probed or
/// already taken moves to the nearest free pixel, preferring higher `p`,
/// then raster order.
fn discretize(particles: &ParticleSet, p: &ProbabilityMap, probed: &Mask) -> Vec<Pixel> {
    let (h, w) = p.dims();
    let mut taken = probed.clone();
    let mut out = Vec::with_capacity(particles.len());
    for pos in &particles.positions {
        let r = (pos[0].round() as usize).min(h - 1);
        let c = (pos[1].round() as usize).min(w - 1);
        let mut chosen = Pixel::new(r, c);
        if taken.get(chosen) {
            let mut best: Option<(usize, f64, usize)> = None;
            for (i, t) in taken.as_slice().iter().enumerate() {
                if *t {
                    continue;
                }
                let (pr, pc) = (i / w, i % w);
                let d2 = pr.abs_diff(r).pow(2) + pc.abs_diff(c).pow(2);
                let better = match best {
                    None => true,
                    Some((bd, bp, _)) => d2 < bd || (d2 == bd && p.values()[i] > bp),
                };
                if better {
                    best = Some((d2, p.values()[i], i));
                }
            }
            let (_, _, i) = best.expect("candidate count checked up front");
            chosen = Pixel::new(i / w, i % w);
        }
        taken.set(chosen, true);
        out.push(chosen);
    }
    out
}
