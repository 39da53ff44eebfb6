use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::svgd::{svgd_run, SvgdConfig};
use super::target::{target_from_gradient, target_from_variance};
use crate::ensemble::{Analysis, DepthEnsemble};
use crate::error::{Error, Result};
use crate::grid::{Mask, Pixel, RgbImage, ScalarField, SparseDepthMap};

/// The five probe-selection strategies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Random,
    GreedyVar,
    SteinVar,
    GreedyGrad,
    Probemde,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Random,
        Strategy::GreedyVar,
        Strategy::SteinVar,
        Strategy::GreedyGrad,
        Strategy::Probemde,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::GreedyVar => "greedy-var",
            Strategy::SteinVar => "stein-var",
            Strategy::GreedyGrad => "greedy-grad",
            Strategy::Probemde => "probemde",
        }
    }

    /// Row label in result tables.
    pub fn label(self) -> &'static str {
        match self {
            Strategy::Random => "Random Selection",
            Strategy::GreedyVar => "Greedy Variance",
            Strategy::SteinVar => "Stein Variance",
            Strategy::GreedyGrad => "Greedy Gradient",
            Strategy::Probemde => "ProbeMDE",
        }
    }

    pub fn needs_gradient(self) -> bool {
        matches!(self, Strategy::GreedyGrad | Strategy::Probemde)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown strategy `{s}` (expected one of random, greedy-var, stein-var, greedy-grad, probemde)")))
    }
}

/// Supplies the variance and uncertainty-gradient maps a strategy asks for.
pub trait UncertaintySource {
    fn variance(&mut self) -> Result<ScalarField>;
    fn gradient(&mut self) -> Result<ScalarField>;
}

/// Precomputed maps; a missing map is an error when requested.
#[derive(Clone, Debug, Default)]
pub struct FixedMaps {
    pub variance: Option<ScalarField>,
    pub gradient: Option<ScalarField>,
}

impl UncertaintySource for FixedMaps {
    fn variance(&mut self) -> Result<ScalarField> {
        self.variance.clone().ok_or_else(|| Error::Parameter("no variance map supplied".into()))
    }

    fn gradient(&mut self) -> Result<ScalarField> {
        self.gradient.clone().ok_or_else(|| Error::Parameter("no gradient map supplied".into()))
    }
}

/// Evaluates the ensemble on demand, at most once per map.
pub struct EnsembleSource<'a> {
    ensemble: &'a DepthEnsemble,
    rgb: &'a RgbImage,
    sparse: &'a SparseDepthMap,
    analysis: Option<Analysis>,
}

impl<'a> EnsembleSource<'a> {
    pub fn new(ensemble: &'a DepthEnsemble, rgb: &'a RgbImage, sparse: &'a SparseDepthMap) -> Self {
        Self {
            ensemble,
            rgb,
            sparse,
            analysis: None,
        }
    }

    /// Reuses an analysis already computed for this exact input.
    pub fn with_analysis(mut self, analysis: Analysis) -> Self {
        self.analysis = Some(analysis);
        self
    }

    fn ensure(&mut self, gradient: bool) -> Result<&Analysis> {
        let stale = match &self.analysis {
            None => true,
            Some(a) => gradient && a.gradient.is_none(),
        };
        if stale {
            self.analysis = Some(self.ensemble.analyze(self.rgb, self.sparse, gradient)?);
        }
        Ok(self.analysis.as_ref().expect("just computed"))
    }
}

impl UncertaintySource for EnsembleSource<'_> {
    fn variance(&mut self) -> Result<ScalarField> {
        Ok(self.ensure(false)?.variance.clone())
    }

    fn gradient(&mut self) -> Result<ScalarField> {
        Ok(self.ensure(true)?.gradient.clone().expect("gradient computed"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    /// Points selected per acquisition iteration.
    pub points_per_iter: usize,
    pub svgd: SvgdConfig,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            points_per_iter: 5,
            svgd: SvgdConfig::default(),
        }
    }
}

/// Everything a strategy sees for one selection round.
pub struct SelectionContext<'a> {
    pub sparse: &'a SparseDepthMap,
    pub source: &'a mut dyn UncertaintySource,
    pub config: &'a SelectionConfig,
    pub rng: &'a mut dyn RngCore,
    /// Receives the SVGD particle trajectory when set.
    pub trajectory: Option<&'a mut Vec<Vec<[f64; 2]>>>,
}

impl SelectionContext<'_> {
    fn probed(&self) -> Mask {
        self.sparse.mask()
    }

    fn check_candidates(&self, m: usize) -> Result<()> {
        let available = self.sparse.values().len() - self.sparse.observed_count();
        if m == 0 {
            return Err(Error::Parameter("points per iteration must be at least 1".into()));
        }
        if available < m {
            return Err(Error::NoCandidates { needed: m, available });
        }
        Ok(())
    }
}

/// Runs `strategy` and returns `M` distinct unprobed pixels.
pub fn select(strategy: Strategy, ctx: &mut SelectionContext<'_>) -> Result<Vec<Pixel>> {
    let m = ctx.config.points_per_iter;
    ctx.check_candidates(m)?;
    let probed = ctx.probed();
    match strategy {
        Strategy::Random => select_random(&probed, m, ctx.rng),
        Strategy::GreedyVar => {
            let var = ctx.source.variance()?;
            select_top(&var, &probed, m, |v| v)
        }
        Strategy::GreedyGrad => {
            let g = ctx.source.gradient()?;
            select_top(&g, &probed, m, |v| -v)
        }
        Strategy::SteinVar | Strategy::Probemde => {
            let target = if strategy == Strategy::SteinVar {
                target_from_variance(&ctx.source.variance()?, &probed)?
            } else {
                target_from_gradient(&ctx.source.gradient()?, &probed)?
            };
            let record = ctx.trajectory.is_some();
            let out = svgd_run(&target, &probed, m, &ctx.config.svgd, ctx.rng, record)?;
            if let (Some(dst), Some(t)) = (ctx.trajectory.as_deref_mut(), out.trajectory) {
                *dst = t;
            }
            Ok(out.pixels)
        }
    }
}

/// `m` distinct unprobed pixels drawn uniformly.
pub fn select_random(probed: &Mask, m: usize, rng: &mut dyn RngCore) -> Result<Vec<Pixel>> {
    let free: Vec<usize> = (0..probed.len()).filter(|i| !probed.as_slice()[*i]).collect();
    if free.len() < m {
        return Err(Error::NoCandidates { needed: m, available: free.len() });
    }
    Ok(rand::seq::index::sample(rng, free.len(), m)
        .into_iter()
        .map(|k| probed.pixel_at(free[k]))
        .collect())
}

/// The `m` unprobed pixels with the largest `score(value)`, ties by raster order.
pub fn select_top(field: &ScalarField, probed: &Mask, m: usize, score: impl Fn(f64) -> f64) -> Result<Vec<Pixel>> {
    if field.dims() != probed.dims() {
        return Err(Error::shape(field.dims(), probed.dims()));
    }
    let mut free: Vec<(usize, f64)> = field
        .values()
        .iter()
        .enumerate()
        .filter(|(i, _)| !probed.as_slice()[*i])
        .map(|(i, v)| (i, score(*v)))
        .collect();
    if free.len() < m {
        return Err(Error::NoCandidates { needed: m, available: free.len() });
    }
    free.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(free[..m].iter().map(|(i, _)| probed.pixel_at(*i)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{FieldRole, Grid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn field(role: FieldRole, values: Vec<f64>, n: usize) -> ScalarField {
        ScalarField::new(role, Grid::from_vec(n, n, values).unwrap()).unwrap()
    }

    #[test]
    fn names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{}\"", s.name()));
        }
        assert!("greedy".parse::<Strategy>().is_err());
    }

    #[test]
    fn random_exhaustion_returns_everything() {
        let mut probed = Mask::filled(3, 3, false);
        probed.set(Pixel::new(0, 0), true);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut px = select_random(&probed, 8, &mut rng).unwrap();
        px.sort_by_key(|p| (p.row, p.col));
        let want: Vec<Pixel> = (1..9).map(|i| Pixel::new(i / 3, i % 3)).collect();
        assert_eq!(px, want);
    }

    #[test]
    fn random_single_draws_are_uniform() {
        let probed = Mask::filled(4, 4, false);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let trials = 10_000;
        let mut counts = [0usize; 16];
        for _ in 0..trials {
            let p = select_random(&probed, 1, &mut rng).unwrap()[0];
            counts[p.row * 4 + p.col] += 1;
        }
        let q = 1.0 / 16.0;
        let se = (trials as f64 * q * (1.0 - q)).sqrt();
        for c in counts {
            assert!((c as f64 - trials as f64 * q).abs() < 3.0 * se, "{counts:?}");
        }
    }

    #[test]
    fn greedy_variance_examples() {
        let mut v = vec![0.1; 16];
        v[3] = 5.0;
        v[9] = 4.0;
        let var = field(FieldRole::Variance, v, 4);
        let probed = Mask::filled(4, 4, false);
        assert_eq!(select_top(&var, &probed, 2, |x| x).unwrap(), vec![Pixel::new(0, 3), Pixel::new(2, 1)]);
        let flat = field(FieldRole::Variance, vec![1.0; 16], 4);
        let mut probed = Mask::filled(4, 4, false);
        probed.set(Pixel::new(0, 1), true);
        assert_eq!(
            select_top(&flat, &probed, 3, |x| x).unwrap(),
            vec![Pixel::new(0, 0), Pixel::new(0, 2), Pixel::new(0, 3)]
        );
    }

    #[test]
    fn greedy_gradient_picks_most_negative() {
        let mut g = vec![0.0; 16];
        g[5] = -3.0;
        g[6] = 7.0;
        g[12] = -1.0;
        let grad = field(FieldRole::Gradient, g, 4);
        let probed = Mask::filled(4, 4, false);
        assert_eq!(select_top(&grad, &probed, 2, |x| -x).unwrap(), vec![Pixel::new(1, 1), Pixel::new(3, 0)]);
        let pos = field(FieldRole::Gradient, (0..16).map(|i| i as f64).collect(), 4);
        // all nonnegative: the smallest values come first, which here is raster order
        assert_eq!(
            select_top(&pos, &probed, 2, |x| -x).unwrap(),
            vec![Pixel::new(0, 0), Pixel::new(0, 1)]
        );
        let zero = field(FieldRole::Gradient, vec![0.0; 16], 4);
        assert_eq!(
            select_top(&zero, &probed, 3, |x| -x).unwrap(),
            vec![Pixel::new(0, 0), Pixel::new(0, 1), Pixel::new(0, 2)]
        );
    }

    #[test]
    fn greedy_matches_exhaustive_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let vals: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            let probed = Grid::from_fn(4, 4, |_, _| rng.random_bool(0.25));
            let free = probed.as_slice().iter().filter(|p| !**p).count();
            let m = rng.random_range(1..=free.max(1));
            if free == 0 {
                continue;
            }
            let g = field(FieldRole::Gradient, vals.clone(), 4);
            let got = select_top(&g, &probed, m, |x| -x).unwrap();
            // oracle: repeatedly take the smallest unprobed, first index on ties
            let mut used = probed.as_slice().to_vec();
            let mut want = Vec::new();
            for _ in 0..m {
                let mut best: Option<usize> = None;
                for i in 0..16 {
                    if !used[i] && best.map_or(true, |b| vals[i] < vals[b]) {
                        best = Some(i);
                    }
                }
                let b = best.unwrap();
                used[b] = true;
                want.push(Pixel::new(b / 4, b % 4));
            }
            assert_eq!(got, want);
        }
    }

    #[test]
    fn probemde_on_zero_gradient_covers_uniformly() {
        let n = 32;
        let sparse = SparseDepthMap::empty(n, n);
        let mut maps = FixedMaps {
            variance: None,
            gradient: Some(field(FieldRole::Gradient, vec![0.0; n * n], n)),
        };
        let cfg = SelectionConfig::default();
        // 8x8 blocks of 4x4 pixels
        let mut counts = [0usize; 64];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rounds = 400;
        for _ in 0..rounds {
            let mut ctx = SelectionContext {
                sparse: &sparse,
                source: &mut maps,
                config: &cfg,
                rng: &mut rng,
                trajectory: None,
            };
            let px = select(Strategy::Probemde, &mut ctx).unwrap();
            for (i, a) in px.iter().enumerate() {
                assert!(px[..i].iter().all(|b| b != a));
                counts[(a.row / 4) * 8 + a.col / 4] += 1;
            }
        }
        let share = (rounds * 5) as f64 / 64.0;
        assert!(counts.iter().all(|c| (*c as f64) > 0.4 * share && (*c as f64) < 2.5 * share), "{counts:?}");
    }
}
