use activedepth::grid::{FieldRole, Grid, Mask, Pixel, ScalarField, SparseDepthMap};
use activedepth::selection::{select, FixedMaps, SelectionConfig, SelectionContext, Strategy};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn maps_from(rng: &mut ChaCha8Rng, n: usize) -> FixedMaps {
    let spiky = rng.random_bool(0.3);
    let var = Grid::from_fn(n, n, |_, _| {
        let v: f64 = rng.random();
        if spiky {
            v.powi(8)
        } else {
            v
        }
    });
    let grad = Grid::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    FixedMaps {
        variance: Some(ScalarField::new(FieldRole::Variance, var).unwrap()),
        gradient: Some(ScalarField::new(FieldRole::Gradient, grad).unwrap()),
    }
}

fn sparse_with(mask: &Mask) -> SparseDepthMap {
    let (h, w) = mask.dims();
    let mut s = SparseDepthMap::empty(h, w);
    for i in 0..h * w {
        let p = mask.pixel_at(i);
        if mask.get(p) {
            s.observe(p, 10.0).unwrap();
        }
    }
    s
}

fn run(strategy: Strategy, sparse: &SparseDepthMap, maps: &FixedMaps, cfg: &SelectionConfig, seed: u64) -> Vec<Pixel> {
    let mut maps = maps.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ctx = SelectionContext {
        sparse,
        source: &mut maps,
        config: cfg,
        rng: &mut rng,
        trajectory: None,
    };
    select(strategy, &mut ctx).unwrap()
}

#[test]
fn every_strategy_returns_m_distinct_unprobed_pixels() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for strategy in Strategy::ALL {
        for _ in 0..200 {
            let n = rng.random_range(4..14);
            let density = rng.random_range(0.0..0.9);
            let mask = Grid::from_fn(n, n, |_, _| rng.random_bool(density));
            let free = mask.as_slice().iter().filter(|m| !**m).count();
            if free == 0 {
                continue;
            }
            let cfg = SelectionConfig {
                points_per_iter: rng.random_range(1..=free.min(8)),
                ..SelectionConfig::default()
            };
            let maps = maps_from(&mut rng, n);
            let sparse = sparse_with(&mask);
            let seed = rng.random();
            let px = run(strategy, &sparse, &maps, &cfg, seed);
            assert_eq!(px.len(), cfg.points_per_iter);
            for (i, p) in px.iter().enumerate() {
                assert!(p.row < n && p.col < n);
                assert!(!mask.get(*p), "{strategy}: probed pixel {p:?}");
                assert!(px[..i].iter().all(|q| q != p), "{strategy}: duplicate {p:?}");
            }
            assert_eq!(run(strategy, &sparse, &maps, &cfg, seed), px);
        }
    }
}

#[test]
fn too_few_candidates_is_an_error() {
    let mask = Grid::from_fn(3, 3, |r, c| r + c > 0);
    let sparse = sparse_with(&mask);
    let mut maps = maps_from(&mut ChaCha8Rng::seed_from_u64(0), 3);
    let cfg = SelectionConfig {
        points_per_iter: 2,
        ..SelectionConfig::default()
    };
    for strategy in Strategy::ALL {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ctx = SelectionContext {
            sparse: &sparse,
            source: &mut maps,
            config: &cfg,
            rng: &mut rng,
            trajectory: None,
        };
        assert!(select(strategy, &mut ctx).is_err());
    }
}

fn bump(n: usize, center: (f64, f64), sigma: f64) -> Grid<f64> {
    Grid::from_fn(n, n, |r, c| {
        let d2 = (r as f64 - center.0).powi(2) + (c as f64 - center.1).powi(2);
        (-d2 / (2.0 * sigma * sigma)).exp()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Shifting an interior-supported target shifts the SVGD selection.
    #[test]
    fn svgd_selection_is_translation_equivariant(
        seed in 0u64..10_000,
        dr in 0usize..6,
        dc in 0usize..6,
        use_gradient in any::<bool>(),
    ) {
        let n = 40;
        let sigma = 2.5;
        let make = |r0: f64, c0: f64| {
            let g = bump(n, (r0, c0), sigma);
            if use_gradient {
                FixedMaps {
                    variance: None,
                    gradient: Some(ScalarField::new(FieldRole::Gradient, g.map(|v| -v)).unwrap()),
                }
            } else {
                FixedMaps {
                    variance: Some(ScalarField::new(FieldRole::Variance, g).unwrap()),
                    gradient: None,
                }
            }
        };
        let strategy = if use_gradient { Strategy::Probemde } else { Strategy::SteinVar };
        let sparse = SparseDepthMap::empty(n, n);
        let cfg = SelectionConfig::default();
        let a = run(strategy, &sparse, &make(15.0, 15.0), &cfg, seed);
        let b = run(strategy, &sparse, &make(15.0 + dr as f64, 15.0 + dc as f64), &cfg, seed);
        let shifted: Vec<Pixel> = a.iter().map(|p| Pixel::new(p.row + dr, p.col + dc)).collect();
        prop_assert_eq!(b, shifted);
    }
}

#[test]
fn greedy_strategies_are_seed_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let maps = maps_from(&mut rng, 8);
    let sparse = SparseDepthMap::empty(8, 8);
    let cfg = SelectionConfig::default();
    for s in [Strategy::GreedyVar, Strategy::GreedyGrad] {
        assert_eq!(run(s, &sparse, &maps, &cfg, 1), run(s, &sparse, &maps, &cfg, 2));
    }
}
