use activedepth::acquisition::compute_metrics;
use activedepth::depthnet::{Architecture, DepthModel};
use activedepth::ensemble::DepthEnsemble;
use activedepth::scenegen::{generate_scene, sample_sparse_random, Scene, SceneParams};
use activedepth::selection::{svgd_select, target_from_variance, SvgdConfig};
use activedepth::{DepthMap, Grid};
use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

const RES: usize = 64;

fn scene() -> Scene {
    generate_scene(3, &SceneParams::default()).unwrap()
}

fn ensemble(k: usize) -> DepthEnsemble {
    let arch = Architecture::for_resolution(RES, 5.0, 100.0);
    DepthEnsemble::new((0..k).map(|i| DepthModel::new(arch.clone(), i as u64).unwrap()).collect()).unwrap()
}

fn forward(c: &mut Criterion) {
    let s = scene();
    let model = DepthModel::new(Architecture::for_resolution(RES, 5.0, 100.0), 0).unwrap();
    let sparse = sample_sparse_random(&s.depth, 25, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    c.bench_function("forward_64", |b| b.iter(|| model.forward(black_box(&s.rgb), black_box(&sparse)).unwrap()));
}

fn uncertainty_gradient(c: &mut Criterion) {
    let s = scene();
    let ens = ensemble(5);
    let sparse = sample_sparse_random(&s.depth, 25, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    c.bench_function("uncertainty_gradient_k5_64", |b| {
        b.iter(|| ens.uncertainty_gradient(black_box(&s.rgb), black_box(&sparse)).unwrap())
    });
}

fn svgd(c: &mut Criterion) {
    let var = Grid::from_fn(RES, RES, |r, col| {
        let d = (r as f64 - 20.0).powi(2) + (col as f64 - 40.0).powi(2);
        (-d / 50.0).exp() + 0.5 * (-(r as f64 - 50.0).powi(2) / 30.0).exp()
    });
    let field = activedepth::ScalarField::new(activedepth::FieldRole::Variance, var).unwrap();
    let probed = Grid::filled(RES, RES, false);
    let p = target_from_variance(&field, &probed).unwrap();
    let cfg = SvgdConfig::default();
    c.bench_function("svgd_select_m5_64", |b| {
        b.iter(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            svgd_select(black_box(&p), &probed, 5, &cfg, &mut rng).unwrap()
        })
    });
}

fn metrics(c: &mut Criterion) {
    let s = scene();
    let pred = DepthMap::from_vec(RES, RES, s.depth.values().iter().map(|d| d * 1.1).collect()).unwrap();
    c.bench_function("compute_metrics_64", |b| b.iter(|| compute_metrics(black_box(&pred), black_box(&s.depth)).unwrap()));
}

criterion_group!(benches, forward, uncertainty_gradient, svgd, metrics);
criterion_main!(benches);
