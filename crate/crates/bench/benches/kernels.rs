use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use lorid_core::data::{gen_striped_images, StripeSpec};
use lorid_core::diffusion::GaussianOracleDenoiser;
use lorid_core::linalg::svd;
use lorid_core::purify::{lorid_purify, LoridConfig};
use lorid_core::rng::{gaussian_tensor, seeded};
use lorid_core::tucker::{fit_basis, tf_apply, RankPolicy, TensorizationLayout};
use lorid_core::{Matrix, Schedule};

fn bench_svd(c: &mut Criterion) {
    for n in [16, 64] {
        let m = Matrix::new(n, n, gaussian_tensor(&[n * n], &mut seeded(1)).into_data()).unwrap();
        c.bench_function(&format!("svd_{n}x{n}"), |b| b.iter(|| svd(black_box(&m)).unwrap()));
    }
}

fn bench_tf_apply(c: &mut Criterion) {
    let (images, _) = gen_striped_images(200, &StripeSpec::default(), 2).unwrap();
    let layout = TensorizationLayout::new(&[16, 16, 1], 4).unwrap();
    let basis = fit_basis(&images, layout, &RankPolicy::default()).unwrap();
    let x = images.slice_first(0).unwrap();
    c.bench_function("tf_apply_16x16", |b| b.iter(|| tf_apply(black_box(&x), &basis).unwrap()));
}

fn bench_lorid_purify(c: &mut Criterion) {
    let s = Schedule::default();
    let (images, _) = gen_striped_images(200, &StripeSpec::default(), 3).unwrap();
    let den = GaussianOracleDenoiser::fit(&images, 1e-4, s.clone()).unwrap();
    let layout = TensorizationLayout::new(&[16, 16, 1], 4).unwrap();
    let basis = fit_basis(&images, layout, &RankPolicy::default()).unwrap();
    let x = images.slice_first(0).unwrap();
    let mut group = c.benchmark_group("lorid_purify_16x16");
    for (t, l) in [(30, 1), (30, 4), (100, 4)] {
        let cfg = LoridConfig::new(t, l).with_basis(basis.clone());
        group.bench_function(format!("t{t}_L{l}"), |b| {
            let mut rng = seeded(4);
            b.iter(|| lorid_purify(black_box(&x), &cfg, &den, &s, &mut rng).unwrap())
        });
    }
    group.finish();
}

criterion_group!(kernels, bench_svd, bench_tf_apply, bench_lorid_purify);
criterion_main!(kernels);
