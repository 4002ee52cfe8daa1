use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dermseg::colorspace::Plane;
use dermseg::fuzzyclust::{fcm_fit_with, FcmParams, FeatureMatrix};
use dermseg::morphology::{morph_with, MorphOp, StructuringElement};
use dermseg::tensor::kernels::{conv2d_backward, conv2d_forward, upconv2_forward};
use dermseg::tensor::{Graph, Tensor};
use dermseg::unet::{build_model, UNetConfig};
use dermseg::Exec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STRATEGIES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn bench_conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (ci, co, h, k) = (16, 32, 64, 3);
    let x = random_vec(&mut rng, ci * h * h);
    let wt = random_vec(&mut rng, co * ci * k * k);
    let bias = random_vec(&mut rng, co);
    let oh = h + 1 - k;
    let g = random_vec(&mut rng, co * oh * oh);
    let wu = random_vec(&mut rng, ci * co * 4);

    let mut group = c.benchmark_group("conv2d_forward_16x64x64_to_32");
    for (name, exec) in STRATEGIES {
        group.bench_function(name, |b| b.iter(|| conv2d_forward(exec, black_box(&x), (ci, h, h), &wt, co, k, &bias)));
    }
    group.finish();

    let mut group = c.benchmark_group("conv2d_backward_16x64x64_to_32");
    for (name, exec) in STRATEGIES {
        group.bench_function(name, |b| b.iter(|| conv2d_backward(exec, black_box(&x), (ci, h, h), &wt, co, k, &g)));
    }
    group.finish();

    let mut group = c.benchmark_group("upconv2_forward_16x64x64_to_32");
    for (name, exec) in STRATEGIES {
        group.bench_function(name, |b| b.iter(|| upconv2_forward(exec, black_box(&x), (ci, h, h), &wu, co, &bias)));
    }
    group.finish();
}

fn bench_unet_step(c: &mut Criterion) {
    let (net, params) = build_model(UNetConfig { depth: 2, base_features: 8, ..UNetConfig::default() }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let side = 104;
    let x = Tensor::new(vec![5, side, side], random_vec(&mut rng, 5 * side * side)).unwrap();
    let out = side - 40;
    let target: Vec<usize> = (0..out * out).map(|i| i % 2).collect();
    let mut group = c.benchmark_group("unet_d2_b8_train_step_104px");
    group.sample_size(10);
    for (name, exec) in STRATEGIES {
        group.bench_function(name, |b| {
            b.iter(|| {
                let mut g = Graph::with_exec(exec);
                let leaf = g.leaf(x.clone()).unwrap();
                let mut drop_rng = ChaCha8Rng::seed_from_u64(2);
                let f = net.forward(&mut g, &params, leaf, true, &mut drop_rng).unwrap();
                let loss = g.softmax_ce_loss(f.logits, &target).unwrap();
                black_box(g.backward(loss).unwrap())
            })
        });
    }
    group.finish();
}

fn bench_fcm(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 250 * 250;
    let rows: Vec<f64> = (0..n * 3).map(|_| rng.gen::<f64>()).collect();
    let x = FeatureMatrix::new(3, rows, (0..n).collect()).unwrap();
    let params = FcmParams { c: 5, max_iter: 10, tol: 0.0, ..FcmParams::default() };
    let mut group = c.benchmark_group("fcm_c5_250x250_10iter");
    group.sample_size(10);
    for (name, exec) in STRATEGIES {
        group.bench_function(name, |b| b.iter(|| fcm_fit_with(black_box(&x), params, exec).unwrap()));
    }
    group.finish();
}

fn bench_morphology(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = Plane::from_fn(500, 500, |_, _| rng.gen::<f64>());
    let mut group = c.benchmark_group("closing_500x500");
    for radius in [3, 7] {
        let se = StructuringElement::disk(radius);
        for (name, exec) in STRATEGIES {
            group.bench_with_input(BenchmarkId::new(name, format!("disk{radius}")), &se, |b, &se| {
                b.iter(|| morph_with(MorphOp::Close, black_box(&p), se, exec))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_conv, bench_unet_step, bench_fcm, bench_morphology);
criterion_main!(benches);
