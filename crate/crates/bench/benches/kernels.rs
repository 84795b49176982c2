use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use mrf_accel::hardware::{HardwareProfile, ScheduledAccelerator};
use mrf_accel::mrf::{generate_dataset, generate_sample, DatasetSpec};
use mrf_accel::network::{init_params, network_forward, node_forward_int, ForwardMode};
use mrf_accel::train::{backprop, export_integer_model, output_delta, sgd_step};
use mrf_accel::{IntegerModel, LayerParams, NetworkConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn setup() -> (NetworkConfig, Vec<LayerParams>, IntegerModel, Vec<f64>) {
    let cfg = NetworkConfig::default();
    let params = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(0));
    let spec = DatasetSpec::default();
    let calib: Vec<Vec<f64>> = (0..64).map(|i| generate_sample(&spec, i).signal).collect();
    let model = export_integer_model(&cfg, &params, &calib).unwrap();
    (cfg, params, model, calib[0].clone())
}

fn node(c: &mut Criterion) {
    let (_, _, model, x) = setup();
    let codes = model.quantize_input(&x).unwrap();
    let layer = &model.layers[0];
    c.bench_function("node_forward_int/200", |b| {
        b.iter(|| {
            node_forward_int(
                black_box(codes.values()),
                layer.weight_row(0),
                layer.biases.values()[0] as i64,
                layer.activation,
                &layer.requant,
                model.accumulator_bits,
            )
            .unwrap()
        })
    });
}

fn forward(c: &mut Criterion) {
    let (cfg, params, model, x) = setup();
    let codes = model.quantize_input(&x).unwrap();
    let acc = ScheduledAccelerator::new(HardwareProfile::default()).unwrap();
    let scheme = model.scheme();
    let mut g = c.benchmark_group("forward");
    g.bench_function("real", |b| {
        b.iter(|| network_forward(&cfg, &params, black_box(&x), ForwardMode::Real).unwrap())
    });
    g.bench_function("fake_quant", |b| {
        b.iter(|| {
            network_forward(
                &cfg,
                &params,
                black_box(&x),
                ForwardMode::FakeQuant(&scheme),
            )
            .unwrap()
        })
    });
    g.bench_function("integer_direct", |b| {
        b.iter(|| model.forward_codes(black_box(codes.values())).unwrap())
    });
    g.bench_function("integer_scheduled", |b| {
        b.iter(|| acc.run(&model, black_box(&codes)).unwrap())
    });
    g.finish();
}

fn train_step(c: &mut Criterion) {
    let (cfg, params, _, x) = setup();
    let target = [0.3, 0.1];
    c.bench_function("sgd_step/default_net", |b| {
        b.iter_batched(
            || params.clone(),
            |mut p| {
                let tr = network_forward(&cfg, &p, &x, ForwardMode::Real).unwrap();
                let d = output_delta(&tr, &target).unwrap();
                let g = backprop(&cfg, &p, &tr, &d).unwrap();
                sgd_step(&mut p, &g, 1e-4);
                p
            },
            BatchSize::SmallInput,
        )
    });
}

fn dataset(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let spec = DatasetSpec {
        n_samples: 10_000,
        seed: rng.random(),
        ..DatasetSpec::default()
    };
    let mut g = c.benchmark_group("dataset");
    g.sample_size(10);
    g.bench_function("generate/10k", |b| {
        b.iter(|| generate_dataset(black_box(&spec)).unwrap())
    });
    g.finish();
}

criterion_group!(benches, node, forward, train_step, dataset);
criterion_main!(benches);
