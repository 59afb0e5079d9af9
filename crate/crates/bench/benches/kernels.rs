use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lrlab_bench::{chain_model, wavy_state};
use lrlab_core::dynamics::{integrate_flow, variational_at_times};
use lrlab_core::lattice::convolution_constant;
use lrlab_core::{DecayFunction, FlowOptions, Lattice, PairPotential, PotentialShape, SiteSet};

fn flow(c: &mut Criterion) {
    let mut group = c.benchmark_group("flow_t1");
    for n in [8, 32] {
        let model = chain_model(n);
        let region = model.lattice().sites();
        let s0 = wavy_state(&region, model.dim());
        let opts = FlowOptions { record_every: 1000, ..FlowOptions::default() };
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| integrate_flow(&model, &region, &s0, 1.0, &opts).unwrap())
        });
    }
    group.finish();
}

fn variational(c: &mut Criterion) {
    let model = chain_model(8);
    let region = model.lattice().sites();
    let s0 = wavy_state(&region, model.dim());
    let seeds = SiteSet::new([5]);
    let opts = FlowOptions::default();
    c.bench_function("variational_chain8_t1", |b| {
        b.iter(|| variational_at_times(&model, &region, &s0, &seeds, &[-1.0, 0.5, 1.0], &opts).unwrap())
    });
}

fn certification(c: &mut Criterion) {
    let mut group = c.benchmark_group("certify");
    for (name, shape) in [("bump", PotentialShape::Bump), ("cosine-window", PotentialShape::CosineWindow)] {
        let v = PairPotential::new(shape, 1.0, 1.5, 2).unwrap();
        group.bench_function(name, |b| b.iter(|| v.certify(2).unwrap()));
    }
    group.finish();
}

fn convolution(c: &mut Criterion) {
    let decay = DecayFunction::power_law(2.0).unwrap();
    let mut group = c.benchmark_group("convolution_constant");
    for n in [16, 64] {
        let lat = Lattice::chain(n);
        let region = lat.sites();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| convolution_constant(&lat, &decay, &region).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, flow, variational, certification, convolution);
criterion_main!(benches);
