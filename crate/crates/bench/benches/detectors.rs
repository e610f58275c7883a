use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use msood_bench::{activation_tensor, gaussian_vectors, score_set};
use msood_core::{auroc, detection_accuracy, fit_ocsvm, gram_row_sums, OcsvmConfig, Shape};

fn ocsvm_fit(c: &mut Criterion) {
    let mut group = c.benchmark_group("ocsvm_fit");
    group.sample_size(20);
    for n in [64, 256] {
        let vectors = gaussian_vectors(1, n, 32);
        let config = OcsvmConfig::default();
        group.bench_with_input(BenchmarkId::from_parameter(n), &vectors, |b, v| {
            b.iter(|| fit_ocsvm(black_box(v), &config).unwrap())
        });
    }
    group.finish();
}

fn ocsvm_decision(c: &mut Criterion) {
    let vectors = gaussian_vectors(2, 256, 32);
    let model = fit_ocsvm(&vectors, &OcsvmConfig::default()).unwrap().model;
    let query = &gaussian_vectors(3, 1, 32)[0];
    c.bench_function("ocsvm_decision_256sv", |b| {
        b.iter(|| model.decision(black_box(query)).unwrap())
    });
}

fn gram(c: &mut Criterion) {
    let mut group = c.benchmark_group("gram_row_sums");
    for (k, s) in [(64, 8), (256, 4)] {
        let t = activation_tensor(4, Shape::new(k, s, s));
        group.bench_with_input(BenchmarkId::new(format!("{k}x{s}x{s}"), 1), &t, |b, t| {
            b.iter(|| gram_row_sums(black_box(t), 1).unwrap())
        });
    }
    group.finish();
}

fn metrics(c: &mut Criterion) {
    let set = score_set(5, 5000, 5000);
    c.bench_function("auroc_5000x5000", |b| {
        b.iter(|| auroc(black_box(&set)).unwrap())
    });
    c.bench_function("detection_accuracy_5000x5000", |b| {
        b.iter(|| detection_accuracy(black_box(&set)).unwrap())
    });
}

criterion_group!(benches, ocsvm_fit, ocsvm_decision, gram, metrics);
criterion_main!(benches);
