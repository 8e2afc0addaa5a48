use criterion::{criterion_group, criterion_main, Criterion};
use edgealloc::fitcurve::{fit_power_law, read_points_csv, FitConfig};
use edgealloc::sim::{CNN_POINTS, SVM_POINTS};
use std::hint::black_box;

fn fit(c: &mut Criterion) {
    let config = FitConfig::default();
    for (name, text) in [("cnn", CNN_POINTS), ("svm", SVM_POINTS)] {
        let points = read_points_csv(text.as_bytes()).unwrap();
        c.bench_function(&format!("fit {name}"), |b| {
            b.iter(|| fit_power_law(black_box(&points), &config).unwrap())
        });
    }
}

criterion_group!(benches, fit);
criterion_main!(benches);
