//! Sequential vs rayon execution of the data-parallel kernels.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use raman_manifold::dmaps::{
    fit_dmaps_with, pairwise_sq_distances_with, select_by_reconstruction_with, KernelParams, ReconstructionSelection,
};
use raman_manifold::exec::Exec;
use raman_manifold::ihm::{fit_many, FitBounds, FitMode, HardModel};
use raman_manifold::spectra::{SpectraSet, WavenumberGrid};
use raman_manifold::synth::{peak_spectra, PeakSpectraParams};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn random(n: usize, d: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))
}

fn distances(c: &mut Criterion) {
    let x = random(600, 200);
    let mut g = c.benchmark_group("pairwise_distances");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pairwise_sq_distances_with(x.view(), exec).unwrap())
        });
    }
    g.finish();
}

fn dmaps(c: &mut Criterion) {
    let x = random(400, 50);
    let mut g = c.benchmark_group("fit_dmaps");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| fit_dmaps_with(x.view(), &KernelParams::default(), 10, exec).unwrap())
        });
    }
    g.finish();
}

fn coordinate_selection(c: &mut Criterion) {
    let x = random(200, 40);
    let m = fit_dmaps_with(x.view(), &KernelParams::default(), 10, Exec::Parallel).unwrap();
    let cand = m.columns(&(1..10).collect::<Vec<_>>()).unwrap();
    let sel = ReconstructionSelection {
        n_keep: 4,
        folds: 5,
        ..ReconstructionSelection::default()
    };
    let mut g = c.benchmark_group("reconstruction_selection");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| select_by_reconstruction_with(cand.view(), x.view(), &sel, exec).unwrap())
        });
    }
    g.finish();
}

fn hard_model(c: &mut Criterion) {
    let data = peak_spectra(32, 0.001, &PeakSpectraParams::default(), 1).unwrap();
    let set = SpectraSet::new(
        WavenumberGrid::new(data.grid.clone()).unwrap(),
        data.intensities,
        (0..32).map(|i| format!("s{i}")).collect(),
        Some(Array1::from(data.sizes)),
    )
    .unwrap();
    let model = HardModel::new(data.components).unwrap();
    let mut g = c.benchmark_group("ihm_fit_many");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| fit_many(&model, &set, FitMode::Medium, &FitBounds::default(), exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, distances, dmaps, coordinate_selection, hard_model);
criterion_main!(benches);
