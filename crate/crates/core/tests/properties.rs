use ndarray::{Array1, Array2};
use proptest::prelude::*;
use raman_manifold::altdmaps::fit_altdmaps;
use raman_manifold::dmaps::{fit_dmaps, gaussian_kernel, markov_normalize, nystrom_extend, pairwise_sq_distances, KernelParams};
use raman_manifold::ihm::{extract_parameters, pseudo_voigt_eval, rebuild, ComponentModel, FitMode, HardModel, Peak};
use raman_manifold::regress::{gbt_fit, GbtSpec};
use raman_manifold::spectra::{
    apply_region, baseline_rubber_band, compute_metrics, kfold_indices, normalize_minmax, normalize_snv, split_indices,
    PretreatmentSpec, Region, SpectraSet, WavenumberGrid,
};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-5.0f64..5.0, rows * cols).prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

fn sized_matrix() -> impl Strategy<Value = Array2<f64>> {
    (5usize..40, 1usize..8).prop_flat_map(|(n, d)| matrix(n, d))
}

fn peak() -> impl Strategy<Value = Peak> {
    (-50.0f64..50.0, 0.0f64..10.0, 0.0f64..=1.0, 0.1f64..20.0).prop_map(|(position, intensity, shape, hwhm)| Peak {
        position,
        intensity,
        shape,
        hwhm,
    })
}

fn hard_model() -> impl Strategy<Value = HardModel> {
    prop::collection::vec(prop::collection::vec(peak(), 1..5), 1..4).prop_flat_map(|comps| {
        let nc = comps.len();
        (Just(comps), prop::collection::vec(0.0f64..3.0, nc), -1.0f64..1.0, -0.01f64..0.01).prop_map(
            |(comps, weights, offset, slope)| HardModel {
                components: comps
                    .into_iter()
                    .enumerate()
                    .map(|(i, peaks)| ComponentModel {
                        name: format!("c{i}"),
                        peaks,
                    })
                    .collect(),
                weights,
                offset,
                slope,
            },
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn markov_rows_sum_to_one(x in sized_matrix(), eps in 0.1f64..20.0) {
        let d2 = pairwise_sq_distances(x.view()).unwrap();
        let k = gaussian_kernel(d2.view(), eps).unwrap();
        let p = markov_normalize(k.view()).unwrap();
        for row in p.outer_iter() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn alternating_operator_rows_sum_to_one(x1 in matrix(25, 3), x2 in matrix(25, 2)) {
        let m = fit_altdmaps(x1.view(), x2.view(), &KernelParams::default(), &KernelParams::default(), 4).unwrap();
        let op = m.operator().unwrap();
        for row in op.outer_iter() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dmaps_eigenpairs_and_nystrom_self_consistency(x in matrix(30, 4)) {
        let m = fit_dmaps(x.view(), &KernelParams::default(), 5).unwrap();
        prop_assert!(m.max_eigen_residual().unwrap() <= 1e-8);
        let ext = nystrom_extend(&m, x.view()).unwrap();
        let phi = m.columns(&ext.columns).unwrap();
        let dev = (&ext.coords - &phi).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        prop_assert!(dev <= 1e-8, "{}", dev);
    }

    #[test]
    fn kfold_partitions(n in 2usize..80, k_frac in 0.0f64..1.0, seed in any::<u64>()) {
        let k = 2 + ((n - 2) as f64 * k_frac) as usize;
        let folds = kfold_indices(n, k, seed).unwrap();
        let mut seen = vec![0usize; n];
        let sizes: Vec<usize> = folds.iter().map(|(_, v)| v.len()).collect();
        for (train, val) in &folds {
            prop_assert_eq!(train.len() + val.len(), n);
            for &i in val { seen[i] += 1; }
            prop_assert!(train.iter().all(|i| !val.contains(i)));
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn split_is_disjoint_exhaustive_reproducible(n in 2usize..100, t in 0.0f64..1.0, seed in any::<u64>()) {
        let n_test = 1 + ((n - 2) as f64 * t) as usize;
        let (tr, te) = split_indices(n, n_test, seed).unwrap();
        prop_assert_eq!(te.len(), n_test);
        let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(split_indices(n, n_test, seed).unwrap(), (tr, te));
    }

    #[test]
    fn metrics_properties(pairs in prop::collection::vec((100.0f64..500.0, -50.0f64..50.0), 1..30), rot in any::<usize>()) {
        let actual: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let pred: Vec<f64> = pairs.iter().map(|p| p.0 + p.1).collect();
        let m = compute_metrics(&pred, &actual).unwrap();
        prop_assert!(m.mape >= 0.0 && m.rmse >= 0.0);
        prop_assert_eq!(m.percent_errors.len(), pairs.len());
        let r = rot % pairs.len();
        let mut a2 = actual.clone();
        let mut p2 = pred.clone();
        a2.rotate_left(r);
        p2.rotate_left(r);
        let m2 = compute_metrics(&p2, &a2).unwrap();
        prop_assert!((m.r2 - m2.r2).abs() < 1e-12);
        let exact = compute_metrics(&actual, &actual).unwrap();
        prop_assert!(exact.r2 == 1.0 && exact.rmse == 0.0);
        prop_assert_eq!(m.rmse == 0.0, m.r2 == 1.0);
    }

    #[test]
    fn region_filter_is_idempotent(lo in 0.0f64..40.0, width in 5.0f64..50.0, ex in 0.0f64..60.0) {
        let grid = WavenumberGrid::uniform(0.0, 99.0, 100).unwrap();
        let m = Array2::from_shape_fn((3, 100), |(i, j)| (i + j) as f64);
        let set = SpectraSet::new(grid, m, vec!["a".into(), "b".into(), "c".into()], None).unwrap();
        let spec = PretreatmentSpec {
            region: Region::Custom { lo, hi: lo + width },
            exclusions: vec![(ex, ex + 3.0)],
            ..PretreatmentSpec::default()
        };
        if let Ok(once) = apply_region(&set, &spec) {
            let twice = apply_region(&once, &spec).unwrap();
            prop_assert_eq!(once, twice);
        }
    }

    #[test]
    fn rubber_band_is_nonnegative_and_touches_twice(y in prop::collection::vec(-10.0f64..10.0, 2..80)) {
        let grid: Vec<f64> = (0..y.len()).map(|i| i as f64 * 1.5).collect();
        let out = baseline_rubber_band(&y, &grid).unwrap();
        let tol = 1e-9 * y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        prop_assert!(out.iter().all(|v| *v >= -tol));
        prop_assert!(out.iter().filter(|v| **v == 0.0).count() >= 2);
    }

    #[test]
    fn snv_and_minmax_are_idempotent(y in prop::collection::vec(-10.0f64..10.0, 3..50)) {
        prop_assume!(y.iter().any(|v| (v - y[0]).abs() > 1e-3));
        let s = normalize_snv(&y).unwrap();
        let s2 = normalize_snv(&s).unwrap();
        for (a, b) in s.iter().zip(&s2) { prop_assert!((a - b).abs() < 1e-12); }
        let m = normalize_minmax(&y).unwrap();
        let m2 = normalize_minmax(&m).unwrap();
        for (a, b) in m.iter().zip(&m2) { prop_assert!((a - b).abs() < 1e-12); }
    }

    #[test]
    fn pseudo_voigt_is_symmetric(p in peak(), half in 1usize..200, step in 0.01f64..2.0) {
        let grid: Vec<f64> = (0..=2 * half).map(|i| p.position + (i as f64 - half as f64) * step).collect();
        let v = pseudo_voigt_eval(&p, &grid);
        let n = v.len();
        for i in 0..n { prop_assert!((v[i] - v[n - 1 - i]).abs() < 1e-12); }
    }

    #[test]
    fn flattening_round_trips(m in hard_model()) {
        let peaks: usize = m.components.iter().map(|c| c.peaks.len()).sum();
        for (mode, per) in [(FitMode::Medium, 1), (FitMode::High, 4)] {
            let v = extract_parameters(&m, mode);
            prop_assert_eq!(v.len(), 2 + m.components.len() + per * peaks);
            prop_assert_eq!(&rebuild(&m, mode, &v).unwrap(), &m);
        }
    }

    #[test]
    fn gbt_training_mse_never_increases(x in matrix(40, 3), noise in prop::collection::vec(-1.0f64..1.0, 40), sub in 0.3f64..=1.0) {
        let y = Array1::from_shape_fn(40, |i| x[[i, 0]].sin() + x[[i, 1]] * x[[i, 2]] + noise[i]);
        let spec = GbtSpec { n_trees: 30, subsample: sub, ..GbtSpec::default() };
        let m = gbt_fit(x.view(), y.view(), &spec).unwrap();
        for w in m.train_mse.windows(2) { prop_assert!(w[1] <= w[0] + 1e-12); }
    }
}
