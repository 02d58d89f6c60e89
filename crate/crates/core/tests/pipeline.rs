use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use raman_manifold::exec::Exec;
use raman_manifold::ihm::save_components;
use raman_manifold::pipeline::{
    altdmaps_offline, emit_report, load_data, read_parity, run_experiment, run_on_data, synth_generate,
    ExperimentConfig, SplitLabel, SynthKind, SynthSpec, TrainedPipeline,
};
use raman_manifold::spectra::{compute_metrics, train_test_split};

fn cfg(workflow: &str, data_extra: &str, extra: &str) -> ExperimentConfig {
    let text = format!(
        r#"{{"data": {{"source": "synth", "kind": "peak_spectra", "n_samples": 120, "noise": 0.002, "seed": 1,
                      "n_wavenumbers": 200, "nuisance_scale": 0.3 {data_extra}}},
            "workflow": {workflow},
            "split": {{"n_test": 30}},
            "mlp": {{"epochs": 300, "learning_rate": 0.003}},
            "yshaped": {{"epochs": 300, "learning_rate": 0.003}}
            {extra}}}"#
    );
    ExperimentConfig::from_json(&text).unwrap()
}

const ALT_GH_NN: &str = r#"{"kind": "altdmaps", "alt_regressor": "gh", "size_regressor": "nn"}"#;

#[test]
fn direct_dmaps_recovers_size() {
    for w in [r#"{"kind": "direct_dmaps_nn"}"#, r#"{"kind": "direct_dmaps_gbt"}"#] {
        let r = run_experiment(&cfg(w, "", "")).unwrap().report;
        assert!(r.test.r2 > 0.9, "{}: {}", r.workflow, r.test.r2);
        assert_eq!(r.latent_count, 6);
        assert_eq!(r.coordinates.len(), 6);
        assert_eq!(r.parity.len(), 120);
        assert!(r.diagnostics.nystrom_mse.unwrap().is_finite());
    }
}

#[test]
fn yshaped_disentangles_size() {
    let r = run_experiment(&cfg(r#"{"kind": "yshaped"}"#, "", "")).unwrap().report;
    assert!(r.test.r2 > 0.9, "{}", r.test.r2);
    assert!(r.diagnostics.orthogonality.unwrap() < 0.05);
    assert_eq!(r.latent_count, 1);
    let h = r.loss_history.unwrap();
    assert_eq!(h.columns, ["epoch", "recon", "pred", "orth", "total"]);
    assert_eq!(h.rows.len(), 300);
}

#[test]
fn all_altdmaps_pairings_run_and_actual_alt_beats_predicted() {
    for (a, s) in [("gh", "nn"), ("gh", "gbt"), ("gbt", "nn"), ("gbt", "gbt")] {
        let w = format!(r#"{{"kind": "altdmaps", "alt_regressor": "{a}", "size_regressor": "{s}"}}"#);
        let r = run_experiment(&cfg(&w, "", "")).unwrap().report;
        assert_eq!(r.workflow, format!("altdmaps_{a}_{s}"));
        assert!(r.test.r2 > 0.9, "{}: {}", r.workflow, r.test.r2);
        let actual = r.diagnostics.train_r2_actual_alt.unwrap();
        assert!(actual >= r.train.r2 - 1e-12, "{}: actual {actual} < predicted {}", r.workflow, r.train.r2);
        assert!(r.diagnostics.alt_selection.as_ref().unwrap().contains(&1));
    }
}

#[test]
fn pls_on_noiseless_linear_spectra() {
    let c = cfg(
        r#"{"kind": "pls_direct"}"#,
        r#", "coupling": "linear""#,
        "",
    );
    let mut c = c;
    if let raman_manifold::pipeline::DataSource::Synth(s) = &mut c.data {
        s.noise = 0.0;
    }
    let r = run_experiment(&c).unwrap().report;
    assert!(r.test.r2 > 0.99, "{}", r.test.r2);
    assert!(r.latent_count >= 1);
}

#[test]
fn ihm_pls_with_generator_components() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = cfg(r#"{"kind": "ihm_pls"}"#, "", "");
    let raman_manifold::pipeline::DataSource::Synth(spec) = &c.data else {
        unreachable!()
    };
    let data = synth_generate(spec).unwrap();
    let comp = dir.path().join("components.json");
    save_components(data.components.as_ref().unwrap(), &comp).unwrap();
    c.ihm.components = Some(comp);
    let o = run_experiment(&c).unwrap();
    let r = &o.report;
    assert!(r.test.r2 > 0.9, "{}", r.test.r2);
    assert!(r.diagnostics.ihm_mean_sse.unwrap().is_finite());
    o.save(dir.path()).unwrap();
    let params = std::fs::read_to_string(dir.path().join("ihm_parameters.csv")).unwrap();
    assert_eq!(params.lines().count(), 121);
    // Medium mode: offset, slope, 2 weights, 8 positions.
    assert_eq!(params.lines().next().unwrap().split(',').count(), 1 + 12);
}

fn noisy_test_spectra(c: &ExperimentConfig) -> (raman_manifold::pipeline::LoadedData, raman_manifold::pipeline::LoadedData) {
    let data = load_data(&c.data).unwrap();
    let (_, test) = raman_manifold::spectra::split_indices(data.primary.n_samples(), c.split.n_test, c.seed).unwrap();
    let mut m = data.primary.intensities().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for &i in &test {
        m.row_mut(i).mapv_inplace(|_| rng.random::<f64>());
    }
    let mut noisy = data.clone();
    noisy.primary = data.primary.with_intensities(m).unwrap();
    (data, noisy)
}

#[test]
fn test_rows_never_influence_training() {
    for w in [r#"{"kind": "direct_dmaps_gbt"}"#, r#"{"kind": "yshaped"}"#, ALT_GH_NN, r#"{"kind": "pls_direct"}"#] {
        let mut c = cfg(w, "", "");
        c.yshaped.epochs = 50;
        c.mlp.epochs = 50;
        let (clean, noisy) = noisy_test_spectra(&c);
        let a = run_on_data(&c, &clean).unwrap().report;
        let b = run_on_data(&c, &noisy).unwrap().report;
        assert!((a.train.r2 - b.train.r2).abs() <= 1e-12, "{}", a.workflow);
        assert!((a.train.rmse_nm - b.train.rmse_nm).abs() <= 1e-12);
        for (x, y) in a.parity.iter().zip(&b.parity) {
            if x.split == SplitLabel::Train {
                assert!((x.predicted_nm - y.predicted_nm).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn metrics_recompute_from_parity_file() {
    let o = run_experiment(&cfg(r#"{"kind": "direct_dmaps_gbt"}"#, "", "")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_report(&o.report, dir.path()).unwrap();
    let rows = read_parity(&dir.path().join("parity.csv")).unwrap();
    assert_eq!(rows.len(), 120);
    for (label, stored) in [(SplitLabel::Train, &o.report.train), (SplitLabel::Test, &o.report.test)] {
        let sel: Vec<_> = rows.iter().filter(|r| r.split == label).collect();
        let p: Vec<f64> = sel.iter().map(|r| r.predicted_nm).collect();
        let a: Vec<f64> = sel.iter().map(|r| r.actual_nm).collect();
        let m = compute_metrics(&p, &a).unwrap();
        assert!((m.r2 - stored.r2).abs() < 1e-10);
        assert!((m.rmse - stored.rmse_nm).abs() < 1e-10);
        assert!((m.mape - stored.mape_pct).abs() < 1e-10);
    }
}

fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in walk(dir) {
        out.insert(e.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&e).unwrap());
    }
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut v = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            v.extend(walk(&p));
        } else {
            v.push(p);
        }
    }
    v.sort();
    v
}

#[test]
fn reruns_write_identical_files_and_saved_model_predicts_the_same() {
    let c = cfg(ALT_GH_NN, "", "");
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let o1 = run_experiment(&c).unwrap();
    o1.save(d1.path()).unwrap();
    run_experiment(&c).unwrap().save(d2.path()).unwrap();
    let (a, b) = (read_dir_bytes(d1.path()), read_dir_bytes(d2.path()));
    assert!(a.contains_key("model/alt/manifest.json"));
    assert_eq!(a, b);

    let trained = TrainedPipeline::load(&d1.path().join("model/pipeline.json")).unwrap();
    let data = load_data(&c.data).unwrap();
    let test = data.primary.select(&o1.report.split.test);
    let pred = trained.predict(&test).unwrap();
    let stored: Vec<f64> = o1
        .report
        .parity
        .iter()
        .filter(|r| r.split == SplitLabel::Test)
        .map(|r| r.predicted_nm)
        .collect();
    assert_eq!(pred.to_vec(), stored);
}

#[test]
fn two_sensor_offline_selects_planted_pair() {
    let spec = SynthSpec {
        kind: SynthKind::TwoSensorCommon { nuisance_scale: 3.0 },
        n_samples: 300,
        noise: 0.0,
        seed: 1,
    };
    let data = synth_generate(&spec).unwrap();
    let c = ExperimentConfig::from_json(
        r#"{"data": {"source": "synth", "kind": "two_sensor_common", "n_samples": 300, "seed": 1},
            "workflow": {"kind": "altdmaps", "alt_regressor": "gh", "size_regressor": "nn"},
            "dmaps": {"coordinates": {"mode": "fixed", "indices": [1, 2]}},
            "alt": {"sensor2": "secondary"}}"#,
    )
    .unwrap();
    let (train, _) = train_test_split(&data.primary, 30, 0).unwrap();
    let (train_idx, _) = raman_manifold::spectra::split_indices(300, 30, 0).unwrap();
    let sec: Array2<f64> = data.secondary.as_ref().unwrap().intensities().select(ndarray::Axis(0), &train_idx);
    let off = altdmaps_offline(&c, &train, Some(sec.view()), Exec::default()).unwrap();
    assert!(off.indices.contains(&1) && off.indices.contains(&2), "{:?}", off.indices);

    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    off.save(d1.path()).unwrap();
    altdmaps_offline(&c, &train, Some(sec.view()), Exec::default()).unwrap().save(d2.path()).unwrap();
    assert_eq!(read_dir_bytes(d1.path()), read_dir_bytes(d2.path()));
}

#[test]
fn config_errors() {
    let mut c = cfg(r#"{"kind": "ihm_pls"}"#, "", "");
    assert!(matches!(run_experiment(&c), Err(raman_manifold::Error::Config(_))));
    c.workflow = raman_manifold::pipeline::Workflow::PlsDirect;
    c.split.n_test = 0;
    assert!(run_experiment(&c).is_err());
    let arc = ExperimentConfig::from_json(
        r#"{"data": {"source": "synth", "kind": "arc_manifold", "n_samples": 50}, "workflow": {"kind": "pls_direct"}}"#,
    )
    .unwrap();
    // No sizes to predict.
    assert!(matches!(run_experiment(&arc), Err(raman_manifold::Error::InvalidInput(_))));
}
