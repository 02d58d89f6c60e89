use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::altdmaps::{alt_coordinates, fit_altdmaps_with, AltDmapModel};
use crate::conformal::{decode, encode, orthogonality_score, predict_size, yae_fit};
use crate::dmaps::{
    fit_dmaps_with, gh_fit, nystrom_extend_columns, save_dmap, select_by_reconstruction_with, DmapModel,
    KernelParams, NYSTROM_MIN_EIGENVALUE,
};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::ihm::{load_components, write_parameter_csv, FitResult, HardModel};
use crate::persist::save_json;
use crate::regress::{
    apply_params, gbt_fit, gbt_predict, mlp_fit, mlp_predict, pls_choose_components, pls_fit, random_search,
    write_search_table, SearchResult,
};
use crate::spectra::{
    apply_pretreatment, compute_metrics, load_spectra, split_indices, ColumnScaler, MetricsReport, SpectraSet,
    ZeroVariance,
};

use super::config::{AltRegressor, CoordinateChoice, DataSource, ExperimentConfig, SecondSensor, SizeRegressor, Workflow};
use super::report::{Diagnostics, LossHistory, ParityRow, RunReport, SplitLabel, SplitRecord};
use super::synth::{load_secondary, synth_generate};
use super::trained::{ihm_features, AltMap, Predictor, SizeHead, TrainedPipeline};

/// Raw data for a run: primary spectra and an optional paired sensor.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub primary: SpectraSet,
    pub secondary: Option<Array2<f64>>,
}

pub fn load_data(source: &DataSource) -> Result<LoadedData> {
    match source {
        DataSource::Files {
            spectra,
            sizes,
            secondary,
        } => {
            let primary = load_spectra(spectra, sizes.as_deref())?;
            let secondary = secondary.as_ref().map(|p| load_secondary(p, &primary)).transpose()?;
            Ok(LoadedData { primary, secondary })
        }
        DataSource::Synth(spec) => {
            let d = synth_generate(spec)?;
            Ok(LoadedData {
                primary: d.primary,
                secondary: d.secondary.map(|s| s.intensities().clone()),
            })
        }
    }
}

/// Training-set diffusion map and the coordinates chosen from it.
#[derive(Debug, Clone)]
pub struct DmapStage {
    pub model: DmapModel,
    /// Eigenvector indices.
    pub coordinates: Vec<usize>,
    pub train_coords: Array2<f64>,
    pub cv_mse: Option<Vec<f64>>,
}

pub fn dmap_stage(cfg: &ExperimentConfig, train_x: ArrayView2<f64>, exec: Exec) -> Result<DmapStage> {
    let model = fit_dmaps_with(train_x, &cfg.dmaps.kernel, cfg.dmaps.n_eig, exec)?;
    let (coordinates, cv_mse) = match &cfg.dmaps.coordinates {
        CoordinateChoice::Fixed { indices } => (indices.clone(), None),
        CoordinateChoice::Reconstruction(sel) => {
            let pool: Vec<usize> = (1..model.eigenvalues().len())
                .filter(|&k| model.eigenvalues()[k] >= NYSTROM_MIN_EIGENVALUE)
                .collect();
            let cand = model.columns(&pool)?;
            let chosen = select_by_reconstruction_with(cand.view(), train_x, sel, exec)?;
            (chosen.indices.iter().map(|&c| pool[c]).collect(), Some(chosen.cv_mse))
        }
    };
    let train_coords = model.columns(&coordinates)?;
    Ok(DmapStage {
        model,
        coordinates,
        train_coords,
        cv_mse,
    })
}

/// Nyström coordinates of the test rows against a joint refit on all rows
/// with the same bandwidth. Each joint column is rescaled onto the training
/// fit by least squares over the training rows, which also fixes its sign.
fn nystrom_mse(
    stage: &DmapStage,
    all_x: ArrayView2<f64>,
    train: &[usize],
    test: &[usize],
    test_coords: ArrayView2<f64>,
    exec: Exec,
) -> Result<f64> {
    let params = KernelParams {
        epsilon: Some(stage.model.epsilon()),
        ..stage.model.params()
    };
    let joint = fit_dmaps_with(all_x, &params, stage.model.eigenvalues().len(), exec)?;
    let cols = joint.columns(&stage.coordinates)?;
    let mut sq = 0.0;
    for (k, _) in stage.coordinates.iter().enumerate() {
        let a = cols.column(k).select(Axis(0), train);
        let b = stage.train_coords.column(k);
        let s = a.dot(&b) / a.dot(&a).max(f64::MIN_POSITIVE);
        for (r, &i) in test.iter().enumerate() {
            sq += (s * cols[[i, k]] - test_coords[[r, k]]).powi(2);
        }
    }
    Ok(sq / (test.len() * stage.coordinates.len()) as f64)
}

struct HeadFit {
    head: SizeHead,
    search: Option<SearchResult>,
    loss: Option<LossHistory>,
}

fn fit_size_head(kind: SizeRegressor, cfg: &ExperimentConfig, x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<HeadFit> {
    let exec = Exec::default();
    match kind {
        SizeRegressor::Nn => {
            let mut spec = cfg.mlp.clone();
            let mut search = None;
            if let Some(s) = &cfg.search.mlp {
                let r = random_search(s, x, y, exec, |ps, xt, yt, xv| {
                    mlp_predict(&mlp_fit(xt, yt, &apply_params(&spec, ps)?)?, xv)
                })?;
                spec = apply_params(&spec, &r.best)?;
                search = Some(r);
            }
            let model = mlp_fit(x, y, &spec)?;
            let loss = LossHistory {
                columns: vec!["epoch".into(), "loss".into()],
                rows: model
                    .loss_history()
                    .iter()
                    .enumerate()
                    .map(|(e, l)| vec![e as f64, *l])
                    .collect(),
            };
            Ok(HeadFit {
                head: SizeHead::Nn { model },
                search,
                loss: Some(loss),
            })
        }
        SizeRegressor::Gbt => {
            let mut spec = cfg.gbt.clone();
            let mut search = None;
            if let Some(s) = &cfg.search.gbt {
                let r = random_search(s, x, y, exec, |ps, xt, yt, xv| {
                    gbt_predict(&gbt_fit(xt, yt, &apply_params(&spec, ps)?)?, xv)
                })?;
                spec = apply_params(&spec, &r.best)?;
                search = Some(r);
            }
            Ok(HeadFit {
                head: SizeHead::Gbt {
                    model: gbt_fit(x, y, &spec)?,
                },
                search,
                loss: None,
            })
        }
    }
}

/// Deterministic 2-means on rows: seeded with the rows of smallest and
/// largest norm, then Lloyd iterations until labels stop changing.
pub fn two_means(x: ArrayView2<f64>) -> Vec<usize> {
    let n = x.nrows();
    if n < 2 {
        return vec![0; n];
    }
    let norms: Vec<f64> = x.outer_iter().map(|r| r.dot(&r)).collect();
    let lo = (0..n).min_by(|&a, &b| norms[a].total_cmp(&norms[b])).expect("n > 0");
    let hi = (0..n).max_by(|&a, &b| norms[a].total_cmp(&norms[b])).expect("n > 0");
    let mut centers = [x.row(lo).to_owned(), x.row(hi).to_owned()];
    let mut labels = vec![usize::MAX; n];
    for _ in 0..100 {
        let new: Vec<usize> = x
            .outer_iter()
            .map(|r| {
                let d0 = (&r - &centers[0]).mapv(|v| v * v).sum();
                let d1 = (&r - &centers[1]).mapv(|v| v * v).sum();
                usize::from(d1 < d0)
            })
            .collect();
        if new == labels {
            break;
        }
        labels = new;
        for (c, center) in centers.iter_mut().enumerate() {
            let rows: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            if !rows.is_empty() {
                *center = x.select(Axis(0), &rows).mean_axis(Axis(0)).expect("nonempty");
            }
        }
    }
    labels
}

/// Offline steps of the alternating-diffusion workflow.
#[derive(Debug, Clone)]
pub struct AltOffline {
    pub stage: DmapStage,
    pub alt: AltDmapModel,
    /// Ψ columns used downstream.
    pub indices: Vec<usize>,
    pub sample_ids: Vec<String>,
}

impl AltOffline {
    /// Writes `dmap/`, `altdmap.json`, `manifest.json` and `psi.csv`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_dmap(&self.stage.model, &dir.join("dmap"))?;
        save_json("altdmap", &self.alt, &dir.join("altdmap.json"))?;
        let path = dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&self.alt.manifest(&self.sample_ids)?)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        crate::dmaps::write_matrix(self.alt.psi(), &dir.join("psi.csv"))
    }
}

/// DMAPs on the training spectra, then alternating diffusion between the
/// spectra and the second sensor.
pub fn altdmaps_offline(
    cfg: &ExperimentConfig,
    train: &SpectraSet,
    secondary: Option<ArrayView2<f64>>,
    exec: Exec,
) -> Result<AltOffline> {
    let x = train.intensities().view();
    let stage = dmap_stage(cfg, x, exec)?;
    let s2 = match cfg.alt.sensor2 {
        SecondSensor::Sizes => train.require_sizes("alternating diffusion on sizes")?.clone().insert_axis(Axis(1)),
        SecondSensor::Secondary => secondary
            .ok_or_else(|| Error::Config("alt.sensor2 = secondary needs a secondary data file".into()))?
            .to_owned(),
    };
    let alt = fit_altdmaps_with(x, s2.view(), &cfg.alt.kernel1, &cfg.alt.kernel2, cfg.alt.n_eig, &cfg.alt.llr, exec)?;
    let indices = match (&cfg.alt.indices, alt.selection()) {
        (Some(ix), _) => ix.clone(),
        (None, Some(sel)) => sel.indices.clone(),
        (None, None) => {
            return Err(Error::Degenerate(
                "no alternating-diffusion coordinate passed the local-linear test".into(),
            ))
        }
    };
    alt_coordinates(&alt, &indices)?;
    Ok(AltOffline {
        stage,
        alt,
        indices,
        sample_ids: train.sample_ids().to_vec(),
    })
}

/// Result of one experiment run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub trained: TrainedPipeline,
    pub search: Option<SearchResult>,
    pub alt_offline: Option<AltOffline>,
    /// Sample ids and fits of every spectrum, for IHM runs.
    pub ihm_fits: Option<(Vec<String>, Vec<FitResult>)>,
}

impl RunOutcome {
    /// Report files, `model/pipeline.json`, and per-workflow artifacts.
    pub fn save(&self, dir: &Path) -> Result<()> {
        super::report::emit_report(&self.report, dir)?;
        let model_dir = dir.join("model");
        std::fs::create_dir_all(&model_dir).map_err(|e| Error::io(&model_dir, e))?;
        self.trained.save(&model_dir.join("pipeline.json"))?;
        if let Some(s) = &self.search {
            write_search_table(s, &dir.join("search.csv"))?;
        }
        if let Some(a) = &self.alt_offline {
            a.save(&model_dir.join("alt"))?;
        }
        if let Some((ids, fits)) = &self.ihm_fits {
            write_parameter_csv(ids, fits, self.trained_mode(), &dir.join("ihm_parameters.csv"))?;
        }
        Ok(())
    }

    fn trained_mode(&self) -> crate::ihm::FitMode {
        match &self.trained.predictor {
            Predictor::IhmPls { mode, .. } => *mode,
            _ => crate::ihm::FitMode::Medium,
        }
    }
}

fn pls_stage(
    cfg: &ExperimentConfig,
    xtr: ArrayView2<f64>,
    y: ArrayView1<f64>,
) -> Result<(ColumnScaler, crate::regress::PlsModel, Vec<f64>)> {
    let scaler = ColumnScaler::fit(xtr, ZeroVariance::Passthrough)?;
    let xs = scaler.transform(xtr)?;
    let y2 = y.to_owned().insert_axis(Axis(1));
    let choice = pls_choose_components(xs.view(), y2.view(), cfg.pls.k_max, cfg.pls.folds, cfg.seed)?;
    let pls = pls_fit(xs.view(), y2.view(), choice.n_components)?;
    Ok((scaler, pls, choice.cv_mse))
}

/// Runs the configured workflow end to end.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let data = load_data(&cfg.data)?;
    run_on_data(cfg, &data)
}

/// [`run_experiment`] on data already in memory.
pub fn run_on_data(cfg: &ExperimentConfig, data: &LoadedData) -> Result<RunOutcome> {
    cfg.validate()?;
    let cfg = cfg.resolved();
    let exec = Exec::default();
    let set = apply_pretreatment(&data.primary, &cfg.pretreatment)?;
    let sizes = set.require_sizes(&cfg.workflow.id())?.clone();
    let (train_idx, test_idx) = split_indices(set.n_samples(), cfg.split.n_test, cfg.seed)?;
    let train = set.select(&train_idx);
    let test = set.select(&test_idx);
    let ytr = sizes.select(Axis(0), &train_idx);
    let yte = sizes.select(Axis(0), &test_idx);
    let xtr = train.intensities().view();
    let xte = test.intensities().view();

    let mut diag = Diagnostics::default();
    let mut search = None;
    let mut loss = None;
    let mut alt_offline = None;
    let mut ihm_fits = None;
    let mut coordinates = Vec::new();
    // Set by workflows whose test features are already computed.
    let mut test_pred: Option<Array1<f64>> = None;

    let (predictor, train_pred, latent_count): (Predictor, Array1<f64>, usize) = match cfg.workflow {
        Workflow::DirectDmapsNn | Workflow::DirectDmapsGbt => {
            let kind = if cfg.workflow == Workflow::DirectDmapsNn {
                SizeRegressor::Nn
            } else {
                SizeRegressor::Gbt
            };
            let stage = dmap_stage(&cfg, xtr, exec)?;
            let tc = nystrom_extend_columns(&stage.model, xte, &stage.coordinates)?;
            diag.nystrom_mse = Some(nystrom_mse(&stage, set.intensities().view(), &train_idx, &test_idx, tc.view(), exec)?);
            diag.coordinate_cv_mse = stage.cv_mse.clone();
            let h = fit_size_head(kind, &cfg, stage.train_coords.view(), ytr.view())?;
            diag.search_best_cv_mse = h.search.as_ref().map(|s| s.best_cv_mse);
            search = h.search;
            loss = h.loss;
            let pred = h.head.predict(stage.train_coords.view())?;
            coordinates = stage.coordinates.clone();
            let n = coordinates.len();
            (
                Predictor::Direct {
                    dmap: stage.model,
                    coordinates: stage.coordinates,
                    head: h.head,
                },
                pred,
                n,
            )
        }
        Workflow::Altdmaps {
            alt_regressor,
            size_regressor,
        } => {
            let secondary = data.secondary.as_ref().map(|s| s.select(Axis(0), &train_idx));
            let off = altdmaps_offline(&cfg, &train, secondary.as_ref().map(|s| s.view()), exec)?;
            let stage = &off.stage;
            let tc = nystrom_extend_columns(&stage.model, xte, &stage.coordinates)?;
            diag.nystrom_mse = Some(nystrom_mse(stage, set.intensities().view(), &train_idx, &test_idx, tc.view(), exec)?);
            diag.coordinate_cv_mse = stage.cv_mse.clone();
            diag.alt_eigenvalues = Some(off.alt.eigenvalues().to_vec());
            diag.alt_selection = Some(off.indices.clone());
            let psi = alt_coordinates(&off.alt, &off.indices)?;
            let alt_map = match alt_regressor {
                AltRegressor::Gh => AltMap::Gh {
                    model: gh_fit(stage.train_coords.view(), psi.view(), &cfg.alt.gh)?,
                },
                AltRegressor::Gbt => AltMap::Gbt {
                    models: psi
                        .columns()
                        .into_iter()
                        .map(|c| gbt_fit(stage.train_coords.view(), c, &cfg.gbt))
                        .collect::<Result<_>>()?,
                },
            };
            let psi_hat = alt_map.predict(stage.train_coords.view())?;
            diag.alt_prediction_mse = Some((&psi_hat - &psi).mapv(|v| v * v).mean().unwrap_or(0.0));
            let h = fit_size_head(size_regressor, &cfg, psi.view(), ytr.view())?;
            diag.search_best_cv_mse = h.search.as_ref().map(|s| s.best_cv_mse);
            let actual = h.head.predict(psi.view())?;
            diag.train_r2_actual_alt = Some(compute_metrics(actual.as_slice().expect("contiguous"), ytr.as_slice().expect("contiguous"))?.r2);
            search = h.search;
            loss = h.loss;
            let pred = h.head.predict(psi_hat.view())?;
            coordinates = stage.coordinates.clone();
            let n = off.indices.len();
            let predictor = Predictor::Alt {
                dmap: stage.model.clone(),
                coordinates: stage.coordinates.clone(),
                alt_map,
                head: h.head,
            };
            alt_offline = Some(off);
            (predictor, pred, n)
        }
        Workflow::Yshaped => {
            let stage = dmap_stage(&cfg, xtr, exec)?;
            let tc = nystrom_extend_columns(&stage.model, xte, &stage.coordinates)?;
            diag.nystrom_mse = Some(nystrom_mse(&stage, set.intensities().view(), &train_idx, &test_idx, tc.view(), exec)?);
            diag.coordinate_cv_mse = stage.cv_mse.clone();
            let mut spec = cfg.yshaped.clone();
            if let Some(s) = &cfg.search.yshaped {
                let r = random_search(s, stage.train_coords.view(), ytr.view(), exec, |ps, xt, yt, xv| {
                    predict_size(&yae_fit(xt, yt, &apply_params(&spec, ps)?)?, xv)
                })?;
                spec = apply_params(&spec, &r.best)?;
                diag.search_best_cv_mse = Some(r.best_cv_mse);
                search = Some(r);
            }
            let model = yae_fit(stage.train_coords.view(), ytr.view(), &spec)?;
            diag.orthogonality = Some(orthogonality_score(&model, stage.train_coords.view())?);
            let rec = decode(&model, encode(&model, tc.view())?.view())?;
            let num = (&rec - &tc).mapv(|v| v * v).sum().sqrt();
            let den = tc.mapv(|v| v * v).sum().sqrt().max(f64::MIN_POSITIVE);
            diag.reconstruction_l2 = Some(num / den);
            loss = Some(LossHistory {
                columns: ["epoch", "recon", "pred", "orth", "total"].map(String::from).to_vec(),
                rows: model
                    .history()
                    .iter()
                    .map(|r| vec![r.epoch as f64, r.recon, r.pred, r.orth, r.total])
                    .collect(),
            });
            let pred = predict_size(&model, stage.train_coords.view())?;
            coordinates = stage.coordinates.clone();
            (
                Predictor::Yshaped {
                    dmap: stage.model,
                    coordinates: stage.coordinates,
                    model,
                },
                pred,
                1,
            )
        }
        Workflow::PlsDirect => {
            let (scaler, pls, cv) = pls_stage(&cfg, xtr, ytr.view())?;
            diag.pls_cv_mse = Some(cv);
            let pred = crate::regress::pls_predict(&pls, scaler.transform(xtr)?.view())?.index_axis_move(Axis(1), 0);
            let k = pls.n_components;
            (Predictor::Pls { scaler, pls }, pred, k)
        }
        Workflow::IhmPls => {
            let path = cfg.ihm.components.as_ref().expect("validated");
            let template = HardModel::new(load_components(path)?)?;
            let (ftr, fits_tr) = ihm_features(&template, &train, cfg.ihm.mode, &cfg.ihm.bounds)?;
            let (scaler, pls, cv) = pls_stage(&cfg, ftr.view(), ytr.view())?;
            diag.pls_cv_mse = Some(cv);
            let pred = crate::regress::pls_predict(&pls, scaler.transform(ftr.view())?.view())?.index_axis_move(Axis(1), 0);
            let (fte, fits_te) = ihm_features(&template, &test, cfg.ihm.mode, &cfg.ihm.bounds)?;
            test_pred = Some(
                crate::regress::pls_predict(&pls, scaler.transform(fte.view())?.view())?.index_axis_move(Axis(1), 0),
            );
            let mut by_sample: Vec<(usize, FitResult)> =
                train_idx.iter().copied().zip(fits_tr).chain(test_idx.iter().copied().zip(fits_te)).collect();
            by_sample.sort_by_key(|(i, _)| *i);
            let fits: Vec<FitResult> = by_sample.into_iter().map(|(_, f)| f).collect();
            diag.ihm_mean_sse = Some(fits.iter().map(|f| f.sse).sum::<f64>() / fits.len() as f64);
            diag.ihm_unconverged = Some(fits.iter().filter(|f| !f.converged).count());
            ihm_fits = Some((set.sample_ids().to_vec(), fits));
            let k = pls.n_components;
            let predictor = Predictor::IhmPls {
                template,
                mode: cfg.ihm.mode,
                bounds: cfg.ihm.bounds,
                scaler,
                pls,
            };
            (predictor, pred, k)
        }
    };
    let test_pred = match test_pred {
        Some(p) => p,
        None => predictor.predict(&test)?,
    };

    let as_slice = |a: &Array1<f64>| a.to_vec();
    let mtr = compute_metrics(&as_slice(&train_pred), &as_slice(&ytr))?;
    let mte = compute_metrics(&as_slice(&test_pred), &as_slice(&yte))?;
    let mut parity: Vec<(usize, ParityRow)> = Vec::with_capacity(set.n_samples());
    for (r, &i) in train_idx.iter().enumerate() {
        parity.push((
            i,
            ParityRow {
                sample_id: set.sample_ids()[i].clone(),
                actual_nm: ytr[r],
                predicted_nm: train_pred[r],
                split: SplitLabel::Train,
            },
        ));
    }
    for (r, &i) in test_idx.iter().enumerate() {
        parity.push((
            i,
            ParityRow {
                sample_id: set.sample_ids()[i].clone(),
                actual_nm: yte[r],
                predicted_nm: test_pred[r],
                split: SplitLabel::Test,
            },
        ));
    }
    parity.sort_by_key(|(i, _)| *i);
    let labels = two_means(set.intensities().view());
    let clusters: BTreeMap<String, usize> = set.sample_ids().iter().cloned().zip(labels).collect();

    let report = RunReport {
        workflow: cfg.workflow.id(),
        config_hash: cfg.hash()?,
        seed: cfg.seed,
        train: MetricsReport::new(&mtr, train.sample_ids()),
        test: MetricsReport::new(&mte, test.sample_ids()),
        split: SplitRecord {
            train: train_idx,
            test: test_idx,
        },
        latent_count,
        coordinates,
        diagnostics: diag,
        clusters,
        parity: parity.into_iter().map(|(_, r)| r).collect(),
        loss_history: loss,
    };
    Ok(RunOutcome {
        report,
        trained: TrainedPipeline {
            workflow: cfg.workflow,
            pretreatment: cfg.pretreatment.clone(),
            grid: set.grid().values().to_vec(),
            predictor,
        },
        search,
        alt_offline,
        ihm_fits,
    })
}
