//! Command-line driver: synthetic data, pretreatment, diffusion maps,
//! experiment runs, prediction and evaluation.
//!
//! Exit codes: 0 success, 2 configuration, input or i/o error, 3 numeric
//! failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use raman_manifold::dmaps::{load_dmap, nystrom_extend_columns, save_dmap, write_matrix};
use raman_manifold::error::{Error, Result};
use raman_manifold::exec::Exec;
use raman_manifold::persist::{load_json, save_json};
use raman_manifold::pipeline::{
    altdmaps_offline, dmap_stage, emit_report, load_data, read_predictions, synth_generate, write_predictions,
    write_synth, DataSource, ExperimentConfig, RunReport, TrainedPipeline, Workflow,
};
use raman_manifold::spectra::{
    apply_pretreatment, compute_metrics, load_sizes, load_spectra, save_sizes, save_spectra, PretreatmentSpec,
    SpectraSet,
};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "raman-manifold", version, about = "Manifold learning for size prediction from spectra")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; falls back to the config's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generates the synthetic dataset described by the config's data section.
    Synth(Common),
    /// Writes pretreated spectra (and sizes when present).
    Preprocess(Common),
    /// Diffusion maps on pretreated spectra.
    #[command(subcommand)]
    Dmap(DmapCommand),
    /// Alternating diffusion maps.
    #[command(subcommand)]
    Alt(AltCommand),
    /// Runs a full workflow and writes the report and trained model.
    Train {
        /// Workflow id, e.g. `yshaped` or `altdmaps_gbt_nn`; overrides the config.
        workflow: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Predicts sizes for new raw spectra with a trained model.
    Predict {
        /// `pipeline.json`, or a run directory containing `model/pipeline.json`.
        #[arg(long)]
        model: PathBuf,
        /// Spectra CSV.
        #[arg(long)]
        input: PathBuf,
        /// Predictions CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Scores a predictions CSV against a sizes CSV.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        sizes: PathBuf,
        /// Writes the metrics as JSON here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Checks a run's stored metrics against its parity data and prints them.
    Report {
        /// Run directory containing `report.json`.
        #[arg(long)]
        run: PathBuf,
        /// Re-emits the report files into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum DmapCommand {
    /// Fits diffusion maps on all samples and selects coordinates.
    Fit(Common),
    /// Nyström-extends a fitted map to new raw spectra.
    Extend {
        /// Directory written by `dmap fit`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Coordinates CSV (headerless, one row per spectrum).
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum AltCommand {
    /// Offline steps on all samples: DMAPs, then alternating diffusion.
    Fit(Common),
}

/// What `dmap extend` needs to reproduce the inputs of `dmap fit`.
#[derive(Serialize, Deserialize)]
struct DmapManifest {
    pretreatment: PretreatmentSpec,
    grid: Vec<f64>,
    coordinates: Vec<usize>,
    sample_ids: Vec<String>,
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn out_dir(c: &Common, cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = c
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set `output`".into()))?;
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    Ok(dir)
}

fn pretreated(cfg: &ExperimentConfig) -> Result<SpectraSet> {
    cfg.validate()?;
    apply_pretreatment(&load_data(&cfg.data)?.primary, &cfg.pretreatment)
}

fn synth(c: &Common) -> Result<()> {
    let mut cfg = load_config(c)?;
    let DataSource::Synth(spec) = &mut cfg.data else {
        return Err(Error::Config("`synth` needs a synthetic data source".into()));
    };
    if let Some(s) = c.seed {
        spec.seed = s;
    }
    let data = synth_generate(spec)?;
    let dir = out_dir(c, &cfg)?;
    write_synth(&data, &dir)?;
    println!("wrote {} samples to {}", data.primary.n_samples(), dir.display());
    Ok(())
}

fn preprocess(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    let set = pretreated(&cfg)?;
    let dir = out_dir(c, &cfg)?;
    save_spectra(&set, &dir.join("spectra.csv"))?;
    if set.sizes().is_some() {
        save_sizes(&set, &dir.join("sizes.csv"))?;
    }
    println!("{} spectra x {} wavenumbers -> {}", set.n_samples(), set.grid().len(), dir.display());
    Ok(())
}

fn dmap_fit(c: &Common) -> Result<()> {
    let cfg = load_config(c)?.resolved();
    let set = pretreated(&cfg)?;
    let stage = dmap_stage(&cfg, set.intensities().view(), Exec::default())?;
    let dir = out_dir(c, &cfg)?;
    save_dmap(&stage.model, &dir.join("dmap"))?;
    write_matrix(&stage.train_coords, &dir.join("coordinates.csv"))?;
    let manifest = DmapManifest {
        pretreatment: cfg.pretreatment.clone(),
        grid: set.grid().values().to_vec(),
        coordinates: stage.coordinates.clone(),
        sample_ids: set.sample_ids().to_vec(),
    };
    save_json("dmap_manifest", &manifest, &dir.join("manifest.json"))?;
    println!("eigenvalues {:?}", stage.model.eigenvalues());
    println!("coordinates {:?}", stage.coordinates);
    Ok(())
}

fn dmap_extend(model: &Path, input: &Path, out: &Path) -> Result<()> {
    let manifest: DmapManifest = load_json("dmap_manifest", &model.join("manifest.json"))?;
    let dmap = load_dmap(&model.join("dmap"))?;
    let set = apply_pretreatment(&load_spectra(input, None)?, &manifest.pretreatment)?;
    if set.grid().values() != manifest.grid.as_slice() {
        return Err(Error::DimensionMismatch(
            "pretreated input grid differs from the fitted map's grid".into(),
        ));
    }
    let coords = nystrom_extend_columns(&dmap, set.intensities().view(), &manifest.coordinates)?;
    write_matrix(&coords, out)?;
    println!("extended {} spectra onto coordinates {:?}", set.n_samples(), manifest.coordinates);
    Ok(())
}

fn alt_fit(c: &Common) -> Result<()> {
    let cfg = load_config(c)?.resolved();
    cfg.validate()?;
    let data = load_data(&cfg.data)?;
    let set = apply_pretreatment(&data.primary, &cfg.pretreatment)?;
    let off = altdmaps_offline(&cfg, &set, data.secondary.as_ref().map(|s| s.view()), Exec::default())?;
    let dir = out_dir(c, &cfg)?;
    off.save(&dir)?;
    println!("alt eigenvalues {:?}", off.alt.eigenvalues());
    println!("selected indices {:?}", off.indices);
    Ok(())
}

fn train(workflow: Option<&str>, c: &Common) -> Result<()> {
    let mut cfg = load_config(c)?;
    if let Some(w) = workflow {
        cfg.workflow = Workflow::parse(w)?;
    }
    let dir = out_dir(c, &cfg)?;
    let outcome = raman_manifold::pipeline::run_experiment(&cfg)?;
    outcome.save(&dir)?;
    print_report(&outcome.report);
    Ok(())
}

fn predict(model: &Path, input: &Path, out: &Path) -> Result<()> {
    let path = if model.is_dir() {
        model.join("model").join("pipeline.json")
    } else {
        model.to_path_buf()
    };
    let trained = TrainedPipeline::load(&path)?;
    let set = load_spectra(input, None)?;
    let pred = trained.predict(&set)?;
    write_predictions(set.sample_ids(), pred.as_slice().expect("contiguous"), out)?;
    println!("predicted {} samples with {}", pred.len(), trained.workflow.id());
    Ok(())
}

fn evaluate(predictions: &Path, sizes: &Path, out: Option<&Path>) -> Result<()> {
    let preds = read_predictions(predictions)?;
    let actual: std::collections::BTreeMap<String, f64> = load_sizes(sizes)?.into_iter().collect();
    let mut p = Vec::with_capacity(preds.len());
    let mut a = Vec::with_capacity(preds.len());
    for (id, v) in &preds {
        let y = actual
            .get(id)
            .ok_or_else(|| Error::InvalidInput(format!("no size for sample {id:?}")))?;
        p.push(*v);
        a.push(*y);
    }
    let m = compute_metrics(&p, &a)?;
    let json = serde_json::json!({"n": p.len(), "r2": m.r2, "rmse_nm": m.rmse, "mape_pct": m.mape});
    let text = serde_json::to_string_pretty(&json)? + "\n";
    print!("{text}");
    if let Some(path) = out {
        std::fs::write(path, text).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
    }
    Ok(())
}

fn report(run: &Path, out: Option<&Path>) -> Result<()> {
    let r = RunReport::load(&run.join("report.json"))?;
    let (train, test) = r.recompute_metrics()?;
    for (name, stored, fresh) in [("train", &r.train, &train), ("test", &r.test, &test)] {
        let dev = [
            (stored.r2 - fresh.r2).abs(),
            (stored.rmse_nm - fresh.rmse_nm).abs(),
            (stored.mape_pct - fresh.mape_pct).abs(),
        ];
        if dev.iter().any(|d| d.is_nan() || *d > 1e-10) {
            return Err(Error::InvalidInput(format!(
                "{name} metrics in report.json disagree with its parity data"
            )));
        }
    }
    print_report(&r);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        emit_report(&r, dir)?;
    }
    Ok(())
}

fn print_report(r: &RunReport) {
    println!("workflow {}  config {}  seed {}", r.workflow, &r.config_hash[..12.min(r.config_hash.len())], r.seed);
    println!("{:<6} {:>4} {:>9} {:>10} {:>9}", "split", "n", "r2", "rmse_nm", "mape_pct");
    for (name, m, n) in [("train", &r.train, r.split.train.len()), ("test", &r.test, r.split.test.len())] {
        println!("{name:<6} {n:>4} {:>9.4} {:>10.3} {:>9.3}", m.r2, m.rmse_nm, m.mape_pct);
    }
    println!("latent variables {}", r.latent_count);
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(c) => synth(&c),
        Command::Preprocess(c) => preprocess(&c),
        Command::Dmap(DmapCommand::Fit(c)) => dmap_fit(&c),
        Command::Dmap(DmapCommand::Extend { model, input, out }) => dmap_extend(&model, &input, &out),
        Command::Alt(AltCommand::Fit(c)) => alt_fit(&c),
        Command::Train { workflow, common } => train(workflow.as_deref(), &common),
        Command::Predict { model, input, out } => predict(&model, &input, &out),
        Command::Evaluate { predictions, sizes, out } => evaluate(&predictions, &sizes, out.as_deref()),
        Command::Report { run, out } => report(&run, out.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}
