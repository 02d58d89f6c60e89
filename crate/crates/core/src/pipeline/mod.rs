//! Config-driven experiment runner: data loading, the three manifold
//! workflows, the PLS and hard-model benchmarks, and report emission.

mod config;
mod report;
mod run;
mod synth;
mod trained;

pub use config::{
    AltRegressor, AltSection, CoordinateChoice, DataSource, DmapSection, ExperimentConfig, IhmSection, PlsSection,
    SearchSection, SecondSensor, SizeRegressor, SplitSection, Workflow,
};
pub use report::{
    emit_report, read_parity, read_predictions, write_predictions, Diagnostics, LossHistory, ParityRow, RunReport,
    SplitLabel, SplitRecord,
};
pub use run::{altdmaps_offline, dmap_stage, load_data, run_experiment, run_on_data, two_means, AltOffline, DmapStage, LoadedData, RunOutcome};
pub use synth::{load_secondary, synth_generate, write_synth, SynthData, SynthKind, SynthSpec};
pub use trained::{AltMap, Predictor, SizeHead, TrainedPipeline};
