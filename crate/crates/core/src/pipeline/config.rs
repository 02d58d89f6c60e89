use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::conformal::YShapedSpec;
use crate::dmaps::{GhParams, KernelParams, LlrParams, ReconstructionSelection};
use crate::error::{Error, Result};
use crate::ihm::{FitBounds, FitMode};
use crate::regress::{GbtSpec, MlpSpec, SearchSpec};
use crate::spectra::PretreatmentSpec;

use super::synth::SynthSpec;

/// Where the spectra come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source")]
pub enum DataSource {
    Files {
        spectra: PathBuf,
        #[serde(default)]
        sizes: Option<PathBuf>,
        /// Second observation matrix for sensor-pair runs.
        #[serde(default)]
        secondary: Option<PathBuf>,
    },
    Synth(SynthSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AltRegressor {
    /// Geometric Harmonics on the DMAP coordinates.
    Gh,
    Gbt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeRegressor {
    Nn,
    Gbt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Workflow {
    DirectDmapsNn,
    DirectDmapsGbt,
    Altdmaps {
        alt_regressor: AltRegressor,
        size_regressor: SizeRegressor,
    },
    Yshaped,
    PlsDirect,
    IhmPls,
}

impl Workflow {
    pub fn id(&self) -> String {
        match self {
            Workflow::DirectDmapsNn => "direct_dmaps_nn".into(),
            Workflow::DirectDmapsGbt => "direct_dmaps_gbt".into(),
            Workflow::Altdmaps {
                alt_regressor,
                size_regressor,
            } => format!(
                "altdmaps_{}_{}",
                match alt_regressor {
                    AltRegressor::Gh => "gh",
                    AltRegressor::Gbt => "gbt",
                },
                match size_regressor {
                    SizeRegressor::Nn => "nn",
                    SizeRegressor::Gbt => "gbt",
                }
            ),
            Workflow::Yshaped => "yshaped".into(),
            Workflow::PlsDirect => "pls_direct".into(),
            Workflow::IhmPls => "ihm_pls".into(),
        }
    }

    /// Parses a workflow id as printed by [`Workflow::id`]; plain
    /// `altdmaps` means the GH/NN pairing.
    pub fn parse(s: &str) -> Result<Self> {
        let w = match s {
            "direct_dmaps_nn" => Workflow::DirectDmapsNn,
            "direct_dmaps_gbt" => Workflow::DirectDmapsGbt,
            "yshaped" => Workflow::Yshaped,
            "pls_direct" => Workflow::PlsDirect,
            "ihm_pls" => Workflow::IhmPls,
            "altdmaps" => Workflow::Altdmaps {
                alt_regressor: AltRegressor::Gh,
                size_regressor: SizeRegressor::Nn,
            },
            other => {
                let parts: Vec<&str> = other.split('_').collect();
                let bad = || Error::Config(format!("unknown workflow {other:?}"));
                if parts.len() != 3 || parts[0] != "altdmaps" {
                    return Err(bad());
                }
                let alt_regressor = match parts[1] {
                    "gh" => AltRegressor::Gh,
                    "gbt" => AltRegressor::Gbt,
                    _ => return Err(bad()),
                };
                let size_regressor = match parts[2] {
                    "nn" => SizeRegressor::Nn,
                    "gbt" => SizeRegressor::Gbt,
                    _ => return Err(bad()),
                };
                Workflow::Altdmaps {
                    alt_regressor,
                    size_regressor,
                }
            }
        };
        Ok(w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum CoordinateChoice {
    /// Greedy choice by cross-validated GH reconstruction of the spectra.
    Reconstruction(ReconstructionSelection),
    /// Eigenvector indices (1 is the first nontrivial one).
    Fixed { indices: Vec<usize> },
}

impl Default for CoordinateChoice {
    fn default() -> Self {
        CoordinateChoice::Reconstruction(ReconstructionSelection::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DmapSection {
    pub kernel: KernelParams,
    /// Eigenpairs kept, including the trivial one.
    pub n_eig: usize,
    pub coordinates: CoordinateChoice,
}

impl Default for DmapSection {
    fn default() -> Self {
        Self {
            kernel: KernelParams::default(),
            n_eig: 16,
            coordinates: CoordinateChoice::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecondSensor {
    /// The target sizes, as a one-column observation.
    #[default]
    Sizes,
    /// The secondary observation matrix of the data source.
    Secondary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AltSection {
    pub kernel1: KernelParams,
    pub kernel2: KernelParams,
    pub n_eig: usize,
    pub llr: LlrParams,
    /// Sensor 1 is always the pretreated spectra.
    pub sensor2: SecondSensor,
    /// Ψ columns used downstream; defaults to the LLR selection.
    pub indices: Option<Vec<usize>>,
    pub gh: GhParams,
}

impl Default for AltSection {
    fn default() -> Self {
        Self {
            kernel1: KernelParams::default(),
            kernel2: KernelParams::default(),
            n_eig: 10,
            llr: LlrParams::default(),
            sensor2: SecondSensor::default(),
            indices: None,
            gh: GhParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlsSection {
    pub k_max: usize,
    pub folds: usize,
}

impl Default for PlsSection {
    fn default() -> Self {
        Self { k_max: 10, folds: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IhmSection {
    /// Component-model JSON file.
    pub components: Option<PathBuf>,
    pub mode: FitMode,
    pub bounds: FitBounds,
}

impl Default for IhmSection {
    fn default() -> Self {
        Self {
            components: None,
            mode: FitMode::Medium,
            bounds: FitBounds::default(),
        }
    }
}

/// Optional random searches for the size regressors and the Y-shaped autoencoder.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSection {
    pub mlp: Option<SearchSpec>,
    pub gbt: Option<SearchSpec>,
    pub yshaped: Option<SearchSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSection {
    pub n_test: usize,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self { n_test: 7 }
    }
}

/// One experiment: data, pretreatment, workflow and every method setting.
///
/// `seed` drives the train/test split, the folds and all method seeds;
/// the seeds inside the method sections are overwritten from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    #[serde(default)]
    pub pretreatment: PretreatmentSpec,
    pub workflow: Workflow,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub dmaps: DmapSection,
    #[serde(default)]
    pub alt: AltSection,
    #[serde(default)]
    pub mlp: MlpSpec,
    #[serde(default)]
    pub gbt: GbtSpec,
    #[serde(default)]
    pub yshaped: YShapedSpec,
    #[serde(default)]
    pub pls: PlsSection,
    #[serde(default)]
    pub ihm: IhmSection,
    #[serde(default)]
    pub search: SearchSection,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config; relative data paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DataSource::Files {
            spectra,
            sizes,
            secondary,
        } = &mut cfg.data
        {
            fix(spectra);
            sizes.iter_mut().for_each(fix);
            secondary.iter_mut().for_each(fix);
        }
        cfg.ihm.components.iter_mut().for_each(fix);
        Ok(cfg)
    }

    /// Pushes `seed` into every method section.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        let s = c.seed;
        c.mlp.seed = s;
        c.gbt.seed = s;
        c.yshaped.seed = s;
        if let CoordinateChoice::Reconstruction(r) = &mut c.dmaps.coordinates {
            r.seed = s;
        }
        if let Some(sp) = &mut c.search.mlp {
            sp.seed = s;
        }
        if let Some(sp) = &mut c.search.gbt {
            sp.seed = s;
        }
        if let Some(sp) = &mut c.search.yshaped {
            sp.seed = s;
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.split.n_test == 0 {
            return Err(Error::Config("test split must not be empty".into()));
        }
        if self.dmaps.n_eig < 2 {
            return Err(Error::Config("dmaps.n_eig must be at least 2".into()));
        }
        if let CoordinateChoice::Fixed { indices } = &self.dmaps.coordinates {
            if indices.is_empty() || indices.iter().any(|&k| k == 0 || k >= self.dmaps.n_eig) {
                return Err(Error::Config(format!(
                    "fixed coordinates {indices:?} must lie in 1..{}",
                    self.dmaps.n_eig
                )));
            }
        }
        if self.workflow == Workflow::IhmPls && self.ihm.components.is_none() {
            return Err(Error::Config("ihm_pls needs ihm.components".into()));
        }
        Ok(())
    }

    /// SHA-256 of the resolved config's JSON, hex encoded.
    pub fn hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(&self.resolved())?;
        Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
    }
}
