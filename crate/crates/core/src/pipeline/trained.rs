use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::conformal::{predict_size, YShapedModel};
use crate::dmaps::{gh_predict, nystrom_extend_columns, DmapModel, GhModel};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::ihm::{extract_parameters, fit_many, FitBounds, FitMode, FitResult, HardModel};
use crate::persist::{load_json, save_json};
use crate::regress::{gbt_predict, mlp_predict, pls_predict, GbtModel, MlpModel, PlsModel};
use crate::spectra::{apply_pretreatment, ColumnScaler, PretreatmentSpec, SpectraSet};

use super::config::Workflow;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SizeHead {
    Nn { model: MlpModel },
    Gbt { model: GbtModel },
}

impl SizeHead {
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        match self {
            SizeHead::Nn { model } => mlp_predict(model, x),
            SizeHead::Gbt { model } => gbt_predict(model, x),
        }
    }
}

/// Map from DMAP coordinates to alternating-diffusion coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AltMap {
    Gh { model: GhModel },
    /// One ensemble per Ψ column.
    Gbt { models: Vec<GbtModel> },
}

impl AltMap {
    pub fn predict(&self, coords: ArrayView2<f64>) -> Result<Array2<f64>> {
        match self {
            AltMap::Gh { model } => gh_predict(model, coords),
            AltMap::Gbt { models } => {
                let mut out = Array2::zeros((coords.nrows(), models.len()));
                for (k, m) in models.iter().enumerate() {
                    out.column_mut(k).assign(&gbt_predict(m, coords)?);
                }
                Ok(out)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Predictor {
    Direct {
        dmap: DmapModel,
        coordinates: Vec<usize>,
        head: SizeHead,
    },
    Alt {
        dmap: DmapModel,
        coordinates: Vec<usize>,
        alt_map: AltMap,
        head: SizeHead,
    },
    Yshaped {
        dmap: DmapModel,
        coordinates: Vec<usize>,
        model: YShapedModel,
    },
    Pls {
        scaler: ColumnScaler,
        pls: PlsModel,
    },
    IhmPls {
        template: HardModel,
        mode: FitMode,
        bounds: FitBounds,
        scaler: ColumnScaler,
        pls: PlsModel,
    },
}

/// Everything needed to predict sizes for new raw spectra.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedPipeline {
    pub workflow: Workflow,
    pub pretreatment: PretreatmentSpec,
    /// Grid after pretreatment; new spectra must land on it exactly.
    pub grid: Vec<f64>,
    pub predictor: Predictor,
}

pub(crate) fn ihm_features(
    template: &HardModel,
    set: &SpectraSet,
    mode: FitMode,
    bounds: &FitBounds,
) -> Result<(Array2<f64>, Vec<FitResult>)> {
    let fits = fit_many(template, set, mode, bounds, Exec::default())?;
    let p = template.n_free_parameters(mode);
    let mut x = Array2::zeros((fits.len(), p));
    for (i, f) in fits.iter().enumerate() {
        x.row_mut(i).assign(&Array1::from(extract_parameters(&f.model, mode)));
    }
    Ok((x, fits))
}

impl Predictor {
    /// Sizes for already pretreated spectra.
    pub fn predict(&self, set: &SpectraSet) -> Result<Array1<f64>> {
        let x = set.intensities().view();
        match self {
            Predictor::Direct {
                dmap,
                coordinates,
                head,
            } => head.predict(nystrom_extend_columns(dmap, x, coordinates)?.view()),
            Predictor::Alt {
                dmap,
                coordinates,
                alt_map,
                head,
            } => {
                let c = nystrom_extend_columns(dmap, x, coordinates)?;
                head.predict(alt_map.predict(c.view())?.view())
            }
            Predictor::Yshaped {
                dmap,
                coordinates,
                model,
            } => predict_size(model, nystrom_extend_columns(dmap, x, coordinates)?.view()),
            Predictor::Pls { scaler, pls } => {
                Ok(pls_predict(pls, scaler.transform(x)?.view())?.index_axis_move(Axis(1), 0))
            }
            Predictor::IhmPls {
                template,
                mode,
                bounds,
                scaler,
                pls,
            } => {
                let (f, _) = ihm_features(template, set, *mode, bounds)?;
                Ok(pls_predict(pls, scaler.transform(f.view())?.view())?.index_axis_move(Axis(1), 0))
            }
        }
    }
}

impl TrainedPipeline {
    /// Pretreats raw spectra and predicts their sizes.
    pub fn predict(&self, raw: &SpectraSet) -> Result<Array1<f64>> {
        let set = apply_pretreatment(raw, &self.pretreatment)?;
        if set.grid().values() != self.grid.as_slice() {
            return Err(Error::DimensionMismatch(format!(
                "pretreated grid has {} points, the model expects {} on the training grid",
                set.n_wavenumbers(),
                self.grid.len()
            )));
        }
        self.predictor.predict(&set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_json("pipeline", self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        load_json("pipeline", path)
    }
}
