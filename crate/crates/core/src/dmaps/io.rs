use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::model::DmapModel;
use crate::error::{Error, Result};

pub const DMAP_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct DmapMeta {
    format: String,
    format_version: u32,
    epsilon: f64,
    density_normalize: bool,
    n_points: usize,
    dim: usize,
    eigenvalues: Vec<f64>,
    density_sums: Option<Vec<f64>>,
    degree: Vec<f64>,
}

/// Writes a headerless numeric CSV.
pub fn write_matrix(m: &Array2<f64>, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?;
    for row in m.outer_iter() {
        w.write_record(row.iter().map(|v| v.to_string()))
            .map_err(|e| Error::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a headerless numeric CSV with `ncols` columns.
pub fn read_matrix(path: &Path, ncols: usize) -> Result<Array2<f64>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?;
    let mut data = Vec::new();
    let mut rows = 0;
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Csv(e.to_string()))?;
        if rec.len() != ncols {
            return Err(Error::Csv(format!(
                "{} row {}: expected {ncols} fields, got {}",
                path.display(),
                line + 1,
                rec.len()
            )));
        }
        for f in rec.iter() {
            data.push(f.trim().parse::<f64>().map_err(|_| {
                Error::Csv(format!(
                    "{} row {}: bad number {f:?}",
                    path.display(),
                    line + 1
                ))
            })?);
        }
        rows += 1;
    }
    Ok(Array2::from_shape_vec((rows, ncols), data).expect("shape"))
}

/// Saves a model as `dmap.json` plus `ref_points.csv` and `eigenvectors.csv`
/// inside `dir`.
pub fn save_dmap(model: &DmapModel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = DmapMeta {
        format: "dmap".into(),
        format_version: DMAP_FORMAT_VERSION,
        epsilon: model.epsilon,
        density_normalize: model.density_normalize,
        n_points: model.n_points(),
        dim: model.dim(),
        eigenvalues: model.eigenvalues.to_vec(),
        density_sums: model.density_sums.as_ref().map(|p| p.to_vec()),
        degree: model.degree.to_vec(),
    };
    let path = dir.join("dmap.json");
    fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&path, e))?;
    write_matrix(&model.ref_points, &dir.join("ref_points.csv"))?;
    write_matrix(&model.eigenvectors, &dir.join("eigenvectors.csv"))
}

pub fn load_dmap(dir: &Path) -> Result<DmapModel> {
    let path = dir.join("dmap.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: DmapMeta = serde_json::from_str(&text)?;
    if meta.format != "dmap" || meta.format_version != DMAP_FORMAT_VERSION {
        return Err(Error::InvalidInput(format!(
            "unsupported model format {} v{}",
            meta.format, meta.format_version
        )));
    }
    let ref_points = read_matrix(&dir.join("ref_points.csv"), meta.dim)?;
    let eigenvectors = read_matrix(&dir.join("eigenvectors.csv"), meta.eigenvalues.len())?;
    let n = meta.n_points;
    let sums_ok = meta.density_sums.as_ref().is_none_or(|p| p.len() == n);
    if ref_points.nrows() != n || eigenvectors.nrows() != n || meta.degree.len() != n || !sums_ok {
        return Err(Error::InvalidInput(format!(
            "model files in {} disagree on the number of points",
            dir.display()
        )));
    }
    if meta.density_sums.is_some() != meta.density_normalize {
        return Err(Error::InvalidInput(
            "density sums do not match the density flag".into(),
        ));
    }
    Ok(DmapModel {
        ref_points,
        epsilon: meta.epsilon,
        density_normalize: meta.density_normalize,
        eigenvalues: Array1::from(meta.eigenvalues),
        eigenvectors,
        density_sums: meta.density_sums.map(Array1::from),
        degree: Array1::from(meta.degree),
    })
}
