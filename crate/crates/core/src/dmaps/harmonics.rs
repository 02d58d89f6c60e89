use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::kernel::KernelParams;
use super::model::{fit_spectrum, DmapModel};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::spectra::kfold_indices;

/// Geometric-Harmonics settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GhParams {
    pub kernel: KernelParams,
    /// Keep harmonics with `λ ≥ cutoff · λ_max`.
    pub cutoff: f64,
}

impl Default for GhParams {
    fn default() -> Self {
        Self {
            kernel: KernelParams::default(),
            cutoff: 1e-3,
        }
    }
}

/// A Geometric-Harmonics regressor from input coordinates to target values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GhModel {
    /// Diffusion map over the inputs, truncated to the retained harmonics.
    pub(crate) basis: DmapModel,
    pub(crate) targets: Array2<f64>,
    /// Projection coefficients, one row per harmonic.
    pub(crate) coefficients: Array2<f64>,
    pub(crate) cutoff: f64,
    pub(crate) training_residual: f64,
}

impl GhModel {
    pub fn basis(&self) -> &DmapModel {
        &self.basis
    }

    pub fn targets(&self) -> &Array2<f64> {
        &self.targets
    }

    pub fn coefficients(&self) -> &Array2<f64> {
        &self.coefficients
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn n_harmonics(&self) -> usize {
        self.coefficients.nrows()
    }

    /// Relative Frobenius error of the projection on the training points.
    pub fn training_residual(&self) -> f64 {
        self.training_residual
    }
}

pub fn gh_fit(
    inputs: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    params: &GhParams,
) -> Result<GhModel> {
    gh_fit_with(inputs, targets, params, Exec::default())
}

pub fn gh_fit_with(
    inputs: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    params: &GhParams,
    exec: Exec,
) -> Result<GhModel> {
    let n = inputs.nrows();
    if n < 2 {
        return Err(Error::InvalidInput(
            "geometric harmonics need at least 2 points".into(),
        ));
    }
    if targets.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} input points but {} target rows",
            targets.nrows()
        )));
    }
    if !(params.cutoff > 0.0) {
        return Err(Error::InvalidInput(format!(
            "cutoff must be positive, got {}",
            params.cutoff
        )));
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite target value".into()));
    }
    let mut basis = fit_spectrum(inputs, &params.kernel, n, exec)?;
    let lmax = basis.eigenvalues[0];
    let keep = basis
        .eigenvalues
        .iter()
        .take_while(|&&l| l >= params.cutoff * lmax && l > 0.0)
        .count();
    if keep == 0 {
        return Err(Error::Degenerate("no harmonic survives the cutoff".into()));
    }
    basis.eigenvalues = basis.eigenvalues.slice(ndarray::s![..keep]).to_owned();
    basis.eigenvectors = basis.eigenvectors.slice(ndarray::s![.., ..keep]).to_owned();

    // φ are D-orthonormal, so the projection weights by the degree.
    let weighted = &targets * &basis.degree.view().insert_axis(Axis(1));
    let coefficients = basis.eigenvectors.t().dot(&weighted);
    let recon = basis.eigenvectors.dot(&coefficients);
    let total: f64 = targets.iter().map(|v| v * v).sum();
    let err: f64 = (&recon - &targets).iter().map(|v| v * v).sum();
    let training_residual = if total > 0.0 {
        (err / total).sqrt()
    } else {
        err.sqrt()
    };
    Ok(GhModel {
        basis,
        targets: targets.to_owned(),
        coefficients,
        cutoff: params.cutoff,
        training_residual,
    })
}

pub fn gh_predict(model: &GhModel, coords: ArrayView2<f64>) -> Result<Array2<f64>> {
    if coords.ncols() != model.basis.dim() {
        return Err(Error::DimensionMismatch(format!(
            "model was fitted on dimension {}, got {}",
            model.basis.dim(),
            coords.ncols()
        )));
    }
    let k = model.basis.transition_rows(coords)?;
    let mut ext = k.dot(&model.basis.eigenvectors);
    for (c, l) in model.basis.eigenvalues.iter().enumerate() {
        ext.column_mut(c).mapv_inplace(|v| v / l);
    }
    Ok(ext.dot(&model.coefficients))
}

/// Settings for choosing coordinates by how well they reconstruct targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconstructionSelection {
    pub n_keep: usize,
    pub folds: usize,
    pub seed: u64,
    pub gh: GhParams,
}

impl Default for ReconstructionSelection {
    fn default() -> Self {
        Self {
            n_keep: 6,
            folds: 10,
            seed: 0,
            gh: GhParams::default(),
        }
    }
}

/// Chosen candidate columns with the cross-validated reconstruction MSE after
/// each greedy step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateSelection {
    pub indices: Vec<usize>,
    pub cv_mse: Vec<f64>,
}

/// Cross-validated MSE of reconstructing `targets` from `coords` with GH.
pub fn reconstruction_cv_mse(
    coords: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    folds: usize,
    seed: u64,
    gh: &GhParams,
) -> Result<f64> {
    let splits = kfold_indices(coords.nrows(), folds, seed)?;
    let mut sq = 0.0;
    let mut count = 0usize;
    for (train, test) in &splits {
        let m = gh_fit_with(
            coords.select(Axis(0), train).view(),
            targets.select(Axis(0), train).view(),
            gh,
            Exec::Sequential,
        )?;
        let pred = gh_predict(&m, coords.select(Axis(0), test).view())?;
        let truth = targets.select(Axis(0), test);
        sq += (&pred - &truth).iter().map(|v| v * v).sum::<f64>();
        count += truth.len();
    }
    Ok(sq / count as f64)
}

/// Greedy forward selection of candidate coordinate columns.
pub fn select_by_reconstruction(
    candidates: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    params: &ReconstructionSelection,
) -> Result<CoordinateSelection> {
    select_by_reconstruction_with(candidates, targets, params, Exec::default())
}

pub fn select_by_reconstruction_with(
    candidates: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    params: &ReconstructionSelection,
    exec: Exec,
) -> Result<CoordinateSelection> {
    let m = candidates.ncols();
    if params.n_keep == 0 || params.n_keep > m {
        return Err(Error::InvalidInput(format!(
            "cannot keep {} of {m} candidate coordinates",
            params.n_keep
        )));
    }
    let mut chosen: Vec<usize> = Vec::new();
    let mut cv_mse = Vec::new();
    while chosen.len() < params.n_keep {
        let pool: Vec<usize> = (0..m).filter(|c| !chosen.contains(c)).collect();
        let scores = exec.map(pool.len(), |p| {
            let mut cols = chosen.clone();
            cols.push(pool[p]);
            reconstruction_cv_mse(
                candidates.select(Axis(1), &cols).view(),
                targets,
                params.folds,
                params.seed,
                &params.gh,
            )
        });
        let mut best: Option<(usize, f64)> = None;
        for (p, s) in scores.into_iter().enumerate() {
            let s = s?;
            if best.is_none_or(|(_, b)| s < b) {
                best = Some((pool[p], s));
            }
        }
        let (c, s) = best.expect("nonempty pool");
        chosen.push(c);
        cv_mse.push(s);
    }
    Ok(CoordinateSelection {
        indices: chosen,
        cv_mse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize, lo: f64, hi: f64) -> Array2<f64> {
        Array2::from_shape_fn((n, 1), |(i, _)| lo + (hi - lo) * i as f64 / (n - 1) as f64)
    }

    #[test]
    fn constant_target_is_constant_everywhere() {
        let x = line(40, 0.0, 1.0);
        let f = Array2::from_elem((40, 2), 3.5);
        let m = gh_fit(x.view(), f.view(), &GhParams::default()).unwrap();
        let q = line(17, 0.05, 0.93);
        let p = gh_predict(&m, q.view()).unwrap();
        assert!(p.iter().all(|v| (v - 3.5).abs() < 1e-9));
    }

    #[test]
    fn linear_target_generalizes() {
        let x = line(201, 0.0, 1.0);
        let f = x.mapv(|v| 2.0 * v - 0.3);
        let params = GhParams {
            kernel: KernelParams::with_epsilon(0.1),
            cutoff: 1e-3,
        };
        let train: Vec<usize> = (0..201).step_by(2).collect();
        let test: Vec<usize> = (1..201).step_by(2).collect();
        let m = gh_fit(
            x.select(Axis(0), &train).view(),
            f.select(Axis(0), &train).view(),
            &params,
        )
        .unwrap();
        let pred = gh_predict(&m, x.select(Axis(0), &test).view()).unwrap();
        let truth = f.select(Axis(0), &test);
        let rel =
            (&pred - &truth).mapv(|v| v * v).sum().sqrt() / truth.mapv(|v| v * v).sum().sqrt();
        assert!(rel < 1e-2, "relative error {rel}");
    }

    #[test]
    fn training_inputs_reproduce_within_residual() {
        let x = line(60, -1.0, 2.0);
        let f = x.mapv(|v| (3.0 * v).sin());
        let m = gh_fit(x.view(), f.view(), &GhParams::default()).unwrap();
        let p = gh_predict(&m, x.view()).unwrap();
        let rel = (&p - &f).mapv(|v| v * v).sum().sqrt() / f.mapv(|v| v * v).sum().sqrt();
        assert!(
            (rel - m.training_residual()).abs() < 1e-8,
            "{rel} vs {}",
            m.training_residual()
        );
    }

    #[test]
    fn selection_prefers_informative_column() {
        let n = 60;
        let t = line(n, 0.0, 1.0);
        let mut cand = Array2::zeros((n, 3));
        for i in 0..n {
            cand[[i, 0]] = ((i * 7919) % 61) as f64 / 61.0;
            cand[[i, 1]] = t[[i, 0]];
            cand[[i, 2]] = ((i * 104729) % 59) as f64 / 59.0;
        }
        let targets = t.mapv(|v| (2.0 * v).cos());
        let sel = select_by_reconstruction(
            cand.view(),
            targets.view(),
            &ReconstructionSelection {
                n_keep: 1,
                folds: 5,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(sel.indices, vec![1]);
    }
}
