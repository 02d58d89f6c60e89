use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::fix_signs;
use super::kernel::{
    cross_sq_distances, density_normalize_with_sums, gaussian_kernel, markov_normalize_with_sums,
    pairwise_sq_distances_with, KernelParams,
};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::symmetric_eigen;

/// Eigenpairs with a smaller eigenvalue are not extended out of sample.
pub const NYSTROM_MIN_EIGENVALUE: f64 = 1e-6;

/// A fitted diffusion map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmapModel {
    pub(crate) ref_points: Array2<f64>,
    pub(crate) epsilon: f64,
    pub(crate) density_normalize: bool,
    pub(crate) eigenvalues: Array1<f64>,
    pub(crate) eigenvectors: Array2<f64>,
    /// Diagonal of `P` (only with density normalization).
    pub(crate) density_sums: Option<Array1<f64>>,
    /// Diagonal of `D`.
    pub(crate) degree: Array1<f64>,
}

/// Fits a diffusion map keeping the top `n_eig` eigenpairs (including the
/// trivial one).
pub fn fit_dmaps(x: ArrayView2<f64>, params: &KernelParams, n_eig: usize) -> Result<DmapModel> {
    fit_dmaps_with(x, params, n_eig, Exec::default())
}

pub fn fit_dmaps_with(
    x: ArrayView2<f64>,
    params: &KernelParams,
    n_eig: usize,
    exec: Exec,
) -> Result<DmapModel> {
    let n = x.nrows();
    if n_eig < 2 || n <= n_eig {
        return Err(Error::InvalidInput(format!(
            "need N > n_eig >= 2, got N = {n}, n_eig = {n_eig}"
        )));
    }
    fit_spectrum(x, params, n_eig, exec)
}

/// Like [`fit_dmaps`] but allows keeping all `N` eigenpairs.
pub(crate) fn fit_spectrum(
    x: ArrayView2<f64>,
    params: &KernelParams,
    count: usize,
    exec: Exec,
) -> Result<DmapModel> {
    let d2 = pairwise_sq_distances_with(x, exec)?;
    let epsilon = params.resolve_epsilon(d2.view())?;
    let w = gaussian_kernel(d2.view(), epsilon)?;
    drop(d2);
    let (w, density_sums) = if params.density_normalize {
        let (wt, p) = density_normalize_with_sums(w.view())?;
        (wt, Some(p))
    } else {
        (w, None)
    };
    let degree = w.sum_axis(Axis(1));
    if let Some(i) = degree.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::Degenerate(format!(
            "kernel row {i} sums to {}",
            degree[i]
        )));
    }
    let inv_sqrt = degree.mapv(|v| 1.0 / v.sqrt());
    let mut sym = w;
    for ((i, j), v) in sym.indexed_iter_mut() {
        *v *= inv_sqrt[i] * inv_sqrt[j];
    }
    // Guard against asymmetry from rounding.
    let n = sym.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let m = 0.5 * (sym[[i, j]] + sym[[j, i]]);
            sym[[i, j]] = m;
            sym[[j, i]] = m;
        }
    }
    let (values, vectors) = symmetric_eigen(sym.view())?;
    let count = count.min(n);
    let mut phi = vectors.slice(s![.., ..count]).to_owned();
    phi *= &inv_sqrt.view().insert_axis(Axis(1));
    fix_signs(&mut phi);
    Ok(DmapModel {
        ref_points: x.to_owned(),
        epsilon,
        density_normalize: params.density_normalize,
        eigenvalues: Array1::from(values[..count].to_vec()),
        eigenvectors: phi,
        density_sums,
        degree,
    })
}

impl DmapModel {
    pub fn ref_points(&self) -> &Array2<f64> {
        &self.ref_points
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Kernel parameters with the resolved bandwidth.
    pub fn params(&self) -> KernelParams {
        KernelParams {
            epsilon: Some(self.epsilon),
            density_normalize: self.density_normalize,
        }
    }

    pub fn eigenvalues(&self) -> &Array1<f64> {
        &self.eigenvalues
    }

    /// Columns `φ₀ … φ_{m−1}`.
    pub fn eigenvectors(&self) -> &Array2<f64> {
        &self.eigenvectors
    }

    /// Nontrivial coordinates `φ₁ … φ_{m−1}`.
    pub fn coordinates(&self) -> Array2<f64> {
        self.eigenvectors.slice(s![.., 1..]).to_owned()
    }

    /// Selected eigenvector columns.
    pub fn columns(&self, indices: &[usize]) -> Result<Array2<f64>> {
        let m = self.eigenvectors.ncols();
        if let Some(&k) = indices.iter().find(|&&k| k >= m) {
            return Err(Error::InvalidInput(format!(
                "eigenvector index {k} out of range (model keeps {m})"
            )));
        }
        Ok(self.eigenvectors.select(Axis(1), indices))
    }

    pub fn n_points(&self) -> usize {
        self.ref_points.nrows()
    }

    pub fn dim(&self) -> usize {
        self.ref_points.ncols()
    }

    pub fn density_sums(&self) -> Option<&Array1<f64>> {
        self.density_sums.as_ref()
    }

    pub fn degree(&self) -> &Array1<f64> {
        &self.degree
    }

    /// Rebuilds the training Markov matrix from the stored normalization.
    pub fn markov_matrix(&self) -> Result<Array2<f64>> {
        self.transition_rows_with(self.ref_points.view(), Exec::default())
    }

    /// Markov rows of new points against the reference set, normalized with
    /// the training conventions.
    pub fn transition_rows(&self, x_new: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.transition_rows_with(x_new, Exec::default())
    }

    pub fn transition_rows_with(&self, x_new: ArrayView2<f64>, exec: Exec) -> Result<Array2<f64>> {
        let d2 = cross_sq_distances(x_new, self.ref_points.view(), exec)?;
        let mut w = gaussian_kernel(d2.view(), self.epsilon)?;
        if let Some(p) = &self.density_sums {
            let p_new = w.sum_axis(Axis(1));
            for (i, mut row) in w.outer_iter_mut().enumerate() {
                if !(p_new[i] > 0.0) {
                    return Err(Error::Degenerate(format!(
                        "point {i} is too far from the reference set for this bandwidth"
                    )));
                }
                for (j, v) in row.iter_mut().enumerate() {
                    *v /= p_new[i] * p[j];
                }
            }
        }
        let (k, _) = markov_normalize_with_sums(w.view()).map_err(|_| {
            Error::Degenerate(
                "a query point is too far from the reference set for this bandwidth".into(),
            )
        })?;
        Ok(k)
    }

    /// Largest `‖Kφ_k − λ_kφ_k‖ / ‖φ_k‖` over the retained pairs.
    pub fn max_eigen_residual(&self) -> Result<f64> {
        let k = self.markov_matrix()?;
        let kphi = k.dot(&self.eigenvectors);
        let mut worst: f64 = 0.0;
        for (c, lambda) in self.eigenvalues.iter().enumerate() {
            let phi = self.eigenvectors.column(c);
            let r = (&kphi.column(c) - &(&phi * *lambda))
                .mapv(|v| v * v)
                .sum()
                .sqrt();
            worst = worst.max(r / phi.mapv(|v| v * v).sum().sqrt());
        }
        Ok(worst)
    }
}

/// Out-of-sample coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Extension {
    /// One column per entry of `columns`.
    pub coords: Array2<f64>,
    /// Eigenvector indices that were extended.
    pub columns: Vec<usize>,
    /// Eigenvector indices skipped because `λ < NYSTROM_MIN_EIGENVALUE`.
    pub skipped: Vec<usize>,
}

/// Nyström extension of every well-conditioned eigenvector.
pub fn nystrom_extend(model: &DmapModel, x_new: ArrayView2<f64>) -> Result<Extension> {
    let (columns, skipped): (Vec<usize>, Vec<usize>) =
        (0..model.eigenvalues.len()).partition(|&k| model.eigenvalues[k] >= NYSTROM_MIN_EIGENVALUE);
    let coords = extend_columns(model, x_new, &columns)?;
    Ok(Extension {
        coords,
        columns,
        skipped,
    })
}

/// Nyström extension of the given eigenvectors; fails if any of them is
/// ill-conditioned.
pub fn nystrom_extend_columns(
    model: &DmapModel,
    x_new: ArrayView2<f64>,
    columns: &[usize],
) -> Result<Array2<f64>> {
    let m = model.eigenvalues.len();
    for &k in columns {
        if k >= m {
            return Err(Error::InvalidInput(format!(
                "eigenvector index {k} out of range (model keeps {m})"
            )));
        }
        if model.eigenvalues[k] < NYSTROM_MIN_EIGENVALUE {
            return Err(Error::Numerical(format!(
                "eigenvalue {} of column {k} is too small to extend",
                model.eigenvalues[k]
            )));
        }
    }
    extend_columns(model, x_new, columns)
}

fn extend_columns(
    model: &DmapModel,
    x_new: ArrayView2<f64>,
    columns: &[usize],
) -> Result<Array2<f64>> {
    if x_new.ncols() != model.dim() {
        return Err(Error::DimensionMismatch(format!(
            "model was fitted on dimension {}, got {}",
            model.dim(),
            x_new.ncols()
        )));
    }
    let k = model.transition_rows(x_new)?;
    let phi = model.eigenvectors.select(Axis(1), columns);
    let mut out = k.dot(&phi);
    for (c, &idx) in columns.iter().enumerate() {
        let inv = 1.0 / model.eigenvalues[idx];
        out.column_mut(c).mapv_inplace(|v| v * inv);
    }
    Ok(out)
}
