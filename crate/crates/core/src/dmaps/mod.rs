//! Diffusion maps: kernel construction, the embedding itself, selection of
//! non-harmonic eigenvectors, Nyström extension and Geometric Harmonics.

mod harmonics;
mod io;
mod kernel;
mod llr;
mod model;

pub use harmonics::{
    gh_fit, gh_fit_with, gh_predict, reconstruction_cv_mse, select_by_reconstruction,
    select_by_reconstruction_with, CoordinateSelection, GhModel, GhParams, ReconstructionSelection,
};
pub use io::{load_dmap, read_matrix, save_dmap, write_matrix, DMAP_FORMAT_VERSION};
pub use kernel::{
    cross_sq_distances, density_normalize, density_normalize_with_sums, epsilon_median_heuristic,
    gaussian_kernel, markov_kernel, markov_normalize, markov_normalize_with_sums,
    pairwise_sq_distances, pairwise_sq_distances_with, KernelParams, MarkovKernel,
};
pub use llr::{local_linear_residual, local_linear_residual_with, EigenSelection, LlrParams};
pub use model::{
    fit_dmaps, fit_dmaps_with, nystrom_extend, nystrom_extend_columns, DmapModel, Extension,
    NYSTROM_MIN_EIGENVALUE,
};

use ndarray::{Array2, ArrayView2};

/// Flips each column so its largest-magnitude entry is positive.
pub(crate) fn fix_signs(m: &mut Array2<f64>) {
    for mut col in m.columns_mut() {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for &v in col.iter() {
            if v.abs() > best {
                best = v.abs();
                sign = v.signum();
            }
        }
        if sign < 0.0 {
            col.mapv_inplace(|v| -v);
        }
    }
}

/// Flips columns of `m` to agree in sign with the matching columns of
/// `reference`.
pub fn align_signs(m: &mut Array2<f64>, reference: ArrayView2<f64>) {
    for (mut col, r) in m.columns_mut().into_iter().zip(reference.columns()) {
        let dot: f64 = col.iter().zip(r.iter()).map(|(a, b)| a * b).sum();
        if dot < 0.0 {
            col.mapv_inplace(|v| -v);
        }
    }
}
