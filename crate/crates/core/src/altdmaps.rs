//! Alternating diffusion maps: the eigencoordinates of `K⁽¹⁾K⁽²⁾`, which
//! parameterize what two sensors observe in common.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dmaps::{
    fix_signs, local_linear_residual_with, markov_kernel, EigenSelection, KernelParams, LlrParams,
};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::leading_real_eigenpairs;

/// Eigenvalues with a relative imaginary part above this are rejected.
pub const IMAG_TOLERANCE: f64 = 1e-8;

/// A fitted alternating-diffusion embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AltDmapModel {
    pub(crate) sensor1: Array2<f64>,
    pub(crate) sensor2: Array2<f64>,
    /// Kernel settings with resolved bandwidths.
    pub(crate) params1: KernelParams,
    pub(crate) params2: KernelParams,
    pub(crate) eigenvalues: Array1<f64>,
    pub(crate) psi: Array2<f64>,
    pub(crate) selection: Option<EigenSelection>,
}

/// Records which kernels were paired and on which samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorPairManifest {
    pub format_version: u32,
    pub epsilon1: f64,
    pub epsilon2: f64,
    pub density_normalize1: bool,
    pub density_normalize2: bool,
    pub sample_ids: Vec<String>,
    pub eigenvalues: Vec<f64>,
    pub selected: Option<Vec<usize>>,
}

pub fn fit_altdmaps(
    x1: ArrayView2<f64>,
    x2: ArrayView2<f64>,
    params1: &KernelParams,
    params2: &KernelParams,
    n_eig: usize,
) -> Result<AltDmapModel> {
    fit_altdmaps_with(
        x1,
        x2,
        params1,
        params2,
        n_eig,
        &LlrParams::default(),
        Exec::default(),
    )
}

/// Fits the operator and scores `Ψ` with local linear regression. When no
/// column clears the LLR threshold the selection is `None`.
pub fn fit_altdmaps_with(
    x1: ArrayView2<f64>,
    x2: ArrayView2<f64>,
    params1: &KernelParams,
    params2: &KernelParams,
    n_eig: usize,
    llr: &LlrParams,
    exec: Exec,
) -> Result<AltDmapModel> {
    let n = x1.nrows();
    if x2.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "sensor 1 has {n} samples, sensor 2 has {}",
            x2.nrows()
        )));
    }
    if n_eig < 2 || n_eig >= n {
        return Err(Error::InvalidInput(format!(
            "need N > n_eig >= 2, got N = {n}, n_eig = {n_eig}"
        )));
    }
    let k1 = markov_kernel(x1, params1, exec)?;
    let k2 = markov_kernel(x2, params2, exec)?;
    let alt = k1.k.dot(&k2.k);
    let pairs = leading_real_eigenpairs(alt.view(), n_eig, IMAG_TOLERANCE)?;
    let mut psi = pairs.vectors;
    for mut col in psi.columns_mut() {
        let norm2: f64 = col
            .iter()
            .zip(k1.degree.iter())
            .map(|(v, d)| v * v * d)
            .sum();
        let s = norm2.sqrt();
        col.mapv_inplace(|v| v / s);
    }
    fix_signs(&mut psi);
    let selection = match local_linear_residual_with(psi.view(), llr, exec) {
        Ok(sel) => Some(sel),
        Err(Error::Degenerate(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(AltDmapModel {
        sensor1: x1.to_owned(),
        sensor2: x2.to_owned(),
        params1: KernelParams {
            epsilon: Some(k1.epsilon),
            ..*params1
        },
        params2: KernelParams {
            epsilon: Some(k2.epsilon),
            ..*params2
        },
        eigenvalues: Array1::from(pairs.values),
        psi,
        selection,
    })
}

/// Selected columns of `Ψ`.
pub fn alt_coordinates(model: &AltDmapModel, indices: &[usize]) -> Result<Array2<f64>> {
    let m = model.psi.ncols();
    if let Some(&k) = indices.iter().find(|&&k| k >= m) {
        return Err(Error::InvalidInput(format!(
            "alternating-diffusion index {k} out of range (model keeps {m})"
        )));
    }
    Ok(model.psi.select(Axis(1), indices))
}

impl AltDmapModel {
    pub fn eigenvalues(&self) -> &Array1<f64> {
        &self.eigenvalues
    }

    /// All computed coordinates, `Ψ₀` first.
    pub fn psi(&self) -> &Array2<f64> {
        &self.psi
    }

    pub fn selection(&self) -> Option<&EigenSelection> {
        self.selection.as_ref()
    }

    pub fn params1(&self) -> &KernelParams {
        &self.params1
    }

    pub fn params2(&self) -> &KernelParams {
        &self.params2
    }

    pub fn n_samples(&self) -> usize {
        self.psi.nrows()
    }

    /// Rebuilds `K⁽¹⁾K⁽²⁾` from the stored sensor data.
    pub fn operator(&self) -> Result<Array2<f64>> {
        let k1 = markov_kernel(self.sensor1.view(), &self.params1, Exec::default())?;
        let k2 = markov_kernel(self.sensor2.view(), &self.params2, Exec::default())?;
        Ok(k1.k.dot(&k2.k))
    }

    pub fn manifest(&self, sample_ids: &[String]) -> Result<SensorPairManifest> {
        if sample_ids.len() != self.n_samples() {
            return Err(Error::DimensionMismatch(format!(
                "{} sample ids for {} samples",
                sample_ids.len(),
                self.n_samples()
            )));
        }
        Ok(SensorPairManifest {
            format_version: 1,
            epsilon1: self.params1.epsilon.unwrap_or(f64::NAN),
            epsilon2: self.params2.epsilon.unwrap_or(f64::NAN),
            density_normalize1: self.params1.density_normalize,
            density_normalize2: self.params2.density_normalize,
            sample_ids: sample_ids.to_vec(),
            eigenvalues: self.eigenvalues.to_vec(),
            selected: self.selection.as_ref().map(|s| s.indices.clone()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dmaps::{align_signs, fit_dmaps};
    use crate::linalg::ols_r2;
    use crate::synth::two_sensor_common;

    #[test]
    fn identical_sensors_square_the_spectrum() {
        let x = Array2::from_shape_fn((60, 2), |(i, j)| {
            let t = i as f64 * 0.09;
            if j == 0 {
                t.cos() * (1.0 + 0.1 * t)
            } else {
                t.sin()
            }
        });
        let p = KernelParams::default();
        let alt = fit_altdmaps(x.view(), x.view(), &p, &p, 5).unwrap();
        let single = fit_dmaps(x.view(), &p, 5).unwrap();
        for k in 0..5 {
            let l = single.eigenvalues()[k];
            assert!((alt.eigenvalues[k] - l * l).abs() < 1e-8);
        }
        let mut psi = alt.psi.clone();
        align_signs(&mut psi, single.eigenvectors().view());
        let dev = (&psi - single.eigenvectors())
            .mapv(f64::abs)
            .fold(0.0, |a: f64, &b| a.max(b));
        assert!(dev < 1e-6, "deviation {dev}");
        let c0 = alt_coordinates(&alt, &[0]).unwrap();
        let spread =
            c0.fold(f64::NEG_INFINITY, |a, &b| a.max(b)) - c0.fold(f64::INFINITY, |a, &b| a.min(b));
        assert!(spread < 1e-8);
        assert!(alt_coordinates(&alt, &[5]).is_err());
    }

    #[test]
    fn operator_is_row_stochastic() {
        let d = two_sensor_common(120, 0.0, 3.0, 5).unwrap();
        let alt = fit_altdmaps(
            d.sensor1.view(),
            d.sensor2.view(),
            &KernelParams::default(),
            &KernelParams::default(),
            4,
        )
        .unwrap();
        for row in alt.operator().unwrap().outer_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        assert!((alt.eigenvalues[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn common_variable_is_isolated() {
        let d = two_sensor_common(400, 0.0, 3.0, 1).unwrap();
        let (x1, x2, theta) = (d.sensor1, d.sensor2, d.theta);
        let target = Array2::from_shape_fn((theta.len(), 2), |(i, j)| {
            if j == 0 {
                theta[i].cos()
            } else {
                theta[i].sin()
            }
        });
        let p = KernelParams::default();
        let alt = fit_altdmaps(x1.view(), x2.view(), &p, &p, 4).unwrap();
        let r_alt = ols_r2(
            alt_coordinates(&alt, &[1, 2]).unwrap().view(),
            target.view(),
        )
        .unwrap();
        let single = fit_dmaps(x1.view(), &p, 4).unwrap();
        let r_one = ols_r2(single.columns(&[1, 2]).unwrap().view(), target.view()).unwrap();
        assert!(r_alt > 0.9, "alt R2 {r_alt}");
        assert!(r_alt > r_one, "alt {r_alt} vs single {r_one}");
    }

    #[test]
    fn sample_count_mismatch() {
        let a = Array2::<f64>::zeros((10, 2));
        let b = Array2::<f64>::zeros((9, 2));
        let p = KernelParams::default();
        assert!(matches!(
            fit_altdmaps(a.view(), b.view(), &p, &p, 3),
            Err(Error::DimensionMismatch(_))
        ));
    }
}
