//! Synthetic data with known hidden variables, for oracles and demos.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ihm::{ComponentModel, Peak};

fn check(n: usize, noise: f64) -> Result<()> {
    if n < 10 {
        return Err(Error::InvalidInput(format!(
            "need at least 10 samples, got {n}"
        )));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "noise must be nonnegative, got {noise}"
        )));
    }
    Ok(())
}

/// Points on a planar unit-radius arc.
#[derive(Debug, Clone)]
pub struct Arc {
    pub points: Array2<f64>,
    pub arclength: Vec<f64>,
}

/// `n` points on an arc of `angle` radians, placed in a random 2-plane of
/// `R^dim`, with isotropic Gaussian noise.
pub fn arc_manifold(n: usize, dim: usize, angle: f64, noise: f64, seed: u64) -> Result<Arc> {
    check(n, noise)?;
    if dim < 2 {
        return Err(Error::InvalidInput(
            "arc needs at least 2 ambient dimensions".into(),
        ));
    }
    if !(angle > 0.0 && angle < 2.0 * std::f64::consts::PI) {
        return Err(Error::InvalidInput(format!(
            "arc angle must be in (0, 2π), got {angle}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Orthonormal frame by Gram-Schmidt on two Gaussian vectors.
    let mut e1: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n1 = e1.iter().map(|v| v * v).sum::<f64>().sqrt();
    e1.iter_mut().for_each(|v| *v /= n1);
    let mut e2: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let dot: f64 = e1.iter().zip(&e2).map(|(a, b)| a * b).sum();
    e2.iter_mut().zip(&e1).for_each(|(v, a)| *v -= dot * a);
    let n2 = e2.iter().map(|v| v * v).sum::<f64>().sqrt();
    e2.iter_mut().for_each(|v| *v /= n2);

    let mut t: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * angle).collect();
    t.sort_by(f64::total_cmp);
    let mut points = Array2::zeros((n, dim));
    for (i, &ti) in t.iter().enumerate() {
        let (c, s) = (ti.cos(), ti.sin());
        for k in 0..dim {
            let eps: f64 = StandardNormal.sample(&mut rng);
            points[[i, k]] = c * e1[k] + s * e2[k] + noise * eps;
        }
    }
    Ok(Arc {
        points,
        arclength: t,
    })
}

/// Two sensors sharing an angle on a circle, each with its own nuisance.
#[derive(Debug, Clone)]
pub struct TwoSensor {
    /// Rows `(cos θ, sin θ, a)`.
    pub sensor1: Array2<f64>,
    /// Rows `(cos θ, sin θ, b)`.
    pub sensor2: Array2<f64>,
    pub theta: Vec<f64>,
    pub nuisance1: Vec<f64>,
    pub nuisance2: Vec<f64>,
}

/// `θ ~ U(0, 2π)`, nuisances `a, b ~ U(0, nuisance_scale)` independent.
pub fn two_sensor_common(
    n: usize,
    noise: f64,
    nuisance_scale: f64,
    seed: u64,
) -> Result<TwoSensor> {
    check(n, noise)?;
    if !(nuisance_scale >= 0.0) {
        return Err(Error::InvalidInput(
            "nuisance scale must be nonnegative".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sensor1 = Array2::zeros((n, 3));
    let mut sensor2 = Array2::zeros((n, 3));
    let mut theta = Vec::with_capacity(n);
    let mut nuisance1 = Vec::with_capacity(n);
    let mut nuisance2 = Vec::with_capacity(n);
    for i in 0..n {
        let t = rng.random::<f64>() * std::f64::consts::TAU;
        let a = rng.random::<f64>() * nuisance_scale;
        let b = rng.random::<f64>() * nuisance_scale;
        let row1 = [t.cos(), t.sin(), a];
        let row2 = [t.cos(), t.sin(), b];
        for k in 0..3 {
            let e1: f64 = StandardNormal.sample(&mut rng);
            let e2: f64 = StandardNormal.sample(&mut rng);
            sensor1[[i, k]] = row1[k] + noise * e1;
            sensor2[[i, k]] = row2[k] + noise * e2;
        }
        theta.push(t);
        nuisance1.push(a);
        nuisance2.push(b);
    }
    Ok(TwoSensor {
        sensor1,
        sensor2,
        theta,
        nuisance1,
        nuisance2,
    })
}

/// How the hidden size enters a peak spectrum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// Peak widths and a sloped background grow with size.
    #[default]
    Widths,
    /// Spectrum is an affine function of size plus the nuisance profile.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PeakSpectraParams {
    pub n_wavenumbers: usize,
    /// cm⁻¹
    pub grid: (f64, f64),
    /// nm
    pub size_range: (f64, f64),
    /// Relative width growth from the smallest to the largest size.
    pub coupling_strength: f64,
    pub coupling: Coupling,
    /// Scale of the second hidden factor (a concentration-like amplitude).
    pub nuisance_scale: f64,
}

impl Default for PeakSpectraParams {
    fn default() -> Self {
        Self {
            n_wavenumbers: 400,
            grid: (850.0, 1800.0),
            size_range: (208.0, 483.0),
            coupling_strength: 1.0,
            coupling: Coupling::Widths,
            nuisance_scale: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PeakSpectra {
    pub grid: Vec<f64>,
    pub intensities: Array2<f64>,
    pub sizes: Vec<f64>,
    pub nuisance: Vec<f64>,
    /// Component models at the smallest size and unit nuisance; fitting
    /// seeds for hard-model tests.
    pub components: Vec<ComponentModel>,
}

fn polymer_peaks() -> Vec<Peak> {
    [(1003.0, 1.0, 8.0), (1130.0, 0.6, 10.0), (1300.0, 0.8, 12.0), (1450.0, 1.2, 9.0), (1665.0, 0.7, 14.0)]
        .iter()
        .map(|&(position, intensity, hwhm)| Peak {
            position,
            intensity,
            shape: 0.4,
            hwhm,
        })
        .collect()
}

fn solvent_peaks() -> Vec<Peak> {
    [(920.0, 0.5, 10.0), (1240.0, 0.4, 15.0), (1590.0, 0.6, 11.0)]
        .iter()
        .map(|&(position, intensity, hwhm)| Peak {
            position,
            intensity,
            shape: 0.7,
            hwhm,
        })
        .collect()
}

/// Pseudo-Voigt mixtures whose shape depends smoothly on a hidden size.
///
/// `u = (size − lo)/(hi − lo)`. With [`Coupling::Widths`], polymer peak
/// widths scale by `1 + coupling_strength·u` and a background `0.3·u·t`
/// (`t` the normalized wavenumber) is added; solvent peak heights scale by
/// `1 + nuisance`. With [`Coupling::Linear`] the spectrum is
/// `P + u·coupling_strength·Q + nuisance·S` for fixed profiles.
pub fn peak_spectra(n: usize, noise: f64, params: &PeakSpectraParams, seed: u64) -> Result<PeakSpectra> {
    check(n, noise)?;
    let (lo, hi) = params.size_range;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::InvalidInput(format!("size range ({lo}, {hi}) is invalid")));
    }
    if params.n_wavenumbers < 10 {
        return Err(Error::InvalidInput("need at least 10 wavenumbers".into()));
    }
    if !(params.coupling_strength >= 0.0 && params.nuisance_scale >= 0.0) {
        return Err(Error::InvalidInput("coupling and nuisance scales must be nonnegative".into()));
    }
    let grid = crate::spectra::WavenumberGrid::uniform(params.grid.0, params.grid.1, params.n_wavenumbers)?;
    let grid: Vec<f64> = grid.values().to_vec();
    let (g0, g1) = (grid[0], grid[grid.len() - 1]);
    let polymer = ComponentModel {
        name: "polymer".into(),
        peaks: polymer_peaks(),
    };
    let solvent = ComponentModel {
        name: "solvent".into(),
        peaks: solvent_peaks(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::zeros((n, grid.len()));
    let mut sizes = Vec::with_capacity(n);
    let mut nuisance = Vec::with_capacity(n);
    for i in 0..n {
        let size = lo + (hi - lo) * rng.random::<f64>();
        let c = params.nuisance_scale * rng.random::<f64>();
        let u = (size - lo) / (hi - lo);
        let widened: Vec<Peak> = polymer
            .peaks
            .iter()
            .map(|p| Peak {
                hwhm: p.hwhm * (1.0 + params.coupling_strength * u),
                ..*p
            })
            .collect();
        for (j, &w) in grid.iter().enumerate() {
            let t = (w - g0) / (g1 - g0);
            let sol = solvent.eval(w);
            let v = match params.coupling {
                Coupling::Widths => {
                    let pol: f64 = widened.iter().map(|p| p.value(w)).sum();
                    pol + (1.0 + c) * sol + 0.3 * u * t + 0.1
                }
                Coupling::Linear => {
                    let pol = polymer.eval(w);
                    let q = (std::f64::consts::PI * 3.0 * t).sin() + t;
                    pol + u * params.coupling_strength * q + c * sol + 0.1
                }
            };
            let e: f64 = StandardNormal.sample(&mut rng);
            x[[i, j]] = v + noise * e;
        }
        sizes.push(size);
        nuisance.push(c);
    }
    Ok(PeakSpectra {
        grid,
        intensities: x,
        sizes,
        nuisance,
        components: vec![polymer, solvent],
    })
}
