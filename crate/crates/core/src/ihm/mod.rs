//! Indirect hard modeling: spectra as weighted sums of pseudo-Voigt
//! component models on a linear baseline, fitted by Levenberg–Marquardt.

mod fit;

pub use fit::{fit_hard_model, fit_many, parameter_names, write_parameter_csv, FitBounds, FitResult};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One pseudo-Voigt line: `I·[η·exp(−ln2·u²) + (1−η)/(1+u²)]` with
/// `u = (x − position)/hwhm`. `intensity` is the peak height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub position: f64,
    pub intensity: f64,
    /// Gaussian fraction `η`.
    pub shape: f64,
    pub hwhm: f64,
}

impl Peak {
    pub fn validate(&self) -> Result<()> {
        if !self.position.is_finite()
            || !(self.intensity >= 0.0 && self.intensity.is_finite())
            || !(0.0..=1.0).contains(&self.shape)
            || !(self.hwhm > 0.0 && self.hwhm.is_finite())
        {
            return Err(Error::InvalidInput(format!("invalid peak {self:?}")));
        }
        Ok(())
    }

    /// Unit-height line shape and its derivatives with respect to position
    /// and hwhm (per unit height).
    #[inline]
    pub(crate) fn basis(&self, x: f64) -> (f64, f64, f64, f64, f64) {
        let u = (x - self.position) / self.hwhm;
        let g = (-std::f64::consts::LN_2 * u * u).exp();
        let l = 1.0 / (1.0 + u * u);
        let base = self.shape * g + (1.0 - self.shape) * l;
        let bracket = self.shape * std::f64::consts::LN_2 * g + (1.0 - self.shape) * l * l;
        let d_pos = 2.0 * u / self.hwhm * bracket;
        let d_hwhm = 2.0 * u * u / self.hwhm * bracket;
        (base, g, l, d_pos, d_hwhm)
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        self.intensity * self.basis(x).0
    }
}

pub fn pseudo_voigt_eval(peak: &Peak, grid: &[f64]) -> Vec<f64> {
    grid.iter().map(|&x| peak.value(x)).collect()
}

/// A named set of peaks belonging to one chemical component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentModel {
    pub name: String,
    pub peaks: Vec<Peak>,
}

impl ComponentModel {
    pub fn validate(&self) -> Result<()> {
        if self.peaks.is_empty() {
            return Err(Error::InvalidInput(format!("component {:?} has no peaks", self.name)));
        }
        self.peaks.iter().try_for_each(Peak::validate)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.peaks.iter().map(|p| p.value(x)).sum()
    }
}

/// Weighted components on a linear baseline `offset + slope·w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardModel {
    pub components: Vec<ComponentModel>,
    pub weights: Vec<f64>,
    pub offset: f64,
    pub slope: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    /// Baseline, weights and peak positions vary.
    #[default]
    Medium,
    /// Baseline, weights and every peak parameter vary.
    High,
}

impl HardModel {
    /// Unit weights, zero baseline.
    pub fn new(components: Vec<ComponentModel>) -> Result<Self> {
        let m = Self {
            weights: vec![1.0; components.len()],
            components,
            offset: 0.0,
            slope: 0.0,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::InvalidInput("hard model has no components".into()));
        }
        if self.weights.len() != self.components.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} components",
                self.weights.len(),
                self.components.len()
            )));
        }
        if let Some(w) = self.weights.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidInput(format!("component weight {w} is negative")));
        }
        if !self.offset.is_finite() || !self.slope.is_finite() {
            return Err(Error::InvalidInput("non-finite baseline".into()));
        }
        self.components.iter().try_for_each(ComponentModel::validate)
    }

    pub fn n_peaks(&self) -> usize {
        self.components.iter().map(|c| c.peaks.len()).sum()
    }

    pub fn n_free_parameters(&self, mode: FitMode) -> usize {
        let per_peak = match mode {
            FitMode::Medium => 1,
            FitMode::High => 4,
        };
        2 + self.components.len() + per_peak * self.n_peaks()
    }
}

pub fn hard_model_eval(model: &HardModel, grid: &[f64]) -> Vec<f64> {
    grid.iter()
        .map(|&x| {
            model.offset
                + model.slope * x
                + model
                    .components
                    .iter()
                    .zip(&model.weights)
                    .map(|(c, w)| w * c.eval(x))
                    .sum::<f64>()
        })
        .collect()
}

/// Flattens the free parameters: offset, slope, component weights, then
/// for every peak in component order either its position (medium) or
/// position, intensity, shape, hwhm (high).
pub fn extract_parameters(model: &HardModel, mode: FitMode) -> Vec<f64> {
    let mut v = Vec::with_capacity(model.n_free_parameters(mode));
    v.push(model.offset);
    v.push(model.slope);
    v.extend(&model.weights);
    for c in &model.components {
        for p in &c.peaks {
            match mode {
                FitMode::Medium => v.push(p.position),
                FitMode::High => v.extend([p.position, p.intensity, p.shape, p.hwhm]),
            }
        }
    }
    v
}

/// Inverse of [`extract_parameters`]: copies `template` and overwrites its
/// free parameters from `params`.
pub fn rebuild(template: &HardModel, mode: FitMode, params: &[f64]) -> Result<HardModel> {
    let want = template.n_free_parameters(mode);
    if params.len() != want {
        return Err(Error::DimensionMismatch(format!(
            "{} parameters for a model with {want} free ones",
            params.len()
        )));
    }
    let mut m = template.clone();
    m.offset = params[0];
    m.slope = params[1];
    let nc = m.components.len();
    m.weights.copy_from_slice(&params[2..2 + nc]);
    let mut k = 2 + nc;
    for c in &mut m.components {
        for p in &mut c.peaks {
            match mode {
                FitMode::Medium => {
                    p.position = params[k];
                    k += 1;
                }
                FitMode::High => {
                    p.position = params[k];
                    p.intensity = params[k + 1];
                    p.shape = params[k + 2];
                    p.hwhm = params[k + 3];
                    k += 4;
                }
            }
        }
    }
    Ok(m)
}

/// Reads a component model JSON file: either one component object or an
/// array of them.
pub fn load_components(path: &Path) -> Result<Vec<ComponentModel>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let v: serde_json::Value = serde_json::from_str(&text)?;
    let comps: Vec<ComponentModel> = if v.is_array() {
        serde_json::from_value(v)?
    } else {
        vec![serde_json::from_value(v)?]
    };
    if comps.is_empty() {
        return Err(Error::InvalidInput(format!("{} lists no components", path.display())));
    }
    comps.iter().try_for_each(ComponentModel::validate)?;
    Ok(comps)
}

pub fn save_components(components: &[ComponentModel], path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(components)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Builds a component from the `max_peaks` highest local maxima of a
/// reference spectrum. Widths come from the half-maximum crossings above
/// the spectrum minimum; shapes start at 0.5.
pub fn seed_component(name: &str, grid: &[f64], spectrum: &[f64], max_peaks: usize) -> Result<ComponentModel> {
    let n = grid.len();
    if spectrum.len() != n || n < 3 {
        return Err(Error::DimensionMismatch("spectrum and grid must match and hold at least 3 points".into()));
    }
    let floor = spectrum.iter().copied().fold(f64::INFINITY, f64::min);
    let mut maxima: Vec<usize> = (1..n - 1)
        .filter(|&i| spectrum[i] > spectrum[i - 1] && spectrum[i] >= spectrum[i + 1])
        .collect();
    maxima.sort_by(|&a, &b| spectrum[b].total_cmp(&spectrum[a]).then(a.cmp(&b)));
    maxima.truncate(max_peaks);
    maxima.sort_unstable();
    let step = (grid[n - 1] - grid[0]) / (n - 1) as f64;
    let peaks: Vec<Peak> = maxima
        .iter()
        .map(|&i| {
            let height = spectrum[i] - floor;
            let half = floor + 0.5 * height;
            let mut l = i;
            while l > 0 && spectrum[l] > half {
                l -= 1;
            }
            let mut r = i;
            while r + 1 < n && spectrum[r] > half {
                r += 1;
            }
            Peak {
                position: grid[i],
                intensity: height.max(0.0),
                shape: 0.5,
                hwhm: (0.5 * (grid[r] - grid[l])).max(step),
            }
        })
        .collect();
    let c = ComponentModel {
        name: name.to_string(),
        peaks,
    };
    c.validate()?;
    Ok(c)
}
