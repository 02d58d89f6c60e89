//! Spectral datasets: the data model, CSV ingestion, pretreatment, splitting
//! and evaluation metrics.

mod io;
mod metrics;
mod pretreat;
mod split;

pub use io::{load_sizes, load_spectra, save_sizes, save_spectra};
pub use metrics::{compute_metrics, Metrics, MetricsReport};
pub use pretreat::{
    apply_pretreatment, apply_region, baseline_linear_fit, baseline_rubber_band, normalize_minmax,
    normalize_snv, zscore_columns, Baseline, ColumnScaler, Normalization, PretreatmentSpec, Region,
    ZeroVariance, FINGERPRINT_REGION, OXYGEN_BAND,
};
pub use split::{kfold_indices, split_indices, train_test_split};

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strictly increasing, finite, nonempty sequence of wavenumbers (cm⁻¹).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WavenumberGrid(Vec<f64>);

impl WavenumberGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("empty wavenumber grid".into()));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite wavenumber {bad}")));
        }
        if let Some(i) = values.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(format!(
                "grid not increasing at index {} ({} -> {})",
                i + 1,
                values[i],
                values[i + 1]
            )));
        }
        Ok(Self(values))
    }

    /// `n` evenly spaced points from `lo` to `hi` inclusive.
    pub fn uniform(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n == 1 {
            return Self::new(vec![lo]);
        }
        let step = (hi - lo) / (n as f64 - 1.0);
        Self::new((0..n).map(|i| lo + step * i as f64).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.0[0]
    }

    pub fn max(&self) -> f64 {
        self.0[self.0.len() - 1]
    }
}

impl TryFrom<Vec<f64>> for WavenumberGrid {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<WavenumberGrid> for Vec<f64> {
    fn from(g: WavenumberGrid) -> Self {
        g.0
    }
}

/// A set of spectra on a shared grid, one row per sample, with optional
/// hydrodynamic diameters (nm).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectraSet {
    grid: WavenumberGrid,
    intensities: Array2<f64>,
    sample_ids: Vec<String>,
    sizes: Option<Array1<f64>>,
}

impl SpectraSet {
    pub fn new(
        grid: WavenumberGrid,
        intensities: Array2<f64>,
        sample_ids: Vec<String>,
        sizes: Option<Array1<f64>>,
    ) -> Result<Self> {
        if intensities.nrows() != sample_ids.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} intensity rows but {} sample ids",
                intensities.nrows(),
                sample_ids.len()
            )));
        }
        if intensities.ncols() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} intensity columns but grid of {}",
                intensities.ncols(),
                grid.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for id in &sample_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate sample id {id:?}")));
            }
        }
        if let Some(s) = &sizes {
            if s.len() != sample_ids.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{} sizes for {} samples",
                    s.len(),
                    sample_ids.len()
                )));
            }
            if let Some(bad) = s.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidInput(format!("size {bad} is not positive")));
            }
        }
        Ok(Self {
            grid,
            intensities,
            sample_ids,
            sizes,
        })
    }

    pub fn grid(&self) -> &WavenumberGrid {
        &self.grid
    }

    pub fn intensities(&self) -> &Array2<f64> {
        &self.intensities
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn sizes(&self) -> Option<&Array1<f64>> {
        self.sizes.as_ref()
    }

    /// Sizes, or an error naming the operation that needed them.
    pub fn require_sizes(&self, what: &str) -> Result<&Array1<f64>> {
        self.sizes
            .as_ref()
            .ok_or_else(|| Error::InvalidInput(format!("{what} requires target sizes")))
    }

    pub fn n_samples(&self) -> usize {
        self.intensities.nrows()
    }

    pub fn n_wavenumbers(&self) -> usize {
        self.grid.len()
    }

    pub fn with_sizes(self, sizes: Option<Array1<f64>>) -> Result<Self> {
        Self::new(self.grid, self.intensities, self.sample_ids, sizes)
    }

    pub fn with_intensities(&self, intensities: Array2<f64>) -> Result<Self> {
        Self::new(
            self.grid.clone(),
            intensities,
            self.sample_ids.clone(),
            self.sizes.clone(),
        )
    }

    /// Subset of samples in the given order.
    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            grid: self.grid.clone(),
            intensities: self.intensities.select(Axis(0), rows),
            sample_ids: rows.iter().map(|&i| self.sample_ids[i].clone()).collect(),
            sizes: self.sizes.as_ref().map(|s| s.select(Axis(0), rows)),
        }
    }

    /// Subset of columns (wavenumbers), preserving order.
    pub(crate) fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        let grid = WavenumberGrid::new(cols.iter().map(|&c| self.grid.0[c]).collect())?;
        Ok(Self {
            grid,
            intensities: self.intensities.select(Axis(1), cols),
            sample_ids: self.sample_ids.clone(),
            sizes: self.sizes.clone(),
        })
    }
}
