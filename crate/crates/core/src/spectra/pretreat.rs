use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::SpectraSet;
use crate::error::{Error, Result};
use crate::exec::Exec;

/// Fingerprint window, cm⁻¹.
pub const FINGERPRINT_REGION: (f64, f64) = (850.0, 1800.0);
/// Atmospheric oxygen band excluded before hard-model fitting, cm⁻¹.
pub const OXYGEN_BAND: (f64, f64) = (1552.0, 1560.0);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    #[default]
    None,
    LinearFit,
    RubberBand,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    None,
    Snv,
    Minmax,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Region {
    #[default]
    Global,
    Fingerprint,
    Custom {
        lo: f64,
        hi: f64,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretreatmentSpec {
    pub baseline: Baseline,
    pub normalization: Normalization,
    pub region: Region,
    /// Closed intervals `(lo, hi)` removed from the grid.
    pub exclusions: Vec<(f64, f64)>,
}

impl PretreatmentSpec {
    pub fn raw() -> Self {
        Self::default()
    }
}

fn check_ordered(lo: f64, hi: f64, what: &str) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidInput(format!(
            "{what} interval ({lo}, {hi}) must satisfy lo < hi"
        )));
    }
    Ok(())
}

fn check_interval(lo: f64, hi: f64, grid_lo: f64, grid_hi: f64, what: &str) -> Result<()> {
    check_ordered(lo, hi, what)?;
    // Intervals must reach the grid; partial overlap keeps re-application
    // on an already-filtered grid valid.
    if hi < grid_lo || lo > grid_hi {
        return Err(Error::InvalidInput(format!(
            "{what} interval ({lo}, {hi}) lies outside the grid range [{grid_lo}, {grid_hi}]"
        )));
    }
    Ok(())
}

/// Keeps the columns inside the region and outside every exclusion. An
/// exclusion that misses the grid removes nothing, so filtering twice
/// equals filtering once.
pub fn apply_region(set: &SpectraSet, spec: &PretreatmentSpec) -> Result<SpectraSet> {
    let (glo, ghi) = (set.grid().min(), set.grid().max());
    let window = match spec.region {
        Region::Global => None,
        Region::Fingerprint => Some(FINGERPRINT_REGION),
        Region::Custom { lo, hi } => {
            check_interval(lo, hi, glo, ghi, "region")?;
            Some((lo, hi))
        }
    };
    for &(lo, hi) in &spec.exclusions {
        check_ordered(lo, hi, "exclusion")?;
    }
    if window.is_none() && spec.exclusions.is_empty() {
        return Ok(set.clone());
    }
    let keep: Vec<usize> = set
        .grid()
        .values()
        .iter()
        .enumerate()
        .filter(|(_, &w)| window.is_none_or(|(lo, hi)| w >= lo && w <= hi))
        .filter(|(_, &w)| !spec.exclusions.iter().any(|&(lo, hi)| w >= lo && w <= hi))
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(Error::InvalidInput(
            "no wavenumbers left after region filtering".into(),
        ));
    }
    set.select_columns(&keep)
}

/// Subtracts the least-squares straight line through `(grid, y)`.
pub fn baseline_linear_fit(y: &[f64], grid: &[f64]) -> Result<Vec<f64>> {
    if y.len() != grid.len() {
        return Err(Error::DimensionMismatch(
            "row and grid lengths differ".into(),
        ));
    }
    if y.len() < 2 {
        return Err(Error::InvalidInput(
            "linear baseline needs at least 2 points".into(),
        ));
    }
    let n = y.len() as f64;
    let wm = grid.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let sww: f64 = grid.iter().map(|w| (w - wm).powi(2)).sum();
    if sww == 0.0 {
        return Err(Error::Degenerate(
            "constant grid: line fit is undefined".into(),
        ));
    }
    let swy: f64 = grid.iter().zip(y).map(|(w, v)| (w - wm) * (v - ym)).sum();
    let slope = swy / sww;
    let icpt = ym - slope * wm;
    Ok(y.iter()
        .zip(grid)
        .map(|(v, w)| v - (icpt + slope * w))
        .collect())
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Subtracts the lower convex hull of `(grid, y)` (Andrew's monotone chain,
/// collinear points dropped), interpolated linearly between hull vertices.
pub fn baseline_rubber_band(y: &[f64], grid: &[f64]) -> Result<Vec<f64>> {
    if y.len() != grid.len() {
        return Err(Error::DimensionMismatch(
            "row and grid lengths differ".into(),
        ));
    }
    if y.len() < 2 {
        return Err(Error::InvalidInput(
            "rubber band needs at least 2 points".into(),
        ));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput(
            "rubber band needs an increasing grid".into(),
        ));
    }
    let mut hull: Vec<usize> = Vec::new();
    for i in 0..y.len() {
        let p = (grid[i], y[i]);
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            if cross((grid[a], y[a]), (grid[b], y[b]), p) <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    let mut out = vec![0.0; y.len()];
    for seg in hull.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let slope = (y[b] - y[a]) / (grid[b] - grid[a]);
        for i in a + 1..b {
            out[i] = y[i] - (y[a] + slope * (grid[i] - grid[a]));
        }
    }
    // Hull vertices are their own baseline.
    for &v in &hull {
        out[v] = 0.0;
    }
    Ok(out)
}

fn mean_sd(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let m = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

fn degenerate_spread(spread: f64, y: impl Iterator<Item = f64>) -> bool {
    let scale = y.fold(0.0_f64, |a, v| a.max(v.abs()));
    !(spread > 1e-12 * scale) || !spread.is_finite()
}

/// Standard normal variate: per-row centering and scaling by the sample
/// (n − 1) standard deviation.
pub fn normalize_snv(y: &[f64]) -> Result<Vec<f64>> {
    if y.len() < 2 {
        return Err(Error::InvalidInput("SNV needs at least 2 points".into()));
    }
    let (m, sd) = mean_sd(y);
    if degenerate_spread(sd, y.iter().copied()) {
        return Err(Error::Degenerate("SNV of a constant row".into()));
    }
    Ok(y.iter().map(|v| (v - m) / sd).collect())
}

/// Rescales a row to span `[0, 1]`.
pub fn normalize_minmax(y: &[f64]) -> Result<Vec<f64>> {
    let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if y.is_empty() || degenerate_spread(hi - lo, y.iter().copied()) {
        return Err(Error::Degenerate(
            "min-max normalization of a constant row".into(),
        ));
    }
    Ok(y.iter().map(|v| (v - lo) / (hi - lo)).collect())
}

/// What to do with a zero-variance column when standardizing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroVariance {
    #[default]
    Error,
    /// Center the column and leave it unscaled.
    Passthrough,
}

/// Per-column centering/scaling constants (sample standard deviation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaler {
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
}

impl ColumnScaler {
    pub fn fit(m: ArrayView2<f64>, policy: ZeroVariance) -> Result<Self> {
        if m.nrows() < 2 {
            return Err(Error::InvalidInput(
                "standardization needs at least 2 rows".into(),
            ));
        }
        let mean = m.mean_axis(Axis(0)).expect("nonempty");
        let sd = m.std_axis(Axis(0), 1.0);
        let mut scale = sd.clone();
        for (j, s) in scale.iter_mut().enumerate() {
            if degenerate_spread(*s, m.column(j).iter().copied()) {
                match policy {
                    ZeroVariance::Error => {
                        return Err(Error::Degenerate(format!(
                            "column {j} has zero standard deviation"
                        )))
                    }
                    ZeroVariance::Passthrough => *s = 1.0,
                }
            }
        }
        Ok(Self { mean, scale })
    }

    pub fn transform(&self, m: ArrayView2<f64>) -> Result<Array2<f64>> {
        if m.ncols() != self.mean.len() {
            return Err(Error::DimensionMismatch(format!(
                "scaler fitted on {} columns, got {}",
                self.mean.len(),
                m.ncols()
            )));
        }
        Ok((&m - &self.mean) / &self.scale)
    }

    pub fn inverse(&self, m: ArrayView2<f64>) -> Array2<f64> {
        &m * &self.scale + &self.mean
    }
}

/// Column-wise z-score (mean 0, sample sd 1). Constant columns are an error.
pub fn zscore_columns(m: ArrayView2<f64>) -> Result<Array2<f64>> {
    ColumnScaler::fit(m, ZeroVariance::Error)?.transform(m)
}

fn map_rows(
    set: &SpectraSet,
    f: impl Fn(&[f64], &[f64]) -> Result<Vec<f64>> + Sync + Send,
) -> Result<SpectraSet> {
    let m = set.intensities();
    let grid = set.grid().values();
    let rows = Exec::default().map(m.nrows(), |i| {
        let row = m.row(i).to_vec();
        f(&row, grid)
    });
    let mut out = Array2::zeros(m.raw_dim());
    for (i, r) in rows.into_iter().enumerate() {
        let r = r.map_err(|e| match e {
            Error::Degenerate(msg) => {
                Error::Degenerate(format!("sample {:?}: {msg}", set.sample_ids()[i]))
            }
            other => other,
        })?;
        out.row_mut(i).assign(&Array1::from(r));
    }
    set.with_intensities(out)
}

/// Region filter, then baseline subtraction, then per-spectrum normalization.
pub fn apply_pretreatment(set: &SpectraSet, spec: &PretreatmentSpec) -> Result<SpectraSet> {
    let mut out = apply_region(set, spec)?;
    out = match spec.baseline {
        Baseline::None => out,
        Baseline::LinearFit => map_rows(&out, baseline_linear_fit)?,
        Baseline::RubberBand => map_rows(&out, baseline_rubber_band)?,
    };
    out = match spec.normalization {
        Normalization::None => out,
        Normalization::Snv => map_rows(&out, |y, _| normalize_snv(y))?,
        Normalization::Minmax => map_rows(&out, |y, _| normalize_minmax(y))?,
    };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::WavenumberGrid;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform_set(lo: f64, hi: f64, step: f64) -> SpectraSet {
        let n = ((hi - lo) / step).round() as usize + 1;
        let grid = WavenumberGrid::uniform(lo, hi, n).unwrap();
        let m = Array2::from_shape_fn((2, n), |(i, j)| (i * n + j) as f64);
        SpectraSet::new(grid, m, vec!["a".into(), "b".into()], None).unwrap()
    }

    #[test]
    fn fingerprint_keeps_only_850_to_1800() {
        let set = uniform_set(100.0, 3425.0, 1.0);
        let spec = PretreatmentSpec {
            region: Region::Fingerprint,
            ..Default::default()
        };
        let out = apply_region(&set, &spec).unwrap();
        assert_eq!(out.grid().min(), 850.0);
        assert_eq!(out.grid().max(), 1800.0);
        assert_eq!(out.n_wavenumbers(), 951);
        assert_eq!(out.intensities()[[0, 0]], set.intensities()[[0, 750]]);
    }

    #[test]
    fn global_without_exclusions_is_identity() {
        let set = uniform_set(100.0, 200.0, 1.0);
        assert_eq!(apply_region(&set, &PretreatmentSpec::raw()).unwrap(), set);
    }

    #[test]
    fn oxygen_exclusion_matches_column_scan() {
        let set = uniform_set(1500.0, 1600.0, 1.0);
        let spec = PretreatmentSpec {
            exclusions: vec![OXYGEN_BAND],
            ..Default::default()
        };
        let out = apply_region(&set, &spec).unwrap();
        // Oracle: scan the original columns directly.
        let expected: Vec<f64> = set
            .grid()
            .values()
            .iter()
            .copied()
            .filter(|&w| !(1552.0..=1560.0).contains(&w))
            .collect();
        assert_eq!(out.grid().values(), expected.as_slice());
        assert_eq!(set.n_wavenumbers() - out.n_wavenumbers(), 9);
    }

    #[test]
    fn region_errors() {
        let set = uniform_set(100.0, 200.0, 1.0);
        let bad = PretreatmentSpec {
            region: Region::Custom {
                lo: 150.0,
                hi: 140.0,
            },
            ..Default::default()
        };
        assert!(apply_region(&set, &bad).is_err());
        let outside = PretreatmentSpec {
            exclusions: vec![(500.0, 600.0)],
            ..Default::default()
        };
        assert_eq!(apply_region(&set, &outside).unwrap(), set);
        let reversed = PretreatmentSpec {
            exclusions: vec![(160.0, 150.0)],
            ..Default::default()
        };
        assert!(apply_region(&set, &reversed).is_err());
        let empty = PretreatmentSpec {
            region: Region::Fingerprint,
            ..Default::default()
        };
        assert!(apply_region(&set, &empty).is_err());
    }

    #[test]
    fn linear_fit_zeroes_lines_and_constants() {
        let grid: Vec<f64> = (0..20).map(|i| 100.0 + 3.0 * i as f64).collect();
        let line: Vec<f64> = grid.iter().map(|w| 0.25 * w - 7.0).collect();
        assert!(baseline_linear_fit(&line, &grid)
            .unwrap()
            .iter()
            .all(|v| v.abs() < 1e-12));
        let flat = vec![5.0; 20];
        assert!(baseline_linear_fit(&flat, &grid)
            .unwrap()
            .iter()
            .all(|v| v.abs() < 1e-12));
        assert!(baseline_linear_fit(&[1.0, 2.0], &[3.0, 3.0]).is_err());
    }

    #[test]
    fn linear_fit_matches_normal_equations() {
        let grid: Vec<f64> = (0..60).map(|i| 400.0 + 5.0 * i as f64).collect();
        let y: Vec<f64> = grid
            .iter()
            .map(|w| 0.01 * w + 2.0 + 3.0 * (-((w - 550.0) / 20.0).powi(2)).exp())
            .collect();
        // Oracle: solve [n Σw; Σw Σw²][a b]ᵀ = [Σy Σwy]ᵀ by Cramer's rule.
        let n = grid.len() as f64;
        let sw: f64 = grid.iter().sum();
        let sww: f64 = grid.iter().map(|w| w * w).sum();
        let sy: f64 = y.iter().sum();
        let swy: f64 = grid.iter().zip(&y).map(|(w, v)| w * v).sum();
        let det = n * sww - sw * sw;
        let a = (sy * sww - sw * swy) / det;
        let b = (n * swy - sw * sy) / det;
        let got = baseline_linear_fit(&y, &grid).unwrap();
        for i in 0..y.len() {
            assert!((got[i] - (y[i] - a - b * grid[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn rubber_band_on_convex_curve_is_zero() {
        let grid: Vec<f64> = (0..30).map(|i| i as f64 - 10.0).collect();
        let y: Vec<f64> = grid.iter().map(|w| w * w).collect();
        let out = baseline_rubber_band(&y, &grid).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rubber_band_peak_on_flat_baseline() {
        let grid: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let y: Vec<f64> = grid
            .iter()
            .map(|w| 1.0 + (-((w - 25.0) / 3.0).powi(2)).exp())
            .collect();
        let out = baseline_rubber_band(&y, &grid).unwrap();
        assert_eq!(out[0], 0.0);
        assert_eq!(out[49], 0.0);
        assert!((out[25] - (y[25] - 1.0)).abs() < 1e-6);
    }

    /// Lower envelope at each abscissa as the minimum over every chord that
    /// spans it, O(n³).
    fn chord_envelope(y: &[f64], grid: &[f64]) -> Vec<f64> {
        let n = y.len();
        (0..n)
            .map(|i| {
                let mut best = y[i];
                for j in 0..=i {
                    for k in i..n {
                        if j == k {
                            continue;
                        }
                        let t = (grid[i] - grid[j]) / (grid[k] - grid[j]);
                        best = best.min(y[j] + t * (y[k] - y[j]));
                    }
                }
                best
            })
            .collect()
    }

    #[test]
    fn rubber_band_matches_chord_envelope_on_random_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let grid: Vec<f64> = (0..50)
                .map(|i| i as f64 * 2.0 + rng.random::<f64>())
                .collect();
            let y: Vec<f64> = (0..50).map(|_| rng.random::<f64>() * 10.0 - 5.0).collect();
            let env = chord_envelope(&y, &grid);
            let out = baseline_rubber_band(&y, &grid).unwrap();
            for i in 0..50 {
                assert!((out[i] - (y[i] - env[i])).abs() < 1e-12);
                assert!(out[i] >= -1e-9 * 5.0);
            }
        }
    }

    #[test]
    fn snv_uses_sample_sd() {
        assert_eq!(
            normalize_snv(&[1.0, 2.0, 3.0]).unwrap(),
            vec![-1.0, 0.0, 1.0]
        );
        // [2, 4, 9]: mean 5, sample sd √13.
        let out = normalize_snv(&[2.0, 4.0, 9.0]).unwrap();
        let sd = 13f64.sqrt();
        assert!((out[0] + 3.0 / sd).abs() < 1e-15 && (out[2] - 4.0 / sd).abs() < 1e-15);
        assert!(matches!(
            normalize_snv(&[0.1, 0.1, 0.1]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn minmax_basics() {
        assert_eq!(normalize_minmax(&[2.0, 4.0]).unwrap(), vec![0.0, 1.0]);
        assert!(normalize_minmax(&[3.0, 3.0]).is_err());
    }

    #[test]
    fn zscore_columns_and_constant_column() {
        let m = array![[1.0, 10.0], [2.0, 20.0], [3.0, 60.0]];
        let z = zscore_columns(m.view()).unwrap();
        for j in 0..2 {
            let c = z.column(j);
            assert!(c.sum().abs() < 1e-12);
            assert!((c.std(1.0) - 1.0).abs() < 1e-12);
        }
        let c = array![[1.0, 5.0], [2.0, 5.0]];
        assert!(zscore_columns(c.view()).is_err());
        let s = ColumnScaler::fit(c.view(), ZeroVariance::Passthrough).unwrap();
        assert_eq!(
            s.transform(c.view()).unwrap().column(1).to_vec(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn pretreatment_pipeline_reports_degenerate_sample() {
        let grid = WavenumberGrid::uniform(0.0, 4.0, 5).unwrap();
        let m = array![[1.0, 2.0, 3.0, 2.0, 1.0], [4.0, 4.0, 4.0, 4.0, 4.0]];
        let set = SpectraSet::new(grid, m, vec!["ok".into(), "flat".into()], None).unwrap();
        let spec = PretreatmentSpec {
            normalization: Normalization::Snv,
            ..Default::default()
        };
        let err = apply_pretreatment(&set, &spec).unwrap_err();
        assert!(err.to_string().contains("flat"));
    }
}
