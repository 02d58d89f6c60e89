use std::path::Path;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{extract_parameters, hard_model_eval, rebuild, FitMode, HardModel};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::to_na;
use crate::spectra::SpectraSet;

/// Box constraints and Levenberg–Marquardt settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitBounds {
    /// Peaks may move at most this far (cm⁻¹) from their initial position.
    pub position_window: f64,
    pub min_hwhm: f64,
    pub max_iter: usize,
    pub lambda0: f64,
    pub grad_tol: f64,
}

impl Default for FitBounds {
    fn default() -> Self {
        Self {
            position_window: 5.0,
            min_hwhm: 1e-3,
            max_iter: 200,
            lambda0: 1e-3,
            grad_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: HardModel,
    pub sse: f64,
    pub iterations: usize,
    /// False when the iteration limit was hit; `model` is then the best
    /// point found.
    pub converged: bool,
    /// SSE after each accepted step, starting from the initial point.
    pub sse_history: Vec<f64>,
}

struct Problem<'a> {
    template: &'a HardModel,
    mode: FitMode,
    grid: &'a [f64],
    y: &'a [f64],
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Problem<'_> {
    fn project(&self, p: &mut [f64]) {
        for ((v, lo), hi) in p.iter_mut().zip(&self.lo).zip(&self.hi) {
            *v = v.clamp(*lo, *hi);
        }
    }

    fn sse(&self, p: &[f64]) -> Result<(f64, Vec<f64>)> {
        let m = rebuild(self.template, self.mode, p)?;
        let r: Vec<f64> = hard_model_eval(&m, self.grid)
            .iter()
            .zip(self.y)
            .map(|(a, b)| a - b)
            .collect();
        Ok((r.iter().map(|v| v * v).sum(), r))
    }

    fn jacobian(&self, p: &[f64]) -> Result<Array2<f64>> {
        let m = rebuild(self.template, self.mode, p)?;
        let nc = m.components.len();
        let mut j = Array2::zeros((self.grid.len(), p.len()));
        for (i, &x) in self.grid.iter().enumerate() {
            j[[i, 0]] = 1.0;
            j[[i, 1]] = x;
            let mut k = 2 + nc;
            for (c, comp) in m.components.iter().enumerate() {
                let w = m.weights[c];
                let mut sum = 0.0;
                for peak in &comp.peaks {
                    let (base, g, l, d_pos, d_hwhm) = peak.basis(x);
                    sum += peak.intensity * base;
                    j[[i, k]] = w * peak.intensity * d_pos;
                    if self.mode == FitMode::High {
                        j[[i, k + 1]] = w * base;
                        j[[i, k + 2]] = w * peak.intensity * (g - l);
                        j[[i, k + 3]] = w * peak.intensity * d_hwhm;
                        k += 4;
                    } else {
                        k += 1;
                    }
                }
                j[[i, 2 + c]] = sum;
            }
        }
        Ok(j)
    }
}

fn bounds_for(template: &HardModel, mode: FitMode, b: &FitBounds) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![f64::NEG_INFINITY, f64::NEG_INFINITY];
    let mut hi = vec![f64::INFINITY, f64::INFINITY];
    lo.extend(template.weights.iter().map(|_| 0.0));
    hi.extend(template.weights.iter().map(|_| f64::INFINITY));
    for c in &template.components {
        for p in &c.peaks {
            lo.push(p.position - b.position_window);
            hi.push(p.position + b.position_window);
            if mode == FitMode::High {
                lo.extend([0.0, 0.0, b.min_hwhm]);
                hi.extend([f64::INFINITY, 1.0, f64::INFINITY]);
            }
        }
    }
    (lo, hi)
}

fn solve_damped(a: &DMatrix<f64>, g: &DVector<f64>, lambda: f64) -> Option<DVector<f64>> {
    let n = a.nrows();
    let dmax = (0..n).map(|k| a[(k, k)]).fold(0.0, f64::max);
    let mut m = a.clone();
    for k in 0..n {
        m[(k, k)] += lambda * a[(k, k)].max(1e-12 * dmax).max(f64::MIN_POSITIVE);
    }
    let rhs = -g;
    match m.clone().cholesky() {
        Some(ch) => Some(ch.solve(&rhs)),
        None => m.lu().solve(&rhs),
    }
    .filter(|d| d.iter().all(|v| v.is_finite()))
}

/// Fits the free parameters of `model` (per `mode`) to `spectrum` by
/// projected Levenberg–Marquardt.
pub fn fit_hard_model(
    model: &HardModel,
    grid: &[f64],
    spectrum: &[f64],
    mode: FitMode,
    bounds: &FitBounds,
) -> Result<FitResult> {
    model.validate()?;
    if grid.len() != spectrum.len() {
        return Err(Error::DimensionMismatch(format!(
            "grid has {} points, spectrum {}",
            grid.len(),
            spectrum.len()
        )));
    }
    if spectrum.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite spectrum value".into()));
    }
    let (lo, hi) = bounds_for(model, mode, bounds);
    let prob = Problem {
        template: model,
        mode,
        grid,
        y: spectrum,
        lo,
        hi,
    };
    let mut p = extract_parameters(model, mode);
    prob.project(&mut p);
    let (mut sse, mut r) = prob.sse(&p)?;
    let j0 = prob.jacobian(&p)?;
    let norms: Vec<f64> = (0..p.len()).map(|k| j0.column(k).dot(&j0.column(k)).sqrt()).collect();
    let top = norms.iter().cloned().fold(0.0, f64::max);
    if let Some(k) = (0..p.len()).find(|&k| norms[k] <= 1e-14 * top) {
        return Err(Error::Numerical(format!(
            "free parameter {k} does not affect the model (Jacobian rank collapse)"
        )));
    }
    let mut lambda = bounds.lambda0;
    let mut history = vec![sse];
    let mut converged = false;
    let mut iterations = 0;
    let mut jac = j0;
    while iterations < bounds.max_iter {
        iterations += 1;
        let jn = to_na(jac.view());
        let rv = DVector::from_vec(r.clone());
        let g = jn.transpose() * &rv;
        let pg = (0..p.len())
            .map(|k| {
                let blocked = (p[k] <= prob.lo[k] && g[k] > 0.0) || (p[k] >= prob.hi[k] && g[k] < 0.0);
                if blocked {
                    0.0
                } else {
                    g[k] * g[k]
                }
            })
            .sum::<f64>()
            .sqrt();
        if pg < bounds.grad_tol || sse == 0.0 {
            converged = true;
            break;
        }
        let a = jn.transpose() * &jn;
        let mut accepted = None;
        while lambda < 1e16 {
            if let Some(delta) = solve_damped(&a, &g, lambda) {
                let mut cand: Vec<f64> = p.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
                prob.project(&mut cand);
                let (s, rc) = prob.sse(&cand)?;
                if s < sse {
                    accepted = Some((cand, s, rc));
                    lambda = (lambda / 10.0).max(1e-15);
                    break;
                }
            }
            lambda *= 10.0;
        }
        let Some((cand, s, rc)) = accepted else {
            // No damped step lowers the SSE: a (projected) minimum to
            // working precision.
            converged = true;
            break;
        };
        let step: f64 = cand.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let scale: f64 = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        let small = sse - s <= 1e-15 * sse && step <= 1e-12 * (scale + 1e-12);
        p = cand;
        sse = s;
        r = rc;
        history.push(sse);
        if small {
            converged = true;
            break;
        }
        jac = prob.jacobian(&p)?;
    }
    Ok(FitResult {
        model: rebuild(model, mode, &p)?,
        sse,
        iterations,
        converged,
        sse_history: history,
    })
}

/// Fits every spectrum of `set` independently.
pub fn fit_many(
    model: &HardModel,
    set: &SpectraSet,
    mode: FitMode,
    bounds: &FitBounds,
    exec: Exec,
) -> Result<Vec<FitResult>> {
    let grid = set.grid().values();
    let m = set.intensities();
    exec.map(set.n_samples(), |i| {
        let row = m.row(i).to_vec();
        fit_hard_model(model, grid, &row, mode, bounds).map_err(|e| match e {
            Error::Numerical(msg) => Error::Numerical(format!("sample {}: {msg}", set.sample_ids()[i])),
            other => other,
        })
    })
    .into_iter()
    .collect()
}

/// Column names matching [`extract_parameters`].
pub fn parameter_names(model: &HardModel, mode: FitMode) -> Vec<String> {
    let mut names = vec!["offset".to_string(), "slope".to_string()];
    names.extend(model.components.iter().map(|c| format!("weight_{}", c.name)));
    for c in &model.components {
        for (k, _) in c.peaks.iter().enumerate() {
            match mode {
                FitMode::Medium => names.push(format!("{}_{k}_position", c.name)),
                FitMode::High => {
                    for f in ["position", "intensity", "shape", "hwhm"] {
                        names.push(format!("{}_{k}_{f}", c.name));
                    }
                }
            }
        }
    }
    names
}

/// Writes one row of fitted parameters per sample, keyed by sample id.
pub fn write_parameter_csv(sample_ids: &[String], fits: &[FitResult], mode: FitMode, path: &Path) -> Result<()> {
    if sample_ids.len() != fits.len() || fits.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{} sample ids for {} fits",
            sample_ids.len(),
            fits.len()
        )));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?;
    let mut header = vec!["sample_id".to_string()];
    header.extend(parameter_names(&fits[0].model, mode));
    w.write_record(&header).map_err(|e| Error::Csv(e.to_string()))?;
    for (id, f) in sample_ids.iter().zip(fits) {
        let mut row = vec![id.clone()];
        row.extend(extract_parameters(&f.model, mode).iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(|e| Error::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
