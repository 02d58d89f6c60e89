use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::solve;

/// Local-linear-regression settings for picking non-harmonic eigenvectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlrParams {
    /// Kernel bandwidth as a fraction of the median pairwise distance in the
    /// regressor space.
    pub bandwidth_factor: f64,
    pub ridge: f64,
    /// Residual above which an eigenvector counts as a new direction.
    pub threshold: f64,
}

impl Default for LlrParams {
    fn default() -> Self {
        Self {
            bandwidth_factor: 1.0 / 3.0,
            ridge: 1e-8,
            threshold: 0.5,
        }
    }
}

/// Residual of each eigenvector against the previous ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenSelection {
    pub indices: Vec<usize>,
    pub residuals: Vec<f64>,
}

/// Scores the columns of `phi` (column 0 is the trivial eigenvector) and
/// keeps those whose residual exceeds the threshold.
///
/// `r_0 = 0` and `r_1 = 1` by convention; column 0 is never selected.
pub fn local_linear_residual(phi: ArrayView2<f64>, params: &LlrParams) -> Result<EigenSelection> {
    local_linear_residual_with(phi, params, Exec::default())
}

pub fn local_linear_residual_with(
    phi: ArrayView2<f64>,
    params: &LlrParams,
    exec: Exec,
) -> Result<EigenSelection> {
    let (n, m) = phi.dim();
    if m < 2 {
        return Err(Error::InvalidInput(
            "need at least 2 eigenvector columns".into(),
        ));
    }
    if n < 3 {
        return Err(Error::InvalidInput("need at least 3 points".into()));
    }
    if !(params.bandwidth_factor > 0.0) || !(params.ridge >= 0.0) {
        return Err(Error::InvalidInput(
            "bandwidth factor must be positive and ridge nonnegative".into(),
        ));
    }
    let mut residuals = vec![0.0, 1.0];
    for k in 2..m {
        let x = phi.slice(s![.., 1..k]);
        residuals.push(residual_one(x, phi.column(k), params, exec)?);
    }
    let indices: Vec<usize> = (1..m)
        .filter(|&k| residuals[k] > params.threshold)
        .collect();
    if indices.is_empty() {
        return Err(Error::Degenerate(format!(
            "no eigenvector has a residual above {}",
            params.threshold
        )));
    }
    Ok(EigenSelection { indices, residuals })
}

fn median_distance(x: ArrayView2<f64>) -> f64 {
    let n = x.nrows();
    let mut d: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = x
                .row(i)
                .iter()
                .zip(x.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d.push(v.sqrt());
        }
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    if d.len() % 2 == 1 {
        d[mid]
    } else {
        0.5 * (d[mid - 1] + d[mid])
    }
}

/// Leave-one-out Gaussian-weighted local linear fit of `y` on `x`.
pub(crate) fn residual_one(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    params: &LlrParams,
    exec: Exec,
) -> Result<f64> {
    let (n, p) = x.dim();
    let h = params.bandwidth_factor * median_distance(x);
    let denom: f64 = y.iter().map(|v| v * v).sum();
    if !(h > 0.0) || !(denom > 0.0) {
        return Err(Error::Degenerate(
            "local regression needs nonconstant inputs".into(),
        ));
    }
    let h2 = h * h;
    let fits = exec.map(n, |i| -> Result<f64> {
        let q = p + 1;
        let mut ata = Array2::<f64>::zeros((q, q));
        let mut aty = Array1::<f64>::zeros(q);
        let mut a = vec![0.0; q];
        for j in 0..n {
            if j == i {
                continue;
            }
            a[0] = 1.0;
            let mut d2 = 0.0;
            for c in 0..p {
                let dc = x[[j, c]] - x[[i, c]];
                a[c + 1] = dc;
                d2 += dc * dc;
            }
            let w = (-d2 / h2).exp();
            if w == 0.0 {
                continue;
            }
            for r in 0..q {
                aty[r] += w * a[r] * y[j];
                for c in 0..q {
                    ata[[r, c]] += w * a[r] * a[c];
                }
            }
        }
        for r in 0..q {
            ata[[r, r]] += params.ridge;
        }
        let beta = solve(ata.view(), aty.view())?;
        Ok(beta[0])
    });
    let mut num = 0.0;
    for (i, f) in fits.into_iter().enumerate() {
        let f = f.map_err(|e| Error::Numerical(format!("local regression at point {i}: {e}")))?;
        num += (y[i] - f) * (y[i] - f);
    }
    Ok((num / denom).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn harmonic_pair(n: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, 3), |(i, c)| {
            let t = -1.0 + 2.0 * i as f64 / (n - 1) as f64;
            match c {
                0 => 1.0,
                1 => t,
                _ => t * t,
            }
        })
    }

    // Brute-force weighted least squares with explicit normal equations.
    fn oracle(x: &[f64], y: &[f64], h: f64, ridge: f64) -> f64 {
        let n = x.len();
        let mut num = 0.0;
        for i in 0..n {
            let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for j in 0..n {
                if j == i {
                    continue;
                }
                let d = x[j] - x[i];
                let w = (-(d * d) / (h * h)).exp();
                s0 += w;
                s1 += w * d;
                s2 += w * d * d;
                t0 += w * y[j];
                t1 += w * d * y[j];
            }
            let (a, b, c, dd) = (s0 + ridge, s1, s1, s2 + ridge);
            let det = a * dd - b * c;
            let beta0 = (t0 * dd - b * t1) / det;
            num += (y[i] - beta0).powi(2);
        }
        (num / y.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    #[test]
    fn harmonic_has_small_residual() {
        let phi = harmonic_pair(200);
        let sel = local_linear_residual(phi.view(), &LlrParams::default()).unwrap();
        assert!(sel.residuals[2] < 0.1, "r2 = {}", sel.residuals[2]);
        assert_eq!(sel.indices, vec![1]);

        let x: Vec<f64> = phi.column(1).to_vec();
        let y: Vec<f64> = phi.column(2).to_vec();
        let h = median_distance(phi.slice(s![.., 1..2])) / 3.0;
        let want = oracle(&x, &y, h, 1e-8);
        assert!((sel.residuals[2] - want).abs() < 1e-10);
    }

    #[test]
    fn noise_has_large_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut phi = harmonic_pair(200);
        for i in 0..200 {
            phi[[i, 2]] = rng.random::<f64>() * 2.0 - 1.0;
        }
        let sel = local_linear_residual(phi.view(), &LlrParams::default()).unwrap();
        assert!(sel.residuals[2] > 0.7, "r2 = {}", sel.residuals[2]);
        assert_eq!(sel.indices, vec![1, 2]);
        let x: Vec<f64> = phi.column(1).to_vec();
        let y: Vec<f64> = phi.column(2).to_vec();
        let h = median_distance(phi.slice(s![.., 1..2])) / 3.0;
        assert!((sel.residuals[2] - oracle(&x, &y, h, 1e-8)).abs() < 1e-10);
    }

    #[test]
    fn empty_selection_errors() {
        let phi = harmonic_pair(50);
        let p = LlrParams {
            threshold: 2.0,
            ..LlrParams::default()
        };
        assert!(local_linear_residual(phi.view(), &p).is_err());
        assert!(local_linear_residual(phi.slice(s![.., ..1]), &LlrParams::default()).is_err());
    }
}
