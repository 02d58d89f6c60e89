use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;

/// Gaussian kernel settings. `epsilon = None` selects the median heuristic
/// at fit time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelParams {
    pub epsilon: Option<f64>,
    /// Apply the P⁻¹WP⁻¹ sampling-density normalization before the Markov
    /// normalization.
    pub density_normalize: bool,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            epsilon: None,
            density_normalize: true,
        }
    }
}

impl KernelParams {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self {
            epsilon: Some(epsilon),
            ..Self::default()
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        match self.epsilon {
            Some(e) if !(e > 0.0 && e.is_finite()) => Err(Error::InvalidInput(format!(
                "kernel bandwidth must be positive, got {e}"
            ))),
            _ => Ok(()),
        }
    }

    /// Resolves the bandwidth, falling back to the median heuristic.
    pub fn resolve_epsilon(&self, d2: ArrayView2<f64>) -> Result<f64> {
        self.validate()?;
        match self.epsilon {
            Some(e) => Ok(e),
            None => epsilon_median_heuristic(d2),
        }
    }
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_finite(x: ArrayView2<f64>, what: &str) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite value in {what}")));
    }
    Ok(())
}

/// Squared Euclidean distances between all rows of `x`.
pub fn pairwise_sq_distances(x: ArrayView2<f64>) -> Result<Array2<f64>> {
    pairwise_sq_distances_with(x, Exec::default())
}

pub fn pairwise_sq_distances_with(x: ArrayView2<f64>, exec: Exec) -> Result<Array2<f64>> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InvalidInput("need at least 2 points".into()));
    }
    check_finite(x, "point matrix")?;
    let mut out = vec![0.0; n * n];
    exec.fill_rows(&mut out, n, |i, row| {
        let xi = x.row(i);
        for (j, v) in row.iter_mut().enumerate() {
            if j != i {
                *v = sq_dist(xi, x.row(j));
            }
        }
    });
    Ok(Array2::from_shape_vec((n, n), out).expect("shape"))
}

/// Squared distances from each row of `a` to each row of `b`.
pub fn cross_sq_distances(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    exec: Exec,
) -> Result<Array2<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "points have dimension {}, reference set {}",
            a.ncols(),
            b.ncols()
        )));
    }
    check_finite(a, "query points")?;
    let m = b.nrows();
    let mut out = vec![0.0; a.nrows() * m];
    exec.fill_rows(&mut out, m, |i, row| {
        let ai = a.row(i);
        for (j, v) in row.iter_mut().enumerate() {
            *v = sq_dist(ai, b.row(j));
        }
    });
    Ok(Array2::from_shape_vec((a.nrows(), m), out).expect("shape"))
}

/// `W_ij = exp(-D2_ij / ε²)`.
pub fn gaussian_kernel(d2: ArrayView2<f64>, epsilon: f64) -> Result<Array2<f64>> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "kernel bandwidth must be positive, got {epsilon}"
        )));
    }
    let e2 = epsilon * epsilon;
    Ok(d2.mapv(|d| (-d / e2).exp()))
}

fn positive_row_sums(w: ArrayView2<f64>) -> Result<Array1<f64>> {
    let sums = w.sum_axis(Axis(1));
    if let Some(i) = sums.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::Degenerate(format!(
            "kernel row {i} sums to {}",
            sums[i]
        )));
    }
    Ok(sums)
}

/// `W~ = P⁻¹ W P⁻¹` with `P_ii = Σ_j W_ij`. Also returns the diagonal of `P`.
pub fn density_normalize_with_sums(w: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    let p = positive_row_sums(w)?;
    let mut out = w.to_owned();
    for ((i, j), v) in out.indexed_iter_mut() {
        *v /= p[i] * p[j];
    }
    Ok((out, p))
}

pub fn density_normalize(w: ArrayView2<f64>) -> Result<Array2<f64>> {
    density_normalize_with_sums(w).map(|(m, _)| m)
}

/// Row-stochastic `K = D⁻¹ W~` with `D_ii = Σ_j W~_ij`. Also returns `D`.
pub fn markov_normalize_with_sums(w: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    let d = positive_row_sums(w)?;
    let k = &w / &d.view().insert_axis(Axis(1));
    Ok((k, d))
}

pub fn markov_normalize(w: ArrayView2<f64>) -> Result<Array2<f64>> {
    markov_normalize_with_sums(w).map(|(m, _)| m)
}

/// `ε = sqrt(median of the nonzero pairwise squared distances)`.
pub fn epsilon_median_heuristic(d2: ArrayView2<f64>) -> Result<f64> {
    let n = d2.nrows();
    if n < 2 || d2.ncols() != n {
        return Err(Error::InvalidInput(
            "median heuristic needs a square distance matrix of at least 2 points".into(),
        ));
    }
    let mut vals: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let v = d2[[i, j]];
            if v > 0.0 {
                vals.push(v);
            }
        }
    }
    if vals.is_empty() {
        return Err(Error::Degenerate("all pairwise distances are zero".into()));
    }
    let mid = vals.len() / 2;
    let (_, upper, _) = vals.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    let median = if vals.len() % 2 == 1 {
        upper
    } else {
        let lower = vals[..mid]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    };
    Ok(median.sqrt())
}

/// A fully normalized Markov kernel over one point set.
#[derive(Debug, Clone)]
pub struct MarkovKernel {
    pub k: Array2<f64>,
    pub epsilon: f64,
    /// Row sums `D` of the (density-normalized) affinity.
    pub degree: Array1<f64>,
}

/// Distances, Gaussian affinity, optional density normalization and Markov
/// normalization in one step.
pub fn markov_kernel(
    x: ArrayView2<f64>,
    params: &KernelParams,
    exec: Exec,
) -> Result<MarkovKernel> {
    let d2 = pairwise_sq_distances_with(x, exec)?;
    let epsilon = params.resolve_epsilon(d2.view())?;
    let w = gaussian_kernel(d2.view(), epsilon)?;
    let w = if params.density_normalize {
        density_normalize(w.view())?
    } else {
        w
    };
    let (k, degree) = markov_normalize_with_sums(w.view())?;
    Ok(MarkovKernel { k, epsilon, degree })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn distances_trivial_cases() {
        let same = array![[1.0, 2.0], [1.0, 2.0]];
        assert!(pairwise_sq_distances(same.view())
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        let line = array![[0.0], [3.0]];
        let d = pairwise_sq_distances(line.view()).unwrap();
        assert_eq!(d, array![[0.0, 9.0], [9.0, 0.0]]);
        assert!(pairwise_sq_distances(array![[f64::NAN], [1.0]].view()).is_err());
        assert!(pairwise_sq_distances(array![[1.0]].view()).is_err());
    }

    #[test]
    fn distances_match_double_loop() {
        let x = random(6, 4, 1);
        let d = pairwise_sq_distances(x.view()).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let mut s = 0.0;
                for k in 0..4 {
                    s += (x[[i, k]] - x[[j, k]]).powi(2);
                }
                assert!((d[[i, j]] - s).abs() < 1e-12);
                assert_eq!(d[[i, j]], d[[j, i]]);
            }
        }
        let seq = pairwise_sq_distances_with(x.view(), Exec::Sequential).unwrap();
        assert_eq!(seq, d);
    }

    #[test]
    fn kernel_values() {
        let z = Array2::<f64>::zeros((3, 3));
        assert!(gaussian_kernel(z.view(), 0.5)
            .unwrap()
            .iter()
            .all(|&v| v == 1.0));
        let eps: f64 = 1.7;
        let d = array![[0.0, eps * eps], [eps * eps, 0.0]];
        let w = gaussian_kernel(d.view(), eps).unwrap();
        assert!((w[[0, 1]] - (-1.0f64).exp()).abs() < 1e-15);
        assert!(gaussian_kernel(d.view(), 0.0).is_err());
        assert!(gaussian_kernel(d.view(), -1.0).is_err());

        let r = random(5, 5, 2).mapv(f64::abs);
        let w = gaussian_kernel(r.view(), 0.8).unwrap();
        for ((i, j), v) in w.indexed_iter() {
            assert!((v - (-r[[i, j]] / 0.64).exp()).abs() < 1e-15);
        }
    }

    #[test]
    fn density_normalization_cases() {
        let eye = Array2::<f64>::eye(2);
        assert_eq!(density_normalize(eye.view()).unwrap(), eye);
        let ones = Array2::<f64>::ones((4, 4));
        assert!(density_normalize(ones.view())
            .unwrap()
            .iter()
            .all(|&v| (v - 1.0 / 16.0).abs() < 1e-16));
        let x = random(4, 3, 3);
        let w = gaussian_kernel(pairwise_sq_distances(x.view()).unwrap().view(), 1.0).unwrap();
        let p = w.sum_axis(Axis(1));
        let pinv = Array2::from_diag(&p.mapv(|v| 1.0 / v));
        let oracle = pinv.dot(&w).dot(&pinv);
        let got = density_normalize(w.view()).unwrap();
        assert!((&got - &oracle).iter().all(|v| v.abs() < 1e-15));
        assert!(density_normalize(Array2::<f64>::zeros((2, 2)).view()).is_err());
    }

    #[test]
    fn markov_normalization_cases() {
        let k = markov_normalize(array![[1.0, 1.0], [1.0, 1.0]].view()).unwrap();
        assert_eq!(k, array![[0.5, 0.5], [0.5, 0.5]]);
        let k = markov_normalize(Array2::from_diag(&array![2.0, 3.0, 0.5]).view()).unwrap();
        assert_eq!(k, Array2::<f64>::eye(3));
        let r = random(5, 5, 4).mapv(|v| v.abs() + 0.01);
        let k = markov_normalize(r.view()).unwrap();
        for row in k.outer_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-14);
        }
        assert!(markov_normalize(array![[0.0, 0.0], [1.0, 1.0]].view()).is_err());
    }

    #[test]
    fn median_heuristic() {
        let d = Array2::from_shape_fn((4, 4), |(i, j)| if i == j { 0.0 } else { 4.0 });
        assert_eq!(epsilon_median_heuristic(d.view()).unwrap(), 2.0);
        let dup = Array2::<f64>::zeros((3, 3));
        assert!(epsilon_median_heuristic(dup.view()).is_err());

        let x = random(9, 2, 5);
        let d = pairwise_sq_distances(x.view()).unwrap();
        let mut v: Vec<f64> = (0..9)
            .flat_map(|i| (i + 1..9).map(move |j| (i, j)))
            .map(|(i, j)| d[[i, j]])
            .collect();
        v.sort_by(f64::total_cmp);
        let oracle = if v.len() % 2 == 1 {
            v[v.len() / 2]
        } else {
            0.5 * (v[v.len() / 2 - 1] + v[v.len() / 2])
        };
        assert_eq!(epsilon_median_heuristic(d.view()).unwrap(), oracle.sqrt());
    }
}
