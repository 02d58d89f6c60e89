//! Dense linear-algebra glue between `ndarray` (the data type used across the
//! crate) and `nalgebra` (eigen and factorization routines).

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

pub fn to_na(a: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub fn from_na(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Full eigendecomposition of a symmetric matrix, eigenvalues descending.
/// Eigenvectors are the columns of the returned matrix.
pub fn symmetric_eigen(s: ArrayView2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = s.nrows();
    if n == 0 || s.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "symmetric eigensolve needs a square matrix, got {}x{}",
            s.nrows(),
            s.ncols()
        )));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite entry in eigenproblem".into()));
    }
    let eig = nalgebra::SymmetricEigen::try_new(to_na(s), f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = Array2::from_shape_fn((n, n), |(i, c)| eig.eigenvectors[(i, order[c])]);
    Ok((values, vectors))
}

/// Leading real eigenpairs of a general (nonsymmetric) real matrix.
#[derive(Debug, Clone)]
pub struct RealEigenpairs {
    /// Eigenvalues ordered by decreasing modulus.
    pub values: Vec<f64>,
    /// Unit-norm eigenvectors in the columns, same order as `values`.
    pub vectors: Array2<f64>,
}

/// Computes the `count` eigenvalues of largest modulus of `a` (real Schur
/// form) and their eigenvectors (shifted inverse iteration).
///
/// Fails when any retained eigenvalue has an imaginary part larger than
/// `imag_tol * |lambda|`.
pub fn leading_real_eigenpairs(
    a: ArrayView2<f64>,
    count: usize,
    imag_tol: f64,
) -> Result<RealEigenpairs> {
    let n = a.nrows();
    if a.ncols() != n || count == 0 || count > n {
        return Err(Error::DimensionMismatch(format!(
            "cannot take {count} eigenpairs of a {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite entry in eigenproblem".into()));
    }
    let m = to_na(a);
    let schur = nalgebra::Schur::try_new(m.clone(), f64::EPSILON, 200 * n.max(10))
        .ok_or_else(|| Error::Numerical("real Schur decomposition did not converge".into()))?;
    let eigs = schur.complex_eigenvalues();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eigs[j]
            .norm()
            .total_cmp(&eigs[i].norm())
            .then(eigs[j].re.total_cmp(&eigs[i].re))
    });
    let scale = eigs
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);

    let mut values = Vec::with_capacity(count);
    for &k in order.iter().take(count) {
        let z = eigs[k];
        if z.im.abs() > imag_tol * z.norm().max(1e-300) {
            return Err(Error::Numerical(format!(
                "eigenvalue {} {:+}i is not real within tolerance",
                z.re, z.im
            )));
        }
        values.push(z.re);
    }

    let mut vectors = Array2::<f64>::zeros((n, count));
    let cluster_tol = 1e-8 * scale;
    for (c, &lambda) in values.iter().enumerate() {
        let mut shift = 1e-10 * scale;
        let v = loop {
            let shifted = &m - DMatrix::identity(n, n) * (lambda + shift);
            let lu = shifted.lu();
            let mut v =
                DVector::from_fn(n, |i, _| 1.0 + 0.5 * ((i as f64) * 1.618 + c as f64).sin());
            let mut ok = true;
            for _ in 0..4 {
                match lu.solve(&v) {
                    Some(w) if w.iter().all(|x| x.is_finite()) => v = w,
                    _ => {
                        ok = false;
                        break;
                    }
                }
                // Stay inside a (near-)degenerate eigenspace without
                // collapsing onto an already extracted vector.
                for prev in 0..c {
                    if (values[prev] - lambda).abs() <= cluster_tol {
                        let p = vectors.column(prev);
                        let dot: f64 = (0..n).map(|i| p[i] * v[i]).sum();
                        for i in 0..n {
                            v[i] -= dot * p[i];
                        }
                    }
                }
                let norm = v.norm();
                if !(norm > 0.0 && norm.is_finite()) {
                    ok = false;
                    break;
                }
                v /= norm;
            }
            if ok {
                break v;
            }
            shift *= 100.0;
            if shift > 1e-4 * scale {
                return Err(Error::Numerical(format!(
                    "inverse iteration failed for eigenvalue {lambda}"
                )));
            }
        };
        for i in 0..n {
            vectors[[i, c]] = v[i];
        }
    }
    Ok(RealEigenpairs { values, vectors })
}

/// Solves `a x = b` for a small dense square system (LU with partial pivoting).
pub fn solve(a: ArrayView2<f64>, b: ArrayView1<f64>) -> Result<Array1<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::DimensionMismatch("solve: shape mismatch".into()));
    }
    let x = to_na(a)
        .lu()
        .solve(&DVector::from_iterator(n, b.iter().copied()))
        .ok_or_else(|| Error::Numerical("singular linear system".into()))?;
    Ok(Array1::from_iter(x.iter().copied()))
}

/// Least-squares solution of `a x = b` (multiple right-hand sides) via SVD.
pub fn lstsq(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Array2<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch("lstsq: row mismatch".into()));
    }
    let svd = nalgebra::SVD::new(to_na(a), true, true);
    let x = svd
        .solve(&to_na(b), 1e-12)
        .map_err(|e| Error::Numerical(format!("least squares failed: {e}")))?;
    Ok(from_na(&x))
}

/// Ordinary least squares with intercept; returns fitted values.
pub fn ols_fit_predict(features: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = features.nrows();
    let mut design = Array2::<f64>::ones((n, features.ncols() + 1));
    design.slice_mut(ndarray::s![.., 1..]).assign(&features);
    let coef = lstsq(design.view(), targets)?;
    Ok(design.dot(&coef))
}

/// Pooled coefficient of determination over all output columns.
pub fn r2_pooled(actual: ArrayView2<f64>, predicted: ArrayView2<f64>) -> f64 {
    let mean = actual.mean_axis(Axis(0)).expect("nonempty");
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (row_a, row_p) in actual.outer_iter().zip(predicted.outer_iter()) {
        for j in 0..row_a.len() {
            ss_res += (row_a[j] - row_p[j]).powi(2);
            ss_tot += (row_a[j] - mean[j]).powi(2);
        }
    }
    if ss_tot == 0.0 {
        return if ss_res == 0.0 { 1.0 } else { 0.0 };
    }
    1.0 - ss_res / ss_tot
}

/// R² of an OLS regression (with intercept) of `targets` on `features`.
pub fn ols_r2(features: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<f64> {
    let fitted = ols_fit_predict(features, targets)?;
    Ok(r2_pooled(targets, fitted.view()))
}

pub fn pearson(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let n = a.len() as f64;
    let ma = a.sum() / n;
    let mb = b.sum() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn symmetric_eigen_sorted_descending() {
        let s = array![[2.0, 1.0], [1.0, 2.0]];
        let (vals, vecs) = symmetric_eigen(s.view()).unwrap();
        assert!((vals[0] - 3.0).abs() < 1e-14 && (vals[1] - 1.0).abs() < 1e-14);
        let v0 = vecs.column(0);
        assert!((v0[0].abs() - v0[1].abs()).abs() < 1e-14);
    }

    #[test]
    fn general_eigenpairs_of_triangular_matrix() {
        let a = array![[3.0, 1.0, 0.5], [0.0, 2.0, 1.0], [0.0, 0.0, -1.0]];
        let e = leading_real_eigenpairs(a.view(), 3, 1e-8).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-12);
        assert!((e.values[1] - 2.0).abs() < 1e-12);
        assert!((e.values[2] + 1.0).abs() < 1e-12);
        for (c, &l) in e.values.iter().enumerate() {
            let v = e.vectors.column(c);
            let r = a.dot(&v) - &v * l;
            assert!(r.iter().all(|x| x.abs() < 1e-10), "{r}");
        }
    }

    #[test]
    fn rotation_has_complex_spectrum() {
        let a = array![[0.0, -1.0], [1.0, 0.0]];
        assert!(matches!(
            leading_real_eigenpairs(a.view(), 1, 1e-8),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn degenerate_eigenspace_gives_independent_vectors() {
        let a = array![[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]];
        let e = leading_real_eigenpairs(a.view(), 2, 1e-8).unwrap();
        let dot = e.vectors.column(0).dot(&e.vectors.column(1));
        assert!(dot.abs() < 1e-10);
    }

    #[test]
    fn ols_recovers_exact_line() {
        let x = array![[0.0], [1.0], [2.0], [3.0]];
        let y = array![[1.0], [3.0], [5.0], [7.0]];
        assert!((ols_r2(x.view(), y.view()).unwrap() - 1.0).abs() < 1e-12);
    }
}
