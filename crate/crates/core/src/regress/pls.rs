use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::lstsq;
use crate::spectra::kfold_indices;

const MAX_ITER: usize = 500;
const TOL: f64 = 1e-12;

/// Partial least squares model (NIPALS, X-deflation only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlsModel {
    pub n_components: usize,
    pub x_mean: Array1<f64>,
    pub y_mean: Array1<f64>,
    /// X weights, one column per component.
    pub weights: Array2<f64>,
    /// X loadings.
    pub x_loadings: Array2<f64>,
    /// Y loadings.
    pub y_loadings: Array2<f64>,
    /// Training X scores.
    pub scores: Array2<f64>,
    /// Regression coefficients on centered X.
    pub coef: Array2<f64>,
}

struct Nipals {
    w: Vec<Array1<f64>>,
    p: Vec<Array1<f64>>,
    q: Vec<Array1<f64>>,
    t: Vec<Array1<f64>>,
    x_mean: Array1<f64>,
    y_mean: Array1<f64>,
}

/// Extracts up to `k` components. With `allow_short`, stops early at the
/// first degenerate component instead of failing.
fn nipals(x: ArrayView2<f64>, y: ArrayView2<f64>, k: usize, allow_short: bool) -> Result<Nipals> {
    let x_mean = x.mean_axis(Axis(0)).expect("nonempty");
    let y_mean = y.mean_axis(Axis(0)).expect("nonempty");
    let mut xr = &x - &x_mean;
    let yc = &y - &y_mean;
    let scale = xr.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let mut out = Nipals {
        w: vec![],
        p: vec![],
        q: vec![],
        t: vec![],
        x_mean,
        y_mean,
    };
    let y_col = (0..yc.ncols())
        .max_by(|&a, &b| {
            let va: f64 = yc.column(a).iter().map(|v| v * v).sum();
            let vb: f64 = yc.column(b).iter().map(|v| v * v).sum();
            va.total_cmp(&vb).then(b.cmp(&a))
        })
        .expect("at least one target");
    for comp in 0..k {
        let mut u = yc.column(y_col).to_owned();
        let mut t_old: Option<Array1<f64>> = None;
        let mut converged = None;
        for _ in 0..MAX_ITER {
            let mut w = xr.t().dot(&u);
            let wn = w.dot(&w).sqrt();
            let un = u.dot(&u).sqrt();
            if !(wn > 1e-12 * scale * un.max(f64::MIN_POSITIVE)) {
                break;
            }
            w /= wn;
            let t = xr.dot(&w);
            let tt = t.dot(&t);
            let q = yc.t().dot(&t) / tt;
            let qq = q.dot(&q);
            let done = t_old
                .as_ref()
                .is_some_and(|o| (&t - o).mapv(|v| v * v).sum().sqrt() <= TOL * tt.sqrt());
            if yc.ncols() == 1 || done || !(qq > 0.0) {
                converged = Some((w, t, q));
                break;
            }
            u = yc.dot(&q) / qq;
            t_old = Some(t);
        }
        let Some((w, t, q)) = converged else {
            if allow_short && comp > 0 {
                break;
            }
            return Err(Error::Degenerate(format!("PLS component {} has zero variance", comp + 1)));
        };
        let tt = t.dot(&t);
        let p = xr.t().dot(&t) / tt;
        xr -= &t.view().insert_axis(Axis(1)).dot(&p.view().insert_axis(Axis(0)));
        out.w.push(w);
        out.p.push(p);
        out.q.push(q);
        out.t.push(t);
    }
    Ok(out)
}

fn stack(cols: &[Array1<f64>], k: usize) -> Array2<f64> {
    let n = cols[0].len();
    Array2::from_shape_fn((n, k), |(i, c)| cols[c][i])
}

/// `B = W (PᵀW)⁻¹ Qᵀ` from the first `k` components.
fn coefficients(nip: &Nipals, k: usize) -> Result<Array2<f64>> {
    let w = stack(&nip.w, k);
    let p = stack(&nip.p, k);
    let q = stack(&nip.q, k);
    let ptw = p.t().dot(&w);
    let inv_qt = lstsq(ptw.view(), q.t())?;
    Ok(w.dot(&inv_qt))
}

fn check(x: ArrayView2<f64>, y: ArrayView2<f64>, k: usize) -> Result<()> {
    let (n, p) = x.dim();
    if y.nrows() != n {
        return Err(Error::DimensionMismatch(format!("{n} rows but {} target rows", y.nrows())));
    }
    if y.ncols() == 0 || p == 0 {
        return Err(Error::InvalidInput("empty feature or target matrix".into()));
    }
    if k == 0 || k > (n.saturating_sub(1)).min(p) {
        return Err(Error::InvalidInput(format!(
            "{k} components outside 1..={} for {n} samples and {p} features",
            (n.saturating_sub(1)).min(p)
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value".into()));
    }
    Ok(())
}

pub fn pls_fit(x: ArrayView2<f64>, y: ArrayView2<f64>, n_components: usize) -> Result<PlsModel> {
    check(x, y, n_components)?;
    let nip = nipals(x, y, n_components, false)?;
    let coef = coefficients(&nip, n_components)?;
    Ok(PlsModel {
        n_components,
        weights: stack(&nip.w, n_components),
        x_loadings: stack(&nip.p, n_components),
        y_loadings: stack(&nip.q, n_components),
        scores: stack(&nip.t, n_components),
        coef,
        x_mean: nip.x_mean,
        y_mean: nip.y_mean,
    })
}

pub fn pls_predict(model: &PlsModel, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    if x.ncols() != model.x_mean.len() {
        return Err(Error::DimensionMismatch(format!(
            "model expects {} features, got {}",
            model.x_mean.len(),
            x.ncols()
        )));
    }
    Ok((&x - &model.x_mean).dot(&model.coef) + &model.y_mean)
}

/// Cross-validated component choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentChoice {
    pub n_components: usize,
    /// Pooled CV MSE for 1, 2, … components.
    pub cv_mse: Vec<f64>,
}

/// Picks the component count with the lowest pooled k-fold MSE, preferring
/// fewer components among (numerical) ties.
pub fn pls_choose_components(
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    k_max: usize,
    folds: usize,
    seed: u64,
) -> Result<ComponentChoice> {
    if k_max == 0 {
        return Err(Error::InvalidInput("k_max must be at least 1".into()));
    }
    let splits = kfold_indices(x.nrows(), folds, seed)?;
    let mut limit = k_max;
    let mut sq: Vec<f64> = vec![0.0; k_max];
    let mut count = 0usize;
    for (train, test) in &splits {
        let xt = x.select(Axis(0), train);
        let yt = y.select(Axis(0), train);
        let bound = (train.len().saturating_sub(1)).min(x.ncols());
        limit = limit.min(bound);
        if limit == 0 {
            return Err(Error::InvalidInput("training folds too small for PLS".into()));
        }
        let nip = nipals(xt.view(), yt.view(), limit, true)?;
        limit = limit.min(nip.w.len());
        let xv = x.select(Axis(0), test);
        let yv = y.select(Axis(0), test);
        let xc = &xv - &nip.x_mean;
        for k in 1..=limit {
            let pred = xc.dot(&coefficients(&nip, k)?) + &nip.y_mean;
            sq[k - 1] += (&pred - &yv).mapv(|v| v * v).sum();
        }
        count += yv.len();
    }
    let cv_mse: Vec<f64> = sq[..limit].iter().map(|s| s / count as f64).collect();
    let var = y.var_axis(Axis(0), 0.0).sum().max(f64::MIN_POSITIVE);
    let best = cv_mse.iter().copied().fold(f64::INFINITY, f64::min);
    let n_components = 1 + cv_mse
        .iter()
        .position(|&m| m <= best + 1e-10 * var)
        .expect("nonempty curve");
    Ok(ComponentChoice { n_components, cv_mse })
}

impl PlsModel {
    /// Largest `|t_iᵀt_j| / (‖t_i‖‖t_j‖)` over distinct score pairs.
    pub fn max_score_correlation(&self) -> f64 {
        let k = self.n_components;
        let mut worst: f64 = 0.0;
        for i in 0..k {
            for j in i + 1..k {
                let (a, b) = (self.scores.column(i), self.scores.column(j));
                worst = worst.max(a.dot(&b).abs() / (a.dot(&a) * b.dot(&b)).sqrt());
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::r2_pooled;
    use crate::regress::mlp::design;

    fn rank_k(n: usize, p: usize, k: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
        let t = design(n, k, seed);
        let load = design(k, p, seed + 1);
        let x = t.dot(&load);
        let c = design(k, 1, seed + 2);
        (x, t.dot(&c))
    }

    #[test]
    fn recovers_rank_k_relation() {
        let (x, y) = rank_k(60, 12, 3, 1);
        let m = pls_fit(x.view(), y.view(), 3).unwrap();
        let r2 = r2_pooled(y.view(), pls_predict(&m, x.view()).unwrap().view());
        assert!(r2 > 0.999, "{r2}");
        assert!(m.max_score_correlation() < 1e-8);
        let choice = pls_choose_components(x.view(), y.view(), 8, 5, 0).unwrap();
        assert_eq!(choice.n_components, 3);
    }

    #[test]
    fn full_rank_interpolates() {
        let x = design(30, 6, 2);
        let y = design(30, 2, 3);
        let m = pls_fit(x.view(), y.view(), 6).unwrap();
        let y_ols = {
            let xc = &x - &x.mean_axis(Axis(0)).unwrap();
            let yc = &y - &y.mean_axis(Axis(0)).unwrap();
            xc.dot(&lstsq(xc.view(), yc.view()).unwrap()) + y.mean_axis(Axis(0)).unwrap()
        };
        let p = pls_predict(&m, x.view()).unwrap();
        assert!((&p - &y_ols).iter().all(|v| v.abs() < 1e-8));
        let exact = x.dot(&design(6, 1, 9));
        let m = pls_fit(x.view(), exact.view(), 6).unwrap();
        let res = (&pls_predict(&m, x.view()).unwrap() - &exact).mapv(f64::abs).fold(0.0, |a: f64, &b| a.max(b));
        assert!(res < 1e-8, "{res}");
        assert!(m.max_score_correlation() < 1e-8);
    }

    #[test]
    fn noise_prefers_one_component() {
        let x = design(40, 10, 4);
        let y = design(40, 1, 5);
        let c = pls_choose_components(x.view(), y.view(), 6, 10, 1).unwrap();
        assert_eq!(c.n_components, 1, "{:?}", c.cv_mse);
    }

    #[test]
    fn bounds() {
        let x = design(5, 10, 6);
        let y = design(5, 1, 7);
        assert!(pls_fit(x.view(), y.view(), 0).is_err());
        assert!(pls_fit(x.view(), y.view(), 5).is_err());
        assert!(pls_fit(x.view(), y.view(), 4).is_ok());
    }
}
