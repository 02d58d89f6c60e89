use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::spectra::kfold_indices;

/// One hyper-parameter assignment, keyed by spec field name.
pub type ParamSet = BTreeMap<String, Value>;

/// Sampling distribution for one hyper-parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum ParamDist {
    Uniform { low: f64, high: f64 },
    LogUniform { low: f64, high: f64 },
    /// Inclusive integer range.
    IntRange { low: i64, high: i64 },
    Choice { values: Vec<Value> },
}

impl ParamDist {
    fn validate(&self, name: &str) -> Result<()> {
        let ok = match self {
            ParamDist::Uniform { low, high } => low <= high && low.is_finite() && high.is_finite(),
            ParamDist::LogUniform { low, high } => *low > 0.0 && low <= high && high.is_finite(),
            ParamDist::IntRange { low, high } => low <= high,
            ParamDist::Choice { values } => !values.is_empty(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("empty or invalid range for {name}")))
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Value {
        match self {
            ParamDist::Uniform { low, high } => Value::from(low + (high - low) * rng.random::<f64>()),
            ParamDist::LogUniform { low, high } => {
                let (a, b) = (low.ln(), high.ln());
                Value::from((a + (b - a) * rng.random::<f64>()).exp())
            }
            ParamDist::IntRange { low, high } => Value::from(rng.random_range(*low..=*high)),
            ParamDist::Choice { values } => values[rng.random_range(0..values.len())].clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpec {
    pub params: BTreeMap<String, ParamDist>,
    pub n_draws: usize,
    pub folds: usize,
    pub seed: u64,
}

impl Default for SearchSpec {
    fn default() -> Self {
        Self {
            params: BTreeMap::new(),
            n_draws: 20,
            folds: 10,
            seed: 0,
        }
    }
}

impl SearchSpec {
    /// All draws, in order. Sampling is sequential so the draws depend only
    /// on the seed.
    pub fn draws(&self) -> Result<Vec<ParamSet>> {
        if self.n_draws == 0 {
            return Err(Error::Config("search needs at least one draw".into()));
        }
        for (k, d) in &self.params {
            d.validate(k)?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        Ok((0..self.n_draws)
            .map(|_| self.params.iter().map(|(k, d)| (k.clone(), d.draw(&mut rng))).collect())
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRow {
    pub draw_id: usize,
    pub params: ParamSet,
    /// `None` when the draw failed numerically (e.g. diverged).
    pub cv_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best_draw: usize,
    pub best: ParamSet,
    pub best_cv_mse: f64,
    pub table: Vec<SearchRow>,
}

/// Overrides fields of `base` with `params`; unknown names are an error.
pub fn apply_params<T: Serialize + DeserializeOwned>(base: &T, params: &ParamSet) -> Result<T> {
    let mut v = serde_json::to_value(base)?;
    let obj = v
        .as_object_mut()
        .ok_or_else(|| Error::Config("hyper-parameters apply only to struct specs".into()))?;
    for (k, val) in params {
        if !obj.contains_key(k) {
            return Err(Error::Config(format!("unknown hyper-parameter {k:?}")));
        }
        let val = match (&obj[k], val) {
            // Integer fields accept whole floats drawn from a continuous range.
            (Value::Number(old), Value::Number(new)) if old.is_u64() && !new.is_u64() => new
                .as_f64()
                .filter(|f| *f >= 0.0)
                .map(|f| Value::from(f.round() as u64))
                .unwrap_or_else(|| val.clone()),
            _ => val.clone(),
        };
        obj.insert(k.clone(), val);
    }
    serde_json::from_value(v).map_err(|e| Error::Config(format!("bad hyper-parameters: {e}")))
}

/// Pooled k-fold MSE of a fit-and-predict closure.
pub fn cv_mse<F>(x: ArrayView2<f64>, y: ArrayView1<f64>, folds: usize, seed: u64, fit_predict: F) -> Result<f64>
where
    F: Fn(ArrayView2<f64>, ArrayView1<f64>, ArrayView2<f64>) -> Result<Array1<f64>>,
{
    let splits = kfold_indices(x.nrows(), folds, seed)?;
    let mut sq = 0.0;
    for (train, test) in &splits {
        let xt = x.select(Axis(0), train);
        let yt = y.select(Axis(0), train);
        let xv = x.select(Axis(0), test);
        let pred = fit_predict(xt.view(), yt.view(), xv.view())?;
        sq += test.iter().zip(pred.iter()).map(|(&i, p)| (p - y[i]) * (p - y[i])).sum::<f64>();
    }
    Ok(sq / x.nrows() as f64)
}

/// Random hyper-parameter search scored by k-fold CV MSE. `fit_predict`
/// receives a draw and `(x_train, y_train, x_test)`. Draws may run in
/// parallel; the winner is the lowest score, earliest draw on ties.
pub fn random_search<F>(
    search: &SearchSpec,
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    exec: Exec,
    fit_predict: F,
) -> Result<SearchResult>
where
    F: Fn(&ParamSet, ArrayView2<f64>, ArrayView1<f64>, ArrayView2<f64>) -> Result<Array1<f64>> + Sync + Send,
{
    let draws = search.draws()?;
    let scores = exec.map(draws.len(), |d| {
        cv_mse(x, y, search.folds, search.seed, |xt, yt, xv| fit_predict(&draws[d], xt, yt, xv))
    });
    let mut table = Vec::with_capacity(draws.len());
    let mut best: Option<(usize, f64)> = None;
    let mut last_err = None;
    for (draw_id, (params, score)) in draws.into_iter().zip(scores).enumerate() {
        let cv = match score {
            Ok(s) if s.is_finite() => Some(s),
            Ok(_) => None,
            Err(e) if e.is_numeric() => {
                last_err = Some(e);
                None
            }
            Err(e) => return Err(e),
        };
        if let Some(s) = cv {
            if best.is_none_or(|(_, b)| s < b) {
                best = Some((draw_id, s));
            }
        }
        table.push(SearchRow {
            draw_id,
            params,
            cv_mse: cv,
        });
    }
    let (best_draw, best_cv_mse) = best.ok_or_else(|| {
        Error::Numerical(format!(
            "every search draw failed{}",
            last_err.map(|e| format!(" (last: {e})")).unwrap_or_default()
        ))
    })?;
    Ok(SearchResult {
        best_draw,
        best: table[best_draw].params.clone(),
        best_cv_mse,
        table,
    })
}

/// Writes `draw_id,params_json,cv_mse`; failed draws have an empty score.
pub fn write_search_table(result: &SearchResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?;
    w.write_record(["draw_id", "params_json", "cv_mse"])
        .map_err(|e| Error::Csv(e.to_string()))?;
    for row in &result.table {
        w.write_record([
            row.draw_id.to_string(),
            serde_json::to_string(&row.params)?,
            row.cv_mse.map(|v| v.to_string()).unwrap_or_default(),
        ])
        .map_err(|e| Error::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
