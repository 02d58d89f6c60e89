use ndarray::{Array1, ArrayView1, ArrayView2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gradient-boosted regression tree settings (squared-error loss).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtSpec {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Shrinkage in `(0, 1]`.
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    /// Fraction of rows used to grow each tree's structure.
    pub subsample: f64,
    pub seed: u64,
}

impl Default for GbtSpec {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_depth: 3,
            learning_rate: 0.1,
            min_samples_leaf: 1,
            lambda: 1.0,
            subsample: 1.0,
            seed: 0,
        }
    }
}

impl GbtSpec {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::Config(format!("learning rate must be in (0, 1], got {}", self.learning_rate)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config("lambda must be nonnegative".into()));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::Config(format!("subsample must be in (0, 1], got {}", self.subsample)));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::Config("min_samples_leaf must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Rows with `x[feature] < threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, x: ArrayView1<f64>) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] < *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub base_score: f64,
    pub learning_rate: f64,
    pub n_features: usize,
    pub trees: Vec<Tree>,
    /// Training MSE after each round.
    pub train_mse: Vec<f64>,
}

struct Builder<'a> {
    x: ArrayView2<'a, f64>,
    grad: &'a [f64],
    spec: &'a GbtSpec,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn leaf_value(&self, rows: &[usize]) -> f64 {
        let g: f64 = rows.iter().map(|&r| self.grad[r]).sum();
        -g / (rows.len() as f64 + self.spec.lambda)
    }

    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.spec.lambda)
    }

    /// Best split as (gain, feature, threshold); first seen wins ties.
    fn best_split(&self, rows: &[usize]) -> Option<(f64, usize, f64)> {
        let n = rows.len();
        let min_leaf = self.spec.min_samples_leaf;
        if n < 2 * min_leaf {
            return None;
        }
        let g_tot: f64 = rows.iter().map(|&r| self.grad[r]).sum();
        let parent = self.score(g_tot, n as f64);
        let mut best: Option<(f64, usize, f64)> = None;
        let mut sorted = rows.to_vec();
        for f in 0..self.x.ncols() {
            sorted.sort_by(|&a, &b| self.x[[a, f]].total_cmp(&self.x[[b, f]]).then(a.cmp(&b)));
            let mut g_left = 0.0;
            for k in 0..n - 1 {
                g_left += self.grad[sorted[k]];
                let (lo, hi) = (self.x[[sorted[k], f]], self.x[[sorted[k + 1], f]]);
                let n_left = k + 1;
                if lo == hi || n_left < min_leaf || n - n_left < min_leaf {
                    continue;
                }
                let gain = 0.5
                    * (self.score(g_left, n_left as f64) + self.score(g_tot - g_left, (n - n_left) as f64)
                        - parent);
                if gain > 1e-12 * parent.abs().max(1e-300) && best.is_none_or(|(b, _, _)| gain > b) {
                    let mut thr = 0.5 * (lo + hi);
                    if thr <= lo {
                        thr = hi;
                    }
                    best = Some((gain, f, thr));
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value: 0.0 });
        let split = if depth < self.spec.max_depth {
            self.best_split(&rows)
        } else {
            None
        };
        match split {
            Some((_, feature, threshold)) => {
                let (l, r): (Vec<usize>, Vec<usize>) =
                    rows.iter().partition(|&&i| self.x[[i, feature]] < threshold);
                let left = self.grow(l, depth + 1);
                let right = self.grow(r, depth + 1);
                self.nodes[id] = Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
            }
            None => {
                self.nodes[id] = Node::Leaf {
                    value: self.leaf_value(&rows),
                }
            }
        }
        id
    }
}

/// Recomputes every leaf weight from all rows that reach it.
fn refit_leaves(tree: &mut Tree, x: ArrayView2<f64>, grad: &[f64], lambda: f64) {
    let mut sums = vec![(0.0, 0usize); tree.nodes.len()];
    for r in 0..x.nrows() {
        let mut i = 0;
        while let Node::Split {
            feature,
            threshold,
            left,
            right,
        } = &tree.nodes[i]
        {
            i = if x[[r, *feature]] < *threshold { *left } else { *right };
        }
        sums[i].0 += grad[r];
        sums[i].1 += 1;
    }
    for (node, (g, c)) in tree.nodes.iter_mut().zip(sums) {
        if let Node::Leaf { value } = node {
            *value = -g / (c as f64 + lambda);
        }
    }
}

pub fn gbt_fit(x: ArrayView2<f64>, y: ArrayView1<f64>, spec: &GbtSpec) -> Result<GbtModel> {
    spec.validate()?;
    let n = x.nrows();
    if x.ncols() == 0 {
        return Err(Error::InvalidInput("empty feature matrix".into()));
    }
    if n != y.len() {
        return Err(Error::DimensionMismatch(format!("{n} rows but {} targets", y.len())));
    }
    if n < 2 {
        return Err(Error::InvalidInput("need at least 2 training samples".into()));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite training value".into()));
    }
    let base_score = y.mean().expect("nonempty");
    let mut pred = vec![base_score; n];
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_sub = ((spec.subsample * n as f64).round() as usize).clamp(1, n);
    let mut trees = Vec::with_capacity(spec.n_trees);
    let mut train_mse = Vec::with_capacity(spec.n_trees);
    for _ in 0..spec.n_trees {
        let grad: Vec<f64> = (0..n).map(|i| pred[i] - y[i]).collect();
        let rows: Vec<usize> = if n_sub == n {
            (0..n).collect()
        } else {
            let mut r = sample(&mut rng, n, n_sub).into_vec();
            r.sort_unstable();
            r
        };
        let mut b = Builder {
            x,
            grad: &grad,
            spec,
            nodes: Vec::new(),
        };
        b.grow(rows, 0);
        let mut tree = Tree { nodes: b.nodes };
        if n_sub < n {
            refit_leaves(&mut tree, x, &grad, spec.lambda);
        }
        for (i, p) in pred.iter_mut().enumerate() {
            *p += spec.learning_rate * tree.predict_row(x.row(i));
        }
        train_mse.push(pred.iter().zip(y.iter()).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n as f64);
        trees.push(tree);
    }
    Ok(GbtModel {
        base_score,
        learning_rate: spec.learning_rate,
        n_features: x.ncols(),
        trees,
        train_mse,
    })
}

pub fn gbt_predict(model: &GbtModel, x: ArrayView2<f64>) -> Result<Array1<f64>> {
    if x.ncols() != model.n_features {
        return Err(Error::DimensionMismatch(format!(
            "model expects {} features, got {}",
            model.n_features,
            x.ncols()
        )));
    }
    Ok(x.rows()
        .into_iter()
        .map(|r| {
            model.base_score
                + model.learning_rate * model.trees.iter().map(|t| t.predict_row(r)).sum::<f64>()
        })
        .collect())
}
