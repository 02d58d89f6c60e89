//! Small dense feed-forward networks with exact gradients, including the
//! gradient of losses that depend on the input Jacobian.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    #[inline]
    pub fn d1(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    #[inline]
    pub fn d2(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            Activation::Relu | Activation::Identity => 0.0,
        }
    }
}

/// `h = σ(W x + b)` with `W` of shape `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub act: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<Dense>,
}

/// Gradient buffers shaped like a [`Network`].
#[derive(Debug, Clone)]
pub struct Grads {
    pub w: Vec<Array2<f64>>,
    pub b: Vec<Array1<f64>>,
}

/// Activations saved by [`Network::forward_cached`].
#[derive(Debug, Clone)]
pub struct Cache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

/// Per-sample forward pass that also carries the input Jacobian.
#[derive(Debug, Clone)]
pub struct JacobianCache {
    inputs: Vec<Array1<f64>>,
    pre: Vec<Array1<f64>>,
    /// Jacobian of each layer's input with respect to the network input.
    jac_in: Vec<Array2<f64>>,
    /// `W_l J_{l-1}`.
    a: Vec<Array2<f64>>,
    pub output: Array1<f64>,
    pub jacobian: Array2<f64>,
}

impl Network {
    /// Xavier-uniform weights, zero biases. `widths` lists every layer width
    /// from input to output; hidden layers use `hidden`, the last layer
    /// `output`.
    pub fn new(widths: &[usize], hidden: Activation, output: Activation, rng: &mut impl Rng) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidInput(format!("invalid layer widths {widths:?}")));
        }
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Dense {
                    w: Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-bound..bound)),
                    b: Array1::zeros(fan_out),
                    act: if l == last { output } else { hidden },
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").w.nrows()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn set_params_flat(&mut self, p: &[f64]) {
        let mut off = 0;
        for l in &mut self.layers {
            for v in l.w.iter_mut() {
                *v = p[off];
                off += 1;
            }
            for v in l.b.iter_mut() {
                *v = p[off];
                off += 1;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }

    /// Sum of squared weights (biases excluded).
    pub fn weight_sq_norm(&self) -> f64 {
        self.layers.iter().map(|l| l.w.iter().map(|v| v * v).sum::<f64>()).sum()
    }

    pub fn check_input(&self, x: ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        Ok(())
    }

    /// Batch forward pass, one sample per row.
    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut h = x.to_owned();
        for l in &self.layers {
            let mut z = h.dot(&l.w.t());
            z += &l.b;
            z.mapv_inplace(|v| l.act.apply(v));
            h = z;
        }
        h
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Cache {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for l in &self.layers {
            let mut z = h.dot(&l.w.t());
            z += &l.b;
            let next = z.mapv(|v| l.act.apply(v));
            inputs.push(h);
            pre.push(z);
            h = next;
        }
        Cache {
            inputs,
            pre,
            output: h,
        }
    }

    /// Accumulates parameter gradients for the upstream gradient `dout` and
    /// returns the gradient with respect to the input batch.
    pub fn backward(&self, cache: &Cache, dout: ArrayView2<f64>, grads: &mut Grads) -> Array2<f64> {
        let mut g = dout.to_owned();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let z = &cache.pre[l];
            g.zip_mut_with(z, |gv, &zv| *gv *= layer.act.d1(zv));
            grads.w[l] += &g.t().dot(&cache.inputs[l]);
            grads.b[l] += &g.sum_axis(Axis(0));
            g = g.dot(&layer.w);
        }
        g
    }

    /// Forward pass for one sample, propagating `j0 = ∂x/∂(outer input)`.
    pub fn forward_jacobian(&self, x: ArrayView1<f64>, j0: ArrayView2<f64>) -> JacobianCache {
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut jac_in = Vec::with_capacity(n);
        let mut a_list = Vec::with_capacity(n);
        let mut h = x.to_owned();
        let mut j = j0.to_owned();
        for l in &self.layers {
            let z = l.w.dot(&h) + &l.b;
            let a = l.w.dot(&j);
            let mut jn = a.clone();
            for (mut row, &zv) in jn.outer_iter_mut().zip(z.iter()) {
                let d = l.act.d1(zv);
                row.mapv_inplace(|v| v * d);
            }
            let hn = z.mapv(|v| l.act.apply(v));
            inputs.push(h);
            pre.push(z);
            jac_in.push(j);
            a_list.push(a);
            h = hn;
            j = jn;
        }
        JacobianCache {
            inputs,
            pre,
            jac_in,
            a: a_list,
            output: h,
            jacobian: j,
        }
    }

    /// Reverse pass for a scalar loss depending on the output `h` and the
    /// Jacobian `J` of one sample, given `h̄ = ∂L/∂h` and `J̄ = ∂L/∂J`.
    /// Returns the gradient with respect to the sample input.
    pub fn backward_jacobian(
        &self,
        cache: &JacobianCache,
        h_bar: ArrayView1<f64>,
        j_bar: ArrayView2<f64>,
        grads: &mut Grads,
    ) -> Array1<f64> {
        let mut hb = h_bar.to_owned();
        let mut jb = j_bar.to_owned();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let z = &cache.pre[l];
            let a = &cache.a[l];
            let mut a_bar = jb.clone();
            let mut z_bar = Array1::zeros(z.len());
            for r in 0..z.len() {
                let d1 = layer.act.d1(z[r]);
                let d2 = layer.act.d2(z[r]);
                let mut dsum = 0.0;
                for c in 0..a.ncols() {
                    dsum += jb[[r, c]] * a[[r, c]];
                    a_bar[[r, c]] *= d1;
                }
                z_bar[r] = hb[r] * d1 + dsum * d2;
            }
            let zb2 = z_bar.view().insert_axis(Axis(1));
            let h_prev = cache.inputs[l].view().insert_axis(Axis(0));
            grads.w[l] += &a_bar.dot(&cache.jac_in[l].t());
            grads.w[l] += &zb2.dot(&h_prev);
            grads.b[l] += &z_bar;
            jb = layer.w.t().dot(&a_bar);
            hb = layer.w.t().dot(&z_bar);
        }
        hb
    }
}

impl Grads {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            w: net.layers.iter().map(|l| Array2::zeros(l.w.raw_dim())).collect(),
            b: net.layers.iter().map(|l| Array1::zeros(l.b.len())).collect(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.w.iter().zip(&self.b) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn scale(&mut self, s: f64) {
        self.w.iter_mut().for_each(|w| *w *= s);
        self.b.iter_mut().for_each(|b| *b *= s);
    }

    /// Adds the gradient of `coef · Σ W²`.
    pub fn add_weight_decay(&mut self, net: &Network, coef: f64) {
        for (g, l) in self.w.iter_mut().zip(&net.layers) {
            g.scaled_add(2.0 * coef, &l.w);
        }
    }
}

/// Adam optimizer over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Relative error used by the gradient checks.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Max relative error between `grad` and central differences of `loss`
/// around `params` with step `h`.
pub fn finite_difference_check(
    params: &[f64],
    grad: &[f64],
    h: f64,
    mut loss: impl FnMut(&[f64]) -> f64,
) -> f64 {
    let mut p = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let up = loss(&p);
        p[i] = orig - h;
        let down = loss(&p);
        p[i] = orig;
        worst = worst.max(relative_error(grad[i], (up - down) / (2.0 * h)));
    }
    worst
}
