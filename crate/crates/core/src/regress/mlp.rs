use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{finite_difference_check, Activation, Adam, Grads, Network};
use crate::spectra::{ColumnScaler, ZeroVariance};

/// Feed-forward regressor settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpSpec {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Coefficient of the squared-weight penalty.
    pub l2: f64,
    pub seed: u64,
}

impl Default for MlpSpec {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            activation: Activation::Tanh,
            learning_rate: 1e-3,
            epochs: 500,
            batch_size: 16,
            l2: 0.0,
            seed: 0,
        }
    }
}

impl MlpSpec {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epochs must be at least 1".into()));
        }
        if !(self.l2 >= 0.0) {
            return Err(Error::Config("l2 penalty must be nonnegative".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub(crate) net: Network,
    pub(crate) x_scaler: ColumnScaler,
    pub(crate) y_mean: f64,
    /// Standardization used in training (1 for a constant target).
    pub(crate) y_train_scale: f64,
    /// Multiplier applied to the network output at prediction (0 for a
    /// constant target).
    pub(crate) y_out_scale: f64,
    pub(crate) l2: f64,
    pub(crate) loss_history: Vec<f64>,
}

impl MlpModel {
    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    /// Full-data training loss after each epoch (standardized units).
    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }
}

fn check_xy(x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!("{} rows but {} targets", x.nrows(), y.len())));
    }
    if x.nrows() < 2 {
        return Err(Error::InvalidInput("need at least 2 training samples".into()));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite training value".into()));
    }
    Ok(())
}

fn mse_loss(net: &Network, x: ArrayView2<f64>, y: ArrayView2<f64>, l2: f64) -> f64 {
    let out = net.forward(x);
    (&out - &y).mapv(|v| v * v).mean().unwrap_or(0.0) + l2 * net.weight_sq_norm()
}

fn mse_grads(net: &Network, x: ArrayView2<f64>, y: ArrayView2<f64>, l2: f64) -> Grads {
    let cache = net.forward_cached(x);
    let scale = 2.0 / (y.len() as f64);
    let dout = (&cache.output - &y) * scale;
    let mut g = Grads::zeros_like(net);
    net.backward(&cache, dout.view(), &mut g);
    if l2 > 0.0 {
        g.add_weight_decay(net, l2);
    }
    g
}

pub fn mlp_fit(x: ArrayView2<f64>, y: ArrayView1<f64>, spec: &MlpSpec) -> Result<MlpModel> {
    spec.validate()?;
    check_xy(x, y)?;
    let x_scaler = ColumnScaler::fit(x, ZeroVariance::Passthrough)?;
    let xs = x_scaler.transform(x)?;
    let n = y.len();
    let y_mean = y.mean().expect("nonempty");
    let sd = y.std(1.0);
    let constant = !(sd > 1e-12 * y.iter().fold(0.0f64, |a, v| a.max(v.abs())));
    let (y_train_scale, y_out_scale) = if constant { (1.0, 0.0) } else { (sd, sd) };
    let ys = y.mapv(|v| (v - y_mean) / y_train_scale).insert_axis(Axis(1));

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut widths = vec![x.ncols()];
    widths.extend(&spec.hidden);
    widths.push(1);
    let mut net = Network::new(&widths, spec.activation, Activation::Identity, &mut rng)?;
    let mut params = net.params_flat();
    let mut adam = Adam::new(params.len(), spec.learning_rate);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(spec.epochs);
    for epoch in 0..spec.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(spec.batch_size) {
            let xb = xs.select(Axis(0), batch);
            let yb = ys.select(Axis(0), batch);
            let g = mse_grads(&net, xb.view(), yb.view(), spec.l2);
            adam.step(&mut params, &g.flat());
            net.set_params_flat(&params);
        }
        let loss = mse_loss(&net, xs.view(), ys.view(), spec.l2);
        if !loss.is_finite() || !net.is_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: format!("training loss became {loss}"),
            });
        }
        history.push(loss);
    }
    Ok(MlpModel {
        net,
        x_scaler,
        y_mean,
        y_train_scale,
        y_out_scale,
        l2: spec.l2,
        loss_history: history,
    })
}

pub fn mlp_predict(model: &MlpModel, x: ArrayView2<f64>) -> Result<Array1<f64>> {
    model.net.check_input(x)?;
    let xs = model.x_scaler.transform(x)?;
    let out = model.net.forward(xs.view());
    Ok(out.column(0).mapv(|v| model.y_mean + model.y_out_scale * v))
}

/// Max relative error between the analytic gradient of the training loss
/// (standardized units, including the weight penalty) and central finite
/// differences with step 1e-6, over every parameter.
pub fn mlp_grad_check(model: &MlpModel, x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<f64> {
    if x.nrows() != y.len() || x.nrows() == 0 {
        return Err(Error::DimensionMismatch(format!("{} rows but {} targets", x.nrows(), y.len())));
    }
    model.net.check_input(x)?;
    let xs = model.x_scaler.transform(x)?;
    let ys = y.mapv(|v| (v - model.y_mean) / model.y_train_scale).insert_axis(Axis(1));
    let g = mse_grads(&model.net, xs.view(), ys.view(), model.l2).flat();
    let mut probe = model.net.clone();
    let p0 = probe.params_flat();
    Ok(finite_difference_check(&p0, &g, 1e-6, |p| {
        probe.set_params_flat(p);
        mse_loss(&probe, xs.view(), ys.view(), model.l2)
    }))
}

/// Builds a model around an existing network with identity scaling, for
/// gradient checks on hand-made weights.
pub fn mlp_from_network(net: Network, l2: f64) -> MlpModel {
    let d = net.input_dim();
    MlpModel {
        net,
        x_scaler: ColumnScaler {
            mean: Array1::zeros(d),
            scale: Array1::ones(d),
        },
        y_mean: 0.0,
        y_train_scale: 1.0,
        y_out_scale: 1.0,
        l2,
        loss_history: Vec::new(),
    }
}

#[cfg(test)]
pub(crate) fn design(n: usize, d: usize, seed: u64) -> ndarray::Array2<f64> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ndarray::Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))
}
