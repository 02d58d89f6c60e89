//! Y-shaped conformal autoencoder: an encoder/decoder pair over diffusion
//! coordinates with a size head reading a single latent, trained with a
//! penalty that makes the encoder Jacobian rows mutually orthogonal.

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::nn::{finite_difference_check, Activation, Adam, Grads, Network};
use crate::spectra::{ColumnScaler, ZeroVariance};

const GRAM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct YShapedSpec {
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub activation: Activation,
    pub w_recon: f64,
    pub w_pred: f64,
    pub w_orth: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Latent read by the size head (0 is `ν₁`).
    pub pred_latent: usize,
}

impl Default for YShapedSpec {
    fn default() -> Self {
        Self {
            latent_dim: 6,
            encoder_hidden: vec![32, 32],
            decoder_hidden: vec![32, 32],
            head_hidden: vec![16],
            activation: Activation::Tanh,
            w_recon: 1.0,
            w_pred: 1.0,
            w_orth: 0.1,
            learning_rate: 1e-3,
            epochs: 1000,
            batch_size: 16,
            seed: 0,
            pred_latent: 0,
        }
    }
}

impl YShapedSpec {
    fn validate(&self) -> Result<()> {
        if self.latent_dim < 2 {
            return Err(Error::Config("latent dimension must be at least 2".into()));
        }
        if self.pred_latent >= self.latent_dim {
            return Err(Error::Config(format!(
                "prediction latent {} outside latent dimension {}",
                self.pred_latent, self.latent_dim
            )));
        }
        if !(self.w_recon >= 0.0 && self.w_orth >= 0.0 && self.w_pred > 0.0) {
            return Err(Error::Config("loss weights must be nonnegative with w_pred > 0".into()));
        }
        if !(self.learning_rate > 0.0) || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("learning rate, epochs and batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Loss components on the full training set after one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub recon: f64,
    pub pred: f64,
    pub orth: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YShapedModel {
    pub(crate) encoder: Network,
    pub(crate) decoder: Network,
    pub(crate) head: Network,
    pub(crate) x_scaler: ColumnScaler,
    pub(crate) y_mean: f64,
    pub(crate) y_train_scale: f64,
    pub(crate) y_out_scale: f64,
    pub(crate) weights: [f64; 3],
    pub(crate) pred_latent: usize,
    pub(crate) history: Vec<LossRecord>,
}

impl YShapedModel {
    pub fn encoder(&self) -> &Network {
        &self.encoder
    }

    pub fn encoder_mut(&mut self) -> &mut Network {
        &mut self.encoder
    }

    pub fn decoder(&self) -> &Network {
        &self.decoder
    }

    pub fn head(&self) -> &Network {
        &self.head
    }

    pub fn history(&self) -> &[LossRecord] {
        &self.history
    }

    pub fn pred_latent(&self) -> usize {
        self.pred_latent
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    fn j0(&self) -> Array2<f64> {
        Array2::from_diag(&self.x_scaler.scale.mapv(|s| 1.0 / s))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::persist::save_json("yshaped", self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::persist::load_json("yshaped", path)
    }
}

/// Orthogonality penalty `Σ_{i<j} ĝ_ij²` of one Jacobian and its gradient
/// `∂/∂J`.
fn orth_penalty(j: &Array2<f64>) -> (f64, Array2<f64>) {
    let g = j.dot(&j.t());
    let m = g.nrows();
    let s: Vec<f64> = (0..m).map(|i| g[[i, i]] + GRAM_EPS).collect();
    let mut loss = 0.0;
    let mut coef = Array2::zeros((m, m));
    for i in 0..m {
        let mut diag = 0.0;
        for k in 0..m {
            if k == i {
                continue;
            }
            let gh = g[[i, k]] / (s[i] * s[k]).sqrt();
            if k > i {
                loss += gh * gh;
            }
            coef[[i, k]] = 2.0 * gh / (s[i] * s[k]).sqrt();
            diag += gh * gh;
        }
        coef[[i, i]] = -2.0 * diag / s[i];
    }
    (loss, coef.dot(j))
}

struct Batch<'a> {
    x: ArrayView2<'a, f64>,
    y: ArrayView1<'a, f64>,
}

/// Loss components and, when requested, gradients for all three networks.
fn loss_and_grads(
    model: &YShapedModel,
    j0: &Array2<f64>,
    b: &Batch,
    want_grads: bool,
) -> (LossRecord, Option<[Grads; 3]>) {
    let n = b.x.nrows();
    let m = model.latent_dim();
    let [wr, wp, wo] = model.weights;
    let caches: Vec<_> = (0..n)
        .map(|i| model.encoder.forward_jacobian(b.x.row(i), j0.view()))
        .collect();
    let nu = Array2::from_shape_fn((n, m), |(i, k)| caches[i].output[k]);

    let dec = model.decoder.forward_cached(nu.view());
    let diff = &dec.output - &b.x;
    let recon = diff.mapv(|v| v * v).sum() / diff.len() as f64;

    let head_in = nu.slice(s![.., model.pred_latent..model.pred_latent + 1]).to_owned();
    let hc = model.head.forward_cached(head_in.view());
    let pdiff = &hc.output.column(0) - &b.y;
    let pred = pdiff.mapv(|v| v * v).sum() / n as f64;

    let orth_parts: Vec<(f64, Array2<f64>)> = caches.iter().map(|c| orth_penalty(&c.jacobian)).collect();
    let orth = orth_parts.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let rec = LossRecord {
        epoch: 0,
        recon,
        pred,
        orth,
        total: wr * recon + wp * pred + wo * orth,
    };
    if !want_grads {
        return (rec, None);
    }

    let mut g_dec = Grads::zeros_like(&model.decoder);
    let d_dec = &diff * (2.0 * wr / diff.len() as f64);
    let mut nu_bar = model.decoder.backward(&dec, d_dec.view(), &mut g_dec);
    let mut g_head = Grads::zeros_like(&model.head);
    let d_head = (pdiff * (2.0 * wp / n as f64)).insert_axis(Axis(1));
    let in_bar = model.head.backward(&hc, d_head.view(), &mut g_head);
    for i in 0..n {
        nu_bar[[i, model.pred_latent]] += in_bar[[i, 0]];
    }
    let mut g_enc = Grads::zeros_like(&model.encoder);
    for (i, c) in caches.iter().enumerate() {
        let j_bar = &orth_parts[i].1 * (wo / n as f64);
        model
            .encoder
            .backward_jacobian(c, nu_bar.row(i), j_bar.view(), &mut g_enc);
    }
    (rec, Some([g_enc, g_dec, g_head]))
}

fn flat_params(model: &YShapedModel) -> Vec<f64> {
    let mut p = model.encoder.params_flat();
    p.extend(model.decoder.params_flat());
    p.extend(model.head.params_flat());
    p
}

fn set_flat_params(model: &mut YShapedModel, p: &[f64]) {
    let a = model.encoder.n_params();
    let b = a + model.decoder.n_params();
    model.encoder.set_params_flat(&p[..a]);
    model.decoder.set_params_flat(&p[a..b]);
    model.head.set_params_flat(&p[b..]);
}

fn flat_grads(g: &[Grads; 3]) -> Vec<f64> {
    let mut out = g[0].flat();
    out.extend(g[1].flat());
    out.extend(g[2].flat());
    out
}

fn scale_targets(y: ArrayView1<f64>) -> (f64, f64, f64) {
    let mean = y.mean().expect("nonempty");
    let sd = y.std(1.0);
    let constant = !(sd > 1e-12 * y.iter().fold(0.0f64, |a, v| a.max(v.abs())));
    if constant {
        (mean, 1.0, 0.0)
    } else {
        (mean, sd, sd)
    }
}

/// Trains encoder, decoder and head jointly with one Adam optimizer.
pub fn yae_fit(phi: ArrayView2<f64>, sizes: ArrayView1<f64>, spec: &YShapedSpec) -> Result<YShapedModel> {
    spec.validate()?;
    let (n, d) = phi.dim();
    if sizes.len() != n {
        return Err(Error::DimensionMismatch(format!("{n} rows but {} sizes", sizes.len())));
    }
    if n < 2 {
        return Err(Error::InvalidInput("need at least 2 training samples".into()));
    }
    if phi.iter().chain(sizes.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite training value".into()));
    }
    let x_scaler = ColumnScaler::fit(phi, ZeroVariance::Passthrough)?;
    let xs = x_scaler.transform(phi)?;
    let (y_mean, y_train_scale, y_out_scale) = scale_targets(sizes);
    let ys = sizes.mapv(|v| (v - y_mean) / y_train_scale);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let widths = |a: usize, hidden: &[usize], b: usize| {
        let mut w = vec![a];
        w.extend(hidden);
        w.push(b);
        w
    };
    let act = spec.activation;
    let encoder = Network::new(&widths(d, &spec.encoder_hidden, spec.latent_dim), act, Activation::Identity, &mut rng)?;
    let decoder = Network::new(&widths(spec.latent_dim, &spec.decoder_hidden, d), act, Activation::Identity, &mut rng)?;
    let head = Network::new(&widths(1, &spec.head_hidden, 1), act, Activation::Identity, &mut rng)?;
    let mut model = YShapedModel {
        encoder,
        decoder,
        head,
        x_scaler,
        y_mean,
        y_train_scale,
        y_out_scale,
        weights: [spec.w_recon, spec.w_pred, spec.w_orth],
        pred_latent: spec.pred_latent,
        history: Vec::with_capacity(spec.epochs),
    };
    let j0 = model.j0();
    let mut params = flat_params(&model);
    let mut adam = Adam::new(params.len(), spec.learning_rate);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..spec.epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(spec.batch_size) {
            let xb = xs.select(Axis(0), idx);
            let yb = ys.select(Axis(0), idx);
            let (_, g) = loss_and_grads(&model, &j0, &Batch { x: xb.view(), y: yb.view() }, true);
            adam.step(&mut params, &flat_grads(&g.expect("requested")));
            set_flat_params(&mut model, &params);
        }
        let (mut rec, _) = loss_and_grads(&model, &j0, &Batch { x: xs.view(), y: ys.view() }, false);
        rec.epoch = epoch;
        if !rec.total.is_finite() || !params.iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                detail: format!("training loss became {}", rec.total),
            });
        }
        model.history.push(rec);
    }
    Ok(model)
}

fn check_dim(model: &YShapedModel, x: ArrayView2<f64>) -> Result<()> {
    model.encoder.check_input(x)
}

/// Latent coordinates `ν` of raw diffusion coordinates.
pub fn encode(model: &YShapedModel, phi: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_dim(model, phi)?;
    let xs = model.x_scaler.transform(phi)?;
    Ok(model.encoder.forward(xs.view()))
}

/// Reconstructed raw diffusion coordinates from latents.
pub fn decode(model: &YShapedModel, nu: ArrayView2<f64>) -> Result<Array2<f64>> {
    model.decoder.check_input(nu)?;
    Ok(model.x_scaler.inverse(model.decoder.forward(nu).view()))
}

/// Size head applied to latent values (one per row).
pub fn head_predict(model: &YShapedModel, latent: ArrayView1<f64>) -> Array1<f64> {
    let out = model.head.forward(latent.insert_axis(Axis(1)));
    out.column(0).mapv(|v| model.y_mean + model.y_out_scale * v)
}

/// Predicted size from raw diffusion coordinates.
pub fn predict_size(model: &YShapedModel, phi: ArrayView2<f64>) -> Result<Array1<f64>> {
    let nu = encode(model, phi)?;
    Ok(head_predict(model, nu.column(model.pred_latent)))
}

/// `∂ν/∂φ` at one raw input point (latent × input).
pub fn encoder_jacobian(model: &YShapedModel, phi: ArrayView1<f64>) -> Result<Array2<f64>> {
    if phi.len() != model.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "encoder expects {} inputs, got {}",
            model.input_dim(),
            phi.len()
        )));
    }
    let xs = (&phi - &model.x_scaler.mean) / &model.x_scaler.scale;
    Ok(model.encoder.forward_jacobian(xs.view(), model.j0().view()).jacobian)
}

/// Mean over samples and latent pairs of `|⟨dνᵢ,dνⱼ⟩| / (‖dνᵢ‖‖dνⱼ‖)`.
/// Pairs involving a zero Jacobian row are skipped; an error if all are.
pub fn orthogonality_score(model: &YShapedModel, phi: ArrayView2<f64>) -> Result<f64> {
    check_dim(model, phi)?;
    let parts = Exec::default().map(phi.nrows(), |i| -> Result<(f64, usize)> {
        let j = encoder_jacobian(model, phi.row(i))?;
        let norms: Vec<f64> = j.outer_iter().map(|r| r.dot(&r).sqrt()).collect();
        let (mut sum, mut count) = (0.0, 0);
        for a in 0..j.nrows() {
            for b in a + 1..j.nrows() {
                if norms[a] > 0.0 && norms[b] > 0.0 {
                    sum += (j.row(a).dot(&j.row(b)) / (norms[a] * norms[b])).abs();
                    count += 1;
                }
            }
        }
        Ok((sum, count))
    });
    let (mut sum, mut count) = (0.0, 0);
    for p in parts {
        let (s, c) = p?;
        sum += s;
        count += c;
    }
    if count == 0 {
        return Err(Error::Degenerate("every encoder Jacobian row pair has a zero row".into()));
    }
    Ok(sum / count as f64)
}

/// Full-loss gradient check against central differences (step 1e-6) over
/// every parameter of the three networks.
pub fn yae_grad_check(model: &YShapedModel, phi: ArrayView2<f64>, sizes: ArrayView1<f64>) -> Result<f64> {
    check_dim(model, phi)?;
    if sizes.len() != phi.nrows() || phi.nrows() == 0 {
        return Err(Error::DimensionMismatch("sizes must match the rows of phi".into()));
    }
    let xs = model.x_scaler.transform(phi)?;
    let ys = sizes.mapv(|v| (v - model.y_mean) / model.y_train_scale);
    let j0 = model.j0();
    let batch = Batch { x: xs.view(), y: ys.view() };
    let (_, g) = loss_and_grads(model, &j0, &batch, true);
    let grad = flat_grads(&g.expect("requested"));
    let mut probe = model.clone();
    let p0 = flat_params(model);
    Ok(finite_difference_check(&p0, &grad, 1e-6, |p| {
        set_flat_params(&mut probe, p);
        loss_and_grads(&probe, &j0, &batch, false).0.total
    }))
}

/// Writes `epoch,recon,pred,orth,total`.
pub fn write_loss_history(history: &[LossRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?;
    w.write_record(["epoch", "recon", "pred", "orth", "total"])
        .map_err(|e| Error::Csv(e.to_string()))?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.recon.to_string(),
            r.pred.to_string(),
            r.orth.to_string(),
            r.total.to_string(),
        ])
        .map_err(|e| Error::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
