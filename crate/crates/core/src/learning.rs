//! Trainable probing codebook and MLP beam predictor.
//!
//! The probing codebook is parameterized by a phase matrix `Θ` realizing
//! `W = (1/√Nt)(cosΘ + j·sinΘ)`, so gradient updates can never violate the
//! constant-modulus constraint. Beam sweeping is computed with real
//! arithmetic through the 2×2 block form of `z = W^H h`; the per-beam powers
//! `x_i = |√P_T·z_i + n_i|²` feed a ReLU MLP whose softmax output estimates
//! the posterior of each narrow beam being optimal. Codebook and predictor
//! are trained jointly with Adam on cross-entropy.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::channel::{ChannelDataset, ChannelVector};
use crate::codebooks::{best_beam, Codebook, CodebookKind};
use crate::error::{Error, Result};
use crate::format;
use crate::rng::substream_rng;
use crate::util::argmax_lowest;

/// One dense layer; weights are stored `fan_in × fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpLayer {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

impl MlpLayer {
    fn zeros_like(&self) -> MlpLayer {
        MlpLayer {
            weights: Array2::zeros(self.weights.raw_dim()),
            biases: Array1::zeros(self.biases.raw_dim()),
        }
    }
}

/// Jointly trainable probing codebook and beam predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbingModel {
    /// Phase shifts, `Nt × N_W` radians.
    pub theta: Array2<f64>,
    /// Hidden layers followed by the linear output layer.
    pub layers: Vec<MlpLayer>,
    pub hidden_sizes: Vec<usize>,
    /// Narrow-beam codebook size `N_V`; the classifier's label space.
    pub n_classes: usize,
    /// Per-feature mean of the training-set powers; applied before the MLP.
    pub feature_mean: Array1<f64>,
    /// Per-feature standard deviation of the training-set powers.
    pub feature_std: Array1<f64>,
}

// Seed stream purposes inside a training run.
const STREAM_SPLIT: u64 = 0x01_0000_0000;
const STREAM_THETA: u64 = 0x02_0000_0000;
const STREAM_MLP: u64 = 0x03_0000_0000;
const STREAM_SHUFFLE: u64 = 0x04_0000_0000;
const STREAM_TRAIN_NOISE: u64 = 0x05_0000_0000;
const STREAM_VAL_NOISE: u64 = 0x06_0000_0000;

impl ProbingModel {
    /// Random initialization: `Θ` i.i.d. uniform on `[0, 2π)`, MLP weights
    /// uniform on `±1/√fan_in`, biases zero. Standardization statistics
    /// start as the identity until [`train`] fills them in.
    pub fn new(
        num_elements: usize,
        n_probing: usize,
        n_classes: usize,
        hidden_sizes: &[usize],
        rng_seed: u64,
    ) -> Result<Self> {
        if num_elements < 1 || n_probing < 1 || n_classes < 1 {
            return Err(Error::domain("model dimensions must be positive"));
        }
        let mut theta_rng = substream_rng(rng_seed, STREAM_THETA);
        let theta = Array2::from_shape_fn((num_elements, n_probing), |_| {
            theta_rng.random_range(0.0..std::f64::consts::TAU)
        });
        let mut model = Self {
            theta,
            layers: Vec::new(),
            hidden_sizes: hidden_sizes.to_vec(),
            n_classes,
            feature_mean: Array1::zeros(n_probing),
            feature_std: Array1::ones(n_probing),
        };
        model.init_mlp(rng_seed)?;
        Ok(model)
    }

    /// Model whose probing codebook is a fixed, pre-designed codebook; the
    /// phases are lifted from the columns so [`export_probing_codebook`]
    /// reproduces it. Used for the fixed-probing baselines.
    pub fn with_fixed_codebook(
        codebook: &Codebook,
        n_classes: usize,
        hidden_sizes: &[usize],
        rng_seed: u64,
    ) -> Result<Self> {
        let theta = codebook.weights().mapv(|w| w.arg());
        let mut model = Self {
            theta,
            layers: Vec::new(),
            hidden_sizes: hidden_sizes.to_vec(),
            n_classes,
            feature_mean: Array1::zeros(codebook.num_beams()),
            feature_std: Array1::ones(codebook.num_beams()),
        };
        model.init_mlp(rng_seed)?;
        Ok(model)
    }

    fn init_mlp(&mut self, rng_seed: u64) -> Result<()> {
        let mut rng = substream_rng(rng_seed, STREAM_MLP);
        let mut widths = vec![self.num_probing()];
        widths.extend_from_slice(&self.hidden_sizes);
        widths.push(self.n_classes);
        if widths.iter().any(|&w| w < 1) {
            return Err(Error::domain("layer widths must be positive"));
        }
        self.layers = widths
            .windows(2)
            .map(|io| {
                let (fan_in, fan_out) = (io[0], io[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                MlpLayer {
                    weights: Array2::from_shape_fn((fan_in, fan_out), |_| {
                        rng.random_range(-bound..bound)
                    }),
                    biases: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(())
    }

    pub fn num_elements(&self) -> usize {
        self.theta.nrows()
    }

    pub fn num_probing(&self) -> usize {
        self.theta.ncols()
    }

    /// Real and imaginary parts of `W = (1/√Nt)(cosΘ + j·sinΘ)`.
    fn codebook_parts(&self) -> (Array2<f64>, Array2<f64>) {
        let scale = 1.0 / (self.num_elements() as f64).sqrt();
        (self.theta.mapv(|t| scale * t.cos()), self.theta.mapv(|t| scale * t.sin()))
    }
}

/// Output of one probing sweep through the model.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Raw received powers `x_i = |√P_T·z_i + n_i|²`.
    pub powers: Array1<f64>,
    pub logits: Array1<f64>,
    /// Softmax posterior over narrow beams; sums to 1.
    pub probs: Array1<f64>,
}

/// Gradient of a dense layer.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

/// Gradients for every trainable tensor.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub theta: Array2<f64>,
    pub layers: Vec<LayerGrads>,
}

/// First/second Adam moment accumulators, shaped like the parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    m_theta: Array2<f64>,
    v_theta: Array2<f64>,
    m_layers: Vec<MlpLayer>,
    v_layers: Vec<MlpLayer>,
}

impl AdamState {
    pub fn new(model: &ProbingModel) -> Self {
        Self {
            step: 0,
            m_theta: Array2::zeros(model.theta.raw_dim()),
            v_theta: Array2::zeros(model.theta.raw_dim()),
            m_layers: model.layers.iter().map(MlpLayer::zeros_like).collect(),
            v_layers: model.layers.iter().map(MlpLayer::zeros_like).collect(),
        }
    }

    /// One bias-corrected Adam update. `update_theta=false` freezes the
    /// probing codebook and trains the MLP alone.
    pub fn apply(
        &mut self,
        model: &mut ProbingModel,
        grads: &Gradients,
        config: &TrainConfig,
        update_theta: bool,
    ) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - config.adam_beta1.powi(t);
        let bc2 = 1.0 - config.adam_beta2.powi(t);
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = config.adam_beta1 * *m + (1.0 - config.adam_beta1) * g;
            *v = config.adam_beta2 * *v + (1.0 - config.adam_beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= config.learning_rate * m_hat / (v_hat.sqrt() + config.adam_eps);
        };
        if update_theta {
            for ((p, &g), (m, v)) in model
                .theta
                .iter_mut()
                .zip(grads.theta.iter())
                .zip(self.m_theta.iter_mut().zip(self.v_theta.iter_mut()))
            {
                update(p, g, m, v);
            }
        }
        for (li, layer) in model.layers.iter_mut().enumerate() {
            for ((p, &g), (m, v)) in layer
                .weights
                .iter_mut()
                .zip(grads.layers[li].weights.iter())
                .zip(self.m_layers[li].weights.iter_mut().zip(self.v_layers[li].weights.iter_mut()))
            {
                update(p, g, m, v);
            }
            for ((p, &g), (m, v)) in layer
                .biases
                .iter_mut()
                .zip(grads.layers[li].biases.iter())
                .zip(self.m_layers[li].biases.iter_mut().zip(self.v_layers[li].biases.iter_mut()))
            {
                update(p, g, m, v);
            }
        }
    }
}

/// Training hyperparameters. Noise and transmit powers are in mW on the
/// normalized channel scale.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub rng_seed: u64,
    /// Measurement noise power σ² injected during training, mW
    /// (post-normalization scale).
    pub noise_power_mw: f64,
    pub transmit_power_mw: f64,
    pub train_with_noise: bool,
    /// Probing codebook size `N_W`.
    pub n_probing: usize,
    pub hidden_sizes: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 512,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            train_fraction: 0.6,
            val_fraction: 0.2,
            test_fraction: 0.2,
            rng_seed: 0,
            noise_power_mw: 0.0,
            transmit_power_mw: 10.0,
            train_with_noise: true,
            n_probing: 12,
            hidden_sizes: vec![256, 256],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 || self.batch_size < 1 || self.n_probing < 1 {
            return Err(Error::domain("epochs, batch size, and probing size must be positive"));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::domain("learning rate must be positive"));
        }
        let fractions = [self.train_fraction, self.val_fraction, self.test_fraction];
        if fractions.iter().any(|&f| f <= 0.0) {
            return Err(Error::domain("split fractions must be positive"));
        }
        if (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::domain("split fractions must sum to 1"));
        }
        if self.noise_power_mw < 0.0 || self.transmit_power_mw.is_nan() || self.transmit_power_mw <= 0.0 {
            return Err(Error::domain("powers must be nonnegative (transmit strictly positive)"));
        }
        Ok(())
    }
}

/// Train/val/test index sets of a seeded 60/20/20-style split.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded permutation split; performed before any training so the test set
/// never leaks into fitting or standardization.
pub fn split_indices(n: usize, config: &TrainConfig) -> Result<SplitIndices> {
    config.validate()?;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = substream_rng(config.rng_seed, STREAM_SPLIT);
    // Fisher-Yates
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let n_train = (n as f64 * config.train_fraction).floor() as usize;
    let n_val = (n as f64 * config.val_fraction).floor() as usize;
    let n_test = n - n_train - n_val;
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::domain(format!(
            "dataset of {n} samples is too small to fill train/val/test splits"
        )));
    }
    Ok(SplitIndices {
        train: order[..n_train].to_vec(),
        val: order[n_train..n_train + n_val].to_vec(),
        test: order[n_train + n_val..].to_vec(),
    })
}

/// Optimal-beam labels: `argmax_i |h^H v_i|²` on noiseless gains, ties to
/// the lowest index.
pub fn label_dataset(dataset: &ChannelDataset, narrow: &Codebook) -> Result<Vec<usize>> {
    if narrow.kind() != CodebookKind::DftNarrow {
        return Err(Error::domain("labels are defined against the narrow DFT codebook"));
    }
    if dataset.is_empty() {
        return Err(Error::domain("cannot label an empty dataset"));
    }
    dataset
        .channels
        .iter()
        .map(|h| {
            if h.iter().all(|c| c.re == 0.0 && c.im == 0.0) {
                return Err(Error::domain("zero channel has no optimal beam"));
            }
            best_beam(narrow, h)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Batched forward/backward internals. Channels are row-major (batch × Nt).

struct ForwardCache {
    y_re: Array2<f64>,
    y_im: Array2<f64>,
    powers: Array2<f64>,
    /// Per-layer pre-activations.
    pre: Vec<Array2<f64>>,
    /// act[0] is the standardized input; act[l+1] = σ(pre[l]).
    act: Vec<Array2<f64>>,
    log_probs: Array2<f64>,
}

fn stack_channels(channels: &[&ChannelVector], nt: usize) -> Result<(Array2<f64>, Array2<f64>)> {
    let b = channels.len();
    let mut h_re = Array2::zeros((b, nt));
    let mut h_im = Array2::zeros((b, nt));
    for (r, h) in channels.iter().enumerate() {
        if h.len() != nt {
            return Err(Error::domain("channel length does not match model"));
        }
        for n in 0..nt {
            h_re[[r, n]] = h[n].re;
            h_im[[r, n]] = h[n].im;
        }
    }
    Ok((h_re, h_im))
}

fn forward_batch(
    model: &ProbingModel,
    h_re: &Array2<f64>,
    h_im: &Array2<f64>,
    noise_re: Option<&Array2<f64>>,
    noise_im: Option<&Array2<f64>>,
    p_t: f64,
) -> ForwardCache {
    let (w_re, w_im) = model.codebook_parts();
    // z = W^H h in the real block form.
    let z_re = h_re.dot(&w_re) + h_im.dot(&w_im);
    let z_im = h_im.dot(&w_re) - h_re.dot(&w_im);
    let amp = p_t.sqrt();
    let mut y_re = z_re.mapv(|v| amp * v);
    let mut y_im = z_im.mapv(|v| amp * v);
    if let (Some(nre), Some(nim)) = (noise_re, noise_im) {
        y_re += nre;
        y_im += nim;
    }
    let powers = &y_re * &y_re + &y_im * &y_im;
    let x_std = (&powers - &model.feature_mean) / &model.feature_std;

    let mut act = vec![x_std];
    let mut pre = Vec::with_capacity(model.layers.len());
    let last = model.layers.len() - 1;
    for (li, layer) in model.layers.iter().enumerate() {
        let s = act[li].dot(&layer.weights) + &layer.biases;
        let a = if li == last { s.clone() } else { s.mapv(|v| v.max(0.0)) };
        pre.push(s);
        act.push(a);
    }

    // Row-wise log-softmax.
    let logits = act.last().expect("at least one layer");
    let mut log_probs = logits.clone();
    for mut row in log_probs.axis_iter_mut(Axis(0)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }

    ForwardCache { y_re, y_im, powers, pre, act, log_probs }
}

fn backward_batch(
    model: &ProbingModel,
    cache: &ForwardCache,
    h_re: &Array2<f64>,
    h_im: &Array2<f64>,
    labels: &[usize],
    p_t: f64,
) -> Gradients {
    let batch = labels.len() as f64;
    // d loss / d logits = (softmax - onehot) / batch.
    let mut d_s = cache.log_probs.mapv(f64::exp);
    for (r, &label) in labels.iter().enumerate() {
        d_s[[r, label]] -= 1.0;
    }
    d_s.mapv_inplace(|v| v / batch);

    let mut layer_grads: Vec<Option<LayerGrads>> = vec![None; model.layers.len()];
    for li in (0..model.layers.len()).rev() {
        let grads = LayerGrads {
            weights: cache.act[li].t().dot(&d_s),
            biases: d_s.sum_axis(Axis(0)),
        };
        let d_act = d_s.dot(&model.layers[li].weights.t());
        layer_grads[li] = Some(grads);
        if li > 0 {
            let mask = cache.pre[li - 1].mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            d_s = d_act * mask;
        } else {
            d_s = d_act;
        }
    }
    // Through standardization (affine) to the raw power features.
    let d_x = d_s / &model.feature_std;
    // x = y_re² + y_im², y = √P_T·z + n with n constant.
    let amp = p_t.sqrt();
    let d_z_re = (&d_x * &cache.y_re).mapv(|v| 2.0 * amp * v);
    let d_z_im = (&d_x * &cache.y_im).mapv(|v| 2.0 * amp * v);
    // z_re = H_re W_re + H_im W_im ; z_im = H_im W_re - H_re W_im.
    let d_w_re = h_re.t().dot(&d_z_re) + h_im.t().dot(&d_z_im);
    let d_w_im = h_im.t().dot(&d_z_re) - h_re.t().dot(&d_z_im);
    // W_re = (1/√Nt)cosΘ, W_im = (1/√Nt)sinΘ.
    let (w_re, w_im) = model.codebook_parts();
    let d_theta = &d_w_im * &w_re - &d_w_re * &w_im;

    Gradients {
        theta: d_theta,
        layers: layer_grads.into_iter().map(|g| g.expect("filled")).collect(),
    }
}

fn batch_loss(cache: &ForwardCache, labels: &[usize]) -> f64 {
    let mut sum = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        sum -= cache.log_probs[[r, label]];
    }
    sum / labels.len() as f64
}

// ---------------------------------------------------------------------------

/// One probing sweep: received powers, logits, and the softmax posterior.
///
/// `noise` is the per-beam complex noise draw (`None` for zeros); it is
/// added to `√P_T·z` before the power is taken, matching a real sweep.
pub fn forward(
    model: &ProbingModel,
    h: &ChannelVector,
    noise: Option<&Array1<Complex64>>,
    p_t: f64,
) -> Result<ForwardOutput> {
    if h.len() != model.num_elements() {
        return Err(Error::domain("channel length does not match model"));
    }
    if let Some(n) = noise {
        if n.len() != model.num_probing() {
            return Err(Error::domain("noise draw length does not match probing size"));
        }
    }
    let (h_re, h_im) = stack_channels(&[h], model.num_elements())?;
    let (n_re, n_im) = match noise {
        Some(n) => {
            let mut re = Array2::zeros((1, n.len()));
            let mut im = Array2::zeros((1, n.len()));
            for (j, c) in n.iter().enumerate() {
                re[[0, j]] = c.re;
                im[[0, j]] = c.im;
            }
            (Some(re), Some(im))
        }
        None => (None, None),
    };
    let cache = forward_batch(model, &h_re, &h_im, n_re.as_ref(), n_im.as_ref(), p_t);
    Ok(ForwardOutput {
        powers: cache.powers.row(0).to_owned(),
        logits: cache.act.last().expect("layers").row(0).to_owned(),
        probs: cache.log_probs.row(0).mapv(f64::exp),
    })
}

/// Mean cross-entropy over a batch and the gradients of every trainable
/// tensor. Noise draws are treated as constants.
pub fn loss_and_gradients(
    model: &ProbingModel,
    channels: &[&ChannelVector],
    labels: &[usize],
    noise: Option<(&Array2<f64>, &Array2<f64>)>,
    p_t: f64,
) -> Result<(f64, Gradients)> {
    if channels.is_empty() || channels.len() != labels.len() {
        return Err(Error::domain("batch must be nonempty with one label per channel"));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= model.n_classes) {
        return Err(Error::domain(format!("label {label} outside [0, {})", model.n_classes)));
    }
    let (h_re, h_im) = stack_channels(channels, model.num_elements())?;
    let cache = forward_batch(model, &h_re, &h_im, noise.map(|n| n.0), noise.map(|n| n.1), p_t);
    let loss = batch_loss(&cache, labels);
    let grads = backward_batch(model, &cache, &h_re, &h_im, labels, p_t);
    Ok((loss, grads))
}

/// Indices of the `k` highest scores, descending; ties favor lower indices.
fn topk_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite").then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Top-`k` narrow-beam predictions from one vector of raw measured powers.
pub fn predict_topk(model: &ProbingModel, powers: &Array1<f64>, k: usize) -> Result<Vec<usize>> {
    if k < 1 || k > model.n_classes {
        return Err(Error::domain(format!("k={k} outside [1, {}]", model.n_classes)));
    }
    if powers.len() != model.num_probing() {
        return Err(Error::domain("measurement length does not match probing size"));
    }
    let mut x = (powers - &model.feature_mean) / &model.feature_std;
    let last = model.layers.len() - 1;
    for (li, layer) in model.layers.iter().enumerate() {
        let s = x.dot(&layer.weights) + &layer.biases;
        x = if li == last { s } else { s.mapv(|v| v.max(0.0)) };
    }
    Ok(topk_indices(x.as_slice().expect("contiguous"), k))
}

/// Extract the learned probing codebook `W = (1/√Nt)(cosΘ + j·sinΘ)`.
pub fn export_probing_codebook(model: &ProbingModel) -> Codebook {
    let scale = 1.0 / (model.num_elements() as f64).sqrt();
    let weights = model.theta.mapv(|t| Complex64::from_polar(scale, t));
    Codebook::from_weights_unchecked(CodebookKind::LearnedProbing, weights)
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_top1: f64,
}

/// A trained model plus its training history and the split it was fit on.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: ProbingModel,
    pub history: Vec<EpochStats>,
    pub split: SplitIndices,
}

/// Probing codebook initialization for [`train_with_probing`].
#[derive(Debug, Clone, Copy)]
pub enum ProbingInit<'a> {
    /// Random phases, trained jointly with the MLP.
    Learned,
    /// Phases lifted from a fixed codebook and frozen; only the MLP trains.
    Fixed(&'a Codebook),
}

/// Joint end-to-end training with a learned probing codebook.
pub fn train(dataset: &ChannelDataset, narrow: &Codebook, config: &TrainConfig) -> Result<TrainOutput> {
    train_with_probing(dataset, narrow, config, ProbingInit::Learned)
}

/// Training loop shared by the learned and fixed-probing variants.
///
/// Deterministic for a fixed `config.rng_seed`: the split, parameter
/// initialization, per-epoch shuffles, and noise draws all derive from it.
pub fn train_with_probing(
    dataset: &ChannelDataset,
    narrow: &Codebook,
    config: &TrainConfig,
    probing: ProbingInit<'_>,
) -> Result<TrainOutput> {
    config.validate()?;
    if !dataset.is_normalized() {
        return Err(Error::domain("dataset must be normalized before training"));
    }
    let nt = dataset.array.num_elements;
    if narrow.num_elements() != nt {
        return Err(Error::domain("narrow codebook does not match the dataset array"));
    }
    let labels = label_dataset(dataset, narrow)?;
    let split = split_indices(dataset.len(), config)?;

    let (mut model, update_theta) = match probing {
        ProbingInit::Learned => (
            ProbingModel::new(nt, config.n_probing, narrow.num_beams(), &config.hidden_sizes, config.rng_seed)?,
            true,
        ),
        ProbingInit::Fixed(cb) => {
            if cb.num_elements() != nt {
                return Err(Error::domain("fixed probing codebook does not match the dataset array"));
            }
            if cb.num_beams() != config.n_probing {
                return Err(Error::domain("fixed probing codebook size disagrees with config"));
            }
            (
                ProbingModel::with_fixed_codebook(cb, narrow.num_beams(), &config.hidden_sizes, config.rng_seed)?,
                false,
            )
        }
    };

    // Full dataset as real matrices; rows are gathered per split/batch.
    let refs: Vec<&ChannelVector> = dataset.channels.iter().collect();
    let (h_re_all, h_im_all) = stack_channels(&refs, nt)?;

    // Standardization statistics from the training split's noiseless powers
    // at the initial codebook; frozen for the rest of the run.
    let train_re = h_re_all.select(Axis(0), &split.train);
    let train_im = h_im_all.select(Axis(0), &split.train);
    let init_cache = forward_batch(&model, &train_re, &train_im, None, None, config.transmit_power_mw);
    model.feature_mean = init_cache.powers.mean_axis(Axis(0)).expect("nonempty");
    model.feature_std = init_cache
        .powers
        .std_axis(Axis(0), 0.0)
        .mapv(|s| if s > 1e-12 { s } else { 1.0 });

    let val_re = h_re_all.select(Axis(0), &split.val);
    let val_im = h_im_all.select(Axis(0), &split.val);
    let val_labels: Vec<usize> = split.val.iter().map(|&i| labels[i]).collect();

    let noise_std = (config.noise_power_mw / 2.0).sqrt();
    let draw_noise = |rng: &mut rand_chacha::ChaCha8Rng, rows: usize, cols: usize| {
        let mut re = Array2::zeros((rows, cols));
        let mut im = Array2::zeros((rows, cols));
        if noise_std > 0.0 {
            for r in 0..rows {
                for c in 0..cols {
                    let zr: f64 = StandardNormal.sample(rng);
                    let zi: f64 = StandardNormal.sample(rng);
                    re[[r, c]] = noise_std * zr;
                    im[[r, c]] = noise_std * zi;
                }
            }
        }
        (re, im)
    };

    let mut adam = AdamState::new(&model);
    let mut order = split.train.clone();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut shuffle_rng = substream_rng(config.rng_seed, STREAM_SHUFFLE + epoch as u64);
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut noise_rng = substream_rng(config.rng_seed, STREAM_TRAIN_NOISE + epoch as u64);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let h_re = h_re_all.select(Axis(0), chunk);
            let h_im = h_im_all.select(Axis(0), chunk);
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (n_re, n_im) = if config.train_with_noise {
                draw_noise(&mut noise_rng, chunk.len(), config.n_probing)
            } else {
                (Array2::zeros((chunk.len(), config.n_probing)), Array2::zeros((chunk.len(), config.n_probing)))
            };
            let cache =
                forward_batch(&model, &h_re, &h_im, Some(&n_re), Some(&n_im), config.transmit_power_mw);
            let loss = batch_loss(&cache, &batch_labels);
            let grads = backward_batch(&model, &cache, &h_re, &h_im, &batch_labels, config.transmit_power_mw);
            adam.apply(&mut model, &grads, config, update_theta);
            loss_sum += loss * chunk.len() as f64;
        }
        let train_loss = loss_sum / order.len() as f64;

        let mut val_noise_rng = substream_rng(config.rng_seed, STREAM_VAL_NOISE + epoch as u64);
        let (vn_re, vn_im) = if config.train_with_noise {
            draw_noise(&mut val_noise_rng, split.val.len(), config.n_probing)
        } else {
            (
                Array2::zeros((split.val.len(), config.n_probing)),
                Array2::zeros((split.val.len(), config.n_probing)),
            )
        };
        let val_cache =
            forward_batch(&model, &val_re, &val_im, Some(&vn_re), Some(&vn_im), config.transmit_power_mw);
        let val_loss = batch_loss(&val_cache, &val_labels);
        let correct = val_cache
            .log_probs
            .axis_iter(Axis(0))
            .zip(&val_labels)
            .filter(|(row, &label)| {
                argmax_lowest(row.as_slice().expect("contiguous")).expect("nonempty") == label
            })
            .count();
        history.push(EpochStats {
            epoch: epoch + 1,
            train_loss,
            val_loss,
            val_top1: correct as f64 / val_labels.len() as f64,
        });
    }

    Ok(TrainOutput { model, history, split })
}

// ---------------------------------------------------------------------------
// Model persistence ("BAMD").

const BAMD_MAGIC: &[u8; 4] = b"BAMD";
const BAMD_VERSION: u32 = 1;

/// Write a model: magic `BAMD`, u32 version=1, dims (u32 `Nt`, `N_W`, `N_V`,
/// hidden-layer count then widths), `Θ` row-major, each layer's weights
/// (`fan_in × fan_out` row-major) and biases, then the standardization mean
/// and std. All values little-endian f64 unless noted.
pub fn save_model(model: &ProbingModel, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(BAMD_MAGIC)?;
    format::write_u32(&mut w, BAMD_VERSION)?;
    format::write_u32(&mut w, model.num_elements() as u32)?;
    format::write_u32(&mut w, model.num_probing() as u32)?;
    format::write_u32(&mut w, model.n_classes as u32)?;
    format::write_u32(&mut w, model.hidden_sizes.len() as u32)?;
    for &h in &model.hidden_sizes {
        format::write_u32(&mut w, h as u32)?;
    }
    for &v in model.theta.iter() {
        format::write_f64(&mut w, v)?;
    }
    for layer in &model.layers {
        for &v in layer.weights.iter() {
            format::write_f64(&mut w, v)?;
        }
        for &v in layer.biases.iter() {
            format::write_f64(&mut w, v)?;
        }
    }
    for &v in model.feature_mean.iter() {
        format::write_f64(&mut w, v)?;
    }
    for &v in model.feature_std.iter() {
        format::write_f64(&mut w, v)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a model written by [`save_model`]; bit-exact inverse.
pub fn load_model(path: impl AsRef<Path>) -> Result<ProbingModel> {
    let mut r = BufReader::new(File::open(path)?);
    format::read_magic(&mut r, BAMD_MAGIC)?;
    let version = format::read_u32(&mut r, "version")?;
    if version != BAMD_VERSION {
        return Err(Error::format(format!("unsupported version {version} (expected {BAMD_VERSION})")));
    }
    let nt = format::read_u32(&mut r, "num_elements")? as usize;
    let n_w = format::read_u32(&mut r, "num_probing")? as usize;
    let n_v = format::read_u32(&mut r, "n_classes")? as usize;
    if nt < 1 || n_w < 1 || n_v < 1 {
        return Err(Error::format("model dimensions must be positive"));
    }
    let n_hidden = format::read_u32(&mut r, "hidden layer count")? as usize;
    if n_hidden > 1024 {
        return Err(Error::format(format!("implausible hidden layer count {n_hidden}")));
    }
    let mut hidden_sizes = Vec::with_capacity(n_hidden);
    for i in 0..n_hidden {
        let h = format::read_u32(&mut r, &format!("hidden size {i}"))? as usize;
        if h < 1 {
            return Err(Error::format(format!("hidden size {i} must be positive")));
        }
        hidden_sizes.push(h);
    }
    let mut read_matrix = |rows: usize, cols: usize, field: &str| -> Result<Array2<f64>> {
        let mut m = Array2::zeros((rows, cols));
        for i in 0..rows {
            for j in 0..cols {
                m[[i, j]] = format::read_f64(&mut r, field)?;
            }
        }
        Ok(m)
    };
    let theta = read_matrix(nt, n_w, "theta")?;
    let mut widths = vec![n_w];
    widths.extend_from_slice(&hidden_sizes);
    widths.push(n_v);
    let mut layers = Vec::with_capacity(widths.len() - 1);
    for io in widths.windows(2) {
        let weights = read_matrix(io[0], io[1], "layer weights")?;
        let mut biases = Array1::zeros(io[1]);
        for j in 0..io[1] {
            biases[j] = read_matrix(1, 1, "layer biases")?[[0, 0]];
        }
        layers.push(MlpLayer { weights, biases });
    }
    let feature_mean = read_matrix(1, n_w, "feature mean")?.row(0).to_owned();
    let feature_std = read_matrix(1, n_w, "feature std")?.row(0).to_owned();
    Ok(ProbingModel { theta, layers, hidden_sizes, n_classes: n_v, feature_mean, feature_std })
}
