//! Positioning baselines and the input reduction they share with the
//! similarity model.
//!
//! Every positioning model sees the same input: the phase-normalized dominant
//! left singular vector of the `antennas × subcarriers` channel matrix,
//! real/imag stacked.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::chanscene::{ChannelVector, LabeledDataset};
use crate::error::{check_dim, Error, Result};
use crate::numkernel::dominant_left_sv;
use crate::train::{adam_step, pos_loss, AdamState, TrainConfig};

pub const MLP_HIDDEN: usize = 112;
pub const ELM_HIDDEN_DEFAULT: usize = 2000;
pub const ELM_RIDGE_DEFAULT: f64 = 1e-6;

const SV_TOL: f64 = 1e-10;
const SV_MAX_ITER: usize = 10_000;

/// Dominant left singular vector of the channel matrix, as an
/// `N × 1` channel.
///
/// If power iteration has not met the tolerance after the iteration cap
/// (nearly equal leading singular values) the last iterate is used.
pub fn reduce_input(ch: &ChannelVector) -> Result<ChannelVector> {
    let u = match dominant_left_sv(&ch.to_matrix(), SV_TOL, SV_MAX_ITER) {
        Ok((u, _)) => u,
        Err(Error::NotConverged { last, .. }) => last.0,
        Err(e) => return Err(e),
    };
    ChannelVector::new(u, ch.n_antennas(), 1)
}

/// Applies [`reduce_input`] to every input of `ds`.
pub fn reduce_dataset(ds: &LabeledDataset) -> Result<LabeledDataset> {
    let inputs = ds
        .inputs
        .iter()
        .enumerate()
        .map(|(index, x)| reduce_input(x).map_err(|e| Error::Sample { index, source: Box::new(e) }))
        .collect::<Result<Vec<_>>>()?;
    Ok(LabeledDataset {
        inputs,
        n_subcarriers: 1,
        ..ds.clone()
    })
}

/// Real/imag stacked inputs of `ds`.
pub fn stacked_inputs(ds: &LabeledDataset) -> Vec<Vec<f64>> {
    ds.inputs.iter().map(|x| x.values().to_stacked()).collect()
}

pub trait Predictor {
    fn input_dim(&self) -> usize;

    fn predict(&self, x: &[f64]) -> Result<Vec<f64>>;

    fn predict_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        xs.iter()
            .enumerate()
            .map(|(index, x)| self.predict(x).map_err(|e| Error::Sample { index, source: Box::new(e) }))
            .collect()
    }
}

/// Free-function form of [`Predictor::predict`].
pub fn baseline_predict(model: &dyn Predictor, x: &[f64]) -> Result<Vec<f64>> {
    model.predict(x)
}

/// Fully connected ReLU network `input → 112 → 112 → 3`.
///
/// Outputs are `target_offset + target_scale · net(x)`; training sets the
/// offset and scale from the targets so the network works in normalized
/// units.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    /// Layer widths, input first.
    pub dims: Vec<usize>,
    /// Per layer: weights (`out × in`, row-major) then biases.
    pub params: Vec<f64>,
    pub target_offset: Vec<f64>,
    pub target_scale: f64,
}

struct MlpCache {
    // input plus post-activation output of every layer
    activations: Vec<Vec<f64>>,
}

impl MlpModel {
    /// Uniform `±1/√fan_in` initialization.
    pub fn new(input_dim: usize, hidden: &[usize], output_dim: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(output_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for w in dims.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..w[1] * (w[0] + 1) {
                params.push(rng.gen_range(-bound..bound));
            }
        }
        Ok(Self {
            dims,
            params,
            target_offset: vec![0.0; output_dim],
            target_scale: 1.0,
        })
    }

    pub fn positioning(input_dim: usize, seed: u64) -> Result<Self> {
        Self::new(input_dim, &[MLP_HIDDEN, MLP_HIDDEN], 3, seed)
    }

    fn layer_offsets(&self) -> Vec<usize> {
        let mut off = vec![0];
        for w in self.dims.windows(2) {
            off.push(off.last().unwrap() + w[1] * (w[0] + 1));
        }
        off
    }

    /// Sets the last layer's weights and biases to zero.
    pub fn zero_output_layer(&mut self) {
        let off = self.layer_offsets();
        let n = off.len();
        self.params[off[n - 2]..off[n - 1]].iter_mut().for_each(|p| *p = 0.0);
    }

    fn forward_cached(&self, x: &[f64]) -> MlpCache {
        let off = self.layer_offsets();
        let n_layers = self.dims.len() - 1;
        let mut activations = vec![x.to_vec()];
        for l in 0..n_layers {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let w = &self.params[off[l]..off[l] + fan_out * fan_in];
            let b = &self.params[off[l] + fan_out * fan_in..off[l + 1]];
            let input = &activations[l];
            let out: Vec<f64> = (0..fan_out)
                .map(|o| {
                    let z = b[o] + w[o * fan_in..(o + 1) * fan_in].iter().zip(input).map(|(a, v)| a * v).sum::<f64>();
                    if l + 1 < n_layers { z.max(0.0) } else { z }
                })
                .collect();
            activations.push(out);
        }
        MlpCache { activations }
    }

    /// Accumulates `∂/∂params` given `∂L/∂(network output)`.
    fn backward_into(&self, cache: &MlpCache, d_out: &[f64], grad: &mut [f64], scale: f64) {
        let off = self.layer_offsets();
        let n_layers = self.dims.len() - 1;
        let mut delta = d_out.to_vec();
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            if l + 1 < n_layers {
                // relu'(z) = 1 where the stored activation is positive
                for (d, a) in delta.iter_mut().zip(&cache.activations[l + 1]) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let input = &cache.activations[l];
            let w_off = off[l];
            let b_off = off[l] + fan_out * fan_in;
            for o in 0..fan_out {
                let d = delta[o] * scale;
                if d == 0.0 {
                    continue;
                }
                for (g, v) in grad[w_off + o * fan_in..w_off + (o + 1) * fan_in].iter_mut().zip(input) {
                    *g += d * v;
                }
                grad[b_off + o] += d;
            }
            if l > 0 {
                let w = &self.params[w_off..b_off];
                let mut prev = vec![0.0; fan_in];
                for o in 0..fan_out {
                    if delta[o] == 0.0 {
                        continue;
                    }
                    for (p, wv) in prev.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                        *p += delta[o] * wv;
                    }
                }
                delta = prev;
            }
        }
    }

    fn output(&self, cache: &MlpCache) -> Vec<f64> {
        cache
            .activations
            .last()
            .unwrap()
            .iter()
            .zip(&self.target_offset)
            .map(|(z, m)| m + self.target_scale * z)
            .collect()
    }

    /// Mean positioning loss over `(xs, ts)` and its gradient.
    pub fn loss_and_grad(&self, xs: &[Vec<f64>], ts: &[Vec<f64>]) -> Result<(f64, Vec<f64>)> {
        check_dim(xs.len(), ts.len())?;
        let mut grad = vec![0.0; self.params.len()];
        let scale = 1.0 / xs.len() as f64;
        let mut total = 0.0;
        for (x, t) in xs.iter().zip(ts) {
            check_dim(self.dims[0], x.len())?;
            let cache = self.forward_cached(x);
            let pred = self.output(&cache);
            check_dim(pred.len(), t.len())?;
            let d = pos_loss(t, &pred);
            total += d;
            if d > 0.0 {
                let d_out: Vec<f64> = pred.iter().zip(t).map(|(p, v)| self.target_scale * (p - v) / d).collect();
                self.backward_into(&cache, &d_out, &mut grad, scale);
            }
        }
        Ok((total * scale, grad))
    }
}

impl Predictor for MlpModel {
    fn input_dim(&self) -> usize {
        self.dims[0]
    }

    fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dims[0], x.len())?;
        Ok(self.output(&self.forward_cached(x)))
    }
}

/// Trains the positioning MLP with Adam on minibatches of `cfg.batch_size`.
pub fn mlp_train(ds: &LabeledDataset, cfg: &TrainConfig) -> Result<MlpModel> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    ds.validate()?;
    check_dim(3, ds.target_dim())?;
    let xs = stacked_inputs(ds);
    let mut model = MlpModel::positioning(xs[0].len(), cfg.shuffle_seed ^ 0x6d6c_7000)?;
    let n = ds.len() as f64;
    let offset: Vec<f64> = (0..3).map(|a| ds.targets.iter().map(|t| t[a]).sum::<f64>() / n).collect();
    let spread = (ds.targets.iter().map(|t| pos_loss(t, &offset).powi(2)).sum::<f64>() / n).sqrt();
    model.target_offset = offset;
    model.target_scale = if spread > 0.0 { spread } else { 1.0 };

    let mut state = AdamState::new(model.params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut members = chunk.to_vec();
            members.sort_unstable();
            let bx: Vec<Vec<f64>> = members.iter().map(|&i| xs[i].clone()).collect();
            let bt: Vec<Vec<f64>> = members.iter().map(|&i| ds.targets[i].clone()).collect();
            let (loss, grad) = model.loss_and_grad(&bx, &bt)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            adam_step(&mut model.params, &grad, &mut state, cfg)?;
        }
    }
    Ok(model)
}

/// Extreme learning machine: fixed random ReLU layer, ridge-regressed
/// linear readout.
#[derive(Debug, Clone, PartialEq)]
pub struct ElmModel {
    pub input_dim: usize,
    pub hidden: usize,
    /// `hidden × (input_dim + 1)`, row-major; last column is the bias.
    pub hidden_weights: Vec<f64>,
    /// `hidden × output_dim`, row-major.
    pub output_weights: Vec<f64>,
    pub output_dim: usize,
}

impl ElmModel {
    fn random(input_dim: usize, hidden: usize, output_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden_weights = (0..hidden * (input_dim + 1)).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        Self {
            input_dim,
            hidden,
            hidden_weights,
            output_weights: vec![0.0; hidden * output_dim],
            output_dim,
        }
    }

    /// Hidden features `relu(W·[x; 1])`.
    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim, x.len())?;
        let stride = self.input_dim + 1;
        Ok((0..self.hidden)
            .map(|h| {
                let row = &self.hidden_weights[h * stride..(h + 1) * stride];
                let z = row[self.input_dim] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                z.max(0.0)
            })
            .collect())
    }
}

impl Predictor for ElmModel {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let z = self.features(x)?;
        let mut out = vec![0.0; self.output_dim];
        for (h, zh) in z.iter().enumerate() {
            if *zh == 0.0 {
                continue;
            }
            for (o, b) in out.iter_mut().zip(&self.output_weights[h * self.output_dim..(h + 1) * self.output_dim]) {
                *o += zh * b;
            }
        }
        Ok(out)
    }
}

/// Hidden feature matrix (samples × hidden).
fn feature_matrix(model: &ElmModel, xs: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let mut z = DMatrix::zeros(xs.len(), model.hidden);
    for (i, x) in xs.iter().enumerate() {
        for (h, v) in model.features(x)?.into_iter().enumerate() {
            z[(i, h)] = v;
        }
    }
    Ok(z)
}

/// Effective ridge: `ridge · trace(ZᵀZ) / hidden`.
pub fn elm_effective_ridge(gram: &DMatrix<f64>, ridge: f64) -> f64 {
    ridge * gram.trace() / gram.nrows() as f64
}

/// Trains an ELM: random hidden layer from `seed`, output weights from the
/// ridge normal equations `(ZᵀZ + λI)B = ZᵀT`.
pub fn elm_train(ds: &LabeledDataset, hidden: usize, ridge: f64, seed: u64) -> Result<ElmModel> {
    if hidden == 0 {
        return Err(Error::InvalidArgument("hidden must be >= 1".into()));
    }
    if !(ridge >= 0.0) {
        return Err(Error::InvalidArgument("ridge must be >= 0".into()));
    }
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    ds.validate()?;
    let xs = stacked_inputs(ds);
    let t_dim = ds.target_dim();
    let mut model = ElmModel::random(xs[0].len(), hidden, t_dim, seed);
    let z = feature_matrix(&model, &xs)?;
    let targets = DMatrix::from_fn(ds.len(), t_dim, |i, j| ds.targets[i][j]);

    let mut gram = z.transpose() * &z;
    let lambda = elm_effective_ridge(&gram, ridge);
    for i in 0..hidden {
        gram[(i, i)] += lambda;
    }
    let rhs = z.transpose() * &targets;
    let chol = gram.clone().cholesky().ok_or(Error::SingularNormalMatrix)?;
    if lambda == 0.0 {
        // a numerically rank-deficient Gram matrix can still factor with tiny pivots
        let max_diag = gram.diagonal().max();
        let min_pivot = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v * v));
        if !(min_pivot > 1e-13 * max_diag) {
            return Err(Error::SingularNormalMatrix);
        }
    }
    let b = chol.solve(&rhs);
    model.output_weights = (0..hidden).flat_map(|h| (0..t_dim).map(move |j| (h, j))).map(|(h, j)| b[(h, j)]).collect();
    Ok(model)
}

/// `Zᵀ(ZB − T) + λB`, the gradient of the ridge objective at the model's
/// output weights (zero at the optimum).
pub fn elm_residual_gradient(model: &ElmModel, ds: &LabeledDataset, ridge: f64) -> Result<DMatrix<f64>> {
    let xs = stacked_inputs(ds);
    let z = feature_matrix(model, &xs)?;
    let t_dim = model.output_dim;
    let b = DMatrix::from_fn(model.hidden, t_dim, |h, j| model.output_weights[h * t_dim + j]);
    let targets = DMatrix::from_fn(ds.len(), t_dim, |i, j| ds.targets[i][j]);
    let gram = z.transpose() * &z;
    let lambda = elm_effective_ridge(&gram, ridge);
    Ok(z.transpose() * (&z * &b - targets) + b * lambda)
}

/// Mean and median positioning error of `predictions` against `targets`.
pub fn error_stats(predictions: &[Vec<f64>], targets: &[Vec<f64>]) -> (f64, f64) {
    let mut errs: Vec<f64> = predictions.iter().zip(targets).map(|(p, t)| pos_loss(t, p)).collect();
    if errs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    errs.sort_by(f64::total_cmp);
    let mid = errs.len() / 2;
    let median = if errs.len() % 2 == 1 { errs[mid] } else { 0.5 * (errs[mid - 1] + errs[mid]) };
    (mean, median)
}
