//! Task losses, Adam, and minibatch fine-tuning of a [`SimilarityModel`].

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chanscene::{ChannelVector, LabeledDataset};
use crate::error::{check_dim, Error, Result};
use crate::simnet::{backward, dataset_fingerprint, forward_batch_each, SimilarityModel};

/// Samples per correlation product; bounds the scratch matrix size.
const FORWARD_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Negative downlink spectral efficiency with the estimate as precoder.
    SpectralEfficiency,
    /// Euclidean localization error.
    Positioning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss_kind: LossKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 100,
            epochs: 50,
            loss_kind: LossKind::Positioning,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.into()));
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be finite and >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.adam_beta1 > 0.0 && self.adam_beta1 < 1.0 && self.adam_beta2 > 0.0 && self.adam_beta2 < 1.0) {
            return bad("adam betas must lie in (0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self {
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            step_count: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    check_dim(params.len(), grads.len())?;
    check_dim(params.len(), state.first_moment.len())?;
    check_dim(params.len(), state.second_moment.len())?;
    state.step_count += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let t = state.step_count as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = cfg.learning_rate;
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
    }
    Ok(())
}

fn se_parts(h_true: &ChannelVector, h_hat: &[f64]) -> Result<(usize, usize, usize)> {
    let n = h_true.n_antennas();
    let s = h_true.n_subcarriers();
    check_dim(2 * n * s, h_hat.len())?;
    Ok((n, s, n * s))
}

/// Negative spectral efficiency averaged over subcarriers when `h_hat`
/// (real/imag stacked, antenna-major) is used as precoder for `h_true`.
/// Subcarriers where the precoder is zero contribute nothing.
pub fn se_loss(h_true: &ChannelVector, h_hat: &[f64]) -> Result<f64> {
    se_loss_and_grad(h_true, h_hat, false).map(|(l, _)| l)
}

/// [`se_loss`] and its gradient with respect to the stacked estimate.
pub fn se_loss_and_grad(h_true: &ChannelVector, h_hat: &[f64], want_grad: bool) -> Result<(f64, Vec<f64>)> {
    let (n_ant, n_sub, half) = se_parts(h_true, h_hat)?;
    let truth = h_true.values().as_slice();
    let mut grad = if want_grad { vec![0.0; 2 * half] } else { Vec::new() };
    let ln2 = std::f64::consts::LN_2;
    let mut total = 0.0;
    for s in 0..n_sub {
        // a = h_sᴴ ĥ_s, r = ‖ĥ_s‖²
        let (mut a_re, mut a_im, mut r) = (0.0, 0.0, 0.0);
        for n in 0..n_ant {
            let i = n * n_sub + s;
            let (x, y) = (h_hat[i], h_hat[half + i]);
            let h = truth[i];
            a_re += h.re * x + h.im * y;
            a_im += h.re * y - h.im * x;
            r += x * x + y * y;
        }
        if r == 0.0 {
            continue;
        }
        let a2 = a_re * a_re + a_im * a_im;
        let q = a2 / r;
        total += (1.0 + q).log2();
        if want_grad {
            // ∂|a|²/∂x_n = 2 Re(a h_n), ∂|a|²/∂y_n = 2 Im(a h_n)
            let scale = -1.0 / (n_sub as f64 * (1.0 + q) * ln2 * r);
            for n in 0..n_ant {
                let i = n * n_sub + s;
                let (x, y) = (h_hat[i], h_hat[half + i]);
                let h = truth[i];
                let ah_re = a_re * h.re - a_im * h.im;
                let ah_im = a_re * h.im + a_im * h.re;
                grad[i] = scale * (2.0 * ah_re - q * 2.0 * x);
                grad[half + i] = scale * (2.0 * ah_im - q * 2.0 * y);
            }
        }
    }
    Ok((-total / n_sub as f64, grad))
}

/// Spectral efficiency obtained with the true channel as precoder.
pub fn se_upper_bound(h_true: &ChannelVector) -> f64 {
    let n_sub = h_true.n_subcarriers();
    let total: f64 = (0..n_sub)
        .map(|s| {
            let e: f64 = h_true.subcarrier(s).iter().map(|z| z.norm_sqr()).sum();
            (1.0 + e).log2()
        })
        .sum();
    total / n_sub as f64
}

/// Euclidean distance between true and estimated positions.
pub fn pos_loss(p: &[f64], p_hat: &[f64]) -> f64 {
    p.iter().zip(p_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn pos_loss_and_grad(p: &[f64], p_hat: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_dim(p.len(), p_hat.len())?;
    let d = pos_loss(p, p_hat);
    let grad = if d > 0.0 {
        p_hat.iter().zip(p).map(|(a, b)| (a - b) / d).collect()
    } else {
        vec![0.0; p.len()]
    };
    Ok((d, grad))
}

/// Per-sample loss and its gradient with respect to the prediction.
pub fn loss_and_grad(
    kind: LossKind,
    ds: &LabeledDataset,
    target: &[f64],
    t_hat: &[f64],
) -> Result<(f64, Vec<f64>)> {
    match kind {
        LossKind::Positioning => pos_loss_and_grad(target, t_hat),
        LossKind::SpectralEfficiency => {
            let truth = ChannelVector::from_stacked(target, ds.n_antennas, ds.n_subcarriers)?;
            se_loss_and_grad(&truth, t_hat, true)
        }
    }
}

/// Mean loss of the model over `ds` (no exclusion).
pub fn mean_loss(model: &SimilarityModel, ds: &LabeledDataset, kind: LossKind) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    let idx: Vec<usize> = (0..ds.len()).collect();
    for part in idx.chunks(FORWARD_CHUNK) {
        let hs: Vec<_> = part.iter().map(|&i| ds.inputs[i].values()).collect();
        forward_batch_each(model, &hs, &vec![None; part.len()], |q, tr| {
            total += loss_and_grad(kind, ds, &ds.targets[part[q]], &tr.t_hat)?.0;
            Ok(())
        })?;
    }
    Ok(total / ds.len() as f64)
}

/// Fine-tunes `D` and `P` with minibatch Adam. Returns the model and the
/// mean training loss of each epoch (accumulated during that epoch's passes).
///
/// When `model` was initialized from `ds`, each sample is forwarded with its
/// own dictionary column excluded.
pub fn fine_tune(
    mut model: SimilarityModel,
    ds: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<(SimilarityModel, Vec<f64>)> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    ds.validate()?;
    check_dim(model.input_dim(), ds.input_dim())?;
    check_dim(model.target_dim(), ds.target_dim())?;
    let exclude_self = model.origin() == Some(dataset_fingerprint(ds));
    if exclude_self && model.k() + 1 > model.n_columns() {
        return Err(Error::InvalidArgument("k must be <= L - 1 when fine-tuning on the dictionary samples".into()));
    }

    let n_params = model.weights().len();
    let mut state = AdamState::new(n_params);
    let mut grad = vec![0.0; n_params];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    let mut sample_loss = vec![0.0; ds.len()];

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            // reduce in ascending sample index regardless of the shuffle
            let mut members = chunk.to_vec();
            members.sort_unstable();
            let mut batch_loss = 0.0;
            let scale = 1.0 / members.len() as f64;
            for part in members.chunks(FORWARD_CHUNK) {
                let hs: Vec<_> = part.iter().map(|&i| ds.inputs[i].values()).collect();
                let excl: Vec<_> = part.iter().map(|&i| exclude_self.then_some(i)).collect();
                forward_batch_each(&model, &hs, &excl, |q, tr| {
                    let i = part[q];
                    let (loss, dl) = loss_and_grad(cfg.loss_kind, ds, &ds.targets[i], &tr.t_hat)?;
                    batch_loss += loss;
                    sample_loss[i] = loss;
                    backward(&model, &tr, hs[q], &dl)?.accumulate_into(&model, &mut grad, scale);
                    Ok(())
                })?;
            }
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            adam_step(model.weights_mut(), &grad, &mut state, cfg)?;
        }
        history.push(sample_loss.iter().sum::<f64>() / ds.len() as f64);
    }
    Ok((model, history))
}
