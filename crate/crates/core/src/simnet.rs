//! Similarity-based prediction network.
//!
//! The forward pass correlates the input with every dictionary column, keeps
//! the `k` correlations of largest modulus, normalizes their moduli to sum to
//! one and returns the matching convex combination of prediction columns:
//!
//! ```text
//! c = Dᴴh,  s = HT_k(c),  y = |s| / ‖s‖₁,  t̂ = P·y
//! ```
//!
//! Initialized with `D = (h_1..h_L)` and `P = (t_1..t_L)` this is exactly a
//! k-nearest-neighbour Nadaraya-Watson estimator with kernel `|h_iᴴh|`. The
//! backward pass treats the selected support as constant, so it only touches
//! `k` columns.

use std::cell::RefCell;

use num_complex::Complex64;

use crate::chanscene::LabeledDataset;
use crate::error::{check_dim, Error, Result};
use crate::numkernel::{cdot, CMat, CVec};

// insertion-based selection below this k, partial sort above
const SMALL_K: usize = 32;

/// Weights of the network.
///
/// The dictionary is stored as two real planes (real and imaginary parts),
/// column-major, followed by the prediction matrix, column-major. The three
/// blocks form the flat parameter vector the optimizer works on.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityModel {
    input_dim: usize,
    target_dim: usize,
    n_columns: usize,
    k: usize,
    weights: Vec<f64>,
    origin: Option<u64>,
}

impl SimilarityModel {
    /// Builds a model with dictionary columns `dictionary` and prediction
    /// columns `predictions`.
    pub fn from_columns(dictionary: &[CVec], predictions: &[Vec<f64>], k: usize) -> Result<Self> {
        let l = dictionary.len();
        if l == 0 {
            return Err(Error::EmptyDataset);
        }
        check_dim(l, predictions.len())?;
        if k == 0 || k > l {
            return Err(Error::InvalidArgument(format!("k = {k} must lie in 1..={l}")));
        }
        let m = dictionary[0].len();
        let t = predictions[0].len();
        let mut weights = vec![0.0; l * (2 * m + t)];
        let (re, rest) = weights.split_at_mut(l * m);
        let (im, pred) = rest.split_at_mut(l * m);
        for (j, (d, p)) in dictionary.iter().zip(predictions).enumerate() {
            check_dim(m, d.len())?;
            check_dim(t, p.len())?;
            if d.is_zero() {
                return Err(Error::InvalidArgument(format!("dictionary column {j} is zero")));
            }
            for (n, z) in d.as_slice().iter().enumerate() {
                re[j * m + n] = z.re;
                im[j * m + n] = z.im;
            }
            pred[j * t..(j + 1) * t].copy_from_slice(p);
        }
        Ok(Self { input_dim: m, target_dim: t, n_columns: l, k, weights, origin: None })
    }

    /// Reassembles a model from its flat parameter vector.
    pub fn from_raw(
        input_dim: usize,
        target_dim: usize,
        n_columns: usize,
        k: usize,
        weights: Vec<f64>,
        origin: Option<u64>,
    ) -> Result<Self> {
        if input_dim == 0 || target_dim == 0 || n_columns == 0 {
            return Err(Error::InvalidArgument("model dimensions must be positive".into()));
        }
        if k == 0 || k > n_columns {
            return Err(Error::InvalidArgument(format!("k = {k} must lie in 1..={n_columns}")));
        }
        check_dim(n_columns * (2 * input_dim + target_dim), weights.len())?;
        Ok(Self { input_dim, target_dim, n_columns, k, weights, origin })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    /// Number of dictionary columns `L`.
    pub fn n_columns(&self) -> usize {
        self.n_columns
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn set_k(&mut self, k: usize) -> Result<()> {
        if k == 0 || k > self.n_columns {
            return Err(Error::InvalidArgument(format!("k = {k} must lie in 1..={}", self.n_columns)));
        }
        self.k = k;
        Ok(())
    }

    /// Fingerprint of the dataset the model was initialized from. Column `i`
    /// corresponds to sample `i` of that dataset.
    pub fn origin(&self) -> Option<u64> {
        self.origin
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    fn dict_len(&self) -> usize {
        self.n_columns * self.input_dim
    }

    pub fn dict_re(&self) -> &[f64] {
        &self.weights[..self.dict_len()]
    }

    pub fn dict_im(&self) -> &[f64] {
        &self.weights[self.dict_len()..2 * self.dict_len()]
    }

    pub fn predictions(&self) -> &[f64] {
        &self.weights[2 * self.dict_len()..]
    }

    pub fn dictionary_column(&self, j: usize) -> CVec {
        let m = self.input_dim;
        let (re, im) = (self.dict_re(), self.dict_im());
        CVec::new((0..m).map(|n| Complex64::new(re[j * m + n], im[j * m + n])).collect())
            .expect("dictionary entries are finite")
    }

    pub fn prediction_column(&self, j: usize) -> &[f64] {
        let t = self.target_dim;
        &self.predictions()[j * t..(j + 1) * t]
    }

    /// The dictionary as an `input_dim × L` complex matrix.
    pub fn dictionary(&self) -> CMat {
        let cols: Vec<CVec> = (0..self.n_columns).map(|j| self.dictionary_column(j)).collect();
        CMat::from_columns(&cols).expect("columns share one length")
    }
}

/// FNV-1a over the bit patterns of inputs and targets.
pub fn dataset_fingerprint(ds: &LabeledDataset) -> u64 {
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |v: u64| {
        for b in v.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(PRIME);
        }
    };
    eat(ds.len() as u64);
    for (x, t) in ds.inputs.iter().zip(&ds.targets) {
        for z in x.values().as_slice() {
            eat(z.re.to_bits());
            eat(z.im.to_bits());
        }
        for v in t {
            eat(v.to_bits());
        }
    }
    h
}

/// Nadaraya-Watson initialization: `D = (h_1..h_L)`, `P = (t_1..t_L)`.
pub fn init_from_dataset(ds: &LabeledDataset, k: usize) -> Result<SimilarityModel> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    ds.validate()?;
    let dict: Vec<CVec> = ds.inputs.iter().map(|x| x.values().clone()).collect();
    let mut model = SimilarityModel::from_columns(&dict, &ds.targets, k)?;
    model.origin = Some(dataset_fingerprint(ds));
    Ok(model)
}

/// Activations of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `Dᴴh`, length `L`.
    pub c: CVec,
    /// Selected indices, ascending.
    pub support: Vec<usize>,
    /// `c` on the support, zero elsewhere.
    pub s: CVec,
    pub y: Vec<f64>,
    pub t_hat: Vec<f64>,
}

/// Keeps the `k` entries of `c` with greatest modulus (lowest index wins
/// ties) and zeroes the rest.
pub fn hard_threshold(c: &CVec, k: usize) -> Result<(CVec, Vec<usize>)> {
    if k == 0 || k > c.len() {
        return Err(Error::InvalidArgument(format!("k = {k} must lie in 1..={}", c.len())));
    }
    // ranking by squared modulus; same order as the modulus itself
    let sq: Vec<f64> = c.as_slice().iter().map(|z| z.norm_sqr()).collect();
    let support = top_k(&sq, k, None);
    Ok((masked(c, &support), support))
}

fn masked(c: &CVec, support: &[usize]) -> CVec {
    let mut s = vec![Complex64::new(0.0, 0.0); c.len()];
    for &i in support {
        s[i] = c[i];
    }
    CVec::new(s).expect("entries copied from a finite vector")
}

/// Indices of the `k` largest scores in ascending index order. Ties go to
/// the lowest index; `exclude` is never selected.
fn top_k(scores: &[f64], k: usize, exclude: Option<usize>) -> Vec<usize> {
    let mut out = if k <= SMALL_K {
        // kept sorted by (score desc, index asc)
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        for (i, &v) in scores.iter().enumerate() {
            if Some(i) == exclude {
                continue;
            }
            if best.len() == k && v <= best[k - 1].0 {
                continue;
            }
            let pos = best.partition_point(|&(b, _)| b >= v);
            best.insert(pos, (v, i));
            best.truncate(k);
        }
        best.into_iter().map(|(_, i)| i).collect::<Vec<_>>()
    } else {
        let mut all: Vec<(f64, usize)> = scores
            .iter()
            .copied()
            .enumerate()
            .filter(|&(i, _)| Some(i) != exclude)
            .map(|(i, v)| (v, i))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
        if k < all.len() {
            all.select_nth_unstable_by(k - 1, cmp);
            all.truncate(k);
        }
        all.into_iter().map(|(_, i)| i).collect()
    };
    out.sort_unstable();
    out
}

/// `|h_iᴴh|` when `i` is selected, 0 otherwise.
pub fn kernel(h: &CVec, h_i: &CVec, selected: bool) -> Result<f64> {
    let corr = cdot(h_i, h)?;
    Ok(if selected { corr.norm() } else { 0.0 })
}

/// `Dᴴh` over the split planes. Each column sums in four interleaved lanes
/// that are reduced in a fixed order.
fn correlate(model: &SimilarityModel, h: &CVec) -> Vec<Complex64> {
    let m = model.input_dim;
    let hre: Vec<f64> = h.as_slice().iter().map(|z| z.re).collect();
    let him: Vec<f64> = h.as_slice().iter().map(|z| z.im).collect();
    let (dre, dim) = (model.dict_re(), model.dict_im());
    let chunks = m / 4;
    (0..model.n_columns)
        .map(|j| {
            let cre = &dre[j * m..(j + 1) * m];
            let cim = &dim[j * m..(j + 1) * m];
            let mut rr = [0.0f64; 4];
            let mut ii = [0.0f64; 4];
            let mut ri = [0.0f64; 4];
            let mut ir = [0.0f64; 4];
            for q in 0..chunks {
                let o = 4 * q;
                for l in 0..4 {
                    rr[l] += cre[o + l] * hre[o + l];
                    ii[l] += cim[o + l] * him[o + l];
                    ri[l] += cre[o + l] * him[o + l];
                    ir[l] += cim[o + l] * hre[o + l];
                }
            }
            for n in 4 * chunks..m {
                rr[0] += cre[n] * hre[n];
                ii[0] += cim[n] * him[n];
                ri[0] += cre[n] * him[n];
                ir[0] += cim[n] * hre[n];
            }
            let sum = |a: [f64; 4]| (a[0] + a[1]) + (a[2] + a[3]);
            // conj(d)·h = (dr·hr + di·hi) + j(dr·hi − di·hr)
            Complex64::new(sum(rr) + sum(ii), sum(ri) - sum(ir))
        })
        .collect()
}

fn check_exclude(model: &SimilarityModel, exclude: Option<usize>) -> Result<()> {
    let l = model.n_columns;
    if let Some(e) = exclude {
        if e >= l {
            return Err(Error::InvalidArgument(format!("excluded column {e} out of range 0..{l}")));
        }
        if model.k > l - 1 {
            return Err(Error::InvalidArgument("k must be <= L - 1 when a column is excluded".into()));
        }
    }
    Ok(())
}

/// Forward pass. With `exclude = Some(i)` column `i` is kept out of the
/// support (used while fine-tuning on the samples that built the dictionary).
pub fn forward(model: &SimilarityModel, h: &CVec, exclude: Option<usize>) -> Result<ForwardTrace> {
    check_dim(model.input_dim, h.len())?;
    check_exclude(model, exclude)?;
    finish_forward(model, correlate(model, h), exclude)
}

/// Forward passes for several inputs sharing one dictionary. The
/// correlations are computed as a single matrix product, so results can
/// differ from [`forward`] in the last bits.
pub fn forward_batch(
    model: &SimilarityModel,
    inputs: &[&CVec],
    exclude: &[Option<usize>],
) -> Result<Vec<ForwardTrace>> {
    let mut out = Vec::with_capacity(inputs.len());
    forward_batch_each(model, inputs, exclude, |_, tr| {
        out.push(tr);
        Ok(())
    })?;
    Ok(out)
}

/// Like [`forward_batch`] but hands each trace to `f` (with its position in
/// `inputs`) as soon as it is built.
pub fn forward_batch_each(
    model: &SimilarityModel,
    inputs: &[&CVec],
    exclude: &[Option<usize>],
    mut f: impl FnMut(usize, ForwardTrace) -> Result<()>,
) -> Result<()> {
    check_dim(inputs.len(), exclude.len())?;
    for (h, &e) in inputs.iter().zip(exclude) {
        check_dim(model.input_dim, h.len())?;
        check_exclude(model, e)?;
    }
    let (l, b) = (model.n_columns, inputs.len());
    SCRATCH.with(|cell| {
        let mut corr = cell.borrow_mut();
        correlate_batch(model, inputs, &mut corr);
        for q in 0..b {
            let c = (0..l)
                .map(|j| Complex64::new(corr[q * l + j], corr[(b + q) * l + j]))
                .collect();
            f(q, finish_forward(model, c, exclude[q])?)?;
        }
        Ok(())
    })
}

thread_local! {
    // reused across calls; the product matrix is large enough that fresh
    // allocations are dominated by page faults
    static SCRATCH: RefCell<Vec<f64>> = const { RefCell::new(Vec::new()) };
}

/// `Dᴴ[h_1..h_B]` as a real product into `out`, an `L × 2B` column-major
/// matrix: real parts in the first `B` columns, imaginary parts after.
fn correlate_batch(model: &SimilarityModel, inputs: &[&CVec], out: &mut Vec<f64>) {
    let (m, l, b) = (model.input_dim, model.n_columns, inputs.len());
    // top = [Hre Him], bottom = [Him −Hre], both M × 2B column-major
    let mut top = vec![0.0; m * 2 * b];
    let mut bottom = vec![0.0; m * 2 * b];
    for (q, h) in inputs.iter().enumerate() {
        for (n, z) in h.as_slice().iter().enumerate() {
            top[q * m + n] = z.re;
            top[(b + q) * m + n] = z.im;
            bottom[q * m + n] = z.im;
            bottom[(b + q) * m + n] = -z.re;
        }
    }
    out.clear();
    out.resize(l * 2 * b, 0.0);
    let (dre, dim) = (model.dict_re(), model.dict_im());
    // Dreᵀ is L × M with row stride M
    unsafe {
        matrixmultiply::dgemm(
            l, m, 2 * b, 1.0,
            dre.as_ptr(), m as isize, 1,
            top.as_ptr(), 1, m as isize,
            0.0, out.as_mut_ptr(), 1, l as isize,
        );
        matrixmultiply::dgemm(
            l, m, 2 * b, 1.0,
            dim.as_ptr(), m as isize, 1,
            bottom.as_ptr(), 1, m as isize,
            1.0, out.as_mut_ptr(), 1, l as isize,
        );
    }
}

fn finish_forward(model: &SimilarityModel, c: Vec<Complex64>, exclude: Option<usize>) -> Result<ForwardTrace> {
    let l = model.n_columns;
    let sq: Vec<f64> = c.iter().map(|z| z.norm_sqr()).collect();
    let support = top_k(&sq, model.k, exclude);

    let c = CVec::new(c).map_err(|_| Error::InvalidArgument("non-finite correlation".into()))?;
    let s = masked(&c, &support);
    let mut y = vec![0.0; l];
    let mut total = 0.0;
    for &i in &support {
        y[i] = c[i].norm();
        total += y[i];
    }
    let t = model.target_dim;
    let mut t_hat = vec![0.0; t];
    if total > 0.0 {
        for &i in &support {
            y[i] /= total;
        }
        for &i in &support {
            let w = y[i];
            for (o, p) in t_hat.iter_mut().zip(model.prediction_column(i)) {
                *o += w * p;
            }
        }
    } else {
        y.iter_mut().for_each(|v| *v = 0.0);
    }
    Ok(ForwardTrace { c, support, s, y, t_hat })
}

/// Gradient restricted to the support columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradient {
    pub columns: Vec<usize>,
    /// `columns.len() × input_dim`, real parts of `∂L/∂D`.
    pub dict_re: Vec<f64>,
    pub dict_im: Vec<f64>,
    /// `columns.len() × target_dim`.
    pub pred: Vec<f64>,
}

impl ModelGradient {
    /// Adds `scale` times this gradient into a flat vector laid out like
    /// [`SimilarityModel::weights`].
    pub fn accumulate_into(&self, model: &SimilarityModel, dense: &mut [f64], scale: f64) {
        let m = model.input_dim;
        let t = model.target_dim;
        let dl = model.dict_len();
        for (q, &j) in self.columns.iter().enumerate() {
            for n in 0..m {
                dense[j * m + n] += scale * self.dict_re[q * m + n];
                dense[dl + j * m + n] += scale * self.dict_im[q * m + n];
            }
            for r in 0..t {
                dense[2 * dl + j * t + r] += scale * self.pred[q * t + r];
            }
        }
    }

    pub fn to_dense(&self, model: &SimilarityModel) -> Vec<f64> {
        let mut out = vec![0.0; model.weights.len()];
        self.accumulate_into(model, &mut out, 1.0);
        out
    }
}

/// Backward pass for the loss gradient `dl_dthat = ∂L/∂t̂`.
///
/// The support from `trace` is held fixed. Columns whose correlation is
/// exactly zero get a zero gradient, as does everything when `‖s‖₁ = 0`.
pub fn backward(
    model: &SimilarityModel,
    trace: &ForwardTrace,
    h: &CVec,
    dl_dthat: &[f64],
) -> Result<ModelGradient> {
    check_dim(model.input_dim, h.len())?;
    check_dim(model.target_dim, dl_dthat.len())?;
    check_dim(model.n_columns, trace.y.len())?;
    let m = model.input_dim;
    let t = model.target_dim;
    let support = &trace.support;
    let k = support.len();
    let mut grad = ModelGradient {
        columns: support.clone(),
        dict_re: vec![0.0; k * m],
        dict_im: vec![0.0; k * m],
        pred: vec![0.0; k * t],
    };

    let moduli: Vec<f64> = support.iter().map(|&i| trace.c[i].norm()).collect();
    let total: f64 = moduli.iter().sum();
    if !(total > 0.0) {
        return Ok(grad);
    }

    // ∂L/∂P_j = g·y_j and ∂L/∂y_j = g·P_j
    let mut dl_dy = vec![0.0; k];
    for (q, &j) in support.iter().enumerate() {
        let yj = trace.y[j];
        let pj = model.prediction_column(j);
        let mut acc = 0.0;
        for r in 0..t {
            grad.pred[q * t + r] = dl_dthat[r] * yj;
            acc += dl_dthat[r] * pj[r];
        }
        dl_dy[q] = acc;
    }
    // y_i = a_i / A  ⇒  ∂L/∂a_j = (∂L/∂y_j − Σ_i ∂L/∂y_i·y_i) / A
    let mean: f64 = support.iter().zip(&dl_dy).map(|(&j, g)| g * trace.y[j]).sum();

    for (q, &j) in support.iter().enumerate() {
        let a = moduli[q];
        if a == 0.0 {
            continue;
        }
        let dl_da = (dl_dy[q] - mean) / total;
        // a = |c_j|, c_j = d_jᴴh  ⇒  ∂a/∂(Re d + j Im d) = conj(c_j)·h / a
        let w = trace.c[j].conj() * (dl_da / a);
        for (n, z) in h.as_slice().iter().enumerate() {
            let g = w * z;
            grad.dict_re[q * m + n] = g.re;
            grad.dict_im[q * m + n] = g.im;
        }
    }
    Ok(grad)
}

/// Forward without exclusion on every channel, preserving order.
pub fn predict_batch(model: &SimilarityModel, channels: &[CVec]) -> Result<Vec<Vec<f64>>> {
    channels
        .iter()
        .enumerate()
        .map(|(index, h)| {
            forward(model, h, None)
                .map(|tr| tr.t_hat)
                .map_err(|e| Error::Sample { index, source: Box::new(e) })
        })
        .collect()
}
