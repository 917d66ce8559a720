//! Binary dataset and model files.
//!
//! Both formats start with a 10-byte magic string and a version byte,
//! followed by little-endian `u64` header fields and raw `f64` payloads.
//!
//! Dataset: `SIMCHAN-DS`, version, then `L, N, S, T, task, n_subset,
//! subset[..]`, one `u64` split flag per sample (0 train, 1 validation),
//! inputs as interleaved `(re, im)` pairs, then targets. Inputs hold
//! `n_subset` antennas (or `N`) by `S` subcarriers.
//!
//! Model: `SIMCHAN-MD`, version, a kind byte, then a kind-specific header
//! and the weights.

use std::path::Path;

use num_complex::Complex64;
use simchan::baselines::{ElmModel, MlpModel};
use simchan::chanscene::{ChannelVector, LabeledDataset, Split, Task};
use simchan::numkernel::CVec;
use simchan::simnet::SimilarityModel;
use simchan::{Error, Result};

pub const DATASET_MAGIC: &[u8; 10] = b"SIMCHAN-DS";
pub const MODEL_MAGIC: &[u8; 10] = b"SIMCHAN-MD";
pub const DATASET_VERSION: u8 = 1;
pub const MODEL_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Similarity(SimilarityModel),
    Mlp(MlpModel),
    Elm(ElmModel),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Similarity,
    Mlp,
    Elm,
}

impl ModelKind {
    fn tag(self) -> u8 {
        match self {
            ModelKind::Similarity => 1,
            ModelKind::Mlp => 2,
            ModelKind::Elm => 3,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            1 => Ok(ModelKind::Similarity),
            2 => Ok(ModelKind::Mlp),
            3 => Ok(ModelKind::Elm),
            t => Err(Error::Format(format!("unknown model kind tag {t}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Similarity => "similarity",
            ModelKind::Mlp => "mlp",
            ModelKind::Elm => "elm",
        }
    }
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Similarity(_) => ModelKind::Similarity,
            Model::Mlp(_) => ModelKind::Mlp,
            Model::Elm(_) => ModelKind::Elm,
        }
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u64).to_le_bytes());
    }

    fn raw_u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, vs: &[f64]) {
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn open(buf: &'a [u8], magic: &[u8; 10], version: u8, what: &'static str) -> Result<Self> {
        if buf.len() < magic.len() || &buf[..magic.len()] != magic {
            return Err(Error::Format(format!("not a {what} file")));
        }
        let mut r = Reader { buf, pos: magic.len(), what };
        let v = r.take(1)?[0];
        if v != version {
            return Err(Error::Format(format!("unsupported {what} version {v} (this build reads version {version})")));
        }
        Ok(r)
    }

    fn truncated(&self, needed: usize) -> Error {
        Error::Format(format!(
            "truncated {} file: expected at least {} bytes, found {}",
            self.what,
            needed,
            self.buf.len()
        ))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or_else(|| self.truncated(usize::MAX))?;
        if end > self.buf.len() {
            return Err(self.truncated(end));
        }
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn raw_u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<usize> {
        let v = self.raw_u64()?;
        usize::try_from(v).map_err(|_| Error::Format(format!("header value {v} too large")))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    /// Checks that `count` f64 values remain, then reads them.
    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let bytes = count.checked_mul(8).ok_or_else(|| Error::Format("payload size overflows".into()))?;
        let raw = self.take(bytes)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    /// Fails with the exact expected size if fewer than `bytes` remain.
    fn expect_remaining(&self, bytes: usize) -> Result<()> {
        let expected = self.pos.saturating_add(bytes);
        if expected != self.buf.len() {
            return Err(Error::Format(format!(
                "{} file length mismatch: expected {} bytes, found {}",
                self.what,
                expected,
                self.buf.len()
            )));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        self.expect_remaining(0)
    }
}

fn task_tag(task: Task) -> usize {
    match task {
        Task::Positioning => 0,
        Task::ChannelMapping => 1,
    }
}

pub fn encode_dataset(ds: &LabeledDataset) -> Result<Vec<u8>> {
    ds.validate()?;
    let mut w = Writer(DATASET_MAGIC.to_vec());
    w.0.push(DATASET_VERSION);
    w.u64(ds.len());
    w.u64(ds.n_antennas);
    w.u64(ds.n_subcarriers);
    w.u64(ds.target_dim());
    w.u64(task_tag(ds.task));
    let subset = ds.antenna_subset.as_deref().unwrap_or(&[]);
    w.u64(subset.len());
    for &i in subset {
        w.u64(i);
    }
    let rows = if subset.is_empty() { ds.n_antennas } else { subset.len() };
    for x in &ds.inputs {
        if x.n_antennas() != rows || x.n_subcarriers() != ds.n_subcarriers {
            return Err(Error::Format(format!(
                "input shape {}x{} does not match the dataset header {rows}x{}",
                x.n_antennas(),
                x.n_subcarriers(),
                ds.n_subcarriers
            )));
        }
    }
    for s in &ds.split {
        w.u64(matches!(s, Split::Validation) as usize);
    }
    for x in &ds.inputs {
        for z in x.values().as_slice() {
            w.f64s(&[z.re, z.im]);
        }
    }
    for t in &ds.targets {
        w.f64s(t);
    }
    Ok(w.0)
}

pub fn decode_dataset(buf: &[u8]) -> Result<LabeledDataset> {
    let mut r = Reader::open(buf, DATASET_MAGIC, DATASET_VERSION, "SIMCHAN-DS")?;
    let l = r.u64()?;
    let n = r.u64()?;
    let s = r.u64()?;
    let t = r.u64()?;
    let task = match r.u64()? {
        0 => Task::Positioning,
        1 => Task::ChannelMapping,
        v => return Err(Error::Format(format!("unknown task tag {v}"))),
    };
    let n_subset = r.u64()?;
    let subset = (0..n_subset).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
    let rows = if subset.is_empty() { n } else { subset.len() };
    let m = rows.checked_mul(s).ok_or_else(|| Error::Format("input size overflows".into()))?;
    let payload = l
        .checked_mul(1 + 2 * m + t)
        .and_then(|v| v.checked_mul(8))
        .ok_or_else(|| Error::Format("payload size overflows".into()))?;
    r.expect_remaining(payload)?;

    let split = (0..l)
        .map(|_| match r.raw_u64()? {
            0 => Ok(Split::Train),
            1 => Ok(Split::Validation),
            v => Err(Error::Format(format!("bad split flag {v}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let mut inputs = Vec::with_capacity(l);
    for _ in 0..l {
        let raw = r.f64s(2 * m)?;
        let values = raw.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
        inputs.push(ChannelVector::new(CVec::new(values)?, rows, s)?);
    }
    let targets = (0..l).map(|_| r.f64s(t)).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    let ds = LabeledDataset {
        inputs,
        targets,
        task,
        antenna_subset: (!subset.is_empty()).then_some(subset),
        split,
        n_antennas: n,
        n_subcarriers: s,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn save_dataset(ds: &LabeledDataset, path: &Path) -> Result<()> {
    std::fs::write(path, encode_dataset(ds)?)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    decode_dataset(&std::fs::read(path)?)
}

pub fn encode_model(model: &Model) -> Vec<u8> {
    let mut w = Writer(MODEL_MAGIC.to_vec());
    w.0.push(MODEL_VERSION);
    w.0.push(model.kind().tag());
    match model {
        Model::Similarity(m) => {
            w.u64(m.input_dim());
            w.u64(m.target_dim());
            w.u64(m.n_columns());
            w.u64(m.k());
            w.u64(m.origin().is_some() as usize);
            w.raw_u64(m.origin().unwrap_or(0));
            w.f64s(m.weights());
        }
        Model::Mlp(m) => {
            w.u64(m.dims.len());
            for &d in &m.dims {
                w.u64(d);
            }
            w.f64s(&[m.target_scale]);
            w.f64s(&m.target_offset);
            w.u64(m.params.len());
            w.f64s(&m.params);
        }
        Model::Elm(m) => {
            w.u64(m.input_dim);
            w.u64(m.hidden);
            w.u64(m.output_dim);
            w.f64s(&m.hidden_weights);
            w.f64s(&m.output_weights);
        }
    }
    w.0
}

pub fn decode_model(buf: &[u8]) -> Result<Model> {
    let mut r = Reader::open(buf, MODEL_MAGIC, MODEL_VERSION, "SIMCHAN-MD")?;
    let model = match ModelKind::from_tag(r.u8()?)? {
        ModelKind::Similarity => {
            let (m, t, l, k) = (r.u64()?, r.u64()?, r.u64()?, r.u64()?);
            let has_origin = r.u64()?;
            let origin = r.raw_u64()?;
            let count = l
                .checked_mul(2 * m + t)
                .ok_or_else(|| Error::Format("payload size overflows".into()))?;
            r.expect_remaining(count.saturating_mul(8))?;
            let weights = r.f64s(count)?;
            Model::Similarity(SimilarityModel::from_raw(m, t, l, k, weights, (has_origin != 0).then_some(origin))?)
        }
        ModelKind::Mlp => {
            let n_dims = r.u64()?;
            let dims = (0..n_dims).map(|_| r.u64()).collect::<Result<Vec<usize>>>()?;
            if dims.len() < 2 || dims.contains(&0) {
                return Err(Error::Format("bad MLP layer widths".into()));
            }
            let expected: usize = dims.windows(2).map(|w| w[1] * (w[0] + 1)).sum();
            let target_scale = r.f64s(1)?[0];
            let target_offset = r.f64s(*dims.last().unwrap())?;
            let count = r.u64()?;
            if count != expected {
                return Err(Error::Format(format!("MLP parameter count {count} does not match widths ({expected})")));
            }
            r.expect_remaining(count.saturating_mul(8))?;
            let params = r.f64s(count)?;
            Model::Mlp(MlpModel { dims, params, target_offset, target_scale })
        }
        ModelKind::Elm => {
            let (input_dim, hidden, output_dim) = (r.u64()?, r.u64()?, r.u64()?);
            let hw = hidden.saturating_mul(input_dim.saturating_add(1));
            let ow = hidden.saturating_mul(output_dim);
            r.expect_remaining(hw.saturating_add(ow).saturating_mul(8))?;
            let hidden_weights = r.f64s(hw)?;
            let output_weights = r.f64s(ow)?;
            Model::Elm(ElmModel { input_dim, hidden, hidden_weights, output_weights, output_dim })
        }
    };
    r.finish()?;
    Ok(model)
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model> {
    decode_model(&std::fs::read(path)?)
}

fn kind_mismatch(expected: ModelKind, found: &Model) -> Error {
    Error::Format(format!(
        "model kind mismatch: expected {}, found {}",
        expected.as_str(),
        found.kind().as_str()
    ))
}

pub fn load_similarity(path: &Path) -> Result<SimilarityModel> {
    match load_model(path)? {
        Model::Similarity(m) => Ok(m),
        other => Err(kind_mismatch(ModelKind::Similarity, &other)),
    }
}

pub fn load_mlp(path: &Path) -> Result<MlpModel> {
    match load_model(path)? {
        Model::Mlp(m) => Ok(m),
        other => Err(kind_mismatch(ModelKind::Mlp, &other)),
    }
}

pub fn load_elm(path: &Path) -> Result<ElmModel> {
    match load_model(path)? {
        Model::Elm(m) => Ok(m),
        other => Err(kind_mismatch(ModelKind::Elm, &other)),
    }
}
