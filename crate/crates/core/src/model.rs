//! MLP encoder with dual heads: a projection head for contrastive learning
//! and a classifier head producing K-way logits. Both heads consume the same
//! encoder features, one encoder forward per view.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    /// Encoder output dimension d.
    pub feature_dim: usize,
    /// Projection head output dimension d_h.
    pub proj_dim: usize,
    /// K = K_old + K_new.
    pub num_classes: usize,
    pub seed: u64,
    /// Cosine-normalized classifier with logit temperature, off by default.
    pub cosine_head: bool,
    pub logit_tau: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            input_dim: 16,
            hidden_dims: vec![64, 64],
            feature_dim: 32,
            proj_dim: 16,
            num_classes: 6,
            seed: 0,
            cosine_head: false,
            logit_tau: 0.1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes == 0 {
            return Err(Error::Config("input_dim and num_classes must be positive".into()));
        }
        if self.hidden_dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("hidden dims must be positive".into()));
        }
        if self.feature_dim < 2 || self.proj_dim < 2 {
            return Err(Error::Config("feature_dim and proj_dim must be at least 2".into()));
        }
        if self.cosine_head && self.logit_tau <= 0.0 {
            return Err(Error::Config("logit_tau must be positive".into()));
        }
        Ok(())
    }
}

/// One affine layer: weight (in x out) and bias (1 x out).
#[derive(Clone, Debug)]
pub struct Layer {
    pub w: Matrix,
    pub b: Matrix,
}

/// All trainable tensors, plus the config that shaped them.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub encoder: Vec<Layer>,
    pub proj: Vec<Layer>,
    pub classifier: Layer,
    pub config: EncoderConfig,
}

fn glorot_layer(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Layer {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
    Layer { w: Matrix::new(fan_in, fan_out, data), b: Matrix::zeros(1, fan_out) }
}

/// Initialize parameters: scaled-uniform weights
/// (bound = sqrt(6 / (fan_in + fan_out))), zero biases, deterministic per seed.
pub fn init(config: &EncoderConfig) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dims = vec![config.input_dim];
    dims.extend_from_slice(&config.hidden_dims);
    dims.push(config.feature_dim);
    let encoder: Vec<Layer> =
        dims.windows(2).map(|w| glorot_layer(&mut rng, w[0], w[1])).collect();
    let proj = vec![
        glorot_layer(&mut rng, config.feature_dim, config.feature_dim),
        glorot_layer(&mut rng, config.feature_dim, config.proj_dim),
    ];
    let classifier = glorot_layer(&mut rng, config.feature_dim, config.num_classes);
    Ok(ModelParams { encoder, proj, classifier, config: config.clone() })
}

impl ModelParams {
    /// Tensors in a fixed (name, matrix) order; the order is the contract for
    /// checkpoints, optimizer state, and gradient readout.
    pub fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (i, l) in self.encoder.iter().enumerate() {
            out.push((format!("enc.{i}.w"), &l.w));
            out.push((format!("enc.{i}.b"), &l.b));
        }
        for (i, l) in self.proj.iter().enumerate() {
            out.push((format!("proj.{i}.w"), &l.w));
            out.push((format!("proj.{i}.b"), &l.b));
        }
        out.push(("cls.w".into(), &self.classifier.w));
        out.push(("cls.b".into(), &self.classifier.b));
        out
    }

    /// Visit tensors mutably in the same fixed order as `named_tensors`.
    pub fn for_each_tensor_mut(&mut self, mut f: impl FnMut(&mut Matrix)) {
        for l in &mut self.encoder {
            f(&mut l.w);
            f(&mut l.b);
        }
        for l in &mut self.proj {
            f(&mut l.w);
            f(&mut l.b);
        }
        f(&mut self.classifier.w);
        f(&mut self.classifier.b);
    }

    pub fn num_scalars(&self) -> usize {
        self.named_tensors().iter().map(|(_, m)| m.rows() * m.cols()).sum()
    }

    /// Flatten every tensor into one vector (fixed order).
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_scalars());
        for (_, m) in self.named_tensors() {
            v.extend_from_slice(m.data());
        }
        v
    }

    /// Overwrite every tensor from a flat vector (fixed order).
    pub fn set_from_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_scalars(), "flat parameter length mismatch");
        let mut off = 0;
        self.for_each_tensor_mut(|m| {
            let n = m.rows() * m.cols();
            m.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        });
    }

    /// Insert all parameters as leaves on a tape.
    pub fn vars<'t>(&self, tape: &'t Tape) -> ModelVars<'t> {
        let lay = |l: &Layer| (tape.leaf(l.w.clone()), tape.leaf(l.b.clone()));
        ModelVars {
            encoder: self.encoder.iter().map(lay).collect(),
            proj: self.proj.iter().map(lay).collect(),
            classifier: lay(&self.classifier),
            cosine_head: self.config.cosine_head,
            logit_tau: self.config.logit_tau,
            input_dim: self.config.input_dim,
        }
    }
}

/// Parameter leaves on a tape, ready to build forward graphs.
pub struct ModelVars<'t> {
    pub encoder: Vec<(Var<'t>, Var<'t>)>,
    pub proj: Vec<(Var<'t>, Var<'t>)>,
    pub classifier: (Var<'t>, Var<'t>),
    cosine_head: bool,
    logit_tau: f64,
    input_dim: usize,
}

impl<'t> ModelVars<'t> {
    /// Parameter leaves in `named_tensors` order, for gradient readout.
    pub fn param_vars(&self) -> Vec<Var<'t>> {
        let mut out = Vec::new();
        for (w, b) in &self.encoder {
            out.push(*w);
            out.push(*b);
        }
        for (w, b) in &self.proj {
            out.push(*w);
            out.push(*b);
        }
        out.push(self.classifier.0);
        out.push(self.classifier.1);
        out
    }

    /// Encoder features z = MLP(x): ReLU between hidden layers, linear final.
    pub fn embed(&self, x: Var<'t>) -> Result<Var<'t>> {
        if x.cols() != self.input_dim {
            return Err(Error::Shape {
                context: "embed",
                expected: format!("{} input columns", self.input_dim),
                got: format!("{}", x.cols()),
            });
        }
        let mut h = x;
        let last = self.encoder.len() - 1;
        for (i, (w, b)) in self.encoder.iter().enumerate() {
            h = h.matmul(*w).add_row(*b);
            if i < last {
                h = h.relu();
            }
        }
        Ok(h)
    }

    /// Projection h = normalize(W2 relu(W1 z + b1) + b2), rows unit-norm.
    pub fn project(&self, z: Var<'t>) -> Result<Var<'t>> {
        let mut h = z;
        let last = self.proj.len() - 1;
        for (i, (w, b)) in self.proj.iter().enumerate() {
            h = h.matmul(*w).add_row(*b);
            if i < last {
                h = h.relu();
            }
        }
        let pre = h.value();
        for i in 0..pre.rows() {
            let norm: f64 = pre.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::ZeroNormRow { row: i });
            }
        }
        Ok(h.l2norm_rows())
    }

    /// Classifier logits. Plain affine by default; cosine-normalized with a
    /// logit temperature behind the config flag.
    pub fn classify(&self, z: Var<'t>) -> Result<Var<'t>> {
        let (w, b) = self.classifier;
        if self.cosine_head {
            let zv = z.value();
            for i in 0..zv.rows() {
                let norm: f64 = zv.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return Err(Error::ZeroNormRow { row: i });
                }
            }
            let z_hat = z.l2norm_rows();
            let w_hat = w.t().l2norm_rows().t();
            Ok(z_hat.matmul(w_hat).scale(1.0 / self.logit_tau))
        } else {
            Ok(z.matmul(w).add_row(b))
        }
    }
}

/// Eager encoder forward over a plain matrix.
pub fn embed_matrix(params: &ModelParams, x: &Matrix) -> Result<Matrix> {
    let tape = Tape::new();
    let vars = params.vars(&tape);
    let z = vars.embed(tape.leaf(x.clone()))?;
    Ok(z.value())
}

/// Eager softmax predictions over a plain matrix.
pub fn predict_probs(params: &ModelParams, x: &Matrix) -> Result<Matrix> {
    let tape = Tape::new();
    let vars = params.vars(&tape);
    let z = vars.embed(tape.leaf(x.clone()))?;
    let logits = vars.classify(z)?;
    Ok(logits.softmax_rows().value())
}

/// Argmax cluster assignments, ties broken toward the lower class index.
pub fn predict_clusters(params: &ModelParams, x: &Matrix) -> Result<Vec<usize>> {
    let probs = predict_probs(params, x)?;
    Ok((0..probs.rows())
        .map(|i| {
            let row = probs.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect())
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    rows: usize,
    cols: usize,
    /// Element offset into the f64 payload.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    config: EncoderConfig,
    tensors: Vec<TensorMeta>,
}

const CHECKPOINT_FORMAT: &str = "infosculpt-checkpoint-v1";

/// Write parameters to a checkpoint file: 8-byte little-endian header length,
/// JSON header (config + named tensor table), then the f64 little-endian
/// payload in tensor-table order.
pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let mut tensors = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    let mut offset = 0;
    for (name, m) in params.named_tensors() {
        tensors.push(TensorMeta { name, rows: m.rows(), cols: m.cols(), offset });
        offset += m.rows() * m.cols();
        for v in m.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        config: params.config.clone(),
        tensors,
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut file = fs::File::create(path)?;
    file.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    file.write_all(&header_bytes)?;
    file.write_all(&payload)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let mut file = fs::File::open(path)?;
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes)
        .map_err(|_| Error::Checkpoint("truncated header length".into()))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    file.read_exact(&mut header_bytes)
        .map_err(|_| Error::Checkpoint("truncated header".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&header_bytes)?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("unknown format `{}`", header.format)));
    }
    let mut payload = Vec::new();
    file.read_to_end(&mut payload)?;

    let mut params = init(&header.config)?;
    let mut by_name = std::collections::BTreeMap::new();
    for t in &header.tensors {
        let start = t.offset * 8;
        let end = start + t.rows * t.cols * 8;
        if end > payload.len() {
            return Err(Error::Checkpoint(format!("tensor `{}` out of bounds", t.name)));
        }
        let data: Vec<f64> = payload[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        by_name.insert(t.name.clone(), Matrix::new(t.rows, t.cols, data));
    }
    let expected: Vec<String> = params.named_tensors().iter().map(|(n, _)| n.clone()).collect();
    let mut loaded = Vec::new();
    for name in &expected {
        let m = by_name
            .remove(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
        loaded.push(m);
    }
    let mut it = loaded.into_iter();
    params.for_each_tensor_mut(|m| {
        let src = it.next().unwrap();
        assert_eq!(m.shape(), src.shape(), "checkpoint tensor shape mismatch");
        *m = src;
    });
    Ok(params)
}
