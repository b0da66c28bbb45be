//! Shared MLP encoder with an instance projection head and a cluster head.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::par::Execution;
use crate::tape::{Tape, Var};

const CHECKPOINT_MAGIC: &[u8; 4] = b"CCKP";
const CHECKPOINT_VERSION: u32 = 1;

/// Rows per work item when assigning clusters to a large matrix.
const PREDICT_CHUNK: usize = 256;

/// Fully resolved network dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub encoder_widths: Vec<usize>,
    pub instance_dim: usize,
    /// Hidden width of both heads; defaults to the encoder feature width.
    pub head_hidden: Option<usize>,
    pub cluster_count: usize,
    pub init_seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::config("model input dimension must be at least 1"));
        }
        if self.encoder_widths.is_empty() {
            return Err(Error::invalid(
                "model.encoder_widths",
                "must list at least one layer",
            ));
        }
        if let Some(i) = self.encoder_widths.iter().position(|&w| w == 0) {
            return Err(Error::invalid(
                "model.encoder_widths",
                format!("entry {i} must be at least 1"),
            ));
        }
        if self.instance_dim == 0 {
            return Err(Error::invalid("model.instance_dim", "must be at least 1"));
        }
        if self.head_hidden == Some(0) {
            return Err(Error::invalid("model.head_hidden", "must be at least 1"));
        }
        if self.cluster_count < 2 {
            return Err(Error::invalid(
                "model.cluster_count",
                format!("must be at least 2, got {}", self.cluster_count),
            ));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        *self.encoder_widths.last().unwrap_or(&self.input_dim)
    }

    pub fn hidden_dim(&self) -> usize {
        self.head_hidden.unwrap_or_else(|| self.feature_dim())
    }
}

/// One affine layer `x W + b`, with `W` stored `fan_in × fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Layer {
    fn he_normal(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        Layer {
            weight: Matrix::from_fn(fan_in, fan_out, |_, _| normal.sample(rng)),
            bias: Matrix::zeros(1, fan_out),
        }
    }

    fn apply(&self, x: &Matrix) -> Result<Matrix> {
        x.matmul(&self.weight)?.add_row(&self.bias)
    }
}

/// All learnable weights of the encoder and both heads.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub encoder: Vec<Layer>,
    pub instance_head: [Layer; 2],
    pub cluster_head: [Layer; 2],
}

/// Outputs of a forward pass over a batch.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Encoder features.
    pub h: Matrix,
    /// Instance projections, not normalized.
    pub z: Matrix,
    /// Soft cluster assignments; rows sum to 1.
    pub y: Matrix,
}

/// Parameters registered on a tape, in [`ModelParams::tensors`] order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub vars: Vec<Var>,
    encoder_layers: usize,
}

impl BoundParams {
    /// Wraps tape nodes that already hold the parameter values, in
    /// [`ModelParams::tensors`] order.
    pub fn from_vars(vars: Vec<Var>, encoder_layers: usize) -> Self {
        Self {
            vars,
            encoder_layers,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub h: Var,
    pub z: Var,
    pub y: Var,
}

/// Weights are drawn from `N(0, 2 / fan_in)` (He initialization); biases
/// start at zero.
pub fn init_params(config: &ModelConfig) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
    let mut encoder = Vec::with_capacity(config.encoder_widths.len());
    let mut fan_in = config.input_dim;
    for &w in &config.encoder_widths {
        encoder.push(Layer::he_normal(fan_in, w, &mut rng));
        fan_in = w;
    }
    let feature = config.feature_dim();
    let hidden = config.hidden_dim();
    let instance_head = [
        Layer::he_normal(feature, hidden, &mut rng),
        Layer::he_normal(hidden, config.instance_dim, &mut rng),
    ];
    let cluster_head = [
        Layer::he_normal(feature, hidden, &mut rng),
        Layer::he_normal(hidden, config.cluster_count, &mut rng),
    ];
    Ok(ModelParams {
        config: config.clone(),
        encoder,
        instance_head,
        cluster_head,
    })
}

impl ModelParams {
    fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.encoder
            .iter()
            .chain(&self.instance_head)
            .chain(&self.cluster_head)
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer> {
        self.encoder
            .iter_mut()
            .chain(&mut self.instance_head)
            .chain(&mut self.cluster_head)
    }

    /// Every parameter tensor: encoder layers, then the instance head, then
    /// the cluster head, each as weight followed by bias.
    pub fn tensors(&self) -> Vec<&Matrix> {
        self.layers().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn check_input(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.config.input_dim {
            return Err(Error::Dimension {
                op: "forward",
                left: batch.shape(),
                right: (batch.rows(), self.config.input_dim),
            });
        }
        Ok(())
    }

    pub fn encode(&self, batch: &Matrix) -> Result<Matrix> {
        self.check_input(batch)?;
        let mut h = batch.clone();
        for layer in &self.encoder {
            h = layer.apply(&h)?.map(|v| v.max(0.0));
        }
        Ok(h)
    }

    pub fn forward(&self, batch: &Matrix) -> Result<ForwardOutput> {
        let h = self.encode(batch)?;
        let hidden = self.instance_head[0].apply(&h)?.map(|v| v.max(0.0));
        let z = self.instance_head[1].apply(&hidden)?;
        let hidden = self.cluster_head[0].apply(&h)?.map(|v| v.max(0.0));
        let y = self.cluster_head[1].apply(&hidden)?.softmax_rows();
        Ok(ForwardOutput { h, z, y })
    }

    /// Registers every tensor as a tape leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams {
            vars: self
                .tensors()
                .into_iter()
                .map(|t| tape.leaf(t.clone()))
                .collect(),
            encoder_layers: self.encoder.len(),
        }
    }

    /// Recorded forward pass; values equal [`ModelParams::forward`].
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        batch: Var,
    ) -> Result<ForwardVars> {
        self.check_input(tape.value(batch))?;
        let affine = |tape: &mut Tape, x: Var, layer: usize| -> Result<Var> {
            let xw = tape.matmul(x, bound.vars[2 * layer])?;
            tape.add_row(xw, bound.vars[2 * layer + 1])
        };
        let mut h = batch;
        for l in 0..bound.encoder_layers {
            let a = affine(tape, h, l)?;
            h = tape.relu(a);
        }
        let ih = bound.encoder_layers;
        let a = affine(tape, h, ih)?;
        let a = tape.relu(a);
        let z = affine(tape, a, ih + 1)?;
        let ch = ih + 2;
        let a = affine(tape, h, ch)?;
        let a = tape.relu(a);
        let logits = affine(tape, a, ch + 1)?;
        let y = tape.softmax_rows(logits);
        Ok(ForwardVars { h, z, y })
    }

    /// Hard cluster index per row: the argmax of the soft assignment, ties to
    /// the lowest index.
    pub fn predict_assignments(&self, x: &Matrix) -> Result<Vec<usize>> {
        self.predict_assignments_with(x, Execution::default())
    }

    pub fn predict_assignments_with(&self, x: &Matrix, exec: Execution) -> Result<Vec<usize>> {
        self.check_input(x)?;
        let chunks = x.rows().div_ceil(PREDICT_CHUNK);
        let parts = exec.map(chunks, |i| {
            let start = i * PREDICT_CHUNK;
            let count = PREDICT_CHUNK.min(x.rows() - start);
            self.forward(&x.row_block(start, count))
                .map(|o| o.y.argmax_rows())
        });
        let mut out = Vec::with_capacity(x.rows());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    /// Instance projections for every row, processed in chunks.
    pub fn instance_features(&self, x: &Matrix, exec: Execution) -> Result<Matrix> {
        self.check_input(x)?;
        let chunks = x.rows().div_ceil(PREDICT_CHUNK);
        let parts = exec.map(chunks, |i| {
            let start = i * PREDICT_CHUNK;
            let count = PREDICT_CHUNK.min(x.rows() - start);
            self.forward(&x.row_block(start, count)).map(|o| o.z)
        });
        let mut out = Matrix::zeros(0, self.config.instance_dim);
        for p in parts {
            out = out.concat_rows(&p?)?;
        }
        Ok(out)
    }

    /// Binary checkpoint: magic, version, JSON-encoded [`ModelConfig`], then
    /// every tensor as `(rows, cols, values)`, all little-endian.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let header =
            serde_json::to_vec(&self.config).map_err(|e| Error::contract(e.to_string()))?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        let tensors = self.tensors();
        w.write_all(&(tensors.len() as u32).to_le_bytes())?;
        for t in tensors {
            w.write_all(&(t.rows() as u64).to_le_bytes())?;
            w.write_all(&(t.cols() as u64).to_le_bytes())?;
            for v in t.as_slice() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf)
            .expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_checkpoint<R: Read>(r: R) -> Result<ModelParams> {
        let mut reader = CountingReader {
            inner: r,
            offset: 0,
        };
        let magic: [u8; 4] = reader.array()?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(format_err(0, "bad checkpoint magic"));
        }
        let version = u32::from_le_bytes(reader.array()?);
        if version != CHECKPOINT_VERSION {
            return Err(format_err(
                4,
                format!("unsupported checkpoint version {version}"),
            ));
        }
        let len = u32::from_le_bytes(reader.array()?) as usize;
        let start = reader.offset;
        let mut header = vec![0u8; len];
        reader.fill(&mut header)?;
        let config: ModelConfig = serde_json::from_slice(&header)
            .map_err(|e| format_err(start, format!("bad header: {e}")))?;
        config
            .validate()
            .map_err(|e| format_err(start, format!("bad header: {e}")))?;

        let mut params = init_params(&config)?;
        let count_at = reader.offset;
        let count = u32::from_le_bytes(reader.array()?) as usize;
        let expected = params.tensors().len();
        if count != expected {
            return Err(format_err(
                count_at,
                format!("expected {expected} tensors, found {count}"),
            ));
        }
        for t in params.tensors_mut() {
            let at = reader.offset;
            let rows = u64::from_le_bytes(reader.array()?) as usize;
            let cols = u64::from_le_bytes(reader.array()?) as usize;
            if (rows, cols) != t.shape() {
                return Err(format_err(
                    at,
                    format!(
                        "tensor shape {rows}x{cols} does not match expected {:?}",
                        t.shape()
                    ),
                ));
            }
            for v in t.as_mut_slice() {
                *v = f64::from_le_bytes(reader.array()?);
            }
        }
        Ok(params)
    }
}

fn format_err(offset: u64, message: impl Into<String>) -> Error {
    Error::Format {
        format: "checkpoint",
        offset,
        message: message.into(),
    }
}

struct CountingReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> CountingReader<R> {
    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                format_err(self.offset, "unexpected end of file")
            } else {
                Error::Io(e)
            }
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.fill(&mut buf)?;
        Ok(buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn config() -> ModelConfig {
        ModelConfig {
            input_dim: 5,
            encoder_widths: vec![7, 6],
            instance_dim: 4,
            head_hidden: None,
            cluster_count: 3,
            init_seed: 11,
        }
    }

    fn batch(rows: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, 5, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = init_params(&config()).unwrap();
        assert_eq!(a, init_params(&config()).unwrap());
        assert!(a
            .layers()
            .all(|l| l.bias.as_slice().iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn init_variance_matches_he_scheme() {
        let cfg = ModelConfig {
            input_dim: 100,
            encoder_widths: vec![100],
            instance_dim: 100,
            head_hidden: Some(100),
            cluster_count: 100,
            init_seed: 3,
        };
        let p = init_params(&cfg).unwrap();
        for layer in p.layers() {
            let w = layer.weight.as_slice();
            let n = w.len() as f64;
            let mean = w.iter().sum::<f64>() / n;
            let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let target = 2.0 / layer.weight.rows() as f64;
            assert!((var / target - 1.0).abs() < 0.2, "{var} vs {target}");
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = config();
        c.cluster_count = 1;
        assert!(matches!(init_params(&c), Err(Error::InvalidField { .. })));
        let mut c = config();
        c.encoder_widths = vec![3, 0];
        assert!(matches!(init_params(&c), Err(Error::InvalidField { .. })));
    }

    #[test]
    fn forward_shapes_and_softmax() {
        let p = init_params(&config()).unwrap();
        let out = p.forward(&batch(9, 1)).unwrap();
        assert_eq!(out.h.shape(), (9, 6));
        assert_eq!(out.z.shape(), (9, 4));
        assert_eq!(out.y.shape(), (9, 3));
        for r in 0..9 {
            assert!((out.y.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(out.y.row(r).iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn zero_weights_give_uniform_assignments() {
        let mut p = init_params(&config()).unwrap();
        for t in p.tensors_mut() {
            t.as_mut_slice().fill(0.0);
        }
        let y = p.forward(&batch(4, 2)).unwrap().y;
        assert!(y.as_slice().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert_eq!(p.predict_assignments(&batch(4, 2)).unwrap(), vec![0; 4]);
    }

    #[test]
    fn forward_is_row_separable() {
        let p = init_params(&config()).unwrap();
        let x = batch(4, 3);
        let full = p.forward(&x).unwrap();
        for r in 0..4 {
            let single = p.forward(&x.row_block(r, 1)).unwrap();
            assert_eq!(single.y.row(0), full.y.row(r));
            assert_eq!(single.z.row(0), full.z.row(r));
        }
    }

    #[test]
    fn tape_forward_matches_direct() {
        let p = init_params(&config()).unwrap();
        let x = batch(6, 4);
        let direct = p.forward(&x).unwrap();
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let xv = tape.leaf(x);
        let vars = p.forward_on_tape(&mut tape, &bound, xv).unwrap();
        assert!(tape.value(vars.z).max_abs_diff(&direct.z) < 1e-14);
        assert!(tape.value(vars.y).max_abs_diff(&direct.y) < 1e-14);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let p = init_params(&config()).unwrap();
        assert!(matches!(
            p.forward(&Matrix::zeros(2, 4)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn assignments_independent_of_chunking() {
        let p = init_params(&config()).unwrap();
        let x = batch(700, 5);
        let all = p
            .predict_assignments_with(&x, Execution::Sequential)
            .unwrap();
        let par = p.predict_assignments_with(&x, Execution::Parallel).unwrap();
        assert_eq!(all, par);
        let mut pieces = Vec::new();
        for start in (0..700).step_by(33) {
            let n = 33.min(700 - start);
            pieces.extend(p.predict_assignments(&x.row_block(start, n)).unwrap());
        }
        assert_eq!(all, pieces);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let p = init_params(&config()).unwrap();
        let bytes = p.checkpoint_bytes();
        let back = ModelParams::read_checkpoint(bytes.as_slice()).unwrap();
        assert_eq!(p, back);
        assert_eq!(bytes, back.checkpoint_bytes());
    }

    #[test]
    fn truncated_checkpoint_reports_offset() {
        let bytes = init_params(&config()).unwrap().checkpoint_bytes();
        let cut = &bytes[..bytes.len() - 3];
        match ModelParams::read_checkpoint(cut) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset as usize, bytes.len() - 8),
            other => panic!("unexpected {other:?}"),
        }
    }
}
