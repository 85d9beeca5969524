//! The tiny feed-forward LM, its exact backward pass, the network-free
//! logit table, and checkpoint I/O.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::prob::{LogitVector, ProbVector};

/// Checkpoint magic bytes.
const CHECKPOINT_MAGIC: &[u8; 4] = b"TLM1";

/// Shape of a [`TinyLm`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TinyLmDims {
    pub vocab_size: usize,
    pub context_length: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

impl TinyLmDims {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2
            || self.context_length == 0
            || self.embed_dim == 0
            || self.hidden_dim == 0
        {
            return Err(Error::InvalidParameter(format!(
                "bad model dims: V={} C={} E={} H={}",
                self.vocab_size, self.context_length, self.embed_dim, self.hidden_dim
            )));
        }
        Ok(())
    }

    fn n_params(&self) -> usize {
        let (v, c, e, h) = (
            self.vocab_size,
            self.context_length,
            self.embed_dim,
            self.hidden_dim,
        );
        v * e + c * e * h + h + h * v + v
    }
}

/// Feed-forward n-gram language model:
/// `logits = W_out * tanh(W_h * concat(embeddings) + b_h) + b_out`.
///
/// Parameters live in one flat vector in declaration order — embedding
/// table (V x E), hidden weights ((C·E) x H), hidden bias, output weights
/// (H x V), output bias — which is also the checkpoint layout.
#[derive(Debug, Clone)]
pub struct TinyLm {
    dims: TinyLmDims,
    params: Vec<f64>,
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Concatenated context embeddings, length C·E.
    input: Vec<f64>,
    /// tanh hidden activations, length H.
    hidden: Vec<f64>,
}

impl TinyLm {
    pub fn zeros(dims: TinyLmDims) -> Result<Self> {
        dims.validate()?;
        let n = dims.n_params();
        Ok(Self {
            dims,
            params: vec![0.0; n],
        })
    }

    /// Uniform Xavier-style init for the weight matrices, +-0.1 for the
    /// embedding table, zero biases.
    pub fn random(dims: TinyLmDims, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (v, c, e, h) = (
            dims.vocab_size,
            dims.context_length,
            dims.embed_dim,
            dims.hidden_dim,
        );
        let (emb, rest) = model.params.split_at_mut(v * e);
        for p in emb {
            *p = rng.random_range(-0.1..0.1);
        }
        let (w_h, rest) = rest.split_at_mut(c * e * h);
        let s = (6.0 / (c * e + h) as f64).sqrt();
        for p in w_h {
            *p = rng.random_range(-s..s);
        }
        let (_b_h, rest) = rest.split_at_mut(h);
        let (w_out, _b_out) = rest.split_at_mut(h * v);
        let s = (6.0 / (h + v) as f64).sqrt();
        for p in w_out {
            *p = rng.random_range(-s..s);
        }
        Ok(model)
    }

    pub fn dims(&self) -> TinyLmDims {
        self.dims
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn offsets(&self) -> (usize, usize, usize, usize) {
        let d = self.dims;
        let emb_end = d.vocab_size * d.embed_dim;
        let w_h_end = emb_end + d.context_length * d.embed_dim * d.hidden_dim;
        let b_h_end = w_h_end + d.hidden_dim;
        let w_out_end = b_h_end + d.hidden_dim * d.vocab_size;
        (emb_end, w_h_end, b_h_end, w_out_end)
    }

    fn check_context(&self, context: &[usize]) -> Result<()> {
        if context.len() != self.dims.context_length {
            return Err(Error::InvalidInput(format!(
                "context length {} does not match model context length {}",
                context.len(),
                self.dims.context_length
            )));
        }
        if let Some(&id) = context.iter().find(|&&id| id >= self.dims.vocab_size) {
            return Err(Error::InvalidInput(format!(
                "token id {id} out of range for vocabulary {}",
                self.dims.vocab_size
            )));
        }
        Ok(())
    }

    pub fn forward(&self, context: &[usize]) -> Result<LogitVector> {
        Ok(self.forward_cached(context)?.0)
    }

    pub fn forward_cached(&self, context: &[usize]) -> Result<(LogitVector, ForwardCache)> {
        self.check_context(context)?;
        let d = self.dims;
        let (emb_end, w_h_end, b_h_end, w_out_end) = self.offsets();
        let emb = &self.params[..emb_end];
        let w_h = &self.params[emb_end..w_h_end];
        let b_h = &self.params[w_h_end..b_h_end];
        let w_out = &self.params[b_h_end..w_out_end];
        let b_out = &self.params[w_out_end..];

        let mut input = vec![0.0; d.context_length * d.embed_dim];
        for (slot, &id) in context.iter().enumerate() {
            input[slot * d.embed_dim..(slot + 1) * d.embed_dim]
                .copy_from_slice(&emb[id * d.embed_dim..(id + 1) * d.embed_dim]);
        }

        let mut hidden = b_h.to_vec();
        for (i, &x) in input.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let row = &w_h[i * d.hidden_dim..(i + 1) * d.hidden_dim];
            for (acc, &w) in hidden.iter_mut().zip(row) {
                *acc += x * w;
            }
        }
        for a in &mut hidden {
            *a = a.tanh();
        }

        let mut logits = b_out.to_vec();
        for (j, &a) in hidden.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let row = &w_out[j * d.vocab_size..(j + 1) * d.vocab_size];
            for (acc, &w) in logits.iter_mut().zip(row) {
                *acc += a * w;
            }
        }
        Ok((LogitVector::new(logits)?, ForwardCache { input, hidden }))
    }

    /// Gradients of `<upstream, logits>` with respect to every parameter,
    /// as a fresh flat vector in parameter order.
    pub fn backward(&self, context: &[usize], upstream: &[f64]) -> Result<Vec<f64>> {
        let (_, cache) = self.forward_cached(context)?;
        let mut grads = vec![0.0; self.params.len()];
        self.backward_accumulate(context, &cache, upstream, &mut grads)?;
        Ok(grads)
    }

    /// Adds the gradients of `<upstream, logits>` into `grads`.
    pub fn backward_accumulate(
        &self,
        context: &[usize],
        cache: &ForwardCache,
        upstream: &[f64],
        grads: &mut [f64],
    ) -> Result<()> {
        self.check_context(context)?;
        let d = self.dims;
        if upstream.len() != d.vocab_size {
            return Err(Error::InvalidInput(format!(
                "upstream length {} does not match vocabulary {}",
                upstream.len(),
                d.vocab_size
            )));
        }
        if grads.len() != self.params.len() {
            return Err(Error::InvalidInput(format!(
                "gradient buffer length {} does not match parameter count {}",
                grads.len(),
                self.params.len()
            )));
        }
        if let Some(&bad) = upstream.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite upstream gradient {bad}"
            )));
        }
        let (emb_end, w_h_end, b_h_end, w_out_end) = self.offsets();
        let w_h = &self.params[emb_end..w_h_end];
        let w_out = &self.params[b_h_end..w_out_end];

        // output layer
        let mut d_hidden = vec![0.0; d.hidden_dim];
        {
            let (g_w_out, g_rest) = grads[b_h_end..].split_at_mut(d.hidden_dim * d.vocab_size);
            for (g, &u) in g_rest.iter_mut().zip(upstream) {
                *g += u;
            }
            for (j, &a) in cache.hidden.iter().enumerate() {
                let w_row = &w_out[j * d.vocab_size..(j + 1) * d.vocab_size];
                let g_row = &mut g_w_out[j * d.vocab_size..(j + 1) * d.vocab_size];
                let mut acc = 0.0;
                for ((g, &w), &u) in g_row.iter_mut().zip(w_row).zip(upstream) {
                    *g += a * u;
                    acc += w * u;
                }
                d_hidden[j] = acc;
            }
        }

        // through tanh
        for (dh, &a) in d_hidden.iter_mut().zip(&cache.hidden) {
            *dh *= 1.0 - a * a;
        }

        // hidden layer
        let mut d_input = vec![0.0; d.context_length * d.embed_dim];
        {
            let (g_w_h, g_b_h) = grads[emb_end..b_h_end].split_at_mut(w_h_end - emb_end);
            for (g, &dp) in g_b_h.iter_mut().zip(&d_hidden) {
                *g += dp;
            }
            for (i, &x) in cache.input.iter().enumerate() {
                let w_row = &w_h[i * d.hidden_dim..(i + 1) * d.hidden_dim];
                let g_row = &mut g_w_h[i * d.hidden_dim..(i + 1) * d.hidden_dim];
                let mut acc = 0.0;
                for ((g, &w), &dp) in g_row.iter_mut().zip(w_row).zip(&d_hidden) {
                    *g += x * dp;
                    acc += w * dp;
                }
                d_input[i] = acc;
            }
        }

        // embedding table: repeated tokens accumulate
        let g_emb = &mut grads[..emb_end];
        for (slot, &id) in context.iter().enumerate() {
            let src = &d_input[slot * d.embed_dim..(slot + 1) * d.embed_dim];
            let dst = &mut g_emb[id * d.embed_dim..(id + 1) * d.embed_dim];
            for (g, &dx) in dst.iter_mut().zip(src) {
                *g += dx;
            }
        }
        Ok(())
    }

    /// Writes magic, dims as little-endian u32, then the flat parameter
    /// vector as little-endian f64.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(CHECKPOINT_MAGIC)?;
        for dim in [
            self.dims.vocab_size,
            self.dims.context_length,
            self.dims.embed_dim,
            self.dims.hidden_dim,
        ] {
            out.write_all(&(dim as u32).to_le_bytes())?;
        }
        for &p in &self.params {
            out.write_all(&p.to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut input = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!(
                "bad checkpoint magic {magic:?}, expected {CHECKPOINT_MAGIC:?}"
            )));
        }
        let mut buf4 = [0u8; 4];
        let mut read_dim = || -> Result<usize> {
            input.read_exact(&mut buf4)?;
            Ok(u32::from_le_bytes(buf4) as usize)
        };
        let dims = TinyLmDims {
            vocab_size: read_dim()?,
            context_length: read_dim()?,
            embed_dim: read_dim()?,
            hidden_dim: read_dim()?,
        };
        let mut model = Self::zeros(dims)?;
        let mut buf8 = [0u8; 8];
        for p in &mut model.params {
            input.read_exact(&mut buf8)?;
            *p = f64::from_le_bytes(buf8);
        }
        if let Some(&bad) = model.params.iter().find(|v| !v.is_finite()) {
            return Err(Error::Format(format!(
                "checkpoint holds non-finite parameter {bad}"
            )));
        }
        Ok(model)
    }
}

/// A network-free student: one trainable logit row per context id. Row
/// index is the context id.
#[derive(Debug, Clone)]
pub struct LogitTable {
    n_contexts: usize,
    vocab_size: usize,
    logits: Vec<f64>,
}

impl LogitTable {
    pub fn zeros(n_contexts: usize, vocab_size: usize) -> Result<Self> {
        if n_contexts == 0 || vocab_size < 2 {
            return Err(Error::InvalidParameter(format!(
                "bad table shape: {n_contexts} x {vocab_size}"
            )));
        }
        Ok(Self {
            n_contexts,
            vocab_size,
            logits: vec![0.0; n_contexts * vocab_size],
        })
    }

    /// Small random logits, breaking the all-uniform tie at start.
    pub fn random(n_contexts: usize, vocab_size: usize, scale: f64, seed: u64) -> Result<Self> {
        let mut table = Self::zeros(n_contexts, vocab_size)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut table.logits {
            *p = rng.random_range(-scale..scale);
        }
        Ok(table)
    }

    /// A fixed multi-modal teacher: each row puts most of its mass on a
    /// few peak tokens (drawn in the 0.15-0.35 band, jointly scaled to a
    /// total peak mass of 0.75-0.92) and spreads the rest thinly.
    pub fn synthetic_multimodal(
        n_contexts: usize,
        vocab_size: usize,
        peaks: std::ops::RangeInclusive<usize>,
        seed: u64,
    ) -> Result<Self> {
        let mut table = Self::zeros(n_contexts, vocab_size)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for row in 0..n_contexts {
            let n_peaks = rng.random_range(peaks.clone());
            let mut ids: Vec<usize> = (0..vocab_size).collect();
            ids.shuffle(&mut rng);
            let peak_ids = &ids[..n_peaks];

            let raw: Vec<f64> = (0..n_peaks).map(|_| rng.random_range(0.15..0.35)).collect();
            let total_target = rng.random_range(0.75..0.92);
            let scale = total_target / raw.iter().sum::<f64>();

            let mut probs = vec![0.0; vocab_size];
            for (&id, &w) in peak_ids.iter().zip(&raw) {
                probs[id] = w * scale;
            }
            let tail_mass = 1.0 - total_target;
            let tail_raw: Vec<f64> = (0..vocab_size - n_peaks)
                .map(|_| rng.random_range(0.2..1.0))
                .collect();
            let tail_scale = tail_mass / tail_raw.iter().sum::<f64>();
            for (&id, &w) in ids[n_peaks..].iter().zip(&tail_raw) {
                probs[id] = w * tail_scale;
            }
            for (slot, &p) in probs.iter().enumerate() {
                table.logits[row * vocab_size + slot] = p.ln();
            }
        }
        Ok(table)
    }

    pub fn n_contexts(&self) -> usize {
        self.n_contexts
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn row(&self, context: usize) -> &[f64] {
        &self.logits[context * self.vocab_size..(context + 1) * self.vocab_size]
    }

    pub fn row_logits(&self, context: usize) -> Result<LogitVector> {
        if context >= self.n_contexts {
            return Err(Error::InvalidInput(format!(
                "context id {context} out of range for table of {}",
                self.n_contexts
            )));
        }
        LogitVector::new(self.row(context).to_vec())
    }

    pub fn row_probs(&self, context: usize) -> Result<ProbVector> {
        crate::prob::softmax_with_temperature(&self.row_logits(context)?, 1.0)
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn logits_flat(&self) -> &[f64] {
        &self.logits
    }
}
