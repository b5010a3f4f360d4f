//! Backbone encoders: the prenorm transformer stack and the bidirectional
//! LSTM alternative.

use crate::tensor::{Tape, Tensor, TensorError};

use super::layers::{Dense, LayerNormParams};
use super::lstm::Bilstm;
use super::{ModelError, SeedStream};

/// One layer/head attention matrix kept for diagnostics.
#[derive(Debug, Clone)]
pub struct AttnMap {
    pub layer: usize,
    pub head: usize,
    pub s_len: usize,
    /// Row-stochastic S×S weights, row-major.
    pub weights: Vec<f64>,
}

pub struct MultiHeadAttention {
    pub wq: Dense,
    pub wk: Dense,
    pub wv: Dense,
    pub wo: Dense,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn init(
        e_dim: usize,
        heads: usize,
        std: f64,
        seeds: &mut SeedStream,
    ) -> Result<Self, TensorError> {
        Ok(MultiHeadAttention {
            wq: Dense::init(e_dim, e_dim, true, std, seeds)?,
            wk: Dense::init(e_dim, e_dim, true, std, seeds)?,
            wv: Dense::init(e_dim, e_dim, true, std, seeds)?,
            wo: Dense::init(e_dim, e_dim, true, std, seeds)?,
            heads,
        })
    }

    /// Scaled dot-product attention per head; heads concatenated and
    /// projected. Attention matrices are returned when requested.
    pub fn forward(
        &self,
        tape: &Tape,
        x: &Tensor,
        layer_index: usize,
        collect_maps: bool,
    ) -> Result<(Tensor, Vec<AttnMap>), ModelError> {
        let (s_len, e_dim) = x.dims2("attention input")?;
        if e_dim % self.heads != 0 {
            return Err(ModelError::Config(format!(
                "e_dim {e_dim} not divisible by {} heads",
                self.heads
            )));
        }
        let dh = e_dim / self.heads;
        let q = self.wq.forward(tape, x)?;
        let k = self.wk.forward(tape, x)?;
        let v = self.wv.forward(tape, x)?;
        let mut ctx = Vec::with_capacity(self.heads);
        let mut maps = Vec::new();
        for h in 0..self.heads {
            let qh = tape.slice_cols(&q, h * dh, dh)?;
            let kh = tape.slice_cols(&k, h * dh, dh)?;
            let vh = tape.slice_cols(&v, h * dh, dh)?;
            let scores = tape.scale(
                &tape.matmul(&qh, &tape.transpose(&kh)?)?,
                1.0 / (dh as f64).sqrt(),
            );
            let attn = tape.softmax(&scores, 1)?;
            if collect_maps {
                maps.push(AttnMap {
                    layer: layer_index,
                    head: h,
                    s_len,
                    weights: attn.to_vec(),
                });
            }
            ctx.push(tape.matmul(&attn, &vh)?);
        }
        let joined = tape.concat_cols(&ctx)?;
        Ok((self.wo.forward(tape, &joined)?, maps))
    }

    pub fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.wq.collect(&format!("{prefix}.wq"), out);
        self.wk.collect(&format!("{prefix}.wk"), out);
        self.wv.collect(&format!("{prefix}.wv"), out);
        self.wo.collect(&format!("{prefix}.wo"), out);
    }
}

/// Prenorm transformer layer:
/// x + MHA(LN(x)), then u + FFN(LN(u)) with FFN = FC → ReLU → FC.
pub struct TransformerLayer {
    pub ln1: LayerNormParams,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNormParams,
    pub ff1: Dense,
    pub ff2: Dense,
}

impl TransformerLayer {
    pub fn init(
        e_dim: usize,
        heads: usize,
        f_dim: usize,
        std: f64,
        seeds: &mut SeedStream,
    ) -> Result<Self, TensorError> {
        Ok(TransformerLayer {
            ln1: LayerNormParams::init(e_dim)?,
            attn: MultiHeadAttention::init(e_dim, heads, std, seeds)?,
            ln2: LayerNormParams::init(e_dim)?,
            ff1: Dense::init(e_dim, f_dim, true, std, seeds)?,
            ff2: Dense::init(f_dim, e_dim, true, std, seeds)?,
        })
    }

    pub fn forward(
        &self,
        tape: &Tape,
        x: &Tensor,
        layer_index: usize,
        collect_maps: bool,
    ) -> Result<(Tensor, Vec<AttnMap>), ModelError> {
        let (a, maps) = self
            .attn
            .forward(tape, &self.ln1.forward(tape, x)?, layer_index, collect_maps)?;
        let u = tape.add(x, &a)?;
        let f = self.ff1.forward(tape, &self.ln2.forward(tape, &u)?)?;
        let f = self.ff2.forward(tape, &tape.relu(&f))?;
        Ok((tape.add(&u, &f)?, maps))
    }

    pub fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.ln1.collect(&format!("{prefix}.ln1"), out);
        self.attn.collect(&format!("{prefix}.attn"), out);
        self.ln2.collect(&format!("{prefix}.ln2"), out);
        self.ff1.collect(&format!("{prefix}.ff1"), out);
        self.ff2.collect(&format!("{prefix}.ff2"), out);
    }
}

pub struct BertEncoder {
    pub layers: Vec<TransformerLayer>,
}

impl BertEncoder {
    pub fn init(
        e_dim: usize,
        heads: usize,
        f_dim: usize,
        l_num: usize,
        std: f64,
        seeds: &mut SeedStream,
    ) -> Result<Self, TensorError> {
        let layers = (0..l_num)
            .map(|_| TransformerLayer::init(e_dim, heads, f_dim, std, seeds))
            .collect::<Result<_, _>>()?;
        Ok(BertEncoder { layers })
    }

    pub fn forward(
        &self,
        tape: &Tape,
        x: &Tensor,
        collect_maps: bool,
    ) -> Result<(Tensor, Vec<AttnMap>), ModelError> {
        let mut h = x.clone();
        let mut maps = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let (next, layer_maps) = layer.forward(tape, &h, i, collect_maps)?;
            h = next;
            maps.extend(layer_maps);
        }
        Ok((h, maps))
    }

    pub fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        for (i, layer) in self.layers.iter().enumerate() {
            layer.collect(&format!("{prefix}.layer{i}"), out);
        }
    }
}

pub struct BlstmEncoder {
    pub net: Bilstm,
}

impl BlstmEncoder {
    pub fn init(
        in_dim: usize,
        cells_per_dir: usize,
        std: f64,
        seeds: &mut SeedStream,
    ) -> Result<Self, TensorError> {
        Ok(BlstmEncoder {
            net: Bilstm::init(in_dim, cells_per_dir, std, seeds)?,
        })
    }

    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Result<Tensor, ModelError> {
        self.net.forward(tape, x)
    }

    pub fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.net.collect(prefix, out);
    }
}
