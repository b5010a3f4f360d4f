//! Shared building blocks: dense projections, layer-norm parameters, and
//! the two-layer decoder head.

use crate::tensor::{init_normal, Tape, Tensor, TensorError};

use super::{ModelError, SeedStream};

pub struct Dense {
    pub w: Tensor,
    pub b: Option<Tensor>,
}

impl Dense {
    pub fn init(
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        std: f64,
        seeds: &mut SeedStream,
    ) -> Result<Self, TensorError> {
        Ok(Dense {
            w: init_normal(vec![in_dim, out_dim], 0.0, std, seeds.next())?,
            b: if bias {
                Some(Tensor::param(vec![0.0; out_dim], vec![out_dim])?)
            } else {
                None
            },
        })
    }

    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Result<Tensor, ModelError> {
        let y = tape.matmul(x, &self.w)?;
        Ok(match &self.b {
            Some(b) => tape.add_bias(&y, b)?,
            None => y,
        })
    }

    pub fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.w"), self.w.clone()));
        if let Some(b) = &self.b {
            out.push((format!("{prefix}.b"), b.clone()));
        }
    }
}

pub struct LayerNormParams {
    pub gain: Tensor,
    pub bias: Tensor,
}

impl LayerNormParams {
    pub fn init(dim: usize) -> Result<Self, TensorError> {
        Ok(LayerNormParams {
            gain: Tensor::param(vec![1.0; dim], vec![dim])?,
            bias: Tensor::param(vec![0.0; dim], vec![dim])?,
        })
    }

    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Result<Tensor, ModelError> {
        Ok(tape.layer_norm(x, &self.gain, &self.bias, 1e-6)?)
    }

    pub fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.gain"), self.gain.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

/// Decoder head: FC → ReLU → FC back to stacked feature size.
pub struct Decoder {
    pub d1: Dense,
    pub d2: Dense,
}

impl Decoder {
    pub fn init(
        e_dim: usize,
        hidden: usize,
        d_dim: usize,
        std: f64,
        seeds: &mut SeedStream,
    ) -> Result<Self, TensorError> {
        Ok(Decoder {
            d1: Dense::init(e_dim, hidden, true, std, seeds)?,
            d2: Dense::init(hidden, d_dim, true, std, seeds)?,
        })
    }

    pub fn forward(&self, tape: &Tape, h: &Tensor) -> Result<Tensor, ModelError> {
        let a = self.d1.forward(tape, h)?;
        self.d2.forward(tape, &tape.relu(&a))
    }

    pub fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.d1.collect(&format!("{prefix}.fc1"), out);
        self.d2.collect(&format!("{prefix}.fc2"), out);
    }
}
