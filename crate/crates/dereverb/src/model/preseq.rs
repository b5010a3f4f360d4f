//! Pre-sequence networks: the five front ends that map stacked frames to
//! the shared hidden width before the backbone encoder.

use crate::tensor::{init_normal, Tape, Tensor, TensorError};

use super::layers::Dense;
use super::lstm::Bilstm;
use super::{ModelError, SeedStream};

/// Fixed 2-D conv geometry: K kernels of (11, 10), stride (1, 5), pad (5, 0).
/// Time length is preserved; the frequency axis of width d_dim shrinks to
/// (d_dim − 10)/5 + 1 (47 for 240).
pub const CNN2D_KERNEL: (usize, usize) = (11, 10);
pub const CNN2D_STRIDE: (usize, usize) = (1, 5);
pub const CNN2D_PAD: (usize, usize) = (5, 0);
/// 1-D conv geometry: kernel 11, stride 1, pad 5 (length preserving).
pub const CNN1D_KERNEL: usize = 11;

pub fn cnn2d_freq_out(d_dim: usize) -> usize {
    (d_dim - CNN2D_KERNEL.1) / CNN2D_STRIDE.1 + 1
}

struct ConvTrunk {
    kernels: Tensor, // [K, 1, 11, 10]
    bias: Tensor,    // [K]
}

impl ConvTrunk {
    fn init(kernels: usize, std: f64, seeds: &mut SeedStream) -> Result<Self, TensorError> {
        Ok(ConvTrunk {
            kernels: init_normal(
                vec![kernels, 1, CNN2D_KERNEL.0, CNN2D_KERNEL.1],
                0.0,
                std,
                seeds.next(),
            )?,
            bias: Tensor::param(vec![0.0; kernels], vec![kernels])?,
        })
    }

    /// S×d_dim → S×(K·freq_out), ReLU after the convolution.
    fn forward(&self, tape: &Tape, x: &Tensor) -> Result<Tensor, ModelError> {
        let (s_len, d_dim) = x.dims2("cnn2d input")?;
        let map = tape.reshape(x, vec![1, s_len, d_dim])?;
        let conv = tape.conv2d(&map, &self.kernels, Some(&self.bias), CNN2D_STRIDE, CNN2D_PAD)?;
        let act = tape.relu(&conv);
        Ok(tape.map_to_sequence(&act)?)
    }

    fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.kernels"), self.kernels.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

pub enum Preseq {
    /// Linear projection d_dim → p_dim, no bias.
    Def { dense: Dense },
    /// 2-D conv over the time×frequency map, flattened and projected.
    Cnn2d { trunk: ConvTrunkBox, dense: Dense },
    /// Frequency-wise 1-D convolution across time, no bias.
    Cnn1d { kernels: Tensor },
    /// Bidirectional recurrence, p_dim/2 cells per direction.
    Lstm { net: Bilstm },
    /// 2-D conv trunk into a bidirectional recurrence.
    Cl {
        trunk: ConvTrunkBox,
        dense: Dense,
        net: Bilstm,
    },
}

// Keeps ConvTrunk private while letting the enum own it.
pub struct ConvTrunkBox(ConvTrunk);

impl Preseq {
    pub fn init(
        kind: super::PreseqKind,
        d_dim: usize,
        p_dim: usize,
        cnn_kernels: usize,
        std: f64,
        seeds: &mut SeedStream,
    ) -> Result<Self, ModelError> {
        use super::PreseqKind::*;
        Ok(match kind {
            Def => Preseq::Def {
                dense: Dense::init(d_dim, p_dim, false, std, seeds)?,
            },
            Cnn2d => Preseq::Cnn2d {
                trunk: ConvTrunkBox(ConvTrunk::init(cnn_kernels, std, seeds)?),
                dense: Dense::init(cnn_kernels * cnn2d_freq_out(d_dim), p_dim, true, std, seeds)?,
            },
            Cnn1d => Preseq::Cnn1d {
                kernels: init_normal(vec![p_dim, d_dim, CNN1D_KERNEL], 0.0, std, seeds.next())?,
            },
            Lstm => Preseq::Lstm {
                net: Bilstm::init(d_dim, p_dim / 2, std, seeds)?,
            },
            Cl => Preseq::Cl {
                trunk: ConvTrunkBox(ConvTrunk::init(cnn_kernels, std, seeds)?),
                dense: Dense::init(
                    cnn_kernels * cnn2d_freq_out(d_dim),
                    p_dim / 2,
                    true,
                    std,
                    seeds,
                )?,
                net: Bilstm::init(p_dim / 2, p_dim / 2, std, seeds)?,
            },
        })
    }

    /// S×d_dim → S×p_dim for every variant.
    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Result<Tensor, ModelError> {
        match self {
            Preseq::Def { dense } => dense.forward(tape, x),
            Preseq::Cnn2d { trunk, dense } => {
                let feats = trunk.0.forward(tape, x)?;
                dense.forward(tape, &feats)
            }
            Preseq::Cnn1d { kernels } => {
                let channels = tape.transpose(x)?;
                let conv = tape.conv1d(&channels, kernels, None, 1, CNN1D_KERNEL / 2)?;
                Ok(tape.transpose(&conv)?)
            }
            Preseq::Lstm { net } => net.forward(tape, x),
            Preseq::Cl { trunk, dense, net } => {
                let feats = trunk.0.forward(tape, x)?;
                let proj = dense.forward(tape, &feats)?;
                net.forward(tape, &proj)
            }
        }
    }

    /// True when sinusoidal positions must be added before a transformer
    /// encoder; the recurrent variants provide order themselves.
    pub fn needs_positional_encoding(&self) -> bool {
        matches!(
            self,
            Preseq::Def { .. } | Preseq::Cnn2d { .. } | Preseq::Cnn1d { .. }
        )
    }

    pub fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        match self {
            Preseq::Def { dense } => dense.collect(&format!("{prefix}.proj"), out),
            Preseq::Cnn2d { trunk, dense } => {
                trunk.0.collect(&format!("{prefix}.conv"), out);
                dense.collect(&format!("{prefix}.proj"), out);
            }
            Preseq::Cnn1d { kernels } => {
                out.push((format!("{prefix}.kernels"), kernels.clone()));
            }
            Preseq::Lstm { net } => net.collect(&format!("{prefix}.lstm"), out),
            Preseq::Cl { trunk, dense, net } => {
                trunk.0.collect(&format!("{prefix}.conv"), out);
                dense.collect(&format!("{prefix}.proj"), out);
                net.collect(&format!("{prefix}.lstm"), out);
            }
        }
    }
}
