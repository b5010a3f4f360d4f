//! The network zoo: frame stacking, five pre-sequence front ends, a prenorm
//! transformer encoder and a BLSTM encoder, and the shared decoder head.

use thiserror::Error;

use crate::dsp::LogMelSpectrogram;
use crate::tensor::{Tape, Tensor, TensorError};

pub mod encoder;
mod layers;
mod lstm;
mod preseq;

pub use encoder::AttnMap;
pub use preseq::cnn2d_freq_out;

use encoder::{BertEncoder, BlstmEncoder};
use layers::Decoder;
use preseq::Preseq;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{0}")]
    Contract(String),
}

/// Per-tensor RNG seeds derived from one model seed, in registration order.
pub struct SeedStream {
    base: u64,
    counter: u64,
}

impl SeedStream {
    pub fn new(base: u64) -> Self {
        SeedStream { base, counter: 0 }
    }

    pub fn next(&mut self) -> u64 {
        self.counter += 1;
        crate::seed::mix(self.base, 11, self.counter)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PreseqKind {
    Def,
    Cnn2d,
    Cnn1d,
    Lstm,
    Cl,
}

impl PreseqKind {
    pub const ALL: [PreseqKind; 5] = [
        PreseqKind::Def,
        PreseqKind::Cnn2d,
        PreseqKind::Cnn1d,
        PreseqKind::Lstm,
        PreseqKind::Cl,
    ];
}

impl std::str::FromStr for PreseqKind {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "def" => Ok(PreseqKind::Def),
            "cnn2d" => Ok(PreseqKind::Cnn2d),
            "cnn1d" => Ok(PreseqKind::Cnn1d),
            "lstm" => Ok(PreseqKind::Lstm),
            "cl" => Ok(PreseqKind::Cl),
            other => Err(ModelError::Config(format!(
                "unknown preseq '{other}' (def|cnn2d|cnn1d|lstm|cl)"
            ))),
        }
    }
}

impl std::fmt::Display for PreseqKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            PreseqKind::Def => "def",
            PreseqKind::Cnn2d => "cnn2d",
            PreseqKind::Cnn1d => "cnn1d",
            PreseqKind::Lstm => "lstm",
            PreseqKind::Cl => "cl",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Bert,
    Blstm,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 2] = [EncoderKind::Bert, EncoderKind::Blstm];
}

impl std::str::FromStr for EncoderKind {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bert" => Ok(EncoderKind::Bert),
            "blstm" => Ok(EncoderKind::Blstm),
            other => Err(ModelError::Config(format!(
                "unknown encoder '{other}' (bert|blstm)"
            ))),
        }
    }
}

impl std::fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EncoderKind::Bert => write!(f, "bert"),
            EncoderKind::Blstm => write!(f, "blstm"),
        }
    }
}

/// Architecture hyperparameters for one preseq × encoder combination.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub preseq: PreseqKind,
    pub encoder: EncoderKind,
    /// Raw feature bins per frame.
    pub r_dim: usize,
    /// Adjacent frames stacked along the feature axis.
    pub d_rate: usize,
    /// Shared pre-sequence output width.
    pub p_dim: usize,
    /// Attention heads (transformer encoder).
    pub a_num: usize,
    /// Feed-forward width (transformer encoder).
    pub f_dim: usize,
    /// Transformer layers.
    pub l_num: usize,
    /// Cells per direction (BLSTM encoder).
    pub c_num: usize,
    pub decoder_hidden: usize,
    /// Kernels in the 2-D conv front ends.
    pub cnn_kernels: usize,
    pub init_std: f64,
    pub seed: u64,
}

impl ModelConfig {
    /// The full-size configuration.
    pub fn full(preseq: PreseqKind, encoder: EncoderKind, seed: u64) -> Self {
        ModelConfig {
            preseq,
            encoder,
            r_dim: 80,
            d_rate: 3,
            p_dim: 768,
            a_num: 16,
            f_dim: 2048,
            l_num: 3,
            c_num: 1024,
            decoder_hidden: 256,
            cnn_kernels: 64,
            init_std: 0.02,
            seed,
        }
    }

    /// Desk-scale configuration for smoke tests and quick experiments.
    pub fn reduced(preseq: PreseqKind, encoder: EncoderKind, seed: u64) -> Self {
        ModelConfig {
            preseq,
            encoder,
            r_dim: 80,
            d_rate: 3,
            p_dim: 128,
            a_num: 2,
            f_dim: 256,
            l_num: 1,
            c_num: 256,
            decoder_hidden: 128,
            cnn_kernels: 16,
            init_std: 0.05,
            seed,
        }
    }

    pub fn d_dim(&self) -> usize {
        self.r_dim * self.d_rate
    }

    /// Encoder output width feeding the decoder.
    pub fn e_dim(&self) -> usize {
        match self.encoder {
            EncoderKind::Bert => self.p_dim,
            EncoderKind::Blstm => 2 * self.c_num,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.r_dim == 0 || self.d_rate == 0 || self.p_dim == 0 {
            return Err(ModelError::Config("zero-sized dimension".into()));
        }
        if self.encoder == EncoderKind::Bert && self.p_dim % self.a_num != 0 {
            return Err(ModelError::Config(format!(
                "p_dim {} must divide into {} heads",
                self.p_dim, self.a_num
            )));
        }
        if self.p_dim % 2 != 0 {
            return Err(ModelError::Config(format!(
                "p_dim {} must be even (positional encoding pairs sin/cos and \
                 recurrent variants split directions)",
                self.p_dim
            )));
        }
        if self.d_dim() < preseq::CNN2D_KERNEL.1 {
            return Err(ModelError::Config(format!(
                "d_dim {} smaller than conv kernel width",
                self.d_dim()
            )));
        }
        Ok(())
    }
}

/// S×d_dim downsampled sequence produced by stacking adjacent frames.
#[derive(Debug, Clone)]
pub struct StackedFrames {
    /// Row-major S×d_dim.
    pub data: Vec<f64>,
    pub s_len: usize,
    pub d_dim: usize,
    /// Frame count before stacking.
    pub orig_len: usize,
}

/// Concatenate each group of `d_rate` consecutive frames along the feature
/// axis; the final partial group repeats the last frame.
pub fn stack_frames(m: &LogMelSpectrogram, d_rate: usize) -> StackedFrames {
    let t_len = m.frames;
    let r_dim = m.n_mels;
    let s_len = t_len.div_ceil(d_rate);
    let d_dim = r_dim * d_rate;
    let mut data = vec![0.0; s_len * d_dim];
    for s in 0..s_len {
        for k in 0..d_rate {
            let t = (s * d_rate + k).min(t_len - 1);
            data[s * d_dim + k * r_dim..s * d_dim + (k + 1) * r_dim]
                .copy_from_slice(m.frame(t));
        }
    }
    StackedFrames {
        data,
        s_len,
        d_dim,
        orig_len: t_len,
    }
}

/// Inverse of [`stack_frames`]: recover the first `orig_len` raw frames.
pub fn unstack_frames(stacked: &[f64], s_len: usize, d_dim: usize, d_rate: usize, orig_len: usize) -> Vec<f64> {
    let r_dim = d_dim / d_rate;
    let mut out = vec![0.0; orig_len * r_dim];
    for t in 0..orig_len {
        let s = t / d_rate;
        let k = t % d_rate;
        debug_assert!(s < s_len);
        out[t * r_dim..(t + 1) * r_dim]
            .copy_from_slice(&stacked[s * d_dim + k * r_dim..s * d_dim + (k + 1) * r_dim]);
    }
    out
}

/// Sinusoidal positions: PE(pos, 2i) = sin(pos/10000^(2i/p_dim)) and
/// PE(pos, 2i+1) the matching cosine.
pub fn positional_encoding(s_len: usize, p_dim: usize) -> Result<Tensor, ModelError> {
    if p_dim % 2 != 0 {
        return Err(ModelError::Config(format!(
            "positional encoding needs even p_dim, got {p_dim}"
        )));
    }
    let mut data = vec![0.0; s_len * p_dim];
    for pos in 0..s_len {
        for i in 0..p_dim / 2 {
            let rate = 10000f64.powf(2.0 * i as f64 / p_dim as f64);
            let angle = pos as f64 / rate;
            data[pos * p_dim + 2 * i] = angle.sin();
            data[pos * p_dim + 2 * i + 1] = angle.cos();
        }
    }
    Ok(Tensor::new(data, vec![s_len, p_dim])?)
}

enum Encoder {
    Bert(BertEncoder),
    Blstm(BlstmEncoder),
}

/// All learnable state for one model.
pub struct ModelParams {
    pub config: ModelConfig,
    preseq: Preseq,
    encoder: Encoder,
    decoder: Decoder,
}

impl ModelParams {
    pub fn init(config: &ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut seeds = SeedStream::new(config.seed);
        let preseq = Preseq::init(
            config.preseq,
            config.d_dim(),
            config.p_dim,
            config.cnn_kernels,
            config.init_std,
            &mut seeds,
        )?;
        let encoder = match config.encoder {
            EncoderKind::Bert => Encoder::Bert(BertEncoder::init(
                config.p_dim,
                config.a_num,
                config.f_dim,
                config.l_num,
                config.init_std,
                &mut seeds,
            )?),
            EncoderKind::Blstm => Encoder::Blstm(BlstmEncoder::init(
                config.p_dim,
                config.c_num,
                config.init_std,
                &mut seeds,
            )?),
        };
        let decoder = Decoder::init(
            config.e_dim(),
            config.decoder_hidden,
            config.d_dim(),
            config.init_std,
            &mut seeds,
        )?;
        Ok(ModelParams {
            config: config.clone(),
            preseq,
            encoder,
            decoder,
        })
    }

    /// Stable (name, tensor) registry used by the optimizer and checkpoints.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.preseq.collect("preseq", &mut out);
        match &self.encoder {
            Encoder::Bert(b) => b.collect("encoder", &mut out),
            Encoder::Blstm(b) => b.collect("encoder", &mut out),
        }
        self.decoder.collect("decoder", &mut out);
        out
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }
}

/// Exact integer parameter counts by component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCounts {
    pub preseq: usize,
    pub encoder: usize,
    pub decoder: usize,
}

impl ParamCounts {
    pub fn total(&self) -> usize {
        self.preseq + self.encoder + self.decoder
    }
}

pub fn count_params(params: &ModelParams) -> ParamCounts {
    let mut counts = ParamCounts {
        preseq: 0,
        encoder: 0,
        decoder: 0,
    };
    for (name, t) in params.named_tensors() {
        let n = t.numel();
        if name.starts_with("preseq") {
            counts.preseq += n;
        } else if name.starts_with("encoder") {
            counts.encoder += n;
        } else {
            counts.decoder += n;
        }
    }
    counts
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardOptions {
    pub collect_attention: bool,
}

pub struct ModelOutput {
    /// S×d_dim prediction in normalized stacked feature space.
    pub prediction: Tensor,
    /// Per layer×head attention matrices, transformer encoder only.
    pub attention: Vec<AttnMap>,
}

/// Forward pass from pre-stacked frames.
pub fn model_forward_stacked(
    tape: &Tape,
    params: &ModelParams,
    stacked: &StackedFrames,
    opts: ForwardOptions,
) -> Result<ModelOutput, ModelError> {
    let cfg = &params.config;
    if stacked.d_dim != cfg.d_dim() {
        return Err(ModelError::Contract(format!(
            "stacked width {} does not match model d_dim {}",
            stacked.d_dim,
            cfg.d_dim()
        )));
    }
    let x = Tensor::new(stacked.data.clone(), vec![stacked.s_len, stacked.d_dim])?;
    let mut h = params.preseq.forward(tape, &x)?;
    let (out, attention) = match &params.encoder {
        Encoder::Bert(bert) => {
            if params.preseq.needs_positional_encoding() {
                let pe = positional_encoding(stacked.s_len, cfg.p_dim)?;
                h = tape.add(&h, &pe)?;
            }
            bert.forward(tape, &h, opts.collect_attention)?
        }
        Encoder::Blstm(blstm) => (blstm.forward(tape, &h)?, Vec::new()),
    };
    let prediction = params.decoder.forward(tape, &out)?;
    Ok(ModelOutput {
        prediction,
        attention,
    })
}

/// Forward pass from normalized log-mel features: stack → preseq →
/// (+ positions where needed) → encoder → decoder.
pub fn model_forward(
    tape: &Tape,
    params: &ModelParams,
    m_y: &LogMelSpectrogram,
    opts: ForwardOptions,
) -> Result<ModelOutput, ModelError> {
    if !m_y.normalized {
        return Err(ModelError::Contract(
            "model input must be normalized log-mel features".into(),
        ));
    }
    let stacked = stack_frames(m_y, params.config.d_rate);
    model_forward_stacked(tape, params, &stacked, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mel_like(t_len: usize, r_dim: usize, seed: u64) -> LogMelSpectrogram {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        LogMelSpectrogram {
            data: (0..t_len * r_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
            frames: t_len,
            n_mels: r_dim,
            normalized: true,
            stats: None,
        }
    }

    #[test]
    fn stacking_shapes_and_padding() {
        let m = mel_like(9, 80, 1);
        let s = stack_frames(&m, 3);
        assert_eq!((s.s_len, s.d_dim), (3, 240));

        let m = mel_like(10, 80, 2);
        let s = stack_frames(&m, 3);
        assert_eq!(s.s_len, 4);
        // final group repeats frame 9 three times
        let last = &s.data[3 * 240..];
        assert_eq!(&last[0..80], m.frame(9));
        assert_eq!(&last[80..160], m.frame(9));
        assert_eq!(&last[160..240], m.frame(9));
    }

    #[test]
    fn unstack_restores_original() {
        for t_len in [1, 2, 3, 7, 10, 23] {
            let m = mel_like(t_len, 16, t_len as u64);
            let s = stack_frames(&m, 3);
            let back = unstack_frames(&s.data, s.s_len, s.d_dim, 3, t_len);
            assert_eq!(back, m.data, "t_len {t_len}");
        }
    }

    #[test]
    fn positional_encoding_values() {
        let pe = positional_encoding(3, 8).unwrap();
        let d = pe.to_vec();
        // position 0: [0, 1, 0, 1, ...]
        for i in 0..4 {
            assert_eq!(d[2 * i], 0.0);
            assert_eq!(d[2 * i + 1], 1.0);
        }
        // PE(1, 0) = sin(1)
        assert!((d[8] - 1f64.sin()).abs() < 1e-12);
        assert!(d.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(positional_encoding(3, 7).is_err());
    }

    #[test]
    fn all_variants_produce_p_dim_outputs() {
        for preseq in PreseqKind::ALL {
            for encoder in EncoderKind::ALL {
                let cfg = ModelConfig::reduced(preseq, encoder, 5);
                let params = ModelParams::init(&cfg).unwrap();
                for s_len in [1usize, 2, 7, 50] {
                    let t_len = s_len * cfg.d_rate;
                    let m = mel_like(t_len, cfg.r_dim, s_len as u64);
                    let tape = Tape::inactive();
                    let out =
                        model_forward(&tape, &params, &m, ForwardOptions::default()).unwrap();
                    assert_eq!(
                        out.prediction.shape(),
                        &[s_len, cfg.d_dim()],
                        "{preseq}/{encoder} S={s_len}"
                    );
                }
            }
        }
    }

    #[test]
    fn def_preseq_has_no_bias() {
        let cfg = ModelConfig::reduced(PreseqKind::Def, EncoderKind::Bert, 3);
        let params = ModelParams::init(&cfg).unwrap();
        let stacked = StackedFrames {
            data: vec![0.0; 4 * cfg.d_dim()],
            s_len: 4,
            d_dim: cfg.d_dim(),
            orig_len: 12,
        };
        let tape = Tape::inactive();
        let x = Tensor::new(stacked.data.clone(), vec![4, cfg.d_dim()]).unwrap();
        let h = params.preseq.forward(&tape, &x).unwrap();
        assert!(h.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = ModelConfig::reduced(PreseqKind::Cnn2d, EncoderKind::Bert, 7);
        let params = ModelParams::init(&cfg).unwrap();
        let m = mel_like(30, cfg.r_dim, 9);
        let run = || {
            let tape = Tape::inactive();
            model_forward(&tape, &params, &m, ForwardOptions::default())
                .unwrap()
                .prediction
                .to_vec()
        };
        assert_eq!(run(), run());
        // fresh init from the same seed matches too
        let params2 = ModelParams::init(&cfg).unwrap();
        let tape = Tape::inactive();
        let other = model_forward(&tape, &params2, &m, ForwardOptions::default())
            .unwrap()
            .prediction
            .to_vec();
        assert_eq!(run(), other);
    }

    #[test]
    fn unnormalized_input_rejected() {
        let cfg = ModelConfig::reduced(PreseqKind::Def, EncoderKind::Bert, 1);
        let params = ModelParams::init(&cfg).unwrap();
        let mut m = mel_like(6, cfg.r_dim, 3);
        m.normalized = false;
        let tape = Tape::inactive();
        assert!(model_forward(&tape, &params, &m, ForwardOptions::default()).is_err());
    }

    /// Exact component counts for the full-size models.
    #[test]
    fn full_size_parameter_counts() {
        let expect_preseq = [
            (PreseqKind::Def, 184_320usize),
            (PreseqKind::Cnn2d, 2_318_016),
            (PreseqKind::Cnn1d, 2_027_520),
            (PreseqKind::Lstm, 1_920_000),
            (PreseqKind::Cl, 3_524_928),
        ];
        for (kind, want) in expect_preseq {
            let cfg = ModelConfig::full(kind, EncoderKind::Bert, 0);
            let counts = count_params(&ModelParams::init(&cfg).unwrap());
            assert_eq!(counts.preseq, want, "{kind}");
        }
        let bert = count_params(
            &ModelParams::init(&ModelConfig::full(PreseqKind::Def, EncoderKind::Bert, 0)).unwrap(),
        );
        assert_eq!(bert.encoder, 16_541_952);
        assert_eq!(bert.decoder, 258_544);
        let blstm = count_params(
            &ModelParams::init(&ModelConfig::full(PreseqKind::Def, EncoderKind::Blstm, 0))
                .unwrap(),
        );
        assert_eq!(blstm.encoder, 14_688_256);
        assert_eq!(blstm.decoder, 586_224);
    }

    #[test]
    fn named_tensors_are_unique_and_stable() {
        let cfg = ModelConfig::reduced(PreseqKind::Cl, EncoderKind::Blstm, 2);
        let params = ModelParams::init(&cfg).unwrap();
        let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
        let again: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, again);
    }

    #[test]
    fn full_model_gradients_match_finite_differences() {
        use crate::tensor::check::finite_diff_check_multi;
        // tiny config: p_dim 32, 1 layer, 2 heads
        let mut cfg = ModelConfig::reduced(PreseqKind::Def, EncoderKind::Bert, 21);
        cfg.p_dim = 32;
        cfg.a_num = 2;
        cfg.f_dim = 48;
        cfg.decoder_hidden = 24;
        cfg.init_std = 0.1;
        let params = ModelParams::init(&cfg).unwrap();
        let m = mel_like(9, cfg.r_dim, 22);
        let stacked = stack_frames(&m, cfg.d_rate);
        let named = params.named_tensors();
        let refs: Vec<(&str, &Tensor)> = named.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let target = Tensor::new(vec![0.1; 3 * cfg.d_dim()], vec![3, cfg.d_dim()]).unwrap();
        let report = finite_diff_check_multi(
            &refs,
            || {
                let tape = Tape::new();
                let out = model_forward_stacked(&tape, &params, &stacked, ForwardOptions::default())
                    .map_err(|e| match e {
                        ModelError::Tensor(t) => t,
                        other => panic!("{other}"),
                    })?;
                let diff = tape.sub(&out.prediction, &target)?;
                let sq = tape.mul(&diff, &diff)?;
                let loss = tape.scale(&tape.sum(&sq), 1.0 / (3.0 * cfg.d_dim() as f64));
                Ok((tape, loss))
            },
            2,
            1e-6,
            23,
        )
        .unwrap();
        assert!(report.passes(1e-4), "max rel err {} at {:?}", report.max_rel_err, report.worst);
    }
}
