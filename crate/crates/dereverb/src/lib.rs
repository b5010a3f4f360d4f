//! Desk-scale single-channel speech dereverberation workbench.
//!
//! The crate covers the full experiment loop on one machine:
//!
//! - [`room`] — image-method room impulse responses and synthetic
//!   reverberant dataset assembly,
//! - [`dsp`] — STFT/ISTFT, log-Mel features, Griffin-Lim phase
//!   reconstruction, resampling, WAV I/O,
//! - [`tensor`] — an f64 tape-based autodiff engine,
//! - [`model`] — frame stacking, five pre-sequence networks, a prenorm
//!   transformer encoder and a BLSTM encoder with a shared decoder,
//! - [`train`] — ℓ2 training with Adam and warmup/linear-decay,
//! - [`wpe`] — a weighted-prediction-error statistical baseline,
//! - [`eval`] — objective metrics, the end-to-end enhancement path,
//!   attention diagnostics and probes.
//!
//! Each major capability has a runnable demo under `examples/`; the
//! `dereverb` binary exposes the same flows as subcommands.

pub mod dsp;
pub mod model;
pub mod room;
pub(crate) mod seed;
pub mod tensor;
