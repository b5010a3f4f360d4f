//! Time–frequency front end: STFT/ISTFT, log-Mel analysis, Griffin-Lim
//! phase reconstruction, resampling and WAV I/O.

use num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

mod griffin_lim;
mod mel;
mod resample;
pub mod wav;

pub use griffin_lim::{griffin_lim, GriffinLimResult};
pub use mel::{
    build_mel_filterbank, fit_norm_stats, hz_to_mel, mel_to_hz, mel_to_linear, normalize,
    to_log_mel, LogMelSpectrogram, MelFilterbank, NormStats, LOG_MEL_FLOOR,
};
pub use resample::resample;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("input has {len} samples but the analysis window needs {needed}")]
    InputTooShort { len: usize, needed: usize },
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("invalid mel band edges: f_min {f_min} Hz, f_max {f_max} Hz, nyquist {nyquist} Hz")]
    BadBand {
        f_min: f64,
        f_max: f64,
        nyquist: f64,
    },
    #[error("{0}")]
    Contract(String),
    #[error("wav: {0}")]
    Wav(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Time-domain audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, DspError> {
        if sample_rate == 0 {
            return Err(DspError::BadConfig("sample_rate must be > 0".into()));
        }
        if let Some(v) = samples.iter().find(|v| !v.is_finite()) {
            return Err(DspError::BadConfig(format!("non-finite sample {v}")));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Analysis parameters. The defaults are the working recipe for 24 kHz
/// material: 50 ms Hann window, 2048-point FFT, 12.5 ms hop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct StftConfig {
    pub window_len: usize,
    pub fft_len: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            window_len: 1200,
            fft_len: 2048,
            hop: 300,
        }
    }
}

impl StftConfig {
    /// Number of retained one-sided bins.
    pub fn bins(&self) -> usize {
        self.fft_len / 2 + 1
    }

    pub fn validate(&self) -> Result<(), DspError> {
        if self.hop == 0 || self.hop > self.window_len {
            return Err(DspError::BadConfig(format!(
                "hop {} must be in 1..={}",
                self.hop, self.window_len
            )));
        }
        if self.window_len > self.fft_len {
            return Err(DspError::BadConfig(format!(
                "window_len {} exceeds fft_len {}",
                self.window_len, self.fft_len
            )));
        }
        // Hann overlap-add stays constant only when the hop divides the window.
        if self.window_len % self.hop != 0 {
            return Err(DspError::BadConfig(format!(
                "window_len {} not divisible by hop {}",
                self.window_len, self.hop
            )));
        }
        Ok(())
    }

    pub fn num_frames(&self, samples: usize) -> Result<usize, DspError> {
        if samples < self.window_len {
            return Err(DspError::InputTooShort {
                len: samples,
                needed: self.window_len,
            });
        }
        Ok((samples - self.window_len) / self.hop + 1)
    }
}

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
        .collect()
}

/// T×F one-sided complex STFT.
#[derive(Debug, Clone)]
pub struct ComplexSpectrogram {
    /// Row-major frames × bins.
    pub data: Vec<Complex64>,
    pub frames: usize,
    pub bins: usize,
    pub config: StftConfig,
    pub sample_rate: u32,
}

impl ComplexSpectrogram {
    pub fn at(&self, t: usize, f: usize) -> Complex64 {
        self.data[t * self.bins + f]
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    pub fn magnitudes(&self) -> MagnitudeSpectrogram {
        MagnitudeSpectrogram {
            data: self.data.iter().map(|c| c.norm()).collect(),
            frames: self.frames,
            bins: self.bins,
        }
    }
}

/// T×F non-negative magnitude matrix.
#[derive(Debug, Clone)]
pub struct MagnitudeSpectrogram {
    pub data: Vec<f64>,
    pub frames: usize,
    pub bins: usize,
}

impl MagnitudeSpectrogram {
    pub fn at(&self, t: usize, f: usize) -> f64 {
        self.data[t * self.bins + f]
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }
}

/// Frame t covers samples [t·hop, t·hop + window_len): Hann window, zero-pad
/// to fft_len, DFT, keep the one-sided bins.
pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<ComplexSpectrogram, DspError> {
    cfg.validate()?;
    let frames = cfg.num_frames(w.samples.len())?;
    let bins = cfg.bins();
    let window = hann_window(cfg.window_len);
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(cfg.fft_len);
    let mut data = Vec::with_capacity(frames * bins);
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_len];
    for t in 0..frames {
        let start = t * cfg.hop;
        for (b, (&s, &wv)) in buf
            .iter_mut()
            .zip(w.samples[start..start + cfg.window_len].iter().zip(&window))
        {
            *b = Complex64::new(s * wv, 0.0);
        }
        for b in buf.iter_mut().skip(cfg.window_len) {
            *b = Complex64::new(0.0, 0.0);
        }
        fft.process(&mut buf);
        data.extend_from_slice(&buf[..bins]);
    }
    Ok(ComplexSpectrogram {
        data,
        frames,
        bins,
        config: *cfg,
        sample_rate: w.sample_rate,
    })
}

/// Weighted overlap-add inverse with synthesis-window normalization.
/// Exact on the interior for unmodified spectra; the first and last
/// window_len samples carry edge attenuation.
pub fn istft(s: &ComplexSpectrogram) -> Result<Waveform, DspError> {
    let cfg = &s.config;
    cfg.validate()?;
    let window = hann_window(cfg.window_len);
    let out_len = if s.frames == 0 {
        0
    } else {
        (s.frames - 1) * cfg.hop + cfg.window_len
    };
    let mut out = vec![0.0; out_len];
    let mut weight = vec![0.0; out_len];
    let mut planner = FftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(cfg.fft_len);
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_len];
    let scale = 1.0 / cfg.fft_len as f64;
    for t in 0..s.frames {
        let frame = s.frame(t);
        buf[..s.bins].copy_from_slice(frame);
        // Hermitian completion of the one-sided spectrum.
        for k in s.bins..cfg.fft_len {
            buf[k] = frame[cfg.fft_len - k].conj();
        }
        ifft.process(&mut buf);
        let start = t * cfg.hop;
        for n in 0..cfg.window_len {
            let v = buf[n].re * scale;
            out[start + n] += v * window[n];
            weight[start + n] += window[n] * window[n];
        }
    }
    for (o, &w) in out.iter_mut().zip(&weight) {
        if w > 1e-12 {
            *o /= w;
        } else {
            *o = 0.0;
        }
    }
    Ok(Waveform {
        samples: out,
        sample_rate: s.sample_rate,
    })
}
