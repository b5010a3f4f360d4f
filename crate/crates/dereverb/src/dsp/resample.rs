//! Windowed-sinc resampling.

use super::{DspError, Waveform};

/// Half-width of the sinc kernel in samples at the lower of the two rates.
const HALF_WIDTH: f64 = 32.0;

/// Resample to `target_sr` with a Hann-windowed sinc interpolator. The
/// kernel weights are renormalized per output sample, so DC is preserved
/// exactly, including at the edges.
pub fn resample(w: &Waveform, target_sr: u32) -> Result<Waveform, DspError> {
    if target_sr == 0 {
        return Err(DspError::BadConfig("target_sr must be > 0".into()));
    }
    if target_sr == w.sample_rate {
        return Ok(w.clone());
    }
    if w.samples.is_empty() {
        return Ok(Waveform {
            samples: Vec::new(),
            sample_rate: target_sr,
        });
    }
    let ratio = target_sr as f64 / w.sample_rate as f64;
    // Cutoff at the lower Nyquist; widen the kernel when downsampling.
    let cutoff = ratio.min(1.0);
    let half = HALF_WIDTH / cutoff;
    let n = w.samples.len();
    let out_len = ((n - 1) as f64 * ratio).floor() as usize + 1;
    let mut out = Vec::with_capacity(out_len);
    for i in 0..out_len {
        let t = i as f64 / ratio;
        let lo = ((t - half).ceil() as isize).max(0) as usize;
        let hi = ((t + half).floor() as isize).min(n as isize - 1) as usize;
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for m in lo..=hi {
            let u = t - m as f64;
            let x = std::f64::consts::PI * cutoff * u;
            let sinc = if x.abs() < 1e-12 { 1.0 } else { x.sin() / x };
            let win = 0.5 + 0.5 * (std::f64::consts::PI * u / half).cos();
            let weight = cutoff * sinc * win;
            acc += weight * w.samples[m];
            wsum += weight;
        }
        out.push(if wsum.abs() > 1e-12 { acc / wsum } else { 0.0 });
    }
    Ok(Waveform {
        samples: out,
        sample_rate: target_sr,
    })
}
