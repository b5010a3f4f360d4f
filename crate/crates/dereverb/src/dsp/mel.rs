//! Mel filterbank analysis, log compression, normalization, and the
//! least-squares inversion used to feed phase reconstruction.

use super::{ComplexSpectrogram, DspError, MagnitudeSpectrogram};

/// Floor applied to mel magnitudes before the log, well below any audible
/// energy.
pub const LOG_MEL_FLOOR: f64 = 1e-10;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// M×F matrix of triangular filters with peaks equally spaced on the mel
/// scale between f_min and f_max.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// Row-major M×F weights.
    pub weights: Vec<f64>,
    pub n_mels: usize,
    pub n_bins: usize,
    pub sample_rate: u32,
    pub f_min: f64,
    pub f_max: f64,
    /// Peak (center) frequency of each filter in Hz.
    pub centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }
}

pub fn build_mel_filterbank(
    n_mels: usize,
    n_bins: usize,
    sample_rate: u32,
    f_min: f64,
    f_max: f64,
) -> Result<MelFilterbank, DspError> {
    let nyquist = sample_rate as f64 / 2.0;
    if !(0.0 <= f_min && f_min < f_max && f_max <= nyquist) {
        return Err(DspError::BadBand {
            f_min,
            f_max,
            nyquist,
        });
    }
    if n_mels == 0 || n_bins < 2 {
        return Err(DspError::BadConfig(format!(
            "need n_mels > 0 and n_bins >= 2, got {n_mels}/{n_bins}"
        )));
    }
    let fft_len = (n_bins - 1) * 2;
    let bin_hz = sample_rate as f64 / fft_len as f64;
    let mel_lo = hz_to_mel(f_min);
    let mel_hi = hz_to_mel(f_max);
    // n_mels + 2 edge points; filter m spans points m..m+2 with its peak at m+1.
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut weights = vec![0.0; n_mels * n_bins];
    for m in 0..n_mels {
        let (lo, ctr, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let w = if f <= lo || f >= hi {
                0.0
            } else if f <= ctr {
                (f - lo) / (ctr - lo)
            } else {
                (hi - f) / (hi - ctr)
            };
            weights[m * n_bins + k] = w;
        }
    }
    Ok(MelFilterbank {
        weights,
        n_mels,
        n_bins,
        sample_rate,
        f_min,
        f_max,
        centers_hz: edges[1..=n_mels].to_vec(),
    })
}

/// Per-bin normalization statistics fitted on a training corpus.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// T×M log mel features, optionally normalized to zero mean / unit variance
/// per bin. Normalized instances carry the stats used, so the mapping is
/// invertible.
#[derive(Debug, Clone)]
pub struct LogMelSpectrogram {
    /// Row-major frames × mels.
    pub data: Vec<f64>,
    pub frames: usize,
    pub n_mels: usize,
    pub normalized: bool,
    pub stats: Option<NormStats>,
}

impl LogMelSpectrogram {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.n_mels..(t + 1) * self.n_mels]
    }

    pub fn denormalize(&self) -> Result<LogMelSpectrogram, DspError> {
        if !self.normalized {
            return Ok(self.clone());
        }
        let stats = self.stats.as_ref().ok_or_else(|| {
            DspError::Contract("normalized log-mel is missing its stats".into())
        })?;
        let mut data = self.data.clone();
        for (i, v) in data.iter_mut().enumerate() {
            let m = i % self.n_mels;
            *v = *v * stats.std[m] + stats.mean[m];
        }
        Ok(LogMelSpectrogram {
            data,
            frames: self.frames,
            n_mels: self.n_mels,
            normalized: false,
            stats: None,
        })
    }
}

/// Natural log of the filterbank applied to STFT magnitudes, floored first.
pub fn to_log_mel(
    s: &ComplexSpectrogram,
    fb: &MelFilterbank,
    floor: f64,
) -> Result<LogMelSpectrogram, DspError> {
    if fb.n_bins != s.bins {
        return Err(DspError::Contract(format!(
            "filterbank has {} bins, spectrogram has {}",
            fb.n_bins, s.bins
        )));
    }
    let mut data = vec![0.0; s.frames * fb.n_mels];
    for t in 0..s.frames {
        let frame = s.frame(t);
        for m in 0..fb.n_mels {
            let row = fb.row(m);
            let mut acc = 0.0;
            for (w, c) in row.iter().zip(frame) {
                if *w != 0.0 {
                    acc += w * c.norm();
                }
            }
            data[t * fb.n_mels + m] = acc.max(floor).ln();
        }
    }
    Ok(LogMelSpectrogram {
        data,
        frames: s.frames,
        n_mels: fb.n_mels,
        normalized: false,
        stats: None,
    })
}

/// Per-bin mean and (population) std over every frame of the corpus.
/// Degenerate bins get their std clamped to 1e-8.
pub fn fit_norm_stats(corpus: &[&LogMelSpectrogram]) -> Result<NormStats, DspError> {
    let first = corpus
        .first()
        .ok_or_else(|| DspError::Contract("fit_norm_stats needs at least one input".into()))?;
    let m = first.n_mels;
    let mut mean = vec![0.0; m];
    let mut count = 0usize;
    for lm in corpus {
        if lm.n_mels != m {
            return Err(DspError::Contract("mixed mel sizes in corpus".into()));
        }
        for t in 0..lm.frames {
            for (acc, v) in mean.iter_mut().zip(lm.frame(t)) {
                *acc += v;
            }
        }
        count += lm.frames;
    }
    if count == 0 {
        return Err(DspError::Contract("fit_norm_stats saw zero frames".into()));
    }
    for v in &mut mean {
        *v /= count as f64;
    }
    let mut var = vec![0.0; m];
    for lm in corpus {
        for t in 0..lm.frames {
            for ((acc, v), mu) in var.iter_mut().zip(lm.frame(t)).zip(&mean) {
                let d = v - mu;
                *acc += d * d;
            }
        }
    }
    let std = var
        .iter()
        .map(|v| (v / count as f64).sqrt().max(1e-8))
        .collect();
    Ok(NormStats { mean, std })
}

/// Per-bin (x − mean) / std.
pub fn normalize(m: &LogMelSpectrogram, stats: &NormStats) -> Result<LogMelSpectrogram, DspError> {
    if stats.mean.len() != m.n_mels || stats.std.len() != m.n_mels {
        return Err(DspError::Contract(format!(
            "stats have {} bins, features have {}",
            stats.mean.len(),
            m.n_mels
        )));
    }
    let mut data = m.data.clone();
    for (i, v) in data.iter_mut().enumerate() {
        let b = i % m.n_mels;
        *v = (*v - stats.mean[b]) / stats.std[b];
    }
    Ok(LogMelSpectrogram {
        data,
        frames: m.frames,
        n_mels: m.n_mels,
        normalized: true,
        stats: Some(stats.clone()),
    })
}

/// Least-squares inversion of the filterbank via the Moore–Penrose
/// pseudo-inverse (Wᵀ(WWᵀ)⁻¹ for the full-row-rank W), negatives clamped.
/// Input must be denormalized log-mel.
pub fn mel_to_linear(
    m: &LogMelSpectrogram,
    fb: &MelFilterbank,
) -> Result<MagnitudeSpectrogram, DspError> {
    if m.normalized {
        return Err(DspError::Contract(
            "mel_to_linear expects denormalized input".into(),
        ));
    }
    if m.n_mels != fb.n_mels {
        return Err(DspError::Contract(format!(
            "filterbank has {} mels, features have {}",
            fb.n_mels, m.n_mels
        )));
    }
    let n_m = fb.n_mels;
    let n_f = fb.n_bins;
    // Gram matrix G = W·Wᵀ, factored once.
    let mut gram = vec![0.0; n_m * n_m];
    for i in 0..n_m {
        for j in i..n_m {
            let mut acc = 0.0;
            for (a, b) in fb.row(i).iter().zip(fb.row(j)) {
                acc += a * b;
            }
            gram[i * n_m + j] = acc;
            gram[j * n_m + i] = acc;
        }
    }
    let chol = cholesky(&gram, n_m)
        .ok_or_else(|| DspError::Contract("filterbank gram matrix is singular".into()))?;
    let mut out = vec![0.0; m.frames * n_f];
    let mut mel_mag = vec![0.0; n_m];
    for t in 0..m.frames {
        for (v, lv) in mel_mag.iter_mut().zip(m.frame(t)) {
            *v = lv.exp();
        }
        let z = chol_solve(&chol, n_m, &mel_mag);
        let row = &mut out[t * n_f..(t + 1) * n_f];
        for (i, zi) in z.iter().enumerate() {
            if *zi == 0.0 {
                continue;
            }
            for (o, w) in row.iter_mut().zip(fb.row(i)) {
                *o += zi * w;
            }
        }
        for o in row.iter_mut() {
            if *o < 0.0 {
                *o = 0.0;
            }
        }
    }
    Ok(MagnitudeSpectrogram {
        data: out,
        frames: m.frames,
        bins: n_f,
    })
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Solve L·Lᵀ·x = b.
fn chol_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{stft, StftConfig, Waveform};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn default_bank() -> MelFilterbank {
        build_mel_filterbank(80, 1025, 24_000, 80.0, 7600.0).unwrap()
    }

    #[test]
    fn mel_scale_closed_form() {
        // m(700) = 2595·log10(2)
        let want = 2595.0 * 2f64.log10();
        assert!((hz_to_mel(700.0) - want).abs() < 1e-9);
        assert!((mel_to_hz(want) - 700.0).abs() < 1e-9);
    }

    #[test]
    fn band_edges_validated() {
        assert!(build_mel_filterbank(80, 1025, 24_000, 7600.0, 80.0).is_err());
        assert!(build_mel_filterbank(80, 1025, 24_000, 80.0, 13_000.0).is_err());
    }

    #[test]
    fn filter_peaks_increase_and_rows_are_contiguous() {
        let fb = default_bank();
        for pair in fb.centers_hz.windows(2) {
            assert!(pair[1] > pair[0]);
        }
        for m in 0..fb.n_mels {
            let row = fb.row(m);
            assert!(row.iter().sum::<f64>() > 0.0, "filter {m} empty");
            let first = row.iter().position(|&v| v > 0.0).unwrap();
            let last = row.iter().rposition(|&v| v > 0.0).unwrap();
            assert!(
                row[first..=last].iter().all(|&v| v > 0.0),
                "filter {m} support has a hole"
            );
        }
    }

    #[test]
    fn in_band_bins_are_covered() {
        let fb = default_bank();
        let bin_hz = 24_000.0 / 2048.0;
        for k in 0..fb.n_bins {
            let f = k as f64 * bin_hz;
            if f > fb.f_min && f < fb.f_max {
                let covered = (0..fb.n_mels).any(|m| fb.row(m)[k] > 0.0);
                assert!(covered, "bin {k} at {f} Hz uncovered");
            }
        }
    }

    fn mel_of(w: &Waveform) -> LogMelSpectrogram {
        let cfg = StftConfig::default();
        let s = stft(w, &cfg).unwrap();
        to_log_mel(&s, &default_bank(), LOG_MEL_FLOOR).unwrap()
    }

    #[test]
    fn zero_input_hits_the_floor() {
        let w = Waveform {
            samples: vec![0.0; 4800],
            sample_rate: 24_000,
        };
        let lm = mel_of(&w);
        for &v in &lm.data {
            assert_eq!(v, LOG_MEL_FLOOR.ln());
        }
    }

    #[test]
    fn gain_shifts_unfloored_cells_by_ln_gain() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let samples: Vec<f64> = (0..9600).map(|_| rng.random_range(-0.4..0.4)).collect();
        let w = Waveform {
            samples: samples.clone(),
            sample_rate: 24_000,
        };
        let w10 = Waveform {
            samples: samples.iter().map(|v| v * 10.0).collect(),
            sample_rate: 24_000,
        };
        let a = mel_of(&w);
        let b = mel_of(&w10);
        let ln10 = 10f64.ln();
        for (x, y) in a.data.iter().zip(&b.data) {
            if *x > LOG_MEL_FLOOR.ln() {
                assert!((y - x - ln10).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn log_mel_matches_direct_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w = Waveform {
            samples: (0..4800).map(|_| rng.random_range(-0.4..0.4)).collect(),
            sample_rate: 24_000,
        };
        let cfg = StftConfig::default();
        let s = stft(&w, &cfg).unwrap();
        let fb = default_bank();
        let lm = to_log_mel(&s, &fb, LOG_MEL_FLOOR).unwrap();
        for t in 0..s.frames {
            for m in 0..fb.n_mels {
                let mut acc = 0.0;
                for f in 0..s.bins {
                    acc += fb.row(m)[f] * s.at(t, f).norm();
                }
                let want = acc.max(LOG_MEL_FLOOR).ln();
                assert!((lm.frame(t)[m] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normalize_fit_corpus_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mels: Vec<LogMelSpectrogram> = (0..3)
            .map(|s| {
                let w = Waveform {
                    samples: (0..9600)
                        .map(|_| rng.random_range(-0.5..0.5) * (s + 1) as f64)
                        .collect(),
                    sample_rate: 24_000,
                };
                mel_of(&w)
            })
            .collect();
        let refs: Vec<&LogMelSpectrogram> = mels.iter().collect();
        let stats = fit_norm_stats(&refs).unwrap();
        let normed: Vec<LogMelSpectrogram> =
            mels.iter().map(|m| normalize(m, &stats).unwrap()).collect();
        let m = normed[0].n_mels;
        let mut mean = vec![0.0; m];
        let mut count = 0;
        for lm in &normed {
            for t in 0..lm.frames {
                for (acc, v) in mean.iter_mut().zip(lm.frame(t)) {
                    *acc += v;
                }
            }
            count += lm.frames;
        }
        for v in &mut mean {
            *v /= count as f64;
        }
        let mut var = vec![0.0; m];
        for lm in &normed {
            for t in 0..lm.frames {
                for ((acc, v), mu) in var.iter_mut().zip(lm.frame(t)).zip(&mean) {
                    *acc += (v - mu) * (v - mu);
                }
            }
        }
        for b in 0..m {
            assert!(mean[b].abs() < 1e-9, "bin {b} mean {}", mean[b]);
            let std = (var[b] / count as f64).sqrt();
            assert!((std - 1.0).abs() < 1e-9, "bin {b} std {std}");
        }
    }

    #[test]
    fn denormalize_is_exact_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = Waveform {
            samples: (0..9600).map(|_| rng.random_range(-0.5..0.5)).collect(),
            sample_rate: 24_000,
        };
        let lm = mel_of(&w);
        let stats = fit_norm_stats(&[&lm]).unwrap();
        let back = normalize(&lm, &stats).unwrap().denormalize().unwrap();
        for (a, b) in lm.data.iter().zip(&back.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_bin_is_clamped_to_zero_output() {
        // A corpus where one bin never varies: std clamps to 1e-8 and the
        // normalized output for that bin is exactly zero.
        let lm = LogMelSpectrogram {
            data: vec![3.25; 40],
            frames: 10,
            n_mels: 4,
            normalized: false,
            stats: None,
        };
        let stats = fit_norm_stats(&[&lm]).unwrap();
        assert_eq!(stats.std, vec![1e-8; 4]);
        let n = normalize(&lm, &stats).unwrap();
        assert!(n.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mel_to_linear_requires_denormalized() {
        let lm = LogMelSpectrogram {
            data: vec![0.0; 80],
            frames: 1,
            n_mels: 80,
            normalized: true,
            stats: Some(NormStats {
                mean: vec![0.0; 80],
                std: vec![1.0; 80],
            }),
        };
        assert!(mel_to_linear(&lm, &default_bank()).is_err());
    }

    #[test]
    fn mel_to_linear_floor_frame_is_near_zero_and_nonnegative() {
        let fb = default_bank();
        let lm = LogMelSpectrogram {
            data: vec![LOG_MEL_FLOOR.ln(); fb.n_mels],
            frames: 1,
            n_mels: fb.n_mels,
            normalized: false,
            stats: None,
        };
        let mag = mel_to_linear(&lm, &fb).unwrap();
        for &v in &mag.data {
            assert!(v >= 0.0);
            assert!(v < 1e-8);
        }
    }

    #[test]
    fn mel_round_trip_recovers_smooth_magnitudes() {
        // Mel compression is lossy; the bound below is a frozen regression
        // level for speech-shaped harmonic content.
        let sr = 24_000u32;
        let samples: Vec<f64> = (0..24_000)
            .map(|n| {
                let t = n as f64 / sr as f64;
                let f0 = 160.0;
                let mut v = 0.0;
                for k in 1..=20 {
                    let f = f0 * k as f64;
                    if f < 7000.0 {
                        v += (2.0 * std::f64::consts::PI * f * t).sin() / (k as f64);
                    }
                }
                0.1 * v
            })
            .collect();
        let w = Waveform {
            samples,
            sample_rate: sr,
        };
        let cfg = StftConfig::default();
        let s = stft(&w, &cfg).unwrap();
        let fb = default_bank();
        let lm = to_log_mel(&s, &fb, LOG_MEL_FLOOR).unwrap();
        let rec = mel_to_linear(&lm, &fb).unwrap();
        let orig = s.magnitudes();
        for t in 0..s.frames {
            let mut num = 0.0;
            let mut den = 0.0;
            for f in 0..s.bins {
                let hz = f as f64 * sr as f64 / cfg.fft_len as f64;
                if hz < fb.f_min || hz > fb.f_max {
                    continue;
                }
                let d = rec.at(t, f) - orig.at(t, f);
                num += d * d;
                den += orig.at(t, f) * orig.at(t, f);
            }
            let rel = (num / den.max(1e-300)).sqrt();
            assert!(rel < 0.35, "frame {t}: rel {rel}");
        }
    }
}
