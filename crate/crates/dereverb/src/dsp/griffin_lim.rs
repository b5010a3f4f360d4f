//! Griffin-Lim phase reconstruction by alternating projections.

use num_complex::Complex64;

use super::{istft, stft, ComplexSpectrogram, DspError, MagnitudeSpectrogram, StftConfig, Waveform};

#[derive(Debug, Clone)]
pub struct GriffinLimResult {
    pub waveform: Waveform,
    /// Spectral-convergence error ‖|STFT(w)| − mag‖_F / ‖mag‖_F after each
    /// iteration.
    pub convergence: Vec<f64>,
}

/// Reconstruct a waveform from target magnitudes. Starts from zero phase;
/// each iteration synthesizes a waveform from the current phase estimate and
/// takes the phase of its STFT as the next estimate. Deterministic.
pub fn griffin_lim(
    mag: &MagnitudeSpectrogram,
    cfg: &StftConfig,
    sample_rate: u32,
    iters: usize,
) -> Result<GriffinLimResult, DspError> {
    cfg.validate()?;
    if iters == 0 {
        return Err(DspError::BadConfig("griffin_lim needs iters >= 1".into()));
    }
    if mag.bins != cfg.bins() {
        return Err(DspError::Contract(format!(
            "magnitudes have {} bins, config expects {}",
            mag.bins,
            cfg.bins()
        )));
    }
    let mag_norm = mag.data.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut phase = vec![0.0f64; mag.data.len()];
    let mut convergence = Vec::with_capacity(iters);
    let mut waveform = Waveform {
        samples: Vec::new(),
        sample_rate,
    };
    for _ in 0..iters {
        let spec = ComplexSpectrogram {
            data: mag
                .data
                .iter()
                .zip(&phase)
                .map(|(&m, &p)| Complex64::from_polar(m, p))
                .collect(),
            frames: mag.frames,
            bins: mag.bins,
            config: *cfg,
            sample_rate,
        };
        waveform = istft(&spec)?;
        let reproj = stft(&waveform, cfg)?;
        let mut err = 0.0;
        for (c, (&m, p)) in reproj.data.iter().zip(mag.data.iter().zip(&mut phase)) {
            let d = c.norm() - m;
            err += d * d;
            *p = c.arg();
        }
        convergence.push(if mag_norm > 0.0 {
            err.sqrt() / mag_norm
        } else {
            0.0
        });
    }
    Ok(GriffinLimResult {
        waveform,
        convergence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Vocoder-style voiced signal: glottal pulse train through a few
    /// formant resonators, with a syllabic amplitude envelope.
    fn speechy(len: usize, sr: u32) -> Waveform {
        let period = 150; // 160 Hz at 24 kHz
        let mut x = vec![0.0; len];
        for i in (0..len).step_by(period) {
            x[i] = 1.0;
        }
        for (fc, bw) in [(500.0, 80.0), (1500.0, 120.0), (2500.0, 200.0)] {
            let r = (-std::f64::consts::PI * bw / sr as f64).exp();
            let th = 2.0 * std::f64::consts::PI * fc / sr as f64;
            let (a1, a2) = (2.0 * r * th.cos(), -r * r);
            let (mut y1, mut y2) = (0.0, 0.0);
            for v in x.iter_mut() {
                let y = *v + a1 * y1 + a2 * y2;
                y2 = y1;
                y1 = y;
                *v = y;
            }
        }
        let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (n, v) in x.iter_mut().enumerate() {
            let t = n as f64 / sr as f64;
            let env = 0.5 + 0.5 * (2.0 * std::f64::consts::PI * 3.0 * t).sin().abs();
            *v *= 0.3 * env / peak;
        }
        Waveform {
            samples: x,
            sample_rate: sr,
        }
    }

    #[test]
    fn zero_iters_rejected() {
        let cfg = StftConfig::default();
        let mag = MagnitudeSpectrogram {
            data: vec![0.0; 4 * cfg.bins()],
            frames: 4,
            bins: cfg.bins(),
        };
        assert!(griffin_lim(&mag, &cfg, 24_000, 0).is_err());
    }

    #[test]
    fn zero_magnitudes_give_zero_waveform() {
        let cfg = StftConfig::default();
        let mag = MagnitudeSpectrogram {
            data: vec![0.0; 4 * cfg.bins()],
            frames: 4,
            bins: cfg.bins(),
        };
        let res = griffin_lim(&mag, &cfg, 24_000, 4).unwrap();
        assert!(res.waveform.samples.iter().all(|&v| v == 0.0));
        assert!(res.convergence.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn converges_on_consistent_magnitudes() {
        let cfg = StftConfig::default();
        let w = speechy(24_000, 24_000);
        let mag = crate::dsp::stft(&w, &cfg).unwrap().magnitudes();
        let res = griffin_lim(&mag, &cfg, 24_000, 32).unwrap();
        assert_eq!(res.convergence.len(), 32);
        assert!(
            res.convergence[31] < 0.1 * res.convergence[0],
            "first {} last {}",
            res.convergence[0],
            res.convergence[31]
        );
    }

    #[test]
    fn error_non_increasing_after_iteration_two() {
        let cfg = StftConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let w = Waveform {
            samples: (0..12_000).map(|_| rng.random_range(-0.5..0.5)).collect(),
            sample_rate: 24_000,
        };
        let mag = crate::dsp::stft(&w, &cfg).unwrap().magnitudes();
        let res = griffin_lim(&mag, &cfg, 24_000, 16).unwrap();
        for i in 2..res.convergence.len() {
            assert!(
                res.convergence[i] <= res.convergence[i - 1] * (1.0 + 1e-12),
                "iteration {i}: {} > {}",
                res.convergence[i],
                res.convergence[i - 1]
            );
        }
    }
}
