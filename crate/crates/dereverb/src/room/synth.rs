//! Corpus-free "speech-like" clean signals: glottal pulse trains and noise
//! bursts shaped by formant resonators, phrased into syllables with random
//! pitch contours and amplitude envelopes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::Waveform;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub duration_secs: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            duration_secs: 2.0,
            sample_rate: 24_000,
            seed: 0,
        }
    }
}

struct Resonator {
    a1: f64,
    a2: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(fc: f64, bw: f64, fs: f64) -> Self {
        let r = (-std::f64::consts::PI * bw / fs).exp();
        let th = 2.0 * std::f64::consts::PI * fc / fs;
        Resonator {
            a1: 2.0 * r * th.cos(),
            a2: -r * r,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn tick(&mut self, x: f64) -> f64 {
        let y = x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Deterministic speech-like utterance. Voiced syllables are pulse trains
/// with slow pitch glides through three formants; some syllables are
/// noise-excited (fricative-like). Peak-normalized to 0.3.
pub fn speech_like(cfg: &SynthConfig) -> Waveform {
    let fs = cfg.sample_rate as f64;
    let n = (cfg.duration_secs * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = vec![0.0; n];

    // Pitch anchors that keep glottal periods near divisors of typical hop
    // sizes; the glide still wanders between them.
    let f0_anchors = [120.0, 160.0, 200.0, 240.0];
    let base_f0 = f0_anchors[rng.random_range(0..f0_anchors.len())] * rng.random_range(0.95..1.05);

    let mut cursor = (0.015 * fs) as usize;
    while cursor < n {
        let syllable = (rng.random_range(0.12..0.30) * fs) as usize;
        let gap = (rng.random_range(0.03..0.12) * fs) as usize;
        let end = (cursor + syllable).min(n);
        let len = end - cursor;
        if len < (0.04 * fs) as usize {
            break;
        }
        let voiced = rng.random_range(0.0..1.0) < 0.78;

        let mut excitation = vec![0.0; len];
        if voiced {
            let f0_start = base_f0 * rng.random_range(0.9..1.1);
            let f0_end = f0_start * rng.random_range(0.9..1.1);
            let mut phase = 1.0f64; // emit a pulse at syllable onset
            for (i, e) in excitation.iter_mut().enumerate() {
                let f0 = f0_start + (f0_end - f0_start) * i as f64 / len as f64;
                phase += f0 / fs;
                if phase >= 1.0 {
                    phase -= 1.0;
                    *e = rng.random_range(0.9..1.1);
                }
            }
            // breathiness
            for e in excitation.iter_mut() {
                *e += 0.015 * rng.random_range(-1.0..1.0);
            }
        } else {
            for e in excitation.iter_mut() {
                *e = 0.12 * rng.random_range(-1.0..1.0);
            }
        }

        let mut resonators = if voiced {
            vec![
                Resonator::new(rng.random_range(300.0..900.0), rng.random_range(60.0..110.0), fs),
                Resonator::new(rng.random_range(900.0..2200.0), rng.random_range(90.0..160.0), fs),
                Resonator::new(rng.random_range(2200.0..3400.0), rng.random_range(150.0..260.0), fs),
            ]
        } else {
            vec![
                Resonator::new(rng.random_range(1800.0..3200.0), rng.random_range(200.0..400.0), fs),
                Resonator::new(rng.random_range(3200.0..6000.0), rng.random_range(300.0..600.0), fs),
            ]
        };
        for e in excitation.iter_mut() {
            let mut v = *e;
            for r in resonators.iter_mut() {
                v = r.tick(v);
            }
            *e = v;
        }

        // raised-cosine attack/decay
        let ramp = ((0.02 * fs) as usize).min(len / 3).max(1);
        let level = rng.random_range(0.5..1.0);
        for (i, e) in excitation.iter_mut().enumerate() {
            let env = if i < ramp {
                0.5 - 0.5 * (std::f64::consts::PI * i as f64 / ramp as f64).cos()
            } else if i + ramp > len {
                0.5 - 0.5 * (std::f64::consts::PI * (len - i) as f64 / ramp as f64).cos()
            } else {
                1.0
            };
            *e *= level * env;
        }

        for (o, e) in out[cursor..end].iter_mut().zip(&excitation) {
            *o += e;
        }
        cursor = end + gap;
    }

    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    for v in out.iter_mut() {
        *v *= 0.3 / peak;
    }
    Waveform {
        samples: out,
        sample_rate: cfg.sample_rate,
    }
}
