use dereverb::dsp::{griffin_lim, stft, StftConfig, Waveform};

fn harmonic(len: usize, sr: u32, env_floor: f64, noise: f64, seed: u64) -> Waveform {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<f64> = (0..len)
        .map(|n| {
            let t = n as f64 / sr as f64;
            let f0 = 150.0 + 30.0 * (2.0 * std::f64::consts::PI * 2.0 * t).sin();
            let mut v = 0.0;
            for k in 1..=12 {
                v += (2.0 * std::f64::consts::PI * f0 * k as f64 * t).sin() / k as f64;
            }
            let env = env_floor + (1.0 - env_floor) * (2.0 * std::f64::consts::PI * 4.0 * t).sin().abs();
            0.1 * v * env + noise * rng.random_range(-1.0..1.0)
        })
        .collect();
    Waveform { samples, sample_rate: sr }
}

fn main() {
    let cfg = StftConfig::default();
    for (name, w) in [
        ("hard env", harmonic(24_000, 24_000, 0.0, 0.0, 1)),
        ("soft env", harmonic(24_000, 24_000, 0.5, 0.0, 1)),
        ("soft env + noise", harmonic(24_000, 24_000, 0.5, 0.005, 1)),
        ("sine only", Waveform {
            samples: (0..24_000).map(|n| 0.3 * (2.0 * std::f64::consts::PI * 440.0 * n as f64 / 24_000.0).sin()).collect(),
            sample_rate: 24_000,
        }),
    ] {
        let mag = stft(&w, &cfg).unwrap().magnitudes();
        let res = griffin_lim(&mag, &cfg, 24_000, 32).unwrap();
        println!(
            "{name:18} first {:.4} last {:.5} ratio {:.4}",
            res.convergence[0],
            res.convergence[31],
            res.convergence[31] / res.convergence[0]
        );
        let seq: Vec<String> = res.convergence.iter().map(|v| format!("{v:.4}")).collect();
        println!("  seq: {}", seq.join(" "));
    }
}
