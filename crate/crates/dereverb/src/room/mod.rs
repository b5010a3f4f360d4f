//! Shoebox-room acoustics: Sabine absorption, image-method impulse
//! responses, receiver placement, convolution, and decay-time estimation.

use thiserror::Error;

use crate::dsp::Waveform;

mod dataset;
pub mod synth;

pub use dataset::{
    build_dataset, synth_clean_corpus, BuildConfig, DatasetManifest, ManifestEntry, Split,
};

pub const SPEED_OF_SOUND: f64 = 343.0;

/// Taps of the windowed-sinc used to place image impulses at fractional
/// delays.
const FRACTIONAL_DELAY_TAPS: usize = 81;

#[derive(Debug, Error)]
pub enum RoomError {
    #[error("invalid room: {0}")]
    BadSpec(String),
    #[error("room of volume {volume:.1} m³ cannot support t60 {t60} s (Sabine absorption {alpha:.3} >= 1)")]
    InfeasibleT60 { volume: f64, t60: f64, alpha: f64 },
    #[error("receiver circle of radius {radius} m around {center:?} leaves the room")]
    CircleOutsideRoom { center: [f64; 3], radius: f64 },
    #[error("sample rates differ: {0} vs {1}")]
    SampleRateMismatch(u32, u32),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Dsp(#[from] crate::dsp::DspError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Geometry and target reverberation for one source/receiver pair.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RoomSpec {
    /// Room dimensions [Lx, Ly, Lz] in meters.
    pub dims: [f64; 3],
    /// Target reverberation time in seconds.
    pub t60: f64,
    pub source_pos: [f64; 3],
    pub mic_pos: [f64; 3],
    pub sample_rate: u32,
    pub speed_of_sound: f64,
    /// Optional cap on image order per axis; derived from t60 when absent.
    pub max_order: Option<i64>,
}

impl RoomSpec {
    pub fn validate(&self) -> Result<(), RoomError> {
        if self.dims.iter().any(|&d| d <= 0.0) {
            return Err(RoomError::BadSpec(format!("dims {:?} must be > 0", self.dims)));
        }
        if self.t60 <= 0.0 {
            return Err(RoomError::BadSpec(format!("t60 {} must be > 0", self.t60)));
        }
        if self.sample_rate == 0 {
            return Err(RoomError::BadSpec("sample_rate must be > 0".into()));
        }
        for (name, p) in [("source", &self.source_pos), ("mic", &self.mic_pos)] {
            for i in 0..3 {
                if !(p[i] > 0.0 && p[i] < self.dims[i]) {
                    return Err(RoomError::BadSpec(format!(
                        "{name} position {p:?} not strictly inside room {:?}",
                        self.dims
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn surface_area(&self) -> f64 {
        let [x, y, z] = self.dims;
        2.0 * (x * y + x * z + y * z)
    }

    /// Geometric source–receiver delay in samples (fractional).
    pub fn direct_path_delay(&self) -> f64 {
        let d = dist(&self.source_pos, &self.mic_pos);
        d / self.speed_of_sound * self.sample_rate as f64
    }
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// One simulated impulse response.
#[derive(Debug, Clone)]
pub struct Rir {
    pub waveform: Waveform,
    pub spec: RoomSpec,
    pub id: String,
}

impl Rir {
    /// Arrival index of the strongest path.
    pub fn peak_index(&self) -> usize {
        self.waveform
            .samples
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.abs().total_cmp(&b.abs()))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

/// Uniform wall reflection coefficient from the Sabine relation
/// α = 0.161·V / (t60·S), β = sqrt(1 − α).
pub fn t60_to_reflection(spec: &RoomSpec) -> Result<f64, RoomError> {
    spec.validate()?;
    let alpha = 0.161 * spec.volume() / (spec.t60 * spec.surface_area());
    if alpha >= 1.0 {
        return Err(RoomError::InfeasibleT60 {
            volume: spec.volume(),
            t60: spec.t60,
            alpha,
        });
    }
    Ok((1.0 - alpha).max(0.0).sqrt())
}

/// Reflection coefficient calibrated so the realized Schroeder decay of the
/// simulated response matches the requested t60. The Sabine value seeds the
/// search; a specular shoebox with uniform walls decays slower than the
/// diffuse-field prediction (slow axial modes dominate the late tail), so a
/// few corrective iterations of β ← β^(measured/target) are applied.
pub fn calibrated_reflection(spec: &RoomSpec) -> Result<f64, RoomError> {
    spec.validate()?;
    let mut beta = t60_to_reflection(spec)?;
    let fs = spec.sample_rate as f64;
    let n_samples = (1.2 * spec.t60 * fs).ceil() as usize;
    for _ in 0..4 {
        let h = compute_rir(spec, beta, n_samples);
        let rir = Rir {
            waveform: Waveform {
                samples: h,
                sample_rate: spec.sample_rate,
            },
            spec: spec.clone(),
            id: String::new(),
        };
        let est = schroeder_t60(&rir)
            .ok_or_else(|| RoomError::BadSpec("decay never reaches -35 dB".into()))?;
        let ratio = est / spec.t60;
        if (ratio - 1.0).abs() < 0.03 {
            break;
        }
        beta = beta.powf(ratio);
    }
    Ok(beta)
}

/// Classical image-method RIR for a shoebox room with uniform walls.
/// Image impulses are placed with an 81-tap Hann-windowed sinc so
/// fractional delays do not quantize to the sample grid. The response is
/// sized to 1.2·t60 and image orders are chosen to cover that length.
pub fn image_method_rir(spec: &RoomSpec) -> Result<Rir, RoomError> {
    let beta = calibrated_reflection(spec)?;
    Ok(image_method_rir_with_beta(spec, beta)?)
}

/// RIR for an explicit uniform reflection coefficient (no calibration).
pub fn image_method_rir_with_beta(spec: &RoomSpec, beta: f64) -> Result<Rir, RoomError> {
    spec.validate()?;
    let fs = spec.sample_rate as f64;
    let n_samples = (1.2 * spec.t60 * fs).ceil() as usize;
    let samples = compute_rir(spec, beta, n_samples);
    Ok(Rir {
        waveform: Waveform {
            samples,
            sample_rate: spec.sample_rate,
        },
        spec: spec.clone(),
        id: String::new(),
    })
}

fn compute_rir(spec: &RoomSpec, beta: f64, n_samples: usize) -> Vec<f64> {
    let fs = spec.sample_rate as f64;
    let cts = spec.speed_of_sound / fs; // meters per sample
    let room: Vec<f64> = spec.dims.iter().map(|d| d / cts).collect();
    let src: Vec<f64> = spec.source_pos.iter().map(|p| p / cts).collect();
    let mic: Vec<f64> = spec.mic_pos.iter().map(|p| p / cts).collect();

    // Enough image orders that the furthest image exceeds the RIR length.
    let bound = |l: f64| (n_samples as f64 / (2.0 * l)).ceil() as i64;
    let (n1, n2, n3) = (bound(room[0]), bound(room[1]), bound(room[2]));

    let half = (FRACTIONAL_DELAY_TAPS / 2) as isize;
    let mut h = vec![0.0; n_samples];
    for mx in -n1..=n1 {
        for my in -n2..=n2 {
            for mz in -n3..=n3 {
                for q in 0..2i64 {
                    for j in 0..2i64 {
                        for k in 0..2i64 {
                            if let Some(order) = spec.max_order {
                                let ord = (2 * mx - q).abs() + (2 * my - j).abs()
                                    + (2 * mz - k).abs();
                                if ord > order {
                                    continue;
                                }
                            }
                            let dx = (1 - 2 * q) as f64 * src[0] - mic[0]
                                + 2.0 * mx as f64 * room[0];
                            let dy = (1 - 2 * j) as f64 * src[1] - mic[1]
                                + 2.0 * my as f64 * room[1];
                            let dz = (1 - 2 * k) as f64 * src[2] - mic[2]
                                + 2.0 * mz as f64 * room[2];
                            let dist_samples = (dx * dx + dy * dy + dz * dz).sqrt();
                            if dist_samples as usize >= n_samples + half as usize {
                                continue;
                            }
                            let reflections = (mx - q).abs()
                                + mx.abs()
                                + (my - j).abs()
                                + my.abs()
                                + (mz - k).abs()
                                + mz.abs();
                            let gain = beta.powi(reflections as i32)
                                / (4.0 * std::f64::consts::PI * dist_samples * cts);
                            add_fractional_impulse(&mut h, dist_samples, gain);
                        }
                    }
                }
            }
        }
    }
    h
}

/// Accumulate `gain`·δ(t − delay) via a Hann-windowed sinc.
///
/// Called once per image source, so the tap loop avoids transcendentals:
/// sin(π(u+k)) = (−1)^k·sin(πu) gives the sinc numerator, and the window
/// cosine advances by angle-addition recurrence.
fn add_fractional_impulse(h: &mut [f64], delay: f64, gain: f64) {
    use std::f64::consts::PI;
    let half = (FRACTIONAL_DELAY_TAPS / 2) as isize;
    let center = delay.round() as isize;
    let u0 = (center - half) as f64 - delay;
    let s0 = (PI * u0).sin();
    let dth = PI / (half as f64 + 1.0);
    let th0 = u0 * dth;
    let (mut cw, mut sw) = (th0.cos(), th0.sin());
    let (cd, sd) = (dth.cos(), dth.sin());
    let mut sign = 1.0f64;
    for k in 0..FRACTIONAL_DELAY_TAPS as isize {
        let idx = center - half + k;
        if idx >= 0 && (idx as usize) < h.len() {
            let u = u0 + k as f64;
            let sinc = if u.abs() < 1e-9 {
                1.0
            } else {
                sign * s0 / (PI * u)
            };
            let win = 0.5 + 0.5 * cw;
            h[idx as usize] += gain * sinc * win;
        }
        sign = -sign;
        let ncw = cw * cd - sw * sd;
        sw = sw * cd + cw * sd;
        cw = ncw;
    }
}

/// Receiver positions on a horizontal circle around the source: uniformly
/// random angles, all at the source height and exactly `radius` away.
pub fn sample_mic_circle(
    dims: [f64; 3],
    source_pos: [f64; 3],
    radius: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<[f64; 3]>, RoomError> {
    use rand::{Rng, SeedableRng};
    // The whole circle must stay strictly inside the room.
    if source_pos[0] - radius <= 0.0
        || source_pos[0] + radius >= dims[0]
        || source_pos[1] - radius <= 0.0
        || source_pos[1] + radius >= dims[1]
    {
        return Err(RoomError::CircleOutsideRoom {
            center: source_pos,
            radius,
        });
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut angles: Vec<f64> = Vec::with_capacity(count);
    while angles.len() < count {
        let a = rng.random_range(0.0..std::f64::consts::TAU);
        // Collisions have probability zero but would silently merge two
        // receivers, so resample.
        if angles.iter().any(|&b| b == a) {
            continue;
        }
        angles.push(a);
    }
    Ok(angles
        .into_iter()
        .map(|a| {
            [
                source_pos[0] + radius * a.cos(),
                source_pos[1] + radius * a.sin(),
                source_pos[2],
            ]
        })
        .collect())
}

/// Full linear convolution via FFT overlap-add, truncated to the clean
/// length so reverberant and clean frames stay aligned.
pub fn convolve(x: &Waveform, h: &Rir) -> Result<Waveform, RoomError> {
    if x.sample_rate != h.waveform.sample_rate {
        return Err(RoomError::SampleRateMismatch(
            x.sample_rate,
            h.waveform.sample_rate,
        ));
    }
    let full = convolve_full(&x.samples, &h.waveform.samples);
    Ok(Waveform {
        samples: full[..x.samples.len()].to_vec(),
        sample_rate: x.sample_rate,
    })
}

/// Linear convolution, length len(x)+len(h)−1.
pub fn convolve_full(x: &[f64], h: &[f64]) -> Vec<f64> {
    use num_complex::Complex64;
    use rustfft::FftPlanner;
    if x.is_empty() || h.is_empty() {
        return Vec::new();
    }
    let out_len = x.len() + h.len() - 1;
    // Overlap-add with blocks sized against the kernel.
    let fft_len = (8 * h.len().next_power_of_two()).max(256).next_power_of_two();
    let block = fft_len - h.len() + 1;
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(fft_len);
    let ifft = planner.plan_fft_inverse(fft_len);

    let mut h_spec = vec![Complex64::new(0.0, 0.0); fft_len];
    for (b, &v) in h_spec.iter_mut().zip(h) {
        *b = Complex64::new(v, 0.0);
    }
    fft.process(&mut h_spec);

    let mut out = vec![0.0; out_len];
    let scale = 1.0 / fft_len as f64;
    let mut buf = vec![Complex64::new(0.0, 0.0); fft_len];
    let mut start = 0;
    while start < x.len() {
        let end = (start + block).min(x.len());
        for b in buf.iter_mut() {
            *b = Complex64::new(0.0, 0.0);
        }
        for (b, &v) in buf.iter_mut().zip(&x[start..end]) {
            *b = Complex64::new(v, 0.0);
        }
        fft.process(&mut buf);
        for (b, hs) in buf.iter_mut().zip(&h_spec) {
            *b *= hs;
        }
        ifft.process(&mut buf);
        for (i, b) in buf.iter().enumerate() {
            let idx = start + i;
            if idx < out_len {
                out[idx] += b.re * scale;
            }
        }
        start = end;
    }
    out
}

/// Backward-integrated energy decay curve in dB, normalized to 0 dB total.
pub fn schroeder_curve(h: &[f64]) -> Vec<f64> {
    let mut tail_energy = vec![0.0; h.len()];
    let mut acc = 0.0;
    for (i, &v) in h.iter().enumerate().rev() {
        acc += v * v;
        tail_energy[i] = acc;
    }
    let total = acc.max(1e-300);
    tail_energy
        .into_iter()
        .map(|e| 10.0 * (e / total).max(1e-300).log10())
        .collect()
}

/// Decay-time estimate from the Schroeder curve: time for the −5 dB → −35 dB
/// span, extrapolated ×2 to the full 60 dB. None when the curve never
/// reaches −35 dB.
pub fn schroeder_t60(rir: &Rir) -> Option<f64> {
    let curve = schroeder_curve(&rir.waveform.samples);
    let fs = rir.waveform.sample_rate as f64;
    let cross = |level: f64| -> Option<f64> {
        for i in 1..curve.len() {
            if curve[i] <= level && curve[i - 1] > level {
                // linear interpolation between samples
                let frac = (curve[i - 1] - level) / (curve[i - 1] - curve[i]);
                return Some((i - 1) as f64 + frac);
            }
        }
        None
    };
    let t1 = cross(-5.0)?;
    let t2 = cross(-35.0)?;
    Some(2.0 * (t2 - t1) / fs)
}

/// The dataset recipe's room: [4, 4, 2.5] m with the source at the center.
pub fn reference_room(t60: f64, mic_pos: [f64; 3], sample_rate: u32) -> RoomSpec {
    RoomSpec {
        dims: [4.0, 4.0, 2.5],
        t60,
        source_pos: [2.0, 2.0, 1.25],
        mic_pos,
        sample_rate,
        speed_of_sound: SPEED_OF_SOUND,
        max_order: None,
    }
}
