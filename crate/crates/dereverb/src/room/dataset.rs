//! Reverberant dataset assembly: per-T60 receiver sampling, RIR synthesis,
//! held-out test RIRs, clean/reverberant pairing and a JSON-lines manifest.

use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    convolve, reference_room, sample_mic_circle, Rir, RoomError,
};
use crate::dsp::{resample, wav, Waveform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Valid => write!(f, "valid"),
            Split::Test => write!(f, "test"),
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ManifestEntry {
    pub clean_path: String,
    pub rir_id: String,
    pub t60: f64,
    pub split: Split,
    pub reverb_path: String,
}

/// Manifest plus the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn save(&self, path: &Path) -> Result<(), RoomError> {
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        for e in &self.entries {
            let line = serde_json::to_string(e)
                .map_err(|e| RoomError::Input(format!("manifest serialization: {e}")))?;
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RoomError> {
        let file = fs::File::open(path)
            .map_err(|e| RoomError::Input(format!("{}: {e}", path.display())))?;
        let base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let mut entries = Vec::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry = serde_json::from_str(&line)
                .map_err(|e| RoomError::Input(format!("manifest line {}: {e}", i + 1)))?;
            entries.push(entry);
        }
        Ok(DatasetManifest { entries, base_dir })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.base_dir.join(rel)
    }

    /// (clean, reverb) waveforms for one entry.
    pub fn load_pair(&self, entry: &ManifestEntry) -> Result<(Waveform, Waveform), RoomError> {
        let clean = wav::read_wav(&self.resolve(&entry.clean_path))?;
        let reverb = wav::read_wav(&self.resolve(&entry.reverb_path))?;
        Ok((clean, reverb))
    }
}

#[derive(Debug, Clone)]
pub struct BuildConfig {
    pub seed: u64,
    pub t60_list: Vec<f64>,
    pub rirs_per_t60: usize,
    pub sample_rate: u32,
    pub train_frac: f64,
    pub valid_frac: f64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            seed: 0,
            t60_list: vec![0.3, 0.6, 0.9],
            rirs_per_t60: 11,
            sample_rate: 24_000,
            train_frac: 0.7,
            valid_frac: 0.15,
        }
    }
}

use crate::seed::mix as derive_seed;

fn list_wavs(dir: &Path) -> Result<Vec<PathBuf>, RoomError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| RoomError::Input(format!("{}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .map(|ext| ext.eq_ignore_ascii_case("wav"))
                .unwrap_or(false)
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Build the synthetic reverberant corpus:
/// per T60 the receiver circle is sampled, `rirs_per_t60` responses are
/// generated and one is held out for the test split; every clean utterance
/// is resampled to the working rate, convolved with a uniformly drawn RIR
/// from its split's pool, and written alongside a JSON-lines manifest.
pub fn build_dataset(
    clean_dir: &Path,
    out_dir: &Path,
    cfg: &BuildConfig,
) -> Result<DatasetManifest, RoomError> {
    let clean_files = list_wavs(clean_dir)?;
    if clean_files.is_empty() {
        return Err(RoomError::Input(format!(
            "no .wav files in {}",
            clean_dir.display()
        )));
    }
    fs::create_dir_all(out_dir.join("rirs"))?;
    fs::create_dir_all(out_dir.join("clean"))?;
    fs::create_dir_all(out_dir.join("reverb"))?;

    // RIR pools. The held-out receiver per T60 serves only the test split.
    let mut train_pool: Vec<Rir> = Vec::new();
    let mut test_pool: Vec<Rir> = Vec::new();
    for (ti, &t60) in cfg.t60_list.iter().enumerate() {
        let circle_seed = derive_seed(cfg.seed, 1, ti as u64);
        let mics = sample_mic_circle(
            [4.0, 4.0, 2.5],
            [2.0, 2.0, 1.25],
            1.0,
            cfg.rirs_per_t60,
            circle_seed,
        )?;
        let held_out = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2, ti as u64))
            .random_range(0..cfg.rirs_per_t60);
        // Calibrate the wall reflection once per T60; the correction is a
        // property of the room and decay target, not the receiver spot.
        let beta = super::calibrated_reflection(&reference_room(t60, mics[0], cfg.sample_rate))?;
        for (ri, mic) in mics.iter().enumerate() {
            let spec = reference_room(t60, *mic, cfg.sample_rate);
            let mut rir = super::image_method_rir_with_beta(&spec, beta)?;
            rir.id = format!("t60-{t60:.2}-rir-{ri:02}");
            wav::write_wav_f32(
                &out_dir.join("rirs").join(format!("{}.wav", rir.id)),
                &rir.waveform,
            )?;
            if ri == held_out {
                test_pool.push(rir);
            } else {
                train_pool.push(rir);
            }
        }
    }

    // Split assignment by seeded shuffle.
    let n = clean_files.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 3, 0));
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let n_train = ((n as f64 * cfg.train_frac).round() as usize).min(n);
    let n_valid = ((n as f64 * cfg.valid_frac).round() as usize).min(n - n_train);
    let split_of = |pos: usize| -> Split {
        if pos < n_train {
            Split::Train
        } else if pos < n_train + n_valid {
            Split::Valid
        } else {
            Split::Test
        }
    };

    let mut entries = Vec::with_capacity(n);
    let mut draw = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 4, 0));
    for (pos, &idx) in order.iter().enumerate() {
        let src = &clean_files[idx];
        let split = split_of(pos);
        let clean_raw = wav::read_wav(src)?;
        let clean = if clean_raw.sample_rate == cfg.sample_rate {
            clean_raw
        } else {
            resample(&clean_raw, cfg.sample_rate)?
        };
        let stem = src
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("utt")
            .to_string();
        let clean_rel = format!("clean/{stem}.wav");
        wav::write_wav_f32(&out_dir.join(&clean_rel), &clean)?;

        let pool = match split {
            Split::Test => &test_pool,
            _ => &train_pool,
        };
        let rir = &pool[draw.random_range(0..pool.len())];
        let reverb = convolve(&clean, rir)?;
        let reverb_rel = format!("reverb/{stem}__{}.wav", rir.id);
        wav::write_wav_f32(&out_dir.join(&reverb_rel), &reverb)?;

        entries.push(ManifestEntry {
            clean_path: clean_rel,
            rir_id: rir.id.clone(),
            t60: rir.spec.t60,
            split,
            reverb_path: reverb_rel,
        });
    }
    // Manifest rows in the deterministic clean-file order.
    entries.sort_by(|a, b| a.clean_path.cmp(&b.clean_path));

    let manifest = DatasetManifest {
        entries,
        base_dir: out_dir.to_path_buf(),
    };
    manifest.save(&out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

/// Emit `count` synthetic clean utterances into a directory.
pub fn synth_clean_corpus(
    dir: &Path,
    count: usize,
    duration_secs: f64,
    sample_rate: u32,
    seed: u64,
) -> Result<Vec<PathBuf>, RoomError> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(count);
    for i in 0..count {
        let w = super::synth::speech_like(&super::synth::SynthConfig {
            duration_secs,
            sample_rate,
            seed: derive_seed(seed, 5, i as u64),
        });
        let path = dir.join(format!("synth-{i:03}.wav"));
        wav::write_wav_f32(&path, &w)?;
        paths.push(path);
    }
    Ok(paths)
}
