//! Deterministic synthetic audio-visual stream: a sequence of species, each
//! carrying the four shared intensity directions plus a species-specific
//! signature, with per-species noise knobs for each modality. The generator
//! is seed-driven end to end, so equal configs produce bit-identical data.
//!
//! Construction per sample of (species s, intensity i):
//!   clean = mu_i + 1.5 * o_s + c_s * nu_{(i+s) mod 4}
//! where the mu_i are orthonormal intensity directions shared by every
//! species, o_s is the species' own orthonormal offset (the fixed 1.5 gain
//! keeps species identifiable by nearest mean even when the expression
//! component is strong), the nu_j are a second orthonormal set rotated into
//! the signal per species, and
//! c_s = rotation_strength * sin(pi(s+1/2)/n). The shifted nu pairing makes
//! each species express the same intensity differently: the direction that
//! accompanies "weak" for one species accompanies "medium" for the next, so
//! classifiers that lean on the expression component of the newest species
//! misread earlier ones, while the shared mu_i keep a species-agnostic
//! solution available. Audio is the clean vector plus Gaussian noise; visual
//! tiles the clean vector over frames and spatial cells with a fixed
//! sinusoidal gain pattern plus independent cell noise.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read as IoRead, Write as IoWrite};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{CoreError, Result};
use crate::fusion::{FeaturePair, Intensity, VisualTensor};
use crate::seeding::derive_seed;

/// Magic bytes of the serialized split files.
pub const STREAM_MAGIC: &[u8; 4] = b"AVC1";
/// Format version written into split files.
pub const STREAM_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_species: usize,
    pub samples_per_class_train: usize,
    pub samples_per_class_val: usize,
    pub samples_per_class_test: usize,
    pub d: usize,
    pub frames: usize,
    pub spatial: usize,
    /// Audio noise standard deviation per species.
    pub audio_noise: Vec<f64>,
    /// Visual noise standard deviation per species.
    pub visual_noise: Vec<f64>,
    pub species_rotation_strength: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_species: 6,
            samples_per_class_train: 200,
            samples_per_class_val: 30,
            samples_per_class_test: 60,
            d: 16,
            frames: 4,
            spatial: 4,
            audio_noise: vec![1.0; 6],
            visual_noise: vec![1.0; 6],
            species_rotation_strength: 3.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Smallest channel dimension that can host the orthonormal direction
    /// sets: four intensity directions, four expression directions, and one
    /// offset per species.
    pub fn min_d(n_species: usize) -> usize {
        2 * Intensity::COUNT + n_species
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_species == 0 {
            return Err(CoreError::InvalidArgument("need at least one species".into()));
        }
        if self.d < Self::min_d(self.n_species) {
            return Err(CoreError::InvalidArgument(format!(
                "d = {} too small for 4 intensity directions plus {} species offsets; need d >= {}",
                self.d,
                self.n_species,
                Self::min_d(self.n_species)
            )));
        }
        if self.frames == 0 || self.spatial == 0 {
            return Err(CoreError::InvalidArgument("frames and spatial must be >= 1".into()));
        }
        if self.samples_per_class_train == 0
            || self.samples_per_class_val == 0
            || self.samples_per_class_test == 0
        {
            return Err(CoreError::InvalidArgument("split sizes must be >= 1".into()));
        }
        if self.audio_noise.len() != self.n_species || self.visual_noise.len() != self.n_species {
            return Err(CoreError::InvalidArgument(format!(
                "noise knobs must list all {} species",
                self.n_species
            )));
        }
        let all_noise = self.audio_noise.iter().chain(self.visual_noise.iter());
        if !all_noise.clone().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(CoreError::InvalidArgument("noise values must be finite and >= 0".into()));
        }
        if !(self.species_rotation_strength >= 0.0) || !self.species_rotation_strength.is_finite()
        {
            return Err(CoreError::InvalidArgument("rotation strength must be >= 0".into()));
        }
        Ok(())
    }
}

/// One species' train/val/test splits, in stream order.
#[derive(Debug, Clone)]
pub struct SpeciesStage {
    pub species_id: u64,
    pub train: Vec<FeaturePair>,
    pub val: Vec<FeaturePair>,
    pub test: Vec<FeaturePair>,
}

/// Draws `count` orthonormal vectors in dimension d via Gram-Schmidt over
/// seeded Gaussian draws.
fn orthonormal_set(d: usize, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut attempts = 0;
    while basis.len() < count {
        if attempts > 32 * count {
            return Err(CoreError::SolverFailure(
                "could not orthonormalize direction set".into(),
            ));
        }
        attempts += 1;
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= dot * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            for x in v.iter_mut() {
                *x /= norm;
            }
            basis.push(v);
        }
    }
    Ok(basis)
}

/// Gain on the species offset direction relative to the intensity and
/// expression directions.
const OFFSET_GAIN: f64 = 1.5;

/// Fixed multiplicative gain of visual cell (frame l, position s).
fn cell_gain(l: usize, s: usize, frames: usize, spatial: usize) -> f64 {
    let idx = (l * spatial + s) as f64;
    let total = (frames * spatial) as f64;
    1.0 + 0.25 * (2.0 * std::f64::consts::PI * idx / total).sin()
}

struct Directions {
    mu: Vec<Vec<f64>>,
    nu: Vec<Vec<f64>>,
    offsets: Vec<Vec<f64>>,
}

fn directions(cfg: &SynthConfig) -> Result<Directions> {
    let total = 2 * Intensity::COUNT + cfg.n_species;
    let mut set = orthonormal_set(cfg.d, total, derive_seed(cfg.seed, 1_000))?;
    let offsets = set.split_off(2 * Intensity::COUNT);
    let nu = set.split_off(Intensity::COUNT);
    Ok(Directions { mu: set, nu, offsets })
}

fn clean_signal(dirs: &Directions, cfg: &SynthConfig, species: usize, intensity: Intensity) -> Vec<f64> {
    let n = cfg.n_species as f64;
    let c = cfg.species_rotation_strength
        * (std::f64::consts::PI * (species as f64 + 0.5) / n).sin();
    let i = intensity.index();
    let j = (i + species) % Intensity::COUNT;
    (0..cfg.d)
        .map(|k| dirs.mu[i][k] + OFFSET_GAIN * dirs.offsets[species][k] + c * dirs.nu[j][k])
        .collect()
}

fn draw_split(
    dirs: &Directions,
    cfg: &SynthConfig,
    species: usize,
    per_class: usize,
    split_seed: u64,
) -> Result<Vec<FeaturePair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed);
    let sigma_a = cfg.audio_noise[species];
    let sigma_v = cfg.visual_noise[species];
    let mut pairs = Vec::with_capacity(per_class * Intensity::COUNT);
    for intensity in Intensity::ALL {
        let clean = clean_signal(dirs, cfg, species, intensity);
        for _ in 0..per_class {
            let mut audio = clean.clone();
            if sigma_a > 0.0 {
                for a in audio.iter_mut() {
                    *a += sigma_a * rng.sample::<f64, _>(StandardNormal);
                }
            }
            let mut visual = VisualTensor::zeros(cfg.frames, cfg.spatial, cfg.d);
            for l in 0..cfg.frames {
                for s in 0..cfg.spatial {
                    let gain = cell_gain(l, s, cfg.frames, cfg.spatial);
                    let cell = visual.loc_mut(l, s);
                    for (k, c) in clean.iter().enumerate() {
                        cell[k] = gain * c;
                    }
                    if sigma_v > 0.0 {
                        for v in cell.iter_mut() {
                            *v += sigma_v * rng.sample::<f64, _>(StandardNormal);
                        }
                    }
                }
            }
            pairs.push(FeaturePair::new(audio, visual, intensity, species as u64)?);
        }
    }
    Ok(pairs)
}

/// Generates the full species stream in stage order, ids 0..n_species.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<SpeciesStage>> {
    cfg.validate()?;
    let dirs = directions(cfg)?;
    let mut stages = Vec::with_capacity(cfg.n_species);
    for s in 0..cfg.n_species {
        let base = derive_seed(cfg.seed, 2_000 + s as u64);
        stages.push(SpeciesStage {
            species_id: s as u64,
            train: draw_split(&dirs, cfg, s, cfg.samples_per_class_train, derive_seed(base, 0))?,
            val: draw_split(&dirs, cfg, s, cfg.samples_per_class_val, derive_seed(base, 1))?,
            test: draw_split(&dirs, cfg, s, cfg.samples_per_class_test, derive_seed(base, 2))?,
        });
    }
    Ok(stages)
}

/// Returns a degraded copy of a stage: extra Gaussian noise with standard
/// deviation `turbidity` on every visual cell and `acoustic_noise` on the
/// audio vector. Zero factors leave the copy bit-identical.
pub fn degrade(
    stage: &SpeciesStage,
    turbidity: f64,
    acoustic_noise: f64,
    seed: u64,
) -> Result<SpeciesStage> {
    if turbidity < 0.0 || acoustic_noise < 0.0 {
        return Err(CoreError::InvalidArgument("degradation factors must be >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = stage.clone();
    for split in [&mut out.train, &mut out.val, &mut out.test] {
        for pair in split.iter_mut() {
            if acoustic_noise > 0.0 {
                for a in pair.audio.iter_mut() {
                    *a += acoustic_noise * rng.sample::<f64, _>(StandardNormal);
                }
            }
            if turbidity > 0.0 {
                for v in pair.visual.data_mut().iter_mut() {
                    *v += turbidity * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
    }
    Ok(out)
}

fn write_u32(w: &mut impl IoWrite, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u64(w: &mut impl IoWrite, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl IoRead) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl IoRead) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s(r: &mut impl IoRead, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)?;
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

/// Writes one split to a versioned binary file. Layout: magic "AVC1",
/// version, generator seed, species id, d, frames, spatial, sample count,
/// then per sample an intensity byte, the audio vector, and the visual
/// tensor, all little-endian f64.
pub fn write_split(
    path: &Path,
    generator_seed: u64,
    species_id: u64,
    pairs: &[FeaturePair],
) -> Result<()> {
    if pairs.is_empty() {
        return Err(CoreError::InvalidArgument("refusing to write an empty split".into()));
    }
    let d = pairs[0].audio.len();
    let frames = pairs[0].visual.frames();
    let spatial = pairs[0].visual.spatial();
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(STREAM_MAGIC)?;
    write_u32(&mut w, STREAM_VERSION)?;
    write_u64(&mut w, generator_seed)?;
    write_u64(&mut w, species_id)?;
    write_u32(&mut w, d as u32)?;
    write_u32(&mut w, frames as u32)?;
    write_u32(&mut w, spatial as u32)?;
    write_u32(&mut w, pairs.len() as u32)?;
    for p in pairs {
        if p.audio.len() != d || p.visual.frames() != frames || p.visual.spatial() != spatial {
            return Err(CoreError::DimensionMismatch("ragged split".into()));
        }
        w.write_all(&[p.intensity.index() as u8])?;
        for a in &p.audio {
            w.write_all(&a.to_le_bytes())?;
        }
        for v in p.visual.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a split written by `write_split`; returns (generator seed, pairs).
pub fn read_split(path: &Path) -> Result<(u64, Vec<FeaturePair>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != STREAM_MAGIC {
        return Err(CoreError::BadFormat(format!(
            "bad magic {:?}, expected {:?}",
            magic, STREAM_MAGIC
        )));
    }
    let version = read_u32(&mut r)?;
    if version != STREAM_VERSION {
        return Err(CoreError::BadFormat(format!(
            "stream format version {version}, this build reads {STREAM_VERSION}"
        )));
    }
    let seed = read_u64(&mut r)?;
    let species_id = read_u64(&mut r)?;
    let d = read_u32(&mut r)? as usize;
    let frames = read_u32(&mut r)? as usize;
    let spatial = read_u32(&mut r)? as usize;
    let count = read_u32(&mut r)? as usize;
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..count {
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let intensity = Intensity::from_index(tag[0] as usize)?;
        let audio = read_f64s(&mut r, d)?;
        let visual =
            VisualTensor::from_vec(frames, spatial, d, read_f64s(&mut r, frames * spatial * d)?)?;
        pairs.push(FeaturePair::new(audio, visual, intensity, species_id)?);
    }
    // Trailing garbage means the file is not what we wrote.
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(CoreError::BadFormat("trailing bytes after declared samples".into()));
    }
    Ok((seed, pairs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> SynthConfig {
        SynthConfig {
            n_species: 2,
            samples_per_class_train: 3,
            samples_per_class_val: 2,
            samples_per_class_test: 2,
            d: 12,
            frames: 2,
            spatial: 2,
            audio_noise: vec![0.3, 0.3],
            visual_noise: vec![0.3, 0.3],
            species_rotation_strength: 0.5,
            seed: 9,
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = generate(&tiny_cfg()).unwrap();
        let b = generate(&tiny_cfg()).unwrap();
        assert_eq!(a.len(), b.len());
        for (sa, sb) in a.iter().zip(&b) {
            assert_eq!(sa.train.len(), sb.train.len());
            for (pa, pb) in sa.train.iter().zip(&sb.train) {
                assert_eq!(pa.audio, pb.audio);
                assert_eq!(pa.visual.data(), pb.visual.data());
                assert_eq!(pa.intensity, pb.intensity);
            }
        }
    }

    #[test]
    fn splits_are_exactly_class_balanced() {
        let stages = generate(&tiny_cfg()).unwrap();
        for stage in &stages {
            for (split, per_class) in [(&stage.train, 3), (&stage.val, 2), (&stage.test, 2)] {
                for intensity in Intensity::ALL {
                    let n = split.iter().filter(|p| p.intensity == intensity).count();
                    assert_eq!(n, per_class);
                }
            }
        }
    }

    #[test]
    fn noiseless_samples_share_the_class_signal() {
        let mut cfg = tiny_cfg();
        cfg.audio_noise = vec![0.0, 0.0];
        cfg.visual_noise = vec![0.0, 0.0];
        let stages = generate(&cfg).unwrap();
        let stage = &stages[0];
        let weak: Vec<_> =
            stage.train.iter().filter(|p| p.intensity == Intensity::Weak).collect();
        assert!(weak.windows(2).all(|w| w[0].audio == w[1].audio));
        let strong =
            stage.train.iter().find(|p| p.intensity == Intensity::Strong).unwrap();
        assert_ne!(weak[0].audio, strong.audio);
        // Different species express the same intensity differently.
        let other =
            stages[1].train.iter().find(|p| p.intensity == Intensity::Weak).unwrap();
        assert_ne!(weak[0].audio, other.audio);
    }

    #[test]
    fn shared_intensity_component_is_identical_across_species() {
        let cfg = tiny_cfg();
        let dirs = directions(&cfg).unwrap();
        for intensity in Intensity::ALL {
            let c0 = clean_signal(&dirs, &cfg, 0, intensity);
            let c1 = clean_signal(&dirs, &cfg, 1, intensity);
            for mu in &dirs.mu {
                let p0: f64 = c0.iter().zip(mu).map(|(x, y)| x * y).sum();
                let p1: f64 = c1.iter().zip(mu).map(|(x, y)| x * y).sum();
                assert!((p0 - p1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn degrade_zero_is_identity_and_noise_moves_data() {
        let stages = generate(&tiny_cfg()).unwrap();
        let same = degrade(&stages[0], 0.0, 0.0, 5).unwrap();
        assert_eq!(same.train[0].audio, stages[0].train[0].audio);
        assert_eq!(same.test[1].visual.data(), stages[0].test[1].visual.data());

        let fogged = degrade(&stages[0], 1.0, 0.0, 5).unwrap();
        assert_ne!(fogged.train[0].visual.data(), stages[0].train[0].visual.data());
        assert_eq!(fogged.train[0].audio, stages[0].train[0].audio);
        assert!(degrade(&stages[0], -1.0, 0.0, 5).is_err());
    }

    #[test]
    fn rejects_undersized_channel_dimension() {
        let mut cfg = tiny_cfg();
        cfg.d = 9;
        let err = generate(&cfg).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("need d >= 10"), "{msg}");
    }

    #[test]
    fn split_files_round_trip() {
        let cfg = tiny_cfg();
        let stages = generate(&cfg).unwrap();
        let dir = std::env::temp_dir().join("hail-synth-roundtrip");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("species0_train.avc1");
        write_split(&path, cfg.seed, 0, &stages[0].train).unwrap();
        let (seed, pairs) = read_split(&path).unwrap();
        assert_eq!(seed, cfg.seed);
        assert_eq!(pairs.len(), stages[0].train.len());
        for (a, b) in pairs.iter().zip(&stages[0].train) {
            assert_eq!(a.audio, b.audio);
            assert_eq!(a.visual.data(), b.visual.data());
            assert_eq!(a.intensity, b.intensity);
            assert_eq!(a.species_id, 0);
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn corrupt_headers_are_rejected() {
        let cfg = tiny_cfg();
        let stages = generate(&cfg).unwrap();
        let dir = std::env::temp_dir().join("hail-synth-corrupt");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("split.avc1");
        write_split(&path, cfg.seed, 0, &stages[0].val).unwrap();

        let bytes = std::fs::read(&path).unwrap();
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        std::fs::write(&path, &bad_magic).unwrap();
        assert!(matches!(read_split(&path), Err(CoreError::BadFormat(_))));

        let mut truncated = bytes.clone();
        truncated.truncate(bytes.len() - 7);
        std::fs::write(&path, &truncated).unwrap();
        assert!(read_split(&path).is_err());

        let mut wrong_version = bytes;
        wrong_version[4] = 9;
        std::fs::write(&path, &wrong_version).unwrap();
        let msg = read_split(&path).unwrap_err().to_string();
        assert!(msg.contains("version"), "{msg}");
        std::fs::remove_dir_all(&dir).ok();
    }
}
