use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{pool_frame, NeuralError};
use crate::exec::Exec;
use crate::meta::{config_hash, VERSION};
use crate::rng::{stream_rng, Stream};
use crate::sensor::{SensorConfig, ASCAN_LEN};

pub const RECORDING_MAGIC: &[u8; 8] = b"TFCAL\0\0\0";
const RECORDING_VERSION: u32 = 2;
/// Frames rendered per rng stream; fixes the output independent of thread count.
const CHUNK: usize = 1024;

/// Cyclic axial loading against a rigid surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub n: usize,
    pub sample_rate_hz: f64,
    pub components: usize,
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub force_max_n: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            n: 60_000,
            sample_rate_hz: 200.0,
            components: 3,
            f_min_hz: 0.2,
            f_max_hz: 2.0,
            force_max_n: 5.0,
        }
    }
}

/// Rectified sum of sinusoids with random frequencies and phases, scaled so its
/// maximum over the `n` samples equals `force_max_n`.
pub fn calibration_profile<R: Rng + ?Sized>(cfg: &CalibrationConfig, rng: &mut R) -> Vec<f64> {
    let comps: Vec<(f64, f64)> = (0..cfg.components)
        .map(|_| {
            let f = rng.gen_range(cfg.f_min_hz..=cfg.f_max_hz);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            (f, phase)
        })
        .collect();
    let raw: Vec<f64> = (0..cfg.n)
        .map(|i| {
            let t = i as f64 / cfg.sample_rate_hz;
            comps
                .iter()
                .map(|&(f, ph)| (std::f64::consts::TAU * f * t + ph).sin())
                .sum::<f64>()
                .abs()
        })
        .collect();
    let peak = raw.iter().copied().fold(0.0, f64::max);
    let scale = if peak > 0.0 {
        cfg.force_max_n / peak
    } else {
        0.0
    };
    raw.into_iter()
        .map(|v| (v * scale).min(cfg.force_max_n))
        .collect()
}

/// Synchronized A-scans and force labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub height: usize,
    pub sample_rate_hz: f64,
    pub seed: u64,
    /// Crate version that rendered the recording.
    pub version: String,
    /// Hash of the calibration and sensor configuration plus the stream tag.
    pub config_hash: String,
    pub t_s: Vec<f64>,
    pub force_n: Vec<f32>,
    /// `len() * height` intensities, frame-major.
    pub frames: Vec<f32>,
}

/// Renders a calibration recording. `stream` separates training data from the
/// held-out test stream drawn with the same seed.
pub fn generate_recording(
    cfg: &CalibrationConfig,
    sensor: &SensorConfig,
    seed: u64,
    stream: Stream,
    exec: Exec,
) -> Result<Recording, NeuralError> {
    if cfg.n < 1000 {
        return Err(NeuralError::Dataset(format!(
            "calibration needs at least 1000 samples, got {}",
            cfg.n
        )));
    }
    let force = calibration_profile(cfg, &mut stream_rng(seed, stream, u64::MAX));
    let t_s: Vec<f64> = (0..cfg.n).map(|i| i as f64 / cfg.sample_rate_hz).collect();
    let chunks = cfg.n.div_ceil(CHUNK);
    let parts = exec.map_range(chunks, |c| {
        let mut rng = stream_rng(seed, stream, c as u64);
        let mut out = Vec::with_capacity(CHUNK * ASCAN_LEN);
        for i in c * CHUNK..((c + 1) * CHUNK).min(cfg.n) {
            let frame = sensor
                .sense(force[i], t_s[i], &mut rng)
                .expect("profile is non-negative");
            out.extend_from_slice(&frame.intensities);
        }
        out
    });
    Ok(Recording {
        height: ASCAN_LEN,
        sample_rate_hz: cfg.sample_rate_hz,
        seed,
        version: VERSION.to_string(),
        config_hash: config_hash(&(cfg, sensor, stream as u64)),
        t_s,
        force_n: force.iter().map(|&f| f as f32).collect(),
        frames: parts.concat(),
    })
}

fn read_array<const N: usize>(r: &mut impl Read) -> std::io::Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

impl Recording {
    pub fn len(&self) -> usize {
        self.force_n.len()
    }

    pub fn is_empty(&self) -> bool {
        self.force_n.is_empty()
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        &self.frames[i * self.height..(i + 1) * self.height]
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(RECORDING_MAGIC)?;
        w.write_all(&RECORDING_VERSION.to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&(self.height as u32).to_le_bytes())?;
        w.write_all(&self.sample_rate_hz.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for s in [&self.version, &self.config_hash] {
            w.write_all(&(s.len() as u32).to_le_bytes())?;
            w.write_all(s.as_bytes())?;
        }
        for i in 0..self.len() {
            w.write_all(&self.t_s[i].to_le_bytes())?;
            w.write_all(&self.force_n[i].to_le_bytes())?;
            for v in self.frame(i) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, NeuralError> {
        let magic: [u8; 8] = read_array(r)?;
        if &magic != RECORDING_MAGIC {
            return Err(NeuralError::Dataset(
                "not a calibration recording (bad magic)".into(),
            ));
        }
        let version = u32::from_le_bytes(read_array(r)?);
        if version != RECORDING_VERSION {
            return Err(NeuralError::Dataset(format!(
                "unsupported recording version {version}"
            )));
        }
        let n = u64::from_le_bytes(read_array(r)?) as usize;
        let height = u32::from_le_bytes(read_array(r)?) as usize;
        let sample_rate_hz = f64::from_le_bytes(read_array(r)?);
        let seed = u64::from_le_bytes(read_array(r)?);
        let mut text = || -> Result<String, NeuralError> {
            let len = u32::from_le_bytes(read_array(r)?) as usize;
            if len > 256 {
                return Err(NeuralError::Dataset("corrupt recording header".into()));
            }
            let mut b = vec![0u8; len];
            r.read_exact(&mut b)?;
            String::from_utf8(b)
                .map_err(|_| NeuralError::Dataset("corrupt recording header".into()))
        };
        let version = text()?;
        let config_hash = text()?;
        if height == 0 || n == 0 {
            return Err(NeuralError::Dataset("empty recording".into()));
        }
        let mut t_s = Vec::with_capacity(n);
        let mut force_n = Vec::with_capacity(n);
        let mut frames = Vec::with_capacity(n * height);
        let mut buf = vec![0u8; height * 4];
        for _ in 0..n {
            t_s.push(f64::from_le_bytes(read_array(r)?));
            force_n.push(f32::from_le_bytes(read_array(r)?));
            r.read_exact(&mut buf)?;
            frames.extend(
                buf.chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            );
        }
        Ok(Self {
            height,
            sample_rate_hz,
            seed,
            version,
            config_hash,
            t_s,
            force_n,
            frames,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), NeuralError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NeuralError> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    /// First `n` samples as a new recording.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            height: self.height,
            sample_rate_hz: self.sample_rate_hz,
            seed: self.seed,
            version: self.version.clone(),
            config_hash: self.config_hash.clone(),
            t_s: self.t_s[..n].to_vec(),
            force_n: self.force_n[..n].to_vec(),
            frames: self.frames[..n * self.height].to_vec(),
        }
    }
}

/// Pooled frames with stride-1 sequence windows; window `i` covers frames
/// `i..i + seq_len` and is labelled with the force at its last frame.
#[derive(Debug, Clone)]
pub struct WindowSet {
    pub frame_len: usize,
    pub seq_len: usize,
    pub pooled: Vec<f32>,
    pub labels: Vec<f32>,
}

impl WindowSet {
    pub fn new(rec: &Recording, pool: usize, seq_len: usize) -> Result<Self, NeuralError> {
        if pool == 0 || !rec.height.is_multiple_of(pool) {
            return Err(NeuralError::Dataset(format!(
                "pool factor {pool} does not divide the A-scan height {}",
                rec.height
            )));
        }
        if rec.len() < seq_len || seq_len == 0 {
            return Err(NeuralError::Dataset(format!(
                "recording of {} frames is shorter than one window of {seq_len}",
                rec.len()
            )));
        }
        let frame_len = rec.height / pool;
        let mut pooled = vec![0.0f32; rec.len() * frame_len];
        for (i, out) in pooled.chunks_exact_mut(frame_len).enumerate() {
            pool_frame(rec.frame(i), pool, out);
        }
        Ok(Self {
            frame_len,
            seq_len,
            pooled,
            labels: rec.force_n.clone(),
        })
    }

    pub fn n_frames(&self) -> usize {
        self.labels.len()
    }

    pub fn len(&self) -> usize {
        self.n_frames() + 1 - self.seq_len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn window(&self, i: usize) -> &[f32] {
        &self.pooled[i * self.frame_len..(i + self.seq_len) * self.frame_len]
    }

    pub fn label(&self, i: usize) -> f32 {
        self.labels[i + self.seq_len - 1]
    }

    pub fn pooled_frame(&self, i: usize) -> &[f32] {
        &self.pooled[i * self.frame_len..(i + 1) * self.frame_len]
    }

    /// Contiguous train/validation split by frame; windows straddling the cut are dropped.
    pub fn split(&self, val_fraction: f64) -> (Range<usize>, Range<usize>) {
        let n = self.n_frames();
        let cut = ((n as f64) * (1.0 - val_fraction)).round() as usize;
        let cut = cut.clamp(self.seq_len, n);
        let train = 0..cut + 1 - self.seq_len;
        let val = if n >= cut + self.seq_len {
            cut..n + 1 - self.seq_len
        } else {
            cut..cut
        };
        (train, val)
    }

    pub fn label_mean(&self, range: Range<usize>) -> f64 {
        let n = range.len().max(1) as f64;
        range.map(|i| self.label(i) as f64).sum::<f64>() / n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize) -> Recording {
        let cfg = CalibrationConfig {
            n,
            ..Default::default()
        };
        generate_recording(
            &cfg,
            &SensorConfig::default(),
            3,
            Stream::Calibration,
            Exec::Sequential,
        )
        .unwrap()
    }

    #[test]
    fn window_count_matches_n_minus_t_plus_one() {
        let rec = small(2000);
        let ws = WindowSet::new(&rec, 8, 50).unwrap();
        assert_eq!(ws.len(), 1951);
        let (tr, va) = ws.split(0.1);
        assert_eq!(tr.len() + va.len() + 49, ws.len());
        assert!(tr.end <= va.start);
        // no frame is shared between the two sides
        assert!(tr.end - 1 + 50 <= va.start);
    }

    #[test]
    fn labels_bounded_and_profile_spans_range() {
        let cfg = CalibrationConfig::default();
        let prof = calibration_profile(&cfg, &mut stream_rng(1, Stream::Calibration, u64::MAX));
        assert!(prof.iter().all(|&f| (0.0..=5.0).contains(&f)));
        let mut bins = [false; 50];
        for f in prof {
            bins[((f / 0.1) as usize).min(49)] = true;
        }
        assert!(bins.iter().filter(|&&b| b).count() as f64 >= 0.95 * 50.0);
    }

    #[test]
    fn too_few_samples_rejected() {
        let cfg = CalibrationConfig {
            n: 999,
            ..Default::default()
        };
        assert!(generate_recording(
            &cfg,
            &SensorConfig::default(),
            0,
            Stream::Calibration,
            Exec::Sequential
        )
        .is_err());
    }

    #[test]
    fn binary_round_trip() {
        let rec = small(1000);
        let mut buf = Vec::new();
        rec.write_to(&mut buf).unwrap();
        let back = Recording::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, rec);
        buf[0] = b'X';
        assert!(Recording::read_from(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn generation_independent_of_executor() {
        let cfg = CalibrationConfig {
            n: 2500,
            ..Default::default()
        };
        let s = SensorConfig::default();
        let a = generate_recording(&cfg, &s, 9, Stream::Calibration, Exec::Sequential).unwrap();
        let b = generate_recording(&cfg, &s, 9, Stream::Calibration, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }
}
