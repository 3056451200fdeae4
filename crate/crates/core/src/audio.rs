//! Audio ingestion and conditioning: WAV I/O, band-limited resampling,
//! peak normalization and energy-based activity detection.

use std::f64::consts::PI;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

/// Sample rate every downstream stage assumes.
pub const PIPELINE_RATE_HZ: u32 = 16_000;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("malformed WAV header: {0}")]
    MalformedHeader(String),
    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("audio contains no samples")]
    EmptyAudio,
    #[error("clip of {len} samples is shorter than one {frame}-sample frame")]
    ClipTooShort { len: usize, frame: usize },
    #[error("invalid activity config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Mono waveform with its sample rate and identity.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub id: String,
    pub sample_rate_hz: u32,
    pub samples: Vec<f64>,
}

impl AudioClip {
    pub fn new(id: impl Into<String>, sample_rate_hz: u32, samples: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            sample_rate_hz,
            samples,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    pub fn is_silent(&self) -> bool {
        self.samples.iter().all(|&x| x == 0.0)
    }

    /// Returns a copy holding `samples` under the same id and rate.
    pub fn with_samples(&self, samples: Vec<f64>) -> Self {
        Self {
            id: self.id.clone(),
            sample_rate_hz: self.sample_rate_hz,
            samples,
        }
    }
}

/// Reads a 16-bit PCM or 32-bit float WAV file, averaging stereo to mono.
///
/// The clip id is the file stem.
pub fn read_wav(path: &Path) -> Result<AudioClip, AudioError> {
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let reader = hound::WavReader::open(path).map_err(map_hound)?;
    let spec = reader.spec();
    if spec.channels == 0 || spec.channels > 2 {
        return Err(AudioError::UnsupportedEncoding(format!(
            "{} channels",
            spec.channels
        )));
    }
    if spec.sample_rate == 0 {
        return Err(AudioError::MalformedHeader("zero sample rate".into()));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(map_hound)?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<Result<_, _>>()
            .map_err(map_hound)?,
        (fmt, bits) => {
            return Err(AudioError::UnsupportedEncoding(format!(
                "{bits}-bit {fmt:?}"
            )))
        }
    };
    let channels = spec.channels as usize;
    let samples: Vec<f64> = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(2)
            .map(|c| 0.5 * (c[0] + c[1]))
            .collect()
    };
    if samples.is_empty() {
        return Err(AudioError::EmptyAudio);
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(AudioError::UnsupportedEncoding("non-finite float samples".into()));
    }
    Ok(AudioClip::new(id, spec.sample_rate, samples))
}

fn map_hound(e: hound::Error) -> AudioError {
    match e {
        hound::Error::IoError(io) => AudioError::Io(io),
        hound::Error::Unsupported => AudioError::UnsupportedEncoding("codec not supported".into()),
        hound::Error::FormatError(msg) => AudioError::MalformedHeader(msg.to_string()),
        other => AudioError::MalformedHeader(other.to_string()),
    }
}

/// Quantizes an amplitude in [-1, 1] to 16-bit PCM without dithering.
pub fn to_pcm16(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Writes a mono clip as 16-bit PCM. The file is written to a temporary
/// sibling and renamed into place.
pub fn write_wav_pcm16(path: &Path, clip: &AudioClip) -> Result<(), AudioError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let tmp = tmp_sibling(path);
    {
        let mut w = hound::WavWriter::create(&tmp, spec).map_err(map_hound)?;
        for &x in &clip.samples {
            w.write_sample(to_pcm16(x)).map_err(map_hound)?;
        }
        w.finalize().map_err(map_hound)?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Writes a mono clip as 32-bit float PCM.
pub fn write_wav_f32(path: &Path, clip: &AudioClip) -> Result<(), AudioError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate_hz,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let tmp = tmp_sibling(path);
    {
        let mut w = hound::WavWriter::create(&tmp, spec).map_err(map_hound)?;
        for &x in &clip.samples {
            w.write_sample(x as f32).map_err(map_hound)?;
        }
        w.finalize().map_err(map_hound)?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn tmp_sibling(path: &Path) -> std::path::PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

// Zero crossings of the interpolation kernel on each side of the centre.
const RESAMPLE_TAPS: usize = 32;
const KAISER_BETA: f64 = 8.0;

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Band-limited resampling with a Kaiser-windowed sinc kernel.
///
/// The kernel cutoff is the lower of the two Nyquist rates; the output holds
/// `round(len * target / src)` samples. Identity when the rates match.
pub fn resample(clip: &AudioClip, target_hz: u32) -> AudioClip {
    assert!(target_hz > 0, "target rate must be positive");
    let src_hz = clip.sample_rate_hz;
    if src_hz == target_hz {
        return clip.clone();
    }
    let ratio = target_hz as f64 / src_hz as f64;
    let out_len = ((clip.len() as f64 * ratio).round() as usize).max(1);
    // cutoff as a fraction of the source Nyquist
    let fc = ratio.min(1.0);
    let half_width = RESAMPLE_TAPS as f64 / fc;
    let i0_beta = bessel_i0(KAISER_BETA);
    let x = &clip.samples;
    let n = x.len() as isize;
    let mut out = Vec::with_capacity(out_len);
    for j in 0..out_len {
        let t = j as f64 / ratio;
        let lo = (t - half_width).ceil() as isize;
        let hi = (t + half_width).floor() as isize;
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for i in lo..=hi {
            let u = t - i as f64;
            let r = u / half_width;
            if r.abs() > 1.0 {
                continue;
            }
            let w = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta;
            let h = fc * sinc(fc * u) * w;
            wsum += h;
            if (0..n).contains(&i) {
                acc += x[i as usize] * h;
            }
        }
        // normalizing by the full kernel sum makes DC gain exactly one
        out.push(if wsum != 0.0 { acc / wsum } else { 0.0 });
    }
    AudioClip::new(clip.id.clone(), target_hz, out)
}

/// Divides every sample by the peak magnitude. All-zero clips pass through.
pub fn peak_normalize(clip: &AudioClip) -> AudioClip {
    let peak = clip.peak();
    if peak == 0.0 {
        return clip.clone();
    }
    clip.with_samples(clip.samples.iter().map(|x| x / peak).collect())
}

/// Parameters of the frame-energy activity detector.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActivityConfig {
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub rel_energy_threshold: f64,
    pub merge_gap_ms: f64,
    pub pad_ms: f64,
}

impl Default for ActivityConfig {
    fn default() -> Self {
        Self {
            frame_ms: 25.0,
            hop_ms: 10.0,
            rel_energy_threshold: 0.01,
            merge_gap_ms: 200.0,
            pad_ms: 100.0,
        }
    }
}

impl ActivityConfig {
    pub fn validate(&self) -> Result<(), AudioError> {
        if !(self.hop_ms > 0.0 && self.frame_ms >= self.hop_ms) {
            return Err(AudioError::BadConfig("need frame_ms >= hop_ms > 0".into()));
        }
        if !(self.rel_energy_threshold > 0.0 && self.rel_energy_threshold < 1.0) {
            return Err(AudioError::BadConfig("threshold must lie in (0, 1)".into()));
        }
        if self.merge_gap_ms < 0.0 || self.pad_ms < 0.0 {
            return Err(AudioError::BadConfig("gap and pad must be non-negative".into()));
        }
        Ok(())
    }
}

fn ms_to_samples(ms: f64, rate: u32) -> usize {
    (ms * rate as f64 / 1000.0).round() as usize
}

/// Half-open sample ranges `[start, end)` where the clip is active.
///
/// A frame is active when its energy reaches `rel_energy_threshold` times
/// the loudest frame. Regions separated by less than `merge_gap_ms` are
/// merged, then padded by `pad_ms` and clamped. Output is sorted and
/// disjoint.
pub fn detect_activity(
    clip: &AudioClip,
    cfg: &ActivityConfig,
) -> Result<Vec<(usize, usize)>, AudioError> {
    cfg.validate()?;
    let rate = clip.sample_rate_hz;
    let frame = ms_to_samples(cfg.frame_ms, rate).max(1);
    let hop = ms_to_samples(cfg.hop_ms, rate).max(1);
    let len = clip.len();
    if len < frame {
        return Err(AudioError::ClipTooShort { len, frame });
    }
    let n_frames = (len - frame) / hop + 1;
    let energies: Vec<f64> = (0..n_frames)
        .map(|f| {
            clip.samples[f * hop..f * hop + frame]
                .iter()
                .map(|x| x * x)
                .sum()
        })
        .collect();
    let max_e = energies.iter().cloned().fold(0.0_f64, f64::max);
    if max_e == 0.0 {
        return Ok(Vec::new());
    }
    let thresh = cfg.rel_energy_threshold * max_e;

    let mut regions: Vec<(usize, usize)> = Vec::new();
    for (f, &e) in energies.iter().enumerate() {
        if e < thresh {
            continue;
        }
        let (s, t) = (f * hop, f * hop + frame);
        match regions.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(t),
            _ => regions.push((s, t)),
        }
    }

    let gap = ms_to_samples(cfg.merge_gap_ms, rate);
    let pad = ms_to_samples(cfg.pad_ms, rate);
    let mut out: Vec<(usize, usize)> = Vec::new();
    for (s, t) in regions {
        let s = s.saturating_sub(pad);
        let t = (t + pad).min(len);
        match out.last_mut() {
            Some(last) if s <= last.1 || s - last.1 < gap => last.1 = last.1.max(t),
            _ => out.push((s, t)),
        }
    }
    Ok(out)
}

/// Concatenates the active ranges of a clip. Returns an empty clip when no
/// activity was found.
pub fn trim_to_activity(clip: &AudioClip, ranges: &[(usize, usize)]) -> AudioClip {
    let mut samples = Vec::new();
    for &(s, t) in ranges {
        samples.extend_from_slice(&clip.samples[s..t]);
    }
    clip.with_samples(samples)
}
