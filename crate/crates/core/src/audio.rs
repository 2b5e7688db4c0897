//! Audio clips: 16-bit PCM WAV codec, energy endpointing, noise injection
//! and the synthetic word tokens used for desk-scale experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sample rates accepted by the codec and the front end.
pub const SUPPORTED_RATES: [u32; 2] = [8000, 16000];

/// Number of classes [`synthesize_word_token`] knows about: ten digits and two operators.
pub const SYNTHETIC_CLASSES: usize = 12;

/// Peak amplitude of every synthetic token.
pub const SYNTHETIC_PEAK: f64 = 0.5;

const WAV_FORMAT_PCM: u16 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AudioError {
    #[error("malformed WAV: {0}")]
    MalformedWav(String),
    #[error("unsupported WAV format: {0}")]
    UnsupportedFormat(String),
    #[error("NoSpeech: no frame above the silence floor")]
    NoSpeech,
    #[error("clip of {len} samples is shorter than one {frame}-sample frame")]
    ClipTooShort { len: usize, frame: usize },
    #[error("SilentSignal: cannot scale noise against a zero-power signal")]
    SilentSignal,
    #[error("unknown synthetic class {0} (expected < {SYNTHETIC_CLASSES})")]
    UnknownClass(usize),
    #[error("invalid audio clip: {0}")]
    InvalidClip(String),
}

/// Mono audio with samples normalized to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    /// Builds a clip, rejecting out-of-range or non-finite samples and unsupported rates.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, AudioError> {
        if !SUPPORTED_RATES.contains(&sample_rate) {
            return Err(AudioError::UnsupportedFormat(format!(
                "sample rate {sample_rate} Hz"
            )));
        }
        if let Some((i, s)) = samples
            .iter()
            .enumerate()
            .find(|(_, s)| !(-1.0..=1.0).contains(*s))
        {
            return Err(AudioError::InvalidClip(format!(
                "sample {i} = {s} outside [-1, 1]"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// Builds a clip after clamping every sample into `[-1, 1]`.
    pub fn from_clamped(samples: Vec<f64>, sample_rate: u32) -> Result<Self, AudioError> {
        let samples = samples
            .into_iter()
            .map(|s| if s.is_nan() { 0.0 } else { s.clamp(-1.0, 1.0) })
            .collect();
        Self::new(samples, sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Mean squared amplitude.
    pub fn power(&self) -> f64 {
        mean_square(&self.samples)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |m, s| m.max(s.abs()))
    }

    /// Multiplies every sample by `gain`, clamping the result.
    pub fn scaled(&self, gain: f64) -> Self {
        let samples = self
            .samples
            .iter()
            .map(|s| (s * gain).clamp(-1.0, 1.0))
            .collect();
        Self {
            samples,
            sample_rate: self.sample_rate,
        }
    }

    pub(crate) fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            samples: self.samples[start..end].to_vec(),
            sample_rate: self.sample_rate,
        }
    }

    pub(crate) fn with_samples(&self, samples: Vec<f64>) -> Self {
        Self {
            samples,
            sample_rate: self.sample_rate,
        }
    }
}

pub(crate) fn mean_square(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|s| s * s).sum::<f64>() / x.len() as f64
}

/// Converts a duration in milliseconds into a whole number of samples.
pub fn ms_to_samples(ms: f64, sample_rate: u32) -> usize {
    (ms * f64::from(sample_rate) / 1000.0).round() as usize
}

// ---------------------------------------------------------------------------
// WAV codec

fn read_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

struct FmtChunk {
    format: u16,
    channels: u16,
    sample_rate: u32,
    bits_per_sample: u16,
}

/// Decodes a RIFF/WAVE byte buffer holding 16-bit mono PCM at 8 or 16 kHz.
///
/// Unknown chunks are skipped. Samples are scaled by `1/32768`.
pub fn load_wav(bytes: &[u8]) -> Result<AudioClip, AudioError> {
    let malformed = |m: &str| AudioError::MalformedWav(m.to_string());
    if bytes.len() < 12 {
        return Err(malformed("file shorter than the RIFF header"));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(malformed("missing RIFF magic"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(malformed("missing WAVE form type"));
    }

    let mut fmt: Option<FmtChunk> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos < bytes.len() {
        if pos + 8 > bytes.len() {
            return Err(malformed("truncated chunk header"));
        }
        let id = &bytes[pos..pos + 4];
        let size = read_u32(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| {
                malformed(&format!(
                    "chunk '{}' overruns the file",
                    String::from_utf8_lossy(id)
                ))
            })?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(malformed("fmt chunk shorter than 16 bytes"));
                }
                fmt = Some(FmtChunk {
                    format: read_u16(body, 0),
                    channels: read_u16(body, 2),
                    sample_rate: read_u32(body, 4),
                    bits_per_sample: read_u16(body, 14),
                });
            }
            b"data" => {
                if data.is_none() {
                    data = Some(body);
                }
            }
            _ => {}
        }
        // chunks are word aligned
        pos = body_end + (size & 1);
    }

    let fmt = fmt.ok_or_else(|| malformed("no fmt chunk"))?;
    let data = data.ok_or_else(|| malformed("no data chunk"))?;

    if fmt.format != WAV_FORMAT_PCM {
        return Err(AudioError::UnsupportedFormat(format!(
            "format code {} (only PCM = 1)",
            fmt.format
        )));
    }
    if fmt.channels != 1 {
        return Err(AudioError::UnsupportedFormat(format!(
            "{} channels (only mono)",
            fmt.channels
        )));
    }
    if fmt.bits_per_sample != 16 {
        return Err(AudioError::UnsupportedFormat(format!(
            "{} bits per sample (only 16)",
            fmt.bits_per_sample
        )));
    }
    if !SUPPORTED_RATES.contains(&fmt.sample_rate) {
        return Err(AudioError::UnsupportedFormat(format!(
            "sample rate {} Hz (only 8000 or 16000)",
            fmt.sample_rate
        )));
    }
    if data.len() % 2 != 0 {
        return Err(malformed("data chunk length is not a multiple of 2"));
    }

    let samples = data
        .chunks_exact(2)
        .map(|b| f64::from(i16::from_le_bytes([b[0], b[1]])) / 32768.0)
        .collect();
    Ok(AudioClip {
        samples,
        sample_rate: fmt.sample_rate,
    })
}

/// Quantizes one sample to int16.
///
/// The scale matches the decoder (`32768`) so decoded files re-encode bit for bit;
/// the range is clamped symmetrically to `±32767`.
pub fn quantize_sample(s: f64) -> i16 {
    (s * 32768.0).round().clamp(-32767.0, 32767.0) as i16
}

/// Encodes a clip as a canonical 44-byte-header PCM WAV file.
pub fn save_wav(clip: &AudioClip) -> Vec<u8> {
    let data_len = (clip.samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&WAV_FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &clip.samples {
        out.extend_from_slice(&quantize_sample(s).to_le_bytes());
    }
    out
}

// ---------------------------------------------------------------------------
// Endpoint detection

/// Short-time energy endpointer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub frame_len_ms: f64,
    pub shift_ms: f64,
    /// Fraction of the peak frame energy a frame needs to count as speech.
    pub threshold_ratio: f64,
    pub margin_frames: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            frame_len_ms: 25.0,
            shift_ms: 10.0,
            threshold_ratio: 0.05,
            margin_frames: 3,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.threshold_ratio > 0.0 && self.threshold_ratio < 1.0) {
            return Err(format!(
                "endpoint.threshold_ratio must lie in (0, 1), got {}",
                self.threshold_ratio
            ));
        }
        if !(self.shift_ms > 0.0 && self.frame_len_ms >= self.shift_ms) {
            return Err(format!(
                "endpoint frame length ({} ms) must be >= shift ({} ms) > 0",
                self.frame_len_ms, self.shift_ms
            ));
        }
        Ok(())
    }
}

/// Energy floor below which a whole clip is treated as silence.
pub const SILENCE_ENERGY: f64 = 1e-10;

/// Trims leading and trailing silence.
///
/// Keeps the span from the first to the last frame whose energy reaches
/// `threshold_ratio` of the loudest frame, padded by `margin_frames` frames
/// on each side. The cut points sit on the frame grid, so trimming an
/// already trimmed clip is a no-op.
pub fn detect_endpoints(clip: &AudioClip, cfg: &EndpointConfig) -> Result<AudioClip, AudioError> {
    let frame = ms_to_samples(cfg.frame_len_ms, clip.sample_rate).max(1);
    let shift = ms_to_samples(cfg.shift_ms, clip.sample_rate).max(1);
    let len = clip.len();
    if len < frame {
        return Err(AudioError::ClipTooShort { len, frame });
    }
    let n_frames = (len - frame) / shift + 1;
    let energies: Vec<f64> = (0..n_frames)
        .map(|f| {
            clip.samples[f * shift..f * shift + frame]
                .iter()
                .map(|s| s * s)
                .sum()
        })
        .collect();
    let max_energy = energies.iter().copied().fold(0.0, f64::max);
    if max_energy < SILENCE_ENERGY {
        return Err(AudioError::NoSpeech);
    }
    let threshold = cfg.threshold_ratio * max_energy;
    let first = energies.iter().position(|&e| e >= threshold).unwrap_or(0);
    let last = energies.iter().rposition(|&e| e >= threshold).unwrap_or(0);

    let start = first.saturating_sub(cfg.margin_frames) * shift;
    let last_kept = last + cfg.margin_frames;
    let end = if last_kept >= n_frames - 1 {
        len
    } else {
        (last_kept * shift + frame).min(len)
    };
    Ok(clip.slice(start, end))
}

// ---------------------------------------------------------------------------
// Noise injection

/// Zero-mean Gaussian noise of exactly `power` mean squared amplitude.
pub fn gaussian_noise(len: usize, power: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
    let mean = noise.iter().sum::<f64>() / len.max(1) as f64;
    noise.iter_mut().for_each(|n| *n -= mean);
    let realized = mean_square(&noise);
    if realized > 0.0 {
        let gain = (power / realized).sqrt();
        noise.iter_mut().for_each(|n| *n *= gain);
    }
    noise
}

/// Adds white Gaussian noise at the requested SNR (dB).
///
/// The noise is rescaled after generation so that its realized power gives the
/// SNR exactly. `f64::INFINITY` means clean and returns the clip unchanged.
pub fn add_noise(clip: &AudioClip, snr_db: f64, seed: u64) -> Result<AudioClip, AudioError> {
    if snr_db == f64::INFINITY {
        return Ok(clip.clone());
    }
    let signal_power = clip.power();
    if signal_power <= 0.0 {
        return Err(AudioError::SilentSignal);
    }
    let noise_power = signal_power / 10f64.powf(snr_db / 10.0);
    let noise = gaussian_noise(clip.len(), noise_power, seed);
    let samples = clip
        .samples
        .iter()
        .zip(&noise)
        .map(|(s, n)| (s + n).clamp(-1.0, 1.0))
        .collect();
    Ok(clip.with_samples(samples))
}

// ---------------------------------------------------------------------------
// Synthetic word tokens

/// Formant targets (Hz) at the start, middle and end of each synthetic word.
const CLASS_FORMANTS: [[[f64; 3]; 3]; SYNTHETIC_CLASSES] = [
    [[280.0, 2250.0, 2900.0], [450.0, 1700.0, 2500.0], [500.0, 900.0, 2450.0]], // zero
    [[300.0, 870.0, 2250.0], [640.0, 1190.0, 2390.0], [400.0, 1600.0, 2600.0]], // one
    [[450.0, 1600.0, 2600.0], [350.0, 1100.0, 2300.0], [300.0, 870.0, 2250.0]], // two
    [[390.0, 1990.0, 2550.0], [330.0, 1500.0, 2200.0], [270.0, 2290.0, 3010.0]], // three
    [[450.0, 1200.0, 2500.0], [570.0, 840.0, 2410.0], [500.0, 1300.0, 1700.0]],  // four
    [[730.0, 1090.0, 2440.0], [600.0, 1500.0, 2500.0], [390.0, 1990.0, 2550.0]], // five
    [[390.0, 1990.0, 2550.0], [530.0, 1840.0, 2480.0], [300.0, 1400.0, 2700.0]], // six
    [[530.0, 1840.0, 2480.0], [450.0, 1500.0, 2400.0], [640.0, 1190.0, 2390.0]], // seven
    [[530.0, 1840.0, 2480.0], [400.0, 2100.0, 2700.0], [270.0, 2290.0, 3010.0]], // eight
    [[300.0, 1300.0, 2300.0], [700.0, 1200.0, 2500.0], [350.0, 2000.0, 2700.0]], // nine
    [[350.0, 1000.0, 2200.0], [640.0, 1190.0, 2390.0], [330.0, 1700.0, 2900.0]], // plus
    [[300.0, 1000.0, 2200.0], [280.0, 2250.0, 2900.0], [620.0, 1300.0, 2350.0]], // minus
];

const GLOTTAL_POLE: f64 = 0.75;

const FORMANT_BANDWIDTHS: [f64; 3] = [70.0, 100.0, 140.0];

/// Nominal durations (seconds) per class before per-attempt jitter.
const CLASS_DURATIONS: [f64; SYNTHETIC_CLASSES] =
    [0.62, 0.50, 0.48, 0.55, 0.52, 0.60, 0.58, 0.66, 0.47, 0.56, 0.54, 0.64];

/// Fundamental frequency assigned to a synthetic speaker, spread over 90–260 Hz.
pub fn speaker_pitch_hz(speaker_id: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(speaker_id.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0x5EED);
    90.0 + 170.0 * rng.random::<f64>()
}

fn token_seed(class_id: usize, speaker_id: u64, attempt_seed: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325_u64;
    for v in [class_id as u64, speaker_id, attempt_seed] {
        for b in v.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Two-pole resonator coefficients for a formant at `freq` Hz with bandwidth `bw` Hz.
fn resonator(freq: f64, bw: f64, fs: f64) -> (f64, f64) {
    let r = (-std::f64::consts::PI * bw / fs).exp();
    let theta = 2.0 * std::f64::consts::PI * freq / fs;
    (2.0 * r * theta.cos(), -r * r)
}

/// Generates one synthetic utterance of a vocabulary class.
///
/// A glottal pulse train (pitch set by `speaker_id`) drives a cascade of three
/// formant resonators that glide through the class's formant targets. Formant
/// targets are jittered by at most 3% per `attempt_seed`. A white recording
/// noise floor 30–40 dB down is mixed in. The output lasts 0.4–0.8 s and is
/// peak-normalized to [`SYNTHETIC_PEAK`].
pub fn synthesize_word_token(
    class_id: usize,
    speaker_id: u64,
    attempt_seed: u64,
    sample_rate: u32,
) -> Result<AudioClip, AudioError> {
    if class_id >= SYNTHETIC_CLASSES {
        return Err(AudioError::UnknownClass(class_id));
    }
    if !SUPPORTED_RATES.contains(&sample_rate) {
        return Err(AudioError::UnsupportedFormat(format!(
            "sample rate {sample_rate} Hz"
        )));
    }
    let fs = f64::from(sample_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(token_seed(class_id, speaker_id, attempt_seed));

    let mut targets = CLASS_FORMANTS[class_id];
    for point in targets.iter_mut() {
        for f in point.iter_mut() {
            *f *= 1.0 + rng.random_range(-0.03..=0.03);
        }
    }
    let duration = (CLASS_DURATIONS[class_id] * (1.0 + rng.random_range(-0.12..=0.12)))
        .clamp(0.4, 0.8);
    let n = ((duration * fs).round() as usize).clamp(
        (0.4 * fs).ceil() as usize,
        (0.8 * fs).floor() as usize,
    );
    let f0 = speaker_pitch_hz(speaker_id) * (1.0 + rng.random_range(-0.05..=0.05));
    let breath = 0.05;
    let floor_snr_db = rng.random_range(30.0..=40.0);

    // Excitation: pulse train with a falling pitch contour, low-passed to mimic
    // glottal roll-off, plus a little aspiration noise.
    let mut excitation = vec![0.0; n];
    let mut phase = rng.random::<f64>();
    let mut glottal = 0.0;
    for (i, e) in excitation.iter_mut().enumerate() {
        let t = i as f64 / n as f64;
        let pitch = f0 * (1.05 - 0.15 * t);
        phase += pitch / fs;
        let pulse = if phase >= 1.0 {
            phase -= 1.0;
            1.0
        } else {
            0.0
        };
        glottal = GLOTTAL_POLE * glottal + pulse;
        let aspiration: f64 = rng.sample(StandardNormal);
        *e = glottal + breath * aspiration;
    }

    // Time-varying formant cascade, coefficients refreshed every 5 ms.
    let block = (fs * 0.005) as usize;
    let mut state = [[0.0_f64; 2]; 3];
    let mut coeffs = [(0.0, 0.0); 3];
    let mut out = vec![0.0; n];
    for i in 0..n {
        if i % block == 0 {
            let t = i as f64 / (n - 1) as f64;
            let (a, b, w) = if t < 0.5 {
                (&targets[0], &targets[1], t / 0.5)
            } else {
                (&targets[1], &targets[2], (t - 0.5) / 0.5)
            };
            for k in 0..3 {
                let f = a[k] + (b[k] - a[k]) * w;
                coeffs[k] = resonator(f.min(0.45 * fs), FORMANT_BANDWIDTHS[k], fs);
            }
        }
        let mut x = excitation[i];
        for k in 0..3 {
            let (c1, c2) = coeffs[k];
            let y = x + c1 * state[k][0] + c2 * state[k][1];
            state[k][1] = state[k][0];
            state[k][0] = y;
            x = y;
        }
        out[i] = x;
    }

    // Raised-cosine onset and offset.
    let attack = (0.03 * fs) as usize;
    let release = (0.05 * fs) as usize;
    for i in 0..attack.min(n) {
        let w = 0.5 - 0.5 * (std::f64::consts::PI * i as f64 / attack as f64).cos();
        out[i] *= w;
    }
    for i in 0..release.min(n) {
        let w = 0.5 - 0.5 * (std::f64::consts::PI * i as f64 / release as f64).cos();
        out[n - 1 - i] *= w;
    }

    // Recording noise floor, 30-40 dB below the token.
    let floor_power = mean_square(&out) / 10f64.powf(floor_snr_db / 10.0);
    let floor = gaussian_noise(n, floor_power, rng.random());
    out.iter_mut().zip(&floor).for_each(|(s, f)| *s += f);

    let peak = out.iter().fold(0.0_f64, |m, s| m.max(s.abs()));
    let gain = SYNTHETIC_PEAK / peak;
    let samples = out.into_iter().map(|s| s * gain).collect();
    AudioClip::new(samples, sample_rate)
}
