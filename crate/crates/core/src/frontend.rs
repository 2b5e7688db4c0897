//! LPC-cepstral front end.
//!
//! The chain is preemphasis, frame blocking, Hamming windowing,
//! autocorrelation, Levinson-Durbin LPC analysis and conversion of the
//! predictor to cepstral coefficients. Predictor sign convention throughout:
//! `s(n) ≈ Σ_{i=1..p} a_i·s(n−i)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{ms_to_samples, AudioClip};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrontendError {
    #[error("clip of {len} samples is shorter than one {frame}-sample frame")]
    ClipTooShort { len: usize, frame: usize },
    #[error("autocorrelation order {order} must be below the frame length {frame_len}")]
    OrderTooHigh { order: usize, frame_len: usize },
    #[error("silent frame (r[0] = {0:e})")]
    SilentFrame(f64),
    #[error("Levinson-Durbin breakdown at order {order}: prediction error {error:e} is not positive")]
    NumericalBreakdown { order: usize, error: f64 },
    #[error("invalid front-end configuration: {0}")]
    InvalidConfig(String),
}

/// Front-end parameters. Durations are in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrontendConfig {
    pub preemphasis_alpha: f64,
    pub frame_len_ms: f64,
    pub shift_ms: f64,
    pub lpc_order: usize,
    pub cepstrum_order: usize,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            preemphasis_alpha: 0.97,
            frame_len_ms: 25.0,
            shift_ms: 10.0,
            lpc_order: 12,
            cepstrum_order: 12,
        }
    }
}

impl FrontendConfig {
    pub fn frame_len(&self, sample_rate: u32) -> usize {
        ms_to_samples(self.frame_len_ms, sample_rate)
    }

    pub fn shift(&self, sample_rate: u32) -> usize {
        ms_to_samples(self.shift_ms, sample_rate)
    }

    pub fn validate(&self, sample_rate: u32) -> Result<(), FrontendError> {
        let bad = |m: String| Err(FrontendError::InvalidConfig(m));
        if !(0.0..1.0).contains(&self.preemphasis_alpha) {
            return bad(format!(
                "preemphasis_alpha must lie in [0, 1), got {}",
                self.preemphasis_alpha
            ));
        }
        if self.lpc_order == 0 || self.cepstrum_order == 0 {
            return bad("lpc_order and cepstrum_order must be at least 1".into());
        }
        if self.shift(sample_rate) == 0 {
            return bad(format!("shift of {} ms is under one sample", self.shift_ms));
        }
        if self.frame_len(sample_rate) <= self.lpc_order {
            return bad(format!(
                "frame of {} samples must be longer than the LPC order {}",
                self.frame_len(sample_rate),
                self.lpc_order
            ));
        }
        Ok(())
    }

    /// Short description of the settings, stored with feature sequences.
    pub fn fingerprint(&self, sample_rate: u32) -> String {
        format!(
            "lpc{}-cep{}-pre{}-{}x{}@{}",
            self.lpc_order,
            self.cepstrum_order,
            self.preemphasis_alpha,
            self.frame_len(sample_rate),
            self.shift(sample_rate),
            sample_rate
        )
    }
}

/// One block of samples cut from a clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame(pub Vec<f64>);

impl Frame {
    pub fn samples(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Output of the Levinson-Durbin recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct LpcResult {
    /// Predictor coefficients `a_1..a_p`.
    pub a: Vec<f64>,
    /// Reflection coefficients `k_1..k_p`.
    pub k: Vec<f64>,
    /// Final prediction error energy `E_p`.
    pub error: f64,
    /// Prediction error energies `E_0 = r[0], E_1, …, E_p`.
    pub order_errors: Vec<f64>,
}

impl LpcResult {
    pub fn order(&self) -> usize {
        self.a.len()
    }
}

/// Cepstral coefficients `c_1..c_Q` of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Per-frame feature vectors for one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSequence {
    pub vectors: Vec<FeatureVector>,
    pub fingerprint: String,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// First-order preemphasis: `y[0] = x[0]`, `y[n] = x[n] − alpha·x[n−1]`.
///
/// The result is clamped back into `[-1, 1]` to stay a valid clip. For
/// `alpha ≤ 1` and inputs in range the magnitude can reach 2; use
/// [`preemphasize_samples`] when the unclamped values matter.
pub fn preemphasize(clip: &AudioClip, alpha: f64) -> AudioClip {
    let y = preemphasize_samples(clip.samples(), alpha);
    clip.with_samples(y.into_iter().map(|s| s.clamp(-1.0, 1.0)).collect())
}

pub fn preemphasize_samples(x: &[f64], alpha: f64) -> Vec<f64> {
    let mut y = Vec::with_capacity(x.len());
    if let Some(&first) = x.first() {
        y.push(first);
    }
    y.extend(x.windows(2).map(|w| w[1] - alpha * w[0]));
    y
}

/// Cuts `x` into frames of `frame_len` samples every `shift` samples,
/// discarding a trailing partial frame.
pub fn frame_samples(x: &[f64], frame_len: usize, shift: usize) -> Result<Vec<Frame>, FrontendError> {
    if x.len() < frame_len || frame_len == 0 {
        return Err(FrontendError::ClipTooShort {
            len: x.len(),
            frame: frame_len,
        });
    }
    let count = (x.len() - frame_len) / shift + 1;
    Ok((0..count)
        .map(|i| Frame(x[i * shift..i * shift + frame_len].to_vec()))
        .collect())
}

pub fn frame_blocks(clip: &AudioClip, cfg: &FrontendConfig) -> Result<Vec<Frame>, FrontendError> {
    let rate = clip.sample_rate();
    let shift = cfg.shift(rate).max(1);
    frame_samples(clip.samples(), cfg.frame_len(rate), shift)
}

/// Hamming weight `0.54 − 0.46·cos(2πn/(N−1))`.
pub fn hamming_weights(n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![1.0; n];
    }
    let denom = (n - 1) as f64;
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / denom).cos())
        .collect()
}

pub fn hamming_window(frame: &Frame) -> Frame {
    let w = hamming_weights(frame.len());
    Frame(frame.0.iter().zip(&w).map(|(x, w)| x * w).collect())
}

/// Autocorrelation `r[k] = Σ_{n=0}^{N−1−k} x[n]·x[n+k]` for `k = 0..=p`.
pub fn autocorrelate(frame: &Frame, p: usize) -> Result<Vec<f64>, FrontendError> {
    let x = frame.samples();
    if p >= x.len() {
        return Err(FrontendError::OrderTooHigh {
            order: p,
            frame_len: x.len(),
        });
    }
    Ok((0..=p)
        .map(|k| x[..x.len() - k].iter().zip(&x[k..]).map(|(a, b)| a * b).sum())
        .collect())
}

/// Energy floor below which a frame is treated as silent.
pub const SILENT_FRAME_ENERGY: f64 = 1e-10;

/// Solves the autocorrelation normal equations `Σ_i a_i·r[|i−j|] = r[j]`
/// by the order-recursive Levinson-Durbin method. The order is `r.len() − 1`.
pub fn levinson_durbin(r: &[f64]) -> Result<LpcResult, FrontendError> {
    let r0 = r.first().copied().unwrap_or(0.0);
    if !(r0 > SILENT_FRAME_ENERGY) {
        return Err(FrontendError::SilentFrame(r0));
    }
    let p = r.len() - 1;
    let mut a = vec![0.0; p];
    let mut prev = vec![0.0; p];
    let mut k = Vec::with_capacity(p);
    let mut order_errors = Vec::with_capacity(p + 1);
    let mut error = r0;
    order_errors.push(error);

    for i in 1..=p {
        let acc: f64 = (1..i).map(|j| a[j - 1] * r[i - j]).sum();
        let ki = (r[i] - acc) / error;
        prev[..i - 1].copy_from_slice(&a[..i - 1]);
        for j in 1..i {
            a[j - 1] = prev[j - 1] - ki * prev[i - j - 1];
        }
        a[i - 1] = ki;
        error *= 1.0 - ki * ki;
        k.push(ki);
        order_errors.push(error);
        let breakdown = if i < p { error <= 0.0 } else { error < 0.0 };
        if breakdown || !error.is_finite() {
            return Err(FrontendError::NumericalBreakdown { order: i, error });
        }
    }

    Ok(LpcResult {
        a,
        k,
        error,
        order_errors,
    })
}

/// Converts LPC predictor coefficients to `q` cepstral coefficients `c_1..c_q`.
pub fn lpc_to_cepstrum(lpc: &LpcResult, q: usize) -> FeatureVector {
    predictor_to_cepstrum(&lpc.a, q)
}

pub fn predictor_to_cepstrum(a: &[f64], q: usize) -> FeatureVector {
    let p = a.len();
    // c[0] unused so indices match the recursion
    let mut c = vec![0.0; q + 1];
    for m in 1..=q {
        let mut acc = if m <= p { a[m - 1] } else { 0.0 };
        let lo = if m > p { m - p } else { 1 };
        for kk in lo..m {
            acc += (kk as f64 / m as f64) * c[kk] * a[m - kk - 1];
        }
        c[m] = acc;
    }
    c.remove(0);
    FeatureVector(c)
}

/// Runs the whole LPC chain over an (endpointed) clip.
///
/// Frames whose energy falls below the silence floor produce an all-zero
/// vector so the sequence keeps one vector per frame.
pub fn extract_features(clip: &AudioClip, cfg: &FrontendConfig) -> Result<FeatureSequence, FrontendError> {
    let rate = clip.sample_rate();
    cfg.validate(rate)?;
    let emphasized = preemphasize_samples(clip.samples(), cfg.preemphasis_alpha);
    let frames = frame_samples(&emphasized, cfg.frame_len(rate), cfg.shift(rate))?;
    let weights = hamming_weights(cfg.frame_len(rate));

    let mut vectors = Vec::with_capacity(frames.len());
    for frame in &frames {
        let windowed = Frame(frame.0.iter().zip(&weights).map(|(x, w)| x * w).collect());
        let r = autocorrelate(&windowed, cfg.lpc_order)?;
        let v = match levinson_durbin(&r) {
            Ok(lpc) => lpc_to_cepstrum(&lpc, cfg.cepstrum_order),
            Err(FrontendError::SilentFrame(_)) => FeatureVector(vec![0.0; cfg.cepstrum_order]),
            Err(e) => return Err(e),
        };
        vectors.push(v);
    }
    Ok(FeatureSequence {
        vectors,
        fingerprint: cfg.fingerprint(rate),
    })
}
