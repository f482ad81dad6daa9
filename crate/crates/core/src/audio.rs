//! Audio ingestion: the [`AudioClip`] container, band-limited resampling,
//! pre-emphasis, Hamming-windowed framing and interference mixing.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mono PCM audio with amplitudes in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate_hz: u32,
    source_id: String,
}

impl AudioClip {
    /// Rejects empty, non-finite or out-of-range sample buffers.
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32, source_id: impl Into<String>) -> Result<Self> {
        let source_id = source_id.into();
        if samples.is_empty() {
            return Err(Error::EmptyAudio(source_id));
        }
        if sample_rate_hz == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if let Some(bad) = samples.iter().find(|s| !(s.is_finite() && s.abs() <= 1.0)) {
            return Err(Error::Input(format!(
                "{source_id}: sample {bad} outside [-1, 1]"
            )));
        }
        Ok(Self::from_parts(samples, sample_rate_hz, source_id))
    }

    /// Skips the amplitude range check; used for intermediate signals such as
    /// pre-emphasized audio, which may exceed unit amplitude.
    pub(crate) fn from_parts(samples: Vec<f64>, sample_rate_hz: u32, source_id: String) -> Self {
        AudioClip {
            samples,
            sample_rate_hz,
            source_id,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate_hz)
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// Mean power `(1/N) Σ x²`.
pub fn power(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64
}

// Windowed-sinc kernel half-width, in zero crossings of the low-pass sinc.
const SINC_ZERO_CROSSINGS: f64 = 32.0;
const KAISER_BETA: f64 = 8.6;

/// Zeroth-order modified Bessel function of the first kind, by power series.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..200 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Band-limited resampling by windowed-sinc interpolation.
///
/// The interpolation kernel is a Kaiser-windowed sinc whose cutoff sits at the
/// lower of the two Nyquist frequencies, so downsampling low-passes at the new
/// Nyquist before decimating. Output length is `round(len · target / source)`.
pub fn resample(clip: &AudioClip, target_rate_hz: u32) -> Result<AudioClip> {
    if target_rate_hz < 1000 {
        return Err(Error::Config(format!(
            "target rate {target_rate_hz} Hz is below the 1000 Hz minimum"
        )));
    }
    let source_rate = clip.sample_rate_hz;
    if source_rate == target_rate_hz {
        return Ok(clip.clone());
    }
    let ratio = f64::from(target_rate_hz) / f64::from(source_rate);
    let out_len = ((clip.len() as f64) * ratio).round().max(1.0) as usize;
    // Cutoff relative to the input Nyquist.
    let cutoff = ratio.min(1.0);
    let half_width = SINC_ZERO_CROSSINGS / cutoff;
    let step = 1.0 / ratio;
    let i0_beta = bessel_i0(KAISER_BETA);
    let x = &clip.samples;
    let last = x.len() as isize - 1;

    let samples = (0..out_len)
        .map(|m| {
            let t = m as f64 * step;
            let lo = ((t - half_width).ceil() as isize).max(0);
            let hi = ((t + half_width).floor() as isize).min(last);
            let mut acc = 0.0;
            for n in lo..=hi {
                let d = t - n as f64;
                let arg = cutoff * d;
                let sinc = if arg.abs() < 1e-12 {
                    1.0
                } else {
                    (PI * arg).sin() / (PI * arg)
                };
                let r = d / half_width;
                let window = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / i0_beta;
                acc += x[n as usize] * cutoff * sinc * window;
            }
            acc.clamp(-1.0, 1.0)
        })
        .collect();
    Ok(AudioClip::from_parts(
        samples,
        target_rate_hz,
        clip.source_id.clone(),
    ))
}

/// First-order pre-emphasis `y[n] = x[n] − α·x[n−1]`, with `y[0] = x[0]`.
pub fn pre_emphasize(clip: &AudioClip, alpha: f64) -> Result<AudioClip> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::Config(format!(
            "pre-emphasis coefficient {alpha} outside [0, 1)"
        )));
    }
    let x = &clip.samples;
    let mut y = Vec::with_capacity(x.len());
    if let Some(&first) = x.first() {
        y.push(first);
    }
    y.extend(x.windows(2).map(|w| w[1] - alpha * w[0]));
    Ok(AudioClip::from_parts(
        y,
        clip.sample_rate_hz,
        clip.source_id.clone(),
    ))
}

/// `w[n] = 0.54 − 0.46·cos(2πn/(L−1))`; a length-1 window is `[1]`.
pub fn hamming_window(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let denom = (len - 1) as f64;
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / denom).cos())
        .collect()
}

/// Windowed frames stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSet {
    frames: Vec<f64>,
    num_frames: usize,
    frame_len: usize,
    hop_len: usize,
    sample_rate_hz: u32,
    source_id: String,
}

impl FrameSet {
    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn hop_len(&self) -> usize {
        self.hop_len
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    /// True when the clip was shorter than one frame; such utterances should
    /// be rejected downstream.
    pub fn is_empty(&self) -> bool {
        self.num_frames == 0
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        &self.frames[i * self.frame_len..(i + 1) * self.frame_len]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.frames.chunks_exact(self.frame_len)
    }
}

pub fn ms_to_samples(ms: f64, sample_rate_hz: u32) -> usize {
    (ms * f64::from(sample_rate_hz) / 1000.0).round() as usize
}

/// Slices the clip into `floor((N − L)/H) + 1` frames of `L` samples at hop
/// `H` and applies a Hamming window to each.
pub fn frame_and_window(clip: &AudioClip, frame_ms: f64, hop_ms: f64) -> Result<FrameSet> {
    frame_and_window_with(clip, frame_ms, hop_ms, false)
}

/// [`frame_and_window`], optionally subtracting each frame's mean before the
/// window is applied.
pub fn frame_and_window_with(clip: &AudioClip, frame_ms: f64, hop_ms: f64, remove_dc: bool) -> Result<FrameSet> {
    if !(frame_ms > 0.0 && hop_ms > 0.0 && hop_ms <= frame_ms) {
        return Err(Error::Config(format!(
            "need 0 < hop ≤ frame, got frame {frame_ms} ms, hop {hop_ms} ms"
        )));
    }
    let frame_len = ms_to_samples(frame_ms, clip.sample_rate_hz);
    let hop_len = ms_to_samples(hop_ms, clip.sample_rate_hz).min(frame_len);
    if frame_len == 0 || hop_len == 0 {
        return Err(Error::Config(format!(
            "frame {frame_ms} ms / hop {hop_ms} ms round to zero samples at {} Hz",
            clip.sample_rate_hz
        )));
    }
    let n = clip.len();
    let num_frames = if n < frame_len {
        0
    } else {
        (n - frame_len) / hop_len + 1
    };
    let window = hamming_window(frame_len);
    let mut frames = Vec::with_capacity(num_frames * frame_len);
    for i in 0..num_frames {
        let start = i * hop_len;
        let seg = &clip.samples[start..start + frame_len];
        let dc = if remove_dc {
            seg.iter().sum::<f64>() / frame_len as f64
        } else {
            0.0
        };
        frames.extend(seg.iter().zip(&window).map(|(s, w)| (s - dc) * w));
    }
    Ok(FrameSet {
        frames,
        num_frames,
        frame_len,
        hop_len,
        sample_rate_hz: clip.sample_rate_hz,
        source_id: clip.source_id.clone(),
    })
}

/// How a mixing ratio is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixMode {
    /// Signal power over interference power.
    #[default]
    Power,
    /// Signal RMS over interference RMS.
    Amplitude,
}

impl std::str::FromStr for MixMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "power" => Ok(MixMode::Power),
            "amplitude" => Ok(MixMode::Amplitude),
            other => Err(Error::Config(format!("unknown mix mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MixOutcome {
    pub clip: AudioClip,
    /// Gain applied to the (tiled) interference before summation.
    pub noise_gain: f64,
    /// Peak-normalization factor applied after summation; 1.0 if none.
    pub peak_scale: f64,
}

/// Adds `noise`, looped or truncated to the clip length and rescaled so that
/// signal/interference power equals `ratio` (or `ratio²` in amplitude mode).
pub fn mix_interference(
    clip: &AudioClip,
    noise: &AudioClip,
    ratio: f64,
    mode: MixMode,
) -> Result<MixOutcome> {
    if clip.sample_rate_hz != noise.sample_rate_hz {
        return Err(Error::RateMismatch {
            signal: clip.sample_rate_hz,
            noise: noise.sample_rate_hz,
        });
    }
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::Config(format!("mixing ratio {ratio} must be positive")));
    }
    let power_ratio = match mode {
        MixMode::Power => ratio,
        MixMode::Amplitude => ratio * ratio,
    };
    let tiled: Vec<f64> = noise.samples.iter().copied().cycle().take(clip.len()).collect();
    let noise_power = power(&tiled);
    if noise_power == 0.0 {
        return Err(Error::DegenerateNoise);
    }
    let signal_power = power(&clip.samples);
    if signal_power == 0.0 {
        return Err(Error::Input(format!("{}: signal has zero power", clip.source_id)));
    }
    let noise_gain = (signal_power / (power_ratio * noise_power)).sqrt();
    let mut mixed: Vec<f64> = clip
        .samples
        .iter()
        .zip(&tiled)
        .map(|(s, n)| s + noise_gain * n)
        .collect();
    let peak = mixed.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let peak_scale = if peak > 1.0 { 1.0 / peak } else { 1.0 };
    if peak_scale != 1.0 {
        mixed.iter_mut().for_each(|s| *s *= peak_scale);
    }
    Ok(MixOutcome {
        clip: AudioClip::from_parts(mixed, clip.sample_rate_hz, clip.source_id.clone()),
        noise_gain,
        peak_scale,
    })
}
