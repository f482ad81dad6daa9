//! The feature front end: resample → pre-emphasis → framing → MFCC, bundled
//! behind one configuration so training and test audio go through identical
//! processing.

use serde::{Deserialize, Serialize};

use crate::audio::{self, AudioClip};
use crate::error::{Error, Result};
use crate::mfcc::{FeatureMatrix, MelFilterbank, MfccExtractor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontEndConfig {
    pub target_rate_hz: u32,
    pub pre_emphasis: f64,
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub num_filters: usize,
    pub num_coeffs: usize,
    pub low_hz: f64,
    /// Upper filterbank edge; `None` means the working Nyquist frequency.
    pub high_hz: Option<f64>,
    pub log_floor: f64,
    /// Subtract each frame's mean before windowing, so slow drift does not
    /// leak through the window sidelobes into every band.
    pub remove_dc: bool,
    /// `None` picks the smallest power of two holding one frame.
    pub fft_size: Option<usize>,
}

impl Default for FrontEndConfig {
    fn default() -> Self {
        FrontEndConfig {
            target_rate_hz: 12_000,
            pre_emphasis: 0.97,
            frame_ms: 25.0,
            hop_ms: 10.0,
            num_filters: 26,
            num_coeffs: 13,
            low_hz: 0.0,
            high_hz: None,
            log_floor: 1e-10,
            remove_dc: true,
            fft_size: None,
        }
    }
}

impl FrontEndConfig {
    pub fn frame_len(&self) -> usize {
        audio::ms_to_samples(self.frame_ms, self.target_rate_hz)
    }

    pub fn resolved_fft_size(&self) -> usize {
        self.fft_size
            .unwrap_or_else(|| self.frame_len().max(1).next_power_of_two())
    }

    pub fn resolved_high_hz(&self) -> f64 {
        self.high_hz
            .unwrap_or(f64::from(self.target_rate_hz) / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_rate_hz < 1000 {
            return Err(Error::Config(format!(
                "working rate {} Hz below 1000 Hz",
                self.target_rate_hz
            )));
        }
        if !(0.0..1.0).contains(&self.pre_emphasis) {
            return Err(Error::Config(format!(
                "pre-emphasis {} outside [0, 1)",
                self.pre_emphasis
            )));
        }
        if !(self.frame_ms > 0.0 && self.hop_ms > 0.0 && self.hop_ms <= self.frame_ms) {
            return Err(Error::Config(format!(
                "need 0 < hop ≤ frame (got {} / {} ms)",
                self.frame_ms, self.hop_ms
            )));
        }
        if self.resolved_fft_size() < self.frame_len() {
            return Err(Error::Config(format!(
                "FFT size {} shorter than {}-sample frame",
                self.resolved_fft_size(),
                self.frame_len()
            )));
        }
        // Builds and discards the filterbank/extractor to surface their errors.
        FrontEnd::new(self.clone()).map(|_| ())
    }
}

pub struct FrontEnd {
    config: FrontEndConfig,
    extractor: MfccExtractor,
}

impl FrontEnd {
    pub fn new(config: FrontEndConfig) -> Result<Self> {
        let bank = MelFilterbank::new(
            config.num_filters,
            config.target_rate_hz,
            config.resolved_fft_size(),
            config.low_hz,
            config.resolved_high_hz(),
        )?;
        let extractor = MfccExtractor::new(bank, config.num_coeffs, config.log_floor)?;
        Ok(FrontEnd { config, extractor })
    }

    pub fn config(&self) -> &FrontEndConfig {
        &self.config
    }

    /// Brings a clip to the working rate; the first half of [`Self::features`].
    pub fn condition(&self, clip: &AudioClip) -> Result<AudioClip> {
        audio::resample(clip, self.config.target_rate_hz)
    }

    /// Features from a clip already at the working rate.
    pub fn features_from_conditioned(&mut self, clip: &AudioClip) -> Result<FeatureMatrix> {
        let emphasized = audio::pre_emphasize(clip, self.config.pre_emphasis)?;
        let frames = audio::frame_and_window_with(
            &emphasized,
            self.config.frame_ms,
            self.config.hop_ms,
            self.config.remove_dc,
        )?;
        if frames.is_empty() {
            return Err(Error::Input(format!(
                "{}: {:.3} s clip is shorter than one {} ms frame",
                clip.source_id(),
                clip.duration_s(),
                self.config.frame_ms
            )));
        }
        self.extractor
            .extract(&frames, self.config.frame_ms, self.config.hop_ms)
    }

    pub fn features(&mut self, clip: &AudioClip) -> Result<FeatureMatrix> {
        let conditioned = self.condition(clip)?;
        self.features_from_conditioned(&conditioned)
    }
}
