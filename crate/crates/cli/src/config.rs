use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use emosid::cascade::Aggregation;
use emosid::corpus::NoiseKind;
use emosid::evaluation::SdKind;
use emosid::{MixMode, RunConfig};

/// Settings shared by every subcommand. Each one, when given, overrides the
/// config file, which overrides the built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML or JSON run configuration (by extension; anything but .json is TOML).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Pre-emphasis coefficient.
    #[arg(long, global = true)]
    pub pre_emphasis: Option<f64>,

    /// Analysis frame length in milliseconds.
    #[arg(long, global = true)]
    pub frame_ms: Option<f64>,

    /// Frame hop in milliseconds.
    #[arg(long, global = true)]
    pub hop_ms: Option<f64>,

    /// Working sample rate; input audio is resampled to it.
    #[arg(long, global = true, value_name = "HZ")]
    pub target_rate: Option<u32>,

    /// Signal-to-interference ratio for --distort.
    #[arg(long, global = true)]
    pub snr_ratio: Option<f64>,

    /// How --snr-ratio is read: power or amplitude.
    #[arg(long, global = true)]
    pub snr_mode: Option<MixMode>,

    /// Built-in interference: rumble, brown or white.
    #[arg(long, global = true)]
    pub noise: Option<NoiseKind>,

    /// Interference WAV used instead of the built-in generator.
    #[arg(long, global = true, value_name = "WAV")]
    pub noise_file: Option<PathBuf>,

    /// Frames per decision segment.
    #[arg(long, global = true, value_name = "FRAMES")]
    pub segment_frames: Option<usize>,

    /// Fractional overlap between decision segments.
    #[arg(long, global = true)]
    pub segment_overlap: Option<f64>,

    /// Posterior aggregation across segments: mean or geometric.
    #[arg(long, global = true)]
    pub aggregation: Option<Aggregation>,

    /// Standard deviation convention for t tests: sample or population.
    #[arg(long, global = true)]
    pub sd: Option<SdKind>,

    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Human-readable output instead of JSON.
    #[arg(long, global = true)]
    pub text: bool,

    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

pub fn read_config_file(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        RunConfig::from_json_str(&text)
    } else {
        RunConfig::from_toml_str(&text)
    };
    Ok(parsed.with_context(|| format!("in {}", path.display()))?)
}

impl Common {
    /// Defaults, then the config file, then flags; validated.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => read_config_file(p)?,
            None => RunConfig::default(),
        };
        let fe = &mut c.frontend;
        set(&mut fe.pre_emphasis, self.pre_emphasis);
        set(&mut fe.frame_ms, self.frame_ms);
        set(&mut fe.hop_ms, self.hop_ms);
        set(&mut fe.target_rate_hz, self.target_rate);
        set(&mut c.distortion.ratio, self.snr_ratio);
        set(&mut c.distortion.mode, self.snr_mode);
        set(&mut c.distortion.noise, self.noise);
        if self.noise_file.is_some() {
            c.distortion.noise_path = self.noise_file.clone();
        }
        set(&mut c.segment.frames, self.segment_frames);
        set(&mut c.segment.overlap, self.segment_overlap);
        set(&mut c.aggregation, self.aggregation);
        set(&mut c.sd_kind, self.sd);
        if self.jobs.is_some() {
            c.jobs = self.jobs;
        }
        c.validate()?;
        Ok(c)
    }
}

pub fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}
