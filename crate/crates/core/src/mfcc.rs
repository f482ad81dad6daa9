//! Mel-frequency cepstral coefficients: Mel scale, periodogram, triangular
//! Mel filterbank and orthonormal DCT-II.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::FrameSet;
use crate::container::{Reader, Writer};
use crate::error::{Error, Result, ResultExt};

pub const DCT_CONVENTION: &str = "dct-ii-orthonormal";

/// `m = 2595·log10(1 + f/700)`.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

/// `f = 700·(10^(m/2595) − 1)`.
pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Periodogram `|X(k)|² / N` for `k = 0..=N/2` via a reusable FFT plan.
pub struct PowerSpectrum {
    fft: Arc<dyn Fft<f64>>,
    fft_size: usize,
    buf: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl PowerSpectrum {
    pub fn new(fft_size: usize) -> Result<Self> {
        if !fft_size.is_power_of_two() {
            return Err(Error::Config(format!("FFT size {fft_size} is not a power of two")));
        }
        let fft = FftPlanner::new().plan_fft_forward(fft_size);
        let scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
        Ok(PowerSpectrum {
            fft,
            fft_size,
            buf: vec![Complex::default(); fft_size],
            scratch,
        })
    }

    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Zero-pads `frame` to the FFT size and writes `N/2 + 1` bins into `out`.
    pub fn compute_into(&mut self, frame: &[f64], out: &mut [f64]) -> Result<()> {
        if frame.len() > self.fft_size {
            return Err(Error::Config(format!(
                "frame of {} samples exceeds FFT size {}",
                frame.len(),
                self.fft_size
            )));
        }
        debug_assert_eq!(out.len(), self.num_bins());
        for (b, s) in self
            .buf
            .iter_mut()
            .zip(frame.iter().chain(std::iter::repeat(&0.0)))
        {
            *b = Complex::new(*s, 0.0);
        }
        self.fft.process_with_scratch(&mut self.buf, &mut self.scratch);
        let n = self.fft_size as f64;
        for (o, c) in out.iter_mut().zip(&self.buf) {
            *o = c.norm_sqr() / n;
        }
        Ok(())
    }

    pub fn compute(&mut self, frame: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.num_bins()];
        self.compute_into(frame, &mut out)?;
        Ok(out)
    }
}

/// One-shot periodogram; prefer [`PowerSpectrum`] in loops.
pub fn power_spectrum(frame: &[f64], fft_size: usize) -> Result<Vec<f64>> {
    PowerSpectrum::new(fft_size)?.compute(frame)
}

/// A triangle stored sparsely from its first non-trivial bin.
#[derive(Debug, Clone, PartialEq)]
pub struct Triangle {
    pub start_bin: usize,
    pub weights: Vec<f64>,
}

impl Triangle {
    pub fn energy(&self, spectrum: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(&spectrum[self.start_bin..])
            .map(|(w, p)| w * p)
            .sum()
    }

    pub fn weight_at(&self, bin: usize) -> f64 {
        bin.checked_sub(self.start_bin)
            .and_then(|i| self.weights.get(i))
            .copied()
            .unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    triangles: Vec<Triangle>,
    boundary_hz: Vec<f64>,
    boundary_bins: Vec<usize>,
    low_hz: f64,
    high_hz: f64,
    fft_size: usize,
    sample_rate_hz: u32,
}

impl MelFilterbank {
    /// `num_filters + 2` boundaries equally spaced in Mel between the band
    /// edges, snapped to the nearest DFT bin; triangle `k` rises from boundary
    /// `k−1` to a unit peak at `k` and falls to zero at `k+1`.
    pub fn new(
        num_filters: usize,
        sample_rate_hz: u32,
        fft_size: usize,
        low_hz: f64,
        high_hz: f64,
    ) -> Result<Self> {
        if num_filters < 2 {
            return Err(Error::Config(format!(
                "need at least 2 filters, got {num_filters}"
            )));
        }
        if !fft_size.is_power_of_two() {
            return Err(Error::Config(format!("FFT size {fft_size} is not a power of two")));
        }
        let nyquist = f64::from(sample_rate_hz) / 2.0;
        if !(0.0 <= low_hz && low_hz < high_hz) {
            return Err(Error::Config(format!("invalid band [{low_hz}, {high_hz}] Hz")));
        }
        if high_hz > nyquist {
            return Err(Error::Config(format!(
                "upper band edge {high_hz} Hz exceeds Nyquist {nyquist} Hz"
            )));
        }
        let mel_lo = hz_to_mel(low_hz);
        let mel_hi = hz_to_mel(high_hz);
        let step = (mel_hi - mel_lo) / (num_filters + 1) as f64;
        let boundary_hz: Vec<f64> = (0..num_filters + 2)
            .map(|k| mel_to_hz(mel_lo + step * k as f64))
            .collect();
        let max_bin = fft_size / 2;
        let boundary_bins: Vec<usize> = boundary_hz
            .iter()
            .map(|&hz| {
                ((hz * fft_size as f64 / f64::from(sample_rate_hz)).round() as usize).min(max_bin)
            })
            .collect();

        let triangles = (1..=num_filters)
            .map(|k| {
                let (left, center, right) =
                    (boundary_bins[k - 1], boundary_bins[k], boundary_bins[k + 1]);
                let start_bin = left + 1;
                let weights = (start_bin..right.max(center + 1))
                    .map(|bin| {
                        if bin < center {
                            (bin - left) as f64 / (center - left) as f64
                        } else if bin == center {
                            1.0
                        } else {
                            (right - bin) as f64 / (right - center) as f64
                        }
                    })
                    .collect();
                Triangle { start_bin, weights }
            })
            .collect();

        Ok(MelFilterbank {
            triangles,
            boundary_hz,
            boundary_bins,
            low_hz,
            high_hz,
            fft_size,
            sample_rate_hz,
        })
    }

    pub fn num_filters(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangles(&self) -> &[Triangle] {
        &self.triangles
    }

    /// Boundary frequencies before bin snapping.
    pub fn boundary_hz(&self) -> &[f64] {
        &self.boundary_hz
    }

    pub fn boundary_bins(&self) -> &[usize] {
        &self.boundary_bins
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn band(&self) -> (f64, f64) {
        (self.low_hz, self.high_hz)
    }

    pub fn energies_into(&self, spectrum: &[f64], out: &mut [f64]) {
        for (o, t) in out.iter_mut().zip(&self.triangles) {
            *o = t.energy(spectrum);
        }
    }
}

/// Orthonormal DCT-II as a precomputed `num_coeffs × n` basis.
#[derive(Debug, Clone)]
pub struct Dct {
    basis: Vec<f64>,
    n: usize,
}

impl Dct {
    pub fn new(n: usize, num_coeffs: usize) -> Self {
        let mut basis = Vec::with_capacity(n * num_coeffs);
        for k in 0..num_coeffs {
            let scale = if k == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            };
            basis.extend(
                (0..n).map(|j| scale * (PI * k as f64 * (j as f64 + 0.5) / n as f64).cos()),
            );
        }
        Dct { basis, n }
    }

    pub fn apply_into(&self, input: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.basis.chunks_exact(self.n)) {
            *o = row.iter().zip(input).map(|(b, x)| b * x).sum();
        }
    }
}

/// Provenance carried with every feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub source_id: String,
    pub sample_rate_hz: u32,
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub num_filters: usize,
    pub dct: String,
}

/// Per-frame cepstral vectors, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    num_frames: usize,
    num_coeffs: usize,
    pub meta: FeatureMeta,
}

/// Borrowed run of feature rows; what the models score.
#[derive(Debug, Clone, Copy)]
pub struct FeatureView<'a> {
    data: &'a [f64],
    num_coeffs: usize,
}

impl<'a> FeatureView<'a> {
    pub fn new(data: &'a [f64], num_coeffs: usize) -> Result<Self> {
        if num_coeffs == 0 || data.len() % num_coeffs != 0 {
            return Err(Error::Input(format!(
                "{} values do not form rows of {num_coeffs}",
                data.len()
            )));
        }
        Ok(FeatureView { data, num_coeffs })
    }

    pub fn num_frames(&self) -> usize {
        self.data.len() / self.num_coeffs
    }

    pub fn num_coeffs(&self) -> usize {
        self.num_coeffs
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.num_coeffs..(i + 1) * self.num_coeffs]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'a, f64> {
        self.data.chunks_exact(self.num_coeffs)
    }

    /// Frames `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> FeatureView<'a> {
        FeatureView {
            data: &self.data[start * self.num_coeffs..end * self.num_coeffs],
            num_coeffs: self.num_coeffs,
        }
    }

    pub fn as_slice(&self) -> &'a [f64] {
        self.data
    }
}

const FEATURE_MAGIC: &[u8; 8] = b"EMSFEAT\0";
const FEATURE_VERSION: u32 = 1;

impl FeatureMatrix {
    pub fn new(data: Vec<f64>, num_coeffs: usize, meta: FeatureMeta) -> Result<Self> {
        FeatureView::new(&data, num_coeffs)?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("feature matrix contains non-finite values".into()));
        }
        Ok(FeatureMatrix {
            num_frames: data.len() / num_coeffs,
            data,
            num_coeffs,
            meta,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn num_coeffs(&self) -> usize {
        self.num_coeffs
    }

    pub fn is_empty(&self) -> bool {
        self.num_frames == 0
    }

    pub fn view(&self) -> FeatureView<'_> {
        FeatureView {
            data: &self.data,
            num_coeffs: self.num_coeffs,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.num_coeffs..(i + 1) * self.num_coeffs]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.num_coeffs)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Stacks several views with the same coefficient count.
    pub fn concat<'a>(
        parts: impl IntoIterator<Item = FeatureView<'a>>,
        meta: FeatureMeta,
    ) -> Result<Self> {
        let mut data = Vec::new();
        let mut num_coeffs = None;
        for p in parts {
            match num_coeffs {
                None => num_coeffs = Some(p.num_coeffs()),
                Some(d) if d != p.num_coeffs() => {
                    return Err(Error::Dimension {
                        expected: d,
                        got: p.num_coeffs(),
                    })
                }
                _ => {}
            }
            data.extend_from_slice(p.as_slice());
        }
        let num_coeffs = num_coeffs.ok_or(Error::EmptyUtterance)?;
        FeatureMatrix::new(data, num_coeffs, meta)
    }

    /// Layout: magic, version, metadata block (source id, rate, frame/hop ms,
    /// filter count, DCT convention), frame and coefficient counts, then
    /// row-major `f64` values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(FEATURE_MAGIC, FEATURE_VERSION);
        w.str(&self.meta.source_id);
        w.u32(self.meta.sample_rate_hz);
        w.f64(self.meta.frame_ms);
        w.f64(self.meta.hop_ms);
        w.usize(self.meta.num_filters);
        w.str(&self.meta.dct);
        w.usize(self.num_frames);
        w.usize(self.num_coeffs);
        w.raw_f64s(&self.data);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, FEATURE_MAGIC, FEATURE_VERSION)?;
        let meta = FeatureMeta {
            source_id: r.str()?,
            sample_rate_hz: r.u32()?,
            frame_ms: r.f64()?,
            hop_ms: r.f64()?,
            num_filters: r.usize()?,
            dct: r.str()?,
        };
        let num_frames = r.usize()?;
        let num_coeffs = r.usize()?;
        if num_coeffs == 0 {
            return Err(Error::Container("zero coefficients per frame".into()));
        }
        let count = num_frames
            .checked_mul(num_coeffs)
            .filter(|c| c.saturating_mul(8) <= r.remaining())
            .ok_or_else(|| Error::Container("feature payload truncated".into()))?;
        let data = r.raw_f64s(count)?;
        r.finish()?;
        FeatureMatrix::new(data, num_coeffs, meta)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::from(e).in_file(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::from(e).in_file(path))?;
        Self::from_bytes(&bytes).in_file(path)
    }
}

/// Frames → log Mel energies → DCT, with all plans built once.
pub struct MfccExtractor {
    bank: MelFilterbank,
    spectrum: PowerSpectrum,
    dct: Dct,
    num_coeffs: usize,
    log_floor: f64,
}

impl MfccExtractor {
    pub fn new(bank: MelFilterbank, num_coeffs: usize, log_floor: f64) -> Result<Self> {
        if num_coeffs == 0 || num_coeffs > bank.num_filters() {
            return Err(Error::Config(format!(
                "coefficient count {num_coeffs} must be in 1..={}",
                bank.num_filters()
            )));
        }
        if !(log_floor > 0.0) {
            return Err(Error::Config(format!("log floor {log_floor} must be positive")));
        }
        let spectrum = PowerSpectrum::new(bank.fft_size())?;
        let dct = Dct::new(bank.num_filters(), num_coeffs);
        Ok(MfccExtractor {
            bank,
            spectrum,
            dct,
            num_coeffs,
            log_floor,
        })
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.bank
    }

    pub fn num_coeffs(&self) -> usize {
        self.num_coeffs
    }

    pub fn extract(
        &mut self,
        frames: &FrameSet,
        frame_ms: f64,
        hop_ms: f64,
    ) -> Result<FeatureMatrix> {
        if frames.sample_rate_hz() != self.bank.sample_rate_hz() {
            return Err(Error::Config(format!(
                "frames at {} Hz but filterbank built for {} Hz",
                frames.sample_rate_hz(),
                self.bank.sample_rate_hz()
            )));
        }
        let mut spec = vec![0.0; self.spectrum.num_bins()];
        let mut energies = vec![0.0; self.bank.num_filters()];
        let mut data = vec![0.0; frames.num_frames() * self.num_coeffs];
        for (frame, out) in frames.frames().zip(data.chunks_exact_mut(self.num_coeffs)) {
            self.spectrum.compute_into(frame, &mut spec)?;
            self.bank.energies_into(&spec, &mut energies);
            for e in energies.iter_mut() {
                *e = e.max(self.log_floor).ln();
            }
            self.dct.apply_into(&energies, out);
        }
        let meta = FeatureMeta {
            source_id: frames.source_id().to_string(),
            sample_rate_hz: frames.sample_rate_hz(),
            frame_ms,
            hop_ms,
            num_filters: self.bank.num_filters(),
            dct: DCT_CONVENTION.to_string(),
        };
        FeatureMatrix::new(data, self.num_coeffs, meta)
    }
}

/// One-call wrapper around [`MfccExtractor`]. Frame and hop durations in the
/// metadata are derived from the frame set.
pub fn mfcc(
    frames: &FrameSet,
    bank: &MelFilterbank,
    num_coeffs: usize,
    log_floor: f64,
) -> Result<FeatureMatrix> {
    let rate = f64::from(frames.sample_rate_hz());
    let frame_ms = frames.frame_len() as f64 * 1000.0 / rate;
    let hop_ms = frames.hop_len() as f64 * 1000.0 / rate;
    MfccExtractor::new(bank.clone(), num_coeffs, log_floor)?.extract(frames, frame_ms, hop_ms)
}
