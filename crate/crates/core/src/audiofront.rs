//! Waveform to log-mel spectrogram conversion.
//!
//! Clips are resampled to 44.1 kHz, cut into Hamming-windowed frames of 2048
//! samples with an overlap of 672 (hop 1376), transformed to a power spectrum
//! and projected onto 64 HTK-mel triangular bands. A 10 s clip gives exactly
//! 64×320.

use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{contract_err, Error, Result};
use crate::tensor::{Real, Tensor};

pub const TARGET_RATE: u32 = 44_100;
pub const WINDOW: usize = 2048;
pub const OVERLAP: usize = 672;
pub const HOP: usize = WINDOW - OVERLAP;
pub const MEL_BINS: usize = 64;
/// Floor on mel power before the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

/// Mono PCM samples at a fixed rate.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveClip {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl WaveClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(contract_err!("a clip needs at least one sample"));
        }
        if sample_rate == 0 {
            return Err(contract_err!("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(contract_err!("sample {i} is not finite"));
        }
        Ok(WaveClip {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f32] {
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
}

/// Linear-interpolation resampling. Output sample `i` sits at source
/// position `i · source / target`, computed in exact integer arithmetic.
pub fn resample_linear(clip: &WaveClip, target_rate: u32) -> Result<WaveClip> {
    if target_rate == 0 {
        return Err(contract_err!("target rate must be positive"));
    }
    let src = clip.sample_rate as u64;
    let dst = target_rate as u64;
    if src == dst {
        return Ok(clip.clone());
    }
    let n = clip.samples.len();
    let out_len = (n as u64 * dst / src) as usize;
    if out_len == 0 {
        return Err(contract_err!(
            "{n} samples at {src} Hz resample to nothing at {dst} Hz"
        ));
    }
    let s = &clip.samples;
    let out = (0..out_len as u64)
        .map(|i| {
            let num = i * src;
            let idx = (num / dst) as usize;
            let frac = (num % dst) as f64 / dst as f64;
            let a = s[idx.min(n - 1)] as f64;
            let b = s[(idx + 1).min(n - 1)] as f64;
            (a + (b - a) * frac) as f32
        })
        .collect();
    WaveClip::new(out, target_rate)
}

/// Reads a 16-bit PCM RIFF file, averaging multiple channels to mono.
pub fn read_wav(path: &Path) -> Result<WaveClip> {
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    })?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Format(format!(
            "{}: only 16-bit integer PCM is supported",
            path.display()
        )));
    }
    let channels = spec.channels.max(1) as usize;
    let raw: Vec<i16> = reader
        .into_samples::<i16>()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let samples = raw
        .chunks(channels)
        .map(|frame| {
            let sum: f32 = frame.iter().map(|&v| v as f32 / 32768.0).sum();
            sum / frame.len() as f32
        })
        .collect();
    WaveClip::new(samples, spec.sample_rate)
}

pub fn write_wav(path: &Path, clip: &WaveClip) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wrap = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format(other.to_string()),
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(wrap)?;
    for &s in &clip.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v).map_err(wrap)?;
    }
    w.finalize().map_err(wrap)
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK-mel filters spanning 0 Hz to Nyquist.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    weights: Vec<f64>,
    bands: usize,
    n_fft: usize,
    sample_rate: u32,
    edges_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(sample_rate: u32, n_fft: usize, bands: usize) -> Result<Self> {
        if bands == 0 || n_fft < 2 || sample_rate == 0 {
            return Err(contract_err!("degenerate filterbank parameters"));
        }
        let nyquist = sample_rate as f64 / 2.0;
        let top = hz_to_mel(nyquist);
        let edges_hz: Vec<f64> = (0..bands + 2)
            .map(|i| mel_to_hz(top * i as f64 / (bands + 1) as f64))
            .collect();
        let n_bins = n_fft / 2 + 1;
        let bin_hz = sample_rate as f64 / n_fft as f64;
        let mut weights = vec![0.0; bands * n_bins];
        for m in 0..bands {
            let (lo, mid, hi) = (edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]);
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                let w = if f > lo && f <= mid {
                    (f - lo) / (mid - lo)
                } else if f > mid && f < hi {
                    (hi - f) / (hi - mid)
                } else {
                    0.0
                };
                weights[m * n_bins + k] = w;
            }
            if weights[m * n_bins..(m + 1) * n_bins].iter().all(|&w| w <= 0.0) {
                return Err(contract_err!(
                    "mel band {m} covers no FFT bin; use a longer transform or fewer bands"
                ));
            }
        }
        Ok(MelFilterbank {
            weights,
            bands,
            n_fft,
            sample_rate,
            edges_hz,
        })
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn row(&self, band: usize) -> &[f64] {
        let n = self.n_bins();
        &self.weights[band * n..(band + 1) * n]
    }

    /// Peak frequency of a band.
    pub fn center_hz(&self, band: usize) -> f64 {
        self.edges_hz[band + 1]
    }

    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        (0..self.bands)
            .map(|m| self.row(m).iter().zip(power).map(|(w, p)| w * p).sum())
            .collect()
    }
}

/// Log-mel matrix of `bins × frames`, frequency-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    bins: usize,
    frames: usize,
    values: Vec<f32>,
}

impl Spectrogram {
    pub fn new(bins: usize, frames: usize, values: Vec<f32>) -> Result<Self> {
        if bins == 0 || frames == 0 {
            return Err(contract_err!("spectrogram needs positive dimensions"));
        }
        if values.len() != bins * frames {
            return Err(contract_err!(
                "{bins}×{frames} spectrogram given {} values",
                values.len()
            ));
        }
        Ok(Spectrogram {
            bins,
            frames,
            values,
        })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn at(&self, bin: usize, frame: usize) -> f32 {
        self.values[bin * self.frames + frame]
    }

    /// Network input of shape `1×F×T`.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::new(
            &[1, self.bins, self.frames],
            self.values.iter().map(|&v| T::from_f32(v).expect("f32 converts")).collect(),
        )
        .expect("spectrogram dimensions are positive")
    }

    /// Mean over frames of each mel bin.
    pub fn mean_per_bin(&self) -> Vec<f64> {
        (0..self.bins)
            .map(|b| {
                let row = &self.values[b * self.frames..(b + 1) * self.frames];
                row.iter().map(|&v| v as f64).sum::<f64>() / self.frames as f64
            })
            .collect()
    }
}

/// Number of complete frames; a trailing partial frame is dropped.
pub fn frame_count(len: usize, window: usize, hop: usize) -> usize {
    if len < window {
        0
    } else {
        (len - window) / hop + 1
    }
}

/// Symmetric Hamming window.
pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

#[derive(Clone, Debug)]
pub struct LogMelConfig {
    pub window: usize,
    pub overlap: usize,
    pub mel_bins: usize,
    pub floor: f64,
    pub sample_rate: u32,
}

impl Default for LogMelConfig {
    fn default() -> Self {
        LogMelConfig {
            window: WINDOW,
            overlap: OVERLAP,
            mel_bins: MEL_BINS,
            floor: LOG_FLOOR,
            sample_rate: TARGET_RATE,
        }
    }
}

impl LogMelConfig {
    pub fn hop(&self) -> usize {
        self.window - self.overlap
    }
}

/// Reusable FFT plan, window and filterbank for one configuration.
pub struct LogMelExtractor {
    config: LogMelConfig,
    window: Vec<f64>,
    filterbank: MelFilterbank,
    fft: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl LogMelExtractor {
    pub fn new(config: LogMelConfig) -> Result<Self> {
        if config.overlap >= config.window {
            return Err(contract_err!("overlap must be shorter than the window"));
        }
        let filterbank = MelFilterbank::new(config.sample_rate, config.window, config.mel_bins)?;
        let fft = FftPlanner::new().plan_fft_forward(config.window);
        Ok(LogMelExtractor {
            window: hamming(config.window),
            filterbank,
            fft,
            config,
        })
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    /// Power spectrum `|X_k|²`, `k = 0..=n/2`, of one windowed frame.
    pub fn power_spectrum(&self, frame: &[f32]) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = frame
            .iter()
            .zip(&self.window)
            .map(|(&s, &w)| Complex::new(s as f64 * w, 0.0))
            .collect();
        self.fft.process(&mut buf);
        buf[..self.config.window / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
    }

    pub fn extract(&self, clip: &WaveClip) -> Result<Spectrogram> {
        if clip.sample_rate() != self.config.sample_rate {
            return Err(contract_err!(
                "clip is at {} Hz, extractor expects {} Hz",
                clip.sample_rate(),
                self.config.sample_rate
            ));
        }
        let win = self.config.window;
        let hop = self.config.hop();
        let frames = frame_count(clip.len(), win, hop);
        if frames == 0 {
            return Err(contract_err!(
                "clip of {} samples is shorter than one {win}-sample window",
                clip.len()
            ));
        }
        let bins = self.config.mel_bins;
        let mut values = vec![0f32; bins * frames];
        for t in 0..frames {
            let frame = &clip.samples()[t * hop..t * hop + win];
            let mel = self.filterbank.apply(&self.power_spectrum(frame));
            for (b, &p) in mel.iter().enumerate() {
                values[b * frames + t] = p.max(self.config.floor).ln() as f32;
            }
        }
        Spectrogram::new(bins, frames, values)
    }
}

/// One-shot log-mel extraction; see [`LogMelExtractor`] for batches.
pub fn log_mel(clip: &WaveClip, config: &LogMelConfig) -> Result<Spectrogram> {
    LogMelExtractor::new(config.clone())?.extract(clip)
}
