//! Streaming log-mel frontend.
//!
//! Samples are framed with a fixed hop, Hann-windowed, zero-padded to the
//! FFT size and pooled through a triangular mel filterbank. Framing state
//! lives in [`MelStream`], so the frame sequence does not depend on how the
//! input is chunked.

use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Framing and filterbank parameters.
///
/// 267 and 133 samples are the nearest integers to 1/60 s and 1/120 s at
/// 16 kHz; the resulting rate drift is about 0.25 %.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct AudioConfig {
    pub sample_rate: u32,
    pub frame_len: usize,
    pub hop_len: usize,
    pub fft_size: usize,
    pub n_mels: usize,
    pub mel_fmin: f64,
    pub mel_fmax: f64,
    pub log_floor: f64,
}

impl Default for AudioConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            frame_len: 267,
            hop_len: 133,
            fft_size: 512,
            n_mels: 80,
            mel_fmin: 0.0,
            mel_fmax: 8_000.0,
            log_floor: 1e-10,
        }
    }
}

impl AudioConfig {
    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::config("audio.sample_rate", "must be positive"));
        }
        if self.hop_len == 0 {
            return Err(Error::config("audio.hop_len", "must be at least 1"));
        }
        if self.frame_len > self.fft_size {
            return Err(Error::config("audio.frame_len", "must not exceed fft_size"));
        }
        if self.hop_len > self.frame_len {
            return Err(Error::config("audio.hop_len", "must not exceed frame_len"));
        }
        if self.n_mels == 0 || self.n_mels >= self.n_bins() {
            return Err(Error::config("audio.n_mels", "must be in [1, fft_size/2 + 1)"));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::config("audio.log_floor", "must be > 0"));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        if !(self.mel_fmax <= nyquist) {
            return Err(Error::config(
                "audio.mel_fmax",
                format!("must not exceed Nyquist ({nyquist} Hz)"),
            ));
        }
        if !(self.mel_fmin >= 0.0 && self.mel_fmin < self.mel_fmax) {
            return Err(Error::config("audio.mel_fmin", "must satisfy 0 <= mel_fmin < mel_fmax"));
        }
        Ok(())
    }

    /// Number of frames a single contiguous signal of `n_samples` yields.
    pub fn frame_count(&self, n_samples: usize) -> usize {
        if n_samples < self.frame_len {
            0
        } else {
            (n_samples - self.frame_len) / self.hop_len + 1
        }
    }
}

/// One log-mel vector (natural log of pooled power).
#[derive(Debug, Clone, PartialEq)]
pub struct MelFrame {
    pub values: Vec<f32>,
    pub frame_index: u64,
    pub start_sample: u64,
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Dense triangular mel filterbank, `n_mels` rows by `fft_size/2 + 1` columns.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    n_mels: usize,
    n_bins: usize,
    weights: Vec<f64>,
    centers_hz: Vec<f64>,
    // nonzero column range per row
    support: Vec<(usize, usize)>,
}

impl MelFilterbank {
    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }

    pub fn center_hz(&self, m: usize) -> f64 {
        self.centers_hz[m]
    }

    /// Pools a power spectrum (`n_bins` values) into `n_mels` energies.
    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        debug_assert_eq!(power.len(), self.n_bins);
        for (m, o) in out.iter_mut().enumerate().take(self.n_mels) {
            let (lo, hi) = self.support[m];
            let row = &self.row(m)[lo..hi];
            *o = row.iter().zip(&power[lo..hi]).map(|(w, p)| w * p).sum();
        }
    }
}

pub fn mel_filterbank(config: &AudioConfig) -> Result<MelFilterbank> {
    config.validate()?;
    let n_bins = config.n_bins();
    let n_mels = config.n_mels;
    let mel_lo = hz_to_mel(config.mel_fmin);
    let mel_hi = hz_to_mel(config.mel_fmax);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = config.sample_rate as f64 / config.fft_size as f64;

    let mut weights = vec![0.0; n_mels * n_bins];
    let mut support = Vec::with_capacity(n_mels);
    for m in 0..n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = &mut weights[m * n_bins..(m + 1) * n_bins];
        let mut lo = n_bins;
        let mut hi = 0;
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let rising = (f - left) / (center - left);
            let falling = (right - f) / (right - center);
            *w = rising.min(falling).max(0.0);
            if *w > 0.0 {
                lo = lo.min(k);
                hi = k + 1;
            }
        }
        if lo >= hi {
            return Err(Error::config(
                "audio.n_mels",
                format!("mel filter {m} covers no FFT bin; reduce n_mels or raise fft_size"),
            ));
        }
        support.push((lo, hi));
    }

    Ok(MelFilterbank {
        n_mels,
        n_bins,
        weights,
        centers_hz: edges[1..=n_mels].to_vec(),
        support,
    })
}

/// Periodic Hann window of the given length.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
        .collect()
}

/// Incremental framer and log-mel extractor for one audio stream.
pub struct MelStream {
    config: AudioConfig,
    filterbank: MelFilterbank,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
    spectrum: Vec<Complex64>,
    power: Vec<f64>,
    mel: Vec<f64>,
    pending: Vec<f32>,
    // absolute sample offset of pending[0]
    pending_start: u64,
    samples_seen: u64,
    next_index: u64,
}

impl std::fmt::Debug for MelStream {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MelStream")
            .field("config", &self.config)
            .field("pending", &self.pending.len())
            .field("next_index", &self.next_index)
            .finish()
    }
}

impl MelStream {
    pub fn new(config: AudioConfig) -> Result<Self> {
        let filterbank = mel_filterbank(&config)?;
        let fft = FftPlanner::new().plan_fft_forward(config.fft_size);
        let scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        Ok(Self {
            window: hann_window(config.frame_len),
            spectrum: vec![Complex64::default(); config.fft_size],
            power: vec![0.0; config.n_bins()],
            mel: vec![0.0; config.n_mels],
            pending: Vec::with_capacity(config.frame_len * 2),
            pending_start: 0,
            samples_seen: 0,
            next_index: 0,
            config,
            filterbank,
            fft,
            scratch,
        })
    }

    pub fn config(&self) -> &AudioConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    /// Total samples accepted so far.
    pub fn samples_seen(&self) -> u64 {
        self.samples_seen
    }

    pub fn frames_emitted(&self) -> u64 {
        self.next_index
    }

    /// Appends samples and returns every frame completed by them.
    ///
    /// A chunk containing a non-finite sample is rejected as a whole and the
    /// stream state is left untouched.
    pub fn push(&mut self, samples: &[f32]) -> Result<Vec<MelFrame>> {
        let mut out = Vec::new();
        self.push_with(samples, |frame| out.push(frame))?;
        Ok(out)
    }

    /// Like [`MelStream::push`] but hands each frame to `sink` as soon as it
    /// is computed.
    pub fn push_with(&mut self, samples: &[f32], mut sink: impl FnMut(MelFrame)) -> Result<()> {
        if let Some(pos) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Input {
                offset: self.samples_seen + pos as u64,
                reason: format!("non-finite sample {}", samples[pos]),
            });
        }
        self.samples_seen += samples.len() as u64;
        self.pending.extend_from_slice(samples);

        let (frame_len, hop) = (self.config.frame_len, self.config.hop_len);
        let mut offset = 0;
        while self.pending.len() - offset >= frame_len {
            let frame = self.compute_frame(offset);
            sink(frame);
            offset += hop;
        }
        if offset > 0 {
            self.pending.drain(..offset);
            self.pending_start += offset as u64;
        }
        Ok(())
    }

    fn compute_frame(&mut self, offset: usize) -> MelFrame {
        let frame_len = self.config.frame_len;
        let samples = &self.pending[offset..offset + frame_len];
        for (slot, (&s, &w)) in self.spectrum.iter_mut().zip(samples.iter().zip(&self.window)) {
            *slot = Complex64::new(s as f64 * w, 0.0);
        }
        for slot in &mut self.spectrum[frame_len..] {
            *slot = Complex64::default();
        }
        self.fft.process_with_scratch(&mut self.spectrum, &mut self.scratch);
        for (p, c) in self.power.iter_mut().zip(&self.spectrum) {
            *p = c.norm_sqr();
        }
        self.filterbank.apply(&self.power, &mut self.mel);
        let floor = self.config.log_floor;
        let values = self.mel.iter().map(|&e| e.max(floor).ln() as f32).collect();

        let frame = MelFrame {
            values,
            frame_index: self.next_index,
            start_sample: self.pending_start + offset as u64,
        };
        self.next_index += 1;
        frame
    }
}

/// Reads a mono 16 kHz 16-bit PCM WAV file into samples in [-1, 1).
pub fn read_wav(path: &Path) -> Result<Vec<f32>> {
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other}", path.display())),
    })?;
    let spec = reader.spec();
    if spec.channels != 1
        || spec.sample_rate != 16_000
        || spec.bits_per_sample != 16
        || spec.sample_format != hound::SampleFormat::Int
    {
        return Err(Error::Data(format!(
            "{}: expected mono 16 kHz 16-bit PCM, got {} ch / {} Hz / {} bit {:?}",
            path.display(),
            spec.channels,
            spec.sample_rate,
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    reader
        .into_samples::<i16>()
        .map(|s| {
            s.map(|v| v as f32 / 32768.0)
                .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
        })
        .collect()
}

/// Writes samples as a mono 16 kHz 16-bit PCM WAV file.
pub fn write_wav(path: &Path, samples: &[f32]) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: 16_000,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wrap = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other}", path.display())),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wrap)?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(wrap)?;
    }
    writer.finalize().map_err(wrap)
}

/// Decodes little-endian 16-bit PCM bytes into samples in [-1, 1).
pub fn pcm16_to_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]) as f32 / 32768.0)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_power(frame: &[f64], fft_size: usize) -> Vec<f64> {
        (0..fft_size / 2 + 1)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, &x) in frame.iter().enumerate() {
                    let a = -2.0 * std::f64::consts::PI * (k * n) as f64 / fft_size as f64;
                    re += x * a.cos();
                    im += x * a.sin();
                }
                re * re + im * im
            })
            .collect()
    }

    #[test]
    fn one_second_yields_119_frames() {
        let cfg = AudioConfig::default();
        let mut stream = MelStream::new(cfg.clone()).unwrap();
        let frames = stream.push(&vec![0.1; 16_000]).unwrap();
        assert_eq!(frames.len(), 119);
        assert_eq!(frames.len(), (16_000 - 267) / 133 + 1);
        assert_eq!(cfg.frame_count(16_000), 119);
    }

    #[test]
    fn silence_hits_the_floor() {
        let cfg = AudioConfig::default();
        let floor = (cfg.log_floor.ln()) as f32;
        let mut stream = MelStream::new(cfg).unwrap();
        for f in stream.push(&vec![0.0; 2000]).unwrap() {
            assert!(f.values.iter().all(|&v| v == floor));
            assert_eq!(f.values.len(), 80);
        }
    }

    #[test]
    fn non_finite_sample_names_offset() {
        let mut stream = MelStream::new(AudioConfig::default()).unwrap();
        stream.push(&[0.0; 100]).unwrap();
        let mut chunk = vec![0.0; 50];
        chunk[7] = f32::NAN;
        match stream.push(&chunk) {
            Err(Error::Input { offset, .. }) => assert_eq!(offset, 107),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(stream.samples_seen(), 100);
    }

    #[test]
    fn filterbank_rows_are_nondegenerate_and_ordered() {
        let fb = mel_filterbank(&AudioConfig::default()).unwrap();
        assert_eq!((fb.n_mels(), fb.n_bins()), (80, 257));
        for m in 0..80 {
            assert!(fb.row(m).iter().all(|&w| w >= 0.0));
            assert!(fb.row(m).iter().sum::<f64>() > 0.0, "row {m}");
            if m > 0 {
                assert!(fb.center_hz(m) > fb.center_hz(m - 1));
            }
        }
    }

    #[test]
    fn filterbank_on_flat_spectrum_gives_row_sums() {
        let fb = mel_filterbank(&AudioConfig::default()).unwrap();
        let flat = vec![1.0; fb.n_bins()];
        let mut out = vec![0.0; fb.n_mels()];
        fb.apply(&flat, &mut out);
        for m in 0..fb.n_mels() {
            // dense matrix-vector product
            let dense: f64 = fb.row(m).iter().zip(&flat).map(|(w, p)| w * p).sum();
            assert!((out[m] - dense).abs() < 1e-12);
        }
    }

    #[test]
    fn fmax_above_nyquist_is_rejected() {
        let cfg = AudioConfig {
            mel_fmax: 9000.0,
            ..Default::default()
        };
        assert!(matches!(mel_filterbank(&cfg), Err(Error::Config { .. })));
    }

    #[test]
    fn sinusoid_at_mel_center_peaks_in_that_bin() {
        let cfg = AudioConfig::default();
        let fb = mel_filterbank(&cfg).unwrap();
        let window = hann_window(cfg.frame_len);
        for b in [30usize, 45, 60, 70, 79] {
            let f = fb.center_hz(b);
            let signal: Vec<f32> = (0..cfg.frame_len)
                .map(|n| (0.5 * (2.0 * std::f64::consts::PI * f * n as f64 / 16_000.0).sin()) as f32)
                .collect();
            let mut stream = MelStream::new(cfg.clone()).unwrap();
            let frame = stream.push(&signal).unwrap().remove(0);
            let engine_arg = argmax(&frame.values.iter().map(|&v| v as f64).collect::<Vec<_>>());

            let windowed: Vec<f64> = signal.iter().zip(&window).map(|(&s, w)| s as f64 * w).collect();
            let power = naive_power(&windowed, cfg.fft_size);
            let mut oracle = vec![0.0; 80];
            fb.apply(&power, &mut oracle);
            assert_eq!(argmax(&oracle), b, "oracle, bin {b}");
            assert_eq!(engine_arg, b, "engine, bin {b}");
        }
    }

    fn argmax(v: &[f64]) -> usize {
        v.iter()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |acc, (i, &x)| if x > acc.1 { (i, x) } else { acc },
            )
            .0
    }

    #[test]
    fn indices_and_offsets_are_monotone() {
        let mut stream = MelStream::new(AudioConfig::default()).unwrap();
        let signal: Vec<f32> = (0..5000).map(|i| ((i * 7919) % 200) as f32 / 200.0 - 0.5).collect();
        let frames = stream.push(&signal).unwrap();
        for (i, f) in frames.iter().enumerate() {
            assert_eq!(f.frame_index, i as u64);
            assert_eq!(f.start_sample, 133 * i as u64);
        }
    }
}
