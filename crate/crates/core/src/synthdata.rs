//! Synthetic "toy piano" clips: random onset scores, additive rendering and
//! log-mel feature frames aligned one-to-one with the score's time grid.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::event_matrix::EventMatrix;

/// Binary `K × T` note-onset matrix (rows are notes).
pub type NoteGrid = EventMatrix;

/// `F × T` feature frames.
pub type FeatureFrames = Array2<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct Note {
    pub fundamental_hz: f64,
    pub harmonics: Vec<f64>,
    /// Exponential amplitude decay rate in 1/s.
    pub decay: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoteBank {
    pub notes: Vec<Note>,
}

impl NoteBank {
    pub fn new(notes: Vec<Note>, sample_rate: f64) -> Result<Self> {
        if notes.is_empty() {
            return Err(Error::Domain("note bank needs at least one note".into()));
        }
        for (k, n) in notes.iter().enumerate() {
            if !(n.fundamental_hz > 0.0 && n.fundamental_hz < sample_rate / 2.0) {
                return Err(Error::Domain(format!(
                    "note {k}: fundamental {} Hz outside (0, Nyquist)",
                    n.fundamental_hz
                )));
            }
            if notes[..k].iter().any(|m| m.fundamental_hz == n.fundamental_hz) {
                return Err(Error::Domain(format!("note {k}: duplicate fundamental")));
            }
        }
        Ok(Self { notes })
    }

    /// Eight notes over two octaves from A3 (A minor seventh arpeggio).
    pub fn default_bank() -> Self {
        Self::arpeggio(8).expect("eight notes fit below Nyquist")
    }

    /// `k` notes climbing the arpeggio from A3; the first eight match
    /// [`NoteBank::default_bank`].
    pub fn arpeggio(k: usize) -> Result<Self> {
        const HEAD: [u32; 8] = [0, 3, 7, 10, 12, 15, 19, 24];
        const STEP: [u32; 4] = [3, 7, 10, 12];
        let notes = (0..k)
            .map(|j| {
                let semis = if j < HEAD.len() {
                    HEAD[j]
                } else {
                    let r = j - HEAD.len();
                    24 + 12 * (r / 4) as u32 + STEP[r % 4]
                };
                Note {
                    fundamental_hz: 220.0 * 2f64.powf(semis as f64 / 12.0),
                    harmonics: vec![0.25, 0.12, 0.07, 0.04],
                    decay: 6.0,
                }
            })
            .collect();
        Self::new(notes, FrameConfig::default().sample_rate)
    }

    pub fn len(&self) -> usize {
        self.notes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }
}

/// Framing used for rendering and feature extraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameConfig {
    pub sample_rate: f64,
    pub window: usize,
    pub hop: usize,
    pub n_mels: usize,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            sample_rate: 22050.0,
            window: 1024,
            hop: 512,
            n_mels: 64,
        }
    }
}

impl FrameConfig {
    /// Waveform length yielding exactly `n_frames` frames.
    pub fn samples_for_frames(&self, n_frames: usize) -> usize {
        (n_frames.max(1) - 1) * self.hop + self.window
    }

    pub fn n_frames(&self, n_samples: usize) -> usize {
        if n_samples < self.window {
            0
        } else {
            (n_samples - self.window) / self.hop + 1
        }
    }

    /// Seconds per latent step.
    pub fn step_seconds(&self) -> f64 {
        self.hop as f64 / self.sample_rate
    }
}

/// Independent Bernoulli onsets with probability `onset_rate` per cell.
pub fn sample_score(seed: u64, k: usize, t: usize, onset_rate: f64) -> Result<NoteGrid> {
    if !(0.0..=1.0).contains(&onset_rate) {
        return Err(Error::Domain(format!("onset rate {onset_rate} outside [0,1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Vec::new();
    for alpha in 0..k {
        for step in 0..t {
            if rng.gen::<f64>() < onset_rate {
                events.push((alpha, step));
            }
        }
    }
    NoteGrid::new(k, t, events)
}

const SILENCE: f64 = 1e-5;

/// Additive rendering: each onset `(α, t)` starts a decaying harmonic stack
/// at sample `t · hop`. Harmonics at or above Nyquist are dropped.
pub fn render(grid: &NoteGrid, bank: &NoteBank, cfg: &FrameConfig) -> Result<Vec<f64>> {
    if grid.n_units() != bank.len() {
        return Err(Error::Shape(format!(
            "grid has {} notes, bank has {}",
            grid.n_units(),
            bank.len()
        )));
    }
    let len = cfg.samples_for_frames(grid.n_steps());
    let mut out = vec![0.0; len];
    let sr = cfg.sample_rate;
    for &(alpha, step) in grid.events() {
        let note = &bank.notes[alpha];
        let start = step * cfg.hop;
        let peak: f64 = note.harmonics.iter().map(|a| a.abs()).sum();
        let audible = if note.decay > 0.0 && peak > 0.0 {
            ((peak / SILENCE).ln() / note.decay * sr).ceil() as usize
        } else {
            len
        };
        let end = len.min(start + audible);
        let partials: Vec<(f64, f64)> = note
            .harmonics
            .iter()
            .enumerate()
            .map(|(h, &a)| (note.fundamental_hz * (h + 1) as f64, a))
            .filter(|&(f, _)| f < sr / 2.0)
            .collect();
        for (n, sample) in out[start..end].iter_mut().enumerate() {
            let time = n as f64 / sr;
            let env = (-note.decay * time).exp();
            let mut v = 0.0;
            for &(f, a) in &partials {
                v += a * (2.0 * PI * f * time).sin();
            }
            *sample += env * v;
        }
    }
    Ok(out)
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Hann-windowed STFT magnitudes averaged into mel bands, then `ln(1 + x)`.
pub struct FeatureExtractor {
    cfg: FrameConfig,
    window: Vec<f64>,
    norm: f64,
    filters: Vec<Vec<(usize, f64)>>,
    centers_hz: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl FeatureExtractor {
    pub fn new(cfg: FrameConfig) -> Self {
        let n = cfg.window;
        let window: Vec<f64> = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
            .collect();
        // a unit-amplitude sinusoid on a bin centre gets magnitude 1
        let norm = window.iter().sum::<f64>() / 2.0;
        let n_bins = n / 2 + 1;
        let bin_hz = cfg.sample_rate / n as f64;
        let mel_max = hz_to_mel(cfg.sample_rate / 2.0);
        let points: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|k| mel_to_hz(mel_max * k as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let mut filters = Vec::with_capacity(cfg.n_mels);
        for b in 0..cfg.n_mels {
            let (lo, c, hi) = (points[b], points[b + 1], points[b + 2]);
            let mut weights: Vec<(usize, f64)> = (0..n_bins)
                .filter_map(|k| {
                    let f = k as f64 * bin_hz;
                    let w = ((f - lo) / (c - lo)).min((hi - f) / (hi - c));
                    (w > 0.0).then_some((k, w))
                })
                .collect();
            if weights.is_empty() {
                weights.push((((c / bin_hz).round() as usize).min(n_bins - 1), 1.0));
            }
            let total: f64 = weights.iter().map(|w| w.1).sum();
            weights.iter_mut().for_each(|w| w.1 /= total);
            filters.push(weights);
        }
        let fft = FftPlanner::new().plan_fft_forward(n);
        Self {
            cfg,
            window,
            norm,
            filters,
            centers_hz: points[1..=cfg.n_mels].to_vec(),
            fft,
        }
    }

    pub fn config(&self) -> &FrameConfig {
        &self.cfg
    }

    pub fn band_centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    /// Normalized magnitude spectrum (bins `0..=window/2`) of one frame.
    pub fn spectrum(&self, frame: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = frame
            .iter()
            .zip(&self.window)
            .map(|(&x, &w)| Complex::new(x * w, 0.0))
            .collect();
        self.fft.process(&mut buf);
        buf[..self.cfg.window / 2 + 1]
            .iter()
            .map(|c| c.norm() / self.norm)
            .collect()
    }

    /// `F × T_z` log-mel features with `T_z = ⌊(len − window)/hop⌋ + 1`.
    pub fn features(&self, waveform: &[f64]) -> Result<Array2<f64>> {
        let frames = self.cfg.n_frames(waveform.len());
        if frames == 0 {
            return Err(Error::Shape(format!(
                "waveform of {} samples is shorter than the {}-sample window",
                waveform.len(),
                self.cfg.window
            )));
        }
        let mut out = Array2::zeros((self.cfg.n_mels, frames));
        for t in 0..frames {
            let start = t * self.cfg.hop;
            let mag = self.spectrum(&waveform[start..start + self.cfg.window]);
            for (b, filter) in self.filters.iter().enumerate() {
                let v: f64 = filter.iter().map(|&(k, w)| w * mag[k]).sum();
                out[[b, t]] = v.ln_1p();
            }
        }
        Ok(out)
    }

    /// Rough inverse for listening: one oscillator per mel band at its centre
    /// frequency, amplitude `exp(x) − 1`, Hann overlap-add between frames.
    pub fn resynthesize(&self, frames: &Array2<f64>) -> Vec<f64> {
        let (bands, steps) = frames.dim();
        let len = self.cfg.samples_for_frames(steps);
        let mut out = vec![0.0; len];
        let sr = self.cfg.sample_rate;
        let hop = self.cfg.hop as f64;
        for (i, sample) in out.iter_mut().enumerate() {
            // frame t is centred at t·hop + window/2
            let pos = (i as f64 - self.cfg.window as f64 / 2.0) / hop;
            let t0 = pos.floor().clamp(0.0, (steps - 1) as f64) as usize;
            let t1 = (t0 + 1).min(steps - 1);
            let frac = (pos - t0 as f64).clamp(0.0, 1.0);
            let time = i as f64 / sr;
            let mut v = 0.0;
            for b in 0..bands.min(self.centers_hz.len()) {
                let amp = (1.0 - frac) * frames[[b, t0]].exp_m1() + frac * frames[[b, t1]].exp_m1();
                if amp > 0.0 {
                    v += amp * (2.0 * PI * self.centers_hz[b] * time).sin();
                }
            }
            *sample = v;
        }
        out
    }
}

/// Standalone convenience wrapper around [`FeatureExtractor::features`].
pub fn features(waveform: &[f64], cfg: &FrameConfig) -> Result<Array2<f64>> {
    FeatureExtractor::new(*cfg).features(waveform)
}

/// One synthetic clip: its onset grid and feature frames (same `T`).
#[derive(Debug, Clone)]
pub struct Clip {
    pub grid: NoteGrid,
    pub features: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetConfig {
    pub n_steps: usize,
    pub onset_rate: f64,
    pub frame: FrameConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_steps: 256,
            onset_rate: 0.015,
            frame: FrameConfig::default(),
        }
    }
}

/// Renders `n_clips` clips; clip `c` uses score seed `seed · 1_000_003 + c`.
pub fn toy_dataset(seed: u64, n_clips: usize, bank: &NoteBank, cfg: &DatasetConfig) -> Result<Vec<Clip>> {
    let extractor = FeatureExtractor::new(cfg.frame);
    (0..n_clips)
        .map(|c| {
            let grid = sample_score(
                seed.wrapping_mul(1_000_003).wrapping_add(c as u64),
                bank.len(),
                cfg.n_steps,
                cfg.onset_rate,
            )?;
            let wave = render(&grid, bank, &cfg.frame)?;
            let features = extractor.features(&wave)?;
            Ok(Clip { grid, features })
        })
        .collect()
}

/// 16-bit PCM mono WAV, samples clipped to `[-1, 1]`.
pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * i16::MAX as f64).round() as i16;
        writer.write_sample(v).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

/// Reads a mono 16-bit PCM WAV into `[-1, 1]` samples and its sample rate.
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::parse(0, "expected 16-bit PCM mono WAV"));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / i16::MAX as f64))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(wav_err)?;
    Ok((samples, spec.sample_rate))
}

fn wav_err(e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::parse(0, other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_extremes() {
        assert_eq!(sample_score(1, 8, 32, 0.0).unwrap().event_count(), 0);
        assert_eq!(sample_score(1, 8, 32, 1.0).unwrap().event_count(), 256);
        assert!(sample_score(1, 8, 32, 1.5).is_err());
        assert_eq!(sample_score(5, 4, 9, 0.3).unwrap(), sample_score(5, 4, 9, 0.3).unwrap());
    }

    #[test]
    fn score_rate_within_three_sigma() {
        let (k, t, p) = (100usize, 1000usize, 0.07);
        let grid = sample_score(42, k, t, p).unwrap();
        let cells = (k * t) as f64;
        let sigma = (cells * p * (1.0 - p)).sqrt();
        assert!((grid.event_count() as f64 - cells * p).abs() < 3.0 * sigma);
    }

    #[test]
    fn empty_grid_renders_silence() {
        let bank = NoteBank::default_bank();
        let cfg = FrameConfig::default();
        let wave = render(&NoteGrid::empty(8, 10).unwrap(), &bank, &cfg).unwrap();
        assert_eq!(wave.len(), 9 * 512 + 1024);
        assert!(wave.iter().all(|&x| x == 0.0));
        let feats = FeatureExtractor::new(cfg).features(&wave).unwrap();
        assert_eq!(feats.dim(), (64, 10));
        assert!(feats.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_partial_is_decaying_sinusoid() {
        let cfg = FrameConfig::default();
        let bank = NoteBank::new(
            vec![Note {
                fundamental_hz: 440.0,
                harmonics: vec![0.5],
                decay: 3.0,
            }],
            cfg.sample_rate,
        )
        .unwrap();
        let grid = NoteGrid::new(1, 4, vec![(0, 2)]).unwrap();
        let wave = render(&grid, &bank, &cfg).unwrap();
        assert!(wave[..1024].iter().all(|&x| x == 0.0));
        for n in [0usize, 1, 100, 777, 1500] {
            let time = n as f64 / cfg.sample_rate;
            let want = 0.5 * (-3.0 * time).exp() * (2.0 * PI * 440.0 * time).sin();
            assert!((wave[1024 + n] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn aliasing_harmonics_dropped() {
        let cfg = FrameConfig::default();
        let high = Note {
            fundamental_hz: 8000.0,
            harmonics: vec![0.0, 1.0],
            decay: 1.0,
        };
        let bank = NoteBank::new(vec![high], cfg.sample_rate).unwrap();
        let wave = render(&NoteGrid::new(1, 2, vec![(0, 0)]).unwrap(), &bank, &cfg).unwrap();
        assert!(wave.iter().all(|&x| x == 0.0));
        assert!(NoteBank::new(vec![], 22050.0).is_err());
    }

    #[test]
    fn superposition() {
        let bank = NoteBank::default_bank();
        let cfg = FrameConfig::default();
        let a = NoteGrid::new(8, 20, vec![(0, 1), (3, 5), (7, 19)]).unwrap();
        let b = NoteGrid::new(8, 20, vec![(0, 2), (5, 5)]).unwrap();
        let mut both = a.events().to_vec();
        both.extend_from_slice(b.events());
        let union = NoteGrid::new(8, 20, both).unwrap();
        let (wa, wb, wu) = (
            render(&a, &bank, &cfg).unwrap(),
            render(&b, &bank, &cfg).unwrap(),
            render(&union, &bank, &cfg).unwrap(),
        );
        for i in 0..wu.len() {
            assert!((wa[i] + wb[i] - wu[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn spectrum_matches_direct_dft() {
        let cfg = FrameConfig::default();
        let fx = FeatureExtractor::new(cfg);
        let n = cfg.window;
        let frame: Vec<f64> = (0..n).map(|i| ((i * 37 % 101) as f64 / 50.0 - 1.0) * 0.3).collect();
        let fast = fx.spectrum(&frame);
        let norm: f64 = (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).sum::<f64>() / 2.0;
        for k in [0usize, 1, 17, 256, 511, 512] {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, &x) in frame.iter().enumerate() {
                let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos();
                let ang = -2.0 * PI * (k * i) as f64 / n as f64;
                re += x * w * ang.cos();
                im += x * w * ang.sin();
            }
            assert!(((re * re + im * im).sqrt() / norm - fast[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn tone_lands_in_its_band() {
        let cfg = FrameConfig::default();
        let fx = FeatureExtractor::new(cfg);
        for band in [20usize, 35, 50] {
            let f = fx.band_centers_hz()[band];
            let wave: Vec<f64> = (0..4096)
                .map(|i| 0.5 * (2.0 * PI * f * i as f64 / cfg.sample_rate).sin())
                .collect();
            let feats = fx.features(&wave).unwrap();
            assert_eq!(feats.ncols(), (4096 - 1024) / 512 + 1);
            let col = feats.column(2);
            let argmax = (0..64).max_by(|&a, &b| col[a].partial_cmp(&col[b]).unwrap()).unwrap();
            assert_eq!(argmax, band);
        }
    }

    #[test]
    fn short_input_rejected() {
        assert!(features(&[0.0; 100], &FrameConfig::default()).is_err());
    }

    #[test]
    fn wav_round_trip() {
        let dir = std::env::temp_dir().join(format!("spkm-wav-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.wav");
        let samples: Vec<f64> = (0..100).map(|i| (i as f64 / 50.0) - 1.0).collect();
        write_wav(&path, &samples, 22050).unwrap();
        let (back, sr) = read_wav(&path).unwrap();
        assert_eq!(sr, 22050);
        for (a, b) in samples.iter().zip(&back) {
            assert!((a - b).abs() < 1.0 / 32767.0);
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn arpeggio_extends_default() {
        let bank = NoteBank::arpeggio(10).unwrap();
        assert_eq!(bank.notes[..8], NoteBank::default_bank().notes[..]);
        assert!((bank.notes[7].fundamental_hz - 880.0).abs() < 1e-9);
        assert!((bank.notes[8].fundamental_hz - 220.0 * 2f64.powf(27.0 / 12.0)).abs() < 1e-9);
        assert!(NoteBank::arpeggio(0).is_err());
    }
}
