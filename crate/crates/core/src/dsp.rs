//! STFT analysis and overlap-add synthesis.
//!
//! Frames are centered: the signal is reflect-padded by `frame_size / 2` on
//! both sides before framing, so frame `t` is centered on sample `t * hop`
//! and a signal of `L` samples yields `L / hop + 1` frames (integer
//! division). Analysis and synthesis both use a periodic Hann window and
//! synthesis normalizes by the summed squared window, which makes
//! `istft(stft(w))` reproduce `w` wherever the window sum is non-zero.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Mono time-domain audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Length { len: 0, min: 1 });
        }
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("waveform contains non-finite samples".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        energy(&self.samples)
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            (self.energy() / self.samples.len() as f64).sqrt()
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

pub fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    #[default]
    Hann,
}

impl WindowKind {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            // Periodic (DFT-even) Hann.
            WindowKind::Hann => (0..len)
                .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StftConfig {
    pub frame_size: usize,
    pub hop: usize,
    #[serde(default)]
    pub window: WindowKind,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            frame_size: 1024,
            hop: 256,
            window: WindowKind::Hann,
        }
    }
}

impl StftConfig {
    pub fn new(frame_size: usize, hop: usize) -> Result<Self> {
        let cfg = Self {
            frame_size,
            hop,
            window: WindowKind::Hann,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_size < 2 || !self.frame_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "frame size must be even and >= 2, got {}",
                self.frame_size
            )));
        }
        if self.hop == 0 || !self.frame_size.is_multiple_of(self.hop) || self.hop > self.frame_size / 2 {
            return Err(Error::Config(format!(
                "hop {} must divide frame size {} and be at most half of it",
                self.hop, self.frame_size
            )));
        }
        Ok(())
    }

    pub fn n_freq(&self) -> usize {
        self.frame_size / 2 + 1
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn n_frames(&self, len: usize) -> usize {
        len / self.hop + 1
    }
}

/// Complex T-F grid, `bins[[f, t]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub bins: Array2<Complex64>,
    pub frame_size: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn n_freq(&self) -> usize {
        self.bins.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.bins.ncols()
    }

    pub fn magnitude(&self) -> Array2<f64> {
        magnitude(self)
    }

    pub fn total_power(&self) -> f64 {
        self.bins.iter().map(|z| z.norm_sqr()).sum()
    }
}

struct FftPair {
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
}

thread_local! {
    static PLANNER: RefCell<RealFftPlanner<f64>> = RefCell::new(RealFftPlanner::new());
}

fn plan(len: usize) -> FftPair {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        FftPair {
            forward: p.plan_fft_forward(len),
            inverse: p.plan_fft_inverse(len),
        }
    })
}

fn reflect_index(i: isize, len: usize) -> usize {
    // Single reflection without repeating the edge sample, valid while the
    // overhang is shorter than the signal.
    let n = len as isize;
    let mut j = i;
    if j < 0 {
        j = -j;
    }
    if j >= n {
        j = 2 * (n - 1) - j;
    }
    j as usize
}

pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    let n = cfg.frame_size;
    let len = w.samples.len();
    if len < n {
        return Err(Error::Length { len, min: n });
    }
    let half = (n / 2) as isize;
    let window = cfg.window.coefficients(n);
    let n_frames = cfg.n_frames(len);
    let n_freq = cfg.n_freq();
    let fft = plan(n);
    let mut frame = fft.forward.make_input_vec();
    let mut spectrum = fft.forward.make_output_vec();
    let mut scratch = fft.forward.make_scratch_vec();
    let mut bins = Array2::<Complex64>::zeros((n_freq, n_frames));

    for t in 0..n_frames {
        let start = (t * cfg.hop) as isize - half;
        for (k, slot) in frame.iter_mut().enumerate() {
            let idx = reflect_index(start + k as isize, len);
            *slot = w.samples[idx] * window[k];
        }
        fft.forward
            .process_with_scratch(&mut frame, &mut spectrum, &mut scratch)
            .map_err(|e| Error::Config(format!("fft failed: {e}")))?;
        for (f, z) in spectrum.iter().enumerate() {
            bins[[f, t]] = *z;
        }
    }

    Ok(Spectrogram {
        bins,
        frame_size: n,
        hop: cfg.hop,
        sample_rate: w.sample_rate,
    })
}

pub fn istft(s: &Spectrogram, cfg: &StftConfig, out_len: usize) -> Result<Waveform> {
    cfg.validate()?;
    let n = cfg.frame_size;
    if s.frame_size != n || s.hop != cfg.hop {
        return Err(Error::Config(format!(
            "spectrogram was built with frame {} / hop {}, config has {} / {}",
            s.frame_size, s.hop, n, cfg.hop
        )));
    }
    if s.n_freq() != cfg.n_freq() {
        return Err(Error::Config(format!(
            "spectrogram has {} bins, expected {}",
            s.n_freq(),
            cfg.n_freq()
        )));
    }
    let n_frames = s.n_frames();
    let half = n / 2;
    let padded_len = (n_frames - 1) * cfg.hop + n;
    let window = cfg.window.coefficients(n);
    let fft = plan(n);
    let mut spectrum = fft.inverse.make_input_vec();
    let mut frame = fft.inverse.make_output_vec();
    let mut scratch = fft.inverse.make_scratch_vec();
    let mut acc = vec![0.0; padded_len];
    let mut wss = vec![0.0; padded_len];
    let scale = 1.0 / n as f64;

    for t in 0..n_frames {
        for (f, z) in spectrum.iter_mut().enumerate() {
            *z = s.bins[[f, t]];
        }
        // The DC and Nyquist bins of a real signal are real.
        spectrum[0].im = 0.0;
        let last = spectrum.len() - 1;
        spectrum[last].im = 0.0;
        fft.inverse
            .process_with_scratch(&mut spectrum, &mut frame, &mut scratch)
            .map_err(|e| Error::Config(format!("inverse fft failed: {e}")))?;
        let start = t * cfg.hop;
        for k in 0..n {
            acc[start + k] += frame[k] * scale * window[k];
            wss[start + k] += window[k] * window[k];
        }
    }

    let mut samples = vec![0.0; out_len];
    for (i, out) in samples.iter_mut().enumerate() {
        let p = i + half;
        if p < padded_len && wss[p] > 1e-10 {
            *out = acc[p] / wss[p];
        }
    }
    Ok(Waveform {
        samples,
        sample_rate: s.sample_rate,
    })
}

pub fn magnitude(s: &Spectrogram) -> Array2<f64> {
    s.bins.mapv(|z| z.norm())
}

/// Combine a magnitude grid (F×T) with the phase of `reference`.
pub fn with_phase(mag: &Array2<f64>, reference: &Spectrogram) -> Result<Spectrogram> {
    if mag.dim() != reference.bins.dim() {
        return Err(Error::Shape(format!(
            "magnitude {:?} vs spectrogram {:?}",
            mag.dim(),
            reference.bins.dim()
        )));
    }
    let mut bins = reference.bins.clone();
    ndarray::Zip::from(&mut bins).and(mag).for_each(|z, &m| {
        let r = z.norm();
        *z = if r > 0.0 {
            *z * (m / r)
        } else {
            Complex64::new(m, 0.0)
        };
    });
    Ok(Spectrogram {
        bins,
        frame_size: reference.frame_size,
        hop: reference.hop,
        sample_rate: reference.sample_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_wave(len: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new(
            (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
            16_000,
        )
        .unwrap()
    }

    #[test]
    fn zero_input_gives_zero_spectrogram() {
        let w = Waveform::zeros(16_000, 16_000);
        let s = stft(&w, &StftConfig::default()).unwrap();
        assert_eq!(s.n_freq(), 513);
        assert!(s.bins.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn frame_count_golden() {
        // 16000 / 256 + 1 with centered reflect padding.
        let w = Waveform::zeros(16_000, 16_000);
        let s = stft(&w, &StftConfig::default()).unwrap();
        assert_eq!(s.n_frames(), 63);
        assert_eq!(StftConfig::default().n_frames(16_000), 63);
    }

    #[test]
    fn bin_centred_sinusoid_concentrates_energy() {
        let cfg = StftConfig::default();
        let k = 40usize;
        let f0 = k as f64 * 16_000.0 / 1024.0;
        let samples: Vec<f64> = (0..16_000)
            .map(|n| (2.0 * PI * f0 * n as f64 / 16_000.0).sin())
            .collect();
        let s = stft(&Waveform::new(samples, 16_000).unwrap(), &cfg).unwrap();

        // Oracle: direct DFT of one windowed, unpadded frame.
        let win = cfg.window.coefficients(1024);
        let start = 4096;
        let direct: Vec<f64> = (0..513)
            .map(|f| {
                let (mut re, mut im) = (0.0, 0.0);
                for n in 0..1024 {
                    let x = (2.0 * PI * f0 * (start + n) as f64 / 16_000.0).sin() * win[n];
                    let ph = -2.0 * PI * (f * n) as f64 / 1024.0;
                    re += x * ph.cos();
                    im += x * ph.sin();
                }
                re * re + im * im
            })
            .collect();
        let direct_total: f64 = direct.iter().sum();
        let direct_near: f64 = direct[k - 1..=k + 1].iter().sum();
        assert!(direct_near / direct_total >= 0.99);

        for t in 4..s.n_frames() - 4 {
            let total: f64 = (0..513).map(|f| s.bins[[f, t]].norm_sqr()).sum();
            let near: f64 = (k - 1..=k + 1).map(|f| s.bins[[f, t]].norm_sqr()).sum();
            assert!(near / total >= 0.99, "frame {t}: {}", near / total);
        }
        // Interior frame at sample 4608 = 18 * 256 matches the direct DFT
        // of the frame starting 512 samples earlier.
        let t = (start + 512) / 256;
        let ours: f64 = (0..513).map(|f| s.bins[[f, t]].norm_sqr()).sum();
        assert!((ours - direct_total).abs() / direct_total < 1e-9);
    }

    #[test]
    fn short_signal_is_rejected() {
        let w = Waveform::zeros(100, 16_000);
        assert!(matches!(
            stft(&w, &StftConfig::default()),
            Err(Error::Length { len: 100, min: 1024 })
        ));
    }

    #[test]
    fn round_trip_reconstructs_interior() {
        let cfg = StftConfig::default();
        let w = random_wave(16_000, 3);
        let s = stft(&w, &cfg).unwrap();
        let y = istft(&s, &cfg, w.len()).unwrap();
        let peak = w.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = (1024..w.len() - 1024)
            .map(|i| (y.samples[i] - w.samples[i]).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6 * peak, "err {err}");
    }

    #[test]
    fn zero_spectrogram_gives_zero_waveform() {
        let cfg = StftConfig::default();
        let s = stft(&Waveform::zeros(8_000, 16_000), &cfg).unwrap();
        let y = istft(&s, &cfg, 8_000).unwrap();
        assert!(y.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_mask_is_identity() {
        let cfg = StftConfig::default();
        let w = random_wave(12_000, 9);
        let s = stft(&w, &cfg).unwrap();
        let masked = with_phase(&s.magnitude(), &s).unwrap();
        let y = istft(&masked, &cfg, w.len()).unwrap();
        let err = (1024..w.len() - 1024)
            .map(|i| (y.samples[i] - w.samples[i]).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6);
    }

    #[test]
    fn istft_rejects_config_mismatch() {
        let s = stft(&Waveform::zeros(4096, 16_000), &StftConfig::default()).unwrap();
        let other = StftConfig::new(512, 128).unwrap();
        assert!(matches!(istft(&s, &other, 4096), Err(Error::Config(_))));
    }

    #[test]
    fn magnitude_examples() {
        let mut bins = Array2::<Complex64>::zeros((2, 1));
        bins[[0, 0]] = Complex64::new(3.0, 4.0);
        let s = Spectrogram {
            bins,
            frame_size: 2,
            hop: 1,
            sample_rate: 16_000,
        };
        let m = magnitude(&s);
        assert_eq!(m[[0, 0]], 5.0);
        assert_eq!(m[[1, 0]], 0.0);

        let rot = Complex64::from_polar(1.0, 0.7);
        let rotated = Spectrogram {
            bins: s.bins.mapv(|z| z * rot),
            ..s.clone()
        };
        assert!((magnitude(&rotated)[[0, 0]] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn energy_scales_quadratically() {
        let cfg = StftConfig::default();
        let w = random_wave(8_000, 1);
        let doubled = Waveform::new(w.samples.iter().map(|v| 2.0 * v).collect(), 16_000).unwrap();
        let e1 = stft(&w, &cfg).unwrap().total_power();
        let e2 = stft(&doubled, &cfg).unwrap().total_power();
        assert!((e2 / e1 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic() {
        let cfg = StftConfig::default();
        let w = random_wave(5_000, 5);
        assert_eq!(stft(&w, &cfg).unwrap(), stft(&w, &cfg).unwrap());
    }

    #[test]
    fn config_validation() {
        assert!(StftConfig::new(1024, 256).is_ok());
        assert!(StftConfig::new(1024, 1000).is_err());
        assert!(StftConfig::new(1024, 768).is_err());
        assert!(StftConfig::new(1023, 1).is_err());
    }
}
