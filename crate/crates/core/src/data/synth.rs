//! Hermetic synthesis of speech-like signals, recording noises and clicks.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[serde(try_from = "String")]
pub enum NoiseFamily {
    White,
    Pink,
    /// Sum of band-limited noises with slow amplitude modulation.
    Babble,
}

impl NoiseFamily {
    pub const ALL: [NoiseFamily; 3] = [NoiseFamily::White, NoiseFamily::Pink, NoiseFamily::Babble];

    pub fn name(self) -> &'static str {
        match self {
            NoiseFamily::White => "white",
            NoiseFamily::Pink => "pink",
            NoiseFamily::Babble => "babble",
        }
    }
}

impl TryFrom<String> for NoiseFamily {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for NoiseFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        NoiseFamily::ALL
            .into_iter()
            .find(|f| f.name() == lower)
            .ok_or_else(|| Error::Config(format!("unknown noise family '{s}'")))
    }
}

impl fmt::Display for NoiseFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn normalize_rms(x: &mut [f64], rms: f64) {
    let e = crate::dsp::energy(x);
    if e > 0.0 {
        let g = rms / (e / x.len() as f64).sqrt();
        x.iter_mut().for_each(|v| *v *= g);
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Two-pole band-pass (RBJ constant skirt gain, peak gain 1).
struct Biquad {
    b0: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    x1: f64,
    x2: f64,
    y1: f64,
    y2: f64,
}

impl Biquad {
    fn bandpass(center: f64, q: f64, sr: f64) -> Self {
        let w0 = 2.0 * PI * center / sr;
        let alpha = w0.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b0: alpha / a0,
            b2: -alpha / a0,
            a1: -2.0 * w0.cos() / a0,
            a2: (1.0 - alpha) / a0,
            x1: 0.0,
            x2: 0.0,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn process(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.b2 * self.x2 - self.a1 * self.y1 - self.a2 * self.y2;
        self.x2 = self.x1;
        self.x1 = x;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Unit-RMS noise of the given family.
pub fn noise<R: Rng + ?Sized>(family: NoiseFamily, len: usize, sr: u32, rng: &mut R) -> Vec<f64> {
    let mut out = match family {
        NoiseFamily::White => (0..len).map(|_| gaussian(rng)).collect::<Vec<_>>(),
        NoiseFamily::Pink => {
            // Paul Kellet's refined pink filter.
            let (mut b0, mut b1, mut b2, mut b3, mut b4, mut b5, mut b6) =
                (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
            (0..len)
                .map(|_| {
                    let w = gaussian(rng);
                    b0 = 0.99886 * b0 + w * 0.0555179;
                    b1 = 0.99332 * b1 + w * 0.0750759;
                    b2 = 0.96900 * b2 + w * 0.1538520;
                    b3 = 0.86650 * b3 + w * 0.3104856;
                    b4 = 0.55000 * b4 + w * 0.5329522;
                    b5 = -0.7616 * b5 - w * 0.0168980;
                    let y = b0 + b1 + b2 + b3 + b4 + b5 + b6 + w * 0.5362;
                    b6 = w * 0.115926;
                    y
                })
                .collect()
        }
        NoiseFamily::Babble => {
            let sr_f = sr as f64;
            let bands = rng.random_range(3..=5);
            let mut acc = vec![0.0; len];
            for _ in 0..bands {
                let center = rng.random_range(500.0..3000.0f64).min(0.4 * sr_f);
                let mut filt = Biquad::bandpass(center, 0.7, sr_f);
                let rate = rng.random_range(2.0..6.0);
                let phase = rng.random_range(0.0..2.0 * PI);
                let depth = rng.random_range(0.4..0.9);
                for (n, a) in acc.iter_mut().enumerate() {
                    let env = 1.0 - depth * 0.5 * (1.0 + (2.0 * PI * rate * n as f64 / sr_f + phase).sin());
                    *a += env * filt.process(gaussian(rng));
                }
            }
            acc
        }
    };
    normalize_rms(&mut out, 1.0);
    out
}

/// Syllable-shaped amplitude envelope: raised-sine bursts separated by
/// short pauses.
fn syllable_envelope<R: Rng + ?Sized>(len: usize, sr: f64, rng: &mut R) -> Vec<f64> {
    let mut env = vec![0.0; len];
    let mut pos = (rng.random_range(0.0..0.08) * sr) as usize;
    while pos < len {
        let syl = (rng.random_range(0.12..0.30) * sr) as usize;
        let gap = (rng.random_range(0.03..0.12) * sr) as usize;
        let peak = rng.random_range(0.6..1.0);
        for i in 0..syl {
            if pos + i >= len {
                break;
            }
            let x = (PI * i as f64 / syl as f64).sin();
            env[pos + i] = peak * x.sqrt();
        }
        pos += syl + gap;
    }
    env
}

/// Harmonic source with a wandering f0 (80–300 Hz), shaped by three
/// formant resonances that move per syllable, gated by a syllabic envelope.
/// Returns a signal with RMS `level_rms`.
pub fn speech<R: Rng + ?Sized>(len: usize, sr: u32, level_rms: f64, rng: &mut R) -> Vec<f64> {
    let sr_f = sr as f64;
    let env = syllable_envelope(len, sr_f, rng);

    let base_f0 = rng.random_range(90.0..260.0);
    let vib_rate = rng.random_range(0.5..3.0);
    let vib_phase = rng.random_range(0.0..2.0 * PI);
    let vib_depth = rng.random_range(0.05..0.15);
    let tilt = rng.random_range(0.8..1.4);
    let max_freq = (0.45 * sr_f).min(5000.0);

    // Formant targets change every ~syllable; interpolate linearly.
    let seg = (0.2 * sr_f) as usize;
    let n_targets = len / seg + 2;
    let targets: Vec<[(f64, f64); 3]> = (0..n_targets)
        .map(|_| {
            [
                (rng.random_range(300.0..900.0), rng.random_range(60.0..160.0)),
                (rng.random_range(900.0..2400.0), rng.random_range(80.0..200.0)),
                (rng.random_range(2400.0..3500.0), rng.random_range(120.0..250.0)),
            ]
        })
        .collect();
    let formant_at = |n: usize| -> [(f64, f64); 3] {
        let i = n / seg;
        let frac = (n % seg) as f64 / seg as f64;
        let (a, b) = (targets[i], targets[i + 1]);
        let mut out = a;
        for j in 0..3 {
            out[j].0 = a[j].0 + frac * (b[j].0 - a[j].0);
            out[j].1 = a[j].1 + frac * (b[j].1 - a[j].1);
        }
        out
    };

    const BLOCK: usize = 32;
    let max_harm = (max_freq / 80.0) as usize + 1;
    let mut phases: Vec<f64> = (0..max_harm).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let mut amps = vec![0.0; max_harm];
    let mut out = vec![0.0; len];
    for start in (0..len).step_by(BLOCK) {
        let t = start as f64 / sr_f;
        let f0 = (base_f0 * (1.0 + vib_depth * (2.0 * PI * vib_rate * t + vib_phase).sin()))
            .clamp(80.0, 300.0);
        let formants = formant_at(start);
        let n_harm = ((max_freq / f0) as usize).min(max_harm);
        for (h, a) in amps.iter_mut().enumerate().take(n_harm) {
            let fh = (h + 1) as f64 * f0;
            let mut g = 0.0;
            for &(fc, bw) in &formants {
                let x = (fh - fc) / (0.5 * bw);
                g += 1.0 / (1.0 + x * x);
            }
            *a = (0.02 + g) / ((h + 1) as f64).powf(tilt);
        }
        let end = (start + BLOCK).min(len);
        for n in start..end {
            if env[n] == 0.0 {
                // keep harmonic phases continuous through pauses
                for (h, ph) in phases.iter_mut().enumerate().take(n_harm) {
                    *ph += 2.0 * PI * (h + 1) as f64 * f0 / sr_f;
                }
                continue;
            }
            let mut v = 0.0;
            for h in 0..n_harm {
                phases[h] += 2.0 * PI * (h + 1) as f64 * f0 / sr_f;
                v += amps[h] * phases[h].sin();
            }
            out[n] = env[n] * v;
        }
        for ph in phases.iter_mut() {
            *ph %= 2.0 * PI;
        }
    }
    normalize_rms(&mut out, level_rms);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClickEvent {
    pub time_s: f64,
    pub amplitude: f64,
}

/// Add a decaying 2–10 ms transient at each event. The first sample of a
/// click has magnitude `amplitude` and takes the sign of the underlying
/// signal, so the clip's peak there is at least `amplitude`.
pub fn add_clicks<R: Rng + ?Sized>(x: &mut [f64], sr: u32, clicks: &[ClickEvent], rng: &mut R) {
    let sr_f = sr as f64;
    for c in clicks {
        let start = (c.time_s * sr_f).round() as isize;
        if start < 0 || start as usize >= x.len() {
            continue;
        }
        let start = start as usize;
        let dur = rng.random_range(0.002..0.010);
        let len = ((dur * sr_f) as usize).max(2);
        let tau = len as f64 / 4.0;
        let freq = rng.random_range(2000.0..4000.0f64).min(0.4 * sr_f);
        let polarity = if x[start] >= 0.0 { 1.0 } else { -1.0 };
        for i in 0..len {
            if start + i >= x.len() {
                break;
            }
            let v = c.amplitude
                * polarity
                * (-(i as f64) / tau).exp()
                * (2.0 * PI * freq * i as f64 / sr_f).cos();
            x[start + i] += v;
        }
    }
}
