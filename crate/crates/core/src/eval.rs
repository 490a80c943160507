//! Objective metrics and evaluation reports.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{CorpusExample, Split};
use crate::dsp::{istft, stft, StftConfig, Waveform};
use crate::error::{Error, Result};
use crate::model::{apply_mask, MaskNet};

pub const SI_SDR_CLAMP_DB: f64 = 60.0;
pub const SEG_SNR_RANGE_DB: (f64, f64) = (-10.0, 35.0);

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "estimate has {} samples, reference {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Scale-invariant SDR in dB, clamped to ±60.
pub fn si_sdr(est: &[f64], reference: &[f64]) -> Result<f64> {
    same_len(est, reference)?;
    let rr = dot(reference, reference);
    if rr <= 0.0 {
        return Err(Error::SilentReference);
    }
    let alpha = dot(est, reference) / rr;
    let target_e = alpha * alpha * rr;
    let resid_e: f64 = est
        .iter()
        .zip(reference)
        .map(|(e, r)| {
            let d = alpha * r - e;
            d * d
        })
        .sum();
    let v = if resid_e == 0.0 {
        SI_SDR_CLAMP_DB
    } else if target_e == 0.0 {
        -SI_SDR_CLAMP_DB
    } else {
        10.0 * (target_e / resid_e).log10()
    };
    Ok(v.clamp(-SI_SDR_CLAMP_DB, SI_SDR_CLAMP_DB))
}

/// Mean per-frame SNR over 50%-overlapping frames, each clamped to
/// [−10, 35] dB. Frames where the reference is silent are skipped.
pub fn segmental_snr(est: &[f64], reference: &[f64], frame: usize) -> Result<f64> {
    same_len(est, reference)?;
    if frame == 0 {
        return Err(Error::Config("segmental SNR frame must be positive".into()));
    }
    let hop = (frame / 2).max(1);
    let (lo, hi) = SEG_SNR_RANGE_DB;
    let mut acc = 0.0;
    let mut n = 0usize;
    let mut start = 0;
    while start + frame <= reference.len() {
        let r = &reference[start..start + frame];
        let e = &est[start..start + frame];
        let sig: f64 = dot(r, r);
        if sig > 0.0 {
            let noise: f64 = r.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum();
            let v = if noise == 0.0 { hi } else { 10.0 * (sig / noise).log10() };
            acc += v.clamp(lo, hi);
            n += 1;
        }
        start += hop;
    }
    if n == 0 {
        return Err(Error::SilentReference);
    }
    Ok(acc / n as f64)
}

/// Normalized squared correlation of each branch with the speech signal,
/// `⟨b, s⟩² / (‖s‖² ‖b‖²)`; silent branches score 0.
pub fn speech_leak(branches: &[&[f64]], speech: &[f64]) -> Result<Vec<f64>> {
    let ss = dot(speech, speech);
    if ss <= 0.0 {
        return Err(Error::SilentReference);
    }
    branches
        .iter()
        .map(|b| {
            same_len(b, speech)?;
            let bb = dot(b, b);
            if bb == 0.0 {
                return Ok(0.0);
            }
            let p = dot(b, speech);
            Ok((p * p / (ss * bb)).clamp(0.0, 1.0))
        })
        .collect()
}

/// Full-clip enhancement: one waveform per output head, all using the
/// input's phase.
pub fn enhance(net: &MaskNet, cfg: &StftConfig, input: &Waveform) -> Result<Vec<Waveform>> {
    let spec = stft(input, cfg)?;
    let mag = spec.magnitude();
    let (f, t) = mag.dim();
    let grid = mag.t().as_standard_layout().into_owned().into_shape_with_order((1, t, f)).map_err(|e| Error::Shape(e.to_string()))?;
    let masks = net.forward(&grid)?;
    apply_mask(&masks, &spec)?
        .iter()
        .map(|s| istft(s, cfg, input.len()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipEval {
    pub id: String,
    pub noisy_si_sdr: f64,
    pub enhanced_si_sdr: f64,
    pub improvement: f64,
    pub seg_snr: f64,
    /// Per-branch speech-energy fraction, multi-output models only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speech_leak: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub clips: Vec<ClipEval>,
    /// Clip ids skipped for lack of a usable clean reference.
    pub skipped: Vec<String>,
    pub mean_noisy_si_sdr: f64,
    pub mean_si_sdr: f64,
    pub mean_improvement: f64,
    pub mean_seg_snr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_speech_leak: Option<Vec<f64>>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

impl EvalReport {
    pub fn from_clips(clips: Vec<ClipEval>, skipped: Vec<String>) -> Self {
        let mean_speech_leak = clips.first().and_then(|c| c.speech_leak.as_ref()).map(|l| {
            (0..l.len())
                .map(|i| mean(clips.iter().filter_map(|c| c.speech_leak.as_ref().map(|v| v[i]))))
                .collect()
        });
        Self {
            mean_noisy_si_sdr: mean(clips.iter().map(|c| c.noisy_si_sdr)),
            mean_si_sdr: mean(clips.iter().map(|c| c.enhanced_si_sdr)),
            mean_improvement: mean(clips.iter().map(|c| c.improvement)),
            mean_seg_snr: mean(clips.iter().map(|c| c.seg_snr)),
            mean_speech_leak,
            clips,
            skipped,
        }
    }

    pub fn scored(&self) -> usize {
        self.clips.len()
    }

    pub fn table(&self) -> String {
        let leak_cols = self.mean_speech_leak.as_ref().map_or(0, Vec::len);
        let mut out = String::new();
        let _ = write!(out, "{:<14} {:>10} {:>10} {:>9} {:>9}", "clip", "noisy", "enhanced", "delta", "segsnr");
        for i in 0..leak_cols {
            let _ = write!(out, " {:>7}", format!("leak{}", i + 1));
        }
        out.push('\n');
        let row = |out: &mut String, id: &str, n: f64, e: f64, d: f64, s: f64, l: Option<&Vec<f64>>| {
            let _ = write!(out, "{id:<14} {n:>10.3} {e:>10.3} {d:>9.3} {s:>9.3}");
            for v in l.into_iter().flatten() {
                let _ = write!(out, " {v:>7.3}");
            }
            out.push('\n');
        };
        for c in &self.clips {
            row(&mut out, &c.id, c.noisy_si_sdr, c.enhanced_si_sdr, c.improvement, c.seg_snr, c.speech_leak.as_ref());
        }
        row(
            &mut out,
            "MEAN",
            self.mean_noisy_si_sdr,
            self.mean_si_sdr,
            self.mean_improvement,
            self.mean_seg_snr,
            self.mean_speech_leak.as_ref(),
        );
        if !self.skipped.is_empty() {
            let _ = writeln!(out, "skipped {} clip(s) without clean reference", self.skipped.len());
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let leak_cols = self.mean_speech_leak.as_ref().map_or(0, Vec::len);
        let mut out = String::from("id,noisy_si_sdr,enhanced_si_sdr,improvement,seg_snr");
        for i in 0..leak_cols {
            let _ = write!(out, ",leak{}", i + 1);
        }
        out.push('\n');
        for c in &self.clips {
            let _ = write!(
                out,
                "{},{},{},{},{}",
                c.id, c.noisy_si_sdr, c.enhanced_si_sdr, c.improvement, c.seg_snr
            );
            for v in c.speech_leak.iter().flatten() {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Segmental SNR frame: 32 ms.
pub fn seg_frame(sample_rate: u32) -> usize {
    (0.032 * sample_rate as f64).round() as usize
}

/// Score every clip with `enhancer`, whose first output is the speech
/// estimate. Clips without a usable clean reference are skipped.
pub fn evaluate_with<F>(clips: &[&CorpusExample], mut enhancer: F) -> Result<EvalReport>
where
    F: FnMut(&Waveform) -> Result<Vec<Waveform>>,
{
    let mut scored = Vec::new();
    let mut skipped = Vec::new();
    for c in clips {
        let Some(clean) = c.example.clean_ref.as_ref().filter(|w| w.energy() > 0.0) else {
            log::warn!("clip {} has no clean reference; skipped", c.id);
            skipped.push(c.id.clone());
            continue;
        };
        let input = &c.example.input;
        let outs = enhancer(input)?;
        let est = outs
            .first()
            .ok_or_else(|| Error::Shape("enhancer produced no output".into()))?;
        let noisy = si_sdr(&input.samples, &clean.samples)?;
        let enhanced = si_sdr(&est.samples, &clean.samples)?;
        let leak = if outs.len() > 1 {
            let refs: Vec<&[f64]> = outs.iter().map(|w| w.samples.as_slice()).collect();
            Some(speech_leak(&refs, &clean.samples)?)
        } else {
            None
        };
        scored.push(ClipEval {
            id: c.id.clone(),
            noisy_si_sdr: noisy,
            enhanced_si_sdr: enhanced,
            improvement: enhanced - noisy,
            seg_snr: segmental_snr(&est.samples, &clean.samples, seg_frame(clean.sample_rate))?,
            speech_leak: leak,
        });
    }
    Ok(EvalReport::from_clips(scored, skipped))
}

pub fn evaluate(net: &MaskNet, cfg: &StftConfig, clips: &[&CorpusExample]) -> Result<EvalReport> {
    evaluate_with(clips, |w| enhance(net, cfg, w))
}

/// Evaluate the clips of `split` (or every clip when `None`).
pub fn evaluate_corpus(
    net: &MaskNet,
    cfg: &StftConfig,
    corpus: &crate::data::Corpus,
    split: Option<Split>,
) -> Result<EvalReport> {
    let clips: Vec<&CorpusExample> = corpus
        .clips
        .iter()
        .filter(|c| split.is_none_or(|s| c.split == s))
        .collect();
    evaluate(net, cfg, &clips)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn si_sdr_examples() {
        let s: Vec<f64> = (0..64).map(|i| (i as f64 * 0.3).sin()).collect();
        assert_eq!(si_sdr(&s, &s).unwrap(), 60.0);
        let twice: Vec<f64> = s.iter().map(|v| 2.0 * v).collect();
        assert_eq!(si_sdr(&twice, &s).unwrap(), 60.0);
        assert!(matches!(si_sdr(&s, &[0.0; 64]), Err(Error::SilentReference)));
        assert!(si_sdr(&s, &s[..10]).is_err());
    }

    #[test]
    fn orthogonal_noise_of_equal_norm_is_zero_db() {
        // Gram-Schmidt a second vector against s and rescale to ‖s‖.
        let s: Vec<f64> = (0..128).map(|i| (i as f64 * 0.21).cos() + 0.1).collect();
        let raw: Vec<f64> = (0..128).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
        let proj = dot(&raw, &s) / dot(&s, &s);
        let mut n: Vec<f64> = raw.iter().zip(&s).map(|(r, v)| r - proj * v).collect();
        let scale = (dot(&s, &s) / dot(&n, &n)).sqrt();
        n.iter_mut().for_each(|v| *v *= scale);
        let est: Vec<f64> = s.iter().zip(&n).map(|(a, b)| a + b).collect();
        assert!(si_sdr(&est, &s).unwrap().abs() < 1e-9);
    }

    #[test]
    fn seg_snr_clamps() {
        let s: Vec<f64> = (0..2048).map(|i| (i as f64 * 0.1).sin()).collect();
        assert_eq!(segmental_snr(&s, &s, 512).unwrap(), 35.0);
        let z = vec![0.0; 2048];
        assert_eq!(segmental_snr(&z, &s, 512).unwrap(), 0.0);
        let neg: Vec<f64> = s.iter().map(|v| -3.0 * v).collect();
        assert_eq!(segmental_snr(&neg, &s, 512).unwrap(), -10.0);
    }

    #[test]
    fn leak_examples() {
        let s: Vec<f64> = (0..256).map(|i| (i as f64 * 0.05).sin()).collect();
        let n: Vec<f64> = (0..256).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let l = speech_leak(&[&s, &n, &n], &s).unwrap();
        assert!((l[0] - 1.0).abs() < 1e-12);
        assert!(l[1] < 0.01 && l[2] < 0.01);
        let z = vec![0.0; 256];
        assert_eq!(speech_leak(&[&z, &z, &z], &s).unwrap(), vec![0.0; 3]);
    }
}
