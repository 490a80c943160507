use serde::{Deserialize, Serialize};

use super::CorpusManifest;
use crate::dsp::Waveform;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzerConfig {
    /// Clip RMS below this is silence.
    pub silence_rms: f64,
    /// A click window peak must exceed this multiple of the median window peak.
    pub click_crest: f64,
    /// Absolute floor for click peaks.
    pub click_floor: f64,
    pub click_window_s: f64,
    /// Above-threshold windows closer than this merge into one click.
    pub click_merge_s: f64,
    /// Minimum normalized autocorrelation peak for a voiced frame.
    pub voicing_peak: f64,
    /// The peak must rise this far above the preceding trough.
    pub voicing_prominence: f64,
    /// Clips with fewer voiced frames than this fraction are pure noise.
    pub voiced_fraction: f64,
}

impl Default for AnalyzerConfig {
    fn default() -> Self {
        Self {
            silence_rms: 1e-3,
            click_crest: 8.0,
            click_floor: 1e-3,
            click_window_s: 0.002,
            click_merge_s: 0.012,
            voicing_peak: 0.45,
            voicing_prominence: 0.3,
            voiced_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipReport {
    pub id: String,
    pub silence: bool,
    pub pure_noise: bool,
    pub clicks: usize,
    pub voiced_fraction: f64,
    pub est_snr_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

fn count_clicks(x: &[f64], sr: f64, cfg: &AnalyzerConfig) -> usize {
    let win = ((cfg.click_window_s * sr) as usize).max(1);
    let peaks: Vec<f64> = x
        .chunks(win)
        .map(|c| c.iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .collect();
    let thresh = (cfg.click_crest * median(peaks.clone())).max(cfg.click_floor);
    let merge = ((cfg.click_merge_s * sr) as usize / win).max(1);
    let mut count = 0;
    let mut last: Option<usize> = None;
    for (i, &p) in peaks.iter().enumerate() {
        if p > thresh {
            if last.is_none_or(|l| i - l > merge) {
                count += 1;
            }
            last = Some(i);
        }
    }
    count
}

/// Fraction of active frames whose autocorrelation shows a pitch peak
/// in the 60–400 Hz range.
fn voiced_fraction(x: &[f64], sr: f64, cfg: &AnalyzerConfig) -> f64 {
    let frame = (0.04 * sr) as usize;
    let hop = frame / 2;
    let min_lag = (sr / 400.0) as usize;
    let max_lag = (sr / 60.0) as usize;
    if x.len() < frame + max_lag || frame == 0 {
        return 0.0;
    }
    let starts: Vec<usize> = (0..=x.len() - frame - max_lag).step_by(hop).collect();
    let energies: Vec<f64> = starts
        .iter()
        .map(|&s| x[s..s + frame].iter().map(|v| v * v).sum())
        .collect();
    let max_e = energies.iter().cloned().fold(0.0, f64::max);
    let mut active = 0usize;
    let mut voiced = 0usize;
    for (&s, &e0) in starts.iter().zip(&energies) {
        if e0 <= 1e-3 * max_e || e0 == 0.0 {
            continue;
        }
        active += 1;
        let a = &x[s..s + frame];
        let r: Vec<f64> = (0..=max_lag)
            .map(|lag| {
                let b = &x[s + lag..s + lag + frame];
                let num: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
                let eb: f64 = b.iter().map(|v| v * v).sum();
                if eb > 0.0 {
                    num / (e0 * eb).sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        let (best, peak) = (min_lag..=max_lag)
            .map(|l| (l, r[l]))
            .fold((0, f64::NEG_INFINITY), |acc, c| if c.1 > acc.1 { c } else { acc });
        let trough = r[1..best].iter().cloned().fold(f64::INFINITY, f64::min);
        if peak > cfg.voicing_peak && peak - trough > cfg.voicing_prominence {
            voiced += 1;
        }
    }
    if active == 0 {
        0.0
    } else {
        voiced as f64 / active as f64
    }
}

/// Crude SNR estimate: the quietest decile of 32 ms frames is taken as the
/// noise floor.
fn estimate_snr(x: &[f64], sr: f64) -> Option<f64> {
    let frame = (0.032 * sr) as usize;
    if frame == 0 || x.len() < frame {
        return None;
    }
    let mut p: Vec<f64> = x
        .chunks_exact(frame)
        .map(|c| c.iter().map(|v| v * v).sum::<f64>() / frame as f64)
        .collect();
    p.sort_by(f64::total_cmp);
    let n = (p.len() / 10).max(1);
    let noise = p[..n].iter().sum::<f64>() / n as f64;
    let total = p.iter().sum::<f64>() / p.len() as f64;
    let signal = total - noise;
    if noise <= 0.0 {
        return Some(f64::INFINITY);
    }
    Some(10.0 * (signal.max(1e-12 * noise) / noise).log10())
}

pub fn analyze_clip(id: &str, w: &Waveform, cfg: &AnalyzerConfig) -> ClipReport {
    let sr = w.sample_rate as f64;
    let silence = w.rms() < cfg.silence_rms;
    let vf = if silence { 0.0 } else { voiced_fraction(&w.samples, sr, cfg) };
    ClipReport {
        id: id.to_string(),
        silence,
        pure_noise: !silence && vf < cfg.voiced_fraction,
        clicks: if silence { 0 } else { count_clicks(&w.samples, sr, cfg) },
        voiced_fraction: vf,
        est_snr_db: if silence { None } else { estimate_snr(&w.samples, sr).filter(|v| v.is_finite()) },
        error: None,
    }
}

/// Triage each clip's recorded target. Unloadable clips yield an error
/// entry and the analysis moves on.
pub fn analyze_corpus(manifest: &CorpusManifest, cfg: &AnalyzerConfig) -> Vec<ClipReport> {
    manifest
        .entries
        .iter()
        .map(|e| match manifest.load_entry(e) {
            Ok(ex) => analyze_clip(&e.id, &ex.target, cfg),
            Err(err) => ClipReport {
                id: e.id.clone(),
                silence: false,
                pure_noise: false,
                clicks: 0,
                voiced_fraction: 0.0,
                est_snr_db: None,
                error: Some(err.to_string()),
            },
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_clip, Category, ClickEvent, MixSpec, NoiseFamily, NoiseSource, NoiseSpec, SpeechSource};

    fn spec(category: Category) -> MixSpec {
        MixSpec {
            category,
            duration_s: 2.0,
            seed: 11,
            speech: category.has_speech().then_some(SpeechSource::Synthetic),
            level_rms: 0.03,
            recording_noise: None,
            clicks: vec![],
            input_noise: None,
            noise_only: None,
        }
    }

    fn report(s: &MixSpec) -> ClipReport {
        let ex = synth_clip(s, 16_000).unwrap();
        analyze_clip("x", &ex.target, &AnalyzerConfig::default())
    }

    #[test]
    fn silence_detected() {
        let r = report(&spec(Category::Silence));
        assert!(r.silence);
        assert!(!r.pure_noise);
    }

    #[test]
    fn clean_speech_is_not_pure_noise() {
        let r = report(&spec(Category::Clean));
        assert!(!r.silence && !r.pure_noise, "{r:?}");
        assert_eq!(r.clicks, 0);
    }

    #[test]
    fn three_clicks_counted() {
        let mut s = spec(Category::Clean);
        s.clicks = [0.4, 0.9, 1.5]
            .iter()
            .map(|&t| ClickEvent {
                time_s: t,
                amplitude: 0.8,
            })
            .collect();
        let r = report(&s);
        assert!(r.clicks.abs_diff(3) <= 1, "{r:?}");
    }

    #[test]
    fn pure_noise_of_every_family() {
        for fam in NoiseFamily::ALL {
            let mut s = spec(Category::PureNoise);
            s.recording_noise = Some(NoiseSpec {
                source: NoiseSource::Family(fam),
                snr_db: 0.0,
            });
            let r = report(&s);
            assert!(r.pure_noise && !r.silence, "{fam}: {r:?}");
        }
    }
}
