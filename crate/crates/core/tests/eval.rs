use robust_se::data::{build_corpus, Category, Corpus, CorpusRecipe, Split};
use robust_se::dsp::StftConfig;
use robust_se::eval::{evaluate_corpus, evaluate_with};
use robust_se::model::{MaskNet, MaskNetConfig};

fn corpus(pure_noise_rate: f64, silence_rate: f64) -> Corpus {
    let m = build_corpus(&CorpusRecipe {
        clips: 12,
        test_clips: 4,
        valid_fraction: 0.25,
        duration_s: 0.75,
        pure_noise_rate,
        silence_rate,
        seed: 21,
        ..Default::default()
    })
    .unwrap();
    Corpus::load(&m).unwrap()
}

#[test]
fn identity_enhancer_improves_nothing() {
    let c = corpus(0.0, 0.0);
    let report = evaluate_with(&c.split(Split::Test), |w| Ok(vec![w.clone()])).unwrap();
    assert_eq!(report.scored(), 4);
    for clip in &report.clips {
        assert_eq!(clip.improvement, 0.0, "{}", clip.id);
        assert_eq!(clip.noisy_si_sdr, clip.enhanced_si_sdr);
    }
    assert_eq!(report.mean_improvement, 0.0);
    assert!(report.mean_speech_leak.is_none());
}

#[test]
fn constant_mask_model_is_nearly_transparent() {
    let c = corpus(0.0, 0.0);
    let stft = StftConfig::new(512, 128).unwrap();
    let cfg = MaskNetConfig {
        bottleneck: 8,
        ..MaskNetConfig::desk(stft.n_freq(), 1)
    };
    let net = MaskNet::constant_mask(cfg, 1.0).unwrap();
    let report = evaluate_corpus(&net, &stft, &c, Some(Split::Test)).unwrap();
    for clip in &report.clips {
        assert!(clip.improvement.abs() < 0.1, "{}: {}", clip.id, clip.improvement);
    }
}

#[test]
fn three_branch_models_report_leak() {
    let c = corpus(0.0, 0.0);
    let stft = StftConfig::new(512, 128).unwrap();
    let cfg = MaskNetConfig {
        bottleneck: 8,
        ..MaskNetConfig::desk(stft.n_freq(), 3)
    };
    let net = MaskNet::new(cfg, 4).unwrap();
    let report = evaluate_corpus(&net, &stft, &c, Some(Split::Test)).unwrap();
    let leak = report.mean_speech_leak.as_ref().unwrap();
    assert_eq!(leak.len(), 3);
    assert!(leak.iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(report.clips.iter().all(|c| c.speech_leak.as_ref().is_some_and(|l| l.len() == 3)));
}

#[test]
fn report_accounts_for_every_clip() {
    let c = corpus(0.3, 0.2);
    let report = evaluate_with(&c.clips.iter().collect::<Vec<_>>(), |w| Ok(vec![w.clone()])).unwrap();
    assert_eq!(report.scored() + report.skipped.len(), c.clips.len());
    let speechless: Vec<&str> = c
        .clips
        .iter()
        .filter(|x| matches!(x.category, Some(Category::PureNoise | Category::Silence)))
        .map(|x| x.id.as_str())
        .collect();
    assert!(!speechless.is_empty());
    assert_eq!(report.skipped, speechless);
    let csv = report.to_csv();
    assert_eq!(csv.lines().count(), report.scored() + 1);
    assert!(report.table().contains("MEAN"));
}

#[test]
fn enhancer_errors_propagate() {
    let c = corpus(0.0, 0.0);
    let err = evaluate_with(&c.split(Split::Test), |_| Ok(vec![])).unwrap_err();
    assert!(err.to_string().contains("no output"), "{err}");
}
