use robust_se::data::{
    analyze_corpus, build_corpus, AnalyzerConfig, Category, ClipSource, Corpus, CorpusManifest, CorpusRecipe, Split,
};
use robust_se::Error;

fn recipe() -> CorpusRecipe {
    CorpusRecipe {
        clips: 20,
        test_clips: 4,
        valid_fraction: 0.2,
        duration_s: 0.5,
        noisy_speech_rate: 0.3,
        pure_noise_rate: 0.1,
        silence_rate: 0.1,
        click_rate: 0.5,
        seed: 5,
        ..Default::default()
    }
}

#[test]
fn recipe_is_deterministic_and_counts_add_up() {
    let a = build_corpus(&recipe()).unwrap();
    assert_eq!(a, build_corpus(&recipe()).unwrap());
    assert_ne!(a, build_corpus(&CorpusRecipe { seed: 6, ..recipe() }).unwrap());

    assert_eq!(a.len(), 24);
    assert_eq!(a.split(Split::Valid).count(), 4);
    assert_eq!(a.split(Split::Train).count(), 16);
    assert!(a.split(Split::Test).all(|e| e.category() == Some(Category::Clean)));
    let count = |c: Category| a.entries.iter().filter(|e| e.category() == Some(c)).count();
    assert_eq!(count(Category::NoisySpeech), 6);
    assert_eq!(count(Category::PureNoise), 2);
    assert_eq!(count(Category::Silence), 2);
    let clicked = a.entries.iter().filter(|e| e.injected_clicks().unwrap_or(0) > 0).count();
    assert_eq!(clicked, 8);
}

#[test]
fn clip_waveforms_are_reproducible() {
    let m = build_corpus(&recipe()).unwrap();
    let a = Corpus::load(&m).unwrap();
    let b = Corpus::load(&m).unwrap();
    for (x, y) in a.clips.iter().zip(&b.clips) {
        assert_eq!(x.example, y.example, "{}", x.id);
    }
    let test = a.split(Split::Test);
    assert!(test.iter().all(|c| c.example.clean_ref.as_ref() == Some(&c.example.target)));
    let silent = a.clips.iter().find(|c| c.category == Some(Category::Silence)).unwrap();
    assert!(silent.example.clean_ref.is_none());
}

#[test]
fn manifest_survives_jsonl_and_wav_round_trips() {
    let m = build_corpus(&recipe()).unwrap();
    assert_eq!(CorpusManifest::from_jsonl(&m.to_jsonl()).unwrap(), m);

    let dir = tempfile::tempdir().unwrap();
    let corpus = Corpus::load(&m).unwrap();
    let files = corpus.write_wavs(dir.path()).unwrap();
    let path = dir.path().join("manifest.jsonl");
    files.write(&path).unwrap();
    let back = Corpus::load(&CorpusManifest::read(&path).unwrap()).unwrap();
    assert_eq!(back.clips.len(), corpus.clips.len());
    for (x, y) in corpus.clips.iter().zip(&back.clips) {
        assert_eq!(x.category, y.category);
        let worst = x
            .example
            .target
            .samples
            .iter()
            .zip(&y.example.target.samples)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(worst <= 1.0 / 32768.0, "{}: {worst}", x.id);
    }
}

#[test]
fn malformed_manifests_name_the_line() {
    let m = build_corpus(&recipe()).unwrap();
    let mut lines: Vec<String> = m.to_jsonl().lines().map(String::from).collect();
    lines[2] = "{not json".into();
    let err = CorpusManifest::from_jsonl(&lines.join("\n")).unwrap_err();
    assert!(matches!(&err, Error::Manifest(s) if s.contains("line 3")), "{err}");

    let dup = format!("{}\n{}", m.to_jsonl(), m.to_jsonl().lines().next().unwrap());
    assert!(CorpusManifest::from_jsonl(&dup).unwrap_err().to_string().contains("duplicate"));
    assert!(CorpusManifest::from_jsonl("").is_err());
}

#[test]
fn analyzer_flags_speechless_clips_and_survives_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = Corpus::load(&build_corpus(&recipe()).unwrap()).unwrap();
    let mut files = corpus.write_wavs(dir.path()).unwrap();
    let broken = files.entries[0].id.clone();
    if let ClipSource::Files(f) = &mut files.entries[0].source {
        f.target = "clips/missing.wav".into();
    }
    let reports = analyze_corpus(&files, &AnalyzerConfig::default());
    assert_eq!(reports.len(), files.len());
    let bad = reports.iter().find(|r| r.id == broken).unwrap();
    assert!(bad.error.as_deref().is_some_and(|e| e.contains("missing.wav")));
    for (r, e) in reports.iter().zip(&files.entries).skip(1) {
        assert!(r.error.is_none(), "{}", r.id);
        match e.category() {
            Some(Category::Silence) => assert!(r.silence, "{}", r.id),
            Some(Category::PureNoise) => assert!(r.pure_noise && !r.silence, "{}", r.id),
            _ => assert!(!r.silence, "{}", r.id),
        }
    }
}

#[test]
fn invalid_recipes_are_rejected() {
    let bad = CorpusRecipe {
        pure_noise_rate: 0.7,
        silence_rate: 0.5,
        ..recipe()
    };
    assert!(matches!(build_corpus(&bad), Err(Error::Recipe(_))));
    let bad = CorpusRecipe {
        valid_fraction: 1.5,
        ..recipe()
    };
    assert!(build_corpus(&bad).is_err());
}
