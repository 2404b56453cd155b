use std::path::PathBuf;
use std::sync::OnceLock;

use debias_core::corpus::{Article, SourceScore};
use debias_core::fixtures::{planted_pairs, topic_band_corpus, write_corpus, PLANTED_SUBSTITUTIONS};
use debias_core::neutralize::InfillModel;
use debias_core::orchestrator::{
    debias_article, sample_pairs, train_bundle, BundleConfig, DebiasedArticle, EvalSession, JudgmentRecord,
    JudgmentStore, StageModels, STAGES,
};
use debias_core::retrieval::Selection;
use debias_core::text::words;
use debias_core::Error;

struct Fixture {
    _dir: tempfile::TempDir,
    index_dir: PathBuf,
    query_dir: PathBuf,
    bundle_dir: PathBuf,
    queries: Vec<Article>,
    models: StageModels,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let index_dir = dir.path().join("index");
        let query_dir = dir.path().join("queries");
        let articles = write_corpus(&index_dir, &topic_band_corpus(8, false, 1)).unwrap();
        let mut docs: Vec<_> = topic_band_corpus(10, true, 7)
            .into_iter()
            .filter(|d| d.band != 1)
            .collect();
        for d in &mut docs {
            d.id = format!("q{}", d.id);
        }
        let queries = write_corpus(&query_dir, &docs).unwrap();
        assert_eq!(queries.len(), 40);
        let models = train_bundle(&articles, &index_dir, &planted_pairs(300, 3), &BundleConfig::tiny()).unwrap();
        let bundle_dir = dir.path().join("bundle");
        models.save(&bundle_dir).unwrap();
        Fixture {
            _dir: dir,
            index_dir,
            query_dir,
            bundle_dir,
            queries,
            models,
        }
    })
}

fn biased_word(text: &str) -> Option<usize> {
    words(text)
        .iter()
        .position(|w| PLANTED_SUBSTITUTIONS.iter().any(|(b, _)| b == w))
}

#[test]
fn biased_articles_are_neutralized_without_raising_image_bias() {
    let f = fixture();
    let mut changed_planted = 0;
    for a in f.queries.iter().take(20) {
        let out = debias_article(a, &f.query_dir, &f.models).unwrap();
        let before = words(&a.text);
        let after = words(&out.neutralized_text);
        assert_eq!(before.len(), after.len(), "{:?} → {:?}", a.text, out.neutralized_text);
        assert!(before != after, "unchanged: {}", a.text);
        let planted = biased_word(&a.text).unwrap();
        if before[planted] != after[planted] {
            changed_planted += 1;
        }
        assert!(
            out.final_image_bias().abs() <= out.original_image_bias.abs(),
            "{}: {} > {}",
            a.id,
            out.final_image_bias(),
            out.original_image_bias
        );
        let stages: Vec<&str> = out.trace.iter().map(|r| r.stage.as_str()).collect();
        assert_eq!(stages, STAGES);
    }
    assert_eq!(changed_planted, 20);
}

#[test]
fn biased_images_are_replaced_by_more_neutral_ones() {
    let f = fixture();
    let mut replaced = 0;
    for a in f.queries.iter().take(20) {
        let out = debias_article(a, &f.query_dir, &f.models).unwrap();
        if let Selection::Replace(r) = &out.replacement_image {
            assert!(r.image_bias.abs() < out.original_image_bias.abs());
            assert!(out.replacement_image_path.as_ref().unwrap().is_file());
            replaced += 1;
        }
    }
    assert!(replaced > 0);
}

#[test]
fn missing_image_keeps_original_and_still_neutralizes() {
    let f = fixture();
    let mut a = f.queries[0].clone();
    a.image_ref = "absent.png".into();
    let out = debias_article(&a, &f.query_dir, &f.models).unwrap();
    assert_ne!(out.neutralized_text, a.text);
    match &out.replacement_image {
        Selection::KeepOriginal { reason } => assert!(reason.contains("missing"), "{reason}"),
        other => panic!("expected keep-original, got {other:?}"),
    }
    assert!(out.trace[1].summary.contains("text-only"));
    assert_eq!(out.final_image_bias(), a.source_score.value());
}

#[test]
fn low_scoring_article_gets_exactly_one_replacement() {
    let f = fixture();
    let a = Article {
        id: "calm".into(),
        source_id: "outlet1".into(),
        text: "the senator described the budget in the capital".into(),
        image_ref: "t0b1n000.png".into(),
        topic: "topic0".into(),
        source_score: SourceScore::new(0.0).unwrap(),
    };
    let probs = f.models.tagger.predict_token_bias(&a.text).unwrap();
    let mut sorted: Vec<f64> = probs.iter().map(|p| p.probability).collect();
    sorted.sort_by(|x, y| y.total_cmp(x));
    assert!(sorted[1] < 0.5, "precondition: only the top word may score ≥ 0.5: {sorted:?}");
    let out = debias_article(&a, &f.index_dir, &f.models).unwrap();
    assert_eq!(out.replacements.len(), 1);
}

#[test]
fn pipeline_is_deterministic_and_survives_bundle_reload() {
    let f = fixture();
    let reloaded = StageModels::load(&f.bundle_dir).unwrap();
    for a in f.queries.iter().take(5) {
        let x = debias_article(a, &f.query_dir, &f.models).unwrap();
        let y = debias_article(a, &f.query_dir, &f.models).unwrap();
        let z = debias_article(a, &f.query_dir, &reloaded).unwrap();
        assert_eq!(x, y);
        assert_eq!(x, z);
    }
}

#[test]
fn stage_failure_reports_completed_stages() {
    let f = fixture();
    let mut broken = StageModels::load(&f.bundle_dir).unwrap();
    broken.infill = InfillModel::new(broken.infill.config().clone(), broken.infill.tokenizer().clone()).unwrap();
    match debias_article(&f.queries[0], &f.query_dir, &broken) {
        Err(Error::Stage { stage, completed, cause }) => {
            assert_eq!(stage, "neutralize");
            assert_eq!(completed, vec!["detect"]);
            assert!(matches!(*cause, Error::State(_)));
        }
        other => panic!("expected a stage error, got {other:?}"),
    }
}

fn debiased(f: &Fixture, n: usize) -> Vec<DebiasedArticle> {
    f.queries
        .iter()
        .take(n)
        .map(|a| debias_article(a, &f.query_dir, &f.models).unwrap())
        .collect()
}

#[test]
fn pair_sampling() {
    let f = fixture();
    let corpus = debiased(f, 6);
    let all = sample_pairs(&corpus, &f.query_dir, 6, 1).unwrap();
    let mut ids: Vec<_> = all.iter().map(|p| p.pair_id.clone()).collect();
    ids.sort();
    let mut expected: Vec<_> = corpus.iter().map(|d| d.original.id.clone()).collect();
    expected.sort();
    assert_eq!(ids, expected);
    assert_eq!(
        sample_pairs(&corpus, &f.query_dir, 3, 9).unwrap(),
        sample_pairs(&corpus, &f.query_dir, 3, 9).unwrap()
    );
    assert!(sample_pairs(&corpus, &f.query_dir, 0, 9).unwrap().is_empty());
    assert!(matches!(sample_pairs(&corpus, &f.query_dir, 7, 9), Err(Error::Validation(_))));
    for p in &all {
        assert!(p.original_image.as_ref().unwrap().is_file());
        assert!(p.debiased_image.as_ref().unwrap().is_file());
    }
}

fn judgment(pair: &str, grader: &str, fluency: u8) -> JudgmentRecord {
    JudgmentRecord {
        pair_id: pair.into(),
        grader_id: grader.into(),
        makes_sense_together: true,
        bias_reduced: true,
        same_meaning: true,
        fluency,
        submitted_at: chrono::Utc::now(),
    }
}

#[test]
fn session_serves_unjudged_pairs_and_persists() {
    let f = fixture();
    let pairs = sample_pairs(&debiased(f, 3), &f.query_dir, 3, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let store_path = dir.path().join("judgments.jsonl");
    let mut session = EvalSession::new(pairs.clone(), JudgmentStore::open(&store_path).unwrap()).unwrap();
    assert_eq!(session.next_pair("a").unwrap().pair_id, pairs[0].pair_id);
    session.submit(judgment(&pairs[0].pair_id, "a", 4)).unwrap();
    assert_eq!(session.next_pair("a").unwrap().pair_id, pairs[1].pair_id);
    assert_eq!(session.next_pair("b").unwrap().pair_id, pairs[0].pair_id);
    assert!(matches!(session.submit(judgment("nope", "a", 3)), Err(Error::NotFound(_))));
    assert!(matches!(session.submit(judgment(&pairs[1].pair_id, "a", 6)), Err(Error::Validation(_))));
    session.submit(judgment(&pairs[0].pair_id, "a", 2)).unwrap();
    session.submit(judgment(&pairs[1].pair_id, "a", 4)).unwrap();
    session.submit(judgment(&pairs[2].pair_id, "a", 4)).unwrap();
    assert!(session.next_pair("a").is_none());
    drop(session);

    let session = EvalSession::new(pairs, JudgmentStore::open(&store_path).unwrap()).unwrap();
    let report = session.report();
    assert_eq!(report.overall.n, 3);
    assert_eq!(report.overall.mean_fluency, Some(10.0 / 3.0));
    assert!(session.next_pair("a").is_none());
}

