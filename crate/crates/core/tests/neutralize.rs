use std::sync::OnceLock;

use debias_core::fixtures::{neutral_sentences, planted_pairs, NEUTRAL_VERBS, PLANTED_SUBSTITUTIONS};
use debias_core::neutralize::{
    apply_replacements, encode_image_tokens, mask_words, train_infill, ImageTokenizer, ImageTokens,
    InfillConfig, InfillModel, MaskedSentence, NeutralExample, PatchTokenizer,
};
use debias_core::textbias::Tokenizer;
use debias_core::Error;
use proptest::prelude::*;

fn model() -> &'static InfillModel {
    static MODEL: OnceLock<InfillModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let mut texts = neutral_sentences(400, 3);
        texts.push("the soldier was discharged from the army last week".into());
        texts.push("the veteran was discharged after the war".into());
        let examples: Vec<NeutralExample> =
            texts.into_iter().map(|text| NeutralExample { text, image: None }).collect();
        // Biased words share the vocabulary so each masks as a single piece.
        let vocab_texts: Vec<String> = examples
            .iter()
            .map(|e| e.text.clone())
            .chain(planted_pairs(400, 3).iter().map(|p| p.biased_text()))
            .collect();
        let tokenizer = Tokenizer::build(vocab_texts.iter().map(String::as_str), 1);
        let mut model = InfillModel::new(InfillConfig::tiny(), tokenizer).unwrap();
        let history = model.fit(&examples).unwrap();
        assert!(history.last().unwrap() < &history[0], "{history:?}");
        model
    })
}

fn mask_at(model: &InfillModel, text: &str, words: &[usize]) -> MaskedSentence {
    let tokens = model.tokenizer().tokenize(text).unwrap();
    mask_words(&tokens, words, model.tokenizer().mask_id()).unwrap()
}

fn no_image() -> ImageTokens {
    ImageTokens::empty(InfillConfig::tiny().image_dim)
}

#[test]
fn masked_reporting_verb_is_filled_with_a_verb() {
    let m = model();
    let masked = mask_at(m, "john exposed as corrupt", &[1]);
    assert_eq!(masked.mask_positions, [1]);
    let reps = m.predict_replacements(&masked, &no_image()).unwrap();
    assert_eq!(reps.len(), 1);
    let verbs: Vec<&str> = NEUTRAL_VERBS
        .iter()
        .copied()
        .chain(PLANTED_SUBSTITUTIONS.iter().flat_map(|&(b, n)| [b, n]))
        .collect();
    let word = apply_replacements(&masked, &reps)[1].clone();
    assert!(verbs.contains(&word.as_str()), "predicted `{word}`");
    assert_eq!(reps[0].original, "exposed");
    assert!((0.0..=1.0).contains(&reps[0].score));
}

#[test]
fn two_masks_give_two_positioned_replacements() {
    let m = model();
    let masked = mask_at(m, "the senator slammed the disastrous plan", &[2, 4]);
    let reps = m.predict_replacements(&masked, &no_image()).unwrap();
    assert_eq!(reps.len(), masked.mask_positions.len());
    for (r, &p) in reps.iter().zip(&masked.mask_positions) {
        assert_eq!(r.position, p);
    }
}

/// Known failure mode in military contexts: a replacement is produced, its
/// quality is not asserted.
#[test]
fn discharged_regression_produces_a_replacement() {
    let m = model();
    let masked = mask_at(m, "the soldier was discharged from the army", &[3]);
    let reps = m.predict_replacements(&masked, &no_image()).unwrap();
    assert_eq!(reps.len(), masked.mask_positions.len());
    let words = apply_replacements(&masked, &reps);
    assert_eq!(words.len(), 7);
    assert!(!words[3].is_empty());
}

#[test]
fn untrained_model_is_a_state_error() {
    let examples = [NeutralExample {
        text: "john described as honest".into(),
        image: None,
    }];
    let tok = Tokenizer::build(examples.iter().map(|e| e.text.as_str()), 1);
    let m = InfillModel::new(InfillConfig::tiny(), tok).unwrap();
    let masked = mask_at(&m, "john described as honest", &[1]);
    assert!(matches!(m.predict_replacements(&masked, &no_image()), Err(Error::State(_))));
}

#[test]
fn image_conditioning_and_checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let img = image::RgbImage::from_fn(16, 16, |x, y| image::Rgb([(x * 15) as u8, (y * 15) as u8, 40]));
    let path = dir.path().join("a.png");
    img.save(&path).unwrap();
    let tokenizer = PatchTokenizer::default();
    let tokens = encode_image_tokens(&path, &tokenizer).unwrap();
    assert_eq!(tokens.tokens.ncols(), tokenizer.token_dim());

    let mut cfg = InfillConfig::tiny();
    cfg.epochs = 3;
    let examples: Vec<NeutralExample> = neutral_sentences(30, 1)
        .into_iter()
        .map(|text| NeutralExample {
            text,
            image: Some(tokens.tokens.clone()),
        })
        .collect();
    let (m, _) = train_infill(&examples, cfg).unwrap();
    let masked = mask_at(&m, "john described as honest", &[1]);
    let with_image = m.predict_replacements(&masked, &tokens).unwrap();
    let ckpt = dir.path().join("infill.json");
    m.save(&ckpt).unwrap();
    let back = InfillModel::load(&ckpt).unwrap();
    assert_eq!(back.predict_replacements(&masked, &tokens).unwrap(), with_image);

    let missing = encode_image_tokens(dir.path().join("nope.png"), &tokenizer).unwrap();
    assert!(missing.missing && missing.is_empty());
    assert_eq!(m.predict_replacements(&masked, &missing).unwrap().len(), 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn never_predicts_special_tokens(
        words in prop::collection::vec("[a-z]{1,9}", 1..10),
        pick in any::<prop::sample::Index>(),
    ) {
        let m = model();
        let text = words.join(" ");
        let w = pick.index(words.len());
        let masked = mask_at(m, &text, &[w]);
        let reps = m.predict_replacements(&masked, &no_image()).unwrap();
        prop_assert_eq!(reps.len(), masked.mask_positions.len());
        for r in &reps {
            let id = m.tokenizer().id(&r.predicted).unwrap();
            prop_assert!(!m.tokenizer().is_special(id));
        }
    }
}
