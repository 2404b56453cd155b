//! Synthetic corpora with planted ground truth, used by the test suites,
//! the acceptance harness and the CLI demo commands.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::corpus::{write_articles, Article, NeutralityPair, SourceScore};
use crate::embedspace::SpaceItem;
use crate::error::{Error, Result};
use crate::imaging::pixel_features;

/// Planted (biased, neutral) word substitutions.
pub const PLANTED_SUBSTITUTIONS: &[(&str, &str)] = &[
    ("exposed", "described"),
    ("slammed", "criticized"),
    ("radical", "political"),
    ("disastrous", "controversial"),
    ("shocking", "notable"),
    ("regime", "government"),
    ("destroyed", "changed"),
    ("heroic", "noted"),
    ("notorious", "known"),
    ("extremist", "activist"),
    ("lied", "erred"),
    ("scheme", "proposal"),
];

const SUBJECTS: &[&str] = &[
    "john", "mary", "the senator", "the governor", "the mayor", "officials", "the committee",
    "the president", "a spokesperson", "the council", "local leaders", "the minister",
];
const OBJECTS: &[&str] = &[
    "bill", "plan", "policy", "report", "budget", "measure", "law", "program", "agreement",
];
const PLACES: &[&str] = &[
    "in the capital", "on tuesday", "last week", "during the hearing", "at the meeting",
    "in a statement", "after the vote", "on friday",
];
const ADJECTIVES: &[&str] = &["unpopular", "expensive", "late", "new", "final", "revised"];

fn planted(rng: &mut ChaCha8Rng) -> (&'static str, &'static str) {
    *PLANTED_SUBSTITUTIONS.choose(rng).expect("non-empty table")
}

/// Generates `n` biased/neutral sentence pairs. Every biased sentence holds
/// one or two planted words from [`PLANTED_SUBSTITUTIONS`]; the neutral side
/// swaps each for its neutral counterpart.
pub fn planted_pairs(n: usize, seed: u64) -> Vec<NeutralityPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let subj = *SUBJECTS.choose(&mut rng).unwrap();
            let obj = *OBJECTS.choose(&mut rng).unwrap();
            let place = *PLACES.choose(&mut rng).unwrap();
            let adj = *ADJECTIVES.choose(&mut rng).unwrap();
            let (b1, n1) = planted(&mut rng);
            let (b2, n2) = planted(&mut rng);
            let two = rng.random_bool(0.3) && b1 != b2;
            let (biased, neutral) = match rng.random_range(0..4) {
                0 => (
                    format!("{subj} {b1} the {adj} {obj} {place}"),
                    format!("{subj} {n1} the {adj} {obj} {place}"),
                ),
                1 if two => (
                    format!("the {b1} {obj} was {b2} {place} by {subj}"),
                    format!("the {n1} {obj} was {n2} {place} by {subj}"),
                ),
                1 => (
                    format!("the {b1} {obj} was discussed {place} by {subj}"),
                    format!("the {n1} {obj} was discussed {place} by {subj}"),
                ),
                2 => (
                    format!("{subj} said the {obj} was {b1} {place}"),
                    format!("{subj} said the {obj} was {n1} {place}"),
                ),
                _ => (
                    format!("{place} , {subj} called the {adj} {obj} {b1}"),
                    format!("{place} , {subj} called the {adj} {obj} {n1}"),
                ),
            };
            NeutralityPair::from_sentences(format!("syn{i}"), &biased, &neutral)
                .expect("planted substitution always changes the sentence")
        })
        .collect()
}

/// Neutral reporting verbs that may fill `<subject> ___ as <adjective>`.
pub const NEUTRAL_VERBS: &[&str] = &["described", "regarded", "seen", "known", "characterized"];

const TRAITS: &[&str] = &[
    "corrupt", "honest", "careful", "popular", "cautious", "experienced", "moderate", "unprincipled",
];

/// Neutral sentences for infill training: the neutral side of
/// [`planted_pairs`] plus `<subject> <neutral verb> as <trait>` frames.
pub fn neutral_sentences(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e17);
    let pairs = planted_pairs(n.div_ceil(2), seed);
    let mut out: Vec<String> = pairs.iter().map(|p| p.neutral_text()).collect();
    while out.len() < n {
        let subj = *SUBJECTS.choose(&mut rng).unwrap();
        let verb = *NEUTRAL_VERBS.choose(&mut rng).unwrap();
        let tr = *TRAITS.choose(&mut rng).unwrap();
        out.push(match rng.random_range(0..3) {
            0 => format!("{subj} {verb} as {tr}"),
            1 => format!("{subj} was {verb} as {tr}"),
            _ => format!("{subj} is widely {verb} as {tr} {}", PLACES.choose(&mut rng).unwrap()),
        });
    }
    out.truncate(n);
    out
}

/// Topic nouns for [`topic_band_corpus`], one list per topic.
pub const TOPIC_NOUNS: &[&[&str]] = &[
    &["budget", "tax", "tariff", "market", "deficit"],
    &["storm", "flood", "wildfire", "drought", "hurricane"],
];

/// Bias score of each band in [`topic_band_corpus`].
pub const BAND_SCORES: [f64; 3] = [-0.7, 0.0, 0.7];

#[derive(Debug, Clone)]
pub struct SyntheticDoc {
    pub id: String,
    pub topic: usize,
    pub band: usize,
    pub text: String,
    pub image: RgbImage,
    pub bias: f64,
}

impl SyntheticDoc {
    pub fn space_item(&self) -> SpaceItem {
        SpaceItem {
            id: self.id.clone(),
            text: self.text.clone(),
            image: pixel_features(&self.image),
            bias: Some(self.bias),
        }
    }

    pub fn source_id(&self) -> String {
        format!("outlet{}", self.band)
    }
}

/// 16×16 image: a strong topic gradient, strong random 4×4 block noise,
/// and a weak uniform green shift proportional to `bias`.
pub fn synthetic_image(topic: usize, bias: f64, rng: &mut ChaCha8Rng) -> RgbImage {
    let noise: Vec<[f64; 3]> = (0..16)
        .map(|_| [rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0)])
        .collect();
    RgbImage::from_fn(16, 16, |x, y| {
        let ramp = if topic.is_multiple_of(2) { x } else { y } as f64 * 10.0;
        let base = if topic.is_multiple_of(2) { [60.0 + ramp, 100.0, 80.0] } else { [80.0, 100.0, 60.0 + ramp] };
        let block = noise[(y / 4 * 4 + x / 4) as usize];
        let mut px = [0u8; 3];
        for c in 0..3 {
            let shift = if c == 1 { 15.0 * bias } else { 0.0 };
            px[c] = (base[c] + block[c] + shift).clamp(0.0, 255.0) as u8;
        }
        Rgb(px)
    })
}

/// `per_cell` documents for every (topic, band) cell of a 2-topic ×
/// 3-band design. Texts name the topic; images carry the band weakly.
/// With `biased_text`, each text holds a planted biased word instead of its
/// neutral counterpart.
pub fn topic_band_corpus(per_cell: usize, biased_text: bool, seed: u64) -> Vec<SyntheticDoc> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs = Vec::new();
    for (topic, nouns) in TOPIC_NOUNS.iter().enumerate() {
        for (band, &bias) in BAND_SCORES.iter().enumerate() {
            for i in 0..per_cell {
                let subj = *SUBJECTS.choose(&mut rng).unwrap();
                let noun = *nouns.choose(&mut rng).unwrap();
                let place = *PLACES.choose(&mut rng).unwrap();
                let (b, n) = planted(&mut rng);
                let word = if biased_text { b } else { n };
                docs.push(SyntheticDoc {
                    id: format!("t{topic}b{band}n{i:03}"),
                    topic,
                    band,
                    text: format!("{subj} {word} the {noun} report {place}"),
                    image: synthetic_image(topic, bias, &mut rng),
                    bias,
                });
            }
        }
    }
    docs
}

/// Writes each document's image as `<dir>/<id>.png` plus `<dir>/articles.jsonl`,
/// and returns the articles.
pub fn write_corpus(dir: &Path, docs: &[SyntheticDoc]) -> Result<Vec<Article>> {
    std::fs::create_dir_all(dir)?;
    let mut articles = Vec::with_capacity(docs.len());
    for d in docs {
        let name = format!("{}.png", d.id);
        d.image.save(dir.join(&name)).map_err(|e| Error::Image {
            path: dir.join(&name),
            message: e.to_string(),
        })?;
        articles.push(Article {
            id: d.id.clone(),
            source_id: d.source_id(),
            text: d.text.clone(),
            image_ref: name,
            topic: format!("topic{}", d.topic),
            source_score: SourceScore::new(d.bias)?,
        });
    }
    write_articles(dir.join("articles.jsonl"), &articles)?;
    Ok(articles)
}

/// Images whose label is a linear function of their mean red level:
/// `label = 0.9 · (2 · mean_red / 255 − 1)`. Green and blue are noise.
pub fn planted_statistic_images(n: usize, seed: u64) -> Vec<(RgbImage, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1abe1);
    (0..n)
        .map(|_| {
            let red: u8 = rng.random_range(20..=235);
            let img = RgbImage::from_fn(16, 16, |_, _| Rgb([red, rng.random(), rng.random()]));
            (img, 0.9 * (2.0 * f64::from(red) / 255.0 - 1.0))
        })
        .collect()
}
