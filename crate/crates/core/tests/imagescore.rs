use debias_core::embedspace::{train_space, BagOfWordsEmbedder, SpaceConfig, SpaceItem};
use debias_core::fixtures::{planted_statistic_images, topic_band_corpus, SyntheticDoc};
use debias_core::imagescore::*;
use debias_core::Error;
use image::{Rgb, RgbImage};
use proptest::prelude::*;

fn labeled(n: usize, seed: u64) -> Vec<LabeledImage> {
    planted_statistic_images(n, seed).iter().map(|(i, s)| LabeledImage::new(i, *s)).collect()
}

#[test]
fn validation_loss_decreases_on_planted_statistic() {
    let data = labeled(200, 5);
    let mut m = BiasRegressor::cold_start(64, 32, 1);
    let report = fine_tune(&mut m, &data, &FineTuneConfig { epochs: 30, ..Default::default() }).unwrap();
    let v = &report.val_loss;
    assert_eq!(v.len(), 31);
    assert!(v[30] < 0.5 * v[0], "{v:?}");
    let down = v.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(3 * down >= 2 * 30, "{v:?}");
}

#[test]
fn memorizes_five_images() {
    let five = labeled(5, 9);
    let mut m = BiasRegressor::cold_start(64, 32, 1);
    let cfg = FineTuneConfig {
        learning_rate: 3e-3,
        epochs: 300,
        validation_fraction: 0.0,
        ..Default::default()
    };
    fine_tune(&mut m, &five, &cfg).unwrap();
    let feats: Vec<&[f64]> = five.iter().map(|l| l.features.as_slice()).collect();
    for (p, l) in m.predict_features(&feats).unwrap().iter().zip(&five) {
        assert!((p - l.score).abs() < 0.05, "{p} vs {}", l.score);
    }
}

#[test]
fn single_sample_overfits() {
    let one = labeled(1, 2);
    let mut m = BiasRegressor::cold_start(32, 16, 4);
    let cfg = FineTuneConfig { learning_rate: 3e-3, epochs: 200, ..Default::default() };
    let r = fine_tune(&mut m, &one, &cfg).unwrap();
    assert!(r.val_loss.is_empty());
    assert!(*r.train_loss.last().unwrap() < 1e-4, "{:?}", r.train_loss.last());
}

#[test]
fn backbone_starts_from_space_image_encoder() {
    let docs = topic_band_corpus(2, false, 0);
    let items: Vec<SpaceItem> = docs.iter().map(SyntheticDoc::space_item).collect();
    let cfg = SpaceConfig { epochs: 2, k: 3, ..SpaceConfig::default() };
    let space = train_space(&items, &BagOfWordsEmbedder::default(), &cfg).unwrap().encoder;
    let m = BiasRegressor::from_space(&space, 0);
    let get = |store: &debias_core::nn::ParamStore, name: &str| store.get(store.id(name).unwrap()).clone();
    assert_eq!(get(m.params(), "backbone.0.w"), get(space.params(), "image.0.w"));
    assert_eq!(get(m.params(), "backbone.1.b"), get(space.params(), "image.1.b"));
}

#[test]
fn file_predictions_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let m = BiasRegressor::cold_start(16, 8, 7);
    let img = RgbImage::from_fn(10, 10, |x, _| Rgb([x as u8 * 20, 5, 200]));
    let p = dir.path().join("i.png");
    img.save(&p).unwrap();
    let a = predict_bias_path(&m, &p).unwrap();
    assert_eq!(a, predict_bias(&m, &img));
    m.save(dir.path().join("m.json")).unwrap();
    assert_eq!(predict_bias_path(&BiasRegressor::load(dir.path().join("m.json")).unwrap(), &p).unwrap(), a);

    assert!(matches!(predict_bias_path(&m, dir.path().join("none.png")), Err(Error::Io(_))));
    std::fs::write(dir.path().join("junk.png"), b"not an image").unwrap();
    assert!(matches!(predict_bias_path(&m, dir.path().join("junk.png")), Err(Error::Image { .. })));
}

#[test]
fn evaluate_reports_rmse_and_r2() {
    let data = labeled(20, 3);
    let m = BiasRegressor::cold_start(16, 8, 7);
    let r = evaluate(&m, &data).unwrap();
    assert_eq!(r.n, 20);
    assert!(r.rmse >= 0.0 && r.r2.unwrap() <= 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn predictions_stay_in_range(
        pixels in prop::collection::vec(any::<u8>(), 3 * 9 * 9),
        seed in 0u64..1000,
        scale in 1.0f64..50.0,
    ) {
        let img = RgbImage::from_raw(9, 9, pixels).unwrap();
        let mut m = BiasRegressor::cold_start(16, 8, seed);
        let data = vec![LabeledImage::new(&img, 1.0)];
        fine_tune(&mut m, &data, &FineTuneConfig { learning_rate: 0.05 * scale, epochs: 3, ..Default::default() }).unwrap();
        let y = predict_bias(&m, &img);
        prop_assert!((-1.0..=1.0).contains(&y));
        prop_assert_eq!(y, predict_bias(&m, &img));
    }
}
