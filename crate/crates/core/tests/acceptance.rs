//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use debias_core::corpus::split_dataset;
use debias_core::embedspace::{
    angular_loss, angular_loss_gradients, bias_angular_loss, train_space, AngularObjective, BagOfWordsEmbedder,
    EmbeddingTable, EmbeddingVector, LossConfig, Modality, SpaceConfig,
};
use debias_core::fixtures::{planted_pairs, planted_statistic_images, topic_band_corpus, write_corpus, SyntheticDoc};
use debias_core::imagescore::{fine_tune, predict_bias, r2, rmse, BiasRegressor, FineTuneConfig, LabeledImage};
use debias_core::nn::TripletObjective;
use debias_core::orchestrator::{debias_article, train_bundle, BundleConfig};
use debias_core::retrieval::{build_index_from, mean_abs_bias, mean_neutrality_gain, nearest_images, TextQuery};
use debias_core::textbias::{classify_band, diff_recall_at_k, top_k_words, train_tagger, BiasBand, TaggerConfig, TokenBias};
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type LossFn<'a> = &'a dyn Fn(&[f64], &[f64], &[f64]) -> f64;
type Point = [f64; 2];

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

struct Criterion {
    name: &'static str,
    budget: Option<Duration>,
    check: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion { name: "loss arithmetic", budget: Some(Duration::from_secs(5)), check: loss_arithmetic },
        Criterion { name: "gradient check", budget: Some(Duration::from_secs(30)), check: gradient_check },
        Criterion { name: "retrieval exactness", budget: Some(Duration::from_secs(10)), check: retrieval_exactness },
        Criterion { name: "metric arithmetic", budget: None, check: metric_arithmetic },
        Criterion { name: "bias-non-increase invariant", budget: None, check: bias_non_increase },
        Criterion { name: "tagger training property", budget: Some(Duration::from_secs(300)), check: tagger_training },
        Criterion { name: "embedding-space geometry", budget: None, check: space_geometry },
        Criterion { name: "band classification", budget: None, check: band_classification },
        Criterion { name: "regressor range + training", budget: None, check: regressor },
        Criterion { name: "runs without secondary component", budget: None, check: no_secondary_component },
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let outcome = match (outcome, c.budget) {
            (Ok(_), Some(b)) if elapsed > b => Err(format!("took {elapsed:.2?}, budget {b:?}")),
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!("PASS  {:<34} {detail} [{elapsed:.2?}]", c.name),
            Err(reason) => {
                failed += 1;
                println!("FAIL  {:<34} {reason} [{elapsed:.2?}]", c.name);
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

/// Scalar re-evaluation of the angular loss formula.
fn loss_oracle(a: &[f64], p: &[f64], n: &[f64], alpha_deg: f64) -> f64 {
    let t = alpha_deg.to_radians().tan();
    let mut pull = 0.0;
    let mut push = 0.0;
    for i in 0..a.len() {
        pull += (a[i] - p[i]) * (a[i] - p[i]);
        let c = (a[i] + p[i]) / 2.0;
        push += (n[i] - c) * (n[i] - c);
    }
    (pull - 4.0 * t * t * push).max(0.0)
}

fn random_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()
}

fn loss_arithmetic() -> Outcome {
    let cfg = LossConfig::default();
    let worked: [(Point, Point, Point, f64); 3] = [
        ([1.0, 0.0], [1.0, 0.0], [5.0, 5.0], 0.0),
        ([1.0, 0.0], [0.0, 1.0], [0.5, 0.5], 2.0),
        ([1.0, 0.0], [0.0, 1.0], [0.0, 0.0], 0.0),
    ];
    for (a, p, n, want) in worked {
        for got in [angular_loss(&a, &p, &n, &cfg).unwrap(), bias_angular_loss(&a, &p, &n, &cfg).unwrap()] {
            ensure!((got - want).abs() <= 1e-9, "worked case {a:?},{p:?},{n:?}: {got} ≠ {want}");
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let d = rng.random_range(2..=128);
        let (a, p, n) = (random_vec(&mut rng, d), random_vec(&mut rng, d), random_vec(&mut rng, d));
        let alpha = rng.random_range(5.0..85.0);
        let cfg = LossConfig { alpha_degrees: alpha, ..LossConfig::default() };
        let want = loss_oracle(&a, &p, &n, alpha);
        for got in [angular_loss(&a, &p, &n, &cfg).unwrap(), bias_angular_loss(&a, &p, &n, &cfg).unwrap()] {
            let err = (got - want).abs() / (1.0 + want.abs());
            worst = worst.max(err);
            ensure!(err <= 1e-9, "dim {d}, α {alpha}: {got} vs oracle {want}");
        }
    }
    Ok(format!("3 worked cases + 1000 random triples, worst relative error {worst:.1e}"))
}

/// Norm-wise relative error between analytic and central-difference gradients.
fn fd_error(loss: LossFn, grads: &[Vec<f64>; 3], args: [Vec<f64>; 3]) -> f64 {
    let h = 1e-5;
    let mut args = args;
    let (mut err, mut norm) = (0.0, 0.0);
    for k in 0..3 {
        for i in 0..args[k].len() {
            let x = args[k][i];
            args[k][i] = x + h;
            let up = loss(&args[0], &args[1], &args[2]);
            args[k][i] = x - h;
            let down = loss(&args[0], &args[1], &args[2]);
            args[k][i] = x;
            let fd = (up - down) / (2.0 * h);
            err += (grads[k][i] - fd).powi(2);
            norm += fd * fd;
        }
    }
    err.sqrt() / norm.sqrt()
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut live, mut hinged, mut worst) = (0, 0, 0.0f64);
    while live < 100 || hinged < 100 {
        let d = rng.random_range(2..=64);
        let alpha = rng.random_range(10.0..60.0);
        let cfg = LossConfig { alpha_degrees: alpha, ..LossConfig::default() };
        let a = random_vec(&mut rng, d);
        let p = random_vec(&mut rng, d);
        // Negatives near the centroid stay active; far ones are hinged.
        let spread = if live < 100 { 0.1 } else { 4.0 };
        let n: Vec<f64> = a.iter().zip(&p).map(|(x, y)| (x + y) / 2.0 + rng.random_range(-spread..spread)).collect();
        let raw = angular_loss(&a, &p, &n, &LossConfig { hinge: false, ..cfg }).unwrap();
        if raw.abs() < 1e-3 {
            continue;
        }
        let objective = AngularObjective::new(&cfg).unwrap();
        let sets = [
            angular_loss_gradients(&a, &p, &n, &cfg).unwrap(),
            objective.gradient(&a, &p, &n),
        ];
        if raw > 0.0 {
            if live >= 100 {
                continue;
            }
            live += 1;
            let eq1 = |a: &[f64], p: &[f64], n: &[f64]| angular_loss(a, p, n, &cfg).unwrap();
            let eq2 = |a: &[f64], p: &[f64], n: &[f64]| bias_angular_loss(a, p, n, &cfg).unwrap();
            for grads in &sets {
                for loss in [&eq1 as LossFn, &eq2] {
                    let e = fd_error(loss, grads, [a.clone(), p.clone(), n.clone()]);
                    worst = worst.max(e);
                    ensure!(e <= 1e-4, "relative error {e:.2e} at dim {d}");
                }
            }
        } else {
            if hinged >= 100 {
                continue;
            }
            hinged += 1;
            for grads in &sets {
                ensure!(grads.iter().flatten().all(|&g| g == 0.0), "non-zero gradient on a hinged triple");
            }
        }
    }
    Ok(format!("100 active triples, worst relative error {worst:.1e}; 100 hinged triples exactly zero"))
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn retrieval_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut vectors: Vec<(String, Vec<f64>)> = (0..1000)
        .map(|i| (format!("img{i:04}"), (0..32).map(|_| rng.random_range(-1.0..1.0)).collect()))
        .collect();
    for i in 0..50 {
        vectors[999 - i].1 = vectors[i].1.clone();
    }
    let scores: BTreeMap<String, f64> =
        vectors.iter().enumerate().map(|(i, (id, _))| (id.clone(), ((i % 21) as f64 - 10.0) / 10.0)).collect();
    let index = build_index_from(vectors.clone(), &scores).unwrap();
    let units: Vec<(String, Vec<f64>)> = vectors.iter().map(|(id, v)| (id.clone(), unit(v))).collect();
    let mut ties = 0;
    for qi in 0..100 {
        let q: Vec<f64> =
            if qi % 4 == 0 { vectors[qi / 4].1.clone() } else { (0..32).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let qu = unit(&q);
        let mut scan: Vec<(f64, &str)> = units
            .iter()
            .map(|(id, v)| (v.iter().zip(&qu).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt(), id.as_str()))
            .collect();
        scan.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
        let query = TextQuery::new("q", EmbeddingVector::new(q, Modality::Text).unwrap());
        let got = nearest_images(&index, &query, 10).unwrap();
        let got: Vec<(f64, &str)> = got.results.iter().map(|r| (r.distance, r.image_id.as_str())).collect();
        ensure!(got == scan[..10], "query {qi}: {got:?} vs {:?}", &scan[..10]);
        ties += usize::from(scan[0].0 == scan[1].0);
    }
    // Every fourth query is a duplicated vector, so its two copies tie at 0.
    ensure!(ties >= 25, "only {ties} queries exercised a tie");
    Ok(format!("1000 × 32 × 100 queries identical to brute force ({ties} with tied leaders)"))
}

fn metric_arithmetic() -> Outcome {
    let eq3 = mean_abs_bias(&[0.5, -0.3, 0.0]).unwrap();
    ensure!((eq3 - 0.2667).abs() <= 1e-4, "retrieved-bias mean {eq3}");
    let eq4 = mean_neutrality_gain(&[(0.8, 0.1), (0.6, 0.2)]).unwrap();
    ensure!(eq4 == 0.55, "neutrality gain {eq4} ≠ 0.55");
    let e = rmse(&[0.0, 0.0], &[1.0, -1.0]).unwrap();
    ensure!(e == 1.0, "rmse {e}");
    let r = r2(&[1.0, -1.0], &[-1.0, 1.0]).unwrap();
    ensure!(r == -3.0, "r² {r}");
    let truth = [0.3, -0.2, 0.9, 0.0];
    let r = r2(&truth, &truth).unwrap();
    ensure!(r == 1.0, "r²(truth, truth) {r}");
    Ok(format!("avg bias {eq3:.4}, gain {eq4}, rmse 1, r² −3 and 1"))
}

fn bias_non_increase() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let index_dir = dir.path().join("index");
    let query_dir = dir.path().join("queries");
    let articles = write_corpus(&index_dir, &topic_band_corpus(8, false, 1)).unwrap();
    let mut docs: Vec<SyntheticDoc> = topic_band_corpus(5, true, 7).into_iter().filter(|d| d.band != 1).collect();
    for d in &mut docs {
        d.id = format!("q{}", d.id);
    }
    let queries = write_corpus(&query_dir, &docs).unwrap();
    ensure!(queries.len() == 20, "fixture has {} articles", queries.len());
    let models = train_bundle(&articles, &index_dir, &planted_pairs(300, 3), &BundleConfig::tiny()).unwrap();
    let (mut replaced, mut changed) = (0, 0);
    for a in &queries {
        let out = debias_article(a, &query_dir, &models).map_err(|e| format!("{}: {e}", a.id))?;
        let (old, new) = (out.original_image_bias, out.final_image_bias());
        ensure!(new.abs() <= old.abs(), "{}: |{new}| > |{old}|", a.id);
        replaced += usize::from(out.replacement_image.replacement().is_some());
        changed += usize::from(out.neutralized_text != a.text);
    }
    Ok(format!("20/20 articles within bound; {replaced} images replaced, {changed} texts changed"))
}

fn tagger_training() -> Outcome {
    let pairs = planted_pairs(500, 1);
    let split = split_dataset(&pairs, (0.8, 0.1, 0.1), 3).unwrap();
    let config = TaggerConfig { epochs: 10, ..TaggerConfig::tiny() };
    ensure!(config.hidden == 32 && config.layers == 2, "not the tiny encoder");
    let (model, _) = train_tagger(&split.train, config).unwrap();
    let held: Vec<_> = split.val.into_iter().chain(split.test).collect();
    let recall = diff_recall_at_k(&model, &held, 5).unwrap();
    ensure!(recall >= 0.8, "held-out recall@5 {recall}");
    let preds = model.predict_token_bias("john mccain exposed as an unprincipled politician").unwrap();
    let top5 = top_k_words(&preds, 5);
    let rank = top5.iter().position(|&w| w == 2);
    ensure!(rank.is_some(), "\"exposed\" not in top 5 {top5:?}");
    Ok(format!("recall@5 {recall:.3} on {} held-out pairs; \"exposed\" rank {}", held.len(), rank.unwrap() + 1))
}

fn band_ratios(docs: &[SyntheticDoc], table: &EmbeddingTable) -> Vec<(f64, f64)> {
    (0..2)
        .map(|topic| {
            let rows: Vec<(usize, Vec<f64>)> = docs
                .iter()
                .filter(|d| d.topic == topic)
                .map(|d| (d.band, table.get(&d.id, Modality::Image).unwrap().values))
                .collect();
            let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0usize, 0.0, 0usize);
            for i in 0..rows.len() {
                for j in i + 1..rows.len() {
                    let d = rows[i].1.iter().zip(&rows[j].1).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                    if rows[i].0 == rows[j].0 {
                        intra += d;
                        ni += 1;
                    } else {
                        inter += d;
                        nx += 1;
                    }
                }
            }
            (intra / ni as f64, inter / nx as f64)
        })
        .collect()
}

/// Intra/inter ratio below which bands count as separated.
const SEPARATION_RATIO: f64 = 0.9;

fn space_geometry() -> Outcome {
    let docs = topic_band_corpus(10, false, 0);
    let items: Vec<_> = docs.iter().map(SyntheticDoc::space_item).collect();
    let run = |w: f64| {
        let cfg = SpaceConfig {
            epochs: 100,
            k: 20,
            loss: LossConfig { alpha_degrees: 20.0, bias_weight: w, ..LossConfig::default() },
            ..SpaceConfig::default()
        };
        band_ratios(&docs, &train_space(&items, &BagOfWordsEmbedder::default(), &cfg).unwrap().table)
    };
    let with = run(1.0);
    let without = run(0.0);
    let mut detail = Vec::new();
    for t in 0..2 {
        let (ri, rx) = with[t];
        let (zi, zx) = without[t];
        ensure!(ri < rx, "topic {t}: intra {ri:.3} ≥ inter {rx:.3} with bias loss");
        ensure!(ri / rx < SEPARATION_RATIO, "topic {t}: ratio {:.3} with bias loss", ri / rx);
        ensure!(zi / zx >= SEPARATION_RATIO, "topic {t}: ratio {:.3} without bias loss", zi / zx);
        detail.push(format!("topic {t} ratio {:.2} vs {:.2}", ri / rx, zi / zx));
    }
    Ok(detail.join(", "))
}

fn band_classification() -> Outcome {
    let preds: Vec<TokenBias> = [0.95, 0.8, 0.6, 0.3]
        .iter()
        .enumerate()
        .map(|(i, &p)| TokenBias { token: format!("w{i}"), index: i, word_index: i, probability: p })
        .collect();
    let bands = classify_band(&preds).unwrap();
    let want = [BiasBand::Max, BiasBand::Mid, BiasBand::Low, BiasBand::None];
    ensure!(bands == want, "{bands:?}");
    Ok("[0.95, 0.8, 0.6, 0.3] → [max, mid, low, none]".into())
}

fn regressor() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let models = [BiasRegressor::cold_start(64, 32, 1), BiasRegressor::cold_start(16, 8, 2)];
    for i in 0..200 {
        let (w, h) = (rng.random_range(1..48), rng.random_range(1..48));
        let img = match i % 4 {
            0 => RgbImage::from_pixel(w, h, Rgb([0, 0, 0])),
            1 => RgbImage::from_pixel(w, h, Rgb([255, 255, 255])),
            _ => RgbImage::from_fn(w, h, |_, _| Rgb([rng.random(), rng.random(), rng.random()])),
        };
        for m in &models {
            let b = predict_bias(m, &img);
            ensure!((-1.0..=1.0).contains(&b), "prediction {b} outside [-1, 1]");
        }
    }
    let data: Vec<LabeledImage> =
        planted_statistic_images(200, 5).iter().map(|(img, s)| LabeledImage::new(img, *s)).collect();
    let mut model = BiasRegressor::cold_start(64, 32, 1);
    let report = fine_tune(&mut model, &data, &FineTuneConfig { epochs: 30, ..Default::default() }).unwrap();
    let v = &report.val_loss;
    let last = *v.last().unwrap();
    let down = v.windows(2).filter(|w| w[1] <= w[0]).count();
    ensure!(last < 0.5 * v[0], "validation loss {:.4} → {last:.4}", v[0]);
    ensure!(3 * down >= 2 * (v.len() - 1), "only {down}/{} epochs non-increasing", v.len() - 1);
    Ok(format!("400 fuzzed predictions in range; validation loss {:.4} → {last:.4}", v[0]))
}

fn no_secondary_component() -> Outcome {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let members: Vec<String> = std::fs::read_dir(root.join("crates"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    ensure!(
        !members.iter().any(|m| m.contains("ui")),
        "workspace holds a UI crate: {members:?}"
    );
    for entry in std::fs::read_dir(&root).unwrap() {
        let name = entry.unwrap().file_name().to_string_lossy().into_owned();
        ensure!(name != "package.json" && name != "review-ui", "found `{name}` at the repository root");
    }
    let manifest = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("Cargo.toml")).unwrap();
    ensure!(!manifest.contains("path = "), "core depends on another workspace crate");
    Ok(format!("core stands alone; workspace crates {members:?}"))
}
