use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use debias_core::corpus::{load_articles, load_neutrality_pairs, Article, ScoreTable};
use debias_core::embedspace::{train_space, BagOfWordsEmbedder, DualEncoder, EmbeddingTable, Modality, SpaceConfig, SpaceItem};
use debias_core::imagescore::{evaluate, fine_tune, predict_bias_path, BiasRegressor, FineTuneConfig, LabeledImage};
use debias_core::imaging::features_from_path;
use debias_core::neutralize::{
    apply_replacements, encode_image_tokens, evaluate_neutralization, mask_words, select_words, train_infill,
    ImageTokens, InfillConfig, NeutralExample, WordVectorTable,
};
use debias_core::orchestrator::{
    debias_article, load_pairs, read_scores, sample_pairs, train_bundle, write_pairs, write_scores, BundleConfig,
    DebiasedArticle, EvalSession, JudgmentStore, StageModels, SCORES_FILE, SPACE_FILE, TABLE_FILE,
};
use debias_core::retrieval::{
    avg_neutrality_gain, avg_retrieved_bias, build_index, nearest_images, RetrievalIndex, RetrievalMetrics, TextQuery,
};
use debias_core::text::words;
use debias_core::textbias::{classify_band, train_tagger, TaggerConfig, TaggerModel};
use serde::Deserialize;

/// Political-bias detection and neutralization for text+image articles.
#[derive(Parser)]
#[command(name = "debias", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Article corpora and source scores.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Token-level bias tagger.
    #[command(subcommand)]
    Textbias(TextbiasCmd),
    /// Masked infilling of biased words.
    #[command(subcommand)]
    Neutralize(NeutralizeCmd),
    /// Shared text/image embedding space.
    #[command(subcommand)]
    Space(SpaceCmd),
    /// Nearest images for a text, or retrieval metrics over a test set.
    Retrieve(RetrieveArgs),
    /// Image bias regressor.
    #[command(subcommand)]
    Imagescore(ImagescoreCmd),
    /// End-to-end debiasing.
    #[command(subcommand)]
    Pipeline(PipelineCmd),
    /// Sample evaluation pairs from a batch output.
    EvalSample {
        /// Output of `pipeline batch`.
        #[arg(long)]
        batch: PathBuf,
        /// Directory the articles' image refs resolve against.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(short, long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the human-evaluation API.
    EvalServe {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        store: PathBuf,
    },
    /// Aggregate stored judgments.
    EvalReport {
        #[arg(long)]
        store: PathBuf,
    },
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Parse an article file and check source-score consistency.
    Validate { path: PathBuf },
    /// Print the source → score table of an article file.
    ScoreTable { path: PathBuf },
}

#[derive(Subcommand)]
enum TextbiasCmd {
    Train {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: TrainOpts,
    },
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long, value_enum, default_value_t = Format::Probs)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Bands,
    Probs,
}

#[derive(Args, Clone)]
struct TrainOpts {
    /// Small encoder instead of the full-size default.
    #[arg(long)]
    tiny: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum NeutralizeCmd {
    /// Mask and infill the biased words of one sentence.
    Run {
        /// Model directory written by `pipeline train`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long)]
        image: Option<PathBuf>,
    },
    /// Mean word-vector cosine between original and predicted words.
    Eval {
        /// Two tab-separated columns: original word, predicted word.
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        vectors: PathBuf,
    },
    /// Train an infill model on the neutral side of neutrality pairs.
    Train {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: TrainOpts,
    },
}

#[derive(Subcommand)]
enum SpaceCmd {
    Train {
        /// Directory holding `articles.jsonl` and the article images.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 45.0)]
        alpha: f64,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        #[arg(long, default_value_t = 1.0)]
        bias_weight: f64,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    Inspect {
        #[arg(long)]
        table: PathBuf,
        /// Print per-modality norm statistics.
        #[arg(long)]
        stats: bool,
    },
}

#[derive(Args)]
#[command(args_conflicts_with_subcommands = true)]
struct RetrieveArgs {
    #[command(subcommand)]
    eval: Option<RetrieveCmd>,
    /// Directory with the space model, image table and scores.
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    text: Option<String>,
    #[arg(short, default_value_t = 5)]
    k: usize,
}

#[derive(Subcommand)]
enum RetrieveCmd {
    Eval {
        #[arg(long)]
        index: PathBuf,
        /// JSON lines `{"text": .., "original_bias": ..}`.
        #[arg(long)]
        testset: PathBuf,
    },
}

#[derive(Subcommand)]
enum ImagescoreCmd {
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
    },
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// JSON lines `{"image": .., "score": ..}`; image paths resolve
        /// against the file's directory.
        #[arg(long)]
        labeled: PathBuf,
    },
    Train {
        #[arg(long)]
        labeled: PathBuf,
        /// Space model whose image branch initializes the backbone.
        #[arg(long)]
        space: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum PipelineCmd {
    /// Train every stage model into one directory.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSON bundle configuration; defaults to full-size models.
        #[arg(long, conflicts_with = "tiny")]
        config: Option<PathBuf>,
        #[arg(long)]
        tiny: bool,
    },
    Run {
        /// One article as a JSON object.
        #[arg(long)]
        article: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the article file's directory.
        #[arg(long)]
        image_root: Option<PathBuf>,
    },
    Batch {
        /// Directory holding `articles.jsonl` and the article images.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        models: PathBuf,
        /// JSON lines of debiased articles.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Corpus(c) => corpus(c),
        Command::Textbias(c) => textbias(c),
        Command::Neutralize(c) => neutralize(c),
        Command::Space(c) => space(c),
        Command::Retrieve(a) => retrieve(a),
        Command::Imagescore(c) => imagescore(c),
        Command::Pipeline(c) => pipeline(c),
        Command::EvalSample {
            batch,
            corpus,
            n,
            seed,
            out,
        } => {
            let articles: Vec<DebiasedArticle> = read_json_lines(&batch)?;
            let pairs = sample_pairs(&articles, &corpus, n, seed)?;
            write_pairs(&out, &pairs)?;
            println!("{} pairs → {}", pairs.len(), out.display());
            Ok(())
        }
        Command::EvalServe {
            port,
            host,
            pairs,
            store,
        } => {
            let session = EvalSession::new(load_pairs(&pairs)?, JudgmentStore::open(&store)?)?;
            let addr: SocketAddr = format!("{host}:{port}").parse().context("invalid host/port")?;
            tokio::runtime::Runtime::new()?.block_on(debias_evalserve::serve(addr, session))?;
            Ok(())
        }
        Command::EvalReport { store } => {
            let store = JudgmentStore::open(&store)?;
            print_json(&debias_core::orchestrator::aggregate_judgments(store.records()))
        }
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn read_json_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

fn articles_file(corpus: &Path) -> PathBuf {
    corpus.join("articles.jsonl")
}

fn corpus(cmd: CorpusCmd) -> Result<()> {
    match cmd {
        CorpusCmd::Validate { path } => {
            let articles = load_articles(&path)?;
            let table = ScoreTable::from_articles(&articles)?;
            println!("{} articles, {} sources: ok", articles.len(), table.len());
        }
        CorpusCmd::ScoreTable { path } => {
            let table = ScoreTable::from_articles(&load_articles(&path)?)?;
            for (source, score) in table.iter() {
                println!("{source}\t{}", score.value());
            }
        }
    }
    Ok(())
}

fn tagger_config(opts: &TrainOpts) -> TaggerConfig {
    let mut c = if opts.tiny { TaggerConfig::tiny() } else { TaggerConfig::default() };
    if let Some(e) = opts.epochs {
        c.epochs = e;
    }
    if let Some(lr) = opts.lr {
        c.learning_rate = lr;
    }
    if let Some(s) = opts.seed {
        c.seed = s;
    }
    c
}

fn textbias(cmd: TextbiasCmd) -> Result<()> {
    match cmd {
        TextbiasCmd::Train { pairs, out, opts } => {
            let load = load_neutrality_pairs(&pairs)?;
            let (model, report) = train_tagger(&load.pairs, tagger_config(&opts))?;
            model.save(&out)?;
            println!(
                "{} pairs ({} dropped), loss {:.4} → {:.4}; saved {}",
                load.pairs.len(),
                load.dropped,
                report.epoch_losses.first().copied().unwrap_or(f64::NAN),
                report.epoch_losses.last().copied().unwrap_or(f64::NAN),
                out.display()
            );
        }
        TextbiasCmd::Predict { model, text, format } => {
            let model = TaggerModel::load(&model)?;
            let preds = model.predict_token_bias(&text)?;
            match format {
                Format::Probs => {
                    for p in &preds {
                        println!("{}\t{:.4}", p.token, p.probability);
                    }
                }
                Format::Bands => {
                    for (p, band) in preds.iter().zip(classify_band(&preds)?) {
                        println!("{}\t{}", p.token, serde_json::to_value(band)?.as_str().unwrap_or_default());
                    }
                }
            }
        }
    }
    Ok(())
}

fn neutralize(cmd: NeutralizeCmd) -> Result<()> {
    match cmd {
        NeutralizeCmd::Run { model, text, image } => {
            let models = StageModels::load(&model)?;
            let preds = models.tagger.predict_token_bias(&text)?;
            let chosen = select_words(&preds, &models.config.mask);
            let tokens = models.infill.tokenizer().tokenize_words(&words(&text));
            let masked = mask_words(&tokens, &chosen, models.infill.tokenizer().mask_id())?;
            let image = match image {
                Some(p) => encode_image_tokens(&p, &models.image_tokenizer)?,
                None => ImageTokens::empty(models.infill.config().image_dim),
            };
            let reps = models.infill.predict_replacements(&masked, &image)?;
            print_json(&serde_json::json!({
                "masked_words": chosen,
                "replacements": reps,
                "text": apply_replacements(&masked, &reps).join(" "),
            }))?;
        }
        NeutralizeCmd::Eval { pairs, vectors } => {
            let table = WordVectorTable::load(&vectors)?;
            let mut samples = Vec::new();
            for (i, line) in BufReader::new(File::open(&pairs)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let Some((a, b)) = line.split_once('\t') else {
                    bail!("{}:{}: expected two tab-separated words", pairs.display(), i + 1);
                };
                samples.push((a.trim().to_string(), b.trim().to_string()));
            }
            print_json(&evaluate_neutralization(&samples, &table)?)?;
        }
        NeutralizeCmd::Train { pairs, out, opts } => {
            let load = load_neutrality_pairs(&pairs)?;
            let mut config = if opts.tiny { InfillConfig::tiny() } else { InfillConfig::default() };
            if let Some(e) = opts.epochs {
                config.epochs = e;
            }
            if let Some(lr) = opts.lr {
                config.learning_rate = lr;
            }
            if let Some(s) = opts.seed {
                config.seed = s;
            }
            let examples: Vec<NeutralExample> = load
                .pairs
                .iter()
                .map(|p| NeutralExample {
                    text: p.neutral_text(),
                    image: None,
                })
                .collect();
            let (model, losses) = train_infill(&examples, config)?;
            model.save(&out)?;
            println!("loss {:?}; saved {}", losses.last(), out.display());
        }
    }
    Ok(())
}

fn space_items(corpus: &Path) -> Result<(Vec<SpaceItem>, BTreeMap<String, f64>)> {
    let articles = load_articles(articles_file(corpus))?;
    let mut items = Vec::new();
    let mut scores = BTreeMap::new();
    for a in &articles {
        let path = corpus.join(&a.image_ref);
        if !path.is_file() {
            log::warn!("article `{}`: image {} missing; skipped", a.id, path.display());
            continue;
        }
        items.push(SpaceItem {
            id: a.id.clone(),
            text: a.text.clone(),
            image: features_from_path(&path)?,
            bias: Some(a.source_score.value()),
        });
        scores.insert(a.id.clone(), a.source_score.value());
    }
    Ok((items, scores))
}

fn space(cmd: SpaceCmd) -> Result<()> {
    match cmd {
        SpaceCmd::Train {
            corpus,
            alpha,
            epsilon,
            bias_weight,
            epochs,
            seed,
            out,
        } => {
            let (items, scores) = space_items(&corpus)?;
            let mut config = SpaceConfig {
                epsilon,
                seed,
                ..SpaceConfig::default()
            };
            config.loss.alpha_degrees = alpha;
            config.loss.bias_weight = bias_weight;
            if let Some(e) = epochs {
                config.epochs = e;
            }
            let trained = train_space(&items, &BagOfWordsEmbedder::default(), &config)?;
            std::fs::create_dir_all(&out)?;
            trained.encoder.save(out.join(SPACE_FILE))?;
            trained.table.save(out.join(TABLE_FILE))?;
            write_scores(out.join(SCORES_FILE), &scores.iter().map(|(k, v)| (k.as_str(), *v)).collect())?;
            if let Some(last) = trained.history.last() {
                println!(
                    "{} items, final loss {:.4} (semantic {:.4}, bias {:.4}); saved {}",
                    items.len(),
                    last.total,
                    last.semantic,
                    last.bias,
                    out.display()
                );
            }
        }
        SpaceCmd::Inspect { table, stats } => {
            let table = EmbeddingTable::load(&table)?;
            println!("{} vectors, dim {}", table.len(), table.dim());
            for m in table.modalities() {
                let norms: Vec<f64> = table
                    .of_modality(m)
                    .map(|(_, v)| v.iter().map(|x| x * x).sum::<f64>().sqrt())
                    .collect();
                print!("{m}: {}", norms.len());
                if stats && !norms.is_empty() {
                    let mean = norms.iter().sum::<f64>() / norms.len() as f64;
                    let (lo, hi) = norms
                        .iter()
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &n| (lo.min(n), hi.max(n)));
                    print!(", norm mean {mean:.4} min {lo:.4} max {hi:.4}");
                }
                println!();
            }
        }
    }
    Ok(())
}

fn load_search(dir: &Path) -> Result<(DualEncoder, RetrievalIndex)> {
    let encoder = DualEncoder::load(dir.join(SPACE_FILE))?;
    let table = EmbeddingTable::load(dir.join(TABLE_FILE))?;
    if !table.modalities().contains(&Modality::Image) {
        bail!("{} holds no image vectors", dir.join(TABLE_FILE).display());
    }
    let index = build_index(&table, &read_scores(dir.join(SCORES_FILE))?)?;
    Ok((encoder, index))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TestItem {
    text: String,
    original_bias: f64,
}

fn retrieve(args: RetrieveArgs) -> Result<()> {
    if let Some(RetrieveCmd::Eval { index, testset }) = args.eval {
        let (encoder, index) = load_search(&index)?;
        let items: Vec<TestItem> = read_json_lines(&testset)?;
        let mut queries = Vec::with_capacity(items.len());
        for t in &items {
            queries.push((t.original_bias, TextQuery::new(t.text.clone(), encoder.encode_text(&t.text)?)));
        }
        let texts: Vec<TextQuery> = queries.iter().map(|(_, q)| q.clone()).collect();
        return print_json(&RetrievalMetrics {
            avg_bias: avg_retrieved_bias(&texts, &index)?,
            avg_gain: avg_neutrality_gain(&queries, &index)?,
            n: queries.len(),
        });
    }
    let (Some(index), Some(text)) = (args.index, args.text) else {
        bail!("`retrieve` needs --index and --text (or the `eval` subcommand)");
    };
    let (encoder, index) = load_search(&index)?;
    let query = TextQuery::new(text.clone(), encoder.encode_text(&text)?);
    print_json(&nearest_images(&index, &query, args.k)?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LabeledLine {
    image: PathBuf,
    score: f64,
}

fn labeled_images(path: &Path) -> Result<Vec<LabeledImage>> {
    let root = path.parent().unwrap_or(Path::new("."));
    read_json_lines::<LabeledLine>(path)?
        .into_iter()
        .map(|l| {
            Ok(LabeledImage {
                features: features_from_path(root.join(&l.image))?,
                score: l.score,
            })
        })
        .collect()
}

fn imagescore(cmd: ImagescoreCmd) -> Result<()> {
    match cmd {
        ImagescoreCmd::Predict { model, image } => {
            let model = BiasRegressor::load(&model)?;
            println!("{:.6}", predict_bias_path(&model, &image)?);
        }
        ImagescoreCmd::Eval { model, labeled } => {
            let model = BiasRegressor::load(&model)?;
            print_json(&evaluate(&model, &labeled_images(&labeled)?)?)?;
        }
        ImagescoreCmd::Train {
            labeled,
            space,
            out,
            epochs,
            seed,
        } => {
            let mut model = match space {
                Some(p) => BiasRegressor::from_space(&DualEncoder::load(&p)?, seed),
                None => {
                    let c = SpaceConfig::default();
                    BiasRegressor::cold_start(c.hidden, c.dim, seed)
                }
            };
            let mut config = FineTuneConfig {
                seed,
                ..FineTuneConfig::default()
            };
            if let Some(e) = epochs {
                config.epochs = e;
            }
            let report = fine_tune(&mut model, &labeled_images(&labeled)?, &config)?;
            model.save(&out)?;
            println!(
                "validation loss {:?} → {:?}; saved {}",
                report.val_loss.first(),
                report.val_loss.last(),
                out.display()
            );
        }
    }
    Ok(())
}

fn pipeline(cmd: PipelineCmd) -> Result<()> {
    match cmd {
        PipelineCmd::Train {
            corpus,
            pairs,
            out,
            config,
            tiny,
        } => {
            let config = match (config, tiny) {
                (Some(p), _) => serde_json::from_reader(BufReader::new(File::open(&p)?))
                    .with_context(|| format!("reading {}", p.display()))?,
                (None, true) => BundleConfig::tiny(),
                (None, false) => BundleConfig::default(),
            };
            let articles = load_articles(articles_file(&corpus))?;
            let pairs = load_neutrality_pairs(&pairs)?.pairs;
            let models = train_bundle(&articles, &corpus, &pairs, &config)?;
            models.save(&out)?;
            println!("{} images indexed; saved {}", models.index.len(), out.display());
        }
        PipelineCmd::Run {
            article,
            models,
            out,
            image_root,
        } => {
            let a: Article = serde_json::from_reader(BufReader::new(File::open(&article)?))
                .with_context(|| format!("reading {}", article.display()))?;
            let root = image_root.unwrap_or_else(|| article.parent().unwrap_or(Path::new(".")).to_path_buf());
            let models = StageModels::load(&models)?;
            let result = debias_article(&a, &root, &models)?;
            serde_json::to_writer_pretty(BufWriter::new(File::create(&out)?), &result)?;
            println!("{}", result.neutralized_text);
        }
        PipelineCmd::Batch { corpus, models, out } => {
            let articles = load_articles(articles_file(&corpus))?;
            let models = StageModels::load(&models)?;
            let results = run_batch(&articles, &corpus, &models);
            let mut w = BufWriter::new(File::create(&out)?);
            let mut failed = 0;
            for (a, r) in articles.iter().zip(results) {
                match r {
                    Ok(d) => {
                        serde_json::to_writer(&mut w, &d)?;
                        w.write_all(b"\n")?;
                    }
                    Err(e) => {
                        failed += 1;
                        log::error!("article `{}`: {e}", a.id);
                    }
                }
            }
            w.flush()?;
            println!("{} debiased, {failed} failed → {}", articles.len() - failed, out.display());
        }
    }
    Ok(())
}

/// Articles are independent; split them across threads, preserving order.
fn run_batch(articles: &[Article], root: &Path, models: &StageModels) -> Vec<debias_core::Result<DebiasedArticle>> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let chunk = articles.len().div_ceil(threads).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = articles
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|a| debias_article(a, root, models)).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("batch worker panicked"))
            .collect()
    })
}
