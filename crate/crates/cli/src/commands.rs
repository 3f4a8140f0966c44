//! One function per subcommand. Each reads its inputs, writes outputs atomically and
//! records a manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use itemgraph_core::embeddings::{EmbeddingStore, Provenance};
use itemgraph_core::eval::{
    auc_link_prediction, click_counts, compute_tail_set, knn, split_links, swing_retrieval, unique_recall, EvalReport,
    RetrievalResult,
};
use itemgraph_core::features::{load_features, write_features, FeatureSchema, NodeFeatureStore};
use itemgraph_core::graph::{read_graph, write_graph, GraphMode, GraphStats, ItemGraph};
use itemgraph_core::ingest::{
    filter_spam, generate_synthetic, parse_click_log, parse_future_clicks, parse_search_log, write_click_log,
    write_future_clicks, write_search_log, ClickEvent, Parsed, SearchEvent,
};
use itemgraph_core::io::{sha256_file, write_atomic};
use itemgraph_core::model::{train, TrainedModel};
use itemgraph_core::pipeline::{build_graph, BuiltGraph};
use itemgraph_core::sampler::derive_seed;
use itemgraph_core::tail::resolve_all;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::manifest::Recorder;

pub const TRAIN_GRAPH: &str = "graph/train_graph.tsv";
pub const INFERENCE_GRAPH: &str = "graph/inference_graph.tsv";
pub const GRAPH_STATS: &str = "graph/stats.json";
pub const CHECKPOINT: &str = "model/checkpoint.json";
pub const LOSS_CSV: &str = "model/loss.csv";
pub const SEED_EMBEDDINGS: &str = "embeddings/seed.tsv";
pub const ALL_EMBEDDINGS: &str = "embeddings/all.tsv";
pub const KNN_RETRIEVAL: &str = "retrieval/knn.tsv";
pub const SWING_RETRIEVAL: &str = "retrieval/swing.tsv";
pub const EVAL_REPORT: &str = "eval/report.json";

fn warn_skipped<T>(path: &Path, parsed: Parsed<T>) -> Vec<T> {
    if parsed.skipped > 0 {
        log::warn!("{}: skipped {} malformed rows", path.display(), parsed.skipped);
    }
    parsed.events
}

fn read_clicks(rec: &mut Recorder, path: &Path) -> Result<Vec<ClickEvent>> {
    let parsed = parse_click_log(path).with_context(|| format!("ingest: {}", path.display()))?;
    rec.input(path);
    Ok(warn_skipped(path, parsed))
}

fn read_searches(rec: &mut Recorder, path: &Path) -> Result<Vec<SearchEvent>> {
    let parsed = parse_search_log(path).with_context(|| format!("ingest: {}", path.display()))?;
    rec.input(path);
    Ok(warn_skipped(path, parsed))
}

fn read_features(rec: &mut Recorder, path: &Path) -> Result<NodeFeatureStore> {
    let store = load_features(path).with_context(|| format!("features: {}", path.display()))?;
    rec.input(path);
    Ok(store)
}

fn read_item_graph(rec: &mut Recorder, path: &Path) -> Result<ItemGraph> {
    let g = read_graph(path).with_context(|| format!("graph: {}", path.display()))?;
    rec.input(path);
    Ok(g)
}

fn read_store(rec: &mut Recorder, path: &Path) -> Result<EmbeddingStore> {
    let s = EmbeddingStore::read(path).with_context(|| format!("embeddings: {}", path.display()))?;
    rec.input(path);
    Ok(s)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    write_atomic(path, |w| writeln!(w, "{json}"))?;
    Ok(())
}

pub fn gen_synth(cfg: &RunConfig) -> Result<()> {
    let mut rec = Recorder::new(cfg, "gen-synth");
    let bundle = generate_synthetic(&cfg.synthetic).context("ingest: synthetic generation")?;
    let path = |rel: &str| cfg.out(&format!("data/{rel}"));
    write_click_log(&path("clicks.tsv"), &bundle.clicks)?;
    write_search_log(&path("searches.tsv"), &bundle.searches)?;
    write_click_log(&path("inference_clicks.tsv"), &bundle.inference_clicks)?;
    write_search_log(&path("inference_searches.tsv"), &bundle.inference_searches)?;
    write_features(&path("features.tsv"), &FeatureSchema::default(), &bundle.features)?;
    write_future_clicks(&path("future_clicks.tsv"), &bundle.future_clicks)?;
    write_atomic(&path("clusters.tsv"), |w| {
        writeln!(w, "item\tcluster\ttail_group")?;
        for (item, c) in &bundle.clusters {
            let group = bundle.tail_items.get(item).map_or("seed".to_string(), |g| format!("{g:?}").to_lowercase());
            writeln!(w, "{item}\t{c}\t{group}")?;
        }
        Ok(())
    })?;
    for rel in [
        "clicks.tsv",
        "searches.tsv",
        "inference_clicks.tsv",
        "inference_searches.tsv",
        "features.tsv",
        "future_clicks.tsv",
        "clusters.tsv",
    ] {
        rec.output(&path(rel));
    }
    log::info!(
        "synthetic: {} clicks, {} searches, {} features, {} future clicks",
        bundle.clicks.len(),
        bundle.searches.len(),
        bundle.features.len(),
        bundle.future_clicks.len()
    );
    rec.finish()?;
    Ok(())
}

#[derive(Serialize)]
struct GraphReport {
    stats: GraphStats,
    spam_removed: usize,
    dropped_edges: usize,
}

impl From<&BuiltGraph> for GraphReport {
    fn from(b: &BuiltGraph) -> Self {
        Self { stats: b.stats.clone(), spam_removed: b.spam_removed, dropped_edges: b.dropped_edges }
    }
}

pub fn build_graphs(cfg: &RunConfig) -> Result<()> {
    let mut rec = Recorder::new(cfg, "build-graph");
    let features = read_features(&mut rec, &cfg.features())?;
    let mut clicks = read_clicks(&mut rec, &cfg.clicks())?;
    let mut searches = read_searches(&mut rec, &cfg.searches())?;
    let pipeline = cfg.pipeline();
    let training =
        build_graph(&clicks, &searches, &features, &pipeline, GraphMode::Training).context("graph: training")?;
    let path = cfg.out(TRAIN_GRAPH);
    write_graph(&path, &training.graph)?;
    rec.output(&path);
    log::info!("training graph: {} nodes, {} edges", training.stats.nodes, training.stats.edges);
    let mut report = BTreeMap::from([("training", GraphReport::from(&training))]);
    if cfg.graph.build_inference {
        for (path, is_click) in [(cfg.inference_clicks(), true), (cfg.inference_searches(), false)] {
            if !path.exists() {
                log::info!("{} not found; inference graph uses the training logs only", path.display());
            } else if is_click {
                clicks.extend(read_clicks(&mut rec, &path)?);
            } else {
                searches.extend(read_searches(&mut rec, &path)?);
            }
        }
        let inference =
            build_graph(&clicks, &searches, &features, &pipeline, GraphMode::Inference).context("graph: inference")?;
        let path = cfg.out(INFERENCE_GRAPH);
        write_graph(&path, &inference.graph)?;
        rec.output(&path);
        log::info!("inference graph: {} nodes, {} edges", inference.stats.nodes, inference.stats.edges);
        report.insert("inference", GraphReport::from(&inference));
    }
    let path = cfg.out(GRAPH_STATS);
    write_json(&path, &report)?;
    rec.output(&path);
    rec.finish()?;
    Ok(())
}

fn train_model(cfg: &RunConfig, graph: &ItemGraph, features: &NodeFeatureStore) -> Result<TrainedModel> {
    let model = train(graph, features, &cfg.train_config()).context("model: training")?;
    for (epoch, loss) in model.epoch_losses().iter().enumerate() {
        log::info!("epoch {epoch}: mean loss {loss:.5}");
    }
    Ok(model)
}

pub fn train_cmd(cfg: &RunConfig, graph: Option<&Path>) -> Result<()> {
    let mut rec = Recorder::new(cfg, "train");
    let features = read_features(&mut rec, &cfg.features())?;
    let graph_path = graph.map_or_else(|| cfg.out(TRAIN_GRAPH), Path::to_path_buf);
    let graph = read_item_graph(&mut rec, &graph_path)?;
    let model = train_model(cfg, &graph, &features)?;
    let path = cfg.out(CHECKPOINT);
    model.checkpoint().save(&path)?;
    rec.output(&path);
    let path = cfg.out(LOSS_CSV);
    write_atomic(&path, |w| {
        writeln!(w, "epoch,batch,rows,loss")?;
        for r in &model.losses {
            writeln!(w, "{},{},{},{}", r.epoch, r.batch, r.rows, r.loss)?;
        }
        Ok(())
    })?;
    rec.output(&path);
    let path = cfg.out(SEED_EMBEDDINGS);
    model.embeddings.write(&path, cfg.embedding_encoding)?;
    rec.output(&path);
    rec.finish()?;
    Ok(())
}

pub struct TailFlags<'a> {
    pub no_graph: bool,
    pub no_content: bool,
    pub seeds: Option<&'a Path>,
    pub output: Option<&'a Path>,
}

pub fn infer_tail(cfg: &RunConfig, flags: &TailFlags) -> Result<()> {
    let mut rec = Recorder::new(cfg, "infer-tail");
    let mut tail_cfg = cfg.tail;
    tail_cfg.use_graph &= !flags.no_graph;
    tail_cfg.use_content &= !flags.no_content;
    let seeds_path = flags.seeds.map_or_else(|| cfg.out(SEED_EMBEDDINGS), Path::to_path_buf);
    let seeds = read_store(&mut rec, &seeds_path)?;
    if seeds.dim() != cfg.train.dim {
        bail!("tail: seed embeddings have dimension {} but the config says {}", seeds.dim(), cfg.train.dim);
    }
    let features = read_features(&mut rec, &cfg.features())?;
    let graph = if tail_cfg.use_graph { Some(read_item_graph(&mut rec, &cfg.out(INFERENCE_GRAPH))?) } else { None };
    let all = resolve_all(&seeds, graph.as_ref(), &features, &tail_cfg).context("tail: resolve")?;
    let path = flags.output.map_or_else(|| cfg.out(ALL_EMBEDDINGS), Path::to_path_buf);
    all.write(&path, cfg.embedding_encoding)?;
    rec.output(&path);
    for (p, n) in all.provenance_histogram() {
        println!("{}\t{n}", p.as_str());
    }
    rec.finish()?;
    Ok(())
}

pub struct RetrieveFlags<'a> {
    pub embeddings: Option<&'a Path>,
    pub output: Option<&'a Path>,
    pub swing: bool,
}

pub fn retrieve(cfg: &RunConfig, flags: &RetrieveFlags) -> Result<()> {
    let mut rec = Recorder::new(cfg, "retrieve");
    let store_path = flags.embeddings.map_or_else(|| cfg.out(ALL_EMBEDDINGS), Path::to_path_buf);
    let store = read_store(&mut rec, &store_path)?;
    let queries: Vec<String> = store.iter().map(|(i, _)| i.to_string()).collect();
    let result = knn(&store, queries.iter().map(String::as_str), cfg.eval.k);
    let path = flags.output.map_or_else(|| cfg.out(KNN_RETRIEVAL), Path::to_path_buf);
    result.write(&path)?;
    rec.output(&path);
    if flags.swing {
        let clicks = filter_spam(&read_clicks(&mut rec, &cfg.clicks())?, &cfg.ingest);
        let path = cfg.out(SWING_RETRIEVAL);
        swing_retrieval(&clicks, &cfg.cf, cfg.eval.k).write(&path)?;
        rec.output(&path);
    }
    rec.finish()?;
    Ok(())
}

pub struct EvalFlags<'a> {
    pub auc: bool,
    pub recall: bool,
    pub retrieval: Option<&'a Path>,
    pub baselines: &'a [PathBuf],
}

#[derive(Serialize)]
struct ReportFile<'a> {
    #[serde(flatten)]
    report: &'a EvalReport,
    inputs: BTreeMap<String, String>,
}

fn random_store(items: &EmbeddingStore, seed: u64) -> Result<EmbeddingStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = EmbeddingStore::new(items.dim());
    for (item, _) in items.iter() {
        out.insert(item, (0..items.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect(), Provenance::GnnSeed)?;
    }
    Ok(out)
}

pub fn evaluate(cfg: &RunConfig, flags: &EvalFlags) -> Result<()> {
    cfg.eval.validate()?;
    let mut rec = Recorder::new(cfg, "evaluate");
    let both = !flags.auc && !flags.recall;
    let mut report = EvalReport {
        config: cfg.eval,
        seed: cfg.seed,
        auc: None,
        recall: None,
        tail_items: None,
        tail_threshold: None,
        notes: Vec::new(),
    };
    let mut inputs = Vec::new();
    if flags.auc || both {
        let features = read_features(&mut rec, &cfg.features())?;
        let graph_path = cfg.out(TRAIN_GRAPH);
        let graph = read_item_graph(&mut rec, &graph_path)?;
        inputs.extend([cfg.features(), graph_path]);
        let (kept, held) = split_links(&graph, cfg.eval.holdout_frac, derive_seed(cfg.seed, 3, 0));
        let held: Vec<(String, String)> =
            held.iter().map(|&(s, d)| (graph.item(s).to_string(), graph.item(d).to_string())).collect();
        log::info!("auc: training on {} edges, {} held out", kept.edge_count(), held.len());
        let model = train_model(cfg, &kept, &features)?;
        let auc_seed = derive_seed(cfg.seed, 4, 0);
        let auc = auc_link_prediction(&model.embeddings, &held, &cfg.eval, auc_seed).context("eval: auc")?;
        let random = random_store(&model.embeddings, derive_seed(cfg.seed, 5, 0))?;
        let random_auc = auc_link_prediction(&random, &held, &cfg.eval, auc_seed)?;
        report
            .notes
            .push(format!("random-embedding baseline: auc {:.4}, auc_hard {:.4}", random_auc.auc, random_auc.auc_hard));
        report.auc = Some(auc);
    }
    if flags.recall || both {
        let main_path = flags.retrieval.map_or_else(|| cfg.out(KNN_RETRIEVAL), Path::to_path_buf);
        let main = RetrievalResult::read(&main_path).with_context(|| format!("eval: {}", main_path.display()))?;
        rec.input(&main_path);
        inputs.push(main_path);
        let mut baselines = Vec::new();
        for b in flags.baselines {
            baselines.push(RetrievalResult::read(b).with_context(|| format!("eval: {}", b.display()))?);
            rec.input(b);
            inputs.push(b.clone());
        }
        if baselines.is_empty() {
            report.notes.push("no baseline given: unique recall equals recall".into());
        }
        let future_path = cfg.future_clicks();
        let future = warn_skipped(&future_path, parse_future_clicks(&future_path)?);
        rec.input(&future_path);
        let clicks = read_clicks(&mut rec, &cfg.clicks())?;
        let features = read_features(&mut rec, &cfg.features())?;
        inputs.extend([future_path, cfg.clicks(), cfg.features()]);
        let tail = compute_tail_set(&click_counts(features.items().iter().map(String::as_str), &clicks));
        let refs: Vec<&RetrievalResult> = baselines.iter().collect();
        report.recall = Some(unique_recall(&main, &refs, &future, &tail).context("eval: recall")?);
        report.tail_items = Some(tail.len());
        report.tail_threshold = Some(tail.threshold);
    }
    inputs.sort();
    inputs.dedup();
    let hashes = inputs
        .iter()
        .map(|p| Ok((p.strip_prefix(&cfg.out_dir).unwrap_or(p).display().to_string(), sha256_file(p)?)))
        .collect::<Result<_>>()?;
    let path = cfg.out(EVAL_REPORT);
    write_json(&path, &ReportFile { report: &report, inputs: hashes })?;
    rec.output(&path);
    println!("{}", serde_json::to_string_pretty(&report)?);
    rec.finish()?;
    Ok(())
}
