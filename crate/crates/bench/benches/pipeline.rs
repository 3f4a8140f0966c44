use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use itemgraph_core::cf::{swing_scores_raw, UserItemClicks};
use itemgraph_core::embeddings::{EmbeddingStore, Provenance};
use itemgraph_core::eval::knn;
use itemgraph_core::features::{FeatureSchema, NodeFeatureStore};
use itemgraph_core::graph::GraphMode;
use itemgraph_core::ingest::{generate_synthetic, SyntheticBundle, SyntheticSpec};
use itemgraph_core::model::{batch_gradients, ModelParams, ModelShape, NodeInputs, TrainConfig};
use itemgraph_core::pipeline::{build_graph, GraphPipelineConfig};
use itemgraph_core::sampler::{GraphSampler, SamplingConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bundle() -> SyntheticBundle {
    let spec = SyntheticSpec { n_items: 300, n_clusters: 5, n_users: 3000, n_events: 60_000, ..Default::default() };
    generate_synthetic(&spec).unwrap()
}

fn bench_swing(c: &mut Criterion) {
    let b = bundle();
    let clicks = UserItemClicks::from_events(&b.clicks);
    c.bench_function("swing_60k_clicks", |bench| bench.iter(|| swing_scores_raw(black_box(&clicks), 1.0, 1000)));
}

fn bench_model(c: &mut Criterion) {
    let b = bundle();
    let features = NodeFeatureStore::from_rows(FeatureSchema::default(), b.features.clone()).unwrap();
    let built =
        build_graph(&b.clicks, &b.searches, &features, &GraphPipelineConfig::default(), GraphMode::Training).unwrap();
    let graph = built.graph;
    let cfg = TrainConfig::default();
    let inputs = NodeInputs::build(&graph, &features);
    let shape = ModelShape::new(&inputs, cfg.dim, cfg.field_dim, cfg.k_layers());
    let params = ModelParams::init(&shape, &mut ChaCha8Rng::seed_from_u64(1));
    let sampler = GraphSampler::new(&graph).unwrap();
    let targets: Vec<u32> = (0..graph.node_count() as u32).filter(|&n| graph.out_degree(n) > 0).take(64).collect();
    let sampling = SamplingConfig::default();
    c.bench_function("sample_batch_64", |bench| bench.iter(|| sampler.sample_batch(black_box(&targets), &sampling, 3)));
    let batch = sampler.sample_batch(&targets, &sampling, 3);
    c.bench_function("forward_backward_64", |bench| {
        bench.iter(|| batch_gradients(black_box(&params), &inputs, &batch, cfg.temperature).unwrap())
    });
}

fn bench_knn(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = EmbeddingStore::new(64);
    for i in 0..1000 {
        store
            .insert(format!("i{i:04}"), (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect(), Provenance::GnnSeed)
            .unwrap();
    }
    let queries: Vec<String> = store.iter().take(100).map(|(i, _)| i.to_string()).collect();
    c.bench_function("knn_100_queries_1000_items", |bench| {
        bench.iter(|| knn(black_box(&store), queries.iter().map(String::as_str), 100))
    });
}

criterion_group!(benches, bench_swing, bench_model, bench_knn);
criterion_main!(benches);
