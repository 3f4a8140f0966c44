//! Exact cosine retrieval and the offline metrics: link-prediction AUC, unique recall
//! and tail unique recall.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use ndarray::ArrayView1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cf::{swing_scores_raw, CfConfig, UserItemClicks};
use crate::embeddings::EmbeddingStore;
use crate::error::{Error, Result};
use crate::graph::ItemGraph;
use crate::ingest::{ClickEvent, FutureClick};
use crate::io::{open_lines, write_atomic};
use crate::model::cosine;
use crate::sampler::select_hard_negatives;

/// Holdout edges needed before AUC is reported.
pub const MIN_HOLDOUT_EDGES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub k: usize,
    pub holdout_frac: f64,
    /// Rows per evaluation batch when picking in-batch negatives for AUC.
    pub batch_size: usize,
    /// Hard negatives per held-out edge for the hard-negative AUC.
    pub n_hard: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { k: 100, holdout_frac: 0.05, batch_size: 256, n_hard: 1 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.batch_size < 2 {
            return Err(Error::Config("eval: k must be positive and batch_size at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_frac) {
            return Err(Error::Config("eval: holdout_frac must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Top-K lists per trigger, best first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RetrievalResult {
    pub k: usize,
    pub lists: BTreeMap<String, Vec<(String, f64)>>,
    /// Queries that had no embedding; they stay part of the trigger set with empty lists.
    pub skipped: BTreeSet<String>,
}

fn rank_order(a: &(String, f64), b: &(String, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

impl RetrievalResult {
    /// Builds lists from arbitrary candidate scores: drops the trigger itself and
    /// duplicate candidates (keeping the best score), ranks by score then item id.
    pub fn from_scores<I, C>(k: usize, scores: I) -> Self
    where
        I: IntoIterator<Item = (String, C)>,
        C: IntoIterator<Item = (String, f64)>,
    {
        let mut lists = BTreeMap::new();
        for (trigger, cands) in scores {
            let mut best: BTreeMap<String, f64> = BTreeMap::new();
            for (item, s) in cands {
                if item != trigger {
                    let e = best.entry(item).or_insert(f64::NEG_INFINITY);
                    *e = e.max(s);
                }
            }
            let mut list: Vec<(String, f64)> = best.into_iter().collect();
            list.sort_by(rank_order);
            list.truncate(k);
            lists.insert(trigger, list);
        }
        Self { k, lists, skipped: BTreeSet::new() }
    }

    pub fn get(&self, trigger: &str) -> Option<&[(String, f64)]> {
        self.lists.get(trigger).map(Vec::as_slice)
    }

    pub fn contains(&self, trigger: &str, item: &str) -> bool {
        self.lists.get(trigger).is_some_and(|l| l.iter().any(|(i, _)| i == item))
    }

    pub fn triggers(&self) -> BTreeSet<&str> {
        self.lists.keys().chain(&self.skipped).map(String::as_str).collect()
    }

    /// `trigger \t rank \t item \t score`, rank from 1. Skipped triggers get a row with
    /// rank 0 and empty item.
    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, |w| {
            writeln!(w, "# k={}", self.k)?;
            for (t, list) in &self.lists {
                for (r, (item, s)) in list.iter().enumerate() {
                    writeln!(w, "{t}\t{}\t{item}\t{s}", r + 1)?;
                }
            }
            for t in &self.skipped {
                writeln!(w, "{t}\t0\t\t")?;
            }
            Ok(())
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bad = |m: String| Error::Format(format!("{}: {m}", path.display()));
        let mut out = RetrievalResult::default();
        for line in open_lines(path)? {
            let line = line?;
            if let Some(k) = line.strip_prefix("# k=") {
                out.k = k.trim().parse().map_err(|_| bad(format!("bad k line {line:?}")))?;
                continue;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(bad(format!("malformed row {line:?}")));
            }
            if cols[1] == "0" {
                out.skipped.insert(cols[0].to_string());
                continue;
            }
            let score: f64 = cols[3].parse().map_err(|_| bad(format!("bad score in {line:?}")))?;
            out.lists.entry(cols[0].to_string()).or_default().push((cols[2].to_string(), score));
        }
        for list in out.lists.values_mut() {
            list.sort_by(rank_order);
        }
        if out.k == 0 {
            out.k = out.lists.values().map(Vec::len).max().unwrap_or(0);
        }
        Ok(out)
    }
}

/// Exact top-`k` by cosine over the whole store, ties by ascending item id, the query
/// itself excluded.
pub fn knn<'a>(store: &EmbeddingStore, queries: impl IntoIterator<Item = &'a str>, k: usize) -> RetrievalResult {
    let entries: Vec<(&str, ArrayView1<f64>)> =
        store.iter().map(|(i, e)| (i, ArrayView1::from(e.vector.as_slice()))).collect();
    let mut out = RetrievalResult { k, ..Default::default() };
    for q in queries {
        let Some(qv) = store.vector(q) else {
            out.skipped.insert(q.to_string());
            continue;
        };
        let qv = ArrayView1::from(qv);
        let mut scored: Vec<(String, f64)> = Vec::new();
        let mut cands: Vec<(usize, f64)> = entries
            .iter()
            .enumerate()
            .filter(|(_, (item, _))| *item != q)
            .map(|(i, (_, v))| (i, cosine(qv, *v)))
            .collect();
        let cmp = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
        if cands.len() > k {
            cands.select_nth_unstable_by(k - 1, cmp);
            cands.truncate(k);
        }
        cands.sort_by(cmp);
        scored.extend(cands.into_iter().map(|(i, s)| (entries[i].0.to_string(), s)));
        out.lists.insert(q.to_string(), scored);
    }
    out
}

/// Holds out `⌊frac·E⌋` edges chosen uniformly; every node stays in the train graph.
pub fn split_links(g: &ItemGraph, holdout_frac: f64, seed: u64) -> (ItemGraph, Vec<(u32, u32)>) {
    let edges: Vec<(u32, u32)> = g.edges().map(|(s, d, _)| (s, d)).collect();
    let n = (holdout_frac * edges.len() as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, edges.len(), n.min(edges.len())).into_vec();
    idx.sort_unstable();
    let holdout: Vec<(u32, u32)> = idx.into_iter().map(|i| edges[i]).collect();
    let removed: HashSet<(u32, u32)> = holdout.iter().copied().collect();
    (g.without_edges(&removed), holdout)
}

/// Probability that a positive outranks a negative, ties counting one half, from the
/// Mann–Whitney rank sum with midranks.
pub fn auc_from_scores(pos: &[f64], neg: &[f64]) -> f64 {
    let mut all: Vec<(f64, bool)> = pos.iter().map(|&s| (s, true)).chain(neg.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + j + 1) as f64 / 2.0;
        rank_sum += mid * all[i..j].iter().filter(|x| x.1).count() as f64;
        i = j;
    }
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    (rank_sum - np * (np + 1.0) / 2.0) / (np * nn)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucReport {
    /// Every other in-batch holdout target as a negative.
    pub auc: f64,
    /// Only the top-`n_hard` scoring in-batch targets as negatives.
    pub auc_hard: f64,
    pub holdout_edges: usize,
    /// Held-out edges with both endpoints embedded.
    pub evaluated_edges: usize,
    pub negatives: usize,
    pub hard_negatives: usize,
}

/// Baseline lists: each item's top-`k` Swing partners over `clicks`, unpruned.
pub fn swing_retrieval(clicks: &[ClickEvent], cf: &CfConfig, k: usize) -> RetrievalResult {
    let scores = swing_scores_raw(&UserItemClicks::from_events(clicks), cf.swing_alpha, cf.max_user_clicks);
    RetrievalResult::from_scores(
        k,
        scores
            .ranked_partners()
            .into_iter()
            .map(|(t, l)| (t.to_string(), l.into_iter().map(|(i, s)| (i.to_string(), s)).collect::<Vec<_>>())),
    )
}

/// Link-prediction AUC on held-out `(source, target)` edges. Edges are shuffled with
/// `seed` and cut into batches; a row's negatives are other rows' targets in its
/// batch, excluding its own target and source.
pub fn auc_link_prediction(
    store: &EmbeddingStore,
    holdout: &[(String, String)],
    cfg: &EvalConfig,
    seed: u64,
) -> Result<AucReport> {
    if holdout.len() < MIN_HOLDOUT_EDGES {
        return Err(Error::InsufficientData(format!(
            "{} held-out edges; at least {MIN_HOLDOUT_EDGES} are needed for AUC",
            holdout.len()
        )));
    }
    // Items become small integers so in-batch exclusion can compare ids.
    let ids: BTreeMap<&str, u32> = store.iter().enumerate().map(|(i, (item, _))| (item, i as u32)).collect();
    let mut rows: Vec<(u32, u32)> =
        holdout.iter().filter_map(|(s, t)| Some((*ids.get(s.as_str())?, *ids.get(t.as_str())?))).collect();
    if rows.len() < MIN_HOLDOUT_EDGES {
        return Err(Error::InsufficientData(format!("only {} held-out edges have embeddings", rows.len())));
    }
    rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let vectors: Vec<ArrayView1<f64>> = store.iter().map(|(_, e)| ArrayView1::from(e.vector.as_slice())).collect();
    let (mut pos, mut neg, mut hard) = (Vec::new(), Vec::new(), Vec::new());
    for chunk in rows.chunks(cfg.batch_size) {
        let sources: Vec<u32> = chunk.iter().map(|r| r.0).collect();
        let targets: Vec<u32> = chunk.iter().map(|r| r.1).collect();
        let score = |a: u32, b: u32| cosine(vectors[a as usize], vectors[b as usize]);
        let scores: Vec<Vec<f64>> = sources.iter().map(|&s| targets.iter().map(|&t| score(s, t)).collect()).collect();
        let all = select_hard_negatives(&scores, &sources, &targets, chunk.len());
        for (i, negs) in all.iter().enumerate() {
            pos.push(score(sources[i], targets[i]));
            // `negs` is sorted by descending score, so its head is the hard subset.
            for (j, &n) in negs.iter().enumerate() {
                let s = score(sources[i], n);
                neg.push(s);
                if j < cfg.n_hard {
                    hard.push(s);
                }
            }
        }
    }
    if neg.is_empty() {
        return Err(Error::InsufficientData("no in-batch negatives available".into()));
    }
    Ok(AucReport {
        auc: auc_from_scores(&pos, &neg),
        auc_hard: auc_from_scores(&pos, &hard),
        holdout_edges: holdout.len(),
        evaluated_edges: pos.len(),
        negatives: neg.len(),
        hard_negatives: hard.len(),
    })
}

/// Bottom 90% of the item pool by click count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailSet {
    pub items: BTreeSet<String>,
    /// Highest click count inside the tail.
    pub threshold: u64,
}

impl TailSet {
    pub fn contains(&self, item: &str) -> bool {
        self.items.contains(item)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// The first `⌈0.9·N⌉` items by ascending click count, ties by ascending id.
pub fn compute_tail_set(counts: &BTreeMap<String, u64>) -> TailSet {
    let n = counts.len();
    let take = (9 * n).div_ceil(10);
    let mut ranked: Vec<(&String, u64)> = counts.iter().map(|(i, &c)| (i, c)).collect();
    ranked.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(take);
    TailSet { threshold: ranked.last().map_or(0, |r| r.1), items: ranked.into_iter().map(|(i, _)| i.clone()).collect() }
}

/// Clicks received by every pool item, zero included.
pub fn click_counts<'a>(pool: impl IntoIterator<Item = &'a str>, clicks: &[ClickEvent]) -> BTreeMap<String, u64> {
    let mut counts: BTreeMap<String, u64> = pool.into_iter().map(|i| (i.to_string(), 0)).collect();
    for c in clicks {
        if let Some(n) = counts.get_mut(&c.clicked) {
            *n += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub k: usize,
    pub baselines: usize,
    /// Future pairs whose trigger is in the trigger set.
    pub pairs: usize,
    pub hits: usize,
    pub unique_hits: usize,
    pub recall: f64,
    pub unique_recall: f64,
    pub tail_pairs: usize,
    pub tail_hits: usize,
    pub tail_unique_hits: usize,
    pub tail_recall: f64,
    pub tail_unique_recall: f64,
}

/// A future pair `(b, a)` is a hit when `a` is in `main`'s list for `b`, and a unique
/// hit when additionally no baseline lists it. Both rates divide by every pair whose
/// trigger is in `main`'s trigger set; the tail rates restrict to pairs whose clicked
/// item is in `tail`.
pub fn unique_recall(
    main: &RetrievalResult,
    baselines: &[&RetrievalResult],
    future: &[FutureClick],
    tail: &TailSet,
) -> Result<RecallReport> {
    if let Some(b) = baselines.iter().find(|b| b.k != main.k) {
        return Err(Error::Config(format!("baseline uses K={} but the evaluated lists use K={}", b.k, main.k)));
    }
    let triggers = main.triggers();
    let mut r = RecallReport {
        k: main.k,
        baselines: baselines.len(),
        pairs: 0,
        hits: 0,
        unique_hits: 0,
        recall: 0.0,
        unique_recall: 0.0,
        tail_pairs: 0,
        tail_hits: 0,
        tail_unique_hits: 0,
        tail_recall: 0.0,
        tail_unique_recall: 0.0,
    };
    for f in future.iter().filter(|f| triggers.contains(f.trigger.as_str())) {
        let is_tail = tail.contains(&f.clicked);
        let hit = main.contains(&f.trigger, &f.clicked);
        let unique = hit && !baselines.iter().any(|b| b.contains(&f.trigger, &f.clicked));
        r.pairs += 1;
        r.hits += hit as usize;
        r.unique_hits += unique as usize;
        if is_tail {
            r.tail_pairs += 1;
            r.tail_hits += hit as usize;
            r.tail_unique_hits += unique as usize;
        }
    }
    if r.pairs == 0 {
        return Err(Error::InsufficientData("no future click has a trigger in the retrieval set".into()));
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    r.recall = ratio(r.hits, r.pairs);
    r.unique_recall = ratio(r.unique_hits, r.pairs);
    r.tail_recall = ratio(r.tail_hits, r.tail_pairs);
    r.tail_unique_recall = ratio(r.tail_unique_hits, r.tail_pairs);
    Ok(r)
}

/// Everything `evaluate` reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub seed: u64,
    pub auc: Option<AucReport>,
    pub recall: Option<RecallReport>,
    pub tail_items: Option<usize>,
    pub tail_threshold: Option<u64>,
    pub notes: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::Provenance;
    use crate::graph::{EdgeAttr, EdgeSource};
    use rand::Rng;

    fn store(entries: &[(&str, Vec<f64>)]) -> EmbeddingStore {
        let mut s = EmbeddingStore::new(entries[0].1.len());
        for (i, v) in entries {
            s.insert(*i, v.clone(), Provenance::GnnSeed).unwrap();
        }
        s
    }

    #[test]
    fn knn_basics() {
        let s = store(&[("a", vec![1.0, 0.0]), ("b", vec![-1.0, 0.0])]);
        let r = knn(&s, ["a"], 5);
        assert_eq!(r.get("a").unwrap(), &[("b".to_string(), -1.0)]);
        let s = store(&[("a", vec![1.0, 2.0]), ("b", vec![0.0, 1.0]), ("c", vec![2.0, 4.0]), ("d", vec![2.0, 4.0])]);
        let r = knn(&s, ["a", "zz"], 2);
        assert_eq!(r.get("a").unwrap()[0], ("c".to_string(), 1.0));
        assert_eq!(r.get("a").unwrap()[1].0, "d");
        assert!(r.skipped.contains("zz"));
        assert_eq!(r.triggers().len(), 2);
    }

    fn oracle(s: &EmbeddingStore, q: &str, k: usize) -> Vec<(String, f64)> {
        let qv = ArrayView1::from(s.vector(q).unwrap());
        let mut all: Vec<(String, f64)> = s
            .iter()
            .filter(|(i, _)| *i != q)
            .map(|(i, e)| (i.to_string(), cosine(qv, ArrayView1::from(e.vector.as_slice()))))
            .collect();
        // Stable sort on score after id order gives the id tie rule.
        all.sort_by(|a, b| a.0.cmp(&b.0));
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        all.truncate(k);
        all
    }

    #[test]
    fn knn_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let entries: Vec<(String, Vec<f64>)> = (0..100)
            .map(|i| (format!("i{i:03}"), (0..4).map(|_| rng.gen_range(-2i32..3) as f64).collect()))
            .filter(|(_, v): &(String, Vec<f64>)| v.iter().any(|&x| x != 0.0))
            .collect();
        let refs: Vec<(&str, Vec<f64>)> = entries.iter().map(|(i, v)| (i.as_str(), v.clone())).collect();
        let s = store(&refs);
        let r = knn(&s, entries.iter().map(|e| e.0.as_str()), 10);
        for (q, _) in &entries {
            assert_eq!(r.get(q).unwrap(), oracle(&s, q, 10).as_slice());
        }
    }

    #[test]
    fn from_scores_ranks_and_excludes_self() {
        let r = RetrievalResult::from_scores(
            2,
            [(
                "a".to_string(),
                vec![("a".to_string(), 9.0), ("c".to_string(), 1.0), ("b".to_string(), 1.0), ("d".to_string(), 0.5)],
            )],
        );
        assert_eq!(r.get("a").unwrap(), &[("b".to_string(), 1.0), ("c".to_string(), 1.0)]);
    }

    #[test]
    fn retrieval_file_round_trip() {
        let mut r = RetrievalResult::from_scores(
            3,
            [("a".to_string(), vec![("b".to_string(), 0.25), ("c".to_string(), -0.1)])],
        );
        r.skipped.insert("z".into());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.tsv");
        r.write(&p).unwrap();
        assert_eq!(RetrievalResult::read(&p).unwrap(), r);
    }

    fn chain(n: usize) -> ItemGraph {
        let names: Vec<String> = (0..n).map(|i| format!("n{i:04}")).collect();
        let edges = (0..n).flat_map(|i| {
            let names = names.clone();
            (1..=4).map(move |d| {
                ((names[i].clone(), names[(i + d) % n].clone()), EdgeAttr::single(EdgeSource::Direct, 1.0))
            })
        });
        ItemGraph::from_edges(std::iter::empty(), edges.collect::<Vec<_>>())
    }

    #[test]
    fn split_partitions_edges() {
        let g = chain(250);
        assert_eq!(g.edge_count(), 1000);
        let (train, hold) = split_links(&g, 0.05, 3);
        assert_eq!(hold.len(), 50);
        assert_eq!(train.edge_count(), 950);
        assert_eq!(train.node_count(), g.node_count());
        let train_edges: BTreeSet<(u32, u32)> = train.edges().map(|(s, d, _)| (s, d)).collect();
        for e in &hold {
            assert!(!train_edges.contains(e));
        }
        let all: BTreeSet<(u32, u32)> = g.edges().map(|(s, d, _)| (s, d)).collect();
        let union: BTreeSet<(u32, u32)> = train_edges.iter().chain(&hold).copied().collect();
        assert_eq!(union, all);
        let (t0, h0) = split_links(&g, 0.0, 3);
        assert!(h0.is_empty());
        assert_eq!(t0.edge_count(), 1000);
        assert_eq!(split_links(&g, 0.05, 3).1, hold);
    }

    #[test]
    fn auc_rank_statistic() {
        assert_eq!(auc_from_scores(&[0.9, 0.8], &[0.1, 0.2]), 1.0);
        assert_eq!(auc_from_scores(&[0.5, 0.5], &[0.5, 0.5, 0.5]), 0.5);
        // Pairs (p > n): 0.9 beats all 3; 0.4 beats 0.3 and ties 0.4; 0.2 beats none.
        let auc = auc_from_scores(&[0.9, 0.4, 0.2], &[0.3, 0.4, 0.6]);
        assert!((auc - (3.0 + 1.5) / 9.0).abs() < 1e-15);
    }

    #[test]
    fn auc_refuses_tiny_holdout_and_separates_perfect_embeddings() {
        let mut entries = Vec::new();
        let mut holdout = Vec::new();
        for i in 0..20 {
            let angle = i as f64 * 0.3;
            entries.push((format!("s{i:02}"), vec![angle.cos(), angle.sin()]));
            entries.push((format!("t{i:02}"), vec![angle.cos(), angle.sin()]));
            holdout.push((format!("s{i:02}"), format!("t{i:02}")));
        }
        let refs: Vec<(&str, Vec<f64>)> = entries.iter().map(|(i, v)| (i.as_str(), v.clone())).collect();
        let s = store(&refs);
        let cfg = EvalConfig { batch_size: 8, ..Default::default() };
        let r = auc_link_prediction(&s, &holdout, &cfg, 1).unwrap();
        assert_eq!(r.auc, 1.0);
        assert_eq!(r.auc_hard, 1.0);
        assert_eq!(r.hard_negatives, r.evaluated_edges);
        assert!(matches!(auc_link_prediction(&s, &holdout[..9], &cfg, 1), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn tail_set_sizes() {
        let counts: BTreeMap<String, u64> = (0..10).map(|i| (format!("i{i}"), 9 - i as u64)).collect();
        let t = compute_tail_set(&counts);
        assert_eq!(t.len(), 9);
        assert!(!t.contains("i0"));
        assert_eq!(t.threshold, 8);
        let flat: BTreeMap<String, u64> = (0..11).map(|i| (format!("i{i:02}"), 4)).collect();
        let t = compute_tail_set(&flat);
        assert_eq!(t.len(), 10);
        assert!(!t.contains("i10"));
        let one: BTreeMap<String, u64> = [("x".to_string(), 0)].into_iter().collect();
        assert_eq!(compute_tail_set(&one).len(), 1);
    }

    fn lists(k: usize, entries: &[(&str, &[&str])]) -> RetrievalResult {
        RetrievalResult::from_scores(
            k,
            entries.iter().map(|(t, items)| {
                (t.to_string(), items.iter().enumerate().map(|(r, i)| (i.to_string(), -(r as f64))).collect::<Vec<_>>())
            }),
        )
    }

    fn fc(t: &str, c: &str) -> FutureClick {
        FutureClick { user: "u".into(), trigger: t.into(), clicked: c.into() }
    }

    #[test]
    fn unique_recall_hand_scenario() {
        let main = lists(2, &[("a", &["x", "y"]), ("b", &["x", "z"])]);
        let base = lists(2, &[("a", &["x", "q"]), ("b", &["w", "q"])]);
        let future = [fc("a", "x"), fc("a", "y"), fc("b", "z"), fc("b", "w"), fc("c", "x"), fc("a", "q")];
        let tail = TailSet { items: ["y", "w", "q"].into_iter().map(String::from).collect(), threshold: 0 };
        let r = unique_recall(&main, &[&base], &future, &tail).unwrap();
        // Trigger c is outside the trigger set, leaving five pairs.
        assert_eq!((r.pairs, r.hits, r.unique_hits), (5, 3, 2));
        assert_eq!((r.tail_pairs, r.tail_hits, r.tail_unique_hits), (3, 1, 1));
        assert!((r.unique_recall - 0.4).abs() < 1e-15);
        assert!((r.tail_unique_recall - 1.0 / 3.0).abs() < 1e-15);
        let plain = unique_recall(&main, &[], &future, &tail).unwrap();
        assert_eq!(plain.unique_recall, plain.recall);
        let full = unique_recall(&main, &[&main], &future, &tail).unwrap();
        assert_eq!(full.unique_recall, 0.0);
        assert!(unique_recall(&main, &[], &[fc("c", "x")], &tail).is_err());
        assert!(unique_recall(&main, &[&lists(3, &[])], &future, &tail).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn unique_recall_bounded_by_recall(
                main in prop::collection::vec(prop::collection::vec(0u8..6, 0..4), 4),
                base in prop::collection::vec(prop::collection::vec(0u8..6, 0..4), 4),
                pairs in prop::collection::vec((0u8..4, 0u8..6), 1..20),
            ) {
                let mk = |l: &Vec<Vec<u8>>| RetrievalResult::from_scores(4, l.iter().enumerate().map(|(t, items)| {
                    (format!("t{t}"), items.iter().map(|i| (format!("i{i}"), 0.0)).collect::<Vec<_>>())
                }));
                let (m, b) = (mk(&main), mk(&base));
                let future: Vec<FutureClick> = pairs.iter().map(|(t, c)| fc(&format!("t{t}"), &format!("i{c}"))).collect();
                let tail = TailSet { items: (0..3).map(|i| format!("i{i}")).collect(), threshold: 0 };
                let r = unique_recall(&m, &[&b], &future, &tail).unwrap();
                prop_assert!(r.unique_recall <= r.recall);
                prop_assert!(r.tail_pairs <= r.pairs);
                prop_assert!((0.0..=1.0).contains(&r.tail_unique_recall));
            }

            #[test]
            fn tail_set_is_ceil_ninety_percent(counts in prop::collection::vec(0u64..5, 1..200)) {
                let m: BTreeMap<String, u64> = counts.iter().enumerate().map(|(i, c)| (format!("i{i:03}"), *c)).collect();
                let t = compute_tail_set(&m);
                prop_assert_eq!(t.len(), (9 * m.len()).div_ceil(10));
                let max_in = t.items.iter().map(|i| m[i]).max().unwrap();
                let min_out = m.iter().filter(|(i, _)| !t.contains(i)).map(|(_, c)| *c).min();
                prop_assert!(min_out.is_none_or(|c| c >= max_in));
            }
        }
    }

    #[test]
    fn swing_retrieval_lists_partners() {
        let click = |u: &str, i: &str| ClickEvent { user: u.into(), trigger: None, clicked: i.into(), timestamp: 0 };
        let clicks: Vec<_> =
            ["u1", "u2", "u3"].iter().flat_map(|u| [click(u, "a"), click(u, "b")]).chain([click("u1", "c")]).collect();
        let r = swing_retrieval(&clicks, &CfConfig::default(), 5);
        let a = r.get("a").unwrap();
        assert_eq!(a[0].0, "b");
        assert!((a[0].1 - 1.0).abs() < 1e-12);
        assert!(!r.contains("a", "a"));
    }
}
