//! Supplementary item-to-item edges from collaborative filtering.
//!
//! Swing rewards item pairs co-clicked by user pairs who otherwise have little in
//! common:
//!
//! ```text
//! swing(i, j) = Σ_{u < v ∈ U(i) ∩ U(j)} 1 / (α + |I(u) ∩ I(v)|)
//! ```
//!
//! Search co-click counts how many (user, query) groups clicked both items.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeSource, GraphBuildConfig, WeightedEdge};
use crate::ingest::{ClickEvent, SearchEvent};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CfConfig {
    pub swing_alpha: f64,
    pub top_n_per_item: usize,
    /// Multiplier mapping scores onto the direct-click weight scale.
    pub penalty_factor: f64,
    pub min_score: f64,
    /// Users with more distinct items than this are ignored by Swing.
    pub max_user_clicks: usize,
}

impl Default for CfConfig {
    fn default() -> Self {
        Self { swing_alpha: 1.0, top_n_per_item: 20, penalty_factor: 0.5, min_score: 1.0, max_user_clicks: 1000 }
    }
}

impl CfConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.swing_alpha > 0.0
            && self.top_n_per_item > 0
            && self.penalty_factor > 0.0
            && self.penalty_factor <= 1.0
            && self.min_score >= 0.0
            && self.max_user_clicks > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("cf: alpha, top_n, max_user_clicks > 0; penalty in (0,1]; min_score >= 0".into()))
        }
    }

    /// Copy with `min_score` relaxed for the graph mode.
    pub fn for_mode(&self, graph: &GraphBuildConfig) -> Self {
        Self { min_score: graph.relax(self.min_score), ..*self }
    }
}

/// The user–item click bipartite graph with both adjacency directions.
#[derive(Debug, Clone, Default)]
pub struct UserItemClicks {
    items: Vec<String>,
    users: Vec<String>,
    user_items: Vec<Vec<u32>>,
    item_users: Vec<Vec<u32>>,
}

impl UserItemClicks {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut by_user: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for (u, i) in pairs {
            by_user.entry(u).or_default().insert(i);
        }
        let items: Vec<String> =
            by_user.values().flatten().copied().collect::<BTreeSet<_>>().into_iter().map(String::from).collect();
        let item_index: HashMap<&str, u32> = items.iter().enumerate().map(|(k, s)| (s.as_str(), k as u32)).collect();
        let mut item_users = vec![Vec::new(); items.len()];
        let mut user_items = Vec::with_capacity(by_user.len());
        for (u, set) in by_user.values().enumerate() {
            let list: Vec<u32> = set.iter().map(|i| item_index[i]).collect();
            for &i in &list {
                item_users[i as usize].push(u as u32);
            }
            user_items.push(list);
        }
        let users = by_user.keys().map(|s| s.to_string()).collect();
        Self { items, users, user_items, item_users }
    }

    /// Every click counts, with or without a product-page trigger.
    pub fn from_events(events: &[ClickEvent]) -> Self {
        Self::from_pairs(events.iter().map(|e| (e.user.as_str(), e.clicked.as_str())))
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn user_items(&self, user: usize) -> &[u32] {
        &self.user_items[user]
    }

    pub fn item_users(&self, item: usize) -> &[u32] {
        &self.item_users[item]
    }
}

/// Symmetric item-pair scores, stored once per unordered pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairScores(BTreeMap<(String, String), f64>);

impl PairScores {
    fn key(a: &str, b: &str) -> (String, String) {
        if a <= b {
            (a.to_string(), b.to_string())
        } else {
            (b.to_string(), a.to_string())
        }
    }

    pub fn add(&mut self, a: &str, b: &str, s: f64) {
        *self.0.entry(Self::key(a, b)).or_insert(0.0) += s;
    }

    pub fn get(&self, a: &str, b: &str) -> f64 {
        self.0.get(&Self::key(a, b)).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Unordered pairs `(a, b, score)` with `a < b`.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, f64)> {
        self.0.iter().map(|((a, b), s)| (a.as_str(), b.as_str(), *s))
    }

    /// Partners of every item, best first (ties by ascending id).
    pub fn ranked_partners(&self) -> BTreeMap<&str, Vec<(&str, f64)>> {
        let mut per: BTreeMap<&str, Vec<(&str, f64)>> = BTreeMap::new();
        for (a, b, s) in self.iter() {
            per.entry(a).or_default().push((b, s));
            per.entry(b).or_default().push((a, s));
        }
        for list in per.values_mut() {
            list.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(y.0)));
        }
        per
    }

    /// Drops pairs below `min_score`, then keeps a pair only if it is among the
    /// `top_n` partners of at least one of its items.
    pub fn prune(self, min_score: f64, top_n: usize) -> PairScores {
        let kept = PairScores(self.0.into_iter().filter(|(_, s)| *s >= min_score && *s > 0.0).collect());
        let mut keep: BTreeSet<(String, String)> = BTreeSet::new();
        for (item, partners) in kept.ranked_partners() {
            for (p, _) in partners.into_iter().take(top_n) {
                keep.insert(Self::key(item, p));
            }
        }
        PairScores(kept.0.into_iter().filter(|(k, _)| keep.contains(k)).collect())
    }
}

enum PairAccumulator {
    /// Upper triangle of an n × n matrix.
    Dense {
        n: usize,
        values: Vec<f64>,
    },
    Sparse(HashMap<(u32, u32), f64>),
}

impl PairAccumulator {
    const DENSE_LIMIT: usize = 4096;

    fn new(n: usize) -> Self {
        if n <= Self::DENSE_LIMIT {
            PairAccumulator::Dense { n, values: vec![0.0; n * n.saturating_sub(1) / 2] }
        } else {
            PairAccumulator::Sparse(HashMap::new())
        }
    }

    #[inline]
    fn add(&mut self, i: u32, j: u32, w: f64) {
        match self {
            PairAccumulator::Dense { n, values } => {
                let (i, j) = (i as usize, j as usize);
                values[i * (2 * *n - i - 1) / 2 + (j - i - 1)] += w;
            }
            PairAccumulator::Sparse(m) => *m.entry((i, j)).or_insert(0.0) += w,
        }
    }

    fn into_sorted(self) -> Vec<(u32, u32, f64)> {
        match self {
            PairAccumulator::Dense { n, values } => {
                let mut out = Vec::new();
                let mut k = 0;
                for i in 0..n {
                    for j in i + 1..n {
                        if values[k] != 0.0 {
                            out.push((i as u32, j as u32, values[k]));
                        }
                        k += 1;
                    }
                }
                out
            }
            PairAccumulator::Sparse(m) => {
                let mut out: Vec<_> = m.into_iter().map(|((i, j), w)| (i, j, w)).collect();
                out.sort_by_key(|e| (e.0, e.1));
                out
            }
        }
    }
}

/// Unpruned Swing scores. Contributions to each pair are summed in ascending
/// (u, v) user order, so results are reproducible bit for bit.
pub fn swing_scores_raw(clicks: &UserItemClicks, alpha: f64, max_user_clicks: usize) -> PairScores {
    let n_users = clicks.users.len();
    let active: Vec<bool> = clicks.user_items.iter().map(|l| l.len() <= max_user_clicks).collect();
    let mut acc = PairAccumulator::new(clicks.items.len());
    // Items shared with the current user, per later user; filled in ascending item order.
    let mut common: Vec<Vec<u32>> = vec![Vec::new(); n_users];
    let mut candidates = Vec::new();
    for u in 0..n_users {
        if !active[u] {
            continue;
        }
        candidates.clear();
        for &i in &clicks.user_items[u] {
            for &v in &clicks.item_users[i as usize] {
                let v = v as usize;
                if v > u && active[v] {
                    if common[v].is_empty() {
                        candidates.push(v);
                    }
                    common[v].push(i);
                }
            }
        }
        candidates.sort_unstable();
        for &v in &candidates {
            let shared = std::mem::take(&mut common[v]);
            if shared.len() >= 2 {
                let w = 1.0 / (alpha + shared.len() as f64);
                for a in 0..shared.len() {
                    for b in a + 1..shared.len() {
                        acc.add(shared[a], shared[b], w);
                    }
                }
            }
            common[v] = shared;
            common[v].clear();
        }
    }
    let mut scores = PairScores::default();
    for (i, j, w) in acc.into_sorted() {
        scores.0.insert((clicks.items[i as usize].clone(), clicks.items[j as usize].clone()), w);
    }
    scores
}

pub fn swing_scores(clicks: &UserItemClicks, cfg: &CfConfig) -> PairScores {
    swing_scores_raw(clicks, cfg.swing_alpha, cfg.max_user_clicks).prune(cfg.min_score, cfg.top_n_per_item)
}

/// Number of distinct (user, query) groups that clicked both items.
pub fn search_cf_scores(events: &[SearchEvent]) -> PairScores {
    let mut groups: BTreeMap<(&str, &str), BTreeSet<&str>> = BTreeMap::new();
    for e in events {
        groups.entry((e.user.as_str(), e.query.as_str())).or_default().insert(e.clicked.as_str());
    }
    let mut scores = PairScores::default();
    for items in groups.values() {
        let items: Vec<&str> = items.iter().copied().collect();
        for a in 0..items.len() {
            for b in a + 1..items.len() {
                scores.add(items[a], items[b], 1.0);
            }
        }
    }
    scores
}

/// Both directions of every scored pair, weighted `penalty × score` and floored at
/// `penalty × min_score`.
pub fn scores_to_edges(scores: &PairScores, cfg: &CfConfig, source: EdgeSource) -> Vec<WeightedEdge> {
    let floor = cfg.penalty_factor * cfg.min_score;
    let mut out = Vec::with_capacity(scores.len() * 2);
    for (a, b, s) in scores.iter() {
        if s <= 0.0 {
            continue;
        }
        let weight = (cfg.penalty_factor * s).max(floor);
        out.push(WeightedEdge { src: a.into(), dst: b.into(), weight, source });
        out.push(WeightedEdge { src: b.into(), dst: a.into(), weight, source });
    }
    out
}

/// Swing edges from `clicks` plus search co-click edges from `searches`, with
/// thresholds relaxed according to the graph mode.
pub fn supplementary_edges(
    clicks: &[ClickEvent],
    searches: &[SearchEvent],
    cfg: &CfConfig,
    graph: &GraphBuildConfig,
) -> Vec<WeightedEdge> {
    let cfg = cfg.for_mode(graph);
    let swing = swing_scores(&UserItemClicks::from_events(clicks), &cfg);
    let search = search_cf_scores(searches).prune(cfg.min_score, cfg.top_n_per_item);
    let mut edges = scores_to_edges(&swing, &cfg, EdgeSource::Swing);
    edges.extend(scores_to_edges(&search, &cfg, EdgeSource::SearchCf));
    edges
}
