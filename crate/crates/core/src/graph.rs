//! The homogeneous directed item graph.
//!
//! An edge `B → A` means "from the page of B, users went to A". Its weight is on a
//! distinct-user scale and keeps the contribution of each edge source separately.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::NodeFeatureStore;
use crate::ingest::ClickEvent;
use crate::io::{open_lines, write_atomic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeSource {
    Direct,
    Swing,
    SearchCf,
}

impl EdgeSource {
    pub const ALL: [EdgeSource; 3] = [EdgeSource::Direct, EdgeSource::Swing, EdgeSource::SearchCf];

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeSource::Direct => "direct",
            EdgeSource::Swing => "swing",
            EdgeSource::SearchCf => "search_cf",
        }
    }
}

/// Edge weight split by source. `weight` is always the sum of the components.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EdgeAttr {
    weight: f64,
    components: [f64; 3],
}

impl EdgeAttr {
    pub fn new(direct: f64, swing: f64, search_cf: f64) -> Self {
        let components = [direct, swing, search_cf];
        debug_assert!(components.iter().all(|c| *c >= 0.0));
        Self { weight: direct + swing + search_cf, components }
    }

    pub fn single(source: EdgeSource, weight: f64) -> Self {
        let mut components = [0.0; 3];
        components[source as usize] = weight;
        Self::new(components[0], components[1], components[2])
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn component(&self, source: EdgeSource) -> f64 {
        self.components[source as usize]
    }

    pub fn add(&mut self, source: EdgeSource, w: f64) {
        self.components[source as usize] += w;
        self.weight = self.components.iter().sum();
    }

    /// Sources with a non-zero contribution.
    pub fn sources(&self) -> impl Iterator<Item = EdgeSource> + '_ {
        EdgeSource::ALL.into_iter().filter(|s| self.component(*s) > 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphMode {
    Training,
    Inference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphBuildConfig {
    /// Direct edges supported by fewer distinct users are dropped.
    pub min_edge_users: u32,
    pub mode: GraphMode,
    /// Inference-mode thresholds are the training ones divided by this (floored, min 1).
    pub inference_divisor: f64,
}

impl Default for GraphBuildConfig {
    fn default() -> Self {
        Self { min_edge_users: 2, mode: GraphMode::Training, inference_divisor: 2.0 }
    }
}

impl GraphBuildConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_edge_users == 0 {
            return Err(Error::Config("min_edge_users must be >= 1".into()));
        }
        if self.inference_divisor.is_nan() || self.inference_divisor < 1.0 {
            return Err(Error::Config("inference_divisor must be >= 1".into()));
        }
        Ok(())
    }

    pub fn inference(self) -> Self {
        Self { mode: GraphMode::Inference, ..self }
    }

    /// Relaxation applied to any threshold in the current mode.
    pub fn relax(&self, threshold: f64) -> f64 {
        match self.mode {
            GraphMode::Training => threshold,
            GraphMode::Inference => threshold / self.inference_divisor,
        }
    }

    pub fn effective_min_edge_users(&self) -> u32 {
        (self.relax(self.min_edge_users as f64).floor() as u32).max(1)
    }
}

/// Distinct-user counts per ordered (trigger, clicked) pair, after weak-edge pruning.
pub type DirectEdges = BTreeMap<(String, String), u32>;

pub fn build_direct_edges(events: &[ClickEvent], cfg: &GraphBuildConfig) -> DirectEdges {
    let mut users: HashMap<(&str, &str), HashSet<&str>> = HashMap::new();
    for e in events {
        let Some(trigger) = e.trigger.as_deref() else { continue };
        if trigger == e.clicked {
            continue;
        }
        users.entry((trigger, e.clicked.as_str())).or_default().insert(e.user.as_str());
    }
    let min = cfg.effective_min_edge_users() as usize;
    users
        .into_iter()
        .filter(|(_, u)| u.len() >= min)
        .map(|((s, d), u)| ((s.to_string(), d.to_string()), u.len() as u32))
        .collect()
}

/// A directed edge from one of the supplementary sources.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedEdge {
    pub src: String,
    pub dst: String,
    pub weight: f64,
    pub source: EdgeSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItemGraph {
    items: Vec<String>,
    index: HashMap<String, u32>,
    out_offsets: Vec<usize>,
    out_dst: Vec<u32>,
    out_attr: Vec<EdgeAttr>,
    in_offsets: Vec<usize>,
    in_src: Vec<u32>,
    in_w: Vec<f64>,
    out_weight: Vec<f64>,
    in_weight: Vec<f64>,
}

impl ItemGraph {
    /// Builds a graph over `nodes` plus every edge endpoint. Self-loops and
    /// non-positive weights are dropped. Node indices follow item-id order.
    pub fn from_edges(
        nodes: impl IntoIterator<Item = String>,
        edges: impl IntoIterator<Item = ((String, String), EdgeAttr)>,
    ) -> Self {
        let edges: Vec<_> = edges.into_iter().filter(|((s, d), a)| s != d && a.weight() > 0.0).collect();
        let mut names: BTreeSet<String> = nodes.into_iter().collect();
        for ((s, d), _) in &edges {
            names.insert(s.clone());
            names.insert(d.clone());
        }
        let items: Vec<String> = names.into_iter().collect();
        let index: HashMap<String, u32> = items.iter().enumerate().map(|(i, s)| (s.clone(), i as u32)).collect();
        let mut indexed: Vec<(u32, u32, EdgeAttr)> =
            edges.into_iter().map(|((s, d), a)| (index[&s], index[&d], a)).collect();
        indexed.sort_by_key(|e| (e.0, e.1));
        indexed.dedup_by(|b, a| {
            if (a.0, a.1) == (b.0, b.1) {
                for s in EdgeSource::ALL {
                    a.2.add(s, b.2.component(s));
                }
                true
            } else {
                false
            }
        });
        Self::from_indexed(items, index, indexed)
    }

    fn from_indexed(items: Vec<String>, index: HashMap<String, u32>, edges: Vec<(u32, u32, EdgeAttr)>) -> Self {
        let n = items.len();
        let mut out_offsets = vec![0usize; n + 1];
        let mut in_offsets = vec![0usize; n + 1];
        for &(s, d, _) in &edges {
            out_offsets[s as usize + 1] += 1;
            in_offsets[d as usize + 1] += 1;
        }
        for i in 0..n {
            out_offsets[i + 1] += out_offsets[i];
            in_offsets[i + 1] += in_offsets[i];
        }
        let mut out_weight = vec![0.0; n];
        let mut in_weight = vec![0.0; n];
        let mut in_src = vec![0u32; edges.len()];
        let mut in_w = vec![0.0; edges.len()];
        let mut fill = in_offsets.clone();
        // Edges are sorted by (src, dst), so each in-list comes out sorted by src.
        for &(s, d, a) in &edges {
            out_weight[s as usize] += a.weight();
            in_weight[d as usize] += a.weight();
            let slot = fill[d as usize];
            in_src[slot] = s;
            in_w[slot] = a.weight();
            fill[d as usize] += 1;
        }
        ItemGraph {
            items,
            index,
            out_offsets,
            out_dst: edges.iter().map(|e| e.1).collect(),
            out_attr: edges.iter().map(|e| e.2).collect(),
            in_offsets,
            in_src,
            in_w,
            out_weight,
            in_weight,
        }
    }

    pub fn node_count(&self) -> usize {
        self.items.len()
    }

    pub fn edge_count(&self) -> usize {
        self.out_dst.len()
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn item(&self, node: u32) -> &str {
        &self.items[node as usize]
    }

    pub fn node(&self, item: &str) -> Option<u32> {
        self.index.get(item).copied()
    }

    pub fn out_neighbors(&self, node: u32) -> &[u32] {
        let n = node as usize;
        &self.out_dst[self.out_offsets[n]..self.out_offsets[n + 1]]
    }

    pub fn out_attrs(&self, node: u32) -> &[EdgeAttr] {
        let n = node as usize;
        &self.out_attr[self.out_offsets[n]..self.out_offsets[n + 1]]
    }

    /// In-neighbors (sources) of `node`, sorted, with their edge weights.
    pub fn in_neighbors(&self, node: u32) -> (&[u32], &[f64]) {
        let n = node as usize;
        let r = self.in_offsets[n]..self.in_offsets[n + 1];
        (&self.in_src[r.clone()], &self.in_w[r])
    }

    pub fn out_degree(&self, node: u32) -> usize {
        self.out_neighbors(node).len()
    }

    pub fn in_degree(&self, node: u32) -> usize {
        self.in_neighbors(node).0.len()
    }

    pub fn out_weight(&self, node: u32) -> f64 {
        self.out_weight[node as usize]
    }

    pub fn in_weight(&self, node: u32) -> f64 {
        self.in_weight[node as usize]
    }

    pub fn edge(&self, src: u32, dst: u32) -> Option<&EdgeAttr> {
        let nb = self.out_neighbors(src);
        nb.binary_search(&dst).ok().map(|i| &self.out_attrs(src)[i])
    }

    /// All edges in (src, dst) order.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32, &EdgeAttr)> + '_ {
        (0..self.node_count() as u32)
            .flat_map(move |s| self.out_neighbors(s).iter().zip(self.out_attrs(s)).map(move |(&d, a)| (s, d, a)))
    }

    /// Same node set with the listed (src, dst) edges removed.
    pub fn without_edges(&self, removed: &HashSet<(u32, u32)>) -> ItemGraph {
        let edges = self.edges().filter(|(s, d, _)| !removed.contains(&(*s, *d))).map(|(s, d, a)| (s, d, *a)).collect();
        Self::from_indexed(self.items.clone(), self.index.clone(), edges)
    }
}

/// Result of merging direct and supplementary edges.
#[derive(Debug, Clone)]
pub struct Assembled {
    pub graph: ItemGraph,
    /// Edges dropped because an endpoint has no feature row.
    pub dropped_edges: usize,
}

pub fn assemble_graph(
    direct: &DirectEdges,
    cf_edges: &[WeightedEdge],
    features: &NodeFeatureStore,
) -> Result<Assembled> {
    let mut merged: BTreeMap<(String, String), EdgeAttr> = BTreeMap::new();
    let mut dropped = 0usize;
    let candidates = direct
        .iter()
        .map(|((s, d), &w)| (s, d, EdgeSource::Direct, w as f64))
        .chain(cf_edges.iter().map(|e| (&e.src, &e.dst, e.source, e.weight)));
    for (s, d, source, w) in candidates {
        if s == d || w <= 0.0 {
            continue;
        }
        if !features.contains(s) || !features.contains(d) {
            dropped += 1;
            continue;
        }
        merged.entry((s.clone(), d.clone())).or_default().add(source, w);
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} edges with endpoints lacking features");
    }
    if merged.is_empty() {
        return Err(Error::EmptyGraph("no edges survived assembly".into()));
    }
    Ok(Assembled { graph: ItemGraph::from_edges(std::iter::empty(), merged), dropped_edges: dropped })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub edges: usize,
    /// Edges with a non-zero component from each source.
    pub edges_by_source: BTreeMap<EdgeSource, usize>,
    pub total_weight: f64,
    /// Out-degree → number of nodes.
    pub out_degree_histogram: BTreeMap<usize, usize>,
}

pub fn graph_stats(g: &ItemGraph) -> GraphStats {
    let mut edges_by_source: BTreeMap<EdgeSource, usize> = EdgeSource::ALL.iter().map(|s| (*s, 0)).collect();
    let mut total_weight = 0.0;
    for (_, _, a) in g.edges() {
        for s in a.sources() {
            *edges_by_source.get_mut(&s).unwrap() += 1;
        }
        total_weight += a.weight();
    }
    let mut out_degree_histogram = BTreeMap::new();
    for n in 0..g.node_count() as u32 {
        *out_degree_histogram.entry(g.out_degree(n)).or_insert(0) += 1;
    }
    GraphStats { nodes: g.node_count(), edges: g.edge_count(), edges_by_source, total_weight, out_degree_histogram }
}

const GRAPH_HEADER: &str = "src_item\tdst_item\tweight\tdirect_w\tswing_w\tsearchcf_w";

/// Writes the edge TSV. Nodes without any edge are declared on `#node` lines.
pub fn write_graph(path: &Path, g: &ItemGraph) -> Result<()> {
    write_atomic(path, |w| {
        writeln!(w, "{GRAPH_HEADER}")?;
        for n in 0..g.node_count() as u32 {
            if g.out_degree(n) == 0 && g.in_degree(n) == 0 {
                writeln!(w, "#node\t{}", g.item(n))?;
            }
        }
        for (s, d, a) in g.edges() {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}",
                g.item(s),
                g.item(d),
                a.weight(),
                a.component(EdgeSource::Direct),
                a.component(EdgeSource::Swing),
                a.component(EdgeSource::SearchCf)
            )?;
        }
        Ok(())
    })
}

pub fn read_graph(path: &Path) -> Result<ItemGraph> {
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    for (lineno, line) in open_lines(path)?.enumerate() {
        let line = line?;
        if line.is_empty() || line == GRAPH_HEADER {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols[0] == "#node" && cols.len() == 2 {
            nodes.push(cols[1].to_string());
            continue;
        }
        let bad = || Error::Format(format!("{}:{}: malformed edge row", path.display(), lineno + 1));
        if cols.len() != 6 {
            return Err(bad());
        }
        let num = |i: usize| cols[i].parse::<f64>().map_err(|_| bad());
        let attr = EdgeAttr::new(num(3)?, num(4)?, num(5)?);
        edges.push(((cols[0].to_string(), cols[1].to_string()), attr));
    }
    Ok(ItemGraph::from_edges(nodes, edges))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{FeatureRow, FeatureSchema};

    fn ev(u: &str, t: &str, c: &str) -> ClickEvent {
        ClickEvent { user: u.into(), trigger: Some(t.into()), clicked: c.into(), timestamp: 0 }
    }

    fn store(items: &[&str]) -> NodeFeatureStore {
        let rows = items
            .iter()
            .map(|i| FeatureRow {
                item: i.to_string(),
                sparse: vec!["c".into(), "b".into(), "s".into()],
                dense: vec![1.0, 1.0],
                pretrained: None,
            })
            .collect();
        NodeFeatureStore::from_rows(FeatureSchema::default(), rows).unwrap()
    }

    fn cfg(min: u32) -> GraphBuildConfig {
        GraphBuildConfig { min_edge_users: min, ..Default::default() }
    }

    #[test]
    fn direct_edges_count_distinct_users() {
        let evs = vec![ev("u1", "B", "A"), ev("u2", "B", "A"), ev("u3", "B", "A")];
        let e = build_direct_edges(&evs, &cfg(1));
        assert_eq!(e[&("B".into(), "A".into())], 3);

        let evs: Vec<_> = (0..10).map(|_| ev("u1", "B", "A")).collect();
        let e = build_direct_edges(&evs, &cfg(1));
        assert_eq!(e[&("B".into(), "A".into())], 1);
        assert!(build_direct_edges(&evs, &cfg(2)).is_empty());
    }

    #[test]
    fn inference_mode_relaxes_threshold() {
        let c = GraphBuildConfig { min_edge_users: 5, ..Default::default() };
        assert_eq!(c.effective_min_edge_users(), 5);
        assert_eq!(c.inference().effective_min_edge_users(), 2);
        assert_eq!(cfg(1).inference().effective_min_edge_users(), 1);
        assert!(GraphBuildConfig { inference_divisor: 0.5, ..c }.validate().is_err());
    }

    #[test]
    fn assembly_merges_by_sum_and_drops_featureless() {
        let mut direct = DirectEdges::new();
        direct.insert(("B".into(), "A".into()), 3);
        let cf = vec![
            WeightedEdge { src: "B".into(), dst: "A".into(), weight: 2.0, source: EdgeSource::Swing },
            WeightedEdge { src: "B".into(), dst: "Z".into(), weight: 2.0, source: EdgeSource::Swing },
        ];
        let out = assemble_graph(&direct, &cf, &store(&["A", "B"])).unwrap();
        assert_eq!(out.dropped_edges, 1);
        let g = out.graph;
        let a = g.edge(g.node("B").unwrap(), g.node("A").unwrap()).unwrap();
        assert_eq!(a.weight(), 5.0);
        assert_eq!((a.component(EdgeSource::Direct), a.component(EdgeSource::Swing)), (3.0, 2.0));
        assert_eq!(g.edge_count(), 1);

        assert!(matches!(assemble_graph(&DirectEdges::new(), &[], &store(&["A"])), Err(Error::EmptyGraph(_))));
    }

    #[test]
    fn triangle_stats() {
        let mut direct = DirectEdges::new();
        for (s, d) in [("A", "B"), ("B", "C"), ("C", "A")] {
            direct.insert((s.into(), d.into()), 1);
        }
        let g = assemble_graph(&direct, &[], &store(&["A", "B", "C"])).unwrap().graph;
        let st = graph_stats(&g);
        assert_eq!((st.nodes, st.edges), (3, 3));
        assert_eq!(st.edges_by_source[&EdgeSource::Direct], 3);
        assert_eq!(st.edges_by_source[&EdgeSource::Swing], 0);
        assert_eq!(st.edges_by_source[&EdgeSource::SearchCf], 0);
        assert_eq!(st.out_degree_histogram[&1], 3);
        assert_eq!(g.in_degree(g.node("A").unwrap()), 1);
    }

    #[test]
    fn serialization_is_identity_including_isolated_nodes() {
        let edges = vec![
            (("a".to_string(), "b".to_string()), EdgeAttr::new(2.0, 1.0 / 3.0, 0.0)),
            (("b".to_string(), "c".to_string()), EdgeAttr::new(0.0, 0.0, 0.5)),
        ];
        let g = ItemGraph::from_edges(vec!["lonely".to_string()], edges);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.tsv");
        write_graph(&p, &g).unwrap();
        assert_eq!(read_graph(&p).unwrap(), g);
        let first = std::fs::read(&p).unwrap();
        write_graph(&p, &read_graph(&p).unwrap()).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), first);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn direct_weights_match_recount(raw in prop::collection::vec((0u8..6, 0u8..5, 0u8..5), 0..300), min in 1u32..4) {
                let evs: Vec<ClickEvent> = raw.iter().map(|(u, t, c)| ev(&format!("u{u}"), &format!("i{t}"), &format!("i{c}"))).collect();
                let got = build_direct_edges(&evs, &cfg(min));
                for t in 0..5 {
                    for c in 0..5 {
                        let (ts, cs) = (format!("i{t}"), format!("i{c}"));
                        let mut users: Vec<&str> = evs.iter()
                            .filter(|e| e.trigger.as_deref() == Some(ts.as_str()) && e.clicked == cs)
                            .map(|e| e.user.as_str()).collect();
                        users.sort();
                        users.dedup();
                        let expect = (t != c && users.len() >= min as usize).then_some(users.len() as u32);
                        prop_assert_eq!(got.get(&(ts, cs)).copied(), expect);
                    }
                }
            }

            #[test]
            fn weight_is_component_sum_and_no_self_loops(raw in prop::collection::vec((0u8..6, 0u8..6, 0u8..3, 1u32..5), 1..60)) {
                let edges: Vec<_> = raw.iter().map(|(s, d, k, w)| {
                    ((format!("n{s}"), format!("n{d}")), EdgeAttr::single(EdgeSource::ALL[*k as usize], *w as f64 * 0.5))
                }).collect();
                let g = ItemGraph::from_edges(std::iter::empty(), edges);
                for (s, d, a) in g.edges() {
                    prop_assert!(s != d);
                    let sum: f64 = EdgeSource::ALL.iter().map(|x| a.component(*x)).sum();
                    prop_assert!((a.weight() - sum).abs() < 1e-12);
                    prop_assert!(a.weight() > 0.0);
                }
                let out_total: f64 = (0..g.node_count() as u32).map(|n| g.out_weight(n)).sum();
                let in_total: f64 = (0..g.node_count() as u32).map(|n| g.in_weight(n)).sum();
                prop_assert!((out_total - in_total).abs() < 1e-9);
            }
        }
    }
}
