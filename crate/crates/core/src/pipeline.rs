//! Log-to-graph chaining shared by the command line and the tests.

use serde::{Deserialize, Serialize};

use crate::cf::{supplementary_edges, CfConfig};
use crate::error::Result;
use crate::features::NodeFeatureStore;
use crate::graph::{
    assemble_graph, build_direct_edges, graph_stats, GraphBuildConfig, GraphMode, GraphStats, ItemGraph,
};
use crate::ingest::{filter_spam, ClickEvent, SearchEvent, SpamPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphPipelineConfig {
    pub spam: SpamPolicy,
    pub graph: GraphBuildConfig,
    pub cf: CfConfig,
    /// Add Swing and search co-click edges to the direct click edges.
    pub use_cf: bool,
}

impl Default for GraphPipelineConfig {
    fn default() -> Self {
        Self { spam: SpamPolicy::default(), graph: GraphBuildConfig::default(), cf: CfConfig::default(), use_cf: true }
    }
}

impl GraphPipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.spam.validate()?;
        self.graph.validate()?;
        self.cf.validate()
    }
}

#[derive(Debug, Clone)]
pub struct BuiltGraph {
    pub graph: ItemGraph,
    pub stats: GraphStats,
    /// Click events removed by the spam filter.
    pub spam_removed: usize,
    pub dropped_edges: usize,
}

/// Spam filter, direct click edges, optional CF edges, assembly.
pub fn build_graph(
    clicks: &[ClickEvent],
    searches: &[SearchEvent],
    features: &NodeFeatureStore,
    cfg: &GraphPipelineConfig,
    mode: GraphMode,
) -> Result<BuiltGraph> {
    cfg.validate()?;
    let graph_cfg = GraphBuildConfig { mode, ..cfg.graph };
    let clean = filter_spam(clicks, &cfg.spam);
    let direct = build_direct_edges(&clean, &graph_cfg);
    let cf = if cfg.use_cf { supplementary_edges(&clean, searches, &cfg.cf, &graph_cfg) } else { Vec::new() };
    let assembled = assemble_graph(&direct, &cf, features)?;
    Ok(BuiltGraph {
        stats: graph_stats(&assembled.graph),
        graph: assembled.graph,
        spam_removed: clicks.len() - clean.len(),
        dropped_edges: assembled.dropped_edges,
    })
}
