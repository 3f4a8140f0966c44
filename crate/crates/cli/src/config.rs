//! The declarative run configuration: one TOML file, every section optional.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use itemgraph_core::cf::CfConfig;
use itemgraph_core::embeddings::VectorEncoding;
use itemgraph_core::eval::EvalConfig;
use itemgraph_core::graph::{GraphBuildConfig, GraphMode};
use itemgraph_core::ingest::{SpamPolicy, SyntheticSpec};
use itemgraph_core::model::{AdamConfig, TrainConfig};
use itemgraph_core::pipeline::GraphPipelineConfig;
use itemgraph_core::sampler::SamplingConfig;
use itemgraph_core::tail::TailConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seeds synthetic generation, training and the evaluation split; overrides
    /// `synthetic.rng_seed`.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub embedding_encoding: VectorEncoding,
    pub inputs: InputsSection,
    pub synthetic: SyntheticSpec,
    pub ingest: SpamPolicy,
    pub graph: GraphSection,
    pub cf: CfConfig,
    pub sampler: SamplingConfig,
    pub train: TrainSection,
    pub tail: TailConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            out_dir: PathBuf::from("out"),
            embedding_encoding: VectorEncoding::Csv,
            inputs: InputsSection::default(),
            synthetic: SyntheticSpec::default(),
            ingest: SpamPolicy::default(),
            graph: GraphSection::default(),
            cf: CfConfig::default(),
            sampler: SamplingConfig::default(),
            train: TrainSection::default(),
            tail: TailConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Input logs. Unset paths default to the files `gen-synth` writes under `out_dir/data`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputsSection {
    pub clicks: Option<PathBuf>,
    pub searches: Option<PathBuf>,
    pub inference_clicks: Option<PathBuf>,
    pub inference_searches: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub future_clicks: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphSection {
    pub min_edge_users: u32,
    pub inference_divisor: f64,
    pub use_cf: bool,
    /// Also write the relaxed inference graph.
    pub build_inference: bool,
}

impl Default for GraphSection {
    fn default() -> Self {
        let g = GraphBuildConfig::default();
        Self {
            min_edge_users: g.min_edge_users,
            inference_divisor: g.inference_divisor,
            use_cf: true,
            build_inference: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub dim: usize,
    pub field_dim: usize,
    pub temperature: f64,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub inference_seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            dim: t.dim,
            field_dim: t.field_dim,
            temperature: t.temperature,
            adam: t.adam,
            batch_size: t.batch_size,
            epochs: t.epochs,
            inference_seed: t.inference_seed,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("config: reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("config: parsing {}", path.display()))
    }

    /// Applies the global seed and fills unset input paths, so the config echoed in
    /// manifests is the one actually used.
    pub fn resolve(&mut self) {
        self.synthetic.rng_seed = self.seed;
        let data = self.out_dir.join("data");
        let fill = |slot: &mut Option<PathBuf>, name: &str| {
            slot.get_or_insert_with(|| data.join(name));
        };
        let i = &mut self.inputs;
        fill(&mut i.clicks, "clicks.tsv");
        fill(&mut i.searches, "searches.tsv");
        fill(&mut i.inference_clicks, "inference_clicks.tsv");
        fill(&mut i.inference_searches, "inference_searches.tsv");
        fill(&mut i.features, "features.tsv");
        fill(&mut i.future_clicks, "future_clicks.tsv");
    }

    pub fn pipeline(&self) -> GraphPipelineConfig {
        GraphPipelineConfig {
            spam: self.ingest,
            graph: GraphBuildConfig {
                min_edge_users: self.graph.min_edge_users,
                mode: GraphMode::Training,
                inference_divisor: self.graph.inference_divisor,
            },
            cf: self.cf,
            use_cf: self.graph.use_cf,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            dim: t.dim,
            field_dim: t.field_dim,
            temperature: t.temperature,
            adam: t.adam,
            batch_size: t.batch_size,
            epochs: t.epochs,
            sampling: self.sampler,
            seed: self.seed,
            inference_seed: t.inference_seed,
        }
    }

    pub fn out(&self, rel: &str) -> PathBuf {
        self.out_dir.join(rel)
    }

    fn input(set: &Option<PathBuf>) -> PathBuf {
        set.clone().expect("resolve() fills every input path")
    }

    pub fn clicks(&self) -> PathBuf {
        Self::input(&self.inputs.clicks)
    }

    pub fn searches(&self) -> PathBuf {
        Self::input(&self.inputs.searches)
    }

    pub fn inference_clicks(&self) -> PathBuf {
        Self::input(&self.inputs.inference_clicks)
    }

    pub fn inference_searches(&self) -> PathBuf {
        Self::input(&self.inputs.inference_searches)
    }

    pub fn features(&self) -> PathBuf {
        Self::input(&self.inputs.features)
    }

    pub fn future_clicks(&self) -> PathBuf {
        Self::input(&self.inputs.future_clicks)
    }
}
