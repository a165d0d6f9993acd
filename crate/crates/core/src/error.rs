use std::path::PathBuf;

use crate::citygraph::NodeId;

pub type Result<T, E = NavError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum NavError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid geo point ({lat}, {lon})")]
    InvalidPoint { lat: f64, lon: f64 },

    #[error("bearing undefined between coincident points")]
    CoincidentPoints,

    #[error("graph invariant violated: {}", .0.join("; "))]
    InvalidGraph(Vec<String>),

    #[error("unknown node {0}")]
    UnknownNode(NodeId),

    #[error("node {0} has no outgoing edges")]
    IsolatedNode(NodeId),

    #[error("destination {to} unreachable from {from}")]
    Unreachable { from: NodeId, to: NodeId },

    #[error("k = {k} exceeds node count {nodes}")]
    TooManyClusters { k: usize, nodes: usize },

    #[error("need at least two nonempty clusters, found {0}")]
    TooFewClusters(usize),

    #[error("invalid route: {0}")]
    InvalidRoute(String),

    #[error("invalid selection: {0}")]
    InvalidSelection(String),

    #[error("route interior has {available} candidates, need {needed}")]
    TooFewCandidates { available: usize, needed: usize },

    #[error("exact search over {0} subsets exceeds the enumeration limit")]
    InstanceTooLarge(u128),

    #[error("invalid objective weights: {0}")]
    InvalidWeights(String),

    #[error("empty token list")]
    EmptyInstruction,

    #[error("invalid instruction: {0}")]
    InvalidInstruction(String),

    #[error("attention already exhausted (eta = {eta}, segments = {segments})")]
    AttentionExhausted { eta: f64, segments: usize },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("invalid action distribution: {0}")]
    InvalidDistribution(String),

    #[error("fusion weights are both zero")]
    ZeroFusionWeights,

    #[error("episode already finished")]
    EpisodeFinished,

    #[error("the next step needs an action")]
    ActionRequired,

    #[error("unknown {kind} '{name}'")]
    UnknownName { kind: &'static str, name: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("world too small: {0}")]
    WorldTooSmall(String),

    #[error("no results to aggregate")]
    EmptyResults,

    #[error("replay mismatch: {0}")]
    ReplayMismatch(String),

    #[error("image encoding failed: {0}")]
    Image(String),
}

impl NavError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NavError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<serde_json::Error> for NavError {
    fn from(e: serde_json::Error) -> Self {
        NavError::Parse(e.to_string())
    }
}
