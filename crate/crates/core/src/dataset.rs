//! On-disk datasets.
//!
//! ```text
//! <dir>/graph.json                  road graph
//! <dir>/features.bin                float32 LE rows, one per node (optional)
//! <dir>/features.idx.json           {"dim": d, "nodes": [id, ...]} row order
//! <dir>/routes/<id>.json            route files
//! <dir>/instructions/<id>.json      instruction files, same ids as routes
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::citygraph::{CityGraph, NodeId};
use crate::error::{NavError, Result};
use crate::instruction::{HashEmbedder, InstructionRecord};
use crate::routegen::Route;

pub const DEFAULT_FEATURE_DIM: usize = 128;

/// Per-node observation features.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureTable {
    dim: usize,
    rows: BTreeMap<NodeId, Vec<f64>>,
    zeros: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FeatureIndex {
    dim: usize,
    nodes: Vec<u64>,
}

impl FeatureTable {
    pub fn new(dim: usize) -> Self {
        FeatureTable {
            dim,
            rows: BTreeMap::new(),
            zeros: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn insert(&mut self, node: NodeId, row: Vec<f64>) -> Result<()> {
        if row.len() != self.dim {
            return Err(NavError::DimensionMismatch {
                left: row.len(),
                right: self.dim,
            });
        }
        if row.iter().any(|x| !x.is_finite()) {
            return Err(NavError::InvalidConfig(format!("non-finite feature for node {node}")));
        }
        self.rows.insert(node, row);
        Ok(())
    }

    /// Row for `node`; nodes without imagery observe a zero vector.
    pub fn get(&self, node: NodeId) -> &[f64] {
        self.rows.get(&node).map(Vec::as_slice).unwrap_or(&self.zeros)
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.rows.contains_key(&node)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.rows.len() * self.dim * 4);
        for row in self.rows.values() {
            for &x in row {
                bytes.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        let bin = dir.join("features.bin");
        std::fs::write(&bin, bytes).map_err(|e| NavError::io(&bin, e))?;
        let idx = FeatureIndex {
            dim: self.dim,
            nodes: self.rows.keys().map(|n| n.0).collect(),
        };
        let idx_path = dir.join("features.idx.json");
        std::fs::write(&idx_path, serde_json::to_string(&idx)?).map_err(|e| NavError::io(&idx_path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let idx_path = dir.join("features.idx.json");
        let text = std::fs::read_to_string(&idx_path).map_err(|e| NavError::io(&idx_path, e))?;
        let idx: FeatureIndex = serde_json::from_str(&text)?;
        let bin = dir.join("features.bin");
        let bytes = std::fs::read(&bin).map_err(|e| NavError::io(&bin, e))?;
        if bytes.len() != idx.nodes.len() * idx.dim * 4 {
            return Err(NavError::Parse(format!(
                "features.bin holds {} bytes, index expects {} rows of {}",
                bytes.len(),
                idx.nodes.len(),
                idx.dim
            )));
        }
        let mut table = FeatureTable::new(idx.dim);
        let row_bytes = idx.dim * 4;
        for (i, &node) in idx.nodes.iter().enumerate() {
            let row = bytes[i * row_bytes..(i + 1) * row_bytes]
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                .collect();
            table.insert(NodeId(node), row)?;
        }
        Ok(table)
    }
}

/// Shared, read-only environment: graph, observation features, and the
/// embedder whose dimension matches the features.
#[derive(Debug, Clone)]
pub struct World {
    pub graph: CityGraph,
    pub features: FeatureTable,
    pub embedder: HashEmbedder,
}

impl World {
    pub fn new(graph: CityGraph, features: FeatureTable) -> Result<Self> {
        let dim = if features.dim() > 0 {
            features.dim()
        } else {
            DEFAULT_FEATURE_DIM
        };
        let features = if features.dim() == 0 {
            FeatureTable::new(dim)
        } else {
            features
        };
        Ok(World {
            graph,
            features,
            embedder: HashEmbedder::new(dim)?,
        })
    }
}

/// A route together with its instruction.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSpec {
    pub route: Route,
    pub instruction: InstructionRecord,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub id: String,
    pub world: Arc<World>,
    pub episodes: BTreeMap<String, EpisodeSpec>,
}

impl Dataset {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let graph = CityGraph::load(dir.join("graph.json"))?;
        let features = if dir.join("features.idx.json").exists() {
            FeatureTable::load(dir)?
        } else {
            FeatureTable::default()
        };
        let world = World::new(graph, features)?;

        let mut episodes = BTreeMap::new();
        for (id, route_path) in list_json(&dir.join("routes"))? {
            let route = Route::load(&world.graph, &route_path)?;
            let instr_path = dir.join("instructions").join(format!("{id}.json"));
            let instruction = InstructionRecord::load(&instr_path)?;
            check_correspondence(&route, &instruction)?;
            episodes.insert(id, EpisodeSpec { route, instruction });
        }

        let id = dir
            .file_name()
            .and_then(|s| s.to_str())
            .unwrap_or("dataset")
            .to_string();
        Ok(Dataset {
            id,
            world: Arc::new(world),
            episodes,
        })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for sub in ["routes", "instructions"] {
            let p = dir.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| NavError::io(&p, e))?;
        }
        self.world.graph.save(dir.join("graph.json"))?;
        if !self.world.features.is_empty() {
            self.world.features.save(dir)?;
        }
        for (id, ep) in &self.episodes {
            ep.route.save(dir.join("routes").join(format!("{id}.json")))?;
            ep.instruction
                .save(dir.join("instructions").join(format!("{id}.json")))?;
        }
        Ok(())
    }

    /// Datasets under `root`: `root` itself if it holds a graph, otherwise
    /// each immediate subdirectory that does.
    pub fn discover(root: impl AsRef<Path>) -> Result<Vec<Dataset>> {
        let root = root.as_ref();
        if root.join("graph.json").exists() {
            return Ok(vec![Dataset::load(root)?]);
        }
        let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
            .map_err(|e| NavError::io(root, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("graph.json").exists())
            .collect();
        dirs.sort();
        dirs.iter().map(Dataset::load).collect()
    }
}

/// Landmark ids in the instruction must be the route's landmarks after the source.
pub fn check_correspondence(route: &Route, instruction: &InstructionRecord) -> Result<()> {
    if instruction.landmark_node_ids.is_empty() {
        return Ok(());
    }
    if instruction.landmark_node_ids != route.targets() {
        return Err(NavError::InvalidInstruction(format!(
            "landmark ids {:?} do not match route landmarks {:?}",
            instruction.landmark_node_ids,
            route.targets()
        )));
    }
    Ok(())
}

/// `(stem, path)` of every `*.json` file in `dir`, sorted; empty if `dir` is missing.
pub fn list_json(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut out: Vec<(String, PathBuf)> = std::fs::read_dir(dir)
        .map_err(|e| NavError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .filter_map(|p| Some((p.file_stem()?.to_str()?.to_string(), p)))
        .collect();
    out.sort();
    Ok(out)
}
