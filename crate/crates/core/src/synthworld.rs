//! Synthetic grid cities with tagged buildings, template instructions and
//! known landmark correspondences.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::citygraph::{normalize_bearing, CityGraph, EdgeRecord, GeoPoint, NodeId, NodeRecord, EARTH_RADIUS_M};
use crate::dataset::{Dataset, EpisodeSpec, FeatureTable, World};
use crate::error::{NavError, Result};
use crate::instruction::{HashEmbedder, InstructionRecord, SegmentPair, SegmentedInstruction, Token, TokenClass};
use crate::landmarks::{select_greedy, HashScorer, ObjectiveWeights};
use crate::routegen::{cluster_nodes, sample_endpoints, shortest_route, ClusterAssignment, Route};
use crate::util::{derive_seed, norm};

const COLORS: &[&str] = &[
    "red", "blue", "green", "yellow", "orange", "purple", "white", "black", "grey", "brown",
    "pink", "golden",
];
const KINDS: &[&str] = &[
    "bank", "bakery", "church", "pharmacy", "hotel", "cinema", "school", "library", "museum",
    "theater", "diner", "garage",
];

/// Weight of the tag direction in a node feature; the rest is noise.
const TAG_WEIGHT: f64 = 0.8;
const NOISE_WEIGHT: f64 = 0.6;
/// Consecutive edges within this many degrees of each other form one leg.
const LEG_TOLERANCE_DEG: f64 = 20.0;
const MAX_ATTEMPTS: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldSpec {
    pub seed: u64,
    pub rows: usize,
    pub cols: usize,
    pub spacing_m: f64,
    /// South-west corner of the grid.
    pub origin: GeoPoint,
    pub vocab_size: usize,
    pub feature_dim: usize,
    /// Clusters used for endpoint sampling.
    pub clusters: usize,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            seed: 0,
            rows: 10,
            cols: 10,
            spacing_m: 100.0,
            origin: GeoPoint {
                lat: 40.7484,
                lon: -73.9857,
            },
            vocab_size: 40,
            feature_dim: 64,
            clusters: 5,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rows < 2 || self.cols < 2 {
            return Err(NavError::InvalidConfig(format!(
                "grid must be at least 2x2, got {}x{}",
                self.rows, self.cols
            )));
        }
        if !(self.spacing_m.is_finite() && self.spacing_m > 0.0) {
            return Err(NavError::InvalidConfig(format!("spacing {}", self.spacing_m)));
        }
        if !self.origin.is_valid() || self.origin.lat.abs() > 80.0 {
            return Err(NavError::InvalidConfig("origin must be a valid point below 80° latitude".into()));
        }
        if self.vocab_size == 0 || self.feature_dim == 0 {
            return Err(NavError::InvalidConfig("vocabulary and feature dimension must be positive".into()));
        }
        if self.clusters < 2 {
            return Err(NavError::InvalidConfig("need at least two clusters".into()));
        }
        Ok(())
    }
}

/// Building name for tag `i`, e.g. `red-bank`.
pub fn tag_word(i: usize) -> String {
    let base = format!("{}-{}", COLORS[i % COLORS.len()], KINDS[(i / COLORS.len()) % KINDS.len()]);
    let round = i / (COLORS.len() * KINDS.len());
    if round == 0 {
        base
    } else {
        format!("{base}-{round}")
    }
}

#[derive(Debug, Clone)]
pub struct SynthWorld {
    pub spec: WorldSpec,
    pub world: Arc<World>,
    /// Tag index of the building at each node.
    pub tags: BTreeMap<NodeId, usize>,
    pub clusters: ClusterAssignment,
}

impl SynthWorld {
    pub fn tag_of(&self, node: NodeId) -> String {
        tag_word(self.tags.get(&node).copied().unwrap_or(0))
    }
}

/// 4-connected grid; node `r * cols + c` sits `r` rows north and `c` columns
/// east of the origin.
pub fn generate_world(spec: &WorldSpec) -> Result<SynthWorld> {
    spec.validate()?;
    let dlat = (spec.spacing_m / EARTH_RADIUS_M).to_degrees();
    let dlon = dlat / spec.origin.lat.to_radians().cos();
    let id = |r: usize, c: usize| (r * spec.cols + c) as u64;

    let mut nodes = Vec::with_capacity(spec.rows * spec.cols);
    for r in 0..spec.rows {
        for c in 0..spec.cols {
            nodes.push(NodeRecord {
                id: id(r, c),
                lat: spec.origin.lat + r as f64 * dlat,
                lon: spec.origin.lon + c as f64 * dlon,
                pano: None,
            });
        }
    }
    let mut edges = Vec::new();
    let mut link = |a: u64, b: u64| {
        edges.push(EdgeRecord { from: a, to: b, bearing: None, length: None });
        edges.push(EdgeRecord { from: b, to: a, bearing: None, length: None });
    };
    for r in 0..spec.rows {
        for c in 0..spec.cols {
            if c + 1 < spec.cols {
                link(id(r, c), id(r, c + 1));
            }
            if r + 1 < spec.rows {
                link(id(r, c), id(r + 1, c));
            }
        }
    }
    let graph = CityGraph::from_records(nodes, edges)?;

    let embedder = HashEmbedder::new(spec.feature_dim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut tags = BTreeMap::new();
    let mut features = FeatureTable::new(spec.feature_dim);
    for node in graph.node_ids() {
        let tag = rng.random_range(0..spec.vocab_size);
        let tag_vec = embedder.embed_words([tag_word(tag).as_str()]);
        let noise: Vec<f64> = (0..spec.feature_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let noise_norm = norm(&noise).max(f64::MIN_POSITIVE);
        let mut row: Vec<f64> = tag_vec
            .iter()
            .zip(&noise)
            .map(|(t, n)| TAG_WEIGHT * t + NOISE_WEIGHT * n / noise_norm)
            .collect();
        let n = norm(&row);
        // stored as float32 on disk; keep the in-memory copy identical
        row.iter_mut().for_each(|x| *x = f64::from((*x / n) as f32));
        features.insert(node, row)?;
        tags.insert(node, tag);
    }

    let clusters = cluster_nodes(&graph, spec.clusters, spec.seed)?;
    Ok(SynthWorld {
        spec: *spec,
        world: Arc::new(World::new(graph, features)?),
        tags,
        clusters,
    })
}

/// A route with `difficulty` segment pairs: `difficulty - 1` mined
/// intermediate landmarks plus the destination.
pub fn generate_episode(sw: &SynthWorld, difficulty: usize, seed: u64) -> Result<EpisodeSpec> {
    if !(1..=4).contains(&difficulty) {
        return Err(NavError::InvalidConfig(format!("difficulty {difficulty} outside 1..=4")));
    }
    let graph = &sw.world.graph;
    let intersections = graph.intersections();
    for attempt in 0..MAX_ATTEMPTS {
        let s = derive_seed(seed, attempt);
        let (src, dst) = sample_endpoints(&sw.clusters, s)?;
        let mut route = shortest_route(graph, src, dst)?;
        let interior = route.node_ids().len().saturating_sub(2);
        if interior < difficulty - 1 {
            continue;
        }
        let mut landmarks = vec![src];
        if difficulty > 1 {
            let weights = ObjectiveWeights {
                l: difficulty - 1,
                ..Default::default()
            };
            let sel = select_greedy(&route, &weights, &HashScorer { salt: s }, &intersections)?;
            landmarks.extend(sel.node_ids);
        }
        landmarks.push(dst);
        route.set_landmarks(landmarks)?;
        let instruction = describe_route(sw, &route)?;
        return Ok(EpisodeSpec { route, instruction });
    }
    Err(NavError::WorldTooSmall(format!(
        "no route with {} interior nodes after {MAX_ATTEMPTS} endpoint draws",
        difficulty - 1
    )))
}

/// Template instruction for a route with landmarks: per landmark,
/// "pass the <tag> building" then "go <turn> for <n> blocks" legs for the
/// sub-route leading to it.
pub fn describe_route(sw: &SynthWorld, route: &Route) -> Result<InstructionRecord> {
    let graph = &sw.world.graph;
    let mut pairs = Vec::new();
    let mut heading: Option<f64> = None;
    for (sub, &target) in route.sub_routes().into_iter().zip(route.targets()) {
        let mut bearings = Vec::with_capacity(sub.len().saturating_sub(1));
        for w in sub.windows(2) {
            let e = graph
                .edge(w[0], w[1])
                .ok_or_else(|| NavError::InvalidRoute(format!("no edge {}->{}", w[0], w[1])))?;
            bearings.push(e.bearing);
        }
        let landmark = ["pass", "the", sw.tag_of(target).as_str(), "building"]
            .iter()
            .map(|w| Token::new(*w, TokenClass::Landmark))
            .collect();
        let mut direction = Vec::new();
        for (turn, blocks, exit) in legs(&bearings, heading.or(bearings.first().copied())) {
            let unit = if blocks == 1 { "block" } else { "blocks" };
            for w in ["go", turn, "for", &blocks.to_string(), unit] {
                direction.push(Token::new(w, TokenClass::Direction));
            }
            heading = Some(exit);
        }
        pairs.push(SegmentPair { landmark, direction });
    }
    Ok(InstructionRecord {
        instruction: SegmentedInstruction::from_pairs(pairs)?,
        landmark_node_ids: route.targets().to_vec(),
    })
}

/// Splits a bearing sequence into straight legs: (turn word relative to the
/// incoming heading, edge count, final bearing).
fn legs(bearings: &[f64], mut heading: Option<f64>) -> Vec<(&'static str, usize, f64)> {
    let mut out: Vec<(&'static str, usize, f64)> = Vec::new();
    let mut leg_start = f64::NAN;
    for &b in bearings {
        let continues = out.last().is_some() && crate::citygraph::angular_distance(b, leg_start) < LEG_TOLERANCE_DEG;
        if continues {
            let last = out.last_mut().unwrap();
            last.1 += 1;
            last.2 = b;
        } else {
            let turn = turn_word(b - heading.unwrap_or(b));
            out.push((turn, 1, b));
            leg_start = b;
        }
        heading = Some(b);
    }
    out
}

fn turn_word(relative: f64) -> &'static str {
    let a = normalize_bearing(relative);
    if !(45.0..315.0).contains(&a) {
        "straight"
    } else if a < 135.0 {
        "right"
    } else if a < 225.0 {
        "back"
    } else {
        "left"
    }
}

/// Generates `per_difficulty[d - 1]` episodes at each difficulty `d`, named
/// `d<d>-<index>`.
pub fn build_dataset(sw: &SynthWorld, id: &str, per_difficulty: [usize; 4], seed: u64) -> Result<Dataset> {
    let mut episodes = BTreeMap::new();
    for (d, &count) in per_difficulty.iter().enumerate() {
        let difficulty = d + 1;
        for i in 0..count {
            let s = derive_seed(seed, (difficulty as u64) << 32 | i as u64);
            episodes.insert(format!("d{difficulty}-{i:04}"), generate_episode(sw, difficulty, s)?);
        }
    }
    Ok(Dataset {
        id: id.to_string(),
        world: Arc::clone(&sw.world),
        episodes,
    })
}
