//! Geo-referenced directed road graph.
//!
//! Nodes carry a WGS84 position and an optional panorama key; every directed
//! edge stores its compass bearing and length in meters. Graphs are loaded from
//! a JSON file, validated once, and then shared read-only.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NavError, Result};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Maximum disagreement between a stored edge bearing and the geometry.
pub const BEARING_TOLERANCE_DEG: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        let p = GeoPoint { lat, lon };
        if p.is_valid() {
            Ok(p)
        } else {
            Err(NavError::InvalidPoint { lat, lon })
        }
    }

    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..180.0).contains(&self.lon)
    }
}

/// Great-circle distance in meters (haversine on a sphere of radius [`EARTH_RADIUS_M`]).
pub fn geodesic_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Forward azimuth from `a` to `b`, degrees clockwise from north in `[0, 360)`.
pub fn initial_bearing(a: GeoPoint, b: GeoPoint) -> Result<f64> {
    if a == b {
        return Err(NavError::CoincidentPoints);
    }
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dlambda = (b.lon - a.lon).to_radians();
    let y = dlambda.sin() * phi2.cos();
    let x = phi1.cos() * phi2.sin() - phi1.sin() * phi2.cos() * dlambda.cos();
    Ok(normalize_bearing(y.atan2(x).to_degrees()))
}

/// Wraps any finite angle into `[0, 360)`.
pub fn normalize_bearing(deg: f64) -> f64 {
    let b = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if b >= 360.0 {
        0.0
    } else {
        b
    }
}

/// Smallest absolute difference between two bearings, in `[0, 180]`.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphNode {
    pub id: NodeId,
    pub geo: GeoPoint,
    pub panorama_ref: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectedEdge {
    pub from: NodeId,
    pub to: NodeId,
    pub bearing: f64,
    pub length: f64,
}

#[derive(Debug, Clone, Default)]
pub struct CityGraph {
    nodes: BTreeMap<NodeId, GraphNode>,
    adjacency: BTreeMap<NodeId, Vec<DirectedEdge>>,
    edge_count: usize,
    heuristic_scale: f64,
}

// On-disk schema.

#[derive(Debug, Serialize, Deserialize)]
pub struct GraphFile {
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<EdgeRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: u64,
    pub lat: f64,
    pub lon: f64,
    #[serde(default)]
    pub pano: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub from: u64,
    pub to: u64,
    #[serde(default)]
    pub bearing: Option<f64>,
    #[serde(default)]
    pub length: Option<f64>,
}

impl CityGraph {
    /// Builds a graph from records, filling missing bearings and lengths from
    /// geometry and checking every invariant. All violations are collected
    /// into a single error.
    pub fn from_records(nodes: Vec<NodeRecord>, edges: Vec<EdgeRecord>) -> Result<Self> {
        let mut violations = Vec::new();
        let mut node_map = BTreeMap::new();
        for rec in nodes {
            let geo = GeoPoint {
                lat: rec.lat,
                lon: rec.lon,
            };
            if !geo.is_valid() {
                violations.push(format!("node {}: invalid position ({}, {})", rec.id, rec.lat, rec.lon));
            }
            let id = NodeId(rec.id);
            let node = GraphNode {
                id,
                geo,
                panorama_ref: rec.pano,
            };
            if node_map.insert(id, node).is_some() {
                violations.push(format!("node {}: duplicate id", rec.id));
            }
        }

        let mut adjacency: BTreeMap<NodeId, Vec<DirectedEdge>> = BTreeMap::new();
        let mut edge_count = 0;
        for rec in edges {
            let label = format!("edge {}->{}", rec.from, rec.to);
            let (from, to) = (NodeId(rec.from), NodeId(rec.to));
            let (Some(a), Some(b)) = (node_map.get(&from), node_map.get(&to)) else {
                violations.push(format!("{label}: references a missing node"));
                continue;
            };
            if from == to {
                violations.push(format!("{label}: self-loop"));
                continue;
            }
            let geometric = match initial_bearing(a.geo, b.geo) {
                Ok(b) => b,
                Err(_) => {
                    violations.push(format!("{label}: endpoints are coincident"));
                    continue;
                }
            };
            let bearing = rec.bearing.unwrap_or(geometric);
            if !(0.0..360.0).contains(&bearing) {
                violations.push(format!("{label}: bearing {bearing} outside [0, 360)"));
                continue;
            }
            if angular_distance(bearing, geometric) > BEARING_TOLERANCE_DEG {
                violations.push(format!(
                    "{label}: bearing {bearing} disagrees with geometry {geometric:.3}"
                ));
                continue;
            }
            let length = rec.length.unwrap_or_else(|| geodesic_distance(a.geo, b.geo));
            if !(length.is_finite() && length > 0.0) {
                violations.push(format!("{label}: length {length} must be positive"));
                continue;
            }
            adjacency.entry(from).or_default().push(DirectedEdge {
                from,
                to,
                bearing,
                length,
            });
            edge_count += 1;
        }

        if !violations.is_empty() {
            return Err(NavError::InvalidGraph(violations));
        }
        for list in adjacency.values_mut() {
            list.sort_by(|x, y| x.to.cmp(&y.to).then(x.length.total_cmp(&y.length)));
        }

        let mut graph = CityGraph {
            nodes: node_map,
            adjacency,
            edge_count,
            heuristic_scale: 1.0,
        };
        graph.heuristic_scale = graph.compute_heuristic_scale();
        Ok(graph)
    }

    // Largest factor keeping the geodesic heuristic a lower bound on every
    // edge length, so search stays exact for files with short stored lengths.
    fn compute_heuristic_scale(&self) -> f64 {
        let mut scale: f64 = 1.0;
        for e in self.edges() {
            let g = geodesic_distance(self.nodes[&e.from].geo, self.nodes[&e.to].geo);
            if g > 0.0 {
                scale = scale.min(e.length / g);
            }
        }
        scale
    }

    pub fn parse_json(text: &str) -> Result<Self> {
        let file: GraphFile = serde_json::from_str(text)?;
        Self::from_records(file.nodes, file.edges)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| NavError::io(path, e))?;
        Self::parse_json(&text)
    }

    /// Canonical form: nodes sorted by id, edges by (from, to).
    pub fn to_file(&self) -> GraphFile {
        GraphFile {
            nodes: self
                .nodes
                .values()
                .map(|n| NodeRecord {
                    id: n.id.0,
                    lat: n.geo.lat,
                    lon: n.geo.lon,
                    pano: n.panorama_ref.clone(),
                })
                .collect(),
            edges: self
                .edges()
                .map(|e| EdgeRecord {
                    from: e.from.0,
                    to: e.to.0,
                    bearing: Some(e.bearing),
                    length: Some(e.length),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_file()).expect("graph serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| NavError::io(path, e))
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.nodes.contains_key(&id)
    }

    pub fn node(&self, id: NodeId) -> Result<&GraphNode> {
        self.nodes.get(&id).ok_or(NavError::UnknownNode(id))
    }

    pub fn geo(&self, id: NodeId) -> Result<GeoPoint> {
        self.node(id).map(|n| n.geo)
    }

    /// Nodes in ascending id order.
    pub fn nodes(&self) -> impl Iterator<Item = &GraphNode> {
        self.nodes.values()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.keys().copied()
    }

    pub fn out_edges(&self, id: NodeId) -> &[DirectedEdge] {
        self.adjacency.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn out_degree(&self, id: NodeId) -> usize {
        self.out_edges(id).len()
    }

    /// Shortest direct edge `from -> to`, if any.
    pub fn edge(&self, from: NodeId, to: NodeId) -> Option<&DirectedEdge> {
        self.out_edges(from)
            .iter()
            .filter(|e| e.to == to)
            .min_by(|a, b| a.length.total_cmp(&b.length))
    }

    pub fn edges(&self) -> impl Iterator<Item = &DirectedEdge> {
        self.adjacency.values().flatten()
    }

    /// Admissible lower bound on the road distance between two nodes.
    pub fn heuristic(&self, a: NodeId, b: NodeId) -> f64 {
        match (self.nodes.get(&a), self.nodes.get(&b)) {
            (Some(x), Some(y)) => self.heuristic_scale * geodesic_distance(x.geo, y.geo),
            _ => 0.0,
        }
    }

    /// Nodes with out-degree of at least three.
    pub fn intersections(&self) -> std::collections::BTreeSet<NodeId> {
        self.nodes
            .keys()
            .copied()
            .filter(|&id| self.out_degree(id) >= 3)
            .collect()
    }
}
