//! Route endpoints by clustering, shortest routes by A*.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::citygraph::{CityGraph, GeoPoint, NodeId};
use crate::error::{NavError, Result};

const KMEANS_TOLERANCE_DEG: f64 = 1e-9;
const KMEANS_MAX_ITERS: usize = 100;

/// A traversal over graph edges with its landmark annotation.
///
/// `landmark_ids` always starts at the source and ends at the destination;
/// intermediate landmarks are interior route nodes in traversal order.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    node_ids: Vec<NodeId>,
    edge_lengths: Vec<f64>,
    total_length: f64,
    landmark_ids: Vec<NodeId>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RouteFile {
    pub nodes: Vec<u64>,
    pub landmarks: Vec<u64>,
    pub length_m: f64,
}

impl Route {
    /// Builds a route over consecutive graph edges with endpoint-only landmarks.
    pub fn from_nodes(graph: &CityGraph, node_ids: Vec<NodeId>) -> Result<Self> {
        if node_ids.is_empty() {
            return Err(NavError::InvalidRoute("empty node list".into()));
        }
        for &id in &node_ids {
            graph.node(id)?;
        }
        let mut edge_lengths = Vec::with_capacity(node_ids.len().saturating_sub(1));
        for w in node_ids.windows(2) {
            let e = graph.edge(w[0], w[1]).ok_or_else(|| {
                NavError::InvalidRoute(format!("no edge {} -> {}", w[0], w[1]))
            })?;
            edge_lengths.push(e.length);
        }
        let total_length = edge_lengths.iter().sum();
        let mut landmark_ids = vec![node_ids[0]];
        if node_ids.len() > 1 {
            landmark_ids.push(*node_ids.last().unwrap());
        }
        Ok(Route {
            node_ids,
            edge_lengths,
            total_length,
            landmark_ids,
        })
    }

    pub fn from_file(graph: &CityGraph, file: &RouteFile) -> Result<Self> {
        let mut route = Self::from_nodes(graph, file.nodes.iter().map(|&n| NodeId(n)).collect())?;
        let tol = 1e-6 * route.total_length.max(1.0);
        if (route.total_length - file.length_m).abs() > tol {
            return Err(NavError::InvalidRoute(format!(
                "stated length {} disagrees with edges {}",
                file.length_m, route.total_length
            )));
        }
        route.set_landmarks(file.landmarks.iter().map(|&n| NodeId(n)).collect())?;
        Ok(route)
    }

    pub fn load(graph: &CityGraph, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| NavError::io(path, e))?;
        Self::from_file(graph, &serde_json::from_str(&text)?)
    }

    pub fn to_file(&self) -> RouteFile {
        RouteFile {
            nodes: self.node_ids.iter().map(|n| n.0).collect(),
            landmarks: self.landmark_ids.iter().map(|n| n.0).collect(),
            length_m: self.total_length,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.to_file())? + "\n";
        std::fs::write(path, text).map_err(|e| NavError::io(path, e))
    }

    /// Replaces the landmark list. It must start at the source, end at the
    /// destination and visit route nodes in strictly increasing order.
    pub fn set_landmarks(&mut self, landmark_ids: Vec<NodeId>) -> Result<()> {
        self.landmark_positions_of(&landmark_ids)?;
        self.landmark_ids = landmark_ids;
        Ok(())
    }

    fn landmark_positions_of(&self, landmarks: &[NodeId]) -> Result<Vec<usize>> {
        if landmarks.first() != self.node_ids.first() || landmarks.last() != self.node_ids.last() {
            return Err(NavError::InvalidRoute(
                "landmarks must begin at the source and end at the destination".into(),
            ));
        }
        if self.node_ids.len() > 1 && landmarks.len() < 2 {
            return Err(NavError::InvalidRoute("landmarks must include both endpoints".into()));
        }
        let mut positions = Vec::with_capacity(landmarks.len());
        let mut next = 0;
        for (i, &lm) in landmarks.iter().enumerate() {
            let start = if i == 0 { 0 } else { next };
            let pos = if i == landmarks.len() - 1 {
                self.node_ids.len() - 1
            } else {
                self.node_ids[start..]
                    .iter()
                    .position(|&n| n == lm)
                    .map(|p| p + start)
                    .ok_or_else(|| {
                        NavError::InvalidRoute(format!("landmark {lm} not on route in order"))
                    })?
            };
            if i > 0 && pos < next {
                return Err(NavError::InvalidRoute(format!("landmark {lm} out of order")));
            }
            positions.push(pos);
            next = pos + 1;
        }
        Ok(positions)
    }

    pub fn node_ids(&self) -> &[NodeId] {
        &self.node_ids
    }

    pub fn edge_lengths(&self) -> &[f64] {
        &self.edge_lengths
    }

    pub fn total_length(&self) -> f64 {
        self.total_length
    }

    pub fn landmark_ids(&self) -> &[NodeId] {
        &self.landmark_ids
    }

    pub fn source(&self) -> NodeId {
        self.node_ids[0]
    }

    pub fn destination(&self) -> NodeId {
        *self.node_ids.last().unwrap()
    }

    /// Landmarks after the source: the nodes an agent must reach in order.
    pub fn targets(&self) -> &[NodeId] {
        &self.landmark_ids[1.min(self.landmark_ids.len())..]
    }

    /// Indices of each landmark within `node_ids`.
    pub fn landmark_positions(&self) -> Vec<usize> {
        self.landmark_positions_of(&self.landmark_ids)
            .expect("landmarks validated on assignment")
    }

    /// Along-route distance from the source to each node.
    pub fn offsets(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.node_ids.len());
        out.push(0.0);
        for &len in &self.edge_lengths {
            acc += len;
            out.push(acc);
        }
        out
    }

    /// Node slices between consecutive landmarks (sharing boundary nodes).
    pub fn sub_routes(&self) -> Vec<&[NodeId]> {
        self.landmark_positions()
            .windows(2)
            .map(|w| &self.node_ids[w[0]..=w[1]])
            .collect()
    }

    /// The contiguous part of the route between two node indices, inclusive,
    /// with landmarks restricted to the slice.
    pub fn slice(&self, start: usize, end: usize, landmarks: Vec<NodeId>) -> Result<Route> {
        if start > end || end >= self.node_ids.len() {
            return Err(NavError::InvalidRoute(format!("bad slice {start}..={end}")));
        }
        let edge_lengths = self.edge_lengths[start..end].to_vec();
        let mut route = Route {
            node_ids: self.node_ids[start..=end].to_vec(),
            total_length: edge_lengths.iter().sum(),
            edge_lengths,
            landmark_ids: Vec::new(),
        };
        route.set_landmarks(landmarks)?;
        Ok(route)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub k: usize,
    pub labels: BTreeMap<NodeId, usize>,
    pub centroids: Vec<GeoPoint>,
}

impl ClusterAssignment {
    /// Cluster members in ascending node order.
    pub fn members(&self) -> Vec<Vec<NodeId>> {
        let mut out = vec![Vec::new(); self.k];
        for (&id, &c) in &self.labels {
            out[c].push(id);
        }
        out
    }
}

fn sq_dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)
}

/// Lloyd's k-means on raw (lat, lon), seeded from `k` distinct nodes.
pub fn cluster_nodes(graph: &CityGraph, k: usize, seed: u64) -> Result<ClusterAssignment> {
    let n = graph.node_count();
    if k == 0 {
        return Err(NavError::InvalidConfig("k must be positive".into()));
    }
    if n == 0 || k > n {
        return Err(NavError::TooManyClusters { k, nodes: n });
    }
    let ids: Vec<NodeId> = graph.node_ids().collect();
    let pts: Vec<(f64, f64)> = graph.nodes().map(|n| (n.geo.lat, n.geo.lon)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<(f64, f64)> = index::sample(&mut rng, n, k)
        .into_iter()
        .map(|i| pts[i])
        .collect();
    let mut labels = vec![0usize; n];

    for _ in 0..KMEANS_MAX_ITERS {
        for (label, p) in labels.iter_mut().zip(&pts) {
            *label = nearest(&centroids, *p);
        }
        let mut sums = vec![(0.0, 0.0, 0usize); k];
        for (&c, p) in labels.iter().zip(&pts) {
            sums[c].0 += p.0;
            sums[c].1 += p.1;
            sums[c].2 += 1;
        }
        let mut moved: f64 = 0.0;
        for (c, (slat, slon, count)) in sums.into_iter().enumerate() {
            if count == 0 {
                continue;
            }
            let next = (slat / count as f64, slon / count as f64);
            moved = moved.max(sq_dist(next, centroids[c]).sqrt());
            centroids[c] = next;
        }
        if moved < KMEANS_TOLERANCE_DEG {
            break;
        }
    }
    // labels must agree with the final centroids
    for (label, p) in labels.iter_mut().zip(&pts) {
        *label = nearest(&centroids, *p);
    }

    Ok(ClusterAssignment {
        k,
        labels: ids.into_iter().zip(labels).collect(),
        centroids: centroids
            .into_iter()
            .map(|(lat, lon)| GeoPoint { lat, lon })
            .collect(),
    })
}

fn nearest(centroids: &[(f64, f64)], p: (f64, f64)) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, &c) in centroids.iter().enumerate() {
        let d = sq_dist(c, p);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Draws two nodes from two distinct, uniformly chosen nonempty clusters.
pub fn sample_endpoints(assignment: &ClusterAssignment, seed: u64) -> Result<(NodeId, NodeId)> {
    let clusters: Vec<Vec<NodeId>> = assignment
        .members()
        .into_iter()
        .filter(|m| !m.is_empty())
        .collect();
    if clusters.len() < 2 {
        return Err(NavError::TooFewClusters(clusters.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = index::sample(&mut rng, clusters.len(), 2).into_vec();
    let a = &clusters[picked[0]];
    let b = &clusters[picked[1]];
    let src = a[rng.random_range(0..a.len())];
    let dst = b[rng.random_range(0..b.len())];
    Ok((src, dst))
}

#[derive(Debug, Clone, Copy)]
struct Frontier {
    f: f64,
    g: f64,
    node: NodeId,
}

impl PartialEq for Frontier {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Frontier {}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Frontier {
    // min-heap on f, then on node id
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.node.cmp(&self.node))
    }
}

/// Shortest route by A* with the geodesic heuristic. Landmarks are set to the
/// two endpoints.
pub fn shortest_route(graph: &CityGraph, source: NodeId, destination: NodeId) -> Result<Route> {
    graph.node(source)?;
    graph.node(destination)?;
    if source == destination {
        return Route::from_nodes(graph, vec![source]);
    }

    let mut best: HashMap<NodeId, f64> = HashMap::new();
    let mut parent: HashMap<NodeId, NodeId> = HashMap::new();
    let mut heap = BinaryHeap::new();
    best.insert(source, 0.0);
    heap.push(Frontier {
        f: graph.heuristic(source, destination),
        g: 0.0,
        node: source,
    });

    while let Some(Frontier { g, node, .. }) = heap.pop() {
        if node == destination {
            break;
        }
        if g > best[&node] {
            continue;
        }
        for e in graph.out_edges(node) {
            let cand = g + e.length;
            if best.get(&e.to).is_none_or(|&old| cand < old) {
                best.insert(e.to, cand);
                parent.insert(e.to, node);
                heap.push(Frontier {
                    f: cand + graph.heuristic(e.to, destination),
                    g: cand,
                    node: e.to,
                });
            }
        }
    }

    if !parent.contains_key(&destination) {
        return Err(NavError::Unreachable {
            from: source,
            to: destination,
        });
    }
    let mut path = vec![destination];
    let mut cur = destination;
    while let Some(&p) = parent.get(&cur) {
        path.push(p);
        cur = p;
        if cur == source {
            break;
        }
    }
    path.reverse();
    Route::from_nodes(graph, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::citygraph::{EdgeRecord, NodeRecord};

    fn line_graph() -> CityGraph {
        let nodes = (0..3)
            .map(|i| NodeRecord {
                id: i,
                lat: 0.0,
                lon: i as f64 * 0.001,
                pano: None,
            })
            .collect();
        let edges = vec![
            EdgeRecord { from: 0, to: 1, bearing: None, length: None },
            EdgeRecord { from: 1, to: 2, bearing: None, length: None },
        ];
        CityGraph::from_records(nodes, edges).unwrap()
    }

    fn blobs(centers: &[(f64, f64)], per: usize) -> CityGraph {
        let mut nodes = Vec::new();
        for (c, &(lat, lon)) in centers.iter().enumerate() {
            for j in 0..per {
                let off = j as f64 * 1e-4;
                nodes.push(NodeRecord {
                    id: (c * per + j) as u64,
                    lat: lat + off,
                    lon: lon - off,
                    pano: None,
                });
            }
        }
        CityGraph::from_records(nodes, Vec::new()).unwrap()
    }

    #[test]
    fn single_cluster_is_mean() {
        let g = line_graph();
        let a = cluster_nodes(&g, 1, 9).unwrap();
        assert!(a.labels.values().all(|&l| l == 0));
        assert!((a.centroids[0].lon - 0.001).abs() < 1e-15);
        assert_eq!(a.centroids[0].lat, 0.0);
    }

    #[test]
    fn too_many_clusters() {
        assert!(matches!(
            cluster_nodes(&line_graph(), 4, 0),
            Err(NavError::TooManyClusters { k: 4, nodes: 3 })
        ));
    }

    #[test]
    fn separated_blobs_get_distinct_labels() {
        let g = blobs(&[(40.0, -74.0), (40.5, -73.0)], 10);
        for seed in 0..20 {
            let a = cluster_nodes(&g, 2, seed).unwrap();
            let first = a.labels[&NodeId(0)];
            let second = a.labels[&NodeId(10)];
            assert_ne!(first, second);
            for (id, &l) in &a.labels {
                assert_eq!(l, if id.0 < 10 { first } else { second });
            }
        }
    }

    #[test]
    fn lloyd_fixed_point_on_planted_blobs() {
        let centers = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (0.5, 2.0)];
        let g = blobs(&centers, 8);
        let mut recovered = 0;
        for seed in 0..20 {
            let a = cluster_nodes(&g, 5, seed).unwrap();
            // every node sits with its nearest centroid, and each nonempty
            // centroid is the mean of its members
            for (id, &label) in &a.labels {
                let p = g.geo(*id).unwrap();
                let d = |c: &GeoPoint| (c.lat - p.lat).powi(2) + (c.lon - p.lon).powi(2);
                assert!(a.centroids.iter().all(|c| d(&a.centroids[label]) <= d(c)));
            }
            for (c, members) in a.members().iter().enumerate() {
                if members.is_empty() {
                    continue;
                }
                let lat = members.iter().map(|m| g.geo(*m).unwrap().lat).sum::<f64>() / members.len() as f64;
                assert!((a.centroids[c].lat - lat).abs() < 1e-9);
            }
            let pure = (0..5u64).all(|b| (0..8).all(|j| a.labels[&NodeId(b * 8 + j)] == a.labels[&NodeId(b * 8)]));
            let distinct: std::collections::BTreeSet<_> = a.labels.values().collect();
            if pure && distinct.len() == 5 {
                recovered += 1;
            }
        }
        assert!(recovered >= 5, "recovered {recovered}/20");
    }

    #[test]
    fn singleton_clusters_endpoints() {
        let a = ClusterAssignment {
            k: 2,
            labels: [(NodeId(4), 0), (NodeId(9), 1)].into_iter().collect(),
            centroids: vec![GeoPoint { lat: 0.0, lon: 0.0 }; 2],
        };
        let (s, d) = sample_endpoints(&a, 1).unwrap();
        let mut pair = [s, d];
        pair.sort();
        assert_eq!(pair, [NodeId(4), NodeId(9)]);
        assert_eq!(sample_endpoints(&a, 1).unwrap(), (s, d));
    }

    #[test]
    fn endpoints_need_two_clusters() {
        let a = ClusterAssignment {
            k: 2,
            labels: [(NodeId(4), 0), (NodeId(9), 0)].into_iter().collect(),
            centroids: vec![GeoPoint { lat: 0.0, lon: 0.0 }; 2],
        };
        assert!(matches!(sample_endpoints(&a, 1), Err(NavError::TooFewClusters(1))));
    }

    #[test]
    fn trivial_routes() {
        let g = line_graph();
        let r = shortest_route(&g, NodeId(1), NodeId(1)).unwrap();
        assert_eq!(r.node_ids(), &[NodeId(1)]);
        assert_eq!(r.total_length(), 0.0);

        let r = shortest_route(&g, NodeId(0), NodeId(2)).unwrap();
        assert_eq!(r.node_ids(), &[NodeId(0), NodeId(1), NodeId(2)]);
        assert_eq!(r.landmark_ids(), &[NodeId(0), NodeId(2)]);
        assert_eq!(r.total_length(), r.edge_lengths().iter().sum::<f64>());
        assert_eq!(r.sub_routes(), vec![r.node_ids()]);

        assert!(matches!(
            shortest_route(&g, NodeId(2), NodeId(0)),
            Err(NavError::Unreachable { .. })
        ));
    }

    #[test]
    fn landmark_validation() {
        let g = line_graph();
        let mut r = shortest_route(&g, NodeId(0), NodeId(2)).unwrap();
        r.set_landmarks(vec![NodeId(0), NodeId(1), NodeId(2)]).unwrap();
        assert_eq!(r.sub_routes().len(), 2);
        assert_eq!(r.landmark_positions(), vec![0, 1, 2]);
        assert!(r.set_landmarks(vec![NodeId(1), NodeId(2)]).is_err());
        assert!(r.set_landmarks(vec![NodeId(0), NodeId(2), NodeId(1), NodeId(2)]).is_err());
        let file = r.to_file();
        assert_eq!(Route::from_file(&g, &file).unwrap(), r);
    }
}
