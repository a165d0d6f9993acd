//! Independent reference implementations and fixtures shared by the
//! integration tests. Nothing here calls into the code under test except to
//! build inputs.

#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashMap};

use navsim::citygraph::{CityGraph, EdgeRecord, GeoPoint, NodeId, NodeRecord};
use navsim::landmarks::{ObjectiveWeights, RankScorer};
use navsim::routegen::Route;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const R: f64 = 6_371_000.0;

/// Spherical law of cosines; numerically independent of the haversine form.
pub fn slc_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dl = (b.lon - a.lon).to_radians();
    let c = (p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos()).clamp(-1.0, 1.0);
    R * c.acos()
}

/// Random directed graph: `n` points in a ~3 km box, each linked both ways to
/// its three nearest neighbours, plus a few one-way shortcuts. Some edges
/// carry a stored length up to 60% longer than the straight line.
pub fn random_graph(seed: u64, n: usize) -> CityGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<(f64, f64)> = (0..n)
        .map(|_| (40.70 + rng.random_range(0.0..0.03), -74.02 + rng.random_range(0.0..0.04)))
        .collect();
    let nodes = pts
        .iter()
        .enumerate()
        .map(|(i, &(lat, lon))| NodeRecord { id: i as u64 * 3 + 1, lat, lon, pano: None })
        .collect();
    let id = |i: usize| i as u64 * 3 + 1;
    let dist = |a: usize, b: usize| {
        let (x, y) = (pts[a].0 - pts[b].0, (pts[a].1 - pts[b].1) * 0.76);
        x * x + y * y
    };
    let mut pairs = BTreeSet::new();
    for a in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&b| b != a).collect();
        others.sort_by(|&x, &y| dist(a, x).total_cmp(&dist(a, y)));
        for &b in others.iter().take(3) {
            pairs.insert((a, b));
            pairs.insert((b, a));
        }
    }
    for _ in 0..n / 4 {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            pairs.insert((a, b));
        }
    }
    let mut edges = Vec::new();
    for (a, b) in pairs {
        let length = if rng.random_bool(0.3) {
            let geo = slc_distance(
                GeoPoint { lat: pts[a].0, lon: pts[a].1 },
                GeoPoint { lat: pts[b].0, lon: pts[b].1 },
            );
            Some(geo * rng.random_range(1.0..1.6))
        } else {
            None
        };
        edges.push(EdgeRecord { from: id(a), to: id(b), bearing: None, length });
    }
    CityGraph::from_records(nodes, edges).expect("fixture graph is valid")
}

#[derive(PartialEq)]
struct Item(f64, NodeId);

impl Eq for Item {}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Item {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0)
    }
}

/// Textbook Dijkstra from `source` over stored edge lengths.
pub fn dijkstra(graph: &CityGraph, source: NodeId) -> HashMap<NodeId, f64> {
    let mut dist: HashMap<NodeId, f64> = HashMap::new();
    let mut heap = BinaryHeap::new();
    dist.insert(source, 0.0);
    heap.push(Item(0.0, source));
    while let Some(Item(d, u)) = heap.pop() {
        if d > dist[&u] {
            continue;
        }
        for e in graph.out_edges(u) {
            let nd = d + e.length;
            if dist.get(&e.to).is_none_or(|&old| nd < old) {
                dist.insert(e.to, nd);
                heap.push(Item(nd, e.to));
            }
        }
    }
    dist
}

/// Direct evaluation of the landmark objective for `picks` (any order).
pub fn objective_oracle(
    route: &Route,
    picks: &[NodeId],
    w: &ObjectiveWeights,
    scorer: &dyn RankScorer,
    intersections: &BTreeSet<NodeId>,
) -> f64 {
    let nodes = route.node_ids();
    let lens = route.edge_lengths();
    let along = |i: usize| lens[..i].iter().sum::<f64>();
    let total = along(nodes.len() - 1);
    let mut idx: Vec<usize> = picks
        .iter()
        .map(|p| nodes.iter().position(|n| n == p).expect("pick on route"))
        .collect();
    idx.sort();

    let mut stops = vec![0.0];
    stops.extend(idx.iter().map(|&i| along(i)));
    stops.push(total);
    let f1 = stops.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);

    let ahead = |i: usize| {
        let j = (i..nodes.len())
            .find(|&j| intersections.contains(&nodes[j]))
            .unwrap_or(nodes.len() - 1);
        along(j) - along(i)
    };
    let k = idx.len() as f64;
    let f2 = idx.iter().map(|&i| 1.0 / (ahead(i) + w.sigma)).sum::<f64>() / k;
    let f3 = idx.iter().map(|&i| scorer.score(nodes[i])).sum::<f64>() / k;
    w.w1 * f1 + w.w2 * f2 + w.w3 * f3
}

/// Brute force over bitmasks of the interior; ties broken toward the
/// lexicographically smallest sorted id tuple.
pub fn enumerate_best(
    route: &Route,
    w: &ObjectiveWeights,
    scorer: &dyn RankScorer,
    intersections: &BTreeSet<NodeId>,
) -> (Vec<NodeId>, f64) {
    let nodes = route.node_ids();
    let interior: Vec<NodeId> = nodes[1..nodes.len() - 1].to_vec();
    let mut best: Option<(Vec<NodeId>, f64)> = None;
    for mask in 0u32..(1 << interior.len()) {
        if mask.count_ones() as usize != w.l {
            continue;
        }
        let mut pick: Vec<NodeId> = (0..interior.len())
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| interior[i])
            .collect();
        let v = objective_oracle(route, &pick, w, scorer, intersections);
        pick.sort();
        let better = match &best {
            None => true,
            Some((bp, bv)) => v > *bv + 1e-9 || ((v - bv).abs() <= 1e-9 && pick < *bp),
        };
        if better {
            best = Some((pick, v));
        }
    }
    best.expect("at least one subset")
}

/// A simple path of `len` edges through the graph, found by a seeded random
/// walk that never revisits a node; `None` if the walk gets stuck.
pub fn random_simple_path(graph: &CityGraph, len: usize, seed: u64) -> Option<Vec<NodeId>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<NodeId> = graph.node_ids().collect();
    let mut path = vec![ids[rng.random_range(0..ids.len())]];
    while path.len() <= len {
        let here = *path.last().unwrap();
        let next: Vec<NodeId> = graph
            .out_edges(here)
            .iter()
            .map(|e| e.to)
            .filter(|n| !path.contains(n))
            .collect();
        if next.is_empty() {
            return None;
        }
        path.push(next[rng.random_range(0..next.len())]);
    }
    Some(path)
}

/// Offset `east`/`north` meters from `origin` on the local tangent plane.
pub fn offset(origin: GeoPoint, east: f64, north: f64) -> GeoPoint {
    let k = R * std::f64::consts::PI / 180.0;
    GeoPoint {
        lat: origin.lat + north / k,
        lon: origin.lon + east / (k * origin.lat.to_radians().cos()),
    }
}
