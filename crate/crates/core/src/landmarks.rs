//! Landmark mining along a route.
//!
//! The objective combines three terms over a selection of interior route
//! nodes:
//!
//! * spacing: the smallest along-route gap between consecutive members of
//!   `{source} ∪ selection ∪ {destination}`;
//! * intersection proximity: mean of `1 / (d + sigma)` where `d` is the
//!   along-route distance to the next intersection ahead (or to the
//!   destination when no intersection remains);
//! * rank: mean [`RankScorer`] value.
//!
//! The spacing term is a max-min dispersion and is not submodular, so the
//! greedy solver carries no approximation guarantee. [`select_exact`]
//! enumerates all subsets for small instances.

use std::collections::{BTreeSet, HashMap};

use crate::citygraph::NodeId;
use crate::error::{NavError, Result};
use crate::routegen::Route;

/// Upper bound on subsets visited by [`select_exact`].
pub const EXACT_SUBSET_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    /// Meters added to the intersection distance.
    pub sigma: f64,
    /// Number of intermediate landmarks to pick.
    pub l: usize,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        ObjectiveWeights {
            w1: 1.0,
            w2: 1.0,
            w3: 3.0,
            sigma: 15.0,
            l: 3,
        }
    }
}

impl ObjectiveWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("w1", self.w1), ("w2", self.w2), ("w3", self.w3)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(NavError::InvalidWeights(format!("{name} = {w}")));
            }
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(NavError::InvalidWeights(format!("sigma = {}", self.sigma)));
        }
        if self.l == 0 {
            return Err(NavError::InvalidWeights("l must be at least 1".into()));
        }
        Ok(())
    }

    /// Same weights with `w1..w3` multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        ObjectiveWeights {
            w1: self.w1 * factor,
            w2: self.w2 * factor,
            w3: self.w3 * factor,
            ..*self
        }
    }
}

/// Per-node describability score in `[0, 1]`.
pub trait RankScorer: Sync {
    fn score(&self, node: NodeId) -> f64;
}

/// Deterministic pseudo-score from a hash of the node id.
#[derive(Debug, Clone, Copy, Default)]
pub struct HashScorer {
    pub salt: u64,
}

impl RankScorer for HashScorer {
    fn score(&self, node: NodeId) -> f64 {
        let h = crate::util::splitmix64(node.0 ^ self.salt.rotate_left(17));
        (h >> 11) as f64 / (1u64 << 53) as f64
    }
}

/// Fixed scores for chosen nodes, a constant elsewhere.
#[derive(Debug, Clone, Default)]
pub struct PlantedScorer {
    pub scores: HashMap<NodeId, f64>,
    pub default: f64,
}

impl RankScorer for PlantedScorer {
    fn score(&self, node: NodeId) -> f64 {
        self.scores.get(&node).copied().unwrap_or(self.default)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Chosen interior nodes in route order.
    pub node_ids: Vec<NodeId>,
    pub objective_value: f64,
}

/// Route data shared by every objective evaluation.
struct Problem {
    weights: ObjectiveWeights,
    total: f64,
    /// Interior route nodes sorted by node id.
    candidates: Vec<Candidate>,
    index_of: HashMap<NodeId, usize>,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    route_index: usize,
    node: NodeId,
    offset: f64,
    proximity: f64,
    rank: f64,
}

impl Problem {
    fn new(
        route: &Route,
        weights: ObjectiveWeights,
        scorer: &dyn RankScorer,
        intersections: &BTreeSet<NodeId>,
    ) -> Result<Self> {
        weights.validate()?;
        let nodes = route.node_ids();
        let offsets = route.offsets();
        let last = nodes.len() - 1;

        // distance ahead to the next intersection (inclusive), else to the destination
        let mut ahead = vec![0.0; nodes.len()];
        let mut next_stop = last;
        for i in (0..nodes.len()).rev() {
            if intersections.contains(&nodes[i]) {
                next_stop = i;
            }
            ahead[i] = offsets[next_stop] - offsets[i];
        }

        let mut candidates: Vec<Candidate> = (1..last)
            .map(|i| Candidate {
                route_index: i,
                node: nodes[i],
                offset: offsets[i],
                proximity: 1.0 / (ahead[i] + weights.sigma),
                rank: scorer.score(nodes[i]),
            })
            .collect();
        candidates.sort_by_key(|c| c.node);
        candidates.dedup_by_key(|c| c.node);
        let index_of = candidates.iter().enumerate().map(|(i, c)| (c.node, i)).collect();
        Ok(Problem {
            weights,
            total: offsets[last],
            candidates,
            index_of,
        })
    }

    fn indices_of(&self, nodes: &[NodeId]) -> Result<Vec<usize>> {
        let mut seen = BTreeSet::new();
        nodes
            .iter()
            .map(|n| {
                let i = *self.index_of.get(n).ok_or_else(|| {
                    NavError::InvalidSelection(format!("node {n} is not an interior route node"))
                })?;
                if !seen.insert(i) {
                    return Err(NavError::InvalidSelection(format!("node {n} selected twice")));
                }
                Ok(i)
            })
            .collect()
    }

    /// Objective over candidate indices. Terms are accumulated in route order
    /// so the value does not depend on the order of `chosen`.
    fn evaluate(&self, chosen: &[usize]) -> f64 {
        let w = &self.weights;
        let mut picked: Vec<&Candidate> = chosen.iter().map(|&i| &self.candidates[i]).collect();
        picked.sort_by_key(|c| c.route_index);

        let mut spacing = f64::INFINITY;
        let mut prev = 0.0;
        for c in &picked {
            spacing = spacing.min(c.offset - prev);
            prev = c.offset;
        }
        spacing = spacing.min(self.total - prev);

        let (proximity, rank) = if picked.is_empty() {
            (0.0, 0.0)
        } else {
            let n = picked.len() as f64;
            let p: f64 = picked.iter().map(|c| c.proximity).sum();
            let r: f64 = picked.iter().map(|c| c.rank).sum();
            (p / n, r / n)
        };
        w.w1 * spacing + w.w2 * proximity + w.w3 * rank
    }

    fn selection(&self, chosen: &[usize]) -> Selection {
        let mut picked: Vec<&Candidate> = chosen.iter().map(|&i| &self.candidates[i]).collect();
        picked.sort_by_key(|c| c.route_index);
        Selection {
            node_ids: picked.iter().map(|c| c.node).collect(),
            objective_value: self.evaluate(chosen),
        }
    }

    fn require(&self, l: usize) -> Result<()> {
        if self.candidates.len() < l {
            return Err(NavError::TooFewCandidates {
                available: self.candidates.len(),
                needed: l,
            });
        }
        Ok(())
    }
}

/// Evaluates the weighted objective for an arbitrary set of interior nodes.
pub fn objective(
    route: &Route,
    selection: &[NodeId],
    weights: &ObjectiveWeights,
    scorer: &dyn RankScorer,
    intersections: &BTreeSet<NodeId>,
) -> Result<f64> {
    let problem = Problem::new(route, *weights, scorer, intersections)?;
    let idx = problem.indices_of(selection)?;
    Ok(problem.evaluate(&idx))
}

/// Greedy forward selection: each round adds the candidate giving the largest
/// objective, ties going to the smallest node id.
pub fn select_greedy(
    route: &Route,
    weights: &ObjectiveWeights,
    scorer: &dyn RankScorer,
    intersections: &BTreeSet<NodeId>,
) -> Result<Selection> {
    let problem = Problem::new(route, *weights, scorer, intersections)?;
    problem.require(weights.l)?;

    let mut chosen: Vec<usize> = Vec::with_capacity(weights.l);
    let mut taken = vec![false; problem.candidates.len()];
    for _ in 0..weights.l {
        let mut best: Option<(usize, f64)> = None;
        for (c, _) in taken.iter().enumerate().filter(|(_, &t)| !t) {
            chosen.push(c);
            let value = problem.evaluate(&chosen);
            chosen.pop();
            if best.is_none_or(|(_, v)| value > v) {
                best = Some((c, value));
            }
        }
        let (c, _) = best.expect("enough candidates checked above");
        taken[c] = true;
        chosen.push(c);
    }
    Ok(problem.selection(&chosen))
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Exhaustive maximization over all `l`-subsets; ties resolve to the
/// lexicographically smallest sorted node-id tuple.
pub fn select_exact(
    route: &Route,
    weights: &ObjectiveWeights,
    scorer: &dyn RankScorer,
    intersections: &BTreeSet<NodeId>,
) -> Result<Selection> {
    let problem = Problem::new(route, *weights, scorer, intersections)?;
    let l = weights.l;
    problem.require(l)?;
    let n = problem.candidates.len();
    let count = binomial(n, l);
    if count > EXACT_SUBSET_LIMIT {
        return Err(NavError::InstanceTooLarge(count));
    }

    // candidates are sorted by node id, so index combinations in lexicographic
    // order visit node-id tuples in lexicographic order
    let mut combo: Vec<usize> = (0..l).collect();
    let mut best = combo.clone();
    let mut best_value = problem.evaluate(&combo);
    while let Some(pos) = (0..l).rev().find(|&i| combo[i] < n - l + i) {
        combo[pos] += 1;
        for i in pos + 1..l {
            combo[i] = combo[i - 1] + 1;
        }
        let value = problem.evaluate(&combo);
        if value > best_value {
            best_value = value;
            best.copy_from_slice(&combo);
        }
    }
    Ok(problem.selection(&best))
}
