//! Eight-direction action space, fusion of the two action heads, and
//! resolution of a predicted angle to an outgoing road.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::citygraph::{angular_distance, normalize_bearing, CityGraph, DirectedEdge, NodeId};
use crate::error::{NavError, Result};
use crate::matching::ScoreFeature;
use crate::routegen::{shortest_route, Route};

pub const BINS: usize = 8;
pub const BIN_WIDTH_DEG: f64 = 45.0;

/// Probability over the eight moving directions; bin `i` is centered at
/// `i * 45` degrees in the agent frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution(pub [f64; BINS]);

impl ActionDistribution {
    pub fn new(probs: [f64; BINS]) -> Result<Self> {
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(NavError::InvalidDistribution(format!("{probs:?}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(NavError::InvalidDistribution(format!("sums to {sum}")));
        }
        Ok(ActionDistribution(probs))
    }

    pub fn delta(bin: usize) -> Self {
        let mut p = [0.0; BINS];
        p[bin % BINS] = 1.0;
        ActionDistribution(p)
    }

    pub fn uniform() -> Self {
        ActionDistribution([1.0 / BINS as f64; BINS])
    }

    pub fn probs(&self) -> &[f64; BINS] {
        &self.0
    }

    /// Most likely bin, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for i in 1..BINS {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub w0: f64,
    pub w1: f64,
}

/// `(w0 * visual + w1 * memory) / (w0 + w1)`, renormalized against rounding.
pub fn fuse(
    visual: &ActionDistribution,
    memory: &ActionDistribution,
    w: FusionWeights,
) -> Result<ActionDistribution> {
    if !(w.w0.is_finite() && w.w1.is_finite()) || w.w0 < 0.0 || w.w1 < 0.0 {
        return Err(NavError::InvalidConfig(format!("fusion weights {w:?}")));
    }
    let total = w.w0 + w.w1;
    if total <= 0.0 {
        return Err(NavError::ZeroFusionWeights);
    }
    let mut out = [0.0; BINS];
    for (o, (a, b)) in out.iter_mut().zip(visual.0.iter().zip(&memory.0)) {
        *o = (w.w0 * a + w.w1 * b) / total;
    }
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    Ok(ActionDistribution(out))
}

/// Maps scores to fusion weights.
pub trait Weighting: Send + Sync {
    fn weights(&self, s: ScoreFeature) -> FusionWeights;
}

/// `w = (s1, s2)`, or equal weights when both scores are zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScoreWeighting;

impl Weighting for ScoreWeighting {
    fn weights(&self, s: ScoreFeature) -> FusionWeights {
        if s.s1 + s.s2 > 0.0 {
            FusionWeights { w0: s.s1, w1: s.s2 }
        } else {
            FusionWeights { w0: 1.0, w1: 1.0 }
        }
    }
}

/// Bin whose half-open sector `[c - 22.5, c + 22.5)` contains the angle.
pub fn bin_of_angle(angle: f64) -> usize {
    let a = normalize_bearing(angle);
    (((a + BIN_WIDTH_DEG / 2.0) / BIN_WIDTH_DEG).floor() as usize) % BINS
}

pub fn bin_center(bin: usize) -> f64 {
    (bin % BINS) as f64 * BIN_WIDTH_DEG
}

/// Outgoing edge closest in bearing to `heading + predicted_angle`; ties go
/// to the smaller bearing.
pub fn select_edge(
    graph: &CityGraph,
    node: NodeId,
    predicted_angle: f64,
    heading: f64,
) -> Result<DirectedEdge> {
    graph.node(node)?;
    let target = normalize_bearing(heading + predicted_angle);
    graph
        .out_edges(node)
        .iter()
        .min_by(|a, b| {
            angular_distance(a.bearing, target)
                .total_cmp(&angular_distance(b.bearing, target))
                .then(a.bearing.total_cmp(&b.bearing))
        })
        .copied()
        .ok_or(NavError::IsolatedNode(node))
}

/// Per-step view of the episode offered to a policy.
#[derive(Debug, Clone, Copy)]
pub struct PolicyContext<'a> {
    pub graph: &'a CityGraph,
    pub node: NodeId,
    pub heading: f64,
    pub eta: f64,
    pub route: &'a Route,
}

/// Produces the two action predictions. Called once per move, visual head
/// first.
pub trait Policy: Send {
    fn begin_episode(&mut self, _seed: u64) {}

    fn act_visual(
        &mut self,
        ctx: &PolicyContext<'_>,
        observation: &[f64],
        landmark: &[f64],
    ) -> Result<ActionDistribution>;

    fn act_memory(
        &mut self,
        ctx: &PolicyContext<'_>,
        memory: &[f64],
        direction: &[f64],
    ) -> Result<ActionDistribution>;
}

/// Heads toward the next node of the ground-truth route; off the route it
/// follows a fresh shortest path to the destination.
#[derive(Debug, Clone, Copy, Default)]
pub struct OraclePolicy;

impl OraclePolicy {
    fn next_hop(ctx: &PolicyContext<'_>) -> Option<NodeId> {
        let nodes = ctx.route.node_ids();
        if let Some(i) = nodes.iter().position(|&n| n == ctx.node) {
            return nodes.get(i + 1).copied();
        }
        let detour = shortest_route(ctx.graph, ctx.node, ctx.route.destination()).ok()?;
        detour.node_ids().get(1).copied()
    }

    fn act(ctx: &PolicyContext<'_>) -> ActionDistribution {
        let Some(next) = Self::next_hop(ctx) else {
            return ActionDistribution::uniform();
        };
        match ctx.graph.edge(ctx.node, next) {
            Some(e) => ActionDistribution::delta(bin_of_angle(e.bearing - ctx.heading)),
            None => ActionDistribution::uniform(),
        }
    }
}

impl Policy for OraclePolicy {
    fn act_visual(&mut self, ctx: &PolicyContext<'_>, _: &[f64], _: &[f64]) -> Result<ActionDistribution> {
        Ok(Self::act(ctx))
    }

    fn act_memory(&mut self, ctx: &PolicyContext<'_>, _: &[f64], _: &[f64]) -> Result<ActionDistribution> {
        Ok(Self::act(ctx))
    }
}

/// One uniformly random bin per move, reported by both heads.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
    pending: Option<usize>,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        RandomPolicy {
            rng: ChaCha8Rng::seed_from_u64(seed),
            pending: None,
        }
    }
}

impl Default for RandomPolicy {
    fn default() -> Self {
        Self::new(0)
    }
}

impl Policy for RandomPolicy {
    fn begin_episode(&mut self, seed: u64) {
        *self = Self::new(seed);
    }

    fn act_visual(&mut self, _: &PolicyContext<'_>, _: &[f64], _: &[f64]) -> Result<ActionDistribution> {
        let bin = self.rng.random_range(0..BINS);
        self.pending = Some(bin);
        Ok(ActionDistribution::delta(bin))
    }

    fn act_memory(&mut self, _: &PolicyContext<'_>, _: &[f64], _: &[f64]) -> Result<ActionDistribution> {
        let bin = match self.pending.take() {
            Some(b) => b,
            None => self.rng.random_range(0..BINS),
        };
        Ok(ActionDistribution::delta(bin))
    }
}

/// Replays a fixed sequence of bins, one per move. Used for human control and
/// log replay.
#[derive(Debug, Clone, Default)]
pub struct ScriptedPolicy {
    queue: VecDeque<usize>,
    current: Option<usize>,
}

impl ScriptedPolicy {
    pub fn new(bins: impl IntoIterator<Item = usize>) -> Self {
        ScriptedPolicy {
            queue: bins.into_iter().collect(),
            current: None,
        }
    }

    pub fn push(&mut self, bin: usize) {
        self.queue.push_back(bin);
    }

    pub fn remaining(&self) -> usize {
        self.queue.len()
    }
}

impl Policy for ScriptedPolicy {
    fn act_visual(&mut self, _: &PolicyContext<'_>, _: &[f64], _: &[f64]) -> Result<ActionDistribution> {
        let bin = self
            .queue
            .pop_front()
            .ok_or_else(|| NavError::InvalidConfig("scripted policy ran out of actions".into()))?;
        self.current = Some(bin);
        Ok(ActionDistribution::delta(bin))
    }

    fn act_memory(&mut self, _: &PolicyContext<'_>, _: &[f64], _: &[f64]) -> Result<ActionDistribution> {
        let bin = self
            .current
            .take()
            .ok_or_else(|| NavError::InvalidConfig("memory head called before visual head".into()))?;
        Ok(ActionDistribution::delta(bin))
    }
}
